use revpref::noisy;
use revpref::sim::{self, CobbDouglasAgent};
use std::time::Instant;

fn contrast(profile: &[f64]) -> f64 {
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 1e-12 {
        0.0
    } else {
        1.0 - min / max
    }
}

fn auc_pairs(c0s: &[f64], c1s: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in c1s {
        for &b in c0s {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (c0s.len() * c1s.len()) as f64
}

fn main() {
    let t0 = Instant::now();
    let sigma = 0.5f64.sqrt();
    // per-trial random designs from the log-uniform range
    let mut c0s = Vec::new();
    let mut c1s = Vec::new();
    for trial in 0..30u64 {
        let agent =
            CobbDouglasAgent::new(vec![0.6, 0.4], vec![1.0, 1.0], 26, vec![5.0; 50], sigma)
                .unwrap();
        let probes = sim::sample_probes_log_uniform(50, 2, 0.01, 1.0, 100 + trial);
        let (_, d0) = sim::generate(&agent.without_change(), &probes, 200 + trial).unwrap();
        let (_, d1) = sim::generate(&agent, &probes, 200 + trial).unwrap();
        c0s.push(contrast(&noisy::adjustment_profile(&d0).unwrap()));
        c1s.push(contrast(&noisy::adjustment_profile(&d1).unwrap()));
    }
    println!("random logU designs: AUC {:.3}", auc_pairs(&c0s, &c1s));
    println!("  H0: {:?}", &c0s[..6]);
    println!("  H1: {:?}", &c1s[..6]);

    // fixed identifiable design, noise-only trials
    let probes = sim::sample_probes_log_uniform(50, 2, 0.01, 1.0, 3);
    let mut f0s = Vec::new();
    let mut f1s = Vec::new();
    for trial in 0..30u64 {
        let agent =
            CobbDouglasAgent::new(vec![0.6, 0.4], vec![1.0, 1.0], 26, vec![5.0; 50], sigma)
                .unwrap();
        let (_, d0) = sim::generate(&agent.without_change(), &probes, 500 + trial).unwrap();
        let (_, d1) = sim::generate(&agent, &probes, 500 + trial).unwrap();
        f0s.push(contrast(&noisy::adjustment_profile(&d0).unwrap()));
        f1s.push(contrast(&noisy::adjustment_profile(&d1).unwrap()));
    }
    println!("fixed identifiable design: AUC {:.3}", auc_pairs(&f0s, &f1s));
    println!("  H0: {:?}", &f0s[..6]);
    println!("  H1: {:?}", &f1s[..6]);
    println!("elapsed {:?}", t0.elapsed());
}
