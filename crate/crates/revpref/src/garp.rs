//! Direct revealed-preference testing: build the preference relation from
//! inner products and check the Generalized Axiom of Revealed Preference via
//! transitive closure.

use serde::{Deserialize, Serialize};

use crate::core::{tolerance, Dataset};

/// The revealed-preference relation of a dataset.
///
/// `direct[t][s]` holds when observation `t` was chosen while `s` was
/// affordable (`p_t · x_t ≥ p_t · x_s` up to the comparison slack), `strict`
/// when the inequality is strict, and `closure` is the transitive closure of
/// `direct`. All matrices are 0-indexed by observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRelation {
    pub direct: Vec<Vec<bool>>,
    pub strict: Vec<Vec<bool>>,
    pub closure: Vec<Vec<bool>>,
}

/// Result of a GARP check. Witness indices are 1-based observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GarpVerdict {
    Pass,
    Violation {
        /// `(t, s)`: `t` is revealed preferred to `s` while `s` is strictly
        /// directly revealed preferred to `t`. Lexicographically first such
        /// pair.
        pair: (usize, usize),
        /// Chain `t → … → s` over the direct relation; the strict edge
        /// `s → t` closes the cycle.
        cycle: Vec<usize>,
    },
}

impl GarpVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

/// Build the relation from a dataset using the default comparison slack
/// ([`tolerance`]), which guards against spurious strict edges from
/// floating-point noise.
pub fn build_relation(d: &Dataset) -> PreferenceRelation {
    let t_n = d.len();
    let mut ip = vec![vec![0.0; t_n]; t_n];
    for t in 0..t_n {
        for s in 0..t_n {
            ip[t][s] = d.cross_spend(t, s);
        }
    }
    relation_from_inner_products(&ip, tolerance())
}

/// Build the relation from a precomputed table `ip[t][s] = p_t · x_s` with an
/// explicit comparison slack. Embedded (randomly projected) data uses a slack
/// of twice the embedding distortion.
pub fn relation_from_inner_products(ip: &[Vec<f64>], slack: f64) -> PreferenceRelation {
    let t_n = ip.len();
    let mut direct = vec![vec![false; t_n]; t_n];
    let mut strict = vec![vec![false; t_n]; t_n];
    for t in 0..t_n {
        for s in 0..t_n {
            direct[t][s] = ip[t][t] >= ip[t][s] - slack;
            strict[t][s] = ip[t][t] > ip[t][s] + slack;
        }
    }
    // Warshall transitive closure, O(T^3).
    let mut closure = direct.clone();
    for k in 0..t_n {
        for i in 0..t_n {
            if closure[i][k] {
                for j in 0..t_n {
                    if closure[k][j] {
                        closure[i][j] = true;
                    }
                }
            }
        }
    }
    PreferenceRelation { direct, strict, closure }
}

/// Check GARP: the dataset passes iff no pair `(t, s)` has `t` revealed
/// preferred to `s` (transitively) while `s` is strictly directly revealed
/// preferred to `t`.
pub fn check_garp(rel: &PreferenceRelation) -> GarpVerdict {
    let t_n = rel.direct.len();
    for t in 0..t_n {
        for s in 0..t_n {
            if rel.closure[t][s] && rel.strict[s][t] {
                return GarpVerdict::Violation {
                    pair: (t + 1, s + 1),
                    cycle: direct_path(&rel.direct, t, s),
                };
            }
        }
    }
    GarpVerdict::Pass
}

/// Shortest chain from `from` to `to` over the direct relation (1-based
/// output). Exists whenever `closure[from][to]` holds.
fn direct_path(direct: &[Vec<bool>], from: usize, to: usize) -> Vec<usize> {
    let t_n = direct.len();
    if from == to {
        return vec![from + 1];
    }
    let mut prev = vec![usize::MAX; t_n];
    let mut queue = std::collections::VecDeque::from([from]);
    let mut seen = vec![false; t_n];
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        for next in 0..t_n {
            if next != node && direct[node][next] && !seen[next] {
                seen[next] = true;
                prev[next] = node;
                if next == to {
                    let mut path = vec![to + 1];
                    let mut cur = to;
                    while cur != from {
                        cur = prev[cur];
                        path.push(cur + 1);
                    }
                    path.reverse();
                    return path;
                }
                queue.push_back(next);
            }
        }
    }
    // closure[from][to] guarantees a path; unreachable on valid input.
    vec![from + 1, to + 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Dataset;
    use proptest::prelude::*;

    fn dataset(probes: Vec<Vec<f64>>, responses: Vec<Vec<f64>>) -> Dataset {
        Dataset::new(probes, responses, None).unwrap()
    }

    #[test]
    fn singleton_passes() {
        let d = dataset(vec![vec![1.0, 1.0]], vec![vec![1.0, 1.0]]);
        let rel = build_relation(&d);
        assert_eq!(rel.direct, vec![vec![true]]);
        assert_eq!(rel.closure, vec![vec![true]]);
        assert!(check_garp(&rel).is_pass());
    }

    #[test]
    fn crossing_bundles_have_no_off_diagonal_edges() {
        // p1=(1,2), x1=(2,1); p2=(2,1), x2=(1,2):
        // p1·x1=4, p1·x2=5 ; p2·x2=4, p2·x1=5 -> neither affordable at the other.
        let d = dataset(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let rel = build_relation(&d);
        assert!(!rel.direct[0][1]);
        assert!(!rel.direct[1][0]);
        assert!(check_garp(&rel).is_pass());
    }

    #[test]
    fn two_point_violation_with_witness() {
        // p1=(1,2), x1=(2,1); p2=(2,1), x2=(4,0):
        // p1·x1=4, p1·x2=4 -> 1 directly revealed preferred to 2;
        // p2·x2=8, p2·x1=5 -> 2 strictly prefers its own bundle.
        let d = dataset(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![vec![2.0, 1.0], vec![4.0, 0.0]]);
        let rel = build_relation(&d);
        match check_garp(&rel) {
            GarpVerdict::Violation { pair, cycle } => {
                assert_eq!(pair, (1, 2));
                assert_eq!(cycle, vec![1, 2]);
            }
            GarpVerdict::Pass => panic!("expected a violation"),
        }
    }

    #[test]
    fn closure_includes_chains() {
        // Row t lists p_t · x_s; an edge t→s needs ip[t][t] >= ip[t][s].
        let ip = vec![
            vec![1.0, 1.0, 5.0], // a -> b only
            vec![5.0, 1.0, 1.0], // b -> c only
            vec![5.0, 5.0, 1.0], // c -> nothing
        ];
        let rel = relation_from_inner_products(&ip, 1e-9);
        assert!(rel.direct[0][1] && rel.direct[1][2] && !rel.direct[0][2]);
        assert!(rel.closure[0][2]);
    }

    proptest! {
        // Scaling one probe row by a positive constant rescales that row's
        // inner products uniformly, so the verdict is unchanged.
        #[test]
        fn probe_scaling_leaves_verdict_unchanged(
            seed in 0u64..500,
            scale in 0.25f64..4.0,
            row in 0usize..3,
        ) {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_n = 3;
            let m = 2;
            let probes: Vec<Vec<f64>> =
                (0..t_n).map(|_| (0..m).map(|_| rng.random_range(0.1..2.0)).collect()).collect();
            let responses: Vec<Vec<f64>> =
                (0..t_n).map(|_| (0..m).map(|_| rng.random_range(0.1..2.0)).collect()).collect();
            let base = dataset(probes.clone(), responses.clone());
            let mut scaled = probes;
            for v in &mut scaled[row] {
                *v *= scale;
            }
            let other = dataset(scaled, responses);
            prop_assert_eq!(
                check_garp(&build_relation(&base)).is_pass(),
                check_garp(&build_relation(&other)).is_pass()
            );
        }
    }
}
