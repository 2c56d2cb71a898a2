//! Deterministic change-point detection for a utility that jump-changes by a
//! linear perturbation.
//!
//! The model: responses maximize `v(x)` before an unknown observation `τ` and
//! `v(x) + α'x` (with `α ≥ 0`) from `τ` onward. A dataset fits the model at a
//! candidate `τ` exactly when the inequality system
//!
//! ```text
//! v_t + λ_t p_t'(x_s − x_t)               ≥ v_s   (t < τ)
//! v_t + λ_t p_t'(x_s − x_t) − α'(x_s−x_t) ≥ v_s   (t ≥ τ)
//! α_i ≤ λ_t p_t^i                                  (all i, t ≥ τ)
//! ```
//!
//! with `λ_t > 0` is feasible. The last block keeps the recovered base
//! utility monotone. With `α` pinned to zero the system collapses to the
//! static rationality test of [`crate::afriat`], so consistent-throughout
//! data is feasible at every `τ`.

use std::fmt;

use crate::core::{
    tolerance, ChangePointCertificate, Dataset, Piece, PiecewiseLinearUtility, LAMBDA_MIN,
};
use crate::lpqp::{polish_min_norm, solve_lp, solve_min_norm_qp, LinearProgram, LpError, SolveOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum ChangePointError {
    Solver(LpError),
    /// `tau` outside `1..=T`.
    BadTau { tau: usize, horizon: usize },
    /// The certificate violates `α_i ≤ λ_t p_t^i` beyond tolerance, so the
    /// base-utility pieces would not be monotone.
    NonMonotonePiece { observation: usize, component: usize },
}

impl fmt::Display for ChangePointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Solver(e) => write!(f, "{e}"),
            Self::BadTau { tau, horizon } => {
                write!(f, "change index {tau} outside 1..={horizon}")
            }
            Self::NonMonotonePiece { observation, component } => write!(
                f,
                "certificate violates the perturbation cap at observation {observation}, component {component}"
            ),
        }
    }
}

impl std::error::Error for ChangePointError {}

impl From<LpError> for ChangePointError {
    fn from(e: LpError) -> Self {
        Self::Solver(e)
    }
}

/// Variable layout: `v_0..v_{T-1} | λ_0..λ_{T-1} | α_0..α_{m-1}`.
///
/// `alpha_cap` limits `α` from above (used to collapse the system onto the
/// static test in checks). The system is a cone in `(v, λ, α)`, so
/// feasibility does not depend on the multiplier floor; verdict solves use a
/// floor of one to keep infeasibility margins at the data scale, and
/// certificate solves use the spec floor with the gauge pinned.
pub(crate) fn change_system(
    d: &Dataset,
    tau: usize,
    alpha_cap: Option<f64>,
    floor: f64,
    normalize: bool,
) -> LinearProgram {
    let t_n = d.len();
    let m = d.dim();
    let n = 2 * t_n + m;
    let mut lp = LinearProgram::new(n);
    for t in 0..t_n {
        lp.set_bounds(t_n + t, floor, f64::INFINITY);
        lp.objective[t_n + t] = 1.0; // keeps the feasibility solve bounded
    }
    for i in 0..m {
        lp.set_bounds(2 * t_n + i, 0.0, alpha_cap.unwrap_or(f64::INFINITY));
    }
    for t in 0..t_n {
        let own = d.cross_spend(t, t);
        let post = t + 1 >= tau;
        for s in 0..t_n {
            if s == t {
                continue;
            }
            // v_s - v_t - λ_t p_t'(x_s - x_t) [+ α'(x_s - x_t) if post] <= 0
            let mut row = vec![0.0; n];
            row[s] += 1.0;
            row[t] -= 1.0;
            row[t_n + t] = -(d.cross_spend(t, s) - own);
            if post {
                for i in 0..m {
                    row[2 * t_n + i] = d.response(s)[i] - d.response(t)[i];
                }
            }
            lp.push_le(row, 0.0);
        }
        if post {
            for i in 0..m {
                // α_i - λ_t p_t^i <= 0
                let mut row = vec![0.0; n];
                row[2 * t_n + i] = 1.0;
                row[t_n + t] = -d.probe(t)[i];
                lp.push_le(row, 0.0);
            }
        }
    }
    // The pair rows only see differences of v, so the common shift is a
    // free line; pin it unconditionally. `normalize` additionally pins the
    // joint scale, completing the `v_1 = 0, λ_1 = 1` gauge.
    let mut norm_v = vec![0.0; n];
    norm_v[0] = 1.0;
    lp.push_eq(norm_v, 0.0);
    if normalize {
        let mut norm_l = vec![0.0; n];
        norm_l[t_n] = 1.0;
        lp.push_eq(norm_l, 1.0);
    }
    lp
}

fn certificate_from(solution: &[f64], t_n: usize, m: usize, tau: usize) -> ChangePointCertificate {
    ChangePointCertificate {
        v: solution[..t_n].to_vec(),
        lambda: solution[t_n..2 * t_n].to_vec(),
        alpha: solution[2 * t_n..2 * t_n + m].iter().map(|&a| a.max(0.0)).collect(),
        tau,
    }
}

/// Rescale into the `v_1 = 0, λ_1 = 1` gauge (the system is invariant under
/// a common shift of `v` and a joint positive scaling of `(v, λ, α)`).
fn normalize_certificate(mut cert: ChangePointCertificate) -> ChangePointCertificate {
    let shift = cert.v[0];
    let scale = cert.lambda[0];
    for v in &mut cert.v {
        *v = (*v - shift) / scale;
    }
    for l in &mut cert.lambda {
        *l /= scale;
    }
    for a in &mut cert.alpha {
        *a /= scale;
    }
    cert
}

/// Feasibility of the change model at a fixed candidate `τ` (1-based).
pub fn feasible_at(
    d: &Dataset,
    tau: usize,
) -> Result<Option<ChangePointCertificate>, ChangePointError> {
    if tau < 1 || tau > d.len() {
        return Err(ChangePointError::BadTau { tau, horizon: d.len() });
    }
    let t_n = d.len();
    let m = d.dim();
    let verdict = change_system(d, tau, None, 1.0, false);
    let stage_a = match solve_lp(&verdict)? {
        SolveOutcome::Optimal { solution, .. } => solution,
        SolveOutcome::Infeasible => return Ok(None),
        SolveOutcome::Unbounded => {
            return Err(ChangePointError::Solver(LpError::NumericalFailure(
                "change-point feasibility LP reported unbounded".into(),
            )))
        }
    };
    let pinned = change_system(d, tau, None, LAMBDA_MIN, true);
    match solve_lp(&pinned) {
        Ok(SolveOutcome::Optimal { solution, .. }) => {
            Ok(Some(certificate_from(&solution, t_n, m, tau)))
        }
        _ => Ok(Some(normalize_certificate(certificate_from(&stage_a, t_n, m, tau)))),
    }
}

/// All feasible change indices with their certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePointScan {
    /// Certificates in increasing `tau` order.
    pub certificates: Vec<ChangePointCertificate>,
    /// Horizon of the scanned dataset.
    pub horizon: usize,
}

impl ChangePointScan {
    /// The headline estimate: the smallest feasible `τ`. Feasibility is
    /// rarely unique, so [`ChangePointScan::feasible_taus`] carries the full
    /// set and downstream consumers choose.
    pub fn headline(&self) -> Option<usize> {
        self.certificates.first().map(|c| c.tau)
    }

    pub fn feasible_taus(&self) -> Vec<usize> {
        self.certificates.iter().map(|c| c.tau).collect()
    }

    /// Model rejected: no `τ` admits a feasible perturbation system.
    pub fn is_rejected(&self) -> bool {
        self.certificates.is_empty()
    }
}

/// Scan every candidate `τ ∈ 1..=T`. An empty result rejects the model.
pub fn detect_change_point(d: &Dataset) -> Result<ChangePointScan, ChangePointError> {
    let mut certificates = Vec::new();
    for tau in 1..=d.len() {
        if let Some(cert) = feasible_at(d, tau)? {
            certificates.push(cert);
        }
    }
    Ok(ChangePointScan { certificates, horizon: d.len() })
}

/// Among all certificates at `τ`, recover the one with the smallest
/// perturbation norm `‖α‖₂` (gauge pinned by `v_1 = 0, λ_1 = 1`). Returns
/// `None` when the system is infeasible at `τ`.
pub fn recover_min_perturbation(
    d: &Dataset,
    tau: usize,
) -> Result<Option<ChangePointCertificate>, ChangePointError> {
    if tau < 1 || tau > d.len() {
        return Err(ChangePointError::BadTau { tau, horizon: d.len() });
    }
    let t_n = d.len();
    let m = d.dim();
    let lp = change_system(d, tau, None, LAMBDA_MIN, true);
    let alpha_vars: Vec<usize> = (0..m).map(|i| 2 * t_n + i).collect();
    let outcome = solve_min_norm_qp(&alpha_vars, &lp)?;
    let outcome = polish_min_norm(&alpha_vars, &lp, outcome)?;
    match outcome {
        SolveOutcome::Optimal { solution, .. } => {
            Ok(Some(certificate_from(&solution, t_n, m, tau)))
        }
        SolveOutcome::Infeasible => Ok(None),
        SolveOutcome::Unbounded => Err(ChangePointError::Solver(LpError::NumericalFailure(
            "min-norm recovery reported unbounded".into(),
        ))),
    }
}

/// Build the recovered base utility from a certificate: pieces
/// `(v_t, λ_t p̃_t, x_t)` where post-change gradients subtract the
/// perturbation, `λ_t p̃_t = λ_t p_t − α`.
pub fn recover_base_utility(
    d: &Dataset,
    cert: &ChangePointCertificate,
) -> Result<PiecewiseLinearUtility, ChangePointError> {
    let t_n = d.len();
    let m = d.dim();
    let tol = tolerance();
    let mut pieces = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let gradient: Vec<f64> = if t + 1 >= cert.tau {
            let mut g = Vec::with_capacity(m);
            for i in 0..m {
                let v = cert.lambda[t] * d.probe(t)[i] - cert.alpha[i];
                if v < -tol {
                    return Err(ChangePointError::NonMonotonePiece {
                        observation: t + 1,
                        component: i + 1,
                    });
                }
                g.push(v);
            }
            g
        } else {
            d.probe(t).iter().map(|&p| cert.lambda[t] * p).collect()
        };
        pieces.push(Piece { intercept: cert.v[t], gradient, anchor: d.response(t).to_vec() });
    }
    Ok(PiecewiseLinearUtility { pieces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afriat;
    use crate::sim::{self, CobbDouglasAgent};
    use crate::util::norm2;

    fn crossing_consistent() -> Dataset {
        Dataset::new(
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            None,
        )
        .unwrap()
    }

    fn violating_pair() -> Dataset {
        Dataset::new(
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![vec![2.0, 1.0], vec![4.0, 0.0]],
            None,
        )
        .unwrap()
    }

    fn clean_fig3(seed: u64) -> Dataset {
        let agent =
            CobbDouglasAgent::new(vec![0.6, 0.4], vec![1.0, 1.0], 26, vec![5.0; 50], 0.0).unwrap();
        let probes = sim::sample_probes(50, 2, 1.0, 2.0, seed);
        sim::generate(&agent, &probes, seed).unwrap().0
    }

    #[test]
    fn alpha_capped_system_matches_static_test() {
        // With α pinned to 0 the system at τ=1 is the static rationality LP.
        for d in [crossing_consistent(), violating_pair()] {
            let lp = change_system(&d, 1, Some(0.0), 1.0, false);
            let feasible = matches!(solve_lp(&lp).unwrap(), SolveOutcome::Optimal { .. });
            let afriat_ok = afriat::feasibility(&d).unwrap().is_some();
            assert_eq!(feasible, afriat_ok);
        }
    }

    #[test]
    fn consistent_data_feasible_at_every_tau() {
        let d = crossing_consistent();
        let scan = detect_change_point(&d).unwrap();
        assert_eq!(scan.feasible_taus(), vec![1, 2]);
        assert_eq!(scan.headline(), Some(1));
        for cert in &scan.certificates {
            assert!(cert.is_valid_for(&d), "violation {}", cert.max_violation(&d));
        }
    }

    #[test]
    fn violating_pair_feasibility_pattern() {
        let d = violating_pair();
        // τ=1 puts both observations post-change; summing the two pair rows
        // cancels α and leaves −3λ_2 ≥ 0, impossible.
        assert!(feasible_at(&d, 1).unwrap().is_none());
        // τ=2 leaves the perturbation free to absorb the cycle
        // (α_1 = 2λ_2 works), so the change model accepts it.
        let cert = feasible_at(&d, 2).unwrap().expect("perturbation can absorb the cycle");
        assert!(cert.is_valid_for(&d), "violation {}", cert.max_violation(&d));
        // With α capped at zero every arrangement reduces to the static
        // system, which the violation makes infeasible.
        for tau in 1..=2 {
            let lp = change_system(&d, tau, Some(0.0), 1.0, false);
            assert!(matches!(solve_lp(&lp).unwrap(), SolveOutcome::Infeasible));
        }
    }

    #[test]
    fn singleton_trivially_feasible() {
        let d = Dataset::new(vec![vec![1.0, 1.0]], vec![vec![1.0, 1.0]], None).unwrap();
        let scan = detect_change_point(&d).unwrap();
        assert_eq!(scan.feasible_taus(), vec![1]);
    }

    #[test]
    fn simulator_change_detected_at_true_tau() {
        let d = clean_fig3(414);
        let cert = feasible_at(&d, 26).unwrap().expect("true change index must be feasible");
        assert!(cert.is_valid_for(&d), "violation {}", cert.max_violation(&d));
        let scan = detect_change_point(&d).unwrap();
        assert!(scan.feasible_taus().contains(&26), "feasible: {:?}", scan.feasible_taus());
    }

    #[test]
    fn min_perturbation_zero_on_consistent_data() {
        let d = crossing_consistent();
        for tau in 1..=2 {
            let cert = recover_min_perturbation(&d, tau).unwrap().unwrap();
            assert!(
                cert.alpha.iter().all(|&a| a == 0.0),
                "expected exact zeros, got {:?}",
                cert.alpha
            );
        }
    }

    #[test]
    fn min_perturbation_dominated_by_generator_scale() {
        // The generating certificate (rescaled into the λ_1 = 1 gauge) is
        // feasible, so the minimizer cannot exceed its norm.
        let d = clean_fig3(77);
        let cert = recover_min_perturbation(&d, 26).unwrap().unwrap();
        assert!(cert.is_valid_for(&d), "violation {}", cert.max_violation(&d));
        // Generator α = (1,1); its gauge-normalized copy has norm
        // ‖α‖/λ_1 where λ_1 is the generator marginal utility at t=1.
        let p1 = d.probe(0);
        let x1 = sim::cobb_douglas_demand(&[0.6, 0.4], p1, 5.0);
        let v1 = sim::cobb_douglas_value(&[0.6, 0.4], &x1);
        let lambda1 = 0.6 * v1 / (x1[0] * p1[0]); // ∂v/∂x_1 / p_1
        let bound = norm2(&[1.0, 1.0]) / lambda1;
        assert!(
            norm2(&cert.alpha) <= bound + 1e-6,
            "recovered ‖α‖ = {} exceeds generator bound {bound}",
            norm2(&cert.alpha)
        );
    }

    #[test]
    fn base_utility_uses_unmodified_pre_change_gradients() {
        let d = clean_fig3(99);
        let cert = recover_min_perturbation(&d, 26).unwrap().unwrap();
        let base = recover_base_utility(&d, &cert).unwrap();
        for t in 0..25 {
            for i in 0..2 {
                let expected = cert.lambda[t] * d.probe(t)[i];
                assert!((base.pieces[t].gradient[i] - expected).abs() < 1e-12);
            }
        }
        for t in 25..50 {
            for i in 0..2 {
                let expected = cert.lambda[t] * d.probe(t)[i] - cert.alpha[i];
                assert!((base.pieces[t].gradient[i] - expected).abs() < 1e-12);
                assert!(base.pieces[t].gradient[i] >= -tolerance());
            }
        }
    }

    #[test]
    fn base_utility_alpha_zero_matches_reconstruction() {
        let d = crossing_consistent();
        let cert = recover_min_perturbation(&d, 1).unwrap().unwrap();
        let base = recover_base_utility(&d, &cert).unwrap();
        let afriat_cert = crate::core::AfriatCertificate {
            u: cert.v.clone(),
            lambda: cert.lambda.clone(),
        };
        let direct = afriat::reconstruct_utility(&d, &afriat_cert);
        assert_eq!(base, direct);
    }

    #[test]
    fn base_utility_ranks_anchors_like_generator() {
        // Ordinal agreement at the anchors: the recovered base utility must
        // order the observed bundles exactly as the generating v does.
        let d = clean_fig3(2024);
        let cert = recover_min_perturbation(&d, 26).unwrap().unwrap();
        let base = recover_base_utility(&d, &cert).unwrap();
        let truth: Vec<f64> =
            (0..d.len()).map(|t| sim::cobb_douglas_value(&[0.6, 0.4], d.response(t))).collect();
        let recovered: Vec<f64> =
            (0..d.len()).map(|t| base.evaluate(d.response(t)).unwrap()).collect();
        let mut agree = 0usize;
        let mut total = 0usize;
        for a in 0..d.len() {
            for b in (a + 1)..d.len() {
                if (truth[a] - truth[b]).abs() < 1e-9 {
                    continue;
                }
                total += 1;
                if (truth[a] > truth[b]) == (recovered[a] > recovered[b]) {
                    agree += 1;
                }
            }
        }
        assert!(
            agree as f64 >= 0.9 * total as f64,
            "anchor ordering agreement {agree}/{total}"
        );
    }

    #[test]
    fn corrupt_certificate_rejected() {
        let d = crossing_consistent();
        let cert = ChangePointCertificate {
            v: vec![0.0, 0.0],
            lambda: vec![1.0, 1.0],
            alpha: vec![10.0, 10.0],
            tau: 1,
        };
        assert!(matches!(
            recover_base_utility(&d, &cert),
            Err(ChangePointError::NonMonotonePiece { .. })
        ));
    }

    #[test]
    fn bad_tau_rejected() {
        let d = crossing_consistent();
        assert!(matches!(feasible_at(&d, 0), Err(ChangePointError::BadTau { .. })));
        assert!(matches!(feasible_at(&d, 3), Err(ChangePointError::BadTau { .. })));
    }
}
