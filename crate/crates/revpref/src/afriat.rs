//! LP-based rationality testing, utility reconstruction, and response
//! prediction.
//!
//! A dataset is consistent with maximization of a monotone concave utility
//! exactly when the inequality system
//! `u_s − u_t − λ_t p_t'(x_s − x_t) ≤ 0` (for all pairs, with `λ_t > 0`)
//! is feasible; this is the LP counterpart of the combinatorial GARP check in
//! [`crate::garp`]. A feasible point yields the rationalizing lower envelope
//! `u(x) = min_t { u_t + λ_t p_t'(x − x_t) }`.

use std::fmt;

use crate::core::{tolerance, AfriatCertificate, Dataset, Piece, PiecewiseLinearUtility, LAMBDA_MIN};
use crate::lpqp::{solve_lp, LinearProgram, LpError, SolveOutcome};
use crate::util::dot;

/// The rationality system with a configurable multiplier floor. The system
/// is a cone (jointly rescaling `u` and `λ` preserves it), so feasibility is
/// the same at any positive floor; verdicts are computed at a floor of one,
/// where infeasibility margins stay at the scale of the data.
fn rationality_system(d: &Dataset, floor: f64, normalize: bool) -> LinearProgram {
    let t_n = d.len();
    // Variables: u_0..u_{T-1}, lambda_0..lambda_{T-1}.
    let mut lp = LinearProgram::new(2 * t_n);
    for t in 0..t_n {
        lp.set_bounds(t_n + t, floor, f64::INFINITY);
        // Keep the program bounded and the certificate deterministic.
        lp.objective[t_n + t] = 1.0;
    }
    for t in 0..t_n {
        let own = d.cross_spend(t, t);
        for s in 0..t_n {
            if s == t {
                continue;
            }
            let mut row = vec![0.0; 2 * t_n];
            row[s] += 1.0;
            row[t] -= 1.0;
            row[t_n + t] = -(d.cross_spend(t, s) - own);
            lp.push_le(row, 0.0);
        }
    }
    // The rows only see differences of u, so the common shift is a free
    // line; pin it or the interior-point solver has no center to follow.
    let mut norm_u = vec![0.0; 2 * t_n];
    norm_u[0] = 1.0;
    lp.push_eq(norm_u, 0.0);
    if normalize {
        let mut norm_l = vec![0.0; 2 * t_n];
        norm_l[t_n] = 1.0;
        lp.push_eq(norm_l, 1.0);
    }
    lp
}

fn certificate_from(solution: &[f64], t_n: usize) -> AfriatCertificate {
    AfriatCertificate {
        u: solution[..t_n].to_vec(),
        lambda: solution[t_n..2 * t_n].to_vec(),
    }
}

/// Rescale a certificate into the `u_1 = 0, λ_1 = 1` gauge; the inequalities
/// are invariant under `u → a(u + b), λ → aλ` for `a > 0`.
fn normalize_certificate(mut cert: AfriatCertificate) -> AfriatCertificate {
    let shift = cert.u[0];
    let scale = cert.lambda[0];
    for u in &mut cert.u {
        *u = (*u - shift) / scale;
    }
    for l in &mut cert.lambda {
        *l /= scale;
    }
    cert
}

/// Test a dataset for utility-maximization consistency.
///
/// Returns a certificate when the inequality system is feasible, `None` when
/// it is not. The gauge freedom (any positive affine rescaling of a
/// certificate is again one) is pinned by `u_1 = 0, λ_1 = 1`.
pub fn feasibility(d: &Dataset) -> Result<Option<AfriatCertificate>, LpError> {
    let t_n = d.len();
    let verdict = rationality_system(d, 1.0, false);
    let stage_a = match solve_lp(&verdict)? {
        SolveOutcome::Optimal { solution, .. } => solution,
        SolveOutcome::Infeasible => return Ok(None),
        SolveOutcome::Unbounded => {
            return Err(LpError::NumericalFailure("feasibility LP reported unbounded".into()))
        }
    };
    // Second pass pins the gauge at the spec floor; fall back to rescaling
    // the verdict solution if the pinned solve stalls.
    let pinned = rationality_system(d, LAMBDA_MIN, true);
    match solve_lp(&pinned) {
        Ok(SolveOutcome::Optimal { solution, .. }) => Ok(Some(certificate_from(&solution, t_n))),
        _ => Ok(Some(normalize_certificate(certificate_from(&stage_a, t_n)))),
    }
}

/// Assemble the rationalizing piecewise-linear utility from a certificate:
/// one piece `(u_t, λ_t p_t, x_t)` per observation.
pub fn reconstruct_utility(d: &Dataset, cert: &AfriatCertificate) -> PiecewiseLinearUtility {
    assert_eq!(cert.u.len(), d.len());
    assert_eq!(cert.lambda.len(), d.len());
    let pieces = (0..d.len())
        .map(|t| Piece {
            intercept: cert.u[t],
            gradient: d.probe(t).iter().map(|&p| cert.lambda[t] * p).collect(),
            anchor: d.response(t).to_vec(),
        })
        .collect();
    PiecewiseLinearUtility { pieces }
}

/// Prediction of the response to a new probe under a known budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// A maximizing response (the optimal face may be flat; only the utility
    /// level and the component sum are contractual).
    pub response: Vec<f64>,
    /// Utility level attained at the prediction.
    pub utility: f64,
    /// Component sum of the response — the predicted total traffic.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictError {
    /// Utility must be monotone (positive gradients), probe positive, budget
    /// positive, and dimensions consistent.
    BadInput(String),
    Solver(LpError),
    /// The LP came back unbounded or infeasible, which a monotone utility
    /// with a binding budget cannot produce.
    Numerical(String),
}

impl fmt::Display for PredictError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadInput(m) => write!(f, "bad input: {m}"),
            Self::Solver(e) => write!(f, "solver: {e}"),
            Self::Numerical(m) => write!(f, "numerical: {m}"),
        }
    }
}

impl std::error::Error for PredictError {}

impl From<LpError> for PredictError {
    fn from(e: LpError) -> Self {
        Self::Solver(e)
    }
}

/// Maximize the utility over the budget set `{x ≥ 0 : probe · x ≤ budget}`.
///
/// Solves `max θ` subject to `θ ≤ intercept_i + gradient_i'(x − anchor_i)`
/// for every piece plus the budget row. With positive gradients the budget
/// binds at the optimum, so `probe · response = budget` up to solver
/// tolerance.
pub fn predict_response(
    u: &PiecewiseLinearUtility,
    probe: &[f64],
    budget: f64,
) -> Result<Prediction, PredictError> {
    let m = u.dim();
    if m == 0 {
        return Err(PredictError::BadInput("utility has no pieces".into()));
    }
    if probe.len() != m {
        return Err(PredictError::BadInput(format!(
            "probe has {} entries, utility dimension is {m}",
            probe.len()
        )));
    }
    if !u.is_monotone() {
        return Err(PredictError::BadInput("utility gradients must be positive".into()));
    }
    if probe.iter().any(|&p| !(p > 0.0)) {
        return Err(PredictError::BadInput("probe entries must be positive".into()));
    }
    if !(budget > 0.0) {
        return Err(PredictError::BadInput("budget must be positive".into()));
    }

    // Variables: x_0..x_{m-1}, theta.
    let mut lp = LinearProgram::new(m + 1);
    lp.objective[m] = -1.0; // maximize theta
    for i in 0..m {
        lp.set_bounds(i, 0.0, f64::INFINITY);
    }
    for piece in &u.pieces {
        let mut row = vec![0.0; m + 1];
        row[m] = 1.0;
        for i in 0..m {
            row[i] = -piece.gradient[i];
        }
        lp.push_le(row, piece.intercept - dot(&piece.gradient, &piece.anchor));
    }
    let mut budget_row: Vec<f64> = probe.to_vec();
    budget_row.push(0.0);
    lp.push_le(budget_row, budget);

    match solve_lp(&lp)? {
        SolveOutcome::Optimal { solution, .. } => {
            let response = solution[..m].to_vec();
            let utility = solution[m];
            let total = response.iter().sum();
            Ok(Prediction { response, utility, total })
        }
        SolveOutcome::Infeasible => {
            Err(PredictError::Numerical("prediction LP infeasible (x = 0 should be feasible)".into()))
        }
        SolveOutcome::Unbounded => {
            Err(PredictError::Numerical("prediction LP unbounded despite budget".into()))
        }
    }
}

/// Convenience check used by tests and the property suite: does the utility
/// rationalize the dataset, i.e. is every budget-feasible bundle at most as
/// good as the chosen one?
pub fn rationalizes(u: &PiecewiseLinearUtility, d: &Dataset, samples: &[(usize, Vec<f64>)]) -> bool {
    let tol = tolerance();
    samples.iter().all(|(t, x)| {
        let ux = u.evaluate(x).unwrap_or(f64::INFINITY);
        let uxt = u.evaluate(d.response(*t)).unwrap_or(f64::NEG_INFINITY);
        ux <= uxt + tol
    })
}
