//! A minimal solving contract for the linear programs, feasibility systems,
//! and the one min-norm quadratic program the rest of the crate assembles.
//!
//! Problems are stated in a plain row form (`row · z {≤,=,≥} rhs` plus box
//! bounds) and handed to the Clarabel interior-point solver. Callers never
//! see the solver types, so the backend can be swapped behind this module.

use std::fmt;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

// ---------------------------------------------------------------------------
// Problem statement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub row: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize objective · z` subject to row constraints and box bounds.
/// Bounds default to free; use `f64::INFINITY` / `f64::NEG_INFINITY` for
/// one-sided ranges.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// A program over `n` variables with zero objective and free variables.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            constraints: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, row: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(row.len(), self.num_vars());
        self.constraints.push(Constraint { row, relation, rhs });
    }

    pub fn push_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.push(row, Relation::Le, rhs);
    }

    pub fn push_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.push(row, Relation::Ge, rhs);
    }

    pub fn push_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.push(row, Relation::Eq, rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        debug_assert!(lo <= hi);
        self.bounds[var] = (lo, hi);
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for c in &self.constraints {
            if c.row.len() != n {
                return Err(LpError::BadProgram(format!(
                    "constraint row has {} entries, expected {n}",
                    c.row.len()
                )));
            }
        }
        if self.bounds.len() != n {
            return Err(LpError::BadProgram("bounds length mismatch".into()));
        }
        for &(lo, hi) in &self.bounds {
            if lo > hi {
                return Err(LpError::BadProgram(format!("empty bound range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Outcome of a solve. `Optimal` carries a point feasible within the solver
/// tolerance together with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Optimal { solution: Vec<f64>, objective_value: f64 },
    Infeasible,
    Unbounded,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, Self::Optimal { .. })
    }

    pub fn solution(&self) -> Option<&[f64]> {
        match self {
            Self::Optimal { solution, .. } => Some(solution),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    /// The solver stalled or hit its iteration limit.
    NumericalFailure(String),
    /// The problem statement itself is malformed.
    BadProgram(String),
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Self::BadProgram(msg) => write!(f, "malformed program: {msg}"),
        }
    }
}

impl std::error::Error for LpError {}

// ---------------------------------------------------------------------------
// Clarabel backend
// ---------------------------------------------------------------------------

fn settings(tight: bool) -> DefaultSettings<f64> {
    let mut s = DefaultSettings::default();
    s.verbose = false;
    s.max_iter = 200;
    if tight {
        s.tol_gap_abs = 1e-9;
        s.tol_gap_rel = 1e-9;
        s.tol_feas = 1e-9;
    }
    s
}

fn csc_from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    trip.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; ncols + 1];
    let mut rowval = Vec::with_capacity(trip.len());
    let mut nzval = Vec::with_capacity(trip.len());
    for &(r, c, v) in &trip {
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..ncols {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

/// Assemble rows for Clarabel: equalities first (zero cone), then all
/// inequalities as `a · z ≤ b` (nonnegative slack cone). Finite bounds are
/// appended as inequality rows.
fn assemble(
    lp: &LinearProgram,
) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
    let n = lp.num_vars();
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut row = 0usize;

    let mut n_eq = 0usize;
    for c in &lp.constraints {
        if c.relation == Relation::Eq {
            for (j, &v) in c.row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((row, j, v));
                }
            }
            b.push(c.rhs);
            row += 1;
            n_eq += 1;
        }
    }
    for c in &lp.constraints {
        let sign = match c.relation {
            Relation::Le => 1.0,
            Relation::Ge => -1.0,
            Relation::Eq => continue,
        };
        for (j, &v) in c.row.iter().enumerate() {
            if v != 0.0 {
                trip.push((row, j, sign * v));
            }
        }
        b.push(sign * c.rhs);
        row += 1;
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo.is_finite() {
            trip.push((row, j, -1.0));
            b.push(-lo);
            row += 1;
        }
        if hi.is_finite() {
            trip.push((row, j, 1.0));
            b.push(hi);
            row += 1;
        }
    }
    let n_ineq = row - n_eq;
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if n_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
    }
    (csc_from_triplets(row, n, trip), b, cones)
}

fn solve_with_hessian(
    lp: &LinearProgram,
    hessian_diag: &[f64],
) -> Result<SolveOutcome, LpError> {
    lp.validate()?;
    let n = lp.num_vars();
    let (a, b, cones) = assemble(lp);
    let p_trip: Vec<(usize, usize, f64)> = hessian_diag
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, i, v))
        .collect();
    let p = csc_from_triplets(n, n, p_trip);
    let mut last = String::new();
    // First pass asks for tight tolerances; degenerate systems can stall
    // there, so a second pass retries at the solver defaults.
    for tight in [true, false] {
        let mut solver = DefaultSolver::new(&p, &lp.objective, &a, &b, &cones, settings(tight))
            .map_err(|e| LpError::BadProgram(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                return Ok(SolveOutcome::Optimal {
                    solution: sol.x.clone(),
                    objective_value: sol.obj_val,
                })
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                return Ok(SolveOutcome::Infeasible)
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                return Ok(SolveOutcome::Unbounded)
            }
            other => last = format!("{other:?}"),
        }
    }
    Err(LpError::NumericalFailure(format!("solver status {last}")))
}

/// Solve a linear program.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveOutcome, LpError> {
    solve_with_hessian(lp, &vec![0.0; lp.num_vars()])
}

/// Minimize the sum of squares of the variables listed in `quadratic_vars`
/// subject to the constraints and bounds of `lp` (its linear objective is
/// ignored). Returns `Infeasible` when the constraint set is empty.
pub fn solve_min_norm_qp(
    quadratic_vars: &[usize],
    lp: &LinearProgram,
) -> Result<SolveOutcome, LpError> {
    let n = lp.num_vars();
    for &i in quadratic_vars {
        if i >= n {
            return Err(LpError::BadProgram(format!("quadratic index {i} out of range")));
        }
    }
    let mut hess = vec![0.0; n];
    for &i in quadratic_vars {
        // Clarabel minimizes 1/2 z'Pz + q'z, so a diagonal of 2 yields z_i^2.
        hess[i] = 2.0;
    }
    let mut qp = lp.clone();
    qp.objective = vec![0.0; n];
    let outcome = solve_with_hessian(&qp, &hess)?;
    // Report the sum of squares itself as the objective value.
    Ok(match outcome {
        SolveOutcome::Optimal { solution, .. } => {
            let value = quadratic_vars.iter().map(|&i| solution[i] * solution[i]).sum();
            SolveOutcome::Optimal { solution, objective_value: value }
        }
        other => other,
    })
}

/// Re-solve a min-norm QP with near-zero quadratic variables pinned to zero.
///
/// Interior-point iterates leave O(√gap) dust on variables whose true
/// optimum sits at a bound; pinning the near-zero ones and re-solving yields
/// exact zeros. Falls back to the unpolished solution if the pinned system
/// turns out infeasible (support misidentified).
pub(crate) fn polish_min_norm(
    quadratic_vars: &[usize],
    lp: &LinearProgram,
    outcome: SolveOutcome,
) -> Result<SolveOutcome, LpError> {
    let solution = match &outcome {
        SolveOutcome::Optimal { solution, .. } => solution,
        _ => return Ok(outcome),
    };
    let peak = quadratic_vars.iter().map(|&i| solution[i].abs()).fold(0.0f64, f64::max);
    let cutoff = 1e-4 * peak.max(1.0);
    let tiny: Vec<usize> =
        quadratic_vars.iter().copied().filter(|&i| solution[i].abs() <= cutoff).collect();
    if tiny.is_empty() {
        return Ok(outcome);
    }
    let mut pinned = lp.clone();
    for &i in &tiny {
        pinned.set_bounds(i, 0.0, 0.0);
    }
    match solve_min_norm_qp(quadratic_vars, &pinned)? {
        SolveOutcome::Optimal { mut solution, objective_value } => {
            for &i in &tiny {
                solution[i] = 0.0;
            }
            Ok(SolveOutcome::Optimal { solution, objective_value })
        }
        _ => Ok(outcome),
    }
}
