//! Shared domain types: probe/response datasets, rationality certificates,
//! piecewise-linear utilities, and the CSV/JSON formats used by the CLI.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::util::dot;

/// Floor applied to every marginal-utility multiplier λ_t.
///
/// Strict positivity is not expressible as an LP constraint. Certificates are
/// ordinal (any joint positive rescaling of a certificate is again a
/// certificate), so a fixed floor loses no generality.
pub const LAMBDA_MIN: f64 = 1e-6;

const DEFAULT_TOL: f64 = 1e-8;

static TOL: OnceLock<f64> = OnceLock::new();

/// Feasibility tolerance for every inequality check in this crate.
///
/// Defaults to `1e-8`. The `REVPREF_TOL` environment variable overrides it;
/// the variable is read once on first use.
pub fn tolerance() -> f64 {
    *TOL.get_or_init(|| {
        std::env::var("REVPREF_TOL")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|t| t.is_finite() && *t > 0.0)
            .unwrap_or(DEFAULT_TOL)
    })
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Validation and serialization errors for the core types.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// No observations at all.
    EmptyDataset,
    /// A row or vector has the wrong width.
    DimensionMismatch { expected: usize, got: usize },
    /// Probe entries must be strictly positive (they are divided by later).
    NonPositiveProbe { row: usize, col: usize, value: f64 },
    /// Response entries must be nonnegative.
    NegativeResponse { row: usize, col: usize, value: f64 },
    /// Budgets must be strictly positive.
    NonPositiveBudget { row: usize, value: f64 },
    /// The time column must be strictly increasing.
    UnsortedTime { row: usize },
    /// A record could not be parsed.
    Parse { line: usize, message: String },
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDataset => write!(f, "dataset contains no observations"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::NonPositiveProbe { row, col, value } => {
                write!(f, "probe entry ({row},{col}) = {value} must be > 0")
            }
            Self::NegativeResponse { row, col, value } => {
                write!(f, "response entry ({row},{col}) = {value} must be >= 0")
            }
            Self::NonPositiveBudget { row, value } => {
                write!(f, "budget for observation {row} is {value}, must be > 0")
            }
            Self::UnsortedTime { row } => {
                write!(f, "time column is not strictly increasing at row {row}")
            }
            Self::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Self::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CoreError {}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// An ordered set of probe/response observations with budgets.
///
/// Observation `t` (0-based internally, reported 1-based) pairs a strictly
/// positive probe vector `p_t` with a nonnegative response vector `x_t` and a
/// positive budget `I_t`. When no budget is supplied it defaults to the
/// observed spend `p_t · x_t`, which is the binding value for a monotone
/// maximizer. Budgets are not observable in most raw feeds, so treat the
/// default as an inference, not a measurement.
///
/// Instances are immutable after construction and safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    probes: Vec<Vec<f64>>,
    responses: Vec<Vec<f64>>,
    budgets: Vec<f64>,
}

impl Dataset {
    /// Build a dataset from parallel probe/response rows, validating every
    /// invariant. Budgets default to `p_t · x_t` when absent.
    pub fn new(
        probes: Vec<Vec<f64>>,
        responses: Vec<Vec<f64>>,
        budgets: Option<Vec<f64>>,
    ) -> Result<Self, CoreError> {
        if probes.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        if probes.len() != responses.len() {
            return Err(CoreError::DimensionMismatch {
                expected: probes.len(),
                got: responses.len(),
            });
        }
        let m = probes[0].len();
        if m == 0 {
            return Err(CoreError::EmptyDataset);
        }
        for (t, (p, x)) in probes.iter().zip(&responses).enumerate() {
            if p.len() != m {
                return Err(CoreError::DimensionMismatch { expected: m, got: p.len() });
            }
            if x.len() != m {
                return Err(CoreError::DimensionMismatch { expected: m, got: x.len() });
            }
            for (i, &v) in p.iter().enumerate() {
                if !(v > 0.0) {
                    return Err(CoreError::NonPositiveProbe { row: t + 1, col: i + 1, value: v });
                }
            }
            for (i, &v) in x.iter().enumerate() {
                if !(v >= 0.0) {
                    return Err(CoreError::NegativeResponse { row: t + 1, col: i + 1, value: v });
                }
            }
        }
        let budgets = match budgets {
            Some(b) => {
                if b.len() != probes.len() {
                    return Err(CoreError::DimensionMismatch {
                        expected: probes.len(),
                        got: b.len(),
                    });
                }
                for (t, &v) in b.iter().enumerate() {
                    if !(v > 0.0) {
                        return Err(CoreError::NonPositiveBudget { row: t + 1, value: v });
                    }
                }
                b
            }
            None => {
                let b: Vec<f64> =
                    probes.iter().zip(&responses).map(|(p, x)| dot(p, x)).collect();
                for (t, &v) in b.iter().enumerate() {
                    if !(v > 0.0) {
                        return Err(CoreError::NonPositiveBudget { row: t + 1, value: v });
                    }
                }
                b
            }
        };
        Ok(Self { probes, responses, budgets })
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.probes.len()
    }

    /// `true` when the dataset has no observations. Unreachable for a
    /// validated dataset; present for API completeness.
    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Dimension `m` of each probe and response vector.
    pub fn dim(&self) -> usize {
        self.probes[0].len()
    }

    pub fn probe(&self, t: usize) -> &[f64] {
        &self.probes[t]
    }

    pub fn response(&self, t: usize) -> &[f64] {
        &self.responses[t]
    }

    pub fn budget(&self, t: usize) -> f64 {
        self.budgets[t]
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    /// Inner product `p_t · x_s`.
    pub fn cross_spend(&self, t: usize, s: usize) -> f64 {
        dot(&self.probes[t], &self.responses[s])
    }

    /// Replace the responses, keeping probes and budgets. Used to attach
    /// noisy measurements to the probes that produced them.
    pub fn with_responses(&self, responses: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        Self::new(self.probes.clone(), responses, Some(self.budgets.clone()))
    }

    // -- CSV ----------------------------------------------------------------

    /// Read a dataset from CSV with header `t,p1..pm,x1..xm[,budget]`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, CoreError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CoreError::Parse { line: 1, message: e.to_string() })?
            .clone();
        let width = headers.len();
        if width < 3 {
            return Err(CoreError::Parse {
                line: 1,
                message: format!("header has {width} columns, need at least t,p1,x1"),
            });
        }
        let has_budget = headers.iter().last() == Some("budget");
        let m = if has_budget { (width - 2) / 2 } else { (width - 1) / 2 };
        let expected = if has_budget { 2 + 2 * m } else { 1 + 2 * m };
        if expected != width {
            return Err(CoreError::Parse {
                line: 1,
                message: format!("header width {width} does not fit t,p1..pm,x1..xm[,budget]"),
            });
        }

        let mut records: Vec<Vec<f64>> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CoreError::Parse { line: idx + 2, message: e.to_string() })?;
            if rec.len() != width {
                return Err(CoreError::DimensionMismatch { expected: width, got: rec.len() });
            }
            let row: Result<Vec<f64>, _> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| CoreError::Parse {
                        line: idx + 2,
                        message: format!("not a number: {s:?}"),
                    })
                })
                .collect();
            records.push(row?);
        }
        validate_dataset(&records)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self, CoreError> {
        let file = std::fs::File::open(path).map_err(|e| CoreError::Io(e.to_string()))?;
        Self::from_csv(file)
    }

    /// Write the dataset as CSV. The budget column is always written so the
    /// round trip through [`Dataset::from_csv`] is the identity.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), CoreError> {
        let m = self.dim();
        let mut header = String::from("t");
        for i in 1..=m {
            header.push_str(&format!(",p{i}"));
        }
        for i in 1..=m {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",budget\n");
        w.write_all(header.as_bytes()).map_err(|e| CoreError::Io(e.to_string()))?;
        for t in 0..self.len() {
            let mut line = format!("{}", t + 1);
            for v in &self.probes[t] {
                line.push_str(&format!(",{v}"));
            }
            for v in &self.responses[t] {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(",{}\n", self.budgets[t]));
            w.write_all(line.as_bytes()).map_err(|e| CoreError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Validate raw tabular records of width `1+2m` (time, probes, responses) or
/// `2+2m` (plus trailing budget) and assemble a [`Dataset`].
pub fn validate_dataset(records: &[Vec<f64>]) -> Result<Dataset, CoreError> {
    if records.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let width = records[0].len();
    if width < 3 {
        return Err(CoreError::DimensionMismatch { expected: 3, got: width });
    }
    // odd width = t,p,x ; even width = t,p,x,budget
    let has_budget = width % 2 == 0;
    let m = if has_budget { (width - 2) / 2 } else { (width - 1) / 2 };

    let mut probes = Vec::with_capacity(records.len());
    let mut responses = Vec::with_capacity(records.len());
    let mut budgets = if has_budget { Some(Vec::with_capacity(records.len())) } else { None };
    let mut prev_time = f64::NEG_INFINITY;
    for (idx, row) in records.iter().enumerate() {
        if row.len() != width {
            return Err(CoreError::DimensionMismatch { expected: width, got: row.len() });
        }
        if row[0] <= prev_time {
            return Err(CoreError::UnsortedTime { row: idx + 1 });
        }
        prev_time = row[0];
        probes.push(row[1..1 + m].to_vec());
        responses.push(row[1 + m..1 + 2 * m].to_vec());
        if let Some(b) = budgets.as_mut() {
            b.push(row[1 + 2 * m]);
        }
    }
    Dataset::new(probes, responses, budgets)
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// Scalars `{u_t, λ_t > 0}` witnessing that a dataset is rationalizable by a
/// monotone concave utility: `u_s − u_t − λ_t p_t'(x_s − x_t) ≤ 0` for all
/// pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfriatCertificate {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AfriatCertificate {
    /// Largest violation of the rationality inequalities on `d`; a valid
    /// certificate stays within [`tolerance`].
    pub fn max_violation(&self, d: &Dataset) -> f64 {
        let t_n = d.len();
        let mut worst: f64 = 0.0;
        for t in 0..t_n {
            for s in 0..t_n {
                if s == t {
                    continue;
                }
                let c = d.cross_spend(t, s) - d.cross_spend(t, t);
                worst = worst.max(self.u[s] - self.u[t] - self.lambda[t] * c);
            }
        }
        for &l in &self.lambda {
            worst = worst.max(LAMBDA_MIN - l);
        }
        worst
    }

    pub fn is_valid_for(&self, d: &Dataset) -> bool {
        self.u.len() == d.len()
            && self.lambda.len() == d.len()
            && self.max_violation(d) <= tolerance()
    }
}

/// Scalars `{v_t, λ_t > 0}`, a nonnegative perturbation `α` and a change
/// index `τ` (1-based) witnessing that a dataset fits a utility that jumps by
/// the linear term `α'x` from observation `τ` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointCertificate {
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    /// 1-based observation index of the change.
    pub tau: usize,
}

impl ChangePointCertificate {
    /// Largest violation of the change-point system on `d`.
    ///
    /// Checks, for all pairs `t ≠ s`:
    /// pre-change rows `v_t + λ_t p_t'(x_s − x_t) ≥ v_s`, post-change rows
    /// with the extra `− α'(x_s − x_t)` term, and `α_i ≤ λ_t p_t^i` for every
    /// post-change `t`.
    pub fn max_violation(&self, d: &Dataset) -> f64 {
        let t_n = d.len();
        let m = d.dim();
        let mut worst: f64 = 0.0;
        for t in 0..t_n {
            for s in 0..t_n {
                if s == t {
                    continue;
                }
                let c = d.cross_spend(t, s) - d.cross_spend(t, t);
                let mut lhs = self.v[s] - self.v[t] - self.lambda[t] * c;
                if t + 1 >= self.tau {
                    let diff: f64 = (0..m)
                        .map(|i| self.alpha[i] * (d.response(s)[i] - d.response(t)[i]))
                        .sum();
                    lhs += diff;
                }
                worst = worst.max(lhs);
            }
        }
        for t in (self.tau - 1)..t_n {
            for i in 0..m {
                worst = worst.max(self.alpha[i] - self.lambda[t] * d.probe(t)[i]);
            }
        }
        for &l in &self.lambda {
            worst = worst.max(LAMBDA_MIN - l);
        }
        for &a in &self.alpha {
            worst = worst.max(-a);
        }
        worst
    }

    pub fn is_valid_for(&self, d: &Dataset) -> bool {
        self.v.len() == d.len()
            && self.lambda.len() == d.len()
            && self.alpha.len() == d.dim()
            && self.tau >= 1
            && self.tau <= d.len()
            && self.max_violation(d) <= tolerance()
    }
}

// ---------------------------------------------------------------------------
// Piecewise-linear utility
// ---------------------------------------------------------------------------

/// One affine overestimate `intercept + gradient'(x − anchor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub intercept: f64,
    pub gradient: Vec<f64>,
    pub anchor: Vec<f64>,
}

/// A concave utility represented as the lower envelope (pointwise minimum)
/// of affine pieces, one per observation. Evaluating at an anchor returns
/// that piece's intercept, and the function is monotone whenever every
/// gradient is componentwise positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearUtility {
    pub pieces: Vec<Piece>,
}

impl PiecewiseLinearUtility {
    pub fn dim(&self) -> usize {
        self.pieces.first().map_or(0, |p| p.gradient.len())
    }

    /// Evaluate the lower envelope at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, CoreError> {
        let m = self.dim();
        if x.len() != m {
            return Err(CoreError::DimensionMismatch { expected: m, got: x.len() });
        }
        let mut best = f64::INFINITY;
        for piece in &self.pieces {
            let mut val = piece.intercept;
            for i in 0..m {
                val += piece.gradient[i] * (x[i] - piece.anchor[i]);
            }
            best = best.min(val);
        }
        Ok(best)
    }

    /// `true` when every piece gradient is componentwise positive, which
    /// guarantees monotonicity of the envelope.
    pub fn is_monotone(&self) -> bool {
        self.pieces.iter().all(|p| p.gradient.iter().all(|&g| g > 0.0))
    }
}
