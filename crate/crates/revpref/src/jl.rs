//! Random-projection GARP for high-dimensional data.
//!
//! Checking GARP costs `m T²` inner-product work; for `m ≫ T` the vectors
//! are first embedded into `k = O(log n / ε²)` dimensions with a ±1
//! projection matrix (`B = A R / √k`), which preserves norms and — for
//! vectors scaled inside the unit ball — inner products to within `ε` with
//! probability at least `1 − n^{−β}` each. GARP then runs on the embedded
//! inner products with a comparison slack of `2ε`, since each of the two
//! compared products may drift by `ε`.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::Dataset;
use crate::garp::{check_garp, relation_from_inner_products, GarpVerdict};
use crate::util::{dot, norm2};

#[derive(Debug, Clone, PartialEq)]
pub enum JlError {
    /// Parameter outside its admissible range.
    DomainError(String),
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for JlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DomainError(m) => write!(f, "domain error: {m}"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for JlError {}

/// Smallest embedding dimension `k = ⌈(4+2β)/(ε²/2 − ε³/3) · ln n⌉`
/// guaranteeing the distortion bounds for `n` vectors with failure
/// probability `n^{−β}`. The distortion `ε` must lie in `(0, 1/2)`.
pub fn target_dimension(epsilon: f64, beta: f64, n: usize) -> Result<usize, JlError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(JlError::DomainError(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    if !(beta > 0.0) {
        return Err(JlError::DomainError(format!("beta {beta} must be positive")));
    }
    if n < 2 {
        return Err(JlError::DomainError(format!("n {n} must be at least 2")));
    }
    let denom = epsilon * epsilon / 2.0 - epsilon * epsilon * epsilon / 3.0;
    let k = (4.0 + 2.0 * beta) / denom * (n as f64).ln();
    Ok(k.ceil() as usize)
}

/// Parameters of an embedding run. `k` is derived from the other fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub epsilon: f64,
    pub beta: f64,
    /// Number of vectors the guarantee covers.
    pub n: usize,
    /// Target dimension.
    pub k: usize,
    pub seed: u64,
}

impl EmbeddingConfig {
    pub fn new(epsilon: f64, beta: f64, n: usize, seed: u64) -> Result<Self, JlError> {
        let k = target_dimension(epsilon, beta, n)?;
        Ok(Self { epsilon, beta, n, k, seed })
    }

    /// Failure probability `n^{−β}` of the distortion guarantee.
    pub fn delta(&self) -> f64 {
        (self.n as f64).powf(-self.beta)
    }
}

/// Draw the `m × k` ±1 projection matrix for a seed. Entries are row-major
/// and equiprobable, so the same seed always yields the same matrix.
pub fn projection_matrix(m: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect()
}

pub(crate) fn embed_with(vectors: &[Vec<f64>], r: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let scale = 1.0 / (k as f64).sqrt();
    vectors
        .iter()
        .map(|row| {
            let mut out = vec![0.0; k];
            for (l, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rrow = &r[l];
                for j in 0..k {
                    out[j] += a * rrow[j];
                }
            }
            for v in &mut out {
                *v *= scale;
            }
            out
        })
        .collect()
}

/// Embed `cfg.n` vectors of common dimension `m` into `cfg.k` dimensions:
/// `B = A R / √k` with a shared seeded ±1 matrix `R`. Row `i` of the output
/// is the image of row `i` of the input.
pub fn embed(vectors: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<Vec<Vec<f64>>, JlError> {
    if vectors.len() != cfg.n {
        return Err(JlError::DimensionMismatch { expected: cfg.n, got: vectors.len() });
    }
    let m = vectors.first().map_or(0, |v| v.len());
    if m == 0 {
        return Err(JlError::DomainError("vectors must be nonempty".into()));
    }
    for v in vectors {
        if v.len() != m {
            return Err(JlError::DimensionMismatch { expected: m, got: v.len() });
        }
    }
    let r = projection_matrix(m, cfg.k, cfg.seed);
    Ok(embed_with(vectors, &r, cfg.k))
}

/// Distortion audit of an embedded GARP run, available when the exact inner
/// products are cheap enough to compute alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionAudit {
    /// Largest `|exact − embedded|` over all compared probe/response pairs
    /// (in the scaled geometry).
    pub max_abs_error: f64,
    /// Number of pairs whose distortion reached `ε`.
    pub violations: usize,
    /// Number of pairs audited.
    pub pairs_checked: usize,
}

/// Verdict and diagnostics of a GARP check run in the embedded space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedGarpReport {
    pub verdict: GarpVerdict,
    pub k: usize,
    pub epsilon: f64,
    pub beta: f64,
    /// Inner-product computation shrinks by this factor (`m / k`).
    pub compute_savings: f64,
    /// Present when the exact inner products were computed for comparison.
    pub audit: Option<DistortionAudit>,
}

/// Exact inner products become too expensive to audit beyond this budget.
const AUDIT_BUDGET: usize = 200_000_000;

/// Check GARP in the embedded space.
///
/// All `2T` vectors (probes then responses) are scaled by the largest norm
/// among them — GARP only compares inner products within a probe row, so a
/// common positive scale cannot change the verdict — embedded with one
/// shared projection, and compared with slack `2ε`. The config must cover
/// `n = 2T` vectors.
pub fn garp_embedded(d: &Dataset, cfg: &EmbeddingConfig) -> Result<EmbeddedGarpReport, JlError> {
    let t_n = d.len();
    let m = d.dim();
    if cfg.n != 2 * t_n {
        return Err(JlError::DomainError(format!(
            "config covers {} vectors, dataset needs 2T = {}",
            cfg.n,
            2 * t_n
        )));
    }
    let scale = d
        .probes()
        .iter()
        .chain(d.responses().iter())
        .map(|v| norm2(v))
        .fold(0.0f64, f64::max);
    // Probes are strictly positive, so the scale cannot be zero.
    let inv = 1.0 / scale;
    let scaled: Vec<Vec<f64>> = d
        .probes()
        .iter()
        .chain(d.responses().iter())
        .map(|v| v.iter().map(|&x| x * inv).collect())
        .collect();
    let embedded = embed(&scaled, cfg)?;
    let (probes_e, responses_e) = embedded.split_at(t_n);

    let mut ip = vec![vec![0.0; t_n]; t_n];
    for t in 0..t_n {
        for s in 0..t_n {
            ip[t][s] = dot(&probes_e[t], &responses_e[s]);
        }
    }
    let verdict = check_garp(&relation_from_inner_products(&ip, 2.0 * cfg.epsilon));

    let audit = if t_n * t_n * m <= AUDIT_BUDGET {
        let mut max_abs_error: f64 = 0.0;
        let mut violations = 0usize;
        for t in 0..t_n {
            for s in 0..t_n {
                let exact = d.cross_spend(t, s) * inv * inv;
                let err = (exact - ip[t][s]).abs();
                max_abs_error = max_abs_error.max(err);
                if err >= cfg.epsilon {
                    violations += 1;
                }
            }
        }
        Some(DistortionAudit { max_abs_error, violations, pairs_checked: t_n * t_n })
    } else {
        None
    };

    Ok(EmbeddedGarpReport {
        verdict,
        k: cfg.k,
        epsilon: cfg.epsilon,
        beta: cfg.beta,
        compute_savings: m as f64 / cfg.k as f64,
        audit,
    })
}
