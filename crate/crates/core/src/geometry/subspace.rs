//! Affine language subspaces and the Riemannian distance between them.
//!
//! A subspace is fitted to the `n × d` token representations of one language at one
//! layer: the mean `μ`, the top-`k` right singular vectors `V` of the centered data
//! (smallest `k` reaching the variance threshold), and the SPD surrogate
//! `K = V Σ² Vᵀ / (n − 1)`.
//!
//! The distance between two subspaces is `sqrt(Σᵢ ln² λᵢ) + ‖μ_a − μ_b‖₂`, where `λᵢ`
//! are the `d` eigenvalues of the pencil `(K_a + εI)⁻¹ (K_b + εI)`. `K` has rank `k < d`
//! in general, so a shared ridge `ε` is added to both sides before solving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{euclidean, spd_pencil_eigenvalues, svd, Matrix};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.90;
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

/// Slack when comparing cumulative variance fractions against the threshold.
const VARIANCE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSubspace {
    pub mean: Vec<f64>,
    /// d × k, orthonormal columns.
    pub basis: Matrix,
    /// Descending, length k.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// d × d, symmetric PSD.
    pub surrogate: Matrix,
    pub sample_count: usize,
}

impl LanguageSubspace {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Builds a subspace directly from its parts (used by tests and synthetic studies).
    pub fn from_parts(mean: Vec<f64>, surrogate: Matrix, sample_count: usize) -> Result<Self> {
        if surrogate.rows() != mean.len() || surrogate.cols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "surrogate vs mean dimension",
                expected: mean.len(),
                actual: surrogate.rows(),
            });
        }
        let d = mean.len();
        Ok(Self {
            mean,
            basis: Matrix::identity(d),
            singular_values: Vec::new(),
            rank: d,
            surrogate,
            sample_count,
        })
    }
}

/// Fits the affine subspace retaining `variance_threshold` of the total variance.
pub fn fit_subspace(x: &Matrix, variance_threshold: f64) -> Result<LanguageSubspace> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "subspace fit needs at least 2 samples, got {n}"
        )));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance threshold {variance_threshold} outside (0, 1]"
        )));
    }
    let mean = x.column_means();
    let centered = x.sub_row_vector(&mean);
    let s = svd(&centered)?;
    let energy: Vec<f64> = s.singular_values.iter().map(|v| v * v).collect();
    let total: f64 = energy.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSubspace);
    }
    let mut cumulative = 0.0;
    let mut k = 0;
    for e in &energy {
        cumulative += e;
        k += 1;
        if cumulative / total >= variance_threshold - VARIANCE_SLACK {
            break;
        }
    }
    // Trailing zero singular values can never be needed, but guard the degenerate tail anyway.
    while k > 1 && s.singular_values[k - 1] == 0.0 {
        k -= 1;
    }

    let singular_values = s.singular_values[..k].to_vec();
    let mut basis = Matrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            basis[(i, j)] = s.vt[(j, i)];
        }
    }
    // K = V Σ² Vᵀ / (n − 1)
    let mut scaled = basis.clone();
    for i in 0..d {
        for (j, sv) in singular_values.iter().enumerate() {
            scaled[(i, j)] *= sv * sv / (n - 1) as f64;
        }
    }
    let surrogate = scaled.matmul_t(&basis).symmetrized();
    Ok(LanguageSubspace {
        mean,
        basis,
        singular_values,
        rank: k,
        surrogate,
        sample_count: n,
    })
}

/// How the ridge added to both surrogates is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Ridge {
    /// `ε = c · (tr K_a + tr K_b) / (2d)`
    Relative(f64),
    /// Fixed `ε`.
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RELATIVE_RIDGE)
    }
}

impl Ridge {
    pub fn resolve(&self, a: &LanguageSubspace, b: &LanguageSubspace) -> f64 {
        match *self {
            Ridge::Absolute(eps) => eps,
            Ridge::Relative(c) => {
                let d = a.dim().max(1) as f64;
                c * (a.surrogate.trace() + b.surrogate.trace()) / (2.0 * d)
            }
        }
    }
}

/// `sqrt(Σ ln² λᵢ) + ‖μ_a − μ_b‖₂` with `λ` the eigenvalues of `(K_a+εI)⁻¹(K_b+εI)`.
pub fn subspace_distance(a: &LanguageSubspace, b: &LanguageSubspace, ridge: f64) -> Result<f64> {
    Ok(distance_terms(a, b, ridge)?.total())
}

/// The two summands of the subspace distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceTerms {
    pub eigen_term: f64,
    pub mean_term: f64,
}

impl DistanceTerms {
    pub fn total(&self) -> f64 {
        self.eigen_term + self.mean_term
    }
}

pub fn distance_terms(
    a: &LanguageSubspace,
    b: &LanguageSubspace,
    ridge: f64,
) -> Result<DistanceTerms> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "subspace dimensions",
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("ridge must be finite and ≥ 0, got {ridge}")));
    }
    if ridge == 0.0 {
        // Rank-deficient surrogates have no inverse; rounding must not hide that.
        for s in [a, b] {
            if s.rank < s.dim() {
                return Err(Error::NotPositiveDefinite { pivot: s.rank });
            }
        }
    }
    let ka = a.surrogate.add_diagonal(ridge);
    let kb = b.surrogate.add_diagonal(ridge);
    let eigen_term = log_eigen_term(&ka, &kb)?;
    Ok(DistanceTerms {
        eigen_term,
        mean_term: euclidean(&a.mean, &b.mean),
    })
}

/// `sqrt(Σ ln² λᵢ)` over the eigenvalues of `a⁻¹ b`.
pub fn log_eigen_term(a: &Matrix, b: &Matrix) -> Result<f64> {
    let lambdas = spd_pencil_eigenvalues(a, b)?;
    Ok(lambdas.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}
