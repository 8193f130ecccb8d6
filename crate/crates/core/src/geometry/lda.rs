//! Fisher linear discriminant analysis for visualizing language separation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lang::LangId;
use crate::numkit::{cholesky, solve_lower_transpose, sym_eigensolve, whiten, Matrix};

pub const DEFAULT_LDA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaProjection {
    /// d × c; column `j` is discriminant `j + 1`, unit norm.
    pub w: Matrix,
    pub class_means: BTreeMap<LangId, Vec<f64>>,
    /// Subtracted before projecting.
    pub center: Vec<f64>,
    /// Generalized eigenvalues of (S_b, S_w), descending, for the retained components.
    pub discriminant_values: Vec<f64>,
}

impl LdaProjection {
    pub fn component_count(&self) -> usize {
        self.w.cols()
    }
}

/// Fit with the default within-class ridge `1e-8 · tr(S_w) / d`.
pub fn lda_fit(x: &Matrix, labels: &[LangId], components: usize) -> Result<LdaProjection> {
    lda_fit_with_ridge(x, labels, components, DEFAULT_LDA_RIDGE)
}

/// Columns of `W` are the leading eigenvectors of `S_w⁻¹ S_b`, where `S_w` carries a
/// ridge of `relative_ridge · tr(S_w) / d`.
pub fn lda_fit_with_ridge(
    x: &Matrix,
    labels: &[LangId],
    components: usize,
    relative_ridge: f64,
) -> Result<LdaProjection> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "LDA labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let mut groups: BTreeMap<LangId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "LDA needs at least 2 classes, got {}",
            groups.len()
        )));
    }
    if let Some((l, _)) = groups.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(Error::InvalidInput(format!("class {l} has fewer than 2 samples")));
    }
    if components == 0 || components > groups.len() - 1 {
        return Err(Error::IndexOutOfRange {
            index: components,
            max: groups.len() - 1,
        });
    }

    let scatter = Scatter::compute(x, &groups);
    let (s_w, s_b) = (&scatter.within, &scatter.between);

    let ridge = relative_ridge * s_w.trace() / d as f64;
    let l = cholesky(&s_w.add_diagonal(ridge)).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::Numerical(format!(
            "within-class scatter is singular (pivot {pivot}); use a positive ridge"
        )),
        other => other,
    })?;
    let (values, vectors) = sym_eigensolve(&whiten(&l, s_b))?;
    // w = L⁻ᵀ y maps whitened eigenvectors back to discriminant directions.
    let w = solve_lower_transpose(&l, &vectors);
    let mut kept = Matrix::zeros(d, components);
    for j in 0..components {
        let col = w.column(j);
        let nrm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            kept[(i, j)] = sign * col[i] / nrm;
        }
    }
    Ok(LdaProjection {
        w: kept,
        class_means: scatter.class_means,
        center: scatter.overall,
        discriminant_values: values[..components].to_vec(),
    })
}

fn add_outer(m: &mut Matrix, v: &[f64], scale: f64) {
    for (i, a) in v.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            m[(i, j)] += scale * a * b;
        }
    }
}

/// `(x − center) · W[:, components]` with 1-based component indices.
pub fn lda_project(proj: &LdaProjection, x: &Matrix, components: &[usize]) -> Result<Matrix> {
    let c = proj.component_count();
    if let Some(&bad) = components.iter().find(|&&k| k == 0 || k > c) {
        return Err(Error::IndexOutOfRange { index: bad, max: c });
    }
    if x.cols() != proj.w.rows() {
        return Err(Error::DimensionMismatch {
            context: "LDA projection input",
            expected: proj.w.rows(),
            actual: x.cols(),
        });
    }
    let centered = x.sub_row_vector(&proj.center);
    let mut sub = Matrix::zeros(proj.w.rows(), components.len());
    for (j, &k) in components.iter().enumerate() {
        for i in 0..proj.w.rows() {
            sub[(i, j)] = proj.w[(i, k - 1)];
        }
    }
    Ok(centered.matmul(&sub))
}

struct Scatter {
    overall: Vec<f64>,
    class_means: BTreeMap<LangId, Vec<f64>>,
    within: Matrix,
    between: Matrix,
}

impl Scatter {
    fn compute(x: &Matrix, groups: &BTreeMap<LangId, Vec<usize>>) -> Self {
        let d = x.cols();
        let overall = x.column_means();
        let mut class_means = BTreeMap::new();
        let mut within = Matrix::zeros(d, d);
        let mut between = Matrix::zeros(d, d);
        for (&lang, idx) in groups {
            let mut mean = vec![0.0; d];
            for &i in idx {
                for (m, v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
            for &i in idx {
                let diff: Vec<f64> = x.row(i).iter().zip(&mean).map(|(a, b)| a - b).collect();
                add_outer(&mut within, &diff, 1.0);
            }
            let diff: Vec<f64> = mean.iter().zip(&overall).map(|(a, b)| a - b).collect();
            add_outer(&mut between, &diff, idx.len() as f64);
            class_means.insert(lang, mean);
        }
        Self {
            overall,
            class_means,
            within,
            between,
        }
    }
}

/// All `d` generalized eigenvalues of (S_b, S_w), descending; at most `classes − 1` are non-zero.
pub fn discriminant_spectrum(x: &Matrix, labels: &[LangId]) -> Result<Vec<f64>> {
    let mut groups: BTreeMap<LangId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let scatter = Scatter::compute(x, &groups);
    let ridge = DEFAULT_LDA_RIDGE * scatter.within.trace() / x.cols() as f64;
    let l = cholesky(&scatter.within.add_diagonal(ridge))?;
    Ok(sym_eigensolve(&whiten(&l, &scatter.between))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_bounds() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [4.0, 0.0], [5.0, 0.2]]).unwrap();
        let labels = [LangId(0), LangId(0), LangId(1), LangId(1)];
        assert!(matches!(
            lda_fit(&x, &labels, 2),
            Err(Error::IndexOutOfRange { index: 2, max: 1 })
        ));
        let p = lda_fit(&x, &labels, 1).unwrap();
        assert!(lda_project(&p, &x, &[3]).is_err());
        assert_eq!(lda_project(&p, &x, &[1]).unwrap().shape(), (4, 1));
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.5]]).unwrap();
        assert!(lda_fit(&x, &[LangId(0), LangId(0)], 1).is_err());
    }

    #[test]
    fn singular_scatter_without_ridge() {
        // Within-class variation only along the first axis.
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let labels = [LangId(0), LangId(0), LangId(1), LangId(1)];
        assert!(matches!(
            lda_fit_with_ridge(&x, &labels, 1, 0.0),
            Err(Error::Numerical(_))
        ));
        assert!(lda_fit(&x, &labels, 1).is_ok());
    }

    #[test]
    fn identity_projection() {
        let p = LdaProjection {
            w: Matrix::from_rows(&[[1.0], [0.0]]).unwrap(),
            class_means: BTreeMap::new(),
            center: vec![1.0, 2.0],
            discriminant_values: vec![1.0],
        };
        let x = Matrix::from_rows(&[[3.0, 5.0], [0.0, 1.0]]).unwrap();
        let y = lda_project(&p, &x, &[1]).unwrap();
        assert_eq!(y.data(), &[2.0, -1.0]);
    }
}
