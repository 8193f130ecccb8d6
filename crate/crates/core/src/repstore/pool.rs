use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// How token states of one sentence are reduced to a sentence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMethod {
    #[default]
    Mean,
    Max,
    Last,
}

impl fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMethod::Mean => "mean",
            PoolingMethod::Max => "max",
            PoolingMethod::Last => "last",
        })
    }
}

impl FromStr for PoolingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingMethod::Mean),
            "max" => Ok(PoolingMethod::Max),
            "last" => Ok(PoolingMethod::Last),
            other => Err(Error::InvalidInput(format!("unknown pooling method `{other}`"))),
        }
    }
}

/// Reduces the rows of `tokens` to one vector.
pub fn pool(tokens: &Matrix, method: PoolingMethod) -> Result<Vec<f64>> {
    if tokens.rows() == 0 {
        return Err(Error::InvalidInput("cannot pool an empty token matrix".into()));
    }
    Ok(pool_rows(tokens, 0, tokens.rows(), method))
}

/// Pools rows `start..end`; the range must be non-empty.
pub(crate) fn pool_rows(tokens: &Matrix, start: usize, end: usize, method: PoolingMethod) -> Vec<f64> {
    debug_assert!(start < end && end <= tokens.rows());
    match method {
        PoolingMethod::Mean => {
            // Running mean: identical rows reproduce the row bit-exactly.
            let mut acc = tokens.row(start).to_vec();
            for (k, r) in ((start + 1)..end).enumerate() {
                let n = (k + 2) as f64;
                for (a, v) in acc.iter_mut().zip(tokens.row(r)) {
                    *a += (v - *a) / n;
                }
            }
            acc
        }
        PoolingMethod::Max => {
            let mut acc = tokens.row(start).to_vec();
            for r in (start + 1)..end {
                for (a, &v) in acc.iter_mut().zip(tokens.row(r)) {
                    if v > *a {
                        *a = v;
                    }
                }
            }
            acc
        }
        PoolingMethod::Last => tokens.row(end - 1).to_vec(),
    }
}

/// Gradient of [`pool_rows`] with respect to the token rows, accumulated into `grad_tokens`.
///
/// Max pooling routes the gradient to the first row attaining the maximum.
pub(crate) fn pool_rows_backward(
    tokens: &Matrix,
    start: usize,
    end: usize,
    method: PoolingMethod,
    grad_pooled: &[f64],
    grad_tokens: &mut Matrix,
) {
    match method {
        PoolingMethod::Mean => {
            let n = (end - start) as f64;
            for r in start..end {
                for (g, gp) in grad_tokens.row_mut(r).iter_mut().zip(grad_pooled) {
                    *g += gp / n;
                }
            }
        }
        PoolingMethod::Max => {
            for (c, gp) in grad_pooled.iter().enumerate() {
                let mut best = start;
                for r in (start + 1)..end {
                    if tokens[(r, c)] > tokens[(best, c)] {
                        best = r;
                    }
                }
                grad_tokens[(best, c)] += gp;
            }
        }
        PoolingMethod::Last => {
            for (g, gp) in grad_tokens.row_mut(end - 1).iter_mut().zip(grad_pooled) {
                *g += gp;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m() -> Matrix {
        Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(pool(&m(), PoolingMethod::Mean).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool(&m(), PoolingMethod::Max).unwrap(), vec![3.0, 4.0]);
        assert_eq!(pool(&m(), PoolingMethod::Last).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn empty_is_error() {
        assert!(pool(&Matrix::zeros(0, 2), PoolingMethod::Mean).is_err());
    }

    #[test]
    fn mean_of_identical_rows_is_exact() {
        let row = [0.1, 1.0 / 3.0, -7.25];
        let x = Matrix::from_rows(&[row; 7]).unwrap();
        assert_eq!(pool(&x, PoolingMethod::Mean).unwrap(), row.to_vec());
    }

    #[test]
    fn parse_round_trip() {
        for p in [PoolingMethod::Mean, PoolingMethod::Max, PoolingMethod::Last] {
            assert_eq!(p.to_string().parse::<PoolingMethod>().unwrap(), p);
        }
        assert!("median".parse::<PoolingMethod>().is_err());
    }
}
