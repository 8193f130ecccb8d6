//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::toymodel::ToyModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Number of randomly sampled coordinates.
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor: the relative error is `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            coordinates: 200,
            step: 1e-3,
            tolerance: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub passed: bool,
}

/// Fourth-order central difference
/// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
fn derivative(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let mut eval = |t: f64| -> Result<f64> {
        let v = f(t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("loss is not finite ({v})")))
        }
    };
    let (p2, p1, m1, m2) = (eval(x + 2.0 * h)?, eval(x + h)?, eval(x - h)?, eval(x - 2.0 * h)?);
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks `grad` against finite differences of `f` at `x` on a random subsample of coordinates.
pub fn check_gradient_vec(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    grad: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if grad.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient length",
            expected: x.len(),
            actual: grad.len(),
        });
    }
    let indices = sample_indices(x.len(), cfg);
    let mut probe = x.to_vec();
    let mut report = empty_report();
    for i in indices {
        let mut at = |t: f64| {
            probe[i] = t;
            f(&probe)
        };
        let numeric = derivative(&mut at, x[i], cfg.step)?;
        probe[i] = x[i];
        record(&mut report, i, grad[i], numeric, cfg.floor);
    }
    report.passed = report.max_relative_error <= cfg.tolerance;
    Ok(report)
}

/// Checks an analytic model gradient against finite differences of `loss`.
pub fn check_gradient(
    loss: impl Fn(&ToyModelParams) -> Result<f64>,
    params: &ToyModelParams,
    analytic: &ToyModelParams,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let indices = sample_indices(params.num_parameters(), cfg);
    let mut probe = params.clone();
    let mut report = empty_report();
    for i in indices {
        let x = params.get_flat(i);
        let mut at = |t: f64| {
            probe.set_flat(i, t);
            loss(&probe)
        };
        let numeric = derivative(&mut at, x, cfg.step)?;
        probe.set_flat(i, x);
        record(&mut report, i, analytic.get_flat(i), numeric, cfg.floor);
    }
    report.passed = report.max_relative_error <= cfg.tolerance;
    Ok(report)
}

fn sample_indices(n: usize, cfg: &GradCheckConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = sample(&mut rng, n, cfg.coordinates.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

fn empty_report() -> GradCheckReport {
    GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        passed: false,
    }
}

fn record(report: &mut GradCheckReport, i: usize, analytic: f64, numeric: f64, floor: f64) {
    let err = relative_error(analytic, numeric, floor);
    report.checked += 1;
    if err > report.max_relative_error || report.checked == 1 {
        report.max_relative_error = err;
        report.worst_index = i;
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
    }
}
