//! Recovery and predictive scores: zero-recovery sensitivity, Gaussian KL
//! discrepancy between precision matrices, and the empirical CRPS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, SparsityPattern, SpdMatrix};

/// Fraction of true sub-diagonal zeros that are also zero in `z_hat`.
/// Returns 1 when the truth has no zeros.
pub fn sensitivity(z_true: &SparsityPattern, z_hat: &SparsityPattern) -> Result<f64> {
    agreement(z_true, z_hat, false)
}

/// Fraction of true sub-diagonal edges that are also edges in `z_hat`.
/// Returns 1 when the truth has no edges.
pub fn specificity(z_true: &SparsityPattern, z_hat: &SparsityPattern) -> Result<f64> {
    agreement(z_true, z_hat, true)
}

fn agreement(z_true: &SparsityPattern, z_hat: &SparsityPattern, on: bool) -> Result<f64> {
    if z_true.dim() != z_hat.dim() {
        return Err(Error::DimensionMismatch {
            expected: z_true.dim(),
            found: z_hat.dim(),
        });
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (t, h) in z_true.lower_bits().iter().zip(z_hat.lower_bits()) {
        if *t == on {
            total += 1;
            hit += (*h == on) as usize;
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

/// Which argument plays the role of the reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlOrientation {
    /// `KL(N(0, lambda_hat^-1) || N(0, lambda^-1))`.
    #[default]
    EstimateToTruth,
    /// `KL(N(0, lambda^-1) || N(0, lambda_hat^-1))`.
    TruthToEstimate,
}

/// `KL(N(0, A^-1) || N(0, B^-1)) = 1/2 [tr(B A^-1) - log det(B A^-1) - p]`
/// with `A = lambda_hat`, `B = lambda`.
pub fn kl_discrepancy(lambda_hat: &SpdMatrix, lambda: &SpdMatrix) -> Result<f64> {
    let p = lambda.dim();
    if lambda_hat.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: lambda_hat.dim(),
        });
    }
    let la = cholesky(lambda_hat)?;
    let lb = cholesky(lambda)?;
    // tr(A^-1 B) = ||La^-1 Lb||_F^2
    let mut trace = 0.0;
    let mut col = vec![0.0; p];
    for k in 0..p {
        for (j, c) in col.iter_mut().enumerate() {
            *c = if j >= k { lb.get(j, k) } else { 0.0 };
        }
        la.solve_lower_in_place(&mut col);
        trace += col.iter().map(|v| v * v).sum::<f64>();
    }
    let logdet = 2.0 * (0..p).map(|k| lb.get(k, k).ln() - la.get(k, k).ln()).sum::<f64>();
    Ok((0.5 * (trace - logdet - p as f64)).max(0.0))
}

pub fn kl_oriented(lambda_hat: &SpdMatrix, lambda: &SpdMatrix, orientation: KlOrientation) -> Result<f64> {
    match orientation {
        KlOrientation::EstimateToTruth => kl_discrepancy(lambda_hat, lambda),
        KlOrientation::TruthToEstimate => kl_discrepancy(lambda, lambda_hat),
    }
}

/// `mean|X - y| - 1/2 mean|X - X'|` over all ordered pairs of draws.
/// Empty input gives NaN.
pub fn crps_empirical(samples: &[f64], y: f64) -> f64 {
    let l = samples.len();
    if l == 0 {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lf = l as f64;
    let abs_err = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / lf;
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - lf + 1.0) * x)
        .sum();
    (abs_err - pair_sum / (lf * lf)).max(0.0)
}

/// Linear-interpolation quantile of already sorted data (`(n - 1) prob` rule).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Scores of one fit against its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub kl_discrepancy: f64,
    pub kl_orientation: KlOrientation,
    /// Mean CRPS over held-out cells; `None` without held-out cells.
    pub crps_mean: Option<f64>,
    pub edge_count_mean: f64,
    pub edge_count_lower: f64,
    pub edge_count_upper: f64,
}

impl EvalReport {
    pub fn edge_report(&self) -> String {
        crate::mcmc::format_edge_interval(self.edge_count_mean, self.edge_count_lower, self.edge_count_upper)
    }
}

/// Mean CRPS over cells, given each cell's predictive draws and true value.
pub fn crps_mean(draws: &[Vec<f64>], truth: &[f64]) -> Result<Option<f64>> {
    if draws.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: draws.len(),
        });
    }
    if draws.is_empty() {
        return Ok(None);
    }
    let s: f64 = draws.iter().zip(truth).map(|(d, y)| crps_empirical(d, *y)).sum();
    Ok(Some(s / draws.len() as f64))
}
