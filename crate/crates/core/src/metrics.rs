//! Memorization and collapse measurements.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HoldError, Result};
use crate::forward::{cholesky_block, BlockCovariance, Dynamics};
use crate::hold::{critically_damped_params, HoldParams, LiftedState};

/// Gap-ratio threshold below which a sample counts as memorized.
pub const DEFAULT_TAU: f64 = 0.333;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmemReport {
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub batch_size: usize,
    pub threshold: f64,
    /// Nearest over second-nearest training distance, per generated sample.
    pub gap_ratios: Vec<f64>,
    pub nn_index: Vec<usize>,
}

impl FmemReport {
    pub fn memorized(&self) -> usize {
        self.gap_ratios.iter().filter(|&&r| r < self.threshold).count()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest index and the two smallest distances; ties keep the lower index.
fn two_nearest(x: &[f64], train: &[Vec<f64>]) -> (usize, f64, f64) {
    let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
    for (j, p) in train.iter().enumerate() {
        let d = sq_dist(x, p);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1.sqrt(), d2.sqrt())
}

/// Gap ratio `d₁/d₂`; a sample sitting on two coincident training points
/// (`0/0`) is treated as not memorized.
pub fn gap_ratio(d1: f64, d2: f64) -> f64 {
    if d2 == 0.0 {
        1.0
    } else {
        d1 / d2
    }
}

pub fn fmem(generated: &[Vec<f64>], train: &[Vec<f64>], tau: f64) -> Result<FmemReport> {
    if train.len() < 2 {
        return Err(HoldError::TooFewPoints {
            needed: 2,
            got: train.len(),
        });
    }
    if generated.is_empty() {
        return Err(HoldError::TooFewPoints { needed: 1, got: 0 });
    }
    let dim = train[0].len();
    if let Some(bad) = train.iter().chain(generated).find(|p| p.len() != dim) {
        return Err(HoldError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let nearest: Vec<(usize, f64)> = generated
        .par_iter()
        .map(|x| {
            let (j, d1, d2) = two_nearest(x, train);
            (j, gap_ratio(d1, d2))
        })
        .collect();
    let (nn_index, gap_ratios): (Vec<usize>, Vec<f64>) = nearest.into_iter().unzip();
    let b = generated.len();
    let hits = gap_ratios.iter().filter(|&&r| r < tau).count();
    let p = hits as f64 / b as f64;
    let half = 1.96 * (p * (1.0 - p) / b as f64).sqrt();
    Ok(FmemReport {
        fraction: p,
        ci_low: (p - half).max(0.0),
        ci_high: (p + half).min(1.0),
        batch_size: b,
        threshold: tau,
        gap_ratios,
        nn_index,
    })
}

/// `(u − m)ᵀ Σ⁻¹ (u − m)` by a block triangular solve.
pub fn mahalanobis_sq(u: &LiftedState, mean: &LiftedState, cov: &BlockCovariance) -> Result<f64> {
    let chol = cholesky_block(cov, None)?;
    let z = chol.solve_lower(u.sub(mean).as_slice(), u.block_dim());
    Ok(z.iter().map(|v| v * v).sum())
}

/// `det(I − e^{Ft})² / det(I − e^{Ft}e^{Ftᵀ})` for the given process.
///
/// The numerator uses the repeated eigenvalue, `(1 − e^{s*t})^{2n}`, and the
/// denominator a diagonally scaled Cholesky log-determinant of the noise
/// Gram matrix, which is assembled without cancellation.
pub fn det_ratio_params(params: &HoldParams, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(HoldError::Domain { op: "det_ratio", t });
    }
    let dynamics = Dynamics::new(params.clone())?;
    let n = params.order();
    let log_num = 2.0 * n as f64 * (-(dynamics.s_star() * t).exp_m1()).ln();
    let k = dynamics.noise_gram(t);
    Ok((log_num - scaled_log_det(&k)?).exp())
}

fn scaled_log_det(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    let d: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(HoldError::NotPositiveDefinite { floor: 0.0 });
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (d[i] * d[j]).sqrt());
    let chol = scaled
        .cholesky()
        .ok_or(HoldError::NotPositiveDefinite { floor: 0.0 })?;
    let inner: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(inner + d.iter().map(|v| v.ln()).sum::<f64>())
}

/// Ratio for critically damped order `n` with `L⁻¹ = 1`; order 1 is OU with
/// `ξ = 1`.
pub fn det_ratio(n: usize, t: f64) -> Result<f64> {
    let params = if n == 1 {
        HoldParams::ornstein_uhlenbeck(1.0, 1.0)?
    } else {
        critically_damped_params(n, 1.0, 1.0)?
    };
    det_ratio_params(&params, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseRow {
    pub n: usize,
    pub t: f64,
    pub det_ratio: f64,
}

pub fn collapse_curve(orders: &[usize], t_grid: &[f64]) -> Result<Vec<CollapseRow>> {
    let mut rows = Vec::with_capacity(orders.len() * t_grid.len());
    for &n in orders {
        for &t in t_grid {
            rows.push(CollapseRow {
                n,
                t,
                det_ratio: det_ratio(n, t)?,
            });
        }
    }
    Ok(rows)
}

fn fit_gaussian(samples: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, d) = (samples.len(), samples[0].len());
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (m.max(2) - 1) as f64;
    if m < d + 1 {
        cov = DMatrix::from_diagonal(&cov.diagonal());
    }
    (mean, cov)
}

fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance between Gaussians fitted to two sample
/// sets. A desk-scale proxy for image-space quality metrics.
pub fn gaussian_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HoldError::TooFewPoints { needed: 1, got: 0 });
    }
    let d = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(HoldError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let (ma, ca) = fit_gaussian(a);
    let (mb, cb) = fit_gaussian(b);
    let rb = psd_sqrt(&cb);
    let cross = psd_sqrt(&(&rb * &ca * &rb));
    let w2 = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross.trace();
    Ok(w2.max(0.0))
}
