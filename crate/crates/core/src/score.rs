//! The optimal empirical score.
//!
//! Under a Dirac mixture of training points, the time-`t` law of `u_t` is an
//! equal-weight Gaussian mixture with centers `e^{Ft}u₀⁽ᵏ⁾` and one shared
//! covariance `Σ_t ⊗ I_h`. Its score is available in closed form, and the
//! last block of it minimises the denoising loss exactly. Mixture weights
//! are computed in the log domain; `Σ_t⁻¹` is only ever applied through
//! triangular solves.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{HoldError, Result};
use crate::forward::{cholesky_block, initial_covariance, AuxPolicy, BlockCholesky, BlockCovariance, Dynamics};
use crate::hold::{HoldParams, LiftedState};
use crate::rng::{derived_rng, stream};

/// Training points in `ℝ^h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(HoldError::EmptyDataset)?.len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(HoldError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { points, dim })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lifted initial states, in dataset order.
    pub fn lift(&self, params: &HoldParams, policy: AuxPolicy) -> Vec<LiftedState> {
        self.points
            .iter()
            .enumerate()
            .map(|(k, x)| crate::forward::lift_data(x, params, policy, k as u64))
            .collect()
    }
}

/// The time-`t` empirical law `(1/N) Σ N(e^{Ft}u₀⁽ᵏ⁾, Σ_t ⊗ I_h)`.
#[derive(Debug, Clone)]
pub struct EmpiricalMixture {
    centers: Vec<LiftedState>,
    cov: BlockCovariance,
    chol: BlockCholesky,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

impl EmpiricalMixture {
    pub fn new(centers: Vec<LiftedState>, cov: BlockCovariance) -> Result<Self> {
        if centers.is_empty() {
            return Err(HoldError::EmptyDataset);
        }
        let chol = cholesky_block(&cov, None)?;
        Ok(Self { centers, cov, chol })
    }

    pub fn centers(&self) -> &[LiftedState] {
        &self.centers
    }

    pub fn cov(&self) -> &BlockCovariance {
        &self.cov
    }

    pub fn cholesky(&self) -> &BlockCholesky {
        &self.chol
    }

    pub fn t(&self) -> f64 {
        self.cov.t()
    }

    fn block_dim(&self) -> usize {
        self.centers[0].block_dim()
    }

    /// Whitened offsets `L⁻¹(u − μ_k)` for all centers.
    fn whitened(&self, u: &LiftedState) -> Vec<Vec<f64>> {
        let h = self.block_dim();
        self.centers
            .iter()
            .map(|c| self.chol.solve_lower(u.sub(c).as_slice(), h))
            .collect()
    }

    /// Squared Mahalanobis distance of `u` to each center.
    pub fn mahalanobis_to_centers(&self, u: &LiftedState) -> Vec<f64> {
        self.whitened(u)
            .iter()
            .map(|z| z.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Posterior weights of the centers: softmax of `−½ d_k`.
    pub fn responsibilities(&self, u: &LiftedState) -> Vec<f64> {
        let logits: Vec<f64> = self.mahalanobis_to_centers(u).iter().map(|d| -0.5 * d).collect();
        softmax(&logits)
    }

    /// `log p_t^emp(u)`.
    pub fn log_density(&self, u: &LiftedState) -> f64 {
        let h = self.block_dim() as f64;
        let n = self.chol.order() as f64;
        let logits: Vec<f64> = self.mahalanobis_to_centers(u).iter().map(|d| -0.5 * d).collect();
        let norm = -0.5 * n * h * (2.0 * std::f64::consts::PI).ln() - 0.5 * h * self.chol.log_det();
        log_sum_exp(&logits) - (self.centers.len() as f64).ln() + norm
    }

    /// `∇_u log p_t^emp(u) = −Σ_t⁻¹(u − Σ_k w_k μ_k)`.
    pub fn score_full(&self, u: &LiftedState) -> Vec<f64> {
        let h = self.block_dim();
        let z = self.whitened(u);
        let logits: Vec<f64> = z
            .iter()
            .map(|zk| -0.5 * zk.iter().map(|v| v * v).sum::<f64>())
            .collect();
        let w = softmax(&logits);
        let mut mean_z = vec![0.0; u.as_slice().len()];
        for (wk, zk) in w.iter().zip(&z) {
            if *wk == 0.0 {
                continue;
            }
            for (m, v) in mean_z.iter_mut().zip(zk) {
                *m += wk * v;
            }
        }
        self.chol.solve_upper(&mean_z, h).into_iter().map(|v| -v).collect()
    }

    /// The final `h` coordinates of [`Self::score_full`], i.e. the score
    /// with respect to the highest auxiliary variable.
    pub fn score_last_block(&self, u: &LiftedState) -> Vec<f64> {
        let h = self.block_dim();
        let full = self.score_full(u);
        full[full.len() - h..].to_vec()
    }
}

/// Builds the time-`t` mixture of `dataset` under `params`.
pub fn mixture_at(
    dataset: &Dataset,
    params: &HoldParams,
    sigma0: &BlockCovariance,
    policy: AuxPolicy,
    t: f64,
) -> Result<EmpiricalMixture> {
    let dynamics = Dynamics::new(params.clone())?;
    let initial = dataset.lift(params, policy);
    mixture_from(&dynamics, &initial, sigma0, t)
}

fn mixture_from(
    dynamics: &Dynamics,
    initial: &[LiftedState],
    sigma0: &BlockCovariance,
    t: f64,
) -> Result<EmpiricalMixture> {
    if initial.is_empty() {
        return Err(HoldError::EmptyDataset);
    }
    let e = dynamics.exp_at(t);
    let centers = initial.iter().map(|u0| e.apply(u0)).collect();
    let cov = dynamics.covariance_at(sigma0, t)?;
    EmpiricalMixture::new(centers, cov)
}

pub fn responsibilities(mix: &EmpiricalMixture, u: &LiftedState) -> Vec<f64> {
    mix.responsibilities(u)
}

pub fn score_full(mix: &EmpiricalMixture, u: &LiftedState) -> Vec<f64> {
    mix.score_full(u)
}

pub fn score_last_block(mix: &EmpiricalMixture, u: &LiftedState) -> Vec<f64> {
    mix.score_last_block(u)
}

/// A score callback for the last block, `s_θ(u, t) ∈ ℝ^h`.
pub trait ScoreModel {
    fn last_block_score(&self, u: &LiftedState, t: f64) -> Result<Vec<f64>>;
}

impl<F> ScoreModel for F
where
    F: Fn(&LiftedState, f64) -> Vec<f64>,
{
    fn last_block_score(&self, u: &LiftedState, t: f64) -> Result<Vec<f64>> {
        Ok(self(u, t))
    }
}

/// The closed-form optimal score of a training set, evaluable at any time.
#[derive(Debug, Clone)]
pub struct EmpiricalScore {
    dynamics: Dynamics,
    sigma0: BlockCovariance,
    initial: Vec<LiftedState>,
}

impl EmpiricalScore {
    pub fn new(dataset: &Dataset, params: &HoldParams, policy: AuxPolicy) -> Result<Self> {
        let dynamics = Dynamics::new(params.clone())?;
        Ok(Self {
            sigma0: initial_covariance(params, policy),
            initial: dataset.lift(params, policy),
            dynamics,
        })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn sigma0(&self) -> &BlockCovariance {
        &self.sigma0
    }

    /// Lifted training points `u₀⁽ᵏ⁾`.
    pub fn initial_states(&self) -> &[LiftedState] {
        &self.initial
    }

    pub fn mixture_at(&self, t: f64) -> Result<EmpiricalMixture> {
        mixture_from(&self.dynamics, &self.initial, &self.sigma0, t)
    }
}

impl ScoreModel for EmpiricalScore {
    fn last_block_score(&self, u: &LiftedState, t: f64) -> Result<Vec<f64>> {
        Ok(self.mixture_at(t)?.score_last_block(u))
    }
}

/// First-order empirical score `−(x − e^{−ξt} x̄_w)/σ_t²`, written directly
/// from the scalar closed form.
pub fn ou_score(x: &[f64], dataset: &Dataset, xi: f64, l_inv: f64, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(HoldError::Domain { op: "ou_score", t });
    }
    if x.len() != dataset.dim() {
        return Err(HoldError::DimensionMismatch {
            expected: dataset.dim(),
            got: x.len(),
        });
    }
    let decay = (-xi * t).exp();
    let var = -l_inv * (-2.0 * xi * t).exp_m1();
    let logits: Vec<f64> = dataset
        .points()
        .iter()
        .map(|p| {
            let d2: f64 = x.iter().zip(p).map(|(a, b)| (a - decay * b).powi(2)).sum();
            -0.5 * d2 / var
        })
        .collect();
    let w = softmax(&logits);
    let mut mean = vec![0.0; x.len()];
    for (wk, p) in w.iter().zip(dataset.points()) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += wk * v;
        }
    }
    Ok(x.iter().zip(&mean).map(|(a, m)| -(a - decay * m) / var).collect())
}

/// `L_t[n, n]`, the bottom-right entry of the block Cholesky factor.
pub fn loss_weight(params: &HoldParams, sigma0: &BlockCovariance, t: f64) -> Result<f64> {
    let cov = Dynamics::new(params.clone())?.covariance_at(sigma0, t)?;
    Ok(cholesky_block(&cov, None)?.last_diagonal())
}

/// Settings for a Monte Carlo estimate of the denoising loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl LossConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            t_min: crate::T_EPS,
            t_max: 1.0,
            seed,
        }
    }
}

/// Monte Carlo estimate of `E‖ε_n + s(u_t, t) L_t[n,n]‖²` with
/// `t ~ U(t_min, t_max)`, `u₀` uniform over `initial` and
/// `u_t = e^{Ft}u₀ + (L_t ⊗ I)ε`. Sample `i` draws from its own stream, so
/// the estimate is reproducible and independent of thread count.
pub fn mc_loss<S>(
    score: &S,
    dynamics: &Dynamics,
    initial: &[LiftedState],
    sigma0: &BlockCovariance,
    config: LossConfig,
) -> Result<f64>
where
    S: ScoreModel + Sync + ?Sized,
{
    if initial.is_empty() {
        return Err(HoldError::EmptyDataset);
    }
    if config.samples == 0 {
        return Err(HoldError::InvalidParameter {
            name: "samples",
            value: 0.0,
            reason: "at least one Monte Carlo sample is required",
        });
    }
    let n = dynamics.order();
    let h = initial[0].block_dim();
    let terms: Result<Vec<f64>> = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(config.seed, &[stream::LOSS, i as u64]);
            let t = rng.random_range(config.t_min..config.t_max);
            let k = rng.random_range(0..initial.len());
            let eps: Vec<f64> = (0..n * h).map(|_| rng.sample(StandardNormal)).collect();
            let cov = dynamics.covariance_at(sigma0, t)?;
            let chol = cholesky_block(&cov, None)?;
            let mut u = dynamics.mean_at(&initial[k], t);
            for (a, b) in u.as_mut_slice().iter_mut().zip(chol.mul(&eps, h)) {
                *a += b;
            }
            let s = score.last_block_score(&u, t)?;
            let weight = chol.last_diagonal();
            Ok(eps[(n - 1) * h..]
                .iter()
                .zip(&s)
                .map(|(e, sv)| (e + sv * weight).powi(2))
                .sum())
        })
        .collect();
    let terms = terms?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}
