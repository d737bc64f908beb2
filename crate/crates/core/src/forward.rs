//! Forward (noising) process: covariance propagation, block Cholesky
//! factors, forward sampling and auxiliary-variable initialisation.
//!
//! The conditional covariance is `Σ_t = L⁻¹I + e^{Ft}(Σ₀ − L⁻¹I)e^{Ftᵀ}`,
//! evaluated here as `e^{Ft} Σ₀ e^{Ftᵀ} + L⁻¹ K(t)` with
//! `K(t) = I − e^{Ft}e^{Ftᵀ}`. Because `F + Fᵀ = −2ξE_{nn}`,
//! `K(t) = 2ξ ∫₀ᵗ c(s) c(s)ᵀ ds` where `c(s)` is the last column of
//! `e^{Fs}`; integrating that polynomial-times-exponential term by term
//! keeps every entry of `K` accurate to relative precision even where
//! `1 − (e^{Ft}e^{Ftᵀ})ᵢⱼ` would cancel to nothing (entries scale like
//! `t^{2n−i−j+1}` near zero).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HoldError, Result};
use crate::hold::{build_forward_matrix, factorial, BlockMatrix, CriticalExp, HoldParams, LiftedState};
use crate::rng::{derived_rng, stream};

/// Block-scale covariance: the full covariance is `small ⊗ I_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    small: DMatrix<f64>,
    t: f64,
}

impl BlockCovariance {
    pub fn new(small: DMatrix<f64>, t: f64) -> Self {
        assert!(small.is_square());
        Self { small, t }
    }

    pub fn order(&self) -> usize {
        self.small.nrows()
    }

    pub fn small(&self) -> &DMatrix<f64> {
        &self.small
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.small[(i, j)]
    }

    pub fn is_zero(&self) -> bool {
        self.small.iter().all(|&v| v == 0.0)
    }
}

/// How auxiliary variables of training points are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxPolicy {
    /// Each training point receives one auxiliary draw, keyed by
    /// `(seed, index)`; the initial law is then a Dirac mixture.
    FixedPerSample(u64),
    /// Auxiliaries are integrated out: mixture centers carry zeros and the
    /// prior variance `αL⁻¹` lives in `Σ₀`.
    Marginalized,
}

/// `Σ₀` at block scale for the given policy.
pub fn initial_covariance(params: &HoldParams, policy: AuxPolicy) -> BlockCovariance {
    let n = params.order();
    let mut small = DMatrix::zeros(n, n);
    if policy == AuxPolicy::Marginalized {
        let v = params.alpha() * params.l_inv();
        for i in 1..n {
            small[(i, i)] = v;
        }
    }
    BlockCovariance::new(small, 0.0)
}

/// `K(t) = I − e^{Ft}e^{Ftᵀ}` in integrated form.
#[derive(Debug, Clone)]
struct NoiseGram {
    beta: f64,
    two_xi: f64,
    // coeffs[i][j][m]: coefficient of s^m in c_i(s) c_j(s) e^{-βs}
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl NoiseGram {
    fn new(exp: &CriticalExp, xi: f64) -> Self {
        let n = exp.order();
        let last = n - 1;
        let col: Vec<Vec<f64>> = (0..n)
            .map(|i| exp.terms().iter().map(|term| term[(i, last)]).collect())
            .collect();
        let degree = 2 * n - 1;
        let mut coeffs = vec![vec![vec![0.0; degree]; n]; n];
        for i in 0..n {
            for j in 0..n {
                for (k, a) in col[i].iter().enumerate() {
                    for (l, b) in col[j].iter().enumerate() {
                        coeffs[i][j][k + l] += a * b;
                    }
                }
            }
        }
        Self {
            beta: -2.0 * exp.s_star(),
            two_xi: 2.0 * xi,
            coeffs,
        }
    }

    fn at(&self, t: f64) -> DMatrix<f64> {
        let n = self.coeffs.len();
        let moments: Vec<f64> = (0..2 * n - 1).map(|m| exp_moment(m, self.beta, t)).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let s: f64 = self.coeffs[i][j].iter().zip(&moments).map(|(c, mu)| c * mu).sum();
            self.two_xi * s
        })
    }
}

/// `∫₀ᵗ s^m e^{−βs} ds` for `β > 0`, without cancellation at small `βt`.
fn exp_moment(m: usize, beta: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let x = beta * t;
    if x <= 40.0 {
        // e^{-x} t^{m+1} Σ_j x^j m!/(m+1+j)!
        let mut term = 1.0 / (m as f64 + 1.0);
        let mut sum = term;
        let mut j = 0usize;
        loop {
            term *= x / (m as f64 + 2.0 + j as f64);
            sum += term;
            j += 1;
            if term <= 1e-17 * sum || j > 400 {
                break;
            }
        }
        (-x).exp() * t.powi(m as i32 + 1) * sum
    } else {
        let mut partial = 0.0;
        let mut term = 1.0;
        for k in 0..=m {
            if k > 0 {
                term *= x / k as f64;
            }
            partial += term;
        }
        factorial(m) / beta.powi(m as i32 + 1) * (1.0 - (-x).exp() * partial)
    }
}

/// A diffusion together with its cached closed forms.
#[derive(Debug, Clone)]
pub struct Dynamics {
    params: HoldParams,
    forward: BlockMatrix,
    exp: CriticalExp,
    gram: NoiseGram,
}

impl Dynamics {
    /// Fails if the forward matrix is not critically damped.
    pub fn new(params: HoldParams) -> Result<Self> {
        let forward = build_forward_matrix(&params);
        let exp = CriticalExp::new(&forward)?;
        let gram = NoiseGram::new(&exp, params.xi());
        Ok(Self {
            params,
            forward,
            exp,
            gram,
        })
    }

    pub fn params(&self) -> &HoldParams {
        &self.params
    }

    pub fn order(&self) -> usize {
        self.params.order()
    }

    pub fn forward_matrix(&self) -> &BlockMatrix {
        &self.forward
    }

    pub fn s_star(&self) -> f64 {
        self.exp.s_star()
    }

    /// `e^{Ft}`.
    pub fn exp_at(&self, t: f64) -> BlockMatrix {
        self.exp.at(t)
    }

    /// `I − e^{Ft}e^{Ftᵀ}`, accurate entrywise for small `t`.
    pub fn noise_gram(&self, t: f64) -> DMatrix<f64> {
        self.gram.at(t)
    }

    /// `GGᵀ` at block scale: `2ξL⁻¹ E_{nn}`.
    pub fn diffusion_gram(&self) -> DMatrix<f64> {
        let n = self.order();
        let mut g = DMatrix::zeros(n, n);
        g[(n - 1, n - 1)] = 2.0 * self.params.xi() * self.params.l_inv();
        g
    }

    pub fn covariance_at(&self, sigma0: &BlockCovariance, t: f64) -> Result<BlockCovariance> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(HoldError::Domain { op: "covariance_at", t });
        }
        if sigma0.order() != self.order() {
            return Err(HoldError::DimensionMismatch {
                expected: self.order(),
                got: sigma0.order(),
            });
        }
        if t == 0.0 {
            return Ok(BlockCovariance::new(sigma0.small().clone(), 0.0));
        }
        let e = self.exp_at(t).into_inner();
        let mut small = &e * sigma0.small() * e.transpose();
        small += self.noise_gram(t) * self.params.l_inv();
        // Symmetrise away rounding in the congruence.
        let small = (&small + small.transpose()) * 0.5;
        Ok(BlockCovariance::new(small, t))
    }

    /// Mean of `u_t` given `u₀`.
    pub fn mean_at(&self, u0: &LiftedState, t: f64) -> LiftedState {
        self.exp_at(t).apply(u0)
    }
}

/// Closed-form covariance propagation for `params`.
pub fn covariance_at(params: &HoldParams, sigma0: &BlockCovariance, t: f64) -> Result<BlockCovariance> {
    Dynamics::new(params.clone())?.covariance_at(sigma0, t)
}

/// Lower-triangular block factor with `L Lᵀ = Σ + δI`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCholesky {
    factor: DMatrix<f64>,
    floor_used: f64,
}

impl BlockCholesky {
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// The diagonal shift `δ` that was needed (0 if none).
    pub fn floor_used(&self) -> f64 {
        self.floor_used
    }

    pub fn order(&self) -> usize {
        self.factor.nrows()
    }

    /// Bottom-right entry of the factor.
    pub fn last_diagonal(&self) -> f64 {
        let n = self.order();
        self.factor[(n - 1, n - 1)]
    }

    /// `(L ⊗ I_h) z`.
    pub fn mul(&self, z: &[f64], h: usize) -> Vec<f64> {
        let n = self.order();
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            for j in 0..=i {
                let l = self.factor[(i, j)];
                for c in 0..h {
                    out[i * h + c] += l * z[j * h + c];
                }
            }
        }
        out
    }

    /// Solves `(L ⊗ I_h) z = b` blockwise.
    pub fn solve_lower(&self, b: &[f64], h: usize) -> Vec<f64> {
        let n = self.order();
        let mut z = b.to_vec();
        for i in 0..n {
            for j in 0..i {
                let l = self.factor[(i, j)];
                for c in 0..h {
                    z[i * h + c] -= l * z[j * h + c];
                }
            }
            let d = self.factor[(i, i)];
            for c in 0..h {
                z[i * h + c] /= d;
            }
        }
        z
    }

    /// Solves `(Lᵀ ⊗ I_h) y = z` blockwise.
    pub fn solve_upper(&self, z: &[f64], h: usize) -> Vec<f64> {
        let n = self.order();
        let mut y = z.to_vec();
        for i in (0..n).rev() {
            for j in i + 1..n {
                let l = self.factor[(j, i)];
                for c in 0..h {
                    y[i * h + c] -= l * y[j * h + c];
                }
            }
            let d = self.factor[(i, i)];
            for c in 0..h {
                y[i * h + c] /= d;
            }
        }
        y
    }

    /// `(Σ ⊗ I_h)⁻¹ b` by two triangular solves.
    pub fn solve(&self, b: &[f64], h: usize) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b, h), h)
    }

    /// `log det Σ` at block scale (no `h` exponent).
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Default diagonal floor: `1e−12 · max diag(Σ)`, or `1e−12` for a zero matrix.
pub fn default_floor(sigma: &BlockCovariance) -> f64 {
    let max_diag = sigma.small().diagonal().iter().cloned().fold(0.0, f64::max);
    if max_diag > 0.0 {
        1e-12 * max_diag
    } else {
        1e-12
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::linalg::Cholesky::new(m.clone())?;
    let l = chol.unpack();
    l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0).then_some(l)
}

/// Cholesky factor of `Σ`, retrying once with `Σ + floor·I` if needed.
pub fn cholesky_block(sigma: &BlockCovariance, floor: Option<f64>) -> Result<BlockCholesky> {
    if let Some(factor) = try_cholesky(sigma.small()) {
        return Ok(BlockCholesky {
            factor,
            floor_used: 0.0,
        });
    }
    let floor = floor.unwrap_or_else(|| default_floor(sigma));
    let n = sigma.order();
    let shifted = sigma.small() + DMatrix::identity(n, n) * floor;
    try_cholesky(&shifted)
        .map(|factor| BlockCholesky {
            factor,
            floor_used: floor,
        })
        .ok_or(HoldError::NotPositiveDefinite { floor })
}

fn standard_normals<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

impl Dynamics {
    /// `u_t = e^{Ft}u₀ + (L_t ⊗ I_h) ε` with `ε` from `rng`.
    pub fn sample_forward_with<R: Rng>(
        &self,
        u0: &LiftedState,
        sigma0: &BlockCovariance,
        t: f64,
        rng: &mut R,
    ) -> Result<LiftedState> {
        let cov = self.covariance_at(sigma0, t)?;
        let mut u = self.mean_at(u0, t);
        if cov.is_zero() {
            return Ok(u);
        }
        let chol = cholesky_block(&cov, None)?;
        let h = u0.block_dim();
        let eps = standard_normals(rng, self.order() * h);
        let noise = chol.mul(&eps, h);
        for (a, b) in u.as_mut_slice().iter_mut().zip(noise) {
            *a += b;
        }
        Ok(u)
    }
}

/// One forward draw, deterministic in `seed`.
pub fn sample_forward(
    u0: &LiftedState,
    params: &HoldParams,
    sigma0: &BlockCovariance,
    t: f64,
    seed: u64,
) -> Result<LiftedState> {
    let dynamics = Dynamics::new(params.clone())?;
    let mut rng = derived_rng(seed, &[stream::FORWARD]);
    dynamics.sample_forward_with(u0, sigma0, t, &mut rng)
}

/// Lifts a data point to `u₀ = vec(x₀, v₀⁽¹⁾, …)`. Under
/// [`AuxPolicy::FixedPerSample`] the auxiliaries of sample `index` are
/// always the same draw from `N(0, αL⁻¹I)`.
pub fn lift_data(x0: &[f64], params: &HoldParams, policy: AuxPolicy, index: u64) -> LiftedState {
    let n = params.order();
    let h = x0.len();
    let mut u = LiftedState::zeros(n, h);
    u.block_mut(0).copy_from_slice(x0);
    if let AuxPolicy::FixedPerSample(seed) = policy {
        let mut rng = derived_rng(seed, &[stream::AUX, index]);
        let scale = (params.alpha() * params.l_inv()).sqrt();
        for i in 1..n {
            for v in u.block_mut(i) {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        }
    }
    u
}
