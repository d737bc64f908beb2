//! Linear dynamics of higher-order Langevin diffusions.
//!
//! A model of order `n` augments a data point `x ∈ ℝ^h` with `n − 1`
//! auxiliary blocks. All linear maps act blockwise: an `n × n` matrix `A`
//! stands for `A ⊗ I_h`, so nothing here ever materialises an `nh × nh`
//! matrix.
//!
//! With critically damped couplings the forward matrix has a single
//! repeated eigenvalue `s* = −√(2n − 3)`, `F − s*I` is nilpotent and
//! `exp(Ft)` is a polynomial of degree `n − 1` in `t` times `exp(s* t)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{HoldError, Result};

/// Hard cap on the model order; the dense block algebra is sized for it.
pub const MAX_ORDER: usize = 16;

/// Parameters of a higher-order Langevin diffusion.
///
/// Order 1 is the Ornstein–Uhlenbeck process `dx = −ξx dt + √(2ξL⁻¹) dw`;
/// it has no couplings and is only built through [`HoldParams::ornstein_uhlenbeck`].
#[derive(Debug, Clone, PartialEq)]
pub struct HoldParams {
    order: usize,
    gammas: Vec<f64>,
    xi: f64,
    l_inv: f64,
    alpha: f64,
    gamma_bar: f64,
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(HoldError::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

impl HoldParams {
    /// Arbitrary (not necessarily critically damped) parameters of order
    /// `gammas.len() + 1 ≥ 2`.
    pub fn new(gammas: Vec<f64>, xi: f64, l_inv: f64, alpha: f64) -> Result<Self> {
        let order = gammas.len() + 1;
        if order < 2 {
            return Err(HoldError::InvalidOrder {
                order,
                reason: "at least one coupling constant is required",
            });
        }
        if order > MAX_ORDER {
            return Err(HoldError::InvalidOrder {
                order,
                reason: "exceeds the supported maximum of 16",
            });
        }
        for &g in &gammas {
            check_positive("gamma", g)?;
        }
        check_positive("xi", xi)?;
        check_positive("l_inv", l_inv)?;
        check_positive("alpha", alpha)?;
        let gamma_bar = gammas.iter().product();
        Ok(Self {
            order,
            gammas,
            xi,
            l_inv,
            alpha,
            gamma_bar,
        })
    }

    /// The first-order baseline with friction `xi`.
    pub fn ornstein_uhlenbeck(xi: f64, l_inv: f64) -> Result<Self> {
        check_positive("xi", xi)?;
        check_positive("l_inv", l_inv)?;
        Ok(Self {
            order: 1,
            gammas: Vec::new(),
            xi,
            l_inv,
            alpha: 1.0,
            gamma_bar: 1.0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Couplings `γ₁ … γ_{n−1}`.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn l_inv(&self) -> f64 {
        self.l_inv
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Product of all couplings (1 for the OU process).
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    /// Same dynamics with a different auxiliary variance scale.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    /// Same couplings with a different friction (used to probe
    /// off-critical behaviour).
    pub fn with_xi(mut self, xi: f64) -> Result<Self> {
        check_positive("xi", xi)?;
        self.xi = xi;
        Ok(self)
    }
}

/// Critically damped parameters of order `n ≥ 2`:
/// `γ_{n−i} = √(2n−3) √((n² − i²)/(4i² − 1))`, `ξ = n√(2n−3)`, with the
/// normalisation `γ₁ = 1`.
pub fn critically_damped_params(n: usize, l_inv: f64, alpha: f64) -> Result<HoldParams> {
    if n < 2 {
        return Err(HoldError::InvalidOrder {
            order: n,
            reason: "critical damping needs n >= 2; use the OU process for n = 1",
        });
    }
    let root = ((2 * n - 3) as f64).sqrt();
    let nf = n as f64;
    let mut gammas = vec![0.0; n - 1];
    for i in 1..n {
        let fi = i as f64;
        gammas[n - 1 - i] = root * ((nf * nf - fi * fi) / (4.0 * fi * fi - 1.0)).sqrt();
    }
    // The formula gives √(2n−3)·√(1/(2n−3)) for γ₁; pin the scaling exactly.
    gammas[0] = 1.0;
    HoldParams::new(gammas, nf * root, l_inv, alpha)
}

/// An `n × n` matrix standing for `A ⊗ I_h` on lifted states.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    entries: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn new(entries: DMatrix<f64>) -> Self {
        assert!(entries.is_square(), "block matrices are square");
        Self { entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DMatrix::zeros(n, n))
    }

    pub fn order(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.entries.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// `(A ⊗ I_h) u`.
    pub fn apply(&self, u: &LiftedState) -> LiftedState {
        assert_eq!(self.order(), u.order(), "order mismatch");
        let h = u.block_dim();
        let n = self.order();
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            let dst = &mut out[i * h..(i + 1) * h];
            for j in 0..n {
                let a = self.entries[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(u.block(j)) {
                    *d += a * s;
                }
            }
        }
        LiftedState::from_vec(n, h, out)
    }
}

impl std::ops::Mul<&BlockMatrix> for &BlockMatrix {
    type Output = BlockMatrix;

    fn mul(self, rhs: &BlockMatrix) -> BlockMatrix {
        BlockMatrix::new(&self.entries * &rhs.entries)
    }
}

/// A point `u = vec(x, v⁽¹⁾, …, v⁽ⁿ⁻¹⁾) ∈ ℝ^{nh}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    order: usize,
    block_dim: usize,
    data: Vec<f64>,
}

impl LiftedState {
    pub fn from_vec(order: usize, block_dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), order * block_dim, "state length must be n*h");
        Self {
            order,
            block_dim,
            data,
        }
    }

    pub fn zeros(order: usize, block_dim: usize) -> Self {
        Self::from_vec(order, block_dim, vec![0.0; order * block_dim])
    }

    /// Position `x` followed by the auxiliary blocks.
    pub fn from_blocks(position: &[f64], auxiliaries: &[Vec<f64>]) -> Self {
        let h = position.len();
        let mut data = position.to_vec();
        for aux in auxiliaries {
            assert_eq!(aux.len(), h, "auxiliary block dimension mismatch");
            data.extend_from_slice(aux);
        }
        Self::from_vec(auxiliaries.len() + 1, h, data)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.block_dim..(i + 1) * self.block_dim]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let h = self.block_dim;
        &mut self.data[i * h..(i + 1) * h]
    }

    pub fn position(&self) -> &[f64] {
        self.block(0)
    }

    /// The block of the highest auxiliary variable (the position for n = 1).
    pub fn last_block(&self) -> &[f64] {
        self.block(self.order - 1)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &LiftedState) -> LiftedState {
        assert_eq!(self.data.len(), other.data.len());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        LiftedState::from_vec(self.order, self.block_dim, data)
    }
}

/// `F = Σ γᵢ (E_{i,i+1} − E_{i+1,i}) − ξ E_{n,n}`.
pub fn build_forward_matrix(params: &HoldParams) -> BlockMatrix {
    let n = params.order();
    let mut f = DMatrix::zeros(n, n);
    for (i, &g) in params.gammas().iter().enumerate() {
        f[(i, i + 1)] = g;
        f[(i + 1, i)] = -g;
    }
    f[(n - 1, n - 1)] = -params.xi();
    BlockMatrix::new(f)
}

/// The repeated eigenvalue of a critically damped forward matrix, taken as
/// `trace(F)/n` so that its sign is never in doubt.
pub fn damped_eigenvalue(f: &BlockMatrix) -> f64 {
    f.trace() / f.order() as f64
}

/// Closed-form `t ↦ exp(Ft)` for a forward matrix whose shift `F − s*I` is
/// nilpotent. Keeps the scaled powers `(F − s*I)^k / k!` for `k < n`.
#[derive(Debug, Clone)]
pub struct CriticalExp {
    s_star: f64,
    // (F − s*I)^k / k!
    terms: Vec<DMatrix<f64>>,
}

impl CriticalExp {
    pub fn new(f: &BlockMatrix) -> Result<Self> {
        let n = f.order();
        let s_star = damped_eigenvalue(f);
        let shift = f.entries() - DMatrix::identity(n, n) * s_star;
        let mut terms = Vec::with_capacity(n);
        let mut power = DMatrix::identity(n, n);
        for k in 0..n {
            terms.push(power.clone() / factorial(k));
            power = &power * &shift;
        }
        // `power` now holds (F − s*I)^n.
        let residual = power.norm();
        let bound = 1e-8 * f.frobenius_norm().powi(n as i32).max(1.0);
        if residual > bound {
            return Err(HoldError::NotCriticallyDamped { residual, bound });
        }
        Ok(Self { s_star, terms })
    }

    pub fn s_star(&self) -> f64 {
        self.s_star
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    /// Scaled shift powers `(F − s*I)^k / k!`, `k = 0 … n−1`.
    pub fn terms(&self) -> &[DMatrix<f64>] {
        &self.terms
    }

    pub fn at(&self, t: f64) -> BlockMatrix {
        let n = self.order();
        let mut acc = DMatrix::zeros(n, n);
        let mut tk = 1.0;
        for term in &self.terms {
            acc += term * tk;
            tk *= t;
        }
        BlockMatrix::new(acc * (self.s_star * t).exp())
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `exp(Ft)` by the finite Taylor series around the repeated eigenvalue.
pub fn matrix_exponential(f: &BlockMatrix, t: f64) -> Result<BlockMatrix> {
    Ok(CriticalExp::new(f)?.at(t))
}

/// `det(sI − F)`, the monic characteristic polynomial.
pub fn char_poly_eval(f: &BlockMatrix, s: Complex64) -> Complex64 {
    let n = f.order();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(f.get(i, j), 0.0)
    });
    m.determinant()
}
