//! The score enters a HOLD process only through its last block, so the
//! position block is a linear filter of the score. This module exposes that
//! filter in time and frequency and checks the convolution representation
//! against direct integration.

use num_complex::Complex64;

use crate::error::{HoldError, Result};
use crate::forward::Dynamics;
use crate::hold::{build_forward_matrix, char_poly_eval, factorial, BlockMatrix, HoldParams, LiftedState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    /// Repeated pole of multiplicity `order` at `s_star`.
    Hold {
        order: usize,
        gamma_bar: f64,
        xi: f64,
        s_star: f64,
    },
    /// Single pole at `−ξ`.
    Ou { xi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub l_inv: f64,
}

impl FilterSpec {
    /// Filter of a critically damped process; order 1 gives the OU filter.
    pub fn from_params(params: &HoldParams) -> Result<Self> {
        if params.order() == 1 {
            return Ok(Self::ou(params.xi(), params.l_inv()));
        }
        let dynamics = Dynamics::new(params.clone())?;
        Ok(Self {
            kind: FilterKind::Hold {
                order: params.order(),
                gamma_bar: params.gamma_bar(),
                xi: params.xi(),
                s_star: dynamics.s_star(),
            },
            l_inv: params.l_inv(),
        })
    }

    pub fn ou(xi: f64, l_inv: f64) -> Self {
        Self {
            kind: FilterKind::Ou { xi },
            l_inv,
        }
    }

    pub fn order(&self) -> usize {
        match self.kind {
            FilterKind::Hold { order, .. } => order,
            FilterKind::Ou { .. } => 1,
        }
    }

    fn gain_and_pole(&self) -> (f64, f64, usize) {
        match self.kind {
            FilterKind::Hold {
                order,
                gamma_bar,
                xi,
                s_star,
            } => (gamma_bar * xi * self.l_inv, s_star, order),
            FilterKind::Ou { xi } => (xi * self.l_inv, -xi, 1),
        }
    }
}

/// `h(t) = −γ̄ξL⁻¹ tⁿ⁻¹ e^{s*t} / (n−1)!`, zero for `t < 0`.
pub fn impulse_response(spec: &FilterSpec, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let (gain, pole, n) = spec.gain_and_pole();
    -gain * t.powi(n as i32 - 1) * (pole * t).exp() / factorial(n - 1)
}

/// `H(s) = −γ̄ξL⁻¹ / (s − s*)ⁿ`.
pub fn transfer_function(spec: &FilterSpec, s: Complex64) -> Result<Complex64> {
    let (gain, pole, n) = spec.gain_and_pole();
    let d = s - pole;
    if d.norm() == 0.0 {
        return Err(HoldError::Pole { re: s.re, im: s.im });
    }
    Ok(-gain / d.powi(n as i32))
}

/// `|H(iω)| = γ̄ξL⁻¹ / (ω² + s*²)^{n/2}`.
pub fn frequency_magnitude(spec: &FilterSpec, omega: f64) -> f64 {
    let (gain, pole, n) = spec.gain_and_pole();
    gain / (omega * omega + pole * pole).powf(n as f64 / 2.0)
}

/// Transfer function from last-block forcing to position for arbitrary
/// (not necessarily critically damped) parameters: `−γ̄ξL⁻¹ / det(sI − F)`.
pub fn general_transfer_function(params: &HoldParams, s: Complex64) -> Result<Complex64> {
    let f = build_forward_matrix(params);
    let det = char_poly_eval(&f, s);
    if det.norm() == 0.0 {
        return Err(HoldError::Pole { re: s.re, im: s.im });
    }
    Ok(-params.gamma_bar() * params.xi() * params.l_inv() / det)
}

/// Position block of `e^{Ft} u0`.
pub fn natural_response(params: &HoldParams, u0: &LiftedState, t: f64) -> Result<Vec<f64>> {
    let dynamics = Dynamics::new(params.clone())?;
    Ok(dynamics.mean_at(u0, t).position().to_vec())
}

fn check_uniform(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(HoldError::InvalidGrid("need at least two grid points".into()));
    }
    if grid[0] != 0.0 {
        return Err(HoldError::InvalidGrid(format!("grid must start at 0, got {}", grid[0])));
    }
    let dt = grid[1] - grid[0];
    if !(dt > 0.0) {
        return Err(HoldError::InvalidGrid("grid must increase".into()));
    }
    for (k, &t) in grid.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(HoldError::InvalidGrid(format!("grid is not uniform at index {k}")));
        }
    }
    Ok(dt)
}

/// Position trajectory `x(t) = natural(t) + (h ∗ s)(t)` on a uniform grid
/// starting at 0, with the convolution evaluated by the trapezoidal rule.
pub fn convolution_reconstruct<S>(
    params: &HoldParams,
    u0: &LiftedState,
    forcing: S,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>>
where
    S: Fn(f64) -> Vec<f64>,
{
    let dt = check_uniform(grid)?;
    let spec = FilterSpec::from_params(params)?;
    let dynamics = Dynamics::new(params.clone())?;
    let h_dim = u0.block_dim();
    let kernel: Vec<f64> = (0..grid.len())
        .map(|k| impulse_response(&spec, k as f64 * dt))
        .collect();
    let samples: Vec<Vec<f64>> = grid.iter().map(|&t| forcing(t)).collect();
    if let Some(bad) = samples.iter().find(|s| s.len() != h_dim) {
        return Err(HoldError::DimensionMismatch {
            expected: h_dim,
            got: bad.len(),
        });
    }
    let mut out = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let mut x = dynamics.mean_at(u0, t).position().to_vec();
        if i > 0 {
            for (j, s) in samples.iter().enumerate().take(i + 1) {
                let w = if j == 0 || j == i { 0.5 } else { 1.0 };
                let c = w * dt * kernel[i - j];
                for (xv, sv) in x.iter_mut().zip(s) {
                    *xv += c * sv;
                }
            }
        }
        out.push(x);
    }
    Ok(out)
}

/// Reference trajectory from integrating `du/dt = F u − ξL⁻¹ e_n ⊗ s(t)`
/// with classical RK4. The forced part starts from zero and is added to the
/// exact natural response, so zero forcing reproduces it exactly.
pub fn forced_ode_reference<S>(
    params: &HoldParams,
    u0: &LiftedState,
    forcing: S,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>>
where
    S: Fn(f64) -> Vec<f64>,
{
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HoldError::InvalidGrid("grid must be increasing with at least two points".into()));
    }
    let dynamics = Dynamics::new(params.clone())?;
    let f: BlockMatrix = build_forward_matrix(params);
    let coupling = params.xi() * params.l_inv();
    let (n, h) = (u0.order(), u0.block_dim());
    let rhs = |z: &LiftedState, t: f64| -> Result<LiftedState> {
        let s = forcing(t);
        if s.len() != h {
            return Err(HoldError::DimensionMismatch {
                expected: h,
                got: s.len(),
            });
        }
        let mut d = f.apply(z);
        for (v, sv) in d.block_mut(n - 1).iter_mut().zip(&s) {
            *v -= coupling * sv;
        }
        Ok(d)
    };
    let step = |z: &LiftedState, a: f64, d: &LiftedState| {
        let data = z.as_slice().iter().zip(d.as_slice()).map(|(x, y)| x + a * y).collect();
        LiftedState::from_vec(n, h, data)
    };
    let mut z = LiftedState::zeros(n, h);
    let mut out = Vec::with_capacity(grid.len());
    let combine = |i: usize, z: &LiftedState| -> Vec<f64> {
        let nat = dynamics.mean_at(u0, grid[i]);
        nat.position().iter().zip(z.position()).map(|(a, b)| a + b).collect()
    };
    out.push(combine(0, &z));
    for i in 1..grid.len() {
        let (t, dt) = (grid[i - 1], grid[i] - grid[i - 1]);
        let k1 = rhs(&z, t)?;
        let k2 = rhs(&step(&z, 0.5 * dt, &k1), t + 0.5 * dt)?;
        let k3 = rhs(&step(&z, 0.5 * dt, &k2), t + 0.5 * dt)?;
        let k4 = rhs(&step(&z, dt, &k3), t + dt)?;
        let data = (0..n * h)
            .map(|k| {
                z.as_slice()[k]
                    + dt / 6.0
                        * (k1.as_slice()[k] + 2.0 * k2.as_slice()[k] + 2.0 * k3.as_slice()[k] + k4.as_slice()[k])
            })
            .collect();
        z = LiftedState::from_vec(n, h, data);
        out.push(combine(i, &z));
    }
    Ok(out)
}

/// `‖a − b‖₂ / ‖b‖₂` over all times and coordinates; 0 when both vanish.
pub fn relative_l2_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if num == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Numerical Laplace transform `∫₀^∞ h(t) e^{−st} dt` for real `s > s*`,
/// integrated with composite Simpson up to `horizon`.
pub fn laplace_quadrature(spec: &FilterSpec, s: f64, horizon: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let dt = horizon / m as f64;
    let f = |t: f64| impulse_response(spec, t) * (-s * t).exp();
    let mut acc = f(0.0) + f(horizon);
    for k in 1..m {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * dt);
    }
    acc * dt / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hold::critically_damped_params;

    fn spec(n: usize) -> FilterSpec {
        FilterSpec::from_params(&critically_damped_params(n, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn impulse_response_matches_exponential_entry() {
        for n in 2..=5 {
            let p = critically_damped_params(n, 1.3, 1.0).unwrap();
            let d = Dynamics::new(p.clone()).unwrap();
            let sp = FilterSpec::from_params(&p).unwrap();
            for &t in &[0.1, 0.7, 2.0] {
                let want = -p.xi() * p.l_inv() * d.exp_at(t).get(0, n - 1);
                let got = impulse_response(&sp, t);
                assert!((got - want).abs() < 1e-12 * want.abs().max(1e-12), "n={n} t={t}");
            }
        }
        assert_eq!(impulse_response(&spec(3), -0.5), 0.0);
    }

    #[test]
    fn transfer_function_pole_and_dc() {
        let sp = spec(2);
        let (_, pole, _) = sp.gain_and_pole();
        assert!(matches!(
            transfer_function(&sp, Complex64::new(pole, 0.0)),
            Err(HoldError::Pole { .. })
        ));
        let h0 = transfer_function(&sp, Complex64::new(0.0, 0.0)).unwrap();
        assert!((h0.norm() - frequency_magnitude(&sp, 0.0)).abs() < 1e-14);
    }

    #[test]
    fn magnitude_equals_modulus_on_imaginary_axis() {
        for n in 2..=4 {
            let sp = spec(n);
            for &w in &[0.01, 1.0, 37.0] {
                let h = transfer_function(&sp, Complex64::new(0.0, w)).unwrap();
                assert!((h.norm() - frequency_magnitude(&sp, w)).abs() < 1e-12 * h.norm());
            }
        }
        let ou = FilterSpec::ou(2.0, 0.5);
        let h = transfer_function(&ou, Complex64::new(0.0, 3.0)).unwrap();
        assert!((h.norm() - 1.0 / 13f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn general_transfer_agrees_at_critical_damping() {
        let p = critically_damped_params(3, 1.0, 1.0).unwrap();
        let sp = FilterSpec::from_params(&p).unwrap();
        let s = Complex64::new(0.3, 1.7);
        let a = general_transfer_function(&p, s).unwrap();
        let b = transfer_function(&sp, s).unwrap();
        assert!((a - b).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn laplace_quadrature_recovers_transfer_function() {
        for n in 2..=4 {
            let sp = spec(n);
            for &s in &[0.0, 0.5, 2.0] {
                let num = laplace_quadrature(&sp, s, 40.0, 20_000);
                let exact = transfer_function(&sp, Complex64::new(s, 0.0)).unwrap().re;
                assert!((num - exact).abs() < 1e-8 * exact.abs(), "n={n} s={s}");
            }
        }
    }

    #[test]
    fn grids_are_checked() {
        let p = critically_damped_params(2, 1.0, 1.0).unwrap();
        let u0 = LiftedState::zeros(2, 1);
        let zero = |_t: f64| vec![0.0];
        assert!(convolution_reconstruct(&p, &u0, zero, &[0.0, 0.1, 0.3]).is_err());
        assert!(convolution_reconstruct(&p, &u0, zero, &[0.1, 0.2, 0.3]).is_err());
        assert!(convolution_reconstruct(&p, &u0, zero, &[0.0]).is_err());
    }

    #[test]
    fn zero_forcing_gives_natural_response_exactly() {
        let p = critically_damped_params(3, 1.0, 1.0).unwrap();
        let u0 = LiftedState::from_vec(3, 1, vec![1.0, -0.5, 0.25]);
        let grid: Vec<f64> = (0..101).map(|k| k as f64 * 0.02).collect();
        let a = convolution_reconstruct(&p, &u0, |_| vec![0.0], &grid).unwrap();
        let b = forced_ode_reference(&p, &u0, |_| vec![0.0], &grid).unwrap();
        assert_eq!(relative_l2_error(&a, &b), 0.0);
        let nat = natural_response(&p, &u0, 2.0).unwrap();
        assert_eq!(a[100], nat);
    }

    #[test]
    fn convolution_matches_ode() {
        let p = critically_damped_params(2, 1.0, 1.0).unwrap();
        let u0 = LiftedState::from_vec(2, 1, vec![0.5, 0.2]);
        let grid: Vec<f64> = (0..2001).map(|k| k as f64 * 0.0025).collect();
        let forcing = |t: f64| vec![(3.0 * t).sin()];
        let a = convolution_reconstruct(&p, &u0, forcing, &grid).unwrap();
        let b = forced_ode_reference(&p, &u0, forcing, &grid).unwrap();
        assert!(relative_l2_error(&a, &b) < 1e-4);
    }
}
