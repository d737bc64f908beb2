#![allow(dead_code)]

use holdlab::hold::{critically_damped_params, BlockMatrix, HoldParams};
use nalgebra::DMatrix;

pub fn params(n: usize) -> HoldParams {
    if n == 1 {
        HoldParams::ornstein_uhlenbeck(1.0, 1.0).unwrap()
    } else {
        critically_damped_params(n, 1.0, 1.0).unwrap()
    }
}

/// `exp(A)` by scaling and squaring of a power series summed to convergence.
pub fn expm_series(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn expm_ft(f: &BlockMatrix, t: f64) -> DMatrix<f64> {
    expm_series(&(f.entries() * t))
}

/// Stationary-form covariance `L⁻¹I + E(Σ₀ − L⁻¹I)Eᵀ` with `E = exp(Ft)`.
pub fn covariance_oracle(p: &HoldParams, f: &BlockMatrix, sigma0: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = p.order();
    let e = expm_ft(f, t);
    let stat = DMatrix::<f64>::identity(n, n) * p.l_inv();
    &stat + &e * (sigma0 - &stat) * e.transpose()
}

/// Tiny deterministic generator for oracle inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

use holdlab::forward::{initial_covariance, AuxPolicy};
use holdlab::hold::LiftedState;
use holdlab::score::{mixture_at, Dataset, EmpiricalMixture, EmpiricalScore, ScoreModel};

/// Largest deviation between `score_full` and central differences of the
/// log-density over random probes near the mixture.
pub fn gradient_check(n: usize, h: usize, probes: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let p = params(n);
    let data = Dataset::new(
        (0..4)
            .map(|_| (0..h).map(|_| rng.range(-2.0, 2.0)).collect())
            .collect(),
    )
    .unwrap();
    let s0 = initial_covariance(&p, AuxPolicy::Marginalized);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let t = rng.range(0.1, 1.0);
        let mix = mixture_at(&data, &p, &s0, AuxPolicy::Marginalized, t).unwrap();
        let u = LiftedState::from_vec(n, h, (0..n * h).map(|_| rng.range(-1.5, 1.5)).collect());
        worst = worst.max(fd_gradient_error(&mix, &u));
    }
    worst
}

pub fn fd_gradient_error(mix: &EmpiricalMixture, u: &LiftedState) -> f64 {
    let g = mix.score_full(u);
    let e = 1e-4;
    let mut worst: f64 = 0.0;
    let shifted = |i: usize, k: f64| {
        let mut v = u.clone();
        v.as_mut_slice()[i] += k * e;
        mix.log_density(&v)
    };
    for i in 0..u.as_slice().len() {
        // Fourth-order central stencil.
        let fd = (-shifted(i, 2.0) + 8.0 * shifted(i, 1.0) - 8.0 * shifted(i, -1.0) + shifted(i, -2.0)) / (12.0 * e);
        worst = worst.max((fd - g[i]).abs());
    }
    worst
}

/// Training set of well-separated points in `ℝ^h`.
pub fn spread_points(count: usize, h: usize, seed: u64) -> Dataset {
    let mut rng = Lcg(seed);
    Dataset::new(
        (0..count)
            .map(|k| {
                (0..h)
                    .map(|d| if d == 0 { 3.0 * k as f64 } else { rng.range(-0.5, 0.5) })
                    .collect()
            })
            .collect(),
    )
    .unwrap()
}

/// The empirical score plus a bounded state- and time-dependent offset.
pub struct Perturbed<'a> {
    pub base: &'a EmpiricalScore,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl ScoreModel for Perturbed<'_> {
    fn last_block_score(&self, u: &LiftedState, t: f64) -> holdlab::Result<Vec<f64>> {
        let mut s = self.base.last_block_score(u, t)?;
        let x0 = u.as_slice()[0];
        for (i, v) in s.iter_mut().enumerate() {
            *v += self.amp * (self.freq * x0 + self.phase + i as f64 + t).sin();
        }
        Ok(s)
    }
}

pub fn perturbations(base: &EmpiricalScore) -> Vec<Perturbed<'_>> {
    [(0.1, 0.0, 0.0), (0.3, 1.0, 0.5), (0.05, 3.0, 1.0), (0.5, 0.5, 2.0), (0.2, 2.0, -1.0)]
        .into_iter()
        .map(|(amp, freq, phase)| Perturbed { base, amp, freq, phase })
        .collect()
}

/// Adaptive Simpson on `panels` equal subintervals, so narrow features are
/// seen by the initial sampling.
pub fn adaptive_simpson_panels(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| adaptive_simpson(f, a + k as f64 * w, a + (k + 1) as f64 * w, tol / panels as f64))
        .sum()
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Memorized fraction by an exhaustive double loop over sorted distances.
pub fn fmem_oracle(generated: &[Vec<f64>], train: &[Vec<f64>], tau: f64) -> f64 {
    let mut hits = 0usize;
    for g in generated {
        let mut d: Vec<f64> = Vec::new();
        for t in train {
            let mut acc = 0.0;
            for k in 0..g.len() {
                acc += (g[k] - t[k]) * (g[k] - t[k]);
            }
            d.push(acc.sqrt());
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ratio = if d[1] == 0.0 { 1.0 } else { d[0] / d[1] };
        if ratio < tau {
            hits += 1;
        }
    }
    hits as f64 / generated.len() as f64
}
