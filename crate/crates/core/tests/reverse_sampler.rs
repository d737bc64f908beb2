mod common;

use common::params;
use holdlab::forward::{AuxPolicy, Dynamics};
use holdlab::hold::{HoldParams, LiftedState};
use holdlab::sampler::{
    ou_pf_ode_generate, ou_reverse_sde_generate, pf_ode_generate, pf_ode_integrate, sample_prior, GenerateOptions,
    Integrator, TimeGrid,
};
use holdlab::score::{Dataset, EmpiricalScore};

fn zero(u: &LiftedState, _t: f64) -> Vec<f64> {
    vec![0.0; u.block_dim()]
}

#[test]
fn prior_moments() {
    let p = params(2);
    let n = 100_000usize;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for seed in 0..n as u64 {
        let u = sample_prior(&p, 1, seed);
        for i in 0..2 {
            sum[i] += u.as_slice()[i];
            sq[i] += u.as_slice()[i].powi(2);
        }
    }
    for i in 0..2 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() <= 0.03);
    }
}

fn homogeneous_error(integrator: Integrator, steps: usize) -> f64 {
    let p = params(3);
    let d = Dynamics::new(p.clone()).unwrap();
    let grid = TimeGrid::uniform(1.0, 1e-3, steps);
    let start = sample_prior(&p, 2, 17);
    let opts = GenerateOptions { integrator, record: false };
    let got = pf_ode_integrate(&p, &zero, start.clone(), &grid, opts).unwrap();
    let want = d.exp_at(grid.t_end - grid.t_start).apply(&start);
    got.endpoint().sub(&want).norm() / want.norm()
}

fn fitted_slope(integrator: Integrator) -> f64 {
    let pts: Vec<(f64, f64)> = [250, 500, 1000, 2000]
        .iter()
        .map(|&s| ((1.0 / s as f64).ln(), homogeneous_error(integrator, s).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    cov / var
}

#[test]
fn integrator_orders() {
    let heun = fitted_slope(Integrator::Heun);
    let euler = fitted_slope(Integrator::Euler);
    assert!((heun - 2.0).abs() <= 0.3, "heun slope {heun}");
    assert!((euler - 1.0).abs() <= 0.3, "euler slope {euler}");
    assert!(homogeneous_error(Integrator::Heun, 1000) <= 1e-5);
}

/// Dense explicit Euler with the same score, used as a reference path.
fn dense_reference(p: &HoldParams, score: &EmpiricalScore, start: LiftedState, steps: usize) -> LiftedState {
    let grid = TimeGrid::uniform(1.0, 1e-3, steps);
    let opts = GenerateOptions { integrator: Integrator::Euler, record: false };
    pf_ode_integrate(p, score, start, &grid, opts).unwrap().endpoint().clone()
}

#[test]
fn singleton_is_memorized() {
    let p = params(2);
    let data = Dataset::new(vec![vec![0.8]]).unwrap();
    let score = EmpiricalScore::new(&data, &p, AuxPolicy::Marginalized).unwrap();
    for seed in 0..4 {
        let start = sample_prior(&p, 1, seed);
        let reference = dense_reference(&p, &score, start.clone(), 100_000);
        assert!((reference.position()[0] - 0.8).abs() <= 1e-2);
        let heun = pf_ode_generate(&p, &score, 1, &TimeGrid::default(), seed, GenerateOptions::default()).unwrap();
        assert!((heun.endpoint().position()[0] - 0.8).abs() <= 1e-2, "seed {seed}");
        assert!((heun.endpoint().position()[0] - reference.position()[0]).abs() <= 1e-2);
    }
}

#[test]
fn generation_is_deterministic() {
    let p = params(3);
    let data = Dataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.5]]).unwrap();
    let score = EmpiricalScore::new(&data, &p, AuxPolicy::FixedPerSample(2)).unwrap();
    let grid = TimeGrid::uniform(1.0, 1e-2, 200);
    let a = pf_ode_generate(&p, &score, 2, &grid, 5, GenerateOptions::default()).unwrap();
    let b = pf_ode_generate(&p, &score, 2, &grid, 5, GenerateOptions::default()).unwrap();
    assert_eq!(a, b);
    let rec = pf_ode_generate(&p, &score, 2, &grid, 5, GenerateOptions { record: true, ..Default::default() }).unwrap();
    assert_eq!(rec.times.len(), rec.states.len());
    assert!(rec.times.windows(2).all(|w| w[1] < w[0]));
    assert!(rec.states.iter().all(|s| s.as_slice().len() == 6));
    assert_eq!(rec.endpoint(), a.endpoint());
}

#[test]
fn reverse_sde_preserves_stationary_law() {
    let prior = |u: &LiftedState, _t: f64| u.as_slice().iter().map(|v| -v).collect::<Vec<_>>();
    let grid = TimeGrid::uniform(1.0, 1e-3, 200);
    let runs = 4000;
    let mut sq = 0.0;
    for seed in 0..runs {
        let x = ou_reverse_sde_generate(1.0, 1.0, &prior, 1, &grid, seed, false).unwrap();
        sq += x.endpoint().as_slice()[0].powi(2);
    }
    let var = sq / runs as f64;
    assert!((var - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn reverse_sde_two_point_clusters() {
    let data = Dataset::new(vec![vec![1.0], vec![-1.0]]).unwrap();
    let ou = HoldParams::ornstein_uhlenbeck(2.0, 1.0).unwrap();
    let score = EmpiricalScore::new(&data, &ou, AuxPolicy::Marginalized).unwrap();
    let grid = TimeGrid::default();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for seed in 0..2048 {
        let x = ou_reverse_sde_generate(2.0, 1.0, &score, 1, &grid, seed, false).unwrap();
        let v = x.endpoint().as_slice()[0];
        if v > 0.0 {
            pos.push(v)
        } else {
            neg.push(v)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(pos.len() > 800 && neg.len() > 800);
    assert!((mean(&pos) - 1.0).abs() <= 0.05);
    assert!((mean(&neg) + 1.0).abs() <= 0.05);
}

#[test]
fn reverse_sde_refinement_on_singleton() {
    let data = Dataset::new(vec![vec![0.5]]).unwrap();
    let ou = HoldParams::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let score = EmpiricalScore::new(&data, &ou, AuxPolicy::Marginalized).unwrap();
    let err = |steps: usize| -> f64 {
        let grid = TimeGrid::uniform(1.0, 1e-3, steps);
        (0..64)
            .map(|seed| {
                let x = ou_reverse_sde_generate(1.0, 1.0, &score, 1, &grid, seed, false).unwrap();
                (x.endpoint().as_slice()[0] - 0.5).abs()
            })
            .sum::<f64>()
            / 64.0
    };
    let errs: Vec<f64> = [1, 10, 100, 1000].iter().map(|&s| err(s)).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn ou_flow_zero_score() {
    let grid = TimeGrid::default();
    for seed in 0..5 {
        let a = ou_pf_ode_generate(1.0, 1.0, &zero, 2, &grid, seed, GenerateOptions::default()).unwrap();
        let b = ou_pf_ode_generate(1.0, 1.0, &zero, 2, &grid, seed, GenerateOptions::default()).unwrap();
        assert_eq!(a, b);
        let start = sample_prior(&HoldParams::ornstein_uhlenbeck(1.0, 1.0).unwrap(), 2, seed);
        let growth = (-(grid.t_end - grid.t_start)).exp();
        for (x, x0) in a.endpoint().as_slice().iter().zip(start.as_slice()) {
            assert!((x - growth * x0).abs() <= 1e-6 * x0.abs().max(1.0));
        }
    }
}
