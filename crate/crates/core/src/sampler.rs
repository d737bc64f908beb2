//! Reverse-time generation: the probability-flow ODE for any order, and the
//! first-order reverse SDE baseline.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HoldError, Result};
use crate::hold::{build_forward_matrix, BlockMatrix, HoldParams, LiftedState};
use crate::rng::{derived_rng, stream};
use crate::score::ScoreModel;

/// States beyond this norm abort integration.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Steps shrink quadratically towards `t_end`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    #[default]
    Heun,
}

/// Descending time grid from `t_start` to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub spacing: Spacing,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t_start: 1.0,
            t_end: crate::T_EPS,
            steps: 1000,
            spacing: Spacing::Uniform,
        }
    }
}

impl TimeGrid {
    pub fn uniform(t_start: f64, t_end: f64, steps: usize) -> Self {
        Self {
            t_start,
            t_end,
            steps,
            spacing: Spacing::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start > self.t_end && self.t_end > 0.0) || !self.t_start.is_finite() {
            return Err(HoldError::InvalidGrid(format!(
                "need t_start > t_end > 0, got t_start = {}, t_end = {}",
                self.t_start, self.t_end
            )));
        }
        if self.steps == 0 {
            return Err(HoldError::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(())
    }

    /// `steps + 1` strictly decreasing times.
    pub fn times(&self) -> Vec<f64> {
        let span = self.t_start - self.t_end;
        let n = self.steps as f64;
        (0..=self.steps)
            .map(|i| {
                let frac = i as f64 / n;
                match self.spacing {
                    Spacing::Uniform => self.t_start - span * frac,
                    Spacing::Quadratic => self.t_end + span * (1.0 - frac).powi(2),
                }
            })
            .collect()
    }
}

/// States visited by one reverse run, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LiftedState>,
    /// Score evaluated at the start of every step, when recorded.
    pub score_evals: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &LiftedState {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerateOptions {
    pub integrator: Integrator,
    /// Keep every state and score evaluation instead of only the endpoint.
    pub record: bool,
}

/// `u_T ~ N(0, L⁻¹ I_{nh})`.
pub fn sample_prior(params: &HoldParams, block_dim: usize, seed: u64) -> LiftedState {
    let mut rng = derived_rng(seed, &[stream::PRIOR]);
    let scale = params.l_inv().sqrt();
    let data = (0..params.order() * block_dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LiftedState::from_vec(params.order(), block_dim, data)
}

fn check_state(u: &LiftedState, step: usize, t: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(HoldError::Divergence {
            step,
            t,
            reason: "non-finite state",
        });
    }
    if u.norm() > DIVERGENCE_NORM {
        return Err(HoldError::Divergence {
            step,
            t,
            reason: "state norm exceeded 1e6",
        });
    }
    Ok(())
}

/// Probability-flow drift `F u − ½GGᵀ vec(0, …, s)`; only the last block
/// receives the score, scaled by `ξL⁻¹`.
struct FlowDrift<'a, S: ?Sized> {
    forward: BlockMatrix,
    coupling: f64,
    score: &'a S,
}

impl<S: ScoreModel + ?Sized> FlowDrift<'_, S> {
    fn eval(&self, u: &LiftedState, t: f64) -> Result<(LiftedState, Vec<f64>)> {
        let s = self.score.last_block_score(u, t)?;
        let mut d = self.forward.apply(u);
        for (v, sv) in d.block_mut(u.order() - 1).iter_mut().zip(&s) {
            *v -= self.coupling * sv;
        }
        Ok((d, s))
    }
}

fn axpy(u: &LiftedState, a: f64, d: &LiftedState) -> LiftedState {
    let data = u
        .as_slice()
        .iter()
        .zip(d.as_slice())
        .map(|(x, y)| x + a * y)
        .collect();
    LiftedState::from_vec(u.order(), u.block_dim(), data)
}

/// Integrates the probability-flow ODE backwards over `grid` from `start`.
pub fn pf_ode_integrate<S: ScoreModel + ?Sized>(
    params: &HoldParams,
    score: &S,
    start: LiftedState,
    grid: &TimeGrid,
    options: GenerateOptions,
) -> Result<Trajectory> {
    grid.validate()?;
    if start.order() != params.order() {
        return Err(HoldError::DimensionMismatch {
            expected: params.order(),
            got: start.order(),
        });
    }
    let drift = FlowDrift {
        forward: build_forward_matrix(params),
        coupling: params.xi() * params.l_inv(),
        score,
    };
    let times = grid.times();
    let mut u = start;
    let mut rec_times = vec![times[0]];
    let mut rec_states = vec![u.clone()];
    let mut rec_scores = Vec::new();
    for (step, w) in times.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let (k1, s) = drift.eval(&u, t0)?;
        u = match options.integrator {
            Integrator::Euler => axpy(&u, dt, &k1),
            Integrator::Heun => {
                let trial = axpy(&u, dt, &k1);
                check_state(&trial, step, t1)?;
                let (k2, _) = drift.eval(&trial, t1)?;
                let avg = axpy(&k1, 1.0, &k2);
                axpy(&u, 0.5 * dt, &avg)
            }
        };
        check_state(&u, step, t1)?;
        if options.record {
            rec_times.push(t1);
            rec_states.push(u.clone());
            rec_scores.push(s);
        }
    }
    if !options.record {
        return Ok(Trajectory {
            times: vec![times[times.len() - 1]],
            states: vec![u],
            score_evals: None,
        });
    }
    Ok(Trajectory {
        times: rec_times,
        states: rec_states,
        score_evals: Some(rec_scores),
    })
}

/// Draws `u_T` from the stationary prior and integrates the
/// probability-flow ODE down to `grid.t_end`.
pub fn pf_ode_generate<S: ScoreModel + ?Sized>(
    params: &HoldParams,
    score: &S,
    block_dim: usize,
    grid: &TimeGrid,
    seed: u64,
    options: GenerateOptions,
) -> Result<Trajectory> {
    let start = sample_prior(params, block_dim, seed);
    pf_ode_integrate(params, score, start, grid, options)
}

/// First-order probability-flow ODE `dx = (−ξx − ξL⁻¹ s) dt`, with order-1
/// states.
pub fn ou_pf_ode_generate<S: ScoreModel + ?Sized>(
    xi: f64,
    l_inv: f64,
    score: &S,
    block_dim: usize,
    grid: &TimeGrid,
    seed: u64,
    options: GenerateOptions,
) -> Result<Trajectory> {
    let params = HoldParams::ornstein_uhlenbeck(xi, l_inv)?;
    pf_ode_generate(&params, score, block_dim, grid, seed, options)
}

/// Euler–Maruyama integration of the reverse SDE
/// `dx = −ξ(x + 2L⁻¹ s) dt + √(2ξL⁻¹) dw̄` from `x_T ~ N(0, L⁻¹I)`.
pub fn ou_reverse_sde_generate<S: ScoreModel + ?Sized>(
    xi: f64,
    l_inv: f64,
    score: &S,
    block_dim: usize,
    grid: &TimeGrid,
    seed: u64,
    record: bool,
) -> Result<Trajectory> {
    grid.validate()?;
    let params = HoldParams::ornstein_uhlenbeck(xi, l_inv)?;
    let mut x = sample_prior(&params, block_dim, seed);
    let mut rng = derived_rng(seed, &[stream::REVERSE]);
    let times = grid.times();
    let mut rec_times = vec![times[0]];
    let mut rec_states = vec![x.clone()];
    let mut rec_scores = Vec::new();
    for (step, w) in times.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let s = score.last_block_score(&x, t0)?;
        let noise = (2.0 * xi * l_inv * -dt).sqrt();
        for (v, sv) in x.as_mut_slice().iter_mut().zip(&s) {
            let z: f64 = rng.sample(StandardNormal);
            *v += -xi * (*v + 2.0 * l_inv * sv) * dt + noise * z;
        }
        check_state(&x, step, t1)?;
        if record {
            rec_times.push(t1);
            rec_states.push(x.clone());
            rec_scores.push(s);
        }
    }
    if !record {
        return Ok(Trajectory {
            times: vec![times[times.len() - 1]],
            states: vec![x],
            score_evals: None,
        });
    }
    Ok(Trajectory {
        times: rec_times,
        states: rec_states,
        score_evals: Some(rec_scores),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Dynamics;
    use crate::hold::critically_damped_params;

    fn zero(u: &LiftedState, _t: f64) -> Vec<f64> {
        vec![0.0; u.block_dim()]
    }

    #[test]
    fn grid_shapes() {
        let g = TimeGrid::default();
        let t = g.times();
        assert_eq!(t.len(), 1001);
        assert_eq!(t[0], 1.0);
        assert!((t[1000] - 1e-3).abs() < 1e-15);
        assert!(t.windows(2).all(|w| w[1] < w[0]));
        let q = TimeGrid {
            spacing: Spacing::Quadratic,
            ..TimeGrid::uniform(1.0, 0.01, 10)
        };
        let tq = q.times();
        assert!(tq.windows(2).all(|w| w[1] < w[0]));
        assert!(tq[9] - tq[10] < tq[0] - tq[1]);
        assert!(TimeGrid::uniform(0.5, 1.0, 10).validate().is_err());
        assert!(TimeGrid::uniform(1.0, 0.0, 10).validate().is_err());
        assert!(TimeGrid::uniform(1.0, 0.1, 0).validate().is_err());
    }

    #[test]
    fn prior_is_seeded() {
        let p = critically_damped_params(3, 2.0, 1.0).unwrap();
        assert_eq!(sample_prior(&p, 2, 9), sample_prior(&p, 2, 9));
        assert_ne!(sample_prior(&p, 2, 9), sample_prior(&p, 2, 10));
        assert_eq!(sample_prior(&p, 2, 9).as_slice().len(), 6);
    }

    #[test]
    fn zero_score_flow_is_homogeneous_solution() {
        let p = critically_damped_params(3, 1.0, 1.0).unwrap();
        let d = Dynamics::new(p.clone()).unwrap();
        let grid = TimeGrid::default();
        let traj = pf_ode_generate(&p, &zero, 2, &grid, 3, GenerateOptions::default()).unwrap();
        let start = sample_prior(&p, 2, 3);
        let want = d.exp_at(grid.t_end - grid.t_start).apply(&start);
        let err = traj.endpoint().sub(&want).norm() / want.norm();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn recording_keeps_every_step() {
        let p = critically_damped_params(2, 1.0, 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 0.1, 20);
        let opts = GenerateOptions {
            record: true,
            ..Default::default()
        };
        let traj = pf_ode_generate(&p, &zero, 1, &grid, 0, opts).unwrap();
        assert_eq!(traj.len(), 21);
        assert_eq!(traj.times.len(), 21);
        assert_eq!(traj.score_evals.as_ref().unwrap().len(), 20);
        let plain = pf_ode_generate(&p, &zero, 1, &grid, 0, GenerateOptions::default()).unwrap();
        assert_eq!(plain.len(), 1);
        assert_eq!(plain.endpoint(), traj.endpoint());
    }

    #[test]
    fn divergence_names_the_step() {
        let p = critically_damped_params(2, 1.0, 1.0).unwrap();
        let blowup = |u: &LiftedState, _t: f64| vec![1e9; u.block_dim()];
        let err = pf_ode_generate(&p, &blowup, 1, &TimeGrid::default(), 0, GenerateOptions::default())
            .unwrap_err();
        assert!(matches!(err, HoldError::Divergence { step: 0, .. }));
        let nan = |u: &LiftedState, _t: f64| vec![f64::NAN; u.block_dim()];
        assert!(matches!(
            ou_reverse_sde_generate(1.0, 1.0, &nan, 1, &TimeGrid::default(), 0, false),
            Err(HoldError::Divergence { step: 0, .. })
        ));
    }

    #[test]
    fn ou_zero_score_flow_decays() {
        let grid = TimeGrid::default();
        let traj = ou_pf_ode_generate(2.0, 1.0, &zero, 1, &grid, 4, GenerateOptions::default()).unwrap();
        let params = HoldParams::ornstein_uhlenbeck(2.0, 1.0).unwrap();
        let x_t = sample_prior(&params, 1, 4).as_slice()[0];
        let want = (-2.0 * (grid.t_end - grid.t_start)).exp() * x_t;
        assert!((traj.endpoint().as_slice()[0] - want).abs() < 1e-5 * want.abs());
    }

    #[test]
    fn reverse_sde_is_seeded() {
        let g = TimeGrid::uniform(1.0, 0.01, 50);
        let prior = |u: &LiftedState, _t: f64| u.as_slice().iter().map(|v| -v).collect::<Vec<_>>();
        let a = ou_reverse_sde_generate(1.0, 1.0, &prior, 2, &g, 1, false).unwrap();
        let b = ou_reverse_sde_generate(1.0, 1.0, &prior, 2, &g, 1, false).unwrap();
        assert_eq!(a, b);
    }
}
