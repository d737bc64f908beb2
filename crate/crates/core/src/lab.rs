//! Experiment orchestration behind the `holdlab` binary: synthetic datasets,
//! configuration, and the commands that write CSV/JSON/SVG artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HoldError;
use crate::filter::{
    convolution_reconstruct, forced_ode_reference, frequency_magnitude, relative_l2_error, FilterSpec,
};
use crate::forward::{AuxPolicy, Dynamics};
use crate::hold::{critically_damped_params, HoldParams, LiftedState};
use crate::metrics::{collapse_curve, fmem, gaussian_w2, DEFAULT_TAU};
use crate::plot::{line_chart, Scale, Series};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::sampler::{ou_reverse_sde_generate, pf_ode_generate, GenerateOptions, Integrator, TimeGrid};
use crate::score::{Dataset, EmpiricalScore};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Hold(#[from] HoldError),
    #[error("{failed} of {total} runs diverged; see failures.csv")]
    TooManyFailures { failed: usize, total: usize },
    #[error("worst relative error {worst:.3e} exceeds {tol:.0e}")]
    Tolerance { worst: f64, tol: f64 },
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Io { .. } => 1,
            LabError::Config(_) | LabError::Hold(_) => 2,
            LabError::TooManyFailures { .. } => 3,
            LabError::Tolerance { .. } => 4,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_file(path: &Path, contents: &str) -> LabResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Round-trip exact float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Point `i` is drawn around center `i mod k`; centers sit 4 apart on a
    /// circle in the first two coordinates (on a line when `dim = 1`).
    GaussianMixture { k: usize, spread: f64, dim: usize },
    Ring {
        radius: f64,
        noise: f64,
        #[serde(default = "two")]
        dim: usize,
    },
    /// Uniform draws from the `side^dim` unit-spaced lattice.
    Grid { side: usize, dim: usize },
    /// Rows of a headerless or single-header CSV; the first `n` rows form the
    /// training set and held-out draws resample rows.
    CsvFile { path: PathBuf },
}

fn two() -> usize {
    2
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::GaussianMixture {
            k: 8,
            spread: 0.05,
            dim: 2,
        }
    }
}

fn mixture_center(j: usize, k: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    if dim == 1 || k == 1 {
        c[0] = 4.0 * j as f64 - 2.0 * (k as f64 - 1.0);
    } else {
        let radius = 2.0 / (std::f64::consts::PI / k as f64).sin();
        let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
        c[0] = radius * a.cos();
        c[1] = radius * a.sin();
    }
    c
}

fn read_csv_points(path: &Path) -> LabResult<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(LabError::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    if rows.is_empty() {
        return Err(LabError::Config(format!("{} holds no rows", path.display())));
    }
    Ok(rows)
}

impl DatasetSpec {
    pub fn dim(&self) -> LabResult<usize> {
        Ok(match self {
            DatasetSpec::GaussianMixture { dim, .. } | DatasetSpec::Ring { dim, .. } | DatasetSpec::Grid { dim, .. } => {
                *dim
            }
            DatasetSpec::CsvFile { path } => read_csv_points(path)?[0].len(),
        })
    }

    fn validate(&self) -> LabResult<()> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        match *self {
            DatasetSpec::GaussianMixture { k, spread, dim } => {
                if k == 0 || dim == 0 || !(spread >= 0.0) {
                    return bad("gaussian_mixture needs k >= 1, dim >= 1, spread >= 0");
                }
            }
            DatasetSpec::Ring { radius, noise, dim } => {
                if dim < 2 || !(radius > 0.0) || !(noise >= 0.0) {
                    return bad("ring needs dim >= 2, radius > 0, noise >= 0");
                }
            }
            DatasetSpec::Grid { side, dim } => {
                if side == 0 || dim == 0 {
                    return bad("grid needs side >= 1 and dim >= 1");
                }
            }
            DatasetSpec::CsvFile { .. } => {}
        }
        Ok(())
    }

    /// `n` points, a pure function of `(self, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> LabResult<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = derived_rng(seed, &[stream::DATA]);
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };
        Ok(match *self {
            DatasetSpec::GaussianMixture { k, spread, dim } => (0..n)
                .map(|i| {
                    mixture_center(i % k, k, dim)
                        .into_iter()
                        .map(|c| c + spread * normal())
                        .collect()
                })
                .collect(),
            DatasetSpec::Ring { radius, noise, dim } => {
                let mut u = derived_rng(seed, &[stream::DATA, 1]);
                (0..n)
                    .map(|_| {
                        let a = u.random_range(0.0..std::f64::consts::TAU);
                        let r = radius + noise * normal();
                        let mut p = vec![r * a.cos(), r * a.sin()];
                        p.extend((2..dim).map(|_| noise * normal()));
                        p
                    })
                    .collect()
            }
            DatasetSpec::Grid { side, dim } => {
                let mut u = derived_rng(seed, &[stream::DATA, 2]);
                let offset = (side as f64 - 1.0) / 2.0;
                (0..n)
                    .map(|_| (0..dim).map(|_| u.random_range(0..side) as f64 - offset).collect())
                    .collect()
            }
            DatasetSpec::CsvFile { ref path } => {
                let rows = read_csv_points(path)?;
                if rows.len() < n {
                    return Err(LabError::Config(format!(
                        "{} has {} rows, {n} requested",
                        path.display(),
                        rows.len()
                    )));
                }
                rows.into_iter().take(n).collect()
            }
        })
    }

    /// Fresh draws from the same generator on a disjoint stream.
    pub fn held_out(&self, n: usize, seed: u64) -> LabResult<Vec<Vec<f64>>> {
        let s = derive_seed(seed, &[stream::HELD_OUT]);
        match self {
            DatasetSpec::CsvFile { path } => {
                let rows = read_csv_points(path)?;
                let mut u = derived_rng(s, &[]);
                Ok((0..n).map(|_| rows[u.random_range(0..rows.len())].clone()).collect())
            }
            _ => self.sample(n, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OuSampler {
    #[default]
    ReverseSde,
    PfOde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `1` is the OU baseline.
    pub orders: Vec<usize>,
    pub dataset: DatasetSpec,
    pub n_train: usize,
    /// Training-set sizes for `fmem-sweep`; empty means `[n_train]`.
    pub sweep_sizes: Vec<usize>,
    /// Auxiliary policies for `fmem-sweep`; empty means `[aux_policy]`.
    pub sweep_policies: Vec<AuxPolicy>,
    pub runs: usize,
    pub tau: f64,
    pub l_inv: f64,
    pub alpha: f64,
    pub ou_xi: f64,
    pub ou_sampler: OuSampler,
    pub grid: TimeGrid,
    pub integrator: Integrator,
    pub aux_policy: AuxPolicy,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3],
            dataset: DatasetSpec::default(),
            n_train: 8,
            sweep_sizes: Vec::new(),
            sweep_policies: Vec::new(),
            runs: 512,
            tau: DEFAULT_TAU,
            l_inv: 1.0,
            alpha: 1.0,
            ou_xi: 1.0,
            ou_sampler: OuSampler::default(),
            grid: TimeGrid::default(),
            integrator: Integrator::default(),
            aux_policy: AuxPolicy::Marginalized,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> LabResult<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.orders.is_empty() {
            return bad("orders must not be empty".into());
        }
        if let Some(o) = self.orders.iter().find(|&&o| o == 0 || o > crate::hold::MAX_ORDER) {
            return bad(format!("order {o} outside 1..={}", crate::hold::MAX_ORDER));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.n_train == 0 || self.sweep_sizes.contains(&0) {
            return bad("training sets need at least one point".into());
        }
        self.grid.validate()?;
        self.dataset.validate()
    }

    pub fn sizes(&self) -> Vec<usize> {
        if self.sweep_sizes.is_empty() {
            vec![self.n_train]
        } else {
            self.sweep_sizes.clone()
        }
    }

    pub fn policies(&self) -> Vec<AuxPolicy> {
        if self.sweep_policies.is_empty() {
            vec![self.aux_policy]
        } else {
            self.sweep_policies.clone()
        }
    }

    pub fn params_for(&self, order: usize) -> LabResult<HoldParams> {
        Ok(if order == 1 {
            HoldParams::ornstein_uhlenbeck(self.ou_xi, self.l_inv)?
        } else {
            critically_damped_params(order, self.l_inv, self.alpha)?
        })
    }

    /// The training set shared by every order at this size.
    pub fn training_set(&self, n_train: usize) -> LabResult<Vec<Vec<f64>>> {
        self.dataset.sample(n_train, derive_seed(self.seed, &[n_train as u64]))
    }

    pub fn write_resolved(&self) -> LabResult<()> {
        let json = serde_json::to_string_pretty(self).expect("config serialises");
        write_file(&self.out_dir.join("resolved_config.json"), &(json + "\n"))
    }
}

pub fn policy_label(policy: AuxPolicy) -> &'static str {
    match policy {
        AuxPolicy::FixedPerSample(_) => "fixed_per_sample",
        AuxPolicy::Marginalized => "marginalized",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub order: usize,
    /// `(run, endpoint position)` for successful runs, in run order.
    pub endpoints: Vec<(usize, Vec<f64>)>,
    pub failures: Vec<(usize, String)>,
}

/// Runs `config.runs` reverse generations for one order against `train`.
pub fn generate_order(
    config: &ExperimentConfig,
    order: usize,
    train: &[Vec<f64>],
    policy: AuxPolicy,
) -> LabResult<Generation> {
    let params = config.params_for(order)?;
    let dataset = Dataset::new(train.to_vec())?;
    let score = EmpiricalScore::new(&dataset, &params, policy)?;
    let h = dataset.dim();
    let options = GenerateOptions {
        integrator: config.integrator,
        record: false,
    };
    let key = [order as u64, train.len() as u64];
    let outcomes: Vec<(usize, std::result::Result<Vec<f64>, HoldError>)> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(config.seed, &[key[0], key[1], run as u64]);
            let traj = if order == 1 && config.ou_sampler == OuSampler::ReverseSde {
                ou_reverse_sde_generate(params.xi(), params.l_inv(), &score, h, &config.grid, seed, false)
            } else {
                pf_ode_generate(&params, &score, h, &config.grid, seed, options)
            };
            (run, traj.map(|t| t.endpoint().position().to_vec()))
        })
        .collect();
    let mut endpoints = Vec::new();
    let mut failures = Vec::new();
    for (run, r) in outcomes {
        match r {
            Ok(x) => endpoints.push((run, x)),
            Err(e) => failures.push((run, e.to_string())),
        }
    }
    Ok(Generation {
        order,
        endpoints,
        failures,
    })
}

fn endpoints_csv(g: &Generation, dim: usize) -> String {
    let mut s = String::from("run");
    for d in 0..dim {
        let _ = write!(s, ",x{d}");
    }
    s.push('\n');
    for (run, x) in &g.endpoints {
        let _ = write!(s, "{run}");
        for v in x {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

fn check_failures(failed: usize, total: usize) -> LabResult<()> {
    if failed * 100 >= total && failed > 0 {
        Err(LabError::TooManyFailures { failed, total })
    } else {
        Ok(())
    }
}

/// `generate`: writes `endpoints_<order>.csv` and `failures.csv`.
pub fn cmd_generate(config: &ExperimentConfig) -> LabResult<Vec<Generation>> {
    config.validate()?;
    config.write_resolved()?;
    let train = config.training_set(config.n_train)?;
    let dim = train[0].len();
    let mut failures = String::from("order,run,error\n");
    let mut out = Vec::new();
    for &order in &config.orders {
        let g = generate_order(config, order, &train, config.aux_policy)?;
        write_file(&config.out_dir.join(format!("endpoints_{order}.csv")), &endpoints_csv(&g, dim))?;
        for (run, e) in &g.failures {
            let _ = writeln!(failures, "{order},{run},\"{}\"", e.replace('"', "'"));
        }
        out.push(g);
    }
    write_file(&config.out_dir.join("failures.csv"), &failures)?;
    let failed = out.iter().map(|g| g.failures.len()).sum();
    check_failures(failed, config.runs * config.orders.len())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub order: usize,
    pub n_train: usize,
    pub policy: &'static str,
    pub fmem: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Squared 2-Wasserstein distance of fitted Gaussians against held-out data.
    pub w2: f64,
    pub failures: usize,
}

/// `fmem-sweep`: one row per (order, n_train, policy) cell in `sweep.csv`.
/// Order 1 has no auxiliaries and is run once per size.
pub fn cmd_fmem_sweep(config: &ExperimentConfig) -> LabResult<Vec<SweepRow>> {
    config.validate()?;
    config.write_resolved()?;
    let mut rows = Vec::new();
    let mut failures = String::from("order,n_train,policy,run,error\n");
    for &order in &config.orders {
        for n_train in config.sizes() {
            let train = config.training_set(n_train)?;
            let held = config
                .dataset
                .held_out(n_train.max(256), derive_seed(config.seed, &[n_train as u64]))?;
            let policies = if order == 1 { vec![config.aux_policy] } else { config.policies() };
            for policy in policies {
                let g = generate_order(config, order, &train, policy)?;
                let label = if order == 1 { "none" } else { policy_label(policy) };
                for (run, e) in &g.failures {
                    let _ = writeln!(failures, "{order},{n_train},{label},{run},\"{}\"", e.replace('"', "'"));
                }
                let pts: Vec<Vec<f64>> = g.endpoints.iter().map(|(_, x)| x.clone()).collect();
                let (fm, lo, hi, w2) = if pts.is_empty() || train.len() < 2 {
                    (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
                } else {
                    let r = fmem(&pts, &train, config.tau)?;
                    (r.fraction, r.ci_low, r.ci_high, gaussian_w2(&pts, &held)?)
                };
                rows.push(SweepRow {
                    order,
                    n_train,
                    policy: label,
                    fmem: fm,
                    ci_low: lo,
                    ci_high: hi,
                    w2,
                    failures: g.failures.len(),
                });
            }
        }
    }
    rows.sort_by(|a, b| (a.order, a.n_train, a.policy).cmp(&(b.order, b.n_train, b.policy)));
    let mut csv = String::from("order,n_train,fmem,ci_low,ci_high,w2,policy\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.order,
            r.n_train,
            fmt_f64(r.fmem),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            fmt_f64(r.w2),
            r.policy
        );
    }
    write_file(&config.out_dir.join("sweep.csv"), &csv)?;
    write_file(&config.out_dir.join("failures.csv"), &failures)?;
    let failed: usize = rows.iter().map(|r| r.failures).sum();
    check_failures(failed, rows.len() * config.runs)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsReport {
    pub order: usize,
    pub gammas: Vec<f64>,
    pub xi: f64,
    pub s_star: f64,
}

/// `params`: critically damped parameters of order `n ≥ 2` with `L⁻¹ = 1`.
pub fn cmd_params(order: usize) -> LabResult<ParamsReport> {
    let p = critically_damped_params(order, 1.0, 1.0)?;
    let d = Dynamics::new(p.clone())?;
    Ok(ParamsReport {
        order,
        gammas: p.gammas().to_vec(),
        xi: p.xi(),
        s_star: d.s_star(),
    })
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRow {
    pub omega: f64,
    pub label: String,
    pub magnitude: f64,
}

/// `filter`: `|H(iω)|` for OU with `ξ = 1` and each HOLD order, `L⁻¹ = 1`.
pub fn filter_table(orders: &[usize], omegas: &[f64]) -> LabResult<Vec<FilterRow>> {
    let mut specs = vec![("ou".to_string(), FilterSpec::ou(1.0, 1.0))];
    for &n in orders {
        let p = critically_damped_params(n, 1.0, 1.0)?;
        specs.push((format!("hold{n}"), FilterSpec::from_params(&p)?));
    }
    let mut rows = Vec::new();
    for (label, spec) in &specs {
        for &w in omegas {
            rows.push(FilterRow {
                omega: w,
                label: label.clone(),
                magnitude: frequency_magnitude(spec, w),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_filter(orders: &[usize], omegas: &[f64], out_dir: &Path, svg: bool) -> LabResult<Vec<FilterRow>> {
    let rows = filter_table(orders, omegas)?;
    let mut csv = String::from("omega,label,magnitude\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", fmt_f64(r.omega), r.label, fmt_f64(r.magnitude));
    }
    write_file(&out_dir.join("filter.csv"), &csv)?;
    if svg {
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            match series.last_mut() {
                Some(s) if s.label == r.label => s.points.push((r.omega, r.magnitude)),
                _ => series.push(Series {
                    label: r.label.clone(),
                    points: vec![(r.omega, r.magnitude)],
                }),
            }
        }
        let chart = line_chart("|H(iω)|", &series, Scale::Log, Scale::Log);
        write_file(&out_dir.join("filter.svg"), &chart)?;
    }
    Ok(rows)
}

pub fn cmd_collapse(
    orders: &[usize],
    t_grid: &[f64],
    out_dir: &Path,
    svg: bool,
) -> LabResult<Vec<crate::metrics::CollapseRow>> {
    let rows = collapse_curve(orders, t_grid)?;
    let mut csv = String::from("n,t,det_ratio\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.n, fmt_f64(r.t), fmt_f64(r.det_ratio));
    }
    write_file(&out_dir.join("collapse.csv"), &csv)?;
    if svg {
        let series: Vec<Series> = orders
            .iter()
            .map(|&n| Series {
                label: format!("n={n}"),
                points: rows.iter().filter(|r| r.n == n).map(|r| (r.t, r.det_ratio)).collect(),
            })
            .collect();
        let chart = line_chart("det ratio", &series, Scale::Log, Scale::Log);
        write_file(&out_dir.join("collapse.svg"), &chart)?;
    }
    Ok(rows)
}

/// Scalar test signals for the convolution check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forcing {
    Zero,
    Sine,
    Damped,
    Ramp,
    Step,
    Chirp,
}

impl Forcing {
    pub const DEFAULTS: [Forcing; 5] = [Forcing::Sine, Forcing::Damped, Forcing::Ramp, Forcing::Step, Forcing::Chirp];

    pub fn name(self) -> &'static str {
        match self {
            Forcing::Zero => "zero",
            Forcing::Sine => "sine",
            Forcing::Damped => "damped",
            Forcing::Ramp => "ramp",
            Forcing::Step => "step",
            Forcing::Chirp => "chirp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Forcing::Zero]
            .into_iter()
            .chain(Self::DEFAULTS)
            .find(|f| f.name() == s)
    }

    pub fn eval(self, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Sine => (3.0 * t).sin(),
            Forcing::Damped => (-0.5 * t).exp() * (2.0 * t).cos(),
            Forcing::Ramp => t * (-t).exp(),
            Forcing::Step => 0.5,
            Forcing::Chirp => (t * t).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionRow {
    pub order: usize,
    pub forcing: &'static str,
    pub rel_l2_error: f64,
}

pub const CONVOLUTION_TOL: f64 = 1e-3;

/// Relative L2 error between the convolution representation and direct
/// integration, for each order (1 is OU with `ξ = 1`) and forcing.
pub fn convolution_errors(
    orders: &[usize],
    forcings: &[Forcing],
    horizon: f64,
    steps: usize,
) -> LabResult<Vec<ConvolutionRow>> {
    let grid: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    let jobs: Vec<(usize, Forcing)> = orders
        .iter()
        .flat_map(|&n| forcings.iter().map(move |&f| (n, f)))
        .collect();
    jobs.par_iter()
        .map(|&(n, f)| {
            let params = if n == 1 {
                HoldParams::ornstein_uhlenbeck(1.0, 1.0)?
            } else {
                critically_damped_params(n, 1.0, 1.0)?
            };
            let u0 = LiftedState::from_vec(n, 1, (0..n).map(|i| (-0.5f64).powi(i as i32)).collect());
            let s = move |t: f64| vec![f.eval(t)];
            let a = convolution_reconstruct(&params, &u0, s, &grid)?;
            let b = forced_ode_reference(&params, &u0, s, &grid)?;
            Ok(ConvolutionRow {
                order: n,
                forcing: f.name(),
                rel_l2_error: relative_l2_error(&a, &b),
            })
        })
        .collect()
}

pub fn cmd_theorem1_check(
    orders: &[usize],
    forcings: &[Forcing],
    horizon: f64,
    steps: usize,
    out_dir: &Path,
) -> LabResult<Vec<ConvolutionRow>> {
    let rows = convolution_errors(orders, forcings, horizon, steps)?;
    let mut csv = String::from("order,forcing,rel_l2_error\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.order, r.forcing, fmt_f64(r.rel_l2_error));
    }
    write_file(&out_dir.join("convolution_check.csv"), &csv)?;
    let worst = rows.iter().map(|r| r.rel_l2_error).fold(0.0, f64::max);
    if worst > CONVOLUTION_TOL {
        return Err(LabError::Tolerance {
            worst,
            tol: CONVOLUTION_TOL,
        });
    }
    Ok(rows)
}
