use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use holdlab::forward::AuxPolicy;
use holdlab::lab::{self, DatasetSpec, ExperimentConfig, Forcing, LabError, LabResult, OuSampler};
use holdlab::sampler::{Integrator, Spacing};

#[derive(Parser)]
#[command(name = "holdlab", version, about = "Higher-order Langevin diffusion laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print critically damped parameters as JSON.
    Params {
        #[arg(long)]
        order: usize,
    },
    /// Frequency magnitudes of the OU and HOLD filters.
    Filter {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 1e-2)]
        omega_min: f64,
        #[arg(long, default_value_t = 1e3)]
        omega_max: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Determinant-ratio collapse curves.
    Collapse {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 1e-3)]
        t_min: f64,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Reverse-time generation for each order.
    Generate(ConfigArgs),
    /// Memorization sweep over orders, training sizes and auxiliary policies.
    FmemSweep(ConfigArgs),
    /// Compare the convolution representation against direct integration.
    Theorem1Check {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        orders: Vec<usize>,
        /// Forcing names: zero, sine, damped, ramp, step, chirp.
        #[arg(long, value_delimiter = ',')]
        forcing: Vec<String>,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Dataset spec as JSON, e.g. '{"kind":"ring","radius":2,"noise":0.1}'.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sweep_sizes: Option<Vec<usize>>,
    /// Comma-separated policies: `marginalized` or `fixed:<seed>`.
    #[arg(long, value_delimiter = ',')]
    sweep_policies: Option<Vec<String>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    l_inv: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ou_xi: Option<f64>,
    /// `reverse-sde` or `pf-ode`.
    #[arg(long)]
    ou_sampler: Option<String>,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// `uniform` or `quadratic`.
    #[arg(long)]
    spacing: Option<String>,
    /// `heun` or `euler`.
    #[arg(long)]
    integrator: Option<String>,
    /// `marginalized` or `fixed:<seed>`.
    #[arg(long)]
    aux_policy: Option<String>,
    #[arg(long, env = "HOLDLAB_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_policy(s: &str) -> LabResult<AuxPolicy> {
    match s.split_once(':') {
        None if s == "marginalized" => Ok(AuxPolicy::Marginalized),
        Some(("fixed", seed)) => seed
            .parse()
            .map(AuxPolicy::FixedPerSample)
            .map_err(|_| LabError::Config(format!("bad policy seed in {s:?}"))),
        _ => Err(LabError::Config(format!("unknown aux policy {s:?}"))),
    }
}

fn pick<T: Copy>(s: &str, options: &[(&str, T)]) -> LabResult<T> {
    options
        .iter()
        .find(|(name, _)| *name == s)
        .map(|(_, v)| *v)
        .ok_or_else(|| LabError::Config(format!("unknown value {s:?}")))
}

impl ConfigArgs {
    fn resolve(self) -> LabResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.orders {
            c.orders = v;
        }
        if let Some(v) = self.dataset {
            c.dataset = serde_json::from_str::<DatasetSpec>(&v).map_err(|e| LabError::Config(e.to_string()))?;
        }
        if let Some(v) = self.n_train {
            c.n_train = v;
        }
        if let Some(v) = self.sweep_sizes {
            c.sweep_sizes = v;
        }
        if let Some(v) = self.sweep_policies {
            c.sweep_policies = v.iter().map(|s| parse_policy(s)).collect::<LabResult<_>>()?;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.l_inv {
            c.l_inv = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.ou_xi {
            c.ou_xi = v;
        }
        if let Some(v) = self.ou_sampler {
            c.ou_sampler = pick(&v, &[("reverse-sde", OuSampler::ReverseSde), ("pf-ode", OuSampler::PfOde)])?;
        }
        if let Some(v) = self.t_start {
            c.grid.t_start = v;
        }
        if let Some(v) = self.t_end {
            c.grid.t_end = v;
        }
        if let Some(v) = self.steps {
            c.grid.steps = v;
        }
        if let Some(v) = self.spacing {
            c.grid.spacing = pick(&v, &[("uniform", Spacing::Uniform), ("quadratic", Spacing::Quadratic)])?;
        }
        if let Some(v) = self.integrator {
            c.integrator = pick(&v, &[("heun", Integrator::Heun), ("euler", Integrator::Euler)])?;
        }
        if let Some(v) = self.aux_policy {
            c.aux_policy = parse_policy(&v)?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.out_dir {
            c.out_dir = v;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> LabResult<()> {
    match cli.command {
        Command::Params { order } => {
            let report = lab::cmd_params(order)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
        }
        Command::Filter {
            orders,
            omega_min,
            omega_max,
            points,
            out_dir,
            svg,
        } => {
            let rows = lab::cmd_filter(&orders, &lab::log_grid(omega_min, omega_max, points), &out_dir, svg)?;
            println!("wrote {} rows to {}", rows.len(), out_dir.join("filter.csv").display());
        }
        Command::Collapse {
            orders,
            t_min,
            t_max,
            points,
            out_dir,
            svg,
        } => {
            let rows = lab::cmd_collapse(&orders, &lab::log_grid(t_min, t_max, points), &out_dir, svg)?;
            println!("wrote {} rows to {}", rows.len(), out_dir.join("collapse.csv").display());
        }
        Command::Generate(args) => {
            let config = args.resolve()?;
            for g in lab::cmd_generate(&config)? {
                println!(
                    "order {}: {} endpoints, {} failures",
                    g.order,
                    g.endpoints.len(),
                    g.failures.len()
                );
            }
        }
        Command::FmemSweep(args) => {
            let config = args.resolve()?;
            for r in lab::cmd_fmem_sweep(&config)? {
                println!(
                    "order {} n_train {} {}: fmem {:.3} [{:.3}, {:.3}] w2 proxy {:.4}",
                    r.order, r.n_train, r.policy, r.fmem, r.ci_low, r.ci_high, r.w2
                );
            }
        }
        Command::Theorem1Check {
            orders,
            forcing,
            horizon,
            steps,
            out_dir,
        } => {
            let forcings = if forcing.is_empty() {
                Forcing::DEFAULTS.to_vec()
            } else {
                forcing
                    .iter()
                    .map(|f| Forcing::parse(f).ok_or_else(|| LabError::Config(format!("unknown forcing {f:?}"))))
                    .collect::<LabResult<_>>()?
            };
            for r in lab::cmd_theorem1_check(&orders, &forcings, horizon, steps, &out_dir)? {
                println!("order {} {}: {:.3e}", r.order, r.forcing, r.rel_l2_error);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("holdlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
