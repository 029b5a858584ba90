//! Command-line front end: `sample`, `experiment {coin|sv|weibull}` and `validate`.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 estimation failure,
//! 4 validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{config_hash, create_dir, write_coin, write_json, write_samples, write_sv, write_weibull};
use crate::error::{Error, Result};
use crate::experiments::{
    check_constrained, run_coin, run_sv, run_weibull, ChainSummary, CoinSettings, SvSettings, WeibullSettings,
    DEFAULT_SEED,
};
use crate::fim::{FimProvider, GradientMode};
use crate::model::BoxConstraint;
use crate::models::{CoinFimMode, CoinModel, QuadraticPotential, SvModel, WeibullModel};
use crate::particle::ParticleFim;
use crate::sampler::{run_chain, SamplerConfig};
use crate::validation::run_suite;

#[derive(Parser, Debug)]
#[command(name = "jeffreys", version, about = "Sample Jeffreys priors with constrained MALA")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, env = "JEFFREYS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one chain on a built-in model.
    Sample(SampleArgs),
    /// Reproduce one of the reference experiments.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentKind,
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Run the gradient, detailed-balance, sampler and particle-filter checks.
    Validate {
        /// Smaller sampler and particle-filter checks.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Coin,
    Sv,
    Weibull,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientArg {
    Analytic,
    OnePoint,
}

impl From<GradientArg> for GradientMode {
    fn from(g: GradientArg) -> Self {
        match g {
            GradientArg::Analytic => GradientMode::AnalyticTrace,
            GradientArg::OnePoint => GradientMode::OnePoint,
        }
    }
}

/// Experiment parameters. Flags override values read from `--config`.
#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentArgs {
    /// JSON file with any of these options (kebab-case keys).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Master seed; per-chain seeds are derived from it by index.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Langevin step size.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Retained samples per chain.
    #[arg(long = "iters")]
    #[serde(alias = "iters")]
    pub iterations: Option<usize>,
    /// Discarded initial iterations (default: a tenth of --iters).
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// One-point perturbation step (default: 1e-3 of the smallest box width).
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Particles per filter (SV).
    #[arg(long)]
    pub particles: Option<usize>,
    /// Simulated datasets per FIM estimate (SV).
    #[arg(long)]
    pub mc_runs: Option<usize>,
    /// Independent chains per sample size (coin).
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Histogram bins for distance and density summaries.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Time steps per simulated SV trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Gradient source for the potential (SV).
    #[arg(long, value_enum)]
    pub gradient: Option<GradientArg>,
    /// SV only: T=200, N=2000, N_p=500 unless overridden.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub quick: Option<bool>,
    /// Weibull: prior points per training set.
    #[arg(long)]
    pub training_points: Option<usize>,
    /// Weibull: observations per synthetic dataset.
    #[arg(long)]
    pub observations: Option<usize>,
    /// Weibull: neighbors of the k-NN regressor.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Weibull: validation datasets.
    #[arg(long)]
    pub validation_points: Option<usize>,
    /// Weibull: simulated observations per empirical FIM.
    #[arg(long)]
    pub fim_samples: Option<usize>,
    /// Weibull: chain iterations per retained Jeffreys sample.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Weibull: independent repetitions of the comparison.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Artifacts go to <OUTPUT_DIR>/<experiment>/.
    #[arg(long, env = "JEFFREYS_OUTPUT_DIR", default_value = "results")]
    #[serde(skip)]
    pub output_dir: PathBuf,
}

macro_rules! fill {
    ($dst:ident, $src:ident; $($f:ident),+) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )+
    };
}

impl ExperimentArgs {
    /// Merges the `--config` file under the flags.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let file: ExperimentArgs = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            fill!(self, file; seed, tau, iterations, burn_in, delta, particles, mc_runs, realizations, bins,
                steps, gradient, quick, training_points, observations, neighbors, validation_points,
                fim_samples, thin, repetitions);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("delta", self.delta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("--{name} must be positive and finite, got {v}")));
                }
            }
        }
        let counts = [
            ("iters", self.iterations, 1),
            ("particles", self.particles, 2),
            ("mc-runs", self.mc_runs, 1),
            ("realizations", self.realizations, 1),
            ("bins", self.bins, 1),
            ("steps", self.steps, 1),
            ("training-points", self.training_points, 1),
            ("observations", self.observations, 10),
            ("neighbors", self.neighbors, 1),
            ("validation-points", self.validation_points, 1),
            ("fim-samples", self.fim_samples, 2),
            ("thin", self.thin, 1),
            ("repetitions", self.repetitions, 1),
        ];
        for (name, v, min) in counts {
            if let Some(v) = v {
                if v < min {
                    return Err(Error::Config(format!("--{name} must be at least {min}, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn coin_settings(&self) -> CoinSettings {
        let d = CoinSettings::default();
        CoinSettings {
            seed: self.seed.unwrap_or(d.seed),
            tau: self.tau.unwrap_or(d.tau),
            sample_sizes: self.iterations.map(|n| vec![n]).unwrap_or(d.sample_sizes),
            burn_in: self.burn_in.or(d.burn_in),
            realizations: self.realizations.unwrap_or(d.realizations),
            bins: self.bins.unwrap_or(d.bins),
            ..d
        }
    }

    pub fn sv_settings(&self) -> SvSettings {
        let d = if self.quick.unwrap_or(false) { SvSettings::quick() } else { SvSettings::default() };
        SvSettings {
            seed: self.seed.unwrap_or(d.seed),
            tau: self.tau.unwrap_or(d.tau),
            samples: self.iterations.unwrap_or(d.samples),
            burn_in: self.burn_in.or(d.burn_in),
            steps: self.steps.unwrap_or(d.steps),
            particles: self.particles.unwrap_or(d.particles),
            mc_runs: self.mc_runs.unwrap_or(d.mc_runs),
            bins: self.bins.unwrap_or(d.bins),
            delta: self.delta.or(d.delta),
            gradient_mode: self.gradient.map(Into::into).unwrap_or(d.gradient_mode),
            ..d
        }
    }

    pub fn weibull_settings(&self) -> WeibullSettings {
        let d = WeibullSettings::default();
        WeibullSettings {
            seed: self.seed.unwrap_or(d.seed),
            tau: self.tau.unwrap_or(d.tau),
            training_points: self.iterations.or(self.training_points).unwrap_or(d.training_points),
            observations: self.observations.unwrap_or(d.observations),
            neighbors: self.neighbors.unwrap_or(d.neighbors),
            validation_points: self.validation_points.unwrap_or(d.validation_points),
            fim_samples: self.fim_samples.unwrap_or(d.fim_samples),
            thin: self.thin.unwrap_or(d.thin),
            burn_in: self.burn_in.unwrap_or(d.burn_in),
            delta: self.delta.or(d.delta),
            repetitions: self.repetitions.unwrap_or(d.repetitions),
            ..d
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    Coin,
    Quadratic,
    Weibull,
    Sv,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Lower corner of the constraint box, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub tau: f64,
    /// Retained samples.
    #[arg(long = "iters", default_value_t = 10_000)]
    pub iterations: usize,
    /// Defaults to a tenth of the retained samples.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// One-point step; defaults to 1e-3 of the smallest box width.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Defaults to one-point for estimated FIMs and analytic otherwise.
    #[arg(long, value_enum)]
    pub gradient: Option<GradientArg>,
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 25)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = 1000)]
    pub fim_samples: usize,
    #[arg(long, env = "JEFFREYS_OUTPUT_DIR", default_value = "results")]
    pub output_dir: PathBuf,
}

fn sample_box(args: &SampleArgs, lower: &[f64], upper: &[f64]) -> Result<BoxConstraint> {
    let lo = args.lower.clone().unwrap_or_else(|| lower.to_vec());
    let hi = args.upper.clone().unwrap_or_else(|| upper.to_vec());
    BoxConstraint::new(lo, hi).map_err(|e| Error::Config(e.to_string()))
}

fn sample_with<P: FimProvider>(
    args: &SampleArgs,
    name: &str,
    params: &[&str],
    constraint: BoxConstraint,
    estimated: bool,
    provider: &P,
) -> Result<()> {
    let burn_in = args.burn_in.unwrap_or(args.iterations / 10);
    let mut cfg = SamplerConfig::new(constraint.clone(), args.tau, args.iterations + burn_in, args.seed);
    cfg.burn_in = burn_in;
    cfg.gradient_mode = args
        .gradient
        .map(Into::into)
        .unwrap_or(if estimated { GradientMode::OnePoint } else { GradientMode::AnalyticTrace });
    if let Some(delta) = args.delta {
        cfg.one_point.delta = delta;
    }
    cfg.validate()?;
    let started = Instant::now();
    let chain = run_chain(&cfg, None, provider)?;
    check_constrained(&chain, &constraint)?;
    let dir = args.output_dir.join(format!("sample_{name}"));
    create_dir(&dir)?;
    write_samples(&dir.join("samples.csv"), params, &chain)?;
    write_json(
        &dir.join("metadata.json"),
        &json!({
            "model": name,
            "config": cfg,
            "config_hash": config_hash(&cfg)?,
            "particles": args.particles,
            "steps": args.steps,
            "mc_runs": args.mc_runs,
            "fim_samples": args.fim_samples,
            "chain": ChainSummary::of(&chain, &constraint)?,
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "{} samples written to {} (acceptance {:.3})",
        chain.samples.len(),
        dir.display(),
        chain.acceptance_rate()
    );
    Ok(())
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    if !(args.tau > 0.0 && args.tau.is_finite()) {
        return Err(Error::Config(format!("--tau must be positive and finite, got {}", args.tau)));
    }
    match args.model {
        ModelArg::Coin => {
            let b = sample_box(args, &[2.0], &[3.0])?;
            let model = CoinModel::with_domain(b.clone(), CoinFimMode::ExpectedCounts)?;
            sample_with(args, "coin", &["phi"], b, false, &model)
        }
        ModelArg::Quadratic => {
            let b = sample_box(args, &[-10.0], &[10.0])?;
            let model = QuadraticPotential::new(b.dim(), 10.0)?;
            sample_with(args, "quadratic", &["theta"], b, false, &model)
        }
        ModelArg::Weibull => {
            let b = sample_box(args, &[1.0, 1.0], &[20.0, 20.0])?;
            let model = WeibullModel::new(b.expanded(1e-2 * b.min_width())?, args.fim_samples)?;
            sample_with(args, "weibull", &["eta", "gamma"], b, true, &model)
        }
        ModelArg::Sv => {
            let b = sample_box(args, &[0.3], &[0.9])?;
            let provider = ParticleFim {
                model: SvModel::default(),
                steps: args.steps,
                n_particles: args.particles,
                runs: args.mc_runs,
            };
            sample_with(args, "sv", &["phi"], b, true, &provider)
        }
    }
}

fn run_experiment(which: ExperimentKind, args: ExperimentArgs) -> Result<()> {
    let args = args.resolved()?;
    let started = Instant::now();
    match which {
        ExperimentKind::Coin => {
            let s = args.coin_settings();
            let out = run_coin(&s)?;
            let files = write_coin(&args.output_dir.join("coin"), &s, &out, started.elapsed().as_secs_f64())?;
            for b in &out.blocks {
                println!("N = {:>6}: median TV {:.4}, max TV {:.4}", b.samples, b.median_tv(), b.tv.iter().cloned().fold(0.0, f64::max));
            }
            report_files(&files);
        }
        ExperimentKind::Sv => {
            let s = args.sv_settings();
            let out = run_sv(&s)?;
            let files = write_sv(&args.output_dir.join("sv"), &s, &out, started.elapsed().as_secs_f64())?;
            let g = out.grid();
            println!(
                "J(0.3) = {:.4}, J(0.9) = {:.4}; density ratio [0.84,0.9]/[0.3,0.36] = {:.3}; TV {:.4}",
                g.values[0],
                g.values[g.values.len() - 1],
                out.density_ratio((0.84, 0.9), (0.3, 0.36)),
                out.tv
            );
            report_files(&files);
        }
        ExperimentKind::Weibull => {
            let s = args.weibull_settings();
            let out = run_weibull(&s)?;
            let files = write_weibull(&args.output_dir.join("weibull"), &s, &out, started.elapsed().as_secs_f64())?;
            for (r, rep) in out.repetitions.iter().enumerate() {
                println!(
                    "rep {r}: RMSE(eta) jeffreys {:.4} uniform {:.4}; RMSE(gamma | gamma < {}) jeffreys {:.4} uniform {:.4}",
                    rep.jeffreys.rmse[0],
                    rep.uniform.rmse[0],
                    s.restrict_below,
                    rep.jeffreys.rmse_restricted[1],
                    rep.uniform.rmse_restricted[1]
                );
            }
            report_files(&files);
        }
    }
    Ok(())
}

fn report_files(files: &[PathBuf]) {
    let dir = files.first().and_then(|f| f.parent()).unwrap_or(Path::new("."));
    println!("{} files written to {}", files.len(), dir.display());
}

fn run_validate(seed: u64, quick: bool) -> Result<()> {
    let checks = run_suite(seed, quick)?;
    for c in &checks {
        println!(
            "{} {}: {:.3e} (threshold {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Validation(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::ContractViolation(_)
        | Error::Domain(_)
        | Error::Support(_)
        | Error::Unsupported(_)
        | Error::Io { .. } => 2,
        Error::Validation(_) => 4,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Sample(args) => run_sample(&args),
        Command::Experiment { which, args } => run_experiment(which, args),
        Command::Validate { quick, seed } => run_validate(seed, quick),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
