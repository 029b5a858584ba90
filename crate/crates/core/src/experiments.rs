//! End-to-end runners for the coin-bending, stochastic-volatility and Weibull
//! two-stage experiments. Each runner returns everything needed to write
//! artifacts or check outcomes; nothing here touches the filesystem.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{effective_sample_size, histogram, normalized_jeffreys_curve, reference_density, tv_distance, BinnedDensity};
use crate::error::{ensure, Error, Result};
use crate::fim::GradientMode;
use crate::model::{BoxConstraint, ObservationBatch, ParameterVector, StatisticalModel};
use crate::models::{coin_expected_fim, CoinFimMode, CoinModel, SvModel, WeibullModel};
use crate::particle::{equispaced, pf_fim_grid, FimGrid, SmoothedFim};
use crate::rng::RandomStream;
use crate::sampler::{derive_seed, run_chain, run_chains, ChainResult, SamplerConfig};
use crate::two_stage::{evaluate, training_set, uniform_prior_points, TsEstimator, TsEvaluation};

pub const DEFAULT_SEED: u64 = 20_240_917;

/// Points of the fine grid on which reference curves are tabulated.
pub const REFERENCE_GRID_POINTS: usize = 501;

/// Normalized `√J` on a fine grid plus its exact bin masses.
#[derive(Clone, Debug)]
pub struct ReferenceCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub binned: BinnedDensity,
}

impl ReferenceCurve {
    pub fn tabulate(lo: f64, hi: f64, bins: usize, fim: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let grid = equispaced(lo, hi, REFERENCE_GRID_POINTS);
        let values = grid.iter().map(|&g| fim(g)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            density: normalized_jeffreys_curve(&grid, &values)?,
            binned: reference_density(&grid, &values, bins)?,
            grid,
        })
    }
}

/// Per-chain summary shared by every experiment.
#[derive(Clone, Debug, Serialize)]
pub struct ChainSummary {
    pub seed: u64,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub rejected_out_of_bounds: usize,
    pub rejected_evaluation: usize,
    pub ess: Vec<f64>,
    pub all_within_constraint: bool,
}

impl ChainSummary {
    pub fn of(chain: &ChainResult, constraint: &BoxConstraint) -> Result<Self> {
        let ess = (0..constraint.dim())
            .map(|j| effective_sample_size(&chain.component(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: chain.seed,
            samples: chain.samples.len(),
            acceptance_rate: chain.acceptance_rate(),
            rejected_out_of_bounds: chain.rejected_out_of_bounds,
            rejected_evaluation: chain.rejected_evaluation,
            ess,
            all_within_constraint: chain.all_within(constraint),
        })
    }
}

/// A chain that proposed outside the box must still have stored only
/// in-box samples.
pub fn check_constrained(chain: &ChainResult, constraint: &BoxConstraint) -> Result<()> {
    if !chain.all_within(constraint) {
        return Err(Error::Validation(format!(
            "chain with seed {} stored a sample outside the constraint ({} out-of-bounds rejections)",
            chain.seed, chain.rejected_out_of_bounds
        )));
    }
    Ok(())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Coin bending

#[derive(Clone, Debug, Serialize)]
pub struct CoinSettings {
    pub seed: u64,
    pub tau: f64,
    /// Retained samples per chain; one block of realizations per entry.
    pub sample_sizes: Vec<usize>,
    /// Burn-in per chain; `None` means a tenth of the retained samples.
    pub burn_in: Option<usize>,
    pub realizations: usize,
    pub bins: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for CoinSettings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            tau: 0.05,
            sample_sizes: vec![100, 1000, 10_000],
            burn_in: None,
            realizations: 10,
            bins: 50,
            lower: 2.0,
            upper: 3.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoinBlock {
    pub samples: usize,
    pub chains: Vec<ChainResult>,
    pub tv: Vec<f64>,
}

impl CoinBlock {
    pub fn median_tv(&self) -> f64 {
        median(&self.tv)
    }
}

#[derive(Clone, Debug)]
pub struct CoinOutcome {
    pub constraint: BoxConstraint,
    pub reference: ReferenceCurve,
    pub blocks: Vec<CoinBlock>,
}

fn chain_config(constraint: &BoxConstraint, tau: f64, samples: usize, burn_in: Option<usize>, seed: u64) -> SamplerConfig {
    let burn_in = burn_in.unwrap_or(samples / 10);
    let mut cfg = SamplerConfig::new(constraint.clone(), tau, samples + burn_in, seed);
    cfg.burn_in = burn_in;
    cfg
}

pub fn run_coin(settings: &CoinSettings) -> Result<CoinOutcome> {
    ensure!(settings.realizations >= 1, "need at least one realization");
    ensure!(!settings.sample_sizes.is_empty(), "need at least one sample size");
    let constraint = BoxConstraint::interval(settings.lower, settings.upper)?;
    let model = CoinModel::with_domain(constraint.clone(), CoinFimMode::ExpectedCounts)?;
    let reference = ReferenceCurve::tabulate(settings.lower, settings.upper, settings.bins, |p| {
        Ok(coin_expected_fim(p)?.0)
    })?;
    let blocks = settings
        .sample_sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let cfg = chain_config(&constraint, settings.tau, n, settings.burn_in, derive_seed(settings.seed, i as u64));
            let chains = run_chains(&cfg, settings.realizations, None, &model)?;
            let tv = chains
                .iter()
                .map(|c| {
                    check_constrained(c, &constraint)?;
                    let h = histogram(&c.component(0), settings.bins, (settings.lower, settings.upper))?;
                    tv_distance(&h, &reference.binned)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CoinBlock { samples: n, chains, tv })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoinOutcome {
        constraint,
        reference,
        blocks,
    })
}

// ---------------------------------------------------------------------------
// Stochastic volatility

#[derive(Clone, Debug, Serialize)]
pub struct SvSettings {
    pub seed: u64,
    pub tau: f64,
    pub samples: usize,
    pub burn_in: Option<usize>,
    pub steps: usize,
    pub particles: usize,
    pub mc_runs: usize,
    pub grid_points: usize,
    pub fit_degree: usize,
    pub bins: usize,
    pub delta: Option<f64>,
    pub gradient_mode: GradientMode,
    pub lower: f64,
    pub upper: f64,
}

impl Default for SvSettings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            tau: 0.05,
            samples: 10_000,
            burn_in: None,
            steps: 1000,
            particles: 1000,
            mc_runs: 25,
            grid_points: 13,
            fit_degree: 3,
            bins: 50,
            delta: None,
            gradient_mode: GradientMode::OnePoint,
            lower: 0.3,
            upper: 0.9,
        }
    }
}

impl SvSettings {
    /// Reduced configuration: `T = 200`, `N = 2000`, `N_p = 500`.
    pub fn quick() -> Self {
        Self {
            samples: 2000,
            steps: 200,
            particles: 500,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SvOutcome {
    pub constraint: BoxConstraint,
    pub surrogate: SmoothedFim,
    pub reference: ReferenceCurve,
    pub chain: ChainResult,
    pub histogram: BinnedDensity,
    pub tv: f64,
}

impl SvOutcome {
    pub fn grid(&self) -> &FimGrid {
        self.surrogate.grid()
    }

    /// Mean histogram density over `[hi_lo, hi_hi]` divided by that over `[lo_lo, lo_hi]`.
    pub fn density_ratio(&self, high: (f64, f64), low: (f64, f64)) -> f64 {
        self.histogram.mean_density_over(high.0, high.1) / self.histogram.mean_density_over(low.0, low.1)
    }
}

/// PF-FIM grid with common random numbers, a smooth fit of `ln Ĵ`, then the
/// chain on the fitted curve.
pub fn run_sv(settings: &SvSettings) -> Result<SvOutcome> {
    ensure!(settings.grid_points > settings.fit_degree, "grid too coarse for the fit degree");
    let constraint = BoxConstraint::interval(settings.lower, settings.upper)?;
    let model = SvModel::default();
    let root = RandomStream::from_seed(settings.seed);
    let points = equispaced(settings.lower, settings.upper, settings.grid_points);
    let grid = pf_fim_grid(
        &model,
        &points,
        settings.steps,
        settings.particles,
        settings.mc_runs,
        &mut root.split(0),
    )?;
    let surrogate = SmoothedFim::fit(grid, settings.fit_degree, constraint.clone())?;
    let reference = ReferenceCurve::tabulate(settings.lower, settings.upper, settings.bins, |p| {
        Ok(surrogate.value(p))
    })?;

    let mut cfg = chain_config(
        &constraint,
        settings.tau,
        settings.samples,
        settings.burn_in,
        root.split(1).next_u64(),
    );
    cfg.gradient_mode = settings.gradient_mode;
    if let Some(delta) = settings.delta {
        cfg.one_point.delta = delta;
    }
    let chain = run_chain(&cfg, None, &surrogate)?;
    check_constrained(&chain, &constraint)?;
    let histogram = histogram(&chain.component(0), settings.bins, (settings.lower, settings.upper))?;
    let tv = tv_distance(&histogram, &reference.binned)?;
    Ok(SvOutcome {
        constraint,
        surrogate,
        reference,
        chain,
        histogram,
        tv,
    })
}

// ---------------------------------------------------------------------------
// Weibull two-stage estimation

#[derive(Clone, Debug, Serialize)]
pub struct WeibullSettings {
    pub seed: u64,
    pub tau: f64,
    /// Prior points per training set (`M_θ`).
    pub training_points: usize,
    /// Observations per synthetic dataset (`M`).
    pub observations: usize,
    pub neighbors: usize,
    pub validation_points: usize,
    /// Simulated observations per empirical FIM evaluation.
    pub fim_samples: usize,
    /// Chain iterations per retained Jeffreys sample.
    pub thin: usize,
    pub burn_in: usize,
    pub delta: Option<f64>,
    pub repetitions: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub restrict_below: f64,
}

impl Default for WeibullSettings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            tau: 2.0,
            training_points: 1000,
            observations: 200,
            neighbors: 5,
            validation_points: 1000,
            fim_samples: 1000,
            thin: 10,
            burn_in: 1000,
            delta: None,
            repetitions: 3,
            lower: [1.0, 1.0],
            upper: [20.0, 20.0],
            restrict_below: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeibullRepetition {
    pub seed: u64,
    pub chain: ChainResult,
    pub jeffreys_points: Vec<ParameterVector>,
    pub uniform_points: Vec<ParameterVector>,
    pub jeffreys: TsEvaluation,
    pub uniform: TsEvaluation,
}

#[derive(Clone, Debug)]
pub struct WeibullOutcome {
    pub constraint: BoxConstraint,
    pub repetitions: Vec<WeibullRepetition>,
}

/// `count` validation datasets at uniform parameter points; dataset `i` uses
/// split `i` of the stream.
pub fn validation_set<M: StatisticalModel + ?Sized>(
    model: &M,
    lower: &[f64],
    upper: &[f64],
    count: usize,
    observations: usize,
    rng: &mut RandomStream,
) -> Result<Vec<(ParameterVector, ObservationBatch)>> {
    let points = uniform_prior_points(lower, upper, count, &mut rng.fork())?;
    let data = rng.fork();
    points
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let y = model.simulate(&theta, observations, &mut data.split(i as u64))?;
            Ok((theta, y))
        })
        .collect()
}

/// Jeffreys samples from a thinned chain, then uniform- and Jeffreys-trained
/// estimators built with the same data stream and scored on one validation set.
pub fn run_weibull(settings: &WeibullSettings) -> Result<WeibullOutcome> {
    ensure!(settings.thin >= 1, "thinning must be at least 1");
    ensure!(settings.repetitions >= 1, "need at least one repetition");
    let constraint = BoxConstraint::new(settings.lower.to_vec(), settings.upper.to_vec())?;
    let delta = settings.delta.unwrap_or(1e-3 * constraint.min_width());
    let model = WeibullModel::new(constraint.expanded(10.0 * delta)?, settings.fim_samples)?;
    let repetitions = (0..settings.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(settings.seed, r as u64);
            let root = RandomStream::from_seed(seed);
            let mut cfg = SamplerConfig::new(
                constraint.clone(),
                settings.tau,
                settings.burn_in + settings.training_points * settings.thin,
                root.split(0).next_u64(),
            );
            cfg.burn_in = settings.burn_in;
            cfg.gradient_mode = GradientMode::OnePoint;
            cfg.one_point.delta = delta;
            let chain = run_chain(&cfg, None, &model)?;
            check_constrained(&chain, &constraint)?;
            let jeffreys_points: Vec<ParameterVector> =
                chain.samples.iter().skip(settings.thin - 1).step_by(settings.thin).cloned().collect();
            let uniform_points = uniform_prior_points(
                &settings.lower,
                &settings.upper,
                settings.training_points,
                &mut root.split(1),
            )?;
            let data = root.split(2);
            let validation = validation_set(
                &model,
                &settings.lower,
                &settings.upper,
                settings.validation_points,
                settings.observations,
                &mut root.split(3),
            )?;
            let score = |points: &[ParameterVector]| -> Result<TsEvaluation> {
                let pairs = training_set(&model, points, settings.observations, &mut data.clone())?;
                let est = TsEstimator::fit(&pairs, settings.neighbors)?;
                evaluate(&est, &validation, settings.restrict_below)
            };
            Ok(WeibullRepetition {
                seed,
                jeffreys: score(&jeffreys_points)?,
                uniform: score(&uniform_points)?,
                chain,
                jeffreys_points,
                uniform_points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeibullOutcome {
        constraint,
        repetitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn reference_curve_integrates_to_one() {
        // √J ∝ 1/x on [1, 2]: exact mass of the first half is ln 1.5 / ln 2
        let curve = ReferenceCurve::tabulate(1.0, 2.0, 2, |x| Ok(1.0 / (x * x))).unwrap();
        let mass = curve.binned.mass();
        assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((mass[0] - 1.5f64.ln() / 2f64.ln()).abs() < 1e-4);
        let h = curve.grid[1] - curve.grid[0];
        let area: f64 = curve.density.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        assert!((area - 1.0).abs() < 1e-6);
        assert_eq!(*curve.grid.last().unwrap(), 2.0);
    }

    #[test]
    fn burn_in_defaults_to_a_tenth() {
        let c = BoxConstraint::interval(0.0, 1.0).unwrap();
        let cfg = chain_config(&c, 0.1, 1000, None, 1);
        assert_eq!((cfg.iterations, cfg.burn_in), (1100, 100));
        let cfg = chain_config(&c, 0.1, 1000, Some(7), 1);
        assert_eq!((cfg.iterations, cfg.burn_in), (1007, 7));
    }

    #[test]
    fn small_coin_run_has_one_block_per_size() {
        let settings = CoinSettings {
            sample_sizes: vec![50, 200],
            realizations: 3,
            ..CoinSettings::default()
        };
        let out = run_coin(&settings).unwrap();
        assert_eq!(out.blocks.len(), 2);
        for (block, n) in out.blocks.iter().zip([50, 200]) {
            assert_eq!(block.chains.len(), 3);
            assert!(block.chains.iter().all(|c| c.samples.len() == n));
            assert!(block.tv.iter().all(|t| (0.0..=1.0).contains(t)));
        }
        let seeds: Vec<u64> = out.blocks.iter().flat_map(|b| b.chains.iter().map(|c| c.seed)).collect();
        let mut unique = seeds.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
    }

    #[test]
    fn weibull_thinning_keeps_requested_points() {
        let settings = WeibullSettings {
            training_points: 40,
            observations: 20,
            validation_points: 30,
            fim_samples: 50,
            thin: 3,
            burn_in: 20,
            repetitions: 1,
            ..WeibullSettings::default()
        };
        let out = run_weibull(&settings).unwrap();
        let rep = &out.repetitions[0];
        assert_eq!(rep.chain.samples.len(), 120);
        assert_eq!(rep.jeffreys_points.len(), 40);
        assert_eq!(rep.uniform_points.len(), 40);
        assert_eq!(rep.jeffreys_points[0], rep.chain.samples[2]);
        assert_eq!(rep.jeffreys.pairs.len(), 30);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = CoinSettings {
            realizations: 0,
            ..CoinSettings::default()
        };
        assert!(run_coin(&bad).is_err());
        let bad = WeibullSettings {
            thin: 0,
            ..WeibullSettings::default()
        };
        assert!(run_weibull(&bad).is_err());
    }
}
