//! Release-gate checks run by `jeffreys validate`: gradient, one-point,
//! detailed-balance, sampler-moment and Kalman-versus-particle comparisons.

use serde::Serialize;

use crate::diagnostics::fd_gradient_check;
use crate::error::Result;
use crate::fim::{evaluate_potential, one_point_fim_derivative, FimProvider, GradientMode, OnePointConfig};
use crate::model::{BoxConstraint, ParameterVector};
use crate::models::{CoinFimMode, CoinModel, LgssOracleModel, PowerFim, QuadraticPotential};
use crate::particle::{particle_score, NlssModel};
use crate::rng::RandomStream;
use crate::sampler::{derive_seed, log_proposal, mala_log_acceptance, run_chain, SamplerConfig};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured < threshold`.
    pub fn below(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            passed: measured < threshold,
        }
    }
}

/// Max relative error of the analytic coin `∇V` against central differences
/// at 20 equispaced points of `[2.05, 2.95]`.
pub fn coin_gradient(h: f64) -> Result<Check> {
    let model = CoinModel::with_domain(BoxConstraint::interval(2.0, 3.0)?, CoinFimMode::ExpectedCounts)?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let phi = 2.05 + 0.9 * i as f64 / 19.0;
        let errs = fd_gradient_check(&model, &ParameterVector::scalar(phi)?, h)?;
        worst = errs.into_iter().fold(worst, f64::max);
    }
    Ok(Check::below("coin gradient vs central differences", worst, 1e-6))
}

/// Largest relative violation of `π(a)q(b|a)ρ(a→b) = π(b)q(a|b)ρ(b→a)` over
/// random in-box pairs on the coin model with exact potentials.
pub fn detailed_balance(seed: u64, pairs: usize, tau: f64) -> Result<Check> {
    let (lo, hi) = (2.0, 3.0);
    let model = CoinModel::with_domain(BoxConstraint::interval(lo, hi)?, CoinFimMode::ExpectedCounts)?;
    let cfg = OnePointConfig::new(1e-3, 1, model.domain())?;
    let mut rng = RandomStream::from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = ParameterVector::scalar(rng.uniform_range(lo, hi))?;
        let b = ParameterVector::scalar(rng.uniform_range(lo, hi))?;
        let ea = evaluate_potential(&model, &a, GradientMode::AnalyticTrace, &cfg, &mut rng.fork())?;
        let eb = evaluate_potential(&model, &b, GradientMode::AnalyticTrace, &cfg, &mut rng.fork())?;
        let (a, b) = (a.as_slice(), b.as_slice());
        let forward = -ea.value
            + log_proposal(b, a, &ea.gradient, tau)
            + mala_log_acceptance(b, a, eb.value, ea.value, &eb.gradient, &ea.gradient, tau);
        let backward = -eb.value
            + log_proposal(a, b, &eb.gradient, tau)
            + mala_log_acceptance(a, b, ea.value, eb.value, &ea.gradient, &eb.gradient, tau);
        worst = worst.max((forward - backward).exp_m1().abs());
    }
    Ok(Check::below("detailed balance on coin pairs", worst, 1e-12))
}

/// Relative error of the direction-averaged one-point derivative of
/// `J = coef·θ^power` at `theta`.
pub fn one_point_mean(coef: f64, power: i32, theta: f64, draws: usize, seed: u64) -> Result<Check> {
    let provider = PowerFim::new(coef, power, 0.5, 5.0)?;
    let cfg = OnePointConfig::new(1e-3, draws, provider.domain())?;
    let est = one_point_fim_derivative(&provider, &ParameterVector::scalar(theta)?, &cfg, &mut RandomStream::from_seed(seed))?;
    let truth = coef * power as f64 * theta.powi(power - 1);
    Ok(Check::below(
        format!("one-point mean for J = {coef}·θ^{power}"),
        (est[0][(0, 0)] - truth).abs() / truth.abs(),
        0.02,
    ))
}

/// Worst of `|mean| ` and `|variance − 1|` over `chains` quadratic-target runs.
pub fn quadratic_moments(seed: u64, chains: usize, iterations: usize, burn_in: usize) -> Result<Check> {
    let target = QuadraticPotential::new(1, 10.0)?;
    let mut worst: f64 = 0.0;
    for c in 0..chains {
        let mut cfg = SamplerConfig::new(target.domain().clone(), 0.1, iterations + burn_in, derive_seed(seed, c as u64));
        cfg.burn_in = burn_in;
        let xs = run_chain(&cfg, None, &target)?.component(0);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max(mean.abs()).max((var - 1.0).abs());
    }
    Ok(Check::below("quadratic target moments", worst, 0.05))
}

/// Mean over datasets of `‖s_PF − s_K‖/‖s_K‖` and worst relative
/// log-likelihood error, one simulated dataset and filter per seed.
pub fn kalman_agreement(seeds: &[u64], steps: usize, particles: usize) -> Result<[Check; 2]> {
    let model = LgssOracleModel::default();
    let theta = model.theta();
    let datasets = seeds.len();
    let (mut score_err, mut loglik_err) = (0.0, 0.0f64);
    for &seed in seeds {
        let stream = RandomStream::from_seed(seed);
        let y = NlssModel::simulate(&model, &theta, steps, &mut stream.split(0))?;
        let (s, ll) = particle_score(&model, &theta, &y, particles, &mut stream.split(1))?;
        let ks = model.kalman_score(&theta, y.values())?;
        let kl = model.kalman_loglik(&theta, &y)?;
        let diff: f64 = s.as_slice().iter().zip(ks.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = ks.as_slice().iter().map(|b| b * b).sum();
        score_err += (diff / norm).sqrt() / datasets as f64;
        loglik_err = loglik_err.max(((ll - kl) / kl).abs());
    }
    Ok([
        Check::below("particle score vs Kalman score (mean rel. error)", score_err, 0.10),
        Check::below("particle log-likelihood vs Kalman (max rel. error)", loglik_err, 0.01),
    ])
}

/// The whole gate; `quick` shrinks the sampler and particle checks.
pub fn run_suite(seed: u64, quick: bool) -> Result<Vec<Check>> {
    let mut checks = vec![
        coin_gradient(1e-6)?,
        detailed_balance(derive_seed(seed, 0), 100, 0.05)?,
        one_point_mean(3.0, 1, 2.0, 10_000, derive_seed(seed, 1))?,
        one_point_mean(1.0, 2, 2.0, 10_000, derive_seed(seed, 2))?,
    ];
    let (iters, burn) = if quick { (20_000, 2_000) } else { (50_000, 5_000) };
    checks.push(quadratic_moments(derive_seed(seed, 3), 3, iters, burn)?);
    let (datasets, particles) = if quick { (2u64, 1000) } else { (5, 2000) };
    let seeds: Vec<u64> = (0..datasets).map(|i| derive_seed(seed, 10 + i)).collect();
    checks.extend(kalman_agreement(&seeds, 200, particles)?);
    Ok(checks)
}
