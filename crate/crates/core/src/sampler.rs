//! Unadjusted Langevin steps, the MALA acceptance ratio with box masking, and
//! the chain driver.
//!
//! Target: `π(θ) ∝ exp(-V(θ))` restricted to a closed box `Θ_c`. Each
//! iteration proposes `θ' = θ - τ∇V(θ) + √(2τ) ξ`, sets the acceptance to zero
//! outside `Θ_c`, and otherwise accepts with the Metropolis–Hastings ratio of
//! the Gaussian proposal kernels. All acceptance arithmetic stays in the log
//! domain.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fim::{evaluate_potential, FimProvider, GradientMode, OnePointConfig, PotentialEvaluation};
use crate::model::{BoxConstraint, ParameterVector};
use crate::rng::RandomStream;

/// One Euler–Maruyama step of the Langevin diffusion: `θ - τ∇V + √(2τ) ξ`.
pub fn ula_step(theta: &[f64], grad: &[f64], tau: f64, xi: &[f64]) -> Vec<f64> {
    let s = (2.0 * tau).sqrt();
    theta
        .iter()
        .zip(grad)
        .zip(xi)
        .map(|((t, g), x)| t - tau * g + s * x)
        .collect()
}

/// `ln q(to | from)` up to the normalizer: `-‖to - from + τ∇V(from)‖² / (4τ)`.
pub fn log_proposal(to: &[f64], from: &[f64], grad_from: &[f64], tau: f64) -> f64 {
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((a, b), g)| {
            let r = a - b + tau * g;
            r * r
        })
        .sum();
    -sq / (4.0 * tau)
}

/// `ln ρ` of the MALA move `current → proposal`, clipped at 0.
///
/// Returns `-∞` when the proposal potential or gradient is not finite.
#[allow(clippy::too_many_arguments)]
pub fn mala_log_acceptance(
    proposal: &[f64],
    current: &[f64],
    v_proposal: f64,
    v_current: f64,
    grad_proposal: &[f64],
    grad_current: &[f64],
    tau: f64,
) -> f64 {
    if !v_proposal.is_finite() || grad_proposal.iter().any(|g| !g.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let log_ratio = (v_current - v_proposal) + log_proposal(current, proposal, grad_proposal, tau)
        - log_proposal(proposal, current, grad_current, tau);
    if log_ratio.is_nan() {
        f64::NEG_INFINITY
    } else {
        log_ratio.min(0.0)
    }
}

/// `ρ = min{1, exp(...)}` in `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn mala_acceptance(
    proposal: &[f64],
    current: &[f64],
    v_proposal: f64,
    v_current: f64,
    grad_proposal: &[f64],
    grad_current: &[f64],
    tau: f64,
) -> f64 {
    mala_log_acceptance(
        proposal,
        current,
        v_proposal,
        v_current,
        grad_proposal,
        grad_current,
        tau,
    )
    .exp()
}

/// `ρ` if `proposal ∈ Θ_c`, else 0.
pub fn constrained_acceptance(rho: f64, proposal: &ParameterVector, constraint: &BoxConstraint) -> Result<f64> {
    Ok(if constraint.contains(proposal)? { rho } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub constraint: BoxConstraint,
    pub gradient_mode: GradientMode,
    pub one_point: OnePointConfig,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults: burn-in `N/10`, analytic gradients, single-direction one-point
    /// estimator with `δ = 1e-3 ·` the smallest constraint width.
    pub fn new(constraint: BoxConstraint, step_size: f64, iterations: usize, seed: u64) -> Self {
        let delta = 1e-3 * constraint.min_width();
        Self {
            step_size,
            iterations,
            burn_in: iterations / 10,
            one_point: OnePointConfig {
                delta,
                direction_draws: 1,
            },
            constraint,
            gradient_mode: GradientMode::AnalyticTrace,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be finite and positive, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.one_point.delta > 0.0) || self.one_point.direction_draws == 0 {
            return Err(Error::Config("invalid one-point configuration".into()));
        }
        Ok(())
    }
}

/// Current chain position with its cached potential evaluation.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub position: ParameterVector,
    pub potential: PotentialEvaluation,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Positions `θ_{n+1}` for `n >= burn_in`.
    pub samples: Vec<ParameterVector>,
    pub accept_count: usize,
    pub proposal_count: usize,
    pub rejected_out_of_bounds: usize,
    /// Proposals rejected because the potential could not be evaluated
    /// (singular or failed FIM estimate).
    pub rejected_evaluation: usize,
    pub seed: u64,
}

impl ChainResult {
    pub fn acceptance_rate(&self) -> f64 {
        self.accept_count as f64 / self.proposal_count.max(1) as f64
    }

    /// Trace of coordinate `j`.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    pub fn all_within(&self, constraint: &BoxConstraint) -> bool {
        self.samples
            .iter()
            .all(|s| constraint.contains(s).unwrap_or(false))
    }
}

const NOISE_STREAM: u64 = 0;
const UNIFORM_STREAM: u64 = 1;
const POTENTIAL_STREAM: u64 = 2;

/// Runs the constrained MALA chain.
///
/// `theta0` defaults to the center of the constraint box. The potential at the
/// current state is evaluated once per accepted move and reused, including its
/// (possibly noisy) value, until the next acceptance.
pub fn run_chain<P: FimProvider + ?Sized>(
    cfg: &SamplerConfig,
    theta0: Option<ParameterVector>,
    provider: &P,
) -> Result<ChainResult> {
    cfg.validate()?;
    let constraint = &cfg.constraint;
    ensure!(
        provider.dim() == constraint.dim(),
        "provider dim {} does not match constraint dim {}",
        provider.dim(),
        constraint.dim()
    );
    ensure!(
        provider.domain().contains_box(constraint),
        "provider domain must contain the constraint box"
    );
    let theta0 = theta0.unwrap_or_else(|| constraint.center());
    ensure!(
        constraint.contains(&theta0)?,
        "initial state {theta0} is outside the constraint"
    );

    let root = RandomStream::from_seed(cfg.seed);
    let mut noise = root.split(NOISE_STREAM);
    let mut uniforms = root.split(UNIFORM_STREAM);
    let evals = root.split(POTENTIAL_STREAM);
    let tau = cfg.step_size;
    let d = constraint.dim();

    let initial = evaluate_potential(
        provider,
        &theta0,
        cfg.gradient_mode,
        &cfg.one_point,
        &mut evals.split(0),
    )
    .map_err(|e| Error::Initialization(Box::new(e)))?;
    let mut state = ChainState {
        position: theta0,
        potential: initial,
        iteration: 0,
    };

    let mut samples = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    let mut accept_count = 0;
    let mut rejected_out_of_bounds = 0;
    let mut rejected_evaluation = 0;
    let mut xi = vec![0.0; d];

    for n in 0..cfg.iterations {
        xi.iter_mut().for_each(|x| *x = noise.standard_normal());
        let log_u = uniforms.uniform_open().ln();
        let proposal = ula_step(state.position.as_slice(), &state.potential.gradient, tau, &xi);

        let mut accepted = None;
        if constraint.contains_slice(&proposal) {
            let proposal = ParameterVector::new(proposal)?;
            match evaluate_potential(
                provider,
                &proposal,
                cfg.gradient_mode,
                &cfg.one_point,
                &mut evals.split(n as u64 + 1),
            ) {
                Ok(ev) => {
                    let log_rho = mala_log_acceptance(
                        proposal.as_slice(),
                        state.position.as_slice(),
                        ev.value,
                        state.potential.value,
                        &ev.gradient,
                        &state.potential.gradient,
                        tau,
                    );
                    if log_u < log_rho {
                        accepted = Some((proposal, ev));
                    }
                }
                Err(e) if e.is_proposal_rejection() => rejected_evaluation += 1,
                Err(e) => return Err(e),
            }
        } else {
            rejected_out_of_bounds += 1;
        }

        if let Some((position, potential)) = accepted {
            accept_count += 1;
            state.position = position;
            state.potential = potential;
        }
        state.iteration = n + 1;
        if n >= cfg.burn_in {
            samples.push(state.position.clone());
        }
    }

    Ok(ChainResult {
        samples,
        accept_count,
        proposal_count: cfg.iterations,
        rejected_out_of_bounds,
        rejected_evaluation,
        seed: cfg.seed,
    })
}

/// Seed of realization `index` under `master`; independent of scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    RandomStream::from_seed(master).split(index).next_u64()
}

/// Runs `count` independent chains with seeds `derive_seed(cfg.seed, i)`,
/// in parallel, returned in index order.
pub fn run_chains<P: FimProvider + ?Sized>(
    cfg: &SamplerConfig,
    count: usize,
    theta0: Option<ParameterVector>,
    provider: &P,
) -> Result<Vec<ChainResult>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = derive_seed(cfg.seed, i as u64);
            run_chain(&c, theta0.clone(), provider)
        })
        .collect()
}
