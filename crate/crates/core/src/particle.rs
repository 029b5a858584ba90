//! Score and Fisher information for scalar nonlinear state-space models.
//!
//! A bootstrap particle filter with systematic resampling at every step is run
//! forward; the marginal forward-filtering backward-smoothing (FFBSm)
//! recursion
//!
//! ```text
//! w_{t|T}^i = w_t^i Σ_j w_{t+1|T}^j f(x_{t+1}^j | x_t^i) / Σ_l w_t^l f(x_{t+1}^j | x_t^l)
//! ```
//!
//! reweights the forward particles, and the score follows from the Fisher
//! identity as the smoothed expectation of the complete-data score. The
//! pairwise weights needed for the transition terms are formed on the fly and
//! never stored. The FIM is the average outer product of such scores over
//! independently simulated datasets, divided by the series length.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::fim::{FimProvider, FimSource, FisherMatrix};
use crate::model::{BoxConstraint, ObservationBatch, ParameterVector, ScoreVector};
use crate::rng::RandomStream;

/// Scalar-state model `x₀ ~ μ(·;θ)`, `x_{t+1} ~ f(·|x_t, u_t; θ)`,
/// `y_t ~ g(·|x_t; θ)`.
///
/// Score methods *accumulate* `weight · ∇_θ ln density` into `out`.
pub trait NlssModel: Sync {
    fn dim(&self) -> usize;

    /// Parameter box on which the model is valid.
    fn domain(&self) -> &BoxConstraint;

    /// Rejects parameters for which the model is undefined.
    fn check_params(&self, theta: &[f64]) -> Result<()>;

    fn sample_initial(&self, theta: &[f64], rng: &mut RandomStream) -> f64;
    fn sample_transition(&self, x: f64, u: f64, theta: &[f64], rng: &mut RandomStream) -> f64;
    fn sample_observation(&self, x: f64, theta: &[f64], rng: &mut RandomStream) -> f64;

    /// Exogenous input draw; models without inputs never call the stream.
    fn sample_input(&self, _rng: &mut RandomStream) -> Option<f64> {
        None
    }

    fn initial_logdensity(&self, x0: f64, theta: &[f64]) -> f64;
    fn transition_logdensity(&self, x_next: f64, x: f64, u: f64, theta: &[f64]) -> f64;
    fn observation_logdensity(&self, y: f64, x: f64, theta: &[f64]) -> f64;

    fn add_initial_score(&self, x0: f64, theta: &[f64], weight: f64, out: &mut [f64]);
    fn add_transition_score(&self, x_next: f64, x: f64, u: f64, theta: &[f64], weight: f64, out: &mut [f64]);
    fn add_observation_score(&self, y: f64, x: f64, theta: &[f64], weight: f64, out: &mut [f64]);

    /// `Some` when the transition is `N(slope·x + offset, variance)`; enables a
    /// faster backward pass. Must agree with `transition_logdensity`.
    fn gaussian_transition(&self, _u: f64, _theta: &[f64]) -> Option<GaussianTransition> {
        None
    }

    /// `out += scale · Σᵢ weights[i] · ∇_θ ln f(x_next | xs[i], u; θ)`.
    #[allow(clippy::too_many_arguments)]
    fn add_transition_score_row(
        &self,
        x_next: f64,
        xs: &[f64],
        u: f64,
        theta: &[f64],
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        for (&w, &x) in weights.iter().zip(xs) {
            self.add_transition_score(x_next, x, u, theta, scale * w, out);
        }
    }

    fn transition_score(&self, x_next: f64, x: f64, u: f64, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_transition_score(x_next, x, u, theta, 1.0, &mut out);
        out
    }

    /// One trajectory `y_0..y_{T-1}` with its inputs `u_0..u_{T-1}`.
    ///
    /// Every step consumes the same number of draws, so nearby parameters
    /// replayed on the same stream give smoothly varying data.
    fn simulate(&self, theta: &[f64], steps: usize, rng: &mut RandomStream) -> Result<ObservationBatch> {
        ensure!(steps >= 1, "need at least one time step");
        self.check_params(theta)?;
        let mut ys = Vec::with_capacity(steps);
        let mut us = Vec::with_capacity(steps);
        let mut x = self.sample_initial(theta, rng);
        for _ in 0..steps {
            ys.push(self.sample_observation(x, theta, rng));
            let u = self.sample_input(rng);
            if let Some(u) = u {
                us.push(u);
            }
            x = self.sample_transition(x, u.unwrap_or(0.0), theta, rng);
        }
        let batch = ObservationBatch::scalars(ys)?;
        if us.is_empty() {
            Ok(batch)
        } else {
            batch.with_inputs(us, 1)
        }
    }
}

/// Linear-Gaussian transition `x_{t+1} ~ N(slope·x_t + offset, variance)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianTransition {
    pub slope: f64,
    pub offset: f64,
    pub variance: f64,
}

fn input_at(y: &ObservationBatch, t: usize) -> f64 {
    y.inputs().map_or(0.0, |u| u[t])
}

/// Forward particle cloud: states, normalized filter weights, and the
/// resampling ancestors of each row (row 0 has identity ancestors).
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    n_particles: usize,
    n_steps: usize,
    particles: Vec<f64>,
    weights: Vec<f64>,
    ancestors: Vec<usize>,
    loglik: f64,
}

impl ParticleSystem {
    /// Builds a system from explicit rows (used for hand-checked cases).
    pub fn from_rows(particles: Vec<Vec<f64>>, weights: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(!particles.is_empty(), "need at least one time step");
        let n = particles[0].len();
        ensure!(n >= 1, "need at least one particle");
        ensure!(
            particles.len() == weights.len()
                && particles.iter().zip(&weights).all(|(p, w)| p.len() == n && w.len() == n),
            "particle and weight rows must have matching shapes"
        );
        for w in &weights {
            let s: f64 = w.iter().sum();
            ensure!(
                w.iter().all(|v| *v >= 0.0) && (s - 1.0).abs() < 1e-10,
                "weight rows must be nonnegative and sum to one"
            );
        }
        let n_steps = particles.len();
        Ok(Self {
            n_particles: n,
            n_steps,
            particles: particles.concat(),
            weights: weights.concat(),
            ancestors: (0..n_steps).flat_map(|_| 0..n).collect(),
            loglik: f64::NAN,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn particles(&self, t: usize) -> &[f64] {
        &self.particles[t * self.n_particles..(t + 1) * self.n_particles]
    }

    pub fn weights(&self, t: usize) -> &[f64] {
        &self.weights[t * self.n_particles..(t + 1) * self.n_particles]
    }

    pub fn ancestors(&self, t: usize) -> &[usize] {
        &self.ancestors[t * self.n_particles..(t + 1) * self.n_particles]
    }

    /// `Σ_t ln((1/N) Σ_i ŵ_t^i)` with unnormalized weights `ŵ`.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }
}

/// Systematic resampling with a single uniform `u ∈ [0, 1)`.
pub fn systematic_resample(weights: &[f64], u: f64, out: &mut [usize]) {
    let n = out.len();
    let step = 1.0 / n as f64;
    let mut cum = weights[0];
    let mut j = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let pos = (u + i as f64) * step;
        while pos >= cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        *slot = j;
    }
}

/// Normalizes log-weights in place into `weights`; returns `ln mean(exp(logw))`.
fn normalize_log_weights(logw: &[f64], weights: &mut [f64], t: usize) -> Result<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateFilter { t });
    }
    let mut sum = 0.0;
    for (w, lw) in weights.iter_mut().zip(logw) {
        *w = (lw - max).exp();
        sum += *w;
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(max + (sum / logw.len() as f64).ln())
}

/// Bootstrap filter: transition as proposal, observation density as weight,
/// systematic resampling at every step.
pub fn bootstrap_filter<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    y: &ObservationBatch,
    n_particles: usize,
    rng: &mut RandomStream,
) -> Result<ParticleSystem> {
    ensure!(n_particles >= 2, "bootstrap filter needs at least two particles");
    ensure!(y.obs_dim() == 1, "scalar observations expected");
    model.check_params(theta)?;
    let n_steps = y.len();
    let ys = y.values();
    let mut particles = vec![0.0; n_steps * n_particles];
    let mut weights = vec![0.0; n_steps * n_particles];
    let mut ancestors = vec![0usize; n_steps * n_particles];
    let mut logw = vec![0.0; n_particles];
    let mut loglik = 0.0;

    for (i, a) in ancestors[..n_particles].iter_mut().enumerate() {
        *a = i;
    }
    for (x, lw) in particles[..n_particles].iter_mut().zip(logw.iter_mut()) {
        *x = model.sample_initial(theta, rng);
        *lw = model.observation_logdensity(ys[0], *x, theta);
    }
    loglik += normalize_log_weights(&logw, &mut weights[..n_particles], 0)?;

    for t in 1..n_steps {
        let (prev, cur) = particles.split_at_mut(t * n_particles);
        let prev = &prev[(t - 1) * n_particles..];
        let cur = &mut cur[..n_particles];
        let prev_w = &weights[(t - 1) * n_particles..t * n_particles];
        let anc = &mut ancestors[t * n_particles..(t + 1) * n_particles];
        systematic_resample(prev_w, rng.uniform(), anc);
        let u = input_at(y, t - 1);
        for ((x, lw), &a) in cur.iter_mut().zip(logw.iter_mut()).zip(anc.iter()) {
            *x = model.sample_transition(prev[a], u, theta, rng);
            *lw = model.observation_logdensity(ys[t], *x, theta);
        }
        loglik += normalize_log_weights(&logw, &mut weights[t * n_particles..(t + 1) * n_particles], t)?;
    }

    Ok(ParticleSystem {
        n_particles,
        n_steps,
        particles,
        weights,
        ancestors,
        loglik,
    })
}

/// Marginal smoothing weights `w_{t|T}`, one row per time step.
#[derive(Clone, Debug)]
pub struct SmoothedWeights {
    n_particles: usize,
    marginal: Vec<f64>,
}

impl SmoothedWeights {
    pub fn marginal(&self, t: usize) -> &[f64] {
        &self.marginal[t * self.n_particles..(t + 1) * self.n_particles]
    }

    pub fn n_steps(&self) -> usize {
        self.marginal.len() / self.n_particles
    }
}

/// Scratch buffers for one backward step.
struct BackwardScratch {
    row: Vec<f64>,
    log_weights: Vec<f64>,
}

impl BackwardScratch {
    fn new(n: usize) -> Self {
        Self {
            row: vec![0.0; n],
            log_weights: vec![0.0; n],
        }
    }
}

/// Terms below `e^{LOG_CUTOFF}` relative to the largest term in a row are
/// dropped; this keeps the kernel clear of subnormal arithmetic.
const LOG_CUTOFF: f64 = -600.0;

pub(crate) const LANES: usize = 4;

/// Maximum with a fixed lane-split reduction order.
pub(crate) fn lane_max(xs: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; LANES];
    let chunks = xs.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..LANES {
            acc[k] = acc[k].max(c[k]);
        }
    }
    rest.iter().fold(acc.iter().copied().fold(f64::NEG_INFINITY, f64::max), |m, v| m.max(*v))
}

/// Sum with a fixed lane-split reduction order.
pub(crate) fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = xs.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..LANES {
            acc[k] += c[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest.iter().sum::<f64>()
}

/// `exp(x)` for `x <= 0`, branch-free so that row loops vectorize.
/// Relative error below 1e-15; inputs below `LOG_CUTOFF` give exactly 0.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let keep = x >= LOG_CUTOFF;
    let x = x.max(LOG_CUTOFF);
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Degree-12 Taylor polynomial in Estrin form (short dependency chains).
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let a0 = 1.0 + r;
    let a1 = 0.5 + r * (1.0 / 6.0);
    let a2 = 1.0 / 24.0 + r * (1.0 / 120.0);
    let a3 = 1.0 / 720.0 + r * (1.0 / 5_040.0);
    let a4 = 1.0 / 40_320.0 + r * (1.0 / 362_880.0);
    let a5 = 1.0 / 3_628_800.0 + r * (1.0 / 39_916_800.0);
    let b0 = a0 + a1 * r2;
    let b1 = a2 + a3 * r2;
    let b2 = a4 + a5 * r2;
    let c0 = b0 + b1 * r4;
    let c1 = b2 + (1.0 / 479_001_600.0) * r4;
    let p = c0 + c1 * r8;
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    let v = p * f64::from_bits(((k + 1023) as u64) << 52);
    if keep {
        v
    } else {
        0.0
    }
}

/// Turns a row of log terms into `exp(row + lw - max)` in place and returns
/// the row sum, or `None` when every term is `-inf`.
#[inline(always)]
fn exp_row_portable(row: &mut [f64], lw: &[f64]) -> Option<f64> {
    for (v, &l) in row.iter_mut().zip(lw) {
        *v += l;
    }
    let max = lane_max(row);
    if !max.is_finite() {
        return None;
    }
    for v in row.iter_mut() {
        *v = exp_nonpositive(*v - max);
    }
    Some(lane_sum(row))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn exp_row_avx2(row: &mut [f64], lw: &[f64]) -> Option<f64> {
    exp_row_portable(row, lw)
}

/// Same arithmetic on every path (no fused multiply-add), so results do not
/// depend on which instruction set is available.
fn exp_row(row: &mut [f64], lw: &[f64]) -> Option<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { exp_row_avx2(row, lw) };
    }
    exp_row_portable(row, lw)
}

/// Log transition densities from every particle in `xs` to `x_next`, up to an
/// additive constant shared by the row.
#[inline]
fn transition_log_row<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x_next: f64,
    xs: &[f64],
    u: f64,
    out: &mut [f64],
) {
    if let Some(g) = model.gaussian_transition(u, theta) {
        let k = 0.5 / g.variance;
        let target = x_next - g.offset;
        for (o, &x) in out.iter_mut().zip(xs) {
            let z = target - g.slope * x;
            *o = -k * z * z;
        }
    } else {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = model.transition_logdensity(x_next, x, u, theta);
        }
    }
}

/// One step of the backward pass between rows `t` and `t + 1`.
///
/// Given `w_{t+1|T}`, optionally writes `w_{t|T}` and optionally accumulates the
/// pairwise-smoothed transition score.
#[allow(clippy::too_many_arguments)]
fn backward_step<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    ps: &ParticleSystem,
    t: usize,
    u: f64,
    next_marginal: &[f64],
    mut marginal_out: Option<&mut [f64]>,
    mut score_out: Option<&mut [f64]>,
    scratch: &mut BackwardScratch,
) -> Result<()> {
    let xs = ps.particles(t);
    let ws = ps.weights(t);
    let xs_next = ps.particles(t + 1);
    let row = &mut scratch.row;
    let lw = &mut scratch.log_weights;
    for (l, &w) in lw.iter_mut().zip(ws) {
        *l = w.ln();
    }
    if let Some(m) = marginal_out.as_deref_mut() {
        m.iter_mut().for_each(|v| *v = 0.0);
    }
    for (&x_next, &w_next) in xs_next.iter().zip(next_marginal) {
        if w_next == 0.0 {
            continue;
        }
        // Terms w·f relative to their max, so that far-apart clouds cannot
        // underflow the whole row.
        transition_log_row(model, theta, x_next, xs, u, row);
        let denom = exp_row(row, lw).ok_or(Error::DegenerateSmoother { t })?;
        if !(denom > 0.0) {
            return Err(Error::DegenerateSmoother { t });
        }
        let coef = w_next / denom;
        if let Some(m) = marginal_out.as_deref_mut() {
            for (mi, &v) in m.iter_mut().zip(row.iter()) {
                *mi += v * coef;
            }
        }
        if let Some(s) = score_out.as_deref_mut() {
            model.add_transition_score_row(x_next, xs, u, theta, row, coef, s);
        }
    }
    Ok(())
}

fn check_system(ps: &ParticleSystem, y: &ObservationBatch) -> Result<()> {
    ensure!(
        ps.n_steps() == y.len(),
        "particle system has {} steps but data has {}",
        ps.n_steps(),
        y.len()
    );
    Ok(())
}

/// Full backward pass; returns the marginal smoothing weights and, if
/// requested, accumulates the transition part of the score.
fn backward_pass<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    ps: &ParticleSystem,
    y: &ObservationBatch,
    mut score: Option<&mut [f64]>,
) -> Result<SmoothedWeights> {
    let n = ps.n_particles();
    let steps = ps.n_steps();
    let mut marginal = vec![0.0; steps * n];
    marginal[(steps - 1) * n..].copy_from_slice(ps.weights(steps - 1));
    let mut scratch = BackwardScratch::new(n);
    for t in (0..steps.saturating_sub(1)).rev() {
        let (head, tail) = marginal.split_at_mut((t + 1) * n);
        backward_step(
            model,
            theta,
            ps,
            t,
            input_at(y, t),
            &tail[..n],
            Some(&mut head[t * n..]),
            score.as_deref_mut(),
            &mut scratch,
        )?;
    }
    Ok(SmoothedWeights {
        n_particles: n,
        marginal,
    })
}

/// FFBSm marginal smoothing weights.
pub fn ffbsm_smooth<M: NlssModel + ?Sized>(
    ps: &ParticleSystem,
    model: &M,
    theta: &[f64],
    y: &ObservationBatch,
) -> Result<SmoothedWeights> {
    check_system(ps, y)?;
    backward_pass(model, theta, ps, y, None)
}

fn add_marginal_terms<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    ps: &ParticleSystem,
    sw: &SmoothedWeights,
    y: &ObservationBatch,
    out: &mut [f64],
) {
    let ys = y.values();
    for (&x, &w) in ps.particles(0).iter().zip(sw.marginal(0)) {
        model.add_initial_score(x, theta, w, out);
    }
    for t in 0..ps.n_steps() {
        for (&x, &w) in ps.particles(t).iter().zip(sw.marginal(t)) {
            model.add_observation_score(ys[t], x, theta, w, out);
        }
    }
}

/// Fisher-identity score `Σ_t E[∇ln f + ∇ln g] + E[∇ln μ]` under the smoothed
/// marginals and (recomputed) pairwise weights.
pub fn fisher_identity_score<M: NlssModel + ?Sized>(
    sw: &SmoothedWeights,
    ps: &ParticleSystem,
    model: &M,
    theta: &[f64],
    y: &ObservationBatch,
) -> Result<ScoreVector> {
    check_system(ps, y)?;
    ensure!(
        sw.n_steps() == ps.n_steps() && sw.n_particles == ps.n_particles(),
        "smoothed weights do not match the particle system"
    );
    let mut out = vec![0.0; model.dim()];
    let mut scratch = BackwardScratch::new(ps.n_particles());
    for t in 0..ps.n_steps().saturating_sub(1) {
        backward_step(
            model,
            theta,
            ps,
            t,
            input_at(y, t),
            sw.marginal(t + 1),
            None,
            Some(&mut out),
            &mut scratch,
        )?;
    }
    add_marginal_terms(model, theta, ps, sw, y, &mut out);
    ScoreVector::new(out)
}

/// Filter, smooth and score in one backward sweep.
pub fn particle_score<M: NlssModel + ?Sized>(
    model: &M,
    theta: &[f64],
    y: &ObservationBatch,
    n_particles: usize,
    rng: &mut RandomStream,
) -> Result<(ScoreVector, f64)> {
    let ps = bootstrap_filter(model, theta, y, n_particles, rng)?;
    let mut out = vec![0.0; model.dim()];
    let sw = backward_pass(model, theta, &ps, y, Some(&mut out))?;
    add_marginal_terms(model, theta, &ps, &sw, y, &mut out);
    Ok((ScoreVector::new(out)?, ps.loglik()))
}

/// `(1/M) Σ_m s_m s_mᵀ / T` over `runs` datasets simulated at `theta`.
///
/// Runs whose filter or smoother degenerates are dropped; more than half
/// dropped is an `EstimationFailed` error. Run `r` uses `rng.split(r)`, so the
/// result does not depend on how runs are scheduled.
pub fn pf_fim_estimate<M: NlssModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    steps: usize,
    n_particles: usize,
    runs: usize,
    rng: &mut RandomStream,
) -> Result<FisherMatrix> {
    ensure!(runs >= 1, "need at least one Monte Carlo run");
    ensure!(theta.dim() == model.dim(), "parameter dimension mismatch");
    let base = rng.fork();
    let th = theta.as_slice();
    let scores: Vec<Option<ScoreVector>> = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<Option<ScoreVector>> {
            let stream = base.split(r as u64);
            let data = model.simulate(th, steps, &mut stream.split(0))?;
            match particle_score(model, th, &data, n_particles, &mut stream.split(1)) {
                Ok((s, _)) => Ok(Some(s)),
                Err(Error::DegenerateFilter { .. } | Error::DegenerateSmoother { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&ScoreVector> = scores.iter().flatten().collect();
    let dropped = runs - kept.len();
    if 2 * dropped > runs || kept.is_empty() {
        return Err(Error::EstimationFailed { dropped, total: runs });
    }
    let d = model.dim();
    let mut acc = nalgebra::DMatrix::<f64>::zeros(d, d);
    for s in &kept {
        let v = nalgebra::DVector::from_column_slice(s.as_slice());
        acc += &v * v.transpose();
    }
    FisherMatrix::new(acc / (kept.len() * steps) as f64, FimSource::ParticleFilter)
}

/// FIM provider backed by `pf_fim_estimate`.
#[derive(Clone, Debug)]
pub struct ParticleFim<M> {
    pub model: M,
    pub steps: usize,
    pub n_particles: usize,
    pub runs: usize,
}

impl<M: NlssModel> FimProvider for ParticleFim<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn domain(&self) -> &BoxConstraint {
        self.model.domain()
    }

    fn fim(&self, theta: &ParameterVector, rng: &mut RandomStream) -> Result<FisherMatrix> {
        pf_fim_estimate(&self.model, theta, self.steps, self.n_particles, self.runs, rng)
    }
}

/// PF-FIM estimates of a one-parameter model on a grid of points.
#[derive(Clone, Debug, PartialEq)]
pub struct FimGrid {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
}

/// `pf_fim_estimate` at each grid point. Every point replays the same stream,
/// so the curve is estimated with common random numbers.
pub fn pf_fim_grid<M: NlssModel + ?Sized>(
    model: &M,
    points: &[f64],
    steps: usize,
    n_particles: usize,
    runs: usize,
    rng: &mut RandomStream,
) -> Result<FimGrid> {
    ensure!(model.dim() == 1, "FIM grids are for one-parameter models");
    ensure!(!points.is_empty(), "grid needs at least one point");
    let base = rng.fork();
    let values = points
        .iter()
        .map(|&p| {
            let theta = ParameterVector::scalar(p)?;
            let fim = pf_fim_estimate(model, &theta, steps, n_particles, runs, &mut base.clone())?;
            Ok(fim.get(0, 0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FimGrid {
        points: points.to_vec(),
        values,
    })
}

/// `n` equispaced points covering `[lo, hi]`.
pub fn equispaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Smooth scalar information curve `J(θ) = exp(p(θ))`, with `p` the
/// least-squares polynomial fit of `ln Ĵ` over a grid.
#[derive(Clone, Debug)]
pub struct SmoothedFim {
    domain: BoxConstraint,
    center: f64,
    half_width: f64,
    coeffs: Vec<f64>,
    grid: FimGrid,
}

impl SmoothedFim {
    pub fn fit(grid: FimGrid, degree: usize, domain: BoxConstraint) -> Result<Self> {
        ensure!(domain.dim() == 1, "smoothed FIM curves are one-dimensional");
        ensure!(
            grid.points.len() > degree,
            "degree {degree} needs more than {degree} grid points"
        );
        if let Some(v) = grid.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::SingularFim(format!("grid FIM value {v} is not positive")));
        }
        let (lo, hi) = grid
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
        let center = 0.5 * (lo + hi);
        let half_width = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let n = grid.points.len();
        let design = nalgebra::DMatrix::from_fn(n, degree + 1, |i, k| {
            ((grid.points[i] - center) / half_width).powi(k as i32)
        });
        let rhs = nalgebra::DVector::from_iterator(n, grid.values.iter().map(|v| v.ln()));
        let coeffs = design
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::SingularFim(format!("polynomial fit failed: {e}")))?;
        Ok(Self {
            domain,
            center,
            half_width,
            coeffs: coeffs.iter().copied().collect(),
            grid,
        })
    }

    pub fn grid(&self) -> &FimGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `(ln J, d ln J/dθ)` at `theta`.
    pub fn log_value_and_slope(&self, theta: f64) -> (f64, f64) {
        let s = (theta - self.center) / self.half_width;
        let mut value = 0.0;
        let mut slope = 0.0;
        for &c in self.coeffs.iter().rev() {
            slope = slope * s + value;
            value = value * s + c;
        }
        (value, slope / self.half_width)
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.log_value_and_slope(theta).0.exp()
    }
}

impl FimProvider for SmoothedFim {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn fim(&self, theta: &ParameterVector, _rng: &mut RandomStream) -> Result<FisherMatrix> {
        FisherMatrix::scalar(self.value(theta[0]), FimSource::ParticleFilter)
    }

    fn fim_derivatives(
        &self,
        theta: &ParameterVector,
        _rng: &mut RandomStream,
    ) -> Result<Vec<nalgebra::DMatrix<f64>>> {
        let (lv, slope) = self.log_value_and_slope(theta[0]);
        Ok(vec![nalgebra::DMatrix::from_element(1, 1, lv.exp() * slope)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Random walk with unit-variance steps observed in Gaussian noise; the
    /// single parameter scales the observation noise.
    struct Toy {
        domain: BoxConstraint,
        obs_sd: f64,
        flat_transition: bool,
    }

    impl NlssModel for Toy {
        fn dim(&self) -> usize {
            1
        }
        fn domain(&self) -> &BoxConstraint {
            &self.domain
        }
        fn check_params(&self, _theta: &[f64]) -> Result<()> {
            Ok(())
        }
        fn sample_initial(&self, _t: &[f64], rng: &mut RandomStream) -> f64 {
            rng.standard_normal()
        }
        fn sample_transition(&self, x: f64, _u: f64, _t: &[f64], rng: &mut RandomStream) -> f64 {
            x + rng.standard_normal()
        }
        fn sample_observation(&self, x: f64, _t: &[f64], rng: &mut RandomStream) -> f64 {
            x + self.obs_sd * rng.standard_normal()
        }
        fn initial_logdensity(&self, x0: f64, _t: &[f64]) -> f64 {
            -0.5 * x0 * x0
        }
        fn transition_logdensity(&self, xn: f64, x: f64, _u: f64, _t: &[f64]) -> f64 {
            if self.flat_transition {
                0.0
            } else {
                -0.5 * (xn - x).powi(2)
            }
        }
        fn observation_logdensity(&self, y: f64, x: f64, _t: &[f64]) -> f64 {
            -0.5 * ((y - x) / self.obs_sd).powi(2)
        }
        fn add_initial_score(&self, _x0: f64, _t: &[f64], _w: f64, _out: &mut [f64]) {}
        fn add_transition_score(&self, xn: f64, x: f64, _u: f64, _t: &[f64], w: f64, out: &mut [f64]) {
            out[0] += w * (xn - x);
        }
        fn add_observation_score(&self, _y: f64, _x: f64, _t: &[f64], _w: f64, _out: &mut [f64]) {}
    }

    fn toy(obs_sd: f64, flat: bool) -> Toy {
        Toy {
            domain: BoxConstraint::interval(-1.0, 1.0).unwrap(),
            obs_sd,
            flat_transition: flat,
        }
    }

    #[test]
    fn smoothed_curve_reproduces_log_polynomials() {
        let points = equispaced(0.3, 0.9, 13);
        let values: Vec<f64> = points.iter().map(|p| (1.0 - 2.0 * p + 0.5 * p * p * p).exp()).collect();
        let fit = SmoothedFim::fit(FimGrid { points, values }, 3, BoxConstraint::interval(0.29, 0.91).unwrap())
            .unwrap();
        for &p in &[0.3, 0.47, 0.9] {
            let (lv, slope) = fit.log_value_and_slope(p);
            assert_relative_eq!(lv, 1.0 - 2.0 * p + 0.5 * p * p * p, epsilon = 1e-10);
            assert_relative_eq!(slope, -2.0 + 1.5 * p * p, epsilon = 1e-9);
        }
    }

    #[test]
    fn smoothed_curve_rejects_bad_grids() {
        let g = FimGrid {
            points: vec![0.3, 0.6, 0.9],
            values: vec![1.0, -1.0, 2.0],
        };
        let dom = BoxConstraint::interval(0.3, 0.9).unwrap();
        assert!(matches!(SmoothedFim::fit(g.clone(), 1, dom.clone()), Err(Error::SingularFim(_))));
        assert!(matches!(SmoothedFim::fit(g, 3, dom), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        for i in 0..=200_000 {
            let x = LOG_CUTOFF * i as f64 / 200_000.0;
            let rel = (exp_nonpositive(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(exp_nonpositive(LOG_CUTOFF - 1e-9), 0.0);
        assert_eq!(exp_nonpositive(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn lane_reductions_match_sequential() {
        for n in [0usize, 1, 3, 4, 5, 17, 1000] {
            let xs: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
            assert_eq!(lane_sum(&xs), xs.iter().sum::<f64>());
            assert_eq!(lane_max(&xs), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn systematic_resampling_counts() {
        let mut out = vec![0; 4];
        systematic_resample(&[0.5, 0.25, 0.25, 0.0], 0.5, &mut out);
        assert_eq!(out, vec![0, 0, 1, 2]);
        systematic_resample(&[0.0, 0.0, 1.0, 0.0], 0.99, &mut out);
        assert_eq!(out, vec![2, 2, 2, 2]);
    }

    #[test]
    fn systematic_resampling_preserves_expectation() {
        // Weighted mean of a test function before resampling vs. unweighted mean
        // after, over 1000 repeats.
        let mut rng = RandomStream::from_seed(4);
        let n = 50;
        let mut diffs = Vec::new();
        for _ in 0..1000 {
            let xs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let before: f64 = xs.iter().zip(&w).map(|(x, w)| x.sin() * w).sum();
            let mut idx = vec![0; n];
            systematic_resample(&w, rng.uniform(), &mut idx);
            let after: f64 = idx.iter().map(|&i| xs[i].sin()).sum::<f64>() / n as f64;
            diffs.push(after - before);
        }
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        assert!(m.abs() < 3.0 * sd / (diffs.len() as f64).sqrt());
    }

    #[test]
    fn filter_rejects_single_particle() {
        let m = toy(1.0, false);
        let y = ObservationBatch::scalars(vec![0.0; 3]).unwrap();
        let r = bootstrap_filter(&m, &[0.0], &y, 1, &mut RandomStream::from_seed(1));
        assert!(matches!(r, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn sharp_likelihood_concentrates_weight() {
        let m = toy(1e-3, false);
        let y = ObservationBatch::scalars(vec![0.3]).unwrap();
        let ps = bootstrap_filter(&m, &[0.0], &y, 200, &mut RandomStream::from_seed(2)).unwrap();
        let w = ps.weights(0);
        let max = w.iter().copied().fold(0.0, f64::max);
        assert!(max > 0.99, "max weight {max}");
    }

    #[test]
    fn weight_rows_are_normalized() {
        let m = toy(0.5, false);
        let y = m.simulate(&[0.0], 30, &mut RandomStream::from_seed(3)).unwrap();
        let ps = bootstrap_filter(&m, &[0.0], &y, 100, &mut RandomStream::from_seed(4)).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
        for t in 0..ps.n_steps() {
            assert!((ps.weights(t).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(ps.weights(t).iter().all(|w| *w >= 0.0));
            assert!((sw.marginal(t).iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_step_smoother_is_the_filter() {
        let m = toy(0.5, false);
        let y = ObservationBatch::scalars(vec![0.2]).unwrap();
        let ps = bootstrap_filter(&m, &[0.0], &y, 50, &mut RandomStream::from_seed(5)).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
        assert_eq!(sw.marginal(0), ps.weights(0));
    }

    #[test]
    fn flat_transition_leaves_filter_weights() {
        let m = toy(0.7, true);
        let y = m.simulate(&[0.0], 10, &mut RandomStream::from_seed(6)).unwrap();
        let ps = bootstrap_filter(&m, &[0.0], &y, 40, &mut RandomStream::from_seed(7)).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
        for t in 0..ps.n_steps() {
            for (a, b) in sw.marginal(t).iter().zip(ps.weights(t)) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn two_particle_hand_recursion() {
        // Rows t = 0, 1 with f(x'|x) ∝ exp(-(x'-x)²/2).
        let m = toy(1.0, false);
        let x0 = vec![0.0, 1.0];
        let x1 = vec![0.5, 2.0];
        let w0 = vec![0.3, 0.7];
        let w1 = vec![0.6, 0.4];
        let ps = ParticleSystem::from_rows(vec![x0.clone(), x1.clone()], vec![w0.clone(), w1.clone()]).unwrap();
        let y = ObservationBatch::scalars(vec![0.0, 0.0]).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();

        let f = |a: f64, b: f64| (-0.5 * (a - b) * (a - b)).exp();
        let mut expected = [0.0; 2];
        for j in 0..2 {
            let denom: f64 = (0..2).map(|l| w0[l] * f(x1[j], x0[l])).sum();
            for (i, e) in expected.iter_mut().enumerate() {
                *e += w0[i] * w1[j] * f(x1[j], x0[i]) / denom;
            }
        }
        // Frozen values from the hand recursion above.
        assert_relative_eq!(expected[0], 0.2149123170688487, epsilon = 1e-14);
        assert_relative_eq!(sw.marginal(0)[0], expected[0], epsilon = 1e-14);
        assert_relative_eq!(sw.marginal(0)[1], expected[1], epsilon = 1e-14);
        assert_eq!(sw.marginal(1), &w1[..]);

        // Pairwise score Σ_ij Ω_ij (x1_j - x0_i).
        let mut score = 0.0;
        for j in 0..2 {
            let denom: f64 = (0..2).map(|l| w0[l] * f(x1[j], x0[l])).sum();
            for i in 0..2 {
                score += w0[i] * f(x1[j], x0[i]) * w1[j] / denom * (x1[j] - x0[i]);
            }
        }
        assert_relative_eq!(score, 0.31491231706884876, epsilon = 1e-14);
        let s = fisher_identity_score(&sw, &ps, &m, &[0.0], &y).unwrap();
        assert_relative_eq!(s[0], score, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_trajectory_gives_complete_data_score() {
        let m = toy(1.0, false);
        let ps = ParticleSystem::from_rows(
            vec![vec![0.0, 5.0], vec![0.4, -3.0], vec![1.0, 7.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let y = ObservationBatch::scalars(vec![0.0; 3]).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
        let s = fisher_identity_score(&sw, &ps, &m, &[0.0], &y).unwrap();
        assert_relative_eq!(s[0], (0.4 - 0.0) + (1.0 - 0.4), epsilon = 1e-14);
    }

    #[test]
    fn fused_and_separate_scores_agree() {
        let m = toy(0.8, false);
        let y = m.simulate(&[0.0], 25, &mut RandomStream::from_seed(8)).unwrap();
        let (fused, ll) = particle_score(&m, &[0.0], &y, 60, &mut RandomStream::from_seed(9)).unwrap();
        let ps = bootstrap_filter(&m, &[0.0], &y, 60, &mut RandomStream::from_seed(9)).unwrap();
        let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
        let sep = fisher_identity_score(&sw, &ps, &m, &[0.0], &y).unwrap();
        assert_relative_eq!(fused[0], sep[0], max_relative = 1e-12);
        assert_eq!(ll, ps.loglik());
    }

    #[test]
    fn degenerate_filter_reports_time() {
        struct Impossible(Toy);
        impl NlssModel for Impossible {
            fn dim(&self) -> usize { 1 }
            fn domain(&self) -> &BoxConstraint { self.0.domain() }
            fn check_params(&self, _t: &[f64]) -> Result<()> { Ok(()) }
            fn sample_initial(&self, t: &[f64], r: &mut RandomStream) -> f64 { self.0.sample_initial(t, r) }
            fn sample_transition(&self, x: f64, u: f64, t: &[f64], r: &mut RandomStream) -> f64 { self.0.sample_transition(x, u, t, r) }
            fn sample_observation(&self, x: f64, t: &[f64], r: &mut RandomStream) -> f64 { self.0.sample_observation(x, t, r) }
            fn initial_logdensity(&self, x: f64, t: &[f64]) -> f64 { self.0.initial_logdensity(x, t) }
            fn transition_logdensity(&self, a: f64, b: f64, u: f64, t: &[f64]) -> f64 { self.0.transition_logdensity(a, b, u, t) }
            fn observation_logdensity(&self, y: f64, _x: f64, _t: &[f64]) -> f64 {
                if y > 100.0 { f64::NEG_INFINITY } else { 0.0 }
            }
            fn add_initial_score(&self, _: f64, _: &[f64], _: f64, _: &mut [f64]) {}
            fn add_transition_score(&self, _: f64, _: f64, _: f64, _: &[f64], _: f64, _: &mut [f64]) {}
            fn add_observation_score(&self, _: f64, _: f64, _: &[f64], _: f64, _: &mut [f64]) {}
        }
        let m = Impossible(toy(1.0, false));
        let y = ObservationBatch::scalars(vec![0.0, 0.0, 500.0]).unwrap();
        let r = bootstrap_filter(&m, &[0.0], &y, 10, &mut RandomStream::from_seed(1));
        assert!(matches!(r, Err(Error::DegenerateFilter { t: 2 })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn smoothed_marginals_are_distributions(
                obs_sd in 0.05..3.0f64,
                steps in 1usize..25,
                particles in 2usize..60,
                seed in any::<u64>(),
            ) {
                let m = toy(obs_sd, false);
                let rng = RandomStream::from_seed(seed);
                let y = m.simulate(&[0.0], steps, &mut rng.split(0)).unwrap();
                let ps = bootstrap_filter(&m, &[0.0], &y, particles, &mut rng.split(1)).unwrap();
                let sw = ffbsm_smooth(&ps, &m, &[0.0], &y).unwrap();
                for t in 0..ps.n_steps() {
                    prop_assert!((sw.marginal(t).iter().sum::<f64>() - 1.0).abs() < 1e-8);
                    prop_assert!(sw.marginal(t).iter().all(|w| *w >= 0.0 && w.is_finite()));
                }
            }
        }
    }
}
