//! Hull–White stochastic volatility model with a white-noise input:
//! `x_{t+1} ~ N(φx_t + ρu_t, σ_v²)`, `y_t ~ N(0, β²e^{x_t})`, `u_t ~ N(0, 1)`,
//! `x₀ ~ N(0, σ_v²/(1−φ²))`. Only `φ` is free.

use std::f64::consts::PI;

use crate::error::{ensure, Error, Result};
use crate::model::{BoxConstraint, FimCapability, ObservationBatch, ParameterVector, StatisticalModel};
use crate::particle::{GaussianTransition, NlssModel, LANES};
use crate::rng::RandomStream;

#[derive(Clone, Debug)]
pub struct SvModel {
    rho: f64,
    sigma_v: f64,
    beta: f64,
    domain: BoxConstraint,
}

impl Default for SvModel {
    fn default() -> Self {
        Self::new(0.2, 0.5, 0.7).expect("valid defaults")
    }
}

impl SvModel {
    pub fn new(rho: f64, sigma_v: f64, beta: f64) -> Result<Self> {
        ensure!(rho.is_finite(), "ρ must be finite");
        if !(sigma_v > 0.0 && beta > 0.0 && sigma_v.is_finite() && beta.is_finite()) {
            return Err(Error::Domain(format!("SV needs σ_v > 0, β > 0; got ({sigma_v}, {beta})")));
        }
        Ok(Self {
            rho,
            sigma_v,
            beta,
            domain: BoxConstraint::interval(-0.99, 0.99)?,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn initial_variance(&self, phi: f64) -> f64 {
        self.sigma_v * self.sigma_v / (1.0 - phi * phi)
    }

    /// Transition sampler driven by an explicit standard normal draw.
    pub fn step(&self, x: f64, u: f64, phi: f64, noise: f64) -> f64 {
        phi * x + self.rho * u + self.sigma_v * noise
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if phi.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "SV model needs |φ| < 1 for a stationary initial state; got {phi}"
        )))
    }
}

/// One trajectory of length `steps` with its inputs.
pub fn sv_simulate(model: &SvModel, phi: f64, steps: usize, rng: &mut RandomStream) -> Result<ObservationBatch> {
    NlssModel::simulate(model, &[phi], steps, rng)
}

impl NlssModel for SvModel {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        ensure!(theta.len() == 1, "SV model has one free parameter");
        check_phi(theta[0])
    }

    fn sample_initial(&self, theta: &[f64], rng: &mut RandomStream) -> f64 {
        self.initial_variance(theta[0]).sqrt() * rng.standard_normal()
    }

    fn sample_transition(&self, x: f64, u: f64, theta: &[f64], rng: &mut RandomStream) -> f64 {
        self.step(x, u, theta[0], rng.standard_normal())
    }

    fn sample_observation(&self, x: f64, _theta: &[f64], rng: &mut RandomStream) -> f64 {
        self.beta * (0.5 * x).exp() * rng.standard_normal()
    }

    fn sample_input(&self, rng: &mut RandomStream) -> Option<f64> {
        Some(rng.standard_normal())
    }

    fn initial_logdensity(&self, x0: f64, theta: &[f64]) -> f64 {
        let v = self.initial_variance(theta[0]);
        -0.5 * ((2.0 * PI * v).ln() + x0 * x0 / v)
    }

    #[inline]
    fn transition_logdensity(&self, x_next: f64, x: f64, u: f64, theta: &[f64]) -> f64 {
        let s2 = self.sigma_v * self.sigma_v;
        let e = x_next - theta[0] * x - self.rho * u;
        -0.5 * ((2.0 * PI * s2).ln() + e * e / s2)
    }

    fn gaussian_transition(&self, u: f64, theta: &[f64]) -> Option<GaussianTransition> {
        Some(GaussianTransition {
            slope: theta[0],
            offset: self.rho * u,
            variance: self.sigma_v * self.sigma_v,
        })
    }

    fn observation_logdensity(&self, y: f64, x: f64, _theta: &[f64]) -> f64 {
        let b2 = self.beta * self.beta;
        -0.5 * ((2.0 * PI * b2).ln() + x + y * y / (b2 * x.exp()))
    }

    fn add_initial_score(&self, x0: f64, theta: &[f64], weight: f64, out: &mut [f64]) {
        let phi = theta[0];
        let s2 = self.sigma_v * self.sigma_v;
        out[0] += weight * (-phi / (1.0 - phi * phi) + x0 * x0 * phi / s2);
    }

    #[inline]
    fn add_transition_score(&self, x_next: f64, x: f64, u: f64, theta: &[f64], weight: f64, out: &mut [f64]) {
        let s2 = self.sigma_v * self.sigma_v;
        out[0] += weight * (x_next - theta[0] * x - self.rho * u) * x / s2;
    }

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
        let target = x_next - self.rho * u;
        let phi = theta[0];
        let mut acc = [0.0; LANES];
        let wc = weights.chunks_exact(LANES);
        let xc = xs.chunks_exact(LANES);
        let (wr, xr) = (wc.remainder(), xc.remainder());
        for (w, x) in wc.zip(xc) {
            for k in 0..LANES {
                acc[k] += w[k] * (target - phi * x[k]) * x[k];
            }
        }
        let tail: f64 = wr.iter().zip(xr).map(|(w, x)| w * (target - phi * x) * x).sum();
        let total = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
        out[0] += scale * total / (self.sigma_v * self.sigma_v);
    }

    fn add_observation_score(&self, _y: f64, _x: f64, _theta: &[f64], _weight: f64, _out: &mut [f64]) {}
}

impl StatisticalModel for SvModel {
    fn dim(&self) -> usize {
        1
    }

    fn capability(&self) -> FimCapability {
        FimCapability::ParticleFilter
    }

    fn default_domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut RandomStream) -> Result<ObservationBatch> {
        NlssModel::simulate(self, theta.as_slice(), n, rng)
    }
}
