//! Two-parameter Weibull distribution, `θ = [η, γ]` (scale, shape).

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::fim::{empirical_fim, FimProvider, FimSource, FisherMatrix};
use crate::model::{BoxConstraint, FimCapability, ObservationBatch, ParameterVector, ScoreVector, StatisticalModel};
use crate::rng::RandomStream;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn check_params(eta: f64, gamma: f64) -> Result<()> {
    if eta > 0.0 && gamma > 0.0 && eta.is_finite() && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Weibull needs η > 0, γ > 0; got ({eta}, {gamma})")))
    }
}

/// `ln f(A; η, γ)` and `(∂/∂η, ∂/∂γ) ln f`.
pub fn weibull_logdensity_and_score(eta: f64, gamma: f64, a: f64) -> Result<(f64, [f64; 2])> {
    check_params(eta, gamma)?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Support(format!("Weibull observation must be > 0, got {a}")));
    }
    let log_ratio = (a / eta).ln();
    let z = (gamma * log_ratio).exp();
    let logf = gamma.ln() - eta.ln() + (gamma - 1.0) * log_ratio - z;
    let d_eta = gamma / eta * (z - 1.0);
    let d_gamma = 1.0 / gamma + log_ratio * (1.0 - z);
    Ok((logf, [d_eta, d_gamma]))
}

/// Inverse-transform draw `η(-ln u)^{1/γ}` for `u ∈ (0, 1)`.
pub fn weibull_inverse_transform(eta: f64, gamma: f64, u: f64) -> f64 {
    eta * (-u.ln()).powf(1.0 / gamma)
}

/// Closed-form per-observation Fisher information. `det = π²/(6η²)`.
pub fn weibull_exact_fim(eta: f64, gamma: f64) -> Result<FisherMatrix> {
    check_params(eta, gamma)?;
    let one_m = 1.0 - EULER_GAMMA;
    let i_ee = (gamma / eta).powi(2);
    let i_gg = (one_m * one_m + std::f64::consts::PI.powi(2) / 6.0) / (gamma * gamma);
    let i_eg = -one_m / eta;
    FisherMatrix::new(
        DMatrix::from_row_slice(2, 2, &[i_ee, i_eg, i_eg, i_gg]),
        FimSource::Analytic,
    )
}

/// Weibull model whose FIM is the empirical score outer-product average over
/// `fim_samples` simulated observations.
#[derive(Clone, Debug)]
pub struct WeibullModel {
    domain: BoxConstraint,
    fim_samples: usize,
}

impl Default for WeibullModel {
    fn default() -> Self {
        Self {
            domain: BoxConstraint::new(vec![1e-3, 1e-3], vec![1e3, 1e3]).expect("static box"),
            fim_samples: 1000,
        }
    }
}

impl WeibullModel {
    pub fn new(domain: BoxConstraint, fim_samples: usize) -> Result<Self> {
        ensure!(domain.dim() == 2, "Weibull model has two parameters");
        if !domain.lower().iter().all(|l| *l > 0.0) {
            return Err(Error::Domain("Weibull domain must be strictly positive".into()));
        }
        ensure!(fim_samples >= 2, "empirical FIM needs at least two samples");
        Ok(Self { domain, fim_samples })
    }

    pub fn fim_samples(&self) -> usize {
        self.fim_samples
    }
}

impl StatisticalModel for WeibullModel {
    fn dim(&self) -> usize {
        2
    }

    fn capability(&self) -> FimCapability {
        FimCapability::EmpiricalScore
    }

    fn default_domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut RandomStream) -> Result<ObservationBatch> {
        ensure!(n >= 1, "need n >= 1 draws");
        let (eta, gamma) = (theta[0], theta[1]);
        check_params(eta, gamma)?;
        ObservationBatch::scalars(
            (0..n)
                .map(|_| weibull_inverse_transform(eta, gamma, rng.uniform_open()))
                .collect(),
        )
    }

    fn log_density(&self, theta: &ParameterVector, y: &[f64]) -> Result<f64> {
        ensure!(y.len() == 1, "Weibull observations are scalar");
        Ok(weibull_logdensity_and_score(theta[0], theta[1], y[0])?.0)
    }

    fn score(&self, theta: &ParameterVector, y: &[f64]) -> Result<ScoreVector> {
        ensure!(y.len() == 1, "Weibull observations are scalar");
        ScoreVector::new(weibull_logdensity_and_score(theta[0], theta[1], y[0])?.1.to_vec())
    }
}

impl FimProvider for WeibullModel {
    fn dim(&self) -> usize {
        2
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn fim(&self, theta: &ParameterVector, rng: &mut RandomStream) -> Result<FisherMatrix> {
        let batch = self.simulate(theta, self.fim_samples, rng)?;
        let scores = batch
            .records()
            .map(|y| self.score(theta, y))
            .collect::<Result<Vec<_>>>()?;
        empirical_fim(&scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma as gamma_fn;

    #[test]
    fn score_at_unit_parameters() {
        let (_, s) = weibull_logdensity_and_score(1.0, 1.0, 1.0).unwrap();
        // Central differences of ln f with step 1e-6.
        let h = 1e-6;
        let lf = |e: f64, g: f64| weibull_logdensity_and_score(e, g, 1.0).unwrap().0;
        let fd_eta = (lf(1.0 + h, 1.0) - lf(1.0 - h, 1.0)) / (2.0 * h);
        let fd_gamma = (lf(1.0, 1.0 + h) - lf(1.0, 1.0 - h)) / (2.0 * h);
        assert!(fd_eta.abs() < 1e-9);
        assert_relative_eq!(fd_gamma, 1.0, epsilon = 1e-9);
        assert_eq!(s, [0.0, 1.0]);
    }

    #[test]
    fn score_at_scale_point() {
        for &(eta, gamma) in &[(2.0, 3.0), (7.5, 0.4), (15.0, 12.0)] {
            let (_, s) = weibull_logdensity_and_score(eta, gamma, eta).unwrap();
            assert_eq!(s[0], 0.0);
            assert_relative_eq!(s[1], 1.0 / gamma, epsilon = 1e-15);
        }
    }

    #[test]
    fn support_and_domain_errors() {
        assert!(matches!(weibull_logdensity_and_score(1.0, 1.0, -1.0), Err(Error::Support(_))));
        assert!(matches!(weibull_logdensity_and_score(1.0, 1.0, 0.0), Err(Error::Support(_))));
        assert!(matches!(weibull_logdensity_and_score(-1.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_transform_at_inverse_e() {
        for &(eta, gamma) in &[(1.0, 1.0), (5.0, 2.0), (13.0, 0.3)] {
            assert_relative_eq!(weibull_inverse_transform(eta, gamma, (-1.0f64).exp()), eta, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Composite Simpson on a log-spaced grid A = e^s.
        for &(eta, gamma) in &[(1.0, 1.0), (5.0, 2.0), (10.0, 0.8), (3.0, 15.0)] {
            let (lo, hi, n) = (-40.0f64, 8.0f64, 200_000usize);
            let h = (hi - lo) / n as f64;
            let f = |s: f64| {
                let a = s.exp();
                weibull_logdensity_and_score(eta, gamma, a).unwrap().0.exp() * a
            };
            let mut acc = f(lo) + f(hi);
            for i in 1..n {
                acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert_relative_eq!(acc * h / 3.0, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn sampler_mean_matches_gamma_function() {
        let m = WeibullModel::default();
        for (i, &(eta, gamma)) in [(1.0, 1.0), (5.0, 2.0), (10.0, 0.8)].iter().enumerate() {
            let theta = ParameterVector::new(vec![eta, gamma]).unwrap();
            let b = m.simulate(&theta, 1_000_000, &mut RandomStream::from_seed(i as u64)).unwrap();
            let mean = b.values().iter().sum::<f64>() / b.len() as f64;
            let expected = eta * gamma_fn(1.0 + 1.0 / gamma);
            assert_relative_eq!(mean, expected, max_relative = 0.01);
        }
    }

    #[test]
    fn empirical_fim_approaches_exact() {
        let m = WeibullModel::new(BoxConstraint::new(vec![0.5, 0.5], vec![30.0, 30.0]).unwrap(), 400_000).unwrap();
        let theta = ParameterVector::new(vec![4.0, 2.5]).unwrap();
        let est = m.fim(&theta, &mut RandomStream::from_seed(3)).unwrap();
        let exact = weibull_exact_fim(4.0, 2.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(est.get(i, j), exact.get(i, j), max_relative = 0.03);
            }
        }
        assert_relative_eq!(
            exact.ln_det().unwrap(),
            (std::f64::consts::PI.powi(2) / 6.0 / 16.0).ln(),
            epsilon = 1e-12
        );
    }
}
