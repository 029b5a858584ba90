//! Scalar linear-Gaussian state-space model `x_{t+1} = a x_t + N(0, q)`,
//! `y_t = x_t + N(0, r)`, `x₀ ~ N(0, q/(1−a²))`, with `θ = [a, q]` and `r` fixed.
//! The Kalman filter gives the exact likelihood and score.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::fim::{FimSource, FisherMatrix};
use crate::model::{BoxConstraint, ObservationBatch, ScoreVector};
use crate::particle::{GaussianTransition, NlssModel};
use crate::rng::RandomStream;

#[derive(Clone, Debug)]
pub struct LgssOracleModel {
    pub a: f64,
    pub q_noise: f64,
    pub r_noise: f64,
    domain: BoxConstraint,
}

impl Default for LgssOracleModel {
    fn default() -> Self {
        Self::new(0.8, 0.5, 0.3).expect("valid defaults")
    }
}

impl LgssOracleModel {
    pub fn new(a: f64, q_noise: f64, r_noise: f64) -> Result<Self> {
        check_stationary(&[a, q_noise])?;
        if !(r_noise > 0.0) {
            return Err(Error::Domain(format!("observation variance must be > 0, got {r_noise}")));
        }
        Ok(Self {
            a,
            q_noise,
            r_noise,
            domain: BoxConstraint::new(vec![-0.99, 1e-3], vec![0.99, 10.0])?,
        })
    }

    /// Generating parameter `[a, q]`.
    pub fn theta(&self) -> [f64; 2] {
        [self.a, self.q_noise]
    }

    /// Exact log-likelihood.
    pub fn kalman_loglik(&self, theta: &[f64], y: &ObservationBatch) -> Result<f64> {
        Ok(self.kalman(theta, y)?.0)
    }

    /// Exact score via the filter's sensitivity recursions. Empty data give 0.
    pub fn kalman_score(&self, theta: &[f64], y: &[f64]) -> Result<ScoreVector> {
        ScoreVector::new(self.kalman_values(theta, y)?.1.to_vec())
    }

    fn kalman(&self, theta: &[f64], y: &ObservationBatch) -> Result<(f64, [f64; 2])> {
        ensure!(y.obs_dim() == 1, "scalar observations expected");
        self.kalman_values(theta, y.values())
    }

    fn kalman_values(&self, theta: &[f64], ys: &[f64]) -> Result<(f64, [f64; 2])> {
        ensure!(theta.len() == 2, "LGSS parameter is [a, q]");
        check_stationary(theta)?;
        let (a, q, r) = (theta[0], theta[1], self.r_noise);
        let one_m = 1.0 - a * a;
        let mut m = 0.0;
        let mut p = q / one_m;
        let mut dm = [0.0; 2];
        let mut dp = [2.0 * a * q / (one_m * one_m), 1.0 / one_m];
        let mut ll = 0.0;
        let mut score = [0.0; 2];
        for &yt in ys {
            let e = yt - m;
            let s = p + r;
            ll -= 0.5 * ((2.0 * PI * s).ln() + e * e / s);
            let k = p / s;
            let mf = m + k * e;
            let pf = p * r / s;
            let mut dmf = [0.0; 2];
            let mut dpf = [0.0; 2];
            for j in 0..2 {
                let de = -dm[j];
                let ds = dp[j];
                score[j] -= 0.5 * (ds / s + 2.0 * e * de / s - e * e * ds / (s * s));
                let dk = dp[j] * r / (s * s);
                dmf[j] = dm[j] + dk * e + k * de;
                dpf[j] = r * r * dp[j] / (s * s);
            }
            m = a * mf;
            p = a * a * pf + q;
            dm = [mf + a * dmf[0], a * dmf[1]];
            dp = [2.0 * a * pf + a * a * dpf[0], a * a * dpf[1] + 1.0];
        }
        Ok((ll, score))
    }

    /// `(1/M) Σ s sᵀ / T` from exact scores on `runs` simulated datasets.
    /// Datasets are drawn exactly as `pf_fim_estimate` draws them from the
    /// same stream, so the two estimates can be compared run by run.
    pub fn kalman_empirical_fim(
        &self,
        theta: &[f64],
        steps: usize,
        runs: usize,
        rng: &mut RandomStream,
    ) -> Result<FisherMatrix> {
        ensure!(runs >= 1, "need at least one run");
        let base = rng.fork();
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for r in 0..runs {
            let y = self.simulate(theta, steps, &mut base.split(r as u64).split(0))?;
            let s = self.kalman_score(theta, y.values())?;
            let v = DVector::from_column_slice(s.as_slice());
            acc += &v * v.transpose();
        }
        FisherMatrix::new(acc / (runs * steps) as f64, FimSource::Analytic)
    }
}

fn check_stationary(theta: &[f64]) -> Result<()> {
    if theta[0].abs() < 1.0 && theta[1] > 0.0 && theta[1].is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "LGSS needs |a| < 1 and q > 0; got a = {}, q = {}",
            theta[0], theta[1]
        )))
    }
}

impl NlssModel for LgssOracleModel {
    fn dim(&self) -> usize {
        2
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        ensure!(theta.len() == 2, "LGSS parameter is [a, q]");
        check_stationary(theta)
    }

    fn sample_initial(&self, theta: &[f64], rng: &mut RandomStream) -> f64 {
        (theta[1] / (1.0 - theta[0] * theta[0])).sqrt() * rng.standard_normal()
    }

    fn sample_transition(&self, x: f64, _u: f64, theta: &[f64], rng: &mut RandomStream) -> f64 {
        theta[0] * x + theta[1].sqrt() * rng.standard_normal()
    }

    fn sample_observation(&self, x: f64, _theta: &[f64], rng: &mut RandomStream) -> f64 {
        x + self.r_noise.sqrt() * rng.standard_normal()
    }

    fn initial_logdensity(&self, x0: f64, theta: &[f64]) -> f64 {
        let v = theta[1] / (1.0 - theta[0] * theta[0]);
        -0.5 * ((2.0 * PI * v).ln() + x0 * x0 / v)
    }

    #[inline]
    fn transition_logdensity(&self, x_next: f64, x: f64, _u: f64, theta: &[f64]) -> f64 {
        let e = x_next - theta[0] * x;
        -0.5 * ((2.0 * PI * theta[1]).ln() + e * e / theta[1])
    }

    fn gaussian_transition(&self, _u: f64, theta: &[f64]) -> Option<GaussianTransition> {
        Some(GaussianTransition {
            slope: theta[0],
            offset: 0.0,
            variance: theta[1],
        })
    }

    fn observation_logdensity(&self, y: f64, x: f64, _theta: &[f64]) -> f64 {
        let e = y - x;
        -0.5 * ((2.0 * PI * self.r_noise).ln() + e * e / self.r_noise)
    }

    fn add_initial_score(&self, x0: f64, theta: &[f64], weight: f64, out: &mut [f64]) {
        let (a, q) = (theta[0], theta[1]);
        let one_m = 1.0 - a * a;
        let v = q / one_m;
        let dv = [2.0 * a * q / (one_m * one_m), 1.0 / one_m];
        for j in 0..2 {
            out[j] += weight * (-0.5 * dv[j] / v + 0.5 * x0 * x0 * dv[j] / (v * v));
        }
    }

    #[inline]
    fn add_transition_score(&self, x_next: f64, x: f64, _u: f64, theta: &[f64], weight: f64, out: &mut [f64]) {
        let q = theta[1];
        let e = x_next - theta[0] * x;
        out[0] += weight * e * x / q;
        out[1] += weight * (-0.5 / q + 0.5 * e * e / (q * q));
    }

    fn add_observation_score(&self, _y: f64, _x: f64, _theta: &[f64], _weight: f64, _out: &mut [f64]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_data_gives_zero_score() {
        let m = LgssOracleModel::default();
        let s = m.kalman_score(&[0.5, 1.0], &[]).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn nonstationary_is_rejected() {
        let m = LgssOracleModel::default();
        assert!(matches!(m.kalman_score(&[1.0, 1.0], &[0.1]), Err(Error::Domain(_))));
        assert!(matches!(m.kalman_score(&[0.5, 0.0], &[0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn score_matches_finite_differences() {
        let m = LgssOracleModel::default();
        let y = m.simulate(&m.theta(), 200, &mut RandomStream::from_seed(11)).unwrap();
        for theta in [[0.8, 0.5], [0.3, 1.7], [-0.6, 0.2]] {
            let s = m.kalman_score(&theta, y.values()).unwrap();
            for j in 0..2 {
                let h = 1e-5;
                let mut hi = theta;
                let mut lo = theta;
                hi[j] += h;
                lo[j] -= h;
                let fd = (m.kalman_loglik(&hi, &y).unwrap() - m.kalman_loglik(&lo, &y).unwrap()) / (2.0 * h);
                assert_relative_eq!(s[j], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn loglik_matches_dense_gaussian() {
        // y ~ N(0, Σ) with Σ_st = P₀ a^{|s-t|} + r δ_st.
        let m = LgssOracleModel::default();
        let theta = [0.7, 0.9];
        let y = m.simulate(&theta, 12, &mut RandomStream::from_seed(5)).unwrap();
        let n = y.len();
        let p0 = theta[1] / (1.0 - theta[0] * theta[0]);
        let cov = DMatrix::from_fn(n, n, |s, t| {
            p0 * theta[0].powi((s as i32 - t as i32).abs()) + if s == t { m.r_noise } else { 0.0 }
        });
        let chol = cov.clone().cholesky().unwrap();
        let yv = DVector::from_column_slice(y.values());
        let quad = yv.dot(&chol.solve(&yv));
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dense = -0.5 * (n as f64 * (2.0 * PI).ln() + ln_det + quad);
        assert_relative_eq!(m.kalman_loglik(&theta, &y).unwrap(), dense, max_relative = 1e-12);
    }

    #[test]
    fn score_has_zero_mean_at_truth() {
        let m = LgssOracleModel::default();
        let mut rng = RandomStream::from_seed(21);
        let scores: Vec<[f64; 2]> = (0..500)
            .map(|_| {
                let y = m.simulate(&m.theta(), 50, &mut rng).unwrap();
                let s = m.kalman_score(&m.theta(), y.values()).unwrap();
                [s[0], s[1]]
            })
            .collect();
        for j in 0..2 {
            let n = scores.len() as f64;
            let mean = scores.iter().map(|s| s[j]).sum::<f64>() / n;
            let sd = (scores.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 3.0 * sd / n.sqrt(), "component {j}: mean {mean}, sd {sd}");
        }
    }

    #[test]
    fn complete_data_scores_match_finite_differences() {
        let m = LgssOracleModel::default();
        let theta = [0.4, 0.8];
        let h = 1e-6;
        for j in 0..2 {
            let mut hi = theta;
            let mut lo = theta;
            hi[j] += h;
            lo[j] -= h;
            let fd = (m.transition_logdensity(0.3, -0.2, 0.0, &hi) - m.transition_logdensity(0.3, -0.2, 0.0, &lo))
                / (2.0 * h);
            assert_relative_eq!(m.transition_score(0.3, -0.2, 0.0, &theta)[j], fd, max_relative = 1e-5);
            let fd0 = (m.initial_logdensity(0.9, &hi) - m.initial_logdensity(0.9, &lo)) / (2.0 * h);
            let mut s = [0.0; 2];
            m.add_initial_score(0.9, &theta, 1.0, &mut s);
            assert_relative_eq!(s[j], fd0, max_relative = 1e-5);
        }
    }
}
