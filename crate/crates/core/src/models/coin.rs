//! Bent-coin model: heads with probability `q(φ) = ½ + ½(φ/π)³`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::fim::{FimProvider, FimSource, FisherMatrix};
use crate::model::{BoxConstraint, FimCapability, ObservationBatch, ParameterVector, ScoreVector, StatisticalModel};
use crate::rng::RandomStream;

fn check_angle(phi: f64) -> Result<()> {
    if phi > 0.0 && phi <= PI {
        Ok(())
    } else {
        Err(Error::Domain(format!("bending angle {phi} outside (0, π]")))
    }
}

/// `q(φ)`, the heads probability.
pub fn coin_heads_prob(phi: f64) -> Result<f64> {
    check_angle(phi)?;
    Ok(0.5 + 0.5 * (phi / PI).powi(3))
}

/// Score magnitudes `(p₁, p₀)`: the score is `+p₁` for heads and `-p₀` for tails.
/// `p₀` is infinite at `φ = π`.
pub fn coin_score_factors(phi: f64) -> Result<(f64, f64)> {
    check_angle(phi)?;
    let r = (phi / PI).powi(3);
    let c = 3.0 / PI * (phi / PI).powi(2);
    Ok((c / (1.0 + r), c / (1.0 - r)))
}

fn fim_from_fraction(phi: f64, heads_fraction: f64) -> Result<f64> {
    let (p1, p0) = coin_score_factors(phi)?;
    let tails = 1.0 - heads_fraction;
    if tails > 0.0 && !p0.is_finite() {
        return Err(Error::Domain(
            "tails observed at φ = π, where tails are impossible".into(),
        ));
    }
    let tails_term = if tails > 0.0 { tails * p0 * p0 } else { 0.0 };
    Ok(heads_fraction * p1 * p1 + tails_term)
}

/// Per-toss information estimate from `k` heads in `n` tosses:
/// `(k/n)p₁² + ((n-k)/n)p₀²`.
pub fn coin_fim(phi: f64, k_heads: usize, n: usize) -> Result<f64> {
    ensure!(n >= 1 && k_heads <= n, "need 0 <= k <= n and n >= 1");
    fim_from_fraction(phi, k_heads as f64 / n as f64)
}

/// `d/dφ` of `coin_fim` with the heads fraction held fixed.
fn fim_derivative_fixed_fraction(phi: f64, f: f64) -> f64 {
    let pi3 = PI.powi(3);
    let r = phi.powi(3) / pi3;
    let c = 3.0 * phi * phi / pi3;
    let dc = 6.0 * phi / pi3;
    // dr/dφ = c
    let p1 = c / (1.0 + r);
    let p0 = c / (1.0 - r);
    let dp1 = (dc * (1.0 + r) - c * c) / (1.0 + r).powi(2);
    let dp0 = (dc * (1.0 - r) + c * c) / (1.0 - r).powi(2);
    2.0 * f * p1 * dp1 + 2.0 * (1.0 - f) * p0 * dp0
}

/// Exact per-toss information `q p₁² + (1-q) p₀² = c²/(1 - r²)` with
/// `c = 3φ²/π³`, `r = φ³/π³`, and its derivative.
pub fn coin_expected_fim(phi: f64) -> Result<(f64, f64)> {
    check_angle(phi)?;
    if phi == PI {
        return Err(Error::Domain("information is unbounded at φ = π".into()));
    }
    let pi3 = PI.powi(3);
    let r = phi.powi(3) / pi3;
    let c = 3.0 * phi * phi / pi3;
    let dc = 6.0 * phi / pi3;
    let one_m = 1.0 - r * r;
    let j = c * c / one_m;
    let dj = 2.0 * c * dc / one_m + 2.0 * c.powi(3) * r / (one_m * one_m);
    Ok((j, dj))
}

/// How the chain obtains `Ĵ_φ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoinFimMode {
    /// Heads fraction replaced by its expectation `q(φ)` (the `n → ∞` limit).
    ExpectedCounts,
    /// Heads fraction from `tosses` fresh simulated tosses at each evaluation.
    Simulated { tosses: usize },
}

#[derive(Clone, Debug)]
pub struct CoinModel {
    domain: BoxConstraint,
    fim_mode: CoinFimMode,
}

impl Default for CoinModel {
    fn default() -> Self {
        Self {
            domain: BoxConstraint::interval(1e-3, PI - 1e-3).expect("static box"),
            fim_mode: CoinFimMode::ExpectedCounts,
        }
    }
}

impl CoinModel {
    pub fn with_domain(domain: BoxConstraint, fim_mode: CoinFimMode) -> Result<Self> {
        ensure!(domain.dim() == 1, "coin model has a single parameter");
        if !(domain.lower()[0] > 0.0 && domain.upper()[0] < PI) {
            return Err(Error::Domain(format!(
                "coin domain [{}, {}] must lie inside (0, π)",
                domain.lower()[0],
                domain.upper()[0]
            )));
        }
        if let CoinFimMode::Simulated { tosses } = fim_mode {
            ensure!(tosses >= 1, "simulated FIM needs at least one toss");
        }
        Ok(Self { domain, fim_mode })
    }

    pub fn fim_mode(&self) -> CoinFimMode {
        self.fim_mode
    }

    fn heads_fraction(&self, phi: f64, rng: &mut RandomStream) -> Result<f64> {
        let q = coin_heads_prob(phi)?;
        Ok(match self.fim_mode {
            CoinFimMode::ExpectedCounts => q,
            CoinFimMode::Simulated { tosses } => {
                let k = (0..tosses).filter(|_| rng.uniform() < q).count();
                k as f64 / tosses as f64
            }
        })
    }
}

impl StatisticalModel for CoinModel {
    fn dim(&self) -> usize {
        1
    }

    fn capability(&self) -> FimCapability {
        FimCapability::Analytic
    }

    fn default_domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut RandomStream) -> Result<ObservationBatch> {
        ensure!(n >= 1, "need n >= 1 tosses");
        let q = coin_heads_prob(theta[0])?;
        ObservationBatch::scalars(
            (0..n)
                .map(|_| if rng.uniform() < q { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    fn log_density(&self, theta: &ParameterVector, y: &[f64]) -> Result<f64> {
        let q = coin_heads_prob(theta[0])?;
        match y {
            [v] if *v == 1.0 => Ok(q.ln()),
            [v] if *v == 0.0 => Ok((1.0 - q).ln()),
            _ => Err(Error::Support(format!("coin outcome must be 0 or 1, got {y:?}"))),
        }
    }

    fn score(&self, theta: &ParameterVector, y: &[f64]) -> Result<ScoreVector> {
        let (p1, p0) = coin_score_factors(theta[0])?;
        match y {
            [v] if *v == 1.0 => ScoreVector::new(vec![p1]),
            [v] if *v == 0.0 => ScoreVector::new(vec![-p0]),
            _ => Err(Error::Support(format!("coin outcome must be 0 or 1, got {y:?}"))),
        }
    }
}

impl FimProvider for CoinModel {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn fim(&self, theta: &ParameterVector, rng: &mut RandomStream) -> Result<FisherMatrix> {
        let phi = theta[0];
        let j = match self.fim_mode {
            CoinFimMode::ExpectedCounts => coin_expected_fim(phi)?.0,
            CoinFimMode::Simulated { .. } => fim_from_fraction(phi, self.heads_fraction(phi, rng)?)?,
        };
        FisherMatrix::scalar(j, FimSource::Analytic)
    }

    fn fim_derivatives(&self, theta: &ParameterVector, rng: &mut RandomStream) -> Result<Vec<DMatrix<f64>>> {
        let phi = theta[0];
        let dj = match self.fim_mode {
            CoinFimMode::ExpectedCounts => coin_expected_fim(phi)?.1,
            CoinFimMode::Simulated { .. } => {
                fim_derivative_fixed_fraction(phi, self.heads_fraction(phi, rng)?)
            }
        };
        Ok(vec![DMatrix::from_element(1, 1, dj)])
    }
}
