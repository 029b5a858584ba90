//! Fisher information matrices, the Jeffreys potential `V(θ) = -½ ln det J(θ)`
//! and its gradient.
//!
//! The gradient is always assembled through the trace formula
//! `∂V/∂θⱼ = -½ tr(J⁻¹ ∂J/∂θⱼ)`. The derivative matrices come either from the
//! model in closed form or from the one-point estimator
//! `∂J/∂θⱼ ≈ (μⱼ/δ)(Ĵ(θ+δμ) - Ĵ(θ))` with `μ ~ N(0, I)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{BoxConstraint, ParameterVector, ScoreVector};
use crate::rng::RandomStream;

/// Relative eigenvalue floor below which an FIM is treated as singular.
pub const PSD_RELATIVE_FLOOR: f64 = 1e-10;

/// Maximum number of perturbation redraws that land outside the domain.
pub const MAX_DIRECTION_REDRAWS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FimSource {
    Analytic,
    Empirical,
    ParticleFilter,
}

/// Symmetric `d × d` Fisher information (exact or estimated).
#[derive(Clone, Debug, PartialEq)]
pub struct FisherMatrix {
    entries: DMatrix<f64>,
    source: FimSource,
}

impl FisherMatrix {
    /// Symmetrizes `entries` as `(A + Aᵀ)/2`.
    pub fn new(entries: DMatrix<f64>, source: FimSource) -> Result<Self> {
        ensure!(
            entries.is_square() && entries.nrows() >= 1,
            "FIM must be a non-empty square matrix"
        );
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularFim("non-finite FIM entries".into()));
        }
        let entries = (&entries + entries.transpose()) * 0.5;
        Ok(Self { entries, source })
    }

    pub fn scalar(value: f64, source: FimSource) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, value), source)
    }

    pub fn from_diagonal(diag: &[f64], source: FimSource) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            source,
        )
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn source(&self) -> FimSource {
        self.source
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect()
    }

    /// Rejects matrices whose smallest eigenvalue is below
    /// `PSD_RELATIVE_FLOOR · trace / d`, and returns the Cholesky factor otherwise.
    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let d = self.dim() as f64;
        let trace = self.entries.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::SingularFim(format!("trace = {trace}")));
        }
        if self.dim() > 1 {
            let min_eig = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            if min_eig < PSD_RELATIVE_FLOOR * trace / d {
                return Err(Error::SingularFim(format!(
                    "smallest eigenvalue {min_eig:e} below floor (trace {trace:e})"
                )));
            }
        }
        nalgebra::Cholesky::new(self.entries.clone())
            .ok_or_else(|| Error::SingularFim("Cholesky factorization failed".into()))
    }

    /// `ln det J`, summed in the log domain over the Cholesky diagonal.
    pub fn ln_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        let l = chol.l_dirty();
        Ok(2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }
}

/// `(1/n) Σ sᵢ sᵢᵀ`.
pub fn empirical_fim(scores: &[ScoreVector]) -> Result<FisherMatrix> {
    ensure!(!scores.is_empty(), "empirical FIM needs at least one score");
    let d = scores[0].dim();
    ensure!(
        scores.iter().all(|s| s.dim() == d),
        "all scores must have the same dimension"
    );
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for s in scores {
        let s = s.as_slice();
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += s[i] * s[j];
            }
        }
    }
    FisherMatrix::new(acc / scores.len() as f64, FimSource::Empirical)
}

/// `V = -½ ln det J`.
pub fn potential(fim: &FisherMatrix) -> Result<f64> {
    Ok(-0.5 * fim.ln_det()?)
}

/// `∂V/∂θⱼ = -½ tr(J⁻¹ ∂J/∂θⱼ)` for each supplied derivative matrix.
pub fn potential_gradient_analytic(fim: &FisherMatrix, dfim: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let d = fim.dim();
    ensure!(
        dfim.len() == d,
        "expected {d} derivative matrices, got {}",
        dfim.len()
    );
    ensure!(
        dfim.iter().all(|m| m.nrows() == d && m.ncols() == d),
        "derivative matrices must be {d}x{d}"
    );
    let chol = fim.cholesky()?;
    dfim.iter()
        .map(|dj| {
            let g = -0.5 * chol.solve(dj).trace();
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::SingularFim("non-finite potential gradient".into()))
            }
        })
        .collect()
}

/// Step and averaging for the one-point derivative estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnePointConfig {
    pub delta: f64,
    pub direction_draws: usize,
}

impl OnePointConfig {
    /// Requires `delta <= 1e-2 · (smallest width of domain)`.
    pub fn new(delta: f64, direction_draws: usize, domain: &BoxConstraint) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        if direction_draws == 0 {
            return Err(Error::Config("direction_draws must be >= 1".into()));
        }
        let limit = 1e-2 * domain.min_width();
        if delta > limit {
            return Err(Error::Config(format!(
                "delta {delta} exceeds 1e-2 of the smallest domain width ({limit})"
            )));
        }
        Ok(Self {
            delta,
            direction_draws,
        })
    }
}

/// Which branch produces `∂J/∂θ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    AnalyticTrace,
    OnePoint,
}

/// `V(θ)`, `∇V(θ)` and the FIM they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub fim: FisherMatrix,
    pub gradient_kind: GradientMode,
}

/// Source of (possibly estimated) Fisher information.
///
/// Estimators must be deterministic given the stream they are handed: the
/// engine replays the same stream to get common random numbers across nearby
/// parameter values.
pub trait FimProvider: Sync {
    fn dim(&self) -> usize;

    /// Box on which `fim` can be evaluated.
    fn domain(&self) -> &BoxConstraint;

    fn fim(&self, theta: &ParameterVector, rng: &mut RandomStream) -> Result<FisherMatrix>;

    /// Closed-form `∂J/∂θⱼ`, one matrix per coordinate.
    fn fim_derivatives(
        &self,
        _theta: &ParameterVector,
        _rng: &mut RandomStream,
    ) -> Result<Vec<DMatrix<f64>>> {
        Err(Error::Unsupported("analytic FIM derivatives"))
    }
}

/// `(μⱼ/δ)(Ĵ(θ+δμ) - Ĵ(θ))` for one given direction, reusing `base`.
pub fn one_point_derivative_along<P: FimProvider + ?Sized>(
    provider: &P,
    theta: &ParameterVector,
    base: &FisherMatrix,
    direction: &[f64],
    delta: f64,
    fim_stream: &RandomStream,
) -> Result<Vec<DMatrix<f64>>> {
    let perturbed = theta.offset(direction, delta)?;
    let shifted = provider.fim(&perturbed, &mut fim_stream.clone())?;
    let diff = shifted.entries() - base.entries();
    Ok(direction.iter().map(|mu| &diff * (mu / delta)).collect())
}

fn one_point_with_base<P: FimProvider + ?Sized>(
    provider: &P,
    theta: &ParameterVector,
    base: &FisherMatrix,
    cfg: &OnePointConfig,
    fim_stream: &RandomStream,
    directions: &mut RandomStream,
) -> Result<Vec<DMatrix<f64>>> {
    let d = theta.dim();
    let domain = provider.domain();
    let mut acc = vec![DMatrix::<f64>::zeros(d, d); d];
    for _ in 0..cfg.direction_draws {
        let mut mu = vec![0.0; d];
        let mut found = false;
        for _ in 0..MAX_DIRECTION_REDRAWS {
            mu.iter_mut().for_each(|m| *m = directions.standard_normal());
            let probe: Vec<f64> = theta
                .as_slice()
                .iter()
                .zip(&mu)
                .map(|(t, m)| t + cfg.delta * m)
                .collect();
            if domain.contains_slice(&probe) {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::DomainExhausted {
                attempts: MAX_DIRECTION_REDRAWS,
            });
        }
        let est = one_point_derivative_along(provider, theta, base, &mu, cfg.delta, fim_stream)?;
        for (a, e) in acc.iter_mut().zip(est) {
            *a += e;
        }
    }
    let scale = 1.0 / cfg.direction_draws as f64;
    Ok(acc.into_iter().map(|m| m * scale).collect())
}

/// One-point estimate of every `∂J/∂θⱼ` at `theta`, averaged over
/// `cfg.direction_draws` directions. `Ĵ(θ)` is estimated once and reused.
pub fn one_point_fim_derivative<P: FimProvider + ?Sized>(
    provider: &P,
    theta: &ParameterVector,
    cfg: &OnePointConfig,
    rng: &mut RandomStream,
) -> Result<Vec<DMatrix<f64>>> {
    let fim_stream = rng.fork();
    let mut directions = rng.fork();
    let base = provider.fim(theta, &mut fim_stream.clone())?;
    one_point_with_base(provider, theta, &base, cfg, &fim_stream, &mut directions)
}

/// Potential and gradient at `theta` using the selected gradient branch.
///
/// All FIM estimates within one call share a single estimation stream, so the
/// base and perturbed estimates use common random numbers.
pub fn evaluate_potential<P: FimProvider + ?Sized>(
    provider: &P,
    theta: &ParameterVector,
    mode: GradientMode,
    cfg: &OnePointConfig,
    rng: &mut RandomStream,
) -> Result<PotentialEvaluation> {
    if !provider.domain().contains(theta)? {
        return Err(Error::Domain(format!("{theta} outside the provider domain")));
    }
    let fim_stream = rng.fork();
    let mut directions = rng.fork();
    let fim = provider.fim(theta, &mut fim_stream.clone())?;
    let value = potential(&fim)?;
    let dfim = match mode {
        GradientMode::AnalyticTrace => provider.fim_derivatives(theta, &mut fim_stream.clone())?,
        GradientMode::OnePoint => {
            one_point_with_base(provider, theta, &fim, cfg, &fim_stream, &mut directions)?
        }
    };
    let gradient = potential_gradient_analytic(&fim, &dfim)?;
    Ok(PotentialEvaluation {
        value,
        gradient,
        fim,
        gradient_kind: mode,
    })
}
