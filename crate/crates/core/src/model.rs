//! Statistical-model abstraction and the box-constrained parameter space.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::RandomStream;

/// A point in a model's parameter space. Always non-empty and finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(!values.is_empty(), "parameter vector must have dim >= 1");
        ensure!(
            values.iter().all(|v| v.is_finite()),
            "parameter vector has non-finite entries: {values:?}"
        );
        Ok(Self(values))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self + scale * direction`, validated.
    pub fn offset(&self, direction: &[f64], scale: f64) -> Result<Self> {
        ensure!(direction.len() == self.dim(), "offset dimension mismatch");
        Self::new(
            self.0
                .iter()
                .zip(direction)
                .map(|(a, d)| a + scale * d)
                .collect(),
        )
    }
}

impl Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Axis-aligned closed box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        ensure!(!lower.is_empty(), "box must have dim >= 1");
        ensure!(
            lower.len() == upper.len(),
            "box bounds have different lengths"
        );
        ensure!(
            lower
                .iter()
                .zip(&upper)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u),
            "box requires finite lower < upper in every coordinate"
        );
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Closed-interval membership per coordinate.
    pub fn contains(&self, theta: &ParameterVector) -> Result<bool> {
        ensure!(
            theta.dim() == self.dim(),
            "dimension mismatch: box has dim {}, parameter has dim {}",
            self.dim(),
            theta.dim()
        );
        Ok(self.contains_slice(theta.as_slice()))
    }

    pub(crate) fn contains_slice(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn center(&self) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
        )
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn min_width(&self) -> f64 {
        self.widths().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Box grown by `margin` on each side of every coordinate.
    pub fn expanded(&self, margin: f64) -> Result<Self> {
        ensure!(margin >= 0.0 && margin.is_finite(), "margin must be >= 0");
        Self::new(
            self.lower.iter().map(|l| l - margin).collect(),
            self.upper.iter().map(|u| u + margin).collect(),
        )
    }

    pub fn contains_box(&self, other: &BoxConstraint) -> bool {
        self.dim() == other.dim()
            && self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
    }
}

/// `n` records of `m` reals each, stored row-major, with optional exogenous
/// inputs (one row of `k` reals per record) for dynamical models.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBatch {
    observations: Vec<f64>,
    obs_dim: usize,
    inputs: Option<Vec<f64>>,
    input_dim: usize,
}

impl ObservationBatch {
    pub fn new(observations: Vec<f64>, obs_dim: usize) -> Result<Self> {
        ensure!(obs_dim >= 1, "observation dimension must be >= 1");
        ensure!(
            !observations.is_empty() && observations.len() % obs_dim == 0,
            "observation buffer must hold n >= 1 records of dimension {obs_dim}"
        );
        Ok(Self {
            observations,
            obs_dim,
            inputs: None,
            input_dim: 0,
        })
    }

    /// Scalar observations, one per record.
    pub fn scalars(observations: Vec<f64>) -> Result<Self> {
        Self::new(observations, 1)
    }

    pub fn with_inputs(mut self, inputs: Vec<f64>, input_dim: usize) -> Result<Self> {
        ensure!(input_dim >= 1, "input dimension must be >= 1");
        ensure!(
            inputs.len() == self.len() * input_dim,
            "inputs must have the same record count as observations"
        );
        self.inputs = Some(inputs);
        self.input_dim = input_dim;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.observations.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn record(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn records(&self) -> impl Iterator<Item = &[f64]> {
        self.observations.chunks_exact(self.obs_dim)
    }

    /// Flat view; for scalar batches this is the series itself.
    pub fn values(&self) -> &[f64] {
        &self.observations
    }

    pub fn inputs(&self) -> Option<&[f64]> {
        self.inputs.as_deref()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// New batch with every observation multiplied by `c`; inputs are kept.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            observations: self.observations.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Gradient of a log-density with respect to the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(!values.is_empty(), "score vector must have dim >= 1");
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Support(format!("non-finite score {values:?}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ScoreVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// How a model's Fisher information is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FimCapability {
    /// Closed-form `J(θ)` (and its derivatives).
    Analytic,
    /// Per-observation scores, averaged over simulated data.
    EmpiricalScore,
    /// State-space model; score via particle smoothing.
    ParticleFilter,
}

/// A parametric family `p(y; θ)` that can be simulated from.
pub trait StatisticalModel: Sync {
    fn dim(&self) -> usize;

    fn capability(&self) -> FimCapability;

    /// Box on which the model can be evaluated; strictly contains the sampler
    /// constraint so that one-point perturbations stay evaluable.
    fn default_domain(&self) -> &BoxConstraint;

    /// `n` i.i.d. draws, or one length-`n` trajectory for dynamical models.
    fn simulate(
        &self,
        theta: &ParameterVector,
        n: usize,
        rng: &mut RandomStream,
    ) -> Result<ObservationBatch>;

    fn log_density(&self, _theta: &ParameterVector, _y: &[f64]) -> Result<f64> {
        Err(Error::Unsupported("log_density"))
    }

    /// `∇_θ ln p(y; θ)` for a single observation.
    fn score(&self, _theta: &ParameterVector, _y: &[f64]) -> Result<ScoreVector> {
        Err(Error::Unsupported("score"))
    }

    fn check_domain(&self, theta: &ParameterVector) -> Result<()> {
        if self.default_domain().contains(theta)? {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{theta} outside [{:?}, {:?}]",
                self.default_domain().lower(),
                self.default_domain().upper()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_membership_is_closed() {
        let c = BoxConstraint::interval(2.0, 3.0).unwrap();
        assert!(c.contains(&ParameterVector::scalar(2.5).unwrap()).unwrap());
        assert!(c.contains(&ParameterVector::scalar(2.0).unwrap()).unwrap());
        assert!(c.contains(&ParameterVector::scalar(3.0).unwrap()).unwrap());
        let sv = BoxConstraint::interval(0.3, 0.9).unwrap();
        assert!(!sv.contains(&ParameterVector::scalar(1.0).unwrap()).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let c = BoxConstraint::interval(2.0, 3.0).unwrap();
        let theta = ParameterVector::new(vec![2.5, 2.5]).unwrap();
        assert!(matches!(
            c.contains(&theta),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn invalid_vectors_and_boxes() {
        assert!(ParameterVector::new(vec![]).is_err());
        assert!(ParameterVector::new(vec![f64::NAN]).is_err());
        assert!(BoxConstraint::interval(3.0, 2.0).is_err());
        assert!(BoxConstraint::interval(2.0, 2.0).is_err());
    }

    #[test]
    fn batch_inputs_must_match_length() {
        let b = ObservationBatch::scalars(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(b.clone().with_inputs(vec![0.0; 2], 1).is_err());
        let b = b.with_inputs(vec![0.0; 3], 1).unwrap();
        assert_eq!(b.inputs().unwrap().len(), b.len());
        assert!(ObservationBatch::scalars(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn corners_are_members(
            lo in prop::collection::vec(-100.0..100.0f64, 1..5),
            w in prop::collection::vec(1e-6..50.0f64, 5),
        ) {
            let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
            let c = BoxConstraint::new(lo.clone(), hi.clone()).unwrap();
            prop_assert!(c.contains(&ParameterVector::new(lo).unwrap()).unwrap());
            prop_assert!(c.contains(&ParameterVector::new(hi).unwrap()).unwrap());
            prop_assert!(c.contains(&c.center()).unwrap());
        }
    }
}
