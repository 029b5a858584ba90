//! Toy target with `J(θ) = exp(−‖θ‖²/d)·I_d`, so that `V(θ) = ‖θ‖²/2` and the
//! Jeffreys density is a standard normal restricted to the box.

use nalgebra::DMatrix;

use crate::error::{ensure, Result};
use crate::fim::{FimProvider, FimSource, FisherMatrix};
use crate::model::{BoxConstraint, ParameterVector};
use crate::rng::RandomStream;

#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    domain: BoxConstraint,
}

impl QuadraticPotential {
    pub fn new(dim: usize, half_width: f64) -> Result<Self> {
        ensure!(dim >= 1, "dimension must be positive");
        ensure!(half_width > 0.0, "half width must be positive");
        Ok(Self {
            domain: BoxConstraint::new(vec![-half_width; dim], vec![half_width; dim])?,
        })
    }

    fn scale(&self, theta: &ParameterVector) -> f64 {
        let d = self.domain.dim() as f64;
        (-theta.as_slice().iter().map(|t| t * t).sum::<f64>() / d).exp()
    }
}

impl Default for QuadraticPotential {
    fn default() -> Self {
        Self::new(1, 10.0).expect("valid defaults")
    }
}

impl FimProvider for QuadraticPotential {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn fim(&self, theta: &ParameterVector, _rng: &mut RandomStream) -> Result<FisherMatrix> {
        let d = self.domain.dim();
        FisherMatrix::new(DMatrix::identity(d, d) * self.scale(theta), FimSource::Analytic)
    }

    fn fim_derivatives(&self, theta: &ParameterVector, _rng: &mut RandomStream) -> Result<Vec<DMatrix<f64>>> {
        let d = self.domain.dim();
        let s = self.scale(theta);
        Ok((0..d)
            .map(|j| DMatrix::identity(d, d) * (-2.0 * theta[j] / d as f64 * s))
            .collect())
    }
}
