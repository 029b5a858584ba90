//! Scalar toy information `J(θ) = a·θ^p` with closed-form derivative.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::fim::{FimProvider, FimSource, FisherMatrix};
use crate::model::{BoxConstraint, ParameterVector};
use crate::rng::RandomStream;

#[derive(Clone, Debug)]
pub struct PowerFim {
    pub coef: f64,
    pub power: i32,
    pub domain: BoxConstraint,
}

impl PowerFim {
    pub fn new(coef: f64, power: i32, lo: f64, hi: f64) -> Result<Self> {
        Ok(Self {
            coef,
            power,
            domain: BoxConstraint::interval(lo, hi)?,
        })
    }
}

impl FimProvider for PowerFim {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> &BoxConstraint {
        &self.domain
    }

    fn fim(&self, theta: &ParameterVector, _rng: &mut RandomStream) -> Result<FisherMatrix> {
        FisherMatrix::scalar(self.coef * theta[0].powi(self.power), FimSource::Analytic)
    }

    fn fim_derivatives(&self, theta: &ParameterVector, _rng: &mut RandomStream) -> Result<Vec<DMatrix<f64>>> {
        let p = self.power as f64;
        Ok(vec![DMatrix::from_element(1, 1, self.coef * p * theta[0].powi(self.power - 1))])
    }
}
