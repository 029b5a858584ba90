//! Two-stage estimation `θ̂(y) = g(h(y))`: a fixed log-domain compression `h`
//! and an inverse-distance-weighted k-nearest-neighbor regression `g` trained
//! on simulated `(θ, h(y))` pairs.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::model::{ObservationBatch, ParameterVector, StatisticalModel};
use crate::rng::RandomStream;

pub const FEATURE_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const FEATURE_DIM: usize = 2 + FEATURE_QUANTILES.len();

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `[mean ln A, std ln A, ln q₀.₁, ln q₀.₂₅, ln q₀.₅, ln q₀.₇₅, ln q₀.₉]`.
pub fn compress(y: &ObservationBatch) -> Result<[f64; FEATURE_DIM]> {
    ensure!(y.len() >= 10, "compression needs at least 10 observations");
    ensure!(y.obs_dim() == 1, "scalar observations expected");
    if let Some(a) = y.values().iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::Support(format!("observation {a} is not positive")));
    }
    let mut logs: Vec<f64> = y.values().iter().map(|a| a.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    logs.sort_by(f64::total_cmp);
    let mut out = [0.0; FEATURE_DIM];
    out[0] = mean;
    out[1] = var.sqrt();
    for (o, p) in out[2..].iter_mut().zip(FEATURE_QUANTILES) {
        *o = quantile_sorted(&logs, p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub theta: ParameterVector,
    pub features: Vec<f64>,
}

/// Simulates `observations` draws at each prior point and compresses them.
/// Pair `i` uses `rng`'s `i`-th split, so the set does not depend on scheduling.
pub fn training_set<M: StatisticalModel + ?Sized>(
    model: &M,
    prior_points: &[ParameterVector],
    observations: usize,
    rng: &mut RandomStream,
) -> Result<Vec<TrainingPair>> {
    let base = rng.fork();
    prior_points
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let y = model.simulate(theta, observations, &mut base.split(i as u64))?;
            Ok(TrainingPair {
                theta: theta.clone(),
                features: compress(&y)?.to_vec(),
            })
        })
        .collect()
}

/// `count` points uniform on the box `[lo, hi]^d` given per coordinate.
pub fn uniform_prior_points(lower: &[f64], upper: &[f64], count: usize, rng: &mut RandomStream) -> Result<Vec<ParameterVector>> {
    ensure!(lower.len() == upper.len(), "bounds must have equal length");
    (0..count)
        .map(|_| {
            ParameterVector::new(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| rng.uniform_range(*l, *u))
                    .collect(),
            )
        })
        .collect()
}

/// Standardized k-NN regressor with inverse-distance weights.
#[derive(Clone, Debug)]
pub struct TsEstimator {
    features: Vec<Vec<f64>>,
    thetas: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
    k: usize,
}

impl TsEstimator {
    pub fn fit(pairs: &[TrainingPair], k: usize) -> Result<Self> {
        ensure!(k >= 1, "k must be at least 1");
        ensure!(pairs.len() >= k, "k = {k} exceeds the {} training pairs", pairs.len());
        let p = pairs[0].features.len();
        ensure!(p >= 1, "features must be nonempty");
        ensure!(
            pairs.iter().all(|tp| tp.features.len() == p && tp.features.iter().all(|f| f.is_finite())),
            "feature rows must have equal length and finite entries"
        );
        let d = pairs[0].theta.dim();
        ensure!(pairs.iter().all(|tp| tp.theta.dim() == d), "parameter dimensions differ");
        let n = pairs.len() as f64;
        let means: Vec<f64> = (0..p).map(|j| pairs.iter().map(|tp| tp.features[j]).sum::<f64>() / n).collect();
        let scales: Vec<f64> = (0..p)
            .map(|j| {
                let var = pairs.iter().map(|tp| (tp.features[j] - means[j]).powi(2)).sum::<f64>() / n;
                // A constant column carries no information; any positive scale works.
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let features = pairs
            .iter()
            .map(|tp| standardize(&tp.features, &means, &scales))
            .collect();
        Ok(Self {
            features,
            thetas: pairs.iter().map(|tp| tp.theta.as_slice().to_vec()).collect(),
            means,
            scales,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `θ̂` for a raw (unstandardized) feature vector.
    pub fn estimate(&self, features: &[f64]) -> Result<ParameterVector> {
        ensure!(features.len() == self.means.len(), "feature length mismatch");
        let q = standardize(features, &self.means, &self.scales);
        let mut dist: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &dist[..self.k];
        let d = self.thetas[0].len();
        let mut out = vec![0.0; d];
        let exact: Vec<usize> = nearest.iter().filter(|(dd, _)| *dd == 0.0).map(|(_, i)| *i).collect();
        if !exact.is_empty() {
            for &i in &exact {
                for (o, t) in out.iter_mut().zip(&self.thetas[i]) {
                    *o += t;
                }
            }
            out.iter_mut().for_each(|o| *o /= exact.len() as f64);
        } else {
            let mut wsum = 0.0;
            for &(dd, i) in nearest {
                let w = 1.0 / dd;
                wsum += w;
                for (o, t) in out.iter_mut().zip(&self.thetas[i]) {
                    *o += w * t;
                }
            }
            out.iter_mut().for_each(|o| *o /= wsum);
        }
        ParameterVector::new(out)
    }
}

fn standardize(x: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    x.iter().zip(means).zip(scales).map(|((v, m), s)| (v - m) / s).collect()
}

/// Validation outcome: `(θ, θ̂)` pairs and per-component RMSEs.
#[derive(Clone, Debug)]
pub struct TsEvaluation {
    pub pairs: Vec<(ParameterVector, ParameterVector)>,
    pub rmse: Vec<f64>,
    /// RMSE over validation points whose second coordinate (shape) is below
    /// `restrict_below`; NaN if there are none.
    pub rmse_restricted: Vec<f64>,
    pub restrict_below: f64,
}

fn rmse<'a>(pairs: impl Iterator<Item = &'a (ParameterVector, ParameterVector)>, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for (t, e) in pairs {
        for j in 0..d {
            acc[j] += (t[j] - e[j]).powi(2);
        }
        n += 1;
    }
    acc.iter().map(|a| (a / n as f64).sqrt()).collect()
}

/// Estimates every validation dataset and summarizes the errors.
pub fn evaluate(
    est: &TsEstimator,
    validation: &[(ParameterVector, ObservationBatch)],
    restrict_below: f64,
) -> Result<TsEvaluation> {
    ensure!(!validation.is_empty(), "validation set is empty");
    let pairs = validation
        .par_iter()
        .map(|(theta, y)| Ok((theta.clone(), est.estimate(&compress(y)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let d = pairs[0].0.dim();
    ensure!(d >= 2, "restricted RMSE needs a second coordinate");
    Ok(TsEvaluation {
        rmse: rmse(pairs.iter(), d),
        rmse_restricted: rmse(pairs.iter().filter(|(t, _)| t[1] < restrict_below), d),
        restrict_below,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::weibull::EULER_GAMMA;
    use crate::models::WeibullModel;
    use approx::assert_relative_eq;

    fn batch(v: Vec<f64>) -> ObservationBatch {
        ObservationBatch::scalars(v).unwrap()
    }

    #[test]
    fn constant_batch_features() {
        let f = compress(&batch(vec![3.0; 12])).unwrap();
        let l = 3.0f64.ln();
        assert_relative_eq!(f[0], l, epsilon = 1e-15);
        assert!(f[1] < 1e-14);
        for v in &f[2..] {
            assert_relative_eq!(*v, l, epsilon = 1e-15);
        }
    }

    #[test]
    fn compression_errors() {
        assert!(matches!(compress(&batch(vec![1.0; 9])), Err(Error::ContractViolation(_))));
        let mut v = vec![1.0; 10];
        v[4] = 0.0;
        assert!(matches!(compress(&batch(v)), Err(Error::Support(_))));
    }

    #[test]
    fn compression_is_scale_equivariant() {
        let mut rng = RandomStream::from_seed(2);
        let y = batch((0..50).map(|_| rng.uniform_open() * 4.0).collect());
        let c = 7.3;
        let (f, g) = (compress(&y).unwrap(), compress(&y.scaled(c)).unwrap());
        assert_relative_eq!(g[1], f[1], epsilon = 1e-12);
        for j in [0, 2, 3, 4, 5, 6] {
            assert_relative_eq!(g[j], f[j] + c.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_log_of_standard_exponential() {
        let m = WeibullModel::default();
        let y = m
            .simulate(&ParameterVector::new(vec![1.0, 1.0]).unwrap(), 100_000, &mut RandomStream::from_seed(8))
            .unwrap();
        assert!((compress(&y).unwrap()[0] + EULER_GAMMA).abs() < 0.01);
    }

    fn pair(theta: Vec<f64>, features: Vec<f64>) -> TrainingPair {
        TrainingPair {
            theta: ParameterVector::new(theta).unwrap(),
            features,
        }
    }

    #[test]
    fn one_neighbor_round_trip() {
        let pairs: Vec<TrainingPair> = (0..20)
            .map(|i| pair(vec![i as f64, 2.0 * i as f64 + 1.0], vec![(i * i) as f64, (i as f64).sin()]))
            .collect();
        let est = TsEstimator::fit(&pairs, 1).unwrap();
        for p in &pairs {
            assert_eq!(est.estimate(&p.features).unwrap(), p.theta);
        }
    }

    #[test]
    fn duplicate_rows_average_exact_matches() {
        let pairs = vec![
            pair(vec![1.0, 1.0], vec![0.0, 0.0]),
            pair(vec![3.0, 5.0], vec![0.0, 0.0]),
            pair(vec![100.0, 100.0], vec![1.0, 1.0]),
        ];
        let est = TsEstimator::fit(&pairs, 3).unwrap();
        assert_eq!(est.estimate(&[0.0, 0.0]).unwrap().as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn symmetric_neighbors_give_mean() {
        let pairs = vec![
            pair(vec![1.0, 10.0], vec![1.0, 0.0]),
            pair(vec![3.0, 20.0], vec![-1.0, 0.0]),
            pair(vec![5.0, 30.0], vec![0.0, 1.0]),
            pair(vec![7.0, 40.0], vec![0.0, -1.0]),
        ];
        let est = TsEstimator::fit(&pairs, 4).unwrap();
        let e = est.estimate(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(e[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        let pairs = vec![pair(vec![1.0, 1.0], vec![0.0])];
        assert!(TsEstimator::fit(&pairs, 2).is_err());
        assert!(TsEstimator::fit(&pairs, 0).is_err());
    }

    #[test]
    fn linear_ground_truth_is_recovered() {
        let mut rng = RandomStream::from_seed(5);
        let map = |t: &[f64]| vec![t[0] + 0.5 * t[1], t[0] - t[1], 0.3 * t[1]];
        let mk = |rng: &mut RandomStream| {
            let t = vec![rng.uniform_range(1.0, 20.0), rng.uniform_range(1.0, 20.0)];
            let f = map(&t);
            pair(t, f)
        };
        let train: Vec<TrainingPair> = (0..2000).map(|_| mk(&mut rng)).collect();
        let est = TsEstimator::fit(&train, 5).unwrap();
        let mut se = [0.0; 2];
        let n = 200;
        for _ in 0..n {
            let p = mk(&mut rng);
            let e = est.estimate(&p.features).unwrap();
            for j in 0..2 {
                se[j] += (e[j] - p.theta[j]).powi(2);
            }
        }
        for s in se {
            assert!((s / n as f64).sqrt() < 0.05 * 19.0);
        }
    }

    #[test]
    fn standardization_removes_column_scale() {
        let mut rng = RandomStream::from_seed(6);
        let train: Vec<TrainingPair> = (0..100)
            .map(|_| {
                let f = vec![rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
                pair(vec![f[0] + 3.0, f[1] * f[2]], f)
            })
            .collect();
        let rescaled: Vec<TrainingPair> = train
            .iter()
            .map(|p| {
                let mut f = p.features.clone();
                f[1] = 250.0 * f[1] - 40.0;
                pair(p.theta.as_slice().to_vec(), f)
            })
            .collect();
        let (a, b) = (TsEstimator::fit(&train, 5).unwrap(), TsEstimator::fit(&rescaled, 5).unwrap());
        for _ in 0..50 {
            let q = vec![rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
            let mut qs = q.clone();
            qs[1] = 250.0 * qs[1] - 40.0;
            let (ea, eb) = (a.estimate(&q).unwrap(), b.estimate(&qs).unwrap());
            for j in 0..2 {
                assert_relative_eq!(ea[j], eb[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn perfect_estimates_have_zero_rmse() {
        let pairs: Vec<_> = (1..5)
            .map(|i| {
                let t = ParameterVector::new(vec![i as f64, i as f64]).unwrap();
                (t.clone(), t)
            })
            .collect();
        assert_eq!(rmse(pairs.iter(), 2), vec![0.0, 0.0]);
    }

    #[test]
    fn training_set_is_reproducible() {
        let m = WeibullModel::default();
        let pts = uniform_prior_points(&[1.0, 1.0], &[20.0, 20.0], 30, &mut RandomStream::from_seed(1)).unwrap();
        let a = training_set(&m, &pts, 200, &mut RandomStream::from_seed(9)).unwrap();
        let b = training_set(&m, &pts, 200, &mut RandomStream::from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.features.len() == FEATURE_DIM));
    }
}
