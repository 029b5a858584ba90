//! Histograms, total-variation distance, reference densities, effective
//! sample size and finite-difference gradient checks.

use crate::error::{ensure, Error, Result};
use crate::fim::{evaluate_potential, potential, FimProvider, GradientMode, OnePointConfig};
use crate::model::ParameterVector;
use crate::rng::RandomStream;

/// Probability masses over contiguous bins.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedDensity {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

impl BinnedDensity {
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        ensure!(mass.len() >= 1 && edges.len() == mass.len() + 1, "need B + 1 edges for B bins");
        ensure!(edges.windows(2).all(|w| w[0] < w[1]), "edges must be strictly increasing");
        ensure!(mass.iter().all(|m| *m >= 0.0), "masses must be nonnegative");
        let total: f64 = mass.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-12, "masses sum to {total}, not 1");
        Ok(Self { edges, mass })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    /// Mass per unit length in each bin.
    pub fn density(&self) -> Vec<f64> {
        self.mass
            .iter()
            .zip(self.edges.windows(2))
            .map(|(m, e)| m / (e[1] - e[0]))
            .collect()
    }

    /// Mass of the bins lying entirely inside `[lo, hi]`, divided by their total width.
    pub fn mean_density_over(&self, lo: f64, hi: f64) -> f64 {
        let tol = 1e-9 * (self.edges[self.edges.len() - 1] - self.edges[0]);
        let (mut mass, mut width) = (0.0, 0.0);
        for (m, e) in self.mass.iter().zip(self.edges.windows(2)) {
            if e[0] >= lo - tol && e[1] <= hi + tol {
                mass += m;
                width += e[1] - e[0];
            }
        }
        if width > 0.0 {
            mass / width
        } else {
            f64::NAN
        }
    }
}

/// `bins + 1` equispaced edges on `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

/// Normalized histogram over `bins` equal bins of `[lo, hi]`; the last bin is
/// closed on the right.
pub fn histogram(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<BinnedDensity> {
    let (lo, hi) = range;
    ensure!(bins >= 2, "need at least two bins");
    ensure!(lo < hi, "empty histogram range");
    ensure!(!samples.is_empty(), "no samples to bin");
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &s in samples {
        ensure!(s >= lo && s <= hi, "sample {s} outside [{lo}, {hi}]");
        let b = (((s - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = samples.len() as f64;
    BinnedDensity::new(uniform_edges(lo, hi, bins), counts.iter().map(|c| *c as f64 / n).collect())
}

/// `½ Σ |a − b|` over identical bins.
pub fn tv_distance(a: &BinnedDensity, b: &BinnedDensity) -> Result<f64> {
    ensure!(a.edges == b.edges, "densities have different bin edges");
    Ok(0.5 * a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// `√J` on `grid`, normalized by trapezoidal quadrature over the grid's span.
pub fn normalized_jeffreys_curve(grid: &[f64], fim: &[f64]) -> Result<Vec<f64>> {
    ensure!(grid.len() >= 2 && grid.len() == fim.len(), "need matching grid and FIM values");
    ensure!(grid.windows(2).all(|w| w[0] < w[1]), "grid must be strictly increasing");
    if let Some(v) = fim.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::SingularFim(format!("reference FIM value {v} is not positive")));
    }
    let root: Vec<f64> = fim.iter().map(|j| j.sqrt()).collect();
    let area: f64 = grid
        .windows(2)
        .zip(root.windows(2))
        .map(|(g, r)| 0.5 * (g[1] - g[0]) * (r[0] + r[1]))
        .sum();
    Ok(root.iter().map(|r| r / area).collect())
}

/// Bin masses of the Jeffreys density `∝ √J` described by `(grid, fim)`.
///
/// `√J` is taken as piecewise linear between grid points, so the masses are
/// exact integrals of the trapezoidal interpolant and sum to one. Bins split
/// `[grid[0], grid[G−1]]` evenly.
pub fn reference_density(grid: &[f64], fim: &[f64], bins: usize) -> Result<BinnedDensity> {
    ensure!(bins >= 1, "need at least one bin");
    let dens = normalized_jeffreys_curve(grid, fim)?;
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    let edges = uniform_edges(lo, hi, bins);
    let interp = |x: f64, k: usize| {
        let t = (x - grid[k]) / (grid[k + 1] - grid[k]);
        dens[k] + t * (dens[k + 1] - dens[k])
    };
    let mut mass = vec![0.0; bins];
    let mut b = 0;
    for k in 0..grid.len() - 1 {
        let mut a = grid[k];
        let end = grid[k + 1];
        while a < end {
            while b + 1 < bins && edges[b + 1] <= a {
                b += 1;
            }
            let stop = if b + 1 < bins { end.min(edges[b + 1]) } else { end };
            mass[b] += 0.5 * (stop - a) * (interp(a, k) + interp(stop, k));
            a = stop;
        }
    }
    // The pieces partition the trapezoid exactly; renormalize away rounding.
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    BinnedDensity::new(edges, mass)
}

/// `N / τ` with `τ = 1 + 2Σρ_k`, truncating the autocorrelation sum with
/// Geyer's initial positive sequence. A constant chain has ESS 0.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    ensure!(chain.len() >= 10, "ESS needs at least 10 draws");
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let autocov = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        return Ok(0.0);
    }
    // τ = −1 + 2 Σ_m (γ_{2m} + γ_{2m+1}) / γ_0 over the positive prefix.
    let mut sum_pairs = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum_pairs / gamma0).max(1.0 / n as f64);
    Ok(n as f64 / tau)
}

/// Componentwise `|analytic − central FD| / (|central FD| + 1e−12)` for
/// `∇V` at `theta`, using the provider's closed-form FIM derivatives.
pub fn fd_gradient_check<P: FimProvider + ?Sized>(provider: &P, theta: &ParameterVector, h: f64) -> Result<Vec<f64>> {
    ensure!(h > 0.0, "step must be positive");
    let domain = provider.domain();
    for (j, t) in theta.as_slice().iter().enumerate() {
        ensure!(
            t - h > domain.lower()[j] && t + h < domain.upper()[j],
            "θ is within h of the domain boundary in coordinate {j}"
        );
    }
    let rng = RandomStream::from_seed(0);
    let cfg = OnePointConfig {
        delta: h,
        direction_draws: 1,
    };
    let eval = evaluate_potential(provider, theta, GradientMode::AnalyticTrace, &cfg, &mut rng.clone())?;
    let v_at = |p: &ParameterVector| -> Result<f64> { potential(&provider.fim(p, &mut rng.clone())?) };
    (0..theta.dim())
        .map(|j| {
            let mut e = vec![0.0; theta.dim()];
            e[j] = 1.0;
            let fd = (v_at(&theta.offset(&e, h)?)? - v_at(&theta.offset(&e, -h)?)?) / (2.0 * h);
            Ok((eval.gradient[j] - fd).abs() / (fd.abs() + 1e-12))
        })
        .collect()
}
