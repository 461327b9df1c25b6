//! Likelihood-reweighted posteriors of the network and of its Gaussian limit.
//!
//! Given a bounded non-negative likelihood `L`, the posterior of a prior law
//! `μ` has density `L/E_μ[L]` with respect to `μ`. The total variation between
//! the network posterior and the Gaussian-limit posterior is controlled by the
//! prior distance through `(‖L‖_∞/E[L(G)]) (1 + ‖L‖_∞/E[L(Z)])`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gaussian::{self, GaussianError, GridSpec, TvEstimate};
use crate::matrix::{self, MatrixError, SymMatrix};
use crate::rng::RngStream;

/// Default mollification width of threshold likelihoods, relative to the prior standard deviation.
pub const DEFAULT_SMOOTHING_FRACTION: f64 = 1e-2;
const SUP_CHECK_POINTS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PosteriorError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("invalid likelihood: {0}")]
    InvalidLikelihood(String),
    #[error("likelihood value {value} at {point:?} exceeds the declared sup norm {sup_norm}")]
    SupNormViolated { value: f64, sup_norm: f64, point: Vec<f64> },
    #[error("likelihood mass {estimate:.3e} is within three confidence half-widths ({ci:.3e}) of zero")]
    MassTooSmall { estimate: f64, ci: f64 },
    #[error("posterior computations need 1 <= d <= 2 for grids, got {0}")]
    DimensionTooLarge(usize),
    #[error("likelihood expects dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Likelihoods available by name in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum LikelihoodKind {
    /// `height · exp(−‖x − center‖² / (2 width²))`.
    GaussianBump { center: Vec<f64>, width: f64, height: f64 },
    /// `height · Φ((x_coordinate − threshold) / smoothing)`, a mollified indicator of `{x_coordinate > threshold}`.
    SmoothedThreshold {
        coordinate: usize,
        threshold: f64,
        /// Mollification width; defaults to 1% of the prior standard deviation of the coordinate.
        smoothing: Option<f64>,
        height: f64,
    },
    Constant { value: f64 },
}

/// A bounded continuous non-negative likelihood with its declared sup norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub kind: LikelihoodKind,
    pub sup_norm: f64,
    pub description: String,
}

impl LikelihoodSpec {
    /// Builds a likelihood with its exact sup norm, resolving a default
    /// smoothing width from the prior covariance `k`.
    pub fn new(kind: LikelihoodKind, k: &SymMatrix) -> Result<Self, PosteriorError> {
        let d = k.dim();
        let (kind, sup_norm, description) = match kind {
            LikelihoodKind::GaussianBump { center, width, height } => {
                if center.len() != d {
                    return Err(PosteriorError::DimensionMismatch { expected: center.len(), got: d });
                }
                if !(width > 0.0 && width.is_finite()) || !(height > 0.0 && height.is_finite()) {
                    return Err(PosteriorError::InvalidLikelihood("bump width and height must be positive".into()));
                }
                let text = format!("gaussian bump at {center:?}, width {width}, height {height}");
                (LikelihoodKind::GaussianBump { center, width, height }, height, text)
            }
            LikelihoodKind::SmoothedThreshold { coordinate, threshold, smoothing, height } => {
                if coordinate >= d {
                    return Err(PosteriorError::InvalidLikelihood(format!("coordinate {coordinate} out of range for d = {d}")));
                }
                if !(height > 0.0 && height.is_finite()) || !threshold.is_finite() {
                    return Err(PosteriorError::InvalidLikelihood("threshold height must be positive".into()));
                }
                let eps = smoothing.unwrap_or(DEFAULT_SMOOTHING_FRACTION * k.get(coordinate, coordinate).sqrt());
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(PosteriorError::InvalidLikelihood(
                        "threshold likelihoods need a positive smoothing width; raw indicators are not continuous".into(),
                    ));
                }
                let text = format!("threshold x[{coordinate}] > {threshold} smoothed over {eps}, height {height}");
                (LikelihoodKind::SmoothedThreshold { coordinate, threshold, smoothing: Some(eps), height }, height, text)
            }
            LikelihoodKind::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(PosteriorError::InvalidLikelihood("constant likelihood must be positive".into()));
                }
                (LikelihoodKind::Constant { value }, value, format!("constant {value}"))
            }
        };
        let spec = Self { kind, sup_norm, description };
        spec.check_sup_norm(k)?;
        Ok(spec)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            LikelihoodKind::GaussianBump { center, width, height } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                height * (-0.5 * r2 / (width * width)).exp()
            }
            LikelihoodKind::SmoothedThreshold { coordinate, threshold, smoothing, height } => {
                let eps = smoothing.expect("smoothing is resolved at construction");
                height * gaussian::normal_cdf((x[*coordinate] - threshold) / eps)
            }
            LikelihoodKind::Constant { value } => *value,
        }
    }

    /// The same likelihood multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let kind = match &self.kind {
            LikelihoodKind::GaussianBump { center, width, height } => {
                LikelihoodKind::GaussianBump { center: center.clone(), width: *width, height: height * c }
            }
            LikelihoodKind::SmoothedThreshold { coordinate, threshold, smoothing, height } => {
                LikelihoodKind::SmoothedThreshold {
                    coordinate: *coordinate,
                    threshold: *threshold,
                    smoothing: *smoothing,
                    height: height * c,
                }
            }
            LikelihoodKind::Constant { value } => LikelihoodKind::Constant { value: value * c },
        };
        Self { kind, sup_norm: self.sup_norm * c, description: format!("{} scaled by {c}", self.description) }
    }

    /// Samples points from `N(0, 4K)` and the likelihood's mode and checks the declared sup norm.
    fn check_sup_norm(&self, k: &SymMatrix) -> Result<(), PosteriorError> {
        if !(self.sup_norm > 0.0 && self.sup_norm.is_finite()) {
            return Err(PosteriorError::InvalidLikelihood(format!("sup norm {} must be positive", self.sup_norm)));
        }
        let root = matrix::psd_sqrt(&k.scale(4.0))?;
        let mut rng = RngStream::new(0x5375_704e).rng(0);
        let mut points: Vec<Vec<f64>> = (0..SUP_CHECK_POINTS)
            .map(|_| {
                let z: Vec<f64> = (0..k.dim()).map(|_| rng.sample(StandardNormal)).collect();
                root.apply(&z)
            })
            .collect();
        if let LikelihoodKind::GaussianBump { center, .. } = &self.kind {
            points.push(center.clone());
        }
        for x in points {
            let value = self.eval(&x);
            if !(value >= 0.0) || value > self.sup_norm * (1.0 + 1e-9) {
                return Err(PosteriorError::SupNormViolated { value, sup_norm: self.sup_norm, point: x });
            }
        }
        Ok(())
    }
}

/// A Monte Carlo mean with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub ci: f64,
    pub n: usize,
}

fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let mean = crate::certify::pairwise_sum(values) / n as f64;
    let var = if n > 1 {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        crate::certify::pairwise_sum(&sq) / (n - 1) as f64
    } else {
        0.0
    };
    MeanEstimate { mean, ci: 1.96 * (var / n as f64).sqrt(), n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodMeans {
    /// `E[L(Z)]` over prior network draws.
    pub e_lz: MeanEstimate,
    /// `E[L(G)]` over `N(0, K)` draws.
    pub e_lg: MeanEstimate,
}

/// Plain Monte Carlo means of the likelihood under the network prior and the Gaussian limit.
pub fn estimate_likelihood_means(
    samples_z: &[Vec<f64>],
    k: &SymMatrix,
    likelihood: &LikelihoodSpec,
    n_g: usize,
    stream: &RngStream,
) -> Result<LikelihoodMeans, PosteriorError> {
    if samples_z.is_empty() || n_g == 0 {
        return Err(PosteriorError::InvalidLikelihood("likelihood means need at least one sample".into()));
    }
    if let Some(z) = samples_z.iter().find(|z| z.len() != k.dim()) {
        return Err(PosteriorError::DimensionMismatch { expected: k.dim(), got: z.len() });
    }
    let lz: Vec<f64> = samples_z.iter().map(|z| likelihood.eval(z)).collect();
    let root = matrix::psd_sqrt(k)?;
    let mut rng = stream.rng(0);
    let lg: Vec<f64> = (0..n_g)
        .map(|_| {
            let z: Vec<f64> = (0..k.dim()).map(|_| rng.sample(StandardNormal)).collect();
            likelihood.eval(&root.apply(&z))
        })
        .collect();
    let means = LikelihoodMeans { e_lz: mean_estimate(&lz), e_lg: mean_estimate(&lg) };
    for m in [means.e_lz, means.e_lg] {
        if m.mean <= 3.0 * m.ci || m.mean <= 0.0 {
            return Err(PosteriorError::MassTooSmall { estimate: m.mean, ci: m.ci });
        }
    }
    Ok(means)
}

/// `(‖L‖_∞ / e_LG) (1 + ‖L‖_∞ / e_LZ) · prior_tv_bound`.
pub fn posterior_tv_bound(prior_tv_bound: f64, likelihood: &LikelihoodSpec, e_lz: f64, e_lg: f64) -> Result<f64, PosteriorError> {
    if !(e_lz > 0.0) || !(e_lg > 0.0) {
        return Err(PosteriorError::MassTooSmall { estimate: e_lz.min(e_lg), ci: 0.0 });
    }
    let sup = likelihood.sup_norm;
    Ok(sup / e_lg * (1.0 + sup / e_lz) * prior_tv_bound)
}

/// Bound for predictions at new inputs: the `(d + s)`-dimensional posterior
/// distance with the squared sup norm in the leading factor.
pub fn prediction_tv_bound(prior_tv_bound: f64, likelihood: &LikelihoodSpec, e_lz: f64, e_lg: f64) -> Result<f64, PosteriorError> {
    if !(e_lz > 0.0) || !(e_lg > 0.0) {
        return Err(PosteriorError::MassTooSmall { estimate: e_lz.min(e_lg), ci: 0.0 });
    }
    let sup = likelihood.sup_norm;
    Ok(sup * sup / e_lg * (1.0 + sup / e_lz) * prior_tv_bound)
}

/// Total variation between `L·p_Z / ∫L·p_Z` and `L·φ_K / ∫L·φ_K` on a grid.
pub fn posterior_tv_numeric(
    mixture_density_z: impl Fn(&[f64]) -> f64 + Sync,
    k: &SymMatrix,
    likelihood: &LikelihoodSpec,
    grid: &GridSpec,
) -> Result<TvEstimate, PosteriorError> {
    use rayon::prelude::*;
    if !(1..=2).contains(&k.dim()) {
        return Err(PosteriorError::DimensionTooLarge(k.dim()));
    }
    if grid.dim != k.dim() {
        return Err(PosteriorError::DimensionMismatch { expected: k.dim(), got: grid.dim });
    }
    let target = gaussian::GaussianDensity::new(k)?;
    let points = grid.points_list();
    let lik: Vec<f64> = points.iter().map(|x| likelihood.eval(x)).collect();
    let pz: Vec<f64> = points.par_iter().map(|x| mixture_density_z(x)).collect();
    let weighted_z: Vec<f64> = pz.iter().zip(&lik).map(|(p, l)| p * l).collect();
    let weighted_g: Vec<f64> = points.iter().zip(&lik).map(|(x, l)| target.eval(x) * l).collect();
    let mass_z = gaussian::grid_integral(&weighted_z, grid)?;
    let mass_g = gaussian::grid_integral(&weighted_g, grid)?;
    if !(mass_z > 0.0) || !(mass_g > 0.0) {
        return Err(PosteriorError::MassTooSmall { estimate: mass_z.min(mass_g), ci: 0.0 });
    }
    let p: Vec<f64> = weighted_z.iter().map(|v| v / mass_z).collect();
    let q: Vec<f64> = weighted_g.iter().map(|v| v / mass_g).collect();
    Ok(gaussian::tv_from_values(&p, &q, grid)?)
}

/// Summary of a posterior comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub likelihood: LikelihoodSpec,
    pub e_lz: MeanEstimate,
    pub e_lg: MeanEstimate,
    pub prior_tv_bound: f64,
    pub tv_bound_posterior: f64,
    pub prediction_tv_bound: f64,
    pub tv_measured_posterior: Option<f64>,
    pub tv_measured_prior: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> SymMatrix {
        SymMatrix::scalar(1.0).unwrap()
    }

    fn normal(v: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| (-0.5 * x[0] * x[0] / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn constant_likelihood_means_are_exact() {
        let lik = LikelihoodSpec::new(LikelihoodKind::Constant { value: 1.0 }, &unit()).unwrap();
        let z = vec![vec![0.3], vec![-1.0], vec![2.0]];
        let m = estimate_likelihood_means(&z, &unit(), &lik, 10, &RngStream::new(1)).unwrap();
        assert_eq!(m.e_lz.mean, 1.0);
        assert_eq!(m.e_lg.mean, 1.0);
    }

    #[test]
    fn threshold_mass_is_about_half() {
        let lik = LikelihoodSpec::new(
            LikelihoodKind::SmoothedThreshold { coordinate: 0, threshold: 0.0, smoothing: None, height: 1.0 },
            &unit(),
        )
        .unwrap();
        let m = estimate_likelihood_means(&[vec![1.0]], &unit(), &lik, 200_000, &RngStream::new(2)).unwrap();
        assert!((m.e_lg.mean - 0.5).abs() < 4.0 * m.e_lg.ci / 1.96);
        let raw = LikelihoodKind::SmoothedThreshold { coordinate: 0, threshold: 0.0, smoothing: Some(0.0), height: 1.0 };
        assert!(LikelihoodSpec::new(raw, &unit()).is_err());
    }

    #[test]
    fn bump_mass_matches_quadrature() {
        let lik = LikelihoodSpec::new(LikelihoodKind::GaussianBump { center: vec![0.5], width: 0.7, height: 1.0 }, &unit())
            .unwrap();
        let m = estimate_likelihood_means(&[vec![0.0]], &unit(), &lik, 400_000, &RngStream::new(3)).unwrap();
        // ∫ exp(−(x−c)²/(2w²)) φ(x) dx = w/√(1+w²) · exp(−c²/(2(1+w²))).
        let w2: f64 = 0.49;
        let exact = (w2 / (1.0 + w2)).sqrt() * (-0.25 / (2.0 * (1.0 + w2))).exp();
        let gh = crate::quadrature::gauss_hermite(60).unwrap();
        assert_relative_eq!(gh.integrate(|x| lik.eval(&[x])), exact, epsilon = 1e-12);
        assert!((m.e_lg.mean - exact).abs() < 1e-3);
    }

    #[test]
    fn bound_arithmetic() {
        let lik = LikelihoodSpec::new(LikelihoodKind::Constant { value: 1.0 }, &unit()).unwrap();
        assert_relative_eq!(posterior_tv_bound(0.1, &lik, 0.5, 0.5).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(posterior_tv_bound(0.0, &lik, 0.5, 0.5).unwrap(), 0.0);
        for c in [0.01, 1.0, 7.5] {
            let lc = LikelihoodSpec::new(LikelihoodKind::Constant { value: c }, &unit()).unwrap();
            assert_relative_eq!(posterior_tv_bound(0.2, &lc, c, c).unwrap(), 0.4, epsilon = 1e-15);
        }
        assert!(posterior_tv_bound(0.1, &lik, 0.0, 0.5).is_err());
        assert_relative_eq!(prediction_tv_bound(0.1, &lik.scaled(2.0), 1.0, 1.0).unwrap(), 4.0 * 3.0 * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn sup_norm_is_checked() {
        let mut lik = LikelihoodSpec::new(LikelihoodKind::Constant { value: 2.0 }, &unit()).unwrap();
        lik.sup_norm = 1.0;
        assert!(matches!(lik.check_sup_norm(&unit()), Err(PosteriorError::SupNormViolated { .. })));
    }

    #[test]
    fn numeric_posterior_tv_examples() {
        let grid = GridSpec::covering(1, 2.0).unwrap();
        let k = unit();
        let constant = LikelihoodSpec::new(LikelihoodKind::Constant { value: 3.0 }, &k).unwrap();
        let prior = gaussian::tv_numeric(normal(1.5), normal(1.0), &grid).unwrap();
        let post = posterior_tv_numeric(normal(1.5), &k, &constant, &grid).unwrap();
        assert!((post.value - prior.value).abs() < 1e-10);
        let bump = LikelihoodSpec::new(LikelihoodKind::GaussianBump { center: vec![0.4], width: 0.5, height: 1.0 }, &k).unwrap();
        assert!(posterior_tv_numeric(normal(1.0), &k, &bump, &grid).unwrap().value < 1e-14);
        let a = posterior_tv_numeric(normal(1.2), &k, &bump, &grid).unwrap().value;
        let b = posterior_tv_numeric(normal(1.2), &k, &bump.scaled(9.0), &grid).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
}
