//! Moment estimation and explicit distance certificates.
//!
//! A centered conditionally Gaussian vector `F ~ √A·N` is compared with
//! `G ~ N(0, K)` through two functionals of the random covariance `A`:
//! `mean_gap = ‖E[A] − K‖_HS` and `eighth_root = E[‖A − K‖_HS⁸]^{1/4}`.
//! The certificates below are linear in these two quantities with
//! coefficients depending only on `d` and `K`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gaussian::{self, GaussianError, GridSpec, TvEstimate};
use crate::matrix::{self, MatrixError, SymMatrix, INV_REL_TOL};
use crate::network::{self, NetworkConfig, NetworkError, ProbeSet};
use crate::rng::{domain, RngStream};

/// Minimum number of Monte Carlo draws for moment estimation.
pub const MIN_MC_SAMPLES: usize = 100;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
/// Largest cloud accepted by the exact assignment solver.
pub const MAX_ASSIGNMENT_POINTS: usize = 2000;
/// Mixture components above which the one-dimensional mixture density is binned.
const EXACT_MIXTURE_LIMIT: usize = 4096;
const MIXTURE_BINS: usize = 2048;
/// Largest number of components evaluated exactly for a two-dimensional mixture.
pub const MAX_MIXTURE_COMPONENTS_2D: usize = 2000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertifyError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("K is singular (minimum eigenvalue {min_eig:.3e})")]
    SingularMatrix { min_eig: f64 },
    #[error("{singular} of {total} covariance draws were not invertible; the entropy bound is withheld")]
    InvertibilityUnverified { singular: usize, total: usize },
    #[error("at least {MIN_MC_SAMPLES} Monte Carlo samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// Sum in a fixed binary-tree order, independent of how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (left, right) = values.split_at(n / 2);
            pairwise_sum(left) + pairwise_sum(right)
        }
    }
}

fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Entrywise mean of symmetric matrices with pairwise summation per entry.
pub fn mean_matrix(samples: &[SymMatrix]) -> Result<SymMatrix, CertifyError> {
    let first = samples.first().ok_or_else(|| CertifyError::InvalidData("no samples".into()))?;
    let d = first.dim();
    let mut column = vec![0.0; samples.len()];
    Ok(SymMatrix::from_upper_fn(d, |i, j| {
        for (c, a) in column.iter_mut().zip(samples) {
            *c = a.get(i, j);
        }
        pairwise_mean(&column)
    })?)
}

/// Monte Carlo estimates of the moment functionals entering the certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `‖Ê[A] − K‖_HS`.
    pub mean_gap: f64,
    /// `Ê[‖A − K‖_HS⁸]^{1/4}`.
    pub eighth_root: f64,
    /// `Ê[‖A‖_HS²]`.
    pub a_second: f64,
    pub n_mc: usize,
    /// 95% bootstrap half-width of `mean_gap`.
    pub ci_mean_gap: f64,
    /// 95% bootstrap half-width of `eighth_root`.
    pub ci_eighth: f64,
    /// `Ê[‖A⁻¹‖_HS²]` over the invertible draws.
    pub inv_second: Option<f64>,
    /// Fraction of draws whose covariance was numerically singular.
    pub singular_fraction: f64,
    /// Number of probe perturbations applied by the ReLU kink policy.
    pub kink_perturbations: u64,
}

/// Per-draw scalars reused by the bootstrap.
struct DrawSummary {
    gap_hs8: f64,
    a_hs2: f64,
    inv_hs2: Option<f64>,
}

fn summarize(a: &SymMatrix, k: &SymMatrix) -> Result<DrawSummary, CertifyError> {
    let gap = a.sub(k)?.frobenius_norm();
    let inv_hs2 = match matrix::sym_inverse(a) {
        Ok(inv) => Some(inv.frobenius_norm().powi(2)),
        Err(MatrixError::Singular { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(DrawSummary { gap_hs8: gap.powi(8), a_hs2: a.frobenius_norm().powi(2), inv_hs2 })
}

fn percentile_half_width(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
    };
    0.5 * (at(0.975) - at(0.025)).max(0.0)
}

/// Moment estimates from given covariance draws, with bootstrap intervals.
pub fn moments_from_samples(
    samples: &[SymMatrix],
    k: &SymMatrix,
    bootstrap_n: usize,
    stream: &RngStream,
) -> Result<MomentEstimates, CertifyError> {
    if samples.is_empty() {
        return Err(CertifyError::InvalidData("no covariance samples".into()));
    }
    let d = k.dim();
    if let Some(bad) = samples.iter().find(|a| a.dim() != d) {
        return Err(MatrixError::DimensionMismatch(bad.dim(), d).into());
    }
    let n = samples.len();
    let summaries = samples.par_iter().map(|a| summarize(a, k)).collect::<Result<Vec<_>, _>>()?;
    let hs8: Vec<f64> = summaries.iter().map(|s| s.gap_hs8).collect();
    let a2: Vec<f64> = summaries.iter().map(|s| s.a_hs2).collect();
    let inv: Vec<f64> = summaries.iter().filter_map(|s| s.inv_hs2).collect();
    let mean_a = mean_matrix(samples)?;
    let mean_gap = mean_a.sub(k)?.frobenius_norm();
    let eighth_root = pairwise_mean(&hs8).powf(0.25);

    // Entries of A − K laid out per draw for fast resampled means.
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let centred: Vec<Vec<f64>> =
        samples.iter().map(|a| pairs.iter().map(|&(i, j)| a.get(i, j) - k.get(i, j)).collect()).collect();
    let boot = stream.child(domain::BOOTSTRAP);
    let (ci_mean_gap, ci_eighth) = if bootstrap_n == 0 {
        (0.0, 0.0)
    } else {
        let stats: Vec<(f64, f64)> = (0..bootstrap_n as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = boot.rng(b);
                let mut sums = vec![0.0; pairs.len()];
                let mut eighth = 0.0;
                for _ in 0..n {
                    let idx = rng.random_range(0..n);
                    for (s, v) in sums.iter_mut().zip(&centred[idx]) {
                        *s += v;
                    }
                    eighth += hs8[idx];
                }
                let gap2: f64 = pairs
                    .iter()
                    .zip(&sums)
                    .map(|(&(i, j), s)| {
                        let m = s / n as f64;
                        if i == j {
                            m * m
                        } else {
                            2.0 * m * m
                        }
                    })
                    .sum();
                (gap2.sqrt(), (eighth / n as f64).powf(0.25))
            })
            .collect();
        (
            percentile_half_width(stats.iter().map(|s| s.0).collect()),
            percentile_half_width(stats.iter().map(|s| s.1).collect()),
        )
    };
    Ok(MomentEstimates {
        mean_gap,
        eighth_root,
        a_second: pairwise_mean(&a2),
        n_mc: n,
        ci_mean_gap,
        ci_eighth,
        inv_second: if inv.is_empty() { None } else { Some(pairwise_mean(&inv)) },
        singular_fraction: (n - inv.len()) as f64 / n as f64,
        kink_perturbations: 0,
    })
}

/// Draws `n_mc` conditional covariances of the network and estimates the moments.
pub fn estimate_moments(
    config: &NetworkConfig,
    probes: &ProbeSet,
    k: &SymMatrix,
    n_mc: usize,
    bootstrap_n: usize,
    stream: &RngStream,
) -> Result<(MomentEstimates, Vec<SymMatrix>), CertifyError> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(CertifyError::TooFewSamples(n_mc));
    }
    let draws = network::sample_covariances(config, probes, n_mc, stream)?;
    let kinks: u64 = draws.iter().map(|s| s.kink_perturbations as u64).sum();
    let samples: Vec<SymMatrix> = draws.into_iter().map(|s| s.matrix).collect();
    let mut moments = moments_from_samples(&samples, k, bootstrap_n, stream)?;
    moments.kink_perturbations = kinks;
    Ok((moments, samples))
}

/// Spectral quantities of `K` used by every certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub d: usize,
    pub lambda_k: f64,
    pub op_k: f64,
    pub hs_k: f64,
    pub hs_kinv: f64,
    pub det_k: f64,
}

impl KernelConstants {
    pub fn new(k: &SymMatrix) -> Result<Self, CertifyError> {
        let spec = matrix::spectral(k)?;
        if spec.min_eig <= INV_REL_TOL * spec.op_norm.max(f64::MIN_POSITIVE) {
            return Err(CertifyError::SingularMatrix { min_eig: spec.min_eig });
        }
        let hs_kinv = spec.eigenvalues.iter().map(|l| 1.0 / (l * l)).sum::<f64>().sqrt();
        Ok(Self {
            d: k.dim(),
            lambda_k: spec.min_eig,
            op_k: spec.op_norm,
            hs_k: spec.hs_norm,
            hs_kinv,
            det_k: spec.determinant(),
        })
    }

    /// `2√6 + 3√2 + 2 + √d`.
    pub fn dimension_sum(&self) -> f64 {
        2.0 * 6f64.sqrt() + 3.0 * 2f64.sqrt() + 2.0 + (self.d as f64).sqrt()
    }

    /// `½ max{|log(2^d det K / (2‖K‖_op + λ)^d)|, log(2^d det K / λ^d)} + (√2 + 1) d / 4`.
    pub fn log_determinant_term(&self) -> f64 {
        let d = self.d as f64;
        let log_det = self.det_k.ln() + d * 2f64.ln();
        let first = (log_det - d * (2.0 * self.op_k + self.lambda_k).ln()).abs();
        let second = log_det - d * self.lambda_k.ln();
        0.5 * first.max(second) + (2f64.sqrt() + 1.0) * d / 4.0
    }
}

/// `3 + √3/8 + 5√10 + 4√30/3 + √15/3 + 10√5/3`.
pub fn numeric_constant() -> f64 {
    3.0 + 3f64.sqrt() / 8.0
        + 5.0 * 10f64.sqrt()
        + 4.0 * 30f64.sqrt() / 3.0
        + 15f64.sqrt() / 3.0
        + 10.0 * 5f64.sqrt() / 3.0
}

/// A named coefficient of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// One additive contribution: `coefficient × moment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub coefficient: f64,
    pub moment: String,
    pub moment_value: f64,
    pub contribution: f64,
}

fn named(name: &str, value: f64) -> NamedValue {
    NamedValue { name: name.to_string(), value }
}

fn term(name: &str, coefficient: f64, moment: &str, moment_value: f64) -> BoundTerm {
    BoundTerm {
        name: name.to_string(),
        coefficient,
        moment: moment.to_string(),
        moment_value,
        contribution: coefficient * moment_value,
    }
}

/// Audit trail of a certificate: every coefficient and the additive terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub coefficients: Vec<NamedValue>,
    pub tv_terms: Vec<BoundTerm>,
    pub w2_terms: Vec<BoundTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityFlags {
    pub nondegenerate: bool,
    pub invertibility: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub d: usize,
    pub lambda_k: f64,
    pub hs_k: f64,
    pub op_k: f64,
    pub hs_kinv: f64,
    pub det_k: f64,
    pub tv_bound: f64,
    pub w2_bound: f64,
    /// Propagated 95% half-width of `tv_bound`.
    pub tv_bound_ci: f64,
    pub w2_bound_ci: f64,
    pub entropy_bound: Option<f64>,
    pub term_breakdown: TermBreakdown,
    pub moments: MomentEstimates,
    pub validity_flags: ValidityFlags,
}

/// Coefficients multiplying `mean_gap` and `eighth_root` in the two displays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvW2Coefficients {
    pub tv_mean_gap: f64,
    pub tv_eighth_root: f64,
    pub w2_mean_gap: f64,
    pub w2_eighth_root: f64,
}

fn tv_w2_parts(c: &KernelConstants) -> (TvW2Coefficients, Vec<NamedValue>) {
    let d = c.d as f64;
    let s = c.dimension_sum();
    let lam4 = c.lambda_k.powi(4);
    let kinv2 = c.hs_kinv * c.hs_kinv;
    let inner = kinv2 * (c.lambda_k * c.lambda_k + 4.0 * c.hs_k * c.hs_k);
    let log_term = c.log_determinant_term();
    let cstar = numeric_constant();

    let tv_lead = (3f64.sqrt() / (24.0 * 2f64.sqrt()) * s).sqrt() * c.hs_kinv;
    let tv_kernel = 2f64.sqrt() / (2.0 * lam4 * 3f64.sqrt()) * s * inner;
    let tv_log = 70f64.sqrt() * d * d / (2.0 * lam4) * log_term;
    let tv_numeric = cstar * d * d / (2.0 * lam4);
    let tv_root = (tv_kernel + tv_log + tv_numeric).sqrt();
    let tv_tail = 8.0 / (c.lambda_k * c.lambda_k);

    let op_root = c.op_k.sqrt();
    let w2_lead = op_root * (3f64.sqrt() / (6.0 * 2f64.sqrt()) * s).sqrt() * c.hs_kinv;
    let w2_kernel = 2.0 * 2f64.sqrt() / (lam4 * 3f64.sqrt()) * s * inner;
    let w2_log = 2.0 * 70f64.sqrt() * d * d / lam4 * log_term;
    let w2_numeric = cstar * 2.0 * d * d / lam4;
    let w2_root = op_root * (w2_kernel + w2_log + w2_numeric).sqrt();
    let w2_tail = 2.0 / (c.lambda_k * c.lambda_k);

    let coefficients = vec![
        named("dimension_sum", s),
        named("log_determinant_term", log_term),
        named("numeric_constant", cstar),
        named("tv_mean_gap_coefficient", tv_lead),
        named("tv_bracket_inverse_kernel", tv_kernel),
        named("tv_bracket_log_determinant", tv_log),
        named("tv_bracket_numeric", tv_numeric),
        named("tv_bracket_root", tv_root),
        named("tv_tail", tv_tail),
        named("w2_mean_gap_coefficient", w2_lead),
        named("w2_bracket_inverse_kernel", w2_kernel),
        named("w2_bracket_log_determinant", w2_log),
        named("w2_bracket_numeric", w2_numeric),
        named("w2_bracket_root", w2_root),
        named("w2_tail", w2_tail),
    ];
    (
        TvW2Coefficients {
            tv_mean_gap: tv_lead,
            tv_eighth_root: tv_root + tv_tail,
            w2_mean_gap: w2_lead,
            w2_eighth_root: w2_root + w2_tail,
        },
        coefficients,
    )
}

/// Coefficients of the total variation and Wasserstein displays for `K`.
pub fn tv_w2_coefficients(k: &SymMatrix) -> Result<TvW2Coefficients, CertifyError> {
    Ok(tv_w2_parts(&KernelConstants::new(k)?).0)
}

/// Assembles the total variation and 2-Wasserstein certificates.
pub fn tv_w2_bound(k: &SymMatrix, moments: &MomentEstimates) -> Result<BoundCertificate, CertifyError> {
    let c = KernelConstants::new(k)?;
    let (coef, coefficients) = tv_w2_parts(&c);
    let tv_terms = vec![
        term("tv_mean_gap", coef.tv_mean_gap, "mean_gap", moments.mean_gap),
        term("tv_eighth_root", coef.tv_eighth_root, "eighth_root", moments.eighth_root),
    ];
    let w2_terms = vec![
        term("w2_mean_gap", coef.w2_mean_gap, "mean_gap", moments.mean_gap),
        term("w2_eighth_root", coef.w2_eighth_root, "eighth_root", moments.eighth_root),
    ];
    let tv_bound = tv_terms.iter().map(|t| t.contribution).sum();
    let w2_bound = w2_terms.iter().map(|t| t.contribution).sum();
    let entropy = entropy_bound(k, moments).ok();
    Ok(BoundCertificate {
        d: c.d,
        lambda_k: c.lambda_k,
        hs_k: c.hs_k,
        op_k: c.op_k,
        hs_kinv: c.hs_kinv,
        det_k: c.det_k,
        tv_bound,
        w2_bound,
        tv_bound_ci: coef.tv_mean_gap * moments.ci_mean_gap + coef.tv_eighth_root * moments.ci_eighth,
        w2_bound_ci: coef.w2_mean_gap * moments.ci_mean_gap + coef.w2_eighth_root * moments.ci_eighth,
        entropy_bound: entropy,
        term_breakdown: TermBreakdown { coefficients, tv_terms, w2_terms },
        moments: moments.clone(),
        validity_flags: ValidityFlags { nondegenerate: true, invertibility: moments.singular_fraction == 0.0 },
    })
}

/// Upper bound on the relative entropy `D(F ‖ G)`.
///
/// Requires every sampled covariance to be invertible; the estimate of
/// `E[‖A⁻¹‖²_HS]` is otherwise meaningless and the bound is withheld.
pub fn entropy_bound(k: &SymMatrix, moments: &MomentEstimates) -> Result<f64, CertifyError> {
    let c = KernelConstants::new(k)?;
    let inv_second = match moments.inv_second {
        Some(v) if moments.singular_fraction == 0.0 => v,
        _ => {
            let singular = (moments.singular_fraction * moments.n_mc as f64).round() as usize;
            return Err(CertifyError::InvertibilityUnverified { singular, total: moments.n_mc });
        }
    };
    let d = c.d as f64;
    let s = c.dimension_sum();
    let kinv2 = c.hs_kinv * c.hs_kinv;
    let lead = 3f64.sqrt() / (12.0 * 2f64.sqrt()) * s * kinv2 * moments.mean_gap.powi(2);
    let braces = 8.0 * c.hs_k * inv_second.sqrt()
        + 8.0 * c.hs_kinv * moments.a_second.sqrt()
        + 2f64.sqrt() / 3f64.sqrt() * s * kinv2 * (c.lambda_k.powi(2) + 4.0 * c.hs_k.powi(2))
        + 70f64.sqrt() * d * d * c.log_determinant_term()
        + numeric_constant() * d * d;
    // E[‖A − K‖⁸]^{1/2} is the square of eighth_root.
    Ok(lead + braces / c.lambda_k.powi(4) * moments.eighth_root.powi(2))
}

/// Least-squares fit of `log value` against `log width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn rate_fit(widths: &[usize], values: &[f64]) -> Result<RateFit, CertifyError> {
    if widths.len() != values.len() {
        return Err(CertifyError::InvalidData(format!("{} widths for {} values", widths.len(), values.len())));
    }
    if widths.len() < 4 {
        return Err(CertifyError::InvalidData(format!("a rate fit needs at least 4 widths, got {}", widths.len())));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(CertifyError::InvalidData(format!("rate fit values must be positive, got {v}")));
    }
    let xs: Vec<f64> = widths.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CertifyError::InvalidData("widths must not all be equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit { slope, intercept, r2 })
}

/// The Monte Carlo mixture density `x ↦ (1/N) Σ φ_{A_i}(x)` in one or two dimensions.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    dim: usize,
    components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone)]
struct MixtureComponent {
    weight: f64,
    density: gaussian::GaussianDensity,
    /// Second-order correction for a bin of one-dimensional variances.
    spread: f64,
    variance: f64,
    /// Largest marginal standard deviation.
    sd: f64,
}

impl MixtureDensity {
    /// Builds the mixture from covariance draws.
    ///
    /// One-dimensional mixtures with many draws are compressed into bins of
    /// nearby variances; each bin uses its mean variance plus the second-order
    /// Taylor correction in the variance, which leaves an error of third order
    /// in the bin width. Two-dimensional mixtures keep at most the first
    /// [`MAX_MIXTURE_COMPONENTS_2D`] draws.
    pub fn new(samples: &[SymMatrix]) -> Result<Self, CertifyError> {
        let first = samples.first().ok_or_else(|| CertifyError::InvalidData("no samples".into()))?;
        let dim = first.dim();
        if !(1..=2).contains(&dim) {
            return Err(CertifyError::InvalidData(format!("mixture densities need d <= 2, got {dim}")));
        }
        let exact = |subset: &[SymMatrix]| -> Result<Vec<MixtureComponent>, CertifyError> {
            let w = 1.0 / subset.len() as f64;
            subset
                .iter()
                .map(|a| {
                    Ok(MixtureComponent {
                        weight: w,
                        density: gaussian::GaussianDensity::new(a)?,
                        spread: 0.0,
                        variance: if dim == 1 { a.get(0, 0) } else { 0.0 },
                        sd: (0..dim).map(|i| a.get(i, i)).fold(0.0, f64::max).sqrt(),
                    })
                })
                .collect()
        };
        if dim == 2 {
            let n = samples.len().min(MAX_MIXTURE_COMPONENTS_2D);
            return Ok(Self { dim, components: exact(&samples[..n])? });
        }
        if samples.len() <= EXACT_MIXTURE_LIMIT {
            return Ok(Self { dim, components: exact(samples)? });
        }
        let vars: Vec<f64> = samples.iter().map(|a| a.get(0, 0)).collect();
        let lo = vars.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / MIXTURE_BINS as f64).max(f64::MIN_POSITIVE);
        let mut bins: Vec<Vec<f64>> = vec![Vec::new(); MIXTURE_BINS];
        for &v in &vars {
            let b = (((v - lo) / width) as usize).min(MIXTURE_BINS - 1);
            bins[b].push(v);
        }
        let total = vars.len() as f64;
        let mut components = Vec::new();
        for bin in bins.iter().filter(|b| !b.is_empty()) {
            let mean = pairwise_mean(bin);
            let spread = bin.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bin.len() as f64;
            components.push(MixtureComponent {
                weight: bin.len() as f64 / total,
                density: gaussian::GaussianDensity::new(&SymMatrix::scalar(mean)?)?,
                spread,
                variance: mean,
                sd: bin.iter().copied().fold(0.0, f64::max).sqrt(),
            });
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest standard deviation among the components.
    pub fn max_sd(&self) -> f64 {
        self.components.iter().map(|c| c.sd).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut parts: Vec<f64> = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let phi = c.density.eval(x);
            let value = if c.spread > 0.0 {
                // ∂²φ_a/∂a² = φ_a [(x²/(2a²) − 1/(2a))² + 1/(2a²) − x²/a³].
                let a = c.variance;
                let x2 = x[0] * x[0];
                let score = x2 / (2.0 * a * a) - 1.0 / (2.0 * a);
                let curvature = score * score + 1.0 / (2.0 * a * a) - x2 / (a * a * a);
                phi * (1.0 + 0.5 * c.spread * curvature)
            } else {
                phi
            };
            parts.push(c.weight * value);
        }
        pairwise_sum(&parts)
    }

    /// Density values at every grid point, in grid order.
    pub fn values_on(&self, grid: &GridSpec) -> Vec<f64> {
        grid.points_list().par_iter().map(|x| self.eval(x)).collect()
    }
}

/// Grid covering both the mixture and `N(0, K)`.
pub fn covering_grid(mixture: &MixtureDensity, k: &SymMatrix) -> Result<GridSpec, CertifyError> {
    let k_sd = (0..k.dim()).map(|i| k.get(i, i)).fold(0.0, f64::max).sqrt();
    let spec = matrix::spectral(k)?;
    let sd = mixture.max_sd().max(k_sd).max(spec.op_norm.sqrt());
    Ok(GridSpec::covering(k.dim(), sd)?)
}

/// Numerical total variation between the mixture `Ê[φ_A]` and `φ_K`.
pub fn measured_tv(mixture: &MixtureDensity, k: &SymMatrix, grid: Option<GridSpec>) -> Result<TvEstimate, CertifyError> {
    if mixture.dim() != k.dim() {
        return Err(MatrixError::DimensionMismatch(mixture.dim(), k.dim()).into());
    }
    let grid = match grid {
        Some(g) => g,
        None => covering_grid(mixture, k)?,
    };
    let target = gaussian::GaussianDensity::new(k)?;
    let p = mixture.values_on(&grid);
    let q: Vec<f64> = grid.points_list().iter().map(|x| target.eval(x)).collect();
    Ok(gaussian::tv_from_values(&p, &q, &grid)?)
}

/// Minimum-cost perfect assignment for a square cost matrix (row-major).
///
/// Shortest augmenting paths with dual potentials, `O(n³)`. Returns the column
/// assigned to each row.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays with a virtual column 0, following the classical formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Plug-in 2-Wasserstein distance between two equal-size empirical clouds.
///
/// The estimator is biased upward by the sampling noise of both clouds; the
/// bias is not corrected.
pub fn empirical_w2(first: &[Vec<f64>], second: &[Vec<f64>]) -> Result<f64, CertifyError> {
    let n = first.len();
    if n == 0 || n != second.len() {
        return Err(CertifyError::InvalidData(format!("clouds of sizes {n} and {} must be equal and non-empty", second.len())));
    }
    if n > MAX_ASSIGNMENT_POINTS {
        return Err(CertifyError::InvalidData(format!("at most {MAX_ASSIGNMENT_POINTS} points per cloud, got {n}")));
    }
    let cost: Vec<f64> = first
        .iter()
        .flat_map(|a| second.iter().map(move |b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()))
        .collect();
    let assign = assignment(&cost, n);
    let total: Vec<f64> = (0..n).map(|i| cost[i * n + assign[i]]).collect();
    Ok((pairwise_sum(&total) / n as f64).sqrt())
}

/// Draws `n` points from `N(0, K)` on substream `index` of `stream`.
pub fn gaussian_cloud(k: &SymMatrix, n: usize, stream: &RngStream, index: u64) -> Result<Vec<Vec<f64>>, CertifyError> {
    let root = matrix::psd_sqrt(k)?;
    let mut rng = stream.rng(index);
    Ok((0..n)
        .map(|_| {
            let z: Vec<f64> = (0..k.dim()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            root.apply(&z)
        })
        .collect())
}

/// `2Φ(δ/2) − 1`: total variation between unit-variance normals whose means differ by `δ`.
pub fn tv_mean_shift(delta: f64) -> f64 {
    2.0 * gaussian::normal_cdf(delta.abs() / 2.0) - 1.0
}
