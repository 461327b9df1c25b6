//! Centered Gaussian analytics: densities, Hermite polynomials, Isserlis
//! moments, relative entropy, tensorized quadrature and numerical total
//! variation on one- and two-dimensional grids.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::matrix::{self, MatrixError, SymMatrix};
use crate::quadrature::{self, QuadratureError, QuadratureRule};

/// Largest supported total degree for [`hermite_eval`].
pub const MAX_HERMITE_DEGREE: usize = 12;
/// Largest supported number of indices in [`isserlis_moment`].
pub const MAX_ISSERLIS_INDICES: usize = 8;
/// Largest dimension handled by tensorized quadrature.
pub const MAX_QUADRATURE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GaussianError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("odd-order Gaussian moment requested; its value is zero by symmetry")]
    OddMoment,
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("density mass on the grid is {mass:.9}, below 1 - 1e-6; widen the grid")]
    GridTooSmall { mass: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A centered Gaussian law on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    covariance: SymMatrix,
}

impl GaussianLaw {
    /// Requires a positive semi-definite covariance.
    pub fn new(covariance: SymMatrix) -> Result<Self, GaussianError> {
        let s = matrix::spectral(&covariance)?;
        let tolerance = matrix::PSD_REL_TOL * s.op_norm;
        if s.min_eig < -tolerance {
            return Err(MatrixError::NotPsd { min_eig: s.min_eig, tolerance }.into());
        }
        Ok(Self { covariance })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }
}

/// A Gaussian density with its precision matrix and normalizer precomputed.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    precision: SymMatrix,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(covariance: &SymMatrix) -> Result<Self, GaussianError> {
        let s = matrix::spectral(covariance)?;
        let precision = matrix::sym_inverse(covariance)?;
        let d = covariance.dim() as f64;
        let log_det: f64 = s.eigenvalues.iter().map(|v| v.ln()).sum();
        Ok(Self { precision, log_norm: -0.5 * d * (2.0 * PI).ln() - 0.5 * log_det })
    }

    pub fn dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn log_eval(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.precision.quadratic_form(x)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.log_eval(x).exp()
    }
}

/// Density of `law` at `x`; the covariance must be strictly positive definite.
pub fn gaussian_density(x: &[f64], law: &GaussianLaw) -> Result<f64, GaussianError> {
    if x.len() != law.dim() {
        return Err(GaussianError::DimensionMismatch { expected: law.dim(), got: x.len() });
    }
    Ok(GaussianDensity::new(law.covariance())?.eval(x))
}

/// Probabilists' Hermite values `H_0(x)..=H_max(x)` by the three-term recurrence.
pub fn hermite_values(x: f64, max_degree: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(max_degree + 1);
    h.push(1.0);
    if max_degree >= 1 {
        h.push(x);
    }
    for k in 1..max_degree {
        let next = x * h[k] - k as f64 * h[k - 1];
        h.push(next);
    }
    h
}

/// Multivariate Hermite polynomial: the product of univariate values along each axis.
pub fn hermite_eval(multi_index: &[usize], x: &[f64]) -> Result<f64, GaussianError> {
    if multi_index.len() != x.len() {
        return Err(GaussianError::DimensionMismatch { expected: multi_index.len(), got: x.len() });
    }
    let total: usize = multi_index.iter().sum();
    if total > MAX_HERMITE_DEGREE {
        return Err(GaussianError::Unsupported(format!(
            "total Hermite degree {total} exceeds {MAX_HERMITE_DEGREE}"
        )));
    }
    Ok(multi_index
        .iter()
        .zip(x)
        .map(|(&k, &xi)| hermite_values(xi, k)[k])
        .product())
}

/// Gaussian moment `E[Z_{i_1} ⋯ Z_{i_m}]` for `Z ~ N(0, cov)` by Wick contraction.
///
/// Indices are zero-based. Each perfect pairing is counted once. The covariance
/// only enters through products of its entries, so any symmetric matrix is
/// accepted and the result is the corresponding pairing polynomial.
pub fn isserlis_moment(cov: &SymMatrix, indices: &[usize]) -> Result<f64, GaussianError> {
    if indices.len() % 2 == 1 {
        return Err(GaussianError::OddMoment);
    }
    if indices.len() > MAX_ISSERLIS_INDICES {
        return Err(GaussianError::Unsupported(format!(
            "{} indices exceed the supported {MAX_ISSERLIS_INDICES}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= cov.dim()) {
        return Err(GaussianError::DimensionMismatch { expected: cov.dim(), got: bad + 1 });
    }
    let mut counts = vec![0u8; cov.dim()];
    for &i in indices {
        counts[i] += 1;
    }
    let mut memo = HashMap::new();
    Ok(pairing_sum(cov, &mut counts, &mut memo))
}

fn pairing_sum(cov: &SymMatrix, counts: &mut [u8], memo: &mut HashMap<Vec<u8>, f64>) -> f64 {
    let Some(first) = counts.iter().position(|&c| c > 0) else {
        return 1.0;
    };
    if let Some(&v) = memo.get(counts) {
        return v;
    }
    let key = counts.to_vec();
    counts[first] -= 1;
    let mut total = 0.0;
    for partner in first..counts.len() {
        let multiplicity = counts[partner];
        if multiplicity == 0 {
            continue;
        }
        counts[partner] -= 1;
        total += multiplicity as f64 * cov.get(first, partner) * pairing_sum(cov, counts, memo);
        counts[partner] += 1;
    }
    counts[first] += 1;
    memo.insert(key, total);
    total
}

/// Relative entropy `D(N(0, K₁) ‖ N(0, K₂))`.
pub fn kl_gaussian(law1: &GaussianLaw, law2: &GaussianLaw) -> Result<f64, GaussianError> {
    if law1.dim() != law2.dim() {
        return Err(GaussianError::DimensionMismatch { expected: law1.dim(), got: law2.dim() });
    }
    let k1 = law1.covariance();
    let k2 = law2.covariance();
    let inv2 = matrix::sym_inverse(k2)?;
    // Singular first argument has no density.
    matrix::sym_inverse(k1)?;
    let trace: f64 = matrix::product(&inv2, k1).trace();
    let logdet = |m: &SymMatrix| -> Result<f64, GaussianError> {
        Ok(matrix::spectral(m)?.eigenvalues.iter().map(|v| v.ln()).sum())
    };
    let d = law1.dim() as f64;
    Ok(0.5 * (trace - d + logdet(k2)? - logdet(k1)?))
}

/// Tensorized Gauss–Hermite estimate of `E[f(Z)]`, `Z ~ N(0, cov)`, whitening
/// with the symmetric square root of `cov`.
pub fn gauss_expectation(
    f: impl Fn(&[f64]) -> f64,
    cov: &SymMatrix,
    order: usize,
) -> Result<f64, GaussianError> {
    let rule = quadrature::gauss_hermite(order)?;
    gauss_expectation_with_rule(f, cov, &rule)
}

/// As [`gauss_expectation`] with a prebuilt Hermite rule.
pub fn gauss_expectation_with_rule(
    f: impl Fn(&[f64]) -> f64,
    cov: &SymMatrix,
    rule: &QuadratureRule,
) -> Result<f64, GaussianError> {
    let m = cov.dim();
    if m > MAX_QUADRATURE_DIM {
        return Err(GaussianError::Unsupported(format!(
            "tensor quadrature in dimension {m} (max {MAX_QUADRATURE_DIM}); use Monte Carlo"
        )));
    }
    let root = matrix::psd_sqrt(cov)?;
    let n = rule.nodes.len();
    let mut idx = vec![0usize; m];
    let mut xi = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for a in 0..m {
            xi[a] = rule.nodes[idx[a]];
            w *= rule.weights[idx[a]];
        }
        for (a, za) in z.iter_mut().enumerate() {
            *za = (0..m).map(|b| root.get(a, b) * xi[b]).sum();
        }
        total += w * f(&z);
        // Odometer increment over the tensor grid.
        let mut a = 0;
        loop {
            if a == m {
                return Ok(total);
            }
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Uniform grid for numerical integration on `[-half_width, half_width]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    /// Points per axis; `points − 1` must be divisible by four so that the
    /// half-resolution Simpson estimate is also valid.
    pub points: usize,
}

impl GridSpec {
    pub const DEFAULT_POINTS_1D: usize = 4001;
    pub const DEFAULT_POINTS_2D: usize = 401;
    pub const DEFAULT_STDDEVS: f64 = 8.0;

    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self, GaussianError> {
        if !(1..=2).contains(&dim) {
            return Err(GaussianError::InvalidGrid(format!("dimension {dim} not in 1..=2")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GaussianError::InvalidGrid(format!("half width {half_width}")));
        }
        if points < 5 || !(points - 1).is_multiple_of(4) {
            return Err(GaussianError::InvalidGrid(format!("{points} points; need 4m+1 with m >= 1")));
        }
        Ok(Self { dim, half_width, points })
    }

    /// Default grid covering ±8 of the largest standard deviation.
    pub fn covering(dim: usize, max_stddev: f64) -> Result<Self, GaussianError> {
        let points = if dim == 1 { Self::DEFAULT_POINTS_1D } else { Self::DEFAULT_POINTS_2D };
        Self::new(dim, Self::DEFAULT_STDDEVS * max_stddev, points)
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|i| -self.half_width + i as f64 * h).collect()
    }

    /// All grid points in row-major order (last axis fastest).
    pub fn points_list(&self) -> Vec<Vec<f64>> {
        let axis = self.axis();
        match self.dim {
            1 => axis.iter().map(|&x| vec![x]).collect(),
            _ => axis.iter().flat_map(|&x| axis.iter().map(move |&y| vec![x, y])).collect(),
        }
    }
}

fn simpson_weights(points: usize, h: f64, stride: usize) -> Vec<f64> {
    let mut w = vec![0.0; points];
    let intervals = (points - 1) / stride;
    let hh = h * stride as f64;
    for k in 0..=intervals {
        let coef = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        w[k * stride] = coef * hh / 3.0;
    }
    w
}

/// Integral of tabulated values over the grid at resolution `stride` (1 or 2).
fn simpson_integral(values: &[f64], grid: &GridSpec, stride: usize) -> f64 {
    let w = simpson_weights(grid.points, grid.step(), stride);
    match grid.dim {
        1 => values.iter().zip(&w).map(|(v, wi)| v * wi).sum(),
        _ => {
            let n = grid.points;
            let mut total = 0.0;
            for i in (0..n).step_by(stride) {
                let row: f64 = (0..n).step_by(stride).map(|j| w[j] * values[i * n + j]).sum();
                total += w[i] * row;
            }
            total
        }
    }
}

/// Simpson integral of values tabulated on `grid` (grid order).
pub fn grid_integral(values: &[f64], grid: &GridSpec) -> Result<f64, GaussianError> {
    let expected = grid.points.pow(grid.dim as u32);
    if values.len() != expected {
        return Err(GaussianError::DimensionMismatch { expected, got: values.len() });
    }
    Ok(simpson_integral(values, grid, 1))
}

/// `∫ |f|` over one axis from samples at spacing `h·stride`.
///
/// Pairs of cells on which `f` keeps its sign use Simpson's rule; cells where
/// it changes sign are split at the linearly interpolated root and integrated
/// with the trapezoid rule on each side, so the kink of `|f|` does not degrade
/// the accuracy to first order.
fn abs_integral_axis(f: &[f64], h: f64, stride: usize) -> f64 {
    let hh = h * stride as f64;
    let idx: Vec<usize> = (0..f.len()).step_by(stride).collect();
    let cell = |a: f64, b: f64| -> f64 {
        if a * b >= 0.0 {
            0.5 * hh * (a.abs() + b.abs())
        } else {
            0.5 * hh * (a * a + b * b) / (a.abs() + b.abs())
        }
    };
    let mut total = 0.0;
    for pair in idx.windows(3).step_by(2) {
        let (a, m, b) = (f[pair[0]], f[pair[1]], f[pair[2]]);
        let same_sign = (a >= 0.0 && m >= 0.0 && b >= 0.0) || (a <= 0.0 && m <= 0.0 && b <= 0.0);
        if same_sign {
            total += hh / 3.0 * (a.abs() + 4.0 * m.abs() + b.abs());
        } else {
            total += cell(a, m) + cell(m, b);
        }
    }
    total
}

fn abs_integral(diff: &[f64], grid: &GridSpec, stride: usize) -> f64 {
    let h = grid.step();
    match grid.dim {
        1 => abs_integral_axis(diff, h, stride),
        _ => {
            let n = grid.points;
            let w = simpson_weights(n, h, stride);
            (0..n)
                .step_by(stride)
                .map(|i| w[i] * abs_integral_axis(&diff[i * n..(i + 1) * n], h, stride))
                .sum()
        }
    }
}

/// Result of a grid-based total variation computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    /// Difference between the full- and half-resolution values.
    pub refinement_error: f64,
    pub mass_first: f64,
    pub mass_second: f64,
}

/// `½ ∫ |p − q|` from densities tabulated on `grid`.
pub fn tv_from_values(p: &[f64], q: &[f64], grid: &GridSpec) -> Result<TvEstimate, GaussianError> {
    let expected = grid.points.pow(grid.dim as u32);
    if p.len() != expected || q.len() != expected {
        return Err(GaussianError::DimensionMismatch { expected, got: p.len().min(q.len()) });
    }
    let mass_first = simpson_integral(p, grid, 1);
    let mass_second = simpson_integral(q, grid, 1);
    for mass in [mass_first, mass_second] {
        if mass < 1.0 - 1e-6 {
            return Err(GaussianError::GridTooSmall { mass });
        }
    }
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    let fine = 0.5 * abs_integral(&diff, grid, 1);
    let coarse = 0.5 * abs_integral(&diff, grid, 2);
    Ok(TvEstimate { value: fine, refinement_error: (fine - coarse).abs(), mass_first, mass_second })
}

/// Numerical total variation distance between two densities on a 1-d or 2-d grid.
pub fn tv_numeric(
    density1: impl Fn(&[f64]) -> f64,
    density2: impl Fn(&[f64]) -> f64,
    grid: &GridSpec,
) -> Result<TvEstimate, GaussianError> {
    let pts = grid.points_list();
    let p: Vec<f64> = pts.iter().map(|x| density1(x)).collect();
    let q: Vec<f64> = pts.iter().map(|x| density2(x)).collect();
    tv_from_values(&p, &q, grid)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn law(rows: &[Vec<f64>]) -> GaussianLaw {
        GaussianLaw::new(SymMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn density_examples() {
        let one = law(&[vec![1.0]]);
        assert_relative_eq!(gaussian_density(&[0.0], &one).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
        let two = GaussianLaw::new(SymMatrix::identity(2)).unwrap();
        assert_relative_eq!(gaussian_density(&[0.0, 0.0], &two).unwrap(), 1.0 / (2.0 * PI), epsilon = 1e-15);
        let four = law(&[vec![4.0]]);
        let expected = 1.0 / (2.0 * (2.0 * PI).sqrt()) * (-0.5f64).exp();
        assert_relative_eq!(gaussian_density(&[2.0], &four).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn density_rejects_singular() {
        let sing = law(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(gaussian_density(&[0.0, 0.0], &sing), Err(GaussianError::Matrix(MatrixError::Singular { .. }))));
    }

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite_eval(&[3], &[2.0]).unwrap(), 2.0);
        assert_eq!(hermite_eval(&[0, 0, 0], &[0.3, -1.0, 7.0]).unwrap(), 1.0);
        assert_eq!(hermite_eval(&[2, 1], &[1.0, 3.0]).unwrap(), 0.0);
        assert!(hermite_eval(&[13], &[1.0]).is_err());
        // Explicit low-degree forms.
        let x = 0.7;
        let h = hermite_values(x, 4);
        assert_relative_eq!(h[2], x * x - 1.0, epsilon = 1e-15);
        assert_relative_eq!(h[4], x.powi(4) - 6.0 * x * x + 3.0, epsilon = 1e-14);
    }

    #[test]
    fn isserlis_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(isserlis_moment(&i2, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(isserlis_moment(&SymMatrix::identity(1), &[0, 0, 0, 0]).unwrap(), 3.0);
        let c = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert_eq!(isserlis_moment(&c, &[0, 1]).unwrap(), 0.3);
        assert_eq!(isserlis_moment(&c, &[0, 1, 1]), Err(GaussianError::OddMoment));
        assert_eq!(isserlis_moment(&c, &[]).unwrap(), 1.0);
        // Six indices on one axis: 15 pairings.
        assert_relative_eq!(isserlis_moment(&SymMatrix::identity(1), &[0; 6]).unwrap(), 15.0);
    }

    #[test]
    fn isserlis_matches_explicit_pairings() {
        // E[Z0 Z1 Z2 Z3] = c01 c23 + c02 c13 + c03 c12.
        let c = SymMatrix::from_upper_fn(4, |i, j| if i == j { 2.0 } else { 0.1 * (i + 2 * j) as f64 }).unwrap();
        let g = |i, j| c.get(i, j);
        let expected = g(0, 1) * g(2, 3) + g(0, 2) * g(1, 3) + g(0, 3) * g(1, 2);
        assert_relative_eq!(isserlis_moment(&c, &[0, 1, 2, 3]).unwrap(), expected, epsilon = 1e-15);
        // E[Z0² Z1²] = c00 c11 + 2 c01².
        let expected = g(0, 0) * g(1, 1) + 2.0 * g(0, 1) * g(0, 1);
        assert_relative_eq!(isserlis_moment(&c, &[1, 0, 1, 0]).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn kl_examples() {
        let a = law(&[vec![2.0]]);
        let b = law(&[vec![1.0]]);
        assert_relative_eq!(kl_gaussian(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(kl_gaussian(&a, &b).unwrap(), 0.5 * (1.0 + 0.5f64.ln()), epsilon = 1e-14);
        assert_relative_eq!(kl_gaussian(&a, &b).unwrap(), 0.153_426_409_720_027_3, epsilon = 1e-12);
        let sa = law(&[vec![2.0 * 3.7]]);
        let sb = law(&[vec![3.7]]);
        assert_relative_eq!(kl_gaussian(&sa, &sb).unwrap(), kl_gaussian(&a, &b).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn quadrature_examples() {
        let cov = SymMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap();
        assert_relative_eq!(gauss_expectation(|_| 1.0, &cov, 10).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(gauss_expectation(|z| z[0] * z[1], &cov, 10).unwrap(), 0.4, epsilon = 1e-14);
        // The kink of ReLU limits plain Gauss–Hermite to slow algebraic convergence.
        let rho: f64 = 0.4;
        let oracle = ((1.0 - rho * rho).sqrt() + rho * (PI - rho.acos())) / (2.0 * PI);
        let got = gauss_expectation(|z| z[0].max(0.0) * z[1].max(0.0), &cov, 40).unwrap();
        assert!((got - oracle).abs() < 2e-3, "{got} vs {oracle}");
        let big = SymMatrix::identity(5);
        assert!(matches!(gauss_expectation(|_| 1.0, &big, 3), Err(GaussianError::Unsupported(_))));
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(0.5), 0.691_462_461_274_013_1, max_relative = 1e-14);
        assert_relative_eq!(normal_cdf(-2.0), 0.022_750_131_948_179_2, max_relative = 1e-13);
    }

    #[test]
    fn tv_mean_shift_matches_closed_form() {
        let grid = GridSpec::covering(1, 1.5).unwrap();
        let p = |x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt();
        let q = |x: &[f64]| (-0.5 * (x[0] - 1.0).powi(2)).exp() / (2.0 * PI).sqrt();
        let tv = tv_numeric(p, q, &grid).unwrap();
        assert!((tv.value - (2.0 * normal_cdf(0.5) - 1.0)).abs() < 1e-8, "{tv:?}");
        assert!(tv.refinement_error < 1e-6);
        assert_eq!(tv_numeric(p, p, &grid).unwrap().value, 0.0);
    }

    #[test]
    fn tv_variance_change_matches_crossing_formula() {
        // N(0,1) vs N(0,4): densities cross at ±c with c² = (8/3) ln 2.
        let c = (8.0 / 3.0 * 2f64.ln()).sqrt();
        let exact = (2.0 * normal_cdf(c) - 1.0) - (2.0 * normal_cdf(c / 2.0) - 1.0);
        let grid = GridSpec::covering(1, 2.0).unwrap();
        let p = |x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt();
        let q = |x: &[f64]| (-x[0] * x[0] / 8.0).exp() / (2.0 * (2.0 * PI).sqrt());
        let tv = tv_numeric(p, q, &grid).unwrap();
        assert!((tv.value - exact).abs() < 1e-6, "{} vs {exact}", tv.value);
    }

    #[test]
    fn tv_two_dimensional_mean_shift() {
        // A unit shift in any direction reduces to the 1-d value.
        let grid = GridSpec::covering(2, 1.2).unwrap();
        let p = |x: &[f64]| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp() / (2.0 * PI);
        let q = |x: &[f64]| (-0.5 * ((x[0] - 0.6).powi(2) + (x[1] - 0.8).powi(2))).exp() / (2.0 * PI);
        let tv = tv_numeric(p, q, &grid).unwrap();
        assert!((tv.value - (2.0 * normal_cdf(0.5) - 1.0)).abs() < 1e-5, "{tv:?}");
    }

    #[test]
    fn tv_detects_small_grid() {
        let grid = GridSpec::new(1, 1.0, 401).unwrap();
        let p = |x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt();
        assert!(matches!(tv_numeric(p, p, &grid), Err(GaussianError::GridTooSmall { .. })));
        assert!(GridSpec::new(1, 1.0, 400).is_err());
        assert!(GridSpec::new(3, 1.0, 401).is_err());
    }

    proptest! {
        #[test]
        fn pinsker_holds_for_one_dimensional_pairs(v1 in 0.2f64..5.0, v2 in 0.2f64..5.0) {
            let l1 = law(&[vec![v1]]);
            let l2 = law(&[vec![v2]]);
            let kl = kl_gaussian(&l1, &l2).unwrap();
            let grid = GridSpec::covering(1, v1.max(v2).sqrt()).unwrap();
            let d1 = GaussianDensity::new(l1.covariance()).unwrap();
            let d2 = GaussianDensity::new(l2.covariance()).unwrap();
            let tv = tv_numeric(|x| d1.eval(x), |x| d2.eval(x), &grid).unwrap();
            prop_assert!(tv.value <= (kl / 2.0).sqrt() + 1e-9);
        }

        #[test]
        fn talagrand_holds_after_whitening(v in 0.05f64..20.0) {
            // Whitened so the reference law is N(0,1): compare N(0,v) to N(0,1).
            let w2 = (v.sqrt() - 1.0).abs();
            let kl = kl_gaussian(&law(&[vec![v]]), &law(&[vec![1.0]])).unwrap();
            prop_assert!(w2 <= (2.0 * kl).sqrt() + 1e-12);
        }

        #[test]
        fn quadrature_is_exact_for_low_degree_polynomials(
            a in 0.3f64..2.0, b in 0.3f64..2.0, r in -0.9f64..0.9,
            p0 in 0u32..5, p1 in 0u32..5,
        ) {
            let c = r * (a * b).sqrt();
            let cov = SymMatrix::from_rows(&[vec![a, c], vec![c, b]]).unwrap();
            let got = gauss_expectation(|z| z[0].powi(p0 as i32) * z[1].powi(p1 as i32), &cov, 8).unwrap();
            let mut idx = vec![0usize; p0 as usize];
            idx.extend(std::iter::repeat_n(1, p1 as usize));
            let exact = if idx.len() % 2 == 1 { 0.0 } else { isserlis_moment(&cov, &idx).unwrap() };
            prop_assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "{got} vs {exact}");
        }
    }
}
