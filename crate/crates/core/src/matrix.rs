//! Dense symmetric matrices and their spectral quantities.
//!
//! Every covariance in the crate (limit kernels, conditional covariances and
//! their interpolations) is stored as a [`SymMatrix`]. Symmetry is enforced
//! at construction by averaging the matrix with its transpose, so entries
//! `(i, j)` and `(j, i)` are always bit-identical.
//!
//! All spectral quantities come from a single symmetric eigensolver, and the
//! determinant, square root, inverse and trace powers are derived from the
//! resulting eigenpairs.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Relative tolerance below which negative eigenvalues are clipped to zero.
pub const PSD_REL_TOL: f64 = 1e-10;
/// Relative tolerance on the smallest eigenvalue for inversion.
pub const INV_REL_TOL: f64 = 1e-12;
/// Largest supported exponent in [`trace_power`].
pub const MAX_TRACE_POWER: u32 = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix has non-finite entries")]
    InvalidMatrix,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix dimension must be at least 1")]
    Empty,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:.3e}, tolerance {tolerance:.3e})")]
    NotPsd { min_eig: f64, tolerance: f64 },
    #[error("matrix is singular (min eigenvalue {min_eig:.3e} <= tolerance {tolerance:.3e})")]
    Singular { min_eig: f64, tolerance: f64 },
    #[error("trace power {0} is not supported (maximum is {MAX_TRACE_POWER})")]
    Unsupported(u32),
}

/// A dense real symmetric matrix of dimension at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from a square matrix, replacing it by `(M + Mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self, MatrixError> {
        if m.nrows() != m.ncols() {
            return Err(MatrixError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(MatrixError::Empty);
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::InvalidMatrix);
        }
        Ok(Self::symmetrize(m))
    }

    /// Builds a matrix from rows; the rows must form a square array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(MatrixError::NotSquare { rows: n, cols: bad.len() });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Builds a matrix by evaluating `f(i, j)` on the upper triangle `i <= j`.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatrixError> {
        if dim == 0 {
            return Err(MatrixError::Empty);
        }
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::InvalidMatrix);
        }
        Ok(Self { data: m })
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "identity dimension must be positive");
        Self { data: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "zero matrix dimension must be positive");
        Self { data: DMatrix::zeros(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, MatrixError> {
        let n = diag.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    /// A 1×1 matrix holding `value`.
    pub fn scalar(value: f64) -> Result<Self, MatrixError> {
        Self::from_diagonal(&[value])
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        Self { data: out }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.data[(i, j)]).collect()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, MatrixError> {
        self.check_dim(other)?;
        Ok(Self { data: &self.data + &other.data })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, MatrixError> {
        self.check_dim(other)?;
        Ok(Self { data: &self.data - &other.data })
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        Self { data: &self.data * c }
    }

    /// The affine blend `t·self + (1 − t)·other`.
    pub fn blend(&self, other: &SymMatrix, t: f64) -> Result<SymMatrix, MatrixError> {
        self.check_dim(other)?;
        Ok(Self { data: &self.data * t + &other.data * (1.0 - t) })
    }

    /// Frobenius norm computed entrywise. Agrees with the spectral Hilbert–Schmidt
    /// norm up to rounding and is the cheap path inside Monte Carlo loops.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Quadratic form `⟨x, M x⟩`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        assert_eq!(x.len(), n, "vector length must match matrix dimension");
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for (j, xj) in x.iter().enumerate() {
                row += self.data[(i, j)] * xj;
            }
            acc += x[i] * row;
        }
        acc
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n, "vector length must match matrix dimension");
        (0..n).map(|i| (0..n).map(|j| self.data[(i, j)] * x[j]).sum()).collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn check_dim(&self, other: &SymMatrix) -> Result<(), MatrixError> {
        if self.dim() != other.dim() {
            return Err(MatrixError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = MatrixError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Eigenvalues (ascending) with matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    /// Rebuilds `Q·diag(f(λ))·Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, k)] *= s;
            }
        }
        SymMatrix::symmetrize(&scaled * self.vectors.transpose())
    }

    pub fn op_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn eigen(m: &SymMatrix) -> Result<EigenPairs, MatrixError> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(MatrixError::InvalidMatrix);
    }
    let decomposition = SymmetricEigen::new(m.data.clone());
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| decomposition.eigenvalues[a].total_cmp(&decomposition.eigenvalues[b]));
    let values = order.iter().map(|&k| decomposition.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| decomposition.eigenvectors[(i, order[c])]);
    Ok(EigenPairs { values, vectors })
}

/// Spectrum and norms of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub min_eig: f64,
    pub op_norm: f64,
    pub hs_norm: f64,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

impl SpectralSummary {
    /// Product of the eigenvalues.
    pub fn determinant(&self) -> f64 {
        self.eigenvalues.iter().product()
    }
}

pub fn spectral(m: &SymMatrix) -> Result<SpectralSummary, MatrixError> {
    let pairs = eigen(m)?;
    Ok(summary_from_values(pairs.values))
}

fn summary_from_values(values: Vec<f64>) -> SpectralSummary {
    SpectralSummary {
        min_eig: values[0],
        op_norm: values.iter().fold(0.0, |acc, v| acc.max(v.abs())),
        hs_norm: values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        eigenvalues: values,
    }
}

/// The positive semi-definite square root. Eigenvalues in `[−ε_psd, 0)` are
/// clipped to zero, with `ε_psd` relative to the operator norm.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix, MatrixError> {
    let pairs = eigen(m)?;
    let tolerance = PSD_REL_TOL * pairs.op_norm();
    let min_eig = pairs.values[0];
    if min_eig < -tolerance {
        return Err(MatrixError::NotPsd { min_eig, tolerance });
    }
    Ok(pairs.map(|lam| lam.max(0.0).sqrt()))
}

/// Inverse of a strictly positive definite matrix.
pub fn sym_inverse(m: &SymMatrix) -> Result<SymMatrix, MatrixError> {
    let pairs = eigen(m)?;
    let tolerance = INV_REL_TOL * pairs.op_norm();
    let min_eig = pairs.values[0];
    if min_eig <= tolerance {
        return Err(MatrixError::Singular { min_eig, tolerance });
    }
    Ok(pairs.map(|lam| 1.0 / lam))
}

/// `tr(M^k)` as the sum of `k`-th powers of the eigenvalues; `k = 0` gives the dimension.
pub fn trace_power(m: &SymMatrix, k: u32) -> Result<f64, MatrixError> {
    if k > MAX_TRACE_POWER {
        return Err(MatrixError::Unsupported(k));
    }
    if k == 0 {
        return Ok(m.dim() as f64);
    }
    let pairs = eigen(m)?;
    Ok(pairs.values.iter().map(|v| v.powi(k as i32)).sum())
}

/// Trace powers `tr(M^j)` for `j = 1..=max_k`, from a single eigendecomposition.
pub fn trace_powers(m: &SymMatrix, max_k: u32) -> Result<Vec<f64>, MatrixError> {
    if max_k > MAX_TRACE_POWER {
        return Err(MatrixError::Unsupported(max_k));
    }
    let pairs = eigen(m)?;
    Ok((1..=max_k).map(|k| pairs.values.iter().map(|v| v.powi(k as i32)).sum()).collect())
}

/// Product of two symmetric matrices as a general dense matrix.
pub fn product(a: &SymMatrix, b: &SymMatrix) -> DMatrix<f64> {
    &a.data * &b.data
}
