//! Interpolation between a conditional covariance `A` and a limit covariance `K`.
//!
//! For `t ∈ [0, 1]` the blend `Γ_t = tA + (1 − t)K` defines a Gaussian law
//! whose density ratio against `N(0, K)` is differentiated in `t`. The
//! normalized `k`-th derivative `h_k` is a Hermite polynomial in the whitened
//! point `Γ_t^{-1/2} x`, contracted with `k` copies of the whitened
//! perturbation `M = Γ_t^{-1/2} (A − K) Γ_t^{-1/2}`. Its second moment under
//! `N(0, Γ_t)` is a polynomial in the traces `tr(M^j)`.
//!
//! These objects are test instruments for the bound constants; nothing here
//! integrates over a random `A`.

use std::collections::BTreeMap;

use crate::gaussian::{self, GaussianError};
use crate::matrix::{self, MatrixError, SymMatrix};

/// Largest supported derivative order.
pub const MAX_K: usize = 4;
/// Largest supported dimension for Hermite-tensor evaluation.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpolationError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("‖A − K‖_op = {gap:.3e} exceeds λ(K)/2 = {half_min_eig:.3e}")]
    OutsideEventE { gap: f64, half_min_eig: f64 },
    #[error("interpolation time {0} is outside [0, 1]")]
    InvalidTime(f64),
    #[error("derivative order {0} is outside 1..={MAX_K}")]
    InvalidOrder(usize),
    #[error("dimension {0} exceeds the supported {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("point has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A fixed pair `(A, K)` with `K` strictly positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPair {
    a: SymMatrix,
    k: SymMatrix,
    k_min_eig: f64,
}

impl InterpolationPair {
    pub fn new(a: SymMatrix, k: SymMatrix) -> Result<Self, InterpolationError> {
        if a.dim() != k.dim() {
            return Err(MatrixError::DimensionMismatch(a.dim(), k.dim()).into());
        }
        // Fails with `Singular` unless K is strictly positive definite.
        matrix::sym_inverse(&k)?;
        let k_min_eig = matrix::spectral(&k)?.min_eig;
        Ok(Self { a, k, k_min_eig })
    }

    pub fn a(&self) -> &SymMatrix {
        &self.a
    }

    pub fn k(&self) -> &SymMatrix {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    /// `‖A − K‖_op`.
    pub fn gap(&self) -> Result<f64, InterpolationError> {
        Ok(matrix::spectral(&self.a.sub(&self.k)?)?.op_norm)
    }

    /// Whether `‖A − K‖_op ≤ λ(K)/2`.
    pub fn event_holds(&self) -> Result<bool, InterpolationError> {
        Ok(self.gap()? <= 0.5 * self.k_min_eig)
    }

    fn require_event(&self) -> Result<(), InterpolationError> {
        let gap = self.gap()?;
        if gap > 0.5 * self.k_min_eig {
            return Err(InterpolationError::OutsideEventE { gap, half_min_eig: 0.5 * self.k_min_eig });
        }
        Ok(())
    }

    /// `Γ_t = tA + (1 − t)K`.
    pub fn gamma_t(&self, t: f64) -> Result<SymMatrix, InterpolationError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(InterpolationError::InvalidTime(t));
        }
        Ok(self.a.blend(&self.k, t)?)
    }

    /// The whitened perturbation `M` and the whitening map `Γ_t^{-1/2}`.
    fn whitened(&self, t: f64) -> Result<(SymMatrix, SymMatrix), InterpolationError> {
        let gamma = self.gamma_t(t)?;
        let pairs = matrix::eigen(&gamma)?;
        let tolerance = matrix::INV_REL_TOL * pairs.op_norm();
        if pairs.values[0] <= tolerance {
            return Err(MatrixError::Singular { min_eig: pairs.values[0], tolerance }.into());
        }
        let inv_root = pairs.map(|lam| 1.0 / lam.sqrt());
        let diff = self.a.sub(&self.k)?;
        let m = SymMatrix::new(inv_root.as_matrix() * diff.as_matrix() * inv_root.as_matrix())?;
        Ok((m, inv_root))
    }
}

/// `‖A − K‖_op ≤ λ(K)/2`.
pub fn event_e_holds(pair: &InterpolationPair) -> Result<bool, InterpolationError> {
    pair.event_holds()
}

pub fn gamma_t(pair: &InterpolationPair, t: f64) -> Result<SymMatrix, InterpolationError> {
    pair.gamma_t(t)
}

/// Precomputed Hermite expansion of `h_k` at a fixed `(A, K, t)`.
///
/// The expansion stores one coefficient per multi-index of total degree `2k`,
/// so evaluation costs a handful of Hermite recurrences per point.
#[derive(Debug, Clone)]
pub struct HkEvaluator {
    inv_root: SymMatrix,
    whitened: SymMatrix,
    /// `expansions[k − 1]` lists `(per-axis degrees, coefficient)`.
    expansions: Vec<Vec<(Vec<usize>, f64)>>,
}

impl HkEvaluator {
    pub fn new(pair: &InterpolationPair, t: f64) -> Result<Self, InterpolationError> {
        let d = pair.dim();
        if d > MAX_DIM {
            return Err(InterpolationError::DimensionTooLarge(d));
        }
        pair.require_event()?;
        let (m, inv_root) = pair.whitened(t)?;
        let expansions = (1..=MAX_K).map(|k| hermite_expansion(&m, k)).collect();
        Ok(Self { inv_root, whitened: m, expansions })
    }

    /// The whitened perturbation `Γ_t^{-1/2}(A − K)Γ_t^{-1/2}`.
    pub fn whitened_perturbation(&self) -> &SymMatrix {
        &self.whitened
    }

    /// `h_k` at a whitened point `y = Γ_t^{-1/2} x`.
    pub fn eval_whitened(&self, y: &[f64], k: usize) -> Result<f64, InterpolationError> {
        let d = self.whitened.dim();
        if y.len() != d {
            return Err(InterpolationError::DimensionMismatch { expected: d, got: y.len() });
        }
        if !(1..=MAX_K).contains(&k) {
            return Err(InterpolationError::InvalidOrder(k));
        }
        let tables: Vec<Vec<f64>> = y.iter().map(|&v| gaussian::hermite_values(v, 2 * k)).collect();
        Ok(self.eval_with_tables(&tables, k))
    }

    /// `h_1..h_4` at a whitened point, sharing the Hermite tables.
    pub fn eval_all_whitened(&self, y: &[f64]) -> [f64; MAX_K] {
        let tables: Vec<Vec<f64>> = y.iter().map(|&v| gaussian::hermite_values(v, 2 * MAX_K)).collect();
        std::array::from_fn(|i| self.eval_with_tables(&tables, i + 1))
    }

    fn eval_with_tables(&self, tables: &[Vec<f64>], k: usize) -> f64 {
        self.expansions[k - 1]
            .iter()
            .map(|(degrees, c)| c * degrees.iter().zip(tables).map(|(&n, h)| h[n]).product::<f64>())
            .sum()
    }

    /// `h_k` at an unwhitened point `x`.
    pub fn eval(&self, x: &[f64], k: usize) -> Result<f64, InterpolationError> {
        let d = self.inv_root.dim();
        if x.len() != d {
            return Err(InterpolationError::DimensionMismatch { expected: d, got: x.len() });
        }
        self.eval_whitened(&self.inv_root.apply(x), k)
    }
}

/// Coefficients of `2^{-k} Σ_{i ∈ [d]^{2k}} Π_r M[i_{2r}][i_{2r+1}] · H_{counts(i)}(y)`.
fn hermite_expansion(m: &SymMatrix, k: usize) -> Vec<(Vec<usize>, f64)> {
    let d = m.dim();
    let len = 2 * k;
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut idx = vec![0usize; len];
    let scale = 0.5f64.powi(k as i32);
    loop {
        let coef: f64 = (0..k).map(|r| m.get(idx[2 * r], idx[2 * r + 1])).product();
        if coef != 0.0 {
            let mut degrees = vec![0usize; d];
            for &i in &idx {
                degrees[i] += 1;
            }
            *acc.entry(degrees).or_insert(0.0) += scale * coef;
        }
        let mut pos = 0;
        loop {
            if pos == len {
                return acc.into_iter().collect();
            }
            idx[pos] += 1;
            if idx[pos] < d {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `h_k(x)` along the interpolation at time `t`; requires the event `E`.
pub fn h_k_eval(pair: &InterpolationPair, t: f64, x: &[f64], k: usize) -> Result<f64, InterpolationError> {
    if !(1..=MAX_K).contains(&k) {
        return Err(InterpolationError::InvalidOrder(k));
    }
    HkEvaluator::new(pair, t)?.eval(x, k)
}

/// `tr(M^j)` for `j = 1..=8`, equal to `tr((Γ_t^{-1}(A − K))^j)`.
fn traces(pair: &InterpolationPair, t: f64) -> Result<[f64; 8], InterpolationError> {
    pair.require_event()?;
    let (m, _) = pair.whitened(t)?;
    let v = matrix::trace_powers(&m, 8)?;
    Ok(std::array::from_fn(|j| v[j]))
}

/// Exact `E[h_k(X)²]` for `X ~ N(0, Γ_t)`, as a polynomial in the trace powers.
pub fn hk_second_moment(pair: &InterpolationPair, t: f64, k: usize) -> Result<f64, InterpolationError> {
    if !(1..=MAX_K).contains(&k) {
        return Err(InterpolationError::InvalidOrder(k));
    }
    let tr = traces(pair, t)?;
    let (t2, t4, t6, t8) = (tr[1], tr[3], tr[5], tr[7]);
    Ok(match k {
        1 => 0.5 * t2,
        2 => t4 + 0.5 * t2 * t2,
        3 => 0.75 * t2.powi(3) + 6.0 * t6 + 4.5 * t2 * t4,
        _ => 1.5 * t2.powi(4) + 18.0 * t2 * t2 * t4 + 18.0 * t4 * t4 + 72.0 * t8 + 48.0 * t2 * t6,
    })
}

/// Even moments of `h_1` under `N(0, Γ_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H1Moments {
    pub second: f64,
    pub fourth: f64,
    pub sixth: f64,
}

pub fn h1_moments(pair: &InterpolationPair, t: f64) -> Result<H1Moments, InterpolationError> {
    let tr = traces(pair, t)?;
    let (t2, t3, t4, t6) = (tr[1], tr[2], tr[3], tr[5]);
    Ok(H1Moments {
        second: 0.5 * t2,
        fourth: 3.0 * t4 + 0.75 * t2 * t2,
        sixth: 60.0 * t6 + 15.0 / 8.0 * t2.powi(3) + 10.0 * t3 * t3 + 22.5 * t2 * t4,
    })
}

/// `E[h_k²]` through Wick contraction: `(k!/2^k) Σ_i Π M · E_M[Π Y_i]`, an
/// independent route to [`hk_second_moment`].
pub fn hk_second_moment_by_pairings(pair: &InterpolationPair, t: f64, k: usize) -> Result<f64, InterpolationError> {
    if !(1..=MAX_K).contains(&k) {
        return Err(InterpolationError::InvalidOrder(k));
    }
    pair.require_event()?;
    let (m, _) = pair.whitened(t)?;
    let d = m.dim();
    let len = 2 * k;
    let mut idx = vec![0usize; len];
    let mut total = 0.0;
    loop {
        let coef: f64 = (0..k).map(|r| m.get(idx[2 * r], idx[2 * r + 1])).product();
        if coef != 0.0 {
            total += coef * gaussian::isserlis_moment(&m, &idx)?;
        }
        let mut pos = 0;
        loop {
            if pos == len {
                let factorial: f64 = (1..=k).map(|v| v as f64).product();
                return Ok(factorial / 2f64.powi(k as i32) * total);
            }
            idx[pos] += 1;
            if idx[pos] < d {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// The polynomial `p_1(y) = (2/λ(K)²) y² + √d/λ(K)` bounding `|h_1(x)|` by
/// `p_1(‖x‖)·‖A − K‖_HS`.
pub fn h1_polynomial_bound(pair: &InterpolationPair, norm_x: f64) -> f64 {
    let lam = pair.k_min_eig;
    2.0 / (lam * lam) * norm_x * norm_x + (pair.dim() as f64).sqrt() / lam
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn scalar_pair(a: f64, k: f64) -> InterpolationPair {
        InterpolationPair::new(SymMatrix::scalar(a).unwrap(), SymMatrix::scalar(k).unwrap()).unwrap()
    }

    /// `h_1` and `h_2` written out directly from `Γ_t^{-1}` and `D = A − K`.
    fn closed_forms(pair: &InterpolationPair, t: f64, x: &[f64]) -> (f64, f64) {
        let g = matrix::sym_inverse(&pair.gamma_t(t).unwrap()).unwrap();
        let d = pair.a().sub(pair.k()).unwrap();
        let gd = g.as_matrix() * d.as_matrix();
        let gdg = &gd * g.as_matrix();
        let gdgdg = &gd * &gdg;
        let xv = nalgebra::DVector::from_column_slice(x);
        let h1 = 0.5 * ((xv.transpose() * &gdg * &xv)[(0, 0)] - gd.trace());
        let dh1 = -(xv.transpose() * &gdgdg * &xv)[(0, 0)] + 0.5 * (&gd * &gd).trace();
        (h1, dh1 + h1 * h1)
    }

    #[test]
    fn event_examples() {
        let same = scalar_pair(1.0, 1.0);
        assert!(event_e_holds(&same).unwrap());
        assert!(event_e_holds(&scalar_pair(1.4, 1.0)).unwrap());
        assert!(!event_e_holds(&scalar_pair(1.6, 1.0)).unwrap());
    }

    #[test]
    fn gamma_examples() {
        let a = SymMatrix::from_diagonal(&[1.4, 0.8]).unwrap();
        let k = SymMatrix::identity(2);
        let pair = InterpolationPair::new(a.clone(), k.clone()).unwrap();
        assert_eq!(gamma_t(&pair, 0.0).unwrap(), k);
        assert_eq!(gamma_t(&pair, 1.0).unwrap(), a);
        let mid = gamma_t(&pair, 0.5).unwrap();
        assert_relative_eq!(mid.get(0, 0), 1.2, epsilon = 1e-15);
        assert_relative_eq!(mid.get(1, 1), 0.9, epsilon = 1e-15);
        assert!(matches!(gamma_t(&pair, 1.5), Err(InterpolationError::InvalidTime(_))));
    }

    #[test]
    fn hk_examples() {
        let pair = scalar_pair(1.2, 1.0);
        assert_relative_eq!(h_k_eval(&pair, 0.0, &[0.0], 1).unwrap(), -0.1, epsilon = 1e-15);
        assert!(h_k_eval(&pair, 0.0, &[1.0], 1).unwrap().abs() < 1e-15);
        let same = scalar_pair(1.0, 1.0);
        for k in 1..=4 {
            assert_eq!(h_k_eval(&same, 0.5, &[0.7], k).unwrap(), 0.0);
            assert_eq!(hk_second_moment(&same, 0.5, k).unwrap(), 0.0);
        }
        assert!(matches!(h_k_eval(&scalar_pair(1.6, 1.0), 0.0, &[0.0], 1), Err(InterpolationError::OutsideEventE { .. })));
        assert!(matches!(h_k_eval(&pair, 0.0, &[0.0], 5), Err(InterpolationError::InvalidOrder(5))));
    }

    #[test]
    fn second_moment_examples() {
        let pair = scalar_pair(1.2, 1.0);
        assert_relative_eq!(hk_second_moment(&pair, 0.0, 1).unwrap(), 0.02, epsilon = 1e-15);
        assert_relative_eq!(hk_second_moment(&pair, 0.0, 2).unwrap(), 0.0024, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_moments_match_hermite_norms() {
        // In 1-d, h_k = (m/2)^k H_{2k}(y) with E[H_n²] = n!.
        let pair = scalar_pair(1.3, 1.0);
        for t in [0.0, 0.5, 1.0] {
            let m: f64 = 0.3 / (1.0 + 0.3 * t);
            for k in 1..=4usize {
                let fact: f64 = (1..=2 * k).map(|v| v as f64).product();
                let expected = (m / 2.0).powi(2 * k as i32) * fact;
                assert_relative_eq!(hk_second_moment(&pair, t, k).unwrap(), expected, max_relative = 1e-13);
            }
            let h1 = h1_moments(&pair, t).unwrap();
            // E[(N²−1)^4] = 60, E[(N²−1)^6] = 6040.
            assert_relative_eq!(h1.fourth, (m / 2.0).powi(4) * 60.0, max_relative = 1e-13);
            assert_relative_eq!(h1.sixth, (m / 2.0).powi(6) * 6040.0, max_relative = 1e-13);
        }
    }

    fn pair_strategy() -> impl Strategy<Value = InterpolationPair> {
        (1usize..=3).prop_flat_map(|d| {
            (
                proptest::collection::vec(-1.0f64..1.0, d * d),
                proptest::collection::vec(-1.0f64..1.0, d * d),
                0.05f64..0.95,
            )
                .prop_map(move |(b, e, frac)| {
                    let b = DMatrix::from_vec(d, d, b);
                    let k = SymMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.5).unwrap();
                    let lam = matrix::spectral(&k).unwrap().min_eig;
                    let e = SymMatrix::new(DMatrix::from_vec(d, d, e)).unwrap();
                    let scale = frac * 0.5 * lam / matrix::spectral(&e).unwrap().op_norm.max(1e-12);
                    let a = k.add(&e.scale(scale)).unwrap();
                    InterpolationPair::new(a, k).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn hermite_expansion_matches_closed_forms(
            pair in pair_strategy(), t in 0.0f64..1.0, xs in proptest::collection::vec(-2.0f64..2.0, 3)
        ) {
            let x = &xs[..pair.dim()];
            let (h1, h2) = closed_forms(&pair, t, x);
            let ev = HkEvaluator::new(&pair, t).unwrap();
            prop_assert!((ev.eval(x, 1).unwrap() - h1).abs() <= 1e-12 * (1.0 + h1.abs()));
            prop_assert!((ev.eval(x, 2).unwrap() - h2).abs() <= 1e-11 * (1.0 + h2.abs()));
        }

        #[test]
        fn trace_formulas_match_pairing_sums(pair in pair_strategy(), ti in 0usize..3) {
            let t = [0.0, 0.5, 1.0][ti];
            for k in 1..=4 {
                let traces = hk_second_moment(&pair, t, k).unwrap();
                let pairings = hk_second_moment_by_pairings(&pair, t, k).unwrap();
                prop_assert!((traces - pairings).abs() <= 1e-10 * (1.0 + traces.abs()), "k={k}: {traces} vs {pairings}");
            }
        }

        #[test]
        fn h1_respects_polynomial_bound(pair in pair_strategy(), xs in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let x = &xs[..pair.dim()];
            let h1 = h_k_eval(&pair, 0.5, x, 1).unwrap();
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let hs = pair.a().sub(pair.k()).unwrap().frobenius_norm();
            prop_assert!(h1.abs() <= h1_polynomial_bound(&pair, norm_x) * hs * (1.0 + 1e-12));
        }
    }
}
