//! Gaussian quadrature rules built from three-term recurrences.
//!
//! Nodes start from the eigenvalues of the Jacobi matrix and are then polished
//! by Newton iteration on the orthonormal polynomial of degree `n`; weights use
//! the Christoffel formula `w = 1 / Σ_k p_k(x)²`, which keeps small tail weights
//! accurate to full relative precision.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Largest supported number of nodes; beyond this the orthonormal polynomial
/// values at the outermost Hermite nodes overflow.
pub const MAX_ORDER: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadratureError {
    #[error("quadrature order must be in 1..={MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
}

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Maps a rule on `[-1, 1]` to `[a, b]`.
    fn affine(&self, a: f64, b: f64) -> QuadratureRule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        QuadratureRule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
            order: self.order,
        }
    }
}

/// Monic recurrence `p_{k+1} = (x − a_k) p_k − b_k p_{k−1}` with total mass `mass`.
struct Recurrence {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    mass: f64,
}

fn check_order(order: usize) -> Result<(), QuadratureError> {
    if order == 0 || order > MAX_ORDER {
        return Err(QuadratureError::InvalidOrder(order));
    }
    Ok(())
}

/// Orthonormal polynomial values `p_0..p_n` at `x` and the derivative of `p_n`.
fn orthonormal_values(rec: &Recurrence, n: usize, x: f64) -> (Vec<f64>, f64) {
    let mut p = Vec::with_capacity(n + 1);
    let mut dp = Vec::with_capacity(n + 1);
    p.push(1.0 / rec.mass.sqrt());
    dp.push(0.0);
    for k in 0..n {
        let prev = if k == 0 { 0.0 } else { p[k - 1] };
        let dprev = if k == 0 { 0.0 } else { dp[k - 1] };
        let sb_prev = if k == 0 { 0.0 } else { rec.beta[k].sqrt() };
        let sb_next = rec.beta[k + 1].sqrt();
        let next = ((x - rec.alpha[k]) * p[k] - sb_prev * prev) / sb_next;
        let dnext = (p[k] + (x - rec.alpha[k]) * dp[k] - sb_prev * dprev) / sb_next;
        p.push(next);
        dp.push(dnext);
    }
    let d_last = dp[n];
    (p, d_last)
}

fn gauss_from_recurrence(rec: &Recurrence, n: usize) -> QuadratureRule {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rec.alpha[i]
        } else if i + 1 == j {
            rec.beta[j].sqrt()
        } else if j + 1 == i {
            rec.beta[i].sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dpn) = orthonormal_values(rec, n, *x);
            if dpn != 0.0 {
                let step = p[n] / dpn;
                if step.is_finite() {
                    *x -= step;
                }
            }
        }
        let (p, _) = orthonormal_values(rec, n, *x);
        weights.push(1.0 / p[..n].iter().map(|v| v * v).sum::<f64>());
    }
    QuadratureRule { nodes, weights, order: n }
}

/// Makes a rule for an even weight exactly symmetric about zero.
fn symmetrize(mut rule: QuadratureRule) -> QuadratureRule {
    let n = rule.nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// Gauss–Hermite rule for the standard normal measure (weights sum to one).
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule, QuadratureError> {
    check_order(order)?;
    let rec = Recurrence {
        alpha: vec![0.0; order + 1],
        beta: (0..=order).map(|k| k as f64).collect(),
        mass: 1.0,
    };
    Ok(symmetrize(gauss_from_recurrence(&rec, order)))
}

/// Gauss–Legendre rule on `[-1, 1]` (weights sum to two).
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule, QuadratureError> {
    check_order(order)?;
    let rec = Recurrence {
        alpha: vec![0.0; order + 1],
        beta: (0..=order)
            .map(|k| {
                let k = k as f64;
                k * k / (4.0 * k * k - 1.0)
            })
            .collect(),
        mass: 2.0,
    };
    Ok(symmetrize(gauss_from_recurrence(&rec, order)))
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(order: usize, a: f64, b: f64) -> Result<QuadratureRule, QuadratureError> {
    Ok(gauss_legendre(order)?.affine(a, b))
}

/// Gauss rule on `[0, ∞)` for the weight `r^power · exp(−r²/2)`, with `power` 0 or 1.
///
/// The recurrence coefficients come from a discretized Stieltjes procedure on
/// a fine composite Gauss–Legendre grid, which is stable for the orders used
/// here.
pub fn half_line_rule(power: u32, order: usize) -> Result<QuadratureRule, QuadratureError> {
    check_order(order)?;
    assert!(power <= 1, "half-line rules are provided for r^0 and r^1 weights");
    let panel = gauss_legendre(24)?;
    let (mut xs, mut ws) = (Vec::new(), Vec::new());
    let width = 0.25;
    let panels = (24.0 / width) as usize;
    for p in 0..panels {
        let mapped = panel.affine(p as f64 * width, (p + 1) as f64 * width);
        for (&x, &w) in mapped.nodes.iter().zip(&mapped.weights) {
            xs.push(x);
            ws.push(w * x.powi(power as i32) * (-0.5 * x * x).exp());
        }
    }
    let mass: f64 = ws.iter().sum();
    let mut alpha = vec![0.0; order + 1];
    let mut beta = vec![0.0; order + 1];
    // Orthonormal Lanczos-style Stieltjes sweep on the discrete measure.
    let mut q_prev = vec![0.0; xs.len()];
    let mut q = vec![1.0 / mass.sqrt(); xs.len()];
    let mut b_prev = 0.0;
    for k in 0..=order {
        let a: f64 = xs.iter().zip(&ws).zip(&q).map(|((x, w), qi)| w * x * qi * qi).sum();
        alpha[k] = a;
        let mut next: Vec<f64> =
            (0..xs.len()).map(|i| (xs[i] - a) * q[i] - b_prev * q_prev[i]).collect();
        let norm: f64 = next.iter().zip(&ws).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        if k < order {
            beta[k + 1] = norm * norm;
        }
        next.iter_mut().for_each(|v| *v /= norm);
        q_prev = std::mem::replace(&mut q, next);
        b_prev = norm;
    }
    let rec = Recurrence { alpha, beta, mass };
    Ok(gauss_from_recurrence(&rec, order))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_moment(m: u32) -> f64 {
        // E[Z^m] for a standard normal.
        if m % 2 == 1 {
            return 0.0;
        }
        (1..m).step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        for order in [1usize, 2, 5, 10, 40, 64] {
            let rule = gauss_hermite(order).unwrap();
            for m in 0..(2 * order as u32).min(30) {
                let exact = double_factorial_moment(m);
                let got = rule.integrate(|x| x.powi(m as i32));
                let scale = rule.integrate(|x| x.abs().powi(m as i32)).max(1.0);
                assert!(
                    (got - exact).abs() <= 1e-12 * scale,
                    "order {order} moment {m}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn hermite_rule_is_symmetric() {
        let rule = gauss_hermite(7).unwrap();
        for i in 0..7 {
            assert_eq!(rule.nodes[i], -rule.nodes[6 - i]);
            assert_eq!(rule.weights[i], rule.weights[6 - i]);
            assert!(rule.weights[i] > 0.0);
        }
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = gauss_legendre(20).unwrap();
        for m in 0..40 {
            let exact = if m % 2 == 1 { 0.0 } else { 2.0 / (m as f64 + 1.0) };
            assert!((rule.integrate(|x| x.powi(m)) - exact).abs() < 1e-14);
        }
        let mapped = gauss_legendre_on(5, 1.0, 3.0).unwrap();
        assert!((mapped.integrate(|x| x * x) - 26.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn half_line_rules_match_gamma_moments() {
        // ∫_0^∞ r^m r^p e^{-r²/2} dr = 2^{(m+p-1)/2} Γ((m+p+1)/2)
        let gamma_half = |twice: u32| -> f64 {
            // Γ(twice/2)
            let mut v = if twice.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
            let mut s = if twice.is_multiple_of(2) { 1.0 } else { 0.5 };
            while s < twice as f64 / 2.0 - 1e-9 {
                v *= s;
                s += 1.0;
            }
            v
        };
        for power in 0..=1u32 {
            let rule = half_line_rule(power, 20).unwrap();
            for m in 0..39u32 {
                let e = m + power;
                let exact = 2f64.powf((e as f64 - 1.0) / 2.0) * gamma_half(e + 1);
                let got = rule.integrate(|r| r.powi(m as i32));
                assert!((got - exact).abs() <= 1e-12 * exact, "p={power} m={m}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn rejects_bad_order() {
        assert_eq!(gauss_hermite(0), Err(QuadratureError::InvalidOrder(0)));
        assert!(gauss_hermite(MAX_ORDER + 1).is_err());
    }
}
