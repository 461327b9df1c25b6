//! Infinite-width covariance kernels.
//!
//! The limit kernel satisfies `K^(1)(x, y) = C_b + (C_W/n_0)⟨x, y⟩` and
//! `K^(ℓ+1)(x, y) = C_b + C_W E[σ(G(x)) σ(G(y))]` with `G ~ GP(0, K^(ℓ))`.
//! The derivative-extended version tracks the joint law of the Taylor jets
//! `(G(x), V G(x), V V G(x))`, which is Gaussian with covariance given by the
//! derivatives of `K^(ℓ)`. Each layer step conditions the jet components on the
//! two values `(G(u), G(w))`, integrates the resulting polynomial moments in
//! closed form, and leaves a two-dimensional quadrature over the values.

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::matrix::{self, MatrixError, SymMatrix};
use crate::network::{affine_entry, components, input_jets, Activation, Component, NetworkConfig, ProbeSet};
use crate::quadrature::{self, QuadratureError, QuadratureRule};

/// Default minimum number of quadrature nodes per axis.
pub const DEFAULT_QUADRATURE_ORDER: usize = 40;
/// Largest change allowed when the quadrature order is doubled.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;
/// Relative eigenvalue below which a direction of the value covariance is dropped.
const COLLAPSE_TOLERANCE: f64 = 1e-12;
const RADIAL_ORDER: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("derivative order {q} exceeds what the {activation:?} activation supports ({max})")]
    SmoothnessViolation { activation: Activation, q: usize, max: usize },
    #[error("quadrature did not converge at layer {layer}: doubling the order moved an entry by {difference:.3e}")]
    QuadratureDivergence { layer: usize, difference: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid kernel input: {0}")]
    InvalidInput(String),
}

/// Numerical options of the kernel recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Minimum nodes per axis for smooth activations, and Gauss–Legendre
    /// nodes per angular arc for ReLU. Each layer is also evaluated at twice
    /// this value and the two results must agree to `DIVERGENCE_TOLERANCE`.
    pub quadrature_order: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { quadrature_order: DEFAULT_QUADRATURE_ORDER }
    }
}

/// Kernel matrices `K^(1), …, K^(L+1)` over the probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStack {
    pub layers: Vec<SymMatrix>,
    pub quadrature_order: usize,
    pub q: usize,
}

impl KernelStack {
    /// `K^(ℓ)` for `ℓ` in `1..=L+1`.
    pub fn layer(&self, l: usize) -> &SymMatrix {
        &self.layers[l - 1]
    }

    /// The output-layer kernel `K = K^(L+1)`.
    pub fn output(&self) -> &SymMatrix {
        self.layers.last().expect("a kernel stack holds at least one layer")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel stacks serialize")
    }
}

/// `σ` and its first two derivatives at one point.
type Derivs = [f64; 3];

fn derivs(act: Activation, u: f64) -> Derivs {
    [act.eval(u), act.d1(u), act.d2(u)]
}

/// One monomial of the jet chain rule: `coef · σ^(order)(g) · Π jet[factors]`.
#[derive(Debug, Clone)]
struct ChainTerm {
    order: usize,
    /// Jet components (never the value) multiplying the derivative.
    factors: Vec<usize>,
}

fn chain_terms(comp: Component, p: usize) -> Vec<ChainTerm> {
    match comp {
        Component::Value => vec![ChainTerm { order: 0, factors: vec![] }],
        Component::First(a) => vec![ChainTerm { order: 1, factors: vec![1 + a] }],
        Component::Second(a, b) => vec![
            ChainTerm { order: 2, factors: vec![1 + a, 1 + b] },
            ChainTerm { order: 1, factors: vec![1 + p + crate::network::pair_index(p, a, b)] },
        ],
    }
}

/// `E[Π_i (μ_i + ε_i)]` for a centered Gaussian `ε` with covariance `cov`.
fn shifted_moment(idx: &[usize], mu: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = idx.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| idx[i]).collect();
        let noise = match chosen.len() {
            0 => 1.0,
            2 => cov[chosen[0]][chosen[1]],
            4 => {
                let c = |a: usize, b: usize| cov[chosen[a]][chosen[b]];
                c(0, 1) * c(2, 3) + c(0, 2) * c(1, 3) + c(0, 3) * c(1, 2)
            }
            _ => continue,
        };
        let mean: f64 = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| mu[idx[i]]).product();
        total += mean * noise;
    }
    total
}

/// A quadrature rule for a standard normal vector in at most two dimensions.
struct NormalRule {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

/// Half-width of the truncated standard normal range used by the smooth rule.
const SMOOTH_RANGE: f64 = 9.5;
/// Product of the node spacing and the standard deviation of the integrand's
/// arguments; keeps the trapezoid error near `exp(−π²/0.3)` for tanh and sigmoid.
const SMOOTH_STEP_SCALE: f64 = 0.3;

/// Trapezoid rule on `[−9.5, 9.5]` per axis with at least `order` nodes.
///
/// For integrands analytic in a strip around the real axis the truncated
/// trapezoid rule converges geometrically in the node spacing, which makes it
/// far more reliable than Gauss–Hermite for activations such as tanh whose
/// poles sit close to the real line once the variance grows. `scale` is the
/// largest standard deviation of the activation arguments.
fn normal_rule_smooth(rank: usize, order: usize, scale: f64) -> NormalRule {
    if rank == 0 {
        return NormalRule { points: vec![[0.0, 0.0]], weights: vec![1.0] };
    }
    let step = (SMOOTH_STEP_SCALE / scale.max(1.0)).min(0.25);
    let needed = (2.0 * SMOOTH_RANGE / step).ceil() as usize + 1;
    let n = order.max(needed) | 1;
    let h = 2.0 * SMOOTH_RANGE / (n - 1) as f64;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let axis: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let z = -SMOOTH_RANGE + i as f64 * h;
            (z, h * norm * (-0.5 * z * z).exp())
        })
        .collect();
    if rank == 1 {
        return NormalRule { points: axis.iter().map(|&(z, _)| [z, 0.0]).collect(), weights: axis.iter().map(|&(_, w)| w).collect() };
    }
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for &(x, wx) in &axis {
        for &(y, wy) in &axis {
            points.push([x, y]);
            weights.push(wx * wy);
        }
    }
    NormalRule { points, weights }
}

/// Rule for integrands that are smooth except across lines through the origin
/// with normals `kinks`: polar coordinates with the angular range split at
/// every kink.
fn normal_rule_kinked(rank: usize, order: usize, kinks: &[[f64; 2]]) -> Result<NormalRule, KernelError> {
    match rank {
        0 => Ok(NormalRule { points: vec![[0.0, 0.0]], weights: vec![1.0] }),
        1 => {
            let half = quadrature::half_line_rule(0, RADIAL_ORDER.max(order / 2))?;
            let norm = 1.0 / (2.0 * PI).sqrt();
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for sign in [-1.0, 1.0] {
                for (&r, &w) in half.nodes.iter().zip(&half.weights) {
                    points.push([sign * r, 0.0]);
                    weights.push(w * norm);
                }
            }
            Ok(NormalRule { points, weights })
        }
        _ => {
            let radial = quadrature::half_line_rule(1, RADIAL_ORDER)?;
            let mut angles = vec![0.0, 2.0 * PI];
            for l in kinks {
                if l[0] == 0.0 && l[1] == 0.0 {
                    continue;
                }
                let base = l[1].atan2(l[0]);
                for shift in [0.5 * PI, -0.5 * PI] {
                    angles.push((base + shift).rem_euclid(2.0 * PI));
                }
            }
            angles.sort_by(f64::total_cmp);
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for arc in angles.windows(2) {
                if arc[1] - arc[0] <= 0.0 {
                    continue;
                }
                let angular: QuadratureRule = quadrature::gauss_legendre_on(order, arc[0], arc[1])?;
                for (&theta, &wt) in angular.nodes.iter().zip(&angular.weights) {
                    let (s, c) = theta.sin_cos();
                    for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
                        points.push([r * c, r * s]);
                        weights.push(wt * wr / (2.0 * PI));
                    }
                }
            }
            Ok(NormalRule { points, weights })
        }
    }
}

/// Value covariance of a pair of points, whitened: `(G(u), G(w)) = B z`.
struct Whitening {
    rank: usize,
    /// Rows of `B`; only the first `rank` columns are meaningful.
    rows: [[f64; 2]; 2],
    /// Eigenvectors scaled by `1/√λ` for the kept directions (columns).
    inverse_cols: [[f64; 2]; 2],
}

fn whiten(s: [[f64; 2]; 2]) -> Whitening {
    let eig = SymmetricEigen::new(Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1]));
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut rows = [[0.0; 2]; 2];
    let mut inverse_cols = [[0.0; 2]; 2];
    let mut rank = 0;
    for &k in &order {
        let lam = eig.eigenvalues[k];
        if top <= 0.0 || lam <= COLLAPSE_TOLERANCE * top {
            continue;
        }
        let root = lam.sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..2 {
            rows[i][rank] = root * v[i];
            inverse_cols[rank][i] = v[i] / root;
        }
        rank += 1;
    }
    Whitening { rank, rows, inverse_cols }
}

/// Output entry `(c, c2)` with the chain-rule terms of both components.
type EntryPlan = (usize, usize, Vec<(ChainTerm, ChainTerm)>);

/// Everything needed to integrate one pair of points at one layer.
struct PairProblem<'a> {
    activation: Activation,
    whitening: Whitening,
    /// Conditional mean coefficients: `μ_k(z) = Σ_r coef[k][r] z_r`.
    mean_coef: Vec<[f64; 2]>,
    cond_cov: Vec<Vec<f64>>,
    entries: &'a [EntryPlan],
    /// Offset of the second point's jet components in the conditioned vector.
    second_offset: usize,
}

impl PairProblem<'_> {
    fn integrate(&self, rule: &NormalRule) -> Vec<f64> {
        let k = self.mean_coef.len();
        let mut sums = vec![0.0; self.entries.len()];
        let mut mu = vec![0.0; k];
        for (z, &wt) in rule.points.iter().zip(&rule.weights) {
            let b = &self.whitening.rows;
            let u = b[0][0] * z[0] + b[0][1] * z[1];
            let w = b[1][0] * z[0] + b[1][1] * z[1];
            let (du, dw) = (derivs(self.activation, u), derivs(self.activation, w));
            for (m, c) in mu.iter_mut().zip(&self.mean_coef) {
                *m = c[0] * z[0] + c[1] * z[1];
            }
            for (sum, (_, _, terms)) in sums.iter_mut().zip(self.entries) {
                let mut value = 0.0;
                for (tu, tw) in terms {
                    let scale = du[tu.order] * dw[tw.order];
                    if scale == 0.0 {
                        continue;
                    }
                    let idx: Vec<usize> = tu
                        .factors
                        .iter()
                        .map(|&c| c - 1)
                        .chain(tw.factors.iter().map(|&c| self.second_offset + c - 1))
                        .collect();
                    value += scale * shifted_moment(&idx, &mu, &self.cond_cov);
                }
                *sum += wt * value;
            }
        }
        sums
    }
}

/// Extended-index layout: `points × jet components`, point-major.
struct Layout {
    points: usize,
    jet: usize,
    p: usize,
    comps: Vec<Component>,
}

impl Layout {
    fn index(&self, point: usize, comp: usize) -> usize {
        point * self.jet + comp
    }
}

fn base_layer(config: &NetworkConfig, points: &[Vec<f64>], probes: &ProbeSet, layout: &Layout) -> Result<SymMatrix, KernelError> {
    let jets: Vec<Vec<Vec<f64>>> = points.iter().map(|x| input_jets(x, probes.directions(), probes.q())).collect();
    let n = layout.points * layout.jet;
    Ok(SymMatrix::from_upper_fn(n, |i, j| {
        let (pi, ci) = (i / layout.jet, i % layout.jet);
        let (pj, cj) = (j / layout.jet, j % layout.jet);
        affine_entry(config.c_b, config.c_w, &jets[pi][ci], &jets[pj][cj], ci == 0 && cj == 0)
    })?)
}

/// One application of the recursion on the extended index set, at a given order.
fn layer_step_at(config: &NetworkConfig, prev: &SymMatrix, layout: &Layout, order: usize) -> Result<SymMatrix, KernelError> {
    let jl = layout.jet;
    let n = layout.points * jl;
    let mut out = vec![vec![0.0; n]; n];
    for pu in 0..layout.points {
        for pw in pu..layout.points {
            let entries: Vec<EntryPlan> = (0..jl)
                .flat_map(|c| (0..jl).map(move |c2| (c, c2)))
                .filter(|&(c, c2)| pu != pw || c <= c2)
                .map(|(c, c2)| {
                    let tu = chain_terms(layout.comps[c], layout.p);
                    let tw = chain_terms(layout.comps[c2], layout.p);
                    let terms = tu.iter().flat_map(|a| tw.iter().map(move |b| (a.clone(), b.clone()))).collect();
                    (c, c2, terms)
                })
                .collect();
            let (iu, iw) = (layout.index(pu, 0), layout.index(pw, 0));
            let s = [[prev.get(iu, iu), prev.get(iu, iw)], [prev.get(iw, iu), prev.get(iw, iw)]];
            let whitening = whiten(s);
            // Conditioned vector: jet components of u, then of w.
            let cond_idx: Vec<usize> =
                (1..jl).map(|c| layout.index(pu, c)).chain((1..jl).map(|c| layout.index(pw, c))).collect();
            let mean_coef: Vec<[f64; 2]> = cond_idx
                .iter()
                .map(|&k| {
                    let cross = [prev.get(k, iu), prev.get(k, iw)];
                    let mut coef = [0.0; 2];
                    for (r, col) in whitening.inverse_cols.iter().enumerate().take(whitening.rank) {
                        coef[r] = cross[0] * col[0] + cross[1] * col[1];
                    }
                    coef
                })
                .collect();
            let cond_cov: Vec<Vec<f64>> = cond_idx
                .iter()
                .enumerate()
                .map(|(a, &ka)| {
                    cond_idx
                        .iter()
                        .enumerate()
                        .map(|(b, &kb)| {
                            prev.get(ka, kb) - mean_coef[a][0] * mean_coef[b][0] - mean_coef[a][1] * mean_coef[b][1]
                        })
                        .collect()
                })
                .collect();
            let problem = PairProblem {
                activation: config.activation,
                mean_coef,
                cond_cov,
                entries: &entries,
                second_offset: jl - 1,
                whitening,
            };
            let rule = if config.activation.has_kink() {
                normal_rule_kinked(problem.whitening.rank, order, &problem.whitening.rows)?
            } else {
                let scale = s[0][0].max(s[1][1]).max(0.0).sqrt();
                normal_rule_smooth(problem.whitening.rank, order, scale)
            };
            let values = problem.integrate(&rule);
            for ((c, c2, _), e) in entries.iter().zip(values) {
                let bias = if *c == 0 && *c2 == 0 { config.c_b } else { 0.0 };
                let v = bias + config.c_w * e;
                let (i, j) = (layout.index(pu, *c), layout.index(pw, *c2));
                out[i][j] = v;
                out[j][i] = v;
            }
        }
    }
    Ok(SymMatrix::from_rows(&out)?)
}

fn layer_step(config: &NetworkConfig, prev: &SymMatrix, layout: &Layout, order: usize, layer: usize) -> Result<SymMatrix, KernelError> {
    let coarse = layer_step_at(config, prev, layout, order)?;
    let fine = layer_step_at(config, prev, layout, 2 * order)?;
    let difference = coarse.max_abs_diff(&fine);
    if difference > DIVERGENCE_TOLERANCE {
        return Err(KernelError::QuadratureDivergence { layer, difference });
    }
    Ok(fine)
}

fn check_config(config: &NetworkConfig, probes: &ProbeSet) -> Result<(), KernelError> {
    config.validate().map_err(|e| KernelError::InvalidInput(e.to_string()))?;
    if probes.input_dim() != config.input_width() {
        return Err(KernelError::InvalidInput(format!(
            "probe inputs have length {}, network input width is {}",
            probes.input_dim(),
            config.input_width()
        )));
    }
    Ok(())
}

fn run_stack(config: &NetworkConfig, probes: &ProbeSet, options: &KernelOptions) -> Result<KernelStack, KernelError> {
    check_config(config, probes)?;
    let (points, point_of) = probes.distinct_inputs();
    let layout = Layout {
        points: points.len(),
        jet: probes.jet_len(),
        p: probes.num_directions(),
        comps: components(probes.num_directions(), probes.q()),
    };
    let project = |ext: &SymMatrix| -> Result<SymMatrix, KernelError> {
        let idx: Vec<usize> = (0..probes.dim()).map(|j| layout.index(point_of[j], probes.component_of(j))).collect();
        Ok(SymMatrix::from_upper_fn(probes.dim(), |i, j| ext.get(idx[i], idx[j]))?)
    };
    let mut ext = base_layer(config, &points, probes, &layout)?;
    let mut layers = vec![project(&ext)?];
    for l in 1..=config.depth {
        ext = layer_step(config, &ext, &layout, options.quadrature_order, l + 1)?;
        layers.push(project(&ext)?);
    }
    Ok(KernelStack { layers, quadrature_order: options.quadrature_order, q: probes.q() })
}

/// Limit kernel stack for value probes at the default quadrature order.
pub fn kernel_recursion(config: &NetworkConfig, probes: &ProbeSet) -> Result<KernelStack, KernelError> {
    kernel_recursion_with(config, probes, &KernelOptions::default())
}

pub fn kernel_recursion_with(
    config: &NetworkConfig,
    probes: &ProbeSet,
    options: &KernelOptions,
) -> Result<KernelStack, KernelError> {
    if probes.q() != 0 {
        return Err(KernelError::InvalidInput(format!(
            "kernel_recursion takes value probes (q = 0), got q = {}",
            probes.q()
        )));
    }
    run_stack(config, probes, options)
}

/// Derivative-extended limit kernel: entry `(i, j)` of `K^(ℓ)` is
/// `V^{J^(i)} V^{J^(j)} K^(ℓ)(x^(i), x^(j))`.
pub fn extended_kernel(config: &NetworkConfig, probes: &ProbeSet) -> Result<KernelStack, KernelError> {
    extended_kernel_with(config, probes, &KernelOptions::default())
}

pub fn extended_kernel_with(
    config: &NetworkConfig,
    probes: &ProbeSet,
    options: &KernelOptions,
) -> Result<KernelStack, KernelError> {
    let max = config.activation.max_derivative_order();
    if probes.q() > max {
        return Err(KernelError::SmoothnessViolation { activation: config.activation, q: probes.q(), max });
    }
    if probes.q() == 0 {
        return kernel_recursion_with(config, probes, options);
    }
    run_stack(config, probes, options)
}

/// Per-layer smallest eigenvalues of a kernel stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub min_eigenvalues: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
    /// Smallest eigenvalue over all layers.
    pub smallest: f64,
    /// Smallest eigenvalue of the output kernel `K^(L+1)`.
    pub output_min_eig: f64,
}

pub fn nondegeneracy_check(stack: &KernelStack, tol: f64) -> NondegeneracyReport {
    let min_eigenvalues: Vec<f64> = stack
        .layers
        .iter()
        .map(|k| matrix::spectral(k).map(|s| s.min_eig).unwrap_or(f64::NAN))
        .collect();
    let passed = min_eigenvalues.iter().all(|&m| m > tol);
    let smallest = min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let output_min_eig = *min_eigenvalues.last().unwrap_or(&f64::NAN);
    NondegeneracyReport { min_eigenvalues, tolerance: tol, passed, smallest, output_min_eig }
}

/// Pairs of probes with the same multi-index whose inputs have cosine
/// similarity above `1 − 1e-10`.
pub fn near_coincident_probes(probes: &ProbeSet) -> Vec<(usize, usize)> {
    let xs = probes.inputs();
    let mut out = Vec::new();
    for i in 0..probes.dim() {
        for j in i + 1..probes.dim() {
            if probes.multi_indices()[i] != probes.multi_indices()[j] {
                continue;
            }
            let dot: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum();
            let ni = xs[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nj = xs[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            let cosine = if ni == 0.0 || nj == 0.0 {
                if ni == nj { 1.0 } else { 0.0 }
            } else {
                dot / (ni * nj)
            };
            if cosine > 1.0 - 1e-10 {
                out.push((i, j));
            }
        }
    }
    out
}

/// `E[ReLU(X) ReLU(Y)]` for a centered pair with variances `kxx`, `kyy` and covariance `kxy`.
pub fn arc_cosine(kxx: f64, kyy: f64, kxy: f64) -> f64 {
    let scale = (kxx * kyy).sqrt();
    if scale == 0.0 {
        return 0.0;
    }
    let rho = (kxy / scale).clamp(-1.0, 1.0);
    let theta = rho.acos();
    scale * (theta.sin() + (PI - theta) * rho) / (2.0 * PI)
}

/// Analytic kernel stack for the identity and ReLU activations (value probes only).
pub fn closed_form_oracle(config: &NetworkConfig, probes: &ProbeSet) -> Result<KernelStack, KernelError> {
    check_config(config, probes)?;
    if probes.q() != 0 {
        return Err(KernelError::Unsupported("closed-form kernels cover value probes only".into()));
    }
    let step: fn(f64, f64, f64) -> f64 = match config.activation {
        Activation::Identity => |_, _, kxy| kxy,
        Activation::Relu => arc_cosine,
        other => return Err(KernelError::Unsupported(format!("no closed form for {other:?}"))),
    };
    let xs = probes.inputs();
    let n0 = config.input_width() as f64;
    let mut k = SymMatrix::from_upper_fn(probes.dim(), |i, j| {
        config.c_b + config.c_w / n0 * xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum::<f64>()
    })?;
    let mut layers = vec![k.clone()];
    for _ in 0..config.depth {
        let prev = k;
        k = SymMatrix::from_upper_fn(probes.dim(), |i, j| {
            config.c_b + config.c_w * step(prev.get(i, i), prev.get(j, j), prev.get(i, j))
        })?;
        layers.push(k.clone());
    }
    Ok(KernelStack { layers, quadrature_order: 0, q: 0 })
}
