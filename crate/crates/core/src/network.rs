//! Fully connected networks at Gaussian initialization.
//!
//! Layer `ℓ` computes `z^(ℓ) = b^(ℓ) + W^(ℓ) σ(z^(ℓ−1))` with `z^(1) = b^(1) + W^(1) x`,
//! where biases have variance `C_b` and weights variance `C_W / n_{ℓ−1}`.
//! Conditionally on the hidden layers the first output coordinate is a centered
//! Gaussian whose covariance over a probe set is the matrix `A` built by
//! [`conditional_covariance`]. Directional input derivatives up to order two
//! are propagated exactly with truncated Taylor jets.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::{self, MatrixError, SymMatrix};
use crate::rng::{domain, RngStream};

/// Largest supported derivative order.
pub const MAX_DERIVATIVE_ORDER: usize = 2;
/// Preactivations closer than this to a ReLU kink count as hitting it.
pub const KINK_THRESHOLD: f64 = 1e-12;
/// Relative size of the probe perturbation applied after a kink hit.
pub const KINK_PERTURBATION: f64 = 1e-9;
const MAX_KINK_RETRIES: u32 = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid probe set: {0}")]
    InvalidProbes(String),
    #[error("derivative order {q} exceeds what the {activation:?} activation supports ({max})")]
    SmoothnessViolation { activation: Activation, q: usize, max: usize },
    #[error("preactivation {value:.3e} at layer {layer} sits on the ReLU kink")]
    KinkHit { layer: usize, value: f64 },
    #[error("probe input dimension {got} does not match network input width {expected}")]
    InputMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::Relu => u.max(0.0),
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
        }
    }

    /// First derivative; for ReLU the value at the kink is taken as zero.
    pub fn d1(self, u: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = self.eval(u);
                s * (1.0 - s)
            }
        }
    }

    pub fn d2(self, u: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = self.eval(u);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// Derivative of order `m` (0, 1 or 2).
    pub fn derivative(self, m: usize, u: f64) -> f64 {
        match m {
            0 => self.eval(u),
            1 => self.d1(u),
            2 => self.d2(u),
            _ => unreachable!("derivatives above order two are not used"),
        }
    }

    /// Smoothness index `r`: ReLU is piecewise linear with `r = 1`; the others
    /// are infinitely differentiable and reported as `u32::MAX`.
    pub fn smoothness(self) -> u32 {
        match self {
            Activation::Relu => 1,
            _ => u32::MAX,
        }
    }

    /// Largest derivative order the simulator accepts for this activation.
    pub fn max_derivative_order(self) -> usize {
        (self.smoothness() as usize).min(MAX_DERIVATIVE_ORDER)
    }

    /// Whether the activation is piecewise linear with a kink at zero.
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

/// Architecture and initialization scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of hidden layers `L`.
    pub depth: usize,
    /// Widths `n_0, …, n_{L+1}`.
    pub widths: Vec<usize>,
    pub c_b: f64,
    pub c_w: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.widths.len() != self.depth + 2 {
            return Err(NetworkError::InvalidConfig(format!(
                "expected {} widths for depth {}, got {}",
                self.depth + 2,
                self.depth,
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(NetworkError::InvalidConfig("widths must be positive".into()));
        }
        if !(self.c_b >= 0.0 && self.c_b.is_finite()) {
            return Err(NetworkError::InvalidConfig(format!("C_b = {} must be finite and >= 0", self.c_b)));
        }
        if !(self.c_w > 0.0 && self.c_w.is_finite()) {
            return Err(NetworkError::InvalidConfig(format!("C_W = {} must be finite and > 0", self.c_w)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    /// Width of the last hidden layer `n_L` (the input width when `L = 0`).
    pub fn last_hidden_width(&self) -> usize {
        self.widths[self.depth]
    }

    /// The same architecture with every hidden layer set to `width`.
    pub fn with_hidden_width(&self, width: usize) -> NetworkConfig {
        let mut out = self.clone();
        for w in out.widths.iter_mut().take(self.depth + 1).skip(1) {
            *w = width;
        }
        out
    }
}

/// Probe inputs, unit direction vectors and one derivative multi-index per probe.
///
/// Each multi-index has one entry per direction and counts how many times the
/// probe is differentiated along it; the total is at most `q ≤ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    inputs: Vec<Vec<f64>>,
    directions: Vec<Vec<f64>>,
    multi_indices: Vec<Vec<usize>>,
    q: usize,
}

impl ProbeSet {
    /// Validates the probe set and normalizes the directions to unit length.
    pub fn new(
        inputs: Vec<Vec<f64>>,
        directions: Vec<Vec<f64>>,
        multi_indices: Vec<Vec<usize>>,
        q: usize,
    ) -> Result<Self, NetworkError> {
        let bad = |msg: String| Err(NetworkError::InvalidProbes(msg));
        if inputs.is_empty() {
            return bad("at least one probe input is required".into());
        }
        let n0 = inputs[0].len();
        if n0 == 0 {
            return bad("probe inputs must be non-empty vectors".into());
        }
        if inputs.iter().flatten().chain(directions.iter().flatten()).any(|v| !v.is_finite()) {
            return bad("probe inputs and directions must be finite".into());
        }
        if inputs.iter().any(|x| x.len() != n0) || directions.iter().any(|v| v.len() != n0) {
            return bad(format!("all inputs and directions must have length {n0}"));
        }
        if q > MAX_DERIVATIVE_ORDER {
            return bad(format!("derivative order q = {q} exceeds the supported {MAX_DERIVATIVE_ORDER}"));
        }
        if q > 0 && directions.is_empty() {
            return bad("q >= 1 requires at least one direction".into());
        }
        if q > 0 && inputs.iter().any(|x| x.iter().all(|&v| v == 0.0)) {
            return bad("inputs must be non-zero when derivatives are requested".into());
        }
        if multi_indices.len() != inputs.len() {
            return bad(format!("{} multi-indices for {} inputs", multi_indices.len(), inputs.len()));
        }
        let p = directions.len();
        for (j, idx) in multi_indices.iter().enumerate() {
            if idx.len() != p {
                return bad(format!("multi-index {j} has length {}, expected {p}", idx.len()));
            }
            let order: usize = idx.iter().sum();
            if order > q {
                return bad(format!("multi-index {j} has order {order} above q = {q}"));
            }
        }
        let mut unit = Vec::with_capacity(p);
        for (a, v) in directions.into_iter().enumerate() {
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm == 0.0 {
                return bad(format!("direction {a} is the zero vector"));
            }
            unit.push(v.into_iter().map(|c| c / norm).collect());
        }
        Ok(Self { inputs, directions: unit, multi_indices, q })
    }

    /// Probes without derivatives.
    pub fn values(inputs: Vec<Vec<f64>>) -> Result<Self, NetworkError> {
        let d = inputs.len();
        Self::new(inputs, Vec::new(), vec![Vec::new(); d], 0)
    }

    pub fn dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.multi_indices
    }

    /// Number of jet components: value, first derivatives, then second derivatives.
    pub fn jet_len(&self) -> usize {
        jet_len(self.num_directions(), self.q)
    }

    /// Jet component holding probe `j`'s derivative.
    pub fn component_of(&self, j: usize) -> usize {
        let idx = &self.multi_indices[j];
        let dirs: Vec<usize> = idx.iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n(a, c)).collect();
        match dirs.as_slice() {
            [] => 0,
            [a] => 1 + a,
            [a, b] => 1 + self.num_directions() + pair_index(self.num_directions(), *a, *b),
            _ => unreachable!("orders above two are rejected at construction"),
        }
    }

    /// Distinct input points and, for each probe, the index of its point.
    pub fn distinct_inputs(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut map = Vec::with_capacity(self.dim());
        for x in &self.inputs {
            match points.iter().position(|p| p == x) {
                Some(i) => map.push(i),
                None => {
                    map.push(points.len());
                    points.push(x.clone());
                }
            }
        }
        (points, map)
    }

    /// The same probes with every input multiplied by `c`.
    pub fn scaled_inputs(&self, c: f64) -> ProbeSet {
        let mut out = self.clone();
        out.inputs.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    /// The same probe set with input `j` replaced.
    pub fn with_input(&self, j: usize, x: Vec<f64>) -> ProbeSet {
        let mut out = self.clone();
        out.inputs[j] = x;
        out
    }
}

pub fn jet_len(p: usize, q: usize) -> usize {
    match q {
        0 => 1,
        1 => 1 + p,
        _ => 1 + p + p * (p + 1) / 2,
    }
}

/// Position of the unordered pair `{a, b}` in the lexicographic list of pairs `a ≤ b`.
pub fn pair_index(p: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    // Rows 0..a contribute p, p−1, …, p−a+1 entries.
    a * p - a * (a + 1) / 2 + b
}

/// Decomposition of a jet component into its derivative directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Value,
    First(usize),
    Second(usize, usize),
}

pub fn components(p: usize, q: usize) -> Vec<Component> {
    let mut out = vec![Component::Value];
    if q >= 1 {
        out.extend((0..p).map(Component::First));
    }
    if q >= 2 {
        for a in 0..p {
            for b in a..p {
                out.push(Component::Second(a, b));
            }
        }
    }
    out
}

/// Jets of the input itself: the point, the directions, and zero second derivatives.
pub fn input_jets(x: &[f64], directions: &[Vec<f64>], q: usize) -> Vec<Vec<f64>> {
    components(directions.len(), q)
        .into_iter()
        .map(|c| match c {
            Component::Value => x.to_vec(),
            Component::First(a) => directions[a].clone(),
            Component::Second(..) => vec![0.0; x.len()],
        })
        .collect()
}

/// `V^I_x V^J_y [C_b + (C_W/n_0)⟨x, y⟩]` from the input jets of both points.
pub fn affine_entry(c_b: f64, c_w: f64, u: &[f64], w: &[f64], both_values: bool) -> f64 {
    let n0 = u.len() as f64;
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    let bias = if both_values { c_b } else { 0.0 };
    bias + c_w / n0 * dot
}

/// One layer's weights (row-major, `n_out × n_in`) and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Weights and biases for layers `1..=count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub layers: Vec<Layer>,
}

fn sample_layer(config: &NetworkConfig, layer: usize, stream: &RngStream) -> Layer {
    let n_in = config.widths[layer - 1];
    let n_out = config.widths[layer];
    let mut rng = stream.rng(layer as u64);
    let w_sd = (config.c_w / n_in as f64).sqrt();
    let weights = (0..n_in * n_out).map(|_| w_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let biases = if config.c_b == 0.0 {
        vec![0.0; n_out]
    } else {
        let b_sd = config.c_b.sqrt();
        (0..n_out).map(|_| b_sd * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    Layer { n_in, n_out, weights, biases }
}

/// Draws all `L + 1` layers; layer `ℓ` uses substream `ℓ` of `stream`.
pub fn sample_parameters(config: &NetworkConfig, stream: &RngStream) -> ParameterDraw {
    ParameterDraw { layers: (1..=config.depth + 1).map(|l| sample_layer(config, l, stream)).collect() }
}

/// Draws only the hidden layers `1..=L`, identical to the corresponding part of
/// [`sample_parameters`] for the same stream.
pub fn sample_hidden_parameters(config: &NetworkConfig, stream: &RngStream) -> ParameterDraw {
    ParameterDraw { layers: (1..=config.depth).map(|l| sample_layer(config, l, stream)).collect() }
}

/// Preactivation jets for every layer of a draw at every distinct probe input.
#[derive(Debug, Clone, PartialEq)]
pub struct JetValues {
    jet_len: usize,
    /// `layers[ℓ − 1][point]` holds `n_ℓ × jet_len` values, unit-major.
    layers: Vec<Vec<Vec<f64>>>,
    probe_point: Vec<usize>,
    probe_component: Vec<usize>,
}

impl JetValues {
    /// `V^{J^(j)} z_k^(ℓ)(x^(j))` for probe `j`, unit `k` and layer `ℓ ≥ 1`.
    pub fn derivative(&self, layer: usize, unit: usize, probe: usize) -> f64 {
        let point = self.probe_point[probe];
        self.layers[layer - 1][point][unit * self.jet_len + self.probe_component[probe]]
    }

    /// Number of layers evaluated.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

fn activate_jets(act: Activation, pre: &[f64], jl: usize, comps: &[Component], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; pre.len()];
    for (z, s) in pre.chunks_exact(jl).zip(out.chunks_exact_mut(jl)) {
        let u = z[0];
        let d1 = if jl > 1 { act.d1(u) } else { 0.0 };
        let d2 = if jl > 1 + p { act.d2(u) } else { 0.0 };
        for (c, comp) in comps.iter().enumerate() {
            s[c] = match *comp {
                Component::Value => act.eval(u),
                Component::First(a) => d1 * z[1 + a],
                Component::Second(a, b) => d2 * z[1 + a] * z[1 + b] + d1 * z[c],
            };
        }
    }
    out
}

fn affine_jets(layer: &Layer, input: &[f64], jl: usize) -> Vec<f64> {
    let mut out = vec![0.0; layer.n_out * jl];
    for o in 0..layer.n_out {
        let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
        let dst = &mut out[o * jl..(o + 1) * jl];
        for (i, &w) in row.iter().enumerate() {
            let src = &input[i * jl..(i + 1) * jl];
            for c in 0..jl {
                dst[c] += w * src[c];
            }
        }
        dst[0] += layer.biases[o];
    }
    out
}

struct JetPass {
    /// Preactivation jets per layer.
    pre: Vec<Vec<f64>>,
    /// Activation jets of the last evaluated layer.
    last_activation: Vec<f64>,
}

fn forward_point(
    params: &ParameterDraw,
    activation: Activation,
    x: &[f64],
    directions: &[Vec<f64>],
    q: usize,
    check_kink: bool,
) -> Result<JetPass, NetworkError> {
    let p = directions.len();
    let jl = jet_len(p, q);
    let comps = components(p, q);
    let in_jets = input_jets(x, directions, q);
    let mut current = vec![0.0; x.len() * jl];
    for (c, comp) in in_jets.iter().enumerate() {
        for (i, v) in comp.iter().enumerate() {
            current[i * jl + c] = *v;
        }
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        if layer.n_in * jl != current.len() {
            return Err(NetworkError::InputMismatch { expected: layer.n_in, got: current.len() / jl });
        }
        let z = affine_jets(layer, &current, jl);
        if check_kink {
            if let Some(v) = z.iter().step_by(jl).find(|v| v.abs() < KINK_THRESHOLD) {
                return Err(NetworkError::KinkHit { layer: l + 1, value: *v });
            }
        }
        current = activate_jets(activation, &z, jl, &comps, p);
        pre.push(z);
    }
    Ok(JetPass { pre, last_activation: current })
}

fn check_smoothness(activation: Activation, q: usize) -> Result<(), NetworkError> {
    let max = activation.max_derivative_order();
    if q > max {
        return Err(NetworkError::SmoothnessViolation { activation, q, max });
    }
    Ok(())
}

/// Forward pass with derivative jets through every layer of `params`.
pub fn forward_with_jets(
    params: &ParameterDraw,
    probes: &ProbeSet,
    activation: Activation,
) -> Result<JetValues, NetworkError> {
    check_smoothness(activation, probes.q())?;
    let check_kink = activation.has_kink() && probes.q() >= 1;
    let (points, probe_point) = probes.distinct_inputs();
    let jl = probes.jet_len();
    let passes = points
        .iter()
        .map(|x| forward_point(params, activation, x, probes.directions(), probes.q(), check_kink))
        .collect::<Result<Vec<_>, _>>()?;
    let layers = (0..params.layers.len())
        .map(|l| passes.iter().map(|pass| pass.pre[l].clone()).collect())
        .collect();
    Ok(JetValues {
        jet_len: jl,
        layers,
        probe_point,
        probe_component: (0..probes.dim()).map(|j| probes.component_of(j)).collect(),
    })
}

/// A draw of the derivative-extended conditional covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSample {
    pub matrix: SymMatrix,
    pub seed_stream: u64,
    /// How many times the probe inputs were nudged off a ReLU kink.
    pub kink_perturbations: u32,
}

/// Conditional covariance of the first output coordinate over the probes.
///
/// `params` must contain at least the hidden layers `1..=L`; any extra
/// (output) layer is ignored.
pub fn conditional_covariance(
    params: &ParameterDraw,
    probes: &ProbeSet,
    config: &NetworkConfig,
) -> Result<SymMatrix, NetworkError> {
    check_smoothness(config.activation, probes.q())?;
    if probes.input_dim() != config.input_width() {
        return Err(NetworkError::InputMismatch { expected: config.input_width(), got: probes.input_dim() });
    }
    let d = probes.dim();
    let comp: Vec<usize> = (0..d).map(|j| probes.component_of(j)).collect();
    let (points, point_of) = probes.distinct_inputs();
    if config.depth == 0 {
        let jets: Vec<Vec<Vec<f64>>> =
            points.iter().map(|x| input_jets(x, probes.directions(), probes.q())).collect();
        return Ok(SymMatrix::from_upper_fn(d, |i, j| {
            affine_entry(
                config.c_b,
                config.c_w,
                &jets[point_of[i]][comp[i]],
                &jets[point_of[j]][comp[j]],
                comp[i] == 0 && comp[j] == 0,
            )
        })?);
    }
    if params.layers.len() < config.depth {
        return Err(NetworkError::InvalidConfig(format!(
            "parameter draw has {} layers, depth is {}",
            params.layers.len(),
            config.depth
        )));
    }
    let hidden = ParameterDraw { layers: params.layers[..config.depth].to_vec() };
    let check_kink = config.activation.has_kink() && probes.q() >= 1;
    let jl = probes.jet_len();
    let acts = points
        .iter()
        .map(|x| {
            forward_point(&hidden, config.activation, x, probes.directions(), probes.q(), check_kink)
                .map(|pass| pass.last_activation)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n_l = config.last_hidden_width();
    let scale = config.c_w / n_l as f64;
    Ok(SymMatrix::from_upper_fn(d, |i, j| {
        let (si, sj) = (&acts[point_of[i]], &acts[point_of[j]]);
        let (ci, cj) = (comp[i], comp[j]);
        let dot: f64 = (0..n_l).map(|k| si[k * jl + ci] * sj[k * jl + cj]).sum();
        let bias = if ci == 0 && cj == 0 { config.c_b } else { 0.0 };
        bias + scale * dot
    })?)
}

/// [`conditional_covariance`] with the kink policy applied: when a ReLU
/// preactivation lands on the kink, every probe input is shifted by
/// `1e-9·‖x‖` along a fixed diagonal direction and the pass is retried.
pub fn conditional_covariance_with_kink_policy(
    params: &ParameterDraw,
    probes: &ProbeSet,
    config: &NetworkConfig,
) -> Result<(SymMatrix, u32), NetworkError> {
    let mut current = probes.clone();
    for attempt in 0..=MAX_KINK_RETRIES {
        match conditional_covariance(params, &current, config) {
            Ok(m) => return Ok((m, attempt)),
            Err(NetworkError::KinkHit { .. }) if attempt < MAX_KINK_RETRIES => {
                let n0 = current.input_dim();
                let sign = if attempt % 2 == 0 { 1.0 } else { -1.0 };
                for j in 0..current.dim() {
                    let x = &current.inputs()[j];
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let step = sign * KINK_PERTURBATION * norm / (n0 as f64).sqrt() * (attempt + 1) as f64;
                    let shifted = x.iter().enumerate().map(|(i, v)| v + step * (1.0 + i as f64 * 0.5)).collect();
                    current = current.with_input(j, shifted);
                }
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the final attempt returns either a matrix or the error")
}

/// One conditional covariance draw from stream `stream.child(index)`.
pub fn sample_covariance(
    config: &NetworkConfig,
    probes: &ProbeSet,
    stream: &RngStream,
    index: u64,
) -> Result<CovSample, NetworkError> {
    let sample_stream = stream.child(index);
    let params = sample_hidden_parameters(config, &sample_stream);
    let (matrix, kinks) = conditional_covariance_with_kink_policy(&params, probes, config)?;
    Ok(CovSample { matrix, seed_stream: sample_stream.id(), kink_perturbations: kinks })
}

/// Independent conditional covariance draws `0..n`, in index order.
pub fn sample_covariances(
    config: &NetworkConfig,
    probes: &ProbeSet,
    n: usize,
    stream: &RngStream,
) -> Result<Vec<CovSample>, NetworkError> {
    config.validate()?;
    let base = stream.child(domain::NETWORK_SAMPLES);
    (0..n as u64).into_par_iter().map(|i| sample_covariance(config, probes, &base, i)).collect()
}

/// Draws of `(V^{J^(j)} z_1^(L+1)(x^(j)))_j` as `√A · N`, one row per sample.
pub fn sample_outputs(
    config: &NetworkConfig,
    probes: &ProbeSet,
    n_samples: usize,
    stream: &RngStream,
) -> Result<Vec<Vec<f64>>, NetworkError> {
    config.validate()?;
    let base = stream.child(domain::NETWORK_SAMPLES);
    let noise = stream.child(domain::OUTPUT_NOISE);
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let sample = sample_covariance(config, probes, &base, i)?;
            let root = matrix::psd_sqrt(&sample.matrix)?;
            let mut rng = noise.rng(i);
            let n: Vec<f64> = (0..probes.dim()).map(|_| rng.sample(StandardNormal)).collect();
            Ok(root.apply(&n))
        })
        .collect()
}
