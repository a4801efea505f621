//! The weakly-shared source/target MLPs, the linear translator that turns
//! labeled source representations into pseudo-label scores, the second-order
//! Taylor form of the logistic loss, and manual reverse-mode gradients.
//!
//! Both networks are plain dense stacks: the first `l1` layers learn
//! domain-specific features, the last `l2` layers are aligned across parties
//! (identical widths, MMD loss), and a linear head scores the final hidden
//! layer. The Taylor loss `log 2 - y f / 2 + f^2 / 8` is what makes the
//! classification terms polynomial in the hidden units, hence computable
//! under additive homomorphic encryption.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand::prelude::Distribution;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const LN_2: f64 = std::f64::consts::LN_2;

/// Scores are clamped to this band before entering the Taylor loss; the
/// clamp is treated as identity in backprop (straight-through).
pub const SCORE_CLIP: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derive(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Network shape: `l1_widths` are the domain-specific layers, `l2_widths`
/// the aligned layers (source and target must agree on these), and a
/// sigmoid-scored linear head sits on top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub l1_widths: Vec<usize>,
    pub l2_widths: Vec<usize>,
    pub activation: Activation,
}

impl NetworkArch {
    pub fn new(input_dim: usize, l1: &[usize], l2: &[usize], activation: Activation) -> Self {
        NetworkArch {
            input_dim,
            l1_widths: l1.to_vec(),
            l2_widths: l2.to_vec(),
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.l2_widths.is_empty() {
            return Err(Error::Config("at least one aligned layer is required".into()));
        }
        if self.l1_widths.iter().chain(&self.l2_widths).any(|w| *w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.l1_widths.iter().chain(&self.l2_widths).copied().collect()
    }

    /// Indices (into the layer stack) of the aligned layers.
    pub fn aligned_layers(&self) -> std::ops::Range<usize> {
        self.l1_widths.len()..self.l1_widths.len() + self.l2_widths.len()
    }

    pub fn aligned_widths(&self) -> &[usize] {
        &self.l2_widths
    }

    pub fn last_layer_width(&self) -> usize {
        *self.layer_widths().last().expect("validated arch has layers")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(fan_in, fan_out)` weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All parameters of one party's network, including the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: NetworkArch,
    pub layers: Vec<DenseLayer>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

/// Gradients with the same shapes as [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<DenseLayer>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

/// Per-layer pre-activations and activations for one forward pass, plus the
/// pre-sigmoid classifier scores.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
    pub scores: Array1<f64>,
}

impl LayerActivations {
    /// Activations at one layer as an aligned-layer hidden batch.
    pub fn hidden_at(&self, layer: usize) -> crate::mmd::HiddenBatch {
        crate::mmd::HiddenBatch::new(self.post[layer].clone(), layer)
    }
}

/// Deterministic initialization: weights are N(0, 1/fan_in), biases zero.
pub fn init_network(arch: &NetworkArch, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut layers = Vec::new();
    let mut fan_in = arch.input_dim;
    for width in arch.layer_widths() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, width), |_| {
            let z: f64 = normal.sample(&mut rng);
            z * scale
        });
        layers.push(DenseLayer { weights, bias: Array1::zeros(width) });
        fan_in = width;
    }
    let scale = 1.0 / (fan_in as f64).sqrt();
    let head_w = Array1::from_shape_fn(fan_in, |_| {
        let z: f64 = normal.sample(&mut rng);
        z * scale
    });
    Ok(NetworkParams { arch: arch.clone(), layers, head_w, head_b: 0.0 })
}

/// Full forward pass over a batch (rows are samples). Scores are the raw
/// linear head outputs; apply a sigmoid only when a probability is needed.
pub fn forward(params: &NetworkParams, batch: &Array2<f64>) -> Result<LayerActivations> {
    if batch.ncols() != params.arch.input_dim {
        return Err(Error::DimMismatch(format!(
            "batch has {} columns, network expects {}",
            batch.ncols(),
            params.arch.input_dim
        )));
    }
    let act = params.arch.activation;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len());
    let mut h = batch.clone();
    for layer in &params.layers {
        let z = h.dot(&layer.weights) + &layer.bias;
        let a = z.mapv(|v| act.apply(v));
        pre.push(z);
        h = a.clone();
        post.push(a);
    }
    let scores = h.dot(&params.head_w) + params.head_b;
    Ok(LayerActivations { input: batch.clone(), pre, post, scores })
}

/// Reverse-mode gradients of any scalar whose partials w.r.t. the classifier
/// scores (`dl_df`, one per sample) and w.r.t. aligned hidden layers
/// (`dl_dhidden`, keyed by layer index) are supplied by the caller.
pub fn backward(
    params: &NetworkParams,
    acts: &LayerActivations,
    dl_df: &Array1<f64>,
    dl_dhidden: &HashMap<usize, Array2<f64>>,
) -> Result<ParamGrads> {
    let n = acts.input.nrows();
    if dl_df.len() != n {
        return Err(Error::DimMismatch(format!(
            "dl_df has {} entries for a batch of {n}",
            dl_df.len()
        )));
    }
    let act = params.arch.activation;
    let last = params.layers.len() - 1;
    let h_last = &acts.post[last];

    let head_w_grad = h_last.t().dot(dl_df);
    let head_b_grad = dl_df.sum();
    // gradient flowing into the last hidden layer from the head
    let mut g = dl_df
        .view()
        .insert_axis(Axis(1))
        .dot(&params.head_w.view().insert_axis(Axis(0)));

    let mut layer_grads: Vec<Option<DenseLayer>> = vec![None; params.layers.len()];
    for l in (0..params.layers.len()).rev() {
        if let Some(inj) = dl_dhidden.get(&l) {
            if inj.shape() != acts.post[l].shape() {
                return Err(Error::DimMismatch(format!(
                    "injected hidden gradient at layer {l} has shape {:?}, expected {:?}",
                    inj.shape(),
                    acts.post[l].shape()
                )));
            }
            g = g + inj;
        }
        let dpre = &g * &acts.pre[l].mapv(|v| act.derive(v));
        let input = if l == 0 { &acts.input } else { &acts.post[l - 1] };
        layer_grads[l] = Some(DenseLayer {
            weights: input.t().dot(&dpre),
            bias: dpre.sum_axis(Axis(0)),
        });
        g = dpre.dot(&params.layers[l].weights.t());
    }
    Ok(ParamGrads {
        layers: layer_grads.into_iter().map(|g| g.expect("all layers visited")).collect(),
        head_w: head_w_grad,
        head_b: head_b_grad,
    })
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            head_w: Array1::zeros(params.head_w.raw_dim()),
            head_b: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
        self.head_w.scaled_add(scale, &other.head_w);
        self.head_b += scale * other.head_b;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.is_finite()
    }

    /// Flattened view for finite-difference oracles in tests.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out.extend(self.head_w.iter());
        out.push(self.head_b);
        out
    }
}

impl NetworkParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
            + self.head_w.len()
            + 1
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out.extend(self.head_w.iter());
        out.push(self.head_b);
        out
    }

    /// Rebuilds parameters from a flat vector in [`Self::flatten`] order;
    /// test plumbing for finite differences.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut() {
                *v = it.next().expect("flat vector too short");
            }
            for v in l.bias.iter_mut() {
                *v = it.next().expect("flat vector too short");
            }
        }
        for v in self.head_w.iter_mut() {
            *v = it.next().expect("flat vector too short");
        }
        self.head_b = it.next().expect("flat vector too short");
    }
}

/// One plain gradient step, `params - lr * grads`. Non-finite gradients
/// abort the epoch rather than poisoning the parameters.
pub fn sgd_step(params: &NetworkParams, grads: &ParamGrads, lr: f64) -> Result<NetworkParams> {
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Training("non-finite gradient; aborting epoch".into()));
    }
    let mut out = params.clone();
    for (p, g) in out.layers.iter_mut().zip(&grads.layers) {
        p.weights.scaled_add(-lr, &g.weights);
        p.bias.scaled_add(-lr, &g.bias);
    }
    out.head_w.scaled_add(-lr, &grads.head_w);
    out.head_b -= lr * grads.head_b;
    Ok(out)
}

/// `1/2 sum ||W||^2` over weight matrices (biases excluded), with gradient
/// `W` per matrix. The objective's `beta/2` factor is applied by the caller.
pub fn l2_reg(params: &NetworkParams) -> (f64, ParamGrads) {
    let mut value = 0.0;
    let mut grads = ParamGrads::zeros_like(params);
    for (g, l) in grads.layers.iter_mut().zip(&params.layers) {
        value += 0.5 * l.weights.iter().map(|v| v * v).sum::<f64>();
        g.weights.assign(&l.weights);
    }
    value += 0.5 * params.head_w.iter().map(|v| v * v).sum::<f64>();
    grads.head_w.assign(&params.head_w);
    (value, grads)
}

/// Second-order Taylor expansion of `log(1 + exp(-y f))` around `f = 0`,
/// using `y^2 = 1`: `log 2 - y f / 2 + f^2 / 8`.
pub fn taylor_logistic_loss(y: f64, f: f64) -> f64 {
    LN_2 - y * f / 2.0 + f * f / 8.0
}

/// `d/df` of [`taylor_logistic_loss`]: `-y/2 + f/4`.
pub fn taylor_logistic_grad(y: f64, f: f64) -> f64 {
    -y / 2.0 + f / 4.0
}

/// Exact logistic loss, kept for comparing against the Taylor form.
pub fn exact_logistic_loss(y: f64, f: f64) -> f64 {
    (1.0 + (-y * f).exp()).ln()
}

pub fn clip_score(f: f64) -> f64 {
    f.clamp(-SCORE_CLIP, SCORE_CLIP)
}

/// The translator vector `T = 1/N sum y_i h_i` over labeled source hidden
/// rows; `<T, h_t>` is the pseudo-label score of a target representation.
pub fn translator_vector(source_hidden: &Array2<f64>, labels: &[f64]) -> Result<Array1<f64>> {
    if source_hidden.nrows() == 0 {
        return Err(Error::DimMismatch("translator needs at least one labeled row".into()));
    }
    if source_hidden.nrows() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} hidden rows vs {} labels",
            source_hidden.nrows(),
            labels.len()
        )));
    }
    let mut t = Array1::<f64>::zeros(source_hidden.ncols());
    for (row, y) in source_hidden.rows().into_iter().zip(labels) {
        t.scaled_add(*y, &row);
    }
    Ok(t / labels.len() as f64)
}

/// Pseudo-label score of one target hidden row.
pub fn translator_score(
    source_hidden: &Array2<f64>,
    labels: &[f64],
    target_row: &[f64],
) -> Result<f64> {
    let t = translator_vector(source_hidden, labels)?;
    if t.len() != target_row.len() {
        return Err(Error::DimMismatch(format!(
            "translator dim {} vs target dim {}",
            t.len(),
            target_row.len()
        )));
    }
    Ok(t.iter().zip(target_row).map(|(a, b)| a * b).sum())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_VERSION: &str = "smmd-ckpt/1";

#[derive(Serialize, Deserialize)]
struct LayerDto {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Versioned JSON container for one network's parameters plus the seeds the
/// run was launched with.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    version: String,
    pub arch: NetworkArch,
    layers: Vec<LayerDto>,
    head_w: Vec<f64>,
    head_b: f64,
    pub seed_meta: HashMap<String, u64>,
}

impl Checkpoint {
    pub fn from_params(params: &NetworkParams, seed_meta: HashMap<String, u64>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            arch: params.arch.clone(),
            layers: params
                .layers
                .iter()
                .map(|l| LayerDto {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            head_w: params.head_w.to_vec(),
            head_b: params.head_b,
            seed_meta,
        }
    }

    pub fn into_params(self) -> Result<NetworkParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {:?}, expected {CHECKPOINT_VERSION:?}",
                self.version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for dto in self.layers {
            let weights = Array2::from_shape_vec((dto.rows, dto.cols), dto.weights)
                .map_err(|e| Error::Config(format!("bad checkpoint shape: {e}")))?;
            layers.push(DenseLayer { weights, bias: Array1::from_vec(dto.bias) });
        }
        Ok(NetworkParams {
            arch: self.arch,
            layers,
            head_w: Array1::from_vec(self.head_w),
            head_b: self.head_b,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))
    }
}
