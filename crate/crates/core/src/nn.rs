//! Feed-forward network primitives: architecture description, flat weight
//! vectors, forward pass, exact backpropagation, and per-sample weight
//! Jacobians.
//!
//! # Weight layout
//!
//! All weights of a network live in one flat `Vec<f64>` of length `d`.
//! Layers are stored in forward order. For an affine layer with `in`
//! inputs and `out` outputs the block is
//!
//! ```text
//! [ W row-major (out × in) | b (out) ]
//! ```
//!
//! i.e. weight `(k, j)` (output unit `k`, input `j`) sits at
//! `offset + k*in + j` and bias `k` at `offset + in*out + k`. This layout
//! is fixed so Jacobian and Kronecker-factor indexing is unambiguous
//! everywhere else in the crate.
//!
//! The output layer is always affine: `forward` returns raw logits
//! (classification) or the regression output. Softmax, when relevant,
//! is applied by the loss and by the posterior predictive, never here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`. The relu kink at `x = 0` is defined as 0 so
    /// gradients and finite-difference oracles agree deterministically.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// What the final layer's raw output means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Logits; class probabilities are `softmax(logits)`.
    SoftmaxCategorical,
    /// Scalar regression output under a Gaussian likelihood.
    Gaussian,
}

/// MLP shape: layer sizes (input dim, hidden dims..., output dim),
/// hidden activation, and output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_head: OutputHead,
}

impl MlpArchitecture {
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "layer_sizes needs at least input and output dims, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "all layer sizes must be >= 1, got {:?}",
                layer_sizes
            )));
        }
        Ok(Self {
            layer_sizes,
            activation,
            output_head,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    /// Number of affine layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// `(in, out)` of affine layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    /// Total parameter count `d = Σ_l (in_l + 1) · out_l`.
    pub fn param_count(&self) -> usize {
        (0..self.num_layers())
            .map(|l| {
                let (i, o) = self.layer_shape(l);
                (i + 1) * o
            })
            .sum()
    }

    /// Offset of layer `l`'s block in the flat weight vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        (0..l)
            .map(|m| {
                let (i, o) = self.layer_shape(m);
                (i + 1) * o
            })
            .sum()
    }

    /// Flat index of weight `(k, j)` of layer `l`.
    pub fn weight_index(&self, l: usize, k: usize, j: usize) -> usize {
        let (i, _) = self.layer_shape(l);
        self.layer_offset(l) + k * i + j
    }

    /// Flat index of bias `k` of layer `l`.
    pub fn bias_index(&self, l: usize, k: usize) -> usize {
        let (i, o) = self.layer_shape(l);
        self.layer_offset(l) + i * o + k
    }
}

/// A network: flat weights plus the architecture they parameterize.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    weights: Vec<f64>,
    arch: MlpArchitecture,
}

impl ModelParams {
    pub fn new(arch: MlpArchitecture, weights: Vec<f64>) -> Result<Self> {
        let d = arch.param_count();
        if weights.len() != d {
            return Err(Error::InvalidArgument(format!(
                "weight vector length {} does not match parameter count {}",
                weights.len(),
                d
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "weight vector contains non-finite entries".to_string(),
            ));
        }
        Ok(Self { weights, arch })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let d = arch.param_count();
        Self {
            weights: vec![0.0; d],
            arch,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Replace the weight vector, keeping the architecture.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), weights)
    }
}

/// Supervised target for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Real(f64),
}

/// Loss function selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    NllCategorical,
    NllGaussian { variance: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::NllGaussian { variance } = self {
            if !(*variance > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "Gaussian likelihood variance must be positive, got {variance}"
                )));
            }
        }
        Ok(())
    }
}

/// All activations produced by one forward pass; reused by backprop,
/// per-sample Jacobians, and KFAC statistics.
pub(crate) struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l+1]` is the output of
    /// affine layer `l` after its activation (raw for the last layer).
    pub activations: Vec<Vec<f64>>,
    /// `pre_activations[l]` is `z_l = W_l a_{l-1} + b_l`.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

pub(crate) fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    let arch = &params.arch;
    if x.len() != arch.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "input length {} does not match input dim {}",
            x.len(),
            arch.input_dim()
        )));
    }
    let num_layers = arch.num_layers();
    let mut activations = Vec::with_capacity(num_layers + 1);
    let mut pre_activations = Vec::with_capacity(num_layers);
    activations.push(x.to_vec());
    for l in 0..num_layers {
        let (in_dim, out_dim) = arch.layer_shape(l);
        let offset = arch.layer_offset(l);
        let w = &params.weights[offset..offset + in_dim * out_dim];
        let b = &params.weights[offset + in_dim * out_dim..offset + (in_dim + 1) * out_dim];
        let a = &activations[l];
        let mut z = vec![0.0; out_dim];
        for k in 0..out_dim {
            let row = &w[k * in_dim..(k + 1) * in_dim];
            let mut acc = b[k];
            for j in 0..in_dim {
                acc += row[j] * a[j];
            }
            z[k] = acc;
        }
        let last = l == num_layers - 1;
        let out = if last {
            z.clone()
        } else {
            z.iter().map(|&v| arch.activation.apply(v)).collect()
        };
        pre_activations.push(z);
        activations.push(out);
    }
    Ok(ForwardTrace {
        activations,
        pre_activations,
    })
}

/// Forward pass: logits for a softmax head, the regression output for a
/// Gaussian head. Pure and deterministic.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut trace = forward_trace(params, x)?;
    Ok(trace.activations.pop().unwrap())
}

/// Smallest |z| over all hidden pre-activations at `x` (infinity when the
/// network has no hidden layer). Gradient checks against finite
/// differences use this to stay clear of relu kinks.
pub fn min_abs_preactivation(params: &ModelParams, x: &[f64]) -> Result<f64> {
    let trace = forward_trace(params, x)?;
    let hidden = trace.pre_activations.len().saturating_sub(1);
    let mut min = f64::INFINITY;
    for z in trace.pre_activations.iter().take(hidden) {
        for v in z {
            min = min.min(v.abs());
        }
    }
    Ok(min)
}

/// Numerically stable log(Σ exp(v)).
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Stable softmax (subtracts the max logit).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_compatibility(arch: &MlpArchitecture, y: &Target, kind: &LossKind) -> Result<()> {
    kind.validate()?;
    match (kind, arch.output_head()) {
        (LossKind::ZeroOne | LossKind::NllCategorical, OutputHead::SoftmaxCategorical) => {
            match y {
                Target::Class(c) => {
                    if *c >= arch.output_dim() {
                        return Err(Error::InvalidArgument(format!(
                            "class index {} out of range for {} outputs",
                            c,
                            arch.output_dim()
                        )));
                    }
                    Ok(())
                }
                Target::Real(_) => Err(Error::IncompatibleLoss(
                    "categorical loss requires a class target".to_string(),
                )),
            }
        }
        (LossKind::NllGaussian { .. }, OutputHead::Gaussian) => {
            if arch.output_dim() != 1 {
                return Err(Error::IncompatibleLoss(format!(
                    "Gaussian loss requires a scalar output head, got dim {}",
                    arch.output_dim()
                )));
            }
            match y {
                Target::Real(_) => Ok(()),
                Target::Class(_) => Err(Error::IncompatibleLoss(
                    "Gaussian loss requires a real-valued target".to_string(),
                )),
            }
        }
        (kind, head) => Err(Error::IncompatibleLoss(format!(
            "{kind:?} is not valid for output head {head:?}"
        ))),
    }
}

/// Per-sample loss.
///
/// `ZeroOne` is the misclassification indicator, `NllCategorical` the
/// softmax cross-entropy computed via log-sum-exp, and `NllGaussian` the
/// Gaussian negative log-density (which may be negative).
pub fn loss(params: &ModelParams, x: &[f64], y: &Target, kind: &LossKind) -> Result<f64> {
    check_compatibility(&params.arch, y, kind)?;
    let out = forward(params, x)?;
    Ok(loss_from_output(&out, y, kind))
}

/// Loss evaluated on a precomputed network output (same conventions as
/// [`loss`]; compatibility must already hold).
pub(crate) fn loss_from_output(out: &[f64], y: &Target, kind: &LossKind) -> f64 {
    match (kind, y) {
        (LossKind::ZeroOne, Target::Class(c)) => {
            if argmax(out) != *c {
                1.0
            } else {
                0.0
            }
        }
        (LossKind::NllCategorical, Target::Class(c)) => log_sum_exp(out) - out[*c],
        (LossKind::NllGaussian { variance }, Target::Real(t)) => {
            let r = t - out[0];
            0.5 * (2.0 * std::f64::consts::PI * variance).ln() + r * r / (2.0 * variance)
        }
        _ => unreachable!("compatibility checked before dispatch"),
    }
}

/// Exact reverse-mode gradient of `loss` with respect to the flat weights.
pub fn grad_loss(params: &ModelParams, x: &[f64], y: &Target, kind: &LossKind) -> Result<Vec<f64>> {
    if matches!(kind, LossKind::ZeroOne) {
        return Err(Error::NonDifferentiable(
            "zero-one loss has no gradient; train with an NLL surrogate".to_string(),
        ));
    }
    check_compatibility(&params.arch, y, kind)?;
    let trace = forward_trace(params, x)?;
    let out = trace.output();
    // dL/dz_L for each head.
    let delta_out: Vec<f64> = match (kind, y) {
        (LossKind::NllCategorical, Target::Class(c)) => {
            let mut p = softmax(out);
            p[*c] -= 1.0;
            p
        }
        (LossKind::NllGaussian { variance }, Target::Real(t)) => {
            vec![(out[0] - t) / variance]
        }
        _ => unreachable!(),
    };
    Ok(backprop(params, &trace, delta_out))
}

/// Backpropagate an output-space gradient `delta_L = dL/dz_L` down to the
/// flat weight vector.
fn backprop(params: &ModelParams, trace: &ForwardTrace, delta_out: Vec<f64>) -> Vec<f64> {
    let arch = &params.arch;
    let num_layers = arch.num_layers();
    let mut grad = vec![0.0; params.dim()];
    let mut delta = delta_out;
    for l in (0..num_layers).rev() {
        let (in_dim, out_dim) = arch.layer_shape(l);
        let offset = arch.layer_offset(l);
        let a_prev = &trace.activations[l];
        // dL/dW_l = delta a_prevᵀ, dL/db_l = delta.
        for k in 0..out_dim {
            let row = &mut grad[offset + k * in_dim..offset + (k + 1) * in_dim];
            for j in 0..in_dim {
                row[j] = delta[k] * a_prev[j];
            }
        }
        for k in 0..out_dim {
            grad[offset + in_dim * out_dim + k] = delta[k];
        }
        if l > 0 {
            // delta_{l-1} = (W_lᵀ delta) ⊙ act'(z_{l-1}).
            let w = &params.weights[offset..offset + in_dim * out_dim];
            let z_prev = &trace.pre_activations[l - 1];
            let mut next = vec![0.0; in_dim];
            for k in 0..out_dim {
                let row = &w[k * in_dim..(k + 1) * in_dim];
                for j in 0..in_dim {
                    next[j] += row[j] * delta[k];
                }
            }
            for j in 0..in_dim {
                next[j] *= arch.activation.derivative(z_prev[j]);
            }
            delta = next;
        }
    }
    grad
}

/// Output sensitivities `B_l = ∂f/∂z_l` for every layer, as row-major
/// `output_dim × out_l` matrices. `B_{L-1}` is the identity.
pub(crate) fn output_sensitivities(params: &ModelParams, trace: &ForwardTrace) -> Vec<Vec<f64>> {
    let arch = &params.arch;
    let num_layers = arch.num_layers();
    let num_out = arch.output_dim();
    let mut bs: Vec<Vec<f64>> = vec![Vec::new(); num_layers];
    let mut b = vec![0.0; num_out * num_out];
    for c in 0..num_out {
        b[c * num_out + c] = 1.0;
    }
    bs[num_layers - 1] = b.clone();
    for l in (1..num_layers).rev() {
        // B_{l-1} = (B_l W_l) ⊙ act'(z_{l-1}) column-wise.
        let (in_dim, out_dim) = arch.layer_shape(l);
        let offset = arch.layer_offset(l);
        let w = &params.weights[offset..offset + in_dim * out_dim];
        let z_prev = &trace.pre_activations[l - 1];
        let mut prev = vec![0.0; num_out * in_dim];
        for c in 0..num_out {
            for k in 0..out_dim {
                let bck = b[c * out_dim + k];
                if bck == 0.0 {
                    continue;
                }
                let row = &w[k * in_dim..(k + 1) * in_dim];
                for j in 0..in_dim {
                    prev[c * in_dim + j] += bck * row[j];
                }
            }
        }
        for c in 0..num_out {
            for j in 0..in_dim {
                prev[c * in_dim + j] *= arch.activation.derivative(z_prev[j]);
            }
        }
        bs[l - 1] = prev.clone();
        b = prev;
    }
    bs
}

/// Per-sample weight Jacobian: row `c` is `∇_w f_c(x; w)` over the flat
/// layout, as an `output_dim × d` matrix (one `Vec<f64>` per row).
pub fn per_sample_jacobian(params: &ModelParams, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let trace = forward_trace(params, x)?;
    let arch = &params.arch;
    let num_out = arch.output_dim();
    let d = params.dim();
    let bs = output_sensitivities(params, &trace);
    let mut jac = vec![vec![0.0; d]; num_out];
    for l in 0..arch.num_layers() {
        let (in_dim, out_dim) = arch.layer_shape(l);
        let offset = arch.layer_offset(l);
        let a_prev = &trace.activations[l];
        let b = &bs[l];
        for c in 0..num_out {
            let row = &mut jac[c];
            for k in 0..out_dim {
                let bck = b[c * out_dim + k];
                if bck == 0.0 {
                    continue;
                }
                for j in 0..in_dim {
                    row[offset + k * in_dim + j] = bck * a_prev[j];
                }
                row[offset + in_dim * out_dim + k] = bck;
            }
        }
    }
    Ok(jac)
}
