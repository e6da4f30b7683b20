//! Trainable feature extractor: a small dense network with explicit
//! forward/backward passes, an SGD-with-momentum optimizer and frozen
//! snapshots used as distillation teachers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectifier,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Embedding of one input: a point in the m-dimensional feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One dense layer. Weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row-major weight matrix `(out_dim, in_dim)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.bias
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward_into(&self, input: &[f64], z_out: &mut Vec<f64>, out: &mut Vec<f64>) {
        z_out.clear();
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut z = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            z_out.push(z);
            out.push(self.activation.apply(z));
        }
    }
}

/// Feed-forward embedding network: affine layers with rectifier hidden
/// activations and an identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNetwork {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations recorded by [`EmbeddingNetwork::forward_with_cache`]
/// for use in the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Vec<f64>>,
    /// Post-activation outputs per layer.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn num_layers(&self) -> usize {
        self.pre_activations.len()
    }
}

/// Gradients for every weight and bias of a network, shape-matching its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl ParamGradients {
    pub fn zeros_like(net: &EmbeddingNetwork) -> Self {
        ParamGradients {
            d_weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            d_biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.d_weights {
            for v in w.iter_mut() {
                *v *= c;
            }
        }
        for b in &mut self.d_biases {
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }

    fn shape_matches(&self, net: &EmbeddingNetwork) -> bool {
        self.d_weights.len() == net.layers.len()
            && self.d_biases.len() == net.layers.len()
            && net
                .layers
                .iter()
                .zip(&self.d_weights)
                .zip(&self.d_biases)
                .all(|((l, w), b)| w.len() == l.weights.len() && b.len() == l.bias.len())
    }
}

impl EmbeddingNetwork {
    /// Builds a network `input_dim -> hidden[0] -> ... -> output_dim` with
    /// rectifier hidden layers and an identity output layer. Weights are
    /// initialized uniformly in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| (rng.next_f64() * 2.0 - 1.0) * bound)
                .collect();
            let activation = if i + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Rectifier
            };
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; fan_out],
                in_dim: fan_in,
                out_dim: fan_out,
                activation,
            });
        }
        Ok(EmbeddingNetwork { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Checks structural integrity after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("network has no layers".into()));
        }
        let mut prev_out = self.layers[0].in_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != prev_out {
                return Err(Error::Schema(format!(
                    "layer {i} input dim {} does not chain with previous output {prev_out}",
                    l.in_dim
                )));
            }
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Schema(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Schema(format!(
                    "layer {i} parameter shapes are wrong"
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            prev_out = l.out_dim;
        }
        if self.layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::Schema(
                "last layer activation must be identity".into(),
            ));
        }
        Ok(())
    }

    /// Applies the composed affine+activation pipeline to `x`.
    pub fn forward(&self, x: &[f64]) -> Result<FeatureVector> {
        let (feature, _) = self.forward_with_cache(x)?;
        Ok(feature)
    }

    /// Forward pass that also records per-layer inputs and pre-activations
    /// for the backward pass.
    pub fn forward_with_cache(&self, x: &[f64]) -> Result<(FeatureVector, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current: &[f64] = x;
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(current, &mut z, &mut out);
            pre_activations.push(z);
            outputs.push(out);
            current = outputs.last().unwrap();
        }
        let feature = outputs.last().unwrap().clone();
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network forward pass".into()));
        }
        Ok((
            FeatureVector(feature),
            ForwardCache {
                input: x.to_vec(),
                pre_activations,
                outputs,
            },
        ))
    }

    /// Backpropagates `grad_out` (gradient of a scalar loss with respect to
    /// the network output) through the cached activations, returning fresh
    /// parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<ParamGradients> {
        let mut grads = ParamGradients::zeros_like(self);
        self.backward_accumulate(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`EmbeddingNetwork::backward`] but accumulates into `grads`,
    /// for mini-batch loops.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut ParamGradients,
    ) -> Result<()> {
        if cache.pre_activations.len() != self.layers.len()
            || cache.input.len() != self.input_dim()
            || cache
                .pre_activations
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.len() != l.out_dim)
        {
            return Err(Error::StaleCache(
                "cache shape does not match the network".into(),
            ));
        }
        if grad_out.len() != self.output_dim() {
            return Err(Error::InputShape {
                expected: self.output_dim(),
                got: grad_out.len(),
            });
        }
        if !grads.shape_matches(self) {
            return Err(Error::StaleCache(
                "gradient buffers do not match the network".into(),
            ));
        }

        let mut upstream = grad_out.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let z = &cache.pre_activations[idx];
            let input: &[f64] = if idx == 0 {
                &cache.input
            } else {
                &cache.outputs[idx - 1]
            };

            // dz = upstream ⊙ act'(z)
            let dz: Vec<f64> = upstream
                .iter()
                .zip(z)
                .map(|(g, &zv)| g * layer.activation.grad(zv))
                .collect();

            let dw = &mut grads.d_weights[idx];
            for (r, &dzr) in dz.iter().enumerate() {
                let row = &mut dw[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += dzr * x;
                }
            }
            for (b, &dzr) in grads.d_biases[idx].iter_mut().zip(&dz) {
                *b += dzr;
            }

            if idx > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (r, &dzr) in dz.iter().enumerate() {
                    let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += dzr * w;
                    }
                }
                upstream = prev;
            }
        }
        Ok(())
    }

    /// Frozen deep copy of the current parameters.
    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot { net: self.clone() }
    }
}

/// Immutable copy of a network taken before an incremental step; serves as
/// the distillation teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    net: EmbeddingNetwork,
}

impl NetworkSnapshot {
    pub fn forward(&self, x: &[f64]) -> Result<FeatureVector> {
        self.net.forward(x)
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn architecture_matches(&self, other: &EmbeddingNetwork) -> bool {
        self.net.layers.len() == other.layers.len()
            && self.net.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation
            })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-5,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// SGD with momentum and coupled weight decay. Velocity buffers persist
/// across calls to [`SgdOptimizer::step`].
///
/// Update rule: `v <- momentum*v + (grad + weight_decay*param)`,
/// `param <- param - learning_rate*v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    cfg: SgdConfig,
    velocity: Option<ParamGradients>,
}

impl SgdOptimizer {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SgdOptimizer {
            cfg,
            velocity: None,
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn step(&mut self, net: &mut EmbeddingNetwork, grads: &ParamGradients) -> Result<()> {
        if !grads.shape_matches(net) {
            return Err(Error::StaleCache(
                "gradients do not match the network".into(),
            ));
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| ParamGradients::zeros_like(net));
        if !velocity.shape_matches(net) {
            return Err(Error::StaleCache(
                "optimizer state does not match the network".into(),
            ));
        }

        let m = self.cfg.momentum;
        let wd = self.cfg.weight_decay;
        let lr = self.cfg.learning_rate;
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            for (i, w) in layer.weights.iter_mut().enumerate() {
                let v = &mut velocity.d_weights[idx][i];
                *v = m * *v + (grads.d_weights[idx][i] + wd * *w);
                *w -= lr * *v;
                if !w.is_finite() {
                    return Err(Error::NonFinite("sgd weight update".into()));
                }
            }
            for (i, b) in layer.bias.iter_mut().enumerate() {
                let v = &mut velocity.d_biases[idx][i];
                *v = m * *v + (grads.d_biases[idx][i] + wd * *b);
                *b -= lr * *v;
                if !b.is_finite() {
                    return Err(Error::NonFinite("sgd bias update".into()));
                }
            }
        }
        Ok(())
    }
}
