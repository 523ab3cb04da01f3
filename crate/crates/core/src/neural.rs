//! Small dense networks with explicit reverse-mode gradients, an Adam
//! optimizer and Polyak target blending.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("architectures differ")]
    ArchitectureMismatch,
    #[error("invalid network: {0}")]
    InvalidArchitecture(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("weight file io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// `low + (high - low) * (tanh(z) + 1) / 2`.
    BoundedAffine { low: f64, high: f64 },
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::BoundedAffine { low, high } => low + (high - low) * 0.5 * (z.tanh() + 1.0),
        }
    }

    /// Derivative at pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::BoundedAffine { low, high } => {
                let t = z.tanh();
                (high - low) * 0.5 * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec { inputs, outputs, activation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weights: vec![0.0; spec.inputs * spec.outputs],
            bias: vec![0.0; spec.outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let n = self.spec.inputs;
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| b + self.weights[o * n..(o + 1) * n].iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Per-layer parameter gradients; same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[k]` feeds layer `k`; the last entry is the network output.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }
}

impl MlpNetwork {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        check_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = 1.0 / (spec.inputs as f64).sqrt();
                let mut layer = Layer::zeros(spec);
                for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *w = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(MlpNetwork { layers, seed })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(x)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.affine(activations.last().expect("non-empty"));
            let a = z.iter().map(|&z| layer.spec.activation.apply(z)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(Trace { activations, pre_activations })
    }

    /// Gradients of `<upstream, forward(x)>` with respect to the parameters
    /// and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let LayerSpec { inputs, activation, .. } = layer.spec;
            let z = &trace.pre_activations[k];
            let input = &trace.activations[k];
            for (d, &zo) in delta.iter_mut().zip(z) {
                *d *= activation.derivative(zo);
            }
            let g = &mut grads.layers[k];
            let mut next = vec![0.0; inputs];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * inputs..(o + 1) * inputs];
                let grow = &mut g.weights[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    grow[i] = d * input[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
        }
        Ok((grads, delta))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn same_architecture(&self, other: &MlpNetwork) -> bool {
        self.specs() == other.specs()
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = WeightFile {
            format_version: WEIGHT_FORMAT_VERSION,
            layer_specs: self.specs(),
            parameters: self
                .layers
                .iter()
                .map(|l| LayerParams { weights: l.weights.clone(), bias: l.bias.clone() })
                .collect(),
            seed: self.seed,
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: WeightFile = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        if file.format_version != WEIGHT_FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported format_version {}", file.format_version)));
        }
        check_specs(&file.layer_specs).map_err(|e| NnError::Format(e.to_string()))?;
        if file.parameters.len() != file.layer_specs.len() {
            return Err(NnError::Format("parameter arrays do not match layer count".into()));
        }
        let mut layers = Vec::with_capacity(file.layer_specs.len());
        for (k, (spec, p)) in file.layer_specs.into_iter().zip(file.parameters).enumerate() {
            if p.weights.len() != spec.inputs * spec.outputs || p.bias.len() != spec.outputs {
                return Err(NnError::Format(format!("layer {k} parameter shape mismatch")));
            }
            if !p.weights.iter().chain(&p.bias).all(|v| v.is_finite()) {
                return Err(NnError::Format(format!("layer {k} has non-finite parameters")));
            }
            layers.push(Layer { spec, weights: p.weights, bias: p.bias });
        }
        Ok(MlpNetwork { layers, seed: file.seed })
    }
}

fn check_specs(specs: &[LayerSpec]) -> Result<(), NnError> {
    let bad = |m: String| Err(NnError::InvalidArchitecture(m));
    if specs.is_empty() {
        return bad("no layers".into());
    }
    for (k, s) in specs.iter().enumerate() {
        if s.inputs == 0 || s.outputs == 0 {
            return bad(format!("layer {k} has a zero dimension"));
        }
        if k > 0 && specs[k - 1].outputs != s.inputs {
            return bad(format!("layer {k} input {} does not chain from {}", s.inputs, specs[k - 1].outputs));
        }
        if let Activation::BoundedAffine { low, high } = s.activation {
            if k + 1 != specs.len() {
                return bad("bounded output only allowed on the final layer".into());
            }
            if !(low < high) {
                return bad(format!("bounded output range ({low}, {high}) is empty"));
            }
        }
    }
    Ok(())
}

/// Reads a weight file. With `expected`, the stored architecture must match.
pub fn load_weights(path: impl AsRef<Path>, expected: Option<&[LayerSpec]>) -> Result<MlpNetwork, NnError> {
    let net = MlpNetwork::from_json(&fs::read_to_string(path)?)?;
    if let Some(specs) = expected {
        if net.specs() != specs {
            return Err(NnError::Format("stored architecture differs from the expected one".into()));
        }
    }
    Ok(net)
}

#[derive(Serialize, Deserialize)]
struct LayerParams {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    layer_specs: Vec<LayerSpec>,
    parameters: Vec<LayerParams>,
    seed: u64,
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn adam(net: &MlpNetwork, learning_rate: f64) -> Self {
        let n = net.parameter_count();
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    /// Drops accumulated moments, keeping hyper-parameters.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first.iter_mut().for_each(|m| *m = 0.0);
        self.second.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// One Adam descent step along `g`.
pub fn apply_gradients(net: &mut MlpNetwork, opt: &mut OptimizerState, g: &Gradients) -> Result<(), NnError> {
    if !g.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    let n = net.parameter_count();
    if opt.first.len() != n || g.values().count() != n {
        return Err(NnError::ArchitectureMismatch);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (((p, gv), m), v) in net
        .params_mut()
        .zip(g.values())
        .zip(opt.first.iter_mut())
        .zip(opt.second.iter_mut())
    {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * gv;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * gv * gv;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon);
    }
    Ok(())
}

/// `target <- tau * source + (1 - tau) * target`, parameter-wise.
pub fn soft_update(target: &mut MlpNetwork, source: &MlpNetwork, tau: f64) -> Result<(), NnError> {
    if !target.same_architecture(source) {
        return Err(NnError::ArchitectureMismatch);
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::InvalidArchitecture(format!("tau {tau} outside [0, 1]")));
    }
    for (t, s) in target.params_mut().zip(source.params()) {
        *t = tau * s + (1.0 - tau) * *t;
    }
    Ok(())
}
