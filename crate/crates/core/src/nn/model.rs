//! The four experiment architectures and their forward/backward plumbing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::layers::{BatchNorm, Conv2d, Dense, Flatten, MaxPool2, Mode, NamedTensor, ParamBinding, Relu};
use super::quantum::{Quanv, QuantumDense};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grad::Engine;
use crate::pqc::{quanv_output_dims, QuantumLayerShape};

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Conv block + hybrid dense head with c parallel PQCs.
    HqnnParallel,
    /// Quanvolutional filter + dense classifier.
    HqnnQuanv,
    /// Classical counterpart of the quanv model, 1 output channel.
    Cnn1,
    /// Classical counterpart of the quanv model, 4 output channels.
    Cnn4,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::HqnnParallel => "hqnn-parallel",
            ModelVariant::HqnnQuanv => "hqnn-quanv",
            ModelVariant::Cnn1 => "cnn1",
            ModelVariant::Cnn4 => "cnn4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hqnn-parallel" => Ok(ModelVariant::HqnnParallel),
            "hqnn-quanv" => Ok(ModelVariant::HqnnQuanv),
            "cnn1" => Ok(ModelVariant::Cnn1),
            "cnn4" => Ok(ModelVariant::Cnn4),
            other => Err(Error::Config(format!("unknown model variant '{other}'"))),
        }
    }

    /// The quanv-family models expect 14×14 inputs.
    pub fn wants_downsampled_input(self) -> bool {
        !matches!(self, ModelVariant::HqnnParallel)
    }
}

/// Architecture hyperparameters. `standard` reproduces the reference setups;
/// individual fields can be overridden before building.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub input_hw: (usize, usize),
    pub classes: usize,
    /// Output channels of the two conv blocks (HQNN-Parallel only).
    pub conv_channels: (usize, usize),
    /// Parallel quantum layer shape (HQNN-Parallel only).
    pub quantum: QuantumLayerShape,
    /// Width of the hybrid dense head; must equal q·c. `None` derives it.
    pub features: Option<usize>,
    /// Kernel stride of the quanv/CNN baselines.
    pub stride: usize,
}

impl ModelConfig {
    pub fn standard(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::HqnnParallel => ModelConfig {
                variant,
                input_hw: (28, 28),
                classes: 10,
                conv_channels: (16, 32),
                quantum: QuantumLayerShape { qubits: 5, depth: 3, circuits: 4 },
                features: None,
                stride: 1,
            },
            ModelVariant::HqnnQuanv | ModelVariant::Cnn1 | ModelVariant::Cnn4 => ModelConfig {
                variant,
                input_hw: (14, 14),
                classes: 10,
                conv_channels: (1, 1),
                quantum: QuantumLayerShape { qubits: 4, depth: 1, circuits: 1 },
                features: None,
                stride: 4,
            },
        }
    }

    fn hidden_features(&self) -> Result<usize> {
        let derived = self.quantum.features();
        match self.features {
            None => Ok(derived),
            Some(n) if n == derived => Ok(n),
            Some(n) => Err(Error::Config(format!(
                "dense head width {n} does not equal q·c = {derived}"
            ))),
        }
    }
}

/// One named layer of a model.
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool2(MaxPool2),
    Flatten(Flatten),
    Dense(Dense),
    QuantumDense(QuantumDense),
    Quanv(Quanv),
}

impl Layer {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(input, mode),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::Relu(l) => l.forward(input, mode),
            Layer::MaxPool2(l) => l.forward(input, mode),
            Layer::Flatten(l) => l.forward(input, mode),
            Layer::Dense(l) => l.forward(input, mode),
            Layer::QuantumDense(l) => l.forward(input, mode),
            Layer::Quanv(l) => l.forward(input, mode),
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::MaxPool2(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
            Layer::QuantumDense(l) => l.backward(grad_out),
            Layer::Quanv(l) => l.backward(grad_out),
        }
    }

    fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        match self {
            Layer::Conv2d(l) => l.bindings(prefix),
            Layer::BatchNorm(l) => l.bindings(prefix),
            Layer::Dense(l) => l.bindings(prefix),
            Layer::QuantumDense(l) => l.bindings(prefix),
            Layer::Quanv(l) => l.bindings(prefix),
            _ => Vec::new(),
        }
    }

    fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        match self {
            Layer::Conv2d(l) => l.tensors(prefix),
            Layer::BatchNorm(l) => l.tensors(prefix),
            Layer::Dense(l) => l.tensors(prefix),
            Layer::QuantumDense(l) => l.tensors(prefix),
            Layer::Quanv(l) => l.tensors(prefix),
            _ => Vec::new(),
        }
    }
}

pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

/// A built model: ordered layers plus the config that produced them.
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<NamedLayer>,
}

fn he_uniform(tensor: &mut Tensor, fan_in: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / fan_in as f64).sqrt();
    for v in tensor.data_mut() {
        *v = rng.gen_range(-limit..limit);
    }
}

fn uniform_angles(tensor: &mut Tensor, rng: &mut ChaCha8Rng) {
    for v in tensor.data_mut() {
        *v = rng.gen_range(0.0..2.0 * PI);
    }
}

/// Builds and initializes one of the four architectures. Classical weights
/// use fan-in-scaled uniform init, quantum angles are uniform in [0, 2π),
/// both drawn from a ChaCha stream seeded with `seed`.
pub fn build_model(config: &ModelConfig, seed: u64, engine: Engine) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = config.input_hw;
    let mut layers = Vec::new();
    let push = |name: &str, layer: Layer, layers: &mut Vec<NamedLayer>| {
        layers.push(NamedLayer { name: name.to_string(), layer });
    };

    match config.variant {
        ModelVariant::HqnnParallel => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::Config(format!(
                    "input {h}×{w} must be divisible by 4 (two 2×2 poolings)"
                )));
            }
            let (c1, c2) = config.conv_channels;
            let n = config.hidden_features()?;
            let flat = c2 * (h / 4) * (w / 4);

            let mut conv1 = Conv2d::new(1, c1, 5, 1, 2, true);
            he_uniform(&mut conv1.weight, 25, &mut rng);
            push("conv1", Layer::Conv2d(conv1), &mut layers);
            push("bn1", Layer::BatchNorm(BatchNorm::new(c1)), &mut layers);
            push("relu1", Layer::Relu(Relu::new()), &mut layers);
            push("pool1", Layer::MaxPool2(MaxPool2::new()), &mut layers);

            let mut conv2 = Conv2d::new(c1, c2, 5, 1, 2, true);
            he_uniform(&mut conv2.weight, c1 * 25, &mut rng);
            push("conv2", Layer::Conv2d(conv2), &mut layers);
            push("bn2", Layer::BatchNorm(BatchNorm::new(c2)), &mut layers);
            push("relu2", Layer::Relu(Relu::new()), &mut layers);
            push("pool2", Layer::MaxPool2(MaxPool2::new()), &mut layers);

            push("flatten", Layer::Flatten(Flatten::new()), &mut layers);
            let mut dense1 = Dense::new(flat, n);
            he_uniform(&mut dense1.weight, flat, &mut rng);
            push("dense1", Layer::Dense(dense1), &mut layers);
            push("bn3", Layer::BatchNorm(BatchNorm::new(n)), &mut layers);
            push("relu3", Layer::Relu(Relu::new()), &mut layers);

            let mut quantum = QuantumDense::new(config.quantum, engine);
            uniform_angles(&mut quantum.theta, &mut rng);
            push("quantum", Layer::QuantumDense(quantum), &mut layers);
            push("bn4", Layer::BatchNorm(BatchNorm::new(n)), &mut layers);
            push("relu4", Layer::Relu(Relu::new()), &mut layers);

            let mut dense2 = Dense::new(n, config.classes);
            he_uniform(&mut dense2.weight, n, &mut rng);
            push("dense2", Layer::Dense(dense2), &mut layers);
        }
        ModelVariant::HqnnQuanv => {
            let (oh, ow) = quanv_output_dims(h, w, config.stride);
            let mut quanv = Quanv::new(config.stride, engine);
            uniform_angles(&mut quanv.theta, &mut rng);
            push("quanv", Layer::Quanv(quanv), &mut layers);
            push("flatten", Layer::Flatten(Flatten::new()), &mut layers);
            let mut dense = Dense::new(4 * oh * ow, config.classes);
            he_uniform(&mut dense.weight, 4 * oh * ow, &mut rng);
            push("dense", Layer::Dense(dense), &mut layers);
        }
        ModelVariant::Cnn1 | ModelVariant::Cnn4 => {
            let channels = if config.variant == ModelVariant::Cnn1 { 1 } else { 4 };
            // No conv bias: kernel weight counts stay comparable to the
            // 4-angle quanv kernel.
            let mut conv = Conv2d::new(1, channels, 2, config.stride, 0, false);
            he_uniform(&mut conv.weight, 4, &mut rng);
            let (oh, ow) = conv.output_hw(h, w)?;
            push("conv", Layer::Conv2d(conv), &mut layers);
            push("flatten", Layer::Flatten(Flatten::new()), &mut layers);
            let mut dense = Dense::new(channels * oh * ow, config.classes);
            he_uniform(&mut dense.weight, channels * oh * ow, &mut rng);
            push("dense", Layer::Dense(dense), &mut layers);
        }
    }
    Ok(Model { config: *config, layers })
}

impl Model {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for named in &mut self.layers {
            x = named.layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Forward pass that records the output shape of every layer.
    pub fn forward_shapes(&mut self, input: &Tensor) -> Result<Vec<(String, Vec<usize>)>> {
        let mut x = input.clone();
        let mut shapes = Vec::new();
        for named in &mut self.layers {
            x = named.layer.forward(&x, Mode::Eval)?;
            shapes.push((named.name.clone(), x.shape().to_vec()));
        }
        Ok(shapes)
    }

    /// Propagates the loss cotangent back through all layers, accumulating
    /// parameter gradients. Returns the input cotangent.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for named in self.layers.iter_mut().rev() {
            g = named.layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for binding in self.bindings() {
            binding.grad.fill(0.0);
        }
    }

    /// Mutable (parameter, gradient) pairs for the optimizer, in layer order.
    pub fn bindings(&mut self) -> Vec<ParamBinding<'_>> {
        self.layers
            .iter_mut()
            .flat_map(|named| named.layer.bindings(&named.name))
            .collect()
    }

    /// All named tensors (trainable parameters and buffers), in layer order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        self.layers
            .iter()
            .flat_map(|named| named.layer.tensors(&named.name))
            .collect()
    }

    /// Looks up a tensor by its qualified name for checkpoint restore.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (layer_name, _) = name.split_once('.')?;
        let named = self.layers.iter_mut().find(|l| l.name == layer_name)?;
        match &mut named.layer {
            Layer::Conv2d(l) => match name.rsplit_once('.')?.1 {
                "weight" => Some(&mut l.weight),
                "bias" => l.bias.as_mut(),
                _ => None,
            },
            Layer::BatchNorm(l) => match name.rsplit_once('.')?.1 {
                "gamma" => Some(&mut l.gamma),
                "beta" => Some(&mut l.beta),
                "running_mean" => Some(&mut l.running_mean),
                "running_var" => Some(&mut l.running_var),
                _ => None,
            },
            Layer::Dense(l) => match name.rsplit_once('.')?.1 {
                "weight" => Some(&mut l.weight),
                "bias" => Some(&mut l.bias),
                _ => None,
            },
            Layer::QuantumDense(l) => (name.rsplit_once('.')?.1 == "theta").then_some(&mut l.theta),
            Layer::Quanv(l) => (name.rsplit_once('.')?.1 == "theta").then_some(&mut l.theta),
            _ => None,
        }
    }

    pub fn set_engine(&mut self, engine: Engine) {
        for named in &mut self.layers {
            match &mut named.layer {
                Layer::QuantumDense(l) => l.engine = engine,
                Layer::Quanv(l) => l.engine = engine,
                _ => {}
            }
        }
    }
}

/// Per-layer trainable parameter counts.
#[derive(Debug, Clone)]
pub struct ParamCount {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

/// Sums trainable tensors per layer; batch-norm running stats are buffers
/// and do not count.
pub fn count_parameters(model: &Model) -> ParamCount {
    let mut rows = Vec::new();
    let mut total = 0;
    for named in &model.layers {
        let count: usize = named
            .layer
            .tensors(&named.name)
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.value.len())
            .sum();
        if count > 0 {
            rows.push((named.name.clone(), count));
            total += count;
        }
    }
    ParamCount { rows, total }
}
