//! Per-modality backbones and the shared cross-modal encoder.
//!
//! Each modality `j` has its own multilayer perceptron mapping raw features
//! `x` to modal-specific features `y` of width `feature_dim`. A single affine
//! encoder, shared by every modality, maps any `y` to an embedding `z` of
//! width `embedding_dim`. Retrieval only ever needs [`ModelParams::embed`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::config::{join_list, KvConfig, KvMap};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}` (tanh|relu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Raw feature width of each modality; its length is the modality count.
    pub input_dims: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dims: vec![32, 32],
            hidden_dims: vec![64],
            feature_dim: 64,
            embedding_dim: 128,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    /// `(fan_in, fan_out)` of every backbone layer of modality `j`.
    fn backbone_layout(&self, j: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dims[j]];
        widths.extend(&self.hidden_dims);
        widths.push(self.feature_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

impl KvConfig for ModelConfig {
    fn apply(&mut self, kv: &mut KvMap) -> Result<()> {
        kv.take_list("input_dims", &mut self.input_dims)?;
        kv.take_list("hidden_dims", &mut self.hidden_dims)?;
        kv.take("feature_dim", &mut self.feature_dim)?;
        kv.take("embedding_dim", &mut self.embedding_dim)?;
        kv.take("activation", &mut self.activation)?;
        kv.take("seed", &mut self.seed)?;
        Ok(())
    }

    fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("input_dims", join_list(&self.input_dims));
        kv.insert("hidden_dims", join_list(&self.hidden_dims));
        kv.insert("feature_dim", self.feature_dim);
        kv.insert("embedding_dim", self.embedding_dim);
        kv.insert("activation", self.activation);
        kv.insert("seed", self.seed);
        kv
    }

    fn validate(&self) -> Result<()> {
        if self.input_dims.len() < 2 {
            return Err(Error::config("input_dims", "need at least two modalities"));
        }
        if self.input_dims.contains(&0) {
            return Err(Error::config("input_dims", "dimensions must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden_dims", "dimensions must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim", "must be positive"));
        }
        Ok(())
    }
}

/// Affine layer `x W + b` with `W: fan_in x fan_out`, `b: 1 x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = glorot_bound(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
        let w = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::from_parts_unchecked(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

fn affine(tape: &mut Tape, vars: LinearVars, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, vars.weight)?;
    tape.add_bias(xw, vars.bias)
}

/// Half-width of the uniform initialization range, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    backbones: Vec<Vec<Linear>>,
    encoder: Linear,
}

#[derive(Debug, Clone, Copy)]
struct LinearVars {
    weight: Var,
    bias: Var,
}

/// Parameters registered on a [`Tape`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    activation: Activation,
    backbones: Vec<Vec<LinearVars>>,
    encoder: LinearVars,
    input_dims: Vec<usize>,
    feature_dim: usize,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let backbones = (0..config.num_modalities())
            .map(|j| {
                config
                    .backbone_layout(j)
                    .into_iter()
                    .map(|(i, o)| Linear::glorot(i, o, &mut rng))
                    .collect()
            })
            .collect();
        let encoder = Linear::glorot(config.feature_dim, config.embedding_dim, &mut rng);
        Ok(Self {
            config: config.clone(),
            backbones,
            encoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self, j: usize) -> &[Linear] {
        &self.backbones[j]
    }

    pub fn encoder(&self) -> &Linear {
        &self.encoder
    }

    /// Every parameter tensor in canonical order: each backbone's layers
    /// (weight then bias), modality by modality, then the encoder.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, layers) in self.backbones.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                out.push((format!("backbone.{j}.{l}.weight"), &layer.weight));
                out.push((format!("backbone.{j}.{l}.bias"), &layer.bias));
            }
        }
        out.push(("encoder.weight".into(), &self.encoder.weight));
        out.push(("encoder.bias".into(), &self.encoder.bias));
        out
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.backbones
            .iter()
            .flatten()
            .chain(std::iter::once(&self.encoder))
    }

    /// Rebuilds parameters from tensors in [`tensors`](Self::tensors) order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let template = Self::init(config)?;
        let expected: Vec<Vec<usize>> = template
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (t, shape)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "parameter {i}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Validation(format!("parameter {i} is not finite")));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || Linear {
            weight: it.next().expect("count checked"),
            bias: it.next().expect("count checked"),
        };
        let backbones = template
            .backbones
            .iter()
            .map(|layers| layers.iter().map(|_| next()).collect())
            .collect();
        let encoder = next();
        Ok(Self {
            config: config.clone(),
            backbones,
            encoder,
        })
    }

    /// Same layout with every tensor replaced.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        Self::from_tensors(&self.config, tensors)
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        let mut bind = |l: &Linear| LinearVars {
            weight: tape.leaf(l.weight.clone(), requires_grad),
            bias: tape.leaf(l.bias.clone(), requires_grad),
        };
        let backbones = self
            .backbones
            .iter()
            .map(|layers| layers.iter().map(&mut bind).collect())
            .collect();
        let encoder = bind(&self.encoder);
        BoundParams {
            activation: self.config.activation,
            backbones,
            encoder,
            input_dims: self.config.input_dims.clone(),
            feature_dim: self.config.feature_dim,
        }
    }

    /// This layout over vars already on a tape, given in
    /// [`tensors`](Self::tensors) order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams> {
        let expected = 2 * self.layers().count();
        if vars.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} parameter vars, got {}",
                vars.len()
            )));
        }
        let mut it = vars.chunks(2).map(|p| LinearVars {
            weight: p[0],
            bias: p[1],
        });
        let backbones = self
            .backbones
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|_| it.next().expect("count checked"))
                    .collect()
            })
            .collect();
        let encoder = it.next().expect("count checked");
        Ok(BoundParams {
            activation: self.config.activation,
            backbones,
            encoder,
            input_dims: self.config.input_dims.clone(),
            feature_dim: self.config.feature_dim,
        })
    }

    /// Modal-specific features `y` for a `batch x input_dim` matrix.
    pub fn forward_backbone(&self, modality: usize, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = bound.backbone(&mut tape, modality, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward_encoder(&self, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let z = bound.encoder(&mut tape, yv)?;
        Ok(tape.value(z).clone())
    }

    /// Cross-modal embeddings `z` for a batch of raw features.
    pub fn embed(&self, modality: usize, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_backbone(modality, x)?;
        self.forward_encoder(&y)
    }
}

impl BoundParams {
    pub fn num_modalities(&self) -> usize {
        self.backbones.len()
    }

    /// Parameter vars in [`ModelParams::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.backbones
            .iter()
            .flatten()
            .chain(std::iter::once(&self.encoder))
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn encoder_vars(&self) -> [Var; 2] {
        [self.encoder.weight, self.encoder.bias]
    }

    pub fn backbone_vars(&self, modality: usize) -> Vec<Var> {
        self.backbones[modality]
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn backbone(&self, tape: &mut Tape, modality: usize, x: Var) -> Result<Var> {
        let layers = self.backbones.get(modality).ok_or_else(|| {
            Error::Index(format!("modality {modality} of {}", self.backbones.len()))
        })?;
        let width = tape.value(x).shape().get(1).copied();
        if tape.value(x).shape().len() != 2 || width != Some(self.input_dims[modality]) {
            return Err(Error::dim(
                "forward_backbone",
                format!(
                    "input shape {:?}, expected batch x {}",
                    tape.value(x).shape(),
                    self.input_dims[modality]
                ),
            ));
        }
        let last = layers.len() - 1;
        let mut h = x;
        for (l, vars) in layers.iter().enumerate() {
            h = affine(tape, *vars, h)?;
            if l < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }

    pub fn encoder(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let shape = tape.value(y).shape();
        if shape.len() != 2 || shape[1] != self.feature_dim {
            return Err(Error::dim(
                "forward_encoder",
                format!(
                    "input shape {shape:?}, expected batch x {}",
                    self.feature_dim
                ),
            ));
        }
        affine(tape, self.encoder, y)
    }
}
