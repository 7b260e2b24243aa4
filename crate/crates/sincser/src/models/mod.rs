//! Model composition: acoustic variants, the linguistic stack, and gated
//! feature fusion.
//!
//! Three acoustic variants share one downstream recipe (first layer →
//! batch norm → LeakyReLU → max pool → DNN or LSTM → feature dense):
//!
//! - `cnn`: free-form first-layer kernels, `F * L` learnable scalars;
//! - `sinc_dnn` / `sinc_lstm`: sinc band-pass kernels, `2F` scalars.
//!
//! The linguistic stack is embedding → LSTM → attention pooling → feature
//! dense. Fusion gates each modality's feature vector with a sigmoid of a
//! learned linear map of itself, concatenates, and classifies.

pub mod backprop;
pub mod checkpoint;

pub use backprop::{batch_forward_backward, BatchOutput, TrainExample};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmotionClass, NUM_CLASSES};
use crate::dsp::{mel_spaced_init, hamming_window, SincBank, SincFilterParams};
use crate::error::{Error, Result};
use crate::layers::{
    conv1d, conv_frames, leaky_relu, max_pool, sinc_conv, softmax, BatchNorm, Dense, Embedding,
    LstmCell, Mode, Param, SelfAttention,
};
use crate::layers::init_uniform;
use crate::tensor::Tensor;

/// A probability vector over the four classes (happy, neutral, angry, sad).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Posterior(pub [f64; 4]);

impl Posterior {
    pub fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        Posterior([p[0], p[1], p[2], p[3]])
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "not a probability vector: {:?}",
                self.0
            )));
        }
        Ok(())
    }

    /// Argmax with ties broken toward the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..4 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Class index of the most probable emotion, ties to the lowest index.
pub fn predict(posterior: &Posterior) -> usize {
    posterior.argmax()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcousticVariant {
    Cnn,
    SincDnn,
    SincLstm,
}

impl AcousticVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Self::Cnn),
            "sinc_dnn" => Ok(Self::SincDnn),
            "sinc_lstm" => Ok(Self::SincLstm),
            other => Err(Error::Config(format!(
                "unknown acoustic variant `{other}`, expected cnn | sinc_dnn | sinc_lstm"
            ))),
        }
    }

    pub fn is_sinc(self) -> bool {
        matches!(self, Self::SincDnn | Self::SincLstm)
    }

    pub fn uses_lstm(self) -> bool {
        matches!(self, Self::SincLstm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Acoustic,
    Linguistic,
    Fused,
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub acoustic_variant: AcousticVariant,
    pub num_filters: usize,
    pub kernel_length: usize,
    pub stride: usize,
    pub pool_width: usize,
    /// Hidden width of the DNN tail (cnn / sinc_dnn variants).
    pub dnn_hidden: usize,
    /// Hidden width of the LSTM tail (sinc_lstm variant).
    pub acoustic_lstm_hidden: usize,
    pub acoustic_vec_dim: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub linguistic_lstm_hidden: usize,
    pub attention_key_dim: usize,
    pub linguistic_vec_dim: usize,
    pub num_classes: usize,
    pub chunk_samples: usize,
    pub sample_rate: f64,
    pub max_seq_len: usize,
    /// Learning-rate multiplier for the sinc cutoff parameters, which live
    /// in Hz units rather than unit scale.
    pub cutoff_lr_scale: f64,
}

impl ModelConfig {
    /// Small dimensions that train in seconds on synthetic data.
    pub fn desk_default() -> Self {
        Self {
            kind: ModelKind::Acoustic,
            acoustic_variant: AcousticVariant::SincLstm,
            num_filters: 8,
            kernel_length: 251,
            stride: 32,
            pool_width: 4,
            dnn_hidden: 64,
            acoustic_lstm_hidden: 32,
            acoustic_vec_dim: 64,
            vocab_size: 4096,
            embedding_dim: 24,
            linguistic_lstm_hidden: 48,
            attention_key_dim: 24,
            linguistic_vec_dim: 96,
            num_classes: 4,
            chunk_samples: 4000,
            sample_rate: 16_000.0,
            max_seq_len: 64,
            cutoff_lr_scale: 4000.0,
        }
    }

    /// The published fusion geometry: 2048-D acoustic and 4800-D
    /// linguistic features, 80 filters. Kept as a named preset; far too
    /// large to train at desk scale.
    pub fn paper_scale() -> Self {
        Self {
            kind: ModelKind::Fused,
            num_filters: 80,
            dnn_hidden: 1024,
            acoustic_lstm_hidden: 512,
            acoustic_vec_dim: 2048,
            embedding_dim: 128,
            linguistic_lstm_hidden: 600,
            attention_key_dim: 128,
            linguistic_vec_dim: 4800,
            ..Self::desk_default()
        }
    }

    /// Width of the fusion head input: the gated feature vectors
    /// concatenated.
    pub fn fusion_input_dim(&self) -> usize {
        self.acoustic_vec_dim + self.linguistic_vec_dim
    }

    pub fn frames(&self) -> usize {
        conv_frames(self.chunk_samples, self.kernel_length, self.stride)
    }

    pub fn pooled_frames(&self) -> usize {
        self.frames() / self.pool_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.kernel_length % 2 == 0 {
            return Err(Error::Config("kernel_length must be odd".into()));
        }
        if self.chunk_samples < self.kernel_length {
            return Err(Error::Config(format!(
                "chunk of {} samples is shorter than the kernel ({})",
                self.chunk_samples, self.kernel_length
            )));
        }
        if self.pooled_frames() == 0 {
            return Err(Error::Config("no frames left after pooling".into()));
        }
        for (name, v) in [
            ("num_filters", self.num_filters),
            ("stride", self.stride),
            ("pool_width", self.pool_width),
            ("dnn_hidden", self.dnn_hidden),
            ("acoustic_lstm_hidden", self.acoustic_lstm_hidden),
            ("acoustic_vec_dim", self.acoustic_vec_dim),
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("linguistic_lstm_hidden", self.linguistic_lstm_hidden),
            ("attention_key_dim", self.attention_key_dim),
            ("linguistic_vec_dim", self.linguistic_vec_dim),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// First layer of the acoustic branch.
#[derive(Debug, Clone)]
pub enum AcousticFront {
    Sinc(SincLayer),
    Conv(ConvLayer),
}

/// Learnable sinc bank: two raw parameters per filter.
#[derive(Debug, Clone)]
pub struct SincLayer {
    pub theta1: Param,
    pub theta2: Param,
    pub window: Vec<f64>,
    pub sample_rate: f64,
    pub kernel_length: usize,
}

impl SincLayer {
    /// The current bank, materializable into kernels.
    pub fn bank(&self) -> SincBank {
        let filters: Vec<SincFilterParams> = self
            .theta1
            .value
            .data()
            .iter()
            .zip(self.theta2.value.data())
            .map(|(&t1, &t2)| SincFilterParams::new(t1, t2, self.sample_rate, self.kernel_length))
            .collect();
        SincBank::new(filters, self.window.clone()).expect("geometry fixed at construction")
    }

    /// Constrained `(f1, f2)` pairs in Hz for every filter.
    pub fn cutoffs(&self) -> Vec<(f64, f64)> {
        self.bank().filters.iter().map(|p| p.cutoffs()).collect()
    }
}

/// Free-form first-layer kernels (no bias; batch norm follows anyway).
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weights: Param,
}

/// Everything after pooling in the acoustic branch.
#[derive(Debug, Clone)]
pub enum AcousticTail {
    Dnn { fc1: Dense, fc2: Dense },
    Lstm { cell: LstmCell, fc: Dense },
}

#[derive(Debug, Clone)]
pub struct AcousticNet {
    pub front: AcousticFront,
    pub bn: BatchNorm,
    pub tail: AcousticTail,
    pub head: Dense,
    pub stride: usize,
    pub pool_width: usize,
}

#[derive(Debug, Clone)]
pub struct LinguisticNet {
    pub embedding: Embedding,
    pub cell: LstmCell,
    pub attention: SelfAttention,
    pub fc: Dense,
    pub head: Dense,
    pub max_seq_len: usize,
}

#[derive(Debug, Clone)]
pub struct FusionHead {
    pub gate_a: Dense,
    pub gate_l: Dense,
    pub head: Dense,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub acoustic: Option<AcousticNet>,
    pub linguistic: Option<LinguisticNet>,
    pub fusion: Option<FusionHead>,
}

/// Builds a model with deterministic parameter initialization: the same
/// config and seed give bitwise-identical parameters. Sinc variants start
/// from the mel-spaced grid.
pub fn build_model(config: &ModelConfig, rng_seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let wants_acoustic = matches!(config.kind, ModelKind::Acoustic | ModelKind::Fused);
    let wants_linguistic = matches!(config.kind, ModelKind::Linguistic | ModelKind::Fused);

    let acoustic = if wants_acoustic {
        let front = if config.acoustic_variant.is_sinc() {
            let init = mel_spaced_init(config.num_filters, config.sample_rate)?;
            let t1: Vec<f64> = init.iter().map(|p| p.theta1).collect();
            let t2: Vec<f64> = init.iter().map(|p| p.theta2).collect();
            AcousticFront::Sinc(SincLayer {
                theta1: Param::with_lr_scale(Tensor::from_vec(t1), config.cutoff_lr_scale),
                theta2: Param::with_lr_scale(Tensor::from_vec(t2), config.cutoff_lr_scale),
                window: hamming_window(config.kernel_length),
                sample_rate: config.sample_rate,
                kernel_length: config.kernel_length,
            })
        } else {
            AcousticFront::Conv(ConvLayer {
                weights: Param::new(init_uniform(
                    &[config.num_filters, config.kernel_length],
                    config.kernel_length,
                    &mut rng,
                )),
            })
        };
        let bn = BatchNorm::new(config.num_filters);
        let tail = if config.acoustic_variant.uses_lstm() {
            let cell = LstmCell::new(config.num_filters, config.acoustic_lstm_hidden, &mut rng);
            let fc = Dense::new(config.acoustic_lstm_hidden, config.acoustic_vec_dim, &mut rng);
            AcousticTail::Lstm { cell, fc }
        } else {
            let flat = config.num_filters * config.pooled_frames();
            let fc1 = Dense::new(flat, config.dnn_hidden, &mut rng);
            let fc2 = Dense::new(config.dnn_hidden, config.acoustic_vec_dim, &mut rng);
            AcousticTail::Dnn { fc1, fc2 }
        };
        let head = Dense::new(config.acoustic_vec_dim, config.num_classes, &mut rng);
        Some(AcousticNet {
            front,
            bn,
            tail,
            head,
            stride: config.stride,
            pool_width: config.pool_width,
        })
    } else {
        None
    };

    let linguistic = if wants_linguistic {
        let embedding = Embedding::new(config.vocab_size, config.embedding_dim, &mut rng);
        let cell = LstmCell::new(config.embedding_dim, config.linguistic_lstm_hidden, &mut rng);
        let attention = SelfAttention::new(
            config.linguistic_lstm_hidden,
            config.attention_key_dim,
            config.linguistic_lstm_hidden,
            &mut rng,
        );
        let fc = Dense::new(config.linguistic_lstm_hidden, config.linguistic_vec_dim, &mut rng);
        let head = Dense::new(config.linguistic_vec_dim, config.num_classes, &mut rng);
        Some(LinguisticNet {
            embedding,
            cell,
            attention,
            fc,
            head,
            max_seq_len: config.max_seq_len,
        })
    } else {
        None
    };

    let fusion = if config.kind == ModelKind::Fused {
        Some(FusionHead {
            gate_a: Dense::new(config.acoustic_vec_dim, config.acoustic_vec_dim, &mut rng),
            gate_l: Dense::new(config.linguistic_vec_dim, config.linguistic_vec_dim, &mut rng),
            head: Dense::new(config.fusion_input_dim(), config.num_classes, &mut rng),
        })
    } else {
        None
    };

    Ok(Model {
        config: config.clone(),
        acoustic,
        linguistic,
        fusion,
    })
}

impl Model {
    /// Visits every learnable parameter in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(a) = &mut self.acoustic {
            match &mut a.front {
                AcousticFront::Sinc(s) => {
                    f("acoustic.sinc.theta1", &mut s.theta1);
                    f("acoustic.sinc.theta2", &mut s.theta2);
                }
                AcousticFront::Conv(c) => f("acoustic.conv.weights", &mut c.weights),
            }
            f("acoustic.bn.gamma", &mut a.bn.gamma);
            f("acoustic.bn.beta", &mut a.bn.beta);
            match &mut a.tail {
                AcousticTail::Dnn { fc1, fc2 } => {
                    f("acoustic.dnn.fc1.w", &mut fc1.w);
                    f("acoustic.dnn.fc1.b", &mut fc1.b);
                    f("acoustic.dnn.fc2.w", &mut fc2.w);
                    f("acoustic.dnn.fc2.b", &mut fc2.b);
                }
                AcousticTail::Lstm { cell, fc } => {
                    f("acoustic.lstm.w_x", &mut cell.w_x);
                    f("acoustic.lstm.w_h", &mut cell.w_h);
                    f("acoustic.lstm.b", &mut cell.b);
                    f("acoustic.fc.w", &mut fc.w);
                    f("acoustic.fc.b", &mut fc.b);
                }
            }
            f("acoustic.head.w", &mut a.head.w);
            f("acoustic.head.b", &mut a.head.b);
        }
        if let Some(l) = &mut self.linguistic {
            f("linguistic.embedding.table", &mut l.embedding.table);
            f("linguistic.lstm.w_x", &mut l.cell.w_x);
            f("linguistic.lstm.w_h", &mut l.cell.w_h);
            f("linguistic.lstm.b", &mut l.cell.b);
            f("linguistic.attention.w_k", &mut l.attention.w_k);
            f("linguistic.attention.w_v", &mut l.attention.w_v);
            f("linguistic.attention.query", &mut l.attention.query);
            f("linguistic.fc.w", &mut l.fc.w);
            f("linguistic.fc.b", &mut l.fc.b);
            f("linguistic.head.w", &mut l.head.w);
            f("linguistic.head.b", &mut l.head.b);
        }
        if let Some(fu) = &mut self.fusion {
            f("fusion.gate_a.w", &mut fu.gate_a.w);
            f("fusion.gate_a.b", &mut fu.gate_a.b);
            f("fusion.gate_l.w", &mut fu.gate_l.w);
            f("fusion.gate_l.b", &mut fu.gate_l.b);
            f("fusion.head.w", &mut fu.head.w);
            f("fusion.head.b", &mut fu.head.b);
        }
    }

    /// Visits non-learnable state (batch-norm running statistics).
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        if let Some(a) = &mut self.acoustic {
            f("acoustic.bn.running_mean", &mut a.bn.running_mean);
            f("acoustic.bn.running_var", &mut a.bn.running_var);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Total learnable scalar count.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    /// Learnable scalars in the first acoustic layer: `2F` for sinc
    /// variants, `F * L` for the conv baseline.
    pub fn first_layer_param_count(&self) -> usize {
        match &self.acoustic {
            Some(a) => match &a.front {
                AcousticFront::Sinc(s) => s.theta1.value.len() + s.theta2.value.len(),
                AcousticFront::Conv(c) => c.weights.value.len(),
            },
            None => 0,
        }
    }

    fn acoustic_ref(&self) -> Result<&AcousticNet> {
        self.acoustic
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no acoustic branch".into()))
    }

    fn linguistic_ref(&self) -> Result<&LinguisticNet> {
        self.linguistic
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no linguistic branch".into()))
    }
}

/// Runs the acoustic branch on one chunk in eval mode (running batch-norm
/// statistics). Returns the penultimate feature vector and the branch
/// posterior.
pub fn acoustic_forward(model: &Model, chunk: &[f64]) -> Result<(Vec<f64>, Posterior)> {
    let net = model.acoustic_ref()?;
    if chunk.len() != model.config.chunk_samples {
        return Err(Error::Shape(format!(
            "chunk of {} samples, configured for {}",
            chunk.len(),
            model.config.chunk_samples
        )));
    }
    let x = Tensor::new(vec![1, chunk.len()], chunk.to_vec())?;
    let conv_out = match &net.front {
        AcousticFront::Sinc(s) => sinc_conv(&x, &s.bank(), net.stride)?,
        AcousticFront::Conv(c) => conv1d(&x, &c.weights.value, net.stride)?,
    };
    // Eval-mode BN needs no mutable running-stat update, but the layer API
    // takes &mut self; normalize against a clone.
    let mut bn = net.bn.clone();
    let (bn_out, _) = bn.forward(&conv_out, Mode::Eval)?;
    let frames = bn_out.shape()[2];
    let act = leaky_relu(bn_out.plane(0));
    let (pooled, _) = max_pool(&act, model.config.num_filters, frames, net.pool_width);
    let features = acoustic_tail_features(net, &model.config, &pooled);
    let logits = net.head.forward(&features);
    Ok((features, Posterior::from_logits(&logits)))
}

/// Tail of the acoustic branch on one pooled plane, eval path.
pub(crate) fn acoustic_tail_features(
    net: &AcousticNet,
    config: &ModelConfig,
    pooled: &[f64],
) -> Vec<f64> {
    match &net.tail {
        AcousticTail::Dnn { fc1, fc2 } => {
            let a1 = leaky_relu(&fc1.forward(pooled));
            fc2.forward(&a1)
        }
        AcousticTail::Lstm { cell, fc } => {
            let frames = pooled.len() / config.num_filters;
            let xs: Vec<Vec<f64>> = (0..frames)
                .map(|t| {
                    (0..config.num_filters)
                        .map(|f| pooled[f * frames + t])
                        .collect()
                })
                .collect();
            let (hs, _) = cell.forward_seq(&xs).expect("pooled_frames >= 1 by config");
            fc.forward(hs.last().unwrap())
        }
    }
}

/// Runs the linguistic branch: embedding → LSTM → attention pooling →
/// feature dense. Returns features and the branch posterior.
pub fn linguistic_forward(model: &Model, tokens: &[u32]) -> Result<(Vec<f64>, Posterior)> {
    let net = model.linguistic_ref()?;
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if tokens.len() > net.max_seq_len {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            tokens.len(),
            net.max_seq_len
        )));
    }
    let embedded = net.embedding.forward(tokens);
    let (hs, _) = net.cell.forward_seq(&embedded)?;
    let (ctx, _) = net.attention.forward(&hs)?;
    let features = net.fc.forward(&ctx);
    let logits = net.head.forward(&features);
    Ok((features, Posterior::from_logits(&logits)))
}

/// Gated feature fusion: each modality vector is reweighted by a sigmoid
/// gate computed from itself, the results are concatenated and classified.
pub fn fuse(model: &Model, acoustic_features: &[f64], linguistic_features: &[f64]) -> Result<Posterior> {
    let fusion = model
        .fusion
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no fusion head".into()))?;
    if acoustic_features.len() != model.config.acoustic_vec_dim
        || linguistic_features.len() != model.config.linguistic_vec_dim
    {
        return Err(Error::Shape(format!(
            "fusion expects {} + {} dims, got {} + {}",
            model.config.acoustic_vec_dim,
            model.config.linguistic_vec_dim,
            acoustic_features.len(),
            linguistic_features.len()
        )));
    }
    let (logits, _) = fusion_logits(fusion, acoustic_features, linguistic_features);
    Ok(Posterior::from_logits(&logits))
}

pub(crate) struct FusionCache {
    pub gate_a_act: Vec<f64>,
    pub gate_l_act: Vec<f64>,
    pub concat: Vec<f64>,
}

pub(crate) fn fusion_logits(
    fusion: &FusionHead,
    a_feat: &[f64],
    l_feat: &[f64],
) -> (Vec<f64>, FusionCache) {
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let gate_a_act: Vec<f64> = fusion.gate_a.forward(a_feat).iter().map(|&v| sigmoid(v)).collect();
    let gate_l_act: Vec<f64> = fusion.gate_l.forward(l_feat).iter().map(|&v| sigmoid(v)).collect();
    let mut concat = Vec::with_capacity(a_feat.len() + l_feat.len());
    concat.extend(a_feat.iter().zip(&gate_a_act).map(|(x, g)| x * g));
    concat.extend(l_feat.iter().zip(&gate_l_act).map(|(x, g)| x * g));
    let logits = fusion.head.forward(&concat);
    (
        logits,
        FusionCache {
            gate_a_act,
            gate_l_act,
            concat,
        },
    )
}

/// Full fused forward in eval mode.
pub fn fused_forward(model: &Model, chunk: &[f64], tokens: &[u32]) -> Result<Posterior> {
    let (a_feat, _) = acoustic_forward(model, chunk)?;
    let (l_feat, _) = linguistic_forward(model, tokens)?;
    fuse(model, &a_feat, &l_feat)
}

/// Convenience: the label as an `EmotionClass`.
pub fn predict_class(posterior: &Posterior) -> EmotionClass {
    EmotionClass::from_index(predict(posterior)).expect("argmax of 4 entries")
}
