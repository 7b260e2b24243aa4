//! Minibatch training loop, Adam, stratified splitting, and evaluation.

pub mod chunk;
pub mod metrics;

pub use chunk::{sample_chunk, ChunkPolicy};
pub use metrics::{
    sentence_error_rate, unweighted_accuracy, weighted_accuracy, ConfusionMatrix, UaReport,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::models::backprop::example_posterior;
use crate::models::{batch_forward_backward, Model, ModelKind, Posterior, TrainExample};
use crate::par;
use crate::par::mix_seed;
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with per-parameter learning-rate scales (the sinc cutoffs live in
/// Hz units and carry a larger scale).
#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimizerConfig,
    moments: Vec<(Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            step: 0,
        }
    }

    /// One update from the gradients currently accumulated in the model.
    pub fn step(&mut self, model: &mut Model) {
        self.step += 1;
        let t = self.step;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);
        let mut idx = 0;
        let moments = &mut self.moments;
        model.visit_params(&mut |_, p| {
            if moments.len() == idx {
                moments.push((Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            }
            let (m, v) = &mut moments[idx];
            let lr = c.lr * p.lr_scale;
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = p.grad.data();
            for ((value, g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(gd)
                .zip(md.iter_mut().zip(vd.iter_mut()))
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *value -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            idx += 1;
        });
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub chunk: ChunkPolicy,
    /// Posteriors averaged over this many chunks per utterance at eval.
    pub eval_chunks: usize,
    pub val_fraction: f64,
    /// Seed for the split and the epoch shuffles.
    pub seed: u64,
    /// Stop once validation WA reaches this value (after logging the
    /// epoch), if set.
    pub stop_at_val_wa: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            chunk: ChunkPolicy::default(),
            eval_chunks: 5,
            val_fraction: 0.2,
            seed: 0,
            stop_at_val_wa: None,
        }
    }
}

/// One logged line: metrics for one split after one epoch.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub wa: f64,
    pub ua: f64,
    pub ser: f64,
}

/// Per-epoch training history, emitted as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }

    /// First epoch at which `split` reached `wa`, if any.
    pub fn epochs_to_reach_wa(&self, split: &str, wa: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.split == split && r.wa >= wa)
            .map(|r| r.epoch)
    }

    pub fn last_wa(&self, split: &str) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.wa)
    }
}

/// Deterministic stratified split: within each class, a seeded shuffle
/// sends `val_fraction` of the indices to validation.
pub fn stratified_split(
    dataset: &[Utterance],
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for (i, u) in dataset.iter().enumerate() {
        by_class[u.label.index()].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, mut idxs) in by_class.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c as u64));
        idxs.shuffle(&mut rng);
        let n_val = (idxs.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&idxs[..n_val]);
        train.extend_from_slice(&idxs[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Averaged eval-mode posterior for one utterance. Acoustic and fused
/// models average over `eval_chunks` seeded chunks; linguistic models need
/// only the tokens.
pub fn eval_utterance(
    model: &Model,
    utterance: &Utterance,
    policy: &ChunkPolicy,
    eval_chunks: usize,
    stream: u64,
) -> Result<Posterior> {
    if model.config.kind == ModelKind::Linguistic {
        return example_posterior(model, &[], &utterance.tokens);
    }
    let draws = eval_chunks.max(1);
    let mut acc = [0.0f64; 4];
    for k in 0..draws {
        let chunk = sample_chunk(
            &utterance.samples,
            policy,
            utterance.sample_rate,
            mix_seed(stream, k as u64),
        )?;
        let p = example_posterior(model, &chunk, &utterance.tokens)?;
        for (a, b) in acc.iter_mut().zip(p.probs()) {
            *a += b;
        }
    }
    let sum: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|v| *v /= sum);
    Ok(Posterior(acc))
}

/// Evaluates a subset of the dataset, fanning out across utterances.
/// Returns the confusion matrix and the mean negative log-likelihood of
/// the gold class under the averaged posterior.
pub fn evaluate(
    model: &Model,
    dataset: &[Utterance],
    indices: &[usize],
    policy: &ChunkPolicy,
    eval_chunks: usize,
) -> Result<(ConfusionMatrix, f64)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let results: Vec<Result<(usize, usize, f64)>> = par::map_slice(indices, |_, &i| {
        let u = &dataset[i];
        // Eval chunks are tied to the utterance index, not the epoch, so
        // validation scores are comparable across epochs.
        let p = eval_utterance(model, u, policy, eval_chunks, 0xE7A1_0000 ^ i as u64)?;
        let loss = -(p.probs()[u.label.index()].max(f64::EPSILON)).ln();
        Ok((u.label.index(), p.argmax(), loss))
    });
    let mut cm = ConfusionMatrix::new();
    let mut loss_sum = 0.0;
    for r in results {
        let (gold, pred, loss) = r?;
        cm.record(gold, pred);
        loss_sum += loss;
    }
    Ok((cm, loss_sum / indices.len() as f64))
}

/// Minibatch Adam training with per-epoch metrics on the train and
/// validation splits. Fully deterministic under the config seeds.
pub fn train(model: &mut Model, dataset: &[Utterance], config: &TrainConfig) -> Result<TrainingLog> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let (train_idx, val_idx) = stratified_split(dataset, config.val_fraction, config.seed);
    let train_idx = if train_idx.is_empty() {
        // Tiny datasets may round entirely into validation; keep training
        // possible on them.
        (0..dataset.len()).collect()
    } else {
        train_idx
    };
    let mut optimizer = Adam::new(config.optimizer);
    let mut log = TrainingLog::default();

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x5855_0000 ^ epoch as u64));
        order.shuffle(&mut rng);

        let mut train_cm = ConfusionMatrix::new();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            // Batch norm needs at least two examples; drop a trailing
            // singleton rather than fail the epoch.
            if batch_idx.len() == 1
                && order.len() > 1
                && model.config.kind != ModelKind::Linguistic
            {
                continue;
            }
            let batch: Vec<TrainExample> = batch_idx
                .iter()
                .map(|&i| -> Result<TrainExample> {
                    let u = &dataset[i];
                    let chunk = if model.config.kind == ModelKind::Linguistic {
                        Vec::new()
                    } else {
                        sample_chunk(
                            &u.samples,
                            &config.chunk,
                            u.sample_rate,
                            mix_seed(epoch as u64, i as u64),
                        )?
                    };
                    Ok(TrainExample {
                        chunk,
                        tokens: u.tokens.clone(),
                        label: u.label,
                    })
                })
                .collect::<Result<_>>()?;

            model.zero_grads();
            let out = batch_forward_backward(model, &batch)?;
            if !out.mean_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {} at epoch {epoch} after {seen} examples; \
                     lower the learning rate or check the input scaling",
                    out.mean_loss
                )));
            }
            optimizer.step(model);
            loss_sum += out.mean_loss * batch.len() as f64;
            seen += batch.len();
            for (gold, pred) in out.labels.iter().zip(&out.predictions) {
                train_cm.record(*gold, *pred);
            }
        }

        let train_loss = loss_sum / seen as f64;
        push_record(&mut log, epoch, "train", train_loss, &train_cm)?;

        if !val_idx.is_empty() {
            let (val_cm, val_loss) =
                evaluate(model, dataset, &val_idx, &config.chunk, config.eval_chunks)?;
            push_record(&mut log, epoch, "val", val_loss, &val_cm)?;
            if let Some(target) = config.stop_at_val_wa {
                if weighted_accuracy(&val_cm)? >= target {
                    break;
                }
            }
        }
    }
    Ok(log)
}

fn push_record(
    log: &mut TrainingLog,
    epoch: usize,
    split: &str,
    loss: f64,
    cm: &ConfusionMatrix,
) -> Result<()> {
    log.records.push(EpochRecord {
        epoch,
        split: split.to_string(),
        loss,
        wa: weighted_accuracy(cm)?,
        ua: unweighted_accuracy(cm)?.value,
        ser: sentence_error_rate(cm)?,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, EmotionClass, SynthSpec};
    use crate::models::{build_model, ModelConfig};

    fn tiny_ling_config() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Linguistic,
            vocab_size: 64,
            embedding_dim: 6,
            linguistic_lstm_hidden: 8,
            attention_key_dim: 4,
            linguistic_vec_dim: 10,
            max_seq_len: 16,
            ..ModelConfig::desk_default()
        }
    }

    fn tiny_dataset(n: usize) -> Vec<Utterance> {
        let spec = SynthSpec {
            utterance_ms: 40.0,
            ..SynthSpec::default()
        };
        let mut data: Vec<Utterance> = generate_synthetic(&spec, (n / 6).max(1) + 2)
            .unwrap()
            .into_iter()
            .map(|g| g.utterance)
            .collect();
        data.truncate(n);
        data
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut model = build_model(&tiny_ling_config(), 5).unwrap();
        let mut before = Vec::new();
        model.visit_params(&mut |_, p| {
            before.extend(p.value.data().iter().map(|v| v.to_bits()))
        });
        let dataset = tiny_dataset(12);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            optimizer: OptimizerConfig {
                lr: 0.0,
                ..OptimizerConfig::default()
            },
            eval_chunks: 1,
            ..TrainConfig::default()
        };
        train(&mut model, &dataset, &config).unwrap();
        let mut after = Vec::new();
        model.visit_params(&mut |_, p| after.extend(p.value.data().iter().map(|v| v.to_bits())));
        assert_eq!(before, after);
    }

    #[test]
    fn single_example_overfits_monotonically() {
        let mut model = build_model(&tiny_ling_config(), 6).unwrap();
        let dataset = vec![Utterance {
            utterance_id: "u0".into(),
            dialog_id: "d0".into(),
            speaker_id: "s".into(),
            samples: vec![0.0; 160],
            sample_rate: 16_000.0,
            tokens: vec![3, 17, 9],
            label: EmotionClass::Angry,
        }];
        let config = TrainConfig {
            epochs: 10,
            batch_size: 1,
            val_fraction: 0.0,
            eval_chunks: 1,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &dataset, &config).unwrap();
        let losses: Vec<f64> = log
            .records
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.loss)
            .collect();
        assert_eq!(losses.len(), 10);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss not monotone: {losses:?}");
        }
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let dataset = tiny_dataset(24);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            eval_chunks: 2,
            ..TrainConfig::default()
        };
        let mut m1 = build_model(&tiny_ling_config(), 9).unwrap();
        let log1 = train(&mut m1, &dataset, &config).unwrap();
        let mut m2 = build_model(&tiny_ling_config(), 9).unwrap();
        let log2 = train(&mut m2, &dataset, &config).unwrap();
        assert_eq!(log1.to_jsonl(), log2.to_jsonl());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = build_model(&tiny_ling_config(), 5).unwrap();
        assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn exploding_learning_rate_aborts_with_a_diagnostic() {
        let mut model = build_model(&tiny_ling_config(), 5).unwrap();
        let dataset = tiny_dataset(8);
        let config = TrainConfig {
            epochs: 50,
            batch_size: 4,
            optimizer: OptimizerConfig {
                lr: 1e200,
                ..OptimizerConfig::default()
            },
            eval_chunks: 1,
            ..TrainConfig::default()
        };
        match train(&mut model, &dataset, &config) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stratified_split_is_deterministic_and_stratified() {
        let dataset = tiny_dataset(40);
        let (tr1, va1) = stratified_split(&dataset, 0.25, 3);
        let (tr2, va2) = stratified_split(&dataset, 0.25, 3);
        assert_eq!(tr1, tr2);
        assert_eq!(va1, va2);
        assert_eq!(tr1.len() + va1.len(), dataset.len());
        // No overlap.
        for i in &va1 {
            assert!(!tr1.contains(i));
        }
        // Each class is represented on both sides where it has examples.
        for c in 0..4 {
            let total = dataset.iter().filter(|u| u.label.index() == c).count();
            if total >= 4 {
                assert!(va1.iter().any(|&i| dataset[i].label.index() == c));
                assert!(tr1.iter().any(|&i| dataset[i].label.index() == c));
            }
        }
    }
}
