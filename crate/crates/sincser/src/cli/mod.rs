//! Run configuration and the command entry points behind the `sincser`
//! binary.
//!
//! One TOML file drives every command; `--set key=value` overrides
//! individual dotted keys, so the conv/sinc comparison is three runs
//! differing in `model.acoustic_variant` only. Unknown keys are rejected.
//! Every run resolves to a canonical config whose SHA-256 prefix is
//! embedded in the outputs for provenance.

pub mod commands;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::SynthSpec;
use crate::ded::DedConfig;
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::training::{ChunkPolicy, TrainConfig};

/// Synthetic-dataset knobs exposed in the config file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory: `synth` writes it, `train`/`eval` read
    /// `manifest.csv` inside it.
    pub dir: PathBuf,
    pub num_dialogs: usize,
    pub utterance_ms: f64,
    pub noise_rms: f64,
    pub band_rms: f64,
    pub label_autocorrelation: f64,
    pub dialog_length_min: usize,
    pub dialog_length_max: usize,
    pub class_bands: [[f64; 2]; 4],
    pub class_priors: [f64; 4],
}

impl Default for DataConfig {
    fn default() -> Self {
        let spec = SynthSpec::default();
        Self {
            dir: PathBuf::from("data/synth"),
            num_dialogs: 250,
            utterance_ms: spec.utterance_ms,
            noise_rms: spec.noise_rms,
            band_rms: spec.band_rms,
            label_autocorrelation: spec.label_autocorrelation,
            dialog_length_min: spec.dialog_length_range.0,
            dialog_length_max: spec.dialog_length_range.1,
            class_bands: spec.class_bands.map(|(lo, hi)| [lo, hi]),
            class_priors: spec.class_priors,
        }
    }
}

/// Training-section knobs (the split/optimizer parts of [`TrainConfig`]).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eval_chunks: usize,
    pub val_fraction: f64,
    pub stop_at_val_wa: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            epsilon: t.optimizer.epsilon,
            eval_chunks: t.eval_chunks,
            val_fraction: t.val_fraction,
            stop_at_val_wa: None,
        }
    }
}

/// The full resolved run configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub chunk: ChunkPolicy,
    pub train: TrainSection,
    pub ded: DedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::desk_default(),
            chunk: ChunkPolicy::default(),
            train: TrainSection::default(),
            ded: DedConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads the base defaults, merges the optional file, then applies
    /// `--set key=value` overrides and the optional seed override.
    pub fn load(
        file: Option<&Path>,
        sets: &[String],
        seed_override: Option<u64>,
    ) -> Result<Self> {
        let mut tree = toml::Value::try_from(RunConfig::default())
            .map_err(|e| Error::Config(format!("default config does not serialize: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file_tree: toml::Value = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, file_tree);
        }
        for s in sets {
            apply_set(&mut tree, s)?;
        }
        if let Some(seed) = seed_override {
            apply_set(&mut tree, &format!("seed={seed}"))?;
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e| Error::Config(format!("bad config key: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.chunk.validate()?;
        self.ded.validate()?;
        self.synth_spec().validate()?;
        if self.data.num_dialogs == 0 {
            return Err(Error::Config("data.num_dialogs must be >= 1".into()));
        }
        Ok(())
    }

    /// The model configuration with the chunk length derived from the
    /// chunk policy, so the two sections cannot disagree.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.chunk_samples = self.chunk.chunk_samples(m.sample_rate);
        m
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let base = SynthSpec::default();
        SynthSpec {
            class_bands: self.data.class_bands.map(|[lo, hi]| (lo, hi)),
            class_priors: self.data.class_priors,
            utterance_ms: self.data.utterance_ms,
            noise_rms: self.data.noise_rms,
            band_rms: self.data.band_rms,
            dialog_length_range: (self.data.dialog_length_min, self.data.dialog_length_max),
            label_autocorrelation: self.data.label_autocorrelation,
            sample_rate: self.model.sample_rate,
            seed: self.seed,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            optimizer: crate::training::OptimizerConfig {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                epsilon: self.train.epsilon,
            },
            chunk: ChunkPolicy {
                seed: self.seed,
                ..self.chunk.clone()
            },
            eval_chunks: self.train.eval_chunks,
            val_fraction: self.train.val_fraction,
            seed: self.seed,
            stop_at_val_wa: self.train.stop_at_val_wa,
        }
    }

    /// Canonical serialization of the resolved config.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }

    /// First 16 hex chars of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

/// Recursive table merge: scalar and array values from `incoming` replace
/// the base, tables merge key by key.
fn merge(base: &mut toml::Value, incoming: toml::Value) {
    match (base, incoming) {
        (toml::Value::Table(b), toml::Value::Table(inc)) => {
            for (k, v) in inc {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        // Unknown key: keep it so deserialization reports it.
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `key.path=value` override. Values parse as TOML (numbers,
/// booleans, arrays); anything unparseable is a string.
fn apply_set(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{spec}`")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{part}` is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            break;
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AcousticVariant;

    #[test]
    fn defaults_round_trip_and_hash_stably() {
        let a = RunConfig::default();
        let b = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn set_overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "model.acoustic_variant=\"cnn\"".into(),
                "train.epochs=3".into(),
                "ded.beam_width=64".into(),
                "chunk.energy_filter=false".into(),
            ],
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.model.acoustic_variant, AcousticVariant::Cnn);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.ded.beam_width, 64);
        assert!(!cfg.chunk.energy_filter);
        assert_eq!(cfg.seed, 9);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["train.warmup_epochs=5".into()], None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("warmup_epochs"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nnum_fitlers = 8\n").unwrap();
        let err = RunConfig::load(Some(&path), &[], None).unwrap_err().to_string();
        assert!(err.contains("num_fitlers"), "{err}");
    }

    #[test]
    fn file_values_merge_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 4\n[model]\nnum_filters = 8\n[train]\nepochs = 2\n",
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&path), &[], None).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.num_filters, 8);
        assert_eq!(cfg.train.epochs, 2);
        // Untouched sections keep their defaults.
        assert_eq!(cfg.train.batch_size, TrainSection::default().batch_size);
    }

    #[test]
    fn chunk_length_feeds_the_model_config() {
        let cfg = RunConfig::load(None, &["chunk.chunk_ms=125.0".into()], None).unwrap();
        assert_eq!(cfg.model_config().chunk_samples, 2000);
    }
}
