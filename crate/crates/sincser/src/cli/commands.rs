//! Implementations of the five `sincser` subcommands.
//!
//! Outputs are deterministic under a fixed config: JSON and JSON-lines
//! files embed the resolved config hash per record, and directories with
//! schema-pinned files (manifests, filter CSVs, WAVs) get a sidecar
//! `*.meta.json` carrying the hash instead.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::cli::RunConfig;
use crate::data::{generate_synthetic, load_dataset, write_dataset};
use crate::ded::{decode_dialogs, group_records, PosteriorRecord};
use crate::dsp::dft_magnitude;
use crate::error::{Error, Result};
use crate::models::checkpoint::{load_checkpoint, save_checkpoint};
use crate::models::{build_model, AcousticFront, Model};
use crate::training::{
    evaluate, eval_utterance, sentence_error_rate, stratified_split, train, unweighted_accuracy,
    weighted_accuracy, ConfusionMatrix, TrainingLog,
};

/// Generates the synthetic dataset and writes WAVs plus a manifest into
/// the data directory.
pub fn cmd_synth(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out.unwrap_or(&config.data.dir);
    let spec = config.synth_spec();
    let dataset = generate_synthetic(&spec, config.data.num_dialogs)?;
    fs::create_dir_all(dir)?;
    write_dataset(dir, &dataset)?;
    let meta = serde_json::json!({
        "config_hash": config.hash(),
        "num_dialogs": config.data.num_dialogs,
        "num_utterances": dataset.len(),
    });
    fs::write(dir.join("synth.meta.json"), format!("{meta}\n"))?;
    log::info!(
        "wrote {} utterances in {} dialogs to {}",
        dataset.len(),
        config.data.num_dialogs,
        dir.display()
    );
    Ok(())
}

fn logged_jsonl<T: serde::Serialize>(records: &[T], hash: &str) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let mut value = serde_json::to_value(r)?;
        value
            .as_object_mut()
            .expect("records are JSON objects")
            .insert("config_hash".into(), serde_json::Value::String(hash.into()));
        out.push_str(&serde_json::to_string(&value)?);
        out.push('\n');
    }
    Ok(out)
}

/// Trains the configured model on the dataset and writes the checkpoint
/// plus the per-epoch JSON-lines log.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<()> {
    let dataset = load_dataset(&config.data.dir.join("manifest.csv"))?;
    let mut model = build_model(&config.model_config(), config.seed)?;
    let log: TrainingLog = train(&mut model, &dataset, &config.train_config())?;
    fs::create_dir_all(out)?;
    fs::write(
        out.join("train_log.jsonl"),
        logged_jsonl(&log.records, &config.hash())?,
    )?;
    save_checkpoint(&out.join("model.ckpt"), &mut model, &config.hash())?;
    if let Some(r) = log.records.iter().rev().find(|r| r.split == "val") {
        log::info!(
            "final val: wa {:.3} ua {:.3} ser {:.3}",
            r.wa,
            r.ua,
            r.ser
        );
    }
    Ok(())
}

/// Evaluates a checkpoint on the validation split: writes `metrics.json`
/// and the per-utterance posterior stream consumed by `decode`.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let (model, _meta) = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(&config.data.dir.join("manifest.csv"))?;
    let train_cfg = config.train_config();
    let (_, val_idx) = stratified_split(&dataset, train_cfg.val_fraction, train_cfg.seed);
    let indices = if val_idx.is_empty() {
        (0..dataset.len()).collect()
    } else {
        val_idx
    };
    let (cm, _) = evaluate(&model, &dataset, &indices, &train_cfg.chunk, train_cfg.eval_chunks)?;

    fs::create_dir_all(out)?;
    write_metrics(&out.join("metrics.json"), &cm, &config.hash())?;

    // Posterior stream in dialog order for the decoder.
    let records: Vec<PosteriorRecord> = indices
        .iter()
        .map(|&i| -> Result<PosteriorRecord> {
            let u = &dataset[i];
            let p = eval_utterance(
                &model,
                u,
                &train_cfg.chunk,
                train_cfg.eval_chunks,
                0xE7A1_0000 ^ i as u64,
            )?;
            Ok(PosteriorRecord {
                dialog_id: u.dialog_id.clone(),
                utterance_id: u.utterance_id.clone(),
                posterior: *p.probs(),
                gold: Some(u.label.index()),
                decoded_label: None,
                score: None,
            })
        })
        .collect::<Result<_>>()?;
    fs::write(
        out.join("posteriors.jsonl"),
        logged_jsonl(&records, &config.hash())?,
    )?;
    log::info!("evaluated {} utterances", indices.len());
    Ok(())
}

fn write_metrics(path: &Path, cm: &ConfusionMatrix, hash: &str) -> Result<()> {
    let metrics = serde_json::json!({
        "wa": weighted_accuracy(cm)?,
        "ua": unweighted_accuracy(cm)?.value,
        "ser": sentence_error_rate(cm)?,
        "confusion": cm.counts(),
        "config_hash": hash,
    });
    fs::write(path, format!("{metrics}\n"))?;
    Ok(())
}

/// Runs the dialog decoder over a posterior JSON-lines stream, writing the
/// same stream with `decoded_label` and per-utterance `score` added, plus
/// decoded metrics when gold labels are present.
pub fn cmd_decode(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let file = fs::File::open(input)
        .map_err(|e| Error::InvalidArgument(format!("cannot open {}: {e}", input.display())))?;
    let mut records = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PosteriorRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", input.display(), ln + 1)))?;
        records.push(record);
    }
    let dialogs = group_records(&records)?;
    let decoded = decode_dialogs(&dialogs, &config.ded)?;

    let mut out_records = Vec::with_capacity(records.len());
    let mut cm = ConfusionMatrix::new();
    let mut have_gold = true;
    for (dp, dec) in dialogs.iter().zip(&decoded) {
        for (t, (utterance_id, posterior)) in dp.rows.iter().enumerate() {
            let gold = dp.gold.as_ref().map(|g| g[t]);
            match gold {
                Some(g) => cm.record(g, dec.labels[t]),
                None => have_gold = false,
            }
            out_records.push(PosteriorRecord {
                dialog_id: dp.dialog_id.clone(),
                utterance_id: utterance_id.clone(),
                posterior: *posterior.probs(),
                gold,
                decoded_label: Some(dec.labels[t]),
                score: Some(dec.per_step_scores[t]),
            });
        }
    }
    fs::create_dir_all(out)?;
    fs::write(
        out.join("decoded.jsonl"),
        logged_jsonl(&out_records, &config.hash())?,
    )?;
    if have_gold && cm.total() > 0 {
        write_metrics(&out.join("decoded_metrics.json"), &cm, &config.hash())?;
    }
    log::info!("decoded {} dialogs", dialogs.len());
    Ok(())
}

/// Exports the learned cutoff table and per-filter magnitude responses of
/// a sinc checkpoint.
pub fn cmd_inspect_filters(checkpoint: &Path, out: &Path) -> Result<()> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let (table, responses) = filter_report(&model)?;
    fs::create_dir_all(out)?;
    let mut filters_csv = String::from("filter_index,f1_hz,f2_hz\n");
    for (i, (f1, f2)) in table.iter().enumerate() {
        filters_csv.push_str(&format!("{i},{f1},{f2}\n"));
    }
    fs::write(out.join("filters.csv"), filters_csv)?;
    for (i, response) in responses.iter().enumerate() {
        let mut csv = String::from("freq_hz,magnitude\n");
        for (f, m) in response {
            csv.push_str(&format!("{f},{m}\n"));
        }
        fs::write(out.join(format!("response_{i:04}.csv")), csv)?;
    }
    let sidecar = serde_json::json!({
        "config_hash": meta,
        "num_filters": table.len(),
    });
    fs::write(out.join("inspect.meta.json"), format!("{sidecar}\n"))?;
    log::info!("wrote {} filter responses to {}", table.len(), out.display());
    Ok(())
}

/// Cutoff pairs and 1024-bin magnitude responses for every filter of a
/// sinc-front model.
pub fn filter_report(model: &Model) -> Result<(Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>)> {
    let net = model
        .acoustic
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no acoustic branch".into()))?;
    let sinc = match &net.front {
        AcousticFront::Sinc(s) => s,
        AcousticFront::Conv(_) => {
            return Err(Error::InvalidArgument(
                "conv baseline has no cutoff parameters to inspect".into(),
            ))
        }
    };
    let bank = sinc.bank();
    let kernels = bank.materialize()?;
    let table = sinc.cutoffs();
    let responses = kernels
        .iter()
        .map(|k| dft_magnitude(&k.coeffs, sinc.sample_rate, 1024))
        .collect();
    Ok((table, responses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn tiny_run_config(dir: &Path) -> RunConfig {
        RunConfig::load(
            None,
            &[
                format!("data.dir=\"{}\"", dir.join("data").display()),
                "data.num_dialogs=6".into(),
                "data.utterance_ms=300.0".into(),
                "chunk.chunk_ms=60.0".into(),
                "model.kernel_length=65".into(),
                "model.num_filters=4".into(),
                "model.stride=16".into(),
                "model.acoustic_lstm_hidden=8".into(),
                "model.acoustic_vec_dim=12".into(),
                "model.linguistic_vec_dim=12".into(),
                "train.epochs=1".into(),
                "train.batch_size=8".into(),
                "train.eval_chunks=2".into(),
            ],
            Some(3),
        )
        .unwrap()
    }

    #[test]
    fn synth_train_eval_decode_pipeline_produces_valid_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_run_config(dir.path());
        cmd_synth(&config, None).unwrap();
        assert!(config.data.dir.join("manifest.csv").exists());

        let run = dir.path().join("run");
        cmd_train(&config, &run).unwrap();
        assert!(run.join("model.ckpt").exists());
        assert!(run.join("train_log.jsonl").exists());

        cmd_eval(&config, &run.join("model.ckpt"), &run).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
        let wa = metrics["wa"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&wa));
        assert_eq!(metrics["config_hash"].as_str().unwrap(), config.hash());

        cmd_decode(&config, &run.join("posteriors.jsonl"), &run).unwrap();
        let decoded = fs::read_to_string(run.join("decoded.jsonl")).unwrap();
        assert!(decoded.lines().count() > 0);
        for line in decoded.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["decoded_label"].as_u64().unwrap() < 4);
        }
    }

    #[test]
    fn decode_with_zero_weights_reproduces_argmax_labels() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("posteriors.jsonl");
        let mut lines = String::new();
        let posts = [
            [0.1, 0.6, 0.2, 0.1],
            [0.7, 0.1, 0.1, 0.1],
            [0.2, 0.2, 0.5, 0.1],
        ];
        for (i, p) in posts.iter().enumerate() {
            lines.push_str(
                &serde_json::to_string(&PosteriorRecord {
                    dialog_id: "d0".into(),
                    utterance_id: format!("u{i}"),
                    posterior: *p,
                    gold: None,
                    decoded_label: None,
                    score: None,
                })
                .unwrap(),
            );
            lines.push('\n');
        }
        fs::write(&input, lines).unwrap();
        let config = RunConfig::load(
            None,
            &["ded.lambda_history=0.0".into(), "ded.shift_penalty=0.0".into()],
            None,
        )
        .unwrap();
        let out = dir.path().join("out");
        cmd_decode(&config, &input, &out).unwrap();
        let decoded = fs::read_to_string(out.join("decoded.jsonl")).unwrap();
        let labels: Vec<u64> = decoded
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["decoded_label"]
                    .as_u64()
                    .unwrap()
            })
            .collect();
        assert_eq!(labels, vec![1, 0, 2]);
    }

    #[test]
    fn inspect_filters_on_a_fresh_model_reports_the_mel_grid() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_run_config(dir.path());
        let mut model = build_model(&config.model_config(), config.seed).unwrap();
        let ckpt = dir.path().join("fresh.ckpt");
        save_checkpoint(&ckpt, &mut model, &config.hash()).unwrap();
        let out = dir.path().join("filters");
        cmd_inspect_filters(&ckpt, &out).unwrap();

        let table = fs::read_to_string(out.join("filters.csv")).unwrap();
        let mut lines = table.lines();
        assert_eq!(lines.next().unwrap(), "filter_index,f1_hz,f2_hz");
        let expected = crate::dsp::mel_spaced_init(4, 16_000.0).unwrap();
        for (line, p) in lines.zip(&expected) {
            let fields: Vec<&str> = line.split(',').collect();
            let (f1, f2) = p.cutoffs();
            assert!((fields[1].parse::<f64>().unwrap() - f1).abs() < 1e-6);
            assert!((fields[2].parse::<f64>().unwrap() - f2).abs() < 1e-6);
        }
        assert!(out.join("response_0000.csv").exists());
        let resp = fs::read_to_string(out.join("response_0000.csv")).unwrap();
        assert_eq!(resp.lines().next().unwrap(), "freq_hz,magnitude");
        assert_eq!(resp.lines().count(), 1025);
    }

    #[test]
    fn inspect_filters_rejects_the_conv_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig::load(
            None,
            &[
                "model.acoustic_variant=\"cnn\"".into(),
                "model.kind=\"acoustic\"".into(),
            ],
            None,
        )
        .unwrap();
        let mut model = build_model(&config.model_config(), 0).unwrap();
        let ckpt = dir.path().join("cnn.ckpt");
        save_checkpoint(&ckpt, &mut model, "").unwrap();
        let err = cmd_inspect_filters(&ckpt, &dir.path().join("x"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("conv"), "{err}");
    }

    #[test]
    fn linguistic_models_train_without_audio() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_run_config(dir.path());
        cmd_synth(&config, None).unwrap();
        config.model.kind = ModelKind::Linguistic;
        let run = dir.path().join("ling");
        cmd_train(&config, &run).unwrap();
        cmd_eval(&config, &run.join("model.ckpt"), &run).unwrap();
        assert!(run.join("metrics.json").exists());
    }
}
