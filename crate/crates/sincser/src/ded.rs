//! Dialog-level sequential emotion decoding.
//!
//! Each utterance's label is re-decided jointly over the dialog by
//! maximizing an additive score with three parts: the classifier's log
//! posterior, a dialog-history frequency prior (emotions that occurred
//! more often so far are more likely to recur), and a constant penalty on
//! emotion shifts between consecutive utterances:
//!
//! ```text
//! score = sum_t [ log p_t(l_t)
//!                 + lambda * log((count_t(l_t) + k) / (t + 4k))
//!                 - shift * 1{t > 0, l_t != l_{t-1}} ]
//! ```
//!
//! with `count_t` the occurrences of `l_t` among the already-decoded
//! prefix and `k` the add-k smoothing constant. Decoding is a beam search
//! over class sequences whose states carry per-class history counts; with
//! `beam_width >= 4^T` it is exact, which the brute-force oracle checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::models::Posterior;
use crate::par;

/// Decoder hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedConfig {
    /// Weight of the history-frequency prior.
    pub lambda_history: f64,
    /// Penalty applied whenever consecutive labels differ.
    pub shift_penalty: f64,
    /// Add-k smoothing of the history counts.
    pub history_smoothing: f64,
    pub beam_width: usize,
}

impl Default for DedConfig {
    fn default() -> Self {
        Self {
            lambda_history: 0.3,
            shift_penalty: 0.7,
            history_smoothing: 1.0,
            beam_width: 16,
        }
    }
}

impl DedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_history < 0.0 || self.shift_penalty < 0.0 {
            return Err(Error::InvalidArgument(
                "lambda_history and shift_penalty must be >= 0".into(),
            ));
        }
        if self.history_smoothing <= 0.0 {
            return Err(Error::InvalidArgument(
                "history_smoothing must be > 0".into(),
            ));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument("beam_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered per-utterance posteriors for one dialog, with optional gold
/// labels for scoring studies.
#[derive(Debug, Clone)]
pub struct DialogPosteriors {
    pub dialog_id: String,
    pub rows: Vec<(String, Posterior)>,
    pub gold: Option<Vec<usize>>,
}

impl DialogPosteriors {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dialog {} has no utterances",
                self.dialog_id
            )));
        }
        for (id, p) in &self.rows {
            p.validate()
                .map_err(|e| Error::InvalidArgument(format!("utterance {id}: {e}")))?;
        }
        if let Some(gold) = &self.gold {
            if gold.len() != self.rows.len() {
                return Err(Error::InvalidArgument(format!(
                    "dialog {}: {} gold labels for {} rows",
                    self.dialog_id,
                    gold.len(),
                    self.rows.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A decoded label sequence with its total and per-step scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedDialog {
    pub labels: Vec<usize>,
    pub total_score: f64,
    pub per_step_scores: Vec<f64>,
}

/// Contribution of step `t` given the history counts of the prefix and
/// the previous label. Zero-probability posterior entries are floored at
/// machine epsilon before the log.
fn step_score(
    posterior: &Posterior,
    label: usize,
    counts: &[u32; NUM_CLASSES],
    prev: Option<usize>,
    t: usize,
    cfg: &DedConfig,
) -> f64 {
    let k = cfg.history_smoothing;
    let mut s = posterior.probs()[label].max(f64::EPSILON).ln();
    s += cfg.lambda_history
        * ((counts[label] as f64 + k) / (t as f64 + NUM_CLASSES as f64 * k)).ln();
    if let Some(p) = prev {
        if p != label {
            s -= cfg.shift_penalty;
        }
    }
    s
}

/// Scores one complete label assignment for the dialog. The score of a
/// prefix never depends on the suffix, so partial sums are reusable.
pub fn score_assignment(dp: &DialogPosteriors, labels: &[usize], cfg: &DedConfig) -> Result<f64> {
    dp.validate()?;
    cfg.validate()?;
    if labels.len() != dp.rows.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} utterances",
            labels.len(),
            dp.rows.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let mut counts = [0u32; NUM_CLASSES];
    let mut prev = None;
    let mut total = 0.0;
    for (t, (&label, (_, posterior))) in labels.iter().zip(&dp.rows).enumerate() {
        total += step_score(posterior, label, &counts, prev, t, cfg);
        counts[label] += 1;
        prev = Some(label);
    }
    Ok(total)
}

#[derive(Clone)]
struct Beam {
    labels: Vec<usize>,
    counts: [u32; NUM_CLASSES],
    score: f64,
    per_step: Vec<f64>,
}

/// Beam search maximizing [`score_assignment`]. States carry per-class
/// history counts; ties break toward the lexicographically smaller label
/// sequence, so the result is deterministic. With `beam_width >= 4^T` the
/// search is exhaustive and therefore exact.
pub fn decode(dp: &DialogPosteriors, cfg: &DedConfig) -> Result<DecodedDialog> {
    dp.validate()?;
    cfg.validate()?;
    let mut beams = vec![Beam {
        labels: Vec::with_capacity(dp.len()),
        counts: [0; NUM_CLASSES],
        score: 0.0,
        per_step: Vec::with_capacity(dp.len()),
    }];
    for (t, (_, posterior)) in dp.rows.iter().enumerate() {
        let mut candidates = Vec::with_capacity(beams.len() * NUM_CLASSES);
        for beam in &beams {
            let prev = beam.labels.last().copied();
            for label in 0..NUM_CLASSES {
                let s = step_score(posterior, label, &beam.counts, prev, t, cfg);
                let mut next = beam.clone();
                next.labels.push(label);
                next.counts[label] += 1;
                next.score += s;
                next.per_step.push(s);
                candidates.push(next);
            }
        }
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.labels.cmp(&b.labels))
        });
        candidates.truncate(cfg.beam_width);
        beams = candidates;
    }
    let best = beams.into_iter().next().expect("at least one beam");
    Ok(DecodedDialog {
        labels: best.labels,
        total_score: best.score,
        per_step_scores: best.per_step,
    })
}

/// Decodes many dialogs, fanning out across them.
pub fn decode_dialogs(dialogs: &[DialogPosteriors], cfg: &DedConfig) -> Result<Vec<DecodedDialog>> {
    par::map_slice(dialogs, |_, dp| decode(dp, cfg))
        .into_iter()
        .collect()
}

/// Exhaustive enumeration of all `4^T` label sequences, `T <= 10`. Exact
/// by construction, with the same tie-break as [`decode`]; this is the
/// oracle the beam search is checked against.
pub fn brute_force_decode(dp: &DialogPosteriors, cfg: &DedConfig) -> Result<DecodedDialog> {
    dp.validate()?;
    cfg.validate()?;
    let t_max = dp.len();
    if t_max > 10 {
        return Err(Error::InvalidArgument(format!(
            "dialog of {t_max} utterances exceeds the 4^10 enumeration cap"
        )));
    }
    struct Search<'a> {
        dp: &'a DialogPosteriors,
        cfg: &'a DedConfig,
        best: Option<(f64, Vec<usize>, Vec<f64>)>,
        labels: Vec<usize>,
        per_step: Vec<f64>,
        counts: [u32; NUM_CLASSES],
    }
    impl Search<'_> {
        fn go(&mut self, t: usize, score: f64) {
            if t == self.dp.len() {
                // Strictly-greater keeps the first (lexicographically
                // smallest) sequence among ties.
                if self.best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                    self.best = Some((score, self.labels.clone(), self.per_step.clone()));
                }
                return;
            }
            let prev = self.labels.last().copied();
            for label in 0..NUM_CLASSES {
                let s = step_score(&self.dp.rows[t].1, label, &self.counts, prev, t, self.cfg);
                self.labels.push(label);
                self.per_step.push(s);
                self.counts[label] += 1;
                self.go(t + 1, score + s);
                self.counts[label] -= 1;
                self.per_step.pop();
                self.labels.pop();
            }
        }
    }
    let mut search = Search {
        dp,
        cfg,
        best: None,
        labels: Vec::with_capacity(t_max),
        per_step: Vec::with_capacity(t_max),
        counts: [0; NUM_CLASSES],
    };
    search.go(0, 0.0);
    let (total_score, labels, per_step_scores) = search.best.expect("non-empty dialog");
    Ok(DecodedDialog {
        labels,
        total_score,
        per_step_scores,
    })
}

/// One grid point of the decoder gain study.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GainPoint {
    pub pre_acc: f64,
    pub raw_wa: f64,
    pub ded_wa: f64,
}

/// Simulates dialogs whose gold labels are autocorrelated and whose
/// posteriors point at the gold class with the target accuracy, then
/// compares per-utterance argmax WA against decoded WA at each accuracy.
pub fn ded_gain_study(
    accuracy_grid: &[f64],
    num_dialogs: usize,
    seed: u64,
    cfg: &DedConfig,
) -> Result<Vec<GainPoint>> {
    ded_gain_study_with(accuracy_grid, num_dialogs, seed, cfg, 0.85)
}

/// [`ded_gain_study`] with an explicit posterior peak mass.
pub fn ded_gain_study_with(
    accuracy_grid: &[f64],
    num_dialogs: usize,
    seed: u64,
    cfg: &DedConfig,
    peak: f64,
) -> Result<Vec<GainPoint>> {
    if accuracy_grid.is_empty() || num_dialogs == 0 {
        return Err(Error::InvalidArgument("empty study grid".into()));
    }
    if accuracy_grid.iter().any(|&a| !(0.0 < a && a <= 1.0)) {
        return Err(Error::InvalidArgument(
            "accuracies must be in (0, 1]".into(),
        ));
    }
    cfg.validate()?;
    const AUTOCORRELATION: f64 = 0.7;
    let uniform = [0.25; NUM_CLASSES];

    let mut points = Vec::with_capacity(accuracy_grid.len());
    for (gi, &acc) in accuracy_grid.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::par::mix_seed(seed, gi as u64));
        let mut dialogs = Vec::with_capacity(num_dialogs);
        for d in 0..num_dialogs {
            let len = rng.gen_range(6..=12);
            let gold: Vec<usize> =
                crate::data::sample_labels(&uniform, AUTOCORRELATION, len, &mut rng)
                    .into_iter()
                    .map(|c| c.index())
                    .collect();
            let rows: Vec<(String, Posterior)> = gold
                .iter()
                .enumerate()
                .map(|(u, &g)| {
                    let hit = rng.gen::<f64>() < acc;
                    let target = if hit {
                        g
                    } else {
                        // Peak on one of the three wrong classes.
                        let mut wrong = rng.gen_range(0..NUM_CLASSES - 1);
                        if wrong >= g {
                            wrong += 1;
                        }
                        wrong
                    };
                    let rest = (1.0 - peak) / (NUM_CLASSES - 1) as f64;
                    let mut probs = [rest; NUM_CLASSES];
                    probs[target] = peak;
                    (format!("d{d}_u{u}"), Posterior(probs))
                })
                .collect();
            dialogs.push(DialogPosteriors {
                dialog_id: format!("d{d}"),
                rows,
                gold: Some(gold),
            });
        }

        let decoded = decode_dialogs(&dialogs, cfg)?;
        let mut total = 0usize;
        let mut raw_hits = 0usize;
        let mut ded_hits = 0usize;
        for (dp, dec) in dialogs.iter().zip(&decoded) {
            let gold = dp.gold.as_ref().unwrap();
            for (t, &g) in gold.iter().enumerate() {
                total += 1;
                if dp.rows[t].1.argmax() == g {
                    raw_hits += 1;
                }
                if dec.labels[t] == g {
                    ded_hits += 1;
                }
            }
        }
        points.push(GainPoint {
            pre_acc: acc,
            raw_wa: raw_hits as f64 / total as f64,
            ded_wa: ded_hits as f64 / total as f64,
        });
    }
    Ok(points)
}

/// One line of the posterior JSON-lines stream. `gold` and the decode
/// outputs are optional so the same record type reads inputs and writes
/// decoded outputs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PosteriorRecord {
    pub dialog_id: String,
    pub utterance_id: String,
    pub posterior: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoded_label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Groups a record stream into dialogs, preserving stream order within
/// and across dialogs (first appearance wins).
pub fn group_records(records: &[PosteriorRecord]) -> Result<Vec<DialogPosteriors>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, DialogPosteriors> =
        std::collections::HashMap::new();
    for r in records {
        let entry = grouped.entry(r.dialog_id.clone()).or_insert_with(|| {
            order.push(r.dialog_id.clone());
            DialogPosteriors {
                dialog_id: r.dialog_id.clone(),
                rows: Vec::new(),
                gold: Some(Vec::new()),
            }
        });
        entry
            .rows
            .push((r.utterance_id.clone(), Posterior(r.posterior)));
        match (&mut entry.gold, r.gold) {
            (Some(g), Some(label)) => g.push(label),
            (gold, _) => *gold = None,
        }
    }
    let dialogs: Vec<DialogPosteriors> = order
        .into_iter()
        .map(|id| grouped.remove(&id).expect("grouped by construction"))
        .collect();
    for d in &dialogs {
        d.validate()?;
    }
    Ok(dialogs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_posterior() -> Posterior {
        Posterior([0.25; 4])
    }

    fn seeded_dialog(seed: u64, len: usize) -> DialogPosteriors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..len)
            .map(|u| {
                let mut p = [0.0f64; 4];
                let mut sum = 0.0;
                for v in &mut p {
                    *v = rng.gen_range(0.01..1.0);
                    sum += *v;
                }
                p.iter_mut().for_each(|v| *v /= sum);
                (format!("u{u}"), Posterior(p))
            })
            .collect();
        DialogPosteriors {
            dialog_id: format!("d{seed}"),
            rows,
            gold: None,
        }
    }

    #[test]
    fn single_utterance_without_history_weight_scores_log_posterior() {
        let dp = DialogPosteriors {
            dialog_id: "d".into(),
            rows: vec![("u".into(), Posterior([0.7, 0.1, 0.1, 0.1]))],
            gold: None,
        };
        let cfg = DedConfig {
            lambda_history: 0.0,
            ..DedConfig::default()
        };
        let s = score_assignment(&dp, &[0], &cfg).unwrap();
        assert!((s - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pure_likelihood_when_both_weights_vanish() {
        let dp = seeded_dialog(3, 5);
        let cfg = DedConfig {
            lambda_history: 0.0,
            shift_penalty: 0.0,
            ..DedConfig::default()
        };
        let labels = [2, 0, 3, 1, 2];
        let s = score_assignment(&dp, &labels, &cfg).unwrap();
        let expect: f64 = labels
            .iter()
            .zip(&dp.rows)
            .map(|(&l, (_, p))| p.probs()[l].ln())
            .sum();
        assert!((s - expect).abs() < 1e-12);
    }

    // Dual-implementation oracle: a deliberately naive scorer that
    // recounts the history prefix from scratch at every step.
    #[test]
    fn matches_independent_naive_scorer() {
        let dp = seeded_dialog(7, 3);
        let cfg = DedConfig::default();
        for labels in [[0usize, 1, 1], [2, 2, 2], [3, 0, 3], [1, 2, 3]] {
            let fast = score_assignment(&dp, &labels, &cfg).unwrap();
            let mut naive = 0.0;
            for t in 0..labels.len() {
                let p = dp.rows[t].1.probs()[labels[t]].max(f64::EPSILON).ln();
                let count = labels[..t].iter().filter(|&&l| l == labels[t]).count() as f64;
                let hist = ((count + cfg.history_smoothing)
                    / (t as f64 + 4.0 * cfg.history_smoothing))
                    .ln();
                let shift = if t > 0 && labels[t] != labels[t - 1] {
                    cfg.shift_penalty
                } else {
                    0.0
                };
                naive += p + cfg.lambda_history * hist - shift;
            }
            assert!((fast - naive).abs() < 1e-12, "labels {labels:?}");
        }
    }

    #[test]
    fn score_is_prefix_decomposable() {
        let dp = seeded_dialog(11, 6);
        let cfg = DedConfig::default();
        let labels = [0, 2, 2, 1, 3, 2];
        // Score of each prefix equals the sum of that prefix's per-step
        // contributions regardless of what follows.
        for t in 1..=labels.len() {
            let prefix_dp = DialogPosteriors {
                dialog_id: dp.dialog_id.clone(),
                rows: dp.rows[..t].to_vec(),
                gold: None,
            };
            let prefix = score_assignment(&prefix_dp, &labels[..t], &cfg).unwrap();
            let full = score_assignment(&dp, &labels, &cfg).unwrap();
            let suffix: f64 = {
                // Recompute the suffix contribution with running counts.
                let mut counts = [0u32; 4];
                for &l in &labels[..t] {
                    counts[l] += 1;
                }
                let mut s = 0.0;
                let mut prev = Some(labels[t - 1]);
                for (off, &l) in labels[t..].iter().enumerate() {
                    s += step_score(&dp.rows[t + off].1, l, &counts, prev, t + off, &cfg);
                    counts[l] += 1;
                    prev = Some(l);
                }
                s
            };
            assert!((prefix + suffix - full).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let dp = seeded_dialog(1, 3);
        assert!(score_assignment(&dp, &[0, 1], &DedConfig::default()).is_err());
        assert!(score_assignment(&dp, &[0, 1, 9], &DedConfig::default()).is_err());
    }

    #[test]
    fn decoder_collapses_to_argmax_without_history_and_shift() {
        let cfg = DedConfig {
            lambda_history: 0.0,
            shift_penalty: 0.0,
            ..DedConfig::default()
        };
        for seed in 0..10 {
            let dp = seeded_dialog(seed, 7);
            let dec = decode(&dp, &cfg).unwrap();
            let argmax: Vec<usize> = dp.rows.iter().map(|(_, p)| p.argmax()).collect();
            assert_eq!(dec.labels, argmax, "seed {seed}");
        }
    }

    #[test]
    fn uniform_posteriors_decode_to_one_constant_class() {
        let dp = DialogPosteriors {
            dialog_id: "d".into(),
            rows: (0..6)
                .map(|u| (format!("u{u}"), uniform_posterior()))
                .collect(),
            gold: None,
        };
        let dec = decode(&dp, &DedConfig::default()).unwrap();
        assert_eq!(dec.labels, vec![0; 6]);
    }

    #[test]
    fn beam_matches_brute_force_on_short_dialogs() {
        let cfg = DedConfig {
            beam_width: 65_536,
            ..DedConfig::default()
        };
        for seed in 0..40 {
            let len = 1 + (seed as usize % 8);
            let dp = seeded_dialog(seed, len);
            let beam = decode(&dp, &cfg).unwrap();
            let brute = brute_force_decode(&dp, &cfg).unwrap();
            assert_eq!(beam.labels, brute.labels, "seed {seed}");
            assert!((beam.total_score - brute.total_score).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_respects_the_enumeration_cap() {
        let dp = seeded_dialog(0, 11);
        assert!(brute_force_decode(&dp, &DedConfig::default()).is_err());
        let one = seeded_dialog(5, 1);
        let dec = brute_force_decode(&one, &DedConfig::default()).unwrap();
        assert_eq!(dec.labels, vec![one.rows[0].1.argmax()]);
    }

    #[test]
    fn eight_step_enumeration_completes() {
        let dp = seeded_dialog(21, 8);
        let dec = brute_force_decode(&dp, &DedConfig::default()).unwrap();
        assert_eq!(dec.labels.len(), 8);
        assert!(dec.labels.iter().all(|&l| l < 4));
        assert_eq!(dec.per_step_scores.len(), 8);
        assert!((dec.per_step_scores.iter().sum::<f64>() - dec.total_score).abs() < 1e-9);
    }

    #[test]
    fn perfect_confident_classifier_survives_decoding() {
        let points = ded_gain_study_with(&[1.0], 30, 5, &DedConfig::default(), 0.9).unwrap();
        assert_eq!(points[0].raw_wa, 1.0);
        assert_eq!(points[0].ded_wa, 1.0);
    }

    #[test]
    fn decoding_helps_a_decent_classifier() {
        let mut raw = 0.0;
        let mut ded = 0.0;
        for seed in 0..50 {
            let p = ded_gain_study(&[0.75], 20, seed, &DedConfig::default()).unwrap();
            raw += p[0].raw_wa;
            ded += p[0].ded_wa;
        }
        assert!(
            ded >= raw,
            "decoded {} vs raw {} over 50 seeds",
            ded / 50.0,
            raw / 50.0
        );
    }

    #[test]
    fn grouping_preserves_stream_order() {
        let records = vec![
            PosteriorRecord {
                dialog_id: "b".into(),
                utterance_id: "b0".into(),
                posterior: [0.25; 4],
                gold: Some(1),
                decoded_label: None,
                score: None,
            },
            PosteriorRecord {
                dialog_id: "a".into(),
                utterance_id: "a0".into(),
                posterior: [0.25; 4],
                gold: None,
                decoded_label: None,
                score: None,
            },
            PosteriorRecord {
                dialog_id: "b".into(),
                utterance_id: "b1".into(),
                posterior: [0.25; 4],
                gold: Some(2),
                decoded_label: None,
                score: None,
            },
        ];
        let dialogs = group_records(&records).unwrap();
        assert_eq!(dialogs.len(), 2);
        assert_eq!(dialogs[0].dialog_id, "b");
        assert_eq!(dialogs[0].rows[1].0, "b1");
        assert_eq!(dialogs[0].gold, Some(vec![1, 2]));
        assert_eq!(dialogs[1].gold, None);
    }
}
