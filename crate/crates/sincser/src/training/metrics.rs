//! Confusion-matrix metrics: weighted accuracy, unweighted accuracy, and
//! sentence error rate.

use crate::error::{Error, Result};

/// 4x4 counts, rows = gold class, columns = predicted class.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new();
        for (gold, pred) in pairs {
            cm.record(gold, pred);
        }
        cm
    }

    pub fn record(&mut self, gold: usize, pred: usize) {
        self.counts[gold][pred] += 1;
    }

    pub fn counts(&self) -> &[[u64; 4]; 4] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gold_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn check_non_empty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::InvalidArgument(
                "metrics need a non-empty confusion matrix".into(),
            ));
        }
        Ok(())
    }
}

/// Overall fraction correct: trace over total.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_non_empty()?;
    let trace: u64 = (0..4).map(|i| cm.counts()[i][i]).sum();
    Ok(trace as f64 / cm.total() as f64)
}

/// Unweighted accuracy with the classes that had no gold instances listed
/// (they are excluded from the mean).
#[derive(Debug, Clone, PartialEq)]
pub struct UaReport {
    pub value: f64,
    pub excluded_classes: Vec<usize>,
}

/// Mean per-class recall over the classes that appear in the gold labels.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<UaReport> {
    cm.check_non_empty()?;
    let mut sum = 0.0;
    let mut n = 0;
    let mut excluded = Vec::new();
    for c in 0..4 {
        let gold = cm.gold_count(c);
        if gold == 0 {
            excluded.push(c);
            continue;
        }
        sum += cm.counts()[c][c] as f64 / gold as f64;
        n += 1;
    }
    Ok(UaReport {
        value: sum / n as f64,
        excluded_classes: excluded,
    })
}

/// Fraction of misclassified sentences; with one decision per sentence
/// this is exactly `1 - WA`.
pub fn sentence_error_rate(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(1.0 - weighted_accuracy(cm)?)
}
