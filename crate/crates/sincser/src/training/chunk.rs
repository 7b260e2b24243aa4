//! Random chunk extraction with optional energy-based selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::mix_seed;

/// How chunks are cut from an utterance's waveform.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkPolicy {
    pub chunk_ms: f64,
    /// Prefer windows whose RMS clears the signal's energy quantile.
    pub energy_filter: bool,
    /// Quantile of the 25 ms sub-window RMS distribution used as the
    /// acceptance threshold.
    pub energy_quantile: f64,
    pub seed: u64,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            chunk_ms: 250.0,
            energy_filter: true,
            energy_quantile: 0.5,
            seed: 0,
        }
    }
}

impl ChunkPolicy {
    pub fn chunk_samples(&self, sample_rate: f64) -> usize {
        (self.chunk_ms / 1000.0 * sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_ms <= 0.0 {
            return Err(Error::InvalidArgument("chunk_ms must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.energy_quantile) {
            return Err(Error::InvalidArgument(
                "energy_quantile must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

const ENERGY_WINDOW_MS: f64 = 25.0;
const MAX_DRAWS: usize = 32;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Cuts one chunk. With the energy filter on, candidate windows are drawn
/// until one's RMS clears the signal's windowed-RMS quantile; after
/// `MAX_DRAWS` misses the highest-RMS candidate wins. `stream`
/// distinguishes independent draws under one policy seed, so the whole
/// procedure is deterministic.
pub fn sample_chunk(
    signal: &[f64],
    policy: &ChunkPolicy,
    sample_rate: f64,
    stream: u64,
) -> Result<Vec<f64>> {
    policy.validate()?;
    let n = policy.chunk_samples(sample_rate);
    if signal.len() < n {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than the {n}-sample chunk; need at least {n}",
            signal.len()
        )));
    }
    if signal.len() == n {
        return Ok(signal.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(policy.seed, stream));
    let max_offset = signal.len() - n;
    if !policy.energy_filter {
        let offset = rng.gen_range(0..=max_offset);
        return Ok(signal[offset..offset + n].to_vec());
    }

    // Threshold: the requested quantile of RMS over 25 ms sub-windows.
    let w = ((ENERGY_WINDOW_MS / 1000.0 * sample_rate).round() as usize).max(1);
    let mut window_rms: Vec<f64> = signal.chunks(w).filter(|c| !c.is_empty()).map(rms).collect();
    window_rms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((window_rms.len() - 1) as f64 * policy.energy_quantile).floor() as usize;
    let threshold = window_rms[rank];

    let mut best: Option<(f64, usize)> = None;
    for _ in 0..MAX_DRAWS {
        let offset = rng.gen_range(0..=max_offset);
        let candidate = &signal[offset..offset + n];
        let e = rms(candidate);
        if e >= threshold {
            return Ok(candidate.to_vec());
        }
        if best.map_or(true, |(b, _)| e > b) {
            best = Some((e, offset));
        }
    }
    let (_, offset) = best.expect("at least one draw");
    Ok(signal[offset..offset + n].to_vec())
}
