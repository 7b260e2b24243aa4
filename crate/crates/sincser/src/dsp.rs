//! Sinc band-pass kernel math.
//!
//! A band-pass filter is the difference of two rectangular low-pass
//! prototypes; its time-domain kernel is
//!
//! ```text
//! g[n] = 2*F2*sinc(2*pi*F2*n) - 2*F1*sinc(2*pi*F1*n)
//! ```
//!
//! with `F1`, `F2` the cutoffs in cycles/sample and `sinc(x) = sin(x)/x`.
//! Each filter carries only the two raw cutoff parameters, so a bank of
//! `F` filters has `2F` learnable scalars regardless of kernel length.
//! Kernels are even-symmetric; everything here evaluates one side and
//! mirrors it, so the two halves are bitwise equal.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::par;

/// Default low-cutoff floor for the raw-parameter constraint, in Hz.
pub const DEFAULT_F_MIN_HZ: f64 = 30.0;
/// Default minimum passband width for the raw-parameter constraint, in Hz.
pub const DEFAULT_BAND_MIN_HZ: f64 = 50.0;
/// Default kernel length in samples at 16 kHz. Odd so the kernel has an
/// exact center tap.
pub const DEFAULT_KERNEL_LEN: usize = 251;

/// `sin(x)/x` with the continuous extension `sinc(0) = 1`.
///
/// The exact-zero check (rather than an epsilon offset) keeps the center
/// tap and its gradient exact.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Floor and minimum-width constants for [`constrain_cutoffs_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffLimits {
    pub f_min_hz: f64,
    pub band_min_hz: f64,
}

impl Default for CutoffLimits {
    fn default() -> Self {
        Self {
            f_min_hz: DEFAULT_F_MIN_HZ,
            band_min_hz: DEFAULT_BAND_MIN_HZ,
        }
    }
}

/// Raw learnable parameters of one band-pass filter.
///
/// `theta1` and `theta2` are unconstrained reals in Hz units;
/// [`constrain_cutoffs`] maps them to valid cutoffs with
/// `0 < f1 < f2 <= sample_rate / 2` for any finite values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SincFilterParams {
    pub theta1: f64,
    pub theta2: f64,
    pub sample_rate: f64,
    pub length: usize,
}

impl SincFilterParams {
    pub fn new(theta1: f64, theta2: f64, sample_rate: f64, length: usize) -> Self {
        Self {
            theta1,
            theta2,
            sample_rate,
            length,
        }
    }

    /// Constrained `(f1, f2)` in Hz under the default limits.
    pub fn cutoffs(&self) -> (f64, f64) {
        constrain_cutoffs(self)
    }
}

/// Maps raw parameters to valid cutoffs under the default limits.
pub fn constrain_cutoffs(p: &SincFilterParams) -> (f64, f64) {
    constrain_cutoffs_with(p, &CutoffLimits::default())
}

/// Absolute-value reparameterization of the cutoffs:
///
/// ```text
/// f1 = min(f_min + |theta1|, nyquist - band_min)
/// f2 = min(f1 + band_min + |theta2|, nyquist)
/// ```
///
/// Total on finite inputs and differentiable almost everywhere. The `f1`
/// clamp keeps `f1 < f2` even when `|theta1|` runs past Nyquist.
pub fn constrain_cutoffs_with(p: &SincFilterParams, limits: &CutoffLimits) -> (f64, f64) {
    let nyquist = p.sample_rate / 2.0;
    let f1 = (limits.f_min_hz + p.theta1.abs()).min(nyquist - limits.band_min_hz);
    let f2 = (f1 + limits.band_min_hz + p.theta2.abs()).min(nyquist);
    (f1, f2)
}

/// Jacobian of the constrained cutoffs with respect to the raw thetas,
/// as `[[df1/dt1, df1/dt2], [df2/dt1, df2/dt2]]`.
///
/// `|x|` uses its right derivative at zero so gradient flow survives a
/// parameter landing exactly on the floor; active clamps zero their rows.
pub fn cutoff_jacobian(p: &SincFilterParams, limits: &CutoffLimits) -> [[f64; 2]; 2] {
    let sgn = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
    let nyquist = p.sample_rate / 2.0;
    let f1_clamped = limits.f_min_hz + p.theta1.abs() >= nyquist - limits.band_min_hz;
    let f1 = (limits.f_min_hz + p.theta1.abs()).min(nyquist - limits.band_min_hz);
    let f2_clamped = f1 + limits.band_min_hz + p.theta2.abs() >= nyquist;
    let d1 = if f1_clamped { 0.0 } else { sgn(p.theta1) };
    if f2_clamped {
        [[d1, 0.0], [0.0, 0.0]]
    } else {
        [[d1, 0.0], [d1, sgn(p.theta2)]]
    }
}

/// Ideal magnitude response of the band-pass filter: the difference of two
/// rectangular low-passes, `rect(f/(2 f2)) - rect(f/(2 f1))`.
///
/// 1 inside the passband, 0 outside, 1/2 exactly at the band edges.
pub fn frequency_response(f1: f64, f2: f64, f: f64) -> f64 {
    rect(f / (2.0 * f2)) - rect(f / (2.0 * f1))
}

fn rect(t: f64) -> f64 {
    let a = t.abs();
    if a < 0.5 {
        1.0
    } else if a == 0.5 {
        0.5
    } else {
        0.0
    }
}

/// Symmetric Hamming window of odd or even length, values in `(0, 1]`.
pub fn hamming_window(length: usize) -> Vec<f64> {
    assert!(length >= 1, "window length must be positive");
    if length == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; length];
    let denom = (length - 1) as f64;
    // Evaluate one half and mirror so the window is bitwise symmetric.
    for i in 0..=(length - 1) / 2 {
        let v = 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos();
        w[i] = v;
        w[length - 1 - i] = v;
    }
    w
}

/// A materialized band-pass kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    /// Windowed taps, length `2 * center_index + 1`.
    pub coeffs: Vec<f64>,
    pub center_index: usize,
    /// Low cutoff in Hz.
    pub f1: f64,
    /// High cutoff in Hz.
    pub f2: f64,
}

fn check_odd_length(length: usize, window: &[f64]) -> Result<usize> {
    if length % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel length must be odd for exact symmetry, got {length}"
        )));
    }
    if window.len() != length {
        return Err(Error::Shape(format!(
            "window length {} does not match kernel length {}",
            window.len(),
            length
        )));
    }
    Ok((length - 1) / 2)
}

/// Builds the windowed kernel for explicit cutoffs in Hz.
///
/// Used by [`time_domain_kernel`] after the raw-parameter constraint, and
/// directly by code that perturbs cutoffs (finite differences, probes).
pub fn kernel_from_cutoffs(
    f1_hz: f64,
    f2_hz: f64,
    sample_rate: f64,
    length: usize,
    window: &[f64],
) -> Result<FilterKernel> {
    let c = check_odd_length(length, window)?;
    let fn1 = f1_hz / sample_rate;
    let fn2 = f2_hz / sample_rate;
    let mut coeffs = vec![0.0; length];
    coeffs[c] = window[c] * 2.0 * (fn2 - fn1);
    for n in 1..=c {
        let x = n as f64;
        let v = 2.0 * fn2 * sinc(2.0 * PI * fn2 * x) - 2.0 * fn1 * sinc(2.0 * PI * fn1 * x);
        let tap = window[c + n] * v;
        coeffs[c + n] = tap;
        coeffs[c - n] = tap;
    }
    Ok(FilterKernel {
        coeffs,
        center_index: c,
        f1: f1_hz,
        f2: f2_hz,
    })
}

/// Materializes the kernel for raw parameters: constrain, then evaluate
/// the windowed two-sided sinc difference.
pub fn time_domain_kernel(p: &SincFilterParams, window: &[f64]) -> Result<FilterKernel> {
    let (f1, f2) = constrain_cutoffs(p);
    kernel_from_cutoffs(f1, f2, p.sample_rate, p.length, window)
}

/// Partials of every kernel tap with respect to the *normalized* cutoffs
/// `(F1, F2)` in cycles/sample.
///
/// `d/dF [2F sinc(2 pi F n)] = 2 cos(2 pi F n)`, which is already exact at
/// `n = 0` where it equals 2.
pub fn kernel_grads_from_cutoffs(
    f1_hz: f64,
    f2_hz: f64,
    sample_rate: f64,
    length: usize,
    window: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = check_odd_length(length, window)?;
    let fn1 = f1_hz / sample_rate;
    let fn2 = f2_hz / sample_rate;
    let mut d1 = vec![0.0; length];
    let mut d2 = vec![0.0; length];
    d1[c] = -2.0 * window[c];
    d2[c] = 2.0 * window[c];
    for n in 1..=c {
        let x = n as f64;
        let g1 = -2.0 * (2.0 * PI * fn1 * x).cos() * window[c + n];
        let g2 = 2.0 * (2.0 * PI * fn2 * x).cos() * window[c + n];
        d1[c + n] = g1;
        d1[c - n] = g1;
        d2[c + n] = g2;
        d2[c - n] = g2;
    }
    Ok((d1, d2))
}

/// [`kernel_grads_from_cutoffs`] for raw parameters under the default
/// constraint.
pub fn kernel_param_gradients(
    p: &SincFilterParams,
    window: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (f1, f2) = constrain_cutoffs(p);
    kernel_grads_from_cutoffs(f1, f2, p.sample_rate, p.length, window)
}

/// Hz → mel, `mel(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// mel → Hz, inverse of [`hz_to_mel`].
pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Mel-equidistant adjacent bands partitioning `(f_min, Nyquist)`.
///
/// Raw thetas are chosen so the default constraint reproduces the band
/// edges exactly; bands narrower than the minimum width are floored, which
/// only happens for very large banks.
pub fn mel_spaced_init(num_filters: usize, sample_rate: f64) -> Result<Vec<SincFilterParams>> {
    mel_spaced_init_with(
        num_filters,
        sample_rate,
        DEFAULT_KERNEL_LEN,
        &CutoffLimits::default(),
    )
}

pub fn mel_spaced_init_with(
    num_filters: usize,
    sample_rate: f64,
    length: usize,
    limits: &CutoffLimits,
) -> Result<Vec<SincFilterParams>> {
    if num_filters == 0 {
        return Err(Error::InvalidArgument(
            "mel init needs at least one filter".into(),
        ));
    }
    let nyquist = sample_rate / 2.0;
    let mel_lo = hz_to_mel(limits.f_min_hz);
    let mel_hi = hz_to_mel(nyquist);
    let step = (mel_hi - mel_lo) / num_filters as f64;
    let mut out = Vec::with_capacity(num_filters);
    for i in 0..num_filters {
        let f1 = if i == 0 {
            limits.f_min_hz
        } else {
            mel_to_hz(mel_lo + step * i as f64)
        };
        let f2 = if i + 1 == num_filters {
            nyquist
        } else {
            mel_to_hz(mel_lo + step * (i + 1) as f64)
        };
        let theta1 = f1 - limits.f_min_hz;
        let theta2 = (f2 - f1 - limits.band_min_hz).max(0.0);
        out.push(SincFilterParams::new(theta1, theta2, sample_rate, length));
    }
    Ok(out)
}

/// An ordered bank of sinc filters sharing one window.
#[derive(Debug, Clone)]
pub struct SincBank {
    pub filters: Vec<SincFilterParams>,
    pub window: Vec<f64>,
}

impl SincBank {
    /// Builds a bank, checking that all filters share length and sample
    /// rate and that the window matches that length.
    pub fn new(filters: Vec<SincFilterParams>, window: Vec<f64>) -> Result<Self> {
        let first = filters
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty filter bank".into()))?;
        for f in &filters {
            if f.length != first.length || f.sample_rate != first.sample_rate {
                return Err(Error::InvalidArgument(
                    "all filters in a bank must share length and sample rate".into(),
                ));
            }
        }
        if window.len() != first.length {
            return Err(Error::Shape(format!(
                "window length {} does not match filter length {}",
                window.len(),
                first.length
            )));
        }
        Ok(Self { filters, window })
    }

    /// Mel-initialized bank with a Hamming window.
    pub fn mel_spaced(num_filters: usize, sample_rate: f64, length: usize) -> Result<Self> {
        let filters =
            mel_spaced_init_with(num_filters, sample_rate, length, &CutoffLimits::default())?;
        Self::new(filters, hamming_window(length))
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn kernel_length(&self) -> usize {
        self.window.len()
    }

    /// Materializes every kernel. Filters are independent, so this fans
    /// out when the `parallel` feature is on.
    pub fn materialize(&self) -> Result<Vec<FilterKernel>> {
        par::map_slice(&self.filters, |_, p| time_domain_kernel(p, &self.window))
            .into_iter()
            .collect()
    }
}

/// DTFT magnitude of a kernel sampled at `num_bins` frequencies spanning
/// `[0, Nyquist)`; returns `(freq_hz, magnitude)` pairs.
pub fn dft_magnitude(coeffs: &[f64], sample_rate: f64, num_bins: usize) -> Vec<(f64, f64)> {
    let nyquist = sample_rate / 2.0;
    (0..num_bins)
        .map(|k| {
            let f = nyquist * k as f64 / num_bins as f64;
            let w = 2.0 * PI * f / sample_rate;
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &h) in coeffs.iter().enumerate() {
                let phase = w * n as f64;
                re += h * phase.cos();
                im -= h * phase.sin();
            }
            (f, (re * re + im * im).sqrt())
        })
        .collect()
}

/// Fraction of a kernel's spectral energy (squared DTFT magnitude over
/// `[0, Nyquist)`) that falls inside the union of `bands`.
pub fn energy_fraction_in_bands(
    coeffs: &[f64],
    sample_rate: f64,
    bands: &[(f64, f64)],
    num_bins: usize,
) -> f64 {
    let spectrum = dft_magnitude(coeffs, sample_rate, num_bins);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (f, mag) in spectrum {
        let e = mag * mag;
        total += e;
        if bands.iter().any(|&(lo, hi)| f >= lo && f <= hi) {
            inside += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}
