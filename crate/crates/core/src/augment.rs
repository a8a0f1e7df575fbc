//! Training-time augmentation.
//!
//! Signal-level transforms (shift, speed resampling, noise) run before
//! feature extraction; time/frequency masks run on the normalized features.
//! Every random choice comes from an explicit RNG so a fixed seed replays
//! the same augmentation.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_length, read_wav};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub enabled: bool,
    /// Probability with which each transform is applied to an example.
    pub probability: f64,
    pub time_shift_ms: (f64, f64),
    pub resample_factor: (f64, f64),
    pub background_volume: f64,
    pub time_mask_max: usize,
    pub freq_mask_max: usize,
    pub noise_snr_db: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: true,
            probability: 0.5,
            time_shift_ms: (-100.0, 100.0),
            resample_factor: (0.85, 1.15),
            background_volume: 0.1,
            time_mask_max: 25,
            freq_mask_max: 7,
            noise_snr_db: vec![15.0, 10.0, 8.0, 5.0],
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        AugmentPolicy {
            enabled: false,
            ..AugmentPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augment policy: {m}")));
        if !(0.0..=1.0).contains(&self.probability) {
            return bad("probability must be in [0, 1]");
        }
        if !(self.time_shift_ms.0 <= self.time_shift_ms.1) {
            return bad("empty time shift range");
        }
        let (lo, hi) = self.resample_factor;
        if !(lo > 0.0 && lo <= hi) {
            return bad("resample range must be positive and nonempty");
        }
        if !(self.background_volume >= 0.0 && self.background_volume.is_finite()) {
            return bad("background volume must be finite and nonnegative");
        }
        if self.noise_snr_db.iter().any(|s| !s.is_finite()) {
            return bad("SNRs must be finite");
        }
        Ok(())
    }

    /// True when signal-level transforms may change the audio.
    pub fn touches_signal(&self) -> bool {
        self.enabled && self.probability > 0.0
    }
}

/// Delay (positive) or advance (negative) by `shift_ms`, filling with zeros.
pub fn time_shift(samples: &[f64], shift_ms: f64, sample_rate: u32) -> Vec<f64> {
    let n = samples.len();
    let shift = (shift_ms * sample_rate as f64 / 1000.0).round() as i64;
    let mut out = vec![0.0; n];
    if shift.unsigned_abs() as usize >= n {
        return out;
    }
    if shift >= 0 {
        let s = shift as usize;
        out[s..].copy_from_slice(&samples[..n - s]);
    } else {
        let s = (-shift) as usize;
        out[..n - s].copy_from_slice(&samples[s..]);
    }
    out
}

/// Linear-interpolation speed change: output sample `i` reads input position `i * factor`.
pub fn resample_raw(samples: &[f64], factor: f64) -> Vec<f64> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    if factor == 1.0 {
        return samples.to_vec();
    }
    let out_len = (n as f64 / factor).floor() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            if j + 1 < n {
                samples[j] * (1.0 - frac) + samples[j + 1] * frac
            } else {
                samples[n - 1]
            }
        })
        .collect()
}

/// [`resample_raw`] followed by symmetric pad/crop back to the input length.
pub fn resample_speed(samples: &[f64], factor: f64) -> Vec<f64> {
    fit_length(&resample_raw(samples, factor), samples.len())
}

pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// `noise` cycled from `offset` to cover `len` samples.
fn noise_segment(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub samples: Vec<f64>,
    /// Set when the clean signal had zero power and was returned unchanged.
    pub silent_signal: bool,
}

/// Add `noise` scaled so the signal-to-noise ratio equals `snr_db`, then clip.
pub fn mix_noise(samples: &[f64], noise: &[f64], snr_db: f64, offset: usize) -> Result<MixOutcome> {
    if noise.is_empty() || power(noise) == 0.0 {
        return Err(Error::Config("noise buffer has zero power".into()));
    }
    let p_signal = power(samples);
    if p_signal == 0.0 {
        return Ok(MixOutcome {
            samples: samples.to_vec(),
            silent_signal: true,
        });
    }
    let segment = noise_segment(noise, samples.len(), offset);
    let gain = (p_signal / (power(&segment) * 10f64.powf(snr_db / 10.0))).sqrt();
    let out = samples
        .iter()
        .zip(&segment)
        .map(|(s, n)| (s + gain * n).clamp(-1.0, 1.0))
        .collect();
    Ok(MixOutcome {
        samples: out,
        silent_signal: false,
    })
}

/// Add `noise` at a fixed amplitude scale (background filler), then clip.
pub fn add_background(samples: &[f64], noise: &[f64], volume: f64, offset: usize) -> Vec<f64> {
    if noise.is_empty() {
        return samples.to_vec();
    }
    let segment = noise_segment(noise, samples.len(), offset);
    samples
        .iter()
        .zip(&segment)
        .map(|(s, n)| (s + volume * n).clamp(-1.0, 1.0))
        .collect()
}

/// Row band `[start, start + width)` and column band of a spectrogram mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskBands {
    pub time: (usize, usize),
    pub freq: (usize, usize),
}

pub fn apply_mask(values: &mut Array2<f64>, bands: MaskBands, fill: f64) {
    let (t_start, t_width) = bands.time;
    let (f_start, f_width) = bands.freq;
    for t in t_start..(t_start + t_width).min(values.nrows()) {
        values.row_mut(t).fill(fill);
    }
    for f in f_start..(f_start + f_width).min(values.ncols()) {
        values.column_mut(f).fill(fill);
    }
}

/// Draw one time band of width `U[0, time_max]` and one frequency band of width `U[0, freq_max]`.
pub fn draw_mask<R: Rng>(frames: usize, dims: usize, time_max: usize, freq_max: usize, rng: &mut R) -> MaskBands {
    let mut band = |len: usize, max: usize| {
        let width = rng.random_range(0..=max.min(len));
        let start = rng.random_range(0..=len - width);
        (start, width)
    };
    let time = band(frames, time_max);
    let freq = band(dims, freq_max);
    MaskBands { time, freq }
}

/// Mask one time band and one frequency band with `fill` (0 for normalized features).
pub fn spec_mask<R: Rng>(
    values: &Array2<f64>,
    time_max: usize,
    freq_max: usize,
    fill: f64,
    rng: &mut R,
) -> Array2<f64> {
    let bands = draw_mask(values.nrows(), values.ncols(), time_max, freq_max, rng);
    let mut out = values.clone();
    apply_mask(&mut out, bands, fill);
    out
}

/// Loads every 16-bit mono WAV in `dir` (non-recursive) at `sample_rate`.
pub fn load_noise_dir(dir: &Path, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut pool = Vec::new();
    for p in paths {
        let (s, sr) = read_wav(&p)?;
        if sr != sample_rate {
            return Err(Error::Config(format!(
                "noise file {} has rate {sr}, expected {sample_rate}",
                p.display()
            )));
        }
        if power(&s) > 0.0 {
            pool.push(s);
        }
    }
    Ok(pool)
}

/// Policy plus optional noise pool.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    pub policy: AugmentPolicy,
    pub noise_pool: Vec<Vec<f64>>,
}

impl Augmenter {
    pub fn new(policy: AugmentPolicy, noise_pool: Vec<Vec<f64>>) -> Result<Self> {
        policy.validate()?;
        Ok(Augmenter { policy, noise_pool })
    }

    fn coin<R: Rng>(&self, rng: &mut R) -> bool {
        self.policy.enabled && rng.random::<f64>() < self.policy.probability
    }

    /// Signal transforms; output has the input's length and lies in `[-1, 1]`.
    pub fn apply_signal<R: Rng>(&self, samples: &[f64], sample_rate: u32, rng: &mut R) -> Vec<f64> {
        let p = &self.policy;
        let mut x = samples.to_vec();
        if self.coin(rng) {
            let ms = rng.random_range(p.time_shift_ms.0..=p.time_shift_ms.1);
            x = time_shift(&x, ms, sample_rate);
        }
        if self.coin(rng) {
            let f = rng.random_range(p.resample_factor.0..=p.resample_factor.1);
            x = resample_speed(&x, f);
        }
        if !self.noise_pool.is_empty() {
            if self.coin(rng) && !p.noise_snr_db.is_empty() {
                let noise = &self.noise_pool[rng.random_range(0..self.noise_pool.len())];
                let snr = p.noise_snr_db[rng.random_range(0..p.noise_snr_db.len())];
                let offset = rng.random_range(0..noise.len());
                if let Ok(mix) = mix_noise(&x, noise, snr, offset) {
                    x = mix.samples;
                }
            }
            if self.coin(rng) {
                let noise = &self.noise_pool[rng.random_range(0..self.noise_pool.len())];
                let volume = rng.random_range(0.0..=p.background_volume);
                let offset = rng.random_range(0..noise.len());
                x = add_background(&x, noise, volume, offset);
            }
        }
        for v in &mut x {
            *v = v.clamp(-1.0, 1.0);
        }
        x
    }

    /// Time/frequency masking of normalized features (fill value 0).
    pub fn apply_spectral<R: Rng>(&self, values: &mut Array2<f64>, rng: &mut R) {
        if self.coin(rng) {
            let bands = draw_mask(
                values.nrows(),
                values.ncols(),
                self.policy.time_mask_max,
                self.policy.freq_mask_max,
                rng,
            );
            apply_mask(values, bands, 0.0);
        }
    }
}
