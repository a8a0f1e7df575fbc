//! Vocal tract length warping of the frequency axis.
//!
//! The warp is piecewise linear: frequencies below the knee `f0` are scaled
//! by `alpha`, and the segment `[f0, f_m]` is stretched so that `f_m` stays
//! fixed. Warped MFCCs are produced by pushing the mel filter edge
//! frequencies through this map before the filters are laid onto FFT bins.

use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHA_MIN: f64 = 0.80;
pub const ALPHA_MAX: f64 = 1.20;
const ALPHA_TOL: f64 = 1e-9;

/// A VTL warping factor in `[0.80, 1.20]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct WarpFactor(f64);

impl WarpFactor {
    pub const ONE: WarpFactor = WarpFactor(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !(ALPHA_MIN - ALPHA_TOL..=ALPHA_MAX + ALPHA_TOL).contains(&alpha) {
            return Err(Error::WarpConfig(format!(
                "warp factor {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        Ok(WarpFactor(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    pub fn is_identity(self) -> bool {
        self.0 == 1.0
    }
}

impl Eq for WarpFactor {}

impl PartialOrd for WarpFactor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for WarpFactor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TryFrom<f64> for WarpFactor {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        WarpFactor::new(alpha)
    }
}

impl From<WarpFactor> for f64 {
    fn from(w: WarpFactor) -> f64 {
        w.0
    }
}

impl fmt::Display for WarpFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// Strictly increasing set of warp factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WarpFactor>", into = "Vec<WarpFactor>")]
pub struct WarpGrid(Vec<WarpFactor>);

impl WarpGrid {
    pub fn new(factors: Vec<WarpFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::WarpConfig("warp grid is empty".into()));
        }
        if factors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::WarpConfig("warp grid must be strictly increasing".into()));
        }
        Ok(WarpGrid(factors))
    }

    /// Grid `min, min + step, ..., max`, with values rounded to 1e-6 so that
    /// decimal grids land on exact decimal factors such as 1.00.
    pub fn from_range(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= min) {
            return Err(Error::WarpConfig(format!("bad grid range [{min}, {max}] step {step}")));
        }
        let span = (max - min) / step;
        let n = span.round();
        if (span - n).abs() > 1e-6 {
            return Err(Error::WarpConfig(format!("step {step} does not divide [{min}, {max}]")));
        }
        let factors = (0..=n as usize)
            .map(|i| WarpFactor::new(((min + i as f64 * step) * 1e6).round() / 1e6))
            .collect::<Result<Vec<_>>>()?;
        WarpGrid::new(factors)
    }

    pub fn singleton(alpha: WarpFactor) -> Self {
        WarpGrid(vec![alpha])
    }

    pub fn factors(&self) -> &[WarpFactor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, alpha: WarpFactor) -> bool {
        self.0.binary_search(&alpha).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = WarpFactor> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<WarpFactor>> for WarpGrid {
    type Error = Error;

    fn try_from(v: Vec<WarpFactor>) -> Result<Self> {
        WarpGrid::new(v)
    }
}

impl From<WarpGrid> for Vec<WarpFactor> {
    fn from(g: WarpGrid) -> Self {
        g.0
    }
}

/// The 21 factors 0.80, 0.82, ..., 1.20.
pub fn default_grid() -> WarpGrid {
    WarpGrid((0..21).map(|i| WarpFactor((80 + 2 * i) as f64 / 100.0)).collect())
}

/// Knee and upper limit of the piecewise-linear warp, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpConfig {
    pub f0_hz: f64,
    pub f_m_hz: f64,
}

impl WarpConfig {
    pub fn new(f0_hz: f64, f_m_hz: f64) -> Result<Self> {
        let cfg = WarpConfig { f0_hz, f_m_hz };
        cfg.check()?;
        Ok(cfg)
    }

    /// `f_m` given as a fraction of the Nyquist frequency.
    pub fn from_fraction(f0_hz: f64, fm_fraction_of_nyquist: f64, sample_rate: u32) -> Result<Self> {
        WarpConfig::new(f0_hz, fm_fraction_of_nyquist * sample_rate as f64 / 2.0)
    }

    fn check(&self) -> Result<()> {
        if !(self.f0_hz > 0.0 && self.f0_hz < self.f_m_hz && self.f_m_hz.is_finite()) {
            return Err(Error::WarpConfig(format!(
                "need 0 < f0 < f_m, got f0={} f_m={}",
                self.f0_hz, self.f_m_hz
            )));
        }
        if ALPHA_MAX * self.f0_hz >= self.f_m_hz {
            return Err(Error::WarpConfig(format!(
                "alpha*f0 must stay below f_m for every factor (f0={}, f_m={})",
                self.f0_hz, self.f_m_hz
            )));
        }
        Ok(())
    }

    pub fn check_nyquist(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.f_m_hz > nyquist {
            return Err(Error::WarpConfig(format!(
                "f_m={} exceeds Nyquist {nyquist}",
                self.f_m_hz
            )));
        }
        Ok(())
    }
}

impl Default for WarpConfig {
    /// 20 Hz knee, f_m at 85% of Nyquist for 16 kHz audio.
    fn default() -> Self {
        WarpConfig {
            f0_hz: 20.0,
            f_m_hz: 6800.0,
        }
    }
}

/// Piecewise-linear warp of `f` for `f` in `[0, f_m]`.
pub fn warp_frequency(alpha: WarpFactor, f: f64, cfg: &WarpConfig) -> Result<f64> {
    cfg.check()?;
    if !(0.0..=cfg.f_m_hz).contains(&f) {
        return Err(Error::FrequencyOutOfRange {
            freq: f,
            f_m: cfg.f_m_hz,
        });
    }
    Ok(warp_unchecked(alpha.alpha(), f, cfg))
}

/// Like [`warp_frequency`], but frequencies above `f_m` map to themselves.
pub fn warp_frequency_extended(alpha: WarpFactor, f: f64, cfg: &WarpConfig) -> Result<f64> {
    if f > cfg.f_m_hz {
        cfg.check()?;
        return Ok(f);
    }
    warp_frequency(alpha, f, cfg)
}

fn warp_unchecked(alpha: f64, f: f64, cfg: &WarpConfig) -> f64 {
    if alpha == 1.0 {
        return f;
    }
    let (f0, fm) = (cfg.f0_hz, cfg.f_m_hz);
    if f <= f0 {
        alpha * f
    } else {
        (fm - alpha * f0) / (fm - f0) * (f - f0) + alpha * f0
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters laid onto rFFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters x (n_fft / 2 + 1)`.
    pub weights: Array2<f64>,
    /// `n_filters + 2` edge frequencies in Hz; filter `k` spans edges `k..=k+2`.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }
}

/// Mel-spaced edge frequencies on `[0, f_m]` before any warping.
pub fn mel_edges(n_filters: usize, f_m_hz: f64) -> Vec<f64> {
    let top = hz_to_mel(f_m_hz);
    let n = n_filters + 1;
    let mut edges: Vec<f64> = (0..=n).map(|i| mel_to_hz(top * i as f64 / n as f64)).collect();
    edges[0] = 0.0;
    edges[n] = f_m_hz;
    edges
}

/// Unwarped mel filterbank over `[0, f_m]`.
pub fn build_mel_filterbank(
    cfg: &WarpConfig,
    n_filters: usize,
    n_fft: usize,
    sample_rate: u32,
) -> Result<MelFilterbank> {
    check_filterbank_args(cfg, n_filters, n_fft, sample_rate)?;
    rasterize(mel_edges(n_filters, cfg.f_m_hz), n_fft, sample_rate)
}

/// Mel filterbank whose edge frequencies have been warped by `alpha`.
pub fn build_warped_filterbank(
    alpha: WarpFactor,
    cfg: &WarpConfig,
    n_filters: usize,
    n_fft: usize,
    sample_rate: u32,
) -> Result<MelFilterbank> {
    check_filterbank_args(cfg, n_filters, n_fft, sample_rate)?;
    let edges = mel_edges(n_filters, cfg.f_m_hz)
        .into_iter()
        .map(|f| warp_frequency_extended(alpha, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    rasterize(edges, n_fft, sample_rate)
}

fn check_filterbank_args(cfg: &WarpConfig, n_filters: usize, n_fft: usize, sample_rate: u32) -> Result<()> {
    cfg.check()?;
    cfg.check_nyquist(sample_rate)?;
    if n_filters == 0 {
        return Err(Error::Filterbank("n_filters must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::Filterbank(format!("n_fft={n_fft} is not a power of two")));
    }
    Ok(())
}

fn rasterize(edges: Vec<f64>, n_fft: usize, sample_rate: u32) -> Result<MelFilterbank> {
    let n_filters = edges.len() - 2;
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Array2::<f64>::zeros((n_filters, n_bins));
    for k in 0..n_filters {
        let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        if !(lo < mid && mid < hi) {
            return Err(Error::Filterbank(format!(
                "filter {k} edges not increasing: {lo}, {mid}, {hi}"
            )));
        }
        let mut row = weights.row_mut(k);
        for (bin, w) in row.iter_mut().enumerate() {
            let f = bin as f64 * bin_hz;
            *w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Filterbank(format!(
                "filter {k} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer filters or a larger n_fft"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        edges_hz: edges,
    })
}
