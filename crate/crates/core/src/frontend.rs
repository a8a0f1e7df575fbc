//! MFCC front end with per-warp filterbanks.
//!
//! pre-emphasis -> framing -> Hamming -> |rFFT|^2 -> (warped) mel filterbank
//! -> log with floor -> orthonormal DCT-II.
//!
//! Framing and the power spectrum do not depend on the warp factor, so
//! [`Frontend::extract_all_warps`] computes them once and only repeats the
//! filterbank/log/DCT stage per factor.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::Utterance;
use crate::error::{Error, Result};
use crate::warp::{build_mel_filterbank, build_warped_filterbank, MelFilterbank, WarpConfig, WarpFactor, WarpGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSpec {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub pre_emphasis: f64,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub log_floor: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            sample_rate: 16_000,
            window_ms: 30.0,
            hop_ms: 10.0,
            n_fft: 512,
            pre_emphasis: 0.97,
            n_filters: 40,
            n_ceps: 40,
            log_floor: 1e-10,
        }
    }
}

impl FrameSpec {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// `1 + floor((n - W) / H)`, or `None` when the signal is shorter than a window.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        let (w, h) = (self.window_samples(), self.hop_samples());
        (n_samples >= w).then(|| 1 + (n_samples - w) / h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("frame spec: {m}")));
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return bad(format!(
                "need window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            ));
        }
        if self.hop_samples() == 0 {
            return bad("hop shorter than one sample".into());
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < self.window_samples() {
            return bad(format!(
                "n_fft={} must be a power of two >= window ({} samples)",
                self.n_fft,
                self.window_samples()
            ));
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_filters {
            return bad(format!("n_ceps={} must be in 1..={}", self.n_ceps, self.n_filters));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// `T x D` features for one utterance. `alpha` is `None` for concatenated features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub id: String,
    pub alpha: Option<WarpFactor>,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One feature matrix per warp factor, iterated in ascending factor order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarpedFeatureSet {
    pub matrices: BTreeMap<WarpFactor, FeatureMatrix>,
}

impl WarpedFeatureSet {
    pub fn get(&self, alpha: WarpFactor) -> Option<&FeatureMatrix> {
        self.matrices.get(&alpha)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn factors(&self) -> Vec<WarpFactor> {
        self.matrices.keys().copied().collect()
    }
}

/// Per-frame concatenation in ascending-alpha order: `T x (D * #alpha)`.
pub fn concat_warps(set: &WarpedFeatureSet) -> Result<FeatureMatrix> {
    let first = set
        .matrices
        .values()
        .next()
        .ok_or_else(|| Error::Shape("cannot concatenate an empty feature set".into()))?;
    let (t, d) = first.values.dim();
    if let Some(bad) = set.matrices.values().find(|m| m.values.dim() != (t, d)) {
        return Err(Error::Shape(format!(
            "warp {:?} has shape {:?}, expected {:?}",
            bad.alpha.map(f64::from),
            bad.values.dim(),
            (t, d)
        )));
    }
    let views: Vec<ArrayView2<f64>> = set.matrices.values().map(|m| m.values.view()).collect();
    let values = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(FeatureMatrix {
        id: first.id.clone(),
        alpha: None,
        values,
    })
}

/// Inverse of [`concat_warps`] for a known grid.
pub fn split_concat(m: &FeatureMatrix, grid: &WarpGrid) -> Result<WarpedFeatureSet> {
    let n = grid.len();
    if !m.dim().is_multiple_of(n) {
        return Err(Error::Shape(format!(
            "{} columns do not split into {n} blocks",
            m.dim()
        )));
    }
    let d = m.dim() / n;
    let matrices = grid
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let block = m.values.slice(s![.., k * d..(k + 1) * d]).to_owned();
            (
                a,
                FeatureMatrix {
                    id: m.id.clone(),
                    alpha: Some(a),
                    values: block,
                },
            )
        })
        .collect();
    Ok(WarpedFeatureSet { matrices })
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (i as f64 + 0.5) / n).cos()
    })
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Reusable MFCC extractor. Shared read-only across threads.
pub struct Frontend {
    spec: FrameSpec,
    cfg: WarpConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    dct: Array2<f64>,
    unwarped: MelFilterbank,
    warped: BTreeMap<WarpFactor, MelFilterbank>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend")
            .field("spec", &self.spec)
            .field("cfg", &self.cfg)
            .field("warps", &self.warped.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Frontend {
    /// Builds filterbanks for every factor in `grid` up front.
    pub fn new(spec: FrameSpec, cfg: WarpConfig, grid: &WarpGrid) -> Result<Self> {
        spec.validate()?;
        let unwarped = build_mel_filterbank(&cfg, spec.n_filters, spec.n_fft, spec.sample_rate)?;
        let warped = grid
            .iter()
            .map(|a| build_warped_filterbank(a, &cfg, spec.n_filters, spec.n_fft, spec.sample_rate).map(|fb| (a, fb)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Frontend {
            spec,
            cfg,
            window: hamming(spec.window_samples()),
            fft: FftPlanner::new().plan_fft_forward(spec.n_fft),
            dct: dct_matrix(spec.n_ceps, spec.n_filters),
            unwarped,
            warped,
        })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn warp_config(&self) -> &WarpConfig {
        &self.cfg
    }

    pub fn filterbank(&self, alpha: WarpFactor) -> Result<std::borrow::Cow<'_, MelFilterbank>> {
        match self.warped.get(&alpha) {
            Some(fb) => Ok(std::borrow::Cow::Borrowed(fb)),
            None => build_warped_filterbank(
                alpha,
                &self.cfg,
                self.spec.n_filters,
                self.spec.n_fft,
                self.spec.sample_rate,
            )
            .map(std::borrow::Cow::Owned),
        }
    }

    fn check_utterance(&self, u: &Utterance) -> Result<()> {
        if u.sample_rate != self.spec.sample_rate {
            return Err(Error::Config(format!(
                "{}: sample rate {} does not match front end rate {}",
                u.id, u.sample_rate, self.spec.sample_rate
            )));
        }
        Ok(())
    }

    /// `T x (n_fft/2 + 1)` power spectra of the pre-emphasised, windowed frames.
    pub fn power_frames(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let w = self.spec.window_samples();
        let h = self.spec.hop_samples();
        let t = self.spec.frame_count(samples.len()).ok_or(Error::SignalTooShort {
            samples: samples.len(),
            window: w,
        })?;
        let pre = self.spec.pre_emphasis;
        let emphasized: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == 0 { x } else { x - pre * samples[i - 1] })
            .collect();

        let n_fft = self.spec.n_fft;
        let n_bins = n_fft / 2 + 1;
        let mut power = Array2::<f64>::zeros((t, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (frame, mut row) in power.rows_mut().into_iter().enumerate() {
            let start = frame * h;
            for (i, c) in buf.iter_mut().enumerate() {
                let re = if i < w {
                    emphasized[start + i] * self.window[i]
                } else {
                    0.0
                };
                *c = Complex::new(re, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in row.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
        }
        Ok(power)
    }

    /// Log mel energies through `fb`, then DCT.
    pub fn cepstra(&self, power: &Array2<f64>, fb: &MelFilterbank) -> Array2<f64> {
        let floor = self.spec.log_floor;
        let mel = power.dot(&fb.weights.t()).mapv(|e| e.max(floor).ln());
        mel.dot(&self.dct.t())
    }

    pub fn extract_mfcc(&self, u: &Utterance, alpha: WarpFactor) -> Result<FeatureMatrix> {
        self.check_utterance(u)?;
        let power = self.power_frames(&u.samples)?;
        let fb = self.filterbank(alpha)?;
        Ok(FeatureMatrix {
            id: u.id.clone(),
            alpha: Some(alpha),
            values: self.cepstra(&power, &fb),
        })
    }

    /// Pipeline with the plain mel filterbank; equals `extract_mfcc` at alpha = 1.
    pub fn extract_unwarped(&self, u: &Utterance) -> Result<FeatureMatrix> {
        self.check_utterance(u)?;
        let power = self.power_frames(&u.samples)?;
        Ok(FeatureMatrix {
            id: u.id.clone(),
            alpha: Some(WarpFactor::ONE),
            values: self.cepstra(&power, &self.unwarped),
        })
    }

    pub fn extract_all_warps(&self, u: &Utterance, grid: &WarpGrid) -> Result<WarpedFeatureSet> {
        self.check_utterance(u)?;
        let power = self.power_frames(&u.samples)?;
        let matrices = grid
            .iter()
            .map(|a| {
                let fb = self.filterbank(a)?;
                Ok((
                    a,
                    FeatureMatrix {
                        id: u.id.clone(),
                        alpha: Some(a),
                        values: self.cepstra(&power, &fb),
                    },
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(WarpedFeatureSet { matrices })
    }
}

const VARIANCE_FLOOR: f64 = 1e-8;

/// Running first and second moments per coefficient.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    sum: Option<Array1<f64>>,
    sum_sq: Option<Array1<f64>>,
    count: usize,
}

impl StatsAccumulator {
    pub fn frames(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, m: &Array2<f64>) -> Result<()> {
        let s = self.sum.get_or_insert_with(|| Array1::zeros(m.ncols()));
        if m.ncols() != s.len() {
            return Err(Error::Shape(format!(
                "stats over mixed dims {} and {}",
                s.len(),
                m.ncols()
            )));
        }
        *s += &m.sum_axis(Axis(0));
        let q = self.sum_sq.get_or_insert_with(|| Array1::zeros(m.ncols()));
        *q += &m.mapv(|v| v * v).sum_axis(Axis(0));
        self.count += m.nrows();
        Ok(())
    }

    pub fn finish(self) -> Result<FeatureStats> {
        let (sum, sum_sq) = match (self.sum, self.sum_sq) {
            (Some(s), Some(q)) if self.count > 0 => (s, q),
            _ => return Err(Error::Shape("no frames to compute statistics from".into())),
        };
        let n = self.count as f64;
        let mean = &sum / n;
        let var = (&sum_sq / n - &mean * &mean).mapv(|v| v.max(VARIANCE_FLOOR));
        Ok(FeatureStats {
            mean: mean.to_vec(),
            std: var.mapv(f64::sqrt).to_vec(),
        })
    }
}

/// Per-coefficient mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        FeatureStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pools every frame of every matrix.
    pub fn compute<'a, I>(matrices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Array2<f64>>,
    {
        let mut acc = StatsAccumulator::default();
        for m in matrices {
            acc.add(m)?;
        }
        acc.finish()
    }

    pub fn normalize_in_place(&self, values: &mut Array2<f64>) -> Result<()> {
        if values.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "features have {} dims, stats have {}",
                values.ncols(),
                self.dim()
            )));
        }
        for mut row in values.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    pub fn normalize(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = m.clone();
        self.normalize_in_place(&mut out.values)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::KeywordLabel;
    use crate::warp::default_grid;

    fn utt(samples: Vec<f64>) -> Utterance {
        Utterance {
            id: "k/x.wav".into(),
            samples,
            sample_rate: 16000,
            label: KeywordLabel {
                index: 0,
                name: "k".into(),
            },
        }
    }

    fn chirp() -> Utterance {
        utt((0..16000)
            .map(|n| {
                let t = n as f64 / 16000.0;
                0.3 * (2.0 * PI * (200.0 + 1500.0 * t) * t).sin() + 0.05 * (2.0 * PI * 3100.0 * t).sin()
            })
            .collect())
    }

    fn frontend() -> Frontend {
        Frontend::new(FrameSpec::default(), WarpConfig::default(), &default_grid()).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let spec = FrameSpec::default();
        assert_eq!(spec.window_samples(), 480);
        assert_eq!(spec.hop_samples(), 160);
        assert_eq!(spec.frame_count(16000), Some(98));
        assert_eq!(spec.frame_count(479), None);
        let m = frontend().extract_mfcc(&chirp(), WarpFactor::ONE).unwrap();
        assert_eq!(m.values.dim(), (98, 40));
        assert!(m.is_finite());
    }

    #[test]
    fn frame_count_formula() {
        let spec = FrameSpec::default();
        for n in [480, 481, 639, 640, 641, 16000, 17001] {
            assert_eq!(spec.frame_count(n), Some(1 + (n - 480) / 160));
        }
    }

    #[test]
    fn silence_gives_constant_frames() {
        let m = frontend()
            .extract_mfcc(&utt(vec![0.0; 16000]), WarpFactor::ONE)
            .unwrap();
        let first = m.values.row(0).to_owned();
        assert!(m.values.rows().into_iter().all(|r| r == first));
        assert!(m.is_finite());
    }

    #[test]
    fn identity_warp_equals_unwarped() {
        let f = frontend();
        let u = chirp();
        let a = f.extract_mfcc(&u, WarpFactor::ONE).unwrap();
        let b = f.extract_unwarped(&u).unwrap();
        let diff = (&a.values - &b.values).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff <= 1e-10);
    }

    #[test]
    fn short_signal_rejected() {
        let err = frontend()
            .extract_mfcc(&utt(vec![0.0; 100]), WarpFactor::ONE)
            .unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { .. }));
    }

    #[test]
    fn all_warps_share_shape_and_keys() {
        let f = frontend();
        let set = f.extract_all_warps(&chirp(), &default_grid()).unwrap();
        assert_eq!(set.len(), 21);
        assert_eq!(set.factors(), default_grid().factors());
        assert!(set.matrices.values().all(|m| m.values.dim() == (98, 40)));

        let other = f.extract_all_warps(&utt(vec![0.01; 16000]), &default_grid()).unwrap();
        assert_eq!(other.factors(), set.factors());

        let single = f
            .extract_all_warps(&chirp(), &WarpGrid::singleton(WarpFactor::ONE))
            .unwrap();
        assert_eq!(
            single.get(WarpFactor::ONE).unwrap(),
            &f.extract_mfcc(&chirp(), WarpFactor::ONE).unwrap()
        );
    }

    #[test]
    fn concat_blocks_and_split() {
        let f = frontend();
        let grid = default_grid();
        let set = f.extract_all_warps(&chirp(), &grid).unwrap();
        let cat = concat_warps(&set).unwrap();
        assert_eq!(cat.values.dim(), (98, 840));
        for (k, a) in grid.iter().enumerate() {
            let block = cat.values.slice(s![.., 40 * k..40 * (k + 1)]);
            assert_eq!(block, set.get(a).unwrap().values);
        }
        let back = split_concat(&cat, &grid).unwrap();
        assert_eq!(back, set);

        let single = f
            .extract_all_warps(&chirp(), &WarpGrid::singleton(WarpFactor::ONE))
            .unwrap();
        assert_eq!(
            concat_warps(&single).unwrap().values,
            single.get(WarpFactor::ONE).unwrap().values
        );
    }

    #[test]
    fn concat_rejects_ragged() {
        let mut set = WarpedFeatureSet::default();
        for (a, t) in [(0.9, 10), (1.0, 11)] {
            let a = WarpFactor::new(a).unwrap();
            set.matrices.insert(
                a,
                FeatureMatrix {
                    id: "x".into(),
                    alpha: Some(a),
                    values: Array2::zeros((t, 4)),
                },
            );
        }
        assert!(matches!(concat_warps(&set), Err(Error::Shape(_))));
        assert!(concat_warps(&WarpedFeatureSet::default()).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(40, 40);
        let eye = d.dot(&d.t());
        for ((i, j), v) in eye.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_stats() {
        let f = frontend();
        let a = f.extract_mfcc(&chirp(), WarpFactor::ONE).unwrap();
        let b = f.extract_mfcc(&utt(vec![0.01; 16000]), WarpFactor::ONE).unwrap();
        let stats = FeatureStats::compute([&a.values, &b.values]).unwrap();
        let na = stats.normalize(&a).unwrap();
        let nb = stats.normalize(&b).unwrap();
        let all = concatenate(Axis(0), &[na.values.view(), nb.values.view()]).unwrap();
        for m in all.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-6);
        }
        assert!(stats
            .normalize(&FeatureMatrix {
                id: "x".into(),
                alpha: None,
                values: Array2::zeros((2, 3))
            })
            .is_err());
    }

    #[test]
    fn constant_coefficient_maps_to_zero() {
        let m = Array2::from_shape_fn((5, 2), |(i, j)| if j == 0 { 3.0 } else { i as f64 });
        let stats = FeatureStats::compute([&m]).unwrap();
        let mut n = m.clone();
        stats.normalize_in_place(&mut n).unwrap();
        assert!(n.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_json_roundtrip() {
        let m = Array2::from_shape_fn((7, 3), |(i, j)| (i * 3 + j) as f64 * 0.1234567 - 1.0 / 3.0);
        let stats = FeatureStats::compute([&m]).unwrap();
        let back: FeatureStats = serde_json::from_str(&serde_json::to_string(&stats).unwrap()).unwrap();
        let mut x = m.clone();
        let mut y = m.clone();
        stats.normalize_in_place(&mut x).unwrap();
        back.normalize_in_place(&mut y).unwrap();
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn frame_spec_validation() {
        let mut spec = FrameSpec::default();
        spec.hop_ms = 40.0;
        assert!(spec.validate().is_err());
        let mut spec = FrameSpec::default();
        spec.n_fft = 256;
        assert!(spec.validate().is_err());
    }
}
