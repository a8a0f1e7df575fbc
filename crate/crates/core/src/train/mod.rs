//! Training regimes: baseline (alpha = 1.00 only), VTL-independent (one
//! random warp per epoch, last epoch at 1.00) and VTL-concatenation.

mod optimizer;
mod trainer;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use optimizer::AdamW;
pub use trainer::{train, write_run_dir, EpochLog, TrainInputs, TrainRun};

use crate::error::{Error, Result};
use crate::seed;
use crate::warp::{WarpFactor, WarpGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "vtl-independent")]
    VtlIndependent,
    Baseline,
    Concat,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::VtlIndependent => "vtl_independent",
            Method::Baseline => "baseline",
            Method::Concat => "concat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the VTL-independent regime picks warps inside an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpSelection {
    /// One factor for the whole epoch.
    #[default]
    PerEpoch,
    /// A fresh factor for every batch (the final epoch still uses 1.00).
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub warmup_epochs: usize,
    /// Learning rate at epoch 0; the warmup ramps linearly from here to `lr_init`.
    pub warmup_start_lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Data order, warp schedule.
    pub seed_data: u64,
    /// Parameter initialization.
    pub seed_init: u64,
    pub warp_selection: WarpSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::VtlIndependent,
            epochs: 100,
            batch_size: 512,
            lr_init: 0.001,
            warmup_epochs: 10,
            warmup_start_lr: 0.0,
            weight_decay: 0.1,
            label_smoothing: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed_data: 0,
            seed_init: 42,
            warp_selection: WarpSelection::PerEpoch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup ({}) must be shorter than training ({} epochs)",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_init >= 0.0 && self.warmup_start_lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label smoothing must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Input used to train one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochInput {
    Warp(WarpFactor),
    Concat,
}

impl fmt::Display for EpochInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpochInput::Warp(a) => write!(f, "{a}"),
            EpochInput::Concat => f.write_str("concat"),
        }
    }
}

impl FromStr for EpochInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "concat" {
            return Ok(EpochInput::Concat);
        }
        let alpha: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("bad schedule entry '{s}'")))?;
        Ok(EpochInput::Warp(WarpFactor::new(alpha)?))
    }
}

/// Serialized as the warp factor (a number) or the string `"concat"`.
impl Serialize for EpochInput {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpochInput::Warp(a) => s.serialize_f64(a.alpha()),
            EpochInput::Concat => s.serialize_str("concat"),
        }
    }
}

impl<'de> Deserialize<'de> for EpochInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => WarpFactor::new(a)
                .map(EpochInput::Warp)
                .map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpSchedule {
    pub method: Method,
    pub entries: Vec<EpochInput>,
}

impl WarpSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-epoch inputs for `method`.
///
/// VTL-independent draws uniformly from `grid` for every epoch but the
/// last, which is pinned to 1.00 (the grid center).
pub fn make_warp_schedule(grid: &WarpGrid, epochs: usize, seed_data: u64, method: Method) -> Result<WarpSchedule> {
    if grid.is_empty() {
        return Err(Error::Config("warp grid is empty".into()));
    }
    if epochs == 0 {
        return Err(Error::Config("schedule needs at least one epoch".into()));
    }
    let entries = match method {
        Method::Baseline => vec![EpochInput::Warp(WarpFactor::ONE); epochs],
        Method::Concat => vec![EpochInput::Concat; epochs],
        Method::VtlIndependent => {
            if !grid.contains(WarpFactor::ONE) {
                return Err(Error::Config(
                    "VTL-independent training needs 1.00 in the warp grid".into(),
                ));
            }
            let mut rng = seed::rng(seed::stream_seed(seed_data, "warp-schedule", 0));
            let factors = grid.factors();
            let mut entries: Vec<EpochInput> = (0..epochs - 1)
                .map(|_| EpochInput::Warp(factors[rng.random_range(0..factors.len())]))
                .collect();
            entries.push(EpochInput::Warp(WarpFactor::ONE));
            entries
        }
    };
    Ok(WarpSchedule { method, entries })
}

/// Linear warmup over `warmup_epochs`, then cosine decay to 0 at `epochs`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs as f64;
    if epoch < warm {
        return cfg.warmup_start_lr + (cfg.lr_init - cfg.warmup_start_lr) * epoch / warm;
    }
    let span = (cfg.epochs - cfg.warmup_epochs) as f64;
    cfg.lr_init * 0.5 * (1.0 + (PI * (epoch - warm) / span).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::default_grid;

    #[test]
    fn baseline_is_all_one() {
        let s = make_warp_schedule(&default_grid(), 3, 0, Method::Baseline).unwrap();
        assert_eq!(s.entries, vec![EpochInput::Warp(WarpFactor::ONE); 3]);
    }

    #[test]
    fn vtl_independent_ends_at_one_and_replays() {
        let s = make_warp_schedule(&default_grid(), 100, 0, Method::VtlIndependent).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.entries[99], EpochInput::Warp(WarpFactor::ONE));
        assert!(s
            .entries
            .iter()
            .all(|e| matches!(e, EpochInput::Warp(a) if default_grid().contains(*a))));
        assert_eq!(
            s,
            make_warp_schedule(&default_grid(), 100, 0, Method::VtlIndependent).unwrap()
        );
        assert_ne!(
            s,
            make_warp_schedule(&default_grid(), 100, 1, Method::VtlIndependent).unwrap()
        );
        let one = make_warp_schedule(&default_grid(), 1, 5, Method::VtlIndependent).unwrap();
        assert_eq!(one.entries, vec![EpochInput::Warp(WarpFactor::ONE)]);
    }

    #[test]
    fn random_epochs_are_uniform_over_the_grid() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let grid = default_grid();
        let mut counts = vec![0usize; grid.len()];
        for seed in 0..100 {
            let s = make_warp_schedule(&grid, 101, seed, Method::VtlIndependent).unwrap();
            for e in &s.entries[..100] {
                let EpochInput::Warp(a) = e else { panic!("concat entry") };
                counts[grid.factors().iter().position(|f| f == a).unwrap()] += 1;
            }
        }
        let expected = 10_000.0 / grid.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((grid.len() - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p} counts {counts:?}");
    }

    #[test]
    fn concat_marker() {
        let s = make_warp_schedule(&default_grid(), 2, 0, Method::Concat).unwrap();
        assert_eq!(s.entries, vec![EpochInput::Concat; 2]);
        assert_eq!(serde_json::to_string(&s.entries).unwrap(), r#"["concat","concat"]"#);
    }

    #[test]
    fn schedule_errors() {
        assert!(make_warp_schedule(&default_grid(), 0, 0, Method::Baseline).is_err());
        let no_center = WarpGrid::new(vec![WarpFactor::new(0.9).unwrap()]).unwrap();
        assert!(make_warp_schedule(&no_center, 5, 0, Method::VtlIndependent).is_err());
    }

    #[test]
    fn epoch_input_json() {
        let v = vec![EpochInput::Warp(WarpFactor::new(0.84).unwrap()), EpochInput::Concat];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[0.84,"concat"]"#);
        let back: Vec<EpochInput> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<EpochInput>("2.0").is_err());
    }

    #[test]
    fn lr_schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0.0, &cfg), 0.0);
        assert_eq!(lr_at(10.0, &cfg), 0.001);
        assert!((lr_at(5.0, &cfg) - 0.0005).abs() < 1e-15);
        let last = lr_at(99.0, &cfg);
        let expected = 0.001 * 0.5 * (1.0 + (PI * 89.0 / 90.0).cos());
        assert!((last - expected).abs() < 1e-18);
        assert!(last < 1e-6);
        let left = lr_at(10.0 - 1e-13, &cfg);
        assert!((left - 0.001).abs() < 1e-12);
        let warm_start = TrainConfig {
            warmup_start_lr: 1e-4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0.0, &warm_start), 1e-4);
        assert!((lr_at(10.0 - 1e-13, &warm_start) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let ok = TrainConfig {
            epochs: 5,
            warmup_epochs: 1,
            ..TrainConfig::default()
        };
        ok.validate().unwrap();
    }
}
