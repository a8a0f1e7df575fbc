//! Keyword classifiers and their training loss.

mod bc_net;
mod checkpoint;
pub mod layers;
pub mod params;
mod tc_resnet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use bc_net::{BcBlock, BcNet};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamSpec, ParamStore};
pub use tc_resnet::TcResNet;

use crate::error::{Error, Result};
use crate::frontend::{FeatureMatrix, FeatureStats};
use crate::seed;
use crate::train::{EpochInput, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    TcResnet8,
    BcBlockNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Nominal frames per input; the networks pool over time so other lengths work.
    pub input_frames: usize,
    pub input_dim: usize,
    /// tc_resnet8: stem width then one width per residual block.
    /// bc_block_net: a single width shared by every block.
    pub channels: Vec<usize>,
    pub n_classes: usize,
    pub label_smoothing: f64,
    pub first_kernel: usize,
    pub block_kernel: usize,
    pub bc_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::TcResnet8,
            input_frames: 98,
            input_dim: 40,
            channels: vec![16, 24, 32, 48],
            n_classes: 35,
            label_smoothing: 0.1,
            first_kernel: 9,
            block_kernel: 3,
            bc_blocks: 3,
        }
    }
}

impl ModelConfig {
    pub fn tc_resnet8(input_dim: usize, n_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            n_classes,
            ..ModelConfig::default()
        }
    }

    pub fn bc_block_net(input_dim: usize, n_classes: usize) -> Self {
        ModelConfig {
            architecture: Architecture::BcBlockNet,
            input_dim,
            n_classes,
            channels: vec![16],
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.input_dim == 0 || self.n_classes < 2 {
            return bad(format!("input_dim={} n_classes={}", self.input_dim, self.n_classes));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channel plan must be nonempty and positive".into());
        }
        if self.first_kernel == 0 || self.block_kernel == 0 || self.block_kernel.is_multiple_of(2) {
            return bad("kernels must be positive and block kernels odd".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label smoothing must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Class posteriors for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub posteriors: Vec<f64>,
}

impl ScoreVector {
    pub fn from_logits(logits: &[f64]) -> Self {
        ScoreVector {
            posteriors: softmax(logits),
        }
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    /// Entries in `[0, 1]` summing to one within `tol`.
    pub fn is_distribution(&self, tol: f64) -> bool {
        self.posteriors.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.posteriors.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.posteriors)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Label-smoothed targets: `1 - eps + eps/K` on the true class, `eps/K` elsewhere.
pub fn smoothed_targets(n_classes: usize, label: usize, smoothing: f64) -> Vec<f64> {
    let off = smoothing / n_classes as f64;
    (0..n_classes)
        .map(|k| if k == label { 1.0 - smoothing + off } else { off })
        .collect()
}

/// Smoothed cross-entropy of `logits` and its gradient with respect to them.
pub fn smoothed_cross_entropy(logits: &[f64], label: usize, smoothing: f64) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let targets = smoothed_targets(logits.len(), label, smoothing);
    let loss = targets.iter().zip(logits).map(|(t, z)| -t * (z - log_z)).sum();
    let grad = logits
        .iter()
        .zip(&targets)
        .map(|(z, t)| (z - log_z).exp() - t)
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone)]
enum Body {
    Tc(TcResNet),
    Bc(BcNet),
}

/// A classifier and its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    store: ParamStore,
    body: Body,
}

impl Network {
    /// All parameters zero.
    pub fn zeroed(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let body = match config.architecture {
            Architecture::TcResnet8 => Body::Tc(TcResNet::build(config, &mut store)?),
            Architecture::BcBlockNet => Body::Bc(BcNet::build(config, &mut store)?),
        };
        Ok(Network {
            config: config.clone(),
            store,
            body,
        })
    }

    pub fn new(config: &ModelConfig, init_seed: u64) -> Result<Self> {
        let mut net = Network::zeroed(config)?;
        let mut rng = seed::rng(seed::stream_seed(init_seed, "init", 0));
        match &net.body {
            Body::Tc(b) => b.init(&mut net.store, &mut rng),
            Body::Bc(b) => b.init(&mut net.store, &mut rng),
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.len()
    }

    pub fn bc_blocks(&self) -> &[BcBlock] {
        match &self.body {
            Body::Bc(b) => &b.blocks,
            Body::Tc(_) => &[],
        }
    }

    /// `T x D` features to `D x T` channel-major input.
    fn prepare(&self, values: &Array2<f64>) -> Result<(Vec<f64>, usize)> {
        let (t, d) = values.dim();
        if d != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {}-dim features, got {d}",
                self.config.input_dim
            )));
        }
        if let Body::Tc(tc) = &self.body {
            tc.check_frames(t)?;
        }
        Ok((values.t().iter().copied().collect(), t))
    }

    pub fn logits(&self, values: &Array2<f64>) -> Result<Vec<f64>> {
        let (x, t) = self.prepare(values)?;
        Ok(match &self.body {
            Body::Tc(b) => b.forward(&self.store, x, t)?.0,
            Body::Bc(b) => b.forward(&self.store, x, t)?.0,
        })
    }

    pub fn scores(&self, values: &Array2<f64>) -> Result<ScoreVector> {
        Ok(ScoreVector::from_logits(&self.logits(values)?))
    }

    /// Smoothed cross-entropy of one example and the full parameter gradient.
    pub fn loss_and_grad(&self, values: &Array2<f64>, label: usize, smoothing: f64) -> Result<(f64, Vec<f64>)> {
        if label >= self.config.n_classes {
            return Err(Error::Shape(format!(
                "label {label} >= {} classes",
                self.config.n_classes
            )));
        }
        let (x, t) = self.prepare(values)?;
        let mut grad = self.store.zeros_like();
        let loss = match &self.body {
            Body::Tc(b) => {
                let (logits, cache) = b.forward(&self.store, x, t)?;
                let (loss, dl) = smoothed_cross_entropy(&logits, label, smoothing);
                b.backward(&self.store, &mut grad, &cache, &dl);
                loss
            }
            Body::Bc(b) => {
                let (logits, cache) = b.forward(&self.store, x, t)?;
                let (loss, dl) = smoothed_cross_entropy(&logits, label, smoothing);
                b.backward(&self.store, &mut grad, &cache, &dl);
                loss
            }
        };
        Ok((loss, grad))
    }
}

/// Where a trained model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub seed_data: u64,
    pub seed_init: u64,
    pub epoch: usize,
    pub schedule: Vec<EpochInput>,
}

/// A network plus the feature normalization it was trained with.
#[derive(Debug, Clone)]
pub struct KwsModel {
    pub network: Network,
    pub stats: FeatureStats,
    pub provenance: Provenance,
}

impl KwsModel {
    pub fn input_dim(&self) -> usize {
        self.network.config().input_dim
    }
}

/// Anything that maps raw (unnormalized) features to class logits.
pub trait Scorer: Sync {
    fn input_dim(&self) -> usize;

    fn n_classes(&self) -> usize;

    fn logits(&self, features: &FeatureMatrix) -> Result<Vec<f64>>;

    fn score(&self, features: &FeatureMatrix) -> Result<ScoreVector> {
        Ok(ScoreVector::from_logits(&self.logits(features)?))
    }
}

impl Scorer for KwsModel {
    fn input_dim(&self) -> usize {
        self.network.config().input_dim
    }

    fn n_classes(&self) -> usize {
        self.network.config().n_classes
    }

    fn logits(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {}-dim features, got {}",
                self.input_dim(),
                features.dim()
            )));
        }
        let mut values = features.values.clone();
        self.stats.normalize_in_place(&mut values)?;
        self.network.logits(&values)
    }
}
