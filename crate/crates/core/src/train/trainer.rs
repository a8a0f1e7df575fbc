use std::fs;
use std::path::Path;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lr_at, make_warp_schedule, AdamW, EpochInput, Method, TrainConfig, WarpSchedule, WarpSelection};
use crate::augment::Augmenter;
use crate::cache::FeatureCache;
use crate::dataset::{Corpus, CorpusEntry, Split, Utterance};
use crate::error::{Error, Result};
use crate::frontend::{concat_warps, FeatureMatrix, FeatureStats, Frontend, StatsAccumulator};
use crate::model::{save_checkpoint, KwsModel, ModelConfig, Network, Provenance};
use crate::seed;
use crate::warp::{WarpFactor, WarpGrid};

/// Examples per gradient work unit. Fixed so the summation order, and hence
/// the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Utterances per parallel pass when streaming the corpus.
const STREAM_CHUNK: usize = 256;

/// Everything `train` reads besides its configuration.
pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    pub frontend: &'a Frontend,
    pub grid: &'a WarpGrid,
    pub augmenter: &'a Augmenter,
    /// Precomputed features; `None` extracts from audio on the fly.
    /// Cached features bypass signal-domain augmentation.
    pub cache: Option<&'a FeatureCache>,
    /// `input_dim` and `n_classes` are filled in from the method and corpus.
    pub model: ModelConfig,
    /// Score the eval split after every epoch.
    pub evaluate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Warp factor, `concat`, or `per_batch`.
    pub alpha: String,
    pub lr: f64,
    pub train_loss: f64,
    /// Top-1 accuracy in percent; absent without an eval split.
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub schedule: WarpSchedule,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best: KwsModel,
    pub last: KwsModel,
}

impl TrainRun {
    pub fn model_config(&self) -> &ModelConfig {
        self.last.network.config()
    }
}

struct Features<'a> {
    inputs: &'a TrainInputs<'a>,
    signal_aug: bool,
    policy_seed: u64,
}

impl Features<'_> {
    fn clean(&self, entry: &CorpusEntry, input: EpochInput) -> Result<FeatureMatrix> {
        match self.inputs.cache {
            Some(cache) => self.cached_features(cache, entry, input),
            None => self.extract(&self.inputs.corpus.load(entry)?, input),
        }
    }

    fn cached_features(&self, cache: &FeatureCache, entry: &CorpusEntry, input: EpochInput) -> Result<FeatureMatrix> {
        match input {
            EpochInput::Warp(a) => cache.load(&entry.id, a),
            EpochInput::Concat => {
                let mut set = crate::frontend::WarpedFeatureSet::default();
                for a in self.inputs.grid.iter() {
                    set.matrices.insert(a, cache.load(&entry.id, a)?);
                }
                concat_warps(&set)
            }
        }
    }

    fn extract(&self, u: &Utterance, input: EpochInput) -> Result<FeatureMatrix> {
        let fe = self.inputs.frontend;
        match input {
            EpochInput::Warp(a) => fe.extract_mfcc(u, a),
            EpochInput::Concat => concat_warps(&fe.extract_all_warps(u, self.inputs.grid)?),
        }
    }

    /// Normalized, augmented training features for one example in one epoch.
    fn train_example(
        &self,
        entry: &CorpusEntry,
        input: EpochInput,
        epoch: usize,
        stats: &FeatureStats,
    ) -> Result<Array2<f64>> {
        let mut rng = seed::rng(seed::example_seed(self.policy_seed, &entry.id, epoch));
        let aug = self.inputs.augmenter;
        let m = if self.signal_aug {
            let mut u = self.inputs.corpus.load(entry)?;
            u.samples = aug.apply_signal(&u.samples, u.sample_rate, &mut rng);
            self.extract(&u, input)?
        } else {
            self.clean(entry, input)?
        };
        let mut values = m.values;
        stats.normalize_in_place(&mut values)?;
        aug.apply_spectral(&mut values, &mut rng);
        Ok(values)
    }
}

fn eval_input(method: Method) -> EpochInput {
    match method {
        Method::Concat => EpochInput::Concat,
        Method::Baseline | Method::VtlIndependent => EpochInput::Warp(WarpFactor::ONE),
    }
}

/// Statistics over clean training features at `input`.
fn training_stats(feats: &Features<'_>, entries: &[CorpusEntry], input: EpochInput) -> Result<FeatureStats> {
    let mut acc = StatsAccumulator::default();
    for chunk in entries.chunks(STREAM_CHUNK) {
        let mats: Vec<FeatureMatrix> = chunk.par_iter().map(|e| feats.clean(e, input)).collect::<Result<_>>()?;
        for m in &mats {
            acc.add(&m.values)?;
        }
    }
    acc.finish()
}

/// Percent correct over `entries`, scored at the method's evaluation input.
fn accuracy(feats: &Features<'_>, model: &KwsModel, entries: &[CorpusEntry], input: EpochInput) -> Result<f64> {
    let correct: Vec<bool> = entries
        .par_iter()
        .map(|e| -> Result<bool> {
            let mut values = feats.clean(e, input)?.values;
            model.stats.normalize_in_place(&mut values)?;
            Ok(crate::model::argmax(&model.network.logits(&values)?) == e.label.index)
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * correct.iter().filter(|&&c| c).count() as f64 / entries.len() as f64)
}

/// Summed loss and gradient over one batch, reduced in a fixed order.
fn batch_grad(
    feats: &Features<'_>,
    net: &Network,
    stats: &FeatureStats,
    batch: &[(&CorpusEntry, EpochInput)],
    epoch: usize,
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Vec<f64>)> {
            let mut loss = 0.0;
            let mut grad = net.params().zeros_like();
            for &(entry, input) in chunk {
                let values = feats.train_example(entry, input, epoch, stats)?;
                let (l, g) = net.loss_and_grad(&values, entry.label.index, smoothing)?;
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = net.params().zeros_like();
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Train one model under `cfg.method`.
pub fn train(inputs: &TrainInputs<'_>, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let corpus = inputs.corpus;
    let train_set = corpus.entries(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let schedule = make_warp_schedule(inputs.grid, cfg.epochs, cfg.seed_data, cfg.method)?;
    let n_ceps = inputs.frontend.spec().n_ceps;
    let mut model_cfg = inputs.model.clone();
    model_cfg.input_dim = match cfg.method {
        Method::Concat => n_ceps * inputs.grid.len(),
        _ => n_ceps,
    };
    model_cfg.n_classes = corpus.labels.len();
    model_cfg.label_smoothing = cfg.label_smoothing;

    let policy = &inputs.augmenter.policy;
    let signal_aug = policy.enabled && policy.touches_signal() && inputs.cache.is_none();
    if policy.enabled && policy.touches_signal() && inputs.cache.is_some() {
        warn!("training from cached features: signal-domain augmentation is skipped");
    }
    let feats = Features {
        inputs,
        signal_aug,
        policy_seed: policy.rng_seed,
    };

    let eval_in = eval_input(cfg.method);
    let stats = training_stats(&feats, train_set, eval_in)?;
    let mut net = Network::new(&model_cfg, cfg.seed_init)?;
    info!(
        "training {} on {} ({} parameters, input dim {})",
        cfg.method,
        corpus.summary(),
        net.param_count(),
        model_cfg.input_dim
    );
    let mut opt = AdamW::new(net.param_count(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let eval_set = corpus.entries(Split::Eval);
    let evaluate = inputs.evaluate && !eval_set.is_empty();

    let snapshot = |net: &Network, epoch: usize| KwsModel {
        network: net.clone(),
        stats: stats.clone(),
        provenance: Provenance {
            method: cfg.method,
            seed_data: cfg.seed_data,
            seed_init: cfg.seed_init,
            epoch,
            schedule: schedule.entries.clone(),
        },
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, KwsModel)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch as f64, cfg);
        let mut shuffle_rng = seed::rng(seed::stream_seed(cfg.seed_data, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let per_batch = cfg.method == Method::VtlIndependent
            && cfg.warp_selection == WarpSelection::PerBatch
            && epoch + 1 < cfg.epochs;
        let mut batch_rng = seed::rng(seed::stream_seed(cfg.seed_data, "batch-warp", epoch as u64));
        let factors = inputs.grid.factors();

        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let input = if per_batch {
                EpochInput::Warp(factors[batch_rng.random_range(0..factors.len())])
            } else {
                schedule.entries[epoch]
            };
            let batch: Vec<(&CorpusEntry, EpochInput)> = idx.iter().map(|&i| (&train_set[i], input)).collect();
            let (loss, mut grad) = batch_grad(&feats, &net, &stats, &batch, epoch, cfg.label_smoothing)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("batch loss {loss} at input {input}"),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite gradient".into(),
                });
            }
            opt.step(net.params_mut().data_mut(), &grad, lr);
            loss_sum += loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let model = snapshot(&net, epoch);
        let eval_acc = if evaluate {
            Some(accuracy(&feats, &model, eval_set, eval_in)?)
        } else {
            None
        };
        let alpha = if per_batch {
            "per_batch".to_string()
        } else {
            schedule.entries[epoch].to_string()
        };
        info!(
            "epoch {epoch}: alpha {alpha} lr {lr:.3e} loss {train_loss:.5} eval {}",
            eval_acc.map_or("-".into(), |a| format!("{a:.2}%"))
        );
        let score = eval_acc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model));
        }
        log.push(EpochLog {
            epoch,
            alpha,
            lr,
            train_loss,
            eval_acc,
        });
    }
    let last = snapshot(&net, cfg.epochs - 1);
    let (best_epoch, best) = match best {
        Some((_, e, m)) if evaluate => (e, m),
        _ => (cfg.epochs - 1, last.clone()),
    };
    Ok(TrainRun {
        config: cfg.clone(),
        schedule,
        log,
        best_epoch,
        best,
        last,
    })
}

#[derive(Serialize)]
struct RunConfig<'a> {
    train: &'a TrainConfig,
    model: &'a ModelConfig,
    best_epoch: usize,
}

/// `config.json`, `schedule.json`, `log.csv`, `best.ckpt` and `final.ckpt`.
pub fn write_run_dir(run: &TrainRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_json = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write_json(
        "config.json",
        serde_json::to_vec_pretty(&RunConfig {
            train: &run.config,
            model: run.model_config(),
            best_epoch: run.best_epoch,
        })?,
    )?;
    write_json("schedule.json", serde_json::to_vec_pretty(&run.schedule)?)?;
    let log_path = dir.join("log.csv");
    let mut w = csv::Writer::from_path(&log_path)?;
    w.write_record(["epoch", "alpha", "lr", "train_loss", "eval_acc"])?;
    for row in &run.log {
        w.write_record([
            row.epoch.to_string(),
            row.alpha.clone(),
            row.lr.to_string(),
            row.train_loss.to_string(),
            row.eval_acc.map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&run.best, &dir.join("best.ckpt"))?;
    save_checkpoint(&run.last, &dir.join("final.ckpt"))
}
