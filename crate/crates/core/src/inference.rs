//! Scoring test utterances: equal-weight fusion over the warp grid, the
//! single alpha = 1.00 pass, and concatenated features.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::FeatureCache;
use crate::dataset::{Corpus, CorpusEntry, Utterance};
use crate::error::{Error, Result};
use crate::frontend::{concat_warps, FeatureMatrix, Frontend, WarpedFeatureSet};
use crate::model::{softmax, KwsModel, ScoreVector, Scorer};
use crate::train::Method;
use crate::warp::{WarpFactor, WarpGrid};

/// How a test utterance is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    /// Mean posterior over every warp in the grid.
    #[serde(alias = "vtl-independent")]
    VtlIndependent,
    /// The VTL-independent model scored only at alpha = 1.00.
    #[serde(alias = "vtl-independent-alpha1")]
    VtlIndependentAlpha1,
    Concat,
    Baseline,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 4] = [
        EvalMethod::Baseline,
        EvalMethod::VtlIndependent,
        EvalMethod::VtlIndependentAlpha1,
        EvalMethod::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMethod::VtlIndependent => "vtl_independent",
            EvalMethod::VtlIndependentAlpha1 => "vtl_independent_alpha1",
            EvalMethod::Concat => "concat",
            EvalMethod::Baseline => "baseline",
        }
    }

    /// Training regime a model must come from to be scored this way.
    pub fn trained_with(self) -> Method {
        match self {
            EvalMethod::VtlIndependent | EvalMethod::VtlIndependentAlpha1 => Method::VtlIndependent,
            EvalMethod::Concat => Method::Concat,
            EvalMethod::Baseline => Method::Baseline,
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What gets averaged across warps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Posterior,
    /// Mean logits, then softmax. For ablations.
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDecision {
    pub fused: ScoreVector,
    /// Argmax of `fused`, ties to the lowest index.
    pub predicted: usize,
    pub per_alpha: BTreeMap<WarpFactor, ScoreVector>,
}

impl FusedDecision {
    fn new(fused: ScoreVector, per_alpha: BTreeMap<WarpFactor, ScoreVector>) -> Self {
        FusedDecision {
            predicted: fused.argmax(),
            fused,
            per_alpha,
        }
    }
}

/// Element-wise mean with weight `1/#alpha`.
pub fn fuse_scores(per_alpha: &BTreeMap<WarpFactor, ScoreVector>) -> Result<ScoreVector> {
    mean_rows(per_alpha.values().map(|s| s.posteriors.as_slice())).map(|posteriors| ScoreVector { posteriors })
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for r in rows {
        let s = sum.get_or_insert_with(|| vec![0.0; r.len()]);
        if s.len() != r.len() {
            return Err(Error::Scores(format!(
                "score vectors of length {} and {}",
                s.len(),
                r.len()
            )));
        }
        s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        n += 1;
    }
    let sum = sum.ok_or_else(|| Error::Scores("nothing to fuse".into()))?;
    Ok(sum.into_iter().map(|v| v / n as f64).collect())
}

fn check_dim(model: &dyn Scorer, dim: usize) -> Result<()> {
    if model.input_dim() != dim {
        return Err(Error::Shape(format!(
            "model expects {}-dim features, this method produces {dim}",
            model.input_dim()
        )));
    }
    Ok(())
}

/// Fuse a model's scores over precomputed warped features.
pub fn decide_fused(model: &dyn Scorer, set: &WarpedFeatureSet, mode: FusionMode) -> Result<FusedDecision> {
    let mut logits = BTreeMap::new();
    for (&a, m) in &set.matrices {
        logits.insert(a, model.logits(m)?);
    }
    let per_alpha: BTreeMap<_, _> = logits.iter().map(|(&a, l)| (a, ScoreVector::from_logits(l))).collect();
    let fused = match mode {
        FusionMode::Posterior => fuse_scores(&per_alpha)?,
        FusionMode::Logit => ScoreVector {
            posteriors: softmax(&mean_rows(logits.values().map(Vec::as_slice))?),
        },
    };
    Ok(FusedDecision::new(fused, per_alpha))
}

/// One forward pass on a single feature matrix.
pub fn decide_single(model: &dyn Scorer, m: &FeatureMatrix, alpha: WarpFactor) -> Result<FusedDecision> {
    let s = model.score(m)?;
    Ok(FusedDecision::new(s.clone(), BTreeMap::from([(alpha, s)])))
}

/// Extract every warp, score each, fuse.
pub fn score_vtl_independent(
    model: &dyn Scorer,
    frontend: &Frontend,
    u: &Utterance,
    grid: &WarpGrid,
    mode: FusionMode,
) -> Result<FusedDecision> {
    check_dim(model, frontend.spec().n_ceps)?;
    decide_fused(model, &frontend.extract_all_warps(u, grid)?, mode)
}

/// Exactly one forward pass at alpha = 1.00.
pub fn score_alpha_one(model: &dyn Scorer, frontend: &Frontend, u: &Utterance) -> Result<FusedDecision> {
    check_dim(model, frontend.spec().n_ceps)?;
    decide_single(model, &frontend.extract_mfcc(u, WarpFactor::ONE)?, WarpFactor::ONE)
}

/// One forward pass over the ascending-alpha concatenation. The per-alpha
/// map is empty because no single-warp scores exist.
pub fn score_concat(model: &dyn Scorer, frontend: &Frontend, u: &Utterance, grid: &WarpGrid) -> Result<FusedDecision> {
    check_dim(model, frontend.spec().n_ceps * grid.len())?;
    let m = concat_warps(&frontend.extract_all_warps(u, grid)?)?;
    Ok(FusedDecision::new(model.score(&m)?, BTreeMap::new()))
}

/// Refuse to score a model under a method it was not trained for, unless forced.
pub fn check_provenance(model: &KwsModel, method: EvalMethod, force: bool) -> Result<()> {
    let want = method.trained_with();
    if model.provenance.method != want && !force {
        return Err(Error::Config(format!(
            "scoring method {method} expects a {want} model, checkpoint was trained with {}",
            model.provenance.method
        )));
    }
    Ok(())
}

/// Features for corpus entries, read from a cache or extracted on demand.
pub struct FeatureSource<'a> {
    pub corpus: &'a Corpus,
    pub frontend: &'a Frontend,
    pub cache: Option<&'a FeatureCache>,
}

impl FeatureSource<'_> {
    pub fn single(&self, entry: &CorpusEntry, alpha: WarpFactor) -> Result<FeatureMatrix> {
        match self.cache {
            Some(c) => c.load(&entry.id, alpha),
            None => self.frontend.extract_mfcc(&self.corpus.load(entry)?, alpha),
        }
    }

    pub fn warped(&self, entry: &CorpusEntry, grid: &WarpGrid) -> Result<WarpedFeatureSet> {
        match self.cache {
            Some(c) => {
                let mut set = WarpedFeatureSet::default();
                for a in grid.iter() {
                    set.matrices.insert(a, c.load(&entry.id, a)?);
                }
                Ok(set)
            }
            None => self.frontend.extract_all_warps(&self.corpus.load(entry)?, grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub id: String,
    pub label: usize,
    pub decision: FusedDecision,
}

/// Score every entry with `method`; output order follows `entries`.
pub fn score_entries(
    model: &dyn Scorer,
    source: &FeatureSource<'_>,
    entries: &[CorpusEntry],
    grid: &WarpGrid,
    method: EvalMethod,
    mode: FusionMode,
) -> Result<Vec<ScoredUtterance>> {
    let n_ceps = source.frontend.spec().n_ceps;
    match method {
        EvalMethod::Concat => check_dim(model, n_ceps * grid.len())?,
        _ => check_dim(model, n_ceps)?,
    }
    entries
        .par_iter()
        .map(|e| {
            let decision = match method {
                EvalMethod::VtlIndependent => decide_fused(model, &source.warped(e, grid)?, mode)?,
                EvalMethod::VtlIndependentAlpha1 | EvalMethod::Baseline => {
                    decide_single(model, &source.single(e, WarpFactor::ONE)?, WarpFactor::ONE)?
                }
                EvalMethod::Concat => {
                    let m = concat_warps(&source.warped(e, grid)?)?;
                    FusedDecision::new(model.score(&m)?, BTreeMap::new())
                }
            };
            Ok(ScoredUtterance {
                id: e.id.clone(),
                label: e.label.index,
                decision,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: WarpFactor,
    pub accuracy: f64,
    pub n: usize,
}

/// Accuracy of each single-warp score already held in fused decisions.
pub fn sweep_from_decisions(scored: &[ScoredUtterance], grid: &WarpGrid) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|alpha| {
            let mut correct = 0;
            for s in scored {
                let v = s
                    .decision
                    .per_alpha
                    .get(&alpha)
                    .ok_or_else(|| Error::Scores(format!("{}: no score at alpha {alpha}", s.id)))?;
                correct += usize::from(v.argmax() == s.label);
            }
            Ok(SweepRow {
                alpha,
                accuracy: if scored.is_empty() {
                    0.0
                } else {
                    100.0 * correct as f64 / scored.len() as f64
                },
                n: scored.len(),
            })
        })
        .collect()
}

/// Accuracy when scoring with each warp alone, in ascending alpha.
pub fn sweep_alpha(
    model: &dyn Scorer,
    source: &FeatureSource<'_>,
    entries: &[CorpusEntry],
    grid: &WarpGrid,
) -> Result<Vec<SweepRow>> {
    let scored = score_entries(
        model,
        source,
        entries,
        grid,
        EvalMethod::VtlIndependent,
        FusionMode::Posterior,
    )?;
    sweep_from_decisions(&scored, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::KeywordLabel;
    use crate::frontend::FrameSpec;
    use crate::model::{ModelConfig, Network, Provenance};
    use crate::train::EpochInput;
    use crate::warp::{default_grid, WarpConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sv(p: &[f64]) -> ScoreVector {
        ScoreVector { posteriors: p.to_vec() }
    }

    fn a(x: f64) -> WarpFactor {
        WarpFactor::new(x).unwrap()
    }

    fn utterance() -> Utterance {
        let samples = (0..16000)
            .map(|i| {
                0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin()
                    + 0.01 * ((i * 7919 % 101) as f64 / 101.0 - 0.5)
            })
            .collect();
        Utterance {
            id: "yes/a.wav".into(),
            samples,
            sample_rate: 16000,
            label: KeywordLabel {
                index: 0,
                name: "yes".into(),
            },
        }
    }

    fn model(dim: usize, zero: bool) -> KwsModel {
        let cfg = ModelConfig {
            channels: vec![4, 4],
            ..ModelConfig::tc_resnet8(dim, 35)
        };
        KwsModel {
            network: if zero {
                Network::zeroed(&cfg).unwrap()
            } else {
                Network::new(&cfg, 3).unwrap()
            },
            stats: crate::frontend::FeatureStats::identity(dim),
            provenance: Provenance {
                method: Method::VtlIndependent,
                seed_data: 0,
                seed_init: 3,
                epoch: 0,
                schedule: vec![EpochInput::Warp(WarpFactor::ONE)],
            },
        }
    }

    struct Counting<'a> {
        inner: &'a KwsModel,
        calls: AtomicUsize,
    }

    impl Scorer for Counting<'_> {
        fn input_dim(&self) -> usize {
            self.inner.input_dim()
        }
        fn n_classes(&self) -> usize {
            self.inner.n_classes()
        }
        fn logits(&self, f: &FeatureMatrix) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.logits(f)
        }
    }

    fn frontend(grid: &WarpGrid) -> Frontend {
        Frontend::new(FrameSpec::default(), WarpConfig::default(), grid).unwrap()
    }

    #[test]
    fn fusing_one_vector_returns_it() {
        let m = BTreeMap::from([(a(0.9), sv(&[0.2, 0.8]))]);
        assert_eq!(fuse_scores(&m).unwrap(), sv(&[0.2, 0.8]));
    }

    #[test]
    fn fusing_copies_returns_the_copy() {
        let v = sv(&[0.1, 0.6, 0.3]);
        let m: BTreeMap<_, _> = default_grid().iter().map(|x| (x, v.clone())).collect();
        let f = fuse_scores(&m).unwrap();
        for (x, y) in f.posteriors.iter().zip(&v.posteriors) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_vector_mean() {
        let mut p = vec![0.0; 35];
        let mut q = vec![0.0; 35];
        (p[0], p[1], q[0], q[1]) = (0.8, 0.2, 0.2, 0.8);
        let f = fuse_scores(&BTreeMap::from([(a(0.9), sv(&p)), (a(1.1), sv(&q))])).unwrap();
        assert_eq!(&f.posteriors[..3], &[0.5, 0.5, 0.0]);
        assert!(f.is_distribution(1e-12));
    }

    #[test]
    fn fusion_errors() {
        assert!(matches!(fuse_scores(&BTreeMap::new()), Err(Error::Scores(_))));
        let m = BTreeMap::from([(a(0.9), sv(&[1.0])), (a(1.0), sv(&[0.5, 0.5]))]);
        assert!(fuse_scores(&m).is_err());
    }

    #[test]
    fn zero_model_fuses_to_uniform_and_predicts_class_zero() {
        let grid = default_grid();
        let d = score_vtl_independent(
            &model(40, true),
            &frontend(&grid),
            &utterance(),
            &grid,
            FusionMode::Posterior,
        )
        .unwrap();
        assert_eq!(d.per_alpha.len(), 21);
        assert_eq!(d.predicted, 0);
        assert!(d.fused.posteriors.iter().all(|p| (p - 1.0 / 35.0).abs() < 1e-12));
    }

    #[test]
    fn forward_counts_match_the_method() {
        let grid = default_grid();
        let fe = frontend(&grid);
        let m = model(40, false);
        let c = Counting {
            inner: &m,
            calls: AtomicUsize::new(0),
        };
        score_alpha_one(&c, &fe, &utterance()).unwrap();
        assert_eq!(c.calls.swap(0, Ordering::SeqCst), 1);
        score_vtl_independent(&c, &fe, &utterance(), &grid, FusionMode::Posterior).unwrap();
        assert_eq!(c.calls.load(Ordering::SeqCst), 21);
    }

    #[test]
    fn singleton_grid_reduces_to_alpha_one() {
        let grid = WarpGrid::singleton(WarpFactor::ONE);
        let fe = frontend(&grid);
        let m = model(40, false);
        let fused = score_vtl_independent(&m, &fe, &utterance(), &grid, FusionMode::Posterior).unwrap();
        let one = score_alpha_one(&m, &fe, &utterance()).unwrap();
        assert_eq!(fused, one);
    }

    #[test]
    fn fused_prediction_matches_brute_force_mean() {
        let grid = default_grid();
        let d = score_vtl_independent(
            &model(40, false),
            &frontend(&grid),
            &utterance(),
            &grid,
            FusionMode::Posterior,
        )
        .unwrap();
        let mut mean = [0.0; 35];
        for s in d.per_alpha.values() {
            for (m, p) in mean.iter_mut().zip(&s.posteriors) {
                *m += p / 21.0;
            }
        }
        let best = (0..35).fold(0, |b, i| if mean[i] > mean[b] { i } else { b });
        assert_eq!(d.predicted, best);
        for (x, y) in d.fused.posteriors.iter().zip(mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_fusion_is_a_distribution() {
        let grid = default_grid();
        let d = score_vtl_independent(
            &model(40, false),
            &frontend(&grid),
            &utterance(),
            &grid,
            FusionMode::Logit,
        )
        .unwrap();
        assert!(d.fused.is_distribution(1e-9));
    }

    #[test]
    fn concat_guards_dimension() {
        let grid = default_grid();
        let fe = frontend(&grid);
        assert!(matches!(
            score_concat(&model(40, false), &fe, &utterance(), &grid),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            score_vtl_independent(&model(840, false), &fe, &utterance(), &grid, FusionMode::Posterior),
            Err(Error::Shape(_))
        ));
        let m = model(840, false);
        let x = score_concat(&m, &fe, &utterance(), &grid).unwrap();
        assert_eq!(x, score_concat(&m, &fe, &utterance(), &grid).unwrap());
    }

    #[test]
    fn concat_block_order_matters() {
        let grid = default_grid();
        let fe = frontend(&grid);
        let m = model(840, false);
        let ascending = concat_warps(&fe.extract_all_warps(&utterance(), &grid).unwrap()).unwrap();
        let mut reversed = ascending.clone();
        for k in 0..21 {
            let src = ascending.values.slice(ndarray::s![.., k * 40..(k + 1) * 40]);
            reversed
                .values
                .slice_mut(ndarray::s![.., (20 - k) * 40..(21 - k) * 40])
                .assign(&src);
        }
        let la = m.logits(&ascending).unwrap();
        let lr = m.logits(&reversed).unwrap();
        assert!(la.iter().zip(&lr).any(|(x, y)| (x - y).abs() > 1e-9));
        assert_eq!(
            score_concat(&m, &fe, &utterance(), &grid).unwrap().fused,
            ScoreVector::from_logits(&la)
        );
    }

    #[test]
    fn provenance_guard() {
        let m = model(40, true);
        check_provenance(&m, EvalMethod::VtlIndependent, false).unwrap();
        check_provenance(&m, EvalMethod::VtlIndependentAlpha1, false).unwrap();
        assert!(check_provenance(&m, EvalMethod::Baseline, false).is_err());
        check_provenance(&m, EvalMethod::Baseline, true).unwrap();
    }
}
