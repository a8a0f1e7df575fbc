use std::path::Path;

use vtlkws_core::augment::{AugmentPolicy, Augmenter};
use vtlkws_core::cache::FeatureCache;
use vtlkws_core::dataset::{load_corpus, Corpus, LoadOptions, Split};
use vtlkws_core::frontend::{FrameSpec, Frontend};
use vtlkws_core::model::{load_checkpoint, ModelConfig, Network};
use vtlkws_core::synthetic::{write_fixture_corpus, FixtureSpec};
use vtlkws_core::train::{train, write_run_dir, AdamW, EpochInput, Method, TrainConfig, TrainInputs};
use vtlkws_core::warp::{default_grid, WarpConfig, WarpFactor, WarpGrid};
use vtlkws_core::Error;

fn fixture(dir: &Path) -> Corpus {
    let manifest = write_fixture_corpus(dir, &FixtureSpec::default()).unwrap();
    load_corpus(dir, &manifest, LoadOptions::default()).unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        channels: vec![8, 8],
        ..ModelConfig::default()
    }
}

fn toy_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        epochs: 5,
        batch_size: 8,
        warmup_epochs: 1,
        lr_init: 0.01,
        ..TrainConfig::default()
    }
}

fn run(corpus: &Corpus, grid: &WarpGrid, policy: AugmentPolicy, cfg: &TrainConfig) -> vtlkws_core::train::TrainRun {
    let frontend = Frontend::new(FrameSpec::default(), WarpConfig::default(), grid).unwrap();
    let augmenter = Augmenter::new(policy, Vec::new()).unwrap();
    let inputs = TrainInputs {
        corpus,
        frontend: &frontend,
        grid,
        augmenter: &augmenter,
        cache: None,
        model: tiny_model(),
        evaluate: true,
    };
    train(&inputs, cfg).unwrap()
}

#[test]
fn every_method_lowers_the_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let grid = default_grid();
    for method in [Method::Baseline, Method::VtlIndependent, Method::Concat] {
        let r = run(&corpus, &grid, AugmentPolicy::default(), &toy_config(method));
        assert_eq!(r.log.len(), 5);
        let (first, last) = (r.log[0].train_loss, r.log[4].train_loss);
        assert!(last < first, "{method}: loss {first} -> {last}");
        assert!(r.log.iter().all(|l| l.eval_acc.is_some()));
        let want_dim = if method == Method::Concat { 840 } else { 40 };
        assert_eq!(r.last.network.config().input_dim, want_dim);
        assert_eq!(r.last.network.config().n_classes, 2);
    }
}

#[test]
fn identical_seeds_replay_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let grid = default_grid();
    let cfg = toy_config(Method::VtlIndependent);
    let a = run(&corpus, &grid, AugmentPolicy::default(), &cfg);
    let b = run(&corpus, &grid, AugmentPolicy::default(), &cfg);
    assert_eq!(a.log, b.log);
    assert_eq!(a.last.network.params().data(), b.last.network.params().data());
    let other = run(
        &corpus,
        &grid,
        AugmentPolicy::default(),
        &TrainConfig { seed_init: 7, ..cfg },
    );
    assert_ne!(a.log, other.log);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let grid = default_grid();
    let cfg = TrainConfig {
        epochs: 2,
        ..toy_config(Method::Baseline)
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = single.install(|| run(&corpus, &grid, AugmentPolicy::default(), &cfg));
    let b = run(&corpus, &grid, AugmentPolicy::default(), &cfg);
    assert_eq!(a.log, b.log);
}

#[test]
fn final_vtl_independent_epoch_uses_alpha_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let r = run(
        &corpus,
        &default_grid(),
        AugmentPolicy::disabled(),
        &toy_config(Method::VtlIndependent),
    );
    assert_eq!(r.log[4].alpha, "1.00");
    assert_eq!(r.schedule.entries[4], EpochInput::Warp(WarpFactor::ONE));
    assert_eq!(r.last.provenance.schedule, r.schedule.entries);
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(&dir.path().join("corpus"));
    let cfg = TrainConfig {
        epochs: 2,
        ..toy_config(Method::Concat)
    };
    let r = run(&corpus, &default_grid(), AugmentPolicy::disabled(), &cfg);
    let out = dir.path().join("run");
    write_run_dir(&r, &out).unwrap();
    for f in ["config.json", "schedule.json", "log.csv", "best.ckpt", "final.ckpt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,alpha,lr,train_loss,eval_acc"));
    assert_eq!(lines.count(), 2);
    let ck = load_checkpoint(&out.join("final.ckpt")).unwrap();
    assert_eq!(ck.network.config().input_dim, 840);
    assert_eq!(ck.provenance.method, Method::Concat);
}

#[test]
fn training_from_cache_requires_every_scheduled_factor() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(&dir.path().join("corpus"));
    let grid = default_grid();
    let frontend = Frontend::new(FrameSpec::default(), WarpConfig::default(), &grid).unwrap();
    let cache = FeatureCache::new(dir.path().join("cache"));
    // Only alpha = 1.00 is cached.
    for e in corpus.entries(Split::Train).iter().chain(corpus.entries(Split::Eval)) {
        let u = corpus.load(e).unwrap();
        cache
            .store(
                &frontend.extract_mfcc(&u, WarpFactor::ONE).unwrap(),
                WarpFactor::ONE,
                16000,
            )
            .unwrap();
    }
    let augmenter = Augmenter::new(AugmentPolicy::disabled(), Vec::new()).unwrap();
    let inputs = TrainInputs {
        corpus: &corpus,
        frontend: &frontend,
        grid: &grid,
        augmenter: &augmenter,
        cache: Some(&cache),
        model: tiny_model(),
        evaluate: true,
    };
    let baseline = train(&inputs, &toy_config(Method::Baseline)).unwrap();
    assert!(baseline.log[4].train_loss < baseline.log[0].train_loss);
    let err = train(&inputs, &toy_config(Method::VtlIndependent)).unwrap_err();
    assert!(matches!(err, Error::CacheMiss { .. }), "{err}");
}

#[test]
fn one_small_step_on_a_frozen_batch_lowers_its_loss() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let grid = WarpGrid::singleton(WarpFactor::ONE);
    let frontend = Frontend::new(FrameSpec::default(), WarpConfig::default(), &grid).unwrap();
    let batch: Vec<_> = corpus.entries(Split::Train)[..8]
        .iter()
        .map(|e| {
            let mut m = frontend
                .extract_mfcc(&corpus.load(e).unwrap(), WarpFactor::ONE)
                .unwrap()
                .values;
            m.mapv_inplace(|v| v / 10.0);
            (m, e.label.index)
        })
        .collect();
    let cfg = ModelConfig {
        n_classes: 2,
        ..tiny_model()
    };
    let mut net = Network::new(&cfg, 42).unwrap();
    let loss_and_grad = |net: &Network| {
        let mut loss = 0.0;
        let mut grad = net.params().zeros_like();
        for (x, y) in &batch {
            let (l, g) = net.loss_and_grad(x, *y, 0.1).unwrap();
            loss += l / batch.len() as f64;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / batch.len() as f64);
        }
        (loss, grad)
    };
    let (before, grad) = loss_and_grad(&net);
    let mut opt = AdamW::new(net.param_count(), 0.9, 0.999, 1e-8, 0.1);
    opt.step(net.params_mut().data_mut(), &grad, 1e-4);
    let (after, _) = loss_and_grad(&net);
    assert!(after < before, "{before} -> {after}");
}
