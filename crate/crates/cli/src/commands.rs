use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use vtlkws_core::augment::{load_noise_dir, AugmentPolicy, Augmenter};
use vtlkws_core::cache::FeatureCache;
use vtlkws_core::config::ToolkitConfig;
use vtlkws_core::dataset::{load_corpus, Corpus, CorpusEntry, LoadOptions, Split, SplitManifest};
use vtlkws_core::frontend::Frontend;
use vtlkws_core::inference::{
    check_provenance, score_entries, sweep_alpha, sweep_from_decisions, EvalMethod, FeatureSource,
};
use vtlkws_core::model::{load_checkpoint, KwsModel, Scorer};
use vtlkws_core::stats::{
    accuracy, emit_report, read_runs_csv, read_sweep_csv, ttest_two_sample, write_scores_csv, write_sweep_csv,
    Comparison, EvalReport, Report, ScoreRow, SweepSeries, TTestKind,
};
use vtlkws_core::synthetic::{write_fixture_corpus, FixtureSpec};
use vtlkws_core::train::{train, write_run_dir, TrainInputs};
use vtlkws_core::warp::WarpGrid;

use crate::{
    Cli, Command, DataArgs, EvalArgs, EvalSplitArg, ExtractArgs, FetchManifestArgs, ReportArgs, SplitArg, SweepArgs,
    SynthCorpusArgs, TrainArgs, TtestArgs, VERSION,
};

/// The config file could not be read as a valid toolkit config.
#[derive(Debug)]
pub struct ConfigFileError(pub vtlkws_core::Error);

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigFileError {}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    info!("vtlkws {VERSION}");
    // Training logs its config after applying flag overrides.
    if !matches!(cli.command, Command::Train(_)) {
        log_config(&cfg);
    }
    match &cli.command {
        Command::FetchManifest(a) => fetch_manifest(&cfg, a),
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::Extract(a) => extract(cli, &cfg, a),
        Command::Train(a) => train_cmd(cli, cfg, a),
        Command::Eval(a) => eval_cmd(cli, &cfg, a),
        Command::SweepAlpha(a) => sweep_cmd(cli, &cfg, a),
        Command::Ttest(a) => ttest_cmd(&cfg, a),
        Command::Report(a) => report_cmd(&cfg, a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ToolkitConfig> {
    let Some(path) = path else {
        return Ok(ToolkitConfig::default());
    };
    ToolkitConfig::load(path).map_err(|e| match e {
        vtlkws_core::Error::Io { .. } => anyhow::Error::new(e),
        other => anyhow::Error::new(ConfigFileError(other)).context(format!("config file {}", path.display())),
    })
}

fn log_config(cfg: &ToolkitConfig) {
    info!(
        "resolved config: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn cache_dir(cli: &Cli, cfg: &ToolkitConfig) -> PathBuf {
    cli.cache_dir.clone().unwrap_or_else(|| cfg.output.cache_dir.clone())
}

fn corpus_root(cfg: &ToolkitConfig, root: Option<&Path>) -> Result<PathBuf> {
    root.map(Path::to_path_buf)
        .or_else(|| cfg.data.root.clone())
        .ok_or_else(|| anyhow!("no corpus root: pass --root or set data.root in the config"))
}

fn manifest_for(cfg: &ToolkitConfig, root: &Path, manifest: Option<&Path>) -> Result<SplitManifest> {
    if let Some(p) = manifest.map(Path::to_path_buf).or_else(|| cfg.data.manifest.clone()) {
        return SplitManifest::load(&p).with_context(|| format!("reading manifest {}", p.display()));
    }
    if root.join("testing_list.txt").is_file() {
        return Ok(SplitManifest::from_official_lists(root, cfg.data.validation_policy)?);
    }
    bail!(
        "{} has no testing_list.txt; run `vtlkws fetch-manifest --hash-eval-fraction 0.1` and pass --manifest",
        root.display()
    )
}

fn open_corpus(cfg: &ToolkitConfig, data: &DataArgs) -> Result<Corpus> {
    let root = corpus_root(cfg, data.root.as_deref())?;
    let manifest = manifest_for(cfg, &root, data.manifest.as_deref())?;
    let opts = LoadOptions {
        skip_bad: data.skip_bad || cfg.data.skip_bad,
        target_samples: cfg.data.target_samples,
    };
    let corpus = load_corpus(&root, &manifest, opts).with_context(|| format!("loading corpus {}", root.display()))?;
    for (id, reason) in &corpus.skipped {
        warn!("skipped {id}: {reason}");
    }
    info!("corpus: {}", corpus.summary());
    Ok(corpus)
}

fn frontend(cfg: &ToolkitConfig, grid: &WarpGrid) -> Result<Frontend> {
    let warp = cfg.warp.warp_config(cfg.frontend.sample_rate)?;
    Ok(Frontend::new(cfg.frontend, warp, grid)?)
}

fn fetch_manifest(cfg: &ToolkitConfig, a: &FetchManifestArgs) -> Result<()> {
    let root = corpus_root(cfg, a.root.as_deref())?;
    let manifest = match a.hash_eval_fraction {
        Some(f) => SplitManifest::from_hash(&root, f)?,
        None => {
            if !root.join("testing_list.txt").is_file() {
                bail!(
                    "{} has no testing_list.txt; use --hash-eval-fraction for a hashed split",
                    root.display()
                );
            }
            let policy = a.validation.map_or(cfg.data.validation_policy, Into::into);
            SplitManifest::from_official_lists(&root, policy)?
        }
    };
    manifest.save(&a.out)?;
    println!(
        "{}: {} train, {} eval",
        a.out.display(),
        manifest.train.len(),
        manifest.eval.len()
    );
    Ok(())
}

fn synth_corpus(a: &SynthCorpusArgs) -> Result<()> {
    let spec = FixtureSpec {
        classes: a.classes,
        per_class: a.per_class,
        seed: a.seed,
        ..FixtureSpec::default()
    };
    let m = write_fixture_corpus(&a.out, &spec)?;
    println!("{}: {} train, {} eval", a.out.display(), m.train.len(), m.eval.len());
    Ok(())
}

fn extract(cli: &Cli, cfg: &ToolkitConfig, a: &ExtractArgs) -> Result<()> {
    let corpus = open_corpus(cfg, &a.data)?;
    let grid = cfg.warp.grid()?;
    let fe = frontend(cfg, &grid)?;
    let cache = FeatureCache::new(cache_dir(cli, cfg));
    let entries: Vec<&CorpusEntry> = match a.split {
        SplitArg::Train => corpus.train.iter().collect(),
        SplitArg::Eval => corpus.eval.iter().collect(),
        SplitArg::All => corpus.train.iter().chain(&corpus.eval).collect(),
    };
    let written = AtomicUsize::new(0);
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let missing: Vec<_> = grid.iter().filter(|&alpha| !cache.is_valid(&e.id, alpha)).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let u = corpus.load(e)?;
        for alpha in missing {
            cache.store(&fe.extract_mfcc(&u, alpha)?, alpha, cfg.frontend.sample_rate)?;
            written.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    })?;
    let written = written.into_inner();
    let total = entries.len() * grid.len();
    println!(
        "{}: {written} feature files written, {} already cached",
        cache.dir().display(),
        total - written
    );
    Ok(())
}

fn augmenter(cfg: &ToolkitConfig, root: &Path, enabled: bool) -> Result<Augmenter> {
    let policy = if enabled {
        cfg.augment.clone()
    } else {
        AugmentPolicy::disabled()
    };
    let noise_dir = cfg
        .data
        .noise_dir
        .clone()
        .unwrap_or_else(|| root.join("_background_noise_"));
    let pool = if policy.enabled && noise_dir.is_dir() {
        let pool = load_noise_dir(&noise_dir, cfg.frontend.sample_rate)?;
        info!("noise pool: {} recordings from {}", pool.len(), noise_dir.display());
        pool
    } else {
        Vec::new()
    };
    Ok(Augmenter::new(policy, pool)?)
}

fn train_cmd(cli: &Cli, mut cfg: ToolkitConfig, a: &TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(m) = a.method {
        t.method = m.into();
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
        if a.warmup_epochs.is_none() && t.warmup_epochs >= e {
            let w = e / 10;
            warn!("warmup of {} epochs does not fit in {e}; using {w}", t.warmup_epochs);
            t.warmup_epochs = w;
        }
    }
    if let Some(w) = a.warmup_epochs {
        t.warmup_epochs = w;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.lr_init = lr;
    }
    if let Some(s) = a.seed_data {
        t.seed_data = s;
    }
    if let Some(s) = a.seed_init {
        t.seed_init = s;
    }
    if let Some(arch) = a.arch {
        cfg.model.architecture = arch.into();
    }
    if let Some(ch) = &a.channels {
        cfg.model.channels = ch.clone();
    }
    if let Some(d) = &a.noise_dir {
        cfg.data.noise_dir = Some(d.clone());
    }
    cfg.validate()?;
    log_config(&cfg);

    let corpus = open_corpus(&cfg, &a.data)?;
    let grid = cfg.warp.grid()?;
    let fe = frontend(&cfg, &grid)?;
    let aug = augmenter(&cfg, &corpus.root, !a.no_augment)?;
    let cache = a.from_cache.then(|| FeatureCache::new(cache_dir(cli, &cfg)));
    let inputs = TrainInputs {
        corpus: &corpus,
        frontend: &fe,
        grid: &grid,
        augmenter: &aug,
        cache: cache.as_ref(),
        model: cfg.model.clone(),
        evaluate: !a.no_eval,
    };
    let run = train(&inputs, &cfg.train)?;
    let out = a.out.clone().unwrap_or_else(|| {
        cfg.output
            .runs_dir
            .join(format!("{}-s{}", cfg.train.method, cfg.train.seed_init))
    });
    write_run_dir(&run, &out)?;
    let resolved = serde_json::json!({ "version": VERSION, "config": &cfg });
    fs::write(out.join("toolkit.json"), serde_json::to_vec_pretty(&resolved)?)?;
    let last = run.log.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, final loss {:.5}, eval {}, best epoch {}",
        out.display(),
        run.log.len(),
        last.train_loss,
        last.eval_acc.map_or("-".into(), |x| format!("{x:.2}%")),
        run.best_epoch
    );
    Ok(())
}

fn load_model(path: &Path, corpus: &Corpus) -> Result<KwsModel> {
    let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if model.n_classes() != corpus.labels.len() {
        bail!(
            "model has {} classes, corpus has {}",
            model.n_classes(),
            corpus.labels.len()
        );
    }
    Ok(model)
}

fn split_of(s: EvalSplitArg) -> Split {
    match s {
        EvalSplitArg::Train => Split::Train,
        EvalSplitArg::Eval => Split::Eval,
    }
}

fn eval_cmd(cli: &Cli, cfg: &ToolkitConfig, a: &EvalArgs) -> Result<()> {
    let method: EvalMethod = a.method.into();
    let corpus = open_corpus(cfg, &a.data)?;
    let model = load_model(&a.model, &corpus)?;
    check_provenance(&model, method, a.force)?;
    let grid = cfg.warp.grid()?;
    let fe = frontend(cfg, &grid)?;
    let cache = a.from_cache.then(|| FeatureCache::new(cache_dir(cli, cfg)));
    let source = FeatureSource {
        corpus: &corpus,
        frontend: &fe,
        cache: cache.as_ref(),
    };
    let entries = corpus.entries(split_of(a.split));
    let fusion = a.fusion.map_or(cfg.eval.fusion, Into::into);
    let scored = score_entries(&model, &source, entries, &grid, method, fusion)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let rows: Vec<ScoreRow> = scored.iter().map(ScoreRow::from).collect();
    write_scores_csv(&a.out.join("scores.csv"), corpus.labels.names(), &rows)?;
    let expected: BTreeSet<String> = entries.iter().map(|e| e.id.clone()).collect();
    let report = accuracy(method.as_str(), corpus.labels.names(), &rows, Some(&expected))?;
    fs::write(a.out.join("eval.json"), serde_json::to_vec_pretty(&report)?)?;
    if method == EvalMethod::VtlIndependent {
        let sweep = SweepSeries {
            method: method.as_str().into(),
            rows: sweep_from_decisions(&scored, &grid)?,
        };
        write_sweep_csv(&a.out.join("sweep.csv"), &[sweep])?;
    }
    println!("{method}: {:.2}% top-1 over {} utterances", report.top1, report.n_eval);
    Ok(())
}

fn sweep_cmd(cli: &Cli, cfg: &ToolkitConfig, a: &SweepArgs) -> Result<()> {
    let corpus = open_corpus(cfg, &a.data)?;
    let model = load_model(&a.model, &corpus)?;
    check_provenance(&model, EvalMethod::VtlIndependent, a.force)?;
    let grid = cfg.warp.grid()?;
    let fe = frontend(cfg, &grid)?;
    let cache = a.from_cache.then(|| FeatureCache::new(cache_dir(cli, cfg)));
    let source = FeatureSource {
        corpus: &corpus,
        frontend: &fe,
        cache: cache.as_ref(),
    };
    let rows = sweep_alpha(&model, &source, corpus.entries(split_of(a.split)), &grid)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_sweep_csv(
        &a.out,
        &[SweepSeries {
            method: model.provenance.method.to_string(),
            rows: rows.clone(),
        }],
    )?;
    for r in rows {
        println!("{:.2}\t{:.2}", r.alpha.alpha(), r.accuracy);
    }
    Ok(())
}

fn ttest_kind(welch: bool, cfg: &ToolkitConfig) -> TTestKind {
    if welch {
        TTestKind::Welch
    } else {
        cfg.eval.ttest
    }
}

fn ttest_cmd(cfg: &ToolkitConfig, a: &TtestArgs) -> Result<()> {
    let runs_a = read_runs_csv(&a.runs_a)?;
    let runs_b = read_runs_csv(&a.runs_b)?;
    let level = a.level.unwrap_or(cfg.eval.significance_level);
    let r = ttest_two_sample(&runs_a, &runs_b, ttest_kind(a.welch, cfg), level)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn report_cmd(cfg: &ToolkitConfig, a: &ReportArgs) -> Result<()> {
    let mut evaluations = Vec::new();
    for p in &a.evals {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        evaluations.push(r);
    }
    let mut sweeps = Vec::new();
    for p in &a.sweeps {
        sweeps.extend(read_sweep_csv(p)?);
    }
    let mut runs = Vec::new();
    for spec in &a.runs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--runs expects METHOD=CSV, got '{spec}'"))?;
        runs.push((name.to_string(), read_runs_csv(Path::new(path))?));
    }
    let level = a.level.unwrap_or(cfg.eval.significance_level);
    let mut comparisons = Vec::new();
    if !runs.is_empty() {
        let base = runs
            .iter()
            .find(|(n, _)| *n == a.baseline)
            .ok_or_else(|| anyhow!("no --runs entry for baseline '{}'", a.baseline))?;
        for (name, values) in runs.iter().filter(|(n, _)| *n != a.baseline) {
            comparisons.push(Comparison {
                method_a: name.clone(),
                method_b: base.0.clone(),
                result: ttest_two_sample(values, &base.1, ttest_kind(a.welch, cfg), level)?,
            });
        }
    }
    let report = Report::new(evaluations, sweeps, comparisons);
    emit_report(&a.out, &report)?;
    for e in &report.evaluations {
        println!("{}\t{:.2}", e.method, e.top1);
    }
    for c in &report.comparisons {
        let r = &c.result;
        println!(
            "{} {:.2}±{:.2} vs {} {:.2}±{:.2}: t={:.4} p={:.4e}{}",
            c.method_a,
            r.mean_a,
            r.ci95_a,
            c.method_b,
            r.mean_b,
            r.ci95_b,
            r.t_statistic,
            r.p_value,
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}
