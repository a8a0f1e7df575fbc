//! Synthetic keyword corpus for tests and smoke runs.
//!
//! Each class is a vowel-like harmonic complex with two class-specific
//! formants. Each utterance draws a "speaker" scale that stretches the
//! formants, mimicking vocal tract length variation.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::dataset::{write_wav, SplitManifest, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

const NAMES: [&str; 10] = ["down", "go", "left", "no", "off", "on", "right", "stop", "up", "yes"];

#[derive(Debug, Clone, Copy)]
pub struct FixtureSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Every `eval_every`-th utterance of a class goes to `testing_list.txt`.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            classes: 2,
            per_class: 20,
            eval_every: 5,
            seed: 7,
        }
    }
}

pub fn class_name(k: usize) -> String {
    NAMES.get(k).map_or_else(|| format!("kw{k:02}"), |s| s.to_string())
}

fn formants(k: usize) -> (f64, f64) {
    (
        320.0 + 110.0 * (k % 6) as f64,
        950.0 + 260.0 * (k / 6 % 6) as f64 + 90.0 * (k % 3) as f64,
    )
}

/// One second of audio for class `k`.
pub fn synth_utterance<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let n = SAMPLE_RATE as usize;
    let sr = SAMPLE_RATE as f64;
    let vtl = rng.random_range(0.85..1.15);
    let f0 = rng.random_range(95.0..210.0);
    let (f1, f2) = formants(k);
    let (f1, f2) = (f1 * vtl, f2 * vtl);
    let dur = rng.random_range(0.45..0.7);
    let len = (dur * sr) as usize;
    let start = rng.random_range(0..n - len);
    let gain = rng.random_range(0.2..0.4);
    let mut out: Vec<f64> = (0..n).map(|_| 0.003 * (rng.random::<f64>() - 0.5)).collect();
    let harmonics: Vec<(f64, f64)> = (1..)
        .map(|h| h as f64 * f0)
        .take_while(|&f| f < 4000.0)
        .map(|f| {
            let bump = |c: f64, bw: f64| (-((f - c) / bw).powi(2)).exp();
            (f, bump(f1, 120.0) + 0.7 * bump(f2, 180.0) + 0.02)
        })
        .collect();
    for i in 0..len {
        let t = i as f64 / sr;
        let env = (PI * i as f64 / len as f64).sin().powi(2);
        let s: f64 = harmonics.iter().map(|&(f, a)| a * (2.0 * PI * f * t).sin()).sum();
        out[start + i] += gain * env * s / 2.0;
    }
    for v in &mut out {
        *v = v.clamp(-1.0, 1.0);
    }
    out
}

/// Write `<root>/<class>/<i>.wav` plus `testing_list.txt`, returning the
/// resulting train/eval manifest.
pub fn write_fixture_corpus(root: &Path, spec: &FixtureSpec) -> Result<SplitManifest> {
    if spec.classes < 2 || spec.per_class == 0 || spec.eval_every == 0 {
        return Err(Error::Config(format!("bad fixture spec {spec:?}")));
    }
    let mut train = BTreeSet::new();
    let mut eval = BTreeSet::new();
    for k in 0..spec.classes {
        let name = class_name(k);
        let dir = root.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..spec.per_class {
            let id = format!("{name}/u{i:03}.wav");
            let mut rng = seed::rng(seed::example_seed(spec.seed, &id, 0));
            write_wav(&root.join(&id), &synth_utterance(k, &mut rng), SAMPLE_RATE)?;
            if (i + 1) % spec.eval_every == 0 {
                eval.insert(id);
            } else {
                train.insert(id);
            }
        }
    }
    let list: String = eval.iter().map(|id| format!("{id}\n")).collect();
    let p = root.join("testing_list.txt");
    fs::write(&p, list).map_err(|e| Error::io(&p, e))?;
    SplitManifest::new(train, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_corpus, LoadOptions, ValidationPolicy};

    #[test]
    fn fixture_layout_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture_corpus(dir.path(), &FixtureSpec::default()).unwrap();
        assert_eq!((m.train.len(), m.eval.len()), (32, 8));
        let official = SplitManifest::from_official_lists(dir.path(), ValidationPolicy::Exclude).unwrap();
        assert_eq!(official, m);
        let corpus = load_corpus(dir.path(), &m, LoadOptions::default()).unwrap();
        assert_eq!(corpus.labels.names(), ["down", "go"]);
    }

    #[test]
    fn utterances_are_deterministic_and_bounded() {
        let a = synth_utterance(1, &mut seed::rng(3));
        let b = synth_utterance(1, &mut seed::rng(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 16000);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert!(a.iter().any(|v| v.abs() > 0.05));
    }
}
