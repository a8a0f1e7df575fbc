//! Speech-Commands-style corpus ingestion.
//!
//! Layout is `<root>/<keyword>/<file>.wav`; directories starting with `_`
//! (e.g. `_background_noise_`) are not keywords. Utterance ids are the
//! `/`-separated path relative to the root, matching the official
//! `validation_list.txt` / `testing_list.txt` entries.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeywordLabel {
    pub index: usize,
    pub name: String,
}

/// Bijection between keyword names and class indices, in sorted name order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(mut names: Vec<String>) -> Result<Self> {
        names.sort();
        names.dedup();
        if names.is_empty() {
            return Err(Error::Manifest("label set is empty".into()));
        }
        Ok(LabelSet { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label(&self, name: &str) -> Option<KeywordLabel> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|index| KeywordLabel {
                index,
                name: name.to_string(),
            })
    }

    pub fn by_index(&self, index: usize) -> Option<KeywordLabel> {
        self.names.get(index).map(|name| KeywordLabel {
            index,
            name: name.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: KeywordLabel,
}

impl Utterance {
    /// Symmetric zero-pad or center-crop to `target_samples`.
    pub fn canonicalize_length(mut self, target_samples: usize) -> Self {
        self.samples = fit_length(&self.samples, target_samples);
        self
    }
}

/// Zero-pad symmetrically (odd remainder goes right) or center-crop.
pub fn fit_length(samples: &[f64], target: usize) -> Vec<f64> {
    let n = samples.len();
    if n >= target {
        let start = (n - target) / 2;
        samples[start..start + target].to_vec()
    } else {
        let left = (target - n) / 2;
        let mut out = vec![0.0; target];
        out[left..left + n].copy_from_slice(samples);
        out
    }
}

/// Decode a 16-bit PCM mono WAV into samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bad = |reason: String| Error::BadWav {
        id: path.display().to_string(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::FormatError(msg) => bad(format!("not a RIFF/WAVE file: {msg}")),
        other => bad(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(bad(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad(format!(
            "unsupported encoding {:?} {}-bit; only 16-bit PCM is accepted",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate == 0 {
        return Err(bad("sample rate is zero".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// Write samples (clipped to `[-1, 1]`) as 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::BadWav {
            id: path.display().to_string(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// What to do with the official validation list when building a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationPolicy {
    /// Drop validation files (84843 train / 11005 eval on the full corpus).
    #[default]
    Exclude,
    /// Fold validation files into the training split.
    Train,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: BTreeSet<String>,
    pub eval: BTreeSet<String>,
}

impl SplitManifest {
    pub fn new(train: BTreeSet<String>, eval: BTreeSet<String>) -> Result<Self> {
        let m = SplitManifest { train, eval };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        if let Some(id) = self.train.intersection(&self.eval).next() {
            return Err(Error::Manifest(format!("{id} is in both train and eval")));
        }
        Ok(())
    }

    /// Build from the corpus's own `testing_list.txt` / `validation_list.txt`.
    pub fn from_official_lists(root: &Path, policy: ValidationPolicy) -> Result<Self> {
        let all = enumerate_wavs(root)?;
        let testing = read_id_list(&root.join("testing_list.txt"))?;
        let validation = match root.join("validation_list.txt") {
            p if p.exists() => read_id_list(&p)?,
            _ => BTreeSet::new(),
        };
        let mut train = BTreeSet::new();
        let mut eval = BTreeSet::new();
        for id in all {
            if testing.contains(&id) {
                eval.insert(id);
            } else if validation.contains(&id) {
                if policy == ValidationPolicy::Train {
                    train.insert(id);
                }
            } else {
                train.insert(id);
            }
        }
        SplitManifest::new(train, eval)
    }

    /// Deterministic split by hashing each id; for corpora without official lists.
    pub fn from_hash(root: &Path, eval_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::Manifest(format!("eval fraction {eval_fraction} outside [0, 1)")));
        }
        let mut train = BTreeSet::new();
        let mut eval = BTreeSet::new();
        for id in enumerate_wavs(root)? {
            let bucket = (crate::seed::fnv1a(id.as_bytes()) % 10_000) as f64 / 10_000.0;
            if bucket < eval_fraction {
                eval.insert(id);
            } else {
                train.insert(id);
            }
        }
        SplitManifest::new(train, eval)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.insert(id.replace('\\', "/"));
        }
    }
    Ok(ids)
}

/// Sorted keyword directory names under `root`.
pub fn keyword_dirs(root: &Path) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && !name.starts_with('_') && !name.starts_with('.') {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::NoKeywordDirectories(root.to_path_buf()));
    }
    names.sort();
    Ok(names)
}

/// All `<keyword>/<file>.wav` ids under `root`, sorted.
pub fn enumerate_wavs(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for kw in keyword_dirs(root)? {
        let dir = root.join(&kw);
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.to_ascii_lowercase().ends_with(".wav") {
                ids.push(format!("{kw}/{name}"));
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// A corpus entry; audio is read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: KeywordLabel,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub skip_bad: bool,
    pub target_samples: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            skip_bad: false,
            target_samples: SAMPLE_RATE as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub labels: LabelSet,
    pub train: Vec<CorpusEntry>,
    pub eval: Vec<CorpusEntry>,
    /// `(id, reason)` for files dropped under `skip_bad`.
    pub skipped: Vec<(String, String)>,
    pub target_samples: usize,
}

impl Corpus {
    pub fn entries(&self, split: Split) -> &[CorpusEntry] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }

    /// Read and canonicalize one utterance.
    pub fn load(&self, entry: &CorpusEntry) -> Result<Utterance> {
        let (samples, sample_rate) = read_wav(&entry.path).map_err(|e| match e {
            Error::BadWav { reason, .. } => Error::BadWav {
                id: entry.id.clone(),
                reason,
            },
            other => other,
        })?;
        if samples.is_empty() {
            return Err(Error::BadWav {
                id: entry.id.clone(),
                reason: "no samples".into(),
            });
        }
        Ok(Utterance {
            id: entry.id.clone(),
            samples,
            sample_rate,
            label: entry.label.clone(),
        }
        .canonicalize_length(self.target_samples))
    }

    pub fn summary(&self) -> String {
        format!(
            "{} classes, {} train, {} eval, {} skipped",
            self.labels.len(),
            self.train.len(),
            self.eval.len(),
            self.skipped.len()
        )
    }
}

/// Resolve a manifest against a corpus root, checking every listed file.
pub fn load_corpus(root: &Path, manifest: &SplitManifest, opts: LoadOptions) -> Result<Corpus> {
    manifest.check_disjoint()?;
    let labels = LabelSet::new(keyword_dirs(root)?)?;
    let mut corpus = Corpus {
        root: root.to_path_buf(),
        labels,
        train: Vec::new(),
        eval: Vec::new(),
        skipped: Vec::new(),
        target_samples: opts.target_samples,
    };
    for (split, ids) in [(Split::Train, &manifest.train), (Split::Eval, &manifest.eval)] {
        for id in ids {
            let keyword = id.split('/').next().unwrap_or_default();
            let label = corpus
                .labels
                .label(keyword)
                .ok_or_else(|| Error::Manifest(format!("{id}: unknown keyword directory '{keyword}'")))?;
            let path = root.join(id);
            if !path.is_file() {
                return Err(Error::Manifest(format!("{id} does not resolve to a file")));
            }
            let entry = CorpusEntry {
                id: id.clone(),
                path,
                label,
            };
            match corpus.load(&entry) {
                Ok(_) => {}
                Err(Error::BadWav { id, reason }) if opts.skip_bad => {
                    log::warn!("skipping {id}: {reason}");
                    corpus.skipped.push((id, reason));
                    continue;
                }
                Err(e) => return Err(e),
            }
            match split {
                Split::Train => corpus.train.push(entry),
                Split::Eval => corpus.eval.push(entry),
            }
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn make_fixture(root: &Path, classes: &[&str], per_class: usize) {
        for c in classes {
            fs::create_dir_all(root.join(c)).unwrap();
            for i in 0..per_class {
                write_wav(&root.join(c).join(format!("f{i}.wav")), &vec![0.1; 16000], 16000).unwrap();
            }
        }
    }

    #[test]
    fn zero_wav_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &vec![0.0; 16000], 16000).unwrap();
        let (s, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 16000);
        assert_eq!(s.len(), 16000);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn min_sample_is_minus_one() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.wav");
        write_wav(&p, &[-1.0, 0.5], 16000).unwrap();
        let (s, _) = read_wav(&p).unwrap();
        assert_eq!(s[0], -1.0);
        assert_eq!(s[1], 0.5);
    }

    #[test]
    fn sine_amplitude_survives() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        let sine: Vec<f64> = (0..16000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        write_wav(&p, &sine, 16000).unwrap();
        let (s, _) = read_wav(&p).unwrap();
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_non_riff_stereo_and_float() {
        let dir = tempdir().unwrap();
        let junk = dir.path().join("junk.wav");
        fs::write(&junk, b"definitely not a wav file at all").unwrap();
        assert!(matches!(read_wav(&junk), Err(Error::BadWav { .. })));

        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");

        let float = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&float, spec).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&float).unwrap_err().to_string();
        assert!(err.contains("unsupported encoding"), "{err}");
    }

    #[test]
    fn canonicalize_pad_and_crop() {
        let same = fit_length(&vec![1.0; 16000], 16000);
        assert_eq!(same, vec![1.0; 16000]);

        let padded = fit_length(&vec![1.0; 15000], 16000);
        assert_eq!(padded.len(), 16000);
        assert!(padded[..500].iter().all(|&v| v == 0.0));
        assert!(padded[500..15500].iter().all(|&v| v == 1.0));
        assert!(padded[15500..].iter().all(|&v| v == 0.0));

        let odd = fit_length(&[1.0; 3], 6);
        assert_eq!(odd, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);

        let long: Vec<f64> = (0..17000).map(|i| i as f64).collect();
        let cropped = fit_length(&long, 16000);
        assert_eq!(cropped[0], 500.0);
        assert_eq!(cropped[15999], 16499.0);
    }

    #[test]
    fn empty_root_errors() {
        let dir = tempdir().unwrap();
        let err = load_corpus(dir.path(), &SplitManifest::default(), LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no keyword directories found"));
        let missing = dir.path().join("nope");
        assert!(matches!(
            load_corpus(&missing, &SplitManifest::default(), LoadOptions::default()),
            Err(Error::MissingDirectory(_))
        ));
    }

    #[test]
    fn two_by_three_fixture_splits_four_two() {
        let dir = tempdir().unwrap();
        make_fixture(dir.path(), &["yes", "no"], 3);
        let ids = enumerate_wavs(dir.path()).unwrap();
        assert_eq!(ids.len(), 6);
        let eval: BTreeSet<String> = ["no/f2.wav", "yes/f2.wav"].iter().map(|s| s.to_string()).collect();
        let train: BTreeSet<String> = ids.iter().filter(|i| !eval.contains(*i)).cloned().collect();
        let m = SplitManifest::new(train, eval).unwrap();
        let corpus = load_corpus(dir.path(), &m, LoadOptions::default()).unwrap();
        assert_eq!(corpus.train.len(), 4);
        assert_eq!(corpus.eval.len(), 2);
        assert_eq!(corpus.labels.names(), &["no".to_string(), "yes".to_string()]);
        let u = corpus.load(&corpus.eval[1]).unwrap();
        assert_eq!(u.label.index, 1);
        assert_eq!(u.samples.len(), 16000);
    }

    #[test]
    fn manifest_must_be_disjoint_and_resolve() {
        let dir = tempdir().unwrap();
        make_fixture(dir.path(), &["a"], 2);
        let both: BTreeSet<String> = ["a/f0.wav".to_string()].into();
        assert!(SplitManifest::new(both.clone(), both).is_err());
        let ghost = SplitManifest::new(["a/ghost.wav".to_string()].into(), BTreeSet::new()).unwrap();
        assert!(load_corpus(dir.path(), &ghost, LoadOptions::default()).is_err());
    }

    #[test]
    fn bad_wav_reported_or_skipped() {
        let dir = tempdir().unwrap();
        make_fixture(dir.path(), &["a"], 2);
        fs::write(dir.path().join("a/bad.wav"), b"garbage").unwrap();
        let m = SplitManifest::from_hash(dir.path(), 0.0).unwrap();
        let err = load_corpus(dir.path(), &m, LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("a/bad.wav"), "{err}");
        let opts = LoadOptions {
            skip_bad: true,
            ..LoadOptions::default()
        };
        let corpus = load_corpus(dir.path(), &m, opts).unwrap();
        assert_eq!(corpus.train.len(), 2);
        assert_eq!(corpus.skipped.len(), 1);
    }

    #[test]
    fn official_lists_policy() {
        let dir = tempdir().unwrap();
        make_fixture(dir.path(), &["a", "b"], 3);
        fs::create_dir_all(dir.path().join("_background_noise_")).unwrap();
        fs::write(dir.path().join("testing_list.txt"), "a/f0.wav\nb/f0.wav\n").unwrap();
        fs::write(dir.path().join("validation_list.txt"), "a/f1.wav\n").unwrap();
        let ex = SplitManifest::from_official_lists(dir.path(), ValidationPolicy::Exclude).unwrap();
        assert_eq!((ex.train.len(), ex.eval.len()), (3, 2));
        let tr = SplitManifest::from_official_lists(dir.path(), ValidationPolicy::Train).unwrap();
        assert_eq!((tr.train.len(), tr.eval.len()), (4, 2));
        let labels = LabelSet::new(keyword_dirs(dir.path()).unwrap()).unwrap();
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn manifest_json_roundtrip() {
        let dir = tempdir().unwrap();
        let m = SplitManifest::new(["x/1.wav".to_string()].into(), ["y/2.wav".to_string()].into()).unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(SplitManifest::load(&p).unwrap(), m);
    }
}
