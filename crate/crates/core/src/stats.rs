//! Accuracy, confidence intervals, two-sample t-tests and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::inference::{ScoredUtterance, SweepRow};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub posteriors: Vec<f64>,
}

impl From<&ScoredUtterance> for ScoreRow {
    fn from(s: &ScoredUtterance) -> Self {
        ScoreRow {
            id: s.id.clone(),
            label: s.label,
            predicted: s.decision.predicted,
            posteriors: s.decision.fused.posteriors.clone(),
        }
    }
}

/// `id,label,predicted,p_<class>...` with class names in label order.
pub fn write_scores_csv(path: &Path, classes: &[String], rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "predicted".into()];
    header.extend(classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header)?;
    for r in rows {
        if r.posteriors.len() != classes.len() || r.label >= classes.len() || r.predicted >= classes.len() {
            return Err(Error::Scores(format!(
                "{}: row does not match {} classes",
                r.id,
                classes.len()
            )));
        }
        let mut rec = vec![r.id.clone(), classes[r.label].clone(), classes[r.predicted].clone()];
        rec.extend(r.posteriors.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_scores_csv`]; returns the class names and rows.
pub fn read_scores_csv(path: &Path) -> Result<(Vec<String>, Vec<ScoreRow>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" || &header[2] != "predicted" {
        return Err(Error::Scores(format!("{}: not a scores file", path.display())));
    }
    let classes: Vec<String> = header
        .iter()
        .skip(3)
        .map(|h| {
            h.strip_prefix("p_")
                .map(str::to_string)
                .ok_or_else(|| Error::Scores(format!("bad posterior column '{h}'")))
        })
        .collect::<Result<_>>()?;
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Scores(format!("unknown class '{name}'")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let posteriors = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Scores(format!("bad posterior '{v}'")))
            })
            .collect::<Result<_>>()?;
        rows.push(ScoreRow {
            id: rec[0].to_string(),
            label: lookup(&rec[1])?,
            predicted: lookup(&rec[2])?,
            posteriors,
        });
    }
    Ok((classes, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub name: String,
    pub support: usize,
    pub correct: usize,
    /// Percent; absent when the class has no eval examples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Percent.
    pub top1: f64,
    pub n_eval: usize,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Top-1 and class-wise accuracy. With `expected`, every listed id must be
/// scored exactly once and nothing else may appear.
pub fn accuracy(
    method: &str,
    classes: &[String],
    rows: &[ScoreRow],
    expected: Option<&BTreeSet<String>>,
) -> Result<EvalReport> {
    let k = classes.len();
    let mut seen = BTreeSet::new();
    let mut confusion = vec![vec![0usize; k]; k];
    for r in rows {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Scores(format!("{} scored more than once", r.id)));
        }
        if r.label >= k || r.predicted >= k {
            return Err(Error::Scores(format!("{}: class index out of range", r.id)));
        }
        confusion[r.label][r.predicted] += 1;
    }
    if let Some(exp) = expected {
        if let Some(missing) = exp.iter().find(|id| !seen.contains(id.as_str())) {
            return Err(Error::Scores(format!("{missing} was not scored")));
        }
        if let Some(extra) = seen.iter().find(|id| !exp.contains(**id)) {
            return Err(Error::Scores(format!("{extra} is not in the eval split")));
        }
    }
    let n_eval = rows.len();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let support: usize = confusion[i].iter().sum();
            ClassAccuracy {
                name: name.clone(),
                support,
                correct: confusion[i][i],
                accuracy: (support > 0).then(|| 100.0 * confusion[i][i] as f64 / support as f64),
            }
        })
        .collect();
    Ok(EvalReport {
        method: method.to_string(),
        top1: if n_eval == 0 {
            0.0
        } else {
            100.0 * correct as f64 / n_eval as f64
        },
        n_eval,
        per_class,
        confusion,
    })
}

/// `P(|T| >= |t|)` via the regularized incomplete beta function. Near zero
/// the complementary form keeps precision that `df / (df + t^2)` rounds away.
fn two_sided_tail(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    if t2 < df {
        1.0 - beta_reg(0.5, df / 2.0, t2 / (df + t2))
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * two_sided_tail(t, df);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    two_sided_tail(t, df).clamp(0.0, 1.0)
}

/// Inverse of [`t_cdf`] by bisection.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0, 1)");
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn need_two(x: &[f64], what: &str) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Stats(format!("{what} needs at least 2 runs, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// `(mean, half_width)` of the Student-t interval at `level`.
pub fn confidence_interval(runs: &[f64], level: f64) -> Result<(f64, f64)> {
    need_two(runs, "confidence interval")?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Stats(format!("confidence level {level} outside (0, 1)")));
    }
    let (mean, var) = mean_var(runs);
    let n = runs.len() as f64;
    let q = t_quantile(0.5 + level / 2.0, n - 1.0);
    Ok((mean, q * (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Equal-variance pooled test.
    #[default]
    Student,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub kind: TTestKind,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Half-widths of the 95% intervals.
    pub ci95_a: f64,
    pub ci95_b: f64,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub alpha_level: f64,
    pub significant: bool,
    /// Both groups constant and equal: `t` is undefined and `p` is reported as 1.
    pub degenerate: bool,
}

/// Two-sided two-sample t-test of `a` against `b`.
pub fn ttest_two_sample(a: &[f64], b: &[f64], kind: TTestKind, alpha_level: f64) -> Result<SignificanceResult> {
    need_two(a, "group a")?;
    need_two(b, "group b")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (se, df) = match kind {
        TTestKind::Student => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
        TTestKind::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            ((sa + sb).sqrt(), df)
        }
    };
    let diff = ma - mb;
    let (t, p, degenerate) = if se == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0, true)
        } else {
            (diff.signum() * f64::INFINITY, 0.0, false)
        }
    } else {
        let t = diff / se;
        (
            t,
            t_two_sided_p(t, if df.is_finite() { df } else { na + nb - 2.0 }),
            false,
        )
    };
    Ok(SignificanceResult {
        kind,
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
        ci95_a: confidence_interval(a, 0.95)?.1,
        ci95_b: confidence_interval(b, 0.95)?.1,
        t_statistic: t,
        df,
        p_value: p,
        alpha_level,
        significant: p < alpha_level,
        degenerate,
    })
}

/// Accuracies from a runs file: one number per line, optionally under a
/// header, or an `accuracy` column.
pub fn read_runs_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut col = 0;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i == 0 {
            if let Some(pos) = rec.iter().position(|h| h.trim() == "accuracy") {
                col = pos;
                continue;
            }
            if rec.get(0).is_some_and(|v| v.trim().parse::<f64>().is_err()) {
                continue;
            }
        }
        let field = rec.get(col).unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        out.push(
            field
                .parse()
                .map_err(|_| Error::Stats(format!("{}: bad accuracy '{field}'", path.display())))?,
        );
    }
    Ok(out)
}

/// A multi-seed comparison of two methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub method: String,
    pub rows: Vec<SweepRow>,
}

/// Everything `emit_report` writes. Single-run evaluations and multi-seed
/// comparisons are kept in separate sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub evaluations: Vec<EvalReport>,
    pub sweeps: Vec<SweepSeries>,
    pub comparisons: Vec<Comparison>,
}

impl Report {
    pub fn new(evaluations: Vec<EvalReport>, sweeps: Vec<SweepSeries>, comparisons: Vec<Comparison>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            evaluations,
            sweeps,
            comparisons,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Report = serde_json::from_str(&text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Stats(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }
}

pub const TABLE2_COLUMNS: [&str; 3] = ["method", "accuracy", "n_eval"];
pub const CLASSWISE_COLUMNS: [&str; 5] = ["method", "class", "support", "correct", "accuracy"];
pub const SWEEP_COLUMNS: [&str; 4] = ["method", "alpha", "accuracy", "n_eval"];
pub const TABLE3_COLUMNS: [&str; 11] = [
    "method_a",
    "method_b",
    "mean_a",
    "ci95_a",
    "mean_b",
    "ci95_b",
    "t_statistic",
    "df",
    "p_value",
    "alpha_level",
    "significant",
];

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `method,alpha,accuracy,n_eval`, one row per series and factor.
pub fn write_sweep_csv(path: &Path, sweeps: &[SweepSeries]) -> Result<()> {
    write_csv(
        path,
        &SWEEP_COLUMNS,
        sweeps.iter().flat_map(|s| {
            s.rows.iter().map(|r| {
                vec![
                    s.method.clone(),
                    format!("{:.2}", r.alpha.alpha()),
                    r.accuracy.to_string(),
                    r.n.to_string(),
                ]
            })
        }),
    )
}

/// Inverse of [`write_sweep_csv`]; series keep their first-appearance order.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepSeries>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SWEEP_COLUMNS) {
        return Err(Error::Scores(format!("{}: not a sweep file", path.display())));
    }
    let mut out: Vec<SweepSeries> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Scores(format!("{}: bad {what} '{}'", path.display(), rec.as_slice()));
        let alpha: f64 = rec[1].parse().map_err(|_| bad("alpha"))?;
        let row = SweepRow {
            alpha: crate::warp::WarpFactor::new(alpha)?,
            accuracy: rec[2].parse().map_err(|_| bad("accuracy"))?,
            n: rec[3].parse().map_err(|_| bad("count"))?,
        };
        match out.iter_mut().find(|s| s.method == rec[0]) {
            Some(s) => s.rows.push(row),
            None => out.push(SweepSeries {
                method: rec[0].to_string(),
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

/// `report.json`, `table2.csv`, `classwise.csv`, `sweep.csv`, `table3.csv`.
pub fn emit_report(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    write_csv(
        &dir.join("table2.csv"),
        &TABLE2_COLUMNS,
        report
            .evaluations
            .iter()
            .map(|e| vec![e.method.clone(), e.top1.to_string(), e.n_eval.to_string()]),
    )?;
    write_csv(
        &dir.join("classwise.csv"),
        &CLASSWISE_COLUMNS,
        report.evaluations.iter().flat_map(|e| {
            e.per_class.iter().map(|c| {
                vec![
                    e.method.clone(),
                    c.name.clone(),
                    c.support.to_string(),
                    c.correct.to_string(),
                    c.accuracy.map_or(String::new(), |a| a.to_string()),
                ]
            })
        }),
    )?;
    write_sweep_csv(&dir.join("sweep.csv"), &report.sweeps)?;
    write_csv(
        &dir.join("table3.csv"),
        &TABLE3_COLUMNS,
        report.comparisons.iter().map(|c| {
            let r = &c.result;
            vec![
                c.method_a.clone(),
                c.method_b.clone(),
                r.mean_a.to_string(),
                r.ci95_a.to_string(),
                r.mean_b.to_string(),
                r.ci95_b.to_string(),
                r.t_statistic.to_string(),
                r.df.to_string(),
                r.p_value.to_string(),
                r.alpha_level.to_string(),
                r.significant.to_string(),
            ]
        }),
    )
}
