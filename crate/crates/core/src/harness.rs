//! Prequential (test-then-train) evaluation of the filtered naive Bayes.
//!
//! Each instance is first classified from everything seen before it, using
//! the features the filter selects at that moment, and only then added to the
//! per-feature tables and to the classifier. Instances without a class label
//! still update the tables (as class-missing counts) but are neither scored nor
//! used to train the classifier.
//!
//! Report layout written by [`emit_report`]:
//!
//! * `curve_<run>_<filter>.csv`: `k,predicted,actual,correct,running_accuracy,n_selected`,
//!   one row per scored instance.
//! * `features.csv`: `run,filter,epsilon,p_bar,seed,scored,accuracy,mean_selected`.
//! * `significance.csv`: `run_a,run_b,k,t,p_value,significant` for every pair of
//!   runs scored on the same instance sequence.
//! * `significance_ranges.csv`: `run_a,run_b,start,end,better`, maximal runs of
//!   consecutive significant prefixes.
//! * `summary.json`: the same figures as one document.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::counts::{apply_prior, ContingencyTable, PriorSpec};
use crate::dataio::{shuffle_seeded, ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::filters::{rank_features, FilterConfig};
use crate::mi::{summarize, MiSummary, VariancePath};
use crate::mode::ModeOptions;
use crate::naive_bayes::NaiveBayes;

pub const REPORT_FORMAT: &str = "bayes-mi-report/1";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub filter: FilterConfig,
    pub prior: PriorSpec,
    pub smoothing: f64,
    pub mode: ModeOptions,
    /// Shuffle the instances with this seed before the run.
    pub seed: Option<u64>,
    /// Keep class-missing counts in the feature tables (general variance path)
    /// instead of dropping them.
    pub keep_class_missing: bool,
}

impl RunConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            prior: PriorSpec::default(),
            smoothing: NaiveBayes::DEFAULT_SMOOTHING,
            mode: ModeOptions::default(),
            seed: None,
            keep_class_missing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Position of the instance in the (shuffled) stream, from 0.
    pub position: usize,
    pub predicted: usize,
    pub actual: usize,
    pub correct: bool,
    pub running_accuracy: f64,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub filter: FilterConfig,
    pub seed: Option<u64>,
    pub dataset_digest: String,
    pub instances: usize,
    pub unlabeled: usize,
    pub outcomes: Vec<Outcome>,
    /// Feature summaries that failed numerically; the feature was left out of
    /// that prediction.
    pub numeric_failures: usize,
    pub diagnostics: Vec<String>,
}

impl ExperimentRecord {
    pub fn accuracy(&self) -> f64 {
        self.outcomes.last().map_or(0.0, |o| o.running_accuracy)
    }

    pub fn mean_selected(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().map(|o| o.n_selected as f64).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn correctness(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.correct).collect()
    }
}

/// Incrementally maintained feature/class tables.
#[derive(Debug, Clone)]
struct FeatureTables {
    /// `None` for features with fewer than two categories, or when the class
    /// has fewer than two.
    tables: Vec<Option<ContingencyTable>>,
}

impl FeatureTables {
    fn new(classes: usize, cards: &[usize]) -> Result<Self> {
        let tables = cards
            .iter()
            .map(|&s| {
                if classes >= 2 && s >= 2 {
                    ContingencyTable::zeros(classes, s).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    fn record(&mut self, class: Option<usize>, features: &[Option<usize>]) -> Result<()> {
        for (table, &value) in self.tables.iter_mut().zip(features) {
            if let Some(t) = table {
                t.record(class, value)?;
            }
        }
        Ok(())
    }
}

fn check_categorical(dataset: &Dataset) -> Result<()> {
    if let Some(col) = dataset.columns.iter().find(|c| c.kind == ColumnKind::Numeric) {
        return Err(Error::InvalidArgument(format!(
            "column '{}' is numeric; discretize before running",
            col.name
        )));
    }
    Ok(())
}

fn feature_cardinalities(dataset: &Dataset) -> Vec<usize> {
    dataset
        .feature_columns()
        .into_iter()
        .map(|c| dataset.columns[c].cardinality())
        .collect()
}

/// Runs the prequential protocol over a categorical dataset.
pub fn run_prequential(dataset: &Dataset, config: &RunConfig) -> Result<ExperimentRecord> {
    check_categorical(dataset)?;
    let digest = dataset.digest()?;
    let shuffled;
    let data = match config.seed {
        Some(seed) => {
            shuffled = shuffle_seeded(dataset, seed);
            &shuffled
        }
        None => dataset,
    };
    let classes = data.n_classes();
    let cards = feature_cardinalities(data);
    let mut diagnostics = Vec::new();
    if classes < 2 {
        diagnostics.push(format!("class has {classes} observed value(s); every feature is uninformative"));
    }
    let mut tables = FeatureTables::new(classes, &cards)?;
    let mut model = NaiveBayes::new(classes.max(1), cards.clone(), config.smoothing)?;
    let mut outcomes = Vec::new();
    let mut correct = 0usize;
    let mut unlabeled = 0usize;
    let mut numeric_failures = 0usize;
    let idle = MiSummary::from_moments(0.0, 0.0, 0.0);

    for position in 0..data.n_instances() {
        let features = data.feature_values(position)?;
        let class = data.class_of(position);
        if let Some(actual) = class {
            let mut summaries = Vec::with_capacity(cards.len());
            let mut usable = Vec::with_capacity(cards.len());
            for table in &tables.tables {
                let summary = match table {
                    Some(t) => feature_summary(t, config),
                    None => Ok(idle),
                };
                match summary {
                    Ok(s) => {
                        summaries.push(s);
                        usable.push(table.is_some());
                    }
                    Err(e) if e.is_numeric() => {
                        numeric_failures += 1;
                        summaries.push(idle);
                        usable.push(false);
                    }
                    Err(e) => return Err(e),
                }
            }
            let ranking = rank_features(&summaries, &config.filter);
            let selected: Vec<usize> = ranking.included.into_iter().filter(|&f| usable[f]).collect();
            let prediction = model.predict(&features, &selected)?;
            let hit = prediction.label == actual;
            correct += usize::from(hit);
            outcomes.push(Outcome {
                position,
                predicted: prediction.label,
                actual,
                correct: hit,
                running_accuracy: correct as f64 / (outcomes.len() + 1) as f64,
                n_selected: selected.len(),
            });
            model.update(&features, actual)?;
        } else {
            unlabeled += 1;
        }
        tables.record(class, &features)?;
        debug_assert!(
            (position + 1) % 100 != 0 || tables_match_fresh(&tables, data, position + 1),
            "maintained tables diverged from a fresh tabulation at {}",
            position + 1
        );
    }
    if numeric_failures > 0 {
        diagnostics.push(format!("{numeric_failures} feature summaries failed numerically and were skipped"));
    }
    Ok(ExperimentRecord {
        filter: config.filter,
        seed: config.seed,
        dataset_digest: digest,
        instances: data.n_instances(),
        unlabeled,
        outcomes,
        numeric_failures,
        diagnostics,
    })
}

/// Summaries of every feature against the class over the whole dataset;
/// `None` for features with fewer than two categories.
pub fn summarize_features(dataset: &Dataset, config: &RunConfig) -> Result<Vec<Option<MiSummary>>> {
    check_categorical(dataset)?;
    let mut tables = FeatureTables::new(dataset.n_classes(), &feature_cardinalities(dataset))?;
    for row in 0..dataset.n_instances() {
        tables.record(dataset.class_of(row), &dataset.feature_values(row)?)?;
    }
    tables
        .tables
        .iter()
        .map(|t| t.as_ref().map(|t| feature_summary(t, config)).transpose())
        .collect()
}

fn feature_summary(table: &ContingencyTable, config: &RunConfig) -> Result<MiSummary> {
    let counts = apply_prior(table, &config.prior)?;
    let counts = if config.keep_class_missing {
        counts
    } else {
        counts.without_class_missing()
    };
    summarize(&counts, config.mode, VariancePath::Auto)
}

fn tables_match_fresh(tables: &FeatureTables, data: &Dataset, upto: usize) -> bool {
    let cards = feature_cardinalities(data);
    let Ok(mut fresh) = FeatureTables::new(data.n_classes(), &cards) else {
        return false;
    };
    for row in 0..upto {
        let Ok(features) = data.feature_values(row) else {
            return false;
        };
        if fresh.record(data.class_of(row), &features).is_err() {
            return false;
        }
    }
    fresh.tables == tables.tables
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixVerdict {
    pub k: usize,
    pub t: f64,
    pub p_value: f64,
    pub critical: f64,
    pub significant: bool,
}

/// Two-tailed paired t test on every prefix `k >= 2` of two 0/1 correctness
/// sequences. A zero-variance difference is significant exactly when its
/// mean is nonzero (`t = ±inf`).
pub fn paired_t_test(a: &[bool], b: &[bool], level: f64) -> Result<Vec<PrefixVerdict>> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "sequences differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} must lie in (0, 1)")));
    }
    let mut sum = 0i64;
    let mut sum_sq = 0i64;
    let mut out = Vec::with_capacity(a.len().saturating_sub(1));
    for (idx, (&x, &y)) in a.iter().zip(b).enumerate() {
        let d = i64::from(x) - i64::from(y);
        sum += d;
        sum_sq += d * d;
        let k = idx + 1;
        if k < 2 {
            continue;
        }
        let kf = k as f64;
        // k * Σd² - (Σd)² is exact in integers
        let spread = (k as i64 * sum_sq - sum * sum) as f64;
        let t = if spread == 0.0 {
            if sum == 0 {
                0.0
            } else {
                f64::INFINITY.copysign(sum as f64)
            }
        } else {
            sum as f64 / (spread / (kf - 1.0)).sqrt()
        };
        let dist = StudentsT::new(0.0, 1.0, kf - 1.0).map_err(|e| Error::Internal(e.to_string()))?;
        let critical = dist.inverse_cdf(1.0 - level / 2.0);
        let p_value = if t.is_infinite() { 0.0 } else { (2.0 * dist.sf(t.abs())).min(1.0) };
        out.push(PrefixVerdict {
            k,
            t,
            p_value,
            critical,
            significant: t.abs() > critical,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificantRange {
    pub start: usize,
    pub end: usize,
    pub better: Better,
}

/// Maximal stretches of consecutive significant prefixes with one winner.
pub fn significance_ranges(verdicts: &[PrefixVerdict]) -> Vec<SignificantRange> {
    let mut out: Vec<SignificantRange> = Vec::new();
    for v in verdicts.iter().filter(|v| v.significant) {
        let better = if v.t > 0.0 { Better::A } else { Better::B };
        match out.last_mut() {
            Some(last) if last.end + 1 == v.k && last.better == better => last.end = v.k,
            _ => out.push(SignificantRange {
                start: v.k,
                end: v.k,
                better,
            }),
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct RunSummary {
    run: usize,
    filter: String,
    epsilon: f64,
    p_bar: f64,
    seed: Option<u64>,
    dataset_digest: String,
    instances: usize,
    unlabeled: usize,
    scored: usize,
    accuracy: f64,
    mean_selected: f64,
    numeric_failures: usize,
    curve_file: String,
    diagnostics: Vec<String>,
}

#[derive(Debug, Serialize)]
struct PairSummary {
    run_a: usize,
    run_b: usize,
    level: f64,
    ranges: Vec<SignificantRange>,
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    format: &'static str,
    runs: Vec<RunSummary>,
    pairs: Vec<PairSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub curves: Vec<PathBuf>,
    pub features: PathBuf,
    pub significance: PathBuf,
    pub ranges: PathBuf,
    pub summary: PathBuf,
}

fn comparable(a: &ExperimentRecord, b: &ExperimentRecord) -> bool {
    a.dataset_digest == b.dataset_digest
        && a.outcomes.len() == b.outcomes.len()
        && a.outcomes.iter().zip(&b.outcomes).all(|(x, y)| x.position == y.position)
}

/// Writes curves, the feature summary, pairwise significance and
/// `summary.json` into `out_dir`.
pub fn emit_report(records: &[ExperimentRecord], out_dir: impl AsRef<Path>, level: f64) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no runs to report".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let mut curves = Vec::new();
    let mut runs = Vec::new();
    let mut features = csv::Writer::from_writer(Vec::new());
    features.write_record(["run", "filter", "epsilon", "p_bar", "seed", "scored", "accuracy", "mean_selected"])?;
    for (run, rec) in records.iter().enumerate() {
        let name = format!("curve_{run:02}_{}.csv", rec.filter.kind);
        let mut curve = csv::Writer::from_writer(Vec::new());
        curve.write_record(["k", "predicted", "actual", "correct", "running_accuracy", "n_selected"])?;
        for (k, o) in rec.outcomes.iter().enumerate() {
            curve.write_record([
                (k + 1).to_string(),
                o.predicted.to_string(),
                o.actual.to_string(),
                u8::from(o.correct).to_string(),
                o.running_accuracy.to_string(),
                o.n_selected.to_string(),
            ])?;
        }
        let path = out_dir.join(&name);
        fs::write(&path, finish(curve)?)?;
        curves.push(path);
        let seed = rec.seed.map(|s| s.to_string()).unwrap_or_default();
        features.write_record([
            run.to_string(),
            rec.filter.kind.to_string(),
            rec.filter.epsilon.to_string(),
            rec.filter.p_bar.to_string(),
            seed,
            rec.outcomes.len().to_string(),
            rec.accuracy().to_string(),
            rec.mean_selected().to_string(),
        ])?;
        runs.push(RunSummary {
            run,
            filter: rec.filter.kind.to_string(),
            epsilon: rec.filter.epsilon,
            p_bar: rec.filter.p_bar,
            seed: rec.seed,
            dataset_digest: rec.dataset_digest.clone(),
            instances: rec.instances,
            unlabeled: rec.unlabeled,
            scored: rec.outcomes.len(),
            accuracy: rec.accuracy(),
            mean_selected: rec.mean_selected(),
            numeric_failures: rec.numeric_failures,
            curve_file: name,
            diagnostics: rec.diagnostics.clone(),
        });
    }

    let mut sig = csv::Writer::from_writer(Vec::new());
    sig.write_record(["run_a", "run_b", "k", "t", "p_value", "significant"])?;
    let mut ranges_csv = csv::Writer::from_writer(Vec::new());
    ranges_csv.write_record(["run_a", "run_b", "start", "end", "better"])?;
    let mut pairs = Vec::new();
    for a in 0..records.len() {
        for b in a + 1..records.len() {
            if !comparable(&records[a], &records[b]) {
                continue;
            }
            let verdicts = paired_t_test(&records[a].correctness(), &records[b].correctness(), level)?;
            for v in &verdicts {
                sig.write_record([
                    a.to_string(),
                    b.to_string(),
                    v.k.to_string(),
                    v.t.to_string(),
                    v.p_value.to_string(),
                    u8::from(v.significant).to_string(),
                ])?;
            }
            let ranges = significance_ranges(&verdicts);
            for r in &ranges {
                let better = match r.better {
                    Better::A => "a",
                    Better::B => "b",
                };
                ranges_csv.write_record([
                    a.to_string(),
                    b.to_string(),
                    r.start.to_string(),
                    r.end.to_string(),
                    better.to_string(),
                ])?;
            }
            pairs.push(PairSummary {
                run_a: a,
                run_b: b,
                level,
                ranges,
            });
        }
    }

    let files = ReportFiles {
        curves,
        features: out_dir.join("features.csv"),
        significance: out_dir.join("significance.csv"),
        ranges: out_dir.join("significance_ranges.csv"),
        summary: out_dir.join("summary.json"),
    };
    fs::write(&files.features, finish(features)?)?;
    fs::write(&files.significance, finish(sig)?)?;
    fs::write(&files.ranges, finish(ranges_csv)?)?;
    let summary = ReportSummary {
        format: REPORT_FORMAT,
        runs,
        pairs,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&files.summary, json)?;
    Ok(files)
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))
}
