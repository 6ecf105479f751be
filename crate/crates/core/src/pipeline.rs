//! End-to-end stages shared by the command-line driver and the test suites:
//! trace cleaning and matching, two-stage training, and test evaluation,
//! plus the file formats that connect them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{build_observations, median_backproject, BackprojectionModel, HistoricModel};
use crate::eval::{
    default_lambda1_grid, default_lambda2_grid, evaluate_test, kfold_cv_lambda1, loo_cv_lambda2,
    random_split, CvCurve, DayBlock, EvaluationReport, PredictionRecord,
};
use crate::matcher::{
    build_path_integrals, match_trace_with_stats, MatchRecord, MatchStats, MatchedFix,
    PathIntegral, DEFAULT_MAX_GAP_S, DEFAULT_MAX_SNAP_M,
};
use crate::network::{build_difference_matrix, RoadNetwork};
use crate::preprocess::{detect_stops, split_at_stops, StopDetectorConfig, Trace};
use crate::synth::day_id;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub stop: StopDetectorConfig,
    pub max_snap_m: f64,
    pub max_gap_s: i64,
    /// Keep only path integrals starting within `[start, end)` hours (UTC).
    pub window: Option<[u32; 2]>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stop: StopDetectorConfig::default(),
            max_snap_m: DEFAULT_MAX_SNAP_M,
            max_gap_s: DEFAULT_MAX_GAP_S,
            window: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        if !(self.max_snap_m > 0.0) {
            return Err(Error::Config(format!("max_snap_m must be > 0, got {}", self.max_snap_m)));
        }
        if self.max_gap_s <= 0 {
            return Err(Error::Config(format!("max_gap_s must be > 0, got {}", self.max_gap_s)));
        }
        if let Some([a, b]) = self.window {
            if b <= a || b > 24 {
                return Err(Error::Config(format!("bad time window [{a}, {b})")));
            }
        }
        Ok(())
    }

    fn in_window(&self, t: i64) -> bool {
        match self.window {
            None => true,
            Some([a, b]) => {
                let hour = (t.rem_euclid(86_400) / 3_600) as u32;
                (a..b).contains(&hour)
            }
        }
    }
}

/// A path integral tagged with its day, as stored in the JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub day: String,
    pub t_start: i64,
    pub t_end: i64,
    pub coverage: BTreeMap<usize, f64>,
}

impl PathRecord {
    pub fn new(day: impl Into<String>, p: &PathIntegral) -> Self {
        PathRecord {
            day: day.into(),
            t_start: p.t_start,
            t_end: p.t_end,
            coverage: p.coverage.clone(),
        }
    }

    pub fn path(&self) -> PathIntegral {
        PathIntegral {
            t_start: self.t_start,
            t_end: self.t_end,
            coverage: self.coverage.clone(),
        }
    }
}

/// Per-trace outcome of cleaning and matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedTrace {
    pub matched: Vec<Vec<MatchedFix>>,
    pub paths: Vec<PathIntegral>,
    pub invalid_fixes: usize,
    pub match_stats: MatchStats,
}

/// Stop removal, matching and path-integral construction for one trace.
pub fn process_trace(trace: &Trace, net: &RoadNetwork, cfg: &PreprocessConfig) -> Result<ProcessedTrace> {
    let labels = detect_stops(trace, &cfg.stop);
    let mut out = ProcessedTrace {
        matched: Vec::new(),
        paths: Vec::new(),
        invalid_fixes: labels.invalid_count(),
        match_stats: MatchStats::default(),
    };
    for part in split_at_stops(trace, &labels)? {
        let (matched, stats) = match_trace_with_stats(&part, net, cfg.max_snap_m);
        out.match_stats.rejected += stats.rejected;
        out.match_stats.outliers += stats.outliers;
        out.match_stats.regressions += stats.regressions;
        out.paths.extend(
            build_path_integrals(&matched, net, cfg.max_gap_s)
                .into_iter()
                .filter(|p| cfg.in_window(p.t_start)),
        );
        out.matched.push(matched);
    }
    Ok(out)
}

/// Per-day raw fix and path-integral counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayCounts {
    pub raw_fixes: BTreeMap<String, usize>,
    pub path_integrals: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessOutput {
    pub records: Vec<PathRecord>,
    pub matches: Vec<MatchRecord>,
    pub counts: DayCounts,
    pub invalid_fixes: usize,
    pub match_stats: MatchStats,
}

/// Runs [`process_trace`] over all traces (in parallel) and tags each path
/// integral with the calendar day of its first fix's trace.
pub fn preprocess_traces(
    traces: &[Trace],
    net: &RoadNetwork,
    cfg: &PreprocessConfig,
) -> Result<PreprocessOutput> {
    cfg.validate()?;
    let processed: Vec<ProcessedTrace> = traces
        .par_iter()
        .map(|t| process_trace(t, net, cfg))
        .collect::<Result<_>>()?;
    let mut out = PreprocessOutput::default();
    for (trace, p) in traces.iter().zip(processed) {
        let Some(first) = trace.fixes.first() else {
            continue;
        };
        let day = day_id(first.t);
        *out.counts.raw_fixes.entry(day.clone()).or_default() += trace.len();
        *out.counts.path_integrals.entry(day.clone()).or_default() += p.paths.len();
        out.invalid_fixes += p.invalid_fixes;
        out.match_stats.rejected += p.match_stats.rejected;
        out.match_stats.outliers += p.match_stats.outliers;
        out.match_stats.regressions += p.match_stats.regressions;
        out.matches
            .extend(p.matched.iter().flatten().map(MatchRecord::from));
        out.records
            .extend(p.paths.iter().map(|path| PathRecord::new(day.clone(), path)));
    }
    out.records
        .sort_by(|a, b| (&a.day, a.t_start, a.t_end).cmp(&(&b.day, b.t_start, b.t_end)));
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_path_records(path: &Path) -> Result<Vec<PathRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PathRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Groups records into day blocks ordered by day id.
pub fn group_by_day(records: &[PathRecord]) -> Vec<DayBlock> {
    let mut days: BTreeMap<&str, Vec<PathIntegral>> = BTreeMap::new();
    for r in records {
        days.entry(&r.day).or_default().push(r.path());
    }
    days.into_iter()
        .map(|(day, paths)| DayBlock {
            day_id: day.to_string(),
            paths,
        })
        .collect()
}

pub fn validate_blocks(blocks: &[DayBlock], n_links: usize) -> Result<()> {
    for b in blocks {
        for p in &b.paths {
            p.validate(n_links)
                .map_err(|e| Error::Validation(format!("day {}: {e}", b.day_id)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Defaults to 25 log-spaced values over [1e-2, 1e3].
    pub lambda1_grid: Option<Vec<f64>>,
    /// Defaults to 25 log-spaced values over [1e-3, 1] × the largest
    /// per-day zero-deviation threshold.
    pub lambda2_grid: Option<Vec<f64>>,
    pub folds: usize,
    /// Day counts for (historic training, deviation training, test).
    pub split: [usize; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1_grid: None,
            lambda2_grid: None,
            folds: 5,
            split: [10, 6, 6],
        }
    }
}

/// Everything learned in training, as written to the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub theta: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_links: usize,
    pub clamped_links: Vec<usize>,
    pub cv_lambda1: CvCurve,
    pub cv_lambda2: CvCurve,
    /// Median-backprojection link times fitted on all training days.
    pub baseline: Vec<Option<f64>>,
}

impl TrainedModel {
    pub fn historic(&self) -> HistoricModel {
        HistoricModel {
            theta: self.theta.clone(),
            lambda1: self.lambda1,
            clamped_links: self.clamped_links.clone(),
        }
    }

    pub fn baseline_model(&self) -> BackprojectionModel {
        BackprojectionModel {
            link_times: self.baseline.clone(),
        }
    }
}

/// Which days went where; evaluation refuses test days that trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train1: Vec<String>,
    pub train2: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn check_disjoint(&self) -> Result<()> {
        for d in &self.test {
            if self.train1.contains(d) || self.train2.contains(d) {
                return Err(Error::Config(format!(
                    "test day {d} was also used for training"
                )));
            }
        }
        Ok(())
    }

    pub fn select(&self, blocks: &[DayBlock], days: &[String]) -> Result<Vec<DayBlock>> {
        days.iter()
            .map(|d| {
                blocks
                    .iter()
                    .find(|b| &b.day_id == d)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("day {d} not found in path data")))
            })
            .collect()
    }
}

fn day_ids(blocks: &[DayBlock]) -> Vec<String> {
    blocks.iter().map(|b| b.day_id.clone()).collect()
}

/// Splits the days, selects λ1 by k-fold CV on the first training set and
/// λ2 by leave-one-out on the second, and fits the baseline on both.
pub fn train(
    blocks: &[DayBlock],
    net: &RoadNetwork,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainedModel, SplitManifest)> {
    let n_links = net.n_links();
    validate_blocks(blocks, n_links)?;
    let [n1, n2, nt] = cfg.split;
    if n1 == 0 || n2 == 0 {
        return Err(Error::Config(
            "both training sets need at least one day".into(),
        ));
    }
    let (train1, train2, test) = random_split(blocks, (n1, n2, nt), seed)?;
    let d = build_difference_matrix(net);
    let grid1 = cfg.lambda1_grid.clone().unwrap_or_else(default_lambda1_grid);
    let (cv_lambda1, historic) = kfold_cv_lambda1(&train1, n_links, &d, &grid1, cfg.folds, seed)?;
    if !historic.clamped_links.is_empty() {
        log::warn!(
            "historic fit clamped {} link(s) to zero: {:?}",
            historic.clamped_links.len(),
            historic.clamped_links
        );
    }

    let grid2 = match &cfg.lambda2_grid {
        Some(g) => g.clone(),
        None => default_lambda2_grid(&train2, &historic.theta)?,
    };
    let cv_lambda2 = loo_cv_lambda2(&train2, &historic, &grid2)?;

    let training_paths: Vec<PathIntegral> = train1
        .iter()
        .chain(&train2)
        .flat_map(|b| b.paths.iter().cloned())
        .collect();
    let baseline = median_backproject(&training_paths, &net.lengths())?;

    let model = TrainedModel {
        lambda2: cv_lambda2.best_lambda,
        theta: historic.theta,
        lambda1: historic.lambda1,
        n_links,
        clamped_links: historic.clamped_links,
        cv_lambda1,
        cv_lambda2,
        baseline: baseline.link_times,
    };
    let manifest = SplitManifest {
        seed,
        train1: day_ids(&train1),
        train2: day_ids(&train2),
        test: day_ids(&test),
    };
    Ok((model, manifest))
}

/// Evaluates the three estimators on the manifest's test days.
pub fn evaluate(
    blocks: &[DayBlock],
    model: &TrainedModel,
    manifest: &SplitManifest,
    lambda2_override: Option<f64>,
) -> Result<(EvaluationReport, Vec<PredictionRecord>)> {
    manifest.check_disjoint()?;
    if model.theta.len() != model.n_links {
        return Err(Error::Validation("model theta length differs from n_links".into()));
    }
    validate_blocks(blocks, model.n_links)?;
    let test = manifest.select(blocks, &manifest.test)?;
    let lambda2 = lambda2_override.unwrap_or(model.lambda2);
    let (mut report, records) =
        evaluate_test(&test, &model.historic(), lambda2, &model.baseline_model())?;
    report.seed = manifest.seed;
    Ok((report, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: TrainedModel,
    pub manifest: SplitManifest,
    pub report: EvaluationReport,
    pub records: Vec<PredictionRecord>,
}

/// One full train/evaluate cycle for a given split seed.
pub fn run_experiment(
    blocks: &[DayBlock],
    net: &RoadNetwork,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Experiment> {
    let (model, manifest) = train(blocks, net, cfg, seed)?;
    let (report, records) = evaluate(blocks, &model, &manifest, None)?;
    Ok(Experiment {
        model,
        manifest,
        report,
        records,
    })
}

/// Ridge fit of one day's link times from its own paths (used by the
/// closure checks).
pub fn fit_day(block: &DayBlock, net: &RoadNetwork, lambda1: f64) -> Result<HistoricModel> {
    let obs = build_observations(&block.paths, net.n_links())?;
    crate::estimator::solve_ridge(&obs, &build_difference_matrix(net), lambda1)
}

/// min / max / mean / sample std of a list of counts.
pub fn count_summary(counts: &[usize]) -> (usize, usize, f64, f64) {
    if counts.is_empty() {
        return (0, 0, 0.0, 0.0);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = if counts.len() > 1 {
        counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (
        *counts.iter().min().unwrap(),
        *counts.iter().max().unwrap(),
        mean,
        var.sqrt(),
    )
}

/// The raw-vs-processed table printed by `preprocess`.
pub fn format_count_table(counts: &DayCounts) -> String {
    let raw: Vec<usize> = counts.raw_fixes.values().copied().collect();
    let pis: Vec<usize> = counts.path_integrals.values().copied().collect();
    let mut s = format!("{:>6} {:>6} {:>8} {:>8}\n", "min", "max", "mean", "std");
    for (vals, label) in [(raw, "Raw Data in Sector"), (pis, "Processed Path Integrals")] {
        let (lo, hi, mean, sd) = count_summary(&vals);
        s.push_str(&format!("{lo:>6} {hi:>6} {mean:>8.1} {sd:>8.1}   {label}\n"));
    }
    s
}
