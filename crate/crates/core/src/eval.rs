//! Two-stage hyperparameter selection and the test-time comparison of the
//! historic, historic-plus-incident, and median-backprojection estimators.
//!
//! Errors are absolute prediction errors as a fraction of the observed
//! travel time. Hyperparameter curves report the mean of that quantity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    build_observations, lasso_lambda_max, predict_travel_time, solve_lasso, solve_ridge,
    BackprojectionModel, HistoricModel,
};
use crate::matcher::PathIntegral;
use crate::network::DifferenceMatrix;
use crate::synth::{stream_rng, FOLD_STREAM, SPLIT_STREAM};

pub const HISTORIC: &str = "historic";
pub const INCIDENCE: &str = "historic+incidence";
pub const BACKPROJECT: &str = "median_backproject";

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// One day's path integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct DayBlock {
    pub day_id: String,
    pub paths: Vec<PathIntegral>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub lambdas: Vec<f64>,
    pub errors: Vec<f64>,
    pub best_lambda: f64,
}

impl CvCurve {
    /// Picks the minimum-error grid point, preferring the larger λ on ties.
    pub fn from_errors(lambdas: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != errors.len() {
            return Err(Error::Config("empty or mismatched lambda grid".into()));
        }
        let mut best = 0;
        for i in 1..lambdas.len() {
            let (e, b) = (errors[i], errors[best]);
            if e < b || (e == b && lambdas[i] > lambdas[best]) || b.is_nan() {
                best = i;
            }
        }
        Ok(CvCurve {
            best_lambda: lambdas[best],
            lambdas,
            errors,
        })
    }

    pub fn best_error(&self) -> f64 {
        let i = self
            .lambdas
            .iter()
            .position(|l| *l == self.best_lambda)
            .expect("best lambda is on the grid");
        self.errors[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmStats {
    pub error_rate: f64,
    pub std: f64,
    pub n: usize,
    pub ci95: [f64; 2],
}

impl AlgorithmStats {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            errors.iter().sum::<f64>() / n as f64
        };
        let std = if n > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self::from_summary(mean, std, n)
    }

    /// Normal-approximation interval `mean ± 1.96·std/√n`.
    pub fn from_summary(error_rate: f64, std: f64, n: usize) -> Self {
        let half = Z95 * std / (n as f64).sqrt();
        AlgorithmStats {
            error_rate,
            std,
            n,
            ci95: [error_rate - half, error_rate + half],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub algorithms: BTreeMap<String, AlgorithmStats>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
}

/// One held-out path and the three predictions for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub day: String,
    pub t_start: i64,
    pub t_end: i64,
    pub true_tt: f64,
    pub historic: f64,
    pub incidence: f64,
    pub backproject: Option<f64>,
}

pub fn error_rate(predicted: f64, true_tt: f64) -> Result<f64> {
    if !(true_tt > 0.0) {
        return Err(Error::Domain(format!("true travel time {true_tt} must be > 0")));
    }
    Ok((predicted - true_tt).abs() / true_tt)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

pub fn default_lambda1_grid() -> Vec<f64> {
    log_grid(1e-2, 1e3, 25)
}

/// 25 log-spaced values over `[1e-3·λmax, λmax]`, where `λmax` is the largest
/// per-day zero-deviation threshold.
pub fn default_lambda2_grid(blocks: &[DayBlock], theta: &[f64]) -> Result<Vec<f64>> {
    let mut lmax: f64 = 0.0;
    for b in blocks {
        if b.paths.is_empty() {
            continue;
        }
        let obs = build_observations(&b.paths, theta.len())?;
        lmax = lmax.max(lasso_lambda_max(&obs, theta)?);
    }
    if lmax <= 0.0 {
        return Ok(vec![1.0]);
    }
    Ok(log_grid(1e-3 * lmax, lmax, 25))
}

/// Shuffles `blocks` with `seed` and deals them into three disjoint sets of
/// the requested sizes.
pub fn random_split<T: Clone>(
    blocks: &[T],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n1, n2, nt) = sizes;
    if n1 + n2 + nt > blocks.len() {
        return Err(Error::Config(format!(
            "split sizes ({n1}, {n2}, {nt}) exceed the {} available blocks",
            blocks.len()
        )));
    }
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let take = |r: std::ops::Range<usize>| r.map(|i| blocks[order[i]].clone()).collect();
    Ok((take(0..n1), take(n1..n1 + n2), take(n1 + n2..n1 + n2 + nt)))
}

fn mean_error(paths: &[&PathIntegral], theta: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for p in paths {
        let pred = predict_travel_time(&p.coverage, theta, None)?;
        total += error_rate(pred, p.travel_time_s())?;
    }
    Ok(total / paths.len() as f64)
}

/// k-fold selection of the smoothness weight on paths pooled across blocks,
/// followed by a refit on all paths at the selected weight.
pub fn kfold_cv_lambda1(
    blocks: &[DayBlock],
    n_links: usize,
    d: &DifferenceMatrix,
    lambda_grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<(CvCurve, HistoricModel)> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("lambda1 grid is empty".into()));
    }
    let paths: Vec<&PathIntegral> = blocks.iter().flat_map(|b| b.paths.iter()).collect();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if paths.len() < k {
        return Err(Error::Config(format!(
            "{} paths cannot fill {k} folds",
            paths.len()
        )));
    }
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.shuffle(&mut stream_rng(seed, FOLD_STREAM));
    let mut fold_of = vec![0; paths.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let jobs: Vec<(usize, usize)> = (0..lambda_grid.len())
        .flat_map(|l| (0..k).map(move |f| (l, f)))
        .collect();
    let fold_errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(l, f)| -> Result<f64> {
            let train: Vec<PathIntegral> = paths
                .iter()
                .zip(&fold_of)
                .filter(|(_, &fo)| fo != f)
                .map(|(p, _)| (*p).clone())
                .collect();
            let held: Vec<&PathIntegral> = paths
                .iter()
                .zip(&fold_of)
                .filter(|(_, &fo)| fo == f)
                .map(|(p, _)| *p)
                .collect();
            let obs = build_observations(&train, n_links)?;
            let model = solve_ridge(&obs, d, lambda_grid[l])?;
            mean_error(&held, &model.theta)
        })
        .collect::<Result<_>>()?;

    let errors: Vec<f64> = fold_errors
        .chunks(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect();
    let curve = CvCurve::from_errors(lambda_grid.to_vec(), errors)?;
    let all: Vec<PathIntegral> = paths.into_iter().cloned().collect();
    let model = solve_ridge(&build_observations(&all, n_links)?, d, curve.best_lambda)?;
    Ok((curve, model))
}

/// Predicts `held` from the deviations fitted on `rest`.
fn incidence_prediction(
    rest: &[PathIntegral],
    held: &PathIntegral,
    theta: &[f64],
    lambda2: f64,
) -> Result<(f64, bool)> {
    if rest.is_empty() {
        return Ok((predict_travel_time(&held.coverage, theta, None)?, true));
    }
    let obs = build_observations(rest, theta.len())?;
    let est = solve_lasso(&obs, theta, lambda2)?;
    Ok((
        predict_travel_time(&held.coverage, theta, Some(&est.delta))?,
        est.converged,
    ))
}

fn warn_unconverged(what: &str, count: usize, total: usize) {
    if count > 0 {
        log::warn!("{what}: {count} of {total} lasso solves hit the sweep cap");
    }
}

fn leave_one_out(paths: &[PathIntegral], i: usize) -> Vec<PathIntegral> {
    paths
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, p)| p.clone())
        .collect()
}

/// Leave-one-path-out selection of the deviation penalty within each day.
pub fn loo_cv_lambda2(
    blocks: &[DayBlock],
    model: &HistoricModel,
    lambda_grid: &[f64],
) -> Result<CvCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("lambda2 grid is empty".into()));
    }
    let usable: Vec<&DayBlock> = blocks
        .iter()
        .filter(|b| {
            if b.paths.len() < 2 {
                log::warn!("day {} has {} path(s); skipped", b.day_id, b.paths.len());
                false
            } else {
                true
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Config(
            "no day has the two paths needed for leave-one-out".into(),
        ));
    }
    let per_lambda: Vec<(f64, usize, usize)> = lambda_grid
        .par_iter()
        .map(|&lambda| -> Result<(f64, usize, usize)> {
            let mut total = 0.0;
            let mut count = 0usize;
            let mut stuck = 0usize;
            for b in &usable {
                for (i, held) in b.paths.iter().enumerate() {
                    let rest = leave_one_out(&b.paths, i);
                    let (pred, ok) = incidence_prediction(&rest, held, &model.theta, lambda)?;
                    total += error_rate(pred, held.travel_time_s())?;
                    count += 1;
                    stuck += usize::from(!ok);
                }
            }
            Ok((total / count as f64, stuck, count))
        })
        .collect::<Result<_>>()?;
    warn_unconverged(
        "lambda2 cross-validation",
        per_lambda.iter().map(|e| e.1).sum(),
        per_lambda.iter().map(|e| e.2).sum(),
    );
    let errors = per_lambda.iter().map(|e| e.0).collect();
    CvCurve::from_errors(lambda_grid.to_vec(), errors)
}

/// Leave-one-path-out comparison of the three estimators on test days.
pub fn evaluate_test(
    blocks: &[DayBlock],
    model: &HistoricModel,
    lambda2: f64,
    baseline: &BackprojectionModel,
) -> Result<(EvaluationReport, Vec<PredictionRecord>)> {
    let jobs: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, block)| (0..block.paths.len()).map(move |i| (b, i)))
        .collect();
    let solved: Vec<(PredictionRecord, bool)> = jobs
        .par_iter()
        .map(|&(b, i)| -> Result<(PredictionRecord, bool)> {
            let block = &blocks[b];
            let held = &block.paths[i];
            let rest = leave_one_out(&block.paths, i);
            let historic = predict_travel_time(&held.coverage, &model.theta, None)?;
            let (incidence, ok) = incidence_prediction(&rest, held, &model.theta, lambda2)?;
            let backproject = match baseline.predict(&held.coverage) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("baseline skips a path on day {}: {e}", block.day_id);
                    None
                }
            };
            let record = PredictionRecord {
                day: block.day_id.clone(),
                t_start: held.t_start,
                t_end: held.t_end,
                true_tt: held.travel_time_s(),
                historic,
                incidence,
                backproject,
            };
            Ok((record, ok))
        })
        .collect::<Result<_>>()?;
    warn_unconverged(
        "test evaluation",
        solved.iter().filter(|s| !s.1).count(),
        solved.len(),
    );
    let records: Vec<PredictionRecord> = solved.into_iter().map(|s| s.0).collect();
    if records.is_empty() {
        return Err(Error::Config("no test paths to evaluate".into()));
    }

    let mut hist = Vec::with_capacity(records.len());
    let mut inc = Vec::with_capacity(records.len());
    let mut base = Vec::with_capacity(records.len());
    for r in &records {
        hist.push(error_rate(r.historic, r.true_tt)?);
        inc.push(error_rate(r.incidence, r.true_tt)?);
        if let Some(v) = r.backproject {
            base.push(error_rate(v, r.true_tt)?);
        }
    }
    let mut algorithms = BTreeMap::new();
    algorithms.insert(HISTORIC.to_string(), AlgorithmStats::from_errors(&hist));
    algorithms.insert(INCIDENCE.to_string(), AlgorithmStats::from_errors(&inc));
    algorithms.insert(BACKPROJECT.to_string(), AlgorithmStats::from_errors(&base));
    Ok((
        EvaluationReport {
            algorithms,
            lambda1: model.lambda1,
            lambda2,
            seed: 0,
        },
        records,
    ))
}

/// Mean and spread of each algorithm's error rate across repeated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean_error_rate: f64,
    pub std_error_rate: f64,
    pub n_seeds: usize,
}

pub fn summarize_reports(reports: &[EvaluationReport]) -> BTreeMap<String, SeedSummary> {
    let mut out = BTreeMap::new();
    for name in [HISTORIC, INCIDENCE, BACKPROJECT] {
        let rates: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.algorithms.get(name))
            .map(|s| s.error_rate)
            .collect();
        let stats = AlgorithmStats::from_errors(&rates);
        out.insert(
            name.to_string(),
            SeedSummary {
                mean_error_rate: stats.error_rate,
                std_error_rate: stats.std,
                n_seeds: rates.len(),
            },
        );
    }
    out
}
