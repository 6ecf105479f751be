//! `fcdtt` subcommands: `synth`, `preprocess`, `train`, `evaluate`.
//!
//! A single JSON config carries one section per command; flags override it.
//! Every command reads and writes under `--out`, so the four commands can be
//! chained with the same output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{summarize_reports, EvaluationReport, PredictionRecord};
use crate::network::{load_network, RoadNetwork};
use crate::pipeline::{
    evaluate, format_count_table, group_by_day, preprocess_traces, read_path_records,
    run_experiment, train, write_jsonl, PreprocessConfig, SplitManifest, TrainConfig,
    TrainedModel,
};
use crate::preprocess::{parse_traces, write_traces, Trace};
use crate::synth::{day_id, generate_day_traces, generate_truth, SynthConfig};

pub const NETWORK_FILE: &str = "network.json";
pub const TRACES_DIR: &str = "traces";
pub const TRUTH_FILE: &str = "truth.json";
pub const PATHS_FILE: &str = "paths.jsonl";
pub const MATCHES_FILE: &str = "matches.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const SPLIT_FILE: &str = "split.json";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MULTI_SEED_FILE: &str = "report_seeds.json";

#[derive(Debug, Parser)]
#[command(name = "fcdtt", version, about = "Corridor travel-time estimation from floating-car data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corridor, traces and ground truth.
    Synth(CommonArgs),
    /// Remove stops, map-match traces and write path integrals.
    Preprocess(PreprocessArgs),
    /// Fit historic link times and both regularization weights.
    Train(TrainArgs),
    /// Compare the three estimators on the held-out days.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write every matched fix to matches.jsonl.
    #[arg(long)]
    pub dump_matches: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    pub lambda1_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda2_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use this deviation penalty instead of the trained one.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Repeat split, training and evaluation for this many consecutive seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the day split and CV folds.
    pub seed: u64,
    pub synth: SynthConfig,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    pub network: Option<PathBuf>,
    /// A trace CSV or a directory of them.
    pub traces: Option<PathBuf>,
    pub dump_matches: bool,
    #[serde(flatten)]
    pub params: PreprocessConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub paths: Option<PathBuf>,
    #[serde(flatten)]
    pub params: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub paths: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub lambda2: Option<f64>,
    pub seeds: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            paths: None,
            model: None,
            split: None,
            lambda2: None,
            seeds: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = match &cli.command {
        Command::Synth(c) => c.threads,
        Command::Preprocess(a) => a.common.threads,
        Command::Train(a) => a.common.threads,
        Command::Evaluate(a) => a.common.threads,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(c) => cmd_synth(&c),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_string(path, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

#[derive(Serialize)]
struct TruthFile<'a> {
    theta_star: &'a [f64],
    delta_star: &'a [Vec<f64>],
}

pub fn cmd_synth(args: &CommonArgs) -> Result<()> {
    let cfg = PipelineConfig::load(args.config.as_deref())?;
    let mut synth = cfg.synth;
    if let Some(seed) = args.seed {
        synth.seed = seed;
    }
    let (net, truth) = generate_truth(&synth)?;
    let traces_dir = args.out.join(TRACES_DIR);
    ensure_dir(&traces_dir)?;
    write_string(&args.out.join(NETWORK_FILE), &(net.to_json_string() + "\n"))?;
    write_json(
        &args.out.join(TRUTH_FILE),
        &TruthFile {
            theta_star: &truth.theta_star,
            delta_star: &truth.delta_star,
        },
    )?;

    let days: Vec<Vec<Trace>> = (0..synth.n_days)
        .into_par_iter()
        .map(|day| generate_day_traces(&net, &truth, day, &synth))
        .collect::<Result<_>>()?;
    for (day, traces) in days.iter().enumerate() {
        let id = day_id(synth.window_start(day));
        let path = traces_dir.join(format!("{id}.csv"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_traces(file, traces).map_err(|e| Error::io(&path, e))?;
        let fixes: usize = traces.iter().map(Trace::len).sum();
        let incidents = truth.delta_star[day].iter().filter(|d| **d != 0.0).count();
        println!(
            "{id}: {} traces, {fixes} fixes, {incidents} incident link(s)",
            traces.len()
        );
    }
    Ok(())
}

fn collect_trace_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        require_file(path)?;
        Ok(vec![path.to_path_buf()])
    }
}

fn network_path(cfg: &PipelineConfig, out: &Path) -> PathBuf {
    cfg.preprocess
        .network
        .clone()
        .unwrap_or_else(|| out.join(NETWORK_FILE))
}

fn load_net(cfg: &PipelineConfig, out: &Path) -> Result<RoadNetwork> {
    let path = network_path(cfg, out);
    require_file(&path)?;
    load_network(&path)
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<()> {
    let out = &args.common.out;
    let cfg = PipelineConfig::load(args.common.config.as_deref())?;
    let net = load_net(&cfg, out)?;
    let traces_path = cfg
        .preprocess
        .traces
        .clone()
        .unwrap_or_else(|| out.join(TRACES_DIR));
    if !traces_path.exists() {
        return Err(Error::Config(format!("{} does not exist", traces_path.display())));
    }
    let mut traces = Vec::new();
    for file in collect_trace_files(&traces_path)? {
        traces.extend(parse_traces(&file)?);
    }
    let result = preprocess_traces(&traces, &net, &cfg.preprocess.params)?;
    let raw: usize = result.counts.raw_fixes.values().sum();
    if result.records.is_empty() {
        return Err(Error::Validation(format!(
            "0 path integrals from {} traces ({raw} fixes, {} invalidated as stops, {} off-corridor)",
            traces.len(),
            result.invalid_fixes,
            result.match_stats.rejected
        )));
    }
    ensure_dir(out)?;
    write_jsonl(&out.join(PATHS_FILE), &result.records)?;
    if args.dump_matches || cfg.preprocess.dump_matches {
        write_jsonl(&out.join(MATCHES_FILE), &result.matches)?;
    }
    print!("{}", format_count_table(&result.counts));
    println!(
        "{} traces, {raw} fixes: {} stop fixes, {} off-corridor, {} out of order; {} path integrals",
        traces.len(),
        result.invalid_fixes,
        result.match_stats.rejected,
        result.match_stats.outliers + result.match_stats.regressions,
        result.records.len()
    );
    Ok(())
}

fn load_blocks(path: &Path) -> Result<Vec<crate::eval::DayBlock>> {
    require_file(path)?;
    Ok(group_by_day(&read_path_records(path)?))
}

fn train_params(cfg: &PipelineConfig, args: &TrainArgs) -> TrainConfig {
    let mut params = cfg.train.params.clone();
    if let Some(g) = &args.lambda1_grid {
        params.lambda1_grid = Some(g.clone());
    }
    if let Some(g) = &args.lambda2_grid {
        params.lambda2_grid = Some(g.clone());
    }
    params
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let out = &args.common.out;
    let cfg = PipelineConfig::load(args.common.config.as_deref())?;
    let seed = args.common.seed.unwrap_or(cfg.seed);
    let net = load_net(&cfg, out)?;
    let paths = cfg.train.paths.clone().unwrap_or_else(|| out.join(PATHS_FILE));
    let blocks = load_blocks(&paths)?;
    let (model, manifest) = train(&blocks, &net, &train_params(&cfg, args), seed)?;
    ensure_dir(out)?;
    write_json(&out.join(MODEL_FILE), &model)?;
    write_json(&out.join(SPLIT_FILE), &manifest)?;
    println!(
        "lambda1 = {} (CV error {:.4}), lambda2 = {} (LOO error {:.4}), {} clamped link(s)",
        model.lambda1,
        model.cv_lambda1.best_error(),
        model.lambda2,
        model.cv_lambda2.best_error(),
        model.clamped_links.len()
    );
    Ok(())
}

fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut s = String::from("day,t_start,t_end,true_tt,historic,incidence,backproject\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.day,
            r.t_start,
            r.t_end,
            r.true_tt,
            r.historic,
            r.incidence,
            r.backproject.map_or(String::new(), |v| v.to_string())
        ));
    }
    write_string(path, &s)
}

fn print_report(report: &EvaluationReport) {
    println!(
        "{:<22} {:>10} {:>8} {:>6}   95% CI",
        "technique", "error (%)", "std", "n"
    );
    for (name, s) in &report.algorithms {
        println!(
            "{name:<22} {:>10.2} {:>8.3} {:>6}   [{:.2}, {:.2}]",
            100.0 * s.error_rate,
            s.std,
            s.n,
            100.0 * s.ci95[0],
            100.0 * s.ci95[1]
        );
    }
}

#[derive(Serialize)]
struct MultiSeedFile {
    reports: Vec<EvaluationReport>,
    summary: std::collections::BTreeMap<String, crate::eval::SeedSummary>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let out = &args.common.out;
    let cfg = PipelineConfig::load(args.common.config.as_deref())?;
    let section = &cfg.evaluate;
    let paths = section
        .paths
        .clone()
        .or_else(|| cfg.train.paths.clone())
        .unwrap_or_else(|| out.join(PATHS_FILE));
    let blocks = load_blocks(&paths)?;
    let seeds = args.seeds.unwrap_or(section.seeds);
    let lambda2 = args.lambda2.or(section.lambda2);

    if seeds > 1 {
        let net = load_net(&cfg, out)?;
        let base = args.common.seed.unwrap_or(cfg.seed);
        let params = cfg.train.params.clone();
        let reports: Vec<EvaluationReport> = (0..seeds as u64)
            .into_par_iter()
            .map(|i| -> Result<EvaluationReport> {
                let seed = base + i;
                let (model, manifest) = train(&blocks, &net, &params, seed)?;
                Ok(evaluate(&blocks, &model, &manifest, lambda2)?.0)
            })
            .collect::<Result<_>>()?;
        let summary = summarize_reports(&reports);
        ensure_dir(out)?;
        write_json(
            &out.join(MULTI_SEED_FILE),
            &MultiSeedFile {
                reports,
                summary: summary.clone(),
            },
        )?;
        for (name, s) in &summary {
            println!(
                "{name:<22} mean error {:.2}% ± {:.2}% over {} seeds",
                100.0 * s.mean_error_rate,
                100.0 * s.std_error_rate,
                s.n_seeds
            );
        }
        return Ok(());
    }

    let model_path = section.model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
    let split_path = section.split.clone().unwrap_or_else(|| out.join(SPLIT_FILE));
    require_file(&model_path)?;
    require_file(&split_path)?;
    let model: TrainedModel = read_json(&model_path)?;
    let manifest: SplitManifest = read_json(&split_path)?;
    let (report, records) = evaluate(&blocks, &model, &manifest, lambda2)?;
    ensure_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_predictions(&out.join(PREDICTIONS_FILE), &records)?;
    print_report(&report);
    Ok(())
}

/// Convenience for tests: a single multi-seed experiment without files.
pub fn experiment_reports(
    blocks: &[crate::eval::DayBlock],
    net: &RoadNetwork,
    params: &TrainConfig,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<EvaluationReport>> {
    seeds
        .into_par_iter()
        .map(|s| Ok(run_experiment(blocks, net, params, s)?.report))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "fcdtt", "train", "--out", "x", "--seed", "3", "--lambda1-grid", "0.1,1,10",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.common.seed, Some(3));
                assert_eq!(a.lambda1_grid, Some(vec![0.1, 1.0, 10.0]));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["fcdtt", "bogus"]).is_err());
    }

    #[test]
    fn config_sections_parse() {
        let json = r#"{
            "seed": 4,
            "synth": {"n_links": 8, "n_days": 3},
            "preprocess": {"max_snap_m": 40, "stop": {"d_max_m": 30, "n_max": 3}, "window": [8, 9]},
            "train": {"folds": 3, "split": [1, 1, 1], "lambda1_grid": [1.0]},
            "evaluate": {"seeds": 2}
        }"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.synth.n_links, 8);
        assert_eq!(cfg.preprocess.params.stop.n_max, 3);
        assert_eq!(cfg.preprocess.params.window, Some([8, 9]));
        assert_eq!(cfg.train.params.split, [1, 1, 1]);
        assert_eq!(cfg.evaluate.seeds, 2);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
