//! Command-line front end: dataset generation, single training runs,
//! lambda sweeps, frontier assembly from saved record files, and metric
//! evaluation of prediction files.
//!
//! Every command is deterministic given its flags, config, and input
//! files; wall-clock fields are the only output that varies between
//! reruns. Exit codes: 0 success, 1 runtime or numeric failure, 2 usage
//! or configuration error.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{FairnessNotion, RunConfig};
use crate::data::{generate_moons, DEFAULT_MOON_NOISE_SD};
use crate::error::{Error, Result};
use crate::frontier::build_frontier;
use crate::metrics::{accuracy, delta_dp, delta_eo, groupwise_roc_auc, Mode, PredictionSet};
use crate::nn::DenseNet;
use crate::record::{
    fa_points, frontier_summary, read_records_csv, read_records_jsonl, validate_records,
    write_frontier_csv, write_frontier_summary, write_history_csv, write_records_csv,
    write_records_jsonl, RunRecord,
};
use crate::trainer::{
    base_data, realize_datasets, sweep, train_fair, unconstrained_zeta, RunSummary, SweepRun,
    TrainSettings,
};

#[derive(Debug, Parser)]
#[command(
    name = "fairdiv",
    version,
    about = "Fair classifier training with f-divergence regularization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the two-moons dataset as a CSV file.
    MoonGen(MoonGenArgs),
    /// Train one classifier from a config file and save its artifacts.
    Train(TrainArgs),
    /// Train over a (lambda, seed) grid and export records plus frontier.
    Sweep(SweepArgs),
    /// Assemble a fairness-accuracy frontier from saved record files.
    Frontier(FrontierArgs),
    /// Evaluate fairness metrics for predictions or a saved model.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct MoonGenArgs {
    /// Number of points to generate.
    #[arg(long, default_value_t = 15000)]
    pub n: usize,
    /// Gaussian noise standard deviation added to both coordinates.
    #[arg(long, default_value_t = DEFAULT_MOON_NOISE_SD)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config's `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config's `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker pool size (0 = available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Comma-separated lambda values, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Low-bias threshold, overriding the lambda=0 mean bias.
    #[arg(long)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    /// Record files to merge (.csv or .jsonl as written by sweep/train).
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Output directory for frontier.csv and frontier_summary.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Low-bias threshold, overriding the lambda=0 mean bias.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Bias notion ("dp" or "eo"); required only when the records mix
    /// notions.
    #[arg(long)]
    pub notion: Option<String>,
}

#[derive(Debug, Args)]
#[command(group = ArgGroup::new("source").required(true).args(["predictions", "data"]))]
pub struct MetricsArgs {
    /// CSV with columns score,label,group; scores in [0, 1].
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Dataset CSV (x0..,label,group) to score with --checkpoint. The
    /// features must already be in the model's input scale.
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    /// Model checkpoint written by the train command.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Hard-decision threshold on the scores.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MoonGen(args) => cmd_moon_gen(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Frontier(args) => cmd_frontier(&args),
        Command::Metrics(args) => cmd_metrics(&args),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Data(format!("serializing output: {e}")))
}

/// Short dataset id used in run ids: the configured kind, or the file stem
/// for CSV datasets.
fn dataset_id(cfg: &RunConfig) -> String {
    if cfg.dataset.kind == "csv" {
        cfg.dataset
            .path
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".to_string())
    } else {
        cfg.dataset.kind.clone()
    }
}

fn cmd_moon_gen(args: &MoonGenArgs) -> Result<()> {
    if args.n < 2 {
        return Err(Error::config(format!("--n must be at least 2, got {}", args.n)));
    }
    if !(args.noise_sd.is_finite() && args.noise_sd >= 0.0) {
        return Err(Error::config(format!(
            "--noise-sd must be a non-negative real, got {}",
            args.noise_sd
        )));
    }
    let ds = generate_moons(args.n, args.noise_sd, args.seed)?;
    let file = fs::File::create(&args.out)?;
    ds.export_csv(BufWriter::new(file))?;
    println!("wrote {} rows to {}", ds.len(), args.out.display());
    Ok(())
}

fn summarize(out: &crate::trainer::TrainOutput) -> RunSummary {
    let last = out.history.records.last();
    RunSummary {
        train_accuracy: out.train_accuracy,
        test: out.final_test.clone(),
        group_aucs: out.group_aucs.clone(),
        final_pair_estimates: last.map(|r| r.pair_estimates.clone()).unwrap_or_default(),
        pair_labels: out.history.pair_labels.clone(),
        ascent_logged: out.ascent_logged,
        ascent_improved: out.ascent_improved,
        pair_skips: out.pair_skips,
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    let settings = TrainSettings::from_config(&cfg)?;
    let base = base_data(&cfg.dataset)?;
    let started = Instant::now();
    let (train, test) = realize_datasets(&cfg.dataset, &base, settings.seed)?;
    let out = train_fair(&settings, &train, &test)?;
    let wall_seconds = started.elapsed().as_secs_f64();

    fs::create_dir_all(&cfg.output.dir)?;
    write_history_csv(&cfg.output.dir.join("history.csv"), &out.history)?;
    let ckpt = fs::File::create(cfg.output.dir.join("classifier.ckpt"))?;
    out.classifier.write_checkpoint(BufWriter::new(ckpt))?;

    let run = SweepRun {
        lambda: settings.lambda,
        seed: settings.seed,
        wall_seconds,
        outcome: Ok(summarize(&out)),
    };
    let record = RunRecord::from_sweep(0, &dataset_id(&cfg), &settings, &run);
    write_records_jsonl(&cfg.output.dir.join("summary.jsonl"), std::slice::from_ref(&record))?;
    println!("{}", to_json(&record)?);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(workers) = args.workers {
        cfg.sweep.workers = workers;
    }
    if let Some(seeds) = &args.seed_list {
        cfg.sweep.seeds = seeds.clone();
    }
    if let Some(grid) = &args.lambda_grid {
        cfg.sweep.lambda_grid = grid.clone();
    }
    if let Some(zeta) = args.zeta {
        cfg.sweep.zeta = Some(zeta);
    }
    let settings = TrainSettings::from_config(&cfg)?;
    if cfg.sweep.zeta.is_none() && !cfg.sweep.lambda_grid.iter().any(|&l| l == 0.0) {
        return Err(Error::config(
            "sweep.zeta: the grid has no lambda=0 cell and no zeta override was given, \
             so the low-bias threshold would be undefined",
        ));
    }

    let runs = sweep(&cfg)?;
    let dataset = dataset_id(&cfg);
    let records: Vec<RunRecord> = runs
        .iter()
        .enumerate()
        .map(|(idx, run)| RunRecord::from_sweep(idx, &dataset, &settings, run))
        .collect();

    fs::create_dir_all(&cfg.output.dir)?;
    write_records_csv(&cfg.output.dir.join("runs.csv"), &records)?;
    write_records_jsonl(&cfg.output.dir.join("runs.jsonl"), &records)?;
    for record in &records {
        match &record.error {
            None => println!(
                "{}: ok accuracy={} delta_dp={} delta_eo={} ({:.1}s)",
                record.run_id,
                record.accuracy.unwrap_or(f64::NAN),
                record.delta_dp.unwrap_or(f64::NAN),
                record.delta_eo.unwrap_or(f64::NAN),
                record.wall_seconds,
            ),
            Some(err) => println!("{}: failed: {err}", record.run_id),
        }
    }

    let successes = records.iter().filter(|r| r.is_ok()).count();
    if successes == 0 {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Numeric(format!(
            "all {} runs failed; first error: {first}",
            records.len()
        )));
    }

    match cfg.sweep.zeta.or_else(|| unconstrained_zeta(&runs, settings.notion)) {
        Some(zeta) => {
            let points = fa_points(&records, settings.notion)?;
            let frontier = build_frontier(&points, zeta)?;
            write_frontier_csv(&cfg.output.dir.join("frontier.csv"), &frontier)?;
            let summary = frontier_summary(&frontier, points.len())?;
            write_frontier_summary(
                &cfg.output.dir.join("frontier_summary.json"),
                &summary,
            )?;
            println!("{}", to_json(&summary)?);
        }
        None => eprintln!(
            "skipping frontier: every lambda=0 run failed and no zeta override was given"
        ),
    }
    Ok(())
}

fn cmd_frontier(args: &FrontierArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.records {
        let batch = if path.extension().is_some_and(|ext| ext == "jsonl") {
            read_records_jsonl(path)?
        } else {
            read_records_csv(path)?
        };
        records.extend(batch);
    }
    validate_records(&records)?;

    let ok_notions: BTreeSet<&str> =
        records.iter().filter(|r| r.is_ok()).map(|r| r.notion.as_str()).collect();
    let notion: FairnessNotion = match &args.notion {
        Some(s) => s.parse()?,
        None => match ok_notions.len() {
            0 => {
                return Err(Error::Data(
                    "no successful records to build a frontier from".to_string(),
                ))
            }
            1 => ok_notions.iter().next().unwrap().parse()?,
            _ => {
                return Err(Error::config(format!(
                    "records mix notions {ok_notions:?}; pass --notion to choose the bias axis"
                )))
            }
        },
    };

    let zeta = match args.zeta {
        Some(zeta) => zeta,
        None => {
            let biases: Vec<f64> = records
                .iter()
                .filter(|r| r.is_ok() && r.lambda == 0.0)
                .filter_map(|r| r.bias(notion))
                .collect();
            if biases.is_empty() {
                return Err(Error::config(
                    "no successful lambda=0 records in the inputs; pass --zeta explicitly",
                ));
            }
            biases.iter().sum::<f64>() / biases.len() as f64
        }
    };

    let points = fa_points(&records, notion)?;
    let frontier = build_frontier(&points, zeta)?;
    fs::create_dir_all(&args.out)?;
    write_frontier_csv(&args.out.join("frontier.csv"), &frontier)?;
    let summary = frontier_summary(&frontier, points.len())?;
    write_frontier_summary(&args.out.join("frontier_summary.json"), &summary)?;
    println!("{}", to_json(&summary)?);
    Ok(())
}

/// Stdout payload of the metrics command.
#[derive(Debug, Serialize)]
struct MetricsReport {
    n: usize,
    threshold: f64,
    accuracy: f64,
    delta_dp_hard: f64,
    delta_dp_soft: f64,
    delta_eo_hard: f64,
    delta_eo_soft: f64,
    group_aucs: Vec<f64>,
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    if !(args.threshold.is_finite() && (0.0..=1.0).contains(&args.threshold)) {
        return Err(Error::config(format!(
            "--threshold must lie in [0, 1], got {}",
            args.threshold
        )));
    }
    let preds = if let Some(path) = &args.predictions {
        load_predictions_csv(path, args.threshold)?
    } else {
        let data = args.data.as_ref().expect("clap enforces a prediction source");
        let checkpoint = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("--data requires --checkpoint"))?;
        score_dataset_csv(data, checkpoint, args.threshold)?
    };
    let report = MetricsReport {
        n: preds.len(),
        threshold: args.threshold,
        accuracy: accuracy(&preds),
        delta_dp_hard: delta_dp(&preds, Mode::Hard)?,
        delta_dp_soft: delta_dp(&preds, Mode::Soft)?,
        delta_eo_hard: delta_eo(&preds, Mode::Hard)?,
        delta_eo_soft: delta_eo(&preds, Mode::Soft)?,
        group_aucs: groupwise_roc_auc(&preds)?.iter().map(|g| g.auc).collect(),
    };
    println!("{}", to_json(&report)?);
    Ok(())
}

fn parse_label(token: &str, line: usize) -> Result<bool> {
    match token {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Data(format!("line {line}: label must be 0 or 1, got {other:?}"))),
    }
}

fn parse_group(token: &str, line: usize) -> Result<usize> {
    token.parse::<usize>().map_err(|_| {
        Error::Data(format!("line {line}: group must be an unsigned integer, got {token:?}"))
    })
}

/// Reads a predictions CSV: columns score, label, group in any order,
/// extra columns ignored.
fn load_predictions_csv(path: &Path, threshold: f64) -> Result<PredictionSet> {
    let name = path.display().to_string();
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {name}: {e}")))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let col = |want: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == want)
            .ok_or_else(|| Error::Data(format!("{name}: missing column {want:?}")))
    };
    let (score_col, label_col, group_col) = (col("score")?, col("label")?, col("group")?);

    let (mut scores, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let score: f64 = row.get(score_col).unwrap_or_default().parse().map_err(|_| {
            Error::Data(format!(
                "{name}: line {line}: score is not a number: {:?}",
                row.get(score_col).unwrap_or_default()
            ))
        })?;
        scores.push(score);
        labels.push(parse_label(row.get(label_col).unwrap_or_default(), line)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?);
        groups.push(parse_group(row.get(group_col).unwrap_or_default(), line)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?);
    }
    PredictionSet::new(scores, labels, groups, threshold)
}

/// Scores a dataset CSV (feature columns plus label and group) with a
/// saved classifier checkpoint.
fn score_dataset_csv(data: &Path, checkpoint: &Path, threshold: f64) -> Result<PredictionSet> {
    let name = data.display().to_string();
    let net_file = fs::File::open(checkpoint)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", checkpoint.display())))?;
    let net = DenseNet::read_checkpoint(BufReader::new(net_file))?;
    if net.output_dim() != 1 {
        return Err(Error::config(format!(
            "checkpoint is not a binary classifier: output dimension {}",
            net.output_dim()
        )));
    }

    let file = fs::File::open(data)
        .map_err(|e| Error::Data(format!("cannot open {name}: {e}")))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Data(format!("{name}: missing column \"label\"")))?;
    let group_col = headers
        .iter()
        .position(|h| h == "group")
        .ok_or_else(|| Error::Data(format!("{name}: missing column \"group\"")))?;
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&c| c != label_col && c != group_col).collect();
    if feature_cols.len() != net.input_dim() {
        return Err(Error::config(format!(
            "{name} has {} feature columns but the checkpoint expects {}",
            feature_cols.len(),
            net.input_dim()
        )));
    }

    let (mut rows, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let token = row.get(c).unwrap_or_default();
            let value: f64 = token.parse().map_err(|_| {
                Error::Data(format!(
                    "{name}: line {line}: column {:?} is not a number: {token:?}",
                    headers.get(c).unwrap_or_default()
                ))
            })?;
            features.push(value);
        }
        rows.push(features);
        labels.push(parse_label(row.get(label_col).unwrap_or_default(), line)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?);
        groups.push(parse_group(row.get(group_col).unwrap_or_default(), line)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{name}: no data rows")));
    }
    let outputs = net.forward(&rows)?;
    let scores: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
    PredictionSet::new(scores, labels, groups, threshold)
}
