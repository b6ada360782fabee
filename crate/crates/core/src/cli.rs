//! Command line front end: every subcommand writes into a fresh run
//! directory and finishes with a `manifest.json` describing its inputs and
//! outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{Baseline, Strategy, DEFAULT_LOOKBACK, DEFAULT_QUANTILE};
use crate::data::{generate_synth, ingest_csv, read_market_dir, write_market_dir, IngestMode, SynthSpec, MARKET_INDEX};
use crate::error::{Error, Result};
use crate::evaluation::{backtest, ks_test, rank_sum_test, cluster_markets, Backtest, MetricsReport, METRIC_NAMES};
use crate::model::{Model, ModelCheckpoint, ModelFamily, ModelStrategy};
use crate::trainer::{fit, random_search, write_jsonl, SearchSpace, TrainConfig};

pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_HOLDOUT: usize = 752;

#[derive(Debug, Parser)]
#[command(name = "quantnet", version, about = "Train and evaluate multi-market trading strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a directory of per-market CSV files into normalised panels.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "prices")]
        mode: IngestMode,
    },
    /// Generate synthetic markets with a shared latent factor.
    Synth {
        /// TOML file with SynthSpec fields; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training part of every market.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<ModelFamily>,
        /// Trailing observations withheld from training.
        #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
        holdout: usize,
    },
    /// Random hyperparameter search.
    Search {
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
        holdout: usize,
    },
    /// Backtest a checkpoint and the four baselines on the holdout.
    Backtest {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
        holdout: usize,
        #[arg(long)]
        out: PathBuf,
        /// Baseline the model is compared against.
        #[arg(long, default_value = "cs-momentum")]
        baseline: String,
        #[arg(long, default_value_t = DEFAULT_LOOKBACK)]
        lookback: usize,
    },
    /// Cluster markets by their encoder scores.
    Cluster {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::evaluation::DEFAULT_CLUSTERS)]
        n_clusters: usize,
        #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
        holdout: usize,
    },
    /// Summary table and cumulative-return charts from a backtest run.
    Report {
        #[arg(long)]
        backtest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Digest of one file, path relative to the run directory for outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub checkpoints: Vec<String>,
    pub outputs: Vec<FileDigest>,
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    /// Checks that every input and output still exists with its digest.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for f in &self.inputs {
            check_digest(Path::new(&f.path), &f.sha256)?;
        }
        for f in &self.outputs {
            check_digest(&run_dir.join(&f.path), &f.sha256)?;
        }
        for c in &self.checkpoints {
            if !run_dir.join(c).is_file() {
                return Err(Error::MissingInput(run_dir.join(c)));
            }
        }
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read(&run_dir.join(MANIFEST))?)?)
    }
}

fn check_digest(path: &Path, want: &str) -> Result<()> {
    let got = sha256_file(path)?;
    if got != want {
        return Err(Error::State(format!("digest of {} changed", path.display())));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Collects outputs of one run and writes the manifest last.
struct Run {
    dir: PathBuf,
    command: String,
    args: Vec<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
    checkpoints: Vec<String>,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

impl Run {
    fn create(dir: &Path, command: &str, args: Vec<String>) -> Result<Self> {
        if dir.exists() {
            let non_empty = fs::read_dir(dir)?.next().is_some();
            if non_empty {
                return Err(Error::config(format!(
                    "run directory {} is not empty; use a new directory",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            args,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoints: Vec::new(),
            timings: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Every market file plus the index of a data directory.
    fn input_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.is_dir() {
            return Err(Error::MissingInput(dir.to_path_buf()));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST));
        files.sort();
        for f in files {
            self.input(&f)?;
        }
        Ok(())
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn time(&mut self, label: &str, since: Instant) {
        self.timings.insert(label.into(), since.elapsed().as_secs_f64());
    }

    fn finish(mut self, config: serde_json::Value, seed: Option<u64>) -> Result<RunManifest> {
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for rel in &self.outputs {
            outputs.push(FileDigest { path: rel.clone(), sha256: sha256_file(&self.dir.join(rel))? });
        }
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(config.to_string().as_bytes());
        for f in &self.inputs {
            h.update(f.sha256.as_bytes());
        }
        let manifest = RunManifest {
            run_id: hex::encode(h.finalize())[..16].to_string(),
            command: self.command,
            args: self.args,
            config,
            seed,
            inputs: self.inputs,
            checkpoints: self.checkpoints,
            outputs,
            timings: self.timings,
        };
        let mut f = fs::File::create(self.dir.join(MANIFEST))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(manifest)
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::config(e.to_string())),
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    run(cli.command, recorded)
}

/// Caps rayon's global pool from `QUANTNET_THREADS` (0 or unset: automatic).
pub fn configure_threads() -> Result<()> {
    let n = match std::env::var("QUANTNET_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("QUANTNET_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Ingest { input, rates, out, mode } => cmd_ingest(&input, rates.as_deref(), &out, mode, args),
        Command::Synth { spec, seed, out } => cmd_synth(spec.as_deref(), seed, &out, args),
        Command::Train { config, data, out, arch, holdout } => cmd_train(&config, &data, &out, arch, holdout, args),
        Command::Search { trials, space, data, out, holdout } => cmd_search(trials, &space, &data, &out, holdout, args),
        Command::Backtest { checkpoint, data, holdout, out, baseline, lookback } => {
            cmd_backtest(&checkpoint, &data, holdout, &out, &baseline, lookback, args)
        }
        Command::Cluster { checkpoint, data, out, n_clusters, holdout } => {
            cmd_cluster(&checkpoint, &data, &out, n_clusters, holdout, args)
        }
        Command::Report { backtest, out } => cmd_report(&backtest, &out, args),
    }
}

fn cmd_ingest(input: &Path, rates: Option<&Path>, out: &Path, mode: IngestMode, args: Vec<String>) -> Result<()> {
    if !input.is_dir() {
        return Err(Error::MissingInput(input.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData { what: input.display().to_string(), msg: "no .csv market files".into() });
    }
    let mut run = Run::create(out, "ingest", args)?;
    let t = Instant::now();
    let mut panels = Vec::with_capacity(files.len());
    for f in &files {
        run.input(f)?;
        panels.push(ingest_csv(f, rates, mode)?);
    }
    if let Some(r) = rates {
        run.input(r)?;
    }
    let index = write_market_dir(out, &panels)?;
    run.outputs.extend(index.markets.iter().map(|m| m.file.clone()));
    run.outputs.push(MARKET_INDEX.into());
    run.time("ingest", t);
    let mode_name = match mode {
        IngestMode::Prices => "prices",
        IngestMode::Returns => "returns",
    };
    run.finish(serde_json::json!({ "mode": mode_name, "rates": rates.is_some() }), None)?;
    Ok(())
}

fn cmd_synth(spec_path: Option<&Path>, seed: Option<u64>, out: &Path, args: Vec<String>) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| Error::config(format!("synth spec: {e}")))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let mut run = Run::create(out, "synth", args)?;
    if let Some(p) = spec_path {
        run.input(p)?;
    }
    let t = Instant::now();
    let panels = generate_synth(&spec)?;
    let index = write_market_dir(out, &panels)?;
    run.outputs.extend(index.markets.iter().map(|m| m.file.clone()));
    run.outputs.push(MARKET_INDEX.into());
    run.time("generate", t);
    run.finish(to_value(&spec)?, Some(spec.seed))?;
    Ok(())
}

fn training_panels(data: &Path, holdout: usize) -> Result<Vec<crate::data::ReturnsPanel>> {
    read_market_dir(data)?
        .iter()
        .map(|p| crate::data::split_holdout(p, holdout).map(|s| s.train))
        .collect()
}

fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    arch: Option<ModelFamily>,
    holdout: usize,
    args: Vec<String>,
) -> Result<()> {
    let mut cfg = TrainConfig::from_toml(&read(config)?)?;
    if let Some(a) = arch {
        cfg.family = a;
    }
    let panels = training_panels(data, holdout)?;
    let mut run = Run::create(out, "train", args)?;
    run.input(config)?;
    run.input_dir(data)?;
    let t = Instant::now();
    let (model, outcome) = fit(&panels, &cfg)?;
    run.time("train", t);
    run.write("checkpoint.json", &model.to_checkpoint(cfg.eval_window()).to_json()?)?;
    run.checkpoints.push("checkpoint.json".into());
    let mut trace = Vec::new();
    write_jsonl(&mut trace, &outcome.loss_trace)?;
    run.write("loss_trace.jsonl", std::str::from_utf8(&trace).expect("json is utf-8"))?;
    run.write("config.toml", &cfg.to_toml())?;
    let mut snapshot = to_value(&cfg)?;
    snapshot["holdout"] = holdout.into();
    run.finish(snapshot, Some(cfg.seed))?;
    Ok(())
}

fn cmd_search(trials: usize, space_path: &Path, data: &Path, out: &Path, holdout: usize, args: Vec<String>) -> Result<()> {
    let space = SearchSpace::from_toml(&read(space_path)?)?;
    if trials == 0 {
        return Err(Error::config("--trials must be at least 1"));
    }
    let panels = training_panels(data, holdout)?;
    let mut run = Run::create(out, "search", args)?;
    run.input(space_path)?;
    run.input_dir(data)?;
    let log_path = out.join("trials.jsonl");
    let mut log = fs::File::create(&log_path)?;
    let t = Instant::now();
    let outcome = random_search(&space, trials, &panels, |rec| {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
        log.flush()?;
        Ok(())
    });
    drop(log);
    let outcome = outcome?;
    run.time("search", t);
    run.outputs.push("trials.jsonl".into());
    run.write("best_config.toml", &outcome.best.config.to_toml())?;
    let mut snapshot = to_value(&space)?;
    snapshot["trials"] = trials.into();
    snapshot["holdout"] = holdout.into();
    run.finish(snapshot, Some(space.seed))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<(Model, ModelCheckpoint)> {
    let ck = ModelCheckpoint::from_json(&read(path)?)?;
    Ok((Model::from_checkpoint(&ck)?, ck))
}

/// Model markets must all be present in the data directory.
fn panels_for_model(model: &Model, data: &Path) -> Result<Vec<crate::data::ReturnsPanel>> {
    let panels = read_market_dir(data)?;
    model
        .markets()
        .iter()
        .map(|m| {
            panels
                .iter()
                .find(|p| p.market_id() == m.id)
                .cloned()
                .ok_or_else(|| Error::config(format!("market {} missing from {}", m.id, data.display())))
        })
        .collect()
}

fn baseline_named(name: &str, lookback: usize) -> Result<Baseline> {
    match name {
        "buy-and-hold" => Ok(Baseline::BuyAndHold),
        "risk-parity" => Ok(Baseline::RiskParity { lookback }),
        "ts-momentum" => Ok(Baseline::TsMomentum { lookback }),
        "cs-momentum" => Ok(Baseline::CsMomentum { lookback, q: DEFAULT_QUANTILE }),
        other => Err(Error::config(format!("unknown baseline {other:?}"))),
    }
}

/// Two-sample comparison of per-asset Sharpe ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub strategy: String,
    pub baseline: String,
    pub metric: String,
    pub rank_sum: crate::evaluation::RankSumResult,
    pub ks: crate::evaluation::KsResult,
}

/// Strategy directories written by a backtest run, in table order.
pub const STRATEGY_INDEX: &str = "strategies.json";

#[allow(clippy::too_many_arguments)]
fn cmd_backtest(
    checkpoint: &Path,
    data: &Path,
    holdout: usize,
    out: &Path,
    baseline: &str,
    lookback: usize,
    args: Vec<String>,
) -> Result<()> {
    let (model, ck) = load_model(checkpoint)?;
    let reference = baseline_named(baseline, lookback)?;
    let panels = panels_for_model(&model, data)?;
    let mut run = Run::create(out, "backtest", args)?;
    run.input(checkpoint)?;
    run.input_dir(data)?;
    let model_strategy = ModelStrategy { model: &model, eval_window: ck.eval_window };
    let mut strategies: Vec<Box<dyn Strategy + '_>> = vec![Box::new(model_strategy)];
    for b in [
        Baseline::BuyAndHold,
        Baseline::RiskParity { lookback },
        Baseline::TsMomentum { lookback },
        Baseline::CsMomentum { lookback, q: DEFAULT_QUANTILE },
    ] {
        strategies.push(Box::new(b));
    }
    let mut names = Vec::new();
    let mut reports: BTreeMap<String, MetricsReport> = BTreeMap::new();
    for strat in &strategies {
        let name = strat.name();
        let t = Instant::now();
        let runs: Vec<Backtest> = panels.iter().map(|p| backtest(strat.as_ref(), p, holdout)).collect::<Result<_>>()?;
        for b in &runs {
            let m = &b.signals.market_id;
            run.write(&format!("{name}/signals_{m}.csv"), &b.signals_csv())?;
            run.write(&format!("{name}/pnl_{m}.csv"), &b.pnl_csv())?;
        }
        let parts: Vec<MetricsReport> = runs.into_iter().map(|b| b.report).collect();
        let report = MetricsReport::combine(&name, &parts)?;
        run.write(&format!("{name}/metrics.csv"), &report.to_csv_string())?;
        run.write(&format!("{name}/metrics.json"), &report.aggregates_json()?)?;
        run.write(&format!("{name}/report.json"), &serde_json::to_string(&report)?)?;
        run.time(&name, t);
        names.push(name.clone());
        reports.insert(name, report);
    }
    let model_name = model_strategy_name(&model);
    let a = reports[&model_name].metric("sharpe")?;
    let b = reports[&reference.name()].metric("sharpe")?;
    let cmp = Comparison {
        strategy: model_name,
        baseline: reference.name(),
        metric: "sharpe".into(),
        rank_sum: rank_sum_test(&a, &b)?,
        ks: ks_test(&a, &b)?,
    };
    run.write("comparison.json", &serde_json::to_string_pretty(&cmp)?)?;
    run.write(STRATEGY_INDEX, &serde_json::to_string_pretty(&names)?)?;
    run.finish(
        serde_json::json!({ "holdout": holdout, "baseline": baseline, "lookback": lookback, "eval_window": ck.eval_window }),
        None,
    )?;
    Ok(())
}

fn model_strategy_name(model: &Model) -> String {
    ModelStrategy { model, eval_window: 1 }.name()
}

fn cmd_cluster(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    n_clusters: usize,
    holdout: usize,
    args: Vec<String>,
) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let panels = panels_for_model(&model, data)?;
    let mut run = Run::create(out, "cluster", args)?;
    run.input(checkpoint)?;
    run.input_dir(data)?;
    let t = Instant::now();
    let scores = model.encoder_scores(&panels, Some(holdout))?;
    let clustering = cluster_markets(&scores, n_clusters)?;
    run.time("cluster", t);
    run.write("clusters.csv", &clustering.labels_csv())?;
    run.write("merges.json", &serde_json::to_string_pretty(&clustering.merges)?)?;
    run.write("scores.json", &serde_json::to_string_pretty(&scores)?)?;
    run.finish(serde_json::json!({ "n_clusters": n_clusters, "holdout": holdout }), None)?;
    Ok(())
}

/// Metric rows of the summary table, in display order.
const TABLE_ROWS: [(&str, &str); 9] = [
    ("E[Return]", "ann_ret"),
    ("Volatility", "ann_vol"),
    ("Sharpe Ratio", "sharpe"),
    ("Downside Risk", "downside_risk"),
    ("Sortino Ratio", "sortino"),
    ("MDD", "max_drawdown"),
    ("Calmar Ratio", "calmar"),
    ("Skewness", "skew"),
    ("Kurtosis", "kurtosis"),
];

/// Rows are metrics, columns strategies; cells are `median (MAD)` across
/// every asset.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    debug_assert_eq!(TABLE_ROWS.len(), METRIC_NAMES.len());
    let mut s = String::from("metric");
    for r in reports {
        s.push(',');
        s.push_str(&r.strategy);
    }
    s.push('\n');
    for (label, key) in TABLE_ROWS {
        s.push_str(label);
        for r in reports {
            let sm = &r.global[key];
            s.push_str(&format!(",{:.4} ({:.4})", sm.median, sm.mad));
        }
        s.push('\n');
    }
    s
}

/// Equal-weight daily pnl of a market from a pnl CSV.
fn market_pnl(path: &Path) -> Result<Vec<f64>> {
    let text = read(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { path: path.display().to_string(), line: i as u64 + 2, msg: e.to_string() })?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: i as u64 + 2, msg: e.to_string() })?;
        out.push(vals.iter().sum::<f64>() / vals.len().max(1) as f64);
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Cumulative compounded return curves as a standalone SVG.
pub fn curves_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let curves: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, pnl)| {
            let mut wealth = 1.0;
            std::iter::once(0.0)
                .chain(pnl.iter().map(|x| {
                    wealth *= 1.0 + x;
                    wealth - 1.0
                }))
                .collect()
        })
        .collect();
    let lo = curves.iter().flatten().copied().fold(0.0f64, f64::min);
    let hi = curves.iter().flatten().copied().fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let len = curves.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (len - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / span;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{z:.2}\" x2=\"{x2}\" y2=\"{z:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
        z = y(0.0),
        x2 = w - pad
    );
    for (k, ((name, _), c)) in series.iter().zip(&curves).enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{colour}\">{name}</text>\n",
            w - pad - 110.0,
            pad + 14.0 * k as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn cmd_report(backtest_dir: &Path, out: &Path, args: Vec<String>) -> Result<()> {
    let index_path = backtest_dir.join(STRATEGY_INDEX);
    if !index_path.is_file() {
        return Err(Error::MissingInput(index_path));
    }
    let names: Vec<String> = serde_json::from_str(&read(&index_path)?)?;
    if names.is_empty() {
        return Err(Error::InsufficientData { what: backtest_dir.display().to_string(), msg: "no strategies".into() });
    }
    let mut run = Run::create(out, "report", args)?;
    run.input(&index_path)?;
    let mut reports = Vec::with_capacity(names.len());
    for n in &names {
        let p = backtest_dir.join(n).join("report.json");
        run.input(&p)?;
        reports.push(serde_json::from_str::<MetricsReport>(&read(&p)?)?);
    }
    run.write("table.csv", &summary_table(&reports))?;
    let markets: Vec<String> = reports[0].markets.keys().cloned().collect();
    for m in &markets {
        let mut series = Vec::with_capacity(names.len());
        for n in &names {
            let p = backtest_dir.join(n).join(format!("pnl_{m}.csv"));
            run.input(&p)?;
            series.push((n.clone(), market_pnl(&p)?));
        }
        run.write(&format!("curves_{m}.svg"), &curves_svg(m, &series))?;
    }
    run.finish(serde_json::json!({ "strategies": names }), None)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_polyline_per_series() {
        let s = curves_svg("m", &[("a".into(), vec![0.01, -0.02]), ("b".into(), vec![0.0, 0.0])]);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.starts_with("<svg"));
    }

    #[test]
    fn run_dir_must_be_new_or_empty() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(matches!(Run::create(dir.path(), "t", vec![]), Err(Error::Config(_))));
        let empty = dir.path().join("fresh");
        assert!(Run::create(&empty, "t", vec![]).is_ok());
    }

    #[test]
    fn manifest_verification_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::create(dir.path(), "t", vec!["a".into()]).unwrap();
        run.write("out.txt", "hello").unwrap();
        let m = run.finish(serde_json::json!({}), Some(1)).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
        m.verify(dir.path()).unwrap();
        fs::write(dir.path().join("out.txt"), "changed").unwrap();
        assert!(m.verify(dir.path()).is_err());
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in Baseline::all() {
            assert_eq!(baseline_named(&b.name(), DEFAULT_LOOKBACK).unwrap().name(), b.name());
        }
        assert!(baseline_named("nope", 3).is_err());
    }
}
