//! The `mla` command: configuration, orchestration, metrics and plot data.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 numeric failure.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::altopt::{StepRecord, TrainConfig};
use crate::baselines::{train_model, ModelChoice, TrainedModel};
use crate::data::{
    apply_missing_mask, generate_synthetic, load_dataset, save_dataset, split, MaskPhase,
    MultimodalDataset, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablate, aggregate_sweep, evaluate, modality_gap, sweep_cells, sweep_run, AblationCell,
    EvalReport, SweepOptions, SweepRun,
};
use crate::fusion::FusionMode;
use crate::model::{load_checkpoint, save_checkpoint};

pub const CONFIG_VERSION: &str = "mla-config/1";

/// Where the samples come from. Exactly one source per config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Missing rate applied to the train and test splits.
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub fusion: FusionMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            missing_rate: 0.0,
            fusion: FusionMode::Dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: String,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelChoice,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub sweep: Option<SweepOptions>,
    /// Also score uniform fusion during `eval`.
    #[serde(default)]
    pub ablation: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {:?}, expected {CONFIG_VERSION:?}",
                self.version
            )));
        }
        self.train.validate()?;
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.eval.missing_rate) {
            return Err(Error::Config(format!(
                "missing_rate must lie in [0, 1), got {}",
                self.eval.missing_rate
            )));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Stable identifier of a command applied to this config.
    pub fn run_id(&self, command: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(format!("{command}\n{json}").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets the dotted `key` in a JSON document to `raw`, read as JSON when it
/// parses and as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty override key in {assignment:?}")))?;
    let mut node = doc;
    for part in parts {
        node = node
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("override path {key:?}: no field {part:?}")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override path {key:?} does not name an object field")))?;
    obj.insert(leaf.to_string(), value);
    Ok(())
}

/// Reads a config file and applies `--set` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
    Sweep,
    Ablate,
}

/// One line of a metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Position of the record in its file.
    pub timestamp: u64,
    pub run_id: String,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Append-only JSONL writer that numbers its records.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    next: u64,
    run_id: String,
}

impl MetricsWriter {
    /// Starts a fresh stream, replacing any file at `path`.
    pub fn create(path: &Path, run_id: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.into(),
            file,
            next: 0,
            run_id: run_id.into(),
        })
    }

    /// Continues an existing stream, or starts one.
    pub fn append(path: &Path, run_id: &str) -> Result<Self> {
        let next = match File::open(path) {
            Ok(f) => BufReader::new(f).lines().count() as u64,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(Error::io(path, e)),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.into(),
            file,
            next,
            run_id: run_id.into(),
        })
    }

    pub fn write(
        &mut self,
        phase: Phase,
        step: Option<usize>,
        eta: Option<f64>,
        seed: Option<u64>,
        metrics: BTreeMap<String, f64>,
    ) -> Result<()> {
        if let Some((k, v)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Contract(format!("metric {k} is {v}")));
        }
        let rec = MetricsRecord {
            timestamp: self.next,
            run_id: self.run_id.clone(),
            phase,
            step,
            eta,
            seed,
            metrics,
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.next += 1;
        Ok(())
    }
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn step_metrics(r: &StepRecord) -> BTreeMap<String, f64> {
    let mut m = metrics([
        ("modality", r.modality as f64),
        ("lr", r.lr),
        ("batches", r.batches as f64),
    ]);
    if let Some(loss) = r.mean_loss {
        m.insert("loss".into(), loss);
    }
    m
}

fn report_metrics(prefix: &str, r: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert(format!("{prefix}multi"), r.multi);
    for (k, p) in r.probes.iter().enumerate() {
        if let Some(p) = p {
            m.insert(format!("{prefix}probe_{k}"), *p);
        }
    }
    m
}

fn resolve_dataset(cfg: &ExperimentConfig) -> Result<MultimodalDataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec),
        DatasetSource::Path(p) => load_dataset(p),
    }
}

/// Train and test splits, masked at the configured missing rate.
pub fn prepare_splits(cfg: &ExperimentConfig) -> Result<(MultimodalDataset, MultimodalDataset)> {
    let ds = resolve_dataset(cfg)?;
    let (train, _, test) = split(&ds, &cfg.split)?;
    let eta = cfg.eval.missing_rate;
    Ok((
        apply_missing_mask(&train, eta, cfg.train.seed, MaskPhase::Train)?,
        apply_missing_mask(&test, eta, cfg.train.seed, MaskPhase::Test)?,
    ))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Parser, Debug)]
#[command(name = "mla", version, about = "Alternating unimodal adaptation for multimodal learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config field, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic dataset to disk.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Target directory; defaults to `<output_dir>/dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured model; writes a checkpoint and `metrics.jsonl`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on the configured test split or a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "dataset")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE", requires = "config")]
        overrides: Vec<String>,
        #[arg(long, conflicts_with = "config")]
        dataset: Option<PathBuf>,
        /// Report path; defaults to `<output_dir>/eval.json` with a config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Missing-rate sweep of MLA against late fusion.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Concurrent runs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// HGM × dynamic-fusion ablation grid.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Turn metrics streams into CSV tables.
    ExportPlot {
        #[arg(long, required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error, command: &Command) -> i32 {
    match err {
        Error::Io { .. } => 3,
        Error::Parse { .. } if matches!(command, Command::ExportPlot { .. }) => 3,
        Error::NonFinite { .. } => 4,
        _ => 2,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { cfg, out } => cmd_generate(&load_config(&cfg.config, &cfg.overrides)?, out.as_deref()),
        Command::Train { cfg } => cmd_train(&load_config(&cfg.config, &cfg.overrides)?),
        Command::Eval {
            checkpoint,
            config,
            overrides,
            dataset,
            out,
        } => {
            let cfg = config.as_ref().map(|c| load_config(c, overrides)).transpose()?;
            cmd_eval(checkpoint, cfg.as_ref(), dataset.as_deref(), out.as_deref())
        }
        Command::Sweep { cfg, jobs } => cmd_sweep(&load_config(&cfg.config, &cfg.overrides)?, *jobs),
        Command::Ablate { cfg } => cmd_ablate(&load_config(&cfg.config, &cfg.overrides)?),
        Command::ExportPlot { metrics, out } => cmd_export_plot(metrics, out),
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let DatasetSource::Synthetic(spec) = &cfg.dataset else {
        return Err(Error::Config("generate needs a synthetic dataset source".into()));
    };
    let ds = generate_synthetic(spec)?;
    let dir = out.map_or_else(|| cfg.output_dir.join("dataset"), Path::to_path_buf);
    save_dataset(&ds, &dir)?;
    println!(
        "wrote {}: N={} M={} C={} dims={:?}",
        dir.display(),
        ds.len(),
        ds.modality_count(),
        ds.class_count(),
        ds.modality_dims()
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let (train, _) = prepare_splits(cfg)?;
    let mut w = MetricsWriter::create(&cfg.output_dir.join("metrics.jsonl"), &cfg.run_id("train"))?;
    let (model, history) = match train_model(cfg.model, &cfg.train, &train) {
        Ok(out) => out,
        Err(e @ Error::NonFinite { step }) => {
            log::error!("training diverged at step {step}");
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    for r in &history {
        w.write(Phase::Train, Some(r.step), None, Some(cfg.train.seed), step_metrics(r))?;
    }
    let ckpt_dir = cfg.output_dir.join("checkpoint");
    save_checkpoint(&model.to_checkpoint(cfg.train.total_steps), &ckpt_dir)?;
    log::info!("checkpoint written to {}", ckpt_dir.display());
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    cfg: Option<&ExperimentConfig>,
    dataset: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let model = TrainedModel::from_checkpoint(load_checkpoint(checkpoint)?)?;
    let test = match (cfg, dataset) {
        (Some(cfg), _) => prepare_splits(cfg)?.1,
        (None, Some(dir)) => load_dataset(dir)?,
        (None, None) => return Err(Error::Config("eval needs --config or --dataset".into())),
    };
    let mode = cfg.map_or(FusionMode::Dynamic, |c| c.eval.fusion);
    let report = evaluate(&model, &test, mode)?;
    let uniform = match cfg {
        Some(c) if c.ablation => Some(evaluate(&model, &test, FusionMode::Uniform)?.multi),
        _ => None,
    };
    let gap = if test.fully_present_indices().is_empty() {
        None
    } else {
        Some(modality_gap(&model, &test)?)
    };

    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print!("{text}");
    let target = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.map(|c| c.output_dir.join("eval.json")));
    if let Some(path) = target {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(cfg) = cfg {
        ensure_dir(&cfg.output_dir)?;
        let mut w = MetricsWriter::append(&cfg.output_dir.join("metrics.jsonl"), &cfg.run_id("eval"))?;
        let mut m = report_metrics("", &report);
        m.insert("samples".into(), report.samples as f64);
        if let Some(u) = uniform {
            m.insert("multi_uniform".into(), u);
        }
        w.write(Phase::Eval, None, None, Some(cfg.train.seed), m)?;
        for d in gap.iter().flat_map(|g| &g.distances) {
            w.write(
                Phase::Eval,
                None,
                None,
                Some(cfg.train.seed),
                metrics([
                    ("modality_a", d.a as f64),
                    ("modality_b", d.b as f64),
                    ("gap_distance", d.distance),
                ]),
            )?;
        }
    }
    Ok(())
}

fn sweep_options(cfg: &ExperimentConfig) -> SweepOptions {
    cfg.sweep.clone().unwrap_or(SweepOptions {
        etas: vec![0.0],
        seeds: vec![cfg.train.seed],
        jobs: 0,
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let mut opts = sweep_options(cfg);
    if let Some(j) = jobs {
        opts.jobs = j;
    }
    let cells = sweep_cells(&opts)?;
    let ds = resolve_dataset(cfg)?;
    let (train, _, test) = split(&ds, &cfg.split)?;
    let run = |&(eta, seed): &(f64, u64)| sweep_run(&cfg.train, &train, &test, eta, seed);
    let results: Vec<Result<SweepRun>> = if opts.jobs > 1 {
        use rayon::prelude::*;
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.jobs)))?
            .install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };

    let mut w = MetricsWriter::create(&cfg.output_dir.join("sweep.jsonl"), &cfg.run_id("sweep"))?;
    let mut runs = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(run) => {
                let mut m = report_metrics("mla_", &run.mla);
                m.extend(report_metrics("late_", &run.late));
                w.write(Phase::Sweep, None, Some(run.eta), Some(run.seed), m)?;
                runs.push(run);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let report = aggregate_sweep(&opts.seeds, runs);
    for row in &report.rows {
        println!(
            "eta={:.2} mla={:.4} late={:.4}",
            row.eta, row.mean_mla_multi, row.mean_late_multi
        );
    }
    write_json(&cfg.output_dir.join("sweep.json"), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let (train, test) = prepare_splits(cfg)?;
    let seeds = sweep_options(cfg).seeds;
    let mut w = MetricsWriter::create(&cfg.output_dir.join("ablate.jsonl"), &cfg.run_id("ablate"))?;
    let mut runs = Vec::new();
    for seed in seeds {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let cells = ablate(&tc, &train, &test)?;
        for c in &cells {
            let mut m = report_metrics("", &c.report);
            m.insert("hgm".into(), f64::from(u8::from(c.hgm)));
            m.insert("df".into(), f64::from(u8::from(c.dynamic_fusion)));
            w.write(Phase::Ablate, None, None, Some(seed), m)?;
            println!(
                "seed={seed} hgm={} df={} multi={:.4}",
                c.hgm, c.dynamic_fusion, c.report.multi
            );
        }
        runs.push(AblationRun { seed, cells });
    }
    write_json(&cfg.output_dir.join("ablation.json"), &runs)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads every record of a metrics stream; a malformed line is a parse error
/// naming its line number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let rec = serde_json::from_str(body).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                offset,
                msg: format!("line {}: {e}", n + 1),
            })?;
            out.push(rec);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

/// Writes `accuracy_vs_eta.csv`, `loss_vs_step.csv` and `gap_distances.csv`.
///
/// Columns:
/// - accuracy_vs_eta: `eta,seed,mla_multi,late_multi`, one row per sweep record
/// - loss_vs_step: `step,modality,loss,lr`, one row per train record with a loss
/// - gap_distances: `modality_a,modality_b,distance`, one row per gap record
///
/// Real values carry 17 significant digits.
pub fn cmd_export_plot(metrics_files: &[PathBuf], out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for p in metrics_files {
        records.extend(read_metrics(p)?);
    }
    ensure_dir(out)?;
    let open = |name: &str, header: &[&str]| -> Result<(PathBuf, csv::Writer<File>)> {
        let path = out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok((path, w))
    };
    let (acc_path, mut acc) = open("accuracy_vs_eta.csv", &["eta", "seed", "mla_multi", "late_multi"])?;
    let (loss_path, mut loss) = open("loss_vs_step.csv", &["step", "modality", "loss", "lr"])?;
    let (gap_path, mut gap) = open("gap_distances.csv", &["modality_a", "modality_b", "distance"])?;
    let get = |r: &MetricsRecord, k: &str| r.metrics.get(k).copied();
    for r in &records {
        match r.phase {
            Phase::Sweep => {
                let row = [
                    r.eta.map_or_else(String::new, num),
                    r.seed.map_or_else(String::new, |s| s.to_string()),
                    get(r, "mla_multi").map_or_else(String::new, num),
                    get(r, "late_multi").map_or_else(String::new, num),
                ];
                acc.write_record(&row).map_err(|e| csv_err(&acc_path, e))?;
            }
            Phase::Train => {
                if let Some(l) = get(r, "loss") {
                    let row = [
                        r.step.map_or_else(String::new, |s| s.to_string()),
                        get(r, "modality").map_or_else(String::new, |m| (m as usize).to_string()),
                        num(l),
                        get(r, "lr").map_or_else(String::new, num),
                    ];
                    loss.write_record(&row).map_err(|e| csv_err(&loss_path, e))?;
                }
            }
            _ => {
                if let Some(d) = get(r, "gap_distance") {
                    let idx = |k| get(r, k).map_or_else(String::new, |v| (v as usize).to_string());
                    let row = [idx("modality_a"), idx("modality_b"), num(d)];
                    gap.write_record(&row).map_err(|e| csv_err(&gap_path, e))?;
                }
            }
        }
    }
    acc.flush().map_err(|e| Error::io(&acc_path, e))?;
    loss.flush().map_err(|e| Error::io(&loss_path, e))?;
    gap.flush().map_err(|e| Error::io(&gap_path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Entry point used by the binary: parses arguments, runs the command and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e, &cli.command)
        }
    }
}
