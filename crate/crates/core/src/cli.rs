//! Command-line front end: `simulate`, `fit`, `sample`, `evaluate`.
//!
//! Values resolve as command-line flag, then `--config` JSON file, then
//! built-in default. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fidelity::evaluate;
use crate::model::{parameter_count, Checkpoint, Condition, Mode, Model, NumericHead, TrainConfig};
use crate::nn::Rng;
use crate::schema::{encode, infer_schema, split, InferOptions, LevelPolicy, RawTable, Schema};
use crate::simgen::{simulate, SimSpec};
use crate::synthesis::{conditional_sample, sample, SampleOptions, SynthesisRequest};

#[derive(Debug, Parser)]
#[command(
    name = "cardicat",
    version,
    about = "Tabular VAE synthesizer with learned categorical embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the simulated benchmark table as CSV.
    Simulate(SimulateArgs),
    /// Train a model on a CSV file and write a checkpoint plus training log.
    Fit(FitArgs),
    /// Generate synthetic rows from a checkpoint.
    Sample(SampleArgs),
    /// Score synthetic rows against held-out rows.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use this schema instead of inferring one.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Also write the schema used for training here.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training log CSV (defaults to `<checkpoint>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// cardicat | baseline_onehot | conditional
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    #[arg(long)]
    pub loss_factor: Option<f64>,
    /// tanh | linear
    #[arg(long, value_parser = parse_numeric_head)]
    pub numeric_head: Option<NumericHead>,
    /// Fraction of rows used for training.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub max_numeric_as_categorical: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Optional schema that must match the checkpoint.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    /// JSON object of categorical feature -> level.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint whose recorded test split (of `--data`) is the reference.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Original CSV the checkpoint was fitted on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Explicit reference CSV, instead of the recorded split.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Full JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// One-line CSV with the five aggregate columns.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn parse_numeric_head(s: &str) -> std::result::Result<NumericHead, String> {
    match s {
        "tanh" => Ok(NumericHead::Tanh),
        "linear" => Ok(NumericHead::Linear),
        _ => Err(format!("unknown numeric head '{s}'")),
    }
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub schema_out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub split_fraction: Option<f64>,
    pub condition: Option<Condition>,
    pub train: TrainConfig,
    pub infer: InferOptions,
    pub sample: SampleOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Usage(format!("config {}: {e}", p.display())))
            }
        }
    }
}

pub const DEFAULT_SPLIT: f64 = 0.8;

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn required(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

fn existing(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = required(p, flag)?;
    if !p.is_file() {
        return Err(Error::Usage(format!(
            "--{flag}: {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

fn writable(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = required(p, flag)?;
    check_writable(&p, flag)?;
    Ok(p)
}

fn check_writable(p: &Path, flag: &str) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Usage(format!(
            "--{flag}: directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

/// Entry point for the binary: parses `args` and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let output = writable(pick(a.output, cfg.output), "output")?;
    let spec = SimSpec {
        n_rows: pick(a.rows, cfg.rows).unwrap_or(SimSpec::default().n_rows),
        seed: pick(a.common.seed, cfg.seed).unwrap_or(0),
    };
    if spec.n_rows == 0 {
        return Err(Error::Usage("--rows must be at least 1".into()));
    }
    let table = simulate(&spec);
    table
        .write_csv_path(&output)
        .map_err(|e| e.in_stage("write"))?;
    println!(
        "wrote {} rows x {} columns to {}",
        table.len(),
        table.header.len(),
        output.display()
    );
    Ok(())
}

/// Result of [`fit_pipeline`], also used by library callers.
pub struct FitOutcome {
    pub model: Model<f32>,
    pub schema: Schema,
    pub n_rows: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub log: crate::model::TrainLog,
}

/// Ingest, split, encode and train. `schema` replaces inference when given.
pub fn fit_pipeline(
    table: &RawTable,
    schema: Option<Schema>,
    infer: &InferOptions,
    config: &TrainConfig,
    split_fraction: f64,
    verbose: bool,
) -> Result<FitOutcome> {
    let inferred = schema.is_none();
    let mut schema = match schema {
        Some(s) => s,
        None => infer_schema(table, infer).map_err(|e| e.in_stage("ingest"))?,
    };
    let table = table
        .drop_incomplete(&schema)
        .map_err(|e| e.in_stage("ingest"))?;
    let root = Rng::new(config.seed);
    let (train_idx, test_idx) =
        split(table.len(), split_fraction, &mut root.derive(1)).map_err(|e| e.in_stage("split"))?;
    let train_raw = table.select(&train_idx);
    if inferred {
        schema
            .refit_numeric(&train_raw)
            .map_err(|e| e.in_stage("ingest"))?;
    }
    let train =
        encode(&schema, &train_raw, LevelPolicy::Strict).map_err(|e| e.in_stage("encode"))?;
    let mut model = Model::<f32>::new(&schema, config.clone(), &mut root.derive(2))
        .map_err(|e| e.in_stage("init"))?;
    let log = model
        .train_epochs(&train, &mut root.derive(3), config.epochs, |e| {
            if verbose {
                eprintln!(
                    "epoch {:>4}  recon {:.5}  kl {:.5}  reg {:.3e}  total {:.5}",
                    e.epoch, e.recon, e.kl, e.reg, e.total
                );
            }
        })
        .map_err(|e| e.in_stage("train"))?;
    Ok(FitOutcome {
        model,
        schema,
        n_rows: table.len(),
        train_indices: train_idx,
        test_indices: test_idx,
        log,
    })
}

pub fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let data = existing(pick(a.data, cfg.data), "data")?;
    let checkpoint = writable(pick(a.checkpoint, cfg.checkpoint), "checkpoint")?;
    let log_path = pick(a.log, cfg.log).unwrap_or_else(|| {
        let mut p = checkpoint.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    check_writable(&log_path, "log")?;
    let schema_in = match pick(a.schema, cfg.schema) {
        Some(p) => {
            Some(Schema::load(&existing(Some(p), "schema")?).map_err(|e| e.in_stage("schema"))?)
        }
        None => None,
    };
    let schema_out = pick(a.schema_out, cfg.schema_out);
    if let Some(p) = &schema_out {
        check_writable(p, "schema-out")?;
    }

    let mut train = cfg.train.clone();
    if let Some(v) = a.mode {
        train.mode = v;
    }
    if let Some(v) = a.epochs {
        train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.latent_dim {
        train.latent_dim = v;
    }
    if let Some(v) = a.kl_weight {
        train.kl_weight = v;
    }
    if let Some(v) = a.reg_weight {
        train.reg_weight = v;
    }
    if let Some(v) = a.loss_factor {
        train.loss_factor = v;
    }
    if let Some(v) = a.numeric_head {
        train.numeric_head = v;
    }
    train.seed = pick(a.common.seed, cfg.seed).unwrap_or(train.seed);
    train.validate()?;
    let mut infer = cfg.infer.clone();
    if let Some(v) = a.max_numeric_as_categorical {
        infer.max_numeric_as_categorical = v;
    }
    let fraction = pick(a.split, cfg.split_fraction).unwrap_or(DEFAULT_SPLIT);

    let table = RawTable::read_csv_path(&data).map_err(|e| e.in_stage("ingest"))?;
    let outcome = fit_pipeline(&table, schema_in, &infer, &train, fraction, !a.quiet)?;

    let own = outcome.model.parameter_count();
    let baseline = parameter_count(
        &outcome.schema,
        &TrainConfig {
            mode: Mode::BaselineOnehot,
            ..train.clone()
        },
    )?;
    println!(
        "trainable parameters: {own} ({:?} mode); baseline_onehot equivalent: {baseline}",
        train.mode
    );

    outcome
        .model
        .save_path(&checkpoint, outcome.n_rows, &outcome.test_indices)
        .map_err(|e| e.in_stage("checkpoint"))?;
    let file = std::fs::File::create(&log_path)?;
    outcome.log.write_csv(std::io::BufWriter::new(file))?;
    if let Some(p) = schema_out {
        outcome.schema.save(&p)?;
    }
    println!(
        "trained {} epochs on {} rows ({} held out); checkpoint {}, log {}",
        train.epochs,
        outcome.train_indices.len(),
        outcome.test_indices.len(),
        checkpoint.display(),
        log_path.display()
    );
    Ok(())
}

pub fn parse_condition(s: &str) -> Result<Condition> {
    serde_json::from_str(s)
        .map_err(|e| Error::Usage(format!("--condition must be a JSON object of strings: {e}")))
}

pub fn cmd_sample(a: SampleArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let checkpoint = existing(pick(a.checkpoint, cfg.checkpoint), "checkpoint")?;
    let output = writable(pick(a.output, cfg.output), "output")?;
    let rows = pick(a.rows, cfg.rows).ok_or_else(|| Error::Usage("--rows is required".into()))?;
    let condition = match a.condition {
        Some(s) => Some(parse_condition(&s)?),
        None => cfg.condition.clone(),
    };
    let schema = match pick(a.schema, cfg.schema) {
        Some(p) => Some(Schema::load(&existing(Some(p), "schema")?)?),
        None => None,
    };
    let seed = pick(a.common.seed, cfg.seed).unwrap_or(0);

    let ckpt = Checkpoint::load_path(&checkpoint)?;
    if let Some(s) = &schema {
        ckpt.check_schema(s)?;
    }
    let mut request = SynthesisRequest::new(rows, seed);
    let table = match condition {
        Some(c) => {
            request = request.with_condition(c);
            conditional_sample(&ckpt.model, &request, &cfg.sample)
        }
        None => sample(&ckpt.model, &request, &cfg.sample),
    }
    .map_err(|e| e.in_stage("sample"))?;
    table.write_csv_path(&output)?;
    println!(
        "wrote {} synthetic rows to {}",
        table.len(),
        output.display()
    );
    Ok(())
}

pub fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let synthetic = existing(pick(a.synthetic, cfg.synthetic), "synthetic")?;
    let report_path = writable(pick(a.report, cfg.report), "report")?;
    let summary_path = writable(pick(a.summary, cfg.summary), "summary")?;
    let checkpoint = pick(a.checkpoint, cfg.checkpoint);
    let test = pick(a.test, cfg.test);
    let data = pick(a.data, cfg.data);
    let schema_path = pick(a.schema, cfg.schema);
    let ckpt = match checkpoint {
        Some(p) => Some(Checkpoint::load_path(&existing(Some(p), "checkpoint")?)?),
        None => None,
    };
    let synth = RawTable::read_csv_path(&synthetic).map_err(|e| e.in_stage("ingest"))?;

    let (schema, real) = match (test, &ckpt) {
        (Some(t), _) => {
            let real = RawTable::read_csv_path(&existing(Some(t), "test")?)
                .map_err(|e| e.in_stage("ingest"))?;
            let schema = match (&ckpt, schema_path) {
                (Some(c), _) => c.meta.schema.clone(),
                (None, Some(p)) => Schema::load(&existing(Some(p), "schema")?)?,
                (None, None) => {
                    let mut both = real.clone();
                    both.rows.extend(reorder(&synth, &real.header)?.rows);
                    infer_schema(&both, &cfg.infer).map_err(|e| e.in_stage("schema"))?
                }
            };
            let real = real.drop_incomplete(&schema)?;
            (schema, real)
        }
        (None, Some(c)) => {
            let data = existing(data, "data")?;
            let table = RawTable::read_csv_path(&data).map_err(|e| e.in_stage("ingest"))?;
            let table = table.drop_incomplete(&c.meta.schema)?;
            if table.len() != c.meta.n_rows {
                return Err(Error::data(format!(
                    "--data has {} usable rows but the checkpoint was fitted on {}",
                    table.len(),
                    c.meta.n_rows
                )));
            }
            (c.meta.schema.clone(), table.select(&c.meta.test_indices))
        }
        (None, None) => {
            return Err(Error::Usage(
                "need --test, or --checkpoint with --data".into(),
            ))
        }
    };
    let report = evaluate(&schema, &real, &synth).map_err(|e| e.in_stage("evaluate"))?;
    let json = report.to_json()?;
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary)?;
    std::fs::write(&report_path, json)?;
    std::fs::write(&summary_path, &summary)?;
    print!("{}", String::from_utf8_lossy(&summary));
    Ok(())
}

/// Columns of `table` rearranged to follow `header`.
fn reorder(table: &RawTable, header: &[String]) -> Result<RawTable> {
    let idx: Vec<usize> =
        header
            .iter()
            .map(|h| {
                table.header.iter().position(|x| x == h).ok_or_else(|| {
                    Error::schema(format!("column '{h}' missing from synthetic table"))
                })
            })
            .collect::<Result<_>>()?;
    Ok(RawTable::new(
        header.to_vec(),
        table
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect(),
    ))
}
