//! Command-line front end: `gen-data`, `train`, `eval`, `ablate`, `gradcheck`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{io_at, Error, Result};
use crate::gradcheck::suite::{self, Case, TOLERANCE};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{Pmcnet, Variant};
use crate::params::Parameters;
use crate::synth::{self, class_pixel_counts, generate_dataset, load_split, Split, CLASS_NAMES, MANIFEST_FILE};
use crate::train::{format_loss_log, train};

pub const CHECKPOINT_FILE: &str = "checkpoint.pmcn";
pub const LOSS_LOG_FILE: &str = "loss.log";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const ABLATION_FILE: &str = "ablation.txt";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pmcnet", version, about = "Multi-class lesion segmentation on synthetic fundus images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (flat key=value file); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` (or `data_dir` for gen-data).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData(Common),
    /// Train on the train split; writes checkpoint.pmcn and loss.log.
    Train(Common),
    /// Evaluate a checkpoint on the test split; writes report.txt and report.kv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/checkpoint.pmcn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every configured variant; writes ablation.txt.
    Ablate(Common),
    /// Finite-difference check of every operator and block.
    Gradcheck,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        Error::Config { .. } | Error::InvalidArgument(_) | Error::UndefinedMetric(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_at(path))
}

fn out_dir(c: &Common, cfg: &RunConfig) -> PathBuf {
    c.out.clone().unwrap_or_else(|| cfg.out_dir.clone())
}

pub fn cmd_gen_data(c: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(c)?;
    let dir = c.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let manifest = generate_dataset(&cfg.synth, cfg.train.seed, cfg.splits, &dir)?;
    let mut samples = Vec::new();
    for split in Split::ALL {
        samples.extend(load_split(&dir, split)?);
    }
    let counts = class_pixel_counts(&samples);
    let total: usize = counts.iter().sum();
    writeln!(out, "manifest {}", dir.join(MANIFEST_FILE).display())?;
    writeln!(out, "images {}", manifest.entries.len())?;
    for (name, n) in CLASS_NAMES.iter().zip(counts) {
        writeln!(out, "{name}\t{n}\t{:.4}", n as f64 / total as f64)?;
    }
    Ok(())
}

pub fn cmd_train(c: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg);
    let train_set = load_split(&cfg.data_dir, Split::Train)?;
    let val_set = load_split(&cfg.data_dir, Split::Val)?;
    let outcome = train(&cfg.model, &cfg.train, &train_set, &val_set)?;
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    outcome.model.params.save(&dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(LOSS_LOG_FILE), format_loss_log(&outcome.losses))?;
    for (iter, r) in &outcome.evals {
        writeln!(out, "val iter={iter} mauc={:.4}", r.mauc)?;
    }
    match outcome.losses.last() {
        Some(r) => writeln!(out, "final loss {:.6} after {} iterations", r.loss, outcome.losses.len())?,
        None => writeln!(out, "no iterations run; checkpoint holds the initialisation")?,
    }
    Ok(())
}

pub fn cmd_eval(c: &Common, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<MetricsReport> {
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let params = Parameters::load(&ckpt)?;
    let model = Pmcnet::with_params(cfg.model.clone(), params)?;
    let test = load_split(&cfg.data_dir, Split::Test)?;
    let report = evaluate(&model, &test, cfg.pooling)?;
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    write_file(&dir.join(REPORT_FILE), report.to_table())?;
    write_file(&dir.join(REPORT_KV_FILE), report.to_kv())?;
    writeln!(out, "mauc {:.4}", report.mauc)?;
    Ok(report)
}

/// One row of the ablation table: medians over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    /// Median AUC per lesion class, `None` if absent from the test split.
    pub auc: Vec<Option<f64>>,
    pub mauc: f64,
    /// mAUC of each seed, in seed order.
    pub seed_mauc: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Trains and evaluates every variant for every seed on the same data.
pub fn run_ablation(
    cfg: &RunConfig,
    train_set: &[synth::SegSample],
    test_set: &[synth::SegSample],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let model_cfg = cfg.model.with_variant(variant);
        let mut reports = Vec::new();
        for &seed in &cfg.ablation_seeds {
            let tc = crate::train::TrainConfig { seed, ..cfg.train.clone() };
            let outcome = train(&model_cfg, &tc, train_set, &[])?;
            reports.push(evaluate(&outcome.model, test_set, cfg.pooling)?);
        }
        let classes = reports[0].classes.len();
        let auc = (0..classes)
            .map(|k| {
                let v: Vec<f64> = reports.iter().filter_map(|r| r.classes[k].auc).collect();
                (!v.is_empty()).then(|| median(&v))
            })
            .collect();
        let seed_mauc: Vec<f64> = reports.iter().map(|r| r.mauc).collect();
        rows.push(AblationRow {
            variant,
            params: Pmcnet::init(model_cfg, 0)?.params.count(),
            auc,
            mauc: median(&seed_mauc),
            seed_mauc,
        });
    }
    Ok(rows)
}

/// Per-class AUC, mAUC and its change against the baseline row, as percentages.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let base = rows.iter().find(|r| r.variant == Variant::Baseline).map(|r| r.mauc);
    let mut s = String::from("variant\tparams");
    for name in &CLASS_NAMES[1..] {
        let _ = write!(s, "\t{name}");
    }
    s.push_str("\tmAUC\tdelta\n");
    for r in rows {
        let _ = write!(s, "{}\t{}", r.variant, r.params);
        for a in &r.auc {
            match a {
                Some(a) => _ = write!(s, "\t{:.2}", 100.0 * a),
                None => s.push_str("\t-"),
            }
        }
        let _ = write!(s, "\t{:.2}", 100.0 * r.mauc);
        match base {
            Some(b) => _ = writeln!(s, "\t{:+.2}", 100.0 * (r.mauc - b)),
            None => s.push_str("\t-\n"),
        }
    }
    s
}

pub fn cmd_ablate(c: &Common, out: &mut dyn Write) -> Result<Vec<AblationRow>> {
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg);
    let train_set = load_split(&cfg.data_dir, Split::Train)?;
    let test_set = load_split(&cfg.data_dir, Split::Test)?;
    let rows = run_ablation(&cfg, &train_set, &test_set)?;
    let table = ablation_table(&rows);
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    write_file(&dir.join(ABLATION_FILE), &table)?;
    out.write_all(table.as_bytes())?;
    Ok(rows)
}

/// Runs `cases`, prints one line per case and returns the exit code.
pub fn gradcheck_exit(cases: &[Case], out: &mut dyn Write) -> i32 {
    let mut failed = Vec::new();
    for case in cases {
        let r = suite::run_case(case);
        let status = if r.passed() { "ok" } else { "FAIL" };
        let _ = match &r.error {
            Some(e) => writeln!(out, "{}\t-\t{status}\t{e}", r.name),
            None => writeln!(out, "{}\t{:.3e}\t{status}", r.name, r.max_rel_error),
        };
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        let _ = writeln!(out, "all {} checks below {TOLERANCE:e}", cases.len());
        EXIT_OK
    } else {
        let _ = writeln!(out, "gradient check failed: {}", failed.join(", "));
        EXIT_GRADCHECK
    }
}

/// Runs a parsed command, writing human output to `out` and diagnostics to
/// `err`. Returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::GenData(c) => cmd_gen_data(c, out),
        Command::Train(c) => cmd_train(c, out),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint.as_deref(), out).map(drop),
        Command::Ablate(c) => cmd_ablate(c, out).map(drop),
        Command::Gradcheck => return gradcheck_exit(&suite::default_cases(), out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
