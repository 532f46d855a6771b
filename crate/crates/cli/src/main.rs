//! `tsrl` command-line driver.
//!
//! Exit codes: 0 on success, 2 for usage errors and bad inputs, 1 when a
//! run fails numerically or on I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tsrl::checkpoint::load_net;
use tsrl::experiment::compare_to_dir;
use tsrl::metrics::binary_metrics;
use tsrl::orchestrator::run_dir_name;
use tsrl::student::positive_scores;
use tsrl::task::LabeledDataset;
use tsrl::{train_with, Mode, RunConfig, TrainOptions, TsrlError};

#[derive(Parser)]
#[command(
    name = "tsrl",
    version,
    about = "Tutor-driven sample re-weighting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its artifacts to <out>/<mode>-seed<seed>/.
    Train(TrainArgs),
    /// Train every mode for each seed and write a comparison.
    Compare(CompareArgs),
    /// Score a student checkpoint on a dataset CSV; prints JSON.
    Eval(EvalArgs),
    /// Print the fully resolved configuration.
    DumpConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output root [default: $TSRL_OUT or "runs"].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-sample registry after every epoch.
    #[arg(long)]
    dump_registry: bool,
    /// Also write the generated train/test splits as CSV.
    #[arg(long)]
    dump_data: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Student network file (student.net).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV with id,label,tag,x0.. columns.
    #[arg(long)]
    data: PathBuf,
}

fn out_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os("TSRL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve(args: &ConfigArgs) -> tsrl::Result<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

// Unreadable inputs are usage errors, unlike I/O failures while writing.
fn input_error(e: TsrlError) -> TsrlError {
    match e {
        TsrlError::Io { path, source } => {
            TsrlError::Config(format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    }
}

fn load_config(path: Option<&Path>) -> tsrl::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(input_error),
    }
}

fn train(args: TrainArgs) -> tsrl::Result<()> {
    let cfg = resolve(&args.config)?;
    let dir = out_root(args.out).join(run_dir_name(cfg.mode, cfg.seed));
    let opts = TrainOptions {
        registry_dump_dir: args.dump_registry.then(|| dir.join("registry")),
        ..TrainOptions::default()
    };
    let run = train_with(&cfg, &opts)?;
    run.write_to(&dir, args.dump_data)?;
    let m = &run.summary.final_metrics;
    eprintln!(
        "{}: shifted AUC {:.4}, hard fraction {:.4} -> {}",
        run_dir_name(cfg.mode, cfg.seed),
        m.shifted.auc,
        m.hard_fraction,
        dir.display()
    );
    Ok(())
}

fn compare(args: CompareArgs) -> tsrl::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let out = out_root(args.out);
    let cmp = compare_to_dir(&cfg, &args.seeds, &out)?;
    for (mode, s) in &cmp.summary.modes {
        eprintln!(
            "{mode:>8}: shifted AUC {:.4} +- {:.4}, hard fraction {:.4} +- {:.4}",
            s.shift_auc.mean, s.shift_auc.std, s.hard_fraction.mean, s.hard_fraction.std
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> tsrl::Result<()> {
    let net = load_net(&args.checkpoint).map_err(input_error)?;
    let data = LabeledDataset::load_csv(&args.data).map_err(input_error)?;
    if data.input_dim() != net.input_dim() {
        return Err(TsrlError::DimensionMismatch {
            expected: net.input_dim(),
            actual: data.input_dim(),
            context: "dataset columns vs checkpoint input",
        });
    }
    let scores = positive_scores(&net, &data.inputs)?;
    let m = binary_metrics(&scores, &data.labels)?;
    let out = json!({ "auc": m.auc, "acc": m.acc, "eer": m.eer, "n": data.len() });
    println!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::Eval(a) => eval(a),
        Command::DumpConfig(a) => resolve(&a).map(|cfg| println!("{}", cfg.to_json_pretty())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
