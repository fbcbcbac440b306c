//! Command-line front end for the source-separation library: generate
//! synthetic benchmark data, train a separation model, score recovered
//! sources, and run the three-arm demo.
//!
//! Exit codes: `0` success (including `--help`/`--version`), `1` for usage
//! errors (unknown flags, invalid flag values, malformed config files), `2`
//! for runtime failures (missing files, parse errors, diverged training).
//!
//! Every artifact is written atomically (temp file + rename), and every
//! `generate`/`train`/`demo` run drops a `manifest.json` echoing the
//! effective configuration together with a content hash of its inputs, so a
//! run can be identified and reproduced from its output directory alone.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use unmix::observation::GeneratorShape;
use unmix::synth::{write_atomic, write_signal_csv, Experiment, MixingKind};
use unmix::trainer::{
    default_eta_init, train_with, Checkpoint, Monitor, TrainConfig, TrainState,
};
use unmix::{permutation_match, read_signal_csv, MatchReport};

#[derive(Parser)]
#[command(
    name = "unmix",
    version,
    about = "Recover smooth latent sources from mixed signals",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic mixing problem with known ground truth.
    Generate(GenerateArgs),
    /// Train a separation model on observed channels.
    Train(TrainArgs),
    /// Score recovered sources against the ground truth.
    Eval(EvalArgs),
    /// Run the linear / linear-without-decorrelation / nonlinear case
    /// studies and print a summary table.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MixingArg {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorArg {
    Linear,
    Mlp,
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of time samples.
    #[arg(long = "T", default_value_t = 1000)]
    t: usize,
    /// Mixing family.
    #[arg(long, value_enum, default_value_t = MixingArg::Linear)]
    mixing: MixingArg,
    /// Standard deviation of additive sensor noise.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Seed for noise and the nonlinear mixer.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Observed channels (CSV as written by `generate`).
    #[arg(long)]
    data: PathBuf,
    /// Optional ground-truth sources for read-only monitoring.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Full training config as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of sources to recover.
    #[arg(long)]
    n_sources: Option<usize>,
    /// Weight of the decorrelation penalty.
    #[arg(long)]
    lambda_sep: Option<f64>,
    /// Weight of the smoothness energies.
    #[arg(long)]
    lambda_gp: Option<f64>,
    /// Observation noise variance.
    #[arg(long)]
    nu_y: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for parameter initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Observation map architecture.
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
    /// Hidden width of the mlp map.
    #[arg(long)]
    hidden: Option<usize>,
    /// Give the linear map a channel bias.
    #[arg(long)]
    use_bias: bool,
    /// Standard deviation of the latent initialization.
    #[arg(long)]
    sigma_init: Option<f64>,
    /// Kernel diagonal jitter.
    #[arg(long)]
    jitter: Option<f64>,
    /// Lower length-scale clamp.
    #[arg(long)]
    ell_min: Option<f64>,
    /// Upper length-scale clamp.
    #[arg(long)]
    ell_max: Option<f64>,
    /// Compute the monitoring correlation every N epochs.
    #[arg(long, default_value_t = 1)]
    monitor_every: usize,
    /// Write every Nth epoch record to history.jsonl (the final epoch is
    /// always written).
    #[arg(long, default_value_t = 1)]
    log_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Recovered sources (CSV).
    #[arg(long)]
    recovered: PathBuf,
    /// Ground-truth sources (CSV).
    #[arg(long)]
    truth: PathBuf,
    /// Where to write the JSON report.
    #[arg(long, default_value = "match_report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Output directory (one subdirectory per arm).
    #[arg(long)]
    out: PathBuf,
    /// Smaller problem for a fast end-to-end run.
    #[arg(long)]
    quick: bool,
    /// Override the number of time samples.
    #[arg(long = "T")]
    t: Option<usize>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed shared by data generation and training.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Failures split by exit code: usage mistakes (1) vs runtime errors (2).
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

type CliResult<T> = Result<T, CliError>;

impl From<unmix::Error> for CliError {
    fn from(e: unmix::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Demo(args) => cmd_demo(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write `manifest.json` into `dir`: the effective config, content hashes of
/// the inputs, and a run id derived from both. Deliberately contains no
/// timestamps or absolute environment details, so identical invocations
/// produce identical manifests.
fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    config: serde_json::Value,
) -> CliResult<()> {
    #[derive(Serialize)]
    struct InputRecord {
        role: String,
        path: String,
        sha256: String,
    }
    let mut input_records = Vec::with_capacity(inputs.len());
    for (role, path) in inputs {
        let bytes = fs::read(path)?;
        input_records.push(InputRecord {
            role: (*role).to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    let identity = serde_json::json!({
        "command": command,
        "config": &config,
        "inputs": &input_records,
    });
    let run_id = sha256_hex(serde_json::to_string(&identity)?.as_bytes())[..16].to_string();
    let manifest = serde_json::json!({
        "command": command,
        "run_id": run_id,
        "config": config,
        "inputs": input_records,
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    if args.t < 2 {
        return Err(usage(format!("--T must be at least 2, got {}", args.t)));
    }
    if !args.noise_std.is_finite() || args.noise_std < 0.0 {
        return Err(usage(format!("--noise-std must be finite and >= 0, got {}", args.noise_std)));
    }
    let kind = match args.mixing {
        MixingArg::Linear => MixingKind::Linear,
        MixingArg::Nonlinear => MixingKind::Nonlinear,
    };
    let experiment = Experiment::generate(args.t, kind, args.noise_std, args.seed)?;
    fs::create_dir_all(&args.out)?;
    write_signal_csv(&args.out.join("sources.csv"), &experiment.sources)?;
    write_signal_csv(&args.out.join("observations.csv"), &experiment.observations)?;
    let mixing_doc = serde_json::json!({
        "t": args.t,
        "noise_std": experiment.noise_std,
        "seed": experiment.seed,
        "mixing": &experiment.mixing,
    });
    write_atomic(
        &args.out.join("mixing.json"),
        serde_json::to_string_pretty(&mixing_doc)?.as_bytes(),
    )?;
    let config = serde_json::json!({
        "t": args.t,
        "mixing": match kind { MixingKind::Linear => "linear", MixingKind::Nonlinear => "nonlinear" },
        "noise_std": args.noise_std,
        "seed": args.seed,
    });
    write_manifest(&args.out, "generate", &[], config)?;
    println!(
        "wrote sources.csv, observations.csv, mixing.json, manifest.json to {}",
        args.out.display()
    );
    Ok(())
}

/// Defaults, overlaid by the config file, overlaid by explicit flags.
fn build_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display()))
            })?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| usage(format!("config file {}: {e}", path.display())))?
        }
        None => TrainConfig::defaults(args.n_sources.unwrap_or(3)),
    };
    if let Some(n) = args.n_sources {
        if n != config.n_sources {
            config.n_sources = n;
            config.eta_init = default_eta_init(n);
        }
    }
    if let Some(v) = args.lambda_sep {
        config.lambda_sep = v;
    }
    if let Some(v) = args.lambda_gp {
        config.lambda_gp = v;
    }
    if let Some(v) = args.nu_y {
        config.nu_y = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.sigma_init {
        config.sigma_init = v;
    }
    if let Some(v) = args.jitter {
        config.jitter = v;
    }
    if let Some(v) = args.ell_min {
        config.ell_min = v;
    }
    if let Some(v) = args.ell_max {
        config.ell_max = v;
    }
    if let Some(kind) = args.generator {
        config.generator = match kind {
            GeneratorArg::Linear => GeneratorShape::Linear { use_bias: false },
            GeneratorArg::Mlp => GeneratorShape::Mlp { hidden: 32 },
        };
    }
    if let Some(h) = args.hidden {
        match &mut config.generator {
            GeneratorShape::Mlp { hidden } => *hidden = h,
            GeneratorShape::Linear { .. } => {
                return Err(usage("--hidden applies to the mlp map; pass --generator mlp"));
            }
        }
    }
    if args.use_bias {
        match &mut config.generator {
            GeneratorShape::Linear { use_bias } => *use_bias = true,
            GeneratorShape::Mlp { .. } => {
                return Err(usage("--use-bias applies to the linear map"));
            }
        }
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Stream records to `<out>/history.jsonl` while training runs; the log
/// survives divergence with every completed epoch already written.
fn run_training(
    y: &ndarray::Array2<f64>,
    truth: Option<&ndarray::Array2<f64>>,
    config: &TrainConfig,
    out: &Path,
    monitor_every: usize,
    log_every: usize,
) -> CliResult<TrainState> {
    let history_path = out.join("history.jsonl");
    let tmp_path = out.join(".history.jsonl.tmp");
    let mut writer = BufWriter::new(fs::File::create(&tmp_path)?);
    let monitor = match truth {
        Some(t) => Monitor::with_truth(t, monitor_every),
        None => Monitor::none(),
    };
    let epochs = config.epochs;
    let result = train_with(y, config, monitor, |record| {
        if record.epoch % log_every == 0 || record.epoch == epochs {
            let line = serde_json::to_string(record)
                .map_err(|e| unmix::Error::Parse(e.to_string()))?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    });
    writer.flush()?;
    drop(writer);
    fs::rename(&tmp_path, &history_path)?;
    Ok(result?)
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    if args.monitor_every == 0 {
        return Err(usage("--monitor-every must be at least 1"));
    }
    if args.log_every == 0 {
        return Err(usage("--log-every must be at least 1"));
    }
    let config = build_train_config(&args)?;
    let y = read_signal_csv(&args.data)?;
    let truth = match &args.truth {
        Some(path) => Some(read_signal_csv(path)?),
        None => None,
    };
    fs::create_dir_all(&args.out)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("data", args.data.as_path())];
    if let Some(t) = &args.truth {
        inputs.push(("truth", t.as_path()));
    }
    write_manifest(&args.out, "train", &inputs, serde_json::to_value(&config)?)?;

    let state = run_training(
        &y,
        truth.as_ref(),
        &config,
        &args.out,
        args.monitor_every,
        args.log_every,
    )?;

    write_signal_csv(&args.out.join("recovered.csv"), &state.latents)?;
    let checkpoint = Checkpoint::capture(&config, &state);
    write_atomic(&args.out.join("checkpoint.json"), checkpoint.to_json()?.as_bytes())?;

    if let Some(last) = state.history.last() {
        println!(
            "epoch {}: loss_total {:.6e} (obs {:.6e}, gp {:.6e}, sep {:.6e})",
            last.epoch, last.loss_total, last.loss_obs, last.loss_gp, last.loss_sep
        );
        let ells: Vec<String> =
            last.length_scales.iter().map(|l| format!("{l:.4}")).collect();
        println!("length-scales: {}", ells.join(" "));
    }
    if let Some(truth) = &truth {
        let report = permutation_match(state.latents.view(), truth.view())?;
        println!("final matched mean |corr|: {:.6}", report.mean_abs_corr);
    }
    println!(
        "wrote history.jsonl, recovered.csv, checkpoint.json, manifest.json to {}",
        args.out.display()
    );
    Ok(())
}

fn print_report(report: &MatchReport) {
    for (je, (&jt, r)) in report
        .permutation
        .iter()
        .zip(&report.per_pair_abs_corr)
        .enumerate()
    {
        println!("estimated ch_{} -> true ch_{}: |r| = {:.6}", je + 1, jt + 1, r);
    }
    println!("mean matched |corr| = {:.6}", report.mean_abs_corr);
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let recovered = read_signal_csv(&args.recovered)?;
    let truth = read_signal_csv(&args.truth)?;
    let report = permutation_match(recovered.view(), truth.view())?;
    print_report(&report);
    write_atomic(&args.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ArmSummary {
    arm: String,
    final_mean_abs_corr: f64,
    /// First epoch whose monitored correlation reached 0.90, if any.
    epochs_to_090: Option<usize>,
    final_length_scales: Vec<f64>,
    final_loss_total: f64,
}

fn cmd_demo(args: DemoArgs) -> CliResult<()> {
    let t = args.t.unwrap_or(if args.quick { 400 } else { 1000 });
    if t < 2 {
        return Err(usage(format!("--T must be at least 2, got {t}")));
    }
    let epochs = args.epochs.unwrap_or(4000);
    fs::create_dir_all(&args.out)?;

    // `None` keeps the default decorrelation weight; the middle arm disables it.
    let arms: [(&str, MixingKind, Option<f64>, GeneratorShape); 3] = [
        ("linear", MixingKind::Linear, None, GeneratorShape::Linear { use_bias: false }),
        ("linear-nosep", MixingKind::Linear, Some(0.0), GeneratorShape::Linear { use_bias: false }),
        ("nonlinear", MixingKind::Nonlinear, None, GeneratorShape::Mlp { hidden: 32 }),
    ];

    let mut summaries = Vec::with_capacity(arms.len());
    for (name, kind, lambda_sep, generator) in arms {
        let experiment = Experiment::generate(t, kind, 0.0, args.seed)?;
        let mut config = TrainConfig::defaults(3);
        config.epochs = epochs;
        config.seed = args.seed;
        if let Some(weight) = lambda_sep {
            config.lambda_sep = weight;
        }
        config.generator = generator;

        let arm_dir = args.out.join(name);
        fs::create_dir_all(&arm_dir)?;
        eprintln!("[{name}] training {epochs} epochs on T={t}…");
        let state = run_training(
            &experiment.observations,
            Some(&experiment.sources),
            &config,
            &arm_dir,
            1,
            1,
        )?;
        write_signal_csv(&arm_dir.join("recovered.csv"), &state.latents)?;
        let report = permutation_match(state.latents.view(), experiment.sources.view())?;
        write_atomic(
            &arm_dir.join("report.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;

        let epochs_to_090 = state
            .history
            .iter()
            .find(|r| r.monitor_corr.is_some_and(|c| c >= 0.90))
            .map(|r| r.epoch);
        let last = state.history.last();
        summaries.push(ArmSummary {
            arm: name.to_string(),
            final_mean_abs_corr: report.mean_abs_corr,
            epochs_to_090,
            final_length_scales: state.length_scales(),
            final_loss_total: last.map_or(f64::NAN, |r| r.loss_total),
        });
    }

    println!("{:<14} {:>10} {:>15}  length-scales", "arm", "final |r|", "epochs to 0.90");
    for s in &summaries {
        let reached = s
            .epochs_to_090
            .map(|e| e.to_string())
            .unwrap_or_else(|| "-".to_string());
        let ells: Vec<String> = s.final_length_scales.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "{:<14} {:>10.4} {:>15}  {}",
            s.arm,
            s.final_mean_abs_corr,
            reached,
            ells.join(" ")
        );
    }

    write_atomic(
        &args.out.join("summary.json"),
        serde_json::to_string_pretty(&summaries)?.as_bytes(),
    )?;
    let config = serde_json::json!({
        "t": t,
        "epochs": epochs,
        "seed": args.seed,
        "quick": args.quick,
    });
    write_manifest(&args.out, "demo", &[], config)?;
    println!("wrote per-arm outputs and summary.json to {}", args.out.display());
    Ok(())
}
