//! Command line front end: dataset generation, tracker training, attacked
//! and clean benchmarks, coefficient sweeps, and plot rendering.
//!
//! Exit codes: 0 success, 1 config or validation error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trackpgd_core::synth::generate_toy_sequences;
use trackpgd_eval::benchmark::load_or_train_tracker;
use trackpgd_eval::config::{AttackKindName, RunConfig, StepSignName};
use trackpgd_eval::{
    from_synthetic, render_plots, run_benchmark, run_sweep, save_dataset, Error, Result,
    RunArtifacts, RunReport,
};

#[derive(Parser)]
#[command(
    name = "trackpgd",
    version,
    about = "White-box mask attacks against a toy video object tracker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic toy dataset as PNG sequences.
    GenToy {
        #[command(flatten)]
        shared: Shared,
        /// Number of sequences.
        #[arg(long)]
        count: Option<usize>,
        /// Frames per sequence.
        #[arg(long)]
        length: Option<usize>,
        /// Square frame side in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train the toy tracker on synthetic data and save its weights.
    TrainToy {
        #[command(flatten)]
        shared: Shared,
    },
    /// Run the configured attack over the dataset and persist artifacts.
    Attack {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Run a clean benchmark with the attack disabled.
    Eval {
        #[command(flatten)]
        shared: Shared,
    },
    /// Sweep objective coefficients and run the objective ablation.
    Sweep {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Render overlays and metric curves from a finished run.
    Plot {
        #[command(flatten)]
        shared: Shared,
    },
}

#[derive(Args)]
struct Shared {
    /// Run configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the synthetic dataset seed (training seed for train-toy,
    /// generator seed for gen-toy).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output location (dataset root for gen-toy, weights
    /// path for train-toy, run directory otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackFlags {
    /// Objective driving the perturbation.
    #[arg(long)]
    attack: Option<AttackArg>,
    /// L-infinity budget in [0, 1] pixel units.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Step size per iteration.
    #[arg(long)]
    alpha: Option<f64>,
    /// Gradient iterations per frame.
    #[arg(long)]
    iters: Option<usize>,
    /// Focal-difference term coefficient.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Dice term coefficient.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Focal focusing exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Focal class weight.
    #[arg(long)]
    alpha_t: Option<f64>,
    /// Gradient step direction.
    #[arg(long)]
    step_sign: Option<StepSignArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Trackpgd,
    SegpgdObj,
    SegpgdBg,
    BcePgd,
    None,
}

impl AttackArg {
    fn to_name(self) -> AttackKindName {
        match self {
            AttackArg::Trackpgd => AttackKindName::TrackPgd,
            AttackArg::SegpgdObj => AttackKindName::SegPgdObj,
            AttackArg::SegpgdBg => AttackKindName::SegPgdBg,
            AttackArg::BcePgd => AttackKindName::BcePgd,
            AttackArg::None => AttackKindName::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StepSignArg {
    Asc,
    Desc,
}

impl StepSignArg {
    fn to_name(self) -> StepSignName {
        match self {
            StepSignArg::Asc => StepSignName::Ascend,
            StepSignArg::Desc => StepSignName::Descend,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version print to stdout and succeed; anything
            // else is a usage problem and maps to the config exit code.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config() { 1 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenToy {
            shared,
            count,
            length,
            size,
        } => gen_toy(&shared, count, length, size),
        Command::TrainToy { shared } => train_toy_cmd(&shared),
        Command::Attack { shared, flags } => benchmark_cmd(&shared, Some(&flags), false),
        Command::Eval { shared } => benchmark_cmd(&shared, None, true),
        Command::Sweep { shared, flags } => sweep_cmd(&shared, &flags),
        Command::Plot { shared } => plot_cmd(&shared),
    }
}

fn config_error(reason: impl Into<String>) -> Error {
    Error::Config {
        reason: reason.into(),
    }
}

fn load_config(shared: &Shared) -> Result<RunConfig> {
    let path = shared
        .config
        .as_ref()
        .ok_or_else(|| config_error("--config is required for this command"))?;
    RunConfig::from_path(path)
}

/// Applies --seed to the synthetic dataset and --out to the run directory.
fn apply_run_overrides(cfg: &mut RunConfig, shared: &Shared) -> Result<()> {
    if let Some(seed) = shared.seed {
        match cfg.dataset.synthetic.as_mut() {
            Some(synth) => synth.seed = seed,
            None => {
                return Err(config_error(
                    "--seed overrides the synthetic dataset seed, but the config uses a disk dataset",
                ))
            }
        }
    }
    if let Some(out) = &shared.out {
        cfg.output.dir = out.clone();
    }
    Ok(())
}

fn apply_attack_flags(cfg: &mut RunConfig, flags: &AttackFlags) {
    let attack = &mut cfg.attack;
    if let Some(kind) = flags.attack {
        attack.kind = kind.to_name();
    }
    if let Some(v) = flags.epsilon {
        attack.epsilon = v;
    }
    if let Some(v) = flags.alpha {
        attack.alpha = v;
    }
    if let Some(v) = flags.iters {
        attack.iters = v;
    }
    if let Some(v) = flags.lambda1 {
        attack.loss.lambda1 = v;
    }
    if let Some(v) = flags.lambda2 {
        attack.loss.lambda2 = v;
    }
    if let Some(v) = flags.gamma {
        attack.loss.gamma = v;
    }
    if let Some(v) = flags.alpha_t {
        attack.loss.alpha_t = v;
    }
    if let Some(s) = flags.step_sign {
        attack.step_sign = s.to_name();
    }
}

fn gen_toy(
    shared: &Shared,
    count: Option<usize>,
    length: Option<usize>,
    size: Option<usize>,
) -> Result<()> {
    // Flag > config > built-in default, so a config is optional here.
    let synth = match &shared.config {
        Some(_) => load_config(shared)?.dataset.synthetic,
        None => None,
    };
    let seed = shared.seed.or(synth.as_ref().map(|s| s.seed)).unwrap_or(7);
    let count = count.or(synth.as_ref().map(|s| s.count)).unwrap_or(20);
    let length = length.or(synth.as_ref().map(|s| s.length)).unwrap_or(8);
    let size = size.or(synth.as_ref().map(|s| s.size)).unwrap_or(32);
    if count < 1 {
        return Err(config_error("--count must be at least 1"));
    }
    if length < 2 {
        return Err(config_error("--length must be at least 2"));
    }
    if size < 8 {
        return Err(config_error("--size must be at least 8"));
    }
    let out = shared
        .out
        .as_ref()
        .ok_or_else(|| config_error("gen-toy requires --out for the dataset root"))?;

    log::info!("generating {count} sequences of {length} frames at {size}x{size} (seed {seed})");
    let seqs = generate_toy_sequences(seed, count, length, size)?
        .iter()
        .map(from_synthetic)
        .collect::<Result<Vec<_>>>()?;
    save_dataset(&seqs, out)?;
    println!(
        "wrote {count} sequences ({length} frames, {size}x{size}, seed {seed}) to {}",
        out.display()
    );
    Ok(())
}

fn train_toy_cmd(shared: &Shared) -> Result<()> {
    let mut cfg = load_config(shared)?;
    let train = cfg
        .train
        .as_mut()
        .ok_or_else(|| config_error("train-toy requires a [train] section"))?;
    if let Some(seed) = shared.seed {
        train.seed = Some(seed);
    }
    cfg.validate()?;
    let (tracker, report) = load_or_train_tracker(&cfg)?;
    let report = report.expect("the [train] section forces the training path");
    let out = shared
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("weights.bin"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    tracker.weights().save(&out)?;
    println!(
        "trained {} epochs to train-iou {:.4}; weights -> {}",
        report.epochs_run,
        report.train_iou,
        out.display()
    );
    Ok(())
}

fn benchmark_cmd(shared: &Shared, flags: Option<&AttackFlags>, force_clean: bool) -> Result<()> {
    let mut cfg = load_config(shared)?;
    if let Some(flags) = flags {
        apply_attack_flags(&mut cfg, flags);
    }
    if force_clean {
        cfg.attack.kind = AttackKindName::None;
    }
    apply_run_overrides(&mut cfg, shared)?;
    let (report, artifacts) = run_benchmark(&cfg)?;
    print_report(&report, &artifacts);
    Ok(())
}

fn sweep_cmd(shared: &Shared, flags: &AttackFlags) -> Result<()> {
    let mut cfg = load_config(shared)?;
    apply_attack_flags(&mut cfg, flags);
    apply_run_overrides(&mut cfg, shared)?;
    let (report, json_path) = run_sweep(&cfg)?;
    let cell = |l1: f64, l2: f64, j: Option<f64>| {
        println!("  lambda1 {l1:.3} lambda2 {l2:.3}: mean jaccard {}", fmt(j));
    };
    if !report.lambda1_row.is_empty() {
        println!("lambda1 row (lambda2 = 0):");
        for c in &report.lambda1_row {
            cell(c.lambda1, c.lambda2, c.mean_jaccard);
        }
    }
    if !report.lambda2_row.is_empty() {
        println!("lambda2 row (lambda1 = 0):");
        for c in &report.lambda2_row {
            cell(c.lambda1, c.lambda2, c.mean_jaccard);
        }
    }
    if !report.grid.is_empty() {
        println!("grid:");
        for c in &report.grid {
            cell(c.lambda1, c.lambda2, c.mean_jaccard);
        }
    }
    if !report.ablation.is_empty() {
        println!("ablation:");
        for c in &report.ablation {
            println!("  {}: mean jaccard {}", c.kind, fmt(c.mean_jaccard));
        }
    }
    println!("sweep report: {}", json_path.display());
    Ok(())
}

fn plot_cmd(shared: &Shared) -> Result<()> {
    let mut cfg = load_config(shared)?;
    apply_run_overrides(&mut cfg, shared)?;
    let written = render_plots(&cfg)?;
    println!(
        "rendered {} plots into {}",
        written.len(),
        cfg.output.dir.join("plots").display()
    );
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn print_report(report: &RunReport, artifacts: &RunArtifacts) {
    println!("sequences: {}", report.sequences.len());
    println!("mean jaccard: {}", fmt(report.mean_jaccard));
    println!("mean contour f: {}", fmt(report.mean_contour_f));
    println!("mean j&f: {}", fmt(report.mean_jf));
    if report.mean_clean_jaccard.is_some() {
        println!("mean clean jaccard: {}", fmt(report.mean_clean_jaccard));
    }
    println!(
        "failures: {} (mean robustness {}, higher is worse)",
        report.total_failures,
        fmt(report.mean_robustness)
    );
    println!("wall clock: {:.1}s", report.wall_clock_seconds);
    println!("report: {}", artifacts.report_json.display());
    println!("records: {}", artifacts.records.display());
    println!("summary: {}", artifacts.summary_csv.display());
    if let Some(weights) = &artifacts.weights {
        println!("weights: {}", weights.display());
    }
}
