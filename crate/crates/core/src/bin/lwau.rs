//! Command-line driver: reproducible training, evaluation, probes, and
//! data generation. Exit codes: 0 success, 1 runtime failure, 2
//! usage/validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use lwau::config::{Precision, RunConfig};
use lwau::data::{self, poolfile, Split};
use lwau::meta::{
    self, adapt_baseline_head, load_state, train_conventional_baseline, BaselineParams,
    EvalRunOptions, MetaState, TrainOptions, TrainPools, Trainer,
};
use lwau::probes::{
    self, export_report, freeze_sweep, mean_update_proportions, write_pgm, ReportFormat,
};
use lwau::tensor::{DType, Scalar};

#[derive(Parser)]
#[command(name = "lwau", version, about = "Few-shot meta-learning engine with per-layer learned inner rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a meta-learner and write checkpoints, rate curves, and logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint over freshly sampled episodes.
    Eval(EvalArgs),
    /// Run instrumentation probes or the meta-gradient check.
    Probe(ProbeArgs),
    /// Materialize a synthetic class pool to disk.
    Gendata(GendataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed (flag > LWAU_SEED env > file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir in the config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Parallel episode workers (overrides output.workers).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides train.iterations.
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pool split to evaluate on: validation or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 600)]
    episodes: usize,
    /// Inner-update steps; defaults to train.inner_steps_test.
    #[arg(long)]
    steps: Option<usize>,
    /// Freeze the bottom N layers during adaptation.
    #[arg(long, default_value_t = 0)]
    freeze_below: usize,
    #[arg(long)]
    workers: Option<usize>,
    /// Evaluate on a materialized pool file instead of generated data.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Seed for evaluation episode sampling (defaults to the config seed).
    #[arg(long)]
    episode_seed: Option<u64>,
    /// Where to write the report row (defaults next to the checkpoint).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report format: csv or text.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(subcommand)]
    kind: ProbeKind,
}

#[derive(Subcommand)]
enum ProbeKind {
    /// Finite-difference check of the meta-gradient on a tiny perceptron.
    Gradcheck {
        /// Inner-step counts to check.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3])]
        steps: Vec<usize>,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Per-layer update proportions after test-time adaptation.
    Proportions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 600)]
        episodes: usize,
        #[arg(long)]
        steps: Option<usize>,
        /// Also train the conventional baseline and report its row.
        #[arg(long)]
        include_baseline: bool,
        #[arg(long, default_value_t = 2000)]
        baseline_iterations: u64,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Activation percentage of post-adaptation query representations.
    Sparsity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        steps: Option<usize>,
        /// Directory for representation maps (PGM).
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy and adaptation latency across freeze depths, paired over
    /// learned-rate and fixed-rate checkpoints.
    Freeze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lwau_checkpoint: PathBuf,
        #[arg(long)]
        maml_checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 5)]
        timing_reps: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct GendataArgs {
    /// Pool kind: blobs or glyphs.
    kind: String,
    #[arg(long, default_value_t = 30)]
    classes: usize,
    #[arg(long, default_value_t = 24)]
    per_class: usize,
    /// Blob dimensionality.
    #[arg(long)]
    dim: Option<usize>,
    /// Blob class-mean hypercube side.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Glyph image side (multiple of 4, at least 20).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// f32 or f64.
    #[arg(long, default_value = "f32")]
    precision: String,
    #[arg(long)]
    out: PathBuf,
    /// Intended episode shape, to warn about undersized pools.
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
}

/// Errors sorted into the exit-code contract.
enum CliError {
    /// Exit 2: bad arguments, config, or input files.
    Usage(anyhow::Error),
    /// Exit 1: a runtime failure mid-run.
    Runtime(anyhow::Error),
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> CliResult {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        // Unknown probe kinds get an explicit listing of the valid ones.
        if e.kind() == clap::error::ErrorKind::InvalidSubcommand
            && std::env::args().nth(1).as_deref() == Some("probe")
        {
            eprintln!(
                "error: unknown probe kind {:?}; valid kinds: gradcheck, proportions, \
                 sparsity, freeze",
                std::env::args().nth(2).unwrap_or_default()
            );
            std::process::exit(2);
        }
        e.exit()
    });
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Gendata(args) => cmd_gendata(args),
    }
}

/// Loads a config and applies the seed precedence: flag > env > file.
fn load_config(path: &Path, seed_flag: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    let env_seed = std::env::var("LWAU_SEED")
        .ok()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| usage(anyhow!("LWAU_SEED must be an unsigned integer, got {s:?}")))
        })
        .transpose()?;
    if let Some(seed) = seed_flag.or(env_seed) {
        cfg.raw.seed = seed;
    }
    Ok(cfg)
}

fn parse_format(s: Option<&str>, cfg: &RunConfig) -> CliResult<ReportFormat> {
    let name = s.unwrap_or(cfg.raw.output.format.as_str());
    ReportFormat::parse(name)
        .ok_or_else(|| usage(anyhow!("unknown report format {name:?} (csv or text)")))
}

fn parse_split(s: &str) -> CliResult<Split> {
    match Split::parse(s) {
        Some(Split::Train) | None => Err(usage(anyhow!(
            "split must be validation or test, got {s:?}"
        ))),
        Some(split) => Ok(split),
    }
}

// ---- train ---------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut cfg = load_config(&args.config, args.seed)?;
    if let Some(iterations) = args.iterations {
        cfg.raw.train.iterations = iterations;
        cfg = RunConfig::from_raw(cfg.raw).map_err(usage)?;
    }
    let output = args
        .output
        .or_else(|| cfg.raw.output.dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| usage(anyhow!("train needs an output directory (--output or output.dir)")))?;
    let workers = args.workers.unwrap_or_else(|| cfg.workers());
    match cfg.precision {
        Precision::F32 => train_run::<f32>(&cfg, &output, workers),
        Precision::F64 => train_run::<f64>(&cfg, &output, workers),
    }
}

fn train_run<T: Scalar>(cfg: &RunConfig, output: &Path, workers: usize) -> CliResult {
    let fingerprint = cfg.fingerprint();
    std::fs::create_dir_all(output)
        .with_context(|| format!("creating {}", output.display()))
        .map_err(usage)?;
    std::fs::write(output.join("config.canonical.txt"), cfg.canonical_text())
        .context("writing canonical config")
        .map_err(runtime)?;
    std::fs::write(output.join("fingerprint.txt"), format!("{fingerprint}\n"))
        .context("writing fingerprint")
        .map_err(runtime)?;

    let spec = cfg.network_spec().map_err(usage)?;
    let params = cfg.train_params().map_err(usage)?;
    let (train_pool, val_pool, _) = cfg.build_pools::<T>().map_err(usage)?;
    let trainer: Trainer<T> = Trainer::new(spec, params.clone()).map_err(usage)?;

    eprintln!(
        "training {} for {} iterations (workers {workers}, fingerprint {})",
        params.mode_label(),
        params.iterations,
        &fingerprint[..12]
    );
    let outcome = meta::train(
        &trainer,
        &TrainPools {
            train: &train_pool,
            validation: &val_pool,
        },
        cfg.raw.seed,
        &fingerprint,
        &TrainOptions {
            output_dir: Some(output.to_path_buf()),
            interval: cfg.raw.output.checkpoint_interval,
            workers,
        },
    )
    .map_err(runtime)?;

    let alphas = outcome
        .final_state
        .alpha_f64()
        .iter()
        .map(|a| format!("{a:.5}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "done: iteration {} | alpha [{alphas}] | best validation accuracy {:.4}",
        outcome.final_state.iteration, outcome.best_validation_accuracy
    );
    println!("checkpoints and logs under {}", output.display());
    Ok(())
}

// ---- eval ----------------------------------------------------------------

/// Loads a checkpoint whose dtype and fingerprint must match the config.
fn load_checked_state<T: Scalar>(path: &Path, cfg: &RunConfig) -> CliResult<MetaState<T>> {
    let dtype = meta::peek_checkpoint_dtype(path).map_err(usage)?;
    if dtype != cfg.precision.dtype() {
        return Err(usage(anyhow!(
            "checkpoint {} is {dtype}, config precision is {}",
            path.display(),
            cfg.precision.dtype()
        )));
    }
    let state = load_state::<T>(path).map_err(usage)?;
    let expected = cfg.fingerprint();
    if state.fingerprint != expected {
        return Err(usage(anyhow!(
            "checkpoint fingerprint {} does not match config fingerprint {} \
             (wrong architecture or training configuration)",
            &state.fingerprint[..12.min(state.fingerprint.len())],
            &expected[..12]
        )));
    }
    Ok(state)
}

fn load_eval_pool<T: Scalar>(
    cfg: &RunConfig,
    pool_file: Option<&Path>,
    split: Split,
) -> CliResult<data::ClassPool<T>> {
    match pool_file {
        Some(path) => {
            let dtype = poolfile::peek_pool_dtype(path).map_err(usage)?;
            if dtype != cfg.precision.dtype() {
                return Err(usage(anyhow!(
                    "pool {} is {dtype}, config precision is {}",
                    path.display(),
                    cfg.precision.dtype()
                )));
            }
            poolfile::load_pool::<T>(path).map_err(usage)
        }
        None => {
            let (_, val, test) = cfg.build_pools::<T>().map_err(usage)?;
            Ok(match split {
                Split::Validation => val,
                _ => test,
            })
        }
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let cfg = load_config(&args.config, args.seed)?;
    match cfg.precision {
        Precision::F32 => eval_run::<f32>(&cfg, &args),
        Precision::F64 => eval_run::<f64>(&cfg, &args),
    }
}

fn eval_run<T: Scalar>(cfg: &RunConfig, args: &EvalArgs) -> CliResult {
    let split = parse_split(&args.split)?;
    let state = load_checked_state::<T>(&args.checkpoint, cfg)?;
    let pool = load_eval_pool::<T>(cfg, args.pool.as_deref(), split)?;
    let spec = cfg.network_spec().map_err(usage)?;
    let params = cfg.train_params().map_err(usage)?;
    let steps = args.steps.unwrap_or(params.inner_steps_test);
    let workers = args.workers.unwrap_or_else(|| cfg.workers());
    let seed = args.episode_seed.unwrap_or(state.seed);

    let evaluator: meta::Evaluator<T> =
        meta::Evaluator::new(&spec, params.ways, params.shots, params.queries, args.freeze_below)
            .map_err(usage)?;
    let out = evaluator
        .evaluate_pool(
            &state.weights,
            &state.alpha,
            &pool,
            args.episodes,
            steps,
            seed,
            &EvalRunOptions {
                timing_reps: 1,
                workers,
            },
        )
        .map_err(runtime)?;

    println!(
        "{:.4} ± {:.4} | mean adaptation {:.3} ms | {} episodes, {} steps, freeze {}",
        out.accuracy,
        out.half_width,
        out.mean_adapt_seconds * 1e3,
        out.episodes,
        steps,
        args.freeze_below
    );

    let report = probes::FreezeSweepReport {
        rows: vec![probes::FreezeRow {
            mode: params.mode_label().to_string(),
            frozen_below: args.freeze_below,
            accuracy: out.accuracy,
            half_width: out.half_width,
            mean_adapt_seconds: out.mean_adapt_seconds,
        }],
        episodes: out.episodes,
        steps,
    };
    let report_path = args.report.clone().unwrap_or_else(|| {
        args.checkpoint
            .with_file_name("eval_report.csv")
    });
    let format = parse_format(args.format.as_deref(), cfg)?;
    export_report(&report, &cfg.fingerprint(), &report_path, format).map_err(runtime)?;
    Ok(())
}

// ---- probes ----------------------------------------------------------------

fn cmd_probe(args: ProbeArgs) -> CliResult {
    match args.kind {
        ProbeKind::Gradcheck {
            steps,
            tolerance,
            fd_step,
            seed,
        } => {
            let mut worst = 0.0f64;
            for &s in &steps {
                let report = meta::standard_check(s, seed, fd_step).map_err(runtime)?;
                println!(
                    "inner steps {s}: max relative error {:.3e} (near-zero abs {:.3e}) over {} entries",
                    report.max_rel_err, report.max_abs_err_small, report.entries
                );
                worst = worst.max(report.max_rel_err);
                if !report.within(tolerance, 1e-8) {
                    return Err(runtime(anyhow!(
                        "meta-gradient check failed at {s} inner steps: {:.3e} > {tolerance:.1e}",
                        report.max_rel_err
                    )));
                }
            }
            println!("meta-gradient oracle satisfied at tolerance {tolerance:.1e}");
            Ok(())
        }
        ProbeKind::Proportions {
            config,
            checkpoint,
            split,
            episodes,
            steps,
            include_baseline,
            baseline_iterations,
            output,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            match cfg.precision {
                Precision::F32 => proportions_run::<f32>(
                    &cfg,
                    &checkpoint,
                    &split,
                    episodes,
                    steps,
                    include_baseline,
                    baseline_iterations,
                    output,
                    format,
                ),
                Precision::F64 => proportions_run::<f64>(
                    &cfg,
                    &checkpoint,
                    &split,
                    episodes,
                    steps,
                    include_baseline,
                    baseline_iterations,
                    output,
                    format,
                ),
            }
        }
        ProbeKind::Sparsity {
            config,
            checkpoint,
            split,
            episodes,
            steps,
            pgm_dir,
            output,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            match cfg.precision {
                Precision::F32 => {
                    sparsity_run::<f32>(&cfg, &checkpoint, &split, episodes, steps, pgm_dir, output, format)
                }
                Precision::F64 => {
                    sparsity_run::<f64>(&cfg, &checkpoint, &split, episodes, steps, pgm_dir, output, format)
                }
            }
        }
        ProbeKind::Freeze {
            config,
            lwau_checkpoint,
            maml_checkpoint,
            split,
            episodes,
            steps,
            timing_reps,
            output,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            match cfg.precision {
                Precision::F32 => freeze_run::<f32>(
                    &cfg,
                    &lwau_checkpoint,
                    &maml_checkpoint,
                    &split,
                    episodes,
                    steps,
                    timing_reps,
                    output,
                    format,
                ),
                Precision::F64 => freeze_run::<f64>(
                    &cfg,
                    &lwau_checkpoint,
                    &maml_checkpoint,
                    &split,
                    episodes,
                    steps,
                    timing_reps,
                    output,
                    format,
                ),
            }
        }
    }
}

fn probe_task(cfg: &RunConfig) -> probes::ProbeTask {
    probes::ProbeTask {
        ways: cfg.raw.train.ways,
        shots: cfg.raw.train.shots,
        queries: cfg.raw.train.queries,
    }
}

#[allow(clippy::too_many_arguments)]
fn proportions_run<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: &str,
    episodes: usize,
    steps: Option<usize>,
    include_baseline: bool,
    baseline_iterations: u64,
    output: Option<PathBuf>,
    format: Option<String>,
) -> CliResult {
    let split = parse_split(split)?;
    let state = load_checked_state::<T>(checkpoint, cfg)?;
    let spec = cfg.network_spec().map_err(usage)?;
    let params = cfg.train_params().map_err(usage)?;
    let steps = steps.unwrap_or(params.inner_steps_test);
    let (train_pool, val_pool, test_pool) = cfg.build_pools::<T>().map_err(usage)?;
    let pool = match split {
        Split::Validation => &val_pool,
        _ => &test_pool,
    };

    let report = mean_update_proportions(
        &spec,
        &state.weights,
        &state.alpha,
        pool,
        probe_task(cfg),
        episodes,
        steps,
        state.seed,
        params.mode_label(),
    )
    .map_err(runtime)?;
    print_proportions(&report);

    let format = parse_format(format.as_deref(), cfg)?;
    let out_path = output.unwrap_or_else(|| checkpoint.with_file_name("proportions.csv"));
    export_report(&report, &cfg.fingerprint(), &out_path, format).map_err(runtime)?;

    if include_baseline {
        eprintln!("training conventional baseline for {baseline_iterations} iterations");
        let base = train_conventional_baseline::<T>(
            &spec,
            &train_pool,
            cfg.raw.seed,
            &BaselineParams {
                iterations: baseline_iterations,
                ..BaselineParams::default()
            },
        )
        .map_err(runtime)?;
        let head = adapt_baseline_head(&base, &spec, cfg.raw.seed);
        let alpha = vec![T::from_f64(params.alpha_init); spec.layer_count()];
        let base_report = mean_update_proportions(
            &spec,
            &head,
            &alpha,
            pool,
            probe_task(cfg),
            episodes,
            steps,
            state.seed,
            "conventional",
        )
        .map_err(runtime)?;
        print_proportions(&base_report);
        let base_path = out_path.with_file_name("proportions_conventional.csv");
        export_report(&base_report, &cfg.fingerprint(), &base_path, format).map_err(runtime)?;
    }
    Ok(())
}

fn print_proportions(report: &probes::ProportionReport) {
    let parts = report
        .p
        .iter()
        .enumerate()
        .map(|(i, p)| format!("layer{} {:.4}", i + 1, p))
        .collect::<Vec<_>>()
        .join(" | ");
    println!("{} update proportions over {} episodes: {parts}", report.mode, report.episodes);
}

#[allow(clippy::too_many_arguments)]
fn sparsity_run<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: &str,
    episodes: usize,
    steps: Option<usize>,
    pgm_dir: Option<PathBuf>,
    output: Option<PathBuf>,
    format: Option<String>,
) -> CliResult {
    let split = parse_split(split)?;
    let state = load_checked_state::<T>(checkpoint, cfg)?;
    let spec = cfg.network_spec().map_err(usage)?;
    let params = cfg.train_params().map_err(usage)?;
    let steps = steps.unwrap_or(params.inner_steps_test);
    let (_, val_pool, test_pool) = cfg.build_pools::<T>().map_err(usage)?;
    let pool = match split {
        Split::Validation => &val_pool,
        _ => &test_pool,
    };

    let reprs = probes::representation_probe(
        &spec,
        &state.weights,
        &state.alpha,
        pool,
        probe_task(cfg),
        episodes,
        steps,
        state.seed,
    )
    .map_err(runtime)?;
    let report = probes::activation_percentage(&reprs).map_err(runtime)?;
    println!(
        "{} activation percentage: {:.4} over {} representations of length {} (map {}x{})",
        params.mode_label(),
        report.mean,
        report.per_image.len(),
        report.repr_len,
        report.rows,
        report.cols
    );

    let format = parse_format(format.as_deref(), cfg)?;
    let out_path = output.unwrap_or_else(|| checkpoint.with_file_name("sparsity.csv"));
    export_report(&report, &cfg.fingerprint(), &out_path, format).map_err(runtime)?;

    if let Some(dir) = pgm_dir {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
        let len = report.repr_len;
        let mut mean_map = vec![0.0f64; len];
        for row in reprs.data().chunks_exact(len) {
            for (acc, &v) in mean_map.iter_mut().zip(row) {
                *acc += v.as_f64() / report.per_image.len() as f64;
            }
        }
        write_pgm(&dir.join("mean.pgm"), report.rows, report.cols, &mean_map)
            .map_err(runtime)?;
        for (i, row) in reprs.data().chunks_exact(len).take(3).enumerate() {
            let values: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            write_pgm(
                &dir.join(format!("image_{i}.pgm")),
                report.rows,
                report.cols,
                &values,
            )
            .map_err(runtime)?;
        }
        println!("representation maps under {}", dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn freeze_run<T: Scalar>(
    cfg: &RunConfig,
    lwau_checkpoint: &Path,
    maml_checkpoint: &Path,
    split: &str,
    episodes: usize,
    steps: Option<usize>,
    timing_reps: usize,
    output: Option<PathBuf>,
    format: Option<String>,
) -> CliResult {
    let split = parse_split(split)?;
    let lwau_state = load_checked_state::<T>(lwau_checkpoint, cfg)?;
    // The fixed-rate twin differs from the config only in mode fields.
    let mut maml_cfg = cfg.clone();
    maml_cfg.raw.train.mode = "maml".to_string();
    maml_cfg.raw.train.alpha_trainable = false;
    let maml_cfg = RunConfig::from_raw(maml_cfg.raw).map_err(usage)?;
    let maml_state = load_checked_state::<T>(maml_checkpoint, &maml_cfg)?;

    let spec = cfg.network_spec().map_err(usage)?;
    let params = cfg.train_params().map_err(usage)?;
    let steps = steps.unwrap_or(params.inner_steps_test);
    let (_, val_pool, test_pool) = cfg.build_pools::<T>().map_err(usage)?;
    let pool = match split {
        Split::Validation => &val_pool,
        _ => &test_pool,
    };

    let report = freeze_sweep(
        &spec,
        &[
            probes::SweepSubject {
                label: "LWAU",
                weights: &lwau_state.weights,
                alpha: &lwau_state.alpha,
            },
            probes::SweepSubject {
                label: "MAML",
                weights: &maml_state.weights,
                alpha: &maml_state.alpha,
            },
        ],
        pool,
        probe_task(cfg),
        episodes,
        steps,
        lwau_state.seed,
        timing_reps,
    )
    .map_err(runtime)?;

    for row in &report.rows {
        println!(
            "{:<6} freeze {}: {:.4} ± {:.4} | adaptation {:.3} ms",
            row.mode,
            row.frozen_below,
            row.accuracy,
            row.half_width,
            row.mean_adapt_seconds * 1e3
        );
    }
    let format = parse_format(format.as_deref(), cfg)?;
    let out_path = output.unwrap_or_else(|| lwau_checkpoint.with_file_name("freeze_sweep.csv"));
    export_report(&report, &cfg.fingerprint(), &out_path, format).map_err(runtime)?;
    Ok(())
}

// ---- gendata ---------------------------------------------------------------

fn cmd_gendata(args: GendataArgs) -> CliResult {
    let split = Split::parse(&args.split)
        .ok_or_else(|| usage(anyhow!("unknown split {:?}", args.split)))?;
    let dtype = DType::parse(&args.precision)
        .ok_or_else(|| usage(anyhow!("precision must be f32 or f64")))?;
    if let (Some(shots), Some(queries)) = (args.shots, args.queries) {
        if args.per_class < shots + queries {
            eprintln!(
                "warning: per_class {} cannot host {}-shot episodes with {} queries \
                 (needs {} instances per class)",
                args.per_class,
                shots,
                queries,
                shots + queries
            );
        }
    }
    match dtype {
        DType::F32 => gendata_run::<f32>(&args, split),
        DType::F64 => gendata_run::<f64>(&args, split),
    }
}

fn gendata_run<T: Scalar>(args: &GendataArgs, split: Split) -> CliResult {
    let pool: data::ClassPool<T> = match args.kind.as_str() {
        "blobs" => {
            let dim = args
                .dim
                .ok_or_else(|| usage(anyhow!("blobs need --dim")))?;
            let params = data::BlobParams {
                classes: args.classes,
                per_class: args.per_class,
                dim,
                separation: args.separation,
            };
            let mut stream =
                lwau::rng::stream(args.seed, &format!("blob-pool-{}", split.name()), 0);
            data::generate_blob_pool(&params, split, &mut stream)
        }
        "glyphs" => {
            let size = args
                .size
                .ok_or_else(|| usage(anyhow!("glyphs need --size")))?;
            if size < 20 || size % 4 != 0 {
                return Err(usage(anyhow!(
                    "glyph size must be a multiple of 4 and at least 20"
                )));
            }
            let params = data::GlyphParams {
                classes: args.classes,
                per_class: args.per_class,
                size,
                jitter: data::GlyphJitter::standard(size),
            };
            let mut stream =
                lwau::rng::stream(args.seed, &format!("glyph-pool-{}", split.name()), 0);
            data::generate_glyph_pool(&params, split, &mut stream)
        }
        other => return Err(usage(anyhow!("unknown pool kind {other:?} (blobs or glyphs)"))),
    };
    poolfile::save_pool(&pool, &args.out).map_err(runtime)?;
    println!(
        "wrote {} pool: {} classes x {} instances ({}, split {}) to {}",
        args.kind,
        pool.class_count(),
        args.per_class,
        args.precision,
        split.name(),
        args.out.display()
    );
    Ok(())
}
