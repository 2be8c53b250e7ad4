//! `segtrack`: track a target by segmentation over superpixel graphs.
//!
//! Subcommands: `track` runs the pipeline over a sequence, `eval` scores
//! predictions, `solve` runs the optimizer on a serialized problem, `synth`
//! generates synthetic sequences, `ablate` compares propagation modes.
//!
//! Exit codes: 0 success, 1 input/format error, 2 numerical error.

mod config;
mod runner;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use segtrack::dataset::{self, SynthSpec};
use segtrack::error::{Error, Result};
use segtrack::eval::{AblationColumn, AblationReport};
use segtrack::graph::PropagationMode;
use segtrack::solver::{self, Fidelity, SolverConfig};

use config::{RunConfig, TrackerFlags};

#[derive(Parser)]
#[command(
    name = "segtrack",
    version,
    about = "Tracking-by-segmentation on spatio-temporal superpixel graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a target through one or more sequences.
    Track(TrackArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Run the solver on a serialized problem file.
    Solve(SolveArgs),
    /// Generate a synthetic sequence with exact ground truth.
    Synth(SynthArgs),
    /// Run mixed / only-smoothing / none over the synthetic suite.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing <sequence>/frames and <sequence>/masks.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Sequence name; repeatable. All sequences under the root when omitted.
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    /// Directory of precomputed Middlebury flows named <frame>.flo
    /// (the file for frame t holds the flow from frame t to t+1).
    #[arg(long)]
    flow_dir: Option<PathBuf>,
    /// Output directory; receives <sequence>/masks and <sequence>/result.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sequences tracked in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Dump per-frame A, A_m, A_h matrices under <out>/<sequence>/graphs.
    #[arg(long)]
    dump_graphs: bool,
    #[command(flatten)]
    flags: TrackerFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions: a track output directory (masks/ plus result.json).
    predictions: PathBuf,
    /// Ground truth: a sequence directory (or a bare mask directory).
    ground_truth: PathBuf,
    /// Report directory; defaults to the predictions directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sequence name recorded in the report.
    #[arg(long, default_value = "sequence")]
    name: String,
}

#[derive(Args)]
struct SolveArgs {
    /// Serialized problem (dimension header, then S, L, f blocks).
    problem: PathBuf,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// y-update fidelity: exact-minimizer | paper-literal.
    #[arg(long)]
    fidelity: Option<Fidelity>,
    /// Propagation mode recorded in the output.
    #[arg(long)]
    mode: Option<PropagationMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    min_error: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root; the sequence lands in <out>/<name>.
    #[arg(long)]
    out: PathBuf,
    /// JSON SynthSpec; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override the sequence name.
    #[arg(long)]
    name: Option<String>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON array of SynthSpec; the built-in three-sequence suite when
    /// omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Sequences tracked in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrackerFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => cmd_track(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_run_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn discover_sequences(root: &PathBuf) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join("frames").is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no sequences under {}",
            root.display()
        )));
    }
    Ok(names)
}

fn cmd_track(args: TrackArgs) -> Result<()> {
    let mut run = load_run_config(args.config.as_ref())?;
    args.flags.apply(&mut run.tracker);
    let root = args
        .root
        .or(run.sequence_root)
        .ok_or_else(|| Error::InvalidInput("no sequence root (--root)".into()))?;
    let out = args
        .out
        .or(run.out_dir)
        .ok_or_else(|| Error::InvalidInput("no output directory (--out)".into()))?;
    let flow_dir = args.flow_dir.or(run.flow_dir);
    let names = if !args.sequences.is_empty() {
        args.sequences
    } else if !run.sequences.is_empty() {
        run.sequences
    } else {
        discover_sequences(&root)?
    };

    // Validate all inputs before creating any output.
    let sequences: Vec<dataset::Sequence> = names
        .iter()
        .map(|name| dataset::load_sequence(&root, name))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&out)?;
    let pool = thread_pool(args.jobs.or(run.jobs))?;
    let tracker_config = run.tracker.clone();
    let results: Vec<Result<String>> = pool.install(|| {
        sequences
            .par_iter()
            .map(|seq| {
                let mut config = tracker_config.clone();
                if args.dump_graphs {
                    config.dump_dir = Some(out.join(&seq.name).join("graphs"));
                }
                let result = runner::track_to_dir(seq, &config, flow_dir.as_deref(), &out)?;
                let lost = result.frames.iter().filter(|f| f.diagnostics.fallback).count();
                Ok(format!(
                    "tracked {}: {} frames, {} lost, mode {}",
                    seq.name,
                    result.frames.len(),
                    lost,
                    config.mode.as_str()
                ))
            })
            .collect()
    });
    for line in results {
        println!("{}", line?);
    }

    // Echo the effective configuration next to the outputs.
    let effective = RunConfig {
        tracker: run.tracker,
        sequence_root: Some(root),
        sequences: names,
        flow_dir,
        out_dir: Some(out.clone()),
        jobs: args.jobs,
    };
    effective.save(&out.join("config.json"))?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let report = runner::evaluate_dirs(&args.predictions, &args.ground_truth, &args.name)?;
    let out = args.out.unwrap_or_else(|| args.predictions.clone());
    report.save(&out)?;
    println!(
        "{}: {} frames | mask IoU {:.4} | box IoU {:.4} | precision@20 {:.4} | AUC seg {:.4} | AUC box {:.4}",
        report.sequence,
        report.num_frames,
        report.mean_mask_iou,
        report.mean_box_iou,
        report.precision_at_20,
        report.auc_mask,
        report.auc_box,
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    y: Vec<f64>,
    loss_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    fidelity: Fidelity,
    mode: PropagationMode,
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let file = std::fs::File::open(&args.problem)?;
    let problem = solver::Problem::read_text(std::io::BufReader::new(file))?;

    let mut config = SolverConfig::default();
    if let Some(v) = args.fidelity {
        config.fidelity = v;
    }
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.min_error {
        config.min_error = v;
    }
    if let Some(v) = args.max_iter {
        config.max_iter = v;
    }

    let state = solver::solve(&problem, &config)?;
    let output = SolveOutput {
        y: state.y.iter().copied().collect(),
        loss_trace: state.loss_trace.clone(),
        iterations: state.iterations(),
        converged: state.converged,
        fidelity: config.fidelity,
        mode: config.mode,
    };
    let json = serde_json::to_string_pretty(&output)?;
    match args.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "{json}")?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => SynthSpec::default(),
    };
    if let Some(name) = args.name {
        spec.name = name;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let seq = dataset::synth_sequence(&spec)?;
    dataset::save_sequence(&args.out, &seq)?;
    let spec_path = args.out.join(&seq.name).join("synth_spec.json");
    let f = std::fs::File::create(&spec_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &spec)?;
    println!(
        "wrote {} frames to {}",
        seq.len(),
        args.out.join(&seq.name).display()
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut run = load_run_config(args.config.as_ref())?;
    args.flags.apply(&mut run.tracker);

    let suite: Vec<SynthSpec> = match &args.spec {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => runner::ablation_suite(),
    };
    let sequences: Vec<dataset::Sequence> = suite
        .iter()
        .map(dataset::synth_sequence)
        .collect::<Result<_>>()?;

    let pool = thread_pool(args.jobs.or(run.jobs))?;
    let mut columns = Vec::new();
    for mode in [
        PropagationMode::Mixed,
        PropagationMode::OnlySmoothing,
        PropagationMode::None,
    ] {
        let config = segtrack::tracker::TrackerConfig {
            mode,
            ..run.tracker.clone()
        };
        let reports: Vec<segtrack::eval::EvalReport> = pool.install(|| {
            sequences
                .par_iter()
                .map(|seq| {
                    let (masks, records) = runner::track_sequence(seq, &config, None)?;
                    runner::evaluate_in_memory(seq, &masks, &records)
                })
                .collect::<Result<_>>()
        })?;
        columns.push(AblationColumn::from_reports(&reports));
    }

    let report = AblationReport {
        mixed: columns[0],
        only_smoothing: columns[1],
        none: columns[2],
    };
    std::fs::create_dir_all(&args.out)?;
    let json = std::fs::File::create(args.out.join("ablation.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(json), &report)?;
    let csv = std::fs::File::create(args.out.join("ablation.csv"))?;
    report.write_csv(std::io::BufWriter::new(csv))?;
    print!("{report}");
    Ok(())
}
