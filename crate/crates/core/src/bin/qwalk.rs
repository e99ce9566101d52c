use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qwalk::io::{self, read_matrix_csv, ColorScale, Heatmap, RecordSink, RESULTS_FILE};
use qwalk::runners::{self, analyze_records};
use qwalk::{Error, Result};

#[derive(Parser)]
#[command(name = "qwalk", version, about = "Quantum-walk simulations on programmable qubit lattices")]
struct Cli {
    /// Worker threads (falls back to QWALK_THREADS, then all cores).
    #[arg(long, global = true, env = "QWALK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run any scenario.
    Run(RunArgs),
    /// Run a parameter sweep or ensemble scenario.
    Sweep(RunArgs),
    /// Run a calibration scenario against a device twin.
    Calibrate(RunArgs),
    /// Refit fronts, velocities and fringe statistics from a run directory.
    Analyze(AnalyzeArgs),
    /// Render a CSV matrix as an SVG heatmap.
    Render(RenderArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Shorthand for `--override seed=N`, applied after all overrides.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `dotted.key=value`; repeatable, the last assignment of a key wins.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory containing results.jsonl.
    #[arg(long)]
    input: PathBuf,
    /// Where to write analysis.jsonl (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sequential")]
    scale: String,
    #[arg(long, default_value = "")]
    title: String,
}

const SWEEP_KINDS: &[&str] = &["mz_sweep", "velocity_study"];
const CALIBRATION_KINDS: &[&str] = &["alignment", "interferometer_opt", "idle_frequencies"];

fn execute(args: &RunArgs, allowed: Option<&[&str]>) -> Result<()> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let summary = runners::run_restricted(&args.scenario, &overrides, &args.out, allowed)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let input = if args.input.is_dir() { args.input.join(RESULTS_FILE) } else { args.input.clone() };
    let records = io::read_records(&input)?;
    let out = analyze_records(&records)?;
    let dir = args.out.clone().unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let mut sink = RecordSink::create(dir.join("analysis.jsonl"))?;
    for r in &out {
        sink.write(r)?;
        println!("{}", serde_json::to_string(r)?);
    }
    sink.flush()
}

fn render(args: &RenderArgs) -> Result<()> {
    let m = read_matrix_csv(&args.input)?;
    let scale: ColorScale = args.scale.parse()?;
    let svg = Heatmap::from_matrix(&m.values, scale).titled(&args.title, "", &m.corner).render()?;
    std::fs::write(&args.out, svg).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run(a) => execute(a, None),
        Command::Sweep(a) => execute(a, Some(SWEEP_KINDS)),
        Command::Calibrate(a) => execute(a, Some(CALIBRATION_KINDS)),
        Command::Analyze(a) => analyze(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
