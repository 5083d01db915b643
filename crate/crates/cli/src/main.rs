use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsft::harness::{run_sweep, run_transform, ExperimentConfig, OracleBinding, RunOptions, SweepSpec};
use qsft::plan::{PlanRecord, Regime, SamplingPlan};
use qsft::synth::ValueModel;
use qsft::{Error, SparseSpectrum};

const EXIT_NOT_CONVERGED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(name = "qsft", version, about = "Sparse Fourier transforms of functions on Z_q^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one function and write its sparse spectrum.
    Run(RunArgs),
    /// Run a grid of synthetic experiments and write CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with the same fields as the flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    q: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    /// log_q of the number of bins per group.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    c_groups: Option<usize>,
    /// Random offsets (robust-nl) or modulated blocks (robust-sl).
    #[arg(long)]
    p1: Option<usize>,
    /// Degree bound t for coded offsets.
    #[arg(long)]
    degree_bound: Option<usize>,
    /// noiseless, robust-nl, robust-sl or coded.
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, conflicts_with = "sigma2")]
    snr_db: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    sparsity: Option<usize>,
    /// Bins per coefficient used to pick b when it is not given.
    #[arg(long)]
    eta: Option<f64>,
    /// Synthetic values: const:RHO:KAPPA or general:MIN:MAX.
    #[arg(long, value_parser = parse_values)]
    values: Option<ValueModel>,
    #[arg(long)]
    seed: Option<u64>,
    /// synthetic, table:PATH or cmd:TEMPLATE.
    #[arg(long, default_value = "synthetic")]
    oracle: OracleBinding,
    /// Write the sampling plan as JSON and stop without querying.
    #[arg(long)]
    emit_plan: bool,
    /// Use a plan written earlier by --emit-plan.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this many synthetic trials (seeds seed, seed+1, ...) and write CSV.
    #[arg(long)]
    trials: Option<usize>,
    /// Draw fresh noise on every query instead of once per index.
    #[arg(long)]
    no_cache: bool,
    /// Reference spectrum for NMSE with external oracles.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the peeling event log as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Write the run report here instead of stderr.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Row CSV; the summary goes next to it. Overrides the sweep file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    /// Run trials one at a time (for timing studies).
    #[arg(long)]
    serial: bool,
}

fn parse_values(s: &str) -> Result<ValueModel, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("{t}: {e}"));
    match parts.as_slice() {
        ["const", rho, kappa] => Ok(ValueModel::Assumption2 {
            rho: num(rho)?,
            kappa: kappa.parse().map_err(|e| format!("{kappa}: {e}"))?,
        }),
        ["general", lo, hi] => Ok(ValueModel::General { rho_min: num(lo)?, rho_max: num(hi)? }),
        _ => Err("expected const:RHO:KAPPA or general:MIN:MAX".into()),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Oracle { .. } => EXIT_ORACLE,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("qsft: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let file = File::open(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn config_from(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { cfg.$field = v; } )* };
    }
    set!(q, n, c_groups, degree_bound, regime, gamma, sparsity, eta, values, seed);
    if args.b.is_some() {
        cfg.b = args.b;
    }
    if args.p1.is_some() {
        cfg.p1 = args.p1;
    }
    if args.snr_db.is_some() {
        cfg.snr_db = args.snr_db;
        cfg.sigma2 = None;
    }
    if args.sigma2.is_some() {
        cfg.sigma2 = args.sigma2;
        cfg.snr_db = None;
    }
    if args.no_cache {
        cfg.caching = false;
    }
    Ok(cfg)
}

/// Opens the destination, or stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<u8, Error> {
    let mut cfg = config_from(&args)?;
    let plan = match &args.plan {
        Some(path) => {
            let plan = SamplingPlan::from_record(&read_json::<PlanRecord>(path)?)?;
            // the plan fixes the domain and the regime
            cfg.q = plan.q();
            cfg.n = plan.n();
            cfg.regime = plan.regime();
            cfg.b = Some(plan.b());
            cfg.c_groups = plan.groups().len();
            Some(plan)
        }
        None => None,
    };
    cfg.validate()?;

    if args.emit_plan {
        let plan = match plan {
            Some(p) => p,
            None => SamplingPlan::generate(&cfg.plan_config())?,
        };
        let mut out = sink(args.out.as_deref())?;
        serde_json::to_writer_pretty(&mut out, &plan.to_record())?;
        writeln!(out)?;
        out.flush()?;
        return Ok(0);
    }

    if let Some(trials) = args.trials {
        return run_trials(cfg, &args, trials);
    }

    let truth = match &args.truth {
        Some(path) => Some(SparseSpectrum::read_from(BufReader::new(File::open(path)?))?),
        None => None,
    };
    let options = RunOptions { plan, truth, record_events: args.events.is_some() };
    let output = run_transform(&cfg, &args.oracle, options)?;

    for w in &output.report.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = sink(args.out.as_deref())?;
    output.result.spectrum.write_to(&mut out)?;
    out.flush()?;
    if let Some(path) = &args.events {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &output.result.events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let report = serde_json::to_string_pretty(&output.report)?;
    match &args.report {
        Some(path) => fs::write(path, report + "\n")?,
        None => eprintln!("{report}"),
    }
    Ok(if output.report.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn run_trials(cfg: ExperimentConfig, args: &RunArgs, trials: usize) -> Result<u8, Error> {
    if args.oracle != OracleBinding::Synthetic {
        return Err(Error::Usage("--trials needs the synthetic oracle".into()));
    }
    let Some(out) = args.out.clone() else {
        return Err(Error::Usage("--trials needs --out for the CSV rows".into()));
    };
    let spec = SweepSpec {
        seed_base: cfg.seed,
        cells: vec![cfg],
        trials,
        output: Some(out),
        success_nmse: qsft::harness::DEFAULT_SUCCESS_NMSE,
        parallel: true,
    };
    let outcome = run_sweep(&spec)?;
    print_summary(&outcome.summary)?;
    Ok(if outcome.rows.iter().all(|r| r.converged) { 0 } else { EXIT_NOT_CONVERGED })
}

fn print_summary(rows: &[qsft::harness::SummaryRow]) -> Result<(), Error> {
    let stdout = io::stdout();
    qsft::harness::write_summary(rows, stdout.lock())
}

fn sweep(args: SweepArgs) -> Result<u8, Error> {
    let mut spec: SweepSpec = read_json(&args.spec)?;
    if args.out.is_some() {
        spec.output = args.out;
    }
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed_base {
        spec.seed_base = s;
    }
    if args.serial {
        spec.parallel = false;
    }
    if spec.output.is_none() {
        return Err(Error::Usage("sweep needs an output path (--out or \"output\" in the sweep file)".into()));
    }
    let outcome = run_sweep(&spec)?;
    print_summary(&outcome.summary)?;
    Ok(0)
}
