//! Command-line front end: `simulate`, `sweep`, `scenarios` and `validate`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::output::{max_position_gap, sample, state_digest, write_csv};
use crate::integrate::{advance, Run, RunOptions, RunStats};
use crate::model::{assemble_model, ErrorNormKind, IntegratorConfig, LinesearchInit, Model, Scheme};
use crate::scenarios::{load_scenario, BUILTIN_NAMES};

#[derive(Debug, Parser)]
#[command(name = "ecsim", version, about = "Error-controlled rigid-body contact simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its trajectory.
    Simulate(SimulateArgs),
    /// Run a scheme × accuracy work-precision grid.
    Sweep(SweepArgs),
    /// List builtin scenarios, or print one as JSON.
    Scenarios {
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Cenic1,
    Cenic2,
    Ie,
    Rk3,
    Fixed,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Cenic1 => Scheme::Cenic1,
            SchemeArg::Cenic2 => Scheme::Cenic2,
            SchemeArg::Ie => Scheme::Ie,
            SchemeArg::Rk3 => Scheme::Rk3,
            SchemeArg::Fixed => Scheme::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ErrorNormArg {
    Position,
    FullState,
}

/// Integrator overrides shared by `simulate` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub max_step: Option<f64>,
    #[arg(long)]
    pub fixed_step: Option<f64>,
    #[arg(long, value_enum)]
    pub error_norm: Option<ErrorNormArg>,
    /// Disable Hessian reuse across Newton iterations and steps.
    #[arg(long)]
    pub no_hessian_reuse: bool,
    /// Start each linesearch at this step instead of the cubic fit.
    #[arg(long, value_name = "ALPHA")]
    pub linesearch_alpha0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Builtin scenario name or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long)]
    pub accuracy: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Output rate in Hz; accepted steps are written when absent.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-attempt step log as CSV.
    #[arg(long)]
    pub steps_out: Option<PathBuf>,
    /// Wall-time budget as a multiple of the simulated duration.
    #[arg(long, default_value_t = 100.0)]
    pub timeout_factor: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cenic1")]
    pub schemes: Vec<SchemeArg>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub accuracies: Vec<f64>,
    /// Accuracy of the cenic1 reference run; the tightest listed accuracy by default.
    #[arg(long)]
    pub reference_accuracy: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rate at which cells are compared with the reference, Hz.
    #[arg(long, default_value_t = 100.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    #[arg(long, default_value_t = 100.0)]
    pub timeout_factor: f64,
    /// Result CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Wall times per cell, kept apart so the result CSV is reproducible.
    #[arg(long)]
    pub timing_out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Machine-readable run summary.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub scheme: String,
    pub accuracy: f64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub duration: f64,
    pub nq: usize,
    pub nv: usize,
    #[serde(flatten)]
    pub stats: RunStats,
    pub final_state_digest: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            report_error("usage", e.to_string().trim_end().to_string());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(e.category(), e.to_string());
            e.exit_code()
        }
    }
}

fn report_error(category: &str, message: String) {
    let line = serde_json::to_string(&ErrorReport { error: category, message }).unwrap_or_default();
    eprintln!("{line}");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Scenarios { dump } => scenarios(dump.as_deref()),
        Command::Validate { scenario, seed } => {
            let model = assemble_model(&load_scenario(&scenario, seed)?)?;
            println!(
                "{}",
                serde_json::json!({ "scenario": model.name, "valid": true, "nq": model.nq, "nv": model.nv,
                                    "bodies": model.bodies.len(), "contact_pairs": model.pairs.len() })
            );
            Ok(())
        }
    }
}

fn scenarios(dump: Option<&str>) -> Result<()> {
    match dump {
        Some(name) => {
            let spec = crate::scenarios::builtin_scenario(name, None)?;
            let text = serde_json::to_string_pretty(&spec).map_err(|e| Error::Internal(e.to_string()))?;
            println!("{text}");
        }
        None => BUILTIN_NAMES.iter().for_each(|n| println!("{n}")),
    }
    Ok(())
}

fn positive(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::validation(field, "must be positive")),
        _ => Ok(()),
    }
}

/// Scenario integrator settings with command-line overrides applied.
fn configure(model: &Model, scheme: Option<Scheme>, accuracy: Option<f64>, tuning: &TuningArgs) -> Result<IntegratorConfig> {
    positive("accuracy", accuracy)?;
    positive("max_step", tuning.max_step)?;
    positive("fixed_step", tuning.fixed_step)?;
    positive("linesearch_alpha0", tuning.linesearch_alpha0)?;
    let mut cfg = model.integrator.clone();
    if let Some(s) = scheme {
        cfg.scheme = s;
    }
    if let Some(a) = accuracy {
        cfg.accuracy = a;
    }
    if let Some(h) = tuning.max_step {
        cfg.max_step = h;
    }
    if tuning.fixed_step.is_some() {
        cfg.fixed_step = tuning.fixed_step;
    }
    if let Some(n) = tuning.error_norm {
        cfg.error_norm = match n {
            ErrorNormArg::Position => ErrorNormKind::Position,
            ErrorNormArg::FullState => ErrorNormKind::FullState,
        };
    }
    if tuning.no_hessian_reuse {
        cfg.hessian_reuse = false;
    }
    if let Some(a) = tuning.linesearch_alpha0 {
        cfg.linesearch_init = LinesearchInit::Fixed(a);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn budget(duration: f64, factor: f64) -> Result<RunOptions> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::validation("timeout_factor", "must be positive"));
    }
    Ok(RunOptions {
        wall_time_limit: Some(Duration::from_secs_f64(factor * duration)),
        record_trajectory: true,
        ..RunOptions::default()
    })
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_steps(path: &PathBuf, run: &Run) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,dt,error,accepted,newton_iterations,factorizations,linesearch_iterations,geometry_queries")?;
    for r in &run.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t, r.dt, r.error, r.accepted, r.newton_iterations, r.factorizations, r.linesearch_iterations, r.geometry_queries
        )?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    positive("duration", args.duration)?;
    positive("sample_rate", args.sample_rate)?;
    let spec = load_scenario(&args.scenario, args.seed)?;
    let model = assemble_model(&spec)?;
    let cfg = configure(&model, args.scheme.map(Into::into), args.accuracy, &args.tuning)?;
    let duration = args.duration.unwrap_or(model.duration);
    let options = budget(duration, args.timeout_factor)?;

    let (run, failure) = match advance(&model, &cfg, duration, &options) {
        Ok(run) => (run, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let points = match args.sample_rate {
        Some(rate) => sample(&model, &run.trajectory, rate),
        None => run.trajectory.clone(),
    };
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_csv(&model, &points, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write_csv(&model, &points, &mut w)?;
            w.flush()?;
        }
    }
    if let Some(path) = &args.steps_out {
        write_steps(path, &run)?;
    }
    let report = RunReport {
        scenario: model.name.clone(),
        scheme: cfg.scheme.as_str().into(),
        accuracy: cfg.accuracy,
        status: failure.as_ref().map_or("ok", |e| e.category()).into(),
        message: failure.as_ref().map(|e| e.to_string()),
        duration,
        nq: model.nq,
        nv: model.nv,
        final_state_digest: state_digest(run.final_state.t, &run.final_state.q, &run.final_state.v),
        stats: run.stats,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
    match &args.report {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None if args.out.is_some() => println!("{text}"),
        None => {}
    }
    failure.map_or(Ok(()), Err)
}

/// One finished sweep cell.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub accuracy: f64,
    pub status: String,
    pub stats: Option<RunStats>,
    pub error_vs_reference: Option<f64>,
    pub digest: Option<String>,
}

pub const SWEEP_HEADER: &str = "scenario,scheme,accuracy,status,steps_attempted,steps_accepted,steps_rejected,\
newton_iterations,factorizations,linesearch_iterations,geometry_queries,final_time,error_vs_reference,digest";

fn sweep(args: &SweepArgs) -> Result<()> {
    positive("duration", args.duration)?;
    positive("sample_rate", Some(args.sample_rate))?;
    positive("reference_accuracy", args.reference_accuracy)?;
    for &a in &args.accuracies {
        positive("accuracies", Some(a))?;
    }
    if args.jobs == 0 {
        return Err(Error::validation("jobs", "must be at least 1"));
    }
    let spec = load_scenario(&args.scenario, args.seed)?;
    let model = assemble_model(&spec)?;
    let duration = args.duration.unwrap_or(model.duration);
    let options = budget(duration, args.timeout_factor)?;
    let schemes: Vec<Scheme> = args.schemes.iter().map(|&s| s.into()).collect();
    let mut cells = Vec::new();
    for &scheme in &schemes {
        for &accuracy in &args.accuracies {
            cells.push((scheme, configure(&model, Some(scheme), Some(accuracy), &args.tuning)?));
        }
    }
    let tightest = args.accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let reference_cfg = configure(&model, Some(Scheme::Cenic1), Some(args.reference_accuracy.unwrap_or(tightest)), &args.tuning)?;

    // The reference is cell 0 of the work list.
    let mut work = vec![(Scheme::Cenic1, reference_cfg)];
    work.extend(cells);
    let results: Vec<Mutex<Option<(std::result::Result<Run, (Error, Run)>, f64)>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(work.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, cfg)) = work.get(i) else { break };
                let out = advance(&model, cfg, duration, &options).map_err(|f| (f.error, f.partial));
                let wall = match &out {
                    Ok(r) => r.stats.wall_time,
                    Err((_, r)) => r.stats.wall_time,
                };
                *results[i].lock().expect("result slot") = Some((out, wall));
            });
        }
    });
    let mut results: Vec<_> = results.into_iter().map(|m| m.into_inner().expect("result slot").expect("cell ran")).collect();
    let (reference, _) = results.remove(0);
    let reference_samples = reference.as_ref().ok().map(|r| sample(&model, &r.trajectory, args.sample_rate));

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for ((scheme, cfg), (out, wall)) in work.iter().skip(1).zip(results) {
        timing.push((*scheme, cfg.accuracy, wall));
        rows.push(match out {
            Ok(run) => {
                let samples = sample(&model, &run.trajectory, args.sample_rate);
                let err = reference_samples
                    .as_ref()
                    .map(|r| max_position_gap(&samples, r, &model.integrator.error_weights));
                SweepRow {
                    scheme: *scheme,
                    accuracy: cfg.accuracy,
                    status: "ok".into(),
                    digest: Some(state_digest(run.final_state.t, &run.final_state.q, &run.final_state.v)),
                    stats: Some(run.stats),
                    error_vs_reference: err,
                }
            }
            Err((e, _)) => SweepRow {
                scheme: *scheme,
                accuracy: cfg.accuracy,
                status: e.category().into(),
                stats: None,
                error_vs_reference: None,
                digest: None,
            },
        });
    }

    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_sweep_csv(&model.name, &rows, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write_sweep_csv(&model.name, &rows, &mut w)?;
            w.flush()?;
        }
    }
    if let Some(path) = &args.timing_out {
        let mut w = create(path)?;
        writeln!(w, "scheme,accuracy,wall_time")?;
        for (s, a, t) in timing {
            writeln!(w, "{},{a},{t}", s.as_str())?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_sweep_csv(scenario: &str, rows: &[SweepRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        write!(w, "{scenario},{},{},{}", r.scheme.as_str(), r.accuracy, r.status)?;
        match &r.stats {
            Some(s) => write!(
                w,
                ",{},{},{},{},{},{},{},{}",
                s.steps_attempted,
                s.steps_accepted,
                s.steps_rejected,
                s.newton_iterations,
                s.factorizations,
                s.linesearch_iterations,
                s.geometry_queries,
                s.final_time
            )?,
            None => write!(w, ",,,,,,,,")?,
        }
        let err = r.error_vs_reference.map(|e| e.to_string()).unwrap_or_default();
        writeln!(w, ",{err},{}", r.digest.as_deref().unwrap_or(""))?;
    }
    Ok(())
}
