use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clap::error::ErrorKind;
use serde::Serialize;

use offload_core::channel::{is_stable, SystemParams};
use offload_core::metrics::Provenance;
use offload_core::sim::{self, Horizon, Interval, SimConfig, SimEstimate};
use offload_core::sweep::{self, Scenario, ScenarioFile, SweepRow};
use offload_core::{analyze, Error, PerfReport, SolverOptions};

const EXIT_FAILURE: u8 = 1;
const EXIT_UNSTABLE: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// Delayed Wi-Fi offloading: queueing analysis and simulation.
///
/// Scenario values are resolved in order: the preset (pedestrian by
/// default), then the `--config` file, then individual flags.
#[derive(Parser)]
#[command(name = "offload", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse one parameter point and print every metric.
    Analyze(AnalyzeArgs),
    /// Evaluate a deadline grid and write one CSV row per point and method.
    Sweep(SweepArgs),
    /// Put analytic values next to simulation confidence intervals.
    Compare(CompareArgs),
    /// Run the discrete-event simulator directly.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Preset name(s): pedestrian, vehicular. Sweeps accept a comma list.
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<String>,
    /// TOML file with any of: name, f_C, f_F, mu1, mu2, lambda, tau_grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rate of leaving cellular-only coverage, i.e. of reaching a hotspot (1/s).
    #[arg(long = "f-c")]
    f_c: Option<f64>,
    /// Rate of leaving Wi-Fi coverage (1/s).
    #[arg(long = "f-f")]
    f_f: Option<f64>,
    /// Cellular service rate (files/s).
    #[arg(long)]
    mu1: Option<f64>,
    /// Wi-Fi service rate (files/s).
    #[arg(long)]
    mu2: Option<f64>,
    /// File arrival rate (files/s).
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    /// Base seed; every replication derives its own streams from it.
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// File count (e.g. 100000) or simulated seconds with an `s` suffix
    /// (e.g. 5e5s). The warmup is part of the horizon.
    #[arg(long, default_value = "100000")]
    horizon: String,
    /// Independent replications; intervals are taken over their means.
    #[arg(long, default_value_t = 10)]
    replications: usize,
    /// Leading fraction of each replication that is discarded.
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Mean deadline (s).
    #[arg(long)]
    tau: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Write a one-row CSV in the sweep format.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the stationary distribution (n, p0, p1, p2) to this CSV file.
    #[arg(long)]
    dump_distribution: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma list or `logspace:LO:HI:N`.
    #[arg(long)]
    tau_grid: Option<String>,
    /// Add a simulation row (with interval columns) per point.
    #[arg(long)]
    simulate: bool,
    #[command(flatten)]
    sim: SimArgs,
    /// Output CSV file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print rows as JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    json: bool,
    /// Write a one-row CSV in the sweep format.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write an event trace (t, event, n_after, j_after) to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Simulated seconds covered by `--trace`.
    #[arg(long, default_value_t = 10_000.0)]
    trace_duration: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let outcome = match cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Compare(args) => run_compare(args),
        Command::Simulate(args) => run_simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Instability { .. } => EXIT_UNSTABLE,
        Error::Convergence { .. } => EXIT_NO_CONVERGENCE,
        Error::InvalidParameter { .. } | Error::Config(_) => EXIT_USAGE,
        Error::Domain(_) | Error::SingularSystem(_) => EXIT_FAILURE,
    }
}

impl ScenarioArgs {
    fn resolve_all(&self) -> Result<Vec<Scenario>, Error> {
        let names = if self.scenario.is_empty() {
            vec!["pedestrian".to_owned()]
        } else {
            self.scenario.clone()
        };
        let file = match &self.config {
            Some(path) => ScenarioFile::load(path)?,
            None => ScenarioFile::default(),
        };
        let flags = ScenarioFile {
            f_c: self.f_c,
            f_f: self.f_f,
            mu1: self.mu1,
            mu2: self.mu2,
            lambda: self.lambda,
            ..ScenarioFile::default()
        };
        names
            .iter()
            .map(|n| Scenario::preset(n)?.overridden(&file)?.overridden(&flags))
            .collect()
    }

    fn resolve_one(&self) -> Result<Scenario, Error> {
        if self.scenario.len() > 1 {
            return Err(Error::InvalidParameter {
                name: "scenario",
                reason: "this command takes a single scenario".into(),
            });
        }
        Ok(self.resolve_all()?.remove(0))
    }

    fn params(&self, tau: f64) -> Result<(Scenario, SystemParams), Error> {
        let scenario = self.resolve_one()?;
        let params = scenario.params(tau)?;
        Ok((scenario, params))
    }
}

impl SimArgs {
    fn horizon(&self) -> Result<Horizon, Error> {
        let bad = || Error::Config(format!("cannot read horizon `{}`", self.horizon));
        let text = self.horizon.trim();
        if let Some(secs) = text.strip_suffix('s') {
            secs.parse().map(Horizon::Time).map_err(|_| bad())
        } else {
            let files: f64 = text.parse().map_err(|_| bad())?;
            if files.fract() != 0.0 || files < 1.0 {
                return Err(bad());
            }
            Ok(Horizon::Files(files as u64))
        }
    }

    fn config(&self, params: SystemParams) -> Result<SimConfig, Error> {
        let config = SimConfig {
            horizon: self.horizon()?,
            warmup_fraction: self.warmup,
            replications: self.replications,
            seed: self.seed,
            ..SimConfig::new(params)
        };
        config.validate()?;
        Ok(config)
    }
}

/// Rounds to four significant figures for display.
fn sig4(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.3e}").parse().unwrap_or(x);
    let exp = rounded.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        format!("{rounded:.3e}")
    } else {
        format!("{rounded:.*}", (3 - exp).max(0) as usize)
    }
}

fn provenance_label(report: &PerfReport, field: &str) -> &'static str {
    let group = match field {
        "f_c" | "f_f" | "tau" | "lambda" | "mu1" | "mu2" => return "input",
        "R" | "f" | "rho" | "stable" => return "closed_form",
        "mean_queue_length" | "truncation_level" | "tail_mass" => return "ctmc",
        "pi0" | "pi1" | "pi2" => "pi",
        "theta1" | "theta2" => "theta",
        "ET0" | "ET1" | "ET2" => "ET_j",
        "p00" | "p01" | "p02" => "p0",
        f if f.starts_with("pi_hat") => "pi_hat",
        f => f,
    };
    match report.provenance.get(group) {
        Some(Provenance::ClosedForm) => "closed_form",
        Some(Provenance::Ctmc) => "ctmc",
        Some(Provenance::Recursion) => "recursion",
        Some(Provenance::Simulation) => "simulation",
        None => "",
    }
}

fn print_report(report: &PerfReport) -> Result<(), Error> {
    let value = serde_json::to_value(report).map_err(|e| Error::Domain(e.to_string()))?;
    let fields = value.as_object().expect("report serializes to an object");
    println!("{:<18} {:>12}  provenance", "quantity", "value");
    for (name, v) in fields {
        let shown = match v {
            serde_json::Value::Number(n) if n.is_u64() => n.to_string(),
            serde_json::Value::Number(n) => sig4(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::Bool(b) => b.to_string(),
            serde_json::Value::Null => "undefined".to_owned(),
            _ => continue,
        };
        println!("{name:<18} {shown:>12}  {}", provenance_label(report, name));
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Domain(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Domain(format!("{}: {e}", path.display())))
}

/// Explains an instability in terms of the mean service rate and, for long
/// deadlines, the Wi-Fi-only capacity `R * mu2`.
fn diagnose(params: &SystemParams) -> Option<Error> {
    let s = is_stable(params);
    if s.stable {
        return None;
    }
    let wifi_capacity = params.channel.wifi_ratio() * params.mu2();
    eprintln!(
        "unstable: lambda = {} >= mu_hat = {} (rho = {}); Wi-Fi-only capacity R*mu2 = {}",
        sig4(params.lambda()),
        sig4(s.mu_hat),
        sig4(s.rho),
        sig4(wifi_capacity),
    );
    Some(Error::Instability {
        lambda: params.lambda(),
        mu_hat: s.mu_hat,
        rho: s.rho,
    })
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let (scenario, params) = args.scenario.params(args.tau)?;
    if let Some(e) = diagnose(&params) {
        return Err(e);
    }
    let analysis = analyze(&params, &SolverOptions::default())?;
    if args.json {
        print_json(&analysis.report)?;
    } else {
        print_report(&analysis.report)?;
    }
    if let Some(path) = &args.out {
        let row = SweepRow::analytic(&scenario.name, &params, &analysis.report);
        sweep::write_csv(&[row], create(path)?)?;
    }
    if let Some(path) = &args.dump_distribution {
        analysis.solution.write_csv(create(path)?)?;
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), Error> {
    let mut scenarios = args.scenario.resolve_all()?;
    if let Some(spec) = &args.tau_grid {
        let grid = sweep::parse_tau_grid(spec)?;
        for s in &mut scenarios {
            s.tau_grid = grid.clone();
        }
    }
    let template = if args.simulate {
        Some(args.sim.config(scenarios[0].params(1.0)?)?)
    } else {
        None
    };
    let rows = sweep::run_sweep(&scenarios, template.as_ref(), &SolverOptions::default())?;
    for row in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {} tau={} ({:?}): {}",
            row.scenario,
            row.tau,
            row.method,
            row.error.as_deref().unwrap_or_default()
        );
    }
    match (&args.out, args.json) {
        (_, true) => print_json(&rows),
        (Some(path), false) => sweep::write_csv(&rows, create(path)?),
        (None, false) => sweep::write_csv(&rows, io::stdout().lock()),
    }
}

fn run_compare(args: CompareArgs) -> Result<(), Error> {
    let (_, params) = args.scenario.params(args.tau)?;
    if let Some(e) = diagnose(&params) {
        return Err(e);
    }
    let comparison = sweep::compare(&args.sim.config(params)?, &SolverOptions::default())?;
    if args.json {
        return print_json(&comparison.rows);
    }
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12}  agreement",
        "quantity", "analytic", "simulation", "ci_low", "ci_high"
    );
    for row in &comparison.rows {
        let s = row.simulation;
        println!(
            "{:<8} {:>12} {:>12} {:>12} {:>12}  {}",
            row.quantity,
            sig4(row.analytic),
            sig4(s.point),
            sig4(s.low),
            sig4(s.high),
            if row.agrees { "ok" } else { "OUTSIDE CI" }
        );
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    let (scenario, params) = args.scenario.params(args.tau)?;
    let config = args.sim.config(params)?;
    if !is_stable(&params).stable {
        eprintln!("warning: lambda exceeds the mean service rate; estimates describe a transient");
    }
    let estimate = sim::run(&config)?;
    if estimate.growth_detected {
        eprintln!("warning: queue length trends upward; the system looks unstable");
    }
    let row = SweepRow::simulated(&scenario.name, &params, &estimate);
    if args.json {
        print_json(&row)?;
    } else {
        print_estimate(&estimate);
    }
    if let Some(path) = &args.out {
        sweep::write_csv(&[row], create(path)?)?;
    }
    if let Some(path) = &args.trace {
        let log = sim::state_machine_trace(&config, args.trace_duration)?;
        sim::write_trace_csv(&log, create(path)?)?;
    }
    Ok(())
}

fn print_estimate(est: &SimEstimate) {
    let line = |name: &str, i: &Interval| {
        println!(
            "{name:<14} {:>12} {:>12} {:>12}",
            sig4(i.point),
            sig4(i.low),
            sig4(i.high)
        );
    };
    println!("{:<14} {:>12} {:>12} {:>12}", "quantity", "estimate", "ci_low", "ci_high");
    line("D", &est.mean_delay);
    line("W", &est.mean_wait);
    line("eta", &est.efficiency);
    line("L", &est.mean_in_system);
    for j in 0..3 {
        line(&format!("pi{j}"), &est.state_fraction[j]);
    }
    for j in 0..3 {
        line(&format!("p0{j}"), &est.empty_fraction[j]);
    }
    println!(
        "files {} (via Wi-Fi {}), arrivals {}, replications {}",
        est.files_completed, est.files_via_wifi, est.arrivals, est.replications
    );
    let _ = io::stdout().flush();
}
