//! Scenario presets, deadline sweeps and analytic-versus-simulation tables.
//!
//! Sweep output is one CSV row per `(scenario, tau, method)` with a fixed
//! column order, written at full precision so that a parsed file reproduces
//! the computed values exactly.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{is_stable, steady_state, ChannelParams, OffloadPolicy, SystemParams};
use crate::error::{Error, Result};
use crate::metrics::{analyze, PerfReport};
use crate::qbd::SolverOptions;
use crate::sim::{self, Interval, SimConfig, SimEstimate};

/// A named channel with fixed rates and a deadline grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub channel: ChannelParams,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda: f64,
    pub tau_grid: Vec<f64>,
}

pub const PRESET_NAMES: [&str; 2] = ["pedestrian", "vehicular"];

impl Scenario {
    /// Terminals carried by pedestrians: `f_C = 0.007`, `f_F = 0.016`.
    pub fn pedestrian() -> Self {
        Self::preset_with("pedestrian", 0.007, 0.016)
    }

    /// Terminals carried by vehicles: `f_C = 0.035`, `f_F = 0.079`.
    pub fn vehicular() -> Self {
        Self::preset_with("vehicular", 0.035, 0.079)
    }

    fn preset_with(name: &str, f_c: f64, f_f: f64) -> Self {
        Self {
            name: name.to_owned(),
            channel: ChannelParams::new(f_c, f_f).expect("preset rates are valid"),
            mu1: 0.564,
            mu2: 0.564,
            lambda: 0.1,
            tau_grid: logspace(1e-2, 1e5, 29),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "pedestrian" => Ok(Self::pedestrian()),
            "vehicular" => Ok(Self::vehicular()),
            other => Err(Error::InvalidParameter {
                name: "scenario",
                reason: format!("unknown preset `{other}`; expected one of {PRESET_NAMES:?}"),
            }),
        }
    }

    pub fn with_rates(mut self, mu1: f64, mu2: f64) -> Self {
        self.mu1 = mu1;
        self.mu2 = mu2;
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.tau_grid = grid;
        self
    }

    pub fn params(&self, tau: f64) -> Result<SystemParams> {
        SystemParams::new(
            self.channel,
            OffloadPolicy::new(tau)?,
            self.mu1,
            self.mu2,
            self.lambda,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.params(1.0)?;
        validate_grid(&self.tau_grid)
    }

    /// Applies the fields present in `file`, then returns the result.
    pub fn overridden(mut self, file: &ScenarioFile) -> Result<Self> {
        if let Some(name) = &file.name {
            self.name = name.clone();
        }
        let f_c = file.f_c.unwrap_or(self.channel.f_c());
        let f_f = file.f_f.unwrap_or(self.channel.f_f());
        self.channel = ChannelParams::new(f_c, f_f)?;
        self.mu1 = file.mu1.unwrap_or(self.mu1);
        self.mu2 = file.mu2.unwrap_or(self.mu2);
        self.lambda = file.lambda.unwrap_or(self.lambda);
        if let Some(grid) = &file.tau_grid {
            self.tau_grid = grid.values()?;
        }
        self.validate()?;
        Ok(self)
    }
}

/// Flat scenario file (TOML) using the scenario's field names. Every field
/// is optional and overrides the preset it is applied to.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    #[serde(rename = "f_C")]
    pub f_c: Option<f64>,
    #[serde(rename = "f_F")]
    pub f_f: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub lambda: Option<f64>,
    pub tau_grid: Option<GridSpec>,
}

/// A grid written either as a list of values or as a grid string.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Spec(String),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Self::Values(v) => {
                validate_grid(v)?;
                Ok(v.clone())
            }
            Self::Spec(s) => parse_tau_grid(s),
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter {
            name: "config",
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParameter {
            name: "config",
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }
}

/// `n` points from `lo` to `hi` inclusive, evenly spaced in log scale.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    let bad = |reason: String| Error::InvalidParameter {
        name: "tau_grid",
        reason,
    };
    if grid.is_empty() {
        return Err(bad("grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(bad(format!("every tau must be finite and > 0, got {t}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Parses `"1,10,100"` or `"logspace:LO:HI:N"`.
pub fn parse_tau_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::InvalidParameter {
        name: "tau_grid",
        reason,
    };
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("`{s}` is not a number")))
    };
    let grid = if let Some(rest) = spec.trim().strip_prefix("logspace:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(bad(format!("expected logspace:LO:HI:N, got `{spec}`")));
        };
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{n}` is not a point count")))?;
        logspace(number(lo)?, number(hi)?, n)
    } else {
        spec.split(',').map(number).collect::<Result<Vec<_>>>()?
    };
    validate_grid(&grid)?;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Simulation,
}

/// One CSV row. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    #[serde(rename = "f_C")]
    pub f_c: f64,
    #[serde(rename = "f_F")]
    pub f_f: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub f: f64,
    pub pi0: Option<f64>,
    pub pi1: Option<f64>,
    pub pi2: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "ET")]
    pub et: Option<f64>,
    #[serde(rename = "W")]
    pub w: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    #[serde(rename = "D_little")]
    pub d_little: Option<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "D_star")]
    pub d_star: Option<f64>,
    pub method: Method,
    #[serde(rename = "D_ci_low")]
    pub d_ci_low: Option<f64>,
    #[serde(rename = "D_ci_high")]
    pub d_ci_high: Option<f64>,
    pub eta_ci_low: Option<f64>,
    pub eta_ci_high: Option<f64>,
    pub error: Option<String>,
}

pub const CSV_COLUMNS: [&str; 25] = [
    "scenario", "f_C", "f_F", "tau", "lambda", "mu1", "mu2", "R", "f", "pi0", "pi1", "pi2", "beta",
    "ET", "W", "D", "D_little", "eta", "D_star", "method", "D_ci_low", "D_ci_high", "eta_ci_low",
    "eta_ci_high", "error",
];

impl SweepRow {
    fn blank(scenario: &str, params: &SystemParams, method: Method) -> Self {
        Self {
            scenario: scenario.to_owned(),
            f_c: params.channel.f_c(),
            f_f: params.channel.f_f(),
            tau: params.tau(),
            lambda: params.lambda(),
            mu1: params.mu1(),
            mu2: params.mu2(),
            r: params.channel.wifi_ratio(),
            f: params.channel.mobility(),
            pi0: None,
            pi1: None,
            pi2: None,
            beta: None,
            et: None,
            w: None,
            d: None,
            d_little: None,
            eta: None,
            d_star: None,
            method,
            d_ci_low: None,
            d_ci_high: None,
            eta_ci_low: None,
            eta_ci_high: None,
            error: None,
        }
    }

    pub fn analytic(scenario: &str, params: &SystemParams, report: &PerfReport) -> Self {
        Self {
            pi0: Some(report.pi0),
            pi1: Some(report.pi1),
            pi2: Some(report.pi2),
            beta: Some(report.beta),
            et: Some(report.et),
            w: Some(report.w),
            d: Some(report.d),
            d_little: Some(report.d_little),
            eta: Some(report.eta),
            d_star: report.d_star,
            ..Self::blank(scenario, params, Method::Analytic)
        }
    }

    /// Simulation rows carry state fractions for `pi`, the measured wait
    /// and delay, `L/lambda` for `D_little`, and interval columns.
    pub fn simulated(scenario: &str, params: &SystemParams, est: &SimEstimate) -> Self {
        Self {
            pi0: Some(est.state_fraction[0].point),
            pi1: Some(est.state_fraction[1].point),
            pi2: Some(est.state_fraction[2].point),
            w: Some(est.mean_wait.point),
            d: Some(est.mean_delay.point),
            d_little: Some(est.mean_in_system.point / params.lambda()),
            eta: Some(est.efficiency.point),
            d_ci_low: Some(est.mean_delay.low),
            d_ci_high: Some(est.mean_delay.high),
            eta_ci_low: Some(est.efficiency.low),
            eta_ci_high: Some(est.efficiency.high),
            ..Self::blank(scenario, params, Method::Simulation)
        }
    }

    pub fn failed(scenario: &str, params: &SystemParams, method: Method, err: &Error) -> Self {
        Self {
            error: Some(err.to_string()),
            ..Self::blank(scenario, params, method)
        }
    }
}

/// Evaluates every `(scenario, tau)` point, optionally with a simulation row
/// built from `sim` (its `params` are replaced per point). Points run in
/// parallel; rows come back ordered by scenario, tau, then method. Point
/// failures land in the `error` column.
pub fn run_sweep(scenarios: &[Scenario], sim: Option<&SimConfig>, opts: &SolverOptions) -> Result<Vec<SweepRow>> {
    let mut points = Vec::new();
    for (k, sc) in scenarios.iter().enumerate() {
        sc.validate()?;
        for &tau in &sc.tau_grid {
            points.push((k, sc.params(tau)?));
        }
    }
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|(k, params)| {
            let name = &scenarios[*k].name;
            let mut out = vec![match analyze(params, opts) {
                Ok(a) => SweepRow::analytic(name, params, &a.report),
                Err(e) => SweepRow::failed(name, params, Method::Analytic, &e),
            }];
            if let Some(template) = sim {
                let config = SimConfig {
                    params: *params,
                    ..*template
                };
                out.push(match unstable_sim(params).map_or_else(|| sim::run(&config), Err) {
                    Ok(est) => SweepRow::simulated(name, params, &est),
                    Err(e) => SweepRow::failed(name, params, Method::Simulation, &e),
                });
            }
            out
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

// Simulating an unstable point with a file horizon terminates but measures
// nothing meaningful; sweeps record it as an error instead.
fn unstable_sim(params: &SystemParams) -> Option<Error> {
    let s = is_stable(params);
    (!s.stable).then_some(Error::Instability {
        lambda: params.lambda(),
        mu_hat: s.mu_hat,
        rho: s.rho,
    })
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let err = |e: csv::Error| Error::Domain(format!("writing sweep CSV: {e}"));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Domain(format!("writing sweep CSV: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let err = |e: csv::Error| Error::Domain(format!("reading sweep CSV: {e}"));
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(err)?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Domain(format!("unexpected CSV header: {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(err)).collect()
}

/// One line of an analytic-versus-simulation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub analytic: f64,
    pub simulation: Interval,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub report: PerfReport,
    pub estimate: SimEstimate,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn all_agree(&self) -> bool {
        self.rows.iter().all(|r| r.agrees)
    }

    pub fn disagreements(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| !r.agrees)
    }
}

/// Runs the analysis and the simulation at the same point and lines up
/// `D`, `W`, `eta`, `pi_j` and `p0j`.
pub fn compare(config: &SimConfig, opts: &SolverOptions) -> Result<Comparison> {
    let params = config.params;
    let report = analyze(&params, opts)?.report;
    let estimate = sim::run(config)?;
    let pi = steady_state(&params.channel, &params.policy);
    let p0 = [report.p00, report.p01, report.p02];
    let mut rows = vec![
        ("D".to_owned(), report.d, estimate.mean_delay),
        ("W".to_owned(), report.w, estimate.mean_wait),
        ("eta".to_owned(), report.eta, estimate.efficiency),
    ];
    for j in 0..3 {
        rows.push((format!("pi{j}"), pi[j], estimate.state_fraction[j]));
    }
    for j in 0..3 {
        rows.push((format!("p0{j}"), p0[j], estimate.empty_fraction[j]));
    }
    let rows = rows
        .into_iter()
        .map(|(quantity, analytic, simulation)| ComparisonRow {
            agrees: simulation.contains(analytic),
            quantity,
            analytic,
            simulation,
        })
        .collect();
    Ok(Comparison {
        report,
        estimate,
        rows,
    })
}
