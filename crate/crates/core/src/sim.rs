//! Discrete-event simulation of the delayed-offloading queue.
//!
//! The service-state chain runs on its own clock regardless of queue
//! contents. Each file carries an exponential unit of work that drains at the
//! current state's rate, so a rate change mid-file is handled exactly and
//! nothing drains in the delayed state. Arrivals, work sizes and modulation
//! draw from three independently seeded streams.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::channel::{ServiceState, ServiceStateRates, SystemParams};
use crate::error::{Error, Result};

/// Length of a replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Stop after this many file completions (warmup included).
    Files(u64),
    /// Stop at this simulated time in seconds (warmup included).
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: SystemParams,
    pub horizon: Horizon,
    /// Leading fraction of the horizon discarded before measuring.
    pub warmup_fraction: f64,
    pub replications: usize,
    pub seed: u64,
    /// Batches per replication; used for the interval when there is a
    /// single replication.
    pub batch_count: usize,
}

impl SimConfig {
    /// 10 replications of 10^5 files, 10% warmup, 20 batches.
    pub fn new(params: SystemParams) -> Self {
        Self {
            params,
            horizon: Horizon::Files(100_000),
            warmup_fraction: 0.1,
            replications: 10,
            seed: 0x5eed,
            batch_count: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_count < 10 {
            return Err(Error::Config(format!(
                "batch count must be at least 10, got {}",
                self.batch_count
            )));
        }
        match self.horizon {
            Horizon::Files(n) if n < 2 * self.batch_count as u64 => Err(Error::Config(format!(
                "file horizon {n} too short for {} batches",
                self.batch_count
            ))),
            Horizon::Time(t) if !(t.is_finite() && t > 0.0) => {
                Err(Error::Config(format!("time horizon must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

/// Point estimate with a two-sided 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn relative_half_width(&self) -> f64 {
        self.half_width() / self.point.abs()
    }

    /// Student-t interval over independent samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                point: mean,
                low: f64::NEG_INFINITY,
                high: f64::INFINITY,
            };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let half = t * (var / n as f64).sqrt();
        Self {
            point: mean,
            low: mean - half,
            high: mean + half,
        }
    }
}

/// Measurement accumulator for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Tally {
    pub files: u64,
    pub files_via_wifi: u64,
    pub arrivals: u64,
    pub delay_sum: f64,
    pub wait_sum: f64,
    pub time: f64,
    pub time_in_state: [f64; 3],
    pub empty_time_in_state: [f64; 3],
    /// Integral of the number of files in the system over time.
    pub area: f64,
}

impl Tally {
    fn merge(&mut self, other: &Tally) {
        self.files += other.files;
        self.files_via_wifi += other.files_via_wifi;
        self.arrivals += other.arrivals;
        self.delay_sum += other.delay_sum;
        self.wait_sum += other.wait_sum;
        self.time += other.time;
        self.area += other.area;
        for j in 0..3 {
            self.time_in_state[j] += other.time_in_state[j];
            self.empty_time_in_state[j] += other.empty_time_in_state[j];
        }
    }

    fn metrics(&self) -> Metrics {
        let files = self.files.max(1) as f64;
        let time = if self.time > 0.0 { self.time } else { 1.0 };
        Metrics {
            mean_delay: self.delay_sum / files,
            mean_wait: self.wait_sum / files,
            efficiency: self.files_via_wifi as f64 / files,
            mean_in_system: self.area / time,
            state_fraction: self.time_in_state.map(|t| t / time),
            empty_fraction: self.empty_time_in_state.map(|t| t / time),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Metrics {
    mean_delay: f64,
    mean_wait: f64,
    efficiency: f64,
    mean_in_system: f64,
    state_fraction: [f64; 3],
    empty_fraction: [f64; 3],
}

/// Largest arrival-seen queue length tracked individually; longer queues
/// share the last bucket.
pub const ARRIVAL_VIEW_LEVELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub total: Tally,
    pub batches: Vec<Tally>,
    /// Counts of `(n, j)` seen by arrivals during measurement.
    pub arrival_view: Vec<[u64; 3]>,
    pub growth_detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub mean_delay: Interval,
    pub mean_wait: Interval,
    pub efficiency: Interval,
    pub mean_in_system: Interval,
    pub state_fraction: [Interval; 3],
    pub empty_fraction: [Interval; 3],
    pub files_completed: u64,
    pub files_via_wifi: u64,
    pub arrivals: u64,
    /// Measured simulated time, all replications.
    pub observed_time: f64,
    pub time_in_state: [f64; 3],
    pub empty_time_in_state: [f64; 3],
    pub arrival_view: Vec<[u64; 3]>,
    /// A majority of replications showed a significant upward queue trend.
    pub growth_detected: bool,
    pub replications: usize,
}

/// Runs every replication (in parallel) and aggregates them.
pub fn run(config: &SimConfig) -> Result<SimEstimate> {
    config.validate()?;
    let reps: Vec<ReplicationResult> = (0..config.replications)
        .into_par_iter()
        .map(|k| run_replication(config, k as u64))
        .collect();

    let samples: Vec<Metrics> = if reps.len() >= 2 {
        reps.iter().map(|r| r.total.metrics()).collect()
    } else {
        reps[0].batches.iter().map(Tally::metrics).collect()
    };
    let interval = |get: &dyn Fn(&Metrics) -> f64| {
        Interval::from_samples(&samples.iter().map(get).collect::<Vec<_>>())
    };

    let mut total = Tally::default();
    let mut arrival_view = vec![[0u64; 3]; ARRIVAL_VIEW_LEVELS + 1];
    for r in &reps {
        total.merge(&r.total);
        for (acc, seen) in arrival_view.iter_mut().zip(&r.arrival_view) {
            for j in 0..3 {
                acc[j] += seen[j];
            }
        }
    }
    let flagged = reps.iter().filter(|r| r.growth_detected).count();

    Ok(SimEstimate {
        mean_delay: interval(&|m| m.mean_delay),
        mean_wait: interval(&|m| m.mean_wait),
        efficiency: interval(&|m| m.efficiency),
        mean_in_system: interval(&|m| m.mean_in_system),
        state_fraction: [0, 1, 2].map(|j| interval(&|m| m.state_fraction[j])),
        empty_fraction: [0, 1, 2].map(|j| interval(&|m| m.empty_fraction[j])),
        files_completed: total.files,
        files_via_wifi: total.files_via_wifi,
        arrivals: total.arrivals,
        observed_time: total.time,
        time_in_state: total.time_in_state,
        empty_time_in_state: total.empty_time_in_state,
        arrival_view,
        growth_detected: 2 * flagged > reps.len(),
        replications: reps.len(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Job {
    arrival: f64,
    /// Remaining work; drains at the current service rate.
    work: f64,
    started: f64,
}

/// What a single engine step did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
    Transition { from: ServiceState, to: ServiceState },
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Arrival => f.write_str("arrival"),
            Self::Departure => f.write_str("departure"),
            Self::Transition { from, to } => write!(f, "{}->{}", from.index(), to.index()),
        }
    }
}

struct Engine {
    rates: ServiceStateRates,
    service: [f64; 3],
    arrival_gap: Exp<f64>,
    arrival_rng: ChaCha8Rng,
    work_rng: ChaCha8Rng,
    modulation_rng: ChaCha8Rng,
    now: f64,
    state: ServiceState,
    queue: VecDeque<Job>,
    next_arrival: f64,
    next_switch: f64,
}

/// Outcome of one step, reported to the driver.
struct Step {
    time: f64,
    elapsed: f64,
    /// State and population over the elapsed interval.
    state: ServiceState,
    population: usize,
    kind: EventKind,
    /// For departures: (arrival time, service start time).
    departed: Option<(f64, f64)>,
}

fn stream_rng(seed: u64, replication: u64, stream: u64) -> ChaCha8Rng {
    // splitmix64 finalizer keeps neighbouring seeds far apart
    let mut z = seed ^ replication.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(stream);
    rng
}

impl Engine {
    fn new(params: &SystemParams, seed: u64, replication: u64) -> Self {
        let rates = params.rates();
        let arrival_gap = Exp::new(params.lambda()).expect("lambda validated positive");
        let mut arrival_rng = stream_rng(seed, replication, 0);
        let work_rng = stream_rng(seed, replication, 1);
        let mut modulation_rng = stream_rng(seed, replication, 2);

        // start the service chain in its stationary law
        let pi = crate::channel::steady_state(&params.channel, &params.policy);
        let u: f64 = modulation_rng.random();
        let state = if u < pi[0] {
            ServiceState::Delayed
        } else if u < pi[0] + pi[1] {
            ServiceState::Cellular
        } else {
            ServiceState::WiFi
        };
        let next_arrival = arrival_gap.sample(&mut arrival_rng);
        let mut engine = Self {
            rates,
            service: params.service_rates(),
            arrival_gap,
            arrival_rng,
            work_rng,
            modulation_rng,
            now: 0.0,
            state,
            queue: VecDeque::new(),
            next_arrival,
            next_switch: 0.0,
        };
        engine.next_switch = engine.sample_sojourn();
        engine
    }

    fn sample_sojourn(&mut self) -> f64 {
        let rate = self.rates.exit_rate(self.state);
        let e: f64 = Exp1.sample(&mut self.modulation_rng);
        self.now + e / rate
    }

    fn next_state(&mut self) -> ServiceState {
        use ServiceState::*;
        match self.state {
            Delayed => {
                let to_cell = self.rates.delayed_to_cellular;
                let total = to_cell + self.rates.delayed_to_wifi;
                if self.modulation_rng.random::<f64>() * total < to_cell {
                    Cellular
                } else {
                    WiFi
                }
            }
            Cellular => WiFi,
            WiFi => Delayed,
        }
    }

    fn completion_time(&self) -> f64 {
        let rate = self.service[self.state.index()];
        match self.queue.front() {
            Some(job) if rate > 0.0 => self.now + job.work / rate,
            _ => f64::INFINITY,
        }
    }

    fn step(&mut self) -> Step {
        let complete_at = self.completion_time();
        let time = self.next_arrival.min(self.next_switch).min(complete_at);
        let elapsed = time - self.now;
        let state = self.state;
        let population = self.queue.len();
        let rate = self.service[state.index()];
        if let Some(job) = self.queue.front_mut() {
            job.work -= rate * elapsed;
        }
        self.now = time;

        let mut departed = None;
        let kind = if time == complete_at {
            let job = self.queue.pop_front().expect("completion needs a job");
            if let Some(next) = self.queue.front_mut() {
                next.started = time;
            }
            departed = Some((job.arrival, job.started));
            EventKind::Departure
        } else if time == self.next_arrival {
            let work: f64 = Exp1.sample(&mut self.work_rng);
            self.queue.push_back(Job {
                arrival: time,
                work,
                started: time,
            });
            self.next_arrival = time + self.arrival_gap.sample(&mut self.arrival_rng);
            EventKind::Arrival
        } else {
            let before = self.queue.front().map(|j| j.work);
            let from = self.state;
            self.state = self.next_state();
            self.next_switch = self.sample_sojourn();
            debug_assert_eq!(before, self.queue.front().map(|j| j.work));
            debug_assert!(before.is_none_or(|w| w > -1e-9));
            EventKind::Transition { from, to: self.state }
        };
        Step {
            time,
            elapsed,
            state,
            population,
            kind,
            departed,
        }
    }
}

/// One independent replication.
pub fn run_replication(config: &SimConfig, replication: u64) -> ReplicationResult {
    let mut engine = Engine::new(&config.params, config.seed, replication);
    let batches_n = config.batch_count;
    let mut batches = vec![Tally::default(); batches_n];
    let mut arrival_view = vec![[0u64; 3]; ARRIVAL_VIEW_LEVELS + 1];

    let (warm_files, total_files, warm_time, end_time) = match config.horizon {
        Horizon::Files(n) => ((config.warmup_fraction * n as f64) as u64, n, f64::INFINITY, f64::INFINITY),
        Horizon::Time(t) => (u64::MAX, u64::MAX, config.warmup_fraction * t, t),
    };
    let measured_files = total_files.saturating_sub(warm_files);
    let expected_samples = match config.horizon {
        Horizon::Files(_) => measured_files,
        Horizon::Time(t) => ((1.0 - config.warmup_fraction) * t * config.params.lambda()) as u64,
    };
    let stride = (expected_samples / 200).max(1);
    let mut trend: Vec<(f64, f64)> = Vec::with_capacity(256);

    let mut completed: u64 = 0;
    let mut measuring = warm_files == 0 && warm_time <= 0.0;
    let mut measure_start = 0.0;
    let mut measured: u64 = 0;

    loop {
        let step = engine.step();
        if step.time > end_time {
            // account for the tail of the last interval up to the horizon
            let clipped = end_time - (step.time - step.elapsed);
            if measuring && clipped > 0.0 {
                let b = time_batch(end_time - 1e-12, measure_start, end_time, batches_n);
                account_interval(&mut batches[b], clipped, step.state, step.population);
            }
            break;
        }
        let mut elapsed = step.elapsed;
        if !measuring && step.time > warm_time {
            measuring = true;
            measure_start = warm_time;
            elapsed = step.time - warm_time;
        }
        if measuring {
            let b = match config.horizon {
                Horizon::Files(_) => ((measured * batches_n as u64) / measured_files.max(1)) as usize,
                Horizon::Time(_) => time_batch(step.time, measure_start, end_time, batches_n),
            }
            .min(batches_n - 1);
            let tally = &mut batches[b];
            account_interval(tally, elapsed, step.state, step.population);
            match step.kind {
                EventKind::Arrival => {
                    tally.arrivals += 1;
                    let level = step.population.min(ARRIVAL_VIEW_LEVELS);
                    arrival_view[level][engine.state.index()] += 1;
                }
                EventKind::Departure => {
                    let (arrival, started) = step.departed.expect("departure record");
                    tally.files += 1;
                    tally.delay_sum += step.time - arrival;
                    tally.wait_sum += started - arrival;
                    if step.state == ServiceState::WiFi {
                        tally.files_via_wifi += 1;
                    }
                    measured += 1;
                    if measured.is_multiple_of(stride) {
                        trend.push((step.time, engine.queue.len() as f64));
                    }
                }
                EventKind::Transition { .. } => {}
            }
        }
        if step.kind == EventKind::Departure {
            completed += 1;
            if completed >= total_files {
                break;
            }
        }
        if !measuring && completed >= warm_files {
            measuring = true;
            measure_start = engine.now;
        }
    }

    let mut total = Tally::default();
    for b in &batches {
        total.merge(b);
    }
    ReplicationResult {
        total,
        batches,
        arrival_view,
        growth_detected: upward_trend(&trend),
    }
}

fn time_batch(t: f64, start: f64, end: f64, batches: usize) -> usize {
    let frac = (t - start) / (end - start);
    ((frac * batches as f64) as usize).min(batches - 1)
}

fn account_interval(tally: &mut Tally, dt: f64, state: ServiceState, population: usize) {
    let j = state.index();
    tally.time += dt;
    tally.time_in_state[j] += dt;
    if population == 0 {
        tally.empty_time_in_state[j] += dt;
    }
    tally.area += population as f64 * dt;
}

/// One-sided OLS slope test of queue length against time at 5% significance.
fn upward_trend(points: &[(f64, f64)]) -> bool {
    let n = points.len();
    if n < 10 {
        return false;
    }
    let nf = n as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_q = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_q)).sum();
    if sxx == 0.0 {
        return false;
    }
    let slope = sxy / sxx;
    let intercept = mean_q - slope * mean_t;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    if se == 0.0 {
        return slope > 0.0;
    }
    let critical = StudentsT::new(0.0, 1.0, nf - 2.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.95);
    slope / se > critical
}

/// One logged event; `n_after` and `state_after` describe the system right
/// after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub t: f64,
    pub event: EventKind,
    pub n_after: usize,
    pub state_after: ServiceState,
}

/// Event log of the first replication up to `duration` seconds.
pub fn state_machine_trace(config: &SimConfig, duration: f64) -> Result<Vec<TraceEvent>> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Config(format!("trace duration must be positive, got {duration}")));
    }
    let mut engine = Engine::new(&config.params, config.seed, 0);
    let mut log = Vec::new();
    loop {
        let step = engine.step();
        if step.time > duration {
            return Ok(log);
        }
        log.push(TraceEvent {
            t: step.time,
            event: step.kind,
            n_after: engine.queue.len(),
            state_after: engine.state,
        });
    }
}

/// First event whose transition is not one of the four modelled ones.
pub fn first_illegal_transition(log: &[TraceEvent]) -> Option<&TraceEvent> {
    use ServiceState::*;
    log.iter().find(|e| match e.event {
        EventKind::Transition { from, to } => !matches!(
            (from, to),
            (WiFi, Delayed) | (Delayed, Cellular) | (Delayed, WiFi) | (Cellular, WiFi)
        ),
        _ => false,
    })
}

/// CSV with columns `t,event,n_after,j_after`.
pub fn write_trace_csv<W: Write>(log: &[TraceEvent], out: W) -> Result<()> {
    let err = |e: csv::Error| Error::Domain(format!("writing trace: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "event", "n_after", "j_after"]).map_err(err)?;
    for e in log {
        w.serialize((e.t, e.event.to_string(), e.n_after, e.state_after.index()))
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Domain(format!("writing trace: {e}")))
}
