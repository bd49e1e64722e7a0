use offload_core::channel::{ChannelParams, OffloadPolicy, ServiceState, SystemParams};
use offload_core::metrics::analyze;
use offload_core::qbd::solve;
use offload_core::sim::{
    first_illegal_transition, run, run_replication, state_machine_trace, EventKind, Horizon, SimConfig,
};
use offload_core::SolverOptions;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn pedestrian(tau: f64) -> SystemParams {
    SystemParams::new(
        ChannelParams::new(0.007, 0.016).unwrap(),
        OffloadPolicy::new(tau).unwrap(),
        0.564,
        0.564,
        0.1,
    )
    .unwrap()
}

/// Student-t interval whose level is split across `family` simultaneous
/// checks, so that the whole family holds with 95% confidence.
fn family_interval(samples: &[f64], family: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .unwrap()
        .inverse_cdf(1.0 - 0.025 / family as f64);
    let half = t * (var / n).sqrt();
    (mean - half, mean + half)
}

#[test]
fn mm1_delay_inside_interval() {
    let config = SimConfig {
        horizon: Horizon::Files(100_000),
        replications: 10,
        seed: 11,
        ..SimConfig::new(pedestrian(1e-6))
    };
    let est = run(&config).unwrap();
    let exact = 1.0 / (0.564 - 0.1);
    assert!(est.mean_delay.contains(exact), "{:?} vs {exact}", est.mean_delay);
    assert!(est.mean_delay.low <= est.mean_delay.point && est.mean_delay.point <= est.mean_delay.high);
    assert!(est.files_via_wifi <= est.files_completed);
}

#[test]
fn arrival_count_is_poisson() {
    let config = SimConfig {
        horizon: Horizon::Time(1e6),
        warmup_fraction: 0.0,
        replications: 1,
        seed: 12,
        ..SimConfig::new(pedestrian(100.0))
    };
    let est = run(&config).unwrap();
    assert!((est.observed_time - 1e6).abs() < 1e-6);
    let mean = 0.1 * est.observed_time;
    let z = (est.arrivals as f64 - mean) / mean.sqrt();
    assert!(z.abs() < 3.0, "arrivals {} z = {z}", est.arrivals);
}

#[test]
fn time_in_state_matches_channel_law() {
    let config = SimConfig {
        horizon: Horizon::Time(2e6),
        replications: 10,
        seed: 13,
        ..SimConfig::new(pedestrian(100.0))
    };
    let est = run(&config).unwrap();
    let expected = [0.28645, 0.40921, 0.30435];
    for j in 0..3 {
        let frac = est.time_in_state[j] / est.observed_time;
        assert!((frac - expected[j]).abs() < 0.01 * expected[j], "state {j}: {frac}");
    }
}

#[test]
fn deadline_split_is_binomial() {
    let params = pedestrian(100.0);
    let log = state_machine_trace(&SimConfig::new(params), 5e6).unwrap();
    assert!(first_illegal_transition(&log).is_none());
    let (mut to_cellular, mut to_wifi) = (0.0_f64, 0.0_f64);
    for e in &log {
        match e.event {
            EventKind::Transition { from: ServiceState::Delayed, to: ServiceState::Cellular } => to_cellular += 1.0,
            EventKind::Transition { from: ServiceState::Delayed, to: ServiceState::WiFi } => to_wifi += 1.0,
            _ => {}
        }
    }
    let n = to_cellular + to_wifi;
    let p = 0.01 / (0.01 + 0.007);
    let z = (to_cellular - n * p) / (n * p * (1.0 - p)).sqrt();
    assert!(n > 1000.0);
    assert!(z.abs() < 3.0, "{to_cellular} of {n}, z = {z}");
}

#[test]
fn wifi_sojourn_has_mean_one_over_f_f() {
    let log = state_machine_trace(&SimConfig { seed: 14, ..SimConfig::new(pedestrian(100.0)) }, 5e6).unwrap();
    let mut entered = None;
    let mut stays = Vec::new();
    for e in &log {
        if let EventKind::Transition { from, to } = e.event {
            if to == ServiceState::WiFi {
                entered = Some(e.t);
            } else if from == ServiceState::WiFi {
                if let Some(t0) = entered.take() {
                    stays.push(e.t - t0);
                }
            }
        }
    }
    let n = stays.len() as f64;
    let mean = stays.iter().sum::<f64>() / n;
    // exponential sojourns: standard deviation equals the mean
    let expected = 1.0 / 0.016;
    assert!((mean - expected).abs() < 3.0 * expected / n.sqrt(), "{mean} over {n} stays");
}

#[test]
fn arrivals_see_time_averages() {
    let params = pedestrian(100.0);
    let sol = solve(&params).unwrap();
    let config = SimConfig {
        horizon: Horizon::Files(100_000),
        replications: 10,
        seed: 15,
        ..SimConfig::new(params)
    };
    let reps: Vec<_> = (0..config.replications as u64).map(|k| run_replication(&config, k)).collect();
    let cells: Vec<(usize, usize)> = (0..4).flat_map(|n| (0..3).map(move |j| (n, j))).collect();
    for &(n, j) in &cells {
        let samples: Vec<f64> = reps
            .iter()
            .map(|r| {
                let seen: u64 = r.arrival_view.iter().flatten().sum();
                r.arrival_view[n][j] as f64 / seen as f64
            })
            .collect();
        let (lo, hi) = family_interval(&samples, cells.len());
        let p = sol.prob(n, j);
        assert!(lo <= p && p <= hi, "cell ({n},{j}): {p} outside [{lo}, {hi}]");
    }
}

#[test]
fn empty_time_matches_empty_probabilities() {
    let params = pedestrian(100.0);
    let sol = solve(&params).unwrap();
    let config = SimConfig {
        horizon: Horizon::Files(100_000),
        replications: 10,
        seed: 16,
        ..SimConfig::new(params)
    };
    let reps: Vec<_> = (0..config.replications as u64).map(|k| run_replication(&config, k)).collect();
    let p0 = sol.empty_probabilities();
    for j in 0..3 {
        let samples: Vec<f64> = reps
            .iter()
            .map(|r| r.total.empty_time_in_state[j] / r.total.time)
            .collect();
        let (lo, hi) = family_interval(&samples, 3);
        assert!(lo <= p0[j] && p0[j] <= hi, "p0{j} = {} outside [{lo}, {hi}]", p0[j]);
    }
}

#[test]
fn asymmetric_rates_agree_with_analysis() {
    // Cellular much faster than Wi-Fi: a file that starts on Wi-Fi and
    // switches to cellular must keep its remaining work.
    let params = SystemParams::new(
        ChannelParams::new(0.035, 0.079).unwrap(),
        OffloadPolicy::new(100.0).unwrap(),
        10.0,
        1.28,
        0.1,
    )
    .unwrap();
    let exact = analyze(&params, &SolverOptions::default()).unwrap().report;
    let est = run(&SimConfig { seed: 17, ..SimConfig::new(params) }).unwrap();
    assert!(est.mean_delay.contains(exact.d), "{:?} vs {}", est.mean_delay, exact.d);
    assert!(est.efficiency.contains(exact.eta), "{:?} vs {}", est.efficiency, exact.eta);
}

#[test]
fn unstable_run_completes_and_flags_growth() {
    let params = pedestrian(1e6).with_lambda(0.6).unwrap();
    let config = SimConfig {
        horizon: Horizon::Time(2e4),
        replications: 3,
        seed: 18,
        ..SimConfig::new(params)
    };
    let est = run(&config).unwrap();
    assert!(est.growth_detected);
}
