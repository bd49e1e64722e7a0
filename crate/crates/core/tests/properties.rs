use proptest::prelude::*;

use offload_core::channel::{average_rate, steady_state, ChannelParams, OffloadPolicy, SystemParams};
use offload_core::metrics::analyze;
use offload_core::qbd::solve;
use offload_core::sweep::{parse_tau_grid, read_csv, write_csv, Method, SweepRow};
use offload_core::SolverOptions;

fn rate() -> impl Strategy<Value = f64> {
    (-3.0f64..0.0).prop_map(|e| 10f64.powf(e))
}

fn deadline() -> impl Strategy<Value = f64> {
    (-2.0f64..4.0).prop_map(|e| 10f64.powf(e))
}

/// Stable point with moderate load so the truncated solve stays small.
fn stable_point() -> impl Strategy<Value = SystemParams> {
    (
        (-2.0f64..0.0).prop_map(|e| 10f64.powf(e)),
        (-2.0f64..0.0).prop_map(|e| 10f64.powf(e)),
        deadline(),
        0.2f64..5.0,
        0.2f64..5.0,
        0.05f64..0.7,
    )
        .prop_map(|(f_c, f_f, tau, mu1, mu2, load)| {
            let channel = ChannelParams::new(f_c, f_f).unwrap();
            let probe = SystemParams::new(channel, OffloadPolicy::new(tau).unwrap(), mu1, mu2, 1.0).unwrap();
            let lambda = load * average_rate(&probe);
            probe.with_lambda(lambda).unwrap()
        })
}

/// Left null vector of a rank-2 3x3 generator: orthogonal to two of its
/// columns, hence their cross product.
fn null_vector(q: [[f64; 3]; 3]) -> [f64; 3] {
    let (a, b) = ([q[0][0], q[1][0], q[2][0]], [q[0][1], q[1][1], q[2][1]]);
    let v = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stationary_law_is_generator_null_vector(f_c in rate(), f_f in rate(), tau in deadline()) {
        let ch = ChannelParams::new(f_c, f_f).unwrap();
        let pol = OffloadPolicy::new(tau).unwrap();
        let f_d = 1.0 / tau;
        // states: delayed, cellular, Wi-Fi
        let q = [
            [-(f_d + f_c), f_d, f_c],
            [0.0, -f_c, f_c],
            [f_f, 0.0, -f_f],
        ];
        let oracle = null_vector(q);
        let pi = steady_state(&ch, &pol);
        for j in 0..3 {
            prop_assert!((pi[j] - oracle[j]).abs() <= 1e-12 * oracle[j].max(1e-3), "{pi:?} vs {oracle:?}");
        }
    }

    #[test]
    fn mean_service_rate_falls_with_deadline(
        f_c in rate(), f_f in rate(), mu1 in 0.1f64..10.0, mu2 in 0.1f64..10.0,
        tau in deadline(), factor in 1.0f64..100.0,
    ) {
        let ch = ChannelParams::new(f_c, f_f).unwrap();
        let at = |t: f64| average_rate(&SystemParams::new(ch, OffloadPolicy::new(t).unwrap(), mu1, mu2, 0.01).unwrap());
        prop_assert!(at(tau * factor) <= at(tau) * (1.0 + 1e-12));
    }

    #[test]
    fn csv_round_trip_is_exact(
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 14),
        tau in deadline(),
        error in prop::option::of("[a-z ,\"=]{0,20}"),
    ) {
        let row = SweepRow {
            scenario: "custom, \"quoted\"".into(),
            f_c: values[0], f_f: values[1], tau, lambda: values[2], mu1: values[3], mu2: values[4],
            r: values[5], f: values[6], pi0: Some(values[7]), pi1: None, pi2: Some(values[8]),
            beta: Some(values[9]), et: Some(values[10]), w: Some(values[11]), d: Some(values[12]),
            d_little: None, eta: Some(values[13]), d_star: None, method: Method::Simulation,
            d_ci_low: Some(values[0]), d_ci_high: None, eta_ci_low: None, eta_ci_high: Some(values[1]),
            error,
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].error, &row.error.as_ref().filter(|e| !e.is_empty()).cloned());
        let mut back = back.into_iter().next().unwrap();
        back.error = row.error.clone();
        prop_assert_eq!(back, row);
    }

    #[test]
    fn tau_grid_list_round_trips(mut grid in prop::collection::vec(1e-6f64..1e7, 1..20)) {
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let text = grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_tau_grid(&text).unwrap(), grid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn queue_marginals_match_channel_law(params in stable_point()) {
        let sol = solve(&params).unwrap();
        let pi = steady_state(&params.channel, &params.policy);
        let slack = 1e-8_f64.max(sol.tail_mass());
        for j in 0..3 {
            prop_assert!((sol.marginal(j) - pi[j]).abs() < slack.max(1e-9 * pi[j]) + 1e-12,
                "state {j}: {} vs {}", sol.marginal(j), pi[j]);
        }
        prop_assert!(sol.probs().iter().flatten().all(|&p| p >= 0.0));
        let p0 = sol.empty_probabilities();
        for j in 0..3 {
            prop_assert!(p0[j] <= pi[j] + 1e-12);
        }
    }

    #[test]
    fn metrics_are_consistent(params in stable_point()) {
        let r = analyze(&params, &SolverOptions::default()).unwrap().report;
        prop_assert!(r.w >= -1e-9 && r.d >= r.et);
        prop_assert!((r.d - r.d_little).abs() <= 1e-6 * r.d);
        prop_assert!((r.w - r.w_closed).abs() <= 1e-6 * r.w.max(1e-3));
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r.eta));
        prop_assert!(r.beta > 0.0 && r.beta < 1.0);
    }

    #[test]
    fn instant_deadline_reduces_to_mm1(
        f_c in rate(), f_f in rate(), mu in 0.2f64..5.0, load in 0.05f64..0.9,
    ) {
        let lambda = load * mu;
        let params = SystemParams::new(
            ChannelParams::new(f_c, f_f).unwrap(),
            OffloadPolicy::new(1e-7).unwrap(),
            mu, mu, lambda,
        ).unwrap();
        let r = analyze(&params, &SolverOptions::default()).unwrap().report;
        let exact = 1.0 / (mu - lambda);
        prop_assert!((r.d - exact).abs() <= 1e-4 * exact, "{} vs {exact}", r.d);
        prop_assert!((r.eta - params.channel.wifi_ratio()).abs() <= 1e-4);
    }
}
