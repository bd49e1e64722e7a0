//! Empirical coverage of the simulator's 95% intervals at two slow-channel
//! points, over 100 independent seeds.
//!
//! ```text
//! cargo run --release --example ci_coverage
//! ```

use offload_core::channel::{ChannelParams, OffloadPolicy, SystemParams};
use offload_core::metrics::analyze;
use offload_core::sim::{self, Horizon, SimConfig};
use offload_core::SolverOptions;

const SEEDS: u64 = 100;

fn main() {
    let points = [
        ("vehicular tau=1000 mu=(10,1.28)", 0.035, 0.079, 10.0, 1.28),
        ("pedestrian tau=1000 mu=(0.564,0.564)", 0.007, 0.016, 0.564, 0.564),
    ];
    for (label, f_c, f_f, mu1, mu2) in points {
        let channel = ChannelParams::new(f_c, f_f).unwrap();
        let params = SystemParams::new(channel, OffloadPolicy::new(1000.0).unwrap(), mu1, mu2, 0.1).unwrap();
        let exact = analyze(&params, &SolverOptions::default()).unwrap().report;
        let (mut hit_d, mut hit_eta, mut width) = (0, 0, 0.0);
        for seed in 0..SEEDS {
            let config = SimConfig {
                horizon: Horizon::Files(100_000),
                replications: 10,
                seed: 1000 + seed,
                ..SimConfig::new(params)
            };
            let est = sim::run(&config).unwrap();
            hit_d += u32::from(est.mean_delay.contains(exact.d));
            hit_eta += u32::from(est.efficiency.contains(exact.eta));
            width += est.mean_delay.relative_half_width() / SEEDS as f64;
        }
        println!(
            "{label}: D covered {hit_d}/{SEEDS}, eta covered {hit_eta}/{SEEDS}, mean relative half-width of D {:.2}%",
            100.0 * width
        );
    }
}
