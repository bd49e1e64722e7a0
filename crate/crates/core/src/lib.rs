//! Delayed Wi-Fi offloading as an M/MMSP/1 queue.
//!
//! A terminal that cannot use cellular and Wi-Fi at once pauses transmission
//! when it loses Wi-Fi, waits up to an exponential deadline for the next
//! hotspot, and then falls back to cellular. The resulting single-server
//! queue has a three-state Markov-modulated service process. This crate
//! computes its stationary behaviour analytically and checks every figure
//! against a discrete-event simulation.
//!
//! * [`channel`]: channel and service-state chain, stationary law, stability.
//! * [`qbd`]: the joint `(queue length, service state)` chain and its solver.
//! * [`embedded`]: embedded chain, start-service probabilities, service times.
//! * [`metrics`]: waiting time, delay, efficiency, asymptotic delay.
//! * [`sim`]: discrete-event simulator with confidence intervals.
//! * [`sweep`]: scenario presets, parameter sweeps and CSV output.

pub mod channel;
pub mod embedded;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod qbd;
pub mod sim;
pub mod sweep;

pub use channel::{ChannelParams, OffloadPolicy, ServiceState, SystemParams};
pub use error::{Error, Result};
pub use metrics::{analyze, Analysis, PerfReport};
pub use qbd::{QueueSolution, SolverOptions};

// The guide and README snippets run as doctests, one module per file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/queue.md")]
    mod queue {}
    #[doc = include_str!("../../../book/src/embedded-chain.md")]
    mod embedded_chain {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
