//! The two-state wireless channel and the three-state service process it
//! drives.
//!
//! The channel alternates between cellular-only coverage (C) and Wi-Fi
//! coverage (F) with exponential sojourns. Layered on top, the terminal is
//! in one of three service states:
//!
//! | state | meaning   | service rate |
//! |-------|-----------|--------------|
//! | 0     | delayed   | 0            |
//! | 1     | cellular  | `mu1`        |
//! | 2     | Wi-Fi     | `mu2`        |
//!
//! Losing Wi-Fi moves the terminal to the delayed state and starts an
//! exponential deadline with mean `tau`. Reaching a hotspot first resumes on
//! Wi-Fi; otherwise the deadline expires and transmission falls back to
//! cellular until the next hotspot.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::linalg::Mat3;

/// One of the three service states of the modulating chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceState {
    Delayed = 0,
    Cellular = 1,
    WiFi = 2,
}

impl ServiceState {
    pub const ALL: [ServiceState; 3] = [Self::Delayed, Self::Cellular, Self::WiFi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(j: usize) -> Option<Self> {
        Self::ALL.get(j).copied()
    }
}

impl std::fmt::Display for ServiceState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Delayed => "delayed",
            Self::Cellular => "cellular",
            Self::WiFi => "wifi",
        })
    }
}

/// Sojourn rates of the Markov channel.
///
/// `f_c` is the rate of leaving cellular-only coverage, `f_f` the rate of
/// leaving Wi-Fi coverage. Mobility and the Wi-Fi available ratio are
/// always derived from these two, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    f_c: f64,
    f_f: f64,
}

impl ChannelParams {
    pub fn new(f_c: f64, f_f: f64) -> Result<Self> {
        check_positive("f_C", f_c)?;
        check_positive("f_F", f_f)?;
        Ok(Self { f_c, f_f })
    }

    /// Builds the channel that has Wi-Fi available ratio `r` and mobility `f`.
    ///
    /// Inverts `R = f_C/(f_C+f_F)` and `f = f_C f_F/(f_C+f_F)`, which gives
    /// `f_C = f/(1-R)` and `f_F = f/R`.
    pub fn from_ratio_and_mobility(r: f64, f: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter {
                name: "R",
                reason: format!("must lie in (0, 1), got {r}"),
            });
        }
        check_positive("f", f)?;
        Self::new(f / (1.0 - r), f / r)
    }

    pub fn f_c(&self) -> f64 {
        self.f_c
    }

    pub fn f_f(&self) -> f64 {
        self.f_f
    }

    /// Harmonic mobility `f = 1/(1/f_F + 1/f_C)`.
    pub fn mobility(&self) -> f64 {
        self.f_c * self.f_f / (self.f_c + self.f_f)
    }

    /// Long-run fraction of time Wi-Fi is reachable, `R = f_C/(f_C+f_F)`.
    pub fn wifi_ratio(&self) -> f64 {
        self.f_c / (self.f_c + self.f_f)
    }
}

/// Delayed-offloading policy: an exponential deadline with mean `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadPolicy {
    tau: f64,
}

impl OffloadPolicy {
    pub fn new(tau: f64) -> Result<Self> {
        check_positive("tau", tau)?;
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Deadline expiry rate `f_D = 1/tau`.
    pub fn deadline_rate(&self) -> f64 {
        1.0 / self.tau
    }
}

/// A complete model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub channel: ChannelParams,
    pub policy: OffloadPolicy,
    mu1: f64,
    mu2: f64,
    lambda: f64,
}

impl SystemParams {
    pub fn new(
        channel: ChannelParams,
        policy: OffloadPolicy,
        mu1: f64,
        mu2: f64,
        lambda: f64,
    ) -> Result<Self> {
        check_positive("mu1", mu1)?;
        check_positive("mu2", mu2)?;
        check_positive("lambda", lambda)?;
        Ok(Self {
            channel,
            policy,
            mu1,
            mu2,
            lambda,
        })
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.policy.tau()
    }

    /// Service rates indexed by state; the delayed state never serves.
    pub fn service_rates(&self) -> [f64; 3] {
        [0.0, self.mu1, self.mu2]
    }

    pub fn service_rate(&self, state: ServiceState) -> f64 {
        self.service_rates()[state.index()]
    }

    pub fn rates(&self) -> ServiceStateRates {
        derive_rates(&self.channel, &self.policy)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Ok(Self {
            policy: OffloadPolicy::new(tau)?,
            ..*self
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        Ok(Self { lambda, ..*self })
    }
}

/// The four nonzero transition rates of the service-state chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceStateRates {
    /// Wi-Fi → delayed (`f_F`).
    pub wifi_to_delayed: f64,
    /// Delayed → cellular (`f_D`).
    pub delayed_to_cellular: f64,
    /// Delayed → Wi-Fi (`f_C`).
    pub delayed_to_wifi: f64,
    /// Cellular → Wi-Fi (`f_C`).
    pub cellular_to_wifi: f64,
}

impl ServiceStateRates {
    /// Rate `f_{i,j}`; structurally absent transitions are zero.
    pub fn rate(&self, from: ServiceState, to: ServiceState) -> f64 {
        use ServiceState::*;
        match (from, to) {
            (WiFi, Delayed) => self.wifi_to_delayed,
            (Delayed, Cellular) => self.delayed_to_cellular,
            (Delayed, WiFi) => self.delayed_to_wifi,
            (Cellular, WiFi) => self.cellular_to_wifi,
            _ => 0.0,
        }
    }

    /// Total rate of leaving `from`.
    pub fn exit_rate(&self, from: ServiceState) -> f64 {
        ServiceState::ALL.iter().map(|&to| self.rate(from, to)).sum()
    }

    /// Infinitesimal generator of the service-state chain (rows sum to 0).
    pub fn generator(&self) -> Mat3 {
        let mut q = [[0.0; 3]; 3];
        for from in ServiceState::ALL {
            for to in ServiceState::ALL {
                if from != to {
                    q[from.index()][to.index()] = self.rate(from, to);
                }
            }
            q[from.index()][from.index()] = -self.exit_rate(from);
        }
        q
    }
}

pub fn derive_rates(channel: &ChannelParams, policy: &OffloadPolicy) -> ServiceStateRates {
    ServiceStateRates {
        wifi_to_delayed: channel.f_f(),
        delayed_to_cellular: policy.deadline_rate(),
        delayed_to_wifi: channel.f_c(),
        cellular_to_wifi: channel.f_c(),
    }
}

/// Stationary distribution `(pi0, pi1, pi2)` of the service-state chain.
pub fn steady_state(channel: &ChannelParams, policy: &OffloadPolicy) -> [f64; 3] {
    let r = channel.wifi_ratio();
    let tf = policy.tau() * channel.mobility();
    let denom = tf + 1.0 - r;
    [
        (1.0 - r) * tf / denom,
        (1.0 - r) * (1.0 - r) / denom,
        r,
    ]
}

/// Long-run average transmission rate `pi1 mu1 + pi2 mu2`.
pub fn average_rate(params: &SystemParams) -> f64 {
    let pi = steady_state(&params.channel, &params.policy);
    pi[1] * params.mu1() + pi[2] * params.mu2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub stable: bool,
    pub rho: f64,
    pub mu_hat: f64,
}

/// The queue is stable iff `lambda < mu_hat`; `rho = lambda / mu_hat`.
pub fn is_stable(params: &SystemParams) -> Stability {
    let mu_hat = average_rate(params);
    let rho = params.lambda() / mu_hat;
    Stability {
        stable: rho < 1.0,
        rho,
        mu_hat,
    }
}
