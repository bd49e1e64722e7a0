//! Hybrid embedded chain over state-transition and start-service points.
//!
//! Between two embedded points every interval is exponential, so the
//! service state seen when successive files start service evolves as a
//! linear recursion `x(m) = Q x(m-1)`. `Q` is column stochastic with
//! eigenvalues `{0, beta, 1}`; its fixed point is `theta = (0, theta1,
//! theta2)`, the share of service capacity contributed by each state.

use serde::{Deserialize, Serialize};

use crate::channel::{steady_state, SystemParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::qbd::QueueSolution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddedChain {
    qhat: Mat3,
    beta: f64,
    theta: Vec3,
    /// Probability that the delayed state ends on the deadline (→ cellular).
    to_cellular: f64,
    /// Probability that the delayed state ends on a hotspot (→ Wi-Fi).
    to_wifi: f64,
}

pub fn build_chain(params: &SystemParams) -> EmbeddedChain {
    let rates = params.rates();
    let (mu1, mu2) = (params.mu1(), params.mu2());
    let f20 = rates.wifi_to_delayed;
    let f01 = rates.delayed_to_cellular;
    let f02 = rates.delayed_to_wifi;
    let f12 = rates.cellular_to_wifi;
    let a = f01 / (f01 + f02);
    let b = f02 / (f01 + f02);

    let r = params.channel.wifi_ratio();
    let f = params.channel.mobility();
    let tf = params.tau() * f;
    let beta = r * (1.0 - r) * (1.0 - r + tf) * mu1 * mu2
        / ((1.0 - r).powi(2) * f * mu1
            + r * (1.0 - r + tf) * f * mu2
            + r * (1.0 - r) * (1.0 - r + tf) * mu1 * mu2);

    let qhat = [
        [0.0, 0.0, 0.0],
        [
            beta * a * (1.0 + f20 / mu2),
            beta * (1.0 + a * f20 / mu2),
            beta * a * f20 / mu2,
        ],
        [beta * (f12 / mu1 + b), beta * f12 / mu1, beta * (1.0 + f12 / mu1)],
    ];

    let pi = steady_state(&params.channel, &params.policy);
    let mu = params.service_rates();
    let capacity: f64 = (0..3).map(|j| pi[j] * mu[j]).sum();
    let theta = [0, 1, 2].map(|j| pi[j] * mu[j] / capacity);

    EmbeddedChain {
        qhat,
        beta,
        theta,
        to_cellular: a,
        to_wifi: b,
    }
}

impl EmbeddedChain {
    pub fn qhat(&self) -> Mat3 {
        self.qhat
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn theta(&self) -> Vec3 {
        self.theta
    }

    /// `f_D/(f_D+f_C) = (1-R)/(tau f + 1 - R)`.
    pub fn deadline_share(&self) -> f64 {
        self.to_cellular
    }

    /// `f_C/(f_D+f_C) = tau f/(tau f + 1 - R)`.
    pub fn hotspot_share(&self) -> f64 {
        self.to_wifi
    }

    /// One step of the start-service recursion.
    pub fn advance(&self, x: &Vec3) -> Vec3 {
        linalg::mat_vec(&self.qhat, x)
    }

    /// `Q^m x0` through its spectral closed form (no powers are formed).
    pub fn closed_form_step(&self, m: u32, x0: &Vec3) -> Vec3 {
        if m == 0 {
            return *x0;
        }
        let [_, t1, t2] = self.theta;
        let bm = self.beta.powi(m as i32);
        let mass = x0.iter().sum::<f64>();
        let transient = bm * ((t2 - self.to_wifi) * x0[0] + t2 * x0[1] - t1 * x0[2]);
        [0.0, t1 * mass + transient, t2 * mass - transient]
    }

    /// `Q^T y`, the step used by the elapse-time recursion.
    pub fn advance_transposed(&self, y: &Vec3) -> Vec3 {
        linalg::vec_mat(y, &self.qhat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiHatMethod {
    /// Stochastic recursion aggregated over the arrival-seen queue length.
    Recursion,
    /// The generating-function closed form as it is usually quoted.
    ClosedForm,
    /// The closed form with the `p00` term of the Wi-Fi component using the
    /// hotspot share `tau f/(tau f + 1 - R)`, which restores normalization.
    ClosedFormCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StartServiceProbs {
    pub pi_hat: Vec3,
    pub method: PiHatMethod,
    /// Bound on the truncation error of each component.
    pub error_bound: f64,
}

impl StartServiceProbs {
    pub fn sum(&self) -> f64 {
        self.pi_hat.iter().sum()
    }
}

/// Start-service probabilities by iterating the embedded recursion.
///
/// An arrival that sees `n` files starts service after `n` completions, so
/// it starts in state `j` with probability `[Q^n (p_n / |p_n|)]_j`.
/// Aggregating `sum_n |p_n| Q^n (p_n / |p_n|) = sum_n Q^n p_n` is done by
/// Horner's rule from the top level down, which is linear in `n_max`.
pub fn start_service_recursion(
    sol: &QueueSolution,
    chain: &EmbeddedChain,
    n_max: usize,
) -> Result<StartServiceProbs> {
    sol.require_converged()?;
    let horizon = n_max.min(sol.truncation_level());
    let probs = sol.probs();
    let mut acc = probs[horizon];
    for n in (0..horizon).rev() {
        let stepped = chain.advance(&acc);
        acc = [0, 1, 2].map(|j| stepped[j] + probs[n][j]);
    }
    let dropped: f64 = (horizon + 1..=sol.truncation_level())
        .map(|n| sol.level_mass(n))
        .sum();
    Ok(StartServiceProbs {
        pi_hat: acc,
        method: PiHatMethod::Recursion,
        error_bound: sol.tail_mass() + dropped,
    })
}

/// Per-level conditional start-service vectors `x_n(m)` for `m = 0..=n`,
/// starting from `p_n / |p_n|`. Used for inspection; the aggregate comes
/// from [`start_service_recursion`].
pub fn start_service_path(sol: &QueueSolution, chain: &EmbeddedChain, n: usize) -> Vec<Vec3> {
    let mass = sol.level_mass(n);
    let mut x = if mass > 0.0 {
        [0, 1, 2].map(|j| sol.prob(n, j) / mass)
    } else {
        [0.0; 3]
    };
    let mut path = Vec::with_capacity(n + 1);
    path.push(x);
    for _ in 0..n {
        x = chain.advance(&x);
        path.push(x);
    }
    path
}

fn closed_form(sol: &QueueSolution, chain: &EmbeddedChain, corrected: bool) -> Result<StartServiceProbs> {
    let beta = chain.beta();
    let g = |j| sol.generating_function(j, beta);
    let (g0, g1, g2) = (g(0)?, g(1)?, g(2)?);
    let [_, t1, t2] = chain.theta();
    let p00 = sol.prob(0, 0);
    let b = chain.hotspot_share();
    let mix = (t2 - b) * g0.value + t2 * g1.value - t1 * g2.value;
    let wifi_p00 = if corrected { b } else { chain.deadline_share() };
    Ok(StartServiceProbs {
        pi_hat: [
            p00,
            t1 + mix - chain.deadline_share() * p00,
            t2 - mix - wifi_p00 * p00,
        ],
        method: if corrected {
            PiHatMethod::ClosedFormCorrected
        } else {
            PiHatMethod::ClosedForm
        },
        error_bound: g0.error_bound + g1.error_bound + g2.error_bound,
    })
}

/// The generating-function closed form as usually quoted, evaluated as is.
///
/// Its components sum to `1 + p00 (1 - 2(1-R)/(tau f + 1 - R))`, not 1; see
/// [`start_service_closed_form_corrected`].
pub fn start_service_closed_form(sol: &QueueSolution, chain: &EmbeddedChain) -> Result<StartServiceProbs> {
    sol.require_converged()?;
    closed_form(sol, chain, false)
}

/// The closed form with the Wi-Fi component's `p00` coefficient replaced by
/// the hotspot share. Agrees with the recursion to truncation precision.
pub fn start_service_closed_form_corrected(
    sol: &QueueSolution,
    chain: &EmbeddedChain,
) -> Result<StartServiceProbs> {
    sol.require_converged()?;
    closed_form(sol, chain, true)
}

/// Conditional mean service times and their mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceTimes {
    /// `E[T_j]`: mean service time of a file that starts in state `j`.
    pub by_state: Vec3,
    /// `E[T] = sum_j pi_hat_j E[T_j]`.
    pub mean: f64,
}

/// `E[T_j]` from the explicit rational expressions.
pub fn service_times_closed_form(params: &SystemParams) -> Vec3 {
    let r = params.channel.wifi_ratio();
    let f = params.channel.mobility();
    let tau = params.tau();
    let tf = tau * f;
    let (mu1, mu2) = (params.mu1(), params.mu2());
    let q = 1.0 - r;
    let den = q * q * f * mu1 + r * (tf + q) * f * mu2 + r * q * (tf + q) * mu1 * mu2;
    let common = tau * f * f + q * f;
    [
        (common + q * tf * mu1 + r * q * (tf + q) * mu2 + r * q * q * tau * mu1 * mu2) / den,
        (common + r * q * (tf + q) * mu2) / den,
        (common + r * q * q * mu1 + q * tf * mu1) / den,
    ]
}

/// `E[T_j]` by solving the first-step equations directly.
pub fn service_times_direct(params: &SystemParams) -> Result<Vec3> {
    let rates = params.rates();
    let (mu1, mu2) = (params.mu1(), params.mu2());
    let f01 = rates.delayed_to_cellular;
    let f02 = rates.delayed_to_wifi;
    let f12 = rates.cellular_to_wifi;
    let f20 = rates.wifi_to_delayed;
    let out0 = f01 + f02;
    let out1 = mu1 + f12;
    let out2 = mu2 + f20;
    let system = [
        [1.0, -f01 / out0, -f02 / out0],
        [0.0, 1.0, -f12 / out1],
        [-f20 / out2, 0.0, 1.0],
    ];
    let rhs = [1.0 / out0, 1.0 / out1, 1.0 / out2];
    linalg::solve(&system, &rhs)
        .ok_or_else(|| Error::SingularSystem("conditional service-time equations".into()))
}

/// Conditional service times from the closed forms, checked against the
/// direct solve, mixed with the supplied start-service probabilities.
pub fn mean_service_times(params: &SystemParams, pi_hat: &Vec3) -> Result<ServiceTimes> {
    let by_state = service_times_closed_form(params);
    let direct = service_times_direct(params)?;
    debug_assert!(
        (0..3).all(|j| (by_state[j] - direct[j]).abs() <= 1e-10 * direct[j].abs().max(1.0)),
        "closed form {by_state:?} vs direct {direct:?}"
    );
    Ok(ServiceTimes {
        by_state,
        mean: linalg::dot(pi_hat, &by_state),
    })
}
