//! Joint stationary distribution of (queue length, service state).
//!
//! The process `(n, j)` with `n` files in the system and service state `j`
//! is a level-independent quasi-birth-death chain with three phases per
//! level:
//!
//! * arrivals `(n, j) → (n+1, j)` at rate `lambda`,
//! * departures `(n, j) → (n-1, j)` at rate `mu_j` for `n ≥ 1`,
//! * modulation `(n, i) → (n, j)` at the service-state rates, at every level
//!   including the empty one.
//!
//! The chain is truncated at level `N` with a reflecting top (arrivals are
//! dropped there) and solved exactly by linear level reduction:
//! `x_n = x_{n-1} R_n` with `R_N = -A0 (A1_N)^-1` and
//! `R_n = -A0 (A1_n + R_{n+1} A2)^-1`, followed by the 3×3 boundary problem
//! `x_0 (A1_0 + R_1 A2) = 0`. The cost is linear in `N`. `N` doubles until
//! the estimated mass beyond the truncation is below tolerance and the
//! headline scalars stop moving.

use std::io::Write;

use serde::Serialize;

use crate::channel::{average_rate, SystemParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

/// Block description of the level-structured generator.
#[derive(Debug, Clone, PartialEq)]
pub struct QbdGenerator {
    lambda: f64,
    service: Vec3,
    modulation: Mat3,
    mu_hat: f64,
}

pub fn build_generator(params: &SystemParams) -> QbdGenerator {
    QbdGenerator {
        lambda: params.lambda(),
        service: params.service_rates(),
        modulation: params.rates().generator(),
        mu_hat: average_rate(params),
    }
}

impl QbdGenerator {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn service_rates(&self) -> Vec3 {
        self.service
    }

    /// Service-state generator shared by every level.
    pub fn modulation(&self) -> Mat3 {
        self.modulation
    }

    pub fn mean_service_rate(&self) -> f64 {
        self.mu_hat
    }

    pub fn utilization(&self) -> f64 {
        self.lambda / self.mu_hat
    }

    /// Level-up block `A0 = lambda I`.
    pub fn up(&self) -> Mat3 {
        linalg::scale(&linalg::identity(), self.lambda)
    }

    /// Level-down block `A2 = diag(0, mu1, mu2)`.
    pub fn down(&self) -> Mat3 {
        linalg::diag(self.service)
    }

    /// Local block at `level`, with diagonal compensation for the outgoing
    /// level transitions. `top` is the truncation level, if any; no
    /// arrivals leave it.
    pub fn local(&self, level: usize, top: Option<usize>) -> Mat3 {
        let mut m = self.modulation;
        for j in 0..3 {
            if top != Some(level) {
                m[j][j] -= self.lambda;
            }
            if level > 0 {
                m[j][j] -= self.service[j];
            }
        }
        m
    }

    /// Dense generator of the chain truncated at `top`, states ordered
    /// `3n + j`. Intended for small diagnostics and tests.
    pub fn assemble_dense(&self, top: usize) -> Vec<Vec<f64>> {
        let size = 3 * (top + 1);
        let mut q = vec![vec![0.0; size]; size];
        let up = self.up();
        let down = self.down();
        for n in 0..=top {
            let blocks = [
                (n.checked_sub(1), down),
                (Some(n), self.local(n, Some(top))),
                ((n < top).then_some(n + 1), up),
            ];
            for (target, block) in blocks {
                let Some(m) = target else { continue };
                for i in 0..3 {
                    for j in 0..3 {
                        q[3 * n + i][3 * m + j] += block[i][j];
                    }
                }
            }
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target for the estimated probability mass above the truncation level.
    pub tol: f64,
    /// Relative change allowed in `p00`, `p02` and the mean queue length
    /// between successive truncation levels.
    pub rel_change: f64,
    /// Hard cap on the truncation level.
    pub max_level: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            rel_change: 1e-8,
            max_level: 1 << 20,
        }
    }
}

/// Truncated stationary distribution `p[n][j]`, `0 ≤ n ≤ N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueSolution {
    probs: Vec<Vec3>,
    tail_mass: f64,
    converged: bool,
    lambda: f64,
}

/// A truncated generating-function value and its truncation error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub error_bound: f64,
}

impl QueueSolution {
    pub fn truncation_level(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `p[n][j]` for every retained level.
    pub fn probs(&self) -> &[Vec3] {
        &self.probs
    }

    pub fn prob(&self, n: usize, j: usize) -> f64 {
        self.probs.get(n).map_or(0.0, |p| p[j])
    }

    /// `p_n = sum_j p[n][j]`.
    pub fn level_mass(&self, n: usize) -> f64 {
        self.probs.get(n).map_or(0.0, |p| p.iter().sum())
    }

    /// `sum_n p[n][j]`.
    pub fn marginal(&self, j: usize) -> f64 {
        self.probs.iter().map(|p| p[j]).sum()
    }

    /// Mean number of files in the system, including the one in service.
    pub fn mean_queue_length(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p.iter().sum::<f64>())
            .sum()
    }

    /// `(p00, p01, p02)`.
    pub fn empty_probabilities(&self) -> Vec3 {
        self.probs[0]
    }

    /// `G_j(z) = sum_n p[n][j] z^n` truncated at `N`.
    pub fn generating_function(&self, j: usize, z: f64) -> Result<SeriesValue> {
        if !(0.0..1.0).contains(&z) {
            return Err(Error::Domain(format!(
                "generating function needs 0 <= z < 1, got {z}"
            )));
        }
        if j > 2 {
            return Err(Error::Domain(format!("no service state {j}")));
        }
        let mut power = 1.0;
        let mut value = 0.0;
        for p in &self.probs {
            value += p[j] * power;
            power *= z;
        }
        Ok(SeriesValue {
            value,
            error_bound: self.tail_mass * z.powi(self.truncation_level() as i32),
        })
    }

    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Convergence {
                level: self.truncation_level(),
                tail_mass: self.tail_mass,
            })
        }
    }

    /// Writes `n,p0,p1,p2` rows, full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("writing distribution: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "p0", "p1", "p2"]).map_err(io)?;
        for (n, p) in self.probs.iter().enumerate() {
            w.serialize((n, p[0], p[1], p[2])).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::Domain(format!("writing distribution: {e}")))
    }
}

/// Solves the chain truncated at exactly `top` levels.
pub fn solve_truncated(gen: &QbdGenerator, top: usize) -> Result<QueueSolution> {
    let singular = |level: usize| Error::SingularSystem(format!("level {level} block"));
    let up = gen.up();
    let down = gen.down();

    // rate[n] holds R_n for n = 1..=top; index 0 unused
    let mut rate = vec![linalg::ZERO; top + 1];
    if top > 0 {
        let inv = linalg::inverse(&gen.local(top, Some(top))).ok_or_else(|| singular(top))?;
        rate[top] = linalg::scale(&linalg::mul(&up, &inv), -1.0);
        for n in (1..top).rev() {
            let block = linalg::add(
                &gen.local(n, Some(top)),
                &linalg::mul(&rate[n + 1], &down),
            );
            let inv = linalg::inverse(&block).ok_or_else(|| singular(n))?;
            rate[n] = linalg::scale(&linalg::mul(&up, &inv), -1.0);
        }
    }

    let mut boundary = gen.local(0, Some(top));
    if top > 0 {
        boundary = linalg::add(&boundary, &linalg::mul(&rate[1], &down));
    }
    // x0 B = 0 with the first balance equation replaced by x0 . 1 = 1
    let mut system = linalg::transpose(&boundary);
    system[0] = [1.0; 3];
    let x0 = linalg::solve(&system, &[1.0, 0.0, 0.0]).ok_or_else(|| singular(0))?;

    let mut probs = Vec::with_capacity(top + 1);
    probs.push(x0.map(|v| v.max(0.0)));
    for n in 1..=top {
        let next = linalg::vec_mat(&probs[n - 1], &rate[n]);
        probs.push(next.map(|v| v.max(0.0)));
    }
    let total: f64 = probs.iter().flatten().sum();
    for p in &mut probs {
        for v in p.iter_mut() {
            *v /= total;
        }
    }

    let tail_mass = estimate_tail(&probs);
    Ok(QueueSolution {
        probs,
        tail_mass,
        converged: false,
        lambda: gen.lambda(),
    })
}

/// Mass expected above the top level, extrapolating the geometric decay
/// observed in the third quarter of the levels (the reflecting top distorts
/// the last few). Never smaller than the mass held at the top level itself.
fn estimate_tail(probs: &[Vec3]) -> f64 {
    let top = probs.len() - 1;
    let mass = |n: usize| probs[n].iter().sum::<f64>();
    let at_top = mass(top);
    if top < 8 {
        return if at_top > 0.0 { 1.0 } else { 0.0 };
    }
    let (lo, hi) = (top / 2, 3 * top / 4);
    let (m_lo, m_hi) = (mass(lo), mass(hi));
    if m_lo == 0.0 || m_hi == 0.0 {
        return at_top;
    }
    let ratio = (m_hi / m_lo).powf(1.0 / (hi - lo) as f64);
    if ratio >= 1.0 {
        return 1.0;
    }
    let extrapolated = m_hi * ratio.powi((top - hi) as i32) * ratio / (1.0 - ratio);
    extrapolated.max(at_top)
}

fn initial_level(rho: f64) -> usize {
    let by_load = (20.0 / (1.0 - rho)).ceil();
    if by_load.is_finite() && by_load < (usize::MAX / 4) as f64 {
        (by_load as usize).max(64)
    } else {
        usize::MAX / 4
    }
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) || (a - b).abs() < 1e-300
}

/// Adaptive solve: doubles the truncation level until the tail mass is
/// below `opts.tol` and `p00`, `p02` and the mean queue length agree with the
/// previous level to `opts.rel_change`.
pub fn solve_stationary(gen: &QbdGenerator, opts: &SolverOptions) -> Result<QueueSolution> {
    let rho = gen.utilization();
    if !(rho < 1.0) {
        return Err(Error::Instability {
            lambda: gen.lambda(),
            mu_hat: gen.mean_service_rate(),
            rho,
        });
    }
    let mut level = initial_level(rho);
    if level > opts.max_level {
        return Err(Error::Convergence {
            level: opts.max_level,
            tail_mass: 1.0,
        });
    }
    let mut previous: Option<(f64, f64, f64)> = None;
    loop {
        let mut sol = solve_truncated(gen, level)?;
        let scalars = (sol.probs[0][0], sol.probs[0][2], sol.mean_queue_length());
        let settled = previous.is_some_and(|(a, b, c)| {
            rel_close(a, scalars.0, opts.rel_change)
                && rel_close(b, scalars.1, opts.rel_change)
                && rel_close(c, scalars.2, opts.rel_change)
        });
        if sol.tail_mass < opts.tol && settled {
            sol.converged = true;
            return Ok(sol);
        }
        if level.saturating_mul(2) > opts.max_level {
            return Err(Error::Convergence {
                level,
                tail_mass: sol.tail_mass,
            });
        }
        previous = Some(scalars);
        level *= 2;
    }
}

/// Convenience wrapper: build and solve with default options.
pub fn solve(params: &SystemParams) -> Result<QueueSolution> {
    solve_stationary(&build_generator(params), &SolverOptions::default())
}
