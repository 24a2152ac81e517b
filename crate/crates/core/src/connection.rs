//! Connection-level dynamics: Poisson connection arrivals, exponential
//! durations discretized per frame, and the admission policies.
//!
//! Within one frame, departures are drawn from the connections present at the
//! frame start, newly admitted connections cannot leave in the same frame,
//! and every admission decision sees the frame-start queue length.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arrival::poisson_pmf;
use crate::error::{Error, Result};
use crate::linalg::Dense;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionParams {
    /// Connections per minute.
    pub arrival_rate: f64,
    /// Minutes.
    pub mean_duration: f64,
    /// Minutes.
    pub frame_length: f64,
}

impl ConnectionParams {
    pub fn new(arrival_rate: f64, mean_duration: f64, frame_length: f64) -> Result<Self> {
        if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
            return Err(Error::Parameter {
                name: "arrival_rate",
                reason: format!("must be finite and >= 0, got {arrival_rate}"),
            });
        }
        if !(mean_duration > 0.0) {
            return Err(Error::Parameter {
                name: "mean_duration",
                reason: format!("must be > 0, got {mean_duration}"),
            });
        }
        if !(frame_length > 0.0 && frame_length.is_finite()) {
            return Err(Error::Parameter {
                name: "frame_length",
                reason: format!("must be finite and > 0, got {frame_length}"),
            });
        }
        Ok(Self {
            arrival_rate,
            mean_duration,
            frame_length,
        })
    }

    /// Expected connection arrivals in one frame.
    pub fn arrivals_per_frame(&self) -> f64 {
        self.arrival_rate * self.frame_length
    }

    /// Probability that a given connection ends during one frame.
    pub fn departure_probability(&self) -> f64 {
        -(-self.frame_length / self.mean_duration).exp_m1()
    }
}

/// Caps on per-frame connection events; the excess mass is folded into the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionLimits {
    pub max_arrivals: usize,
    pub max_departures: usize,
}

impl Default for ConnectionLimits {
    fn default() -> Self {
        Self {
            max_arrivals: 3,
            max_departures: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CacPolicy {
    /// Admit while the ongoing count stays at or below `limit`.
    Threshold { limit: usize },
    /// Admit with probability `alpha[x]` for queue length `x`, never beyond `c_tr`.
    QueueAware { alpha: Vec<f64>, c_tr: usize },
    /// Admit everything up to the truncation `c_tr`.
    NoCac { c_tr: usize },
}

impl CacPolicy {
    /// Step acceptance vector: 1 below `b_th` packets, 0 from `b_th` on.
    pub fn queue_aware_step(b_th: usize, queue_cap: usize, c_tr: usize) -> Self {
        let alpha = (0..=queue_cap).map(|x| if x < b_th { 1.0 } else { 0.0 }).collect();
        CacPolicy::QueueAware { alpha, c_tr }
    }

    /// Largest reachable number of ongoing connections, `C'`.
    pub fn conn_cap(&self) -> usize {
        match self {
            CacPolicy::Threshold { limit } => *limit,
            CacPolicy::QueueAware { c_tr, .. } | CacPolicy::NoCac { c_tr } => *c_tr,
        }
    }

    pub fn depends_on_queue(&self) -> bool {
        matches!(self, CacPolicy::QueueAware { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CacPolicy::Threshold { .. } => "threshold",
            CacPolicy::QueueAware { .. } => "queue_aware",
            CacPolicy::NoCac { .. } => "none",
        }
    }

    pub fn validate(&self, queue_cap: usize) -> Result<()> {
        let cap = self.conn_cap();
        if cap == 0 {
            return Err(Error::Parameter {
                name: "policy",
                reason: "connection cap must be at least 1".into(),
            });
        }
        if let CacPolicy::QueueAware { alpha, .. } = self {
            if alpha.len() != queue_cap + 1 {
                return Err(Error::Parameter {
                    name: "alpha",
                    reason: format!("has {} entries, expected X + 1 = {}", alpha.len(), queue_cap + 1),
                });
            }
            if let Some((x, a)) = alpha.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
                return Err(Error::Parameter {
                    name: "alpha",
                    reason: format!("entry {x} = {a} is outside [0, 1]"),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for CacPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacPolicy::Threshold { limit } => write!(f, "threshold({limit})"),
            CacPolicy::NoCac { c_tr } => write!(f, "none({c_tr})"),
            CacPolicy::QueueAware { alpha, c_tr } => {
                // Recognize the step shape so labels stay short.
                let b_th = alpha.iter().position(|&a| a == 0.0).unwrap_or(alpha.len());
                let is_step = alpha[..b_th].iter().all(|&a| a == 1.0) && alpha[b_th..].iter().all(|&a| a == 0.0);
                if is_step {
                    write!(f, "queue_aware({b_th};c_tr={c_tr})")
                } else {
                    write!(f, "queue_aware_vector(c_tr={c_tr})")
                }
            }
        }
    }
}

/// `e^{-ρT} (ρT)^n / n!`.
pub fn poisson_frame_probability(rate: f64, horizon: f64, count: usize) -> f64 {
    poisson_pmf(rate * horizon, count)
}

/// Binomial(c, q) mass over the number of connections ending in one frame.
pub fn departure_distribution(ongoing: usize, params: &ConnectionParams) -> Vec<f64> {
    binomial_pmf(ongoing, params.departure_probability())
}

pub(crate) fn binomial_pmf(n: usize, q: f64) -> Vec<f64> {
    if q <= 0.0 {
        let mut out = vec![0.0; n + 1];
        out[0] = 1.0;
        return out;
    }
    if q >= 1.0 {
        let mut out = vec![0.0; n + 1];
        out[n] = 1.0;
        return out;
    }
    let ln_q = q.ln();
    let ln_p = (-q).ln_1p();
    let mut ln_choose = 0.0;
    (0..=n)
        .map(|d| {
            if d > 0 {
                ln_choose += ((n - d + 1) as f64 / d as f64).ln();
            }
            (ln_choose + d as f64 * ln_q + (n - d) as f64 * ln_p).exp()
        })
        .collect()
}

/// Probability that a connection arriving when the queue holds `queue_len`
/// packets and `ongoing` connections are active is admitted.
pub fn acceptance_probability(policy: &CacPolicy, queue_len: usize, ongoing: usize) -> f64 {
    match policy {
        CacPolicy::Threshold { limit } => f64::from(u8::from(ongoing < *limit)),
        CacPolicy::NoCac { c_tr } => f64::from(u8::from(ongoing < *c_tr)),
        CacPolicy::QueueAware { alpha, c_tr } => {
            if ongoing < *c_tr {
                alpha[queue_len]
            } else {
                0.0
            }
        }
    }
}

/// Connection arrival count per frame, capped at `cap` with the tail folded in.
pub fn capped_arrival_distribution(params: &ConnectionParams, cap: usize) -> Vec<f64> {
    let mean = params.arrivals_per_frame();
    let mut out: Vec<f64> = (0..cap).map(|n| poisson_pmf(mean, n)).collect();
    let head: f64 = out.iter().sum();
    out.push((1.0 - head).max(0.0));
    out
}

/// Binomial departures folded at `cap`.
pub fn capped_departure_distribution(ongoing: usize, params: &ConnectionParams, cap: usize) -> Vec<f64> {
    let full = departure_distribution(ongoing, params);
    if full.len() <= cap + 1 {
        return full;
    }
    let mut out = full[..cap].to_vec();
    out.push(full[cap..].iter().sum());
    out
}

/// Distribution of admitted connections when `arrivals` connections show up
/// one after another, each checked against the count admitted so far.
pub fn admitted_distribution(policy: &CacPolicy, queue_len: usize, ongoing: usize, arrivals: usize) -> Vec<f64> {
    let mut dist = vec![0.0; arrivals + 1];
    dist[0] = 1.0;
    for step in 0..arrivals {
        for k in (0..=step).rev() {
            let mass = dist[k];
            if mass == 0.0 {
                continue;
            }
            let p = acceptance_probability(policy, queue_len, ongoing + k);
            dist[k + 1] += mass * p;
            dist[k] = mass * (1.0 - p);
        }
    }
    dist
}

/// One-frame transition matrix of the ongoing-connection count, given the
/// frame-start queue length (only the queue-aware policy looks at it).
pub fn connection_transition_matrix(
    policy: &CacPolicy,
    queue_len: usize,
    params: &ConnectionParams,
    limits: &ConnectionLimits,
) -> Dense {
    let cap = policy.conn_cap();
    let arrivals = capped_arrival_distribution(params, limits.max_arrivals);
    let mut q = Dense::zeros(cap + 1, cap + 1);
    for c in 0..=cap {
        let departures = capped_departure_distribution(c, params, limits.max_departures);
        let mut admitted = vec![0.0; limits.max_arrivals + 1];
        for (n, &pn) in arrivals.iter().enumerate() {
            if pn == 0.0 {
                continue;
            }
            for (k, pk) in admitted_distribution(policy, queue_len, c, n).into_iter().enumerate() {
                admitted[k] += pn * pk;
            }
        }
        for (d, &pd) in departures.iter().enumerate() {
            if pd == 0.0 {
                continue;
            }
            for (k, &pk) in admitted.iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                let target = (c + k).saturating_sub(d).min(cap);
                q[(c, target)] += pd * pk;
            }
        }
    }
    q
}

/// Expected connections rejected in one frame from a state with `ongoing`
/// connections, under the same sequential admission rule.
pub fn expected_rejections(
    policy: &CacPolicy,
    queue_len: usize,
    ongoing: usize,
    params: &ConnectionParams,
    limits: &ConnectionLimits,
) -> f64 {
    capped_arrival_distribution(params, limits.max_arrivals)
        .iter()
        .enumerate()
        .map(|(n, pn)| {
            let admitted: f64 = admitted_distribution(policy, queue_len, ongoing, n)
                .iter()
                .enumerate()
                .map(|(k, pk)| k as f64 * pk)
                .sum();
            pn * (n as f64 - admitted)
        })
        .sum()
}
