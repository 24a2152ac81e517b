//! QoS quantities derived from a stationary vector.

use serde::{Deserialize, Serialize};

use crate::chain::{Fingerprint, OverflowLedger, State, StateSpace};
use crate::channel::CapacityDistribution;
use crate::connection::{acceptance_probability, CacPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosReport {
    pub policy: String,
    /// Connection arrival rate, connections per minute.
    pub rho: f64,
    /// `None` for a deterministic channel.
    pub snr_db: Option<f64>,
    pub p_block: f64,
    pub n_conn: f64,
    pub n_queue: f64,
    /// Packets per frame.
    pub n_drop: f64,
    /// Packets per frame.
    pub lambda_bar: f64,
    pub p_drop: f64,
    /// Packets per frame.
    pub throughput: f64,
    /// Frames; `None` when nothing is transmitted.
    pub delay: Option<f64>,
    /// Single-connection rate times the mean connection count.
    pub lambda_product: f64,
    /// `E[min(R, x)]` under π; equals the throughput in balance.
    pub mean_served: f64,
    pub fingerprint: String,
    pub kernel_fingerprint: Fingerprint,
    pub residual: f64,
    pub iterations: usize,
    pub method: String,
}

pub const CSV_HEADER: &str =
    "policy,rho,snr_db,p_block,n_conn,n_queue,n_drop,lambda_bar,p_drop,throughput,delay,fingerprint";

fn csv_number(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => "NaN".to_string(),
    }
}

impl QosReport {
    pub fn csv_row(&self) -> String {
        let nums = [
            Some(self.rho),
            self.snr_db,
            Some(self.p_block),
            Some(self.n_conn),
            Some(self.n_queue),
            Some(self.n_drop),
            Some(self.lambda_bar),
            Some(self.p_drop),
            Some(self.throughput),
            self.delay,
        ];
        let mut row = self.policy.clone();
        for v in nums {
            row.push(',');
            row.push_str(&csv_number(v));
        }
        row.push(',');
        row.push_str(&self.fingerprint);
        row
    }

    pub fn text_block(&self) -> String {
        let snr = self.snr_db.map_or("deterministic".to_string(), |s| format!("{s} dB"));
        let delay = self.delay.map_or("undefined (no throughput)".to_string(), |d| format!("{d:.6} frames"));
        format!(
            "policy            {}\n\
             rho               {} conn/min\n\
             channel           {}\n\
             blocking prob     {:.6e}\n\
             mean connections  {:.6}\n\
             mean queue        {:.6} packets\n\
             dropped           {:.6e} packets/frame\n\
             offered load      {:.6} packets/frame\n\
             drop prob         {:.6e}\n\
             throughput        {:.6} packets/frame\n\
             delay             {}\n\
             solver            {} ({} iterations, residual {:.2e})\n\
             fingerprint       {}\n",
            self.policy,
            self.rho,
            snr,
            self.p_block,
            self.n_conn,
            self.n_queue,
            self.n_drop,
            self.lambda_bar,
            self.p_drop,
            self.throughput,
            delay,
            self.method,
            self.iterations,
            self.residual,
            self.fingerprint,
        )
    }
}

pub fn marginal(pi: &[f64], space: &StateSpace, state: State) -> Result<f64> {
    Ok(pi[space.checked_index(state)?])
}

/// Stationary probability that an arriving connection is turned away.
pub fn blocking_probability(pi: &[f64], space: &StateSpace, policy: &CacPolicy) -> f64 {
    match policy {
        CacPolicy::Threshold { .. } | CacPolicy::NoCac { .. } => {
            let top = space.conn_cap;
            (0..space.phases)
                .flat_map(|s| (0..=space.queue_cap).map(move |x| (s, x)))
                .map(|(s, x)| {
                    pi[space.index(State {
                        phase: s,
                        queue: x,
                        conns: top,
                    })]
                })
                .sum()
        }
        CacPolicy::QueueAware { .. } => space
            .iter()
            .zip(pi)
            .map(|(st, &p)| (1.0 - acceptance_probability(policy, st.queue, st.conns)) * p)
            .sum(),
    }
}

pub fn mean_connections(pi: &[f64], space: &StateSpace) -> f64 {
    space.iter().zip(pi).map(|(st, &p)| st.conns as f64 * p).sum()
}

pub fn mean_queue_length(pi: &[f64], space: &StateSpace) -> f64 {
    space.iter().zip(pi).map(|(st, &p)| st.queue as f64 * p).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropMetrics {
    pub n_drop: f64,
    pub lambda_bar: f64,
    pub p_drop: f64,
}

/// `arrival_means[s]` is one connection's mean packet count in a frame
/// starting in phase `s`.
pub fn drop_metrics(
    pi: &[f64],
    pi_fingerprint: Fingerprint,
    space: &StateSpace,
    ledger: &OverflowLedger,
    arrival_means: &[f64],
) -> Result<DropMetrics> {
    if ledger.fingerprint != pi_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: pi_fingerprint.to_string(),
            found: ledger.fingerprint.to_string(),
        });
    }
    let n_drop: f64 = pi.iter().zip(&ledger.values).map(|(p, v)| p * v).sum();
    let lambda_bar: f64 = space
        .iter()
        .zip(pi)
        .map(|(st, &p)| p * st.conns as f64 * arrival_means[st.phase])
        .sum();
    let p_drop = if lambda_bar > 0.0 {
        (n_drop / lambda_bar).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(DropMetrics {
        n_drop,
        lambda_bar,
        p_drop,
    })
}

/// `(φ, D)` with `φ = λ̄(1 − p_drop)` and `D = N_x / φ`.
pub fn throughput_and_delay(n_queue: f64, lambda_bar: f64, p_drop: f64) -> (f64, Option<f64>) {
    let phi = lambda_bar * (1.0 - p_drop);
    let delay = (phi > 0.0).then(|| n_queue / phi);
    (phi, delay)
}

/// `E[min(R, x)]` under π.
pub fn mean_served(pi: &[f64], space: &StateSpace, capacity: &CapacityDistribution) -> f64 {
    let per_queue: Vec<f64> = (0..=space.queue_cap).map(|x| capacity.expected_transmitted(x)).collect();
    space.iter().zip(pi).map(|(st, &p)| p * per_queue[st.queue]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass(space: &StateSpace, st: State) -> Vec<f64> {
        let mut pi = vec![0.0; space.len()];
        pi[space.index(st)] = 1.0;
        pi
    }

    #[test]
    fn empty_state_has_zero_means() {
        let space = StateSpace::new(2, 4, 3);
        let pi = point_mass(&space, State { phase: 0, queue: 0, conns: 0 });
        assert_eq!(mean_connections(&pi, &space), 0.0);
        assert_eq!(mean_queue_length(&pi, &space), 0.0);
        let full = point_mass(&space, State { phase: 1, queue: 4, conns: 3 });
        assert_eq!(mean_connections(&full, &space), 3.0);
        assert_eq!(mean_queue_length(&full, &space), 4.0);
    }

    #[test]
    fn single_state_marginal() {
        let space = StateSpace::new(1, 0, 0);
        assert_eq!(marginal(&[1.0], &space, State { phase: 0, queue: 0, conns: 0 }).unwrap(), 1.0);
        assert!(marginal(&[1.0], &space, State { phase: 0, queue: 1, conns: 0 }).is_err());
    }

    #[test]
    fn closed_gate_blocks_everything() {
        let space = StateSpace::new(1, 3, 2);
        let policy = CacPolicy::QueueAware {
            alpha: vec![0.0; 4],
            c_tr: 2,
        };
        let pi = vec![1.0 / space.len() as f64; space.len()];
        assert!((blocking_probability(&pi, &space, &policy) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_blocks_only_at_the_cap() {
        let space = StateSpace::new(1, 1, 2);
        let policy = CacPolicy::Threshold { limit: 2 };
        let pi = vec![0.1, 0.2, 0.3, 0.05, 0.15, 0.2];
        assert!((blocking_probability(&pi, &space, &policy) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nothing_sent_means_undefined_delay() {
        assert_eq!(throughput_and_delay(0.0, 0.0, 0.0), (0.0, None));
        assert_eq!(throughput_and_delay(0.0, 2.0, 0.0), (2.0, Some(0.0)));
        let (phi, d) = throughput_and_delay(3.0, 2.0, 0.25);
        assert_eq!(phi, 1.5);
        assert_eq!(d, Some(2.0));
    }

    #[test]
    fn ledger_from_another_kernel_is_refused() {
        let space = StateSpace::new(1, 0, 0);
        let ledger = OverflowLedger {
            values: vec![0.0],
            fingerprint: Fingerprint(1),
        };
        assert!(matches!(
            drop_metrics(&[1.0], Fingerprint(2), &space, &ledger, &[0.0]),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn csv_uses_nan_for_undefined() {
        let r = QosReport {
            policy: "threshold(1)".into(),
            rho: 0.0,
            snr_db: None,
            p_block: 0.0,
            n_conn: 0.0,
            n_queue: 0.0,
            n_drop: 0.0,
            lambda_bar: 0.0,
            p_drop: 0.0,
            throughput: 0.0,
            delay: None,
            lambda_product: 0.0,
            mean_served: 0.0,
            fingerprint: "abc".into(),
            kernel_fingerprint: Fingerprint(0),
            residual: 0.0,
            iterations: 0,
            method: "direct".into(),
        };
        assert_eq!(r.csv_row(), "threshold(1),0,NaN,0,0,0,0,0,0,0,NaN,abc");
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }
}
