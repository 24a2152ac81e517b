//! Frame-by-frame Monte Carlo of the same model the chain describes.
//!
//! Per frame, from `(s, x, c)` at the frame start:
//!
//! 1. each of the `c` connections draws a batch from the count distribution
//!    of phase `s`;
//! 2. each subchannel draws its rate, `R` is their sum, and
//!    `l = min(R, x)` packets leave in FIFO order;
//! 3. the new packets join the queue, those beyond `X` are dropped;
//! 4. the phase moves by `Φ`;
//! 5. up to `max_arrivals` connections arrive and are admitted one by one
//!    against the frame-start `x`; up to `max_departures` of the `c`
//!    frame-start connections leave.
//!
//! Packets carry their arrival frame, so the sojourn estimate does not rely
//! on Little's law.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelMode;
use crate::connection::{acceptance_probability, CacPolicy, ConnectionLimits};
use crate::error::{Error, Result};
use crate::metrics::QosReport;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub warmup_frames: u64,
    pub measure_frames: u64,
    pub replications: usize,
    pub base_seed: u64,
}

impl SimConfig {
    /// Uses the scenario's `[sim]` section.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let s = scenario.sim_settings()?;
        let cfg = Self {
            scenario: scenario.clone(),
            warmup_frames: s.warmup_frames,
            measure_frames: s.measure_frames,
            replications: s.replications,
            base_seed: s.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measure_frames < 1000 {
            return Err(Error::Parameter {
                name: "measure_frames",
                reason: format!("must be at least 1000, got {}", self.measure_frames),
            });
        }
        if self.replications < 3 {
            return Err(Error::Parameter {
                name: "replications",
                reason: format!("must be at least 3, got {}", self.replications),
            });
        }
        Ok(())
    }
}

/// Raw tallies of one replication's measurement window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub frames: u64,
    pub offered: u64,
    pub accepted: u64,
    pub blocked: u64,
    pub departed: u64,
    pub arrived: u64,
    pub dropped: u64,
    pub served: u64,
    /// Sum over frames of the frame-start queue length.
    pub queue_area: u64,
    /// Sum over frames of the frame-start connection count.
    pub conn_area: u64,
    /// Sum of frames spent in the queue by the packets served.
    pub sojourn_sum: u64,
    pub queue_start: u64,
    pub queue_end: u64,
    pub conn_start: u64,
    pub conn_end: u64,
}

impl Counts {
    pub const CSV_HEADER: &'static str = "replication,frames,offered,accepted,blocked,departed,arrived,dropped,served,\
queue_area,conn_area,sojourn_sum,queue_start,queue_end,conn_start,conn_end";

    pub fn csv_row(&self, replication: usize) -> String {
        format!(
            "{replication},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.frames,
            self.offered,
            self.accepted,
            self.blocked,
            self.departed,
            self.arrived,
            self.dropped,
            self.served,
            self.queue_area,
            self.conn_area,
            self.sojourn_sum,
            self.queue_start,
            self.queue_end,
            self.conn_start,
            self.conn_end
        )
    }

    /// `arrived = served + dropped + queue_end − queue_start`.
    pub fn packets_balance(&self) -> bool {
        self.arrived + self.queue_start == self.served + self.dropped + self.queue_end
    }

    /// `accepted − departed = conn_end − conn_start`.
    pub fn connections_balance(&self) -> bool {
        self.accepted + self.conn_start == self.departed + self.conn_end
    }

    fn metric(&self, m: Metric) -> Option<f64> {
        let frames = self.frames as f64;
        match m {
            Metric::PBlock => (self.offered > 0).then(|| self.blocked as f64 / self.offered as f64),
            Metric::NConn => Some(self.conn_area as f64 / frames),
            Metric::NQueue => Some(self.queue_area as f64 / frames),
            Metric::NDrop => Some(self.dropped as f64 / frames),
            Metric::LambdaBar => Some(self.arrived as f64 / frames),
            Metric::PDrop => Some(if self.arrived > 0 {
                self.dropped as f64 / self.arrived as f64
            } else {
                0.0
            }),
            Metric::Throughput => Some(self.served as f64 / frames),
            Metric::Delay => (self.served > 0).then(|| self.sojourn_sum as f64 / self.served as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    PBlock,
    NConn,
    NQueue,
    NDrop,
    LambdaBar,
    PDrop,
    Throughput,
    Delay,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::PBlock,
        Metric::NConn,
        Metric::NQueue,
        Metric::NDrop,
        Metric::LambdaBar,
        Metric::PDrop,
        Metric::Throughput,
        Metric::Delay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PBlock => "p_block",
            Metric::NConn => "n_conn",
            Metric::NQueue => "n_queue",
            Metric::NDrop => "n_drop",
            Metric::LambdaBar => "lambda_bar",
            Metric::PDrop => "p_drop",
            Metric::Throughput => "throughput",
            Metric::Delay => "delay",
        }
    }

    /// Whether `compare` gates on this metric. The offered load is shown but
    /// not gated: it is a model input more than an output.
    pub fn gated(self) -> bool {
        self != Metric::LambdaBar
    }

    pub fn of_report(self, r: &QosReport) -> Option<f64> {
        match self {
            Metric::PBlock => Some(r.p_block),
            Metric::NConn => Some(r.n_conn),
            Metric::NQueue => Some(r.n_queue),
            Metric::NDrop => Some(r.n_drop),
            Metric::LambdaBar => Some(r.lambda_bar),
            Metric::PDrop => Some(r.p_drop),
            Metric::Throughput => Some(r.throughput),
            Metric::Delay => r.delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// `1.96 · stderr`.
    pub half_width: f64,
    /// Replications where the metric was defined.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosEstimate {
    pub fingerprint: String,
    pub policy: String,
    /// `None` where a metric was undefined in every replication.
    pub metrics: Vec<(Metric, Option<MetricEstimate>)>,
    pub totals: Counts,
    pub replications: Vec<Counts>,
}

impl QosEstimate {
    pub fn get(&self, m: Metric) -> Option<MetricEstimate> {
        self.metrics.iter().find(|(k, _)| *k == m).and_then(|(_, e)| *e)
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from(Counts::CSV_HEADER);
        out.push('\n');
        for (i, c) in self.replications.iter().enumerate() {
            out.push_str(&c.csv_row(i));
            out.push('\n');
        }
        out
    }

    pub fn text_block(&self) -> String {
        let mut out = format!("policy {}  ({} replications)\n", self.policy, self.replications.len());
        for (m, e) in &self.metrics {
            match e {
                Some(e) => {
                    let _ = writeln!(out, "{:<11} {:.6e} ± {:.2e}", m.name(), e.mean, e.half_width);
                }
                None => {
                    let _ = writeln!(out, "{:<11} undefined", m.name());
                }
            }
        }
        out
    }
}

fn summarize(values: &[f64]) -> Option<MetricEstimate> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(MetricEstimate {
        mean,
        stderr,
        half_width: 1.96 * stderr,
        samples: n,
    })
}

/// Samplers shared by all replications.
struct Model {
    queue_cap: usize,
    policy: CacPolicy,
    limits: ConnectionLimits,
    batch: Vec<Option<WeightedAliasIndex<f64>>>,
    phase: Vec<WeightedAliasIndex<f64>>,
    subchannels: usize,
    rate: Option<WeightedAliasIndex<f64>>,
    fixed_rate: usize,
    conn_arrivals: Option<Poisson<f64>>,
    departure_prob: f64,
}

fn alias(weights: &[f64]) -> Result<Option<WeightedAliasIndex<f64>>> {
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(None);
    }
    WeightedAliasIndex::new(weights.to_vec())
        .map(Some)
        .map_err(|e| Error::Structure(format!("cannot sample from weights: {e}")))
}

impl Model {
    fn new(scenario: &Scenario) -> Result<Self> {
        let kernel = scenario
            .arrival
            .frame_count_kernel(scenario.frame_length(), scenario.max_batch)?;
        let phases = kernel.num_phases();
        let batch = (0..phases)
            .map(|s| {
                let m = kernel.marginal(s);
                // A frame with no arrivals at all needs no sampler.
                if m[1..].iter().all(|&p| p == 0.0) {
                    Ok(None)
                } else {
                    alias(&m)
                }
            })
            .collect::<Result<_>>()?;
        let phi = kernel.phase_transition();
        let phase = (0..phases)
            .map(|s| alias(phi.row(s)).map(|a| a.expect("phase rows carry mass")))
            .collect::<Result<_>>()?;
        let (rate, fixed_rate) = match &scenario.channel.mode {
            ChannelMode::Deterministic { packets } => (None, *packets),
            ChannelMode::Stochastic { .. } => (alias(&scenario.channel.subchannel_rate_distribution()?)?, 0),
        };
        let params = scenario.connection_params()?;
        let mean = params.arrivals_per_frame();
        let conn_arrivals = if mean > 0.0 {
            Some(Poisson::new(mean).map_err(|e| Error::Structure(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            queue_cap: scenario.queue_cap,
            policy: scenario.policy.clone(),
            limits: scenario.limits,
            batch,
            phase,
            subchannels: scenario.channel.num_subchannels,
            rate,
            fixed_rate,
            conn_arrivals,
            departure_prob: params.departure_probability(),
        })
    }

    fn run(&self, rng: &mut ChaCha8Rng, warmup: u64, measure: u64) -> Counts {
        let mut s = 0usize;
        let mut c = 0usize;
        let mut x = 0usize;
        let mut fifo: VecDeque<(u64, usize)> = VecDeque::new();
        let mut counts = Counts::default();

        for t in 0..warmup + measure {
            let on = t >= warmup;
            if t == warmup {
                counts.queue_start = x as u64;
                counts.conn_start = c as u64;
            }
            if on {
                counts.frames += 1;
                counts.queue_area += x as u64;
                counts.conn_area += c as u64;
            }
            let x_start = x;

            let mut arrivals = 0usize;
            if let Some(batch) = &self.batch[s] {
                for _ in 0..c {
                    arrivals += batch.sample(rng);
                }
            }

            let capacity = match &self.rate {
                Some(rate) => (0..self.subchannels).map(|_| rate.sample(rng)).sum(),
                None => self.fixed_rate * self.subchannels,
            };
            let sent = capacity.min(x);
            x -= sent;
            let mut left = sent;
            while left > 0 {
                let front = fifo.front_mut().expect("queue holds the backlog");
                let take = front.1.min(left);
                if on {
                    counts.sojourn_sum += (t - front.0) * take as u64;
                }
                front.1 -= take;
                left -= take;
                if front.1 == 0 {
                    fifo.pop_front();
                }
            }

            let kept = arrivals.min(self.queue_cap - x);
            if kept > 0 {
                fifo.push_back((t, kept));
            }
            x += kept;

            s = self.phase[s].sample(rng);

            let offered = self
                .conn_arrivals
                .as_ref()
                .map_or(0, |p| (p.sample(rng) as usize).min(self.limits.max_arrivals));
            let mut admitted = 0usize;
            for _ in 0..offered {
                let p = acceptance_probability(&self.policy, x_start, c + admitted);
                if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                    admitted += 1;
                }
            }
            let departed = if c > 0 && self.departure_prob > 0.0 {
                let d = Binomial::new(c as u64, self.departure_prob.min(1.0)).expect("valid binomial");
                (d.sample(rng) as usize).min(self.limits.max_departures)
            } else {
                0
            };

            if on {
                counts.served += sent as u64;
                counts.arrived += arrivals as u64;
                counts.dropped += (arrivals - kept) as u64;
                counts.offered += offered as u64;
                counts.accepted += admitted as u64;
                counts.blocked += (offered - admitted) as u64;
                counts.departed += departed as u64;
            }
            c = c - departed + admitted;
        }
        counts.queue_end = x as u64;
        counts.conn_end = c as u64;
        counts
    }
}

/// Runs the replications in parallel; replication `r` uses stream `r` of a
/// ChaCha8 generator seeded with the base seed.
pub fn simulate(cfg: &SimConfig) -> Result<QosEstimate> {
    cfg.validate()?;
    let model = Model::new(&cfg.scenario)?;
    let replications: Vec<Counts> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
            rng.set_stream(r as u64);
            model.run(&mut rng, cfg.warmup_frames, cfg.measure_frames)
        })
        .collect();

    let mut totals = Counts::default();
    for c in &replications {
        totals.frames += c.frames;
        totals.offered += c.offered;
        totals.accepted += c.accepted;
        totals.blocked += c.blocked;
        totals.departed += c.departed;
        totals.arrived += c.arrived;
        totals.dropped += c.dropped;
        totals.served += c.served;
        totals.queue_area += c.queue_area;
        totals.conn_area += c.conn_area;
        totals.sojourn_sum += c.sojourn_sum;
        totals.queue_start += c.queue_start;
        totals.queue_end += c.queue_end;
        totals.conn_start += c.conn_start;
        totals.conn_end += c.conn_end;
    }
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let values: Vec<f64> = replications.iter().filter_map(|c| c.metric(m)).collect();
            (m, summarize(&values))
        })
        .collect();
    Ok(QosEstimate {
        fingerprint: cfg.scenario.fingerprint(),
        policy: cfg.scenario.policy.to_string(),
        metrics,
        totals,
        replications,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub analytic: Option<f64>,
    pub simulated: Option<MetricEstimate>,
    /// `(analytic − mean) / stderr`; `None` when either side is undefined.
    pub z: Option<f64>,
    pub gated: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub policy: String,
    pub fingerprint: String,
    pub rows: Vec<ComparisonRow>,
}

/// Gate on `|z| ≤ 3`.
pub const Z_GATE: f64 = 3.0;

impl Comparison {
    pub fn pass(&self) -> bool {
        self.rows.iter().filter(|r| r.gated).all(|r| r.pass)
    }

    pub fn row(&self, m: Metric) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == m)
    }

    pub fn table(&self) -> String {
        let mut out = format!("policy {}  fingerprint {}\n", self.policy, self.fingerprint);
        let _ = writeln!(
            out,
            "{:<11} {:>14} {:>14} {:>11} {:>8}  result",
            "metric", "analytic", "simulated", "stderr", "z"
        );
        let num = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
        for r in &self.rows {
            let verdict = match (r.gated, r.pass) {
                (false, _) => "info",
                (true, true) => "pass",
                (true, false) => "FAIL",
            };
            let _ = writeln!(
                out,
                "{:<11} {:>14} {:>14} {:>11} {:>8}  {verdict}",
                r.metric.name(),
                num(r.analytic),
                num(r.simulated.map(|e| e.mean)),
                r.simulated.map_or("-".to_string(), |e| format!("{:.2e}", e.stderr)),
                r.z.map_or("-".to_string(), |z| format!("{z:+.2}")),
            );
        }
        let _ = writeln!(out, "overall     {}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }
}

pub fn compare(report: &QosReport, estimate: &QosEstimate) -> Result<Comparison> {
    if report.fingerprint != estimate.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: report.fingerprint.clone(),
            found: estimate.fingerprint.clone(),
        });
    }
    let rows = Metric::ALL
        .iter()
        .map(|&m| {
            let analytic = m.of_report(report);
            let simulated = estimate.get(m);
            let z = match (analytic, simulated) {
                (Some(a), Some(e)) if e.stderr > 0.0 => Some((a - e.mean) / e.stderr),
                (Some(a), Some(e)) => {
                    let close = (a - e.mean).abs() <= 1e-9 * a.abs().max(1.0);
                    Some(if close { 0.0 } else { f64::INFINITY.copysign(a - e.mean) })
                }
                _ => None,
            };
            let pass = match (analytic, simulated) {
                (None, None) => true,
                _ => z.is_some_and(|z| z.abs() <= Z_GATE),
            };
            ComparisonRow {
                metric: m,
                analytic,
                simulated,
                z,
                gated: m.gated(),
                pass,
            }
        })
        .collect();
    Ok(Comparison {
        policy: report.policy.clone(),
        fingerprint: report.fingerprint.clone(),
        rows,
    })
}

/// Shifts every analytic value by `sigmas` simulated standard errors.
pub fn tamper(report: &QosReport, estimate: &QosEstimate, sigmas: f64) -> QosReport {
    let mut r = report.clone();
    let shift = |m: Metric, v: &mut f64| {
        if let Some(e) = estimate.get(m) {
            *v += sigmas * e.stderr.max(1e-12);
        }
    };
    shift(Metric::PBlock, &mut r.p_block);
    shift(Metric::NConn, &mut r.n_conn);
    shift(Metric::NQueue, &mut r.n_queue);
    shift(Metric::NDrop, &mut r.n_drop);
    shift(Metric::LambdaBar, &mut r.lambda_bar);
    shift(Metric::PDrop, &mut r.p_drop);
    shift(Metric::Throughput, &mut r.throughput);
    if let Some(d) = r.delay.as_mut() {
        shift(Metric::Delay, d);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
channel = "deterministic(1)"

[arrival]
process = "poisson(300, 1)"

[connections]
arrival_rate = 30.0
mean_duration = 0.05

[policy]
rule = "threshold(2)"

[queue]
capacity = 5
max_batch = 2
frame_length_ms = 1.0

[sim]
warmup_frames = 1000
measure_frames = 20000
replications = 4
seed = 7
"#;

    fn tiny() -> SimConfig {
        SimConfig::from_scenario(&Scenario::from_toml_str(TINY).unwrap()).unwrap()
    }

    #[test]
    fn conservation_per_replication() {
        let est = simulate(&tiny()).unwrap();
        for c in &est.replications {
            assert!(c.packets_balance(), "{c:?}");
            assert!(c.connections_balance(), "{c:?}");
            assert_eq!(c.accepted + c.blocked, c.offered);
            assert_eq!(c.frames, 20000);
        }
    }

    #[test]
    fn same_seed_same_counts() {
        let a = simulate(&tiny()).unwrap();
        let b = simulate(&tiny()).unwrap();
        assert_eq!(a.replications, b.replications);
        let mut other = tiny();
        other.base_seed = 8;
        assert_ne!(simulate(&other).unwrap().replications, a.replications);
    }

    #[test]
    fn no_connections_means_nothing_happens() {
        let scenario = Scenario::from_toml_str(&TINY.replace("arrival_rate = 30.0", "arrival_rate = 0.0")).unwrap();
        let est = simulate(&SimConfig::from_scenario(&scenario).unwrap()).unwrap();
        for m in [Metric::NConn, Metric::NQueue, Metric::NDrop, Metric::PDrop, Metric::Throughput] {
            let e = est.get(m).unwrap();
            assert_eq!((e.mean, e.stderr), (0.0, 0.0), "{m:?}");
        }
        assert!(est.get(Metric::PBlock).is_none());
        assert!(est.get(Metric::Delay).is_none());
    }

    #[test]
    fn ample_capacity_never_drops() {
        let scenario = Scenario::from_toml_str(&TINY.replace("deterministic(1)", "deterministic(4)")).unwrap();
        let est = simulate(&SimConfig::from_scenario(&scenario).unwrap()).unwrap();
        assert_eq!(est.totals.dropped, 0);
        assert!(est.totals.arrived > 0);
    }

    #[test]
    fn small_runs_are_rejected() {
        let mut cfg = tiny();
        cfg.replications = 2;
        assert!(cfg.validate().is_err());
        cfg.replications = 3;
        cfg.measure_frames = 999;
        assert!(cfg.validate().is_err());
    }
}
