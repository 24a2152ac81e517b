#![allow(dead_code)]

use cacq::arrival::BatchArrivalProcess;
use cacq::channel::{AmcTable, ChannelModel};
use cacq::connection::{CacPolicy, ConnectionLimits};
use cacq::linalg::Dense;
use cacq::scenario::{Scenario, SimSettings, SolverConfig};
use nalgebra::{DMatrix, DVector};

/// Poisson mass straight from the definition.
pub fn poisson(mean: f64, n: usize) -> f64 {
    let mut p = (-mean).exp();
    for i in 1..=n {
        p *= mean / i as f64;
    }
    p
}

pub fn to_nalgebra(m: &Dense) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Solves `π (I − P) = 0, π 1 = 1` by LU, replacing one balance equation
/// with the normalization.
pub fn linear_stationary(p: &Dense) -> Vec<f64> {
    let n = p.rows();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = if i == j { 1.0 } else { 0.0 } - p[(i, j)];
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    a.lu().solve(&b).expect("nonsingular").iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scenario with the solver and simulator defaults filled in.
#[allow(clippy::too_many_arguments)]
pub fn scenario(
    arrival: BatchArrivalProcess,
    connection_rate: f64,
    mean_duration: f64,
    channel: ChannelModel,
    policy: CacPolicy,
    queue_cap: usize,
    max_batch: usize,
) -> Scenario {
    let c_tr = match &policy {
        CacPolicy::QueueAware { c_tr, .. } | CacPolicy::NoCac { c_tr } => Some(*c_tr),
        CacPolicy::Threshold { .. } => None,
    };
    Scenario {
        arrival,
        connection_rate,
        mean_duration,
        limits: ConnectionLimits::default(),
        channel,
        policy,
        c_tr,
        queue_cap,
        max_batch,
        frame_length_ms: 1.0,
        solver: SolverConfig::default(),
        sim: Some(SimSettings {
            warmup_frames: 10_000,
            measure_frames: 100_000,
            replications: 5,
            seed: 1,
        }),
    }
}

pub fn manifest_path(rel: &str) -> String {
    format!("{}/{rel}", env!("CARGO_MANIFEST_DIR"))
}

/// Five small chains covering one and two phases, batches, both channel
/// modes and all three policies.
pub fn tiny_scenarios() -> Vec<Scenario> {
    let det = |n, k| ChannelModel::deterministic(n, k).unwrap();
    let fading = |n, snr, m| ChannelModel::stochastic(n, snr, m, AmcTable::default()).unwrap();
    let cases = vec![
        (
            CacPolicy::Threshold { limit: 2 },
            det(1, 1),
            BatchArrivalProcess::poisson(18_000.0, 1).unwrap(),
            5,
        ),
        (
            CacPolicy::NoCac { c_tr: 2 },
            det(1, 1),
            BatchArrivalProcess::mmpp2(30_000.0, 6_000.0, 900.0, 600.0, 1).unwrap(),
            4,
        ),
        (
            CacPolicy::QueueAware {
                alpha: vec![1.0, 1.0, 0.5, 0.0],
                c_tr: 2,
            },
            fading(2, 3.0, 1.0),
            BatchArrivalProcess::mmpp2(60_000.0, 20_000.0, 1200.0, 1200.0, 2).unwrap(),
            3,
        ),
        (
            CacPolicy::Threshold { limit: 1 },
            fading(1, 0.0, 2.0),
            BatchArrivalProcess::poisson(40_000.0, 2).unwrap(),
            5,
        ),
        (
            CacPolicy::queue_aware_step(2, 5, 2),
            det(2, 1),
            BatchArrivalProcess::mmpp2(50_000.0, 10_000.0, 3000.0, 3000.0, 1).unwrap(),
            5,
        ),
    ];
    cases
        .into_iter()
        .map(|(policy, channel, arrival, x)| scenario(arrival, 600.0, 0.005, channel, policy, x, 2))
        .collect()
}
