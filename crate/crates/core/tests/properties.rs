mod common;

use cacq::arrival::BatchArrivalProcess;
use cacq::chain::TransitionMatrix;
use cacq::channel::{AmcTable, ChannelModel};
use cacq::connection::CacPolicy;
use cacq::pipeline::Model;
use cacq::scenario::Scenario;
use cacq::solver::{residual, solve_aggregated, solve_direct, IterativeOptions};
use common::*;
use proptest::prelude::*;

fn policy_strategy() -> impl Strategy<Value = (CacPolicy, usize)> {
    (0usize..3, 1usize..5, 0usize..7).prop_flat_map(|(kind, cap, x)| {
        prop::collection::vec(0.0f64..=1.0, x + 1).prop_map(move |mut alpha| {
            let policy = match kind {
                0 => CacPolicy::Threshold { limit: cap },
                1 => CacPolicy::NoCac { c_tr: cap },
                _ => {
                    // Nonincreasing in the queue length.
                    alpha.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    CacPolicy::QueueAware { alpha, c_tr: cap }
                }
            };
            (policy, x)
        })
    })
}

fn arrival_strategy() -> impl Strategy<Value = BatchArrivalProcess> {
    prop_oneof![
        (600.0f64..60_000.0, 1usize..3).prop_map(|(r, b)| BatchArrivalProcess::poisson(r, b).unwrap()),
        (600.0f64..60_000.0, 0.0f64..30_000.0, 60.0f64..6_000.0, 60.0f64..6_000.0, 1usize..3)
            .prop_map(|(r1, r2, a, b, k)| BatchArrivalProcess::mmpp2(r1, r2, a, b, k).unwrap()),
    ]
}

fn channel_strategy() -> impl Strategy<Value = ChannelModel> {
    prop_oneof![
        (1usize..3, 0usize..3).prop_map(|(n, k)| ChannelModel::deterministic(n, k).unwrap()),
        (1usize..3, -5.0f64..20.0, 0.5f64..3.0)
            .prop_map(|(n, snr, m)| ChannelModel::stochastic(n, snr, m, AmcTable::default()).unwrap()),
    ]
}

fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    (
        arrival_strategy(),
        channel_strategy(),
        policy_strategy(),
        0.0f64..3_000.0,
        0.001f64..0.05,
        1usize..4,
    )
        .prop_map(|(arrival, channel, (policy, x), rate, dur, a)| scenario(arrival, rate, dur, channel, policy, x, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rows_are_stochastic(s in scenario_strategy()) {
        let model = Model::build(&s).unwrap();
        let p = model.chain.assemble(usize::MAX).unwrap();
        prop_assert!(p.max_row_sum_error() < 1e-12);
        for i in 0..p.dim() {
            for (_, v) in p.row(i) {
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn solution_is_a_distribution_with_honest_residual(s in scenario_strategy()) {
        let model = Model::build(&s).unwrap();
        let pi = model.solve(&s.solver).unwrap();
        let total: f64 = pi.pi.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(pi.pi.iter().all(|&v| v >= 0.0));
        prop_assert!((residual(&model.chain, &pi.pi) - pi.residual).abs() < 1e-14);
        prop_assert!(pi.residual < s.solver.tolerance);
    }

    #[test]
    fn aggregation_agrees_with_direct(s in scenario_strategy()) {
        let model = Model::build(&s).unwrap();
        let p = model.chain.assemble(usize::MAX).unwrap();
        let direct = solve_direct(&p, 5000).unwrap();
        let iad = solve_aggregated(&model.chain, &IterativeOptions::default()).unwrap();
        prop_assert!(max_abs_diff(&direct.pi, &iad.pi) < 1e-9);
    }

    #[test]
    fn relabelling_states_permutes_the_solution(s in scenario_strategy(), seed in any::<u64>()) {
        let model = Model::build(&s).unwrap();
        let p = model.chain.assemble(usize::MAX).unwrap();
        let n = p.dim();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let triplets: Vec<_> = (0..n)
            .flat_map(|i| p.row(i).map(move |(j, v)| (i, j, v)).collect::<Vec<_>>())
            .map(|(i, j, v)| (perm[i], perm[j], v))
            .collect();
        let q = TransitionMatrix::from_triplets(n, triplets).unwrap();
        let a = solve_direct(&p, 5000).unwrap();
        let b = solve_direct(&q, 5000).unwrap();
        for i in 0..n {
            prop_assert!((a.pi[i] - b.pi[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_stay_in_range(s in scenario_strategy()) {
        let r = cacq::pipeline::analyze(&s).unwrap().report;
        let cap = s.policy.conn_cap() as f64;
        prop_assert!((0.0..=1.0).contains(&r.p_block));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r.p_drop));
        prop_assert!(r.n_conn >= 0.0 && r.n_conn <= cap + 1e-12);
        prop_assert!(r.n_queue >= 0.0 && r.n_queue <= s.queue_cap as f64 + 1e-12);
        prop_assert!(r.n_drop >= 0.0);
        // Every packet that is not dropped is eventually served.
        prop_assert!((r.throughput - r.mean_served).abs() <= 1e-8 * r.throughput + 1e-12 * r.lambda_bar);
        match r.delay {
            Some(d) => prop_assert!(d >= 0.0 && r.throughput > 0.0),
            None => prop_assert!(r.throughput == 0.0),
        }
    }
}
