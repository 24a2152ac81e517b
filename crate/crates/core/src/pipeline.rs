//! Scenario in, QoS report out.

use crate::arrival::FrameCountKernel;
use crate::chain::{ChainInputs, ChainKernel};
use crate::channel::CapacityDistribution;
use crate::connection::ConnectionParams;
use crate::error::Result;
use crate::metrics::{
    blocking_probability, drop_metrics, mean_connections, mean_queue_length, mean_served, throughput_and_delay,
    QosReport,
};
use crate::scenario::{MethodChoice, Scenario, SolverConfig};
use crate::solver::{solve_aggregated, solve_direct, solve_iterative, IterativeOptions, StationaryDistribution};

/// Largest chain `auto` hands to the dense direct solver. Above this the
/// cubic cost of elimination loses to aggregation.
pub const AUTO_DIRECT_STATES: usize = 1000;

/// Everything built from a scenario before solving.
#[derive(Debug, Clone)]
pub struct Model {
    pub frame_kernel: FrameCountKernel,
    pub capacity: CapacityDistribution,
    pub connections: ConnectionParams,
    pub chain: ChainKernel,
}

impl Model {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let frame_kernel = scenario
            .arrival
            .frame_count_kernel(scenario.frame_length(), scenario.max_batch)?;
        let capacity = scenario.channel.capacity_distribution()?;
        let connections = scenario.connection_params()?;
        let chain = ChainKernel::build(&ChainInputs {
            policy: &scenario.policy,
            kernel: &frame_kernel,
            capacity: &capacity,
            connections: &connections,
            limits: scenario.limits,
            queue_cap: scenario.queue_cap,
        })?;
        Ok(Self {
            frame_kernel,
            capacity,
            connections,
            chain,
        })
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<StationaryDistribution> {
        let n = self.chain.space().len();
        let budget = cfg.memory_budget_mb.saturating_mul(1 << 20);
        let opts = IterativeOptions {
            tolerance: cfg.tolerance,
            max_iter: cfg.max_iter,
            ..Default::default()
        };
        match cfg.method {
            MethodChoice::Direct => solve_direct(&self.chain.assemble(budget)?, cfg.direct_cap),
            MethodChoice::Auto if n <= cfg.direct_cap.min(AUTO_DIRECT_STATES) => solve_direct(&self.chain.assemble(budget)?, cfg.direct_cap),
            MethodChoice::Auto | MethodChoice::Aggregation => solve_aggregated(&self.chain, &opts),
            MethodChoice::Power => match self.chain.assemble(budget) {
                Ok(p) => solve_iterative(&p, &opts),
                Err(_) => solve_iterative(&self.chain, &opts),
            },
        }
    }

    pub fn report(&self, scenario: &Scenario, stationary: &StationaryDistribution) -> Result<QosReport> {
        let space = self.chain.space();
        let pi = &stationary.pi;
        let arrival_means: Vec<f64> = (0..space.phases).map(|s| self.chain.arrival_mean(s)).collect();
        let drops = drop_metrics(pi, stationary.fingerprint, &space, &self.chain.overflow_ledger(), &arrival_means)?;
        let n_conn = mean_connections(pi, &space);
        let n_queue = mean_queue_length(pi, &space);
        let per_connection = scenario.arrival.mean_arrival_rate()? * scenario.frame_length();
        let (throughput, delay) = if scenario.solver.per_connection_throughput {
            let phi = per_connection * (1.0 - drops.p_drop);
            (phi, (phi > 0.0).then(|| n_queue / phi))
        } else {
            throughput_and_delay(n_queue, drops.lambda_bar, drops.p_drop)
        };
        Ok(QosReport {
            policy: scenario.policy.to_string(),
            rho: scenario.connection_rate,
            snr_db: scenario.channel.avg_snr_db(),
            p_block: blocking_probability(pi, &space, &scenario.policy),
            n_conn,
            n_queue,
            n_drop: drops.n_drop,
            lambda_bar: drops.lambda_bar,
            p_drop: drops.p_drop,
            throughput,
            delay,
            lambda_product: per_connection * n_conn,
            mean_served: mean_served(pi, &space, &self.capacity),
            fingerprint: scenario.fingerprint(),
            kernel_fingerprint: stationary.fingerprint,
            residual: stationary.residual,
            iterations: stationary.iterations,
            method: stationary.method.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: Model,
    pub stationary: StationaryDistribution,
    pub report: QosReport,
}

pub fn analyze(scenario: &Scenario) -> Result<Analysis> {
    let model = Model::build(scenario)?;
    let stationary = model.solve(&scenario.solver)?;
    let report = model.report(scenario, &stationary)?;
    Ok(Analysis {
        model,
        stationary,
        report,
    })
}
