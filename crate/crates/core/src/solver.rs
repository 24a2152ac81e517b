//! Stationary distributions of the frame chain.
//!
//! Three methods:
//!
//! * [`solve_direct`]: GTH state reduction on the recurrent class, for
//!   matrices small enough to hold densely.
//! * [`solve_iterative`]: power iteration, damped when it oscillates.
//! * [`solve_aggregated`]: iterative aggregation/disaggregation over the
//!   connection-count levels. Connections arrive and leave on a time scale
//!   of minutes while the queue moves every frame, so plain power iteration
//!   needs millions of sweeps at full scale; the aggregated chain over levels
//!   captures the slow part exactly and converges in a few dozen sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Fingerprint, LeveledChain, MarkovOperator, TransitionMatrix};
use crate::error::{Error, Result};
use crate::graph::{closed_classes, reachable_from, strongly_connected, Successors};
use crate::linalg::{gth_stationary, Dense, ExitFactor};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
pub const DEFAULT_DIRECT_CAP: usize = 5000;

/// L1 step below which power iteration has reached floating-point noise.
const STEP_FLOOR: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Direct,
    Power,
    Aggregation,
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            SolveMethod::Direct => "direct",
            SolveMethod::Power => "power",
            SolveMethod::Aggregation => "aggregation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `‖πP − π‖∞` of the returned vector.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
    pub damped: bool,
    pub fingerprint: Fingerprint,
}

impl StationaryDistribution {
    /// `idx value` lines.
    pub fn write_dump(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for (i, p) in self.pi.iter().enumerate() {
            writeln!(out, "{i} {p:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Damping {
    /// Switch to `π ← π(I + P)/2` once the plain iteration oscillates.
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub damping: Damping,
    /// Defaults to uniform over the states reachable from state 0.
    pub start: Option<Vec<f64>>,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            damping: Damping::Auto,
            start: None,
        }
    }
}

/// `‖πP − π‖∞`.
pub fn residual<M: MarkovOperator + ?Sized>(op: &M, pi: &[f64]) -> f64 {
    let mut out = vec![0.0; pi.len()];
    op.apply_left(pi, &mut out);
    out.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Uniform mass over every state reachable from state 0.
pub fn reachable_start<G: Successors + ?Sized>(graph: &G) -> Vec<f64> {
    let seen = reachable_from(graph, 0);
    let count = seen.iter().filter(|&&s| s).count() as f64;
    seen.iter().map(|&s| if s { 1.0 / count } else { 0.0 }).collect()
}

fn unique_closed_class<G: Successors + ?Sized>(graph: &G) -> Result<Vec<usize>> {
    let comps = strongly_connected(graph, None);
    let closed = closed_classes(graph, &comps);
    match closed.as_slice() {
        [only] => Ok(comps[*only].clone()),
        [first, second, ..] => Err(Error::MultipleRecurrentClasses {
            first: comps[*first].clone(),
            second: comps[*second].clone(),
        }),
        [] => unreachable!("a finite graph has a closed class"),
    }
}

/// Stationary vector of a small dense stochastic matrix with one recurrent class.
pub fn dense_stationary(p: &Dense) -> Result<Vec<f64>> {
    let class = unique_closed_class(p)?;
    let mut sub = Dense::zeros(class.len(), class.len());
    for (a, &i) in class.iter().enumerate() {
        for (b, &j) in class.iter().enumerate() {
            sub[(a, b)] = p[(i, j)];
        }
    }
    let local = gth_stationary(&sub).ok_or_else(|| Error::Structure("recurrent class is not irreducible".into()))?;
    let mut pi = vec![0.0; p.rows()];
    for (&i, v) in class.iter().zip(local) {
        pi[i] = v;
    }
    Ok(pi)
}

pub fn solve_direct(p: &TransitionMatrix, cap: usize) -> Result<StationaryDistribution> {
    let n = p.dim();
    if n > cap {
        return Err(Error::Parameter {
            name: "direct_cap",
            reason: format!("{n} states exceed the direct-solve cap of {cap}"),
        });
    }
    let class = unique_closed_class(p)?;
    let mut position = vec![usize::MAX; n];
    for (a, &i) in class.iter().enumerate() {
        position[i] = a;
    }
    let mut sub = Dense::zeros(class.len(), class.len());
    for (a, &i) in class.iter().enumerate() {
        for (j, v) in p.row(i) {
            sub[(a, position[j])] += v;
        }
    }
    let local = gth_stationary(&sub).ok_or_else(|| Error::Structure("recurrent class is not irreducible".into()))?;
    let mut pi = vec![0.0; n];
    for (&i, v) in class.iter().zip(local) {
        pi[i] = v;
    }
    Ok(StationaryDistribution {
        residual: residual(p, &pi),
        pi,
        iterations: 0,
        method: SolveMethod::Direct,
        damped: false,
        fingerprint: p.operator_fingerprint(),
    })
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn start_vector<M: MarkovOperator + ?Sized>(op: &M, opts: &IterativeOptions) -> Result<Vec<f64>> {
    match &opts.start {
        Some(v) => {
            if v.len() != op.dim() || v.iter().any(|x| !(*x >= 0.0)) || v.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Parameter {
                    name: "start",
                    reason: "start vector must be nonnegative, nonzero and match the state count".into(),
                });
            }
            let mut v = v.clone();
            normalize(&mut v);
            Ok(v)
        }
        None => Ok(reachable_start(op)),
    }
}

/// Power iteration; fails with [`Error::NotConverged`] instead of returning
/// an unconverged vector.
pub fn solve_iterative<M: MarkovOperator + ?Sized>(op: &M, opts: &IterativeOptions) -> Result<StationaryDistribution> {
    let n = op.dim();
    let mut pi = start_vector(op, opts)?;
    let mut next = vec![0.0; n];
    let mut before = pi.clone();
    let mut damped = opts.damping == Damping::Always;
    let mut prev_step = f64::INFINITY;
    for it in 1..=opts.max_iter {
        op.apply_left(&pi, &mut next);
        if damped {
            next.iter_mut().zip(&pi).for_each(|(y, x)| *y = 0.5 * (*y + x));
        }
        normalize(&mut next);
        let step = l1_distance(&next, &pi);
        if !damped && opts.damping == Damping::Auto && it > 1 && l1_distance(&next, &before) < 0.5 * step {
            damped = true;
        }
        std::mem::swap(&mut before, &mut pi);
        std::mem::swap(&mut pi, &mut next);
        // Geometric bound on the distance still to go, from the observed
        // contraction. A small step alone says little on slowly mixing chains.
        let ratio = step / prev_step;
        prev_step = step;
        let remaining = if ratio < 1.0 { step * ratio / (1.0 - ratio) } else { f64::INFINITY };
        let at_floor = step <= STEP_FLOOR;
        if step < opts.tolerance && (remaining < opts.tolerance || at_floor) {
            let r = residual(op, &pi);
            if r < opts.tolerance {
                return Ok(StationaryDistribution {
                    pi,
                    residual: r,
                    iterations: it,
                    method: SolveMethod::Power,
                    damped,
                    fingerprint: op.operator_fingerprint(),
                });
            }
            if at_floor {
                // Further sweeps only move rounding noise.
                return Err(Error::NotConverged { iterations: it, residual: r });
            }
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: residual(op, &pi),
    })
}

enum LevelSolve {
    Factor(ExitFactor),
    Closed(Vec<f64>),
}

/// Iterative aggregation/disaggregation over the levels of `chain`.
pub fn solve_aggregated<L: LeveledChain + ?Sized>(chain: &L, opts: &IterativeOptions) -> Result<StationaryDistribution> {
    let levels = chain.num_levels();
    let m = chain.level_size();

    let solvers: Vec<LevelSolve> = (0..levels)
        .into_par_iter()
        .map(|l| {
            let (block, exit) = chain.diagonal_block(l);
            if exit.iter().all(|&e| e == 0.0) {
                return dense_stationary(&block).map(LevelSolve::Closed);
            }
            ExitFactor::new(block, exit)
                .map(LevelSolve::Factor)
                .map_err(|_| Error::SingularBlock { level: l })
        })
        .collect::<Result<_>>()?;

    let closed: Vec<usize> = (0..levels)
        .filter(|&l| matches!(solvers[l], LevelSolve::Closed(_)))
        .collect();
    if let [first, second, ..] = closed.as_slice() {
        return Err(Error::MultipleRecurrentClasses {
            first: (0..m).map(|k| chain.global_index(*first, k)).collect(),
            second: (0..m).map(|k| chain.global_index(*second, k)).collect(),
        });
    }
    if let [level] = closed.as_slice() {
        let LevelSolve::Closed(local) = &solvers[*level] else {
            unreachable!()
        };
        let mut pi = vec![0.0; chain.dim()];
        for (k, &v) in local.iter().enumerate() {
            pi[chain.global_index(*level, k)] = v;
        }
        let r = residual(chain, &pi);
        if r >= opts.tolerance {
            return Err(Error::NotConverged {
                iterations: 0,
                residual: r,
            });
        }
        return Ok(StationaryDistribution {
            pi,
            residual: r,
            iterations: 0,
            method: SolveMethod::Aggregation,
            damped: false,
            fingerprint: chain.operator_fingerprint(),
        });
    }

    let start = start_vector(chain, opts)?;
    let mut pi: Vec<Vec<f64>> = (0..levels)
        .map(|l| (0..m).map(|k| start[chain.global_index(l, k)]).collect())
        .collect();

    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iter {
        aggregate(chain, &mut pi)?;

        // Block Gauss–Seidel sweep: inflow from higher levels uses the
        // aggregated iterate, inflow from lower levels the fresh one.
        let mut inflow: Vec<Vec<f64>> = vec![vec![0.0; m]; levels];
        for l in 1..levels {
            chain.scatter_off_level(l, &pi[l], &mut inflow, &|t| t < l);
        }
        let mut fresh: Vec<Vec<f64>> = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut b = std::mem::take(&mut inflow[l]);
            match &solvers[l] {
                LevelSolve::Factor(f) => f.solve_in_place(&mut b),
                LevelSolve::Closed(_) => unreachable!(),
            }
            chain.scatter_off_level(l, &b, &mut inflow, &|t| t > l);
            fresh.push(b);
        }
        let total: f64 = fresh.iter().flatten().sum();
        if !(total > 0.0) {
            return Err(Error::Structure("aggregation sweep lost all mass".into()));
        }
        fresh.iter_mut().flatten().for_each(|v| *v /= total);

        let step: f64 = fresh.iter().zip(&pi).map(|(a, b)| l1_distance(a, b)).sum();
        pi = fresh;
        last = step;
        if step < opts.tolerance {
            aggregate(chain, &mut pi)?;
            let flat = flatten(chain, &pi);
            let r = residual(chain, &flat);
            if r < opts.tolerance {
                return Ok(StationaryDistribution {
                    pi: flat,
                    residual: r,
                    iterations: it,
                    method: SolveMethod::Aggregation,
                    damped: false,
                    fingerprint: chain.operator_fingerprint(),
                });
            }
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: last,
    })
}

/// Rescales each level so the level masses solve the aggregated chain.
fn aggregate<L: LeveledChain + ?Sized>(chain: &L, pi: &mut [Vec<f64>]) -> Result<()> {
    let levels = pi.len();
    let m = chain.level_size();
    let mut coupling = Dense::zeros(levels, levels);
    let weights: Vec<f64> = pi.iter().map(|v| v.iter().sum()).collect();
    for (l, level) in pi.iter_mut().enumerate() {
        if weights[l] > 0.0 {
            level.iter_mut().for_each(|v| *v /= weights[l]);
        } else {
            level.iter_mut().for_each(|v| *v = 1.0 / m as f64);
        }
        let flow = chain.level_flow(l, level);
        coupling.row_mut(l).copy_from_slice(&flow);
    }
    let xi = dense_stationary(&coupling)?;
    for (level, w) in pi.iter_mut().zip(xi) {
        level.iter_mut().for_each(|v| *v *= w);
    }
    Ok(())
}

fn flatten<L: LeveledChain + ?Sized>(chain: &L, pi: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; chain.dim()];
    for (l, level) in pi.iter().enumerate() {
        for (k, &v) in level.iter().enumerate() {
            out[chain.global_index(l, k)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_dense(&Dense::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn swap_chain_is_uniform() {
        let p = matrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = solve_direct(&p, 10).unwrap();
        assert_eq!(s.pi, vec![0.5, 0.5]);
    }

    #[test]
    fn two_state_balance() {
        let p = matrix(&[&[0.9, 0.1], &[0.5, 0.5]]);
        let d = solve_direct(&p, 10).unwrap();
        assert!((d.pi[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!(d.residual < 1e-12);
        let it = solve_iterative(&p, &IterativeOptions::default()).unwrap();
        assert!(l1_distance(&it.pi, &d.pi) < 1e-9);
    }

    #[test]
    fn identity_has_many_classes() {
        let p = TransitionMatrix::from_dense(&Dense::identity(3)).unwrap();
        match solve_direct(&p, 10) {
            Err(Error::MultipleRecurrentClasses { first, second }) => {
                assert_eq!(first, vec![0]);
                assert_eq!(second, vec![1]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cap_is_enforced() {
        let p = matrix(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(solve_direct(&p, 1), Err(Error::Parameter { .. })));
    }

    #[test]
    fn damping_settles_a_periodic_chain() {
        let p = matrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let opts = IterativeOptions {
            start: Some(vec![1.0, 0.0]),
            ..Default::default()
        };
        let s = solve_iterative(&p, &opts).unwrap();
        assert!(s.damped);
        assert!((s.pi[0] - 0.5).abs() < 1e-10);

        let plain = IterativeOptions {
            damping: Damping::Never,
            max_iter: 100,
            ..opts
        };
        assert!(matches!(solve_iterative(&p, &plain), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn transient_states_get_no_mass() {
        let p = matrix(&[&[0.5, 0.5, 0.0], &[0.0, 0.2, 0.8], &[0.0, 0.6, 0.4]]);
        let s = solve_direct(&p, 10).unwrap();
        assert_eq!(s.pi[0], 0.0);
        assert!((s.pi[1] - 6.0 / 14.0).abs() < 1e-15);
    }
}
