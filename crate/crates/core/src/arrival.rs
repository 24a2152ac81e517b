//! Batch Markovian arrival processes and their per-frame counting kernels.
//!
//! A process is given by `D_0` (phase changes without arrivals, diagonal holds
//! minus the total event rate of each phase) and `D_1 … D_K` (phase changes
//! that emit a batch of `k` packets). All rates are per minute; the conversion
//! to per-frame quantities happens only in [`BatchArrivalProcess::frame_count_kernel`].

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{strongly_connected, Successors};
use crate::linalg::{convolve, gth_stationary, Dense};

const ROW_SUM_TOL: f64 = 1e-12;

/// Tail mass below which the uniformization series is cut.
pub const UNIFORMIZATION_TAIL: f64 = 1e-14;

/// Default cap on Poisson terms when building a frame kernel.
pub const DEFAULT_STEP_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixId {
    D0,
    /// `D_k`, batch size `k ≥ 1`.
    Batch(usize),
    /// The phase generator `D = D_0 + Σ D_k`.
    Generator,
}

impl fmt::Display for MatrixId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixId::D0 => write!(f, "D0"),
            MatrixId::Batch(k) => write!(f, "D{k}"),
            MatrixId::Generator => write!(f, "D"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    NegativeOffDiagonal(f64),
    /// Diagonal of `D0` must be strictly negative (it is minus the phase's event rate).
    NonNegativeDiagonal(f64),
    NegativeEntry(f64),
    RowSumNotZero(f64),
    Reducible(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub matrix: MatrixId,
    pub row: Option<usize>,
    pub col: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.matrix)?;
        match (self.row, self.col) {
            (Some(r), Some(c)) => write!(f, "[{},{}]", r + 1, c + 1)?,
            (Some(r), None) => write!(f, " row {}", r + 1)?,
            _ => {}
        }
        match &self.kind {
            ViolationKind::NegativeOffDiagonal(v) => write!(f, ": off-diagonal rate {v} is negative"),
            ViolationKind::NonNegativeDiagonal(v) => {
                write!(f, ": diagonal {v} is not negative (phase has no events)")
            }
            ViolationKind::NegativeEntry(v) => write!(f, ": batch rate {v} is negative"),
            ViolationKind::RowSumNotZero(v) => write!(f, ": generator row sums to {v}, not 0"),
            ViolationKind::Reducible(classes) => {
                let labels: Vec<Vec<usize>> = classes
                    .iter()
                    .map(|c| c.iter().map(|s| s + 1).collect())
                    .collect();
                write!(f, ": phase chain is not irreducible, classes {labels:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {v}")?;
        }
        Ok(())
    }
}

struct OffDiagonal<'a>(&'a Dense);

impl Successors for OffDiagonal<'_> {
    fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    fn successors(&self, node: usize, out: &mut Vec<usize>) {
        out.clear();
        out.extend(
            self.0
                .row(node)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != node && v > 0.0)
                .map(|(j, _)| j),
        );
    }
}

/// Checks every invariant of a BMAP given as raw matrices.
///
/// Shape problems are a structural error; everything else is collected into
/// the report with its location.
pub fn validate_bmap(d0: &Dense, batches: &[Dense]) -> Result<ValidationReport> {
    let s = d0.rows();
    if s == 0 {
        return Err(Error::Structure("D0 has no phases".into()));
    }
    if !d0.is_square() {
        return Err(Error::Structure(format!(
            "D0 is {}x{}, expected square",
            d0.rows(),
            d0.cols()
        )));
    }
    for (i, dk) in batches.iter().enumerate() {
        if dk.rows() != s || dk.cols() != s {
            return Err(Error::Structure(format!(
                "D{} is {}x{}, expected {s}x{s}",
                i + 1,
                dk.rows(),
                dk.cols()
            )));
        }
    }

    let mut violations = Vec::new();
    for i in 0..s {
        for j in 0..s {
            let v = d0[(i, j)];
            if i == j && !(v < 0.0) {
                violations.push(Violation {
                    matrix: MatrixId::D0,
                    row: Some(i),
                    col: Some(j),
                    kind: ViolationKind::NonNegativeDiagonal(v),
                });
            } else if i != j && !(v >= 0.0) {
                violations.push(Violation {
                    matrix: MatrixId::D0,
                    row: Some(i),
                    col: Some(j),
                    kind: ViolationKind::NegativeOffDiagonal(v),
                });
            }
        }
    }
    for (k, dk) in batches.iter().enumerate() {
        for i in 0..s {
            for j in 0..s {
                let v = dk[(i, j)];
                if !(v >= 0.0) {
                    violations.push(Violation {
                        matrix: MatrixId::Batch(k + 1),
                        row: Some(i),
                        col: Some(j),
                        kind: ViolationKind::NegativeEntry(v),
                    });
                }
            }
        }
    }

    let generator = sum_generator(d0, batches);
    for i in 0..s {
        let sum: f64 = generator.row(i).iter().sum();
        let scale: f64 = d0.row(i).iter().map(|v| v.abs()).sum::<f64>()
            + batches.iter().map(|d| d.row(i).iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>();
        if !(sum.abs() <= ROW_SUM_TOL * scale.max(1.0)) {
            violations.push(Violation {
                matrix: MatrixId::Generator,
                row: Some(i),
                col: None,
                kind: ViolationKind::RowSumNotZero(sum),
            });
        }
    }

    let classes = strongly_connected(&OffDiagonal(&generator), None);
    if classes.len() > 1 {
        violations.push(Violation {
            matrix: MatrixId::Generator,
            row: None,
            col: None,
            kind: ViolationKind::Reducible(classes),
        });
    }
    Ok(ValidationReport { violations })
}

fn sum_generator(d0: &Dense, batches: &[Dense]) -> Dense {
    batches.iter().fold(d0.clone(), |acc, dk| acc.add(dk))
}

/// A validated batch Markovian arrival process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchArrivalProcess {
    d0: Dense,
    /// `batches[k - 1]` is `D_k`; trailing all-zero matrices are trimmed.
    batches: Vec<Dense>,
}

impl BatchArrivalProcess {
    /// Validates and builds a process from `D_0` and the dense list `D_1 … D_K`.
    pub fn new(d0: Dense, mut batches: Vec<Dense>) -> Result<Self> {
        let report = validate_bmap(&d0, &batches)?;
        if !report.is_ok() {
            return Err(Error::InvalidProcess(report));
        }
        while batches.last().is_some_and(Dense::is_zero) {
            batches.pop();
        }
        Ok(Self { d0, batches })
    }

    /// Builds from a sparse `{k: D_k}` listing.
    pub fn from_batches(d0: Dense, batches: impl IntoIterator<Item = (usize, Dense)>) -> Result<Self> {
        let s = d0.rows();
        let mut dense: Vec<Dense> = Vec::new();
        for (k, dk) in batches {
            if k == 0 {
                return Err(Error::Structure("batch sizes start at 1; use D0 for k = 0".into()));
            }
            if dense.len() < k {
                dense.resize(k, Dense::zeros(s, s));
            }
            if !dense[k - 1].is_zero() {
                return Err(Error::Structure(format!("D{k} given twice")));
            }
            dense[k - 1] = dk;
        }
        Self::new(d0, dense)
    }

    /// Batch Poisson stream: batches of `batch` packets at `rate` per minute.
    pub fn poisson(rate: f64, batch: usize) -> Result<Self> {
        Self::from_batches(Dense::from_rows(&[[-rate]]).unwrap(), [(batch, Dense::from_rows(&[[rate]]).unwrap())])
    }

    /// Two-phase Markov-modulated batch Poisson stream. Rates per minute;
    /// `switch12` moves phase 1 to phase 2.
    pub fn mmpp2(rate1: f64, rate2: f64, switch12: f64, switch21: f64, batch: usize) -> Result<Self> {
        let d0 = Dense::from_rows(&[[-rate1 - switch12, switch12], [switch21, -rate2 - switch21]]).unwrap();
        Self::from_batches(d0, [(batch, Dense::diag(&[rate1, rate2]))])
    }

    pub fn num_phases(&self) -> usize {
        self.d0.rows()
    }

    pub fn d0(&self) -> &Dense {
        &self.d0
    }

    /// `D_k` for `k ≥ 1`, if within range.
    pub fn batch(&self, k: usize) -> Option<&Dense> {
        k.checked_sub(1).and_then(|i| self.batches.get(i))
    }

    pub fn batches(&self) -> &[Dense] {
        &self.batches
    }

    pub fn largest_batch(&self) -> usize {
        self.batches.len()
    }

    /// `D = D_0 + Σ_k D_k`.
    pub fn phase_generator(&self) -> Dense {
        sum_generator(&self.d0, &self.batches)
    }

    pub fn stationary_phase_distribution(&self) -> Result<Vec<f64>> {
        let generator = self.phase_generator();
        gth_stationary(&generator).ok_or_else(|| Error::Reducible {
            classes: strongly_connected(&OffDiagonal(&generator), None),
        })
    }

    /// Mean packets per minute, `π Σ_k k D_k e`.
    pub fn mean_arrival_rate(&self) -> Result<f64> {
        let pi = self.stationary_phase_distribution()?;
        let mut rate = 0.0;
        for (idx, dk) in self.batches.iter().enumerate() {
            let k = (idx + 1) as f64;
            for (p, row_sum) in pi.iter().zip(dk.row_sums()) {
                rate += p * k * row_sum;
            }
        }
        Ok(rate)
    }

    /// Per-frame counting kernel with counts above `max_batch` folded into
    /// the top bucket.
    pub fn frame_count_kernel(&self, frame_length: f64, max_batch: usize) -> Result<FrameCountKernel> {
        self.frame_count_kernel_with_budget(frame_length, max_batch, DEFAULT_STEP_BUDGET)
    }

    pub fn frame_count_kernel_with_budget(
        &self,
        frame_length: f64,
        max_batch: usize,
        step_budget: usize,
    ) -> Result<FrameCountKernel> {
        if !(frame_length > 0.0 && frame_length.is_finite()) {
            return Err(Error::Parameter {
                name: "frame_length",
                reason: format!("must be positive, got {frame_length}"),
            });
        }
        if max_batch == 0 {
            return Err(Error::Parameter {
                name: "max_batch",
                reason: "must be at least 1".into(),
            });
        }
        let s = self.num_phases();
        let unif_rate = (0..s).map(|i| -self.d0[(i, i)]).fold(0.0, f64::max);

        // Uniformized jump matrices: index 0 keeps the count, index k adds k.
        let mut jumps: Vec<(usize, Dense)> = Vec::new();
        let mut stay = Dense::identity(s).add(&self.d0.scale(1.0 / unif_rate));
        for i in 0..s {
            stay[(i, i)] = stay[(i, i)].max(0.0);
        }
        jumps.push((0, stay));
        for (idx, dk) in self.batches.iter().enumerate() {
            if !dk.is_zero() {
                jumps.push((idx + 1, dk.scale(1.0 / unif_rate)));
            }
        }

        let mean_jumps = unif_rate * frame_length;

        let mut blocks = vec![Dense::zeros(s, s); max_batch + 1];
        let mut current = vec![Dense::zeros(s, s); max_batch + 1];
        let mut live = vec![false; max_batch + 1];
        current[0] = Dense::identity(s);
        live[0] = true;
        let mut cumulative = 0.0;
        let mut steps = 0;
        loop {
            let w = poisson_pmf(mean_jumps, steps);
            if w > 0.0 {
                for (a, block) in blocks.iter_mut().enumerate() {
                    if live[a] {
                        *block = block.add(&current[a].scale(w));
                    }
                }
                cumulative += w;
            }
            let tail = (1.0 - cumulative).max(0.0);
            // Past the mode the terms fall faster than geometrically, so a
            // negligible term means `tail` is rounding in `cumulative`.
            let past_mode = steps as f64 >= mean_jumps;
            if past_mode && (tail < UNIFORMIZATION_TAIL || w < UNIFORMIZATION_TAIL * f64::EPSILON) {
                return Ok(FrameCountKernel {
                    frame_length,
                    max_batch,
                    blocks,
                    tail,
                    steps: steps + 1,
                });
            }
            if steps + 1 >= step_budget {
                return Err(Error::Truncation {
                    target: UNIFORMIZATION_TAIL,
                    achieved: tail,
                    steps: steps + 1,
                });
            }
            let mut next = vec![Dense::zeros(s, s); max_batch + 1];
            let mut next_live = vec![false; max_batch + 1];
            for a in 0..=max_batch {
                if !live[a] {
                    continue;
                }
                for (k, jump) in &jumps {
                    let target = (a + k).min(max_batch);
                    current[a].matmul_acc(jump, &mut next[target]);
                    next_live[target] = true;
                }
            }
            current = next;
            live = next_live;
            steps += 1;
        }
    }
}

/// Poisson mass, evaluated in log space for `n ≥ 1` so large means do not underflow.
pub(crate) fn poisson_pmf(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return (-mean).exp();
    }
    let nf = n as f64;
    (-mean + nf * mean.ln() - ln_gamma(nf + 1.0)).exp()
}

/// `P_a[s][s']` = Pr(a packets in one frame and end phase `s'` | start phase `s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCountKernel {
    frame_length: f64,
    max_batch: usize,
    blocks: Vec<Dense>,
    tail: f64,
    steps: usize,
}

impl FrameCountKernel {
    pub fn frame_length(&self) -> f64 {
        self.frame_length
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    pub fn num_phases(&self) -> usize {
        self.blocks[0].rows()
    }

    pub fn blocks(&self) -> &[Dense] {
        &self.blocks
    }

    pub fn block(&self, count: usize) -> &Dense {
        &self.blocks[count]
    }

    /// Poisson mass dropped by truncating the uniformization series.
    pub fn truncated_mass(&self) -> f64 {
        self.tail
    }

    pub fn uniformization_steps(&self) -> usize {
        self.steps
    }

    /// `Φ = Σ_a P_a`, the one-frame phase transition matrix.
    pub fn phase_transition(&self) -> Dense {
        let s = self.num_phases();
        self.blocks.iter().fold(Dense::zeros(s, s), |acc, b| acc.add(b))
    }

    /// Per-connection count distribution given the start phase.
    pub fn marginal(&self, phase: usize) -> Vec<f64> {
        self.blocks.iter().map(|b| b.row(phase).iter().sum()).collect()
    }

    pub fn mean_count(&self, phase: usize) -> f64 {
        self.marginal(phase)
            .iter()
            .enumerate()
            .map(|(a, p)| a as f64 * p)
            .sum()
    }
}

/// Counts from `c` connections sharing one modulating phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateArrivalDistribution {
    connections: usize,
    per_phase: Vec<Vec<f64>>,
    phase_transition: Dense,
}

impl AggregateArrivalDistribution {
    pub fn connections(&self) -> usize {
        self.connections
    }

    /// Mass over total counts `0..=c·A` for a frame starting in `phase`.
    pub fn counts(&self, phase: usize) -> &[f64] {
        &self.per_phase[phase]
    }

    pub fn phase_transition(&self) -> &Dense {
        &self.phase_transition
    }
}

pub fn aggregate_count_distribution(kernel: &FrameCountKernel, connections: usize) -> AggregateArrivalDistribution {
    let phase_transition = kernel.phase_transition();
    let per_phase = (0..kernel.num_phases())
        .map(|s| {
            let single = kernel.marginal(s);
            (0..connections).fold(vec![1.0], |acc, _| convolve(&acc, &single))
        })
        .collect();
    AggregateArrivalDistribution {
        connections,
        per_phase,
        phase_transition,
    }
}

/// Aggregates for every connection count `0..=max_connections`, built by
/// successive convolution.
pub fn aggregate_up_to(kernel: &FrameCountKernel, max_connections: usize) -> Vec<AggregateArrivalDistribution> {
    let phase_transition = kernel.phase_transition();
    let singles: Vec<Vec<f64>> = (0..kernel.num_phases()).map(|s| kernel.marginal(s)).collect();
    let mut out = Vec::with_capacity(max_connections + 1);
    let mut current: Vec<Vec<f64>> = vec![vec![1.0]; kernel.num_phases()];
    for c in 0..=max_connections {
        if c > 0 {
            current = current
                .iter()
                .zip(&singles)
                .map(|(acc, single)| convolve(acc, single))
                .collect();
        }
        out.push(AggregateArrivalDistribution {
            connections: c,
            per_phase: current.clone(),
            phase_transition: phase_transition.clone(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_phase() -> (Dense, Vec<Dense>) {
        (
            Dense::from_rows(&[[-3.0, 1.0], [1.0, -2.0]]).unwrap(),
            vec![Dense::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap()],
        )
    }

    #[test]
    fn batch_poisson_validates() {
        assert!(BatchArrivalProcess::poisson(0.5, 30).is_ok());
    }

    #[test]
    fn zero_rate_single_phase_is_rejected() {
        let report = validate_bmap(&Dense::from_rows(&[[0.0]]).unwrap(), &[]).unwrap();
        assert!(!report.is_ok());
        assert!(matches!(
            report.violations[0].kind,
            ViolationKind::NonNegativeDiagonal(_)
        ));
    }

    #[test]
    fn two_phase_example_validates() {
        let (d0, dk) = two_phase();
        assert!(validate_bmap(&d0, &dk).unwrap().is_ok());
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let (d0, _) = two_phase();
        let err = validate_bmap(&d0, &[Dense::from_rows(&[[1.0]]).unwrap()]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn reports_every_violation_with_location() {
        let d0 = Dense::from_rows(&[[-1.0, -0.5], [0.0, 1.0]]).unwrap();
        let dk = vec![Dense::from_rows(&[[0.0, 0.0], [-1.0, 0.0]]).unwrap()];
        let report = validate_bmap(&d0, &dk).unwrap();
        let kinds: Vec<_> = report.violations.iter().map(|v| (v.matrix, v.row, v.col)).collect();
        assert!(kinds.contains(&(MatrixId::D0, Some(0), Some(1))));
        assert!(kinds.contains(&(MatrixId::D0, Some(1), Some(1))));
        assert!(kinds.contains(&(MatrixId::Batch(1), Some(1), Some(0))));
        assert!(kinds.iter().any(|k| k.0 == MatrixId::Generator));
    }

    #[test]
    fn reducible_generator_is_reported_with_classes() {
        // Phase 2 is absorbing for the phase chain.
        let d0 = Dense::from_rows(&[[-2.0, 1.0], [0.0, -1.0]]).unwrap();
        let dk = vec![Dense::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()];
        let report = validate_bmap(&d0, &dk).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(&v.kind, ViolationKind::Reducible(c) if c.len() == 2)));
    }

    #[test]
    fn generator_of_two_phase_example() {
        let (d0, dk) = two_phase();
        let p = BatchArrivalProcess::new(d0, dk).unwrap();
        let expected = Dense::from_rows(&[[-2.0, 2.0], [1.0, -1.0]]).unwrap();
        assert_eq!(p.phase_generator(), expected);
    }

    #[test]
    fn poisson_generator_is_zero() {
        let p = BatchArrivalProcess::poisson(2.0, 1).unwrap();
        assert_eq!(p.phase_generator(), Dense::from_rows(&[[0.0]]).unwrap());
    }

    #[test]
    fn no_arrival_chain_keeps_d0() {
        let d0 = Dense::from_rows(&[[-1.0, 1.0], [2.0, -2.0]]).unwrap();
        let p = BatchArrivalProcess::new(d0.clone(), vec![]).unwrap();
        assert_eq!(p.phase_generator(), d0);
        assert_eq!(p.mean_arrival_rate().unwrap(), 0.0);
    }

    #[test]
    fn stationary_of_switching_generator() {
        let (s1, s2) = (0.3, 1.7);
        let p = BatchArrivalProcess::mmpp2(1.0, 4.0, s1, s2, 1).unwrap();
        let pi = p.stationary_phase_distribution().unwrap();
        assert!((pi[0] - s2 / (s1 + s2)).abs() < 1e-14);
        assert!((pi[1] - s1 / (s1 + s2)).abs() < 1e-14);
        let sym = BatchArrivalProcess::mmpp2(1.0, 4.0, 0.7, 0.7, 1).unwrap();
        let pi = sym.stationary_phase_distribution().unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_rates() {
        let p = BatchArrivalProcess::poisson(0.25, 30).unwrap();
        assert!((p.mean_arrival_rate().unwrap() - 7.5).abs() < 1e-14);
        let m = BatchArrivalProcess::mmpp2(2.0, 6.0, 0.4, 0.4, 1).unwrap();
        assert!((m.mean_arrival_rate().unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_rejects_bad_parameters() {
        let p = BatchArrivalProcess::poisson(1.0, 1).unwrap();
        assert!(p.frame_count_kernel(0.0, 5).is_err());
        assert!(p.frame_count_kernel(1.0, 0).is_err());
    }

    #[test]
    fn kernel_truncation_error_reports_tail() {
        let p = BatchArrivalProcess::poisson(1.0e4, 1).unwrap();
        match p.frame_count_kernel_with_budget(1.0, 10, 50) {
            Err(Error::Truncation { achieved, steps, .. }) => {
                assert!(achieved > 0.5);
                assert_eq!(steps, 50);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn aggregate_of_zero_connections_is_point_mass() {
        let p = BatchArrivalProcess::mmpp2(1.0, 3.0, 0.5, 0.5, 2).unwrap();
        let k = p.frame_count_kernel(0.1, 4).unwrap();
        let agg = aggregate_count_distribution(&k, 0);
        for s in 0..2 {
            assert_eq!(agg.counts(s), &[1.0]);
        }
        assert!(agg.phase_transition().max_abs_diff(&k.phase_transition()) == 0.0);
    }

    #[test]
    fn aggregate_of_one_connection_is_marginal() {
        let p = BatchArrivalProcess::mmpp2(1.0, 3.0, 0.5, 0.5, 2).unwrap();
        let k = p.frame_count_kernel(0.1, 4).unwrap();
        let agg = aggregate_count_distribution(&k, 1);
        for s in 0..2 {
            assert_eq!(agg.counts(s), k.marginal(s).as_slice());
        }
    }

    #[test]
    fn successive_aggregates_match_direct() {
        let p = BatchArrivalProcess::mmpp2(1.0, 3.0, 0.5, 0.5, 2).unwrap();
        let k = p.frame_count_kernel(0.1, 4).unwrap();
        let all = aggregate_up_to(&k, 4);
        for c in 0..=4 {
            let direct = aggregate_count_distribution(&k, c);
            for s in 0..2 {
                let a = all[c].counts(s);
                let b = direct.counts(s);
                assert_eq!(a.len(), c * 4 + 1);
                assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
            }
        }
    }
}
