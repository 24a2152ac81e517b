//! One-frame transition kernel over states `(phase, queue length, ongoing connections)`.
//!
//! Each frame, in order:
//!
//! 1. every ongoing connection emits a batch drawn from the per-connection
//!    count distribution of the frame-start phase;
//! 2. `l = min(R, x)` packets leave from the frame-start backlog `x`;
//! 3. arrivals join the queue, anything beyond `X` is dropped;
//! 4. the phase moves by `Φ`;
//! 5. connections arrive and depart per the admission policy, using the
//!    frame-start `x` and `c`.
//!
//! Steps 1–3 give the queue factor, 4 the phase factor and 5 the connection
//! factor, so every transition probability is the product
//! `Φ[s][s'] · Q_x[c][c'] · V_{s,c}[x][x']`. [`ChainKernel`] keeps that
//! factored form; [`ChainKernel::assemble`] materializes the sparse matrix.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrival::{aggregate_up_to, AggregateArrivalDistribution, FrameCountKernel};
use crate::channel::CapacityDistribution;
use crate::connection::{connection_transition_matrix, CacPolicy, ConnectionLimits, ConnectionParams};
use crate::error::{Error, Result};
use crate::graph::{closed_classes, reachable_from, strongly_connected, Successors};
use crate::linalg::Dense;

/// Content hash tying a stationary vector to the kernel it was solved from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub u64);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

struct Hasher(Sha256);

impl Hasher {
    fn new() -> Self {
        Self(Sha256::new())
    }

    fn usize(&mut self, v: usize) {
        self.0.update((v as u64).to_le_bytes());
    }

    fn floats(&mut self, v: &[f64]) {
        for x in v {
            self.0.update(x.to_bits().to_le_bytes());
        }
    }

    fn finish(self) -> Fingerprint {
        let digest = self.0.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_le_bytes(bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    /// Zero-based phase index (printed one-based).
    pub phase: usize,
    pub queue: usize,
    pub conns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub phases: usize,
    pub queue_cap: usize,
    pub conn_cap: usize,
}

impl StateSpace {
    pub fn new(phases: usize, queue_cap: usize, conn_cap: usize) -> Self {
        assert!(phases >= 1, "at least one phase");
        Self {
            phases,
            queue_cap,
            conn_cap,
        }
    }

    pub fn len(&self) -> usize {
        self.phases * (self.queue_cap + 1) * (self.conn_cap + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `((s·(X+1) + x)·(C'+1) + c)` with zero-based `s`.
    pub fn index(&self, state: State) -> usize {
        debug_assert!(self.contains(state));
        (state.phase * (self.queue_cap + 1) + state.queue) * (self.conn_cap + 1) + state.conns
    }

    pub fn checked_index(&self, state: State) -> Result<usize> {
        if self.contains(state) {
            Ok(self.index(state))
        } else {
            Err(Error::OutOfRange(format!(
                "(phase {}, queue {}, conns {}) outside {} x {} x {}",
                state.phase + 1,
                state.queue,
                state.conns,
                self.phases,
                self.queue_cap + 1,
                self.conn_cap + 1
            )))
        }
    }

    pub fn contains(&self, state: State) -> bool {
        state.phase < self.phases && state.queue <= self.queue_cap && state.conns <= self.conn_cap
    }

    pub fn state(&self, index: usize) -> State {
        let conns = index % (self.conn_cap + 1);
        let rest = index / (self.conn_cap + 1);
        State {
            phase: rest / (self.queue_cap + 1),
            queue: rest % (self.queue_cap + 1),
            conns,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}

/// Next-queue-length mass from one `(x, s, c)`, plus the expected number of
/// packets dropped at the buffer limit.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueRow {
    /// Queue length of `mass[0]`.
    pub lo: usize,
    pub mass: Vec<f64>,
    pub overflow: f64,
}

impl QueueRow {
    pub fn prob(&self, next: usize) -> f64 {
        next.checked_sub(self.lo)
            .and_then(|i| self.mass.get(i))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Arrival count mass with its upper-tail sums, for fast row construction.
struct ArrivalTails {
    mass: Vec<f64>,
    support: Vec<usize>,
    /// `tail[k] = Σ_{a ≥ k} mass[a]`.
    tail: Vec<f64>,
    /// `excess[k] = Σ_{a ≥ k} mass[a]·(a − k + 1)`, the packets lost when only `k − 1` fit.
    excess: Vec<f64>,
}

impl ArrivalTails {
    fn new(mass: &[f64]) -> Self {
        let n = mass.len();
        let mut tail = vec![0.0; n + 1];
        let mut excess = vec![0.0; n + 1];
        for k in (0..n).rev() {
            tail[k] = tail[k + 1] + mass[k];
            excess[k] = excess[k + 1] + tail[k];
        }
        Self {
            mass: mass.to_vec(),
            support: (0..n).filter(|&a| mass[a] > 0.0).collect(),
            tail,
            excess,
        }
    }

    fn row(&self, x: usize, transmitted: &[f64], queue_cap: usize) -> QueueRow {
        let lo = x + 1 - transmitted.len();
        let mut mass = vec![0.0; queue_cap - lo + 1];
        let mut overflow = 0.0;
        for (l, &pl) in transmitted.iter().enumerate() {
            if pl == 0.0 {
                continue;
            }
            let base = x - l;
            let room = queue_cap - base;
            for &a in &self.support {
                if a > room {
                    break;
                }
                mass[base + a - lo] += pl * self.mass[a];
            }
            let k = room + 1;
            if k < self.mass.len() {
                mass[queue_cap - lo] += pl * self.tail[k];
                overflow += pl * self.excess[k];
            }
        }
        let first = mass.iter().position(|&p| p > 0.0).unwrap_or(0);
        let last = mass.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        QueueRow {
            lo: lo + first,
            mass: mass[first..=last].to_vec(),
            overflow,
        }
    }
}

/// Queue transition out of `(x, phase, c)` where `c` is the connection count
/// the aggregate was built for.
pub fn queue_transition_row(
    queue_len: usize,
    phase: usize,
    aggregate: &AggregateArrivalDistribution,
    capacity: &CapacityDistribution,
    queue_cap: usize,
) -> QueueRow {
    assert!(queue_len <= queue_cap);
    ArrivalTails::new(aggregate.counts(phase)).row(queue_len, &capacity.transmitted(queue_len), queue_cap)
}

/// Everything the chain is assembled from.
#[derive(Debug, Clone, Copy)]
pub struct ChainInputs<'a> {
    pub policy: &'a CacPolicy,
    pub kernel: &'a FrameCountKernel,
    pub capacity: &'a CapacityDistribution,
    pub connections: &'a ConnectionParams,
    pub limits: ConnectionLimits,
    pub queue_cap: usize,
}

/// Sparse row of a small dense matrix.
type SparseRow = Vec<(usize, f64)>;

/// Queue rows of one `(phase, conns)` block: first column, row lengths,
/// concatenated entries and expected overflow.
type QueueBlock = (Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>);

/// The one-frame transition kernel in factored form.
#[derive(Debug, Clone)]
pub struct ChainKernel {
    space: StateSpace,
    phase_transition: Dense,
    phase_rows: Vec<SparseRow>,
    conn_matrices: Vec<Dense>,
    conn_rows: Vec<Vec<SparseRow>>,
    conn_of_queue: Vec<usize>,
    row_lo: Vec<usize>,
    row_start: Vec<usize>,
    row_data: Vec<f64>,
    overflow: Vec<f64>,
    arrival_means: Vec<f64>,
    fingerprint: Fingerprint,
}

fn sparse_rows(m: &Dense) -> Vec<SparseRow> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(j, &v)| (j, v))
                .collect()
        })
        .collect()
}

impl ChainKernel {
    pub fn build(inputs: &ChainInputs<'_>) -> Result<Self> {
        let ChainInputs {
            policy,
            kernel,
            capacity,
            connections,
            limits,
            queue_cap,
        } = *inputs;
        policy.validate(queue_cap)?;
        let conn_cap = policy.conn_cap();
        let phases = kernel.num_phases();
        let space = StateSpace::new(phases, queue_cap, conn_cap);

        let phase_transition = kernel.phase_transition();

        // One connection matrix per distinct acceptance behaviour.
        let mut conn_matrices = Vec::new();
        let mut conn_of_queue = Vec::with_capacity(queue_cap + 1);
        match policy {
            CacPolicy::QueueAware { alpha, .. } => {
                let mut seen: HashMap<u64, usize> = HashMap::new();
                for (x, a) in alpha.iter().enumerate() {
                    let id = *seen.entry(a.to_bits()).or_insert_with(|| {
                        conn_matrices.push(connection_transition_matrix(policy, x, connections, &limits));
                        conn_matrices.len() - 1
                    });
                    conn_of_queue.push(id);
                }
            }
            _ => {
                conn_matrices.push(connection_transition_matrix(policy, 0, connections, &limits));
                conn_of_queue.resize(queue_cap + 1, 0);
            }
        }

        let aggregates = aggregate_up_to(kernel, conn_cap);
        let transmitted: Vec<Vec<f64>> = (0..=queue_cap).map(|x| capacity.transmitted(x)).collect();

        let blocks: Vec<QueueBlock> = (0..phases * (conn_cap + 1))
            .into_par_iter()
            .map(|sc| {
                let (s, c) = (sc / (conn_cap + 1), sc % (conn_cap + 1));
                let tails = ArrivalTails::new(aggregates[c].counts(s));
                let mut lo = Vec::with_capacity(queue_cap + 1);
                let mut lens = Vec::with_capacity(queue_cap + 1);
                let mut data = Vec::new();
                let mut overflow = Vec::with_capacity(queue_cap + 1);
                for (x, tx) in transmitted.iter().enumerate() {
                    let row = tails.row(x, tx, queue_cap);
                    lo.push(row.lo);
                    lens.push(row.mass.len());
                    data.extend_from_slice(&row.mass);
                    overflow.push(row.overflow);
                }
                (lo, lens, data, overflow)
            })
            .collect();

        let mut row_lo = Vec::with_capacity(space.len());
        let mut row_start = Vec::with_capacity(space.len() + 1);
        let mut row_data = Vec::with_capacity(blocks.iter().map(|b| b.2.len()).sum());
        let mut overflow = Vec::with_capacity(space.len());
        row_start.push(0);
        for (lo, lens, data, ovf) in blocks {
            row_lo.extend(lo);
            let mut acc = *row_start.last().unwrap();
            for len in lens {
                acc += len;
                row_start.push(acc);
            }
            row_data.extend(data);
            overflow.extend(ovf);
        }

        let arrival_means = (0..phases).map(|s| kernel.mean_count(s)).collect();

        let mut h = Hasher::new();
        h.usize(phases);
        h.usize(queue_cap);
        h.usize(conn_cap);
        h.floats(phase_transition.as_slice());
        for m in &conn_matrices {
            h.floats(m.as_slice());
        }
        for &id in &conn_of_queue {
            h.usize(id);
        }
        for &lo in &row_lo {
            h.usize(lo);
        }
        for &st in &row_start {
            h.usize(st);
        }
        h.floats(&row_data);
        h.floats(&overflow);
        let fingerprint = h.finish();

        Ok(Self {
            space,
            phase_rows: sparse_rows(&phase_transition),
            phase_transition,
            conn_rows: conn_matrices.iter().map(sparse_rows).collect(),
            conn_matrices,
            conn_of_queue,
            row_lo,
            row_start,
            row_data,
            overflow,
            arrival_means,
            fingerprint,
        })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn phase_transition(&self) -> &Dense {
        &self.phase_transition
    }

    /// `Q_x`, the connection matrix applied at queue length `x`.
    pub fn connection_matrix(&self, queue_len: usize) -> &Dense {
        &self.conn_matrices[self.conn_of_queue[queue_len]]
    }

    /// Mean packets one connection emits in a frame starting in `phase`.
    pub fn arrival_mean(&self, phase: usize) -> f64 {
        self.arrival_means[phase]
    }

    fn row_index(&self, phase: usize, queue: usize, conns: usize) -> usize {
        (phase * (self.space.conn_cap + 1) + conns) * (self.space.queue_cap + 1) + queue
    }

    /// Queue factor of the kernel at `(s, x, c)`.
    pub fn queue_row(&self, state: State) -> (usize, &[f64]) {
        let r = self.row_index(state.phase, state.queue, state.conns);
        (self.row_lo[r], &self.row_data[self.row_start[r]..self.row_start[r + 1]])
    }

    /// Expected packets dropped in one frame out of each state, canonical order.
    pub fn overflow_ledger(&self) -> OverflowLedger {
        let values = self
            .space
            .iter()
            .map(|st| self.overflow[self.row_index(st.phase, st.queue, st.conns)])
            .collect();
        OverflowLedger {
            values,
            fingerprint: self.fingerprint,
        }
    }

    /// Calls `f(target, probability)` for every positive entry of row `from`,
    /// in increasing target order.
    pub fn for_each_in_row(&self, from: usize, mut f: impl FnMut(usize, f64)) {
        let st = self.space.state(from);
        let (lo, qrow) = self.queue_row(st);
        let crow = &self.conn_rows[self.conn_of_queue[st.queue]][st.conns];
        let (xs, cs) = (self.space.queue_cap + 1, self.space.conn_cap + 1);
        for &(s2, pp) in &self.phase_rows[st.phase] {
            for (j, &v) in qrow.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let base = (s2 * xs + lo + j) * cs;
                for &(c2, pc) in crow {
                    f(base + c2, pp * v * pc);
                }
            }
        }
    }

    /// Number of stored nonzeros the assembled matrix would hold.
    pub fn nonzeros(&self) -> usize {
        self.space
            .iter()
            .map(|st| {
                let (_, qrow) = self.queue_row(st);
                let q = qrow.iter().filter(|&&v| v > 0.0).count();
                let c = self.conn_rows[self.conn_of_queue[st.queue]][st.conns].len();
                self.phase_rows[st.phase].len() * q * c
            })
            .sum()
    }

    /// Bytes needed for the assembled CSR matrix.
    pub fn assembled_bytes(&self) -> (usize, usize) {
        let nnz = self.nonzeros();
        let bytes = nnz * (std::mem::size_of::<f64>() + std::mem::size_of::<u32>())
            + (self.space.len() + 1) * std::mem::size_of::<usize>();
        (nnz, bytes)
    }

    /// Materializes the sparse matrix, refusing before allocation when it
    /// would not fit in `budget_bytes`.
    pub fn assemble(&self, budget_bytes: usize) -> Result<TransitionMatrix> {
        let (nnz, bytes) = self.assembled_bytes();
        if bytes > budget_bytes {
            return Err(Error::MemoryBudget {
                states: self.space.len(),
                nonzeros: nnz,
                bytes,
                budget: budget_bytes,
            });
        }
        let n = self.space.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for i in 0..n {
            self.for_each_in_row(i, |j, v| {
                cols.push(j as u32);
                vals.push(v);
            });
            row_ptr.push(cols.len());
        }
        Ok(TransitionMatrix {
            n,
            row_ptr,
            cols,
            vals,
            fingerprint: self.fingerprint,
        })
    }

    /// Streams the matrix in coordinate form without materializing it.
    pub fn write_coordinates(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{} {}", self.space.len(), self.nonzeros())?;
        let mut result = Ok(());
        for i in 0..self.space.len() {
            self.for_each_in_row(i, |j, v| {
                if result.is_ok() {
                    result = writeln!(out, "{i} {j} {v}");
                }
            });
            result.as_ref().map_err(|e| io::Error::new(e.kind(), e.to_string()))?;
        }
        Ok(())
    }

    /// Row sums of the queue and phase factors for `(s, x, c)`; below 1 only
    /// by the truncated uniformization mass.
    fn factor_row_mass(&self, st: State) -> f64 {
        let (_, qrow) = self.queue_row(st);
        let q: f64 = qrow.iter().sum();
        let p: f64 = self.phase_rows[st.phase].iter().map(|e| e.1).sum();
        q * p
    }
}

/// Expected drops per frame out of each state, tied to the kernel it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct OverflowLedger {
    pub values: Vec<f64>,
    pub fingerprint: Fingerprint,
}

/// Row-stochastic sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    fingerprint: Fingerprint,
}

impl TransitionMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// zeros dropped. The fingerprint hashes the content.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::OutOfRange(format!("entry ({i}, {j}) in a {n}-state matrix")));
            }
            if !(v >= 0.0) {
                return Err(Error::Parameter {
                    name: "transition matrix",
                    reason: format!("entry ({i}, {j}) = {v} is negative"),
                });
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else if v > 0.0 {
                    cols.push(j as u32);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut h = Hasher::new();
        h.usize(n);
        for &p in &row_ptr {
            h.usize(p);
        }
        for &c in &cols {
            h.usize(c as usize);
        }
        h.floats(&vals);
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
            fingerprint: h.finish(),
        })
    }

    pub fn from_dense(m: &Dense) -> Result<Self> {
        assert!(m.is_square());
        let n = m.rows();
        Self::from_triplets(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j, m[(i, j)]))))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nonzeros(&self) -> usize {
        self.vals.len()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Largest `|Σ_j P[i][j] − 1|` over rows.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `out = x P`.
    pub fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += xi * v;
            }
        }
    }

    /// Coordinate text: a `N nnz` header, then one `row col value` per line.
    pub fn write_coordinates(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{} {}", self.n, self.nonzeros())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v}")?;
            }
        }
        Ok(())
    }

    pub fn read_coordinates(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Structure("empty coordinate file".into()))??;
        let mut parts = header.split_whitespace();
        let parse_err = |what: &str| Error::Structure(format!("bad coordinate {what}"));
        let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("header"))?;
        let nnz: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("header"))?;
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut p = line.split_whitespace();
            let i = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("row"))?;
            let j = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("column"))?;
            let v = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("value"))?;
            triplets.push((i, j, v));
        }
        if triplets.len() != nnz {
            return Err(Error::Structure(format!(
                "header announces {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(n, triplets)
    }
}

impl Successors for TransitionMatrix {
    fn num_nodes(&self) -> usize {
        self.n
    }

    fn successors(&self, node: usize, out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.row(node).filter(|e| e.1 > 0.0).map(|e| e.0));
    }
}

impl Successors for ChainKernel {
    fn num_nodes(&self) -> usize {
        self.space.len()
    }

    fn successors(&self, node: usize, out: &mut Vec<usize>) {
        out.clear();
        self.for_each_in_row(node, |j, v| {
            if v > 0.0 {
                out.push(j);
            }
        });
    }
}

/// A row-stochastic operator the solvers can iterate with.
pub trait MarkovOperator: Successors + Sync {
    fn dim(&self) -> usize;
    /// `out = x P`.
    fn apply_left(&self, x: &[f64], out: &mut [f64]);
    fn operator_fingerprint(&self) -> Fingerprint;
}

impl MarkovOperator for TransitionMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_left(&self, x: &[f64], out: &mut [f64]) {
        self.left_mul(x, out);
    }

    fn operator_fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

impl MarkovOperator for ChainKernel {
    fn dim(&self) -> usize {
        self.space.len()
    }

    fn apply_left(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (xs, cs) = (self.space.queue_cap + 1, self.space.conn_cap + 1);
        for (i, &w) in x.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let st = self.space.state(i);
            let (lo, qrow) = self.queue_row(st);
            let crow = &self.conn_rows[self.conn_of_queue[st.queue]][st.conns];
            for &(s2, pp) in &self.phase_rows[st.phase] {
                let wp = w * pp;
                for &(c2, pc) in crow {
                    let wpc = wp * pc;
                    let base = (s2 * xs + lo) * cs + c2;
                    for (j, &v) in qrow.iter().enumerate() {
                        out[base + j * cs] += wpc * v;
                    }
                }
            }
        }
    }

    fn operator_fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// A chain whose states split into levels of equal size, solved level by level.
///
/// Level `l`, local index `k` maps to global state `k · levels + l`.
pub trait LeveledChain: MarkovOperator {
    fn num_levels(&self) -> usize;
    fn level_size(&self) -> usize;

    fn global_index(&self, level: usize, local: usize) -> usize {
        local * self.num_levels() + level
    }

    /// The within-level block and, per row, the mass leaving the level.
    /// Mass a row leaves unassigned counts as staying put.
    fn diagonal_block(&self, level: usize) -> (Dense, Vec<f64>);

    /// Adds `x · P[level → l]` into `acc[l]` for every other level `l` with `wanted(l)`.
    fn scatter_off_level(&self, level: usize, x: &[f64], acc: &mut [Vec<f64>], wanted: &dyn Fn(usize) -> bool);

    /// `Σ_k x[k] · P[level, k → l]` summed over the states of each level `l`.
    fn level_flow(&self, level: usize, x: &[f64]) -> Vec<f64>;
}

impl LeveledChain for ChainKernel {
    fn num_levels(&self) -> usize {
        self.space.conn_cap + 1
    }

    fn level_size(&self) -> usize {
        self.space.phases * (self.space.queue_cap + 1)
    }

    fn diagonal_block(&self, level: usize) -> (Dense, Vec<f64>) {
        let xs = self.space.queue_cap + 1;
        let m = self.level_size();
        let mut block = Dense::zeros(m, m);
        let mut exit = vec![0.0; m];
        for s in 0..self.space.phases {
            for x in 0..xs {
                let st = State {
                    phase: s,
                    queue: x,
                    conns: level,
                };
                let k = s * xs + x;
                let (lo, qrow) = self.queue_row(st);
                let crow = &self.conn_rows[self.conn_of_queue[x]][level];
                let stay = crow.iter().find(|e| e.0 == level).map_or(0.0, |e| e.1);
                let leave: f64 = crow.iter().filter(|e| e.0 != level).map(|e| e.1).sum();
                let mass = self.factor_row_mass(st);
                let row = block.row_mut(k);
                if stay > 0.0 {
                    for &(s2, pp) in &self.phase_rows[s] {
                        for (j, &v) in qrow.iter().enumerate() {
                            row[s2 * xs + lo + j] += pp * stay * v;
                        }
                    }
                }
                exit[k] = leave * mass;
            }
        }
        (block, exit)
    }

    fn scatter_off_level(&self, level: usize, x: &[f64], acc: &mut [Vec<f64>], wanted: &dyn Fn(usize) -> bool) {
        let xs = self.space.queue_cap + 1;
        for (k, &w) in x.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (s, q) = (k / xs, k % xs);
            let st = State {
                phase: s,
                queue: q,
                conns: level,
            };
            let (lo, qrow) = self.queue_row(st);
            for &(c2, pc) in &self.conn_rows[self.conn_of_queue[q]][level] {
                if c2 == level || !wanted(c2) {
                    continue;
                }
                let target = &mut acc[c2];
                for &(s2, pp) in &self.phase_rows[s] {
                    let wpc = w * pc * pp;
                    let base = s2 * xs + lo;
                    for (t, &v) in target[base..base + qrow.len()].iter_mut().zip(qrow) {
                        *t += wpc * v;
                    }
                }
            }
        }
    }

    fn level_flow(&self, level: usize, x: &[f64]) -> Vec<f64> {
        let xs = self.space.queue_cap + 1;
        let mut flow = vec![0.0; self.num_levels()];
        for (k, &w) in x.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let st = State {
                phase: k / xs,
                queue: k % xs,
                conns: level,
            };
            let mass = self.factor_row_mass(st);
            for &(c2, pc) in &self.conn_rows[self.conn_of_queue[st.queue]][level] {
                flow[c2] += w * pc * mass;
            }
        }
        flow
    }
}

/// Convenience wrapper: build the factored kernel and materialize it.
pub fn assemble(inputs: &ChainInputs<'_>, budget_bytes: usize) -> Result<TransitionMatrix> {
    ChainKernel::build(inputs)?.assemble(budget_bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub start: usize,
    pub reachable: usize,
    /// States the search from `start` never reaches.
    pub isolated: Vec<usize>,
    /// Reachable states outside the closed classes.
    pub transient: Vec<usize>,
    pub closed_classes: Vec<Vec<usize>>,
}

impl ReachabilityReport {
    /// One closed class covering everything reachable from the start.
    pub fn is_irreducible_on_closure(&self) -> bool {
        self.closed_classes.len() == 1 && self.transient.is_empty()
    }
}

/// Graph search from `start`, then communicating classes of what it reached.
pub fn reachability_check<G: Successors + ?Sized>(graph: &G, start: usize) -> ReachabilityReport {
    let seen = reachable_from(graph, start);
    let comps = strongly_connected(graph, Some(&seen));
    let closed = closed_classes(graph, &comps);
    let closed_classes: Vec<Vec<usize>> = closed.iter().map(|&c| comps[c].clone()).collect();
    let mut in_closed = vec![false; seen.len()];
    for class in &closed_classes {
        for &v in class {
            in_closed[v] = true;
        }
    }
    ReachabilityReport {
        start,
        reachable: seen.iter().filter(|&&s| s).count(),
        isolated: (0..seen.len()).filter(|&i| !seen[i]).collect(),
        transient: (0..seen.len()).filter(|&i| seen[i] && !in_closed[i]).collect(),
        closed_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrival::{aggregate_count_distribution, BatchArrivalProcess};

    #[test]
    fn canonical_index_is_a_bijection() {
        let space = StateSpace::new(2, 4, 3);
        let mut seen = vec![false; space.len()];
        for s in 0..2 {
            for x in 0..=4 {
                for c in 0..=3 {
                    let st = State { phase: s, queue: x, conns: c };
                    let i = space.index(st);
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(space.state(i), st);
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert!(space.checked_index(State { phase: 2, queue: 0, conns: 0 }).is_err());
    }

    fn single_phase_kernel(rate_per_frame: f64, max_batch: usize) -> FrameCountKernel {
        BatchArrivalProcess::poisson(rate_per_frame, 1)
            .unwrap()
            .frame_count_kernel(1.0, max_batch)
            .unwrap()
    }

    #[test]
    fn empty_queue_sends_nothing() {
        let k = single_phase_kernel(0.7, 3);
        let agg = aggregate_count_distribution(&k, 2);
        let cap = CapacityDistribution::from_mass(vec![0.1, 0.4, 0.5]).unwrap();
        let row = queue_transition_row(0, 0, &agg, &cap, 4);
        for (a, &p) in agg.counts(0).iter().enumerate() {
            if a < 4 {
                assert!((row.prob(a) - p).abs() < 1e-15);
            }
        }
        let tail: f64 = agg.counts(0)[4..].iter().sum();
        assert!((row.prob(4) - tail).abs() < 1e-15);
    }

    #[test]
    fn drain_without_arrivals() {
        let k = single_phase_kernel(0.7, 3);
        let agg = aggregate_count_distribution(&k, 0);
        let row = queue_transition_row(5, 0, &agg, &CapacityDistribution::point(1), 10);
        assert_eq!(row.lo, 4);
        assert_eq!(row.mass, vec![1.0]);
        assert_eq!(row.overflow, 0.0);
    }

    #[test]
    fn full_buffer_overflow_expectation() {
        // Two arrivals for sure, one departure for sure, full queue: one packet lost.
        let d0 = Dense::from_rows(&[[-1.0]]).unwrap();
        let process = BatchArrivalProcess::from_batches(d0, [(2, Dense::from_rows(&[[1.0]]).unwrap())]).unwrap();
        let kernel = process.frame_count_kernel(1.0, 2).unwrap();
        // Force a point mass at 2 by building the aggregate from a hand-made kernel.
        let agg = aggregate_count_distribution(&kernel, 1);
        let counts = agg.counts(0);
        let row = ArrivalTails::new(&[0.0, 0.0, 1.0]).row(3, &CapacityDistribution::point(1).transmitted(3), 3);
        assert_eq!(row.lo, 3);
        assert_eq!(row.mass, vec![1.0]);
        assert!((row.overflow - 1.0).abs() < 1e-15);
        assert!((counts.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coordinate_round_trip() {
        let m = Dense::from_rows(&[[0.25, 0.75], [1.0, 0.0]]).unwrap();
        let p = TransitionMatrix::from_dense(&m).unwrap();
        let mut buf = Vec::new();
        p.write_coordinates(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("2 3\n"));
        let back = TransitionMatrix::read_coordinates(&buf[..]).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn identity_leaves_everything_isolated() {
        let p = TransitionMatrix::from_dense(&Dense::identity(4)).unwrap();
        let r = reachability_check(&p, 0);
        assert_eq!(r.reachable, 1);
        assert_eq!(r.isolated, vec![1, 2, 3]);
        assert!(r.is_irreducible_on_closure());
    }
}
