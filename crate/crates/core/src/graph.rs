//! Reachability and communicating classes over lazily generated rows.
//!
//! Transition matrices at full scale are too large to hold twice, so the
//! searches here ask for a node's successors on demand and never keep more
//! than one adjacency row alive.

use crate::linalg::Dense;

pub trait Successors {
    fn num_nodes(&self) -> usize;
    /// Clears `out` and fills it with the targets of positive entries in row `node`.
    fn successors(&self, node: usize, out: &mut Vec<usize>);
}

impl Successors for Dense {
    fn num_nodes(&self) -> usize {
        self.rows()
    }

    fn successors(&self, node: usize, out: &mut Vec<usize>) {
        out.clear();
        out.extend(
            self.row(node)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != node && v > 0.0)
                .map(|(j, _)| j),
        );
        if self[(node, node)] > 0.0 {
            out.push(node);
        }
    }
}

pub fn reachable_from<G: Successors + ?Sized>(graph: &G, start: usize) -> Vec<bool> {
    let mut seen = vec![false; graph.num_nodes()];
    let mut queue = vec![start];
    seen[start] = true;
    let mut buf = Vec::new();
    while let Some(v) = queue.pop() {
        graph.successors(v, &mut buf);
        for &w in &buf {
            if !seen[w] {
                seen[w] = true;
                queue.push(w);
            }
        }
    }
    seen
}

/// Strongly connected components (Tarjan, iterative). When `within` is given,
/// only those nodes are visited and edges leaving the set are ignored.
pub fn strongly_connected<G: Successors + ?Sized>(
    graph: &G,
    within: Option<&[bool]>,
) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = graph.num_nodes();
    let allowed = |v: usize| within.is_none_or(|w| w[v]);
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut calls: Vec<(usize, usize)> = Vec::new();
    let mut comps = Vec::new();
    let mut buf = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if index[root] != UNSEEN || !allowed(root) {
            continue;
        }
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        calls.push((root, 0));

        while let Some(&(v, cursor)) = calls.last() {
            graph.successors(v, &mut buf);
            let mut next = cursor;
            let mut descended = false;
            while next < buf.len() {
                let w = buf[next];
                next += 1;
                if !allowed(w) {
                    continue;
                }
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    calls.last_mut().unwrap().1 = next;
                    calls.push((w, 0));
                    descended = true;
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            if descended {
                continue;
            }
            calls.pop();
            if let Some(&(parent, _)) = calls.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Indices into `comps` of the classes no edge leaves.
pub fn closed_classes<G: Successors + ?Sized>(graph: &G, comps: &[Vec<usize>]) -> Vec<usize> {
    let mut owner = vec![usize::MAX; graph.num_nodes()];
    for (ci, comp) in comps.iter().enumerate() {
        for &v in comp {
            owner[v] = ci;
        }
    }
    let mut buf = Vec::new();
    comps
        .iter()
        .enumerate()
        .filter(|(ci, comp)| {
            comp.iter().all(|&v| {
                graph.successors(v, &mut buf);
                buf.iter().all(|&w| owner[w] == *ci)
            })
        })
        .map(|(ci, _)| ci)
        .collect()
}
