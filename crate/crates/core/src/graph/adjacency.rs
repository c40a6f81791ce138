use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How dependency arcs become attention edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFlags {
    /// Add the reverse of every head arc.
    pub symmetrize: bool,
    /// Let every token see itself.
    pub self_loops: bool,
}

impl Default for EdgeFlags {
    fn default() -> Self {
        EdgeFlags { symmetrize: true, self_loops: true }
    }
}

/// Binary `n x n` adjacency (`d_e = 1`), optionally with a style node
/// appended as the last row and column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
    style_node: bool,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency { n, bits: vec![false; n * n], style_node: false }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 0..n {
            a.set(i, i, true);
        }
        a
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("adjacency", "rows must be square"));
        }
        Ok(Adjacency { n, bits: rows.concat(), style_node: false })
    }

    /// Number of nodes, including the style node when present.
    pub fn size(&self) -> usize {
        self.n
    }

    /// Number of token nodes.
    pub fn tokens(&self) -> usize {
        self.n - usize::from(self.style_node)
    }

    pub fn has_style_node(&self) -> bool {
        self.style_node
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.n + j] = on;
    }

    /// Row-major visibility matrix.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn off_diagonal_edges(&self) -> usize {
        (0..self.n).flat_map(|i| (0..self.n).map(move |j| (i, j))).filter(|&(i, j)| i != j && self.get(i, j)).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![self.n, self.n], data).expect("square")
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Adjacency { n: self.n, bits: vec![false; self.n * self.n], style_node: self.style_node };
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(i, j, self.get(perm[i], perm[j]));
            }
        }
        out
    }

    /// Nodes reachable from `start` in at most `hops` steps.
    pub fn ball(&self, start: usize, hops: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        seen[start] = true;
        let mut frontier = vec![start];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &i in &frontier {
                for j in self.neighbours(i) {
                    if !seen[j] {
                        seen[j] = true;
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        seen
    }
}

/// Adjacency from 1-based `heads` (0 = root): `e[i][head(i)-1] = 1` for every
/// non-root token, plus transposes and the diagonal per `flags`.
pub fn build_adjacency(heads: &[usize], flags: EdgeFlags) -> Adjacency {
    let k = heads.len();
    let mut adj = Adjacency::empty(k);
    for (i, &h) in heads.iter().enumerate() {
        if h == 0 {
            continue;
        }
        adj.set(i, h - 1, true);
        if flags.symmetrize {
            adj.set(h - 1, i, true);
        }
    }
    if flags.self_loops {
        for i in 0..k {
            adj.set(i, i, true);
        }
    }
    adj
}

/// Appends a style node connected to every token (and itself).
pub fn augment_with_style_node(adj: &Adjacency) -> Result<Adjacency> {
    if adj.style_node {
        return Err(Error::InvalidArgument("adjacency already carries a style node".into()));
    }
    let k = adj.n;
    let n = k + 1;
    let mut out = Adjacency { n, bits: vec![false; n * n], style_node: true };
    for i in 0..k {
        for j in 0..k {
            out.set(i, j, adj.get(i, j));
        }
        out.set(i, k, true);
        out.set(k, i, true);
    }
    out.set(k, k, true);
    Ok(out)
}
