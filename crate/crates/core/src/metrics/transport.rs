//! Exact optimal transport between small integer histograms, and the
//! lexicon-masked word mover's distance built on it.

use std::collections::BTreeMap;

use super::embeddings::WordEmbeddings;
use super::lexicon::StyleLexicon;
use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

struct Edge {
    to: usize,
    cap: u64,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    out: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        FlowGraph { edges: Vec::new(), out: vec![Vec::new(); nodes] }
    }

    fn add(&mut self, from: usize, to: usize, cap: u64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
        self.out[from].push(id);
        self.out[to].push(id + 1);
        id
    }

    /// Bellman-Ford over the residual graph; returns the incoming edge of
    /// every node on a cheapest path tree from `source`.
    fn shortest_paths(&self, source: usize) -> Vec<Option<usize>> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![None; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &self.out[u] {
                    let edge = &self.edges[e];
                    if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - EPS {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        via
    }
}

/// Minimum-cost plan moving integer `supply` onto integer `demand` with
/// per-unit costs `cost[i][j]`. Totals must agree. Returns the plan and its
/// total cost.
pub fn optimal_transport(supply: &[u64], demand: &[u64], cost: &[Vec<f64>]) -> Result<(Vec<Vec<u64>>, f64)> {
    let (n, m) = (supply.len(), demand.len());
    if cost.len() != n || cost.iter().any(|row| row.len() != m) {
        return Err(Error::shape("optimal_transport", format!("{n} supplies, {m} demands, cost {}x?", cost.len())));
    }
    if supply.iter().sum::<u64>() != demand.iter().sum::<u64>() {
        return Err(Error::InvalidArgument("supply and demand totals differ".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument("transport costs must be finite and non-negative".into()));
    }
    let (source, sink) = (0, n + m + 1);
    let mut g = FlowGraph::new(n + m + 2);
    for (i, &s) in supply.iter().enumerate() {
        g.add(source, 1 + i, s, 0.0);
    }
    for (j, &d) in demand.iter().enumerate() {
        g.add(1 + n + j, sink, d, 0.0);
    }
    let mut routes = vec![vec![0usize; m]; n];
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            routes[i][j] = g.add(1 + i, 1 + n + j, u64::MAX, c);
        }
    }
    loop {
        let via = g.shortest_paths(source);
        if via[sink].is_none() {
            break;
        }
        let mut push = u64::MAX;
        let mut v = sink;
        while let Some(e) = via[v] {
            push = push.min(g.edges[e].cap);
            v = g.edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            g.edges[e].cap -= push;
            g.edges[e ^ 1].cap += push;
            v = g.edges[e ^ 1].to;
        }
    }
    let mut total = 0.0;
    let plan: Vec<Vec<u64>> = routes
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &e)| {
                    let f = g.edges[e ^ 1].cap;
                    total += f as f64 * cost[i][j];
                    f
                })
                .collect()
        })
        .collect();
    let moved: u64 = plan.iter().flatten().sum();
    if moved != supply.iter().sum::<u64>() {
        return Err(Error::InvalidArgument("transport problem is infeasible".into()));
    }
    Ok((plan, total))
}

fn histogram<S: AsRef<str>>(tokens: &[S], lexicon: &StyleLexicon) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for t in tokens.iter().map(AsRef::as_ref).filter(|t| !lexicon.contains(t)) {
        *counts.entry(t.to_string()).or_default() += 1;
    }
    counts
}

/// Word mover's distance after removing lexicon words from both sides.
///
/// Each side becomes a normalised bag of words; moving mass between two
/// words costs the Euclidean distance of their vectors. `Ok(None)` means a
/// side was empty after masking.
pub fn masked_wmd<S: AsRef<str>>(
    source: &[S],
    output: &[S],
    lexicon: &StyleLexicon,
    embeddings: &WordEmbeddings,
) -> Result<Option<f64>> {
    let (a, b) = (histogram(source, lexicon), histogram(output, lexicon));
    let (la, lb): (u64, u64) = (a.values().sum(), b.values().sum());
    if la == 0 || lb == 0 {
        return Ok(None);
    }
    // Scaling each side by the other's length keeps masses integral.
    let supply: Vec<u64> = a.values().map(|c| c * lb).collect();
    let demand: Vec<u64> = b.values().map(|c| c * la).collect();
    let cost: Vec<Vec<f64>> = a.keys().map(|x| b.keys().map(|y| embeddings.distance(x, y)).collect()).collect();
    let (_, total) = optimal_transport(&supply, &demand, &cost)?;
    Ok(Some(total / (la * lb) as f64))
}
