//! Min-cost flow with integer capacities by successive shortest paths.
//!
//! Lower bounds are removed by the usual excess transformation: an arc
//! `u -> v` with bounds `[lo, hi]` becomes capacity `hi - lo` and moves `lo`
//! units of supply from `u` to `v`. The excesses are then routed from a
//! super source to a super sink.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Residual graph with paired forward and reverse edges.
#[derive(Debug, Clone)]
pub struct MinCostFlow {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    original_cap: Vec<i64>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            original_cap: Vec::new(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    /// Adds `from -> to` and returns its id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        self.original_cap.push(cap);
        self.original_cap.push(0);
        id
    }

    /// Flow currently on edge `id`.
    pub fn flow(&self, id: usize) -> i64 {
        self.original_cap[id] - self.edges[id].cap
    }

    /// Sends up to `limit` units from `s` to `t` at minimum cost.
    /// Returns the amount sent and its cost.
    pub fn run(&mut self, s: usize, t: usize, limit: i64) -> (i64, f64) {
        let n = self.nodes();
        let mut potential = self.bellman_ford(s);
        let mut sent = 0i64;
        let mut cost = 0.0;
        while sent < limit {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev = vec![usize::MAX; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(Item(0.0, s));
            while let Some(Item(d, v)) = heap.pop() {
                if d > dist[v] {
                    continue;
                }
                for &e in &self.adj[v] {
                    let edge = &self.edges[e];
                    if edge.cap <= 0 || !potential[edge.to].is_finite() {
                        continue;
                    }
                    let reduced = (edge.cost + potential[v] - potential[edge.to]).max(0.0);
                    let nd = d + reduced;
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        prev[edge.to] = e;
                        heap.push(Item(nd, edge.to));
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() && potential[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = limit - sent;
            let mut v = t;
            while v != s {
                let e = prev[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                cost += push as f64 * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            sent += push;
        }
        (sent, cost)
    }

    fn bellman_ford(&self, s: usize) -> Vec<f64> {
        let n = self.nodes();
        let mut dist = vec![f64::INFINITY; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for v in 0..n {
                if !dist[v].is_finite() {
                    continue;
                }
                for &e in &self.adj[v] {
                    let edge = &self.edges[e];
                    if edge.cap > 0 && dist[v] + edge.cost < dist[edge.to] - 1e-12 {
                        dist[edge.to] = dist[v] + edge.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist
    }

    /// Nodes reachable from `s` through edges with residual capacity.
    pub fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(v) = stack.pop() {
            for &e in &self.adj[v] {
                let edge = &self.edges[e];
                if edge.cap > 0 && !seen[edge.to] {
                    seen[edge.to] = true;
                    stack.push(edge.to);
                }
            }
        }
        seen
    }
}

/// Arc with flow bounds for [`BoundedFlow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub lower: i64,
    pub upper: i64,
    pub cost: f64,
}

/// Min-cost circulation with lower and upper bounds on every arc.
#[derive(Debug, Clone, Default)]
pub struct BoundedFlow {
    pub nodes: usize,
    pub arcs: Vec<Arc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circulation {
    pub flows: Vec<i64>,
    pub cost: f64,
}

/// Why no feasible circulation exists.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowInfeasible {
    /// Required excess that could not be routed.
    pub shortfall: i64,
    /// Nodes on the source side of the final residual cut.
    pub source_side: Vec<bool>,
}

impl BoundedFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            arcs: Vec::new(),
        }
    }

    pub fn add(&mut self, from: usize, to: usize, lower: i64, upper: i64, cost: f64) -> usize {
        self.arcs.push(Arc {
            from,
            to,
            lower,
            upper,
            cost,
        });
        self.arcs.len() - 1
    }

    pub fn solve(&self) -> Result<Circulation, FlowInfeasible> {
        let super_s = self.nodes;
        let super_t = self.nodes + 1;
        let mut g = MinCostFlow::new(self.nodes + 2);
        let mut excess = vec![0i64; self.nodes];
        let mut ids = Vec::with_capacity(self.arcs.len());
        let mut fixed_cost = 0.0;
        for a in &self.arcs {
            if a.upper < a.lower {
                return Err(FlowInfeasible {
                    shortfall: a.lower - a.upper,
                    source_side: vec![false; self.nodes],
                });
            }
            ids.push(g.add_edge(a.from, a.to, a.upper - a.lower, a.cost));
            excess[a.to] += a.lower;
            excess[a.from] -= a.lower;
            fixed_cost += a.lower as f64 * a.cost;
        }
        let mut required = 0;
        for (v, &e) in excess.iter().enumerate() {
            if e > 0 {
                g.add_edge(super_s, v, e, 0.0);
                required += e;
            } else if e < 0 {
                g.add_edge(v, super_t, -e, 0.0);
            }
        }
        let (sent, cost) = g.run(super_s, super_t, required);
        if sent < required {
            let mut side = g.reachable(super_s);
            side.truncate(self.nodes);
            return Err(FlowInfeasible {
                shortfall: required - sent,
                source_side: side,
            });
        }
        let flows = ids
            .iter()
            .zip(&self.arcs)
            .map(|(&id, a)| g.flow(id) + a.lower)
            .collect();
        Ok(Circulation {
            flows,
            cost: cost + fixed_cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_cheaper_parallel_path() {
        let mut g = MinCostFlow::new(4);
        let a = g.add_edge(0, 1, 5, 1.0);
        let b = g.add_edge(0, 2, 5, 3.0);
        g.add_edge(1, 3, 3, 0.0);
        g.add_edge(2, 3, 5, 0.0);
        let (sent, cost) = g.run(0, 3, 6);
        assert_eq!(sent, 6);
        assert_eq!(cost, 3.0 + 9.0);
        assert_eq!(g.flow(a), 3);
        assert_eq!(g.flow(b), 3);
    }

    #[test]
    fn handles_negative_costs() {
        let mut g = MinCostFlow::new(3);
        g.add_edge(0, 1, 4, -2.0);
        g.add_edge(1, 2, 4, -1.0);
        g.add_edge(0, 2, 4, 0.0);
        let (sent, cost) = g.run(0, 2, 6);
        assert_eq!(sent, 6);
        assert_eq!(cost, -12.0);
    }

    #[test]
    fn lower_bounds_force_flow() {
        // Circulation 0 -> 1 -> 0 where the expensive arc must carry 2 units.
        let mut f = BoundedFlow::new(2);
        let expensive = f.add(0, 1, 2, 5, 10.0);
        f.add(1, 0, 0, 5, 0.0);
        let c = f.solve().unwrap();
        assert_eq!(c.flows[expensive], 2);
        assert_eq!(c.cost, 20.0);
    }

    #[test]
    fn reports_unroutable_lower_bound() {
        let mut f = BoundedFlow::new(3);
        f.add(0, 1, 4, 4, 0.0);
        f.add(1, 2, 0, 3, 0.0);
        f.add(2, 0, 0, 10, 0.0);
        let err = f.solve().unwrap_err();
        assert_eq!(err.shortfall, 1);
        assert!(err.source_side[1]);
        assert!(!err.source_side[2]);
    }
}
