//! Exact minimum-cost coupling between two small discrete distributions,
//! used as an independent oracle for transport distances.

use crate::error::{Error, Result};
use crate::stats::stable_sum;

const EPS: f64 = 1e-15;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Minimum of `sum_ij pi_ij c_ij` over couplings `pi` of `p` and `q`,
/// solved as a min-cost flow by successive shortest paths.
pub fn optimal_coupling_cost(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    let (k, m) = (p.len(), q.len());
    if cost.len() != k || cost.iter().any(|row| row.len() != m) {
        return Err(Error::Argument("cost matrix shape does not match marginals".into()));
    }
    if (stable_sum(p.iter().copied()) - stable_sum(q.iter().copied())).abs() > 1e-12 {
        return Err(Error::Argument("marginals carry different mass".into()));
    }
    // Nodes: source, p side, q side, sink.
    let (src, sink) = (0, k + m + 1);
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); k + m + 2];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: f64, c: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost: c });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0.0, cost: -c });
    };
    for (i, &pi) in p.iter().enumerate() {
        add(&mut edges, &mut adj, src, 1 + i, pi, 0.0);
    }
    for (j, &qj) in q.iter().enumerate() {
        add(&mut edges, &mut adj, 1 + k + j, sink, qj, 0.0);
    }
    for i in 0..k {
        for j in 0..m {
            add(&mut edges, &mut adj, 1 + i, 1 + k + j, f64::INFINITY, cost[i][j]);
        }
    }
    let nodes = k + m + 2;
    let mut total = Vec::new();
    loop {
        // Bellman-Ford on the residual graph; residual costs may be negative.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > EPS && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total.push(push * dist[sink]);
    }
    Ok(stable_sum(total))
}

/// Optimal coupling cost under the discrete metric `1[i != j]`.
pub fn discrete_metric_transport(p: &[f64], q: &[f64]) -> Result<f64> {
    let cost: Vec<Vec<f64>> = (0..p.len())
        .map(|i| (0..q.len()).map(|j| f64::from(i != j)).collect())
        .collect();
    optimal_coupling_cost(p, q, &cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_marginals_cost_nothing() {
        let p = [0.2, 0.3, 0.5];
        assert!(discrete_metric_transport(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn disjoint_point_masses() {
        assert!((discrete_metric_transport(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_metric_matches_cdf_formula() {
        // Cost |i - j| on a line: W1 = sum |F_p - F_q|.
        let p = [0.1, 0.4, 0.2, 0.3];
        let q = [0.25, 0.25, 0.25, 0.25];
        let cost: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| (i as f64 - j as f64).abs()).collect())
            .collect();
        let (mut fp, mut fq, mut want) = (0.0, 0.0, 0.0);
        for i in 0..3 {
            fp += p[i];
            fq += q[i];
            want += f64::abs(fp - fq);
        }
        assert!((optimal_coupling_cost(&p, &q, &cost).unwrap() - want).abs() < 1e-12);
    }
}
