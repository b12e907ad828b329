//! Global interaction by gated, attention-weighted message passing.
//!
//! Starting from the encoder's final states `(h, c)`, every round refines
//!
//! ```text
//! r_ij   = phi_r(x_i - x_j)
//! g_ij   = sigmoid(phi_m[r_ij, h_j, h_i])
//! u_ij   = phi_a[r_ij, h_j, h_i]            alpha_i = softmax_j(u_ij)
//! c_i   <- phi_mp(sum_j alpha_ij * (g_ij . h_j)) + c_i
//! h_i   <- h_i + tanh(c_i)
//! ```
//!
//! over the neighbours `j` of `i` at the last observed step. Agents without
//! neighbours receive a zero message and still go through both updates.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::Point;
use crate::math;
use crate::nn::{Mlp, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Neighbour lists at the last observed step.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    /// `neighbors[i]` lists `j != i` within the distance limit.
    pub neighbors: Vec<Vec<usize>>,
    /// `relative[i][k] = x_i - x_j` for `j = neighbors[i][k]`, meters.
    pub relative: Vec<Vec<Point>>,
}

impl NeighborGraph {
    pub fn n_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

fn cmp_point(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// `j` is a neighbour of `i` iff `i != j` and `|x_i - x_j| <= max_distance`.
///
/// Each list is ordered by relative position, which does not depend on how
/// agents are numbered.
pub fn neighbors(positions: &[Point], max_distance: f64) -> NeighborGraph {
    let n = positions.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut relative = Vec::with_capacity(n);
    for i in 0..n {
        let mut list: Vec<(usize, Point)> = (0..n)
            .filter(|&j| j != i)
            .filter_map(|j| {
                let d = [
                    positions[i][0] - positions[j][0],
                    positions[i][1] - positions[j][1],
                ];
                (math::sqrt(d[0] * d[0] + d[1] * d[1]) <= max_distance).then_some((j, d))
            })
            .collect();
        list.sort_by(|a, b| cmp_point(&a.1, &b.1).then(a.0.cmp(&b.0)));
        neighbors.push(list.iter().map(|e| e.0).collect());
        relative.push(list.iter().map(|e| e.1).collect());
    }
    NeighborGraph {
        neighbors,
        relative,
    }
}

/// Directed edges `source -> target` flattened over a batch of scenes,
/// grouped by target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeList {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub relative: Vec<Point>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Appends a scene's graph whose agents start at row `agent_offset`.
    pub fn extend_from(&mut self, graph: &NeighborGraph, agent_offset: usize) {
        for (i, (ns, rel)) in graph.neighbors.iter().zip(&graph.relative).enumerate() {
            for (&j, &r) in ns.iter().zip(rel) {
                self.targets.push(agent_offset + i);
                self.sources.push(agent_offset + j);
                self.relative.push(r);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct InteractionParams {
    pub phi_r: Mlp,
    pub phi_m: Mlp,
    pub phi_a: Mlp,
    pub phi_mp: Mlp,
    pub hidden: usize,
    pub rel_width: usize,
}

impl InteractionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        hidden: usize,
        rel_width: usize,
    ) -> Self {
        let cat = rel_width + 2 * hidden;
        InteractionParams {
            phi_r: Mlp::new(store, rng, "gcn.phi_r", &[2, hidden, rel_width]),
            phi_m: Mlp::new(store, rng, "gcn.phi_m", &[cat, hidden, hidden]),
            phi_a: Mlp::new(store, rng, "gcn.phi_a", &[cat, hidden, 1]),
            phi_mp: Mlp::new(store, rng, "gcn.phi_mp", &[hidden, hidden, hidden]),
            hidden,
            rel_width,
        }
    }
}

/// `phi_r` on relative positions `[P, 2]`.
pub fn relative_embedding(
    g: &mut Graph,
    store: &ParamStore,
    p: &InteractionParams,
    rel: Var,
) -> Result<Var> {
    p.phi_r.forward(g, store, rel)
}

/// Sigmoid gate on `[r, h_j, h_i]`, one row per edge.
pub fn motion_gate(
    g: &mut Graph,
    store: &ParamStore,
    p: &InteractionParams,
    r: Var,
    h_source: Var,
    h_target: Var,
) -> Result<Var> {
    let cat = g.concat_cols(&[r, h_source, h_target])?;
    let m = p.phi_m.forward(g, store, cat)?;
    Ok(g.sigmoid(m))
}

/// Per-edge scores `phi_a[r, h_j, h_i]`, softmax-normalized over each
/// target's incoming edges. Returns `[P, 1]`.
pub fn attention_weights(
    g: &mut Graph,
    store: &ParamStore,
    p: &InteractionParams,
    r: Var,
    h_source: Var,
    h_target: Var,
    targets: &[usize],
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Empty("neighbour set"));
    }
    let cat = g.concat_cols(&[r, h_source, h_target])?;
    let u = p.phi_a.forward(g, store, cat)?;
    g.segment_softmax(u, targets.to_vec())
}

#[derive(Clone, Copy, Debug)]
pub struct RefinedState {
    pub h_hat: Var,
    pub c_hat: Var,
    pub rounds_completed: usize,
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Orders each target's edges by (relative position, source state). Two
/// edges that compare equal carry identical messages, so sums over a group
/// are independent of agent numbering.
fn canonical_order(edges: &EdgeList, h: &Tensor, c: &Tensor) -> EdgeList {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| {
        edges.targets[a]
            .cmp(&edges.targets[b])
            .then_with(|| cmp_point(&edges.relative[a], &edges.relative[b]))
            .then_with(|| cmp_rows(h.row(edges.sources[a]), h.row(edges.sources[b])))
            .then_with(|| cmp_rows(c.row(edges.sources[a]), c.row(edges.sources[b])))
    });
    EdgeList {
        targets: order.iter().map(|&i| edges.targets[i]).collect(),
        sources: order.iter().map(|&i| edges.sources[i]).collect(),
        relative: order.iter().map(|&i| edges.relative[i]).collect(),
    }
}

/// Runs `rounds` rounds of message passing on `[N, D]` states.
pub fn refine(
    g: &mut Graph,
    store: &ParamStore,
    p: &InteractionParams,
    h: Var,
    c: Var,
    edges: &EdgeList,
    rounds: usize,
) -> Result<RefinedState> {
    if rounds < 1 {
        return Err(Error::invalid("message passing rounds", "must be >= 1"));
    }
    if g.shape(h) != g.shape(c) {
        return Err(Error::shape("refine", g.shape(h), g.shape(c)));
    }
    let n = g.value(h).rows();
    let edges = canonical_order(edges, g.value(h), g.value(c));

    let r = if edges.is_empty() {
        None
    } else {
        let flat = edges.relative.iter().flat_map(|p| *p).collect();
        let rel = g.constant(Tensor::new(&[edges.len(), 2], flat)?);
        Some(relative_embedding(g, store, p, rel)?)
    };

    let (mut h_hat, mut c_hat) = (h, c);
    for _ in 0..rounds {
        let message = match r {
            None => g.constant(Tensor::zeros(&[n, p.hidden])),
            Some(r) => {
                let h_src = g.gather_rows(h_hat, edges.sources.clone())?;
                let h_tgt = g.gather_rows(h_hat, edges.targets.clone())?;
                let gate = motion_gate(g, store, p, r, h_src, h_tgt)?;
                let alpha =
                    attention_weights(g, store, p, r, h_src, h_tgt, &edges.targets)?;
                let gated = g.mul(gate, h_src)?;
                let weighted = g.scale_rows(gated, alpha)?;
                g.segment_sum(weighted, edges.targets.clone(), n)?
            }
        };
        let update = p.phi_mp.forward(g, store, message)?;
        c_hat = g.add(update, c_hat)?;
        let t = g.tanh(c_hat);
        h_hat = g.add(h_hat, t)?;
    }
    Ok(RefinedState {
        h_hat,
        c_hat,
        rounds_completed: rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn distance_limit_is_inclusive() {
        let g = neighbors(&[[0.0, 0.0], [9.9, 0.0]], 10.0);
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
        let g = neighbors(&[[0.0, 0.0], [10.1, 0.0]], 10.0);
        assert_eq!(g.n_edges(), 0);
        let g = neighbors(&[[0.0, 0.0], [6.0, 8.0]], 10.0);
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn lone_agent_has_no_neighbors() {
        let g = neighbors(&[[1.0, 2.0]], 10.0);
        assert_eq!(g.neighbors, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn neighbor_relation_is_symmetric_and_irreflexive() {
        let pts = [[0.0, 0.0], [3.0, 4.0], [12.0, 0.0], [7.0, 7.0]];
        let g = neighbors(&pts, 10.0);
        for i in 0..pts.len() {
            assert!(!g.neighbors[i].contains(&i));
            for &j in &g.neighbors[i] {
                assert!(g.neighbors[j].contains(&i));
            }
        }
        let k = g.neighbors[0].iter().position(|&j| j == 1).unwrap();
        assert_eq!(g.relative[0][k], [-3.0, -4.0]);
    }
}
