//! Minimum-cost maximum-flow routing over the agent graph and conversion of
//! the solution into a chunk plan: source-to-target paths plus the token
//! count each one carries.
//!
//! Each undirected edge expands into two directed arcs, each with the full
//! edge bandwidth as capacity and the edge risk as per-unit cost. The solver
//! maximizes source-to-target flow first and minimizes total risk among
//! maximum flows, returning integral arc flows with any zero-cost cycles
//! canceled so path decomposition yields source-target paths only.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AgentId, Scenario};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid topology: {}", .0.join("; "))]
    InvalidTopology(Vec<String>),
    #[error("flow conservation violated at agent {agent}: in {inflow}, out {outflow}")]
    ConservationViolated {
        agent: AgentId,
        inflow: u64,
        outflow: u64,
    },
    #[error("arc flows contain a cycle through agent {0}; cancel cycles before decomposing")]
    ResidualCycle(AgentId),
    #[error(
        "payload of {requested} tokens exceeds the {available} available \
         (deficit {})", requested - available
    )]
    InfeasiblePayload { requested: usize, available: usize },
    #[error("payload length must be >= 1")]
    EmptyPayload,
}

/// An integral flow on the directed expansion of the topology. Only arcs
/// carrying positive flow are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAssignment {
    pub arc_flows: BTreeMap<(AgentId, AgentId), u64>,
    /// Tokens moved from source to target.
    pub max_flow: u64,
    /// Sum of `risk_per_token * flow` over all arcs.
    pub total_cost: f64,
}

impl FlowAssignment {
    /// Net outflow minus inflow at `agent` under this assignment.
    pub fn net_outflow(&self, agent: AgentId) -> i64 {
        let mut net = 0i64;
        for (&(u, v), &f) in &self.arc_flows {
            if u == agent {
                net += f as i64;
            }
            if v == agent {
                net -= f as i64;
            }
        }
        net
    }
}

/// One source-to-target path extracted from a flow, with the tokens it
/// carries and the summed per-token risk of its edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlow {
    pub vertices: Vec<AgentId>,
    pub amount: u64,
    #[serde(rename = "risk")]
    pub path_risk: f64,
}

impl PathFlow {
    pub fn hops(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }
}

/// Ascending risk, then fewer hops, then lexicographic vertex sequence.
fn path_order(a: &PathFlow, b: &PathFlow) -> Ordering {
    a.path_risk
        .total_cmp(&b.path_risk)
        .then_with(|| a.hops().cmp(&b.hops()))
        .then_with(|| a.vertices.cmp(&b.vertices))
}

/// The payload split: which paths carry chunks and how long each chunk is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ChunkPlanWire", into = "ChunkPlanWire")]
pub struct ChunkPlan {
    /// Paths that received at least one token, lowest risk first.
    pub paths: Vec<PathFlow>,
    /// Tokens assigned to each path, aligned with `paths`.
    pub chunk_lengths: Vec<usize>,
    /// Total payload tokens; equals the sum of `chunk_lengths`.
    pub payload_length: usize,
}

impl ChunkPlan {
    pub fn chunk_count(&self) -> usize {
        self.paths.len()
    }
}

/// Wire form of [`ChunkPlan`]: `payload_length` is derived, not stored.
#[derive(Serialize, Deserialize)]
struct ChunkPlanWire {
    paths: Vec<PathFlow>,
    chunk_lengths: Vec<usize>,
}

impl From<ChunkPlanWire> for ChunkPlan {
    fn from(w: ChunkPlanWire) -> Self {
        let payload_length = w.chunk_lengths.iter().sum();
        Self {
            paths: w.paths,
            chunk_lengths: w.chunk_lengths,
            payload_length,
        }
    }
}

impl From<ChunkPlan> for ChunkPlanWire {
    fn from(p: ChunkPlan) -> Self {
        Self {
            paths: p.paths,
            chunk_lengths: p.chunk_lengths,
        }
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

struct Arc {
    to: usize,
    residual: u64,
    cost: f64,
}

/// Residual network with paired arcs: arc `i` and its reverse `i ^ 1`.
struct Network {
    adjacency: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
}

impl Network {
    fn new(n: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n],
            arcs: Vec::new(),
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, capacity: u64, cost: f64) {
        let id = self.arcs.len();
        self.arcs.push(Arc {
            to,
            residual: capacity,
            cost,
        });
        self.arcs.push(Arc {
            to: from,
            residual: 0,
            cost: -cost,
        });
        self.adjacency[from].push(id);
        self.adjacency[to].push(id + 1);
    }
}

#[derive(PartialEq)]
struct HeapKey {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapKey {}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the smallest
        // distance first, breaking ties toward the lowest vertex index.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solve for the maximum source-to-target token flow of minimum total risk.
///
/// Successive shortest augmenting paths with vertex potentials; risks are
/// non-negative so the shortest-path search needs no negative-edge handling.
/// A disconnected pair is not an error: it yields a zero flow.
pub fn solve_mcmf(scenario: &Scenario) -> Result<FlowAssignment, FlowError> {
    let topology = &scenario.topology;
    let violations = topology.validate();
    if !violations.is_empty() {
        return Err(FlowError::InvalidTopology(violations));
    }

    let n = topology.node_count();
    let source = scenario.source.0;
    let target = scenario.target.0;

    let mut net = Network::new(n);
    for e in &topology.edges {
        net.add_arc(e.u.0, e.v.0, e.bandwidth, e.risk_per_token);
        net.add_arc(e.v.0, e.u.0, e.bandwidth, e.risk_per_token);
    }

    let mut potential = vec![0.0f64; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut parent_arc = vec![usize::MAX; n];

    loop {
        // Dijkstra on reduced costs.
        dist.fill(f64::INFINITY);
        parent_arc.fill(usize::MAX);
        dist[source] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(HeapKey {
            dist: 0.0,
            vertex: source,
        });
        while let Some(HeapKey { dist: d, vertex: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &arc_id in &net.adjacency[u] {
                let arc = &net.arcs[arc_id];
                if arc.residual == 0 {
                    continue;
                }
                // Reduced costs are non-negative up to rounding; clamp the
                // rounding residue so Dijkstra's invariant holds.
                let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                let candidate = d + reduced;
                if candidate < dist[arc.to] {
                    dist[arc.to] = candidate;
                    parent_arc[arc.to] = arc_id;
                    heap.push(HeapKey {
                        dist: candidate,
                        vertex: arc.to,
                    });
                }
            }
        }

        if parent_arc[target] == usize::MAX {
            break;
        }
        for v in 0..n {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }

        let mut bottleneck = u64::MAX;
        let mut v = target;
        while v != source {
            let arc_id = parent_arc[v];
            bottleneck = bottleneck.min(net.arcs[arc_id].residual);
            v = net.arcs[arc_id ^ 1].to;
        }
        let mut v = target;
        while v != source {
            let arc_id = parent_arc[v];
            net.arcs[arc_id].residual -= bottleneck;
            net.arcs[arc_id ^ 1].residual += bottleneck;
            v = net.arcs[arc_id ^ 1].to;
        }
    }

    // Recover per-arc flow from forward arcs (even indices), aggregated per
    // directed vertex pair.
    let mut flows: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (i, e) in topology.edges.iter().enumerate() {
        let fwd = 4 * i;
        let bwd = 4 * i + 2;
        let f_uv = e.bandwidth - net.arcs[fwd].residual;
        let f_vu = e.bandwidth - net.arcs[bwd].residual;
        if f_uv > 0 {
            *flows.entry((e.u.0, e.v.0)).or_insert(0) += f_uv;
        }
        if f_vu > 0 {
            *flows.entry((e.v.0, e.u.0)).or_insert(0) += f_vu;
        }
    }

    cancel_cycles(&mut flows, source, target);

    let max_flow: u64 = flows
        .iter()
        .map(|(&(u, _), &f)| if u == source { f } else { 0 })
        .sum::<u64>()
        - flows
            .iter()
            .map(|(&(_, v), &f)| if v == source { f } else { 0 })
            .sum::<u64>();

    let arc_flows: BTreeMap<(AgentId, AgentId), u64> = flows
        .into_iter()
        .map(|((u, v), f)| ((AgentId(u), AgentId(v)), f))
        .collect();
    let total_cost = flow_cost(&arc_flows, scenario);

    Ok(FlowAssignment {
        arc_flows,
        max_flow,
        total_cost,
    })
}

/// Sum `risk_per_token * flow` over arcs in canonical (sorted) order.
pub fn flow_cost(arc_flows: &BTreeMap<(AgentId, AgentId), u64>, scenario: &Scenario) -> f64 {
    let mut cost = 0.0;
    for (&(u, v), &f) in arc_flows {
        let risk = scenario
            .topology
            .edge_between(u, v)
            .map(|e| e.risk_per_token)
            .unwrap_or(0.0);
        cost += risk * f as f64;
    }
    cost
}

/// Remove all directed cycles from a conserving flow map, in place. Opposite
/// flows on the same edge are netted first; remaining cycles are walked and
/// canceled. In a min-cost solution over non-negative risks every canceled
/// cycle carries zero cost.
fn cancel_cycles(flows: &mut BTreeMap<(usize, usize), u64>, source: usize, target: usize) {
    let pairs: Vec<(usize, usize)> = flows.keys().copied().collect();
    for (u, v) in pairs {
        if u < v {
            let f_uv = flows.get(&(u, v)).copied().unwrap_or(0);
            let f_vu = flows.get(&(v, u)).copied().unwrap_or(0);
            let m = f_uv.min(f_vu);
            if m > 0 {
                reduce(flows, (u, v), m);
                reduce(flows, (v, u), m);
            }
        }
    }

    // Walk the positive-flow support; any revisited vertex closes a cycle.
    loop {
        let Some(&start) = flows.keys().map(|(u, _)| u).next() else {
            break;
        };
        let mut visited_at = BTreeMap::new();
        let mut walk = vec![start];
        visited_at.insert(start, 0usize);
        let cycle = loop {
            let here = *walk.last().unwrap();
            if here == target && start == source {
                break None;
            }
            let Some((&(_, next), _)) = flows.range((here, 0)..(here, usize::MAX)).next() else {
                break None;
            };
            if let Some(&at) = visited_at.get(&next) {
                break Some(walk[at..].to_vec());
            }
            visited_at.insert(next, walk.len());
            walk.push(next);
        };
        match cycle {
            Some(mut cycle) => {
                cycle.push(cycle[0]);
                let m = cycle
                    .windows(2)
                    .map(|w| flows[&(w[0], w[1])])
                    .min()
                    .unwrap();
                for w in cycle.windows(2) {
                    reduce(flows, (w[0], w[1]), m);
                }
            }
            // The walk from this start hit a dead end or the target without
            // revisiting: no cycle is reachable from it. Source-to-target
            // flow is intentionally left intact; only cyclic flow must go.
            None => break,
        }
    }

    // The generic walk above starts from the lowest-keyed arc; cycles not
    // reachable from it still need sweeping.
    let mut changed = true;
    while changed {
        changed = false;
        let keys: Vec<(usize, usize)> = flows.keys().copied().collect();
        for (u, _) in keys {
            if u == source {
                continue;
            }
            if let Some(cycle) = find_cycle_from(flows, u) {
                let m = cycle
                    .windows(2)
                    .map(|w| flows[&(w[0], w[1])])
                    .min()
                    .unwrap();
                for w in cycle.windows(2) {
                    reduce(flows, (w[0], w[1]), m);
                }
                changed = true;
                break;
            }
        }
    }
    let _ = target;
}

/// Follow positive-flow arcs from `start`; returns a closed vertex walk
/// `c_0..c_k` with `c_0 == c_k` if a cycle is reachable.
fn find_cycle_from(
    flows: &BTreeMap<(usize, usize), u64>,
    start: usize,
) -> Option<Vec<usize>> {
    let mut visited_at = BTreeMap::new();
    let mut walk = vec![start];
    visited_at.insert(start, 0usize);
    loop {
        let here = *walk.last().unwrap();
        let (&(_, next), _) = flows.range((here, 0)..(here, usize::MAX)).next()?;
        if let Some(&at) = visited_at.get(&next) {
            let mut cycle = walk[at..].to_vec();
            cycle.push(next);
            return Some(cycle);
        }
        visited_at.insert(next, walk.len());
        walk.push(next);
    }
}

fn reduce(flows: &mut BTreeMap<(usize, usize), u64>, key: (usize, usize), by: u64) {
    let f = flows.get_mut(&key).expect("arc present");
    *f -= by;
    if *f == 0 {
        flows.remove(&key);
    }
}

// ---------------------------------------------------------------------------
// Decomposition and chunk planning
// ---------------------------------------------------------------------------

/// Standard path decomposition of a cycle-free conserving flow. The returned
/// paths superimpose to exactly the input arc flows and are ordered by
/// ascending risk, then hop count, then vertex sequence.
pub fn decompose_flow(
    assignment: &FlowAssignment,
    scenario: &Scenario,
) -> Result<Vec<PathFlow>, FlowError> {
    check_conservation(assignment, scenario)?;

    let mut flows: BTreeMap<(usize, usize), u64> = assignment
        .arc_flows
        .iter()
        .map(|(&(u, v), &f)| ((u.0, v.0), f))
        .collect();

    let source = scenario.source.0;
    let target = scenario.target.0;
    let mut paths = Vec::new();

    while flows.range((source, 0)..(source, usize::MAX)).next().is_some() {
        let mut vertices = vec![source];
        let mut seen = std::collections::HashSet::from([source]);
        while *vertices.last().unwrap() != target {
            let here = *vertices.last().unwrap();
            let Some((&(_, next), _)) = flows.range((here, 0)..(here, usize::MAX)).next() else {
                return Err(FlowError::ConservationViolated {
                    agent: AgentId(here),
                    inflow: 0,
                    outflow: 0,
                });
            };
            if !seen.insert(next) {
                return Err(FlowError::ResidualCycle(AgentId(next)));
            }
            vertices.push(next);
        }
        let amount = vertices
            .windows(2)
            .map(|w| flows[&(w[0], w[1])])
            .min()
            .expect("path has at least one arc");
        for w in vertices.windows(2) {
            reduce(&mut flows, (w[0], w[1]), amount);
        }
        let path_risk = vertices
            .windows(2)
            .map(|w| {
                scenario
                    .topology
                    .edge_between(AgentId(w[0]), AgentId(w[1]))
                    .map(|e| e.risk_per_token)
                    .unwrap_or(0.0)
            })
            .sum();
        paths.push(PathFlow {
            vertices: vertices.into_iter().map(AgentId).collect(),
            amount,
            path_risk,
        });
    }

    if let Some((&(u, _), _)) = flows.iter().next() {
        return Err(FlowError::ResidualCycle(AgentId(u)));
    }

    paths.sort_by(path_order);
    Ok(paths)
}

fn check_conservation(assignment: &FlowAssignment, scenario: &Scenario) -> Result<(), FlowError> {
    for node in &scenario.topology.nodes {
        let id = node.id;
        let inflow: u64 = assignment
            .arc_flows
            .iter()
            .filter(|(&(_, v), _)| v == id)
            .map(|(_, &f)| f)
            .sum();
        let outflow: u64 = assignment
            .arc_flows
            .iter()
            .filter(|(&(u, _), _)| u == id)
            .map(|(_, &f)| f)
            .sum();
        let expected_net: i64 = if id == scenario.source {
            assignment.max_flow as i64
        } else if id == scenario.target {
            -(assignment.max_flow as i64)
        } else {
            0
        };
        if outflow as i64 - inflow as i64 != expected_net {
            return Err(FlowError::ConservationViolated {
                agent: id,
                inflow,
                outflow,
            });
        }
    }
    Ok(())
}

/// Greedily fill the lowest-risk paths up to their carried amounts until
/// `payload_length` tokens are assigned. Paths left empty are dropped.
pub fn make_chunk_plan(paths: &[PathFlow], payload_length: usize) -> Result<ChunkPlan, FlowError> {
    if payload_length == 0 {
        return Err(FlowError::EmptyPayload);
    }
    let available: usize = paths.iter().map(|p| p.amount as usize).sum();
    if payload_length > available {
        return Err(FlowError::InfeasiblePayload {
            requested: payload_length,
            available,
        });
    }

    let mut ordered: Vec<&PathFlow> = paths.iter().collect();
    ordered.sort_by(|a, b| path_order(a, b));

    let mut used = Vec::new();
    let mut chunk_lengths = Vec::new();
    let mut remaining = payload_length;
    for path in ordered {
        if remaining == 0 {
            break;
        }
        let take = remaining.min(path.amount as usize);
        if take > 0 {
            used.push(path.clone());
            chunk_lengths.push(take);
            remaining -= take;
        }
    }

    Ok(ChunkPlan {
        paths: used,
        chunk_lengths,
        payload_length,
    })
}
