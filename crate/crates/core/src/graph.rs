//! Agent-graph domain model: nodes with bounded memory banks, undirected
//! edges carrying bandwidth/risk/latency attributes and optional guard
//! bindings, plus seeded topology generators and JSON serialization.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an agent, dense in `0..node_count`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One agent in the system. `context_capacity` bounds the token count its
/// memory bank may hold before oldest-first eviction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNode {
    pub id: AgentId,
    pub context_capacity: usize,
}

/// A detector deployed on an edge: the name of a registered detector plus
/// the blocking threshold used on this particular edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardBinding {
    pub name: String,
    /// Messages scoring at or above this value are blocked. In `[0, 1]`.
    pub threshold: f64,
}

/// An undirected edge, stored once per unordered pair. Bandwidth and risk
/// are symmetric by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub u: AgentId,
    pub v: AgentId,
    /// Tokens transmissible per interaction.
    pub bandwidth: u64,
    /// Per-token detection-likelihood coefficient; 0 when unguarded.
    pub risk_per_token: f64,
    pub latency_base_ms: f64,
    /// Uniform jitter half-width added to the base latency.
    pub latency_jitter_ms: f64,
    pub guard: Option<GuardBinding>,
}

impl EdgeSpec {
    /// Endpoints in canonical (min, max) order, for unordered-pair identity.
    pub fn key(&self) -> (AgentId, AgentId) {
        if self.u <= self.v {
            (self.u, self.v)
        } else {
            (self.v, self.u)
        }
    }

    /// Whether this edge joins `a` and `b` (in either order).
    pub fn joins(&self, a: AgentId, b: AgentId) -> bool {
        (self.u == a && self.v == b) || (self.u == b && self.v == a)
    }
}

/// Simple undirected communication graph over the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<AgentNode>,
    pub edges: Vec<EdgeSpec>,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: AgentId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn degree(&self, id: AgentId) -> usize {
        self.edges
            .iter()
            .filter(|e| e.u == id || e.v == id)
            .count()
    }

    /// The edge joining `a` and `b`, if present.
    pub fn edge_between(&self, a: AgentId, b: AgentId) -> Option<&EdgeSpec> {
        self.edges.iter().find(|e| e.joins(a, b))
    }

    pub fn neighbors(&self, id: AgentId) -> Vec<AgentId> {
        let mut out = Vec::new();
        for e in &self.edges {
            if e.u == id {
                out.push(e.v);
            } else if e.v == id {
                out.push(e.u);
            }
        }
        out
    }

    /// BFS connectivity check. Empty and single-node graphs count as connected.
    pub fn is_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([AgentId(0)]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for w in self.neighbors(u) {
                if w.0 < seen.len() && !seen[w.0] {
                    seen[w.0] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == self.nodes.len()
    }

    /// Check every structural invariant; each violation names the offending
    /// element. Empty result means the topology is well-formed.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();

        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 != i {
                violations.push(format!(
                    "nodes[{i}]: id {} breaks the dense 0..{} ordering",
                    node.id,
                    self.nodes.len()
                ));
            }
            if node.context_capacity == 0 {
                violations.push(format!("nodes[{i}]: context_capacity must be >= 1"));
            }
        }

        let mut seen_pairs = HashSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            let name = format!("edges[{i}] {{{},{}}}", e.u, e.v);
            if e.u == e.v {
                violations.push(format!("{name}: self-loop"));
            }
            for end in [e.u, e.v] {
                if !self.contains(end) {
                    violations.push(format!("{name}: endpoint {end} is not a node"));
                }
            }
            if !seen_pairs.insert(e.key()) {
                violations.push(format!("{name}: duplicate unordered pair"));
            }
            if e.risk_per_token < 0.0 {
                violations.push(format!("{name}: risk_per_token {} < 0", e.risk_per_token));
            }
            if e.guard.is_none() && e.risk_per_token != 0.0 {
                violations.push(format!(
                    "{name}: risk_per_token {} on an unguarded edge (must be 0)",
                    e.risk_per_token
                ));
            }
            if e.latency_base_ms < 0.0 {
                violations.push(format!("{name}: latency_base_ms {} < 0", e.latency_base_ms));
            }
            if e.latency_jitter_ms < 0.0 {
                violations.push(format!(
                    "{name}: latency_jitter_ms {} < 0",
                    e.latency_jitter_ms
                ));
            }
            if let Some(g) = &e.guard {
                if !(0.0..=1.0).contains(&g.threshold) {
                    violations.push(format!(
                        "{name}: guard threshold {} outside [0,1]",
                        g.threshold
                    ));
                }
            }
        }

        violations
    }
}

/// A routing problem: carry a payload from `source` to `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub source: AgentId,
    pub target: AgentId,
}

impl Scenario {
    pub fn new(topology: Topology, source: AgentId, target: AgentId) -> Result<Self, GraphError> {
        if source == target {
            return Err(GraphError::InvalidScenario(format!(
                "source and target must differ (both {source})"
            )));
        }
        for end in [source, target] {
            if !topology.contains(end) {
                return Err(GraphError::InvalidScenario(format!(
                    "agent {end} is not in the topology (|V| = {})",
                    topology.node_count()
                )));
            }
        }
        Ok(Self {
            topology,
            source,
            target,
        })
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("max_degree {max_degree} cannot connect {nodes} nodes")]
    DegreeTooSmall { max_degree: usize, nodes: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
}

/// Which generator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Chain,
    Tree,
    Complete,
    Random,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Chain => "chain",
            Self::Tree => "tree",
            Self::Complete => "complete",
            Self::Random => "random",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain" => Ok(Self::Chain),
            "tree" => Ok(Self::Tree),
            "complete" => Ok(Self::Complete),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown topology kind {other:?} (expected chain|tree|complete|random)"
            )),
        }
    }
}

/// Template applied to every generated edge, plus the uniform per-node
/// memory-bank capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDefaults {
    pub bandwidth: u64,
    pub risk_per_token: f64,
    pub latency_base_ms: f64,
    pub latency_jitter_ms: f64,
    pub guard: Option<GuardBinding>,
    pub context_capacity: usize,
}

impl Default for EdgeDefaults {
    fn default() -> Self {
        Self {
            bandwidth: 8,
            risk_per_token: 0.0,
            latency_base_ms: 10.0,
            latency_jitter_ms: 0.0,
            guard: None,
            context_capacity: 4096,
        }
    }
}

impl EdgeDefaults {
    fn edge(&self, u: AgentId, v: AgentId) -> EdgeSpec {
        EdgeSpec {
            u,
            v,
            bandwidth: self.bandwidth,
            risk_per_token: self.risk_per_token,
            latency_base_ms: self.latency_base_ms,
            latency_jitter_ms: self.latency_jitter_ms,
            guard: self.guard.clone(),
        }
    }

    fn nodes(&self, n: usize) -> Vec<AgentNode> {
        (0..n)
            .map(|i| AgentNode {
                id: AgentId(i),
                context_capacity: self.context_capacity,
            })
            .collect()
    }
}

/// Generate a connected topology of the requested kind. Pure in its
/// arguments: the same `(kind, n, max_degree, seed, defaults)` always
/// yields the same edge set.
///
/// `max_degree` caps vertex degree for `Tree` and `Random`; `Chain` and
/// `Complete` ignore it.
pub fn generate_topology(
    kind: TopologyKind,
    n: usize,
    max_degree: usize,
    seed: u64,
    defaults: &EdgeDefaults,
) -> Result<Topology, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = match kind {
        TopologyKind::Chain => (0..n - 1)
            .map(|i| defaults.edge(AgentId(i), AgentId(i + 1)))
            .collect(),
        TopologyKind::Complete => {
            let mut edges = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    edges.push(defaults.edge(AgentId(i), AgentId(j)));
                }
            }
            edges
        }
        TopologyKind::Tree => {
            check_degree(n, max_degree, 2)?;
            random_spanning_tree(n, max_degree, &mut rng)
                .into_iter()
                .map(|(u, v)| defaults.edge(u, v))
                .collect()
        }
        TopologyKind::Random => {
            let needed = if n == 2 { 1 } else { 2 };
            check_degree(n, max_degree, needed)?;
            random_connected(n, max_degree, &mut rng)
                .into_iter()
                .map(|(u, v)| defaults.edge(u, v))
                .collect()
        }
    };
    Ok(Topology {
        nodes: defaults.nodes(n),
        edges,
    })
}

fn check_degree(n: usize, max_degree: usize, needed: usize) -> Result<(), GraphError> {
    if max_degree < needed {
        return Err(GraphError::DegreeTooSmall {
            max_degree,
            nodes: n,
        });
    }
    Ok(())
}

/// Uniform random attachment under a degree cap. A growing tree with
/// `max_degree >= 2` always has an attachable vertex (sum of degrees
/// `2(k-1) < 2k`), so this cannot stall.
fn random_spanning_tree(
    n: usize,
    max_degree: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(AgentId, AgentId)> {
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    for new in 1..n {
        let eligible: Vec<usize> = (0..new).filter(|&v| degree[v] < max_degree).collect();
        let parent = eligible[rng.gen_range(0..eligible.len())];
        degree[parent] += 1;
        degree[new] += 1;
        edges.push((AgentId(parent.min(new)), AgentId(parent.max(new))));
    }
    edges
}

/// Spanning tree first (guaranteeing connectivity), then random
/// degree-respecting additions up to a seeded target edge count or until no
/// candidate remains.
fn random_connected(
    n: usize,
    max_degree: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(AgentId, AgentId)> {
    let mut edges = random_spanning_tree(n, max_degree, rng);
    let mut degree = vec![0usize; n];
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    for (u, v) in &edges {
        degree[u.0] += 1;
        degree[v.0] += 1;
        present.insert((u.0, v.0));
    }

    let saturation = n * max_degree / 2;
    let target = rng.gen_range(n - 1..=saturation.max(n - 1));

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !present.contains(&(i, j)) {
                candidates.push((i, j));
            }
        }
    }
    candidates.shuffle(rng);

    for (i, j) in candidates {
        if edges.len() >= target {
            break;
        }
        if degree[i] < max_degree && degree[j] < max_degree {
            degree[i] += 1;
            degree[j] += 1;
            edges.push((AgentId(i), AgentId(j)));
        }
    }
    edges
}

/// Parse a topology from the documented JSON schema. Structural problems are
/// reported with the JSON path of the offending element.
pub fn load_topology(path: impl AsRef<Path>) -> Result<Topology, GraphError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_topology(&text)
}

/// `load_topology` on an in-memory document.
pub fn parse_topology(text: &str) -> Result<Topology, GraphError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| GraphError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn save_topology(topology: &Topology, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(topology).expect("topology serialization");
    text.push('\n');
    fs::write(path, text).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Topology {
        generate_topology(TopologyKind::Chain, n, 0, 0, &EdgeDefaults::default()).unwrap()
    }

    #[test]
    fn chain_n4_is_the_path_graph() {
        let t = chain(4);
        assert_eq!(t.edge_count(), 3);
        let pairs: Vec<_> = t.edges.iter().map(|e| (e.u.0, e.v.0)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn complete_n5_has_ten_edges() {
        let t =
            generate_topology(TopologyKind::Complete, 5, 0, 0, &EdgeDefaults::default()).unwrap();
        assert_eq!(t.edge_count(), 10);
    }

    #[test]
    fn random_n8_deg3_connected_and_capped() {
        let defaults = EdgeDefaults::default();
        let t = generate_topology(TopologyKind::Random, 8, 3, 7, &defaults).unwrap();
        assert!(t.is_connected());
        for node in &t.nodes {
            assert!(t.degree(node.id) <= 3, "degree cap violated at {}", node.id);
        }
        // Pure function of its arguments: the edge set is fixed per seed.
        let again = generate_topology(TopologyKind::Random, 8, 3, 7, &defaults).unwrap();
        assert_eq!(t, again);
        let other_seed = generate_topology(TopologyKind::Random, 8, 3, 8, &defaults).unwrap();
        assert_ne!(
            t.edges.len() == other_seed.edges.len()
                && t.edges
                    .iter()
                    .zip(&other_seed.edges)
                    .all(|(a, b)| a.key() == b.key()),
            true,
            "different seeds should produce different edge sets here"
        );
    }

    #[test]
    fn generators_reject_tiny_inputs() {
        assert!(matches!(
            generate_topology(TopologyKind::Chain, 1, 0, 0, &EdgeDefaults::default()),
            Err(GraphError::TooFewNodes(1))
        ));
        assert!(matches!(
            generate_topology(TopologyKind::Random, 5, 1, 0, &EdgeDefaults::default()),
            Err(GraphError::DegreeTooSmall { .. })
        ));
        assert!(matches!(
            generate_topology(TopologyKind::Tree, 5, 1, 0, &EdgeDefaults::default()),
            Err(GraphError::DegreeTooSmall { .. })
        ));
    }

    #[test]
    fn every_kind_generates_valid_connected_graphs() {
        let defaults = EdgeDefaults::default();
        for kind in [
            TopologyKind::Chain,
            TopologyKind::Tree,
            TopologyKind::Complete,
            TopologyKind::Random,
        ] {
            for seed in 0..8 {
                for n in 2..=9 {
                    let t = generate_topology(kind, n, 3, seed, &defaults).unwrap();
                    assert!(t.is_connected(), "{kind} n={n} seed={seed} disconnected");
                    assert!(t.validate().is_empty(), "{kind} n={n} seed={seed} invalid");
                    if matches!(kind, TopologyKind::Tree | TopologyKind::Random) {
                        for node in &t.nodes {
                            assert!(t.degree(node.id) <= 3);
                        }
                    }
                    if kind == TopologyKind::Tree {
                        assert_eq!(t.edge_count(), n - 1);
                    }
                }
            }
        }
    }

    #[test]
    fn validate_flags_risk_without_guard() {
        let mut t = chain(3);
        t.edges[1].risk_per_token = 0.3;
        let violations = t.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("edges[1]"), "{violations:?}");
        assert!(violations[0].contains("unguarded"), "{violations:?}");
    }

    #[test]
    fn validate_flags_duplicate_pair() {
        let mut t = chain(3);
        let dup = t.edges[0].clone();
        t.edges.push(EdgeSpec {
            u: dup.v,
            v: dup.u,
            ..dup
        });
        let violations = t.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("duplicate"), "{violations:?}");
    }

    #[test]
    fn validate_accepts_plain_chain() {
        assert!(chain(3).validate().is_empty());
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let mut t = generate_topology(TopologyKind::Random, 6, 3, 3, &EdgeDefaults::default())
            .unwrap();
        // Exercise float fidelity and guard bindings.
        t.edges[0].risk_per_token = 0.1 + 0.2;
        t.edges[0].guard = Some(GuardBinding {
            name: "keyword".into(),
            threshold: 1.0 / 3.0,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.json");
        save_topology(&t, &path).unwrap();
        let back = load_topology(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn load_reports_missing_field_with_path() {
        let doc = r#"{"nodes":[{"id":0,"context_capacity":8},{"id":1,"context_capacity":8}],
            "edges":[{"u":0,"v":1,"risk_per_token":0.0,
                      "latency_base_ms":1.0,"latency_jitter_ms":0.0,"guard":null}]}"#;
        let err = parse_topology(doc).unwrap_err();
        match err {
            GraphError::Schema { path, message } => {
                assert_eq!(path, "edges[0]");
                assert!(message.contains("bandwidth"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_counts_fixture_elements() {
        let doc = r#"{
          "nodes":[{"id":0,"context_capacity":16},{"id":1,"context_capacity":16},
                   {"id":2,"context_capacity":16},{"id":3,"context_capacity":16},
                   {"id":4,"context_capacity":16}],
          "edges":[
            {"u":0,"v":1,"bandwidth":3,"risk_per_token":0.0,"latency_base_ms":1.0,"latency_jitter_ms":0.0,"guard":null},
            {"u":1,"v":2,"bandwidth":3,"risk_per_token":0.0,"latency_base_ms":1.0,"latency_jitter_ms":0.0,"guard":null},
            {"u":2,"v":3,"bandwidth":3,"risk_per_token":0.0,"latency_base_ms":1.0,"latency_jitter_ms":0.0,"guard":null},
            {"u":3,"v":4,"bandwidth":3,"risk_per_token":0.05,"latency_base_ms":1.0,"latency_jitter_ms":0.0,
             "guard":{"name":"kw","threshold":0.5}},
            {"u":0,"v":4,"bandwidth":2,"risk_per_token":0.0,"latency_base_ms":2.0,"latency_jitter_ms":0.5,"guard":null},
            {"u":1,"v":3,"bandwidth":1,"risk_per_token":0.0,"latency_base_ms":1.5,"latency_jitter_ms":0.0,"guard":null}
          ]}"#;
        let t = parse_topology(doc).unwrap();
        assert_eq!(t.node_count(), 5);
        assert_eq!(t.edge_count(), 6);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn scenario_rejects_equal_endpoints_and_missing_agents() {
        let t = chain(3);
        assert!(Scenario::new(t.clone(), AgentId(1), AgentId(1)).is_err());
        assert!(Scenario::new(t.clone(), AgentId(0), AgentId(9)).is_err());
        assert!(Scenario::new(t, AgentId(0), AgentId(2)).is_ok());
    }
}
