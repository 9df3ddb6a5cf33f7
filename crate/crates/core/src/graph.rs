//! Undirected graphs, random-graph generators and topological queries.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::bail;
use crate::rng::{self, Rng, Stream};
use crate::{Error, Result};

/// Simple undirected graph on nodes `0..num_nodes`.
///
/// Edges are stored canonically as `(i, j)` with `i < j`, sorted
/// lexicographically. Adjacency lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops and duplicate edges are rejected.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut canonical = Vec::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Index { index: a.max(b), len: num_nodes });
            }
            if a == b {
                bail!(Contract, "self-loop at node {a}");
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        if let Some(w) = canonical.windows(2).find(|w| w[0] == w[1]) {
            bail!(Contract, "duplicate edge {:?}", w[0]);
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(a, b) in &canonical {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { num_nodes, edges: canonical, adjacency })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self { num_nodes, edges: Vec::new(), adjacency: vec![Vec::new(); num_nodes] }
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i))).expect("path graph is simple")
    }

    /// Star graph with center 0.
    pub fn star(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|i| (0, i))).expect("star graph is simple")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical sorted edge list.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.num_nodes && self.adjacency[a].binary_search(&b).is_ok()
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.num_nodes {
            return Err(Error::Index { index: i, len: self.num_nodes });
        }
        Ok(())
    }

    /// Unweighted hop distances from `source`. Unreachable nodes get
    /// [`Graph::unreachable`] (= `num_nodes`).
    pub fn bfs_distances(&self, source: usize) -> Result<Vec<usize>> {
        self.check_node(source)?;
        Ok(self.bfs_bounded(source, usize::MAX).0)
    }

    pub fn unreachable(&self) -> usize {
        self.num_nodes
    }

    /// BFS truncated at `max_hops`; returns distances and visit order.
    fn bfs_bounded(&self, source: usize, max_hops: usize) -> (Vec<usize>, Vec<usize>) {
        let sentinel = self.num_nodes;
        let mut dist = vec![sentinel; self.num_nodes];
        let mut order = vec![source];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(u) = queue.pop_front() {
            if dist[u] >= max_hops {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == sentinel {
                    dist[v] = dist[u] + 1;
                    order.push(v);
                    queue.push_back(v);
                }
            }
        }
        (dist, order)
    }

    pub fn is_connected(&self) -> bool {
        self.num_nodes == 0 || self.bfs_bounded(0, usize::MAX).1.len() == self.num_nodes
    }

    /// Induced subgraph on the closed `k`-hop neighborhood of `ego`.
    ///
    /// Local indices follow BFS order, so the ego is always local node 0.
    pub fn k_hop_subgraph(&self, ego: usize, k: usize) -> Result<Subgraph> {
        self.check_node(ego)?;
        let (_, order) = self.bfs_bounded(ego, k);
        let mut local = vec![usize::MAX; self.num_nodes];
        for (li, &g) in order.iter().enumerate() {
            local[g] = li;
        }
        let mut edges = Vec::new();
        for (li, &g) in order.iter().enumerate() {
            for &h in &self.adjacency[g] {
                let lj = local[h];
                if lj != usize::MAX && li < lj {
                    edges.push((li, lj));
                }
            }
        }
        let graph = Graph::from_edges(order.len(), edges)?;
        Ok(Subgraph { graph, node_map: order, ego_local: 0 })
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            bail!(Shape, "permutation of length {} for {} nodes", perm.len(), self.num_nodes);
        }
        Graph::from_edges(self.num_nodes, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}

/// Result of [`Graph::k_hop_subgraph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub graph: Graph,
    /// Local index to original node index.
    pub node_map: Vec<usize>,
    pub ego_local: usize,
}

/// Random graph family.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum GraphFamily {
    BarabasiAlbert { m: usize },
    WattsStrogatz { k: usize, p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GraphSpec {
    pub family: GraphFamily,
    pub num_nodes: usize,
    pub seed: u64,
}

const WS_MAX_RETRIES: u64 = 100;

impl GraphSpec {
    pub fn barabasi_albert(num_nodes: usize, m: usize, seed: u64) -> Self {
        Self { family: GraphFamily::BarabasiAlbert { m }, num_nodes, seed }
    }

    pub fn watts_strogatz(num_nodes: usize, k: usize, p: f64, seed: u64) -> Self {
        Self { family: GraphFamily::WattsStrogatz { k, p }, num_nodes, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        match self.family {
            GraphFamily::BarabasiAlbert { m } => {
                if m < 1 || m >= n {
                    bail!(InvalidSpec, "Barabási-Albert needs 1 <= m < num_nodes (m={m}, num_nodes={n})");
                }
            }
            GraphFamily::WattsStrogatz { k, p } => {
                if k % 2 != 0 || k >= n {
                    bail!(InvalidSpec, "Watts-Strogatz needs even k < num_nodes (k={k}, num_nodes={n})");
                }
                if !(0.0..=1.0).contains(&p) {
                    bail!(InvalidSpec, "Watts-Strogatz rewire probability {p} outside [0, 1]");
                }
            }
        }
        Ok(())
    }

    /// Generates the graph. Identical specs give identical graphs.
    pub fn generate(&self) -> Result<Graph> {
        self.validate()?;
        match self.family {
            GraphFamily::BarabasiAlbert { m } => {
                let mut rng = rng::stream(self.seed, Stream::GraphGen, 0);
                barabasi_albert(self.num_nodes, m, &mut rng)
            }
            GraphFamily::WattsStrogatz { k, p } => {
                for attempt in 0..WS_MAX_RETRIES {
                    let seed = self.seed.wrapping_add(attempt);
                    let mut rng = rng::stream(seed, Stream::GraphGen, 0);
                    let g = watts_strogatz(self.num_nodes, k, p, &mut rng)?;
                    if g.is_connected() {
                        return Ok(g);
                    }
                }
                bail!(GenerationFailed, "no connected Watts-Strogatz graph after {WS_MAX_RETRIES} seeds")
            }
        }
    }
}

/// Preferential attachment from a clique on `m + 1` nodes, sampling targets
/// from the list of edge endpoints (each edge contributes both endpoints).
fn barabasi_albert(n: usize, m: usize, rng: &mut Rng) -> Result<Graph> {
    let mut edges = Vec::with_capacity(m * n);
    let mut endpoints = Vec::with_capacity(2 * m * n);
    for a in 0..=m {
        for b in (a + 1)..=m {
            edges.push((a, b));
            endpoints.extend([a, b]);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for v in (m + 1)..n {
        targets.clear();
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    Graph::from_edges(n, edges)
}

/// Ring lattice of degree `k`, each lattice edge rewired with probability `p`.
fn watts_strogatz(n: usize, k: usize, p: f64, rng: &mut Rng) -> Result<Graph> {
    let mut adj = vec![Vec::<usize>::new(); n];
    let connect = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };
    for i in 0..n {
        for j in 1..=k / 2 {
            connect(&mut adj, i, (i + j) % n);
        }
    }
    for j in 1..=k / 2 {
        for i in 0..n {
            let old = (i + j) % n;
            if rng.random::<f64>() >= p || adj[i].len() >= n - 1 {
                continue;
            }
            let new = loop {
                let w = rng.random_range(0..n);
                if w != i && !adj[i].contains(&w) {
                    break w;
                }
            };
            adj[i].retain(|&x| x != old);
            adj[old].retain(|&x| x != i);
            connect(&mut adj, i, new);
        }
    }
    let edges = adj
        .iter()
        .enumerate()
        .flat_map(|(a, list)| list.iter().filter(move |&&b| a < b).map(move |&b| (a, b)));
    Graph::from_edges(n, edges)
}
