use alloc::vec::Vec;

use super::{EnvConfig, GlobalState};
use crate::graph::{Graph, Subgraph};
use crate::Result;

/// Actor features per node: `[is_ego, h, c, degree, distance]`.
pub const OBS_FEATURES: usize = 5;
/// Critic features per node: `[h, c, degree]`.
pub const CRITIC_FEATURES: usize = 3;

/// An agent's view of its closed k-hop neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservation {
    pub subgraph: Graph,
    /// Original node index of each local node.
    pub node_map: Vec<usize>,
    /// Row-major `subgraph.num_nodes() x OBS_FEATURES`.
    pub features: Vec<f64>,
    pub ego_local: usize,
}

impl LocalObservation {
    pub fn num_nodes(&self) -> usize {
        self.subgraph.num_nodes()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * OBS_FEATURES..(i + 1) * OBS_FEATURES]
    }
}

/// `log(1 + degree) / log(1 + reference)`, shared by actor and critic inputs.
pub fn degree_feature(config: &EnvConfig, degree: usize) -> f64 {
    libm::log(1.0 + degree as f64) / libm::log(1.0 + config.degree_ref_nodes as f64)
}

pub fn observe(config: &EnvConfig, graph: &Graph, state: &GlobalState, i: usize) -> Result<LocalObservation> {
    let Subgraph { graph: subgraph, node_map, ego_local } = graph.k_hop_subgraph(i, config.obs_hops)?;
    let hop_scale = config.obs_hops.max(1) as f64;
    let local_dist = subgraph.bfs_distances(ego_local)?;
    let mut features = Vec::with_capacity(node_map.len() * OBS_FEATURES);
    for (local, &node) in node_map.iter().enumerate() {
        features.extend([
            if local == ego_local { 1.0 } else { 0.0 },
            if state.h[node] { 1.0 } else { 0.0 },
            state.c[node],
            degree_feature(config, graph.degree(node)),
            local_dist[local] as f64 / hop_scale,
        ]);
    }
    Ok(LocalObservation { subgraph, node_map, features, ego_local })
}

/// Row-major `N x CRITIC_FEATURES` global feature matrix.
pub fn critic_features(config: &EnvConfig, graph: &Graph, state: &GlobalState) -> Vec<f64> {
    let mut out = Vec::with_capacity(graph.num_nodes() * CRITIC_FEATURES);
    for i in 0..graph.num_nodes() {
        out.extend([
            if state.h[i] { 1.0 } else { 0.0 },
            state.c[i],
            degree_feature(config, graph.degree(i)),
        ]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_observation() {
        let cfg = EnvConfig::epidemic();
        let g = Graph::path(3);
        let s = GlobalState::new(3);
        let obs = observe(&cfg, &g, &s, 1).unwrap();
        assert_eq!(obs.num_nodes(), 3);
        assert_eq!(obs.node_map[obs.ego_local], 1);
        let ego = obs.row(obs.ego_local);
        assert_eq!(ego[0], 1.0);
        assert_eq!(ego[4], 0.0);
        for l in 0..3 {
            if l != obs.ego_local {
                assert_eq!(obs.row(l)[0], 0.0);
                assert_eq!(obs.row(l)[4], 1.0);
            }
        }
        let iso = observe(&cfg, &Graph::empty(2), &GlobalState::new(2), 0).unwrap();
        assert_eq!(iso.num_nodes(), 1);
    }

    #[test]
    fn critic_and_actor_share_degree_feature() {
        let cfg = EnvConfig::epidemic();
        let g = Graph::star(4);
        let s = GlobalState::new(4);
        let cf = critic_features(&cfg, &g, &s);
        assert_eq!(cf.len(), 4 * CRITIC_FEATURES);
        for i in 0..4 {
            assert_eq!(cf[i * 3], 0.0);
            assert_eq!(cf[i * 3 + 1], 0.0);
            let obs = observe(&cfg, &g, &s, i).unwrap();
            assert_eq!(obs.row(obs.ego_local)[3], cf[i * 3 + 2]);
        }
    }
}
