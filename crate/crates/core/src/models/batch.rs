use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::env::{LocalObservation, CRITIC_FEATURES, OBS_FEATURES};
use crate::error::bail;
use crate::graph::Graph;
use crate::nn::GraphBatch;
use crate::Result;

/// Width of the size-invariant observation summary: ego ⊕ mean ⊕ max of the other nodes.
pub const SUMMARY_FEATURES: usize = 3 * OBS_FEATURES;

/// Many local observations stacked for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    /// All observation rows, `total_nodes x OBS_FEATURES`.
    pub features: Tensor,
    pub graphs: GraphBatch,
    /// Global row of each observation's ego node.
    pub ego_rows: Arc<[usize]>,
    /// `len x SUMMARY_FEATURES`; zeros stand in for mean/max when the ego is alone.
    pub summary: Tensor,
}

impl ObsBatch {
    pub fn new<'a, I>(observations: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LocalObservation>,
    {
        let obs: Vec<&LocalObservation> = observations.into_iter().collect();
        if obs.is_empty() {
            bail!(Contract, "observation batch is empty");
        }
        let mut features = Vec::new();
        let mut ego_rows = Vec::with_capacity(obs.len());
        let mut summary = Vec::with_capacity(obs.len() * SUMMARY_FEATURES);
        for o in &obs {
            if o.features.len() != o.num_nodes() * OBS_FEATURES || o.ego_local >= o.num_nodes() {
                bail!(Shape, "malformed observation with {} nodes", o.num_nodes());
            }
            ego_rows.push(features.len() / OBS_FEATURES + o.ego_local);
            features.extend_from_slice(&o.features);
            summary.extend_from_slice(o.row(o.ego_local));
            let mut mean = [0.0; OBS_FEATURES];
            let mut max = [f64::NEG_INFINITY; OBS_FEATURES];
            let others = o.num_nodes() - 1;
            for j in (0..o.num_nodes()).filter(|&j| j != o.ego_local) {
                for (f, &v) in o.row(j).iter().enumerate() {
                    mean[f] += v / others as f64;
                    max[f] = max[f].max(v);
                }
            }
            if others == 0 {
                max = [0.0; OBS_FEATURES];
            }
            summary.extend_from_slice(&mean);
            summary.extend_from_slice(&max);
        }
        let rows = features.len() / OBS_FEATURES;
        Ok(Self {
            features: Tensor::new(&[rows, OBS_FEATURES], features)?,
            graphs: GraphBatch::new(obs.iter().map(|o| &o.subgraph)),
            ego_rows: ego_rows.into(),
            summary: Tensor::new(&[obs.len(), SUMMARY_FEATURES], summary)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ego_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_rows.is_empty()
    }
}

/// Global critic inputs for several states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    pub features: Tensor,
    pub graphs: GraphBatch,
}

impl StateBatch {
    /// Each item is a graph with its row-major `N x CRITIC_FEATURES` matrix.
    pub fn new<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a Graph, &'a [f64])>,
    {
        let mut graphs = Vec::new();
        let mut features = Vec::new();
        for (g, f) in items {
            if g.num_nodes() == 0 || f.len() != g.num_nodes() * CRITIC_FEATURES {
                bail!(Shape, "critic features of length {} for a {}-node graph", f.len(), g.num_nodes());
            }
            graphs.push(g);
            features.extend_from_slice(f);
        }
        if graphs.is_empty() {
            bail!(Contract, "state batch is empty");
        }
        let rows = features.len() / CRITIC_FEATURES;
        Ok(Self { features: Tensor::new(&[rows, CRITIC_FEATURES], features)?, graphs: GraphBatch::new(graphs) })
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.num_graphs()
    }
}
