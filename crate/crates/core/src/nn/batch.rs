use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::graph::Graph;

/// Block-diagonal union of graphs.
///
/// Node rows of graph `g` occupy `node_offsets[g]..node_offsets[g + 1]`.
/// Directed attention edges `(dst, src)` cover every node's closed
/// neighborhood (self-loop included), sorted by `dst`, so the edges of
/// destination `i` are `edge_offsets[i]..edge_offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_offsets: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
    pub edge_src: Arc<[usize]>,
    pub edge_offsets: Arc<[usize]>,
}

impl GraphBatch {
    pub fn new<'a, I>(graphs: I) -> Self
    where
        I: IntoIterator<Item = &'a Graph>,
    {
        let mut node_offsets = alloc::vec![0];
        let mut edge_dst = Vec::new();
        let mut edge_src = Vec::new();
        let mut edge_offsets = alloc::vec![0];
        for g in graphs {
            let base = *node_offsets.last().expect("non-empty");
            for i in 0..g.num_nodes() {
                let nbrs = g.neighbors(i);
                // closed neighborhood in ascending order, self included
                let split = nbrs.partition_point(|&j| j < i);
                for &j in nbrs[..split].iter().chain(core::iter::once(&i)).chain(&nbrs[split..]) {
                    edge_dst.push(base + i);
                    edge_src.push(base + j);
                }
                edge_offsets.push(edge_dst.len());
            }
            node_offsets.push(base + g.num_nodes());
        }
        Self {
            node_offsets: node_offsets.into(),
            edge_dst: edge_dst.into(),
            edge_src: edge_src.into(),
            edge_offsets: edge_offsets.into(),
        }
    }

    /// `copies` copies of the same graph.
    pub fn repeat(graph: &Graph, copies: usize) -> Self {
        Self::new(core::iter::repeat_n(graph, copies))
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.node_offsets.last().expect("non-empty")
    }

    pub fn graph_nodes(&self, g: usize) -> core::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }
}
