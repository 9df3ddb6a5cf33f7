use alloc::sync::Arc;

use super::{path, Init, Linear, Mlp};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::Result;

/// Attentional aggregation: a softmax over per-node gate scores weights a
/// sum of node embeddings, separately for each graph of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnPool {
    pub gate: Mlp,
}

impl AttnPool {
    /// The gate's last layer starts at zero, so initial pooling is a plain mean.
    pub fn new(init: &mut Init<'_>, prefix: &str, d_model: usize, hidden: usize) -> Result<Self> {
        let gate_prefix = path(prefix, "gate");
        let first = Linear::new(init, &path(&gate_prefix, "l0"), d_model, hidden, true)?;
        let w = init.zeros(&path(&gate_prefix, "l1/W"), &[hidden, 1])?;
        let b = init.zeros(&path(&gate_prefix, "l1/b"), &[1])?;
        let last = Linear { w, b: Some(b), in_dim: hidden, out_dim: 1 };
        Ok(Self { gate: Mlp { layers: alloc::vec![first, last] } })
    }

    /// `h` is `num_nodes x d`; returns `num_graphs x d`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let scores = self.gate.forward(tape, store, h)?;
        let weights = tape.segment_softmax(scores, offsets.clone())?;
        let weighted = tape.mul_col(h, weights)?;
        tape.segment_sum(weighted, offsets.clone())
    }
}
