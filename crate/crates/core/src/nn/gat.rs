use alloc::format;
use alloc::vec::Vec;

use super::{path, GraphBatch, Init, GAT_LEAKY_SLOPE};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::bail;
use crate::Result;

/// How a GAT layer combines its attention heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMerge {
    Concat,
    Average,
}

#[derive(Debug, Clone, PartialEq)]
struct GatHead {
    w: ParamId,
    a: ParamId,
}

/// Graph attention layer over closed neighborhoods.
///
/// Head `k` scores edge `i <- j` as `LeakyReLU(a_k · [W_k h_i ‖ W_k h_j])`,
/// normalizes over `j ∈ N(i) ∪ {i}` and aggregates `Σ_j α_ij W_k h_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    heads: Vec<GatHead>,
    pub merge: HeadMerge,
    pub in_dim: usize,
    pub head_dim: usize,
}

impl GatLayer {
    pub fn new(
        init: &mut Init<'_>,
        prefix: &str,
        in_dim: usize,
        head_dim: usize,
        num_heads: usize,
        merge: HeadMerge,
    ) -> Result<Self> {
        if num_heads == 0 {
            bail!(Config, "GAT layer needs at least one head");
        }
        let heads = (0..num_heads)
            .map(|k| {
                let p = path(prefix, &format!("head{k}"));
                Ok(GatHead { w: init.weight(&path(&p, "W"), in_dim, head_dim)?, a: init.weight(&path(&p, "a"), 2 * head_dim, 1)? })
            })
            .collect::<Result<_>>()?;
        Ok(Self { heads, merge, in_dim, head_dim })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn out_dim(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.head_dim * self.heads.len(),
            HeadMerge::Average => self.head_dim,
        }
    }

    /// `h` is `num_nodes x in_dim`. ELU is applied after merging when `activate`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, graph: &GraphBatch, activate: bool) -> Result<Var> {
        let (rows, cols) = tape.value(h).dims2()?;
        if rows != graph.num_nodes() || cols != self.in_dim {
            bail!(Shape, "GAT input {rows}x{cols}, expected {}x{}", graph.num_nodes(), self.in_dim);
        }
        // All heads run side by side: head k owns columns k*d..(k+1)*d of `wh`
        // and column k of the score and attention matrices.
        let d = self.head_dim;
        let nh = self.heads.len();
        let ws: Vec<Var> = self.heads.iter().map(|hd| tape.param(store, hd.w)).collect();
        let w_all = tape.concat(&ws, 1)?;
        let wh = tape.matmul(h, w_all)?;
        let mut dst_cols = Vec::with_capacity(nh);
        let mut src_cols = Vec::with_capacity(nh);
        for (k, head) in self.heads.iter().enumerate() {
            let a = tape.param(store, head.a);
            for (half, cols) in [(0, &mut dst_cols), (d, &mut src_cols)] {
                let part = tape.slice(a, 0, half, d)?;
                cols.push(block_column(tape, part, k * d, (nh - k - 1) * d)?);
            }
        }
        let a_dst = tape.concat(&dst_cols, 1)?;
        let a_src = tape.concat(&src_cols, 1)?;
        let s_dst = tape.matmul(wh, a_dst)?;
        let s_src = tape.matmul(wh, a_src)?;
        let e_dst = tape.gather_rows(s_dst, graph.edge_dst.clone())?;
        let e_src = tape.gather_rows(s_src, graph.edge_src.clone())?;
        let e = tape.add(e_dst, e_src)?;
        let e = tape.leaky_relu(e, GAT_LEAKY_SLOPE)?;
        let alpha = tape.segment_softmax(e, graph.edge_offsets.clone())?;
        let mut expand = alloc::vec![0.0; nh * nh * d];
        for k in 0..nh {
            expand[k * nh * d + k * d..k * nh * d + (k + 1) * d].fill(1.0);
        }
        let expand = tape.constant_from(&[nh, nh * d], expand)?;
        let alpha = tape.matmul(alpha, expand)?;
        let msgs = tape.gather_rows(wh, graph.edge_src.clone())?;
        let weighted = tape.mul(msgs, alpha)?;
        let concat = tape.segment_sum(weighted, graph.edge_offsets.clone())?;
        let merged = match self.merge {
            HeadMerge::Concat => concat,
            HeadMerge::Average => {
                let mut avg = alloc::vec![0.0; nh * d * d];
                for k in 0..nh {
                    for j in 0..d {
                        avg[(k * d + j) * d + j] = 1.0 / nh as f64;
                    }
                }
                let avg = tape.constant_from(&[nh * d, d], avg)?;
                tape.matmul(concat, avg)?
            }
        };
        if activate {
            tape.elu(merged)
        } else {
            Ok(merged)
        }
    }
}

/// `part` (`d x 1`) padded with `above` zero rows before and `below` after.
fn block_column(tape: &mut Tape, part: Var, above: usize, below: usize) -> Result<Var> {
    let mut pieces = Vec::with_capacity(3);
    if above > 0 {
        pieces.push(tape.constant(crate::autodiff::Tensor::zeros(&[above, 1])));
    }
    pieces.push(part);
    if below > 0 {
        pieces.push(tape.constant(crate::autodiff::Tensor::zeros(&[below, 1])));
    }
    tape.concat(&pieces, 0)
}
