use super::{path, Init, Mlp, NORM_EPS};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::bail;
use crate::Result;
use alloc::sync::Arc;

/// Multi-head scaled dot-product self-attention.
///
/// Projections are stored as `d_model x d_model` matrices whose column block
/// `k*d_k..(k+1)*d_k` belongs to head `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mhsa {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub num_heads: usize,
    pub d_model: usize,
}

impl Mhsa {
    pub fn new(init: &mut Init<'_>, prefix: &str, d_model: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            bail!(Config, "d_model {d_model} must be divisible by the head count {num_heads}");
        }
        Ok(Self {
            w_q: init.weight(&path(prefix, "W_Q"), d_model, d_model)?,
            w_k: init.weight(&path(prefix, "W_K"), d_model, d_model)?,
            w_v: init.weight(&path(prefix, "W_V"), d_model, d_model)?,
            w_o: init.weight(&path(prefix, "W_O"), d_model, d_model)?,
            num_heads,
            d_model,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Tokens attend only within their segment of `offsets`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let (_, cols) = tape.value(x).dims2()?;
        if cols != self.d_model {
            bail!(Shape, "attention input width {cols}, expected {}", self.d_model);
        }
        let [wq, wk, wv, wo] = [self.w_q, self.w_k, self.w_v, self.w_o].map(|p| tape.param(store, p));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let heads = tape.segment_attention(q, k, v, offsets.clone(), self.num_heads)?;
        tape.matmul(heads, wo)
    }
}

/// Learned per-feature scale and shift after standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl Norm {
    fn new(init: &mut Init<'_>, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self { scale: init.ones(&path(prefix, "scale"), &[d])?, shift: init.zeros(&path(prefix, "shift"), &[d])? })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let z = tape.layer_norm(x, NORM_EPS)?;
        let s = tape.param(store, self.scale);
        let b = tape.param(store, self.shift);
        let z = tape.mul(z, s)?;
        tape.add(z, b)
    }
}

/// Post-norm transformer encoder layer:
/// `Z = norm1(X + MHSA(X))`, `X' = norm2(Z + FFN(Z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub mhsa: Mhsa,
    pub ffn: Mlp,
    pub norm1: Norm,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init<'_>, prefix: &str, d_model: usize, num_heads: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            mhsa: Mhsa::new(init, &path(prefix, "mhsa"), d_model, num_heads)?,
            ffn: Mlp::new(init, &path(prefix, "ffn"), &[d_model, d_ff, d_model])?,
            norm1: Norm::new(init, &path(prefix, "norm1"), d_model)?,
            norm2: Norm::new(init, &path(prefix, "norm2"), d_model)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let attn = self.mhsa.forward(tape, store, x, offsets)?;
        let z = tape.add(x, attn)?;
        let z = self.norm1.forward(tape, store, z)?;
        let ff = self.ffn.forward(tape, store, z)?;
        let y = tape.add(z, ff)?;
        self.norm2.forward(tape, store, y)
    }
}
