use alloc::vec::Vec;

use super::{path, Init};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::Result;

/// Affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, prefix: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let w = init.weight(&path(prefix, "W"), in_dim, out_dim)?;
        let b = if bias { Some(init.zeros(&path(prefix, "b"), &[out_dim])?) } else { None };
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Affine layers with ELU in between; the last layer stays affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new(init: &mut Init<'_>, prefix: &str, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &path(prefix, &alloc::format!("l{i}")), w[0], w[1], true))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.elu(h)?;
            }
        }
        Ok(h)
    }
}
