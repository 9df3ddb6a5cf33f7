//! Graph-aware neural building blocks on top of [`crate::autodiff`].
//!
//! Every layer works on a *batch* of graphs laid out as one block-diagonal
//! node matrix: [`GraphBatch`] records which rows belong to which graph and
//! the closed-neighborhood edge lists used by GAT layers. Self-attention and
//! pooling never mix rows of different graphs.

mod batch;
mod encoder;
mod gat;
mod mlp;
mod pool;

pub use batch::GraphBatch;
pub use encoder::{EncoderLayer, Mhsa, Norm};
pub use gat::{GatLayer, HeadMerge};
pub use mlp::{Linear, Mlp};
pub use pool::AttnPool;

use alloc::format;
use alloc::string::String;

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::rng::Rng;
use crate::Result;

/// LeakyReLU slope used in GAT attention scores.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;
/// Epsilon of the per-token standardization in encoder layers.
pub const NORM_EPS: f64 = 1e-5;

/// Creates parameters under a path prefix with fan-in-scaled initialization.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
}

impl Init<'_> {
    /// Uniform in `±sqrt(3 / fan_in)`.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = libm::sqrt(3.0 / rows.max(1) as f64);
        let t = Tensor::uniform(&[rows, cols], bound, self.rng);
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(shape, 1.0))
    }
}

pub(crate) fn path(prefix: &str, name: &str) -> String {
    format!("{prefix}/{name}")
}
