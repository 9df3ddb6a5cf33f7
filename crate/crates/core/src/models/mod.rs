//! Actor and critic networks.
//!
//! The critic reads the whole graph and pools it to one value; the actor is
//! shared by every agent and reads only that agent's local observation.
//! Parameter paths follow `actor/...` and `critic/...` so both stores can be
//! written into one checkpoint.

mod batch;
mod value_norm;

pub use batch::{ObsBatch, StateBatch, SUMMARY_FEATURES};
pub use value_norm::ValueNorm;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::env::{Action, LocalObservation, CRITIC_FEATURES, OBS_FEATURES};
use crate::error::bail;
use crate::nn::{AttnPool, EncoderLayer, GatLayer, GraphBatch, HeadMerge, Init, Mlp};
use crate::rng::{self, Rng, Stream};
use crate::Result;

/// Architecture family; every variant except `MlpActor` keeps the graph actor,
/// and every variant except the two critic ablations keeps the graph critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    #[default]
    Stacca,
    GatOnlyCritic,
    MlpCritic,
    MlpActor,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Stacca, Variant::GatOnlyCritic, Variant::MlpCritic, Variant::MlpActor];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Stacca => "stacca",
            Variant::GatOnlyCritic => "gat_only_critic",
            Variant::MlpCritic => "mlp_critic",
            Variant::MlpActor => "mlp_actor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_gat_layers: usize,
    pub n_enc_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_gat_layers: 2,
            n_enc_layers: 2,
            n_heads: 4,
            d_ff: 128,
            actor_hidden: 64,
            critic_hidden: 64,
            variant: Variant::Stacca,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("actor_hidden", self.actor_hidden),
            ("critic_hidden", self.critic_hidden),
        ] {
            if v == 0 {
                bail!(Config, "model.{name} must be positive");
            }
        }
        if self.d_model % self.n_heads != 0 {
            bail!(Config, "model.d_model ({}) must be divisible by model.n_heads ({})", self.d_model, self.n_heads);
        }
        Ok(())
    }
}

/// Embedding, GAT stack and encoder stack shared by both graph networks.
#[derive(Debug, Clone, PartialEq)]
struct GraphTrunk {
    embed: Mlp,
    gat: Vec<GatLayer>,
    enc: Vec<EncoderLayer>,
}

impl GraphTrunk {
    fn new(init: &mut Init<'_>, prefix: &str, in_dim: usize, cfg: &ModelConfig, n_enc: usize) -> Result<Self> {
        let d = cfg.d_model;
        let embed = Mlp::new(init, &format!("{prefix}/embed"), &[in_dim, d, d])?;
        let mut gat = Vec::with_capacity(cfg.n_gat_layers);
        for l in 0..cfg.n_gat_layers {
            let last = l + 1 == cfg.n_gat_layers;
            let (head_dim, merge) = if last { (d, HeadMerge::Average) } else { (d / cfg.n_heads, HeadMerge::Concat) };
            gat.push(GatLayer::new(init, &format!("{prefix}/gat{l}"), d, head_dim, cfg.n_heads, merge)?);
        }
        let enc = (0..n_enc)
            .map(|l| EncoderLayer::new(init, &format!("{prefix}/enc{l}"), d, cfg.n_heads, cfg.d_ff))
            .collect::<Result<_>>()?;
        Ok(Self { embed, gat, enc })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, graphs: &GraphBatch) -> Result<Var> {
        let mut h = self.embed.forward(tape, store, x)?;
        for (l, layer) in self.gat.iter().enumerate() {
            h = layer.forward(tape, store, h, graphs, l + 1 < self.gat.len())?;
        }
        for layer in &self.enc {
            h = layer.forward(tape, store, h, &graphs.node_offsets)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PolicyNet {
    Graph { trunk: GraphTrunk, head: Mlp },
    Mlp(Mlp),
}

/// Scale of the policy's output-layer weights at initialization.
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

/// Shared decentralized policy over three actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    net: PolicyNet,
}

impl PolicyModel {
    pub fn new(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Self> {
        cfg.validate()?;
        let net = if cfg.variant == Variant::MlpActor {
            let h = cfg.actor_hidden;
            PolicyNet::Mlp(Mlp::new(init, "actor/mlp", &[SUMMARY_FEATURES, h, h, Action::COUNT])?)
        } else {
            PolicyNet::Graph {
                trunk: GraphTrunk::new(init, "actor", OBS_FEATURES, cfg, cfg.n_enc_layers)?,
                head: Mlp::new(init, "actor/policy_head", &[cfg.d_model, cfg.actor_hidden, Action::COUNT])?,
            }
        };
        // Near-zero output weights start every agent close to uniform and keep
        // early optimizer steps from swinging the logits.
        let last = match &net {
            PolicyNet::Mlp(m) | PolicyNet::Graph { head: m, .. } => m.layers.last().expect("non-empty head").w,
        };
        init.store.get_mut(last).data_mut().iter_mut().for_each(|w| *w *= POLICY_OUTPUT_GAIN);
        Ok(Self { net })
    }

    /// Log-probabilities, one row of length 3 per observation.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, obs: &ObsBatch) -> Result<Var> {
        let logits = match &self.net {
            PolicyNet::Graph { trunk, head } => {
                let x = tape.constant(obs.features.clone());
                let h = trunk.forward(tape, store, x, &obs.graphs)?;
                let ego = tape.gather_rows(h, obs.ego_rows.clone())?;
                head.forward(tape, store, ego)?
            }
            PolicyNet::Mlp(mlp) => {
                let x = tape.constant(obs.summary.clone());
                mlp.forward(tape, store, x)?
            }
        };
        tape.log_softmax_rows(logits)
    }

    pub fn log_probs(&self, store: &ParamStore, obs: &ObsBatch) -> Result<Vec<[f64; 3]>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, obs)?;
        Ok(tape.value(out).data().chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
    }

    /// Samples (or picks greedily) an action for one observation.
    pub fn act(&self, store: &ParamStore, obs: &LocalObservation, rng: &mut Rng, deterministic: bool) -> Result<(Action, f64)> {
        let lp = self.log_probs(store, &ObsBatch::new([obs])?)?[0];
        let a = if deterministic { greedy(&lp) } else { sample(&lp, rng) };
        Ok((a, lp[a.index()]))
    }
}

/// Categorical draw from log-probabilities by inverse CDF.
pub fn sample(log_probs: &[f64; 3], rng: &mut Rng) -> Action {
    let u = rng::uniform(rng);
    let mut acc = 0.0;
    let mut last = Action::Decrease;
    for a in Action::ALL {
        let p = libm::exp(log_probs[a.index()]);
        if p > 0.0 {
            last = a;
        }
        acc += p;
        if u < acc {
            return a;
        }
    }
    last
}

/// Most likely action; ties go to the lowest index.
pub fn greedy(log_probs: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if log_probs[i] > log_probs[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[derive(Debug, Clone, PartialEq)]
enum ValueNet {
    Graph { trunk: GraphTrunk, pool: AttnPool, head: Mlp },
    Mlp { embed: Mlp, head: Mlp },
}

/// Centralized state-value function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    net: ValueNet,
}

impl ValueModel {
    pub fn new(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let head = |init: &mut Init<'_>| Mlp::new(init, "critic/value_head", &[d, cfg.critic_hidden, 1]);
        let net = match cfg.variant {
            Variant::MlpCritic => ValueNet::Mlp {
                embed: Mlp::new(init, "critic/embed", &[CRITIC_FEATURES, d, d])?,
                head: head(init)?,
            },
            v => {
                let n_enc = if v == Variant::GatOnlyCritic { 0 } else { cfg.n_enc_layers };
                ValueNet::Graph {
                    trunk: GraphTrunk::new(init, "critic", CRITIC_FEATURES, cfg, n_enc)?,
                    pool: AttnPool::new(init, "critic/pool", d, cfg.critic_hidden)?,
                    head: head(init)?,
                }
            }
        };
        Ok(Self { net })
    }

    /// Per-node embeddings right before pooling.
    pub fn node_embeddings(&self, tape: &mut Tape, store: &ParamStore, states: &StateBatch) -> Result<Var> {
        let x = tape.constant(states.features.clone());
        match &self.net {
            ValueNet::Graph { trunk, .. } => trunk.forward(tape, store, x, &states.graphs),
            ValueNet::Mlp { embed, .. } => embed.forward(tape, store, x),
        }
    }

    /// Values as a `num_graphs x 1` column.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, states: &StateBatch) -> Result<Var> {
        let h = self.node_embeddings(tape, store, states)?;
        let offsets = states.graphs.node_offsets.clone();
        let (pooled, head) = match &self.net {
            ValueNet::Graph { pool, head, .. } => (pool.forward(tape, store, h, &offsets)?, head),
            ValueNet::Mlp { head, .. } => (tape.segment_mean(h, offsets)?, head),
        };
        head.forward(tape, store, pooled)
    }

    pub fn values(&self, store: &ParamStore, states: &StateBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, states)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Both networks with their own parameter stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub config: ModelConfig,
    pub policy: PolicyModel,
    pub actor_params: ParamStore,
    pub value: ValueModel,
    pub critic_params: ParamStore,
    /// Maps raw critic outputs to return scale.
    pub value_norm: ValueNorm,
}

impl ActorCritic {
    /// Initializes from the `Init` stream of `seed` (index 0 actor, 1 critic).
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut actor_params = ParamStore::new();
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let policy = PolicyModel::new(config, &mut Init { store: &mut actor_params, rng: &mut rng })?;
        let mut critic_params = ParamStore::new();
        let mut rng = rng::stream(seed, Stream::Init, 1);
        let value = ValueModel::new(config, &mut Init { store: &mut critic_params, rng: &mut rng })?;
        Ok(Self { config: config.clone(), policy, actor_params, value, critic_params, value_norm: ValueNorm::default() })
    }

    pub fn log_probs(&self, obs: &ObsBatch) -> Result<Vec<[f64; 3]>> {
        self.policy.log_probs(&self.actor_params, obs)
    }

    /// State values on the return scale.
    pub fn values(&self, states: &StateBatch) -> Result<Vec<f64>> {
        let mut v = self.value.values(&self.critic_params, states)?;
        for x in &mut v {
            *x = self.value_norm.denormalize(*x);
        }
        Ok(v)
    }

    /// Values of many states on one graph, evaluated `chunk` states at a time.
    pub fn values_on_graph(&self, graph: &crate::graph::Graph, features: &[Vec<f64>], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(features.len());
        for part in features.chunks(chunk.max(1)) {
            let batch = StateBatch::new(part.iter().map(|f| (graph, f.as_slice())))?;
            out.extend(self.values(&batch)?);
        }
        Ok(out)
    }

    /// `(name, tensor)` pairs of both stores, actor first.
    pub fn named_params(&self) -> Vec<(&str, &crate::autodiff::Tensor)> {
        let mut v: Vec<_> = self.actor_params.iter().map(|(_, n, t)| (n, t)).collect();
        v.extend(self.critic_params.iter().map(|(_, n, t)| (n, t)));
        v
    }

    /// Copies parameter values by name; every parameter must be present with a matching shape.
    pub fn load_named<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a crate::autodiff::Tensor)>,
    {
        let mut seen = vec![false; self.actor_params.len() + self.critic_params.len()];
        let na = self.actor_params.len();
        for (name, t) in params {
            let (store, base) = if name.starts_with("actor/") {
                (&mut self.actor_params, 0)
            } else {
                (&mut self.critic_params, na)
            };
            let Some(id) = store.find(name) else {
                bail!(Contract, "unexpected parameter `{name}` for this architecture");
            };
            if store.get(id).shape() != t.shape() {
                bail!(Shape, "parameter `{name}` has shape {:?}, expected {:?}", t.shape(), store.get(id).shape());
            }
            *store.get_mut(id) = t.clone();
            seen[base + id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = if missing < na {
                self.actor_params.name(crate::autodiff::ParamId(missing))
            } else {
                self.critic_params.name(crate::autodiff::ParamId(missing - na))
            };
            bail!(Contract, "parameter `{name}` missing");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
