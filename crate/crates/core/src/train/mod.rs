//! Multi-agent PPO with a centralized critic and per-agent counterfactual
//! advantages.
//!
//! One iteration collects fixed-horizon episodes (plus every one-step
//! counterfactual branch), computes GAE returns for the critic and
//! advantages for the actor, then runs the clipped-surrogate actor epochs
//! followed by the critic epochs.

mod advantage;
mod loss;
mod rollout;

pub use advantage::{counterfactual_advantages, gae, standardize, Gae};
pub use loss::{actor_loss, critic_loss, ActorLoss, ActorSamples};
pub use rollout::{collect_episode, collect_rollouts, BranchRecord, Episode, RolloutBatch, StepRecord, CRITIC_CHUNK};

use alloc::vec::Vec;

use crate::autodiff::{Adam, AdamConfig};
use crate::env::EnvConfig;
use crate::error::bail;
use crate::graph::Graph;
use crate::models::{ActorCritic, ModelConfig};
use crate::rng::{self, Stream};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AdvantageMode {
    /// Per-agent one-step counterfactual advantage, standardized across agents per timestep.
    #[default]
    Counterfactual,
    /// One GAE advantage shared by all agents, standardized over the whole batch.
    GaeShared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum ValueLoss {
    Huber { delta: f64 },
    Mse,
}

impl Default for ValueLoss {
    fn default() -> Self {
        ValueLoss::Huber { delta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub k_pi: usize,
    pub k_v: usize,
    pub episodes_per_iter: usize,
    pub horizon: usize,
    pub iters: usize,
    pub advantage_mode: AdvantageMode,
    pub value_loss: ValueLoss,
    pub entropy_coef: f64,
    pub norm_eps: f64,
    pub seed: u64,
    /// Samples per gradient step; 0 means full batch.
    pub minibatch_size: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Fit the critic to standardized returns using running statistics.
    pub value_norm: bool,
    /// Actor epochs stop once the estimated KL from the behavior policy
    /// exceeds 1.5 times this; 0 disables the check.
    pub target_kl: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            k_pi: 4,
            k_v: 4,
            episodes_per_iter: 8,
            horizon: 100,
            iters: 100,
            advantage_mode: AdvantageMode::Counterfactual,
            value_loss: ValueLoss::default(),
            entropy_coef: 0.01,
            norm_eps: 1e-8,
            seed: 0,
            minibatch_size: 0,
            max_grad_norm: 0.0,
            value_norm: true,
            target_kl: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!(Config, "train.gamma must lie in (0, 1), got {}", self.gamma);
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            bail!(Config, "train.gae_lambda must lie in [0, 1], got {}", self.gae_lambda);
        }
        if !(self.clip_eps > 0.0) {
            bail!(Config, "train.clip_eps must be positive, got {}", self.clip_eps);
        }
        if self.k_pi == 0 || self.k_v == 0 {
            bail!(Config, "train.k_pi and train.k_v must be at least 1");
        }
        if self.episodes_per_iter == 0 || self.horizon == 0 {
            bail!(Config, "train.episodes_per_iter and train.horizon must be at least 1");
        }
        for (name, v) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic), ("norm_eps", self.norm_eps)] {
            if !(v > 0.0) {
                bail!(Config, "train.{name} must be positive, got {v}");
            }
        }
        if !(self.entropy_coef >= 0.0) || !(self.max_grad_norm >= 0.0) || !(self.target_kl >= 0.0) {
            bail!(Config, "train.entropy_coef, train.max_grad_norm and train.target_kl must be non-negative");
        }
        if let ValueLoss::Huber { delta } = self.value_loss {
            if !(delta > 0.0) {
                bail!(Config, "train.value_loss.delta must be positive, got {delta}");
            }
        }
        Ok(())
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterMetrics {
    pub iter: usize,
    pub mean_episode_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub final_flipped_fraction: f64,
    /// KL estimate at the last actor gradient evaluation.
    pub approx_kl: f64,
    /// Actor gradient steps actually taken.
    pub actor_steps: usize,
}

/// Mutable training state: models, optimizers and the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub env: EnvConfig,
    pub graph: Graph,
    pub config: TrainConfig,
    pub model: ActorCritic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    /// Number of completed iterations.
    pub iter: usize,
}

impl Trainer {
    /// Fresh models initialized from `config.seed`.
    pub fn new(env: EnvConfig, graph: Graph, model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        env.validate_for(graph.num_nodes())?;
        let model = ActorCritic::new(model, config.seed)?;
        let actor_opt = Adam::new(AdamConfig::with_lr(config.lr_actor), &model.actor_params);
        let critic_opt = Adam::new(AdamConfig::with_lr(config.lr_critic), &model.critic_params);
        Ok(Self { env, graph, config, model, actor_opt, critic_opt, iter: 0 })
    }

    /// Global indices of the episodes collected in the next iteration.
    pub fn next_episode_indices(&self) -> core::ops::Range<u64> {
        let e = self.config.episodes_per_iter as u64;
        self.iter as u64 * e..(self.iter as u64 + 1) * e
    }

    pub fn collect(&self) -> Result<RolloutBatch> {
        collect_rollouts(&self.env, &self.graph, &self.model, self.config.horizon, self.config.seed, self.next_episode_indices())
    }

    /// Collect and update.
    pub fn iteration(&mut self) -> Result<IterMetrics> {
        let batch = self.collect()?;
        self.update(&batch)
    }

    /// Advantages of a collected batch: one row per `(episode, t)`, one column per agent.
    pub fn advantages(&self, batch: &RolloutBatch) -> Result<(Vec<Gae>, Vec<Vec<Vec<f64>>>)> {
        let cfg = &self.config;
        let gaes: Vec<Gae> = batch.episodes.iter().map(|e| gae(&e.rewards(), &e.values(), cfg.gamma, cfg.gae_lambda)).collect::<Result<_>>()?;
        let adv = match cfg.advantage_mode {
            AdvantageMode::Counterfactual => batch
                .episodes
                .iter()
                .map(|e| {
                    e.steps
                        .iter()
                        .map(|s| Ok(standardize(&counterfactual_advantages(s, cfg.gamma)?, cfg.norm_eps)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
            AdvantageMode::GaeShared => {
                let flat: Vec<f64> = gaes.iter().flat_map(|g| g.advantages.iter().copied()).collect();
                let norm = standardize(&flat, cfg.norm_eps);
                let n = batch.num_agents;
                let mut it = norm.into_iter();
                gaes.iter()
                    .map(|g| g.advantages.iter().map(|_| alloc::vec![it.next().expect("same length"); n]).collect())
                    .collect()
            }
        };
        Ok((gaes, adv))
    }

    /// Actor then critic epochs on one batch.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<IterMetrics> {
        let cfg = self.config.clone();
        let (gaes, adv) = self.advantages(batch)?;
        let samples = ActorSamples::new(batch, &adv)?;
        let mut returns: Vec<f64> = gaes.iter().flat_map(|g| g.returns.iter().copied()).collect();
        if cfg.value_norm {
            self.model.value_norm.update(&returns);
            let norm = self.model.value_norm;
            returns.iter_mut().for_each(|r| *r = norm.normalize(*r));
        }
        let states = batch.critic_inputs(&self.env, &self.graph);

        let mut mb_rng = rng::stream(cfg.seed, Stream::Minibatch, self.iter as u64);
        let mut actor_losses = Vec::new();
        let mut clip_fracs = Vec::new();
        let mut approx_kl = 0.0;
        let full = if cfg.minibatch_size == 0 || cfg.minibatch_size >= samples.len() { Some(samples.obs_batch()?) } else { None };
        'epochs: for _ in 0..cfg.k_pi {
            for idx in minibatches(samples.len(), cfg.minibatch_size, &mut mb_rng) {
                let owned;
                let (sub, obs) = match &full {
                    Some(obs) => (&samples, obs),
                    None => {
                        let sub = samples.select(&idx)?;
                        let obs = sub.obs_batch()?;
                        owned = (sub, obs);
                        (&owned.0, &owned.1)
                    }
                };
                let out = actor_loss(&self.model.policy, &self.model.actor_params, sub, obs, cfg.clip_eps, cfg.entropy_coef)?;
                approx_kl = out.approx_kl;
                if cfg.target_kl > 0.0 && out.approx_kl > 1.5 * cfg.target_kl {
                    break 'epochs;
                }
                let mut grads = out.gradients;
                clip_grads(&mut grads, cfg.max_grad_norm);
                self.actor_opt.apply(&mut self.model.actor_params, &grads)?;
                actor_losses.push(out.loss);
                clip_fracs.push(out.clip_fraction);
            }
        }
        let mut critic_losses = Vec::new();
        for _ in 0..cfg.k_v {
            for idx in minibatches(returns.len(), cfg.minibatch_size, &mut mb_rng) {
                let feats: Vec<&[f64]> = idx.iter().map(|&i| states[i].as_slice()).collect();
                let targets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
                let (loss, mut grads) = critic_loss(&self.model, &self.graph, &feats, &targets, cfg.value_loss)?;
                clip_grads(&mut grads, cfg.max_grad_norm);
                self.critic_opt.apply(&mut self.model.critic_params, &grads)?;
                critic_losses.push(loss);
            }
        }
        let metrics = IterMetrics {
            iter: self.iter,
            mean_episode_reward: batch.mean_episode_reward(),
            actor_loss: mean(&actor_losses),
            critic_loss: mean(&critic_losses),
            entropy: samples.mean_entropy(),
            clip_fraction: mean(&clip_fracs),
            final_flipped_fraction: batch.mean_final_flipped_fraction(),
            approx_kl,
            actor_steps: actor_losses.len(),
        };
        self.iter += 1;
        Ok(metrics)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn clip_grads(grads: &mut crate::autodiff::Gradients, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grads.global_norm();
        if norm > max_norm {
            grads.scale(max_norm / norm);
        }
    }
}

/// Index sets for one epoch: the whole range, or a shuffled partition.
fn minibatches(n: usize, size: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    if size == 0 || size >= n {
        return alloc::vec![(0..n).collect()];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
    idx.chunks(size).map(|c| c.to_vec()).collect()
}
