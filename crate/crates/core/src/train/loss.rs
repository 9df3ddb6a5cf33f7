use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{RolloutBatch, ValueLoss};
use crate::autodiff::{Gradients, ParamStore, Tape};
use crate::env::LocalObservation;
use crate::error::bail;
use crate::graph::Graph;
use crate::models::{ActorCritic, ObsBatch, PolicyModel, StateBatch};
use crate::Result;

/// Flattened per-agent training samples, ordered by episode, timestep, agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSamples<'a> {
    pub observations: Vec<&'a LocalObservation>,
    pub actions: Vec<usize>,
    /// Behavior-policy log-probabilities of all actions.
    pub behavior: Vec<[f64; 3]>,
    pub advantages: Vec<f64>,
}

impl<'a> ActorSamples<'a> {
    /// `advantages[episode][t][agent]`.
    pub fn new(batch: &'a RolloutBatch, advantages: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut out = Self { observations: Vec::new(), actions: Vec::new(), behavior: Vec::new(), advantages: Vec::new() };
        if advantages.len() != batch.episodes.len() {
            bail!(Contract, "advantages for {} episodes, batch has {}", advantages.len(), batch.episodes.len());
        }
        for (ep, adv) in batch.episodes.iter().zip(advantages) {
            if adv.len() != ep.steps.len() {
                bail!(Contract, "advantages for {} steps, episode has {}", adv.len(), ep.steps.len());
            }
            for (step, a) in ep.steps.iter().zip(adv) {
                if a.len() != step.actions.len() {
                    bail!(Contract, "advantages for {} agents, step has {}", a.len(), step.actions.len());
                }
                out.observations.extend(step.observations.iter());
                out.actions.extend(step.actions.iter().map(|x| x.index()));
                out.behavior.extend_from_slice(&step.log_probs);
                out.advantages.extend_from_slice(a);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(crate::Error::Index { index: bad, len: self.len() });
        }
        Ok(Self {
            observations: idx.iter().map(|&i| self.observations[i]).collect(),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            behavior: idx.iter().map(|&i| self.behavior[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
        })
    }

    pub fn obs_batch(&self) -> Result<ObsBatch> {
        ObsBatch::new(self.observations.iter().copied())
    }

    /// Mean behavior-policy entropy.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self.behavior.iter().map(|lp| -lp.iter().map(|l| libm::exp(*l) * l).sum::<f64>()).sum();
        total / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub gradients: Gradients,
    /// Fraction of samples with `|ratio - 1| > clip_eps`.
    pub clip_fraction: f64,
    pub entropy: f64,
    /// Mean importance ratio.
    pub mean_ratio: f64,
    /// Estimate of KL(behavior || current) from the sampled actions.
    pub approx_kl: f64,
}

/// Clipped surrogate with entropy bonus, averaged over samples.
pub fn actor_loss(
    policy: &PolicyModel,
    store: &ParamStore,
    samples: &ActorSamples<'_>,
    obs: &ObsBatch,
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<ActorLoss> {
    let b = samples.len();
    if b == 0 || obs.len() != b {
        bail!(Contract, "{} observations for {b} actor samples", obs.len());
    }
    let mut t = Tape::new();
    let lp = policy.forward(&mut t, store, obs)?;
    let flat = t.reshape(lp, &[3 * b, 1])?;
    let idx: Arc<[usize]> = samples.actions.iter().enumerate().map(|(k, &a)| 3 * k + a).collect();
    let chosen = t.gather_rows(flat, idx)?;
    let old: Vec<f64> = samples.behavior.iter().zip(&samples.actions).map(|(lp, &a)| lp[a]).collect();
    let old = t.constant_from(&[b, 1], old)?;
    let adv = t.constant_from(&[b, 1], samples.advantages.clone())?;
    let log_ratio = t.sub(chosen, old)?;
    let ratio = t.exp(log_ratio)?;
    let unclipped = t.mul(ratio, adv)?;
    let clipped_ratio = t.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let clipped = t.mul(clipped_ratio, adv)?;
    let surrogate = t.minimum(unclipped, clipped)?;
    let surrogate = t.mean(surrogate)?;
    let p = t.exp(lp)?;
    let plogp = t.mul(p, lp)?;
    let neg_entropy_sum = t.sum(plogp)?;
    let entropy = t.scale(neg_entropy_sum, -1.0 / b as f64)?;
    let neg_surrogate = t.neg(surrogate)?;
    let bonus = t.scale(entropy, entropy_coef)?;
    let loss = t.sub(neg_surrogate, bonus)?;
    let gradients = t.backward(loss, store)?;

    let ratios = t.value(ratio).data();
    // (r - 1) - log r is a non-negative, unbiased KL estimate
    let approx_kl = t.value(log_ratio).data().iter().zip(ratios).map(|(lr, r)| (r - 1.0) - lr).sum::<f64>() / b as f64;
    let clip_fraction = ratios.iter().filter(|r| (**r - 1.0).abs() > clip_eps).count() as f64 / b as f64;
    Ok(ActorLoss {
        loss: t.value(loss).item(),
        gradients,
        clip_fraction,
        entropy: t.value(entropy).item(),
        mean_ratio: ratios.iter().sum::<f64>() / b as f64,
        approx_kl,
    })
}

/// Mean Huber or squared error between critic values and return targets.
pub fn critic_loss(
    model: &ActorCritic,
    graph: &Graph,
    features: &[&[f64]],
    targets: &[f64],
    value_loss: ValueLoss,
) -> Result<(f64, Gradients)> {
    if features.len() != targets.len() || targets.is_empty() {
        bail!(Contract, "{} critic inputs for {} targets", features.len(), targets.len());
    }
    let states = StateBatch::new(features.iter().map(|f| (graph, *f)))?;
    let mut t = Tape::new();
    let v = model.value.forward(&mut t, &model.critic_params, &states)?;
    let target = t.constant_from(&[targets.len(), 1], targets.to_vec())?;
    let diff = t.sub(v, target)?;
    let per = match value_loss {
        ValueLoss::Huber { delta } => t.huber(diff, delta)?,
        ValueLoss::Mse => t.mul(diff, diff)?,
    };
    let loss = t.mean(per)?;
    let grads = t.backward(loss, &model.critic_params)?;
    Ok((t.value(loss).item(), grads))
}
