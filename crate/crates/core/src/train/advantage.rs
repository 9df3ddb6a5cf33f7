use alloc::vec::Vec;

use super::StepRecord;
use crate::error::bail;
use crate::Result;

/// GAE output for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    /// `advantages + values`, the critic's regression targets.
    pub returns: Vec<f64>,
}

/// `values` holds `V(s_0), ..., V(s_H)`; the final value bootstraps the
/// truncated tail (no terminal masking).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Gae> {
    if values.len() != rewards.len() + 1 {
        bail!(Contract, "{} values for {} rewards; expected one extra bootstrap value", values.len(), rewards.len());
    }
    let h = rewards.len();
    let mut advantages = alloc::vec![0.0; h];
    let mut acc = 0.0;
    for t in (0..h).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(Gae { advantages, returns })
}

/// Raw per-agent counterfactual advantages of one timestep: the factual
/// one-step return minus the behavior-policy-weighted mean of the agent's
/// branch returns.
pub fn counterfactual_advantages(step: &StepRecord, gamma: f64) -> Result<Vec<f64>> {
    let n = step.log_probs.len();
    if step.branches.len() != n {
        bail!(Contract, "{} counterfactual rows for {n} agents", step.branches.len());
    }
    let factual = step.reward + gamma * step.next_value;
    Ok(step
        .branches
        .iter()
        .zip(&step.log_probs)
        .map(|(row, lp)| {
            let baseline: f64 = row.iter().zip(lp).map(|(b, l)| libm::exp(*l) * (b.reward + gamma * b.value)).sum();
            factual - baseline
        })
        .collect())
}

/// `(x - mean) / (std + eps)` with the population standard deviation.
pub fn standardize(x: &[f64], eps: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    x.iter().map(|v| (v - mean) / (sd + eps)).collect()
}
