use alloc::vec::Vec;

use crate::env::{self, critic_features, observe, Action, EnvConfig, GlobalState, LocalObservation, TransitionNoise};
use crate::error::bail;
use crate::graph::Graph;
use crate::models::{sample, ActorCritic, ObsBatch};
use crate::rng::{self, Stream};
use crate::Result;

/// States per critic forward pass when valuing an episode.
pub const CRITIC_CHUNK: usize = 256;

/// One-step counterfactual outcome for one `(agent, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRecord {
    /// Agent's next control level in this branch.
    pub control: f64,
    pub reward: f64,
    /// Critic value of the branch's next state.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// State before the step.
    pub state: GlobalState,
    pub observations: Vec<LocalObservation>,
    pub actions: Vec<Action>,
    /// Behavior-policy log-probabilities of all three actions, per agent.
    pub log_probs: Vec<[f64; 3]>,
    pub reward: f64,
    /// `V(s_t)`.
    pub value: f64,
    /// `V(s_{t+1})`.
    pub next_value: f64,
    /// Indexed `[agent][action]`; the factual action's entry reproduces the step.
    pub branches: Vec<[BranchRecord; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: u64,
    pub steps: Vec<StepRecord>,
    pub final_state: GlobalState,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// `V(s_0), ..., V(s_H)`; the last entry bootstraps through the horizon.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        v.push(self.steps.last().map_or(0.0, |s| s.next_value));
        v
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub num_agents: usize,
    pub episodes: Vec<Episode>,
}

impl RolloutBatch {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn num_counterfactual_records(&self) -> usize {
        self.episodes.iter().flat_map(|e| &e.steps).map(|s| s.branches.len() * Action::COUNT).sum()
    }

    pub fn mean_episode_reward(&self) -> f64 {
        self.episodes.iter().map(Episode::total_reward).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    pub fn mean_final_flipped_fraction(&self) -> f64 {
        self.episodes.iter().map(|e| e.final_state.flipped_fraction()).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    /// Critic features of every pre-step state, episode-major.
    pub fn critic_inputs(&self, env: &EnvConfig, graph: &Graph) -> Vec<Vec<f64>> {
        self.episodes.iter().flat_map(|e| &e.steps).map(|s| critic_features(env, graph, &s.state)).collect()
    }
}

/// Runs one episode with its own reset, noise and sampling streams, then
/// values every factual and counterfactual state with the critic.
pub fn collect_episode(
    env: &EnvConfig,
    graph: &Graph,
    model: &ActorCritic,
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<Episode> {
    if horizon == 0 {
        bail!(Config, "horizon must be at least 1");
    }
    let n = graph.num_nodes();
    let mut reset_rng = rng::stream(seed, Stream::EnvReset, index);
    let mut noise_rng = rng::stream(seed, Stream::EnvNoise, index);
    let mut policy_rng = rng::stream(seed, Stream::PolicySampling, index);
    let mut state = env::reset(env, graph, &mut reset_rng)?;

    let mut steps = Vec::with_capacity(horizon);
    let mut factual = alloc::vec![critic_features(env, graph, &state)];
    // branch next states that differ from the factual one
    let mut counterfactual = Vec::new();
    let mut pending: Vec<(usize, usize, usize)> = Vec::new();
    for t in 0..horizon {
        let observations: Vec<LocalObservation> = (0..n).map(|i| observe(env, graph, &state, i)).collect::<Result<_>>()?;
        let log_probs = model.log_probs(&ObsBatch::new(&observations)?)?;
        let actions: Vec<Action> = log_probs.iter().map(|lp| sample(lp, &mut policy_rng)).collect();
        let noise = TransitionNoise::draw(n, &mut noise_rng);
        let tr = env::step(env, graph, &state, &actions, &noise)?;
        let next_features = critic_features(env, graph, &tr.next);
        let mut branches = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = [BranchRecord { control: 0.0, reward: 0.0, value: 0.0 }; 3];
            for a in Action::ALL {
                let b = tr.branch(env, &state, i, a);
                row[a.index()] = BranchRecord { control: b.control, reward: b.reward, value: 0.0 };
                if b.control != tr.next.c[i] {
                    let mut f = next_features.clone();
                    f[i * crate::env::CRITIC_FEATURES + 1] = b.control;
                    pending.push((t, i, a.index()));
                    counterfactual.push(f);
                }
            }
            branches.push(row);
        }
        factual.push(next_features);
        steps.push(StepRecord {
            state: core::mem::replace(&mut state, tr.next),
            observations,
            actions,
            log_probs,
            reward: tr.reward,
            value: 0.0,
            next_value: 0.0,
            branches,
        });
    }

    factual.append(&mut counterfactual);
    let values = model.values_on_graph(graph, &factual, CRITIC_CHUNK)?;
    for (t, s) in steps.iter_mut().enumerate() {
        s.value = values[t];
        s.next_value = values[t + 1];
        for row in s.branches.iter_mut() {
            for b in row.iter_mut() {
                b.value = s.next_value;
            }
        }
    }
    for (k, &(t, i, a)) in pending.iter().enumerate() {
        steps[t].branches[i][a].value = values[horizon + 1 + k];
    }
    Ok(Episode { index, steps, final_state: state })
}

pub fn collect_rollouts(
    env: &EnvConfig,
    graph: &Graph,
    model: &ActorCritic,
    horizon: usize,
    seed: u64,
    episodes: core::ops::Range<u64>,
) -> Result<RolloutBatch> {
    let episodes = episodes.map(|e| collect_episode(env, graph, model, horizon, seed, e)).collect::<Result<_>>()?;
    Ok(RolloutBatch { num_agents: graph.num_nodes(), episodes })
}
