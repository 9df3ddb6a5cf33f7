//! Networked control environments.
//!
//! Both environments share the same per-node state `(h, c)`: a binary status
//! and a control level in `[0, 1]`. Status transitions are driven by an
//! explicit [`TransitionNoise`] vector so that factual and counterfactual
//! branches of the same timestep can reuse one noise realization.

mod config;
mod observe;

use alloc::vec::Vec;

use rand::seq::index;

pub use config::{EnvConfig, EnvKind, RewardConfig};
pub use observe::{critic_features, degree_feature, observe, LocalObservation, CRITIC_FEATURES, OBS_FEATURES};

use crate::error::bail;
use crate::graph::Graph;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Per-agent action. The discriminant is the policy-head index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Decrease = 0,
    Maintain = 1,
    Increase = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Decrease, Action::Maintain, Action::Increase];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Signed control increment in units of `delta_c`.
    pub fn sign(self) -> f64 {
        match self {
            Action::Decrease => -1.0,
            Action::Maintain => 0.0,
            Action::Increase => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub h: bool,
    pub c: f64,
}

/// Joint state of all nodes at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub h: Vec<bool>,
    pub c: Vec<f64>,
    pub t: usize,
}

impl GlobalState {
    pub fn new(num_nodes: usize) -> Self {
        Self { h: alloc::vec![false; num_nodes], c: alloc::vec![0.0; num_nodes], t: 0 }
    }

    pub fn num_nodes(&self) -> usize {
        self.h.len()
    }

    pub fn node(&self, i: usize) -> NodeState {
        NodeState { h: self.h[i], c: self.c[i] }
    }

    pub fn num_flipped(&self) -> usize {
        self.h.iter().filter(|&&h| h).count()
    }

    /// Infected (epidemic) or aware (rumor) fraction.
    pub fn flipped_fraction(&self) -> f64 {
        self.num_flipped() as f64 / self.num_nodes() as f64
    }

    pub fn mean_control(&self) -> f64 {
        self.c.iter().sum::<f64>() / self.num_nodes() as f64
    }
}

/// Per-node uniform draws for one timestep's status transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionNoise(pub Vec<f64>);

impl TransitionNoise {
    pub fn draw(num_nodes: usize, rng: &mut Rng) -> Self {
        Self((0..num_nodes).map(|_| rng::uniform(rng)).collect())
    }
}

/// Initial state: `num_seeds` distinct uniformly chosen nodes flipped, zero control.
pub fn reset(config: &EnvConfig, graph: &Graph, rng: &mut Rng) -> Result<GlobalState> {
    let n = graph.num_nodes();
    config.validate_for(n)?;
    let mut state = GlobalState::new(n);
    for i in index::sample(rng, n, config.num_seeds) {
        state.h[i] = true;
    }
    Ok(state)
}

pub fn infected_neighbor_count(state: &GlobalState, graph: &Graph, i: usize) -> usize {
    graph.neighbors(i).iter().filter(|&&j| state.h[j]).count()
}

fn clamp_rate(beta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&beta), "transmission rate {beta} outside [0, 1]");
    beta.clamp(0.0, 1.0)
}

/// Effective per-contact transmission probability for a node with control `c`.
/// `flipped_fraction` is only used by the rumor dynamics.
pub fn transmission_rate(config: &EnvConfig, c: f64, flipped_fraction: f64) -> f64 {
    match config.kind {
        EnvKind::Epidemic => clamp_rate((1.0 - config.eta * c) * config.beta0),
        EnvKind::Rumor => clamp_rate(c * libm::pow(1.0 - flipped_fraction, config.kappa) * config.beta0),
    }
}

/// Probability that node `i` has `h = 0` at the next timestep.
pub fn prob_stay_clear(config: &EnvConfig, state: &GlobalState, i: usize, flipped_neighbors: usize) -> f64 {
    if state.h[i] {
        return match config.kind {
            EnvKind::Epidemic => config.delta_recovery,
            EnvKind::Rumor => 0.0,
        };
    }
    let beta = transmission_rate(config, state.c[i], state.flipped_fraction());
    libm::pow(1.0 - beta, flipped_neighbors as f64)
}

fn prob_stay_clear_with(config: &EnvConfig, state: &GlobalState, i: usize, count: usize, frac: f64) -> f64 {
    if state.h[i] {
        return match config.kind {
            EnvKind::Epidemic => config.delta_recovery,
            EnvKind::Rumor => 0.0,
        };
    }
    libm::pow(1.0 - transmission_rate(config, state.c[i], frac), count as f64)
}

/// Shaped team reward of a (post-transition) state.
pub fn team_reward(config: &EnvConfig, state: &GlobalState) -> f64 {
    reward_from_sums(config, state.c.iter().sum(), state.num_flipped(), state.num_nodes())
}

fn reward_from_sums(config: &EnvConfig, control_sum: f64, flipped: usize, n: usize) -> f64 {
    let r = &config.reward;
    let mean_c = control_sum / n as f64;
    let frac = flipped as f64 / n as f64;
    let control_penalty = r.w_ctrl * (libm::exp(r.a_ctrl * mean_c) - 1.0);
    match config.kind {
        EnvKind::Epidemic => {
            let catastrophe = 1.0 / (1.0 + libm::exp(-r.cat_steepness * (frac - r.cat_threshold)));
            let bonus = if flipped == 0 { r.eradication_bonus } else { 0.0 };
            -control_penalty - r.w_cat * catastrophe - r.w_lin * frac + bonus
        }
        EnvKind::Rumor => -control_penalty + r.w_lin * frac,
    }
}

/// Bounds of the epidemic reward for a given config.
pub fn epidemic_reward_bounds(config: &EnvConfig) -> (f64, f64) {
    let r = &config.reward;
    let low = -(r.w_ctrl * (libm::exp(r.a_ctrl) - 1.0) + r.w_cat + r.w_lin);
    (low, r.eradication_bonus)
}

fn apply_action(config: &EnvConfig, c: f64, action: Action) -> f64 {
    (c + action.sign() * config.delta_c).clamp(0.0, 1.0)
}

/// Outcome of one factual step, with the running sums that make
/// counterfactual branches O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: GlobalState,
    pub reward: f64,
    control_sum: f64,
    flipped: usize,
}

/// One counterfactual branch: the only state difference from the factual
/// next state is node `agent`'s control level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub agent: usize,
    pub action: Action,
    pub control: f64,
    pub reward: f64,
}

impl Transition {
    /// Branch where `agent` plays `alt` instead, everyone else and the noise unchanged.
    ///
    /// Status transitions depend only on the pre-step state, so the branch's
    /// next statuses equal the factual ones and only `c_agent` and the
    /// control-dependent reward terms change.
    pub fn branch(&self, config: &EnvConfig, prev: &GlobalState, agent: usize, alt: Action) -> Branch {
        let control = apply_action(config, prev.c[agent], alt);
        let factual = self.next.c[agent];
        let reward = if control == factual {
            self.reward
        } else {
            let sum = self.control_sum - factual + control;
            reward_from_sums(config, sum, self.flipped, self.next.num_nodes())
        };
        Branch { agent, action: alt, control, reward }
    }

    /// Full next state of a branch.
    pub fn materialize(&self, branch: &Branch) -> GlobalState {
        let mut s = self.next.clone();
        s.c[branch.agent] = branch.control;
        s
    }
}

fn check_shapes(graph: &Graph, state: &GlobalState, actions: &[Action], noise: &TransitionNoise) -> Result<()> {
    let n = graph.num_nodes();
    if state.num_nodes() != n || state.c.len() != n {
        bail!(Contract, "state has {} nodes, graph has {n}", state.num_nodes());
    }
    if actions.len() != n {
        bail!(Contract, "joint action has {} entries for {n} agents", actions.len());
    }
    if noise.0.len() != n {
        bail!(Contract, "noise has {} draws for {n} nodes", noise.0.len());
    }
    Ok(())
}

/// Advances the environment by one timestep.
///
/// Statuses transition using the pre-step state (including pre-step control);
/// node `i` ends with `h = 0` iff `noise[i] < P(stay clear)`. Control then
/// moves by the chosen increment and the reward is computed on the new state.
pub fn step(
    config: &EnvConfig,
    graph: &Graph,
    state: &GlobalState,
    actions: &[Action],
    noise: &TransitionNoise,
) -> Result<Transition> {
    check_shapes(graph, state, actions, noise)?;
    let n = graph.num_nodes();
    let frac = state.flipped_fraction();
    let mut next = GlobalState { h: Vec::with_capacity(n), c: Vec::with_capacity(n), t: state.t + 1 };
    for i in 0..n {
        let count = infected_neighbor_count(state, graph, i);
        let stay = prob_stay_clear_with(config, state, i, count, frac);
        next.h.push(noise.0[i] >= stay);
        next.c.push(apply_action(config, state.c[i], actions[i]));
    }
    let control_sum: f64 = next.c.iter().sum();
    let flipped = next.num_flipped();
    let reward = reward_from_sums(config, control_sum, flipped, n);
    if config.kind == EnvKind::Epidemic {
        let (lo, hi) = epidemic_reward_bounds(config);
        debug_assert!(reward >= lo - 1e-9 && reward <= hi + 1e-9, "reward {reward} outside [{lo}, {hi}]");
    }
    Ok(Transition { next, reward, control_sum, flipped })
}

/// Step with agent `i`'s action replaced by `alt`, reusing the same noise.
pub fn counterfactual_branch(
    config: &EnvConfig,
    graph: &Graph,
    state: &GlobalState,
    actions: &[Action],
    noise: &TransitionNoise,
    i: usize,
    alt: Action,
) -> Result<(GlobalState, f64)> {
    if i >= graph.num_nodes() {
        return Err(Error::Index { index: i, len: graph.num_nodes() });
    }
    let factual = step(config, graph, state, actions, noise)?;
    let branch = factual.branch(config, state, i, alt);
    Ok((factual.materialize(&branch), branch.reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSpec;
    use alloc::vec;

    fn rng(seed: u64) -> Rng {
        rng::stream(seed, rng::Stream::EnvReset, 0)
    }

    #[test]
    fn reset_seeds_and_determinism() {
        let g = GraphSpec::barabasi_albert(50, 1, 1).generate().unwrap();
        let cfg = EnvConfig::epidemic();
        let s = reset(&cfg, &g, &mut rng(3)).unwrap();
        assert_eq!(s.num_flipped(), 3);
        assert!(s.c.iter().all(|&c| c == 0.0));
        assert_eq!(s, reset(&cfg, &g, &mut rng(3)).unwrap());
        let all = EnvConfig { num_seeds: 50, ..cfg };
        assert_eq!(reset(&all, &g, &mut rng(0)).unwrap().num_flipped(), 50);
        let too_many = EnvConfig { num_seeds: 51, ..cfg };
        assert!(matches!(reset(&too_many, &g, &mut rng(0)), Err(Error::Config(_))));
    }

    #[test]
    fn neighbor_counts() {
        let star = Graph::star(5);
        let mut s = GlobalState::new(5);
        s.h[1..].iter_mut().for_each(|h| *h = true);
        assert_eq!(infected_neighbor_count(&s, &star, 0), 4);
        let mut s = GlobalState::new(5);
        s.h[0] = true;
        assert_eq!(infected_neighbor_count(&s, &star, 0), 0);
        assert_eq!(infected_neighbor_count(&GlobalState::new(3), &Graph::empty(3), 1), 0);
    }

    #[test]
    fn stay_clear_probabilities() {
        let cfg = EnvConfig::epidemic();
        let mut s = GlobalState::new(2);
        s.c[0] = 1.0;
        assert!((prob_stay_clear(&cfg, &s, 0, 1) - 0.985).abs() < 1e-15);
        assert_eq!(prob_stay_clear(&cfg, &s, 1, 0), 1.0);
        s.h[1] = true;
        assert_eq!(prob_stay_clear(&cfg, &s, 1, 3), cfg.delta_recovery);

        let rumor = EnvConfig::rumor();
        assert_eq!(prob_stay_clear(&rumor, &s, 1, 0), 0.0);
        // h̄ -> 0 limit: a large graph with a single aware neighbor.
        let mut big = GlobalState::new(1_000_000);
        big.c[0] = 1.0;
        big.h[1] = true;
        assert!((prob_stay_clear(&rumor, &big, 0, 1) - 0.75).abs() < 1e-5);
    }

    #[test]
    fn quiet_step_and_clipping() {
        let g = Graph::path(3);
        let cfg = EnvConfig::epidemic();
        let mut s = GlobalState::new(3);
        s.c[0] = 0.95;
        let acts = [Action::Increase, Action::Maintain, Action::Maintain];
        let noise = TransitionNoise(vec![0.999; 3]);
        let tr = step(&cfg, &g, &s, &acts, &noise).unwrap();
        assert_eq!(tr.next.h, s.h);
        assert_eq!(tr.next.c[0], 1.0);
        assert_eq!(tr.next.t, 1);
        assert!((tr.reward - team_reward(&cfg, &tr.next)).abs() < 1e-12);
        assert!(step(&cfg, &g, &s, &acts[..2], &noise).is_err());
    }

    #[test]
    fn reward_terms() {
        let cfg = EnvConfig::epidemic();
        let s = GlobalState::new(10);
        let expected = 3.0 - 5.0 / (1.0 + libm::exp(20.0 * 0.3));
        assert!((team_reward(&cfg, &s) - expected).abs() < 1e-15);
        let rumor = EnvConfig::rumor();
        let mut aware = GlobalState::new(4);
        aware.h.iter_mut().for_each(|h| *h = true);
        assert_eq!(team_reward(&rumor, &aware), rumor.reward.w_lin);
        assert_eq!(team_reward(&rumor, &GlobalState::new(4)), 0.0);
    }

    #[test]
    fn identity_branch_is_bitwise_factual() {
        let g = Graph::path(3);
        let cfg = EnvConfig::epidemic();
        let mut s = GlobalState::new(3);
        s.h[1] = true;
        s.c = vec![0.5, 0.2, 0.0];
        let acts = [Action::Maintain, Action::Increase, Action::Decrease];
        let noise = TransitionNoise(vec![0.3, 0.7, 0.9]);
        let tr = step(&cfg, &g, &s, &acts, &noise).unwrap();
        for i in 0..3 {
            let (alt, r) = counterfactual_branch(&cfg, &g, &s, &acts, &noise, i, acts[i]).unwrap();
            assert_eq!(alt, tr.next);
            assert_eq!(r.to_bits(), tr.reward.to_bits());
        }
        let (alt, r_alt) = counterfactual_branch(&cfg, &g, &s, &acts, &noise, 0, Action::Increase).unwrap();
        assert_eq!(alt.h, tr.next.h);
        assert!((alt.c[0] - 0.6).abs() < 1e-12);
        assert_eq!(&alt.c[1..], &tr.next.c[1..]);
        let rc = &cfg.reward;
        let closed = -rc.w_ctrl
            * (libm::exp(rc.a_ctrl * alt.mean_control()) - libm::exp(rc.a_ctrl * tr.next.mean_control()));
        assert!((r_alt - tr.reward - closed).abs() < 1e-12);
    }
}
