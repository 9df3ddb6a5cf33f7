//! Frozen-policy evaluation on arbitrary graphs.
//!
//! Every policy in a comparison sees the same reset, noise and sampling
//! streams for a given episode index, so differences between rows come from
//! the policies rather than from luck.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;

use crate::env::{self, observe, Action, EnvConfig, GlobalState, LocalObservation, TransitionNoise};
use crate::error::bail;
use crate::graph::Graph;
use crate::models::{greedy, sample, ActorCritic, ObsBatch};
use crate::rng::{self, Rng, Stream};
use crate::Result;

/// Extra seeds flipped partway through an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Injection {
    /// Applied to the state before the action at this step.
    pub time: usize,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalScenario {
    pub graph: Graph,
    pub env: EnvConfig,
    pub episodes: usize,
    pub horizon: usize,
    pub deterministic: bool,
    pub injection: Option<Injection>,
    /// Uniform control level for every node at reset.
    pub init_control: Option<f64>,
    pub seed: u64,
}

impl EvalScenario {
    pub fn validate(&self) -> Result<()> {
        self.env.validate_for(self.graph.num_nodes())?;
        if self.horizon == 0 || self.episodes == 0 {
            bail!(Config, "evaluation needs at least one episode of at least one step");
        }
        if let Some(inj) = self.injection {
            if inj.time >= self.horizon {
                bail!(Config, "injection.time {} must be below the horizon {}", inj.time, self.horizon);
            }
        }
        if let Some(c) = self.init_control {
            if !(0.0..=1.0).contains(&c) {
                bail!(Config, "init_control must lie in [0, 1], got {c}");
            }
        }
        Ok(())
    }
}

/// Policy driving every agent during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Control pinned at zero.
    ZeroControl,
    /// Control pinned at one from the first step.
    FullControl,
    /// Uniform over the three actions.
    Random,
    Trained(&'a ActorCritic),
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::ZeroControl => "zero_control",
            Policy::FullControl => "full_control",
            Policy::Random => "random",
            Policy::Trained(_) => "trained",
        }
    }

    /// Scripted baselines fix the starting control level themselves.
    fn initial_control(&self) -> Option<f64> {
        match self {
            Policy::ZeroControl => Some(0.0),
            Policy::FullControl => Some(1.0),
            _ => None,
        }
    }

    fn actions(&self, env: &EnvConfig, graph: &Graph, state: &GlobalState, rng: &mut Rng, deterministic: bool) -> Result<Vec<Action>> {
        let n = graph.num_nodes();
        Ok(match self {
            Policy::ZeroControl => alloc::vec![Action::Decrease; n],
            Policy::FullControl => alloc::vec![Action::Increase; n],
            Policy::Random => (0..n).map(|_| Action::ALL[(rng::uniform(rng) * 3.0) as usize % 3]).collect(),
            Policy::Trained(model) => {
                let obs: Vec<LocalObservation> = (0..n).map(|i| observe(env, graph, state, i)).collect::<Result<_>>()?;
                let lps = model.log_probs(&ObsBatch::new(&obs)?)?;
                lps.iter().map(|lp| if deterministic { greedy(lp) } else { sample(lp, rng) }).collect()
            }
        })
    }
}

/// One evaluation timestep, as written to episode traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    /// Statuses after the step.
    pub h: Vec<bool>,
    /// Controls after the step.
    pub c: Vec<f64>,
    pub actions: Vec<Action>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Flipped fraction at `t = 0..=horizon`.
    pub flipped: Vec<f64>,
    /// Mean control at `t = 0..=horizon`.
    pub control: Vec<f64>,
    pub total_reward: f64,
    /// First `t` with nothing flipped.
    pub eradication_time: Option<usize>,
    pub trace: Vec<TraceStep>,
}

/// Flips up to `k` currently clear nodes, chosen uniformly.
fn inject(state: &mut GlobalState, k: usize, rng: &mut Rng) {
    let clear: Vec<usize> = (0..state.num_nodes()).filter(|&i| !state.h[i]).collect();
    for j in index::sample(rng, clear.len(), k.min(clear.len())) {
        state.h[clear[j]] = true;
    }
}

pub fn run_episode(scenario: &EvalScenario, policy: Policy<'_>, index: u64, trace: bool) -> Result<EpisodeOutcome> {
    let (env, graph) = (&scenario.env, &scenario.graph);
    let mut reset_rng = rng::stream(scenario.seed, Stream::EnvReset, index);
    let mut noise_rng = rng::stream(scenario.seed, Stream::EnvNoise, index);
    let mut policy_rng = rng::stream(scenario.seed, Stream::PolicySampling, index);
    let mut state = env::reset(env, graph, &mut reset_rng)?;
    if let Some(c0) = policy.initial_control().or(scenario.init_control) {
        state.c.iter_mut().for_each(|c| *c = c0);
    }
    let mut out = EpisodeOutcome {
        flipped: alloc::vec![state.flipped_fraction()],
        control: alloc::vec![state.mean_control()],
        total_reward: 0.0,
        eradication_time: (state.num_flipped() == 0).then_some(0),
        trace: Vec::new(),
    };
    for t in 0..scenario.horizon {
        if let Some(inj) = scenario.injection.filter(|inj| inj.time == t) {
            inject(&mut state, inj.num_seeds, &mut reset_rng);
        }
        let actions = policy.actions(env, graph, &state, &mut policy_rng, scenario.deterministic)?;
        let noise = TransitionNoise::draw(graph.num_nodes(), &mut noise_rng);
        let tr = env::step(env, graph, &state, &actions, &noise)?;
        state = tr.next;
        out.total_reward += tr.reward;
        out.flipped.push(state.flipped_fraction());
        out.control.push(state.mean_control());
        if out.eradication_time.is_none() && state.num_flipped() == 0 {
            out.eradication_time = Some(t + 1);
        }
        if trace {
            out.trace.push(TraceStep { t: t + 1, h: state.h.clone(), c: state.c.clone(), actions, reward: tr.reward });
        }
    }
    Ok(out)
}

/// Aggregates over a scenario's episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    /// Per-timestep mean flipped fraction, `t = 0..=horizon`.
    pub mean_frac: Vec<f64>,
    /// Per-timestep across-episode population std of the flipped fraction.
    pub std_frac: Vec<f64>,
    pub mean_control: Vec<f64>,
    pub eradication_times: Vec<Option<usize>>,
    pub final_fracs: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl EvalMetrics {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let len = outcomes.first().map_or(0, |o| o.flipped.len());
        let column = |f: &dyn Fn(&EpisodeOutcome) -> &[f64], t: usize| outcomes.iter().map(|o| f(o)[t]).collect::<Vec<f64>>();
        let mut mean_frac = Vec::with_capacity(len);
        let mut std_frac = Vec::with_capacity(len);
        let mut mean_control = Vec::with_capacity(len);
        for t in 0..len {
            let f = column(&|o| &o.flipped, t);
            let (m, s) = mean_std(&f);
            mean_frac.push(m);
            std_frac.push(s);
            mean_control.push(mean_std(&column(&|o| &o.control, t)).0);
        }
        Self {
            mean_frac,
            std_frac,
            mean_control,
            eradication_times: outcomes.iter().map(|o| o.eradication_time).collect(),
            final_fracs: outcomes.iter().map(|o| *o.flipped.last().expect("at least the initial state")).collect(),
            rewards: outcomes.iter().map(|o| o.total_reward).collect(),
        }
    }

    pub fn episodes(&self) -> usize {
        self.rewards.len()
    }

    /// Final spread proportion averaged over episodes.
    pub fn final_frac(&self) -> f64 {
        mean_std(&self.final_fracs).0
    }

    pub fn reward_mean(&self) -> f64 {
        mean_std(&self.rewards).0
    }

    pub fn reward_stderr(&self) -> f64 {
        stderr(&self.rewards)
    }

    /// Fraction of episodes that reached zero flipped nodes.
    pub fn eradicated_fraction(&self) -> f64 {
        self.eradication_times.iter().filter(|t| t.is_some()).count() as f64 / self.episodes().max(1) as f64
    }

    /// Mean eradication time over the episodes that eradicated.
    pub fn mean_eradication_time(&self) -> Option<f64> {
        let times: Vec<f64> = self.eradication_times.iter().flatten().map(|&t| t as f64).collect();
        (!times.is_empty()).then(|| mean_std(&times).0)
    }
}

pub fn evaluate(scenario: &EvalScenario, policy: Policy<'_>) -> Result<EvalMetrics> {
    scenario.validate()?;
    let outcomes: Vec<EpisodeOutcome> = (0..scenario.episodes as u64).map(|e| run_episode(scenario, policy, e, false)).collect::<Result<_>>()?;
    Ok(EvalMetrics::from_outcomes(&outcomes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub policy: String,
    pub metrics: EvalMetrics,
}

/// Evaluates every policy on every scenario, scenario-major.
pub fn compare(scenarios: &[(String, EvalScenario)], policies: &[(String, Policy<'_>)]) -> Result<Vec<ComparisonRow>> {
    if let Some((_, first)) = scenarios.first() {
        if let Some((name, s)) = scenarios.iter().find(|(_, s)| s.env.kind != first.env.kind) {
            bail!(Config, "scenario `{name}` uses {:?}, others use {:?}", s.env.kind, first.env.kind);
        }
    }
    let mut rows = Vec::with_capacity(scenarios.len() * policies.len());
    for (sname, scenario) in scenarios {
        for (pname, policy) in policies {
            rows.push(ComparisonRow { scenario: sname.clone(), policy: pname.clone(), metrics: evaluate(scenario, *policy)? });
        }
    }
    Ok(rows)
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, libm::sqrt(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n))
}

/// Standard error of the mean, using the sample standard deviation.
pub fn stderr(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    libm::sqrt(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) / n)
}

/// `(mean(a) - mean(b)) / sqrt(se_a^2 + se_b^2)`: the gap in pooled standard errors.
pub fn separation(a: &[f64], b: &[f64]) -> f64 {
    let gap = mean_std(a).0 - mean_std(b).0;
    let (sa, sb) = (stderr(a), stderr(b));
    let pooled = libm::sqrt(sa * sa + sb * sb);
    if pooled == 0.0 {
        if gap == 0.0 {
            0.0
        } else {
            gap.signum() * f64::INFINITY
        }
    } else {
        gap / pooled
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSpec;
    use crate::models::ModelConfig;

    fn scenario(env: EnvConfig, n: usize, episodes: usize) -> EvalScenario {
        EvalScenario {
            graph: GraphSpec::barabasi_albert(n, 1, 4).generate().unwrap(),
            env,
            episodes,
            horizon: 30,
            deterministic: false,
            injection: None,
            init_control: None,
            seed: 8,
        }
    }

    #[test]
    fn zero_control_rumor_never_spreads() {
        let s = scenario(EnvConfig::rumor(), 30, 20);
        let m = evaluate(&s, Policy::ZeroControl).unwrap();
        let seeds = s.env.num_seeds as f64 / 30.0;
        assert!(m.mean_frac.iter().all(|&f| (f - seeds).abs() < 1e-15));
        assert!(m.mean_control.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn full_control_beats_zero_control() {
        let s = EvalScenario { horizon: 50, ..scenario(EnvConfig::epidemic(), 30, 100) };
        let zero = evaluate(&s, Policy::ZeroControl).unwrap();
        let full = evaluate(&s, Policy::FullControl).unwrap();
        assert!(separation(&zero.final_fracs, &full.final_fracs) >= 3.0);
        assert!(full.mean_control.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn evaluation_is_reproducible() {
        let model = ActorCritic::new(&ModelConfig { d_model: 8, n_heads: 2, d_ff: 8, actor_hidden: 4, critic_hidden: 4, ..ModelConfig::default() }, 1).unwrap();
        for deterministic in [false, true] {
            let s = EvalScenario { deterministic, episodes: 3, ..scenario(EnvConfig::epidemic(), 12, 3) };
            assert_eq!(evaluate(&s, Policy::Trained(&model)).unwrap(), evaluate(&s, Policy::Trained(&model)).unwrap());
        }
        let s = scenario(EnvConfig::epidemic(), 12, 5);
        assert_eq!(evaluate(&s, Policy::Random).unwrap(), evaluate(&s, Policy::Random).unwrap());
    }

    #[test]
    fn eradicated_epidemic_stays_clear() {
        let s = EvalScenario { horizon: 80, ..scenario(EnvConfig::epidemic(), 20, 30) };
        for e in 0..30 {
            let o = run_episode(&s, Policy::FullControl, e, false).unwrap();
            if let Some(t) = o.eradication_time {
                assert!(o.flipped[t..].iter().all(|&f| f == 0.0));
                assert!(o.flipped[..t].iter().all(|&f| f > 0.0));
            }
        }
    }

    #[test]
    fn injection_and_init_control() {
        let env = EnvConfig { num_seeds: 1, ..EnvConfig::rumor() };
        let s = EvalScenario { injection: Some(Injection { time: 5, num_seeds: 4 }), init_control: Some(0.0), ..scenario(env, 20, 4) };
        let o = run_episode(&s, Policy::ZeroControl, 0, true).unwrap();
        // rumor with zero control never spreads, so the jump is exactly the injection
        assert_eq!(o.flipped[5], 1.0 / 20.0);
        assert_eq!(o.flipped[6], 5.0 / 20.0);
        assert_eq!(o.trace.len(), 30);
        let s = EvalScenario { init_control: Some(0.4), ..scenario(EnvConfig::epidemic(), 20, 1) };
        let o = run_episode(&s, Policy::Random, 0, false).unwrap();
        assert!((o.control[0] - 0.4).abs() < 1e-15);
        let bad = EvalScenario { injection: Some(Injection { time: 30, num_seeds: 1 }), ..s.clone() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn compare_shapes_and_self_difference() {
        let a = scenario(EnvConfig::epidemic(), 15, 6);
        let b = EvalScenario { graph: GraphSpec::watts_strogatz(15, 4, 0.1, 2).generate().unwrap(), ..a.clone() };
        let scen = alloc::vec![(String::from("ba"), a.clone()), (String::from("ws"), b)];
        let pol = alloc::vec![(String::from("zero"), Policy::ZeroControl), (String::from("r1"), Policy::Random), (String::from("r2"), Policy::Random)];
        let rows = compare(&scen, &pol).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[1].metrics, rows[2].metrics);
        assert_eq!(separation(&rows[1].metrics.rewards, &rows[2].metrics.rewards), 0.0);
        let mixed = alloc::vec![(String::from("e"), a.clone()), (String::from("r"), EvalScenario { env: EnvConfig::rumor(), ..a })];
        assert!(compare(&mixed, &pol).is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert!((stderr(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
        assert!((separation(&[4.0, 6.0], &[1.0, 3.0]) - 3.0 / libm::sqrt(2.0)).abs() < 1e-12);
    }
}
