//! Statistical and structural checks of the environment dynamics against
//! closed-form transition probabilities written independently here.

use proptest::prelude::*;

use stacca_core::env::{self, Action, EnvConfig, EnvKind, GlobalState, TransitionNoise};
use stacca_core::graph::{Graph, GraphSpec};
use stacca_core::rng::{self, Stream};

const DRAWS: usize = 100_000;
const N: usize = 20;
const DEGREE: usize = 4;

/// Probability that a clear node with control `c`, `infected` flipped
/// neighbors and global flipped fraction `frac` flips next step.
fn flip_probability(cfg: &EnvConfig, c: f64, infected: usize, frac: f64) -> f64 {
    let per_contact = match cfg.kind {
        EnvKind::Epidemic => cfg.beta0 * (1.0 - cfg.eta * c),
        EnvKind::Rumor => cfg.beta0 * c * (1.0 - frac).powf(cfg.kappa),
    };
    1.0 - (1.0 - per_contact).powi(infected as i32)
}

/// Node 0 is joined to nodes 1..=DEGREE; everything else hangs off a chain
/// that never touches node 0.
fn probe_graph() -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..=DEGREE).map(|j| (0, j)).collect();
    edges.extend((DEGREE + 1..N - 1).map(|j| (j, j + 1)));
    Graph::from_edges(N, edges).unwrap()
}

/// State with node 0 at `(h0, c)`, `infected` of its neighbors flipped and
/// `total` flipped nodes overall.
fn probe_state(h0: bool, c: f64, infected: usize, total: usize) -> GlobalState {
    let mut s = GlobalState::new(N);
    s.h[0] = h0;
    s.c[0] = c;
    for j in 1..=infected {
        s.h[j] = true;
    }
    let mut extra = total - infected - usize::from(h0);
    for j in DEGREE + 1..N {
        if extra == 0 {
            break;
        }
        s.h[j] = true;
        extra -= 1;
    }
    assert_eq!(s.num_flipped(), total);
    s
}

/// Empirical frequency that node 0 is flipped after one step.
fn empirical(cfg: &EnvConfig, state: &GlobalState, seed: u64) -> f64 {
    let g = probe_graph();
    let actions = vec![Action::Maintain; N];
    let mut r = rng::stream(seed, Stream::EnvNoise, 0);
    let mut hits = 0usize;
    for _ in 0..DRAWS {
        let noise = TransitionNoise::draw(N, &mut r);
        hits += usize::from(env::step(cfg, &g, state, &actions, &noise).unwrap().next.h[0]);
    }
    hits as f64 / DRAWS as f64
}

fn within_four_se(p: f64, freq: f64) -> bool {
    let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
    if se == 0.0 {
        freq == p
    } else {
        (freq - p).abs() <= 4.0 * se
    }
}

fn check_grid(cfg: &EnvConfig, seed: u64) -> usize {
    let mut checked = 0;
    for (k, &c) in [0.0, 0.5, 1.0].iter().enumerate() {
        for (m, &infected) in [1usize, 2, 4].iter().enumerate() {
            for (q, &total) in [infected, 10].iter().enumerate() {
                let s = probe_state(false, c, infected, total);
                let p = flip_probability(cfg, c, infected, total as f64 / N as f64);
                let f = empirical(cfg, &s, seed + (k * 100 + m * 10 + q) as u64);
                assert!(within_four_se(p, f), "{:?} c={c} I={infected} flipped={total}: p={p} freq={f}", cfg.kind);
                checked += 1;
            }
        }
    }
    checked
}

#[test]
fn epidemic_transition_frequencies() {
    let cfg = EnvConfig::epidemic();
    assert_eq!((cfg.beta0, cfg.eta), (0.15, 0.9));
    assert!(check_grid(&cfg, 1) >= 12);
    let other = EnvConfig { beta0: 0.4, eta: 0.5, ..cfg };
    check_grid(&other, 2);
    // Infected nodes recover with probability delta whatever their surroundings.
    let s = probe_state(true, 0.3, 2, 5);
    let f = empirical(&cfg, &s, 3);
    assert!(within_four_se(1.0 - cfg.delta_recovery, f), "recovery freq {f}");
}

#[test]
fn rumor_transition_frequencies() {
    let cfg = EnvConfig::rumor();
    assert_eq!((cfg.beta0, cfg.kappa), (0.25, 3.0));
    assert!(check_grid(&cfg, 4) >= 12);
    let s = probe_state(true, 0.0, 0, 1);
    assert_eq!(empirical(&cfg, &s, 5), 1.0);
}

#[test]
fn path_end_node_infection_rate() {
    let cfg = EnvConfig::epidemic();
    let g = Graph::path(3);
    let mut s = GlobalState::new(3);
    s.h[1] = true;
    let actions = vec![Action::Maintain; 3];
    let mut r = rng::stream(6, Stream::EnvNoise, 0);
    let mut hits = 0usize;
    for _ in 0..DRAWS {
        let noise = TransitionNoise::draw(3, &mut r);
        let next = env::step(&cfg, &g, &s, &actions, &noise).unwrap().next;
        assert_eq!(next.h[0], noise.0[0] >= 0.85);
        hits += usize::from(next.h[0]);
    }
    let f = hits as f64 / DRAWS as f64;
    assert!((f - 0.15).abs() <= 3.0 * (0.15f64 * 0.85 / DRAWS as f64).sqrt(), "freq {f}");
}

fn random_state(n: usize, seed: u64) -> GlobalState {
    let mut r = rng::stream(seed, Stream::EnvReset, 0);
    let mut s = GlobalState::new(n);
    for i in 0..n {
        s.h[i] = rng::uniform(&mut r) < 0.4;
        s.c[i] = (rng::uniform(&mut r) * 11.0).floor() / 10.0;
    }
    s
}

fn random_actions(n: usize, seed: u64) -> Vec<Action> {
    let mut r = rng::stream(seed, Stream::PolicySampling, 0);
    (0..n).map(|_| Action::ALL[(rng::uniform(&mut r) * 3.0) as usize % 3]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Changing anything outside node i's closed neighborhood, with the noise
    /// fixed, never changes node i's next status. The rumor rate also reads the
    /// global aware fraction, so there the perturbation preserves the count.
    #[test]
    fn status_depends_only_on_closed_neighborhood(
        seed in any::<u64>(),
        n in 6usize..30,
        ws in any::<bool>(),
        rumor in any::<bool>(),
        node in any::<prop::sample::Index>(),
    ) {
        let spec = if ws { GraphSpec::watts_strogatz(n, 4, 0.3, seed) } else { GraphSpec::barabasi_albert(n, 2, seed) };
        let g = spec.generate().unwrap();
        let cfg = if rumor { EnvConfig::rumor() } else { EnvConfig::epidemic() };
        let i = node.index(n);
        let s = random_state(n, seed);
        let actions = random_actions(n, seed);
        let mut r = rng::stream(seed, Stream::EnvNoise, 0);
        let noise = TransitionNoise::draw(n, &mut r);

        let mut inside = vec![false; n];
        inside[i] = true;
        for &j in g.neighbors(i) {
            inside[j] = true;
        }
        let outside: Vec<usize> = (0..n).filter(|&j| !inside[j]).collect();
        let mut p = s.clone();
        let mut p_actions = actions.clone();
        if rumor && !outside.is_empty() {
            // Rotate statuses among outside nodes; the aware count is unchanged.
            let hs: Vec<bool> = outside.iter().map(|&j| s.h[j]).collect();
            for (k, &j) in outside.iter().enumerate() {
                p.h[j] = hs[(k + 1) % hs.len()];
            }
        } else if !rumor {
            for &j in &outside {
                p.h[j] = rng::uniform(&mut r) < 0.5;
            }
        }
        for &j in &outside {
            p.c[j] = (rng::uniform(&mut r) * 11.0).floor() / 10.0;
            p_actions[j] = Action::ALL[(rng::uniform(&mut r) * 3.0) as usize % 3];
        }
        let a = env::step(&cfg, &g, &s, &actions, &noise).unwrap();
        let b = env::step(&cfg, &g, &p, &p_actions, &noise).unwrap();
        prop_assert_eq!(a.next.h[i], b.next.h[i]);
    }

    #[test]
    fn trajectories_respect_quantization_bounds_and_absorption(seed in any::<u64>(), rumor in any::<bool>()) {
        let n = 15;
        let g = GraphSpec::barabasi_albert(n, 2, seed).generate().unwrap();
        let cfg = if rumor { EnvConfig::rumor() } else { EnvConfig::epidemic() };
        let mut r = rng::stream(seed, Stream::EnvNoise, 1);
        let mut s = env::reset(&cfg, &g, &mut r).unwrap();
        let r_ = &cfg.reward;
        let low = -(r_.w_ctrl * (r_.a_ctrl.exp() - 1.0) + r_.w_cat + r_.w_lin);
        for t in 0..30 {
            let actions = random_actions(n, seed ^ t);
            let noise = TransitionNoise::draw(n, &mut r);
            let tr = env::step(&cfg, &g, &s, &actions, &noise).unwrap();
            for &c in &tr.next.c {
                let k = (c / cfg.delta_c).round();
                prop_assert!((c - k * cfg.delta_c).abs() < 1e-9 && (0.0..=1.0).contains(&c));
            }
            if rumor {
                for j in 0..n {
                    prop_assert!(!s.h[j] || tr.next.h[j]);
                }
            } else {
                prop_assert!(tr.reward >= low - 1e-9 && tr.reward <= r_.eradication_bonus + 1e-9);
            }
            s = tr.next;
        }
    }

    #[test]
    fn branch_reward_difference_is_closed_form(seed in any::<u64>(), node in any::<prop::sample::Index>()) {
        let n = 12;
        let g = GraphSpec::watts_strogatz(n, 4, 0.2, seed).generate().unwrap();
        let cfg = EnvConfig::epidemic();
        let s = random_state(n, seed);
        let actions = random_actions(n, seed);
        let mut r = rng::stream(seed, Stream::EnvNoise, 2);
        let noise = TransitionNoise::draw(n, &mut r);
        let i = node.index(n);
        let tr = env::step(&cfg, &g, &s, &actions, &noise).unwrap();
        for alt in Action::ALL {
            let (next, reward) = env::counterfactual_branch(&cfg, &g, &s, &actions, &noise, i, alt).unwrap();
            prop_assert_eq!(&next.h, &tr.next.h);
            let mean = |c: &[f64]| c.iter().sum::<f64>() / n as f64;
            let a = cfg.reward.a_ctrl;
            let expected = -cfg.reward.w_ctrl * ((a * mean(&next.c)).exp() - (a * mean(&tr.next.c)).exp());
            prop_assert!((reward - tr.reward - expected).abs() < 1e-12);
            let mut joint = actions.clone();
            joint[i] = alt;
            let full = env::step(&cfg, &g, &s, &joint, &noise).unwrap();
            prop_assert_eq!(&full.next, &next);
            prop_assert!((full.reward - reward).abs() < 1e-12);
        }
    }
}
