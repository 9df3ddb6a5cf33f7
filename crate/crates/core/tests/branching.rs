//! Counterfactual branch construction costs O(1) per branch, so one step's
//! full branch set grows linearly in the number of agents.

use std::time::Instant;

use stacca_core::env::{self, Action, EnvConfig, GlobalState, TransitionNoise};
use stacca_core::graph::GraphSpec;
use stacca_core::rng::{self, Stream};

fn branch_time(n: usize) -> f64 {
    let g = GraphSpec::barabasi_albert(n, 2, 1).generate().unwrap();
    let cfg = EnvConfig::epidemic();
    let mut r = rng::stream(7, Stream::EnvNoise, n as u64);
    let mut s = GlobalState::new(n);
    for i in 0..n {
        s.h[i] = rng::uniform(&mut r) < 0.3;
        s.c[i] = rng::uniform(&mut r);
    }
    let noise = TransitionNoise::draw(n, &mut r);
    let tr = env::step(&cfg, &g, &s, &vec![Action::Maintain; n], &noise).unwrap();
    let reps = 50_000 / n + 1;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        for i in 0..n {
            for a in Action::ALL {
                acc += std::hint::black_box(tr.branch(&cfg, &s, i, a)).reward;
            }
        }
    }
    assert!(acc.is_finite());
    t0.elapsed().as_secs_f64() / reps as f64
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[test]
fn branch_construction_scales_linearly() {
    let sizes = [10usize, 50, 250, 1250];
    let times: Vec<f64> = sizes.iter().map(|&n| (0..5).map(|_| branch_time(n)).fold(f64::INFINITY, f64::min)).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let k = slope(&xs, &ys);
    assert!((0.8..=1.2).contains(&k), "exponent {k}, times {times:?}");
}
