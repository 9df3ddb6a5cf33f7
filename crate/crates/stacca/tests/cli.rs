//! End-to-end runs of the `stacca` binary: exit codes and on-disk artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 14] = [
    "--set", "train.iters=2",
    "--set", "train.horizon=4",
    "--set", "train.episodes_per_iter=2",
    "--set", "model.d_model=8",
    "--set", "model.d_ff=12",
    "--set", "model.actor_hidden=6",
    "--set", "model.critic_hidden=6",
];

fn stacca(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stacca")).env("STACCA_OUT", out).args(args).output().expect("spawn stacca")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn train_zero_iterations_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stacca(tmp.path(), &["train", "--set", "train.iters=0", "--set", "run_name=\"zero\""]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("zero");
    for f in ["resolved.toml", "graph.txt", "state.toml", "checkpoints/init.ckpt"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    // A second start into the same directory is refused rather than overwriting it.
    let again = stacca(tmp.path(), &["train", "--set", "train.iters=0", "--set", "run_name=\"zero\""]);
    assert_ne!(code(&again), 0);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stacca(tmp.path(), &["train", "--set", "train.bogus=1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert_eq!(code(&stacca(tmp.path(), &["eval"])), 2);
    let g = tmp.path().join("g.txt");
    let o = stacca(tmp.path(), &["graph", "--family", "barabasi-albert", "--nodes", "5", "--m", "9", "--out", g.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_checkpoint_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("s.toml");
    fs::write(
        &scenario,
        "name = \"s\"\nepisodes = 2\nhorizon = 3\npolicy_checkpoint = \"nowhere/model.ckpt\"\n\
         [graph]\nnum_nodes = 8\nseed = 1\nfamily = { kind = \"barabasi_albert\", m = 1 }\n",
    )
    .unwrap();
    let o = stacca(tmp.path(), &["eval", "--scenario", scenario.to_str().unwrap(), "--out", tmp.path().join("e").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn graph_command_writes_edge_list() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("ba.txt");
    let o = stacca(tmp.path(), &["graph", "--family", "barabasi-albert", "--nodes", "50", "--m", "1", "--seed", "3", "--out", g.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&g).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("50"));
    let edges: Vec<(usize, usize)> = lines
        .map(|l| {
            let mut it = l.split_whitespace().map(|t| t.parse().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    // A one-edge-per-node preferential-attachment graph is a spanning tree.
    assert_eq!(edges.len(), 49);
    assert!(edges.iter().all(|&(a, b)| a < b && b < 50));
}

#[test]
fn training_is_reproducible_and_evaluable() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut args = vec!["train", "--set", "train.seed=1"];
        let name_arg = format!("run_name=\"{name}\"");
        args.extend(["--set", &name_arg]);
        args.extend(TINY);
        let o = stacca(tmp.path(), &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        tmp.path().join(name)
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.csv", "metrics.jsonl", "checkpoints/latest.ckpt", "checkpoints/optimizer.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(fs::read_to_string(a.join("metrics.csv")).unwrap().lines().count(), 3);

    let scenario = tmp.path().join("s.toml");
    let ckpt = a.join("checkpoints/latest.ckpt");
    fs::write(
        &scenario,
        format!(
            "name = \"small\"\nepisodes = 3\nhorizon = 5\ntrace_episodes = 1\npolicy_checkpoint = {:?}\n\
             [graph]\nnum_nodes = 30\nseed = 2\nfamily = {{ kind = \"watts_strogatz\", k = 4, p = 0.1 }}\n",
            ckpt.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = tmp.path().join("eval");
    let o = stacca(tmp.path(), &["eval", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    // Header plus the trained policy and three baselines.
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(out.join("timeseries.csv").exists());
    assert!(out.join("traces").read_dir().unwrap().count() >= 1);
}
