//! Training driver: run directories, metric logs, checkpoints and resume.
//!
//! A run directory holds
//!
//! ```text
//! resolved.toml          every config value, defaults included
//! graph.txt              the training graph as an edge list
//! state.toml             seed, next iteration and best reward so far
//! metrics.csv            one row per iteration (deterministic)
//! metrics.jsonl          the same rows as JSON lines
//! timing.csv             wall-clock milliseconds per iteration
//! checkpoints/init.ckpt  parameters before training
//! checkpoints/iter_NNNNN.ckpt, best.ckpt, latest.ckpt
//! checkpoints/optimizer.bin  Adam state matching latest.ckpt
//! ```
//!
//! Every random stream is a pure function of the seed and an iteration or
//! episode index, so the seed and the next iteration index are the entire
//! RNG state needed to resume.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stacca_core::train::{IterMetrics, Trainer};

use crate::checkpoint::{load_model, load_optimizers, save_model, save_optimizers};
use crate::config::ExperimentConfig;
use crate::io::{read_edge_list, write_edge_list, CsvLog, JsonLines, MetricsRow};
use crate::{Error, Result};

/// Position of a run; together with `resolved.toml` this fixes every future random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub seed: u64,
    pub next_iter: usize,
    pub best_iter: Option<usize>,
    pub best_reward: Option<f64>,
    /// Names of the derived random streams, for the record.
    pub streams: Vec<String>,
}

#[derive(Debug, Serialize)]
struct TimingRow {
    iter: usize,
    wall_ms: f64,
}

/// Resolves the output root: `STACCA_OUT` wins over the config.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os("STACCA_OUT").map(PathBuf::from).unwrap_or_else(|| cfg.output_dir.clone())
}

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn resolved(&self) -> PathBuf {
        self.dir.join("resolved.toml")
    }
    pub fn graph(&self) -> PathBuf {
        self.dir.join("graph.txt")
    }
    pub fn state(&self) -> PathBuf {
        self.dir.join("state.toml")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn metrics_jsonl(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoints().join(format!("{name}.ckpt"))
    }
    pub fn optimizer(&self) -> PathBuf {
        self.checkpoints().join("optimizer.bin")
    }
}

/// Result of a completed (or resumed) training run.
pub struct RunOutcome {
    pub paths: RunPaths,
    pub trainer: Trainer,
    /// Metrics of the iterations executed by this call.
    pub metrics: Vec<IterMetrics>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stream_names() -> Vec<String> {
    ["graph-gen", "env-reset", "env-noise", "policy-sampling", "init", "minibatch"].map(String::from).to_vec()
}

/// Starts a fresh run in `dir`, which must not already hold one.
pub fn start(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let paths = RunPaths::new(dir);
    if paths.state().exists() {
        return Err(Error::Artifact(format!("{} already contains a run; resume it or pick another run_name", dir.display())));
    }
    std::fs::create_dir_all(paths.checkpoints()).map_err(|e| Error::io(&paths.checkpoints(), e))?;
    let graph = cfg.build_graph()?;
    write_text(&paths.resolved(), &cfg.to_toml())?;
    write_edge_list(&graph, &paths.graph())?;
    let trainer = Trainer::new(cfg.env, graph, &cfg.model, cfg.train.clone())?;
    save_model(&paths.checkpoint("init"), &trainer.model, 0)?;
    let state = RunState { seed: cfg.train.seed, next_iter: 0, best_iter: None, best_reward: None, streams: stream_names() };
    save_progress(&paths, &trainer, &state)?;
    // truncate logs left by nothing but keep the file present even for zero iterations
    write_text(&paths.metrics_csv(), "")?;
    write_text(&paths.metrics_jsonl(), "")?;
    write_text(&paths.timing(), "")?;
    drive(cfg, paths, trainer, state)
}

/// Continues the run in `dir` from its latest checkpoint up to `train.iters`.
pub fn resume(dir: &Path) -> Result<RunOutcome> {
    let paths = RunPaths::new(dir);
    let cfg = ExperimentConfig::load(&paths.resolved(), &[])?;
    let state_text = std::fs::read_to_string(paths.state()).map_err(|e| Error::io(&paths.state(), e))?;
    let state: RunState = toml::from_str(&state_text).map_err(|e| Error::Artifact(format!("{}: {e}", paths.state().display())))?;
    let graph = read_edge_list(&paths.graph())?;
    let mut trainer = Trainer::new(cfg.env, graph, &cfg.model, cfg.train.clone())?;
    let (model, iter) = load_model(&paths.checkpoint("latest"))?;
    if iter != state.next_iter || model.config != cfg.model {
        return Err(Error::Artifact(format!("latest checkpoint is at iteration {iter}, state expects {}", state.next_iter)));
    }
    let (actor_opt, critic_opt) = load_optimizers(&paths.optimizer(), &model)?;
    trainer.model = model;
    trainer.actor_opt = actor_opt;
    trainer.critic_opt = critic_opt;
    trainer.iter = iter;
    drive(&cfg, paths, trainer, state)
}

fn save_progress(paths: &RunPaths, trainer: &Trainer, state: &RunState) -> Result<()> {
    save_model(&paths.checkpoint("latest"), &trainer.model, trainer.iter)?;
    save_optimizers(&paths.optimizer(), &trainer.model, &trainer.actor_opt, &trainer.critic_opt)?;
    write_text(&paths.state(), &toml::to_string(state).expect("state serializes"))
}

fn drive(cfg: &ExperimentConfig, paths: RunPaths, mut trainer: Trainer, mut state: RunState) -> Result<RunOutcome> {
    let mut csv = CsvLog::open(&paths.metrics_csv())?;
    let mut jsonl = JsonLines::open(&paths.metrics_jsonl(), true)?;
    let mut timing = CsvLog::open(&paths.timing())?;
    let mut metrics = Vec::new();
    while trainer.iter < cfg.train.iters {
        let t0 = Instant::now();
        let m = trainer.iteration()?;
        let row = MetricsRow::from(&m);
        csv.append(&row)?;
        jsonl.append(&row)?;
        timing.append(&TimingRow { iter: m.iter, wall_ms: t0.elapsed().as_secs_f64() * 1e3 })?;
        state.next_iter = trainer.iter;
        if state.best_reward.is_none_or(|b| m.mean_episode_reward > b) {
            state.best_reward = Some(m.mean_episode_reward);
            state.best_iter = Some(m.iter);
            save_model(&paths.checkpoint("best"), &trainer.model, trainer.iter)?;
        }
        if cfg.checkpoint_every > 0 && trainer.iter % cfg.checkpoint_every == 0 {
            save_model(&paths.checkpoint(&format!("iter_{:05}", trainer.iter)), &trainer.model, trainer.iter)?;
        }
        save_progress(&paths, &trainer, &state)?;
        metrics.push(m);
    }
    Ok(RunOutcome { paths, trainer, metrics })
}
