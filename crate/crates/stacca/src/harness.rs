//! Scenario files and the comparison tables written by `stacca eval`.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! name = "ba100"
//! episodes = 100
//! horizon = 100
//! policy_checkpoint = "runs/default/checkpoints/latest.ckpt"
//! baselines = ["zero_control", "full_control", "random"]
//! [graph]
//! num_nodes = 100
//! family = { kind = "barabasi_albert", m = 1 }
//! [env]
//! num_seeds = 25
//! ```
//!
//! `env` holds overrides on top of the defaults of `env.kind`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stacca_core::env::{EnvConfig, EnvKind};
use stacca_core::eval::{compare, run_episode, ComparisonRow, EvalScenario, Injection, Policy};
use stacca_core::graph::GraphSpec;
use stacca_core::models::ActorCritic;

use crate::checkpoint::load_model;
use crate::config::merge;
use crate::io::{write_csv, write_trace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    ZeroControl,
    FullControl,
    Random,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::ZeroControl, Baseline::FullControl, Baseline::Random];

    pub fn policy(self) -> Policy<'static> {
        match self {
            Baseline::ZeroControl => Policy::ZeroControl,
            Baseline::FullControl => Policy::FullControl,
            Baseline::Random => Policy::Random,
        }
    }
}

fn default_episodes() -> usize {
    100
}

fn default_baselines() -> Vec<Baseline> {
    Baseline::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub graph: GraphSpec,
    #[serde(default)]
    pub env: toml::Table,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Defaults to the environment's horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub policy_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub injection: Option<Injection>,
    #[serde(default)]
    pub init_control: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    /// Episodes per policy whose full trajectories are written as JSONL.
    #[serde(default)]
    pub trace_episodes: usize,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner().message())))
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let kind: EnvKind = match self.env.get("kind") {
            None => EnvKind::Epidemic,
            Some(v) => v.clone().try_into().map_err(|_| Error::Config(format!("env.kind: unknown environment kind {v}")))?,
        };
        let mut tree = toml::Table::try_from(EnvConfig::for_kind(kind)).expect("env serializes");
        merge(&mut tree, self.env.clone());
        serde_path_to_error::deserialize(toml::Value::Table(tree)).map_err(|e| Error::Config(format!("env.{}: {}", e.path(), e.inner().message())))
    }

    pub fn build(&self) -> Result<EvalScenario> {
        let env = self.env_config()?;
        let scenario = EvalScenario {
            graph: self.graph.generate()?,
            env,
            episodes: self.episodes,
            horizon: self.horizon.unwrap_or(env.horizon),
            deterministic: self.deterministic,
            injection: self.injection,
            init_control: self.init_control,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub scenario: String,
    pub policy: String,
    pub t: usize,
    pub mean_frac: f64,
    pub std_frac: f64,
    pub mean_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub policy: String,
    pub final_frac: f64,
    /// Mean first time with nothing flipped, over the episodes that got there; -1 if none did.
    pub erad_time: f64,
    pub eradicated_fraction: f64,
    pub reward_mean: f64,
    pub reward_stderr: f64,
}

pub fn summary_rows(rows: &[ComparisonRow]) -> Vec<SummaryRow> {
    rows.iter()
        .map(|r| SummaryRow {
            scenario: r.scenario.clone(),
            policy: r.policy.clone(),
            final_frac: r.metrics.final_frac(),
            erad_time: r.metrics.mean_eradication_time().unwrap_or(-1.0),
            eradicated_fraction: r.metrics.eradicated_fraction(),
            reward_mean: r.metrics.reward_mean(),
            reward_stderr: r.metrics.reward_stderr(),
        })
        .collect()
}

pub fn timeseries_rows(rows: &[ComparisonRow]) -> Vec<TimeseriesRow> {
    rows.iter()
        .flat_map(|r| {
            (0..r.metrics.mean_frac.len()).map(move |t| TimeseriesRow {
                scenario: r.scenario.clone(),
                policy: r.policy.clone(),
                t,
                mean_frac: r.metrics.mean_frac[t],
                std_frac: r.metrics.std_frac[t],
                mean_control: r.metrics.mean_control[t],
            })
        })
        .collect()
}

/// Evaluates every scenario against its checkpoint (if any) and baselines,
/// then writes `timeseries.csv`, `summary.csv` and any requested traces to `out`.
pub fn run_eval(files: &[ScenarioFile], out: &Path) -> Result<Vec<ComparisonRow>> {
    if files.is_empty() {
        return Err(Error::Config("no scenarios given".into()));
    }
    let built: Vec<EvalScenario> = files.iter().map(ScenarioFile::build).collect::<Result<_>>()?;
    if let Some((f, _)) = files.iter().zip(&built).find(|(_, s)| s.env.kind != built[0].env.kind) {
        return Err(Error::Config(format!("scenario `{}` mixes environment kinds with `{}`", f.name, files[0].name)));
    }
    let models: Vec<Option<ActorCritic>> = files
        .iter()
        .map(|f| f.policy_checkpoint.as_deref().map(|p| load_model(p).map(|(m, _)| m)).transpose())
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for ((file, scenario), model) in files.iter().zip(&built).zip(&models) {
        let mut policies: Vec<(String, Policy<'_>)> = Vec::new();
        if let Some(m) = model {
            policies.push(("trained".into(), Policy::Trained(m)));
        }
        policies.extend(file.baselines.iter().map(|b| (b.policy().name().to_string(), b.policy())));
        rows.extend(compare(&[(file.name.clone(), scenario.clone())], &policies)?);
        if file.trace_episodes > 0 {
            let dir = out.join("traces");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (pname, policy) in &policies {
                for e in 0..file.trace_episodes as u64 {
                    let o = run_episode(scenario, *policy, e, true)?;
                    write_trace(&dir.join(format!("{}_{pname}_ep{e}.jsonl", file.name)), &o.trace)?;
                }
            }
        }
    }
    write_csv(&out.join("timeseries.csv"), &timeseries_rows(&rows))?;
    write_csv(&out.join("summary.csv"), &summary_rows(&rows))?;
    Ok(rows)
}
