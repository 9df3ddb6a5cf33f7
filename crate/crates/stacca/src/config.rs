//! Experiment configuration: a TOML tree layered over the built-in defaults.
//!
//! Users only write the keys they change. Dotted `--set` overrides are
//! applied to the user tree before merging, and the fully materialized
//! result is what gets written next to every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stacca_core::env::{EnvConfig, EnvKind};
use stacca_core::graph::{Graph, GraphSpec};
use stacca_core::models::ModelConfig;
use stacca_core::train::TrainConfig;
use toml::{Table, Value};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub run_name: String,
    /// Save a numbered checkpoint every this many iterations; 0 saves only init, best and latest.
    pub checkpoint_every: usize,
    pub graph: GraphSpec,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Defaults for an environment kind: the 10-node BA(m=1) smoke task.
    pub fn default_for(kind: EnvKind) -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            run_name: "default".into(),
            checkpoint_every: 10,
            graph: GraphSpec::barabasi_albert(10, 1, 0),
            env: EnvConfig::for_kind(kind),
            model: ModelConfig::default(),
            train: TrainConfig { horizon: 50, iters: 60, ..TrainConfig::default() },
        }
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let kind = match user.get("env").and_then(|e| e.get("kind")) {
            None => EnvKind::Epidemic,
            Some(v) => v.clone().try_into().map_err(|_| Error::Config(format!("env.kind: unknown environment kind {v}")))?,
        };
        let mut tree = Table::try_from(Self::default_for(kind)).expect("defaults serialize");
        merge(&mut tree, user);
        let cfg: Self = serde_path_to_error::deserialize(Value::Table(tree)).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner().message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name == ".." {
            return Err(Error::Config(format!("run_name: `{}` is not a plain directory name", self.run_name)));
        }
        self.graph.validate()?;
        self.env.validate_for(self.graph.num_nodes)?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn build_graph(&self) -> Result<Graph> {
        Ok(self.graph.generate()?)
    }
}

/// `a.b.c=value`, where the value is parsed as a TOML literal and falls back to a bare string.
pub fn apply_override(tree: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_literal(raw.trim());
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut node = tree;
    for k in parents {
        let entry = node.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}").parse::<Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Deep merge of `user` into `base`. A user table carrying a `kind` tag
/// replaces the base table outright, since variant fields do not mix.
pub fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) if !u.contains_key("kind") || b.get("kind") == u.get("kind") => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default_for(EnvKind::Epidemic));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml("[train]\nseed = 4\n[env]\nkind = \"rumor\"\n", &[]).unwrap();
        assert_eq!(cfg.env, EnvConfig::rumor());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("", &["train.iters=0".into(), "run_name=abc".into(), "train.value_loss.kind=\"mse\"".into()]).unwrap();
        assert_eq!(cfg.train.iters, 0);
        assert_eq!(cfg.run_name, "abc");
        assert_eq!(cfg.train.value_loss, stacca_core::train::ValueLoss::Mse);
        let err = ExperimentConfig::from_toml("[train]\nlearning_rate = 1.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::from_toml("", &["model.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(ExperimentConfig::from_toml("", &["novalue".into()]).is_err());
    }

    #[test]
    fn tagged_tables_switch_variant() {
        let text = "[graph]\nnum_nodes = 20\n[graph.family]\nkind = \"watts_strogatz\"\nk = 4\np = 0.1\n";
        let cfg = ExperimentConfig::from_toml(text, &[]).unwrap();
        assert_eq!(cfg.graph, GraphSpec::watts_strogatz(20, 4, 0.1, 0));
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::from_toml("[train]\ngamma = 2.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let err = ExperimentConfig::from_toml("", &["graph.family.m=0".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(ExperimentConfig::from_toml("run_name = \"a/b\"", &[]).is_err());
    }
}
