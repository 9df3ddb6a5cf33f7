//! Command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use stacca_core::graph::GraphSpec;

use crate::ablation::ablation_suite;
use crate::config::ExperimentConfig;
use crate::harness::{run_eval, ScenarioFile};
use crate::io::write_edge_list;
use crate::run::{output_root, resume, start};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "stacca", version, about = "Graph-transformer actor-critic for networked containment control")]
pub struct Cli {
    /// Upper bound on worker threads. All work currently runs on one thread,
    /// which is also what guarantees bitwise determinism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics and checkpoints under <output_dir>/<run_name>.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `--set train.iters=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue an existing run directory instead of starting a new one.
        #[arg(long, conflicts_with_all = ["config", "overrides"])]
        resume: Option<PathBuf>,
    },
    /// Evaluate checkpoints and baselines on one or more scenario files.
    Eval {
        #[arg(long = "scenario", value_name = "FILE")]
        scenarios: Vec<PathBuf>,
        /// Output directory for timeseries.csv, summary.csv and traces.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the five-configuration ablation grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Independent runs per configuration.
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
    /// Generate a graph and write it as a canonical edge list.
    Graph {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        nodes: usize,
        /// Edges per new node (Barabási-Albert).
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Lattice degree (Watts-Strogatz).
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Rewiring probability (Watts-Strogatz).
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    BarabasiAlbert,
    WattsStrogatz,
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p, overrides),
        None => ExperimentConfig::from_toml("", overrides),
    }
}

/// Runs a parsed command; messages go to stdout, errors are returned for the caller to report.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides, resume: Some(dir) } => {
            debug_assert!(config.is_none() && overrides.is_empty());
            let out = resume(&dir)?;
            println!("resumed {} for {} iterations", out.paths.dir.display(), out.metrics.len());
        }
        Command::Train { config, overrides, resume: None } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let dir = output_root(&cfg).join(&cfg.run_name);
            let out = start(&cfg, &dir)?;
            if let Some(last) = out.metrics.last() {
                println!("trained {} iterations; last mean episode reward {:.3}", out.metrics.len(), last.mean_episode_reward);
            }
            println!("run directory: {}", out.paths.dir.display());
        }
        Command::Eval { scenarios, out } => {
            if scenarios.is_empty() {
                return Err(Error::Config("eval needs at least one --scenario file".into()));
            }
            let files: Vec<ScenarioFile> = scenarios.iter().map(|p| ScenarioFile::load(p)).collect::<Result<_>>()?;
            let out = out.unwrap_or_else(|| std::env::var_os("STACCA_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from).join("eval"));
            let rows = run_eval(&files, &out)?;
            for r in crate::harness::summary_rows(&rows) {
                println!("{:<16} {:<14} final {:.4} reward {:.3} ± {:.3}", r.scenario, r.policy, r.final_frac, r.reward_mean, r.reward_stderr);
            }
            println!("tables written to {}", out.display());
        }
        Command::Ablate { config, overrides, runs } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let root = output_root(&cfg).join(&cfg.run_name).join("ablation");
            let curves = ablation_suite(&cfg, runs, &root)?;
            println!("{} curve points written to {}", curves.len(), root.join("curves.csv").display());
        }
        Command::Graph { family, nodes, m, k, p, seed, out } => {
            let spec = match family {
                Family::BarabasiAlbert => GraphSpec::barabasi_albert(nodes, m, seed),
                Family::WattsStrogatz => GraphSpec::watts_strogatz(nodes, k, p, seed),
            };
            let g = spec.generate()?;
            write_edge_list(&g, &out)?;
            println!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), out.display());
        }
    }
    Ok(())
}
