//! Text formats: canonical edge lists, metric logs and episode traces.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use stacca_core::eval::TraceStep;
use stacca_core::graph::Graph;
use stacca_core::train::IterMetrics;

use crate::{Error, Result};

/// First line `N`, then one `i j` pair per line with `i < j`, sorted.
pub fn edge_list_string(graph: &Graph) -> String {
    let mut edges: Vec<(usize, usize)> = graph.edges().iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    edges.sort_unstable();
    let mut out = format!("{}\n", graph.num_nodes());
    for (a, b) in edges {
        out.push_str(&format!("{a} {b}\n"));
    }
    out
}

pub fn write_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, edge_list_string(graph)).map_err(|e| Error::io(path, e))
}

pub fn parse_edge_list(text: &str) -> Result<Graph> {
    let bad = |line: usize, msg: &str| Error::Artifact(format!("edge list line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing node count"))?;
    let n: usize = header.trim().parse().map_err(|_| bad(1, "node count is not an integer"))?;
    let mut edges = Vec::new();
    for (i, line) in lines {
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
            _ => return Err(bad(i + 1, "expected two node indices")),
        }
    }
    Graph::from_edges(n, edges).map_err(|e| Error::Artifact(format!("edge list: {e}")))
}

pub fn read_edge_list(path: &Path) -> Result<Graph> {
    parse_edge_list(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One row of `metrics.csv` / `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub mean_episode_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub actor_steps: usize,
    pub final_flipped_fraction: f64,
}

impl From<&IterMetrics> for MetricsRow {
    fn from(m: &IterMetrics) -> Self {
        Self {
            iter: m.iter,
            mean_episode_reward: m.mean_episode_reward,
            actor_loss: m.actor_loss,
            critic_loss: m.critic_loss,
            entropy: m.entropy,
            clip_fraction: m.clip_fraction,
            approx_kl: m.approx_kl,
            actor_steps: m.actor_steps,
            final_flipped_fraction: m.final_flipped_fraction,
        }
    }
}

/// Appends rows to a CSV file, writing the header only when the file is new.
pub struct CsvLog {
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { writer: csv::WriterBuilder::new().has_headers(fresh).from_writer(file) })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(|e| Error::Artifact(e.to_string()))?;
        self.writer.flush().map_err(|e| Error::Artifact(e.to_string()))
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Artifact(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

/// Appends one JSON object per line.
pub struct JsonLines {
    writer: BufWriter<File>,
}

impl JsonLines {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { writer: BufWriter::new(file) })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<()> {
        serde_json::to_writer(&mut self.writer, row).map_err(|e| Error::Artifact(e.to_string()))?;
        self.writer.write_all(b"\n").and_then(|_| self.writer.flush()).map_err(|e| Error::Artifact(e.to_string()))
    }
}

pub fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Trace line: statuses as a `0`/`1` string, controls, action indices and reward.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub h: String,
    pub c: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
}

impl From<&TraceStep> for TraceRow {
    fn from(s: &TraceStep) -> Self {
        Self {
            t: s.t,
            h: s.h.iter().map(|&b| if b { '1' } else { '0' }).collect(),
            c: s.c.clone(),
            actions: s.actions.iter().map(|a| a.index()).collect(),
            reward: s.reward,
        }
    }
}

pub fn write_trace(path: &Path, steps: &[TraceStep]) -> Result<()> {
    let mut log = JsonLines::open(path, false)?;
    steps.iter().try_for_each(|s| log.append(&TraceRow::from(s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stacca_core::graph::GraphSpec;

    #[test]
    fn edge_list_is_canonical_and_round_trips() {
        let g = GraphSpec::barabasi_albert(50, 1, 3).generate().unwrap();
        let text = edge_list_string(&g);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 50);
        assert_eq!(lines[0], "50");
        let pairs: Vec<(usize, usize)> = lines[1..].iter().map(|l| {
            let v: Vec<usize> = l.split(' ').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        }).collect();
        assert!(pairs.iter().all(|(a, b)| a < b));
        assert!(pairs.windows(2).all(|w| w[0] < w[1]));
        let back = parse_edge_list(&text).unwrap();
        assert_eq!(edge_list_string(&back), text);
    }

    #[test]
    fn malformed_edge_lists() {
        for bad in ["", "x\n", "3\n0\n", "3\n0 1 2\n", "3\n0 5\n", "2\n0 0\n"] {
            assert!(parse_edge_list(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn trace_rows() {
        let step = TraceStep { t: 3, h: vec![true, false], c: vec![0.5, 0.0], actions: vec![stacca_core::env::Action::Increase, stacca_core::env::Action::Decrease], reward: -1.5 };
        let row = TraceRow::from(&step);
        assert_eq!(row.h, "10");
        assert_eq!(row.actions, vec![2, 0]);
        let json = serde_json::to_string(&row).unwrap();
        assert_eq!(json, r#"{"t":3,"h":"10","c":[0.5,0.0],"actions":[2,0],"reward":-1.5}"#);
    }
}
