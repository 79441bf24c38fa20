//! Result files: tidy metric rows plus JSON side outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One `metrics.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub experiment: String,
    /// Experiment-specific coordinates, e.g. `dim=100` or `net=tiny/region=in`.
    pub cell: String,
    pub method: String,
    /// Seed, or an aggregate name such as `median`.
    pub seed: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(
        experiment: &str,
        cell: impl Into<String>,
        method: &str,
        seed: impl ToString,
        metric: &str,
        value: f64,
    ) -> Self {
        MetricRow {
            experiment: experiment.into(),
            cell: cell.into(),
            method: method.into(),
            seed: seed.to_string(),
            metric: metric.into(),
            value,
        }
    }

    fn sort_key(&self) -> (&str, &str, &str, &str, &str) {
        (&self.experiment, &self.cell, &self.method, &self.seed, &self.metric)
    }
}

/// Render rows sorted by key so that output is independent of completion order.
pub fn metrics_csv(rows: &[MetricRow], config_hash: &str) -> String {
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut out = String::from("experiment,cell,method,seed,metric,value,version,config_hash\n");
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.experiment, r.cell, r.method, r.seed, r.metric, r.value, VERSION, config_hash
        )
        .expect("writing to a String");
    }
    out
}

/// Output directory with atomic writes.
pub struct OutDir {
    root: PathBuf,
    log: String,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            log: String::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn log(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let tmp = self.root.join(format!(".{name}.tmp"));
        let dest = self.root.join(name);
        std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &dest).with_context(|| format!("moving into {}", dest.display()))?;
        Ok(())
    }

    pub fn write_json<V: Serialize>(&self, name: &str, value: &V) -> Result<()> {
        self.write(name, &serde_json::to_string_pretty(value)?)
    }

    pub fn write_metrics(&self, rows: &[MetricRow], config_hash: &str) -> Result<()> {
        self.write("metrics.csv", &metrics_csv(rows, config_hash))
    }

    pub fn finish(self) -> Result<()> {
        let log = self.log.clone();
        self.write("run.log", &log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_sorted_and_complete() {
        let rows = vec![
            MetricRow::new("v", "dim=2", "svgd", 1, "var", 0.5),
            MetricRow::new("v", "dim=1", "svgd", 1, "var", 0.25),
        ];
        let csv = metrics_csv(&rows, "abc");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("v,dim=1,svgd,1,var,0.25,"));
        assert!(lines[2].ends_with(",abc"));
    }

    #[test]
    fn writes_are_atomic_renames() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(&dir.path().join("o")).unwrap();
        out.write("a.txt", "hi").unwrap();
        assert_eq!(std::fs::read_to_string(out.path().join("a.txt")).unwrap(), "hi");
        assert!(!out.path().join(".a.txt.tmp").exists());
    }
}
