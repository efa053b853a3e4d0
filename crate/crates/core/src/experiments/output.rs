//! Row types and writers for experiment outputs. Column order is part of the
//! schema; bump [`SCHEMA_VERSION`] when it changes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const CONCENTRATION_HEADER: &[&str] = &["divergence", "t", "beta", "radius", "q_lower", "q_upper", "median", "mean"];
pub const SIM_STEPS_HEADER: &[&str] = &["variant", "t", "quantity", "mean", "q05", "q95"];
pub const SIM_COSTS_HEADER: &[&str] = &["variant", "run", "seed", "cost", "outcome"];
pub const SIM_SUMMARY_HEADER: &[&str] = &[
    "variant",
    "runs",
    "completed",
    "infeasible",
    "solver_failures",
    "cost_mean",
    "cost_q05",
    "cost_median",
    "cost_q95",
    "first_input_norm_mean",
    "value_shortfalls",
    "theta_sum_mean",
];
pub const SIM_VIOLATIONS_HEADER: &[&str] = &["variant", "constraint", "violations", "steps", "rate"];
pub const CONSISTENCY_HEADER: &[&str] = &["divergence", "t", "value", "v_star", "v_robust", "rel_subopt", "robust_rel_subopt", "status"];
pub const TIMING_HEADER: &[&str] = &["divergence", "sample", "x0", "solve_ms", "status"];
pub const TIMING_SUMMARY_HEADER: &[&str] = &["divergence", "samples", "optimal", "avg_ms", "max_ms"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub divergence: String,
    pub t: u64,
    pub beta: f64,
    pub radius: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    pub median: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStepRow {
    pub variant: String,
    pub t: usize,
    /// `x_norm2`, `x2` or `u<j>` (1-based input index).
    pub quantity: String,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimCostRow {
    pub variant: String,
    pub run: usize,
    pub seed: u64,
    pub cost: f64,
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummaryRow {
    pub variant: String,
    pub runs: usize,
    pub completed: usize,
    pub infeasible: usize,
    pub solver_failures: usize,
    pub cost_mean: f64,
    pub cost_q05: f64,
    pub cost_median: f64,
    pub cost_q95: f64,
    pub first_input_norm_mean: f64,
    pub value_shortfalls: usize,
    pub theta_sum_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimViolationRow {
    pub variant: String,
    /// 1-based constraint row.
    pub constraint: usize,
    pub violations: usize,
    pub steps: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub divergence: String,
    pub t: u64,
    pub value: f64,
    pub v_star: f64,
    pub v_robust: f64,
    pub rel_subopt: f64,
    pub robust_rel_subopt: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub divergence: String,
    pub sample: usize,
    /// Semicolon-separated initial state.
    pub x0: String,
    pub solve_ms: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummaryRow {
    pub divergence: String,
    pub samples: usize,
    pub optimal: usize,
    pub avg_ms: f64,
    pub max_ms: f64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Writes `header` followed by `rows`; the header is written even when
/// `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `manifest.json`: schema version, command, seed and the resolved config.
pub fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: &C) -> Result<()> {
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_line(path: &Path) -> String {
        std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
    }

    #[test]
    fn header_written_for_empty_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_csv::<ConcentrationRow>(&p, CONCENTRATION_HEADER, &[]).unwrap();
        assert_eq!(first_line(&p), "divergence,t,beta,radius,q_lower,q_upper,median,mean");
    }

    #[test]
    fn row_fields_match_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let row = ConsistencyRow {
            divergence: "tv".into(),
            t: 10,
            value: 2.0,
            v_star: 1.0,
            v_robust: 3.0,
            rel_subopt: 1.0,
            robust_rel_subopt: 2.0,
            status: "Optimal".into(),
        };
        write_csv(&p, CONSISTENCY_HEADER, std::slice::from_ref(&row)).unwrap();
        let back: Vec<ConsistencyRow> = read_csv(&p).unwrap();
        assert_eq!(back, vec![row]);
    }

    #[test]
    fn jsonl_one_record_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_jsonl(&p, [1, 2, 3]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "1\n2\n3\n");
    }
}
