//! CSV export of run progress.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::engine::{IterationRecord, RunResult};
use crate::error::{Error, Result};

/// One row of the per-iteration history table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub best_cost: f64,
    pub avg_top_cost: f64,
    pub simulations: u64,
    pub nn_queries: u64,
    pub candidates: u64,
    pub retrainings: u64,
    pub approved: usize,
    pub fallback: usize,
    pub rejected_simulated: usize,
    pub gate_exhausted: bool,
    /// Critical specs in order, joined with `;`.
    pub critical_specs: String,
}

impl From<&IterationRecord> for HistoryRow {
    fn from(r: &IterationRecord) -> Self {
        HistoryRow {
            iteration: r.iteration,
            best_cost: r.best_cost,
            avg_top_cost: r.avg_top_cost,
            simulations: r.simulations,
            nn_queries: r.nn_queries,
            candidates: r.candidates,
            retrainings: r.retrainings,
            approved: r.approved,
            fallback: r.fallback,
            rejected_simulated: r.rejected_simulated,
            gate_exhausted: r.gate_exhausted,
            critical_specs: r.critical.join(";"),
        }
    }
}

/// Totals of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    pub simulations: u64,
    pub nn_queries: u64,
    pub retrainings: u64,
    pub fallbacks: u64,
    pub eval_failures: u64,
    /// Simulations spent when the first zero-cost design appeared; empty if none did.
    pub simulations_to_solve: Option<u64>,
    pub best_cost: f64,
}

impl From<&RunResult> for SummaryRow {
    fn from(r: &RunResult) -> Self {
        SummaryRow {
            mode: r.mode.to_string(),
            seed: r.seed,
            status: r.status.as_str().to_owned(),
            iterations: r.iterations(),
            simulations: r.counters.simulations,
            nn_queries: r.counters.nn_queries,
            retrainings: r.counters.retrainings,
            fallbacks: r.counters.fallbacks,
            eval_failures: r.counters.eval_failures,
            simulations_to_solve: r.simulations_to_solve(),
            best_cost: r.best.cost,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Construction(format!("csv: {other:?}")),
    }
}

/// Writes rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV written by [`write_csv`].
pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

pub fn history_rows(records: &[IterationRecord]) -> Vec<HistoryRow> {
    records.iter().map(HistoryRow::from).collect()
}

pub fn write_history<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    write_csv(&history_rows(records), out)
}

pub fn write_summary<W: Write>(results: &[&RunResult], out: W) -> Result<()> {
    let rows: Vec<SummaryRow> = results.iter().map(|r| SummaryRow::from(*r)).collect();
    write_csv(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> HistoryRow {
        HistoryRow {
            iteration: i,
            best_cost: 0.1 / (i + 1) as f64,
            avg_top_cost: 0.3,
            simulations: 100 + 5 * i as u64,
            nn_queries: 40 * i as u64,
            candidates: 40 * i as u64,
            retrainings: i as u64,
            approved: 5,
            fallback: 0,
            rejected_simulated: 0,
            gate_exhausted: false,
            critical_specs: "gain;offset_mv".into(),
        }
    }

    #[test]
    fn history_round_trips() {
        let rows: Vec<_> = (0..4).map(row).collect();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iteration,best_cost,avg_top_cost,simulations"));
        let back: Vec<HistoryRow> = read_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn missing_solve_count_is_an_empty_cell() {
        let s = SummaryRow {
            mode: "dnn".into(),
            seed: 1,
            status: "max_iterations".into(),
            iterations: 3,
            simulations: 115,
            nn_queries: 90,
            retrainings: 3,
            fallbacks: 0,
            eval_failures: 0,
            simulations_to_solve: None,
            best_cost: 0.25,
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains(",,0.25"));
        assert_eq!(read_csv::<SummaryRow, _>(&buf[..]).unwrap(), vec![s]);
    }
}
