//! Metrics CSV: one header, then `encode` rows per worker, one `encode_total`
//! row, and one `iteration` row per gradient-descent iteration.

use std::io::Write;

use crate::analysis::csv_err;
use crate::error::Result;
use crate::runtime::{ExperimentMetrics, Role};

pub const METRICS_HEADER: [&str; 17] = [
    "phase",
    "id",
    "role",
    "downloads_x",
    "downloads_xt",
    "encode_nanos",
    "load_nanos",
    "block_responses",
    "wall_nanos",
    "responders_x",
    "responders_xt",
    "extra_x",
    "extra_xt",
    "responders_used",
    "cancelled",
    "late_discarded",
    "objective",
];

/// Columns that hold wall-clock measurements and may differ between runs.
pub const TIMING_COLUMNS: [&str; 3] = ["encode_nanos", "load_nanos", "wall_nanos"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub phase: &'static str,
    pub id: u64,
    pub role: Option<Role>,
    pub downloads_x: Option<u64>,
    pub downloads_xt: Option<u64>,
    pub encode_nanos: Option<u64>,
    pub load_nanos: Option<u64>,
    pub block_responses: Option<u64>,
    pub wall_nanos: Option<u64>,
    pub responders: Option<[usize; 2]>,
    pub extra_workers: Option<[usize; 2]>,
    pub cancelled: Option<usize>,
    pub late_discarded: Option<usize>,
    pub objective: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        let role = self.role.map(|r| match r {
            Role::Systematic => "systematic",
            Role::Redundant => "redundant",
        });
        vec![
            self.phase.to_string(),
            self.id.to_string(),
            opt(role),
            opt(self.downloads_x),
            opt(self.downloads_xt),
            opt(self.encode_nanos),
            opt(self.load_nanos),
            opt(self.block_responses),
            opt(self.wall_nanos),
            opt(self.responders.map(|r| r[0])),
            opt(self.responders.map(|r| r[1])),
            opt(self.extra_workers.map(|e| e[0])),
            opt(self.extra_workers.map(|e| e[1])),
            opt(self.responders.map(|r| r[0] + r[1])),
            opt(self.cancelled),
            opt(self.late_discarded),
            opt(self.objective),
        ]
    }
}

pub fn metrics_rows(metrics: &ExperimentMetrics, objectives: &[f64]) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = metrics
        .workers
        .iter()
        .map(|w| MetricsRow {
            phase: "encode",
            id: w.worker_id as u64,
            role: Some(w.role),
            downloads_x: Some(w.downloads_x),
            downloads_xt: Some(w.downloads_xt),
            encode_nanos: Some(w.encode_nanos),
            load_nanos: Some(w.load_nanos),
            ..Default::default()
        })
        .collect();
    rows.push(MetricsRow {
        phase: "encode_total",
        id: metrics.workers.len() as u64,
        downloads_x: Some(metrics.workers.iter().map(|w| w.downloads_x).sum()),
        downloads_xt: Some(metrics.workers.iter().map(|w| w.downloads_xt).sum()),
        block_responses: Some(metrics.block_responses_relayed),
        wall_nanos: Some(metrics.encode_phase_nanos),
        ..Default::default()
    });
    for it in metrics.iterations() {
        rows.push(MetricsRow {
            phase: "iteration",
            id: it.iter,
            wall_nanos: Some(it.wall_nanos),
            responders: Some(it.responders),
            extra_workers: Some(it.extra_workers),
            cancelled: Some(it.cancelled),
            late_discarded: Some(it.late_discarded),
            objective: objectives.get(it.iter as usize).copied(),
            ..Default::default()
        });
    }
    rows
}

pub fn write_metrics_csv(w: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record(r.record()).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{Operand, RoundMetrics, WorkerMetrics};

    #[test]
    fn rows_cover_every_metric() {
        let metrics = ExperimentMetrics {
            workers: vec![WorkerMetrics {
                worker_id: 0,
                role: Role::Redundant,
                downloads_x: 3,
                downloads_xt: 2,
                encode_nanos: 10,
                load_nanos: 4,
            }],
            rounds: vec![
                RoundMetrics { iter: 0, operand: Operand::X, wall_nanos: 5, responders_used: 3, extra_workers: 1, cancelled: 2, late_discarded: 0 },
                RoundMetrics { iter: 0, operand: Operand::XT, wall_nanos: 6, responders_used: 2, extra_workers: 0, cancelled: 3, late_discarded: 1 },
            ],
            encode_phase_nanos: 99,
            block_responses_relayed: 5,
        };
        let rows = metrics_rows(&metrics, &[0.25]);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "encode,0,redundant,3,2,10,4,,,,,,,,,,");
        assert_eq!(lines[2], "encode_total,1,,3,2,,,5,99,,,,,,,,");
        assert_eq!(lines[3], "iteration,0,,,,,,,11,3,2,1,0,5,5,1,0.25");
    }
}
