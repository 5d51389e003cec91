//! Trace serialization: CSV rows and the SVG plots derived from them.

use std::io::Write;
use std::path::Path;

use dqlq_core::{Matrix, RunKind, RunTrace};

use crate::plot::{LinePlot, Series};

pub const CSV_HEADER: [&str; 7] = [
    "k",
    "sensor_id",
    "alpha",
    "omega",
    "norm1_G",
    "fro_err_to_Gstar",
    "consensus_diameter",
];

/// One CSV data row. `sensor_id` is 0 for the centralized learner and
/// `1..=N` for distributed sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub sensor_id: usize,
    pub alpha: f64,
    pub omega: f64,
    pub norm1: f64,
    pub fro_err: Option<f64>,
    pub consensus_diameter: Option<f64>,
}

impl TraceRow {
    fn fields(&self) -> [String; 7] {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        [
            self.k.to_string(),
            self.sensor_id.to_string(),
            self.alpha.to_string(),
            self.omega.to_string(),
            self.norm1.to_string(),
            opt(self.fro_err),
            opt(self.consensus_diameter),
        ]
    }
}

pub fn trace_rows(trace: &RunTrace) -> Vec<TraceRow> {
    let id_offset = match trace.kind {
        RunKind::Centralized => 0,
        RunKind::Distributed => 1,
    };
    trace
        .rounds
        .iter()
        .flat_map(|rec| {
            rec.sensors.iter().enumerate().map(move |(i, s)| TraceRow {
                k: rec.k,
                sensor_id: i + id_offset,
                alpha: rec.alpha,
                omega: s.omega,
                norm1: s.norm1,
                fro_err: s.fro_err,
                consensus_diameter: rec.consensus_diameter,
            })
        })
        .collect()
}

/// Rows of all traces merged by `k`, then by trace order.
pub fn merge_rows(traces: &[&RunTrace]) -> Vec<TraceRow> {
    let mut rows: Vec<(usize, TraceRow)> = traces
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| trace_rows(tr).into_iter().map(move |r| (t, r)))
        .collect();
    rows.sort_by_key(|(t, r)| (r.k, *t, r.sensor_id));
    rows.into_iter().map(|(_, r)| r).collect()
}

pub fn write_csv<W: Write>(out: W, rows: &[TraceRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> csv::Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse_opt = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap_or(f64::NAN));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        rows.push(TraceRow {
            k: rec[0].parse().unwrap_or(0),
            sensor_id: rec[1].parse().unwrap_or(0),
            alpha: num(2),
            omega: num(3),
            norm1: num(4),
            fro_err: parse_opt(&rec[5]),
            consensus_diameter: parse_opt(&rec[6]),
        });
    }
    Ok(rows)
}

fn sensor_label(id: usize) -> String {
    if id == 0 {
        "centralized".into()
    } else {
        format!("sensor {id}")
    }
}

fn series_by_sensor(rows: &[TraceRow], value: impl Fn(&TraceRow) -> Option<f64>) -> Vec<Series> {
    let mut ids: Vec<usize> = rows.iter().map(|r| r.sensor_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| Series {
            label: sensor_label(id),
            points: rows
                .iter()
                .filter(|r| r.sensor_id == id)
                .filter_map(|r| value(r).map(|v| (r.k as f64, v)))
                .collect(),
        })
        .collect()
}

/// Entrywise 1-norm of each estimate against `k`.
pub fn norm1_plot(rows: &[TraceRow], title: &str) -> LinePlot {
    LinePlot {
        title: title.to_string(),
        x_label: "k".into(),
        y_label: "‖G(k)‖₁".into(),
        log_y: false,
        series: series_by_sensor(rows, |r| Some(r.norm1)),
    }
}

/// Frobenius error to `G*` of each estimate against `k`, log scale.
pub fn fro_err_plot(rows: &[TraceRow], title: &str) -> LinePlot {
    LinePlot {
        title: title.to_string(),
        x_label: "k".into(),
        y_label: "‖G(k) − G*‖_F".into(),
        log_y: true,
        series: series_by_sensor(rows, |r| r.fro_err),
    }
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, id: usize, diam: Option<f64>) -> TraceRow {
        TraceRow {
            k,
            sensor_id: id,
            alpha: 0.5,
            omega: -0.1,
            norm1: 3.25,
            fro_err: Some(1e-7),
            consensus_diameter: diam,
        }
    }

    #[test]
    fn csv_round_trip_and_empty_fields() {
        let rows = vec![row(1, 0, None), row(1, 1, Some(0.0))];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "k,sensor_id,alpha,omega,norm1_G,fro_err_to_Gstar,consensus_diameter"
        );
        assert_eq!(lines[1], "1,0,0.5,-0.1,3.25,0.0000001,");
        assert_eq!(lines[2], "1,1,0.5,-0.1,3.25,0.0000001,0");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn plots_have_one_series_per_sensor() {
        let rows = vec![row(1, 1, Some(0.0)), row(1, 2, Some(0.0)), row(2, 1, Some(0.0))];
        let p = norm1_plot(&rows, "t");
        assert_eq!(p.series.len(), 2);
        assert_eq!(p.series[0].points, vec![(1.0, 3.25), (2.0, 3.25)]);
        assert_eq!(fro_err_plot(&rows, "t").series[1].label, "sensor 2");
    }
}
