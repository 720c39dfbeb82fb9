//! Tabular report files: comma-separated with a header row, coordinates in
//! fixed decimal, metrics in shortest round-trip form. Everything written
//! here is a pure function of its inputs, so reruns produce byte-identical
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::evaluation::{EvalReport, PlaneGrid, SweepPoint, SweepRow};
use crate::experiments::InstabilityResult;
use crate::subspace::GeometryStats;
use crate::trainer::{EpochRecord, TimingRecord};
use crate::{Error, Result};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn coord(v: f64) -> String {
    format!("{v:.6}")
}

/// `alpha, accuracy, loss, ensemble_accuracy` rows of a one-dimensional sweep.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("alpha,accuracy,loss,ensemble_accuracy\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            coord(row.alpha),
            row.accuracy,
            row.loss,
            row.ensemble_accuracy
        );
    }
    write_text(path, &out)
}

/// Generic coordinate grid (simplex sweeps and the like).
pub fn write_grid_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("coord,accuracy,loss\n");
    for p in points {
        let _ = writeln!(out, "\"{}\",{},{}", p.coord, p.accuracy, p.mean_loss);
    }
    write_text(path, &out)
}

pub fn write_geometry_csv(path: &Path, stats: &GeometryStats) -> Result<()> {
    let mut out = String::from("pair_i,pair_j,l2,cos2\n");
    for p in &stats.pairs {
        let _ = writeln!(out, "{},{},{},{}", p.i, p.j, p.l2, p.cos2);
    }
    let _ = writeln!(out, "avg,,{},{}", stats.avg_l2, stats.avg_cos2);
    write_text(path, &out)
}

/// Plane grid as `x,y,loss,error` rows plus a companion file with the three
/// projected anchor points.
pub fn write_plane_csv(grid_path: &Path, points_path: &Path, grid: &PlaneGrid) -> Result<()> {
    let mut out = String::from("x,y,loss,error\n");
    for (yi, &y) in grid.ys.iter().enumerate() {
        for (xi, &x) in grid.xs.iter().enumerate() {
            let idx = yi * grid.xs.len() + xi;
            let _ = writeln!(out, "{},{},{},{}", coord(x), coord(y), grid.loss[idx], grid.error[idx]);
        }
    }
    write_text(grid_path, &out)?;

    let mut pts = String::from("point,x,y\n");
    for (name, p) in ["w1", "w2", "w3"].iter().zip(&grid.projected) {
        let _ = writeln!(pts, "{},{},{}", name, coord(p[0]), coord(p[1]));
    }
    write_text(points_path, &pts)
}

/// Alpha-grid rows followed by summary rows, one file.
pub fn write_instability_csv(path: &Path, result: &InstabilityResult) -> Result<()> {
    let mut out = String::from("kind,alpha,accuracy\n");
    for (alpha, acc) in &result.path {
        let _ = writeln!(out, "path,{},{}", coord(*alpha), acc);
    }
    for (i, acc) in result.endpoint_accuracies.iter().enumerate() {
        let _ = writeln!(out, "endpoint_{i},,{acc}");
    }
    let _ = writeln!(out, "weight_average,,{}", result.weight_average_accuracy);
    let _ = writeln!(out, "output_ensemble,,{}", result.output_ensemble_accuracy);
    if let Some(m) = &result.mixtures {
        let _ = writeln!(out, "mixture_global,,{}", m.global);
        let _ = writeln!(out, "mixture_layerwise,,{}", m.layerwise);
        let _ = writeln!(out, "mixture_per_weight,,{}", m.per_weight);
    }
    write_text(path, &out)
}

/// Summary rows of an [`EvalReport`] plus any extra `(name, value)` rows.
pub fn write_eval_csv(path: &Path, report: &EvalReport, extra: &[(String, f64)]) -> Result<()> {
    let mut out = String::from("metric,coord,value\n");
    for p in &report.grid {
        let _ = writeln!(out, "accuracy,\"{}\",{}", p.coord, p.accuracy);
        let _ = writeln!(out, "loss,\"{}\",{}", p.coord, p.mean_loss);
    }
    for (alpha, acc) in &report.ensemble_grid {
        let _ = writeln!(out, "endpoint_ensemble,{},{}", coord(*alpha), acc);
    }
    let _ = writeln!(out, "midpoint_accuracy,,{}", report.midpoint_accuracy);
    let _ = writeln!(out, "ece,,{}", report.ece);
    if let Some(tv) = report.endpoint_tv {
        let _ = writeln!(out, "endpoint_tv,,{tv}");
    }
    if let Some(g) = &report.geometry {
        let _ = writeln!(out, "avg_l2,,{}", g.avg_l2);
        let _ = writeln!(out, "avg_cos2,,{}", g.avg_cos2);
    }
    for (name, value) in extra {
        let _ = writeln!(out, "{name},,{value}");
    }
    write_text(path, &out)
}

/// One JSON record per epoch. Wall-clock timings go to a separate file so
/// the metric log is reproducible byte for byte.
pub fn write_metrics_jsonl(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::ConfigFile(format!("metric serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_timings_jsonl(path: &Path, records: &[TimingRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::ConfigFile(format!("timing serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Parses a `start:end:step` grid specification into explicit coordinates
/// (`0:1:0.1` yields 11 evenly spaced points, endpoints included).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Input(format!(
            "grid `{text}` is not of the form start:end:step"
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Input(format!("grid component `{s}` is not a number")))
    };
    let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || end < start {
        return Err(Error::Input(format!(
            "grid `{text}` needs end >= start and a positive step"
        )));
    }
    let n = ((end - start) / step).round() as usize + 1;
    if n < 2 {
        return Ok(vec![start]);
    }
    Ok((0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect())
}
