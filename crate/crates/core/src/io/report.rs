//! CSV reports, PGM error maps and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::MetricBundle;
use crate::protocol::{aggregate_results, Rho, ScenarioId, ScenarioResult, SummaryRow};

pub const PER_SCENE_FILE: &str = "per_scene.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const PER_SCENE_COLUMNS: [&str; 7] = ["scene_id", "method_id", "scenario", "psnr_db", "ssim", "sam_deg", "residual"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::param(format!("{}: {other:?}", path.display())),
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// Residuals span many decades, so they are written in scientific form.
fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

pub fn summary_columns() -> Vec<String> {
    let mut cols = vec!["method_id".to_string(), "scenes".to_string()];
    for id in ScenarioId::ALL {
        for metric in ["psnr", "ssim"] {
            for stat in ["mean", "std"] {
                cols.push(format!("{metric}_{id}_{stat}"));
            }
        }
    }
    cols.extend(["delta_deg", "delta_rec", "delta_res", "rho", "rho_flagged"].map(String::from));
    cols
}

/// Writes `per_scene.csv` and `summary.csv` into `dir`.
pub fn write_report(results: &[ScenarioResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_per_scene(results, &dir.join(PER_SCENE_FILE))?;
    write_summary(&aggregate_results(results), &dir.join(SUMMARY_FILE))
}

pub fn write_per_scene(results: &[ScenarioResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(PER_SCENE_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in results {
        for (id, m) in &r.metrics {
            w.write_record([
                r.scene_id.clone(),
                r.method_id.clone(),
                id.to_string(),
                fixed(m.psnr_db),
                fixed(m.ssim),
                opt(m.sam_deg, fixed),
                opt(m.residual, sci),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(summary_columns()).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut rec = vec![row.method_id.clone(), row.scenes.to_string()];
        for id in ScenarioId::ALL {
            match row.scenarios.get(&id) {
                Some(s) => rec.extend([s.psnr.mean, s.psnr.std, s.ssim.mean, s.ssim.std].map(fixed)),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        match &row.gaps {
            Some(g) => {
                rec.extend([g.delta_deg, g.delta_rec, g.delta_res].map(fixed));
                match g.rho {
                    Rho::Defined { value, flagged } => {
                        rec.push(fixed(value));
                        rec.push(flagged.to_string());
                    }
                    Rho::Undefined => {
                        rec.push("undef".into());
                        rec.push(String::new());
                    }
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a per-scene CSV back into results, grouped by (scene, method) in
/// order of first appearance.
pub fn read_per_scene(path: &Path) -> Result<Vec<ScenarioResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != PER_SCENE_COLUMNS {
        return Err(Error::param(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            PER_SCENE_COLUMNS,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), BTreeMap<ScenarioId, MetricBundle>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::param(format!("{} row {}: bad {what}", path.display(), line + 2));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let optional = |i: usize, what: &str| {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse::<f64>().map(Some).map_err(|_| bad(what))
            }
        };
        let key = (rec[0].to_string(), rec[1].to_string());
        let id: ScenarioId = rec[2].parse().map_err(|_| bad("scenario"))?;
        let bundle = MetricBundle {
            psnr_db: num(3, "psnr_db")?,
            ssim: num(4, "ssim")?,
            sam_deg: optional(5, "sam_deg")?,
            residual: optional(6, "residual")?,
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().insert(id, bundle);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let metrics = groups.remove(&key).unwrap_or_default();
            ScenarioResult::new(&key.0, &key.1, metrics)
        })
        .collect())
}

/// Absolute error scaled so `max_scale` maps to 255, as a binary PGM.
pub fn write_error_map(reference: ArrayView2<f64>, estimate: ArrayView2<f64>, max_scale: f64, path: &Path) -> Result<()> {
    if reference.dim() != estimate.dim() {
        return Err(Error::dim(format!("shape {:?} vs {:?}", reference.dim(), estimate.dim())));
    }
    if !(max_scale > 0.0 && max_scale.is_finite()) {
        return Err(Error::param(format!("max scale must be positive, got {max_scale}")));
    }
    let (h, w) = reference.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for (a, b) in reference.iter().zip(estimate.iter()) {
        let level = ((a - b).abs() / max_scale).min(1.0) * 255.0;
        bytes.push(level.round() as u8);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_manifest(manifest: &Value, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}
