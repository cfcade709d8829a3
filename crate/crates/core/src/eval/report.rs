use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Volume, LABEL_ABSENT};
use crate::error::{contract, Error, Result};
use crate::eval::metrics::per_class_iou;

/// IoU values are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub dataset: String,
    /// Target label fraction used for finetuning (0 for unsupervised).
    pub fraction: f64,
    pub seed: u64,
    pub config_digest: String,
    pub iou_per_class: Vec<f64>,
    pub foreground_iou: f64,
}

impl EvalResult {
    /// Scores `pred` against the labels of `truth`; absent labels are skipped.
    pub fn score(pred: &Volume, truth: &Volume, num_classes: usize) -> Result<(Vec<f64>, f64)> {
        contract!(pred.shape() == truth.shape(), "prediction {:?} vs truth {:?}", pred.shape(), truth.shape());
        let p = pred.labels().ok_or_else(|| Error::Contract("prediction volume has no labels".into()))?;
        let g = truth.labels().ok_or_else(|| Error::Contract("ground-truth volume has no labels".into()))?;
        let per: Vec<f64> = per_class_iou(p, g, num_classes, LABEL_ABSENT)?.into_iter().map(|v| 100.0 * v).collect();
        let fg = per[1..].iter().sum::<f64>() / (num_classes - 1) as f64;
        Ok((per, fg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub fraction: f64,
    pub iou: f64,
}

/// Two-decimal rendering used in every CSV.
pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Method-by-dataset grid of mean foreground IoU. Rows and columns follow
/// first appearance; missing cells are empty.
pub fn table_csv(results: &[EvalResult]) -> String {
    let methods = first_seen(results.iter().map(|r| r.method.as_str()));
    let datasets = first_seen(results.iter().map(|r| r.dataset.as_str()));
    let mut out = String::from("method");
    for d in &datasets {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for m in &methods {
        out.push_str(m);
        for d in &datasets {
            let cell: Vec<f64> =
                results.iter().filter(|r| &r.method == m && &r.dataset == d).map(|r| r.foreground_iou).collect();
            out.push(',');
            if !cell.is_empty() {
                out.push_str(&fmt2(mean(&cell)));
            }
        }
        out.push('\n');
    }
    out
}

/// One row per result: identification columns, per-class IoU, foreground IoU.
pub fn results_csv(results: &[EvalResult]) -> String {
    let classes = results.iter().map(|r| r.iou_per_class.len()).max().unwrap_or(0);
    let mut out = String::from("method,dataset,fraction,seed,config_digest");
    for c in 0..classes {
        out.push_str(&format!(",iou_class{c}"));
    }
    out.push_str(",foreground_iou\n");
    for r in results {
        out.push_str(&format!("{},{},{},{},{}", r.method, r.dataset, fmt2(r.fraction), r.seed, r.config_digest));
        for c in 0..classes {
            out.push(',');
            if let Some(v) = r.iou_per_class.get(c) {
                out.push_str(&fmt2(*v));
            }
        }
        out.push_str(&format!(",{}\n", fmt2(r.foreground_iou)));
    }
    out
}

/// `fraction,iou` rows for one method, ascending fraction, points at equal
/// fractions averaged.
pub fn curve_csv(points: &[CurvePoint], method: &str) -> String {
    let mut fractions: Vec<f64> = points.iter().filter(|p| p.method == method).map(|p| p.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut out = String::from("fraction,iou\n");
    for f in fractions {
        let vals: Vec<f64> = points.iter().filter(|p| p.method == method && p.fraction == f).map(|p| p.iou).collect();
        out.push_str(&format!("{},{}\n", fmt2(f), fmt2(mean(&vals))));
    }
    out
}

/// Writes `table.csv` and one `curve_<method>.csv` per method with curve
/// points. Returns the written paths.
pub fn emit_report(results: &[EvalResult], curves: &[CurvePoint], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let table = out_dir.join("table.csv");
    fs::write(&table, table_csv(results)).map_err(|e| Error::io(&table, e))?;
    written.push(table);
    for m in first_seen(curves.iter().map(|c| c.method.as_str())) {
        let path = out_dir.join(format!("curve_{}.csv", m.to_lowercase()));
        fs::write(&path, curve_csv(curves, &m)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Parses a CSV written by this module: header plus rows of a label and
/// optional numeric cells.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<Option<f64>>)>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?.split(',').map(String::from).collect();
    let mut rows = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        let label = cells.next().unwrap_or_default().to_string();
        let values = cells
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| Error::Format(format!("bad CSV cell {c:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        contract!(values.len() + 1 == header.len(), "CSV row {label:?} has {} cells", values.len() + 1);
        rows.push((label, values));
    }
    Ok((header, rows))
}
