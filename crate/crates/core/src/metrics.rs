//! Referring-segmentation metrics: per-sample IoU, precision at IoU
//! thresholds, overall IoU and mean IoU.
//!
//! Non-object convention: when prediction and ground truth are both empty
//! the sample scores IoU 1 and is left out of the overall-IoU sums, where it
//! would contribute 0/0.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::data_model::{AnnotationType, BinaryMask};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
    pub annotation_type: AnnotationType,
}

impl EvalRecord {
    /// Whether the record contributes to the overall-IoU sums.
    pub fn counts_toward_overall(&self) -> bool {
        self.union > 0
    }
}

pub fn sample_iou(
    sample_id: impl Into<String>,
    pred: &BinaryMask,
    gt: &BinaryMask,
    annotation_type: AnnotationType,
) -> Result<EvalRecord> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and ground truth {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += u64::from(p & g);
        union += u64::from(p | g);
    }
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    Ok(EvalRecord {
        sample_id: sample_id.into(),
        intersection: inter,
        union,
        iou,
        annotation_type,
    })
}

/// Aggregate scores as raw percentages; rounding happens only on output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// `(threshold, percentage of samples with IoU ≥ threshold)`.
    pub precision: Vec<(f64, f64)>,
    pub overall_iou: f64,
    pub mean_iou: f64,
    pub samples: usize,
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Column label for a precision threshold, e.g. `P@0.7`.
pub fn precision_label(t: f64) -> String {
    format!("P@{t}")
}

impl MetricReport {
    /// Column labels in report order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.precision.iter().map(|&(t, _)| precision_label(t)).collect();
        cols.push("oIoU".into());
        cols.push("mIoU".into());
        cols
    }

    /// Values matching [`columns`](Self::columns), rounded to 2 decimals.
    pub fn values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = self.precision.iter().map(|&(_, p)| round2(p)).collect();
        vals.push(round2(self.overall_iou));
        vals.push(round2(self.mean_iou));
        vals
    }

    pub fn precision_at(&self, t: f64) -> Option<f64> {
        self.precision
            .iter()
            .find(|&&(x, _)| (x - t).abs() < 1e-12)
            .map(|&(_, p)| p)
    }
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let cols = self.columns();
        let vals = self.values();
        let mut map = serializer.serialize_map(Some(cols.len()))?;
        for (c, v) in cols.iter().zip(vals) {
            map.serialize_entry(c, &v)?;
        }
        map.end()
    }
}

pub fn aggregate(records: &[EvalRecord], thresholds: &[f64]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput(
            "cannot aggregate an empty set of records".into(),
        ));
    }
    let n = records.len() as f64;
    let precision = thresholds
        .iter()
        .map(|&t| {
            let hits = records.iter().filter(|r| r.iou >= t).count();
            (t, 100.0 * hits as f64 / n)
        })
        .collect();
    let (inter, union) = records
        .iter()
        .filter(|r| r.counts_toward_overall())
        .fold((0u64, 0u64), |(i, u), r| (i + r.intersection, u + r.union));
    // With every sample both-empty there is nothing to get wrong.
    let overall_iou = if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    };
    let mean_iou = 100.0 * records.iter().map(|r| r.iou).sum::<f64>() / n;
    Ok(MetricReport {
        precision,
        overall_iou,
        mean_iou,
        samples: records.len(),
    })
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(header)];
    out.push("-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.extend(rows.iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Method × (metric × {val, test}) table: each metric column is followed by
/// its val and test sub-columns, e.g. `P@0.7 val`, `P@0.7 test`, ….
pub fn split_table(rows: &[(String, Option<&MetricReport>, Option<&MetricReport>)]) -> String {
    let columns = rows
        .iter()
        .find_map(|(_, v, t)| v.or(*t))
        .map(|r| r.columns())
        .unwrap_or_else(|| {
            let mut c: Vec<String> = DEFAULT_THRESHOLDS.iter().map(|&t| precision_label(t)).collect();
            c.extend(["oIoU".to_string(), "mIoU".to_string()]);
            c
        });
    let mut header = vec!["Method".to_string()];
    for c in &columns {
        header.push(format!("{c} val"));
        header.push(format!("{c} test"));
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, val, test)| {
            let vv = val.map(|r| r.values());
            let tv = test.map(|r| r.values());
            let mut row = vec![name.clone()];
            for i in 0..columns.len() {
                row.push(cell(vv.as_ref().map(|v| v[i])));
                row.push(cell(tv.as_ref().map(|v| v[i])));
            }
            row
        })
        .collect();
    render(&header, &body)
}

/// PSR/CSR on-off grid: `PSR  CSR  P@0.7  P@0.8  P@0.9  oIoU  mIoU`.
pub fn ablation_table(rows: &[(bool, bool, &MetricReport)]) -> String {
    let mark = |on: bool| if on { "yes" } else { "no" }.to_string();
    let columns = rows.first().map(|(_, _, r)| r.columns()).unwrap_or_default();
    let mut header = vec!["PSR".to_string(), "CSR".to_string()];
    header.extend(columns);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|&(psr, csr, report)| {
            let mut row = vec![mark(psr), mark(csr)];
            row.extend(report.values().into_iter().map(|v| format!("{v:.2}")));
            row
        })
        .collect();
    render(&header, &body)
}
