//! Dataset evaluation: IoU, Dice and pixelwise AUC-PR, with CSV and JSON
//! writers for per-image results and their means.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{resize_bilinear, resize_nearest, BinaryMask, Heatmap};

pub use crate::pir::iou;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub iou: f64,
    pub dice: f64,
    pub auc_pr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub m_iou: f64,
    pub m_dice: f64,
    pub m_auc: Option<f64>,
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks count as a perfect match.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Area under the pixelwise precision-recall curve.
///
/// Every distinct heatmap value is a threshold (predict `h >= t`). The curve
/// starts at recall 0 with the precision of the highest threshold and the
/// area is integrated with the trapezoid rule over recall.
pub fn auc_pr(h: &Heatmap, gt: &BinaryMask) -> Result<f64> {
    if h.dims() != gt.dims() {
        return Err(Error::DimensionMismatch(format!(
            "heatmap {:?} vs mask {:?}",
            h.dims(),
            gt.dims()
        )));
    }
    let positives = gt.count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let values = h.data();
    let labels = gt.data();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        while i < order.len() && values[order[i]] == v {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(area)
}

/// Scores one prediction at ground-truth resolution. The mask is
/// nearest-resized and the heatmap bilinearly resized to the GT raster;
/// AUC-PR is omitted when the heatmap is absent or the GT is empty.
pub fn evaluate(
    image_id: &str,
    pred: &BinaryMask,
    gt: &BinaryMask,
    heatmap: Option<&Heatmap>,
) -> Result<EvalRecord> {
    let (h, w) = gt.dims();
    let pred = if pred.dims() == gt.dims() {
        pred.clone()
    } else {
        resize_nearest(pred, h, w)
    };
    let auc = match heatmap {
        Some(map) if !gt.is_empty() => Some(auc_pr(&resize_bilinear(map, h, w), gt)?),
        _ => None,
    };
    Ok(EvalRecord {
        image_id: image_id.to_string(),
        iou: iou(&pred, gt)?,
        dice: dice(&pred, gt)?,
        auc_pr: auc,
    })
}

/// Unweighted means. `m_auc` averages the records that carry an AUC and is
/// `None` when none do.
pub fn aggregate(records: &[EvalRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = records.len() as f64;
    let aucs: Vec<f64> = records.iter().filter_map(|r| r.auc_pr).collect();
    Ok(Aggregate {
        m_iou: records.iter().map(|r| r.iou).sum::<f64>() / n,
        m_dice: records.iter().map(|r| r.dice).sum::<f64>() / n,
        m_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
    })
}

/// Writes `image_id,iou,dice,auc_pr` rows; a missing AUC is an empty field.
pub fn write_results_csv(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in records {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes any serializable summary as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
