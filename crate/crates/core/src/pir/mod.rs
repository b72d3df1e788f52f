//! Prior-guided iterative refinement.
//!
//! The prior mask is the reference for error correction: each round the
//! segmenter's output is compared with it, and one corrective click is added
//! at the EDT center of the largest mistake (missed prior pixels first, then
//! spurious pixels outside the prior).

mod edt;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::PromptableSegmenter;
use crate::tensor_io::BinaryMask;

pub use edt::{edt_center, squared_edt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PirConfig {
    pub tau_cov: f64,
    pub tau_iou: f64,
    pub t_max: usize,
}

impl Default for PirConfig {
    fn default() -> Self {
        Self {
            tau_cov: 0.9,
            tau_iou: 0.8,
            t_max: 5,
        }
    }
}

impl PirConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_cov", self.tau_cov), ("tau_iou", self.tau_iou)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("pir.{name} must be in (0, 1]")));
            }
        }
        if self.t_max == 0 {
            return Err(Error::InvalidConfig("pir.t_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// Point and box prompts in segmenter pixel coordinates. Points are `(x, y)`;
/// the box is inclusive `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    #[serde(rename = "box")]
    pub bbox: Option<(usize, usize, usize, usize)>,
}

impl PromptSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty() && self.bbox.is_none()
    }

    /// Checks every coordinate lies on a `height × width` raster and the box is ordered.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let inside = |&(x, y): &(usize, usize)| x < width && y < height;
        if !self.positives.iter().chain(&self.negatives).all(inside) {
            return Err(Error::InvalidConfig(format!(
                "prompt point outside {height}x{width} raster"
            )));
        }
        if let Some((x0, y0, x1, y1)) = self.bbox {
            if x0 > x1 || y0 > y1 || !inside(&(x1, y1)) {
                return Err(Error::InvalidConfig(format!(
                    "bad prompt box ({x0}, {y0}, {x1}, {y1})"
                )));
            }
        }
        Ok(())
    }
}

/// `|m_t ∩ prior| / |prior|`.
pub fn coverage(m_t: &BinaryMask, m_prior: &BinaryMask) -> Result<f64> {
    let prior = m_prior.count();
    if prior == 0 {
        return Err(Error::EmptyPrior);
    }
    Ok(m_t.intersection_count(m_prior)? as f64 / prior as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks count as a perfect match.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.intersection_count(b)? as f64 / union as f64)
}

/// Tight box around the prior plus one positive click at its EDT center.
pub fn initial_prompts(m_prior: &BinaryMask) -> Result<PromptSet> {
    let bbox = m_prior.bounding_box().ok_or(Error::EmptyPrior)?;
    Ok(PromptSet {
        positives: vec![edt_center(m_prior)?],
        negatives: Vec::new(),
        bbox: Some(bbox),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Criteria unmet but the correction region was empty.
    DegenerateCorrection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PirIteration {
    /// 1-based.
    pub t: usize,
    pub prompts: PromptSet,
    pub mask: BinaryMask,
    pub cov: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PirTrace {
    pub iterations: Vec<PirIteration>,
    /// Iteration with the highest IoU against the prior (earliest on ties).
    pub best_index: usize,
    pub stop: StopReason,
}

impl PirTrace {
    pub fn best(&self) -> &PirIteration {
        &self.iterations[self.best_index]
    }
}

/// Runs the refinement loop and returns the history mask with the highest
/// IoU against the prior.
///
/// Prompts accumulate across rounds. Each round adds at most one click: a
/// positive at the EDT center of `prior ∩ ¬m_t` while coverage is below
/// `tau_cov`, otherwise a negative at the EDT center of `m_t ∩ ¬prior` while
/// IoU is below `tau_iou`. At most `t_max` segmenter calls are made.
pub fn refine(
    segmenter: &mut dyn PromptableSegmenter,
    m_prior: &BinaryMask,
    cfg: &PirConfig,
) -> Result<(BinaryMask, PirTrace)> {
    cfg.validate()?;
    if segmenter.output_dims() != m_prior.dims() {
        return Err(Error::DimensionMismatch(format!(
            "segmenter raster {:?} vs prior {:?}",
            segmenter.output_dims(),
            m_prior.dims()
        )));
    }
    let mut prompts = initial_prompts(m_prior)?;
    let mut iterations: Vec<PirIteration> = Vec::new();
    let mut stop = StopReason::MaxIterations;

    for t in 1..=cfg.t_max {
        let mask = segmenter.segment(&prompts)?;
        if mask.dims() != m_prior.dims() {
            return Err(Error::SegmenterFailure(format!(
                "segmenter returned {:?}, expected {:?}",
                mask.dims(),
                m_prior.dims()
            )));
        }
        let cov = coverage(&mask, m_prior)?;
        let overlap = iou(&mask, m_prior)?;
        iterations.push(PirIteration {
            t,
            prompts: prompts.clone(),
            mask: mask.clone(),
            cov,
            iou: overlap,
        });

        if cov >= cfg.tau_cov && overlap >= cfg.tau_iou {
            stop = StopReason::Converged;
            break;
        }
        if t == cfg.t_max {
            break;
        }
        let (region, positive) = if cov < cfg.tau_cov {
            (m_prior.and_not(&mask)?, true)
        } else {
            (mask.and_not(m_prior)?, false)
        };
        if region.is_empty() {
            stop = StopReason::DegenerateCorrection;
            break;
        }
        let click = edt_center(&region)?;
        if positive {
            prompts.positives.push(click);
        } else {
            prompts.negatives.push(click);
        }
    }

    let mut best_index = 0;
    for (i, it) in iterations.iter().enumerate() {
        if it.iou > iterations[best_index].iou {
            best_index = i;
        }
    }
    let best = iterations[best_index].mask.clone();
    Ok((
        best,
        PirTrace {
            iterations,
            best_index,
            stop,
        },
    ))
}

#[derive(Serialize)]
struct TraceIterationJson<'a> {
    t: usize,
    prompts: &'a PromptSet,
    cov: f64,
    iou: f64,
    mask_file: Option<&'a str>,
}

#[derive(Serialize)]
struct TraceJson<'a> {
    image_id: &'a str,
    best_index: usize,
    stop: StopReason,
    iterations: Vec<TraceIterationJson<'a>>,
}

/// Writes the trace as pretty JSON. `mask_files[i]` (if present) names the
/// saved mask of iteration `i`.
pub fn export_trace_json(
    path: impl AsRef<Path>,
    image_id: &str,
    trace: &PirTrace,
    mask_files: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let doc = TraceJson {
        image_id,
        best_index: trace.best_index,
        stop: trace.stop,
        iterations: trace
            .iterations
            .iter()
            .enumerate()
            .map(|(i, it)| TraceIterationJson {
                t: it.t,
                prompts: &it.prompts,
                cov: it.cov,
                iou: it.iou,
                mask_file: mask_files.get(i).map(String::as_str),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("trace serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
