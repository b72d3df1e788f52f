//! Reliability-weighted prototypes and the background-suppressed similarity heatmap.
//!
//! Support features are averaged per superpixel and split by the support mask
//! into foreground and background prototypes. Each foreground prototype gets
//! a weight `W = C · R`:
//!
//! * `C` (contrast) is the standardized gap between its mean similarity to
//!   support foreground and support background patches, clamped at zero.
//! * `R` (reverse purity) follows the prototype to its top-n query matches and
//!   back: the fraction of returned support patches inside the mask,
//!   rescaled so the chance level (the mask's area ratio) maps to zero.
//!
//! The heatmap is `K_fg · Σ W_k cos(f_q, fg_k) − Σ cos(f_q, bg_k)`, normalized,
//! then smoothed by row-stochastic feature-affinity diffusion.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::superpixel::SuperpixelLabeling;
use crate::tensor_io::{dot, minmax_normalize, normalized_mean, BinaryMask, FeatureGrid, Heatmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapNormalization {
    Minmax,
    SpatialSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwpmConfig {
    pub reverse_top_n: usize,
    pub diffusion_iters: usize,
    pub min_patches_per_prototype: usize,
    pub normalization: HeatmapNormalization,
    /// Multiply the weighted foreground sum by the number of foreground prototypes.
    pub scale_by_fg_count: bool,
}

impl Default for RwpmConfig {
    fn default() -> Self {
        Self {
            reverse_top_n: 16,
            diffusion_iters: 1,
            min_patches_per_prototype: 1,
            normalization: HeatmapNormalization::Minmax,
            scale_by_fg_count: true,
        }
    }
}

impl RwpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reverse_top_n == 0 {
            return Err(Error::InvalidConfig("rwpm.reverse_top_n must be >= 1".into()));
        }
        if self.min_patches_per_prototype == 0 {
            return Err(Error::InvalidConfig(
                "rwpm.min_patches_per_prototype must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeRole {
    Foreground,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prototype {
    /// L2-normalized mean of the member patch features.
    pub vector: Vec<f32>,
    pub role: PrototypeRole,
    pub cluster_id: u32,
    pub contrast: Option<f64>,
    pub purity: Option<f64>,
    /// `contrast · purity` once both are scored; background prototypes keep 1.
    pub weight: f64,
}

impl Prototype {
    pub fn is_foreground(&self) -> bool {
        self.role == PrototypeRole::Foreground
    }
}

fn check_grid_dims(f: &FeatureGrid, mask: &BinaryMask) -> Result<()> {
    if (f.height(), f.width()) != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "feature grid {}x{} vs mask {}x{}",
            f.height(),
            f.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// Builds per-superpixel prototypes. A cluster with enough foreground patches
/// yields a foreground prototype, one with enough background patches a
/// background prototype; mixed clusters yield both. Output is ordered by
/// cluster id, foreground first.
pub fn extract_prototypes(
    f_s: &FeatureGrid,
    m_s: &BinaryMask,
    labels: &SuperpixelLabeling,
    cfg: &RwpmConfig,
) -> Result<Vec<Prototype>> {
    check_grid_dims(f_s, m_s)?;
    if labels.dims() != m_s.dims() {
        return Err(Error::DimensionMismatch(format!(
            "labels {:?} vs mask {:?}",
            labels.dims(),
            m_s.dims()
        )));
    }
    if m_s.is_empty() {
        return Err(Error::EmptyForeground);
    }

    let mut members: Vec<(Vec<usize>, Vec<usize>)> = vec![Default::default(); labels.num_labels()];
    for (i, (&l, &fg)) in labels.labels().iter().zip(m_s.data()).enumerate() {
        let slot = &mut members[l as usize];
        if fg {
            slot.0.push(i);
        } else {
            slot.1.push(i);
        }
    }

    let min = cfg.min_patches_per_prototype.max(1);
    let mut protos = Vec::new();
    for (cluster, (fg, bg)) in members.iter().enumerate() {
        for (idx, role) in [(fg, PrototypeRole::Foreground), (bg, PrototypeRole::Background)] {
            if idx.len() >= min {
                protos.push(Prototype {
                    vector: normalized_mean(f_s, idx),
                    role,
                    cluster_id: cluster as u32,
                    contrast: None,
                    purity: None,
                    weight: 1.0,
                });
            }
        }
    }
    if !protos.iter().any(Prototype::is_foreground) {
        return Err(Error::EmptyForeground);
    }
    Ok(protos)
}

/// `ReLU((mean(G_fg) − mean(G_bg)) / std(G_all))` with population std.
/// Returns 0 when either side is empty or the spread is below 1e-12.
///
/// Values are measured relative to the first similarity, so adding an
/// exactly representable constant to every input gives a bit-identical result.
pub fn contrast_from_similarities(similarities: &[f64], in_mask: &[bool]) -> f64 {
    debug_assert_eq!(similarities.len(), in_mask.len());
    let Some(&pivot) = similarities.first() else {
        return 0.0;
    };
    let (mut sum_fg, mut n_fg, mut sum_bg, mut n_bg) = (0.0, 0usize, 0.0, 0usize);
    for (&g, &fg) in similarities.iter().zip(in_mask) {
        if fg {
            sum_fg += g - pivot;
            n_fg += 1;
        } else {
            sum_bg += g - pivot;
            n_bg += 1;
        }
    }
    if n_fg == 0 || n_bg == 0 {
        return 0.0;
    }
    let n = similarities.len() as f64;
    let mean_all = (sum_fg + sum_bg) / n;
    let var = similarities
        .iter()
        .map(|g| {
            let d = g - pivot - mean_all;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return 0.0;
    }
    ((sum_fg / n_fg as f64 - sum_bg / n_bg as f64) / std).max(0.0)
}

pub fn contrast_factor(proto: &Prototype, f_s: &FeatureGrid, m_s: &BinaryMask) -> Result<f64> {
    check_grid_dims(f_s, m_s)?;
    Ok(contrast_from_similarities(
        &f_s.similarities(&proto.vector),
        m_s.data(),
    ))
}

/// `ReLU((p − p0) / (1 − p0))`, or 0 when the mask covers (almost) everything.
pub fn purity_score(p: f64, p0: f64) -> f64 {
    if p0 >= 1.0 - 1e-9 {
        return 0.0;
    }
    ((p - p0) / (1.0 - p0)).max(0.0)
}

/// Indices of the `n` largest scores; ties resolved toward the lower index.
fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

pub fn reverse_purity(
    proto: &Prototype,
    f_s: &FeatureGrid,
    f_q: &FeatureGrid,
    m_s: &BinaryMask,
    n: usize,
) -> Result<f64> {
    check_grid_dims(f_s, m_s)?;
    if f_s.dim() != f_q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "support dim {} vs query dim {}",
            f_s.dim(),
            f_q.dim()
        )));
    }
    let n = n.max(1).min(f_q.num_patches()).min(f_s.num_patches());
    let forward = top_n(&f_q.similarities(&proto.vector), n);
    let proxy = normalized_mean(f_q, &forward);
    let back = top_n(&f_s.similarities(&proxy), n);
    let inside = back.iter().filter(|&&i| m_s.data()[i]).count();
    let p = inside as f64 / n as f64;
    Ok(purity_score(p, m_s.foreground_ratio()))
}

/// Fills in the support-only contrast score of every foreground prototype.
pub fn score_contrast(protos: &mut [Prototype], f_s: &FeatureGrid, m_s: &BinaryMask) -> Result<()> {
    check_grid_dims(f_s, m_s)?;
    let scores: Vec<Option<f64>> = protos
        .par_iter()
        .map(|p| {
            p.is_foreground()
                .then(|| contrast_from_similarities(&f_s.similarities(&p.vector), m_s.data()))
        })
        .collect();
    for (p, c) in protos.iter_mut().zip(scores) {
        if c.is_some() {
            p.contrast = c;
        }
    }
    Ok(())
}

/// Scores query-specific purity and sets `weight = contrast · purity` for
/// every foreground prototype. Contrast must already be scored.
pub fn score_purity(
    protos: &mut [Prototype],
    f_s: &FeatureGrid,
    f_q: &FeatureGrid,
    m_s: &BinaryMask,
    cfg: &RwpmConfig,
) -> Result<()> {
    let scores = protos
        .par_iter()
        .map(|p| {
            if p.is_foreground() {
                reverse_purity(p, f_s, f_q, m_s, cfg.reverse_top_n).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    for (p, r) in protos.iter_mut().zip(scores) {
        if let Some(r) = r {
            p.purity = Some(r);
            p.weight = p.contrast.unwrap_or(0.0) * r;
        }
    }
    Ok(())
}

/// Unnormalized per-patch score.
fn raw_scores(f_q: &FeatureGrid, protos: &[Prototype], cfg: &RwpmConfig) -> Vec<f64> {
    let fg: Vec<&Prototype> = protos.iter().filter(|p| p.is_foreground()).collect();
    let bg: Vec<&Prototype> = protos.iter().filter(|p| !p.is_foreground()).collect();
    let total_weight: f64 = fg.iter().map(|p| p.weight).sum();
    // if every weight collapsed to zero the foreground term would vanish
    let uniform = !(total_weight > 1e-12);
    let scale = if cfg.scale_by_fg_count { fg.len() as f64 } else { 1.0 };

    f_q.patches()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|patch| {
            let pos: f64 = fg
                .iter()
                .map(|p| if uniform { 1.0 } else { p.weight } * dot(patch, &p.vector))
                .sum();
            let neg: f64 = bg.iter().map(|p| dot(patch, &p.vector)).sum();
            scale * pos - neg
        })
        .collect()
}

/// Aggregates the query heatmap on the feature grid.
///
/// A constant raw map (no spread) normalizes to all zeros.
pub fn aggregate_heatmap(f_q: &FeatureGrid, protos: &[Prototype], cfg: &RwpmConfig) -> Result<Heatmap> {
    if !protos.iter().any(Prototype::is_foreground) {
        return Err(Error::NoForegroundPrototype);
    }
    if let Some(p) = protos.iter().find(|p| p.vector.len() != f_q.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "prototype dim {} vs query dim {}",
            p.vector.len(),
            f_q.dim()
        )));
    }
    let raw = raw_scores(f_q, protos, cfg);
    let values = match cfg.normalization {
        HeatmapNormalization::Minmax => minmax_normalize(&raw),
        HeatmapNormalization::SpatialSoftmax => {
            // softmax over all patches rescaled so the peak is 1
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(max - min > 1e-12) {
                vec![0.0; raw.len()]
            } else {
                raw.iter().map(|&v| (v - max).exp() as f32).collect()
            }
        }
    };
    Heatmap::from_vec(f_q.height(), f_q.width(), values)
}

/// Non-negative cosine affinity between query patches, row-normalized.
/// Rows with no positive affinity become identity rows.
fn affinity_rows(f_q: &FeatureGrid) -> Vec<Vec<f32>> {
    let patches: Vec<&[f32]> = f_q.patches().collect();
    (0..patches.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<f64> = patches.iter().map(|q| dot(patches[i], q).max(0.0)).collect();
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|a| *a /= sum);
            } else {
                row[i] = 1.0;
            }
            row.into_iter().map(|a| a as f32).collect()
        })
        .collect()
}

/// Repeats `h ← A·h` with the row-stochastic affinity `A`, then min-max
/// renormalizes. `iters == 0` returns the input unchanged.
pub fn self_diffuse(h: &Heatmap, f_q: &FeatureGrid, iters: usize) -> Result<Heatmap> {
    if h.dims() != (f_q.height(), f_q.width()) {
        return Err(Error::DimensionMismatch(format!(
            "heatmap {:?} vs feature grid {}x{}",
            h.dims(),
            f_q.height(),
            f_q.width()
        )));
    }
    if iters == 0 {
        return Ok(h.clone());
    }
    let rows = affinity_rows(f_q);
    let mut values: Vec<f64> = h.data().iter().map(|&v| f64::from(v)).collect();
    for _ in 0..iters {
        values = diffuse_step(&rows, &values);
    }
    Heatmap::from_vec(h.height(), h.width(), minmax_normalize(&values))
}

fn diffuse_step(rows: &[Vec<f32>], values: &[f64]) -> Vec<f64> {
    rows.par_iter()
        .map(|row| row.iter().zip(values).map(|(&a, &v)| f64::from(a) * v).sum())
        .collect()
}

#[derive(Serialize)]
struct ScoreRow {
    cluster_id: u32,
    role: PrototypeRole,
    contrast: Option<f64>,
    purity: Option<f64>,
    weight: f64,
}

/// Writes per-prototype `(C, R, W)` scores as CSV.
pub fn export_scores_csv(path: impl AsRef<Path>, protos: &[Prototype]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for p in protos {
        w.serialize(ScoreRow {
            cluster_id: p.cluster_id,
            role: p.role,
            contrast: p.contrast,
            purity: p.purity,
            weight: p.weight,
        })
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
