//! Geometry-guided threshold selection.
//!
//! The heatmap is binarized at every threshold of a fixed grid. Each
//! candidate is cleaned (small components dropped, holes filled) and scored
//! by area-weighted solidity times a scale-consensus term; the best-scoring
//! candidate becomes the prior mask.

mod hull;
mod morphology;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{BinaryMask, Heatmap};

pub use hull::{convex_hull, pixel_hull_area, rasterized_area};
pub use morphology::{components_8, fill_holes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ARefMode {
    /// Support foreground ratio times the query raster area.
    SupportScaled,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub stride: f64,
    pub min_component_fraction: f64,
    pub a_ref_mode: ARefMode,
    pub a_ref_fixed: Option<f64>,
}

impl Default for GasConfig {
    fn default() -> Self {
        Self {
            tau_min: 0.4,
            tau_max: 0.7,
            stride: 0.05,
            min_component_fraction: 0.2,
            a_ref_mode: ARefMode::SupportScaled,
            a_ref_fixed: None,
        }
    }
}

impl GasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_max && self.tau_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gas thresholds need 0 <= tau_min < tau_max <= 1, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if !(self.stride > 0.0) {
            return Err(Error::InvalidConfig("gas.stride must be > 0".into()));
        }
        if !(self.min_component_fraction > 0.0 && self.min_component_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "gas.min_component_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// `tau_min, tau_min + stride, …` up to `tau_max` inclusive (1e-9 slack).
    pub fn thresholds(&self) -> Vec<f64> {
        let steps = ((self.tau_max - self.tau_min) / self.stride + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| self.tau_min + i as f64 * self.stride)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComponentStats {
    pub area: usize,
    pub hull_area: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasCandidate {
    pub tau: f64,
    /// Refined (filtered and filled) mask.
    pub mask: BinaryMask,
    /// Sorted by area, largest first.
    pub components: Vec<ComponentStats>,
    pub score: f64,
}

/// One mask per threshold, pixel set iff `h >= tau`.
pub fn threshold_candidates(h: &Heatmap, cfg: &GasConfig) -> Vec<BinaryMask> {
    cfg.thresholds()
        .into_iter()
        .map(|tau| binarize(h, tau))
        .collect()
}

fn binarize(h: &Heatmap, tau: f64) -> BinaryMask {
    let data = h.data().iter().map(|&v| f64::from(v) >= tau).collect();
    BinaryMask::from_vec(h.height(), h.width(), data).expect("same dims")
}

fn drop_small_components(m: &BinaryMask, fraction: f64) -> BinaryMask {
    let comps = components_8(m);
    let Some(largest) = comps.iter().map(Vec::len).max() else {
        return m.clone();
    };
    let min_area = fraction * largest as f64;
    let mut out = BinaryMask::new(m.height(), m.width());
    for comp in comps.iter().filter(|c| c.len() as f64 >= min_area) {
        for &i in comp {
            out.set(i / m.width(), i % m.width(), true);
        }
    }
    out
}

/// Drops 8-connected components smaller than `min_component_fraction` of the
/// largest, then fills holes (background not 4-connected to the border).
///
/// Filling can merge enclosed components and grow the largest one, so the
/// size filter is applied once more afterwards; that second pass never opens
/// new holes, which makes the whole operation idempotent.
pub fn refine_candidate(m: &BinaryMask, cfg: &GasConfig) -> BinaryMask {
    if m.is_empty() {
        return m.clone();
    }
    let filtered = drop_small_components(m, cfg.min_component_fraction);
    let filled = fill_holes(&filtered);
    drop_small_components(&filled, cfg.min_component_fraction)
}

fn component_stats(m: &BinaryMask) -> Vec<ComponentStats> {
    let mut stats: Vec<ComponentStats> = components_8(m)
        .iter()
        .map(|c| ComponentStats {
            area: c.len(),
            hull_area: pixel_hull_area(c, m.width()),
        })
        .collect();
    stats.sort_by_key(|c| std::cmp::Reverse(c.area));
    stats
}

fn score_from_stats(stats: &[ComponentStats], a_ref: f64) -> f64 {
    let total: usize = stats.iter().map(|c| c.area).sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let solidity: f64 = stats
        .iter()
        .map(|c| (c.area as f64 / total) * (c.area as f64 / c.hull_area as f64))
        .sum();
    let scale = if a_ref > 0.0 { (total / a_ref).min(1.0) } else { 1.0 };
    solidity * scale
}

/// Area-weighted solidity times `min(1, |M| / a_ref)`. Empty masks score 0.
pub fn score_s_geo(m: &BinaryMask, a_ref: f64) -> f64 {
    score_from_stats(&component_stats(m), a_ref)
}

/// Refines and scores the binarization at a single threshold.
pub fn candidate_at(h: &Heatmap, tau: f64, cfg: &GasConfig, a_ref: f64) -> GasCandidate {
    let mask = refine_candidate(&binarize(h, tau), cfg);
    let components = component_stats(&mask);
    let score = score_from_stats(&components, a_ref);
    GasCandidate {
        tau,
        mask,
        components,
        score,
    }
}

/// Refines and scores every threshold candidate, in ascending `tau` order.
pub fn sweep(h: &Heatmap, cfg: &GasConfig, a_ref: f64) -> Vec<GasCandidate> {
    cfg.thresholds()
        .into_par_iter()
        .map(|tau| candidate_at(h, tau, cfg, a_ref))
        .collect()
}

/// Picks the highest-scoring refined candidate; equal scores go to the lower threshold.
pub fn select_prior(h: &Heatmap, cfg: &GasConfig, a_ref: f64) -> Result<(BinaryMask, GasCandidate)> {
    cfg.validate()?;
    let best = pick_best(sweep(h, cfg, a_ref))?;
    Ok((best.mask.clone(), best))
}

pub(crate) fn pick_best(candidates: Vec<GasCandidate>) -> Result<GasCandidate> {
    let mut best: Option<GasCandidate> = None;
    for cand in candidates {
        if cand.mask.is_empty() {
            continue;
        }
        if best.as_ref().is_none_or(|b| cand.score > b.score) {
            best = Some(cand);
        }
    }
    best.ok_or(Error::AllCandidatesEmpty)
}

/// Expected lesion area on the query raster.
pub fn compute_a_ref(m_s: &BinaryMask, query_h: usize, query_w: usize, cfg: &GasConfig) -> Result<f64> {
    match cfg.a_ref_mode {
        ARefMode::Fixed => cfg.a_ref_fixed.ok_or(Error::MissingFixedValue),
        ARefMode::SupportScaled => {
            if m_s.is_empty() {
                return Err(Error::EmptyForeground);
            }
            Ok(m_s.foreground_ratio() * (query_h * query_w) as f64)
        }
    }
}

#[derive(Serialize)]
struct TableRow {
    tau: f64,
    n_components: usize,
    s_geo: f64,
}

/// Per-candidate score table as CSV (`tau,n_components,s_geo`).
pub fn export_candidates_csv(path: impl AsRef<Path>, candidates: &[GasCandidate]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for c in candidates {
        w.serialize(TableRow {
            tau: (c.tau * 1e6).round() / 1e6,
            n_components: c.components.len(),
            s_geo: c.score,
        })
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
