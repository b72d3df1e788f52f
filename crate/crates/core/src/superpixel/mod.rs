//! Superpixel clustering of the support image and projection onto the feature grid.

mod slic;

use std::path::Path;

pub use slic::{slic_segment, srgb_to_lab, SlicConfig};

use crate::error::{Error, Result};
use crate::tensor_io::{npy, BinaryMask};

/// Per-pixel cluster ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabeling {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_labels: usize,
}

impl SuperpixelLabeling {
    pub(crate) fn from_raw(height: usize, width: usize, labels: Vec<u32>) -> Self {
        debug_assert_eq!(labels.len(), height * width);
        let num_labels = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Self {
            height,
            width,
            labels,
            num_labels,
        }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "labeling {height}x{width} with {} labels",
                labels.len()
            )));
        }
        Ok(Self::from_raw(height, width, labels))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// One past the largest label id.
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Pixel count per label id.
    pub fn histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_labels];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Label ids that occur at least once, ascending.
    pub fn present_labels(&self) -> Vec<u32> {
        self.histogram()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(l, _)| l as u32)
            .collect()
    }

    /// Number of 4-neighbor pixel pairs carrying different labels.
    pub fn boundary_length(&self) -> usize {
        let (h, w) = self.dims();
        let mut total = 0;
        for y in 0..h {
            for x in 0..w {
                let l = self.label(y, x);
                if x + 1 < w && self.label(y, x + 1) != l {
                    total += 1;
                }
                if y + 1 < h && self.label(y + 1, x) != l {
                    total += 1;
                }
            }
        }
        total
    }

    /// Debug export as an int32 `[H, W]` NPY.
    pub fn save_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<i32> = self.labels.iter().map(|&l| l as i32).collect();
        npy::save_i32(path, &[self.height, self.width], &data)
    }
}

/// Half-open source range covered by output cell `i` when `in_len` pixels
/// are pooled into `out_len` cells. Neighboring ranges overlap when the
/// ratio is fractional.
fn block_range(i: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
    let start = i * in_len / out_len;
    let end = ((i + 1) * in_len).div_ceil(out_len);
    start..end.max(start + 1).min(in_len)
}

/// Majority-pools a pixel labeling onto a coarser grid. Ties go to the
/// smallest label id.
pub fn pool_labels_to_grid(
    labels: &SuperpixelLabeling,
    out_h: usize,
    out_w: usize,
) -> Result<SuperpixelLabeling> {
    let (h, w) = labels.dims();
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::DimensionMismatch(format!(
            "cannot pool {h}x{w} labels onto {out_h}x{out_w}"
        )));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(labels.clone());
    }
    let mut counts = vec![0usize; labels.num_labels()];
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let rows = block_range(r, h, out_h);
        for c in 0..out_w {
            let cols = block_range(c, w, out_w);
            counts.iter_mut().for_each(|n| *n = 0);
            for y in rows.clone() {
                for x in cols.clone() {
                    counts[labels.label(y, x) as usize] += 1;
                }
            }
            let mut best = 0;
            for (l, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = l;
                }
            }
            out.push(best as u32);
        }
    }
    Ok(SuperpixelLabeling::from_raw(out_h, out_w, out))
}

/// Pools a pixel mask onto a coarser grid: a cell is foreground when at
/// least half of its covered pixels are. If that leaves a nonempty mask
/// empty, the cell(s) with the highest foreground fraction are kept.
pub fn pool_mask_to_grid(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::DimensionMismatch(format!(
            "cannot pool {h}x{w} mask onto {out_h}x{out_w}"
        )));
    }
    let mut fractions = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let rows = block_range(r, h, out_h);
        for c in 0..out_w {
            let cols = block_range(c, w, out_w);
            let total = rows.len() * cols.len();
            let fg = rows
                .clone()
                .flat_map(|y| cols.clone().map(move |x| (y, x)))
                .filter(|&(y, x)| mask.get(y, x))
                .count();
            fractions.push(fg as f64 / total as f64);
        }
    }
    let mut pooled: Vec<bool> = fractions.iter().map(|&f| f >= 0.5).collect();
    if !pooled.iter().any(|&b| b) {
        let best = fractions.iter().cloned().fold(0.0, f64::max);
        if best > 0.0 {
            for (p, &f) in pooled.iter_mut().zip(&fractions) {
                *p = f == best;
            }
        }
    }
    BinaryMask::from_vec(out_h, out_w, pooled)
}
