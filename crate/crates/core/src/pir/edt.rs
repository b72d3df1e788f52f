//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher lower
//! envelope of parabolas, one pass per axis).

use crate::error::{Error, Result};
use crate::tensor_io::BinaryMask;

const INF: f64 = 1e20;

/// 1-D squared distance transform of `f` in place.
fn transform_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola = |q: usize, f: &[f64]| f[q] + (q * q) as f64;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = (parabola(q, f) - parabola(p, f)) / (2.0 * (q as f64 - p as f64));
            if s > z[k] {
                break;
            }
            // z[0] is -inf, so this never underflows
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(&out[..n]);
}

/// Squared distance from every pixel to the nearest background pixel, with
/// everything outside the raster counted as background. Background pixels
/// get 0.
pub fn squared_edt(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.dims();
    let (ph, pw) = (h + 2, w + 2);
    let mut grid = vec![0.0f64; ph * pw];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                grid[(r + 1) * pw + c + 1] = INF;
            }
        }
    }
    let n = ph.max(pw);
    let (mut v, mut z, mut out, mut line) = (vec![0usize; n], vec![0f64; n + 1], vec![0f64; n], vec![0f64; n]);
    for c in 0..pw {
        for r in 0..ph {
            line[r] = grid[r * pw + c];
        }
        transform_1d(&mut line[..ph], &mut v, &mut z, &mut out);
        for r in 0..ph {
            grid[r * pw + c] = line[r];
        }
    }
    for r in 0..ph {
        transform_1d(&mut grid[r * pw..(r + 1) * pw], &mut v, &mut z, &mut out);
    }
    let mut result = Vec::with_capacity(h * w);
    for r in 0..h {
        result.extend_from_slice(&grid[(r + 1) * pw + 1..(r + 1) * pw + 1 + w]);
    }
    result
}

/// Pixel `(x, y)` farthest from the region's boundary; ties go to the first
/// in row-major order.
pub fn edt_center(region: &BinaryMask) -> Result<(usize, usize)> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let d = squared_edt(region);
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        if v > d[best] {
            best = i;
        }
    }
    Ok((best % region.width(), best / region.width()))
}
