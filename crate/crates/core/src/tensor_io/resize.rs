//! Resampling between feature-grid, image and segmenter resolutions.
//!
//! Both samplers use half-pixel centers: output index `i` maps to source
//! coordinate `(i + 0.5) * in / out - 0.5`.

use crate::tensor_io::raster::{BinaryMask, Heatmap};

/// Source sample positions and weights along one axis.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn resize_bilinear(map: &Heatmap, out_h: usize, out_w: usize) -> Heatmap {
    assert!(out_h > 0 && out_w > 0, "output dims must be positive");
    let (in_h, in_w) = map.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return map.clone();
    }
    let rows = bilinear_taps(in_h, out_h);
    let cols = bilinear_taps(in_w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let v00 = f64::from(map.get(r0, c0));
            let v01 = f64::from(map.get(r0, c1));
            let v10 = f64::from(map.get(r1, c0));
            let v11 = f64::from(map.get(r1, c1));
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            out.push((top + (bottom - top) * fy) as f32);
        }
    }
    Heatmap::from_vec(out_h, out_w, out).expect("sized from output dims")
}

fn nearest_index(i: usize, in_len: usize, out_len: usize) -> usize {
    let src = ((i as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize;
    src.min(in_len - 1)
}

pub fn resize_nearest(mask: &BinaryMask, out_h: usize, out_w: usize) -> BinaryMask {
    assert!(out_h > 0 && out_w > 0, "output dims must be positive");
    let (in_h, in_w) = mask.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return mask.clone();
    }
    let cols: Vec<usize> = (0..out_w).map(|c| nearest_index(c, in_w, out_w)).collect();
    BinaryMask::from_fn(out_h, out_w, |r, c| {
        mask.get(nearest_index(r, in_h, out_h), cols[c])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let m = Heatmap::filled(3, 5, 0.7);
        for (h, w) in [(1, 1), (7, 2), (16, 16)] {
            let r = resize_bilinear(&m, h, w);
            assert!(r.data().iter().all(|v| (v - 0.7).abs() < 1e-6));
        }
    }

    #[test]
    fn row_upsample_is_monotone() {
        let m = Heatmap::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&m, 1, 4);
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn checker_2x2_to_4x4_hand_evaluated() {
        // Source coords along each axis: (i+0.5)/2-0.5 clamped -> [0, 0.25, 0.75, 1].
        // With corners [[0,1],[1,0]] the interpolant is x + y - 2xy.
        let m = Heatmap::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&m, 4, 4);
        let t: [f64; 4] = [0.0, 0.25, 0.75, 1.0];
        #[rustfmt::skip]
        let expected: [f64; 16] = [
            0.0,   0.25,  0.75,  1.0,
            0.25,  0.375, 0.625, 0.75,
            0.75,  0.625, 0.375, 0.25,
            1.0,   0.75,  0.25,  0.0,
        ];
        for y in 0..4 {
            for x in 0..4 {
                let formula = t[x] + t[y] - 2.0 * t[x] * t[y];
                assert!((expected[y * 4 + x] - formula).abs() < 1e-12);
                assert!((r.get(y, x) as f64 - expected[y * 4 + x]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identity_bilinear() {
        let m = Heatmap::from_vec(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.0]).unwrap();
        assert_eq!(resize_bilinear(&m, 2, 3), m);
    }

    #[test]
    fn nearest_cases() {
        let m = BinaryMask::from_fn(3, 4, |r, c| (r + c) % 3 == 0);
        assert_eq!(resize_nearest(&m, 3, 4), m);

        let one = BinaryMask::from_vec(1, 1, vec![true]).unwrap();
        assert_eq!(resize_nearest(&one, 5, 3).count(), 15);

        let checker = BinaryMask::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let big = resize_nearest(&checker, 4, 4);
        let expected = BinaryMask::from_fn(4, 4, |r, c| (r / 2 + c / 2) % 2 == 0);
        assert_eq!(big, expected);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn upscaling_keeps_foreground(h in 1usize..8, w in 1usize..8, fh in 1usize..4, fw in 1usize..4, bits in proptest::collection::vec(any::<bool>(), 64)) {
                let m = BinaryMask::from_fn(h, w, |r, c| bits[(r * 8 + c) % 64]);
                let up = resize_nearest(&m, h * fh + 1, w * fw + 1);
                prop_assert_eq!(m.is_empty(), up.is_empty());
            }

            #[test]
            fn bilinear_same_size_is_identity(h in 1usize..9, w in 1usize..9, vals in proptest::collection::vec(0.0f32..1.0, 64)) {
                let map = Heatmap::from_vec(h, w, vals[..h * w].to_vec()).unwrap();
                let out = resize_bilinear(&map, h, w);
                for (a, b) in out.data().iter().zip(map.data()) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }
}
