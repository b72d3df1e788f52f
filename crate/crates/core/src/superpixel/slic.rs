use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::superpixel::SuperpixelLabeling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    pub k_clusters: usize,
    pub compactness_m: f64,
    pub max_iters: usize,
    pub enforce_connectivity: bool,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self {
            k_clusters: 10,
            compactness_m: 20.0,
            max_iters: 10,
            enforce_connectivity: true,
        }
    }
}

impl SlicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_clusters == 0 {
            return Err(Error::InvalidConfig("slic.k_clusters must be >= 1".into()));
        }
        if !(self.compactness_m > 0.0) {
            return Err(Error::InvalidConfig("slic.compactness_m must be > 0".into()));
        }
        Ok(())
    }
}

/// sRGB (8-bit) to CIELAB under the D65 white point.
///
/// Linearization uses the sRGB transfer curve; XYZ uses the standard sRGB
/// primaries matrix; white point Xn = 0.95047, Yn = 1.0, Zn = 1.08883.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    fn linear(c: u8) -> f64 {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let (r, g, b) = (linear(rgb[0]), linear(rgb[1]), linear(rgb[2]));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

/// SLIC superpixels over the whole image.
///
/// Seeds sit on a regular grid with roughly `K` cells (moved to the lowest
/// Lab gradient in their 3×3 neighborhood), then local k-means assignment
/// minimizes `d_lab² + (d_xy · m / S)²` with `S = √(HW/K)`. With
/// `enforce_connectivity`, every label ends up 4-connected: the largest
/// fragment of each label keeps it and orphan fragments join the adjacent
/// region they share the longest border with.
pub fn slic_segment(image: &RgbImage, cfg: &SlicConfig) -> Result<SuperpixelLabeling> {
    cfg.validate()?;
    let (h, w) = (image.height() as usize, image.width() as usize);
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch("SLIC input image is empty".into()));
    }
    let n = h * w;
    if n <= cfg.k_clusters {
        // fewer pixels than clusters: one label per pixel
        return Ok(SuperpixelLabeling::from_raw(h, w, (0..n as u32).collect()));
    }

    let lab: Vec<[f32; 3]> = image.pixels().map(|p| srgb_to_lab(p.0)).collect();
    let step = (n as f64 / cfg.k_clusters as f64).sqrt();

    let mut centers = seed_centers(&lab, h, w, cfg.k_clusters);
    let grid_h = (cfg.k_clusters as f64 * h as f64 / w as f64).sqrt().round().max(1.0);
    let grid_w = (cfg.k_clusters as f64 / grid_h).round().max(1.0);
    let radius = step.max(h as f64 / grid_h).max(w as f64 / grid_w).ceil() as isize;
    let spatial_weight = (cfg.compactness_m / step).powi(2);

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..cfg.max_iters.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let cy = c.y.round() as isize;
            let cx = c.x.round() as isize;
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let d = distance(c, &lab[i], y, x, spatial_weight);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // pixels outside every window fall back to a global nearest-center search
        for i in 0..n {
            if labels[i] == u32::MAX || !dist[i].is_finite() {
                let (y, x) = (i / w, i % w);
                let (k, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, distance(c, &lab[i], y, x, spatial_weight)))
                    .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
                labels[i] = k as u32;
            }
        }

        let mut sums = vec![[0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += f64::from(lab[i][0]);
            s[1] += f64::from(lab[i][1]);
            s[2] += f64::from(lab[i][2]);
            s[3] += (i / w) as f64;
            s[4] += (i % w) as f64;
            s[5] += 1.0;
        }
        let mut moved = 0.0f64;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                let next = Center {
                    lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    y: s[3] / s[5],
                    x: s[4] / s[5],
                };
                moved = moved.max((next.y - c.y).abs() + (next.x - c.x).abs());
                *c = next;
            }
        }
        if moved < 1e-3 {
            break;
        }
    }

    let labels = if cfg.enforce_connectivity {
        enforce_connectivity(&labels, h, w)
    } else {
        labels
    };
    Ok(SuperpixelLabeling::from_raw(h, w, compact_labels(&labels)))
}

#[inline]
fn distance(c: &Center, lab: &[f32; 3], y: usize, x: usize, spatial_weight: f64) -> f64 {
    let dl = c.lab[0] - f64::from(lab[0]);
    let da = c.lab[1] - f64::from(lab[1]);
    let db = c.lab[2] - f64::from(lab[2]);
    let dy = c.y - y as f64;
    let dx = c.x - x as f64;
    dl * dl + da * da + db * db + (dy * dy + dx * dx) * spatial_weight
}

fn seed_centers(lab: &[[f32; 3]], h: usize, w: usize, k: usize) -> Vec<Center> {
    let grid_h = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let grid_w = ((k as f64 / grid_h as f64).round() as usize).clamp(1, w);
    let gradient = |y: usize, x: usize| -> f64 {
        if y == 0 || x == 0 || y + 1 >= h || x + 1 >= w {
            return f64::INFINITY;
        }
        let d = |a: usize, b: usize| -> f64 {
            (0..3)
                .map(|c| {
                    let v = f64::from(lab[a][c]) - f64::from(lab[b][c]);
                    v * v
                })
                .sum()
        };
        d(y * w + x + 1, y * w + x - 1) + d((y + 1) * w + x, (y - 1) * w + x)
    };

    let mut centers = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let y = (((gy as f64 + 0.5) * h as f64 / grid_h as f64) as usize).min(h - 1);
            let x = (((gx as f64 + 0.5) * w as f64 / grid_w as f64) as usize).min(w - 1);
            let (mut by, mut bx, mut best) = (y, x, gradient(y, x));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let g = gradient(ny, nx);
                    if g < best {
                        (by, bx, best) = (ny, nx, g);
                    }
                }
            }
            let p = lab[by * w + bx];
            centers.push(Center {
                lab: [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])],
                y: by as f64,
                x: bx as f64,
            });
        }
    }
    centers
}

/// Labels 4-connected runs of equal value. Returns per-pixel component ids
/// (assigned in row-major discovery order) and component sizes.
fn label_regions(labels: &[u32], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let value = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == value {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

fn enforce_connectivity(labels: &[u32], h: usize, w: usize) -> Vec<u32> {
    let (comp, sizes) = label_regions(labels, h, w);
    let n_comp = sizes.len();
    let mut comp_label = vec![0u32; n_comp];
    for (i, &c) in comp.iter().enumerate() {
        comp_label[c] = labels[i];
    }

    // largest fragment per label keeps it (first discovered wins ties)
    let mut keeper: BTreeMap<u32, usize> = BTreeMap::new();
    for c in 0..n_comp {
        keeper
            .entry(comp_label[c])
            .and_modify(|k| {
                if sizes[c] > sizes[*k] {
                    *k = c;
                }
            })
            .or_insert(c);
    }
    let mut root: Vec<Option<usize>> = vec![None; n_comp];
    for &k in keeper.values() {
        root[k] = Some(k);
    }
    if root.iter().all(Option::is_some) {
        return labels.to_vec();
    }

    // shared border length between adjacent components
    let mut border: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_comp];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let a = comp[i];
            let mut add = |j: usize| {
                let b = comp[j];
                if a != b {
                    *border[a].entry(b).or_insert(0) += 1;
                    *border[b].entry(a).or_insert(0) += 1;
                }
            };
            if x + 1 < w {
                add(i + 1);
            }
            if y + 1 < h {
                add(i + w);
            }
        }
    }

    loop {
        let mut progressed = false;
        let mut pending = false;
        for c in 0..n_comp {
            if root[c].is_some() {
                continue;
            }
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for (&nb, &len) in &border[c] {
                if let Some(r) = root[nb] {
                    *votes.entry(r).or_insert(0) += len;
                }
            }
            match votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                Some((&r, _)) => {
                    root[c] = Some(r);
                    progressed = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        assert!(progressed, "orphan fragments with no resolvable neighbor");
    }

    comp.iter()
        .map(|&c| comp_label[root[c].expect("all fragments resolved")])
        .collect()
}

/// Renumbers labels to `0..k` in row-major order of first appearance.
fn compact_labels(labels: &[u32]) -> Vec<u32> {
    let mut map: BTreeMap<u32, u32> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn is_connected_per_label(lab: &SuperpixelLabeling) -> bool {
        let (_, sizes) = label_regions(lab.labels(), lab.height(), lab.width());
        sizes.len() == lab.num_labels()
    }

    #[test]
    fn lab_reference_values() {
        let white = srgb_to_lab([255, 255, 255]);
        assert!((white[0] - 100.0).abs() < 1e-2 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let black = srgb_to_lab([0, 0, 0]);
        assert!(black.iter().all(|v| v.abs() < 1e-4));
        // pure red, commonly tabulated as (53.24, 80.09, 67.20)
        let red = srgb_to_lab([255, 0, 0]);
        assert!((red[0] - 53.24).abs() < 0.05);
        assert!((red[1] - 80.09).abs() < 0.05);
        assert!((red[2] - 67.20).abs() < 0.05);
    }

    #[test]
    fn uniform_image_splits_into_balanced_quadrants() {
        let img = RgbImage::from_pixel(100, 100, Rgb([120, 90, 60]));
        let cfg = SlicConfig {
            k_clusters: 4,
            ..SlicConfig::default()
        };
        let lab = slic_segment(&img, &cfg).unwrap();
        assert_eq!(lab.num_labels(), 4);
        for count in lab.histogram() {
            assert!((2000..=3000).contains(&count), "area {count}");
        }
    }

    #[test]
    fn two_color_halves_match_color_oracle() {
        // split off-center so the seed grid does not line up with it
        let img = RgbImage::from_fn(80, 60, |x, _| {
            if x < 33 {
                Rgb([200, 30, 40])
            } else {
                Rgb([30, 60, 200])
            }
        });
        let cfg = SlicConfig {
            k_clusters: 2,
            ..SlicConfig::default()
        };
        let lab = slic_segment(&img, &cfg).unwrap();
        // oracle: 2-means on two crisp colors converges to the color classes
        let oracle = |x: usize| u32::from(x >= 33);
        let mut agree = [0usize; 2];
        for y in 0..60 {
            for x in 0..80 {
                let l = lab.label(y, x);
                agree[0] += usize::from(l == oracle(x));
                agree[1] += usize::from(l == 1 - oracle(x));
            }
        }
        let best = agree[0].max(agree[1]) as f64 / 4800.0;
        assert!(best >= 0.95, "agreement {best}");
    }

    #[test]
    fn single_pixel_and_tiny_images() {
        let one = RgbImage::from_pixel(1, 1, Rgb([1, 2, 3]));
        let lab = slic_segment(&one, &SlicConfig::default()).unwrap();
        assert_eq!(lab.labels(), &[0]);
        let tiny = RgbImage::from_pixel(3, 2, Rgb([1, 2, 3]));
        let lab = slic_segment(&tiny, &SlicConfig::default()).unwrap();
        assert_eq!(lab.num_labels(), 6);
    }

    #[test]
    fn invalid_config_rejected() {
        let img = RgbImage::from_pixel(4, 4, Rgb([0, 0, 0]));
        let bad = SlicConfig {
            compactness_m: 0.0,
            ..SlicConfig::default()
        };
        assert!(slic_segment(&img, &bad).is_err());
    }

    const NOISE: i32 = 25;

    fn noisy_image(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(64, 64, |x, y| {
            let base = if (x / 16 + y / 21) % 2 == 0 { 150 } else { 90 };
            let mut ch = || (base + rng.gen_range(-NOISE..=NOISE)).clamp(0, 255) as u8;
            Rgb([ch(), ch(), ch()])
        })
    }

    #[test]
    fn connectivity_and_partition_on_noise() {
        let img = noisy_image(3);
        let lab = slic_segment(&img, &SlicConfig::default()).unwrap();
        assert_eq!(lab.histogram().iter().sum::<usize>(), 64 * 64);
        assert!(is_connected_per_label(&lab));
        assert!(lab.num_labels() <= 12);
    }

    #[test]
    fn deterministic() {
        let img = noisy_image(11);
        let a = slic_segment(&img, &SlicConfig::default()).unwrap();
        let b = slic_segment(&img, &SlicConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn higher_compactness_shortens_boundaries() {
        let img = noisy_image(5);
        let perim: Vec<usize> = [5.0, 20.0, 50.0]
            .iter()
            .map(|&m| {
                let cfg = SlicConfig {
                    compactness_m: m,
                    ..SlicConfig::default()
                };
                slic_segment(&img, &cfg).unwrap().boundary_length()
            })
            .collect();
        assert!(perim[0] >= perim[1] && perim[1] >= perim[2], "{perim:?}");
    }

    #[test]
    fn orphans_join_their_dominant_neighbor() {
        // label 1 has a big fragment and a 1-pixel orphan embedded in label 0
        #[rustfmt::skip]
        let raw = vec![
            0, 0, 0, 1, 1,
            0, 1, 0, 1, 1,
            0, 0, 0, 1, 1,
        ];
        let out = enforce_connectivity(&raw, 3, 5);
        assert_eq!(out[6], 0);
        assert_eq!(out.iter().filter(|&&l| l == 1).count(), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn partition_and_determinism(
                h in 4u32..24,
                w in 4u32..24,
                k in 1usize..12,
                seed in any::<u64>(),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
                let cfg = SlicConfig { k_clusters: k, ..SlicConfig::default() };
                let a = slic_segment(&img, &cfg).unwrap();
                let b = slic_segment(&img, &cfg).unwrap();
                prop_assert_eq!(a.histogram().iter().sum::<usize>(), (h * w) as usize);
                prop_assert!(a.histogram().iter().all(|&n| n > 0));
                prop_assert!(is_connected_per_label(&a));
                prop_assert_eq!(a, b);
            }
        }
    }
}
