//! Seeded synthetic scenes for offline runs: a textured background, one red
//! target blob and one blue distractor blob per image. Features are a color
//! embedding plus a low-frequency position encoding, averaged per patch.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::segmenter::OracleScene;
use crate::tensor_io::{save_feature_grid, save_mask, save_rgb, BinaryMask, FeatureGrid};

pub const FEATURE_DIM: usize = 7;
const POSITION_WEIGHT: f32 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_queries: usize,
    /// Side of the square images in pixels.
    pub size: usize,
    /// Side of one feature patch in pixels; must divide `size`.
    pub patch: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_queries: 20,
            size: 128,
            patch: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.size < 32 || !self.size.is_multiple_of(self.patch) {
            return Err(Error::InvalidConfig(format!(
                "synthetic size {} must be >= 32 and divisible by patch {}",
                self.size, self.patch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: RgbImage,
    /// Target object, which is also the ground truth.
    pub target: BinaryMask,
    /// Row-major instance ids: 0 background, 1 target, 2 distractor.
    pub instances: Vec<u8>,
    pub features: FeatureGrid,
}

impl SynthScene {
    pub fn oracle_scene(&self) -> Result<OracleScene> {
        OracleScene::from_instance_map(self.target.height(), self.target.width(), &self.instances)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
}

impl Ellipse {
    fn contains(&self, x: f32, y: f32, margin: f32) -> bool {
        let dx = (x - self.cx) / (self.rx + margin);
        let dy = (y - self.cy) / (self.ry + margin);
        dx * dx + dy * dy <= 1.0
    }

    fn random(rng: &mut impl Rng, size: f32, r_lo: f32, r_hi: f32) -> Self {
        let rx = rng.gen_range(r_lo..r_hi) * size;
        let ry = rng.gen_range(r_lo..r_hi) * size;
        Self {
            cx: rng.gen_range(rx + 2.0..size - rx - 2.0),
            cy: rng.gen_range(ry + 2.0..size - ry - 2.0),
            rx,
            ry,
        }
    }

    fn overlaps(&self, other: &Self, margin: f32, size: usize) -> bool {
        (0..size * size).any(|i| {
            let (x, y) = ((i % size) as f32 + 0.5, (i / size) as f32 + 0.5);
            self.contains(x, y, margin) && other.contains(x, y, 0.0)
        })
    }
}

fn jitter(rng: &mut impl Rng, base: [i32; 3], amount: i32) -> [i32; 3] {
    base.map(|c| c + rng.gen_range(-amount..=amount))
}

fn to_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Renders one scene from the generator state.
pub fn render_scene(rng: &mut impl Rng, cfg: &SynthConfig) -> SynthScene {
    let n = cfg.size;
    let size = n as f32;
    let target = Ellipse::random(rng, size, 0.12, 0.22);
    let distractor = loop {
        let d = Ellipse::random(rng, size, 0.07, 0.12);
        if !d.overlaps(&target, 4.0, n) {
            break d;
        }
    };
    let bg = jitter(rng, [80, 120, 85], 10);
    let fg = jitter(rng, [205, 70, 60], 15);
    let other = jitter(rng, [60, 90, 200], 15);

    let mut image = RgbImage::new(n as u32, n as u32);
    let mut instances = vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let (id, base) = if target.contains(px, py, 0.0) {
                (1, fg)
            } else if distractor.contains(px, py, 0.0) {
                (2, other)
            } else {
                (0, bg)
            };
            instances[y * n + x] = id;
            let noise = rng.gen_range(-10..=10);
            image.put_pixel(x as u32, y as u32, image::Rgb(base.map(|c| to_u8(c + noise))));
        }
    }
    let target_mask = BinaryMask::from_vec(n, n, instances.iter().map(|&v| v == 1).collect())
        .expect("square canvas");
    let features = patch_features(&image, cfg.patch);
    SynthScene {
        image,
        target: target_mask,
        instances,
        features,
    }
}

/// Per-pixel color and position embedding averaged over `patch × patch` blocks.
pub fn patch_features(image: &RgbImage, patch: usize) -> FeatureGrid {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let (gh, gw) = (h / patch, w / patch);
    let mut data = vec![0f32; gh * gw * FEATURE_DIM];
    for y in 0..gh * patch {
        for x in 0..gw * patch {
            let p = image.get_pixel(x as u32, y as u32).0;
            let u = PI * (x as f32 + 0.5) / w as f32;
            let v = PI * (y as f32 + 0.5) / h as f32;
            let feat = [
                (f32::from(p[0]) - 128.0) / 128.0,
                (f32::from(p[1]) - 128.0) / 128.0,
                (f32::from(p[2]) - 128.0) / 128.0,
                POSITION_WEIGHT * u.sin(),
                POSITION_WEIGHT * u.cos(),
                POSITION_WEIGHT * v.sin(),
                POSITION_WEIGHT * v.cos(),
            ];
            let cell = ((y / patch) * gw + x / patch) * FEATURE_DIM;
            for (acc, f) in data[cell..cell + FEATURE_DIM].iter_mut().zip(feat) {
                *acc += f;
            }
        }
    }
    let norm = (patch * patch) as f32;
    data.iter_mut().for_each(|v| *v /= norm);
    FeatureGrid::new(gh, gw, FEATURE_DIM, data).expect("finite features")
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub support: SynthScene,
    /// `(image_id, scene)` in id order.
    pub queries: Vec<(String, SynthScene)>,
}

/// File locations of a dataset written by [`SynthDataset::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub support_image: PathBuf,
    pub support_mask: PathBuf,
    pub query_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub features_dir: PathBuf,
    pub scene_dir: PathBuf,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let support = render_scene(&mut rng, cfg);
    let queries = (0..cfg.num_queries)
        .map(|i| (format!("q{i:03}"), render_scene(&mut rng, cfg)))
        .collect();
    Ok(SynthDataset { support, queries })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn save_instances(path: &Path, scene: &SynthScene) -> Result<()> {
    let (h, w) = scene.target.dims();
    let img = GrayImage::from_raw(w as u32, h as u32, scene.instances.clone()).expect("sized map");
    img.save(path).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl SynthDataset {
    /// Writes `support.png`, `support_mask.png`, `queries/`, `gt/`,
    /// `features/` (one NPY per image stem) and `scenes/` (instance maps for
    /// the oracle backend) under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetLayout> {
        let dir = dir.as_ref();
        let layout = DatasetLayout {
            support_image: dir.join("support.png"),
            support_mask: dir.join("support_mask.png"),
            query_dir: dir.join("queries"),
            gt_dir: dir.join("gt"),
            features_dir: dir.join("features"),
            scene_dir: dir.join("scenes"),
        };
        for d in [&layout.query_dir, &layout.gt_dir, &layout.features_dir, &layout.scene_dir] {
            create_dir(d)?;
        }
        save_rgb(&layout.support_image, &self.support.image)?;
        save_mask(&layout.support_mask, &self.support.target)?;
        save_feature_grid(layout.features_dir.join("support.npy"), &self.support.features)?;
        save_instances(&layout.scene_dir.join("support.png"), &self.support)?;
        for (id, scene) in &self.queries {
            save_rgb(layout.query_dir.join(format!("{id}.png")), &scene.image)?;
            save_mask(layout.gt_dir.join(format!("{id}.png")), &scene.target)?;
            save_feature_grid(layout.features_dir.join(format!("{id}.npy")), &scene.features)?;
            save_instances(&layout.scene_dir.join(format!("{id}.png")), scene)?;
        }
        Ok(layout)
    }
}
