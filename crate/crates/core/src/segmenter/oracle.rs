use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gas::components_8;
use crate::pir::PromptSet;
use crate::segmenter::{PromptableSegmenter, SegmenterBackend};
use crate::tensor_io::BinaryMask;

/// Canvas of pairwise-disjoint, 8-connected objects.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScene {
    height: usize,
    width: usize,
    objects: Vec<BinaryMask>,
}

impl OracleScene {
    pub fn new(height: usize, width: usize, objects: Vec<BinaryMask>) -> Result<Self> {
        let mut occupied = BinaryMask::new(height, width);
        for (k, obj) in objects.iter().enumerate() {
            if obj.dims() != (height, width) {
                return Err(Error::DimensionMismatch(format!(
                    "object {k} is {:?}, canvas is {height}x{width}",
                    obj.dims()
                )));
            }
            if components_8(obj).len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "object {k} must be a single 8-connected region"
                )));
            }
            if occupied.intersection_count(obj)? > 0 {
                return Err(Error::InvalidConfig(format!("object {k} overlaps another object")));
            }
            occupied = occupied.or(obj)?;
        }
        Ok(Self {
            height,
            width,
            objects,
        })
    }

    /// Builds a scene from an instance map: 0 is background, and every
    /// 8-connected component of each nonzero id becomes one object.
    pub fn from_instance_map(height: usize, width: usize, ids: &[u8]) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "instance map has {} values for {height}x{width}",
                ids.len()
            )));
        }
        let mut objects = Vec::new();
        let mut present: Vec<u8> = ids.iter().copied().filter(|&v| v != 0).collect();
        present.sort_unstable();
        present.dedup();
        for id in present {
            let mask = BinaryMask::from_vec(height, width, ids.iter().map(|&v| v == id).collect())?;
            for comp in components_8(&mask) {
                let mut obj = BinaryMask::new(height, width);
                for i in comp {
                    obj.set(i / width, i % width, true);
                }
                objects.push(obj);
            }
        }
        Self::new(height, width, objects)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .into_luma8();
        Self::from_instance_map(img.height() as usize, img.width() as usize, img.as_raw())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn objects(&self) -> &[BinaryMask] {
        &self.objects
    }
}

/// Union of objects hit by a positive click, minus objects hit by a
/// negative click. With a box, only objects intersecting it are eligible.
pub fn oracle_segment(scene: &OracleScene, prompts: &PromptSet) -> BinaryMask {
    let mut out = BinaryMask::new(scene.height, scene.width);
    let hit = |obj: &BinaryMask, pts: &[(usize, usize)]| {
        pts.iter()
            .any(|&(x, y)| x < scene.width && y < scene.height && obj.get(y, x))
    };
    for obj in &scene.objects {
        if let Some((x0, y0, x1, y1)) = prompts.bbox {
            let touches = (y0..=y1.min(scene.height - 1))
                .any(|r| (x0..=x1.min(scene.width - 1)).any(|c| obj.get(r, c)));
            if !touches {
                continue;
            }
        }
        if hit(obj, &prompts.positives) && !hit(obj, &prompts.negatives) {
            out = out.or(obj).expect("same canvas");
        }
    }
    out
}

pub struct OracleSegmenter {
    scene: OracleScene,
}

impl OracleSegmenter {
    pub fn new(scene: OracleScene) -> Self {
        Self { scene }
    }
}

impl PromptableSegmenter for OracleSegmenter {
    fn output_dims(&self) -> (usize, usize) {
        self.scene.dims()
    }

    fn segment(&mut self, prompts: &PromptSet) -> Result<BinaryMask> {
        Ok(oracle_segment(&self.scene, prompts))
    }
}

/// Serves oracle sessions from in-memory scenes or from instance-map PNGs
/// named `<image_id>.png` in a scene directory.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    scenes: HashMap<String, OracleScene>,
    scene_dir: Option<PathBuf>,
}

impl OracleBackend {
    pub fn from_scenes(scenes: HashMap<String, OracleScene>) -> Self {
        Self {
            scenes,
            scene_dir: None,
        }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            scenes: HashMap::new(),
            scene_dir: Some(dir.into()),
        }
    }
}

impl SegmenterBackend for OracleBackend {
    fn open(&self, image_id: &str, _image_path: &Path) -> Result<Box<dyn PromptableSegmenter>> {
        let scene = match (self.scenes.get(image_id), &self.scene_dir) {
            (Some(s), _) => s.clone(),
            (None, Some(dir)) => OracleScene::load(dir.join(format!("{image_id}.png")))?,
            (None, None) => return Err(Error::UnknownImage(image_id.to_string())),
        };
        Ok(Box::new(OracleSegmenter::new(scene)))
    }
}
