use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor_io::raster::{BinaryMask, Heatmap};

pub const DEFAULT_MASK_THRESHOLD: f32 = 127.5;

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn encode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads an 8-bit grayscale PNG or PGM; pixels strictly above `threshold` are foreground.
pub fn load_mask(path: impl AsRef<Path>, threshold: f32) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| decode_err(path, e))?.into_luma8();
    mask_from_gray(&img, threshold)
}

pub fn mask_from_gray(img: &GrayImage, threshold: f32) -> Result<BinaryMask> {
    let data = img.as_raw().iter().map(|&p| f32::from(p) > threshold).collect();
    BinaryMask::from_vec(img.height() as usize, img.width() as usize, data)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.to_gray_bytes(),
    )
    .expect("buffer sized from mask dims");
    img.save(path).map_err(|e| encode_err(path, e))
}

pub fn save_heatmap_png(path: impl AsRef<Path>, map: &Heatmap) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(map.width() as u32, map.height() as u32, map.to_gray_bytes())
        .expect("buffer sized from heatmap dims");
    img.save(path).map_err(|e| encode_err(path, e))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| decode_err(path, e))?.into_rgb8())
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    img.save(path).map_err(|e| encode_err(path, e))
}

/// Dimensions of an image file without fully decoding it.
pub fn image_dims(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = image::image_dimensions(path).map_err(|e| decode_err(path, e))?;
    Ok((h as usize, w as usize))
}
