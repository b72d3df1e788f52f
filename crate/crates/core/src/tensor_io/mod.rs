//! Feature grids, masks and heatmaps: in-memory types, file I/O and resampling.

mod image_io;
pub mod npy;
mod raster;
mod resize;

pub use image_io::{
    image_dims, load_mask, load_rgb, mask_from_gray, save_heatmap_png, save_mask, save_rgb,
    DEFAULT_MASK_THRESHOLD,
};
pub use npy::{load_npy_tensor, save_feature_grid, save_heatmap};
pub use raster::{BinaryMask, FeatureGrid, Heatmap};
pub(crate) use raster::{dot, minmax_normalize, normalized_mean};
pub use resize::{resize_bilinear, resize_nearest};
