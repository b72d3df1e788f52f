//! Promptable segmenter interface with an offline oracle backend and a
//! client for the external model bridge.

mod bridge;
mod oracle;
pub mod rle;

use std::path::Path;

use crate::error::Result;
use crate::pir::PromptSet;
use crate::tensor_io::BinaryMask;

pub use bridge::{segment_request_line, BridgeBackend, BridgeClient, BridgeSegmenter};
pub use oracle::{oracle_segment, OracleBackend, OracleScene, OracleSegmenter};

/// A segmentation session bound to one image. Output dims are fixed for the
/// session, and identical prompts give identical masks.
pub trait PromptableSegmenter: Send {
    fn output_dims(&self) -> (usize, usize);
    fn segment(&mut self, prompts: &PromptSet) -> Result<BinaryMask>;
}

/// Opens per-image sessions; shared read-only across workers.
pub trait SegmenterBackend: Sync {
    fn open(&self, image_id: &str, image_path: &Path) -> Result<Box<dyn PromptableSegmenter>>;
}
