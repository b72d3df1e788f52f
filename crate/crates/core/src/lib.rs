mod error;
pub mod gas;
pub mod metrics;
pub mod pipeline;
pub mod pir;
pub mod rwpm;
pub mod segmenter;
pub mod superpixel;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
