//! Decodable shape representations for detection pipelines that regress
//! object shapes alongside boxes and categories.
//!
//! Three codecs map a binary mask to a fixed-length vector and back, all in a
//! canonical 64x64 frame (the tight bounding box of the shape, resized):
//!
//! - [`GridCodec`]: area-downsampled `k x k` mask, bicubic upsampling to decode.
//! - [`RadialCodec`]: centre plus boundary distances along evenly spaced rays.
//! - [`LearnedCodec`]: the bottleneck of a denoising convolutional autoencoder.
//!
//! Around them sit the detection target/loss maths ([`detection`]), mask-level
//! mAP evaluation ([`eval`]), embedding-space analysis ([`analysis`]) and a
//! seeded synthetic shape generator ([`synth`]).

pub mod error;
pub mod mask;
pub mod resample;
pub mod augment;
pub mod pnm;
pub mod code;
pub mod grid;
pub mod raster;
pub mod radial;
pub mod ae;
pub mod records;
pub mod synth;
pub mod detection;
pub mod eval;
pub mod analysis;

pub use code::{CodeSet, CodecId, CodecMeta, ShapeCode, ShapeCodec};
pub use error::{Error, Result};
pub use grid::GridCodec;
pub use mask::{iou, Mask, ProbMap, CANONICAL_SIZE};
pub use radial::RadialCodec;
pub use ae::{AeModel, LearnedCodec, TrainConfig};
