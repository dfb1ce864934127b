//! Downsampled-mask descriptor: a `k x k` area-average of the canonical mask.

use crate::code::{CodecId, CodecMeta, ShapeCode, ShapeCodec};
use crate::error::{Error, Result};
use crate::mask::{Mask, ProbMap, CANONICAL_SIZE};
use crate::resample;

#[derive(Clone, Debug)]
pub struct GridCodec {
    k: usize,
    canonical_size: usize,
    threshold: f64,
}

impl GridCodec {
    pub fn new(k: usize) -> Result<Self> {
        Self::with_frame(k, CANONICAL_SIZE)
    }

    pub fn with_frame(k: usize, canonical_size: usize) -> Result<Self> {
        if k == 0 || k > canonical_size {
            return Err(Error::invalid(format!(
                "grid size {k} must lie in 1..={canonical_size}"
            )));
        }
        Ok(Self {
            k,
            canonical_size,
            threshold: 0.5,
        })
    }

    /// Builds the codec for a descriptor length `d = k * k`.
    pub fn for_dim(d: usize, canonical_size: usize) -> Result<Self> {
        let k = (d as f64).sqrt().round() as usize;
        if k * k != d {
            return Err(Error::invalid(format!("grid descriptor size {d} is not a perfect square")));
        }
        Self::with_frame(k, canonical_size)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl ShapeCodec for GridCodec {
    fn id(&self) -> CodecId {
        CodecId::Grid
    }

    fn dim(&self) -> usize {
        self.k * self.k
    }

    fn meta(&self) -> CodecMeta {
        CodecMeta::Grid { k: self.k }
    }

    fn encode(&self, m: &Mask) -> Result<ShapeCode> {
        let canon = m.canonicalize(self.canonical_size)?;
        let small = resample::downsample_area(&canon, self.k, self.k)?;
        Ok(ShapeCode::new(small.into_data(), self.meta()))
    }

    fn decode(&self, code: &ShapeCode, out_w: usize, out_h: usize) -> Result<Mask> {
        code.expect_codec(CodecId::Grid)?;
        let k = (code.dim() as f64).sqrt().round() as usize;
        if k == 0 || k * k != code.dim() {
            return Err(Error::invalid(format!("grid code length {} is not a perfect square", code.dim())));
        }
        let p = ProbMap::from_vec_unchecked(k, k, code.values.clone())?;
        resample::upsample_bicubic(&p, out_w, out_h, self.threshold)
    }
}
