//! Denoising convolutional autoencoder: the learned shape embedding.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

use std::sync::Arc;

pub use gradcheck::{gradient_check, GradCheck};
pub use layers::{ConvGeom, Layer};
pub use model::{bce_loss, AeModel, Gradients, BCE_EPS};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

use crate::code::{CodecId, CodecMeta, ShapeCode, ShapeCodec};
use crate::error::{Error, Result};
use crate::mask::{Mask, ProbMap};
use crate::resample::resize_nearest;

/// Encoder half produces the code, decoder half plus a strict 0.5 threshold
/// produces the mask. Codes carry the model fingerprint and are only decoded
/// by the model that made them.
#[derive(Clone, Debug)]
pub struct LearnedCodec {
    model: Arc<AeModel>,
    fingerprint: u64,
}

impl LearnedCodec {
    pub fn new(model: AeModel) -> Self {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(model: Arc<AeModel>) -> Self {
        let fingerprint = model.fingerprint();
        Self { model, fingerprint }
    }

    pub fn model(&self) -> &AeModel {
        &self.model
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Decoder output before thresholding, at the model's frame size.
    pub fn decode_prob(&self, code: &ShapeCode) -> Result<ProbMap> {
        self.check(code)?;
        let s = self.model.input_size();
        ProbMap::from_vec_unchecked(s, s, self.model.decode_values(&code.values)?)
    }

    fn check(&self, code: &ShapeCode) -> Result<()> {
        code.expect_codec(CodecId::Learned)?;
        if let CodecMeta::Learned { fingerprint } = code.meta {
            if fingerprint != self.fingerprint {
                return Err(Error::FingerprintMismatch {
                    code: fingerprint,
                    model: self.fingerprint,
                });
            }
        }
        Ok(())
    }
}

impl ShapeCodec for LearnedCodec {
    fn id(&self) -> CodecId {
        CodecId::Learned
    }

    fn dim(&self) -> usize {
        self.model.embedding_dim()
    }

    fn meta(&self) -> CodecMeta {
        CodecMeta::Learned {
            fingerprint: self.fingerprint,
        }
    }

    fn encode(&self, m: &Mask) -> Result<ShapeCode> {
        let canon = m.canonicalize(self.model.input_size())?;
        let x: Vec<f64> = canon.data().iter().map(|&v| v as f64).collect();
        Ok(ShapeCode::new(self.model.encode_values(&x)?, self.meta()))
    }

    fn decode(&self, code: &ShapeCode, out_w: usize, out_h: usize) -> Result<Mask> {
        let m = self.decode_prob(code)?.binarize(0.5);
        if (out_w, out_h) == (m.width(), m.height()) {
            return Ok(m);
        }
        resize_nearest(&m, out_w, out_h)
    }
}
