use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvGeom, Layer};
use crate::code::{CodecMeta, ShapeCode};
use crate::error::{Error, Result};
use crate::mask::{Mask, ProbMap};

pub const STAE_MAGIC: &[u8; 4] = b"STAE";
pub const STAE_VERSION: u32 = 1;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// A sequential convolutional autoencoder over square single-channel inputs.
///
/// The encoder ends at the first fully-connected layer whose output length is
/// the embedding dimension; everything after it is the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    layers: Vec<Layer>,
    input_size: usize,
    embedding_dim: usize,
    split: usize,
}

/// Per-layer parameter gradients; empty vectors for parameter-free layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &AeModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| match l.params() {
                    Some((w, b)) => (vec![0.0; w.len()], vec![0.0; b.len()]),
                    None => (Vec::new(), Vec::new()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the model output.
    acts: Vec<Vec<f64>>,
    aux: Vec<Vec<f64>>,
}

impl AeModel {
    /// Assembles a model and checks that layer shapes chain.
    pub fn from_layers(layers: Vec<Layer>, embedding_dim: usize) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("model has no layers"))?;
        let input_size = match first {
            Layer::Conv { geom, .. } if geom.in_c == 1 => geom.in_size,
            _ => return Err(Error::invalid("first layer must be a single-channel convolution")),
        };
        for pair in layers.windows(2) {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::dims(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].output_len(),
                    pair[1].input_len()
                )));
            }
        }
        for l in &layers {
            if let Layer::Conv { geom, .. } = l {
                if geom.in_size + 2 * geom.padding < geom.kernel || geom.stride == 0 {
                    return Err(Error::invalid("degenerate convolution geometry"));
                }
            }
            if let Layer::ConvTranspose { geom, .. } = l {
                if geom.stride == 0 {
                    return Err(Error::invalid("degenerate convolution geometry"));
                }
            }
        }
        let last = layers.last().expect("non-empty");
        if !matches!(last, Layer::Sigmoid { .. }) || last.output_len() != input_size * input_size {
            return Err(Error::invalid("model must end in a sigmoid over the input frame"));
        }
        let split = layers
            .iter()
            .position(|l| matches!(l, Layer::Dense { outputs, .. } if *outputs == embedding_dim))
            .map(|i| i + 1)
            .ok_or_else(|| Error::invalid(format!("no bottleneck layer of width {embedding_dim}")))?;
        Ok(Self {
            layers,
            input_size,
            embedding_dim,
            split,
        })
    }

    /// Encoder: stride-2 3x3 convolutions through `channels`, then a dense
    /// bottleneck; the decoder mirrors it with transposed convolutions. ReLU on
    /// hidden layers, sigmoid output. Weights are fan-in-scaled uniform.
    pub fn conv_autoencoder(input_size: usize, channels: &[usize], embedding_dim: usize, seed: u64) -> Result<Self> {
        if channels.is_empty() || embedding_dim == 0 {
            return Err(Error::invalid("need at least one conv stage and a positive embedding size"));
        }
        let mut layers = Vec::new();
        let (mut size, mut c) = (input_size, 1);
        for &oc in channels {
            let geom = ConvGeom { in_c: c, out_c: oc, in_size: size, kernel: 3, stride: 2, padding: 1 };
            size = geom.conv_out();
            layers.push(Layer::conv(geom));
            layers.push(Layer::Relu { len: oc * size * size });
            c = oc;
        }
        let flat = c * size * size;
        layers.push(Layer::dense(flat, embedding_dim));
        layers.push(Layer::dense(embedding_dim, flat));
        layers.push(Layer::Relu { len: flat });
        let mut back: Vec<usize> = channels.iter().rev().skip(1).copied().collect();
        back.push(1);
        for (i, &oc) in back.iter().enumerate() {
            let geom = ConvGeom { in_c: c, out_c: oc, in_size: size, kernel: 3, stride: 2, padding: 1 };
            size = geom.transposed_out();
            layers.push(Layer::conv_transpose(geom));
            let len = oc * size * size;
            if i + 1 == back.len() {
                layers.push(Layer::Sigmoid { len });
            } else {
                layers.push(Layer::Relu { len });
            }
            c = oc;
        }
        if size != input_size {
            return Err(Error::invalid(format!(
                "input size {input_size} is not divisible by 2^{}",
                channels.len()
            )));
        }
        let mut model = Self::from_layers(layers, embedding_dim)?;
        model.init_weights(seed);
        Ok(model)
    }

    /// 64x64 model: channels 1-16-32-64-128 down to 4x4, dense bottleneck of `d`.
    pub fn standard(embedding_dim: usize, seed: u64) -> Result<Self> {
        Self::conv_autoencoder(64, &[16, 32, 64, 128], embedding_dim, seed)
    }

    /// 8x8 model with two conv stages, used for gradient checks.
    pub fn tiny(embedding_dim: usize, seed: u64) -> Result<Self> {
        Self::conv_autoencoder(8, &[2, 3], embedding_dim, seed)
    }

    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let fan_in = l.fan_in();
            if let Some((w, b)) = l.params_mut() {
                let bound = (6.0 / fan_in as f64).sqrt();
                w.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                b.fill(0.0);
            }
        }
    }

    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            if let Some((w, b)) = l.params_mut() {
                w.fill(0.0);
                b.fill(0.0);
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Number of encoder layers.
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// All parameters as little-endian `f32` in declaration order.
    fn weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.num_params());
        for (w, b) in self.layers.iter().filter_map(|l| l.params()) {
            for v in w.iter().chain(b) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// 64-bit FNV-1a over the stored weight bytes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.weight_bytes());
        h.finish()
    }

    fn run(&self, range: std::ops::Range<usize>, x: Vec<f64>) -> Trace {
        let mut acts = Vec::with_capacity(range.len() + 1);
        let mut aux = Vec::with_capacity(range.len());
        acts.push(x);
        for l in &self.layers[range] {
            let (y, a) = l.forward(acts.last().expect("input"));
            acts.push(y);
            aux.push(a);
        }
        Trace { acts, aux }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        let want = self.input_size * self.input_size;
        if len != want {
            return Err(Error::dims(format!(
                "input of {len} values, model expects {0}x{0}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Bottleneck activations for a flat input frame.
    pub fn encode_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut t = self.run(0..self.split, input.to_vec());
        Ok(t.acts.pop().expect("output"))
    }

    /// Decoder output probabilities for a code.
    pub fn decode_values(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.embedding_dim {
            return Err(Error::dims(format!(
                "code of length {}, model embedding is {}",
                code.len(),
                self.embedding_dim
            )));
        }
        let mut t = self.run(self.split..self.layers.len(), code.to_vec());
        Ok(t.acts.pop().expect("output"))
    }

    /// Full forward pass: code and reconstruction.
    pub fn forward(&self, input: &ProbMap) -> Result<(ShapeCode, ProbMap)> {
        if input.width() != self.input_size || input.height() != self.input_size {
            return Err(Error::dims(format!(
                "{}x{} input, model expects {1}x{1}",
                input.width(),
                self.input_size
            )));
        }
        let t = self.run(0..self.layers.len(), input.data().to_vec());
        let code = t.acts[self.split].clone();
        let recon = t.acts.last().expect("output").clone();
        Ok((
            ShapeCode::new(
                code,
                CodecMeta::Learned {
                    fingerprint: self.fingerprint(),
                },
            ),
            ProbMap::from_vec_unchecked(self.input_size, self.input_size, recon)?,
        ))
    }

    /// Loss and parameter gradients of `bce_loss(forward(input), target)`.
    ///
    /// The sigmoid and the loss are differentiated jointly (`p_hat - p`), which
    /// equals the chain rule wherever the probability clamp is inactive.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        self.backward_with_output(input, target).map(|(l, g, _)| (l, g))
    }

    /// As [`AeModel::backward`], also returning the reconstruction.
    pub fn backward_with_output(&self, input: &[f64], target: &[f64]) -> Result<(f64, Gradients, Vec<f64>)> {
        self.check_input(input.len())?;
        self.check_input(target.len())?;
        let mut t = self.run(0..self.layers.len(), input.to_vec());
        let out = t.acts.pop().expect("output");
        let loss = bce(&out, target);
        let n = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        // gradient at the sigmoid input
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(p, q)| p - q).collect();
        for i in (0..n - 1).rev() {
            let (gw, gb) = &mut grads.layers[i];
            let y = if i + 1 < n { &t.acts[i + 1] } else { &out };
            delta = self.layers[i].backward(&t.acts[i], y, &t.aux[i], &delta, gw, gb);
        }
        Ok((loss, grads, out))
    }

    /// Loss plus the on/off state of every ReLU input, used to tell when a
    /// finite-difference step crosses a kink.
    pub(crate) fn loss_and_pattern(&self, input: &[f64], target: &[f64]) -> (f64, Vec<bool>) {
        let t = self.run(0..self.layers.len(), input.to_vec());
        let mut pattern = Vec::new();
        for (l, a) in self.layers.iter().zip(&t.acts) {
            if matches!(l, Layer::Relu { .. }) {
                pattern.extend(a.iter().map(|&v| v > 0.0));
            }
        }
        (bce(t.acts.last().expect("output"), target), pattern)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// `STAE` model file: magic, `u32` version, `u32` d, `u32` layer count,
    /// per layer `u32` kind + `u32` dims[6], then `f32` weights in declaration
    /// order (per layer: weights, then bias). All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STAE_MAGIC);
        for v in [STAE_VERSION, self.embedding_dim as u32, self.layers.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.layers {
            let (kind, dims): (u32, [usize; 6]) = match l {
                Layer::Conv { geom: g, .. } => (0, [g.in_c, g.out_c, g.in_size, g.kernel, g.stride, g.padding]),
                Layer::ConvTranspose { geom: g, .. } => {
                    (1, [g.in_c, g.out_c, g.in_size, g.kernel, g.stride, g.padding])
                }
                Layer::Dense { inputs, outputs, .. } => (2, [*inputs, *outputs, 0, 0, 0, 0]),
                Layer::Relu { len } => (3, [*len, 0, 0, 0, 0, 0]),
                Layer::Sigmoid { len } => (4, [*len, 0, 0, 0, 0, 0]),
            };
            out.extend_from_slice(&kind.to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        out.write_all(&self.weight_bytes()).expect("vec write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Format("truncated STAE file".into()))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != STAE_MAGIC {
            return Err(Error::Format("bad magic, expected STAE".into()));
        }
        let mut u32s = |n: usize| -> Result<Vec<usize>> {
            let raw = take(4 * n)?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
                .collect())
        };
        let head = u32s(3)?;
        if head[0] != STAE_VERSION as usize {
            return Err(Error::Format(format!("unsupported STAE version {}", head[0])));
        }
        let (d, count) = (head[1], head[2]);
        if count > 4096 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let v = u32s(7)?;
            let geom = ConvGeom { in_c: v[1], out_c: v[2], in_size: v[3], kernel: v[4], stride: v[5], padding: v[6] };
            layers.push(match v[0] {
                0 => Layer::conv(geom),
                1 => Layer::conv_transpose(geom),
                2 => Layer::dense(v[1], v[2]),
                3 => Layer::Relu { len: v[1] },
                4 => Layer::Sigmoid { len: v[1] },
                k => return Err(Error::Format(format!("unknown layer kind {k}"))),
            });
        }
        let mut model = Self::from_layers(layers, d)?;
        let n = model.num_params();
        let raw = take(4 * n)?;
        let mut vals = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        for l in &mut model.layers {
            if let Some((w, b)) = l.params_mut() {
                for v in w.iter_mut().chain(b.iter_mut()) {
                    *v = vals.next().expect("counted");
                }
            }
        }
        if take(1).is_ok() {
            return Err(Error::Format("trailing bytes after STAE weights".into()));
        }
        Ok(model)
    }

    /// Rounds every parameter to `f32`, matching what a saved file holds.
    pub fn quantize_f32(&mut self) {
        for l in &mut self.layers {
            if let Some((w, b)) = l.params_mut() {
                w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

/// Summed binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
fn bce(pred: &[f64], target: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    acc
}

/// Binary cross-entropy summed over all pixels.
pub fn bce_loss(recon: &ProbMap, target: &Mask) -> Result<f64> {
    if recon.width() != target.width() || recon.height() != target.height() {
        return Err(Error::dims(format!(
            "{}x{} reconstruction vs {}x{} target",
            recon.width(),
            recon.height(),
            target.width(),
            target.height()
        )));
    }
    let t: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    Ok(bce(recon.data(), &t))
}
