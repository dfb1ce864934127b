//! Per-sample layer kernels. Tensors are flat `f64` slices in CHW order.
//!
//! Convolutions lower to GEMM via im2col. A transposed convolution is the
//! adjoint of a convolution with the same geometry, so both share one
//! index mapping: output position `(py, px)` of a convolution reads input
//! pixel `(py * stride - pad + ky, px * stride - pad + kx)`.

use serde::{Deserialize, Serialize};

/// Square convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub in_size: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    /// Spatial output side of a forward convolution.
    pub fn conv_out(&self) -> usize {
        (self.in_size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Spatial output side of a transposed convolution: `in_size * stride`.
    pub fn transposed_out(&self) -> usize {
        self.in_size * self.stride
    }

    pub fn weight_len(&self) -> usize {
        self.in_c * self.out_c * self.kernel * self.kernel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Weights `[out_c][in_c][k][k]`, bias `[out_c]`.
    Conv { geom: ConvGeom, weight: Vec<f64>, bias: Vec<f64> },
    /// Weights `[in_c][out_c][k][k]`, bias `[out_c]`.
    ConvTranspose { geom: ConvGeom, weight: Vec<f64>, bias: Vec<f64> },
    /// Weights `[out][in]`, bias `[out]`.
    Dense { inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64> },
    Relu { len: usize },
    Sigmoid { len: usize },
}

impl Layer {
    pub fn conv(geom: ConvGeom) -> Self {
        Layer::Conv {
            geom,
            weight: vec![0.0; geom.weight_len()],
            bias: vec![0.0; geom.out_c],
        }
    }

    pub fn conv_transpose(geom: ConvGeom) -> Self {
        Layer::ConvTranspose {
            geom,
            weight: vec![0.0; geom.weight_len()],
            bias: vec![0.0; geom.out_c],
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Layer::Conv { geom, .. } | Layer::ConvTranspose { geom, .. } => {
                geom.in_c * geom.in_size * geom.in_size
            }
            Layer::Dense { inputs, .. } => *inputs,
            Layer::Relu { len } | Layer::Sigmoid { len } => *len,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Conv { geom, .. } => geom.out_c * geom.conv_out().pow(2),
            Layer::ConvTranspose { geom, .. } => geom.out_c * geom.transposed_out().pow(2),
            Layer::Dense { outputs, .. } => *outputs,
            Layer::Relu { len } | Layer::Sigmoid { len } => *len,
        }
    }

    /// Fan-in used for weight initialisation.
    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Conv { geom, .. } | Layer::ConvTranspose { geom, .. } => {
                geom.in_c * geom.kernel * geom.kernel
            }
            Layer::Dense { inputs, .. } => *inputs,
            _ => 0,
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. }
            | Layer::Dense { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. }
            | Layer::Dense { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    /// Forward pass. Returns the output and the auxiliary buffer needed by
    /// `backward` (im2col matrix for convolutions).
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_len());
        match self {
            Layer::Conv { geom, weight, bias } => {
                let n = geom.conv_out();
                let p = n * n;
                let k = geom.in_c * geom.kernel * geom.kernel;
                let cols = im2col(x, geom.in_c, geom.in_size, *geom, n);
                let mut y = vec![0.0; geom.out_c * p];
                for (row, b) in y.chunks_exact_mut(p).zip(bias) {
                    row.fill(*b);
                }
                gemm(geom.out_c, k, p, weight, false, &cols, false, &mut y, 1.0);
                (y, cols)
            }
            Layer::ConvTranspose { geom, weight, bias } => {
                let n_out = geom.transposed_out();
                let pin = geom.in_size * geom.in_size;
                let kk = geom.out_c * geom.kernel * geom.kernel;
                let mut cols = vec![0.0; kk * pin];
                // cols = W^T x, W is [in_c, kk]
                gemm(kk, geom.in_c, pin, weight, true, x, false, &mut cols, 0.0);
                let mut y = vec![0.0; geom.out_c * n_out * n_out];
                col2im(&cols, geom.out_c, n_out, *geom, geom.in_size, &mut y);
                let plane = n_out * n_out;
                for (ch, b) in y.chunks_exact_mut(plane).zip(bias) {
                    ch.iter_mut().for_each(|v| *v += b);
                }
                (y, Vec::new())
            }
            Layer::Dense { inputs, outputs, weight, bias } => {
                let mut y = bias.clone();
                gemm(*outputs, *inputs, 1, weight, false, x, false, &mut y, 1.0);
                (y, Vec::new())
            }
            Layer::Relu { .. } => (x.iter().map(|&v| v.max(0.0)).collect(), Vec::new()),
            Layer::Sigmoid { .. } => (x.iter().map(|&v| sigmoid(v)).collect(), Vec::new()),
        }
    }

    /// Backward pass: accumulates parameter gradients into `gw`/`gb` and
    /// returns the gradient with respect to the layer input.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        aux: &[f64],
        dy: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        match self {
            Layer::Conv { geom, weight, .. } => {
                let n = geom.conv_out();
                let p = n * n;
                let k = geom.in_c * geom.kernel * geom.kernel;
                // dW += dY cols^T
                gemm(geom.out_c, p, k, dy, false, aux, true, gw, 1.0);
                for (g, row) in gb.iter_mut().zip(dy.chunks_exact(p)) {
                    *g += row.iter().sum::<f64>();
                }
                let mut dcols = vec![0.0; k * p];
                gemm(k, geom.out_c, p, weight, true, dy, false, &mut dcols, 0.0);
                let mut dx = vec![0.0; x.len()];
                col2im(&dcols, geom.in_c, geom.in_size, *geom, n, &mut dx);
                dx
            }
            Layer::ConvTranspose { geom, weight, .. } => {
                let n_out = geom.transposed_out();
                let pin = geom.in_size * geom.in_size;
                let kk = geom.out_c * geom.kernel * geom.kernel;
                let dcols = im2col(dy, geom.out_c, n_out, *geom, geom.in_size);
                // dW += x dcols^T, [in_c, kk]
                gemm(geom.in_c, pin, kk, x, false, &dcols, true, gw, 1.0);
                let plane = n_out * n_out;
                for (g, ch) in gb.iter_mut().zip(dy.chunks_exact(plane)) {
                    *g += ch.iter().sum::<f64>();
                }
                let mut dx = vec![0.0; geom.in_c * pin];
                gemm(geom.in_c, kk, pin, weight, false, &dcols, false, &mut dx, 0.0);
                dx
            }
            Layer::Dense { inputs, outputs, weight, .. } => {
                gemm(*outputs, 1, *inputs, dy, false, x, false, gw, 1.0);
                for (g, d) in gb.iter_mut().zip(dy) {
                    *g += d;
                }
                let mut dx = vec![0.0; *inputs];
                gemm(*inputs, *outputs, 1, weight, true, dy, false, &mut dx, 0.0);
                dx
            }
            Layer::Relu { .. } => x
                .iter()
                .zip(dy)
                .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                .collect(),
            Layer::Sigmoid { .. } => y.iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect(),
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `[c * k * k, n_pos^2]` patch matrix of a `c x size x size` tensor.
fn im2col(src: &[f64], c: usize, size: usize, g: ConvGeom, n_pos: usize) -> Vec<f64> {
    let k = g.kernel;
    let p = n_pos * n_pos;
    let mut cols = vec![0.0; c * k * k * p];
    let (s, pad) = (g.stride as isize, g.padding as isize);
    for ch in 0..c {
        let plane = &src[ch * size * size..(ch + 1) * size * size];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * p;
                let out = &mut cols[row..row + p];
                for py in 0..n_pos {
                    let sy = py as isize * s - pad + ky as isize;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * size..(sy as usize + 1) * size];
                    for px in 0..n_pos {
                        let sx = px as isize * s - pad + kx as isize;
                        if sx >= 0 && sx < size as isize {
                            out[py * n_pos + px] = src_row[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatters-adds patches back into `dst`.
fn col2im(cols: &[f64], c: usize, size: usize, g: ConvGeom, n_pos: usize, dst: &mut [f64]) {
    let k = g.kernel;
    let p = n_pos * n_pos;
    let (s, pad) = (g.stride as isize, g.padding as isize);
    for ch in 0..c {
        let plane = &mut dst[ch * size * size..(ch + 1) * size * size];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * p;
                let src = &cols[row..row + p];
                for py in 0..n_pos {
                    let sy = py as isize * s - pad + ky as isize;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    for px in 0..n_pos {
                        let sx = px as isize * s - pad + kx as isize;
                        if sx >= 0 && sx < size as isize {
                            plane[sy as usize * size + sx as usize] += src[py * n_pos + px];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a' b' + beta c` with row-major operands; `'` is an optional transpose.
/// `a'` is `m x k`, `b'` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe in-bounds row-major / transposed views of the
    // slices, whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
