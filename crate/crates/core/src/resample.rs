//! Area-average, bicubic and nearest-neighbour resampling.
//!
//! Pixel `i` covers `[i, i + 1)`; output sample `o` is centred on
//! `(o + 0.5) * in / out` in source coordinates.

use crate::error::{Error, Result};
use crate::mask::{Mask, ProbMap};

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Per-axis box-filter overlaps: `(source index, overlap)` lists, each list summing to `in_n`.
fn area_weights(in_n: usize, out_n: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units of 1/(in_n * out_n): source i spans [i*out_n, (i+1)*out_n),
    // output o spans [o*in_n, (o+1)*in_n). Overlaps are exact integers.
    (0..out_n)
        .map(|o| {
            let lo = o * in_n;
            let hi = lo + in_n;
            let first = lo / out_n;
            let last = (hi - 1) / out_n;
            (first..=last)
                .filter_map(|i| {
                    let a = lo.max(i * out_n);
                    let b = hi.min((i + 1) * out_n);
                    (b > a).then(|| (i, (b - a) as f64))
                })
                .collect()
        })
        .collect()
}

/// Exact box-filter resampling in either direction.
pub fn resample_area(p: &ProbMap, out_w: usize, out_h: usize) -> Result<ProbMap> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("zero output dimension"));
    }
    let wx = area_weights(p.width(), out_w);
    let wy = area_weights(p.height(), out_h);
    // Overlaps are integers, so binary inputs accumulate exactly; one division at the end.
    let norm = (p.width() * p.height()) as f64;
    let mut tmp = vec![0.0; out_w * p.height()];
    for y in 0..p.height() {
        for (ox, taps) in wx.iter().enumerate() {
            tmp[y * out_w + ox] = taps.iter().map(|&(i, w)| w * p.get(i, y)).sum();
        }
    }
    let mut out = Vec::with_capacity(out_w * out_h);
    for taps in &wy {
        for ox in 0..out_w {
            let v: f64 = taps.iter().map(|&(j, w)| w * tmp[j * out_w + ox]).sum();
            out.push((v / norm).clamp(0.0, 1.0));
        }
    }
    ProbMap::from_vec(out_w, out_h, out)
}

/// Area-average downsampling of a binary mask (box filter, `INTER_AREA`-style).
pub fn downsample_area(m: &Mask, out_w: usize, out_h: usize) -> Result<ProbMap> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("zero output dimension"));
    }
    if out_w > m.width() || out_h > m.height() {
        return Err(Error::invalid(format!(
            "cannot downsample {}x{} to larger {out_w}x{out_h}",
            m.width(),
            m.height()
        )));
    }
    resample_area(&m.to_prob(), out_w, out_h)
}

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn cubic_taps(in_n: usize, out_n: usize) -> Vec<[(usize, f64); 4]> {
    let scale = in_n as f64 / out_n as f64;
    let last = in_n as isize - 1;
    (0..out_n)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let frac = s - base;
            let base = base as isize;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let off = k as isize - 1;
                let idx = (base + off).clamp(0, last) as usize;
                *tap = (idx, keys_kernel(frac - off as f64));
            }
            taps
        })
        .collect()
}

/// Separable bicubic resize with edge-clamped sampling. Output is not clamped.
pub fn resize_bicubic(p: &ProbMap, out_w: usize, out_h: usize) -> Result<ProbMap> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("zero output dimension"));
    }
    let tx = cubic_taps(p.width(), out_w);
    let ty = cubic_taps(p.height(), out_h);
    let mut tmp = vec![0.0; out_w * p.height()];
    for y in 0..p.height() {
        for (ox, taps) in tx.iter().enumerate() {
            tmp[y * out_w + ox] = taps.iter().map(|&(i, w)| w * p.get(i, y)).sum();
        }
    }
    let mut out = Vec::with_capacity(out_w * out_h);
    for taps in &ty {
        for ox in 0..out_w {
            out.push(taps.iter().map(|&(j, w)| w * tmp[j * out_w + ox]).sum());
        }
    }
    ProbMap::from_vec_unchecked(out_w, out_h, out)
}

/// Bicubic upsampling followed by binarization (pixels strictly above `threshold`).
pub fn upsample_bicubic(p: &ProbMap, out_w: usize, out_h: usize, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(resize_bicubic(p, out_w, out_h)?.binarize(threshold))
}

/// Nearest-neighbour resize of a binary mask.
pub fn resize_nearest(m: &Mask, out_w: usize, out_h: usize) -> Result<Mask> {
    let sx = m.width() as f64 / out_w.max(1) as f64;
    let sy = m.height() as f64 / out_h.max(1) as f64;
    let (lw, lh) = (m.width() - 1, m.height() - 1);
    Mask::from_fn(out_w, out_h, |x, y| {
        let ix = (((x as f64 + 0.5) * sx) as usize).min(lw);
        let iy = (((y as f64 + 0.5) * sy) as usize).min(lh);
        m.get(ix, iy)
    })
}
