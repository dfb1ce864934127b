//! Radial descriptor: a centre point plus boundary distances along `d - 2`
//! evenly spaced rays.
//!
//! Layout: `values[0..2]` is the centre `(x, y)` as a fraction of the frame
//! (top-left is `(0, 0)`), `values[i + 2]` is the distance to the boundary at
//! angle `2 * pi * i / (d - 2)`, divided by the frame diagonal. Angles are
//! measured in image coordinates (y grows downwards).
//!
//! Encoding tries 25 centres on a 5x5 grid and two ray modes for each, keeping
//! the candidate whose decoded polygon has the highest IoU with the mask.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::code::{CodecId, CodecMeta, ShapeCode, ShapeCodec};
use crate::error::{Error, Result};
use crate::mask::{iou, Mask, CANONICAL_SIZE};
use crate::raster;

/// Ray-march step in pixels.
pub const RAY_STEP: f64 = 0.5;

pub const MIN_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayMode {
    /// Stop at the first exit from the foreground.
    Outward,
    /// Stop at the outermost foreground exit along the ray.
    Inward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    /// Centre in frame pixels.
    pub center: (f64, f64),
    pub mode: RayMode,
}

/// The 50 candidates in search order: centres row-major, outward before inward.
pub fn candidates(width: usize, height: usize) -> Vec<Candidate> {
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::with_capacity(50);
    for i in 1..=5 {
        for j in 1..=5 {
            let center = (j as f64 * w / 6.0, i as f64 * h / 6.0);
            out.push(Candidate {
                center,
                mode: RayMode::Outward,
            });
            out.push(Candidate {
                center,
                mode: RayMode::Inward,
            });
        }
    }
    out
}

fn inside(m: &Mask, x: f64, y: f64) -> Option<bool> {
    let (fx, fy) = (x.floor(), y.floor());
    if fx < 0.0 || fy < 0.0 || fx >= m.width() as f64 || fy >= m.height() as f64 {
        return None;
    }
    Some(m.get(fx as usize, fy as usize))
}

/// Boundary distance in pixels along direction `theta`.
///
/// Samples sit at the midpoints `t = (k + 0.5) * RAY_STEP`; a boundary
/// detected at sample `k` (first background or off-canvas sample) is placed at
/// `k * RAY_STEP`. An outward ray whose centre pixel is background has length 0.
pub fn cast_ray(m: &Mask, center: (f64, f64), theta: f64, mode: RayMode) -> f64 {
    let (dy, dx) = theta.sin_cos();
    if mode == RayMode::Outward && inside(m, center.0, center.1) != Some(true) {
        return 0.0;
    }
    let mut last_exit = 0usize;
    let mut was_inside = false;
    let mut k = 0usize;
    loop {
        let t = (k as f64 + 0.5) * RAY_STEP;
        let sample = inside(m, center.0 + t * dx, center.1 + t * dy);
        let now = sample == Some(true);
        if was_inside && !now {
            last_exit = k;
            if mode == RayMode::Outward {
                break;
            }
        }
        if mode == RayMode::Outward && k == 0 && !now {
            break;
        }
        if sample.is_none() {
            break;
        }
        was_inside = now;
        k += 1;
    }
    last_exit as f64 * RAY_STEP
}

#[derive(Clone, Debug)]
pub struct RadialCodec {
    d: usize,
    canonical_size: usize,
}

/// Result of the candidate search.
#[derive(Clone, Debug)]
pub struct RadialFit {
    pub code: ShapeCode,
    pub candidate: Candidate,
    /// IoU of the decoded code against the canonical mask.
    pub iou: f64,
}

impl RadialCodec {
    pub fn new(d: usize) -> Result<Self> {
        Self::with_frame(d, CANONICAL_SIZE)
    }

    pub fn with_frame(d: usize, canonical_size: usize) -> Result<Self> {
        if d < MIN_DIM {
            return Err(Error::invalid(format!("radial descriptor needs d >= {MIN_DIM}, got {d}")));
        }
        if canonical_size == 0 {
            return Err(Error::invalid("canonical size must be positive"));
        }
        Ok(Self { d, canonical_size })
    }

    pub fn rays(&self) -> usize {
        self.d - 2
    }

    pub fn angle(&self, i: usize) -> f64 {
        TAU * i as f64 / self.rays() as f64
    }

    /// Code for one candidate on an already-canonical mask.
    pub fn encode_candidate(&self, canon: &Mask, cand: &Candidate) -> ShapeCode {
        let (w, h) = (canon.width() as f64, canon.height() as f64);
        let diag = w.hypot(h);
        let mut values = Vec::with_capacity(self.d);
        values.push((cand.center.0 / w).clamp(0.0, 1.0));
        values.push((cand.center.1 / h).clamp(0.0, 1.0));
        for i in 0..self.rays() {
            let r = cast_ray(canon, cand.center, self.angle(i), cand.mode);
            values.push((r / diag).clamp(0.0, 1.0));
        }
        ShapeCode::new(values, self.meta())
    }

    /// Mask-centroid centre with outward rays, the search-free baseline.
    pub fn naive_candidate(canon: &Mask) -> Option<Candidate> {
        canon.centroid().map(|center| Candidate {
            center,
            mode: RayMode::Outward,
        })
    }

    /// Scores one candidate against an already-canonical mask.
    pub fn score_candidate(&self, canon: &Mask, cand: &Candidate) -> Result<(ShapeCode, f64)> {
        let code = self.encode_candidate(canon, cand);
        let rec = self.decode(&code, canon.width(), canon.height())?;
        let score = iou(canon, &rec)?;
        Ok((code, score))
    }

    /// Runs the full 50-candidate search on the canonical frame of `m`.
    pub fn fit(&self, m: &Mask) -> Result<RadialFit> {
        let canon = m.canonicalize(self.canonical_size)?;
        let cands = candidates(canon.width(), canon.height());
        let scored: Vec<(ShapeCode, f64)> = cands
            .par_iter()
            .map(|c| self.score_candidate(&canon, c))
            .collect::<Result<_>>()?;
        // first maximum in enumeration order
        let mut best = 0;
        for (i, (_, s)) in scored.iter().enumerate() {
            if *s > scored[best].1 {
                best = i;
            }
        }
        let (code, score) = scored.into_iter().nth(best).expect("50 candidates");
        Ok(RadialFit {
            code,
            candidate: cands[best],
            iou: score,
        })
    }

    /// Polygon vertices of a code in an `out_w x out_h` canvas.
    pub fn polygon(&self, code: &ShapeCode, out_w: usize, out_h: usize) -> Vec<(f64, f64)> {
        let v = &code.values;
        let (w, h) = (out_w as f64, out_h as f64);
        let rays = v.len() - 2;
        (0..rays)
            .map(|i| {
                let theta = TAU * i as f64 / rays as f64;
                // distances are in diagonals of a square frame: sqrt(2) frame widths
                let r = v[i + 2].max(0.0) * std::f64::consts::SQRT_2;
                let (s, c) = theta.sin_cos();
                ((v[0] + r * c) * w, (v[1] + r * s) * h)
            })
            .collect()
    }
}

impl ShapeCodec for RadialCodec {
    fn id(&self) -> CodecId {
        CodecId::Radial
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn meta(&self) -> CodecMeta {
        CodecMeta::Radial { d: self.d }
    }

    fn encode(&self, m: &Mask) -> Result<ShapeCode> {
        Ok(self.fit(m)?.code)
    }

    fn decode(&self, code: &ShapeCode, out_w: usize, out_h: usize) -> Result<Mask> {
        code.expect_codec(CodecId::Radial)?;
        if code.dim() < MIN_DIM {
            return Err(Error::invalid(format!("radial code of length {}", code.dim())));
        }
        if out_w == 0 || out_h == 0 {
            return Err(Error::invalid("zero output dimension"));
        }
        let poly = self.polygon(code, out_w, out_h);
        let mut m = raster::fill_polygon(&poly, out_w, out_h);
        if m.is_empty() {
            // a collapsed polygon still marks its centre
            let cx = (code.values[0] * out_w as f64).floor().clamp(0.0, (out_w - 1) as f64) as usize;
            let cy = (code.values[1] * out_h as f64).floor().clamp(0.0, (out_h - 1) as f64) as usize;
            m.set(cx, cy, true);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse(w: usize, h: usize, cx: f64, cy: f64, a: f64, b: f64, rot: f64) -> Mask {
        let (s, c) = rot.sin_cos();
        Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .unwrap()
    }

    /// Independent march: plain stepping from the centre, tracking inside/outside.
    fn march_oracle(m: &Mask, center: (f64, f64), theta: f64, outermost: bool) -> f64 {
        let px = |x: f64, y: f64| -> Option<bool> {
            if x < 0.0 || y < 0.0 || x >= m.width() as f64 || y >= m.height() as f64 {
                None
            } else {
                Some(m.get(x as usize, y as usize))
            }
        };
        if !outermost && px(center.0, center.1) != Some(true) {
            return 0.0;
        }
        let mut samples = Vec::new();
        let mut t = 0.25;
        loop {
            let s = px(center.0 + t * theta.cos(), center.1 + t * theta.sin());
            samples.push(s == Some(true));
            if s.is_none() {
                break;
            }
            t += 0.5;
        }
        let exits: Vec<usize> = (1..samples.len()).filter(|&k| samples[k - 1] && !samples[k]).collect();
        let k = if outermost {
            exits.last().copied()
        } else if !samples[0] {
            Some(0)
        } else {
            exits.first().copied()
        };
        k.unwrap_or(0) as f64 * 0.5
    }

    fn c_shape() -> Mask {
        Mask::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - 32.0, y as f64 + 0.5 - 32.0);
            let r2 = dx * dx + dy * dy;
            r2 <= 32.0 * 32.0 && r2 >= 18.0 * 18.0 && !(dx > 0.0 && dy.abs() < 9.0)
        })
        .unwrap()
    }

    #[test]
    fn full_square_center_candidate() {
        let codec = RadialCodec::new(6).unwrap();
        let m = Mask::ones(64, 64).unwrap();
        let center = candidates(64, 64)[24];
        assert_eq!(center.center, (32.0, 32.0));
        let code = codec.encode_candidate(&m, &center);
        assert_eq!(&code.values[..2], &[0.5, 0.5]);
        for &v in &code.values[2..] {
            assert!((v - 32.0 / (64.0 * 2f64.sqrt())).abs() < 1e-12, "{v}");
        }
        let fit = codec.fit(&m).unwrap();
        for (_, s) in candidates(64, 64).iter().map(|c| codec.score_candidate(&m, c).unwrap()) {
            assert!(fit.iou >= s);
        }
    }

    #[test]
    fn disk_has_equal_distances() {
        let codec = RadialCodec::new(34).unwrap();
        let r = 32.0;
        let m = ellipse(64, 64, 32.0, 32.0, r, r, 0.0);
        let centre = Candidate {
            center: (32.0, 32.0),
            mode: RayMode::Outward,
        };
        let c = codec.encode_candidate(&m, &centre).values;
        let want = r / (64.0 * 2f64.sqrt());
        let px = 1.0 / (64.0 * 2f64.sqrt());
        for &v in &c[2..] {
            assert!((v - want).abs() <= px, "{v} vs {want}");
        }
        // off-centre candidates reconstruct the pixelated disk slightly better
        let fit = codec.fit(&m).unwrap();
        assert!(fit.iou >= codec.score_candidate(&m, &centre).unwrap().1);
        assert!(fit.iou >= 0.97);
    }

    #[test]
    fn c_shape_matches_march_oracle_and_wins_search() {
        let codec = RadialCodec::new(50).unwrap();
        let m = c_shape();
        let fit = codec.fit(&m).unwrap();
        let canon = m.canonicalize(64).unwrap();
        let outer = fit.candidate.mode == RayMode::Inward;
        for i in 0..48 {
            let want = march_oracle(&canon, fit.candidate.center, codec.angle(i), outer);
            let got = fit.code.values[i + 2] * 64.0 * 2f64.sqrt();
            assert!((got - want).abs() < 1e-9, "ray {i}: {got} vs {want}");
        }
        for c in candidates(64, 64) {
            // every candidate's rays agree with the oracle too
            let code = codec.encode_candidate(&canon, &c);
            for i in (0..48).step_by(7) {
                let want = march_oracle(&canon, c.center, codec.angle(i), c.mode == RayMode::Inward);
                assert!((code.values[i + 2] * 64.0 * 2f64.sqrt() - want).abs() < 1e-9);
            }
            let (_, s) = codec.score_candidate(&canon, &c).unwrap();
            assert!(fit.iou >= s);
        }
    }

    #[test]
    fn zero_distances_mark_center_pixel() {
        let codec = RadialCodec::new(6).unwrap();
        let code = codec.wrap(vec![0.3, 0.6, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let m = codec.decode(&code, 10, 10).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(3, 6));
    }

    #[test]
    fn regular_octagon_area() {
        let codec = RadialCodec::new(10).unwrap();
        let r = 0.3;
        let code = codec.wrap(vec![0.5, 0.5, r, r, r, r, r, r, r, r]).unwrap();
        let m = codec.decode(&code, 256, 256).unwrap();
        let rp = r * 2f64.sqrt() * 256.0;
        let analytic = 0.5 * 8.0 * rp * rp * (TAU / 8.0).sin();
        assert!((m.count() as f64 - analytic).abs() / analytic < 0.02);
    }

    #[test]
    fn ellipse_roundtrip() {
        let codec = RadialCodec::new(50).unwrap();
        let m = ellipse(120, 90, 60.0, 45.0, 50.0, 25.0, 0.4);
        let canon = m.canonicalize(64).unwrap();
        let back = codec.decode(&codec.encode(&m).unwrap(), 64, 64).unwrap();
        assert!(iou(&canon, &back).unwrap() >= 0.95);
    }

    #[test]
    fn outward_from_background_is_zero() {
        let m = c_shape();
        assert_eq!(cast_ray(&m, (32.0, 32.0), 0.0, RayMode::Outward), 0.0);
        assert!(cast_ray(&m, (32.0, 32.0), std::f64::consts::PI, RayMode::Inward) > 20.0);
    }

    #[test]
    fn errors() {
        assert!(RadialCodec::new(5).is_err());
        let codec = RadialCodec::new(6).unwrap();
        assert!(codec.encode(&Mask::zeros(8, 8).unwrap()).is_err());
        let g = ShapeCode::new(vec![0.0; 6], CodecMeta::Grid { k: 2 });
        assert!(codec.decode(&g, 8, 8).is_err());
    }
}
