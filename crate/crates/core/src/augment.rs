//! Geometric augmentation of ground-truth masks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mask::Mask;

/// Sampling ranges used for training-time augmentation.
pub const MAX_ROTATION_DEG: f64 = 4.0;
pub const MAX_TRANSLATION: f64 = 0.20;
pub const MAX_SCALE_DELTA: f64 = 0.03;
pub const MAX_INTENSITY_ALPHA: f64 = 2.0;
pub const MAX_INTENSITY_BETA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Radians, about the canvas centre.
    pub rotation: f64,
    /// Fractions of the canvas width / height.
    pub translate_x: f64,
    pub translate_y: f64,
    /// Scale delta: the mask is scaled by `1 + scale` about the canvas centre.
    pub scale: f64,
    pub flip: bool,
    /// Image-only intensity transform `alpha * I + beta`; ignored for masks.
    pub intensity_alpha: f64,
    pub intensity_beta: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            scale: 0.0,
            flip: false,
            intensity_alpha: 1.0,
            intensity_beta: 0.0,
        }
    }
}

impl AugmentParams {
    /// Draws every parameter uniformly within the training ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let max_rot = MAX_ROTATION_DEG.to_radians();
        Self {
            rotation: rng.random_range(-max_rot..=max_rot),
            translate_x: rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            translate_y: rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            scale: rng.random_range(-MAX_SCALE_DELTA..=MAX_SCALE_DELTA),
            flip: rng.random_bool(0.5),
            intensity_alpha: rng.random_range(-MAX_INTENSITY_ALPHA..=MAX_INTENSITY_ALPHA),
            intensity_beta: rng.random_range(-MAX_INTENSITY_BETA..=MAX_INTENSITY_BETA),
        }
    }

    pub fn within_ranges(&self) -> bool {
        self.rotation.abs() <= MAX_ROTATION_DEG.to_radians()
            && self.translate_x.abs() <= MAX_TRANSLATION
            && self.translate_y.abs() <= MAX_TRANSLATION
            && self.scale.abs() <= MAX_SCALE_DELTA
            && self.intensity_alpha.abs() <= MAX_INTENSITY_ALPHA
            && self.intensity_beta.abs() <= MAX_INTENSITY_BETA
    }
}

/// Applies flip, scale, rotation and translation (in that order) to a mask.
///
/// Each output pixel centre is mapped back through the inverse transform and
/// takes the value of the source pixel it lands in; samples falling off the
/// canvas are background.
pub fn apply_augmentation(m: &Mask, params: &AugmentParams) -> Mask {
    let (w, h) = (m.width() as f64, m.height() as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (tx, ty) = (params.translate_x * w, params.translate_y * h);
    let (sin, cos) = (-params.rotation).sin_cos();
    let inv_scale = 1.0 / (1.0 + params.scale);
    Mask::from_fn(m.width(), m.height(), |x, y| {
        let qx = x as f64 + 0.5 - tx - cx;
        let qy = y as f64 + 0.5 - ty - cy;
        let rx = (cos * qx - sin * qy) * inv_scale + cx;
        let ry = (sin * qx + cos * qy) * inv_scale + cy;
        let px = if params.flip { w - rx } else { rx };
        let (fx, fy) = (px.floor(), ry.floor());
        if fx < 0.0 || fy < 0.0 || fx >= w || fy >= h {
            return false;
        }
        m.get(fx as usize, fy as usize)
    })
    .expect("dimensions taken from a valid mask")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob() -> Mask {
        Mask::from_fn(50, 40, |x, y| {
            let (dx, dy) = (x as f64 - 18.0, y as f64 - 22.0);
            dx * dx / 120.0 + dy * dy / 40.0 <= 1.0 || (x > 30 && x < 47 && y > 3 && y < 9)
        })
        .unwrap()
    }

    #[test]
    fn identity_is_noop() {
        let m = blob();
        assert_eq!(apply_augmentation(&m, &AugmentParams::default()), m);
    }

    #[test]
    fn double_flip_is_noop() {
        let m = blob();
        let p = AugmentParams {
            flip: true,
            ..Default::default()
        };
        let once = apply_augmentation(&m, &p);
        assert_ne!(once, m);
        assert_eq!(apply_augmentation(&once, &p), m);
    }

    #[test]
    fn flip_mirrors_columns() {
        let m = blob();
        let f = apply_augmentation(
            &m,
            &AugmentParams {
                flip: true,
                ..Default::default()
            },
        );
        for y in 0..m.height() {
            for x in 0..m.width() {
                assert_eq!(f.get(x, y), m.get(m.width() - 1 - x, y));
            }
        }
    }

    #[test]
    fn translate_there_and_back() {
        let m = blob();
        let fwd = AugmentParams {
            translate_x: 0.10,
            translate_y: -0.10,
            ..Default::default()
        };
        let back = AugmentParams {
            translate_x: -0.10,
            translate_y: 0.10,
            ..Default::default()
        };
        let got = apply_augmentation(&apply_augmentation(&m, &fwd), &back);
        // oracle: integer shift by (+5, -4) then (-5, +4), dropping off-canvas pixels
        let shift = |src: &Mask, dx: i64, dy: i64| {
            Mask::from_fn(src.width(), src.height(), |x, y| {
                let (sx, sy) = (x as i64 - dx, y as i64 - dy);
                sx >= 0 && sy >= 0 && (sx as usize) < src.width() && (sy as usize) < src.height() && src.get(sx as usize, sy as usize)
            })
            .unwrap()
        };
        let want = shift(&shift(&m, 5, -4), -5, 4);
        assert_eq!(got, want);
        assert!(got.count() < m.count());
    }

    #[test]
    fn sampled_params_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert!(AugmentParams::sample(&mut rng).within_ranges());
        }
    }

    #[test]
    fn small_rotation_preserves_area_roughly() {
        let m = blob();
        let r = apply_augmentation(
            &m,
            &AugmentParams {
                rotation: 3f64.to_radians(),
                scale: 0.02,
                ..Default::default()
            },
        );
        let ratio = r.count() as f64 / m.count() as f64;
        assert!((ratio - 1.02f64.powi(2)).abs() < 0.08, "{ratio}");
    }
}
