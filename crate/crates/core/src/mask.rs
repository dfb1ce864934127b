//! Binary masks, probability maps and the canonical 64x64 frame.

use crate::error::{Error, Result};
use crate::resample;

/// Default side length of the canonical frame every codec works in.
pub const CANONICAL_SIZE: usize = 64;

/// Row-major binary occupancy grid. Every element is 0 or 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![0; width * height],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![1; width * height],
        })
    }

    /// Builds a mask from row-major 0/1 values.
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::dims(format!(
                "{} values for a {width}x{height} mask",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a mask by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::zeros(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.data[y * width + x] = 1;
                }
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground bounding box as `(x0, y0, x1, y1)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&v| v != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
            bb = Some(match bb {
                None => (first, y, last, y),
                Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), y),
            });
        }
        bb
    }

    /// Centroid of the foreground pixel centers.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn to_prob(&self) -> ProbMap {
        ProbMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Tight bounding-box crop of the foreground.
    pub fn crop_to_shape(&self) -> Result<Mask> {
        let (x0, y0, x1, y1) = self.bounding_box().ok_or(Error::EmptyMask)?;
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut data = Vec::with_capacity(w * h);
        for y in y0..=y1 {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x1 + 1]);
        }
        Ok(Mask {
            width: w,
            height: h,
            data,
        })
    }

    /// Crops to the foreground and area-resamples into a `size`x`size` frame.
    ///
    /// Cells with coverage >= 0.5 are set. The output always touches all four
    /// frame borders: a border row or column left empty by thresholding gets
    /// its best-covered cell set, which keeps the operation idempotent.
    pub fn canonicalize(&self, size: usize) -> Result<Mask> {
        if size == 0 {
            return Err(Error::invalid("canonical size must be positive"));
        }
        let crop = self.crop_to_shape()?;
        if crop.width == size && crop.height == size {
            return Ok(crop);
        }
        let cover = resample::resample_area(&crop.to_prob(), size, size)?;
        let mut out = cover.binarize_at_least(0.5);
        let last = size - 1;
        let borders: [Vec<(usize, usize)>; 4] = [
            (0..size).map(|x| (x, 0)).collect(),
            (0..size).map(|x| (x, last)).collect(),
            (0..size).map(|y| (0, y)).collect(),
            (0..size).map(|y| (last, y)).collect(),
        ];
        for line in &borders {
            if line.iter().any(|&(x, y)| out.get(x, y)) {
                continue;
            }
            let mut best = line[0];
            for &(x, y) in line {
                if cover.get(x, y) > cover.get(best.0, best.1) {
                    best = (x, y);
                }
            }
            out.set(best.0, best.1, true);
        }
        Ok(out)
    }
}

/// Intersection over union of two same-size masks.
///
/// Two empty masks agree perfectly and score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dims(format!(
            "iou of {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data.iter().zip(&b.data) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Row-major real-valued map, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::dims(format!(
                "{} values for a {width}x{height} map",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Like `from_vec` but values are not range-checked. Used for noisy codes
    /// and intermediate interpolation results.
    pub fn from_vec_unchecked(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::dims(format!(
                "{} values for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_vec(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sets pixels strictly above `threshold`.
    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v > threshold) as u8).collect(),
        }
    }

    pub(crate) fn binarize_at_least(&self, threshold: f64) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("zero-sized {width}x{height} grid")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bar(cells: &[u8]) -> Mask {
        Mask::from_vec(cells.len(), 1, cells.to_vec()).unwrap()
    }

    #[test]
    fn iou_trivial_cases() {
        let a = bar(&[1, 1, 0]);
        let b = bar(&[0, 1, 1]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&bar(&[1, 0, 0]), &bar(&[0, 0, 1])).unwrap(), 0.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let e = Mask::zeros(3, 1).unwrap();
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &a).unwrap(), 0.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let a = Mask::zeros(3, 1).unwrap();
        let b = Mask::zeros(1, 3).unwrap();
        assert!(matches!(iou(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mask_rejects_bad_values() {
        assert!(Mask::from_vec(2, 1, vec![0, 2]).is_err());
        assert!(Mask::from_vec(2, 2, vec![0, 1]).is_err());
        assert!(Mask::zeros(0, 3).is_err());
        assert!(ProbMap::from_vec(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn crop_single_pixel() {
        let mut m = Mask::zeros(9, 7).unwrap();
        m.set(4, 2, true);
        let c = m.crop_to_shape().unwrap();
        assert_eq!((c.width(), c.height()), (1, 1));
        assert_eq!(c.data(), &[1]);
    }

    #[test]
    fn crop_full_canvas_is_identity() {
        let m = Mask::ones(5, 3).unwrap();
        assert_eq!(m.crop_to_shape().unwrap(), m);
    }

    #[test]
    fn crop_l_shape_matches_minmax_scan() {
        let m = Mask::from_fn(20, 15, |x, y| (x == 4 && (3..11).contains(&y)) || (y == 10 && (4..13).contains(&x)))
            .unwrap();
        // oracle: per-row / per-column min-max scan
        let rows: Vec<usize> = (0..15).filter(|&y| (0..20).any(|x| m.get(x, y))).collect();
        let cols: Vec<usize> = (0..20).filter(|&x| (0..15).any(|y| m.get(x, y))).collect();
        let (x0, x1) = (cols[0], *cols.last().unwrap());
        let (y0, y1) = (rows[0], *rows.last().unwrap());
        let c = m.crop_to_shape().unwrap();
        assert_eq!((c.width(), c.height()), (x1 - x0 + 1, y1 - y0 + 1));
        for y in 0..c.height() {
            for x in 0..c.width() {
                assert_eq!(c.get(x, y), m.get(x + x0, y + y0));
            }
        }
    }

    #[test]
    fn crop_empty_is_error() {
        assert!(matches!(
            Mask::zeros(4, 4).unwrap().crop_to_shape(),
            Err(Error::EmptyMask)
        ));
        assert!(Mask::zeros(4, 4).unwrap().canonicalize(64).is_err());
    }

    #[test]
    fn canonicalize_full_square() {
        for s in [3, 17, 64, 100] {
            let c = Mask::ones(s, s).unwrap().canonicalize(64).unwrap();
            assert_eq!(c, Mask::ones(64, 64).unwrap());
        }
    }

    #[test]
    fn canonicalize_disk_fills_frame() {
        let (cx, cy, r) = (150.0, 120.0, 47.3);
        let m = Mask::from_fn(300, 260, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            dx * dx + dy * dy <= r * r
        })
        .unwrap();
        let c = m.canonicalize(64).unwrap();
        // analytic disk inscribed in the 64x64 frame
        let disk = Mask::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - 32.0, y as f64 + 0.5 - 32.0);
            dx * dx + dy * dy <= 32.0 * 32.0
        })
        .unwrap();
        assert!(iou(&c, &disk).unwrap() >= 0.97);
    }

    #[test]
    fn canonicalize_keeps_tight_canonical_mask() {
        let m = Mask::from_fn(64, 64, |x, y| x == 0 || y == 63 || x + y == 63 || (x < 10 && y < 5)).unwrap();
        assert_eq!(m.canonicalize(64).unwrap(), m);
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        (1usize..40, 1usize..40)
            .prop_flat_map(|(w, h)| {
                (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.3), w * h))
            })
            .prop_map(|(w, h, bits)| Mask::from_vec(w, h, bits.into_iter().map(u8::from).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in arb_mask(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = Mask::from_fn(a.width(), a.height(), |_, _| rng.random_bool(0.4)).unwrap();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            if !a.is_empty() {
                prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn canonicalize_is_idempotent(m in arb_mask()) {
            prop_assume!(!m.is_empty());
            let once = m.canonicalize(64).unwrap();
            let twice = once.canonicalize(64).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
