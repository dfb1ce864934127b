//! Grid detection targets, the shape-aware detection loss and its gradient,
//! prediction decoding and shape-level non-maximum suppression.
//!
//! Tensor layout is cell-major. Cell `row * S + col` holds `B` predictor
//! blocks of `[conf, x, y, sqrt_w, sqrt_h, shape(d)]` followed by the class
//! probabilities. `x`, `y` are the box centre's offset inside the cell.

use crate::code::{ShapeCode, ShapeCodec};
use crate::error::{Error, Result};
use crate::mask::{iou, Mask};
use crate::resample::resize_nearest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub s: usize,
    pub b: usize,
    pub num_classes: usize,
    pub shape_dim: usize,
}

impl GridSpec {
    pub fn new(num_classes: usize, shape_dim: usize) -> Self {
        Self { s: 7, b: 2, num_classes, shape_dim }
    }

    /// Values per predictor block.
    pub fn n(&self) -> usize {
        5 + self.shape_dim
    }

    pub fn cell_len(&self) -> usize {
        self.n() * self.b + self.num_classes
    }

    pub fn len(&self) -> usize {
        self.s * self.s * self.cell_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, cell: usize, j: usize) -> usize {
        cell * self.cell_len() + j * self.n()
    }

    pub fn classes(&self, cell: usize) -> usize {
        cell * self.cell_len() + self.n() * self.b
    }

    /// Cell holding a normalized centre, with the in-cell offsets.
    pub fn locate(&self, cx: f64, cy: f64) -> (usize, f64, f64) {
        let s = self.s as f64;
        let col = ((cx * s).floor() as usize).min(self.s - 1);
        let row = ((cy * s).floor() as usize).min(self.s - 1);
        (row * self.s + col, cx * s - col as f64, cy * s - row as f64)
    }

    fn check(&self, t: &[f64], what: &str) -> Result<()> {
        if t.len() != self.len() {
            return Err(Error::dims(format!("{what} has length {}, grid expects {}", t.len(), self.len())));
        }
        Ok(())
    }
}

/// Normalized `(cx, cy, w, h)`.
pub type BoxCoords = [f64; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub category: usize,
    pub bbox: BoxCoords,
    pub shape: ShapeCode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub shape: f64,
    pub bbox: f64,
    pub obj: f64,
    pub noobj: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { shape: 0.1, bbox: 5.0, obj: 1.0, noobj: 0.5, class: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub bbox: f64,
    pub conf: f64,
    pub shape: f64,
    pub pmf: f64,
}

/// Writes each instance into the cell containing its centre. Both predictor
/// blocks receive the same target. A second instance landing in an occupied
/// cell is dropped with a warning.
pub fn build_target(instances: &[GroundTruth], spec: &GridSpec) -> Result<Vec<f64>> {
    if spec.s == 0 || spec.b == 0 {
        return Err(Error::invalid("grid needs at least one cell and one predictor"));
    }
    let mut t = vec![0.0; spec.len()];
    let mut taken = vec![false; spec.s * spec.s];
    for (k, inst) in instances.iter().enumerate() {
        let [cx, cy, w, h] = inst.bbox;
        if !(w > 0.0 && h > 0.0) || inst.bbox.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("instance {k}: box {:?} outside the unit square", inst.bbox)));
        }
        if inst.shape.dim() != spec.shape_dim {
            return Err(Error::dims(format!(
                "instance {k}: shape code of length {}, grid expects {}",
                inst.shape.dim(),
                spec.shape_dim
            )));
        }
        if inst.category >= spec.num_classes {
            return Err(Error::invalid(format!(
                "instance {k}: category {} out of {} classes",
                inst.category, spec.num_classes
            )));
        }
        let (cell, x, y) = spec.locate(cx, cy);
        if taken[cell] {
            log::warn!("instance {k} dropped: cell {cell} already holds an object");
            continue;
        }
        taken[cell] = true;
        for j in 0..spec.b {
            let o = spec.block(cell, j);
            t[o..o + 5].copy_from_slice(&[1.0, x, y, w.sqrt(), h.sqrt()]);
            t[o + 5..o + spec.n()].copy_from_slice(&inst.shape.values);
        }
        t[spec.classes(cell) + inst.category] = 1.0;
    }
    Ok(t)
}

/// Image-space box of a predictor block: centre from the cell offsets, size
/// from the squared root-dimensions.
fn block_box(v: &[f64], cell: usize, s: usize) -> BoxCoords {
    let (row, col) = ((cell / s) as f64, (cell % s) as f64);
    let sf = s as f64;
    [(col + v[1]) / sf, (row + v[2]) / sf, v[3] * v[3], v[4] * v[4]]
}

/// IoU of two `(cx, cy, w, h)` boxes.
pub fn box_iou(a: &BoxCoords, b: &BoxCoords) -> f64 {
    box_iou_grad(a, b).0
}

/// IoU and its gradient with respect to the first box's `(cx, cy, w, h)`.
fn box_iou_grad(a: &BoxCoords, b: &BoxCoords) -> (f64, [f64; 4]) {
    let edges = |c: f64, s: f64| (c - s / 2.0, c + s / 2.0);
    let (al, ar) = edges(a[0], a[2]);
    let (at, ab) = edges(a[1], a[3]);
    let (bl, br) = edges(b[0], b[2]);
    let (bt, bb) = edges(b[1], b[3]);
    let ix = ar.min(br) - al.max(bl);
    let iy = ab.min(bb) - at.max(bt);
    // areas from the same edges as the intersection so identical boxes give exactly 1
    let area_a = (ar - al) * (ab - at);
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    let union = area_a + (br - bl) * (bb - bt) - inter;
    if union <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let v = inter / union;
    // d(ix)/d(cx, w) from whichever edge is binding
    let (hi, lo) = ((ar < br) as u8 as f64, (al > bl) as u8 as f64);
    let (hy, ly) = ((ab < bb) as u8 as f64, (at > bt) as u8 as f64);
    let mut d_inter = [0.0; 4];
    if inter > 0.0 {
        d_inter = [iy * (hi - lo), ix * (hy - ly), iy * 0.5 * (hi + lo), ix * 0.5 * (hy + ly)];
    }
    let d_area = [0.0, 0.0, ab - at, ar - al];
    let mut g = [0.0; 4];
    for k in 0..4 {
        // d(I/U) with dU = dA - dI
        g[k] = (d_inter[k] * (union + inter) - inter * d_area[k]) / (union * union);
    }
    (v, g)
}

/// Responsible predictor for an object cell: best box IoU with the target,
/// ties to the lowest index.
fn responsible(pred: &[f64], target: &[f64], cell: usize, spec: &GridSpec) -> (usize, f64) {
    let gt = block_box(&target[spec.block(cell, 0)..], cell, spec.s);
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..spec.b {
        let v = box_iou(&block_box(&pred[spec.block(cell, j)..], cell, spec.s), &gt);
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn is_object_cell(target: &[f64], cell: usize, spec: &GridSpec) -> bool {
    target[spec.block(cell, 0)] > 0.0
}

/// Sum-squared detection loss with a shape term.
///
/// In object cells only the responsible predictor is penalized: box offsets
/// and root sizes, confidence against the current box IoU, and the shape
/// code; class probabilities are penalized per object cell. Predictors in
/// empty cells are pushed towards zero confidence.
pub fn detection_loss(pred: &[f64], target: &[f64], spec: &GridSpec, w: &LossWeights) -> Result<LossBreakdown> {
    spec.check(pred, "prediction")?;
    spec.check(target, "target")?;
    let mut l = LossBreakdown::default();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    for cell in 0..spec.s * spec.s {
        if is_object_cell(target, cell, spec) {
            let (j, v) = responsible(pred, target, cell, spec);
            let (p, t) = (spec.block(cell, j), spec.block(cell, 0));
            l.bbox += w.bbox * sq(&pred[p + 1..p + 5], &target[t + 1..t + 5]);
            l.conf += w.obj * (pred[p] - v).powi(2);
            l.shape += w.shape * sq(&pred[p + 5..p + spec.n()], &target[t + 5..t + spec.n()]);
            let c = spec.classes(cell);
            l.pmf += w.class * sq(&pred[c..c + spec.num_classes], &target[c..c + spec.num_classes]);
        } else {
            for j in 0..spec.b {
                l.conf += w.noobj * pred[spec.block(cell, j)].powi(2);
            }
        }
    }
    l.total = l.bbox + l.conf + l.shape + l.pmf;
    Ok(l)
}

/// Analytic gradient of [`detection_loss`] with respect to the prediction,
/// including the dependence of the confidence target on the predicted box.
pub fn detection_loss_grad(pred: &[f64], target: &[f64], spec: &GridSpec, w: &LossWeights) -> Result<Vec<f64>> {
    spec.check(pred, "prediction")?;
    spec.check(target, "target")?;
    let mut g = vec![0.0; pred.len()];
    let sf = spec.s as f64;
    for cell in 0..spec.s * spec.s {
        if is_object_cell(target, cell, spec) {
            let (j, _) = responsible(pred, target, cell, spec);
            let (p, t) = (spec.block(cell, j), spec.block(cell, 0));
            let pb = block_box(&pred[p..], cell, spec.s);
            let gb = block_box(&target[t..], cell, spec.s);
            let (v, dv) = box_iou_grad(&pb, &gb);
            let r = pred[p] - v;
            g[p] = 2.0 * w.obj * r;
            // chain through cx = (col + x) / S and w = sqrt_w^2
            let dbox = [dv[0] / sf, dv[1] / sf, dv[2] * 2.0 * pred[p + 3], dv[3] * 2.0 * pred[p + 4]];
            for k in 0..4 {
                g[p + 1 + k] = 2.0 * w.bbox * (pred[p + 1 + k] - target[t + 1 + k]) - 2.0 * w.obj * r * dbox[k];
            }
            for k in 5..spec.n() {
                g[p + k] = 2.0 * w.shape * (pred[p + k] - target[t + k]);
            }
            let c = spec.classes(cell);
            for k in c..c + spec.num_classes {
                g[k] = 2.0 * w.class * (pred[k] - target[k]);
            }
        } else {
            for j in 0..spec.b {
                let p = spec.block(cell, j);
                g[p] = 2.0 * w.noobj * pred[p];
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub category: usize,
    pub score: f64,
    pub bbox: BoxCoords,
    pub shape: Vec<f64>,
}

/// Emits one detection per (cell, predictor, class) whose class-specific
/// score `class_prob * confidence` exceeds `score_threshold`.
pub fn decode_predictions(pred: &[f64], spec: &GridSpec, score_threshold: f64) -> Result<Vec<Detection>> {
    spec.check(pred, "prediction")?;
    if !(score_threshold >= 0.0) {
        return Err(Error::invalid(format!("score threshold {score_threshold} must be >= 0")));
    }
    let mut out = Vec::new();
    for cell in 0..spec.s * spec.s {
        let c = spec.classes(cell);
        for j in 0..spec.b {
            let p = spec.block(cell, j);
            for k in 0..spec.num_classes {
                let score = pred[c + k] * pred[p];
                if score > score_threshold {
                    out.push(Detection {
                        category: k,
                        score,
                        bbox: block_box(&pred[p..], cell, spec.s),
                        shape: pred[p + 5..p + spec.n()].to_vec(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covered by a normalized box.
pub fn box_pixels(bbox: &BoxCoords, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let span = |c: f64, s: f64, n: usize| {
        let lo = ((c - s / 2.0) * n as f64).round().clamp(0.0, n as f64) as usize;
        let hi = ((c + s / 2.0) * n as f64).round().clamp(0.0, n as f64) as usize;
        (lo, hi)
    };
    let (x0, x1) = span(bbox[0], bbox[2], width);
    let (y0, y1) = span(bbox[1], bbox[3], height);
    (x0, x1, y0, y1)
}

/// Decodes a shape code in the codec's canonical frame and pastes it,
/// nearest-neighbour resized, into the box on a `width x height` canvas.
pub fn place_shape(
    codec: &dyn ShapeCodec,
    shape: &[f64],
    bbox: &BoxCoords,
    frame: usize,
    width: usize,
    height: usize,
) -> Result<Mask> {
    let mut canvas = Mask::zeros(width, height)?;
    let (x0, x1, y0, y1) = box_pixels(bbox, width, height);
    if x1 <= x0 || y1 <= y0 {
        return Ok(canvas);
    }
    let canon = codec.decode(&codec.wrap(shape.to_vec())?, frame, frame)?;
    let local = resize_nearest(&canon, x1 - x0, y1 - y0)?;
    for y in y0..y1 {
        for x in x0..x1 {
            if local.get(x - x0, y - y0) {
                canvas.set(x, y, true);
            }
        }
    }
    Ok(canvas)
}

/// Overlap measure used by [`nms_shapes`].
pub enum Overlap<'a> {
    Box,
    /// Placed masks, parallel to the detections.
    Mask(&'a [Mask]),
}

/// Greedy per-category suppression. Returns indices of survivors in
/// descending score order (ties keep input order).
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, overlap: &Overlap) -> Result<Vec<usize>> {
    if let Overlap::Mask(m) = overlap {
        if m.len() != dets.len() {
            return Err(Error::dims(format!("{} masks for {} detections", m.len(), dets.len())));
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &k in &order[pos + 1..] {
            if suppressed[k] || dets[k].category != dets[i].category {
                continue;
            }
            let o = match overlap {
                Overlap::Box => box_iou(&dets[i].bbox, &dets[k].bbox),
                Overlap::Mask(m) => iou(&m[i], &m[k])?,
            };
            if o > iou_threshold {
                suppressed[k] = true;
            }
        }
    }
    Ok(keep)
}

pub fn nms_shapes(dets: &[Detection], iou_threshold: f64, overlap: &Overlap) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, iou_threshold, overlap)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}
