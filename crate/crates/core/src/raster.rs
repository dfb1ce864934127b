//! Even-odd scanline polygon fill sampled at pixel centres.

use crate::mask::Mask;

/// Rasterizes a closed polygon: pixel `(x, y)` is set when its centre
/// `(x + 0.5, y + 0.5)` lies inside under the even-odd rule.
pub fn fill_polygon(vertices: &[(f64, f64)], width: usize, height: usize) -> Mask {
    let mut m = Mask::zeros(width, height).expect("non-zero raster size");
    let n = vertices.len();
    if n < 3 {
        return m;
    }
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = vertices[i];
            let (x1, y1) = vertices[(i + 1) % n];
            // half-open in y so shared vertices count once
            if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // centres x + 0.5 in [a, b)
            let first = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(width as f64);
            if end <= first {
                continue;
            }
            for x in first as usize..end as usize {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Shoelace area.
pub fn polygon_area(vertices: &[(f64, f64)]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}
