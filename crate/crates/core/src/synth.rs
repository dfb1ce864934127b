//! Seeded synthetic shape corpora.
//!
//! Shapes are drawn from a handful of parametric families, rasterized by
//! testing pixel centres, and optionally tagged with a synthetic pose whose
//! distribution is centred differently for each family.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::pnm::{self, PbmFormat};
use crate::raster::fill_polygon;
use crate::records::{self, ManifestRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Disk,
    Ellipse,
    Rectangle,
    RegularPolygon,
    Cross,
    Blob,
    CShape,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Disk,
        Family::Ellipse,
        Family::Rectangle,
        Family::RegularPolygon,
        Family::Cross,
        Family::Blob,
        Family::CShape,
    ];

    /// Families whose members are convex.
    pub const CONVEX: [Family; 4] = [Family::Disk, Family::Ellipse, Family::Rectangle, Family::RegularPolygon];

    pub fn name(self) -> &'static str {
        match self {
            Family::Disk => "disk",
            Family::Ellipse => "ellipse",
            Family::Rectangle => "rectangle",
            Family::RegularPolygon => "regular-polygon",
            Family::Cross => "cross",
            Family::Blob => "blob",
            Family::CShape => "c-shape",
        }
    }

    fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).expect("listed")
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape family '{s}'")))
    }
}

/// Parse a comma-separated family list such as `disk,cross`.
pub fn parse_families(s: &str) -> Result<Vec<Family>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Ellipse with semi-axes `a`, `b` rotated by `angle`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl EllipseParams {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Parameters of one generated shape, in canvas pixel units.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Ellipse(EllipseParams),
    Rectangle { cx: f64, cy: f64, w: f64, h: f64, angle: f64 },
    RegularPolygon { cx: f64, cy: f64, r: f64, sides: usize, angle: f64 },
    Cross { cx: f64, cy: f64, arm: f64, width: f64, angle: f64 },
    Blob(Vec<EllipseParams>),
    /// Annulus with a wedge of half-angle `gap` removed around `opening`.
    CShape { cx: f64, cy: f64, r_outer: f64, r_inner: f64, opening: f64, gap: f64 },
}

fn rotated_rect(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Vec<(f64, f64)> {
    let (s, c) = angle.sin_cos();
    [(-w, -h), (w, -h), (w, h), (-w, h)]
        .iter()
        .map(|&(u, v)| (cx + (u * c - v * s) / 2.0, cy + (u * s + v * c) / 2.0))
        .collect()
}

impl Shape {
    pub fn rasterize(&self, width: usize, height: usize) -> Result<Mask> {
        let by_centre = |f: &dyn Fn(f64, f64) -> bool| {
            Mask::from_fn(width, height, |x, y| f(x as f64 + 0.5, y as f64 + 0.5))
        };
        match self {
            Shape::Disk { cx, cy, r } => by_centre(&|x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r),
            Shape::Ellipse(e) => by_centre(&|x, y| e.contains(x, y)),
            Shape::Rectangle { cx, cy, w, h, angle } => {
                Ok(fill_polygon(&rotated_rect(*cx, *cy, *w, *h, *angle), width, height))
            }
            Shape::RegularPolygon { cx, cy, r, sides, angle } => {
                let pts: Vec<(f64, f64)> = (0..*sides)
                    .map(|i| {
                        let t = angle + TAU * i as f64 / *sides as f64;
                        (cx + r * t.cos(), cy + r * t.sin())
                    })
                    .collect();
                Ok(fill_polygon(&pts, width, height))
            }
            Shape::Cross { cx, cy, arm, width: bar, angle } => {
                let a = fill_polygon(&rotated_rect(*cx, *cy, 2.0 * arm, *bar, *angle), width, height);
                let b = fill_polygon(&rotated_rect(*cx, *cy, *bar, 2.0 * arm, *angle), width, height);
                Mask::from_fn(width, height, |x, y| a.get(x, y) || b.get(x, y))
            }
            Shape::Blob(parts) => by_centre(&|x, y| parts.iter().any(|e| e.contains(x, y))),
            Shape::CShape { cx, cy, r_outer, r_inner, opening, gap } => by_centre(&|x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let d2 = dx * dx + dy * dy;
                if d2 > r_outer * r_outer || d2 < r_inner * r_inner {
                    return false;
                }
                let off = (dy.atan2(dx) - opening).rem_euclid(TAU);
                off > *gap && off < TAU - gap
            }),
        }
    }

    fn sample(family: Family, canvas: usize, rng: &mut ChaCha8Rng) -> Shape {
        let c = canvas as f64;
        let centre = |rng: &mut ChaCha8Rng| (c * rng.random_range(0.42..0.58), c * rng.random_range(0.42..0.58));
        let angle = rng.random_range(0.0..PI);
        match family {
            Family::Disk => {
                let (cx, cy) = centre(rng);
                Shape::Disk { cx, cy, r: c * rng.random_range(0.15..0.38) }
            }
            Family::Ellipse => {
                let (cx, cy) = centre(rng);
                let a = c * rng.random_range(0.2..0.38);
                let b = a * rng.random_range(0.35..0.8);
                Shape::Ellipse(EllipseParams { cx, cy, a, b, angle })
            }
            Family::Rectangle => {
                let (cx, cy) = centre(rng);
                let w = c * rng.random_range(0.3..0.6);
                let h = w * rng.random_range(0.35..1.0);
                Shape::Rectangle { cx, cy, w, h, angle }
            }
            Family::RegularPolygon => {
                let (cx, cy) = centre(rng);
                let sides = rng.random_range(3..=8);
                Shape::RegularPolygon { cx, cy, r: c * rng.random_range(0.2..0.38), sides, angle }
            }
            Family::Cross => {
                let (cx, cy) = centre(rng);
                let arm = c * rng.random_range(0.25..0.38);
                let width = arm * rng.random_range(0.35..0.6);
                Shape::Cross { cx, cy, arm, width, angle }
            }
            Family::Blob => {
                let (cx, cy) = centre(rng);
                let n = rng.random_range(2..=5);
                let parts = (0..n)
                    .map(|_| {
                        let a = c * rng.random_range(0.08..0.2);
                        EllipseParams {
                            cx: cx + c * rng.random_range(-0.15..0.15),
                            cy: cy + c * rng.random_range(-0.15..0.15),
                            a,
                            b: a * rng.random_range(0.4..1.0),
                            angle: rng.random_range(0.0..PI),
                        }
                    })
                    .collect();
                Shape::Blob(parts)
            }
            Family::CShape => {
                let (cx, cy) = centre(rng);
                let r_outer = c * rng.random_range(0.25..0.38);
                Shape::CShape {
                    cx,
                    cy,
                    r_outer,
                    r_inner: r_outer * rng.random_range(0.45..0.65),
                    opening: rng.random_range(0.0..TAU),
                    gap: rng.random_range(0.5..1.0),
                }
            }
        }
    }
}

/// Synthetic viewpoint: angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl Pose {
    fn sample(family: Family, rng: &mut ChaCha8Rng) -> Pose {
        let i = family.index() as f64;
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let azimuth = (i * TAU / 7.0 + 0.2 * n.sample(rng)).rem_euclid(TAU);
        let elevation = (-0.6 + 0.2 * i + 0.05 * n.sample(rng)).clamp(-PI / 2.0, PI / 2.0);
        let distance = (2.0 + 0.5 * i + 0.1 * n.sample(rng)).max(0.1);
        Pose { azimuth, elevation, distance }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub families: Vec<Family>,
    pub count: usize,
    pub canvas: usize,
    pub seed: u64,
    pub poses: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            count: 10,
            canvas: 64,
            seed: 0,
            poses: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub family: Family,
    pub shape: Shape,
    pub mask: Mask,
    pub pose: Option<Pose>,
}

impl SynthItem {
    pub fn record(&self) -> ManifestRecord {
        ManifestRecord {
            id: self.id.clone(),
            category: self.family.name().to_string(),
            azimuth_deg: self.pose.map(|p| p.azimuth.to_degrees()),
            elevation_deg: self.pose.map(|p| p.elevation.to_degrees()),
            distance: self.pose.map(|p| p.distance),
            mask_path: format!("masks/{}.pbm", self.id),
        }
    }
}

/// Generates `count` shapes per family, families in the order given.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthItem>> {
    if spec.count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if spec.canvas < 16 {
        return Err(Error::invalid(format!("canvas {} is smaller than 16", spec.canvas)));
    }
    if spec.families.is_empty() {
        return Err(Error::invalid("no shape families requested"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.families.len() * spec.count);
    for &family in &spec.families {
        for i in 0..spec.count {
            let (shape, mask) = loop {
                let s = Shape::sample(family, spec.canvas, &mut rng);
                let m = s.rasterize(spec.canvas, spec.canvas)?;
                if !m.is_empty() {
                    break (s, m);
                }
            };
            let pose = spec.poses.then(|| Pose::sample(family, &mut rng));
            out.push(SynthItem {
                id: format!("{}-{i:04}", family.name()),
                family,
                shape,
                mask,
                pose,
            });
        }
    }
    Ok(out)
}

/// Writes `masks/<id>.pbm` (raw P4) and `manifest.jsonl` under `dir`.
pub fn write_dataset(items: &[SynthItem], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let masks = dir.join("masks");
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut recs = Vec::with_capacity(items.len());
    for it in items {
        let rec = it.record();
        pnm::write_pbm(dir.join(&rec.mask_path), &it.mask, PbmFormat::Raw)?;
        recs.push(rec);
    }
    records::save_jsonl(dir.join("manifest.jsonl"), &recs)
}
