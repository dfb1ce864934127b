//! Codec comparisons: reconstruction error, robustness of decoding to code
//! noise, and how pose and category are organized among nearest neighbours
//! in code space.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::code::{CodecId, ShapeCode, ShapeCodec};
use crate::error::{Error, Result};
use crate::mask::{iou, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct ReconReport {
    pub codec: CodecId,
    pub dim: usize,
    pub mean_error: f64,
}

/// `1 - IoU` between a mask's canonical frame and its decoded code, per mask.
pub fn recon_errors(corpus: &[Mask], codec: &dyn ShapeCodec, frame: usize) -> Result<Vec<f64>> {
    corpus
        .par_iter()
        .map(|m| {
            let canon = m.canonicalize(frame)?;
            let back = codec.decode(&codec.encode(m)?, frame, frame)?;
            Ok(1.0 - iou(&canon, &back)?)
        })
        .collect()
}

/// Mean reconstruction error of each codec over the corpus.
pub fn recon_table(corpus: &[Mask], codecs: &[&dyn ShapeCodec], frame: usize) -> Result<Vec<ReconReport>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    codecs
        .iter()
        .map(|c| {
            let e = recon_errors(corpus, *c, frame)?;
            Ok(ReconReport {
                codec: c.id(),
                dim: c.dim(),
                mean_error: e.iter().sum::<f64>() / e.len() as f64,
            })
        })
        .collect()
}

pub fn recon_csv(rows: &[ReconReport]) -> String {
    let mut s = String::from("codec,dim,mean_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.codec, r.dim, r.mean_error);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePoint {
    pub sigma: f64,
    pub mean_iou: f64,
}

/// For each sigma, adds `N(0, sigma^2)` to every code element, decodes, and
/// averages the IoU with the canonical mask over `trials` passes of the
/// corpus. Noise is drawn sequentially from one seeded stream (sigma, then
/// trial, then mask, then element), so results do not depend on threading.
pub fn noise_sweep(
    corpus: &[Mask],
    codec: &dyn ShapeCodec,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
    frame: usize,
) -> Result<Vec<NoisePoint>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("noise sigma {s} must be finite and >= 0")));
    }
    let prepared: Vec<(Mask, ShapeCode)> = corpus
        .par_iter()
        .map(|m| Ok((m.canonicalize(frame)?, codec.encode(m)?)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut jobs = Vec::with_capacity(trials * prepared.len());
        for _ in 0..trials {
            for (i, (_, code)) in prepared.iter().enumerate() {
                let values: Vec<f64> = code
                    .values
                    .iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + sigma * z
                    })
                    .collect();
                jobs.push((i, ShapeCode::new(values, code.meta)));
            }
        }
        let ious: Vec<f64> = jobs
            .par_iter()
            .map(|(i, code)| iou(&prepared[*i].0, &codec.decode(code, frame, frame)?))
            .collect::<Result<_>>()?;
        out.push(NoisePoint {
            sigma,
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
        });
    }
    Ok(out)
}

pub fn noise_csv(codec: CodecId, dim: usize, points: &[NoisePoint]) -> String {
    let mut s = String::from("codec,dim,sigma,mean_iou\n");
    for p in points {
        let _ = writeln!(s, "{codec},{dim},{},{}", p.sigma, p.mean_iou);
    }
    s
}

/// Viewpoint and category of an annotated shape; angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseAnnotation {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub category: usize,
}

impl PoseAnnotation {
    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64, distance: f64, category: usize) -> Result<Self> {
        let p = Self {
            azimuth: azimuth_deg.to_radians().rem_euclid(TAU),
            elevation: elevation_deg.to_radians(),
            distance,
            category,
        };
        if p.elevation.abs() > PI / 2.0 + 1e-12 || !(distance > 0.0) {
            return Err(Error::invalid(format!(
                "pose out of range: elevation {elevation_deg} deg, distance {distance}"
            )));
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryNeighbours {
    pub category: usize,
    pub val_items: usize,
    /// Modal category over the pooled neighbours of this category's items.
    pub majority_class: usize,
    pub majority_matches: bool,
    /// Mean over items of the fraction of neighbours in the item's own
    /// neighbour-majority class.
    pub majority_share: f64,
    /// Fraction of items whose neighbour-majority class is their own class.
    pub majority_accuracy: f64,
    pub var_azimuth: f64,
    pub var_elevation: f64,
    pub var_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnStats {
    pub k: usize,
    pub mav_azimuth: f64,
    pub mav_elevation: f64,
    pub mav_distance: f64,
    /// Category mean of `majority_share`.
    pub ma_percent: f64,
    /// Category mean of `majority_accuracy`.
    pub majority_accuracy: f64,
    pub categories: Vec<CategoryNeighbours>,
}

/// `k` nearest rows of `train` to `q` by Euclidean distance; ties go to the
/// lower index.
pub fn nearest(train: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (t.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Wrapped variance of angles about their circular mean.
pub fn circular_variance(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let mu = s.atan2(c);
    angles
        .iter()
        .map(|a| {
            let d = (a - mu + PI).rem_euclid(TAU) - PI;
            d * d
        })
        .sum::<f64>()
        / angles.len() as f64
}

/// Population variance (denominator `n`).
pub fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Most frequent label; ties go to the smallest label.
fn modal(labels: impl Iterator<Item = usize>) -> (usize, usize) {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .fold((0, 0), |best, (l, n)| if n > best.1 { (l, n) } else { best })
}

struct ItemStats {
    category: usize,
    neighbours: Vec<usize>,
    var: [f64; 3],
    majority: usize,
    share: f64,
}

/// Pose variance and category agreement among each validation item's `k`
/// nearest training codes, averaged per category and then over categories.
pub fn nn_stats(
    train: &[(Vec<f64>, PoseAnnotation)],
    val: &[(Vec<f64>, PoseAnnotation)],
    k: usize,
) -> Result<NnStats> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("nearest-neighbour statistics need train and validation codes"));
    }
    if k == 0 || k > train.len() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", train.len())));
    }
    let dim = train[0].0.len();
    if let Some((c, _)) = train.iter().chain(val).find(|(c, _)| c.len() != dim) {
        return Err(Error::dims(format!("code of length {}, expected {dim}", c.len())));
    }
    let codes: Vec<Vec<f64>> = train.iter().map(|(c, _)| c.clone()).collect();
    let items: Vec<ItemStats> = val
        .par_iter()
        .map(|(q, pose)| {
            let nb = nearest(&codes, q, k);
            let poses: Vec<&PoseAnnotation> = nb.iter().map(|&i| &train[i].1).collect();
            let az: Vec<f64> = poses.iter().map(|p| p.azimuth).collect();
            let el: Vec<f64> = poses.iter().map(|p| p.elevation).collect();
            let di: Vec<f64> = poses.iter().map(|p| p.distance).collect();
            let (majority, n) = modal(poses.iter().map(|p| p.category));
            ItemStats {
                category: pose.category,
                neighbours: nb,
                var: [circular_variance(&az), variance(&el), variance(&di)],
                majority,
                share: n as f64 / k as f64,
            }
        })
        .collect();

    let mut by_cat: BTreeMap<usize, Vec<&ItemStats>> = BTreeMap::new();
    for it in &items {
        by_cat.entry(it.category).or_default().push(it);
    }
    let categories: Vec<CategoryNeighbours> = by_cat
        .into_iter()
        .map(|(cat, its)| {
            let n = its.len() as f64;
            let mean = |f: &dyn Fn(&ItemStats) -> f64| its.iter().map(|i| f(i)).sum::<f64>() / n;
            let (majority_class, _) = modal(its.iter().flat_map(|i| i.neighbours.iter().map(|&t| train[t].1.category)));
            CategoryNeighbours {
                category: cat,
                val_items: its.len(),
                majority_class,
                majority_matches: majority_class == cat,
                majority_share: mean(&|i| i.share),
                majority_accuracy: mean(&|i| (i.majority == cat) as u8 as f64),
                var_azimuth: mean(&|i| i.var[0]),
                var_elevation: mean(&|i| i.var[1]),
                var_distance: mean(&|i| i.var[2]),
            }
        })
        .collect();
    let nc = categories.len() as f64;
    let avg = |f: fn(&CategoryNeighbours) -> f64| categories.iter().map(f).sum::<f64>() / nc;
    Ok(NnStats {
        k,
        mav_azimuth: avg(|c| c.var_azimuth),
        mav_elevation: avg(|c| c.var_elevation),
        mav_distance: avg(|c| c.var_distance),
        ma_percent: avg(|c| c.majority_share),
        majority_accuracy: avg(|c| c.majority_accuracy),
        categories,
    })
}

pub fn nn_csv(codec: CodecId, dim: usize, s: &NnStats, names: &dyn Fn(usize) -> String) -> String {
    let mut out = String::from("codec,dim,category,metric,value\n");
    let mut row = |cat: &str, metric: &str, v: f64| {
        let _ = writeln!(out, "{codec},{dim},{cat},{metric},{v}");
    };
    for c in &s.categories {
        let n = names(c.category);
        row(&n, "var_azimuth", c.var_azimuth);
        row(&n, "var_elevation", c.var_elevation);
        row(&n, "var_distance", c.var_distance);
        row(&n, "majority_share", c.majority_share);
        row(&n, "majority_accuracy", c.majority_accuracy);
        row(&n, "majority_matches", c.majority_matches as u8 as f64);
    }
    row("mean", "mav_azimuth", s.mav_azimuth);
    row("mean", "mav_elevation", s.mav_elevation);
    row("mean", "mav_distance", s.mav_distance);
    row("mean", "ma_percent", s.ma_percent);
    row("mean", "majority_accuracy", s.majority_accuracy);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridCodec;
    use crate::radial::RadialCodec;
    use proptest::prelude::*;
    use rand::Rng;

    fn pose(az_deg: f64, el_deg: f64, d: f64, c: usize) -> PoseAnnotation {
        PoseAnnotation::from_degrees(az_deg, el_deg, d, c).unwrap()
    }

    struct Identity;

    impl ShapeCodec for Identity {
        fn id(&self) -> CodecId {
            CodecId::RawTensor
        }
        fn dim(&self) -> usize {
            64 * 64
        }
        fn meta(&self) -> crate::code::CodecMeta {
            crate::code::CodecMeta::Raw
        }
        fn encode(&self, m: &Mask) -> Result<ShapeCode> {
            let c = m.canonicalize(64)?;
            Ok(ShapeCode::new(c.data().iter().map(|&v| v as f64).collect(), self.meta()))
        }
        fn decode(&self, code: &ShapeCode, w: usize, h: usize) -> Result<Mask> {
            let m = Mask::from_vec(64, 64, code.values.iter().map(|&v| (v > 0.5) as u8).collect())?;
            crate::resample::resize_nearest(&m, w, h)
        }
    }

    fn disks(n: usize, seed: u64) -> Vec<Mask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (rx, ry) = (rng.random_range(8.0..30.0), rng.random_range(8.0..30.0));
                Mask::from_fn(70, 70, |x, y| {
                    let (dx, dy) = (x as f64 + 0.5 - 35.0, y as f64 + 0.5 - 35.0);
                    (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn recon_trivial_cases() {
        let corpus = disks(5, 1);
        let r = recon_table(&corpus, &[&Identity], 64).unwrap();
        assert_eq!(r[0].mean_error, 0.0);
        let ones = vec![Mask::ones(30, 20).unwrap(), Mask::ones(5, 9).unwrap()];
        let grids: Vec<GridCodec> = [5, 7, 10].iter().map(|&k| GridCodec::new(k).unwrap()).collect();
        let refs: Vec<&dyn ShapeCodec> = grids.iter().map(|g| g as &dyn ShapeCodec).collect();
        for row in recon_table(&ones, &refs, 64).unwrap() {
            assert_eq!(row.mean_error, 0.0);
        }
        assert!(recon_table(&[], &refs, 64).is_err());
    }

    #[test]
    fn grid_error_drops_with_resolution() {
        let corpus = disks(30, 2);
        let (g5, g16) = (GridCodec::new(5).unwrap(), GridCodec::new(16).unwrap());
        let r = recon_table(&corpus, &[&g5, &g16], 64).unwrap();
        assert!(r[1].mean_error <= r[0].mean_error);
        assert_eq!(r, recon_table(&corpus, &[&g5, &g16], 64).unwrap());
        assert!(recon_csv(&r).starts_with("codec,dim,mean_error\ngrid,25,"));
    }

    #[test]
    fn zero_noise_is_clean_roundtrip() {
        let corpus = disks(6, 3);
        let codec = RadialCodec::new(20).unwrap();
        let clean: Vec<f64> = corpus
            .iter()
            .map(|m| iou(&m.canonicalize(64).unwrap(), &codec.decode(&codec.encode(m).unwrap(), 64, 64).unwrap()).unwrap())
            .collect();
        let pts = noise_sweep(&corpus, &codec, &[0.0], 1, 9, 64).unwrap();
        assert_eq!(pts[0].mean_iou, clean.iter().sum::<f64>() / 6.0);
        let three = noise_sweep(&corpus, &codec, &[0.0], 3, 9, 64).unwrap();
        assert!((three[0].mean_iou - pts[0].mean_iou).abs() < 1e-15);
    }

    #[test]
    fn heavy_noise_destroys_grid_codes() {
        let corpus = disks(5, 4);
        let codec = GridCodec::new(5).unwrap();
        let pts = noise_sweep(&corpus, &codec, &[0.0, 0.1, 10.0], 100, 1, 64).unwrap();
        assert!(pts[2].mean_iou < 0.5);
        assert!(pts[1].mean_iou <= pts[0].mean_iou + 0.02);
        assert_eq!(pts, noise_sweep(&corpus, &codec, &[0.0, 0.1, 10.0], 100, 1, 64).unwrap());
        assert!(noise_sweep(&corpus, &codec, &[0.1], 0, 1, 64).is_err());
    }

    #[test]
    fn identical_neighbour_poses_give_zero_variance() {
        let train: Vec<(Vec<f64>, PoseAnnotation)> =
            (0..10).map(|i| (vec![i as f64, 0.0], pose(30.0, 10.0, 2.0, i % 2))).collect();
        let val = vec![(vec![0.5, 0.1], pose(0.0, 0.0, 1.0, 0)), (vec![7.0, 0.0], pose(0.0, 0.0, 1.0, 1))];
        let s = nn_stats(&train, &val, 4).unwrap();
        assert_eq!((s.mav_azimuth, s.mav_elevation, s.mav_distance), (0.0, 0.0, 0.0));
    }

    #[test]
    fn five_point_manual_example() {
        // one validation item at the origin, k = 3 picks train items 0, 1, 2
        let train = vec![
            (vec![1.0], pose(350.0, 10.0, 1.0, 0)),
            (vec![-2.0], pose(10.0, 20.0, 2.0, 0)),
            (vec![3.0], pose(30.0, 30.0, 6.0, 1)),
            (vec![10.0], pose(180.0, -40.0, 9.0, 1)),
            (vec![-11.0], pose(90.0, 0.0, 3.0, 1)),
        ];
        let val = vec![(vec![0.0], pose(0.0, 0.0, 1.0, 0))];
        let s = nn_stats(&train, &val, 3).unwrap();
        // azimuths -10, 10, 30 deg: circular mean 10 deg, deviations -20, 0, 20
        let want_az = 2.0 * 20f64.to_radians().powi(2) / 3.0;
        assert!((s.mav_azimuth - want_az).abs() < 1e-12);
        // elevations 10, 20, 30 deg: mean 20, variance 200/3 deg^2
        assert!((s.mav_elevation - 200.0 / 3.0 * (PI / 180.0).powi(2)).abs() < 1e-12);
        // distances 1, 2, 6: mean 3, variance (4 + 1 + 9) / 3
        assert!((s.mav_distance - 14.0 / 3.0).abs() < 1e-12);
        assert!((s.ma_percent - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.majority_accuracy, 1.0);
        assert!(s.categories[0].majority_matches);
    }

    // Neighbours by repeated minimum selection; variances from raw moments.
    fn oracle(train: &[(Vec<f64>, PoseAnnotation)], val: &[(Vec<f64>, PoseAnnotation)], k: usize) -> [f64; 3] {
        let mut cats: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
        for (q, p) in val {
            let mut used = vec![false; train.len()];
            let mut nb = Vec::new();
            for _ in 0..k {
                let mut best = usize::MAX;
                let mut bd = f64::INFINITY;
                for (i, (t, _)) in train.iter().enumerate() {
                    let d: f64 = t.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
                    if !used[i] && d < bd {
                        bd = d;
                        best = i;
                    }
                }
                used[best] = true;
                nb.push(&train[best].1);
            }
            let kf = k as f64;
            let raw = |f: &dyn Fn(&PoseAnnotation) -> f64| {
                let m1: f64 = nb.iter().map(|p| f(p)).sum::<f64>() / kf;
                let m2: f64 = nb.iter().map(|p| f(p).powi(2)).sum::<f64>() / kf;
                m2 - m1 * m1
            };
            let mean_dir = nb.iter().map(|p| p.azimuth.sin()).sum::<f64>().atan2(nb.iter().map(|p| p.azimuth.cos()).sum::<f64>());
            let az = nb
                .iter()
                .map(|p| {
                    let mut d = p.azimuth - mean_dir;
                    while d > PI {
                        d -= TAU;
                    }
                    while d <= -PI {
                        d += TAU;
                    }
                    d * d
                })
                .sum::<f64>()
                / kf;
            cats.entry(p.category).or_default().push([az, raw(&|p| p.elevation), raw(&|p| p.distance)]);
        }
        let mut out = [0.0; 3];
        for v in cats.values() {
            for j in 0..3 {
                out[j] += v.iter().map(|x| x[j]).sum::<f64>() / v.len() as f64 / cats.len() as f64;
            }
        }
        out
    }

    fn clustered(seed: u64, n: usize) -> Vec<(Vec<f64>, PoseAnnotation)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 2;
                let code: Vec<f64> = (0..4).map(|_| c as f64 * 10.0 + rng.random_range(-1.0..1.0)).collect();
                let p = pose(
                    rng.random_range(0.0..360.0),
                    rng.random_range(-80.0..80.0),
                    rng.random_range(0.5..5.0),
                    c,
                );
                (code, p)
            })
            .collect()
    }

    #[test]
    fn separated_clusters_match_oracle() {
        let train = clustered(1, 60);
        let val = clustered(2, 12);
        let s = nn_stats(&train, &val, 20).unwrap();
        assert_eq!(s.categories.len(), 2);
        assert!(s.categories.iter().all(|c| c.majority_matches));
        assert_eq!(s.ma_percent, 1.0);
        let o = oracle(&train, &val, 20);
        assert!((s.mav_azimuth - o[0]).abs() < 1e-9);
        assert!((s.mav_elevation - o[1]).abs() < 1e-9);
        assert!((s.mav_distance - o[2]).abs() < 1e-9);
        assert!(nn_stats(&train, &val, 61).is_err());
        assert!(nn_stats(&train, &[(vec![1.0], val[0].1)], 3).is_err());
    }

    proptest! {
        #[test]
        fn invariant_to_code_scaling(seed in 0u64..100, k in 1usize..15, scale in 0.01f64..100.0) {
            let train = clustered(seed, 30);
            let val = clustered(seed + 1000, 6);
            let scaled = |v: &[(Vec<f64>, PoseAnnotation)]| -> Vec<(Vec<f64>, PoseAnnotation)> {
                v.iter().map(|(c, p)| (c.iter().map(|x| x * scale).collect(), *p)).collect()
            };
            let a = nn_stats(&train, &val, k).unwrap();
            let b = nn_stats(&scaled(&train), &scaled(&val), k).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
