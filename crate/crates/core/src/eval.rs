//! Mask-level detection evaluation: greedy matching, all-point interpolated
//! average precision, mean AP across categories and thresholds, and recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mask::{iou, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalDetection {
    pub category: usize,
    pub score: f64,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalGroundTruth {
    pub category: usize,
    pub mask: Mask,
}

/// Indices of `items` by descending score; equal scores keep input order.
fn by_score(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    order
}

/// Matches detections to ground truths in descending score order. Each
/// detection takes the unmatched same-category GT with the highest mask IoU,
/// provided that IoU is at least `tau` (ties go to the lower GT index).
/// Returns the matched GT per detection, in input order.
pub fn match_greedy(dets: &[EvalDetection], gts: &[EvalGroundTruth], tau: f64) -> Result<Vec<Option<usize>>> {
    let refs: Vec<&EvalDetection> = dets.iter().collect();
    let ious = iou_matrix(&refs, gts)?;
    Ok(match_with(&refs, gts, &ious, tau))
}

fn iou_matrix(dets: &[&EvalDetection], gts: &[EvalGroundTruth]) -> Result<Vec<Vec<f64>>> {
    dets.iter()
        .map(|d| {
            gts.iter()
                .map(|g| if g.category == d.category { iou(&d.mask, &g.mask) } else { Ok(0.0) })
                .collect()
        })
        .collect()
}

fn match_with(dets: &[&EvalDetection], gts: &[EvalGroundTruth], ious: &[Vec<f64>], tau: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for i in by_score(dets.iter().map(|d| d.score)) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.category != dets[i].category {
                continue;
            }
            let v = ious[i][g];
            if v >= tau && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[i] = Some(g);
        }
    }
    out
}

/// All-point interpolated AP for true-positive flags already sorted by
/// descending score. With no ground truth, AP is 1 when there are also no
/// detections and 0 otherwise.
pub fn average_precision(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // right envelope
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

/// Thresholds of the volume metric, 0.1 to 0.9.
pub fn vol_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bucket {
    All,
    Large,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::All => "all",
            Bucket::Large => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Detections must score strictly above this to be evaluated.
    pub score_threshold: f64,
    /// Minimum GT mask area in pixels for the large bucket.
    pub large_area: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.5, 0.7],
            score_threshold: 0.05,
            large_area: 96.0 * 96.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryResult {
    pub category: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub tau: f64,
    pub map: f64,
    pub ar: f64,
    pub categories: Vec<CategoryResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub bucket: Bucket,
    pub thresholds: Vec<ThresholdResult>,
    pub map_vol: f64,
}

/// One image's detections and ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalImage {
    pub detections: Vec<EvalDetection>,
    pub ground_truth: Vec<EvalGroundTruth>,
}

struct Scored {
    score: f64,
    tp: bool,
}

/// Evaluates at every configured threshold and at the volume thresholds,
/// for both size buckets.
pub fn map_report(images: &[EvalImage], config: &EvalConfig) -> Result<Vec<MapReport>> {
    if config.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::invalid("IoU thresholds must lie in (0, 1)"));
    }
    let kept: Vec<Vec<&EvalDetection>> = images
        .iter()
        .map(|im| im.detections.iter().filter(|d| d.score > config.score_threshold).collect())
        .collect();
    let matrices: Vec<Vec<Vec<f64>>> = images
        .iter()
        .zip(&kept)
        .map(|(im, dets)| iou_matrix(dets, &im.ground_truth))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for bucket in [Bucket::All, Bucket::Large] {
        let eval_at = |tau: f64| -> ThresholdResult {
            let mut per_cat: BTreeMap<usize, (usize, Vec<Scored>)> = BTreeMap::new();
            for ((im, dets), ious) in images.iter().zip(&kept).zip(&matrices) {
                let matched = match_with(dets, &im.ground_truth, ious, tau);
                let in_bucket = |area: usize| bucket == Bucket::All || area as f64 >= config.large_area;
                for g in &im.ground_truth {
                    if in_bucket(g.mask.count()) {
                        per_cat.entry(g.category).or_default().0 += 1;
                    }
                }
                for (d, m) in dets.iter().zip(&matched) {
                    let keep = match m {
                        Some(g) => in_bucket(im.ground_truth[*g].mask.count()),
                        None => in_bucket(d.mask.count()),
                    };
                    if keep {
                        per_cat.entry(d.category).or_default().1.push(Scored { score: d.score, tp: m.is_some() });
                    }
                }
            }
            let mut categories = Vec::new();
            for (cat, (num_gt, dets)) in per_cat {
                if num_gt == 0 {
                    continue;
                }
                let order = by_score(dets.iter().map(|s| s.score));
                let flags: Vec<bool> = order.iter().map(|&i| dets[i].tp).collect();
                let tp = flags.iter().filter(|&&f| f).count();
                categories.push(CategoryResult {
                    category: cat,
                    num_gt,
                    ap: average_precision(&flags, num_gt),
                    recall: tp as f64 / num_gt as f64,
                });
            }
            let mean = |f: fn(&CategoryResult) -> f64| {
                if categories.is_empty() {
                    // nothing to find: vacuous unless something was detected
                    let any = kept.iter().any(|d| !d.is_empty());
                    if any { 0.0 } else { 1.0 }
                } else {
                    categories.iter().map(f).sum::<f64>() / categories.len() as f64
                }
            };
            ThresholdResult {
                tau,
                map: mean(|c| c.ap),
                ar: mean(|c| c.recall),
                categories,
            }
        };
        let thresholds: Vec<ThresholdResult> = config.iou_thresholds.iter().map(|&t| eval_at(t)).collect();
        let vol = vol_thresholds();
        let map_vol = vol.iter().map(|&t| eval_at(t).map).sum::<f64>() / vol.len() as f64;
        out.push(MapReport { bucket, thresholds, map_vol });
    }
    Ok(out)
}

/// CSV with one row per bucket, category, metric and threshold. Category
/// `mean` rows hold the across-category averages.
pub fn reports_to_csv(reports: &[MapReport], names: &dyn Fn(usize) -> String) -> String {
    let mut s = String::from("bucket,category,metric,threshold,value\n");
    for r in reports {
        let b = r.bucket.name();
        for t in &r.thresholds {
            for c in &t.categories {
                let n = names(c.category);
                let _ = writeln!(s, "{b},{n},ap,{},{}", t.tau, c.ap);
                let _ = writeln!(s, "{b},{n},recall,{},{}", t.tau, c.recall);
            }
            let _ = writeln!(s, "{b},mean,map,{},{}", t.tau, t.map);
            let _ = writeln!(s, "{b},mean,ar,{},{}", t.tau, t.ar);
        }
        let _ = writeln!(s, "{b},mean,map_vol,0.1-0.9,{}", r.map_vol);
    }
    s
}

pub fn summary_line(reports: &[MapReport]) -> String {
    let mut parts = Vec::new();
    for r in reports {
        for t in &r.thresholds {
            parts.push(format!("{} mAP@{}={:.4} AR@{}={:.4}", r.bucket.name(), t.tau, t.map, t.tau, t.ar));
        }
        parts.push(format!("{} mAP_vol={:.4}", r.bucket.name(), r.map_vol));
    }
    parts.join("  ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(20, 20, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y)).unwrap()
    }

    fn d(category: usize, score: f64, mask: Mask) -> EvalDetection {
        EvalDetection { category, score, mask }
    }

    fn g(category: usize, mask: Mask) -> EvalGroundTruth {
        EvalGroundTruth { category, mask }
    }

    // Lexicographically best assignment in score order over every injective
    // partial assignment: each detection in turn prefers higher IoU, then
    // the lower GT index, then staying unmatched only if nothing qualifies.
    fn exhaustive_match(dets: &[EvalDetection], gts: &[EvalGroundTruth], tau: f64) -> Vec<Option<usize>> {
        let order = by_score(dets.iter().map(|d| d.score));
        let refs: Vec<&EvalDetection> = dets.iter().collect();
        let ious = iou_matrix(&refs, gts).unwrap();
        let n = dets.len();
        let mut best: Option<(Vec<(f64, i64)>, Vec<Option<usize>>)> = None;
        let mut assign = vec![None; n];
        fn rec(
            k: usize,
            order: &[usize],
            gts: &[EvalGroundTruth],
            dets: &[EvalDetection],
            ious: &[Vec<f64>],
            tau: f64,
            used: &mut Vec<bool>,
            assign: &mut Vec<Option<usize>>,
            best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
        ) {
            if k == order.len() {
                let key: Vec<(f64, i64)> = order
                    .iter()
                    .map(|&i| match assign[i] {
                        Some(gi) => (ious[i][gi], -(gi as i64)),
                        None => (-1.0, 0),
                    })
                    .collect();
                let better = match best {
                    None => true,
                    Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
                };
                if better {
                    *best = Some((key, assign.clone()));
                }
                return;
            }
            let i = order[k];
            assign[i] = None;
            rec(k + 1, order, gts, dets, ious, tau, used, assign, best);
            for gi in 0..gts.len() {
                if !used[gi] && gts[gi].category == dets[i].category && ious[i][gi] >= tau {
                    used[gi] = true;
                    assign[i] = Some(gi);
                    rec(k + 1, order, gts, dets, ious, tau, used, assign, best);
                    used[gi] = false;
                    assign[i] = None;
                }
            }
        }
        let mut used = vec![false; gts.len()];
        rec(0, &order, gts, dets, &ious, tau, &mut used, &mut assign, &mut best);
        best.unwrap().1
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, true], 2), 1.0);
        assert_eq!(average_precision(&[false], 1), 0.0);
        assert!((average_precision(&[true, false, true], 2) - 0.8333333333333334).abs() < 1e-12);
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[false], 0), 0.0);
        assert_eq!(average_precision(&[], 3), 0.0);
        // envelope lifts the early dip: P = 0, 1/2, 2/3 at R = 0, 1/2, 1
        assert!((average_precision(&[false, true, true], 2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![g(0, rect(0, 0, 5, 5)), g(1, rect(10, 10, 18, 16))];
        let dets: Vec<EvalDetection> = gts.iter().map(|x| d(x.category, 1.0, x.mask.clone())).collect();
        assert_eq!(match_greedy(&dets, &gts, 0.5).unwrap(), vec![Some(0), Some(1)]);
        assert_eq!(match_greedy(&dets[..1], &[], 0.5).unwrap(), vec![None]);
        let img = EvalImage { detections: dets, ground_truth: gts.clone() };
        let cfg = EvalConfig { iou_thresholds: vol_thresholds(), ..EvalConfig::default() };
        let r = &map_report(&[img], &cfg).unwrap()[0];
        assert!(r.thresholds.iter().all(|t| t.map == 1.0 && t.ar == 1.0));
        assert_eq!(r.map_vol, 1.0);
        let none = EvalImage { detections: vec![], ground_truth: gts };
        let r = &map_report(&[none], &cfg).unwrap()[0];
        assert!(r.thresholds.iter().all(|t| t.map == 0.0 && t.ar == 0.0));
    }

    #[test]
    fn duplicates_count_once() {
        let gts = vec![g(0, rect(0, 0, 10, 10))];
        let dets = vec![d(0, 0.9, rect(0, 0, 10, 10)), d(0, 0.8, rect(0, 0, 10, 9))];
        assert_eq!(match_greedy(&dets, &gts, 0.5).unwrap(), vec![Some(0), None]);
    }

    #[test]
    fn three_detections_two_ground_truths() {
        let gts = vec![g(0, rect(0, 0, 10, 10)), g(0, rect(10, 10, 20, 20))];
        let dets = vec![
            d(0, 0.9, rect(0, 0, 10, 10)),
            d(0, 0.8, rect(2, 12, 8, 18)),
            d(0, 0.7, rect(10, 11, 20, 20)),
        ];
        let m = match_greedy(&dets, &gts, 0.5).unwrap();
        assert_eq!(m, vec![Some(0), None, Some(1)]);
        assert_eq!(m, exhaustive_match(&dets, &gts, 0.5));
        let r = map_report(
            &[EvalImage { detections: dets, ground_truth: gts }],
            &EvalConfig { iou_thresholds: vec![0.5], ..EvalConfig::default() },
        )
        .unwrap();
        assert!((r[0].thresholds[0].map - 0.833333).abs() < 1e-6);
    }

    #[test]
    fn two_images_two_categories_by_hand() {
        // image A: cat 0 found, cat 1 missed with a false positive elsewhere
        let a = EvalImage {
            detections: vec![d(0, 0.9, rect(0, 0, 10, 10)), d(1, 0.6, rect(12, 0, 20, 5))],
            ground_truth: vec![g(0, rect(0, 0, 10, 10)), g(1, rect(0, 12, 8, 20))],
        };
        // image B: one cat-0 GT found at a lower score than a cat-0 FP
        let b = EvalImage {
            detections: vec![d(0, 0.95, rect(15, 15, 20, 20)), d(0, 0.5, rect(0, 0, 6, 6))],
            ground_truth: vec![g(0, rect(0, 0, 6, 6))],
        };
        let r = map_report(&[a, b], &EvalConfig { iou_thresholds: vec![0.5], ..EvalConfig::default() }).unwrap();
        let t = &r[0].thresholds[0];
        // cat 0 ranking: FP(0.95), TP(0.9), TP(0.5), 2 GT -> P 0, 1/2, 2/3 -> AP 2/3
        // cat 1: one FP, one GT -> AP 0
        assert_eq!(t.categories.len(), 2);
        assert!((t.categories[0].ap - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.categories[1].ap, 0.0);
        assert!((t.map - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.ar - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_bucket_filters_by_area() {
        let big = rect(0, 0, 10, 10);
        let small = rect(15, 15, 17, 17);
        let img = EvalImage {
            detections: vec![d(0, 0.9, small.clone()), d(0, 0.8, rect(12, 0, 14, 2))],
            ground_truth: vec![g(0, big), g(0, small)],
        };
        let cfg = EvalConfig { iou_thresholds: vec![0.5], large_area: 50.0, ..EvalConfig::default() };
        let r = map_report(&[img], &cfg).unwrap();
        assert_eq!(r[0].thresholds[0].categories[0].num_gt, 2);
        assert!((r[0].thresholds[0].map - 0.5).abs() < 1e-12);
        // in the large bucket only the big GT counts, and both detections are
        // small (one matched to a small GT, one unmatched) so both drop out
        assert_eq!(r[1].bucket, Bucket::Large);
        assert_eq!(r[1].thresholds[0].categories[0].num_gt, 1);
        assert_eq!(r[1].thresholds[0].map, 0.0);
    }

    #[test]
    fn csv_and_summary() {
        let img = EvalImage { detections: vec![d(0, 0.9, rect(0, 0, 4, 4))], ground_truth: vec![g(0, rect(0, 0, 4, 4))] };
        let r = map_report(&[img], &EvalConfig::default()).unwrap();
        let csv = reports_to_csv(&r, &|c| format!("c{c}"));
        assert!(csv.starts_with("bucket,category,metric,threshold,value\n"));
        assert!(csv.contains("all,c0,ap,0.5,1\n"));
        assert!(csv.contains("all,mean,map_vol,0.1-0.9,1\n"));
        assert!(summary_line(&r).contains("all mAP@0.5=1.0000"));
    }

    fn fixture() -> impl Strategy<Value = (Vec<EvalDetection>, Vec<EvalGroundTruth>, f64)> {
        let r = (0usize..12, 0usize..12, 3usize..9, 3usize..9);
        (
            prop::collection::vec((0usize..2, 0.0f64..1.0, r.clone()), 0..=5),
            prop::collection::vec((0usize..2, r), 0..=3),
            0.1f64..0.9,
        )
            .prop_map(|(ds, gs, tau)| {
                let dets = ds.into_iter().map(|(c, s, (x, y, w, h))| d(c, s, rect(x, y, x + w, y + h))).collect();
                let gts = gs.into_iter().map(|(c, (x, y, w, h))| g(c, rect(x, y, x + w, y + h))).collect();
                (dets, gts, tau)
            })
    }

    proptest! {
        #[test]
        fn greedy_equals_exhaustive((dets, gts, tau) in fixture()) {
            prop_assert_eq!(match_greedy(&dets, &gts, tau).unwrap(), exhaustive_match(&dets, &gts, tau));
        }

        #[test]
        fn map_non_increasing_in_tau((dets, gts, _) in fixture()) {
            let img = EvalImage { detections: dets, ground_truth: gts };
            let cfg = EvalConfig { iou_thresholds: vol_thresholds(), score_threshold: 0.0, ..EvalConfig::default() };
            let r = map_report(&[img], &cfg).unwrap();
            for w in r[0].thresholds.windows(2) {
                prop_assert!(w[1].map <= w[0].map + 1e-12);
            }
        }

        #[test]
        fn invariant_to_order_and_score_scale((dets, gts, _) in fixture(), k in 0.1f64..5.0) {
            let cfg = EvalConfig { score_threshold: 0.0, ..EvalConfig::default() };
            let half = gts.len() / 2;
            let a = EvalImage { detections: dets.clone(), ground_truth: gts[..half].to_vec() };
            let b = EvalImage { detections: vec![], ground_truth: gts[half..].to_vec() };
            let base = map_report(&[a.clone(), b.clone()], &cfg).unwrap();
            let scaled = EvalImage {
                detections: dets.iter().map(|x| d(x.category, x.score * k, x.mask.clone())).collect(),
                ..a.clone()
            };
            prop_assert_eq!(&base, &map_report(&[b.clone(), a], &cfg).unwrap().into_iter().map(|mut r| {
                for t in &mut r.thresholds { t.categories.sort_by_key(|c| c.category); }
                r
            }).collect::<Vec<_>>());
            prop_assert_eq!(&base, &map_report(&[scaled, b], &cfg).unwrap());
        }
    }
}
