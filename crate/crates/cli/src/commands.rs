use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shapecode::ae::gradient_check;
use shapecode::analysis::{self, PoseAnnotation};
use shapecode::detection::{
    build_target, decode_predictions, detection_loss, detection_loss_grad, nms_indices, place_shape, Detection,
    GridSpec, GroundTruth, LossWeights, Overlap,
};
use shapecode::eval::{map_report, reports_to_csv, summary_line, EvalConfig, EvalDetection, EvalGroundTruth, EvalImage};
use shapecode::pnm::{read_pbm, write_pbm, PbmFormat};
use shapecode::records::{read_jsonl, resolve, save_jsonl, DetectionRecord, ManifestRecord};
use shapecode::synth::{self, SynthSpec};
use shapecode::{AeModel, CodeSet, CodecId, LearnedCodec, Mask, ShapeCode, ShapeCodec, TrainConfig};

use crate::error::{usage, CliError};
use crate::io::{self, category_index, codec_from_args, lookup, make_codec, Res};
use crate::{CodecArgs, CodecKind, Globals, GridArgs, OverlapKind};

fn encode_all(codec: &dyn ShapeCodec, masks: &[Mask]) -> Res<Vec<ShapeCode>> {
    Ok(masks.par_iter().map(|m| codec.encode(m)).collect::<shapecode::Result<_>>()?)
}

fn save_codes(set: &CodeSet, out: &Path) -> Res<()> {
    if out.extension().is_some_and(|e| e == "csv") {
        io::write_file(out, set.to_csv())
    } else {
        Ok(set.save(out)?)
    }
}

pub fn encode(g: &Globals, codec: &CodecArgs, manifest: &Path, out: &Path) -> Res<()> {
    let codec = codec_from_args(codec, g.frame)?;
    let (_, masks) = io::load_manifest(manifest)?;
    let codes = encode_all(codec.as_ref(), &masks)?;
    save_codes(&CodeSet::from_codes(&codes)?, out)?;
    log::info!("encoded {} masks with {} (dim {})", codes.len(), codec.id(), codec.dim());
    Ok(())
}

pub fn decode(
    g: &Globals,
    codes: &Path,
    model: Option<&Path>,
    width: Option<usize>,
    height: Option<usize>,
    out: &Path,
) -> Res<()> {
    let set = CodeSet::load(codes)?;
    let (codec, fingerprint): (Arc<dyn ShapeCodec>, Option<u64>) = match set.codec {
        CodecId::Learned => {
            let path = model.ok_or_else(|| usage("learned codes need --model"))?;
            let c = LearnedCodec::new(io::load_model(path)?);
            let fp = c.fingerprint();
            (Arc::new(c), Some(fp))
        }
        CodecId::RawTensor => return Err(usage(format!("{} holds raw tensors, not shape codes", codes.display()))),
        id => (make_codec(id, Some(set.dim), None, g.frame)?, None),
    };
    let (w, h) = (width.unwrap_or(g.frame), height.unwrap_or(g.frame));
    let codes = set.to_codes(fingerprint)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
    let masks: Vec<Mask> = codes
        .par_iter()
        .map(|c| codec.decode(c, w, h))
        .collect::<shapecode::Result<_>>()?;
    for (i, m) in masks.iter().enumerate() {
        write_pbm(out.join(format!("{i:05}.pbm")), m, PbmFormat::Raw)?;
    }
    Ok(())
}

pub fn recon_table(
    g: &Globals,
    kind: CodecKind,
    dims: &[usize],
    models: &[PathBuf],
    manifest: &Path,
    out: &Path,
) -> Res<()> {
    let (_, masks) = io::load_manifest(manifest)?;
    let mut codecs: Vec<Arc<dyn ShapeCodec>> = Vec::new();
    if kind == CodecKind::Learned {
        let loaded: Vec<(PathBuf, AeModel)> = models
            .iter()
            .map(|p| Ok((p.clone(), io::load_model(p)?)))
            .collect::<Res<_>>()?;
        for &d in dims {
            let (path, _) = loaded
                .iter()
                .find(|(_, m)| m.embedding_dim() == d)
                .ok_or_else(|| usage(format!("no --model with embedding size {d}")))?;
            codecs.push(make_codec(CodecId::Learned, Some(d), Some(path), g.frame)?);
        }
    } else {
        for &d in dims {
            codecs.push(make_codec(kind.into(), Some(d), None, g.frame)?);
        }
    }
    let refs: Vec<&dyn ShapeCodec> = codecs.iter().map(|c| c.as_ref()).collect();
    let rows = analysis::recon_table(&masks, &refs, g.frame)?;
    io::write_file(out, analysis::recon_csv(&rows))
}

pub fn noise_sweep(
    g: &Globals,
    codec: &CodecArgs,
    manifest: &Path,
    sigmas: &[f64],
    trials: usize,
    out: &Path,
) -> Res<()> {
    let codec = codec_from_args(codec, g.frame)?;
    let (_, masks) = io::load_manifest(manifest)?;
    let points = analysis::noise_sweep(&masks, codec.as_ref(), sigmas, trials, g.seed, g.frame)?;
    io::write_file(out, analysis::noise_csv(codec.id(), codec.dim(), &points))
}

fn posed_codes(
    path: &Path,
    recs: &[ManifestRecord],
    masks: &[Mask],
    codec: &dyn ShapeCodec,
    classes: &[String],
) -> Res<Vec<(Vec<f64>, PoseAnnotation)>> {
    let codes = encode_all(codec, masks)?;
    recs.iter()
        .zip(codes)
        .map(|(r, c)| {
            let (Some(a), Some(e), Some(d)) = (r.azimuth_deg, r.elevation_deg, r.distance) else {
                return Err(CliError::Other(format!("{}: record '{}' has no pose", path.display(), r.id)));
            };
            let pose = PoseAnnotation::from_degrees(a, e, d, lookup(classes, &r.category)?)
                .map_err(|e| CliError::Other(format!("{}: record '{}': {e}", path.display(), r.id)))?;
            Ok((c.values, pose))
        })
        .collect()
}

pub fn nn_stats(g: &Globals, codec: &CodecArgs, train: &Path, val: &Path, k: usize, out: &Path) -> Res<()> {
    let codec = codec_from_args(codec, g.frame)?;
    let (tr, tm) = io::load_manifest(train)?;
    let (va, vm) = io::load_manifest(val)?;
    let classes = category_index(tr.iter().chain(&va).map(|r| r.category.as_str()));
    let train_codes = posed_codes(train, &tr, &tm, codec.as_ref(), &classes)?;
    let val_codes = posed_codes(val, &va, &vm, codec.as_ref(), &classes)?;
    let stats = analysis::nn_stats(&train_codes, &val_codes, k)?;
    io::write_file(out, analysis::nn_csv(codec.id(), codec.dim(), &stats, &|i| classes[i].clone()))
}

pub fn train_ae(
    g: &Globals,
    manifest: &Path,
    dim: usize,
    cfg: &TrainConfig,
    out: &Path,
    curve: Option<&Path>,
) -> Res<()> {
    let (_, masks) = io::load_manifest(manifest)?;
    let mut model =
        AeModel::conv_autoencoder(g.frame, &[16, 32, 64, 128], dim, g.seed).map_err(|e| usage(e.to_string()))?;
    let report = shapecode::ae::train(&mut model, &masks, cfg, |e| {
        log::info!(
            "epoch {:>4}  lr {:.2e}  loss {:.4}  iou {:.4}",
            e.epoch,
            e.learning_rate,
            e.mean_loss,
            e.mean_iou
        );
    })?;
    model.save(out)?;
    if let Some(path) = curve {
        io::write_file(path, report.to_csv())?;
    }
    Ok(())
}

pub fn gradcheck(g: &Globals, model: &str, eps: f64, tol: f64, dim: usize, samples: Option<usize>) -> Res<()> {
    let (m, samples) = if model == "tiny" {
        (AeModel::tiny(dim, g.seed).map_err(|e| usage(e.to_string()))?, samples)
    } else {
        // a full model has far too many parameters to check exhaustively
        (io::load_model(Path::new(model))?, Some(samples.unwrap_or(200)))
    };
    let n = m.input_size() * m.input_size();
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let t: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let r = gradient_check(&m, &x, &t, eps, samples.map(|s| (s, g.seed))).map_err(|e| usage(e.to_string()))?;
    println!(
        "max_rel_error {:.6e} checked {} refined {} skipped {}",
        r.max_rel_error, r.checked, r.refined, r.skipped
    );
    if r.max_rel_error < tol {
        Ok(())
    } else {
        Err(CliError::Other(format!(
            "gradient check failed: {:.3e} >= {tol:e} at layer {} parameter {}",
            r.max_rel_error, r.worst.0, r.worst.1
        )))
    }
}

/// Groups row indices by key, keys in order of first appearance.
fn group_by_key<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<(String, Vec<usize>)> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, k) in keys.enumerate() {
        let s = *slot.entry(k).or_insert_with(|| {
            out.push((k.to_string(), Vec::new()));
            out.len() - 1
        });
        out[s].1.push(i);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn build_targets(
    g: &Globals,
    codec: &CodecArgs,
    instances: &Path,
    classes: &[String],
    s: usize,
    b: usize,
    out: &Path,
    ids: Option<&Path>,
) -> Res<()> {
    let codec = codec_from_args(codec, g.frame)?;
    let (recs, masks) = io::load_instances(instances)?;
    if recs.is_empty() {
        return Err(CliError::Other(format!("{}: no instances", instances.display())));
    }
    let classes = if classes.is_empty() {
        category_index(recs.iter().map(|r| r.category.as_str()))
    } else {
        classes.to_vec()
    };
    let spec = GridSpec { s, b, num_classes: classes.len(), shape_dim: codec.dim() };
    let codes = encode_all(codec.as_ref(), &masks)?;
    let images = group_by_key(recs.iter().map(|r| r.image_id.as_str()));
    let mut rows = Vec::with_capacity(images.len());
    for (_, idx) in &images {
        let gts: Vec<GroundTruth> = idx
            .iter()
            .map(|&i| {
                Ok(GroundTruth { category: lookup(&classes, &recs[i].category)?, bbox: recs[i].bbox, shape: codes[i].clone() })
            })
            .collect::<Res<_>>()?;
        rows.push(build_target(&gts, &spec)?);
    }
    CodeSet::from_rows(CodecId::RawTensor, spec.len(), &rows)?.save(out)?;
    if let Some(p) = ids {
        let text: String = images.iter().map(|(id, _)| format!("{id}\n")).collect();
        io::write_file(p, text)?;
    }
    log::info!("{} images, {} classes, tensor length {}", images.len(), classes.len(), spec.len());
    Ok(())
}

fn load_tensors(path: &Path, spec: &GridSpec) -> Res<Vec<Vec<f64>>> {
    let set = CodeSet::load(path)?;
    if set.dim != spec.len() {
        return Err(CliError::Other(format!(
            "{}: tensors of length {}, grid expects {}",
            path.display(),
            set.dim,
            spec.len()
        )));
    }
    Ok(set.rows().collect())
}

pub fn loss(grid: &GridArgs, pred: &Path, target: &Path, w: &LossWeights, out: &Path, grad: Option<&Path>) -> Res<()> {
    let spec = GridSpec { s: grid.s, b: grid.b, num_classes: grid.num_classes, shape_dim: grid.dim };
    let p = load_tensors(pred, &spec)?;
    let t = load_tensors(target, &spec)?;
    if p.len() != t.len() {
        return Err(CliError::Other(format!("{} predictions for {} targets", p.len(), t.len())));
    }
    let mut csv = String::from("row,total,bbox,conf,shape,pmf\n");
    let mut grads = Vec::new();
    for (i, (p, t)) in p.iter().zip(&t).enumerate() {
        let l = detection_loss(p, t, &spec, w)?;
        csv.push_str(&format!("{i},{},{},{},{},{}\n", l.total, l.bbox, l.conf, l.shape, l.pmf));
        if grad.is_some() {
            grads.push(detection_loss_grad(p, t, &spec, w)?);
        }
    }
    io::write_file(out, csv)?;
    if let Some(path) = grad {
        CodeSet::from_rows(CodecId::RawTensor, spec.len(), &grads)?.save(path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn decode_dets(
    pred: &Path,
    classes: &[String],
    dim: usize,
    s: usize,
    b: usize,
    threshold: f64,
    ids: Option<&Path>,
    out: &Path,
) -> Res<()> {
    let spec = GridSpec { s, b, num_classes: classes.len(), shape_dim: dim };
    let rows = load_tensors(pred, &spec)?;
    let ids = match ids {
        Some(p) => io::read_lines(p)?,
        None => (0..rows.len()).map(|i| i.to_string()).collect(),
    };
    if ids.len() != rows.len() {
        return Err(CliError::Other(format!("{} image ids for {} tensors", ids.len(), rows.len())));
    }
    let mut recs = Vec::new();
    for (row, id) in rows.iter().zip(&ids) {
        for d in decode_predictions(row, &spec, threshold).map_err(|e| usage(e.to_string()))? {
            recs.push(DetectionRecord {
                image_id: id.clone(),
                category: classes[d.category].clone(),
                score: d.score,
                bbox: d.bbox,
                shape_code: Some(d.shape),
                mask_path: None,
            });
        }
    }
    Ok(save_jsonl(out, &recs)?)
}

/// Mask of a detection on a `width x height` canvas: its mask file when it
/// has one, otherwise its shape code placed in its box.
fn detection_mask(
    base: &Path,
    r: &DetectionRecord,
    codec: Option<&dyn ShapeCodec>,
    frame: usize,
    size: (usize, usize),
) -> Res<Mask> {
    if let Some(p) = &r.mask_path {
        return Ok(read_pbm(resolve(base, p))?);
    }
    let shape = r
        .shape_code
        .as_ref()
        .ok_or_else(|| CliError::Other(format!("detection in '{}' has neither shape_code nor mask_path", r.image_id)))?;
    let codec = codec.ok_or_else(|| usage("detections carry shape codes; pass --codec"))?;
    Ok(place_shape(codec, shape, &r.bbox, frame, size.0, size.1)?)
}

fn optional_codec(
    g: &Globals,
    kind: Option<CodecKind>,
    model: Option<&Path>,
    dets: &[DetectionRecord],
) -> Res<Option<Arc<dyn ShapeCodec>>> {
    let Some(kind) = kind else { return Ok(None) };
    let dim = dets.iter().find_map(|d| d.shape_code.as_ref().map(Vec::len));
    let dim = match (kind, dim) {
        (CodecKind::Learned, _) => None,
        (_, Some(d)) => Some(d),
        (_, None) => return Ok(None),
    };
    make_codec(kind.into(), dim, model, g.frame).map(Some)
}

#[allow(clippy::too_many_arguments)]
pub fn nms(
    g: &Globals,
    dets_path: &Path,
    iou: f64,
    overlap: OverlapKind,
    codec: Option<CodecKind>,
    model: Option<&Path>,
    size: (usize, usize),
    out: &Path,
) -> Res<()> {
    let recs: Vec<DetectionRecord> = read_jsonl(dets_path)?;
    let classes = category_index(recs.iter().map(|r| r.category.as_str()));
    let codec = match overlap {
        OverlapKind::Mask => optional_codec(g, codec, model, &recs)?,
        OverlapKind::Box => None,
    };
    let mut kept = Vec::new();
    for (_, idx) in group_by_key(recs.iter().map(|r| r.image_id.as_str())) {
        let dets: Vec<Detection> = idx
            .iter()
            .map(|&i| {
                let r = &recs[i];
                Ok(Detection {
                    category: lookup(&classes, &r.category)?,
                    score: r.score,
                    bbox: r.bbox,
                    shape: r.shape_code.clone().unwrap_or_default(),
                })
            })
            .collect::<Res<_>>()?;
        let survivors = match overlap {
            OverlapKind::Box => nms_indices(&dets, iou, &Overlap::Box)?,
            OverlapKind::Mask => {
                let masks: Vec<Mask> = idx
                    .iter()
                    .map(|&i| detection_mask(dets_path, &recs[i], codec.as_deref(), g.frame, size))
                    .collect::<Res<_>>()?;
                nms_indices(&dets, iou, &Overlap::Mask(&masks))?
            }
        };
        kept.extend(survivors.into_iter().map(|k| recs[idx[k]].clone()));
    }
    Ok(save_jsonl(out, &kept)?)
}

#[allow(clippy::too_many_arguments)]
pub fn eval_map(
    g: &Globals,
    dets_path: &Path,
    gt_path: &Path,
    cfg: &EvalConfig,
    codec: Option<CodecKind>,
    model: Option<&Path>,
    canvas: Option<(usize, usize)>,
    out: &Path,
) -> Res<()> {
    let (gts, gt_masks) = io::load_instances(gt_path)?;
    let dets: Vec<DetectionRecord> = read_jsonl(dets_path)?;
    let classes = category_index(gts.iter().map(|r| r.category.as_str()).chain(dets.iter().map(|r| r.category.as_str())));
    let codec = optional_codec(g, codec, model, &dets)?;

    let mut by_image: Vec<(String, Vec<usize>, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut entry = |id: &str, out: &mut Vec<(String, Vec<usize>, Vec<usize>)>| -> usize {
        *slot.entry(id.to_string()).or_insert_with(|| {
            out.push((id.to_string(), Vec::new(), Vec::new()));
            out.len() - 1
        })
    };
    for (i, r) in gts.iter().enumerate() {
        let s = entry(&r.image_id, &mut by_image);
        by_image[s].1.push(i);
    }
    for (i, r) in dets.iter().enumerate() {
        let s = entry(&r.image_id, &mut by_image);
        by_image[s].2.push(i);
    }

    let mut images = Vec::with_capacity(by_image.len());
    for (id, gi, di) in &by_image {
        let size = match gi.first() {
            Some(&i) => (gt_masks[i].width(), gt_masks[i].height()),
            None => canvas.ok_or_else(|| usage(format!("image '{id}' has no ground truth; pass --width and --height")))?,
        };
        let ground_truth = gi
            .iter()
            .map(|&i| Ok(EvalGroundTruth { category: lookup(&classes, &gts[i].category)?, mask: gt_masks[i].clone() }))
            .collect::<Res<_>>()?;
        let detections = di
            .iter()
            .map(|&i| {
                let r = &dets[i];
                Ok(EvalDetection {
                    category: lookup(&classes, &r.category)?,
                    score: r.score,
                    mask: detection_mask(dets_path, r, codec.as_deref(), g.frame, size)?,
                })
            })
            .collect::<Res<_>>()?;
        images.push(EvalImage { detections, ground_truth });
    }
    let reports = map_report(&images, cfg).map_err(|e| match e {
        shapecode::Error::InvalidArgument(m) => usage(m),
        e => e.into(),
    })?;
    io::write_file(out, reports_to_csv(&reports, &|i| classes[i].clone()))?;
    println!("{}", summary_line(&reports));
    Ok(())
}

pub fn gen_synth(
    g: &Globals,
    families: Option<&str>,
    count: usize,
    canvas: usize,
    poses: bool,
    out: &Path,
) -> Res<()> {
    let families = match families {
        Some(f) => synth::parse_families(f).map_err(|e| usage(e.to_string()))?,
        None => synth::Family::ALL.to_vec(),
    };
    let spec = SynthSpec { families, count, canvas, seed: g.seed, poses };
    let items = synth::generate(&spec).map_err(|e| usage(e.to_string()))?;
    synth::write_dataset(&items, out)?;
    log::info!("wrote {} shapes to {}", items.len(), out.display());
    Ok(())
}
