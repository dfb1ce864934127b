//! Loading corpora and codecs from command-line arguments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use shapecode::pnm::read_pbm;
use shapecode::records::{read_jsonl, resolve, InstanceRecord, ManifestRecord};
use shapecode::{AeModel, CodecId, GridCodec, LearnedCodec, Mask, RadialCodec, ShapeCodec};

use crate::error::{usage, CliError};
use crate::CodecArgs;

pub type Res<T> = Result<T, CliError>;

pub fn load_manifest(path: &Path) -> Res<(Vec<ManifestRecord>, Vec<Mask>)> {
    let recs: Vec<ManifestRecord> = read_jsonl(path)?;
    if recs.is_empty() {
        return Err(CliError::Other(format!("{}: manifest has no records", path.display())));
    }
    let masks = load_masks(path, recs.iter().map(|r| r.mask_path.as_str()))?;
    Ok((recs, masks))
}

pub fn load_instances(path: &Path) -> Res<(Vec<InstanceRecord>, Vec<Mask>)> {
    let recs: Vec<InstanceRecord> = read_jsonl(path)?;
    let masks = load_masks(path, recs.iter().map(|r| r.mask_path.as_str()))?;
    Ok((recs, masks))
}

pub fn load_masks<'a>(base: &Path, rel: impl Iterator<Item = &'a str>) -> Res<Vec<Mask>> {
    let paths: Vec<PathBuf> = rel.map(|r| resolve(base, r)).collect();
    Ok(paths.par_iter().map(read_pbm).collect::<shapecode::Result<_>>()?)
}

/// Sorted distinct names; a category's index is its position.
pub fn category_index<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    names.collect::<BTreeSet<_>>().into_iter().map(String::from).collect()
}

pub fn lookup(classes: &[String], name: &str) -> Res<usize> {
    classes
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| CliError::Other(format!("unknown category '{name}'")))
}

pub fn load_model(path: &Path) -> Res<AeModel> {
    Ok(AeModel::load(path)?)
}

pub fn make_codec(kind: CodecId, dim: Option<usize>, model: Option<&Path>, frame: usize) -> Res<Arc<dyn ShapeCodec>> {
    let need_dim = || dim.ok_or_else(|| usage(format!("--dim is required for the {kind} codec")));
    Ok(match kind {
        CodecId::Grid => Arc::new(GridCodec::for_dim(need_dim()?, frame).map_err(|e| usage(e.to_string()))?),
        CodecId::Radial => Arc::new(RadialCodec::with_frame(need_dim()?, frame).map_err(|e| usage(e.to_string()))?),
        CodecId::Learned => {
            let path = model.ok_or_else(|| usage("the learned codec needs --model"))?;
            let m = load_model(path)?;
            if let Some(d) = dim {
                if d != m.embedding_dim() {
                    return Err(usage(format!(
                        "--dim {d} disagrees with {} (embedding {})",
                        path.display(),
                        m.embedding_dim()
                    )));
                }
            }
            if m.input_size() != frame {
                log::warn!("model frame {} differs from --canonical-size {frame}", m.input_size());
            }
            Arc::new(LearnedCodec::new(m))
        }
        CodecId::RawTensor => return Err(usage("raw tensors are not a shape codec")),
    })
}

pub fn codec_from_args(a: &CodecArgs, frame: usize) -> Res<Arc<dyn ShapeCodec>> {
    make_codec(a.codec.into(), a.dim, a.model.as_deref(), frame)
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Res<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

pub fn read_lines(path: &Path) -> Res<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
