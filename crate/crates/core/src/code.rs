//! Shape codes, the codec trait, and the `STSC` code-set file format.
//!
//! `STSC` layout (little-endian): magic `b"STSC"`, `u32` version (1),
//! `u32` codec id, `u32` count, `u32` dim, then `count * dim` `f32` values
//! row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::Mask;

pub const STSC_MAGIC: &[u8; 4] = b"STSC";
pub const STSC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodecId {
    Grid,
    Radial,
    Learned,
    /// Raw detection tensors stored in the code-set format.
    RawTensor,
}

impl CodecId {
    pub fn to_u32(self) -> u32 {
        match self {
            CodecId::Grid => 0,
            CodecId::Radial => 1,
            CodecId::Learned => 2,
            CodecId::RawTensor => 255,
        }
    }

    pub fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => CodecId::Grid,
            1 => CodecId::Radial,
            2 => CodecId::Learned,
            255 => CodecId::RawTensor,
            _ => return Err(Error::Format(format!("unknown codec id {v}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Grid => "grid",
            CodecId::Radial => "radial",
            CodecId::Learned => "learned",
            CodecId::RawTensor => "raw",
        }
    }
}

impl std::fmt::Display for CodecId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CodecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(CodecId::Grid),
            "radial" => Ok(CodecId::Radial),
            "learned" => Ok(CodecId::Learned),
            "raw" => Ok(CodecId::RawTensor),
            _ => Err(Error::invalid(format!("unknown codec `{s}`"))),
        }
    }
}

/// Codec-specific parameters carried alongside the values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecMeta {
    Grid { k: usize },
    Radial { d: usize },
    Learned { fingerprint: u64 },
    Raw,
}

impl CodecMeta {
    pub fn codec(&self) -> CodecId {
        match self {
            CodecMeta::Grid { .. } => CodecId::Grid,
            CodecMeta::Radial { .. } => CodecId::Radial,
            CodecMeta::Learned { .. } => CodecId::Learned,
            CodecMeta::Raw => CodecId::RawTensor,
        }
    }
}

/// A fixed-length real vector describing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeCode {
    pub values: Vec<f64>,
    pub meta: CodecMeta,
}

impl ShapeCode {
    pub fn new(values: Vec<f64>, meta: CodecMeta) -> Self {
        Self { values, meta }
    }

    pub fn codec(&self) -> CodecId {
        self.meta.codec()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn expect_codec(&self, want: CodecId) -> Result<()> {
        if self.codec() != want {
            return Err(Error::WrongCodec {
                expected: want.to_string(),
                found: self.codec().to_string(),
            });
        }
        Ok(())
    }
}

/// Encodes masks to fixed-length codes and decodes them back.
pub trait ShapeCodec: Send + Sync {
    fn id(&self) -> CodecId;

    /// Code length.
    fn dim(&self) -> usize;

    fn meta(&self) -> CodecMeta;

    fn encode(&self, m: &Mask) -> Result<ShapeCode>;

    fn decode(&self, code: &ShapeCode, out_w: usize, out_h: usize) -> Result<Mask>;

    /// Wraps raw values (e.g. a regressed tensor slice) as a code of this codec.
    fn wrap(&self, values: Vec<f64>) -> Result<ShapeCode> {
        if values.len() != self.dim() {
            return Err(Error::dims(format!(
                "{} values for a {}-dimensional {} code",
                values.len(),
                self.dim(),
                self.id()
            )));
        }
        Ok(ShapeCode::new(values, self.meta()))
    }
}

/// Homogeneous collection of codes as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSet {
    pub codec: CodecId,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl CodeSet {
    pub fn from_codes(codes: &[ShapeCode]) -> Result<Self> {
        let first = codes
            .first()
            .ok_or_else(|| Error::invalid("cannot store an empty code set"))?;
        let (codec, dim) = (first.codec(), first.dim());
        let mut values = Vec::with_capacity(codes.len() * dim);
        for c in codes {
            if c.codec() != codec || c.dim() != dim {
                return Err(Error::dims("code set mixes codecs or dimensions"));
            }
            values.extend(c.values.iter().map(|&v| v as f32));
        }
        Ok(Self { codec, dim, values })
    }

    pub fn from_rows(codec: CodecId, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::dims(format!("row of length {} in a dim-{dim} set", r.len())));
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Ok(Self { codec, dim, values })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.values
            .chunks_exact(self.dim.max(1))
            .map(|r| r.iter().map(|&v| v as f64).collect())
    }

    /// Rebuilds typed codes. The file carries no model fingerprint, so learned
    /// codes must be given the fingerprint of the model that produced them.
    pub fn to_codes(&self, learned_fingerprint: Option<u64>) -> Result<Vec<ShapeCode>> {
        let meta = match self.codec {
            CodecId::Grid => {
                let k = (self.dim as f64).sqrt().round() as usize;
                if k * k != self.dim {
                    return Err(Error::Format(format!("grid code dim {} is not a square", self.dim)));
                }
                CodecMeta::Grid { k }
            }
            CodecId::Radial => CodecMeta::Radial { d: self.dim },
            CodecId::Learned => CodecMeta::Learned {
                fingerprint: learned_fingerprint
                    .ok_or_else(|| Error::invalid("learned codes need the producing model's fingerprint"))?,
            },
            CodecId::RawTensor => CodecMeta::Raw,
        };
        Ok(self.rows().map(|v| ShapeCode::new(v, meta)).collect())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(STSC_MAGIC)?;
        for v in [STSC_VERSION, self.codec.to_u32(), self.len() as u32, self.dim as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.values.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated STSC header".into()))?;
        if &magic != STSC_MAGIC {
            return Err(Error::Format("bad magic, expected STSC".into()));
        }
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("truncated STSC header".into()))?;
            *h = u32::from_le_bytes(b);
        }
        let [version, codec, count, dim] = header;
        if version != STSC_VERSION {
            return Err(Error::Format(format!("unsupported STSC version {version}")));
        }
        let codec = CodecId::from_u32(codec)?;
        let n = (count as usize)
            .checked_mul(dim as usize)
            .ok_or_else(|| Error::Format("STSC size overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 4 * n {
            return Err(Error::Format(format!(
                "STSC payload holds {} bytes, header promises {}",
                bytes.len(),
                4 * n
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            codec,
            dim: dim as usize,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// One code per line, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks_exact(self.dim.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}
