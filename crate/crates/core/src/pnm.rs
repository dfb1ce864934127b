//! NetPBM bitmaps (P1, P4) for masks and 8-bit graymaps (P5) for inspection.
//!
//! Foreground is bit 1 (black in PBM terms).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{Mask, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbmFormat {
    /// `P1`, ASCII digits.
    Plain,
    /// `P4`, packed bits, rows padded to a byte boundary.
    Raw,
}

struct Header<'a> {
    width: usize,
    height: usize,
    maxval: Option<usize>,
    body: &'a [u8],
}

fn skip_ws_and_comments(buf: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' && buf[pos] != b'\r' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(buf: &[u8], pos: usize) -> Result<(usize, usize)> {
    let start = skip_ws_and_comments(buf, pos);
    let mut end = start;
    while end < buf.len() && buf[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::Format("expected an unsigned integer in header".into()));
    }
    let v = std::str::from_utf8(&buf[start..end])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("header integer out of range".into()))?;
    Ok((v, end))
}

fn parse_header<'a>(buf: &'a [u8], magic: &[u8], has_maxval: bool) -> Result<Header<'a>> {
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(Error::Format(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let (width, pos) = read_uint(buf, 2)?;
    let (height, mut pos) = read_uint(buf, pos)?;
    let mut maxval = None;
    if has_maxval {
        let (m, p) = read_uint(buf, pos)?;
        if m == 0 || m > 255 {
            return Err(Error::Format(format!("unsupported maxval {m}")));
        }
        maxval = Some(m);
        pos = p;
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("zero-sized image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from a binary raster
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        if pos == buf.len() && magic == b"P1" {
            return Err(Error::Format("missing raster".into()));
        }
        if pos >= buf.len() {
            return Err(Error::Format("truncated header".into()));
        }
        return Err(Error::Format("header not terminated by whitespace".into()));
    }
    Ok(Header {
        width,
        height,
        maxval,
        body: &buf[pos + 1..],
    })
}

/// Decodes a P1 or P4 bitmap.
pub fn decode_pbm(buf: &[u8]) -> Result<Mask> {
    match buf.get(..2) {
        Some(b"P1") => {
            let h = parse_header(buf, b"P1", false)?;
            let mut data = Vec::with_capacity(h.width * h.height);
            let mut pos = 0;
            while data.len() < h.width * h.height {
                pos = skip_ws_and_comments(h.body, pos);
                match h.body.get(pos) {
                    Some(b'0') => data.push(0),
                    Some(b'1') => data.push(1),
                    Some(c) => return Err(Error::Format(format!("unexpected byte {c:#04x} in P1 raster"))),
                    None => return Err(Error::Format("truncated P1 raster".into())),
                }
                pos += 1;
            }
            Mask::from_vec(h.width, h.height, data)
        }
        Some(b"P4") => {
            let h = parse_header(buf, b"P4", false)?;
            let stride = h.width.div_ceil(8);
            if h.body.len() < stride * h.height {
                return Err(Error::Format(format!(
                    "P4 raster holds {} bytes, need {}",
                    h.body.len(),
                    stride * h.height
                )));
            }
            let mut data = Vec::with_capacity(h.width * h.height);
            for row in h.body.chunks_exact(stride).take(h.height) {
                for x in 0..h.width {
                    data.push((row[x / 8] >> (7 - x % 8)) & 1);
                }
            }
            Mask::from_vec(h.width, h.height, data)
        }
        _ => Err(Error::Format("not a PBM file (expected P1 or P4)".into())),
    }
}

/// Encodes a mask; the output round-trips bit-exactly through `decode_pbm`.
pub fn encode_pbm(m: &Mask, format: PbmFormat) -> Vec<u8> {
    let (w, h) = (m.width(), m.height());
    match format {
        PbmFormat::Plain => {
            let mut out = format!("P1\n{w} {h}\n").into_bytes();
            for y in 0..h {
                for (i, x) in (0..w).enumerate() {
                    // plain PBM lines should stay under 70 characters
                    if i > 0 && i % 64 == 0 {
                        out.push(b'\n');
                    }
                    out.push(if m.get(x, y) { b'1' } else { b'0' });
                }
                out.push(b'\n');
            }
            out
        }
        PbmFormat::Raw => {
            let mut out = format!("P4\n{w} {h}\n").into_bytes();
            let stride = w.div_ceil(8);
            for y in 0..h {
                let mut row = vec![0u8; stride];
                for x in 0..w {
                    if m.get(x, y) {
                        row[x / 8] |= 0x80 >> (x % 8);
                    }
                }
                out.extend_from_slice(&row);
            }
            out
        }
    }
}

/// Encodes a probability map as an 8-bit P5 graymap (`round(v * 255)`).
pub fn encode_pgm(p: &ProbMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", p.width(), p.height()).into_bytes();
    out.extend(p.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Decodes an 8-bit P5 graymap into values `v / maxval`.
pub fn decode_pgm(buf: &[u8]) -> Result<ProbMap> {
    let h = parse_header(buf, b"P5", true)?;
    let n = h.width * h.height;
    if h.body.len() < n {
        return Err(Error::Format("truncated P5 raster".into()));
    }
    let maxval = h.maxval.unwrap_or(255) as f64;
    let data = h.body[..n].iter().map(|&b| (b as f64 / maxval).min(1.0)).collect();
    ProbMap::from_vec(h.width, h.height, data)
}

pub fn read_pbm(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pbm(&buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_pbm(path: impl AsRef<Path>, m: &Mask, format: PbmFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pbm(m, format)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: impl AsRef<Path>, p: &ProbMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(p)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_plain_with_comments() {
        let src = b"P1\n# a comment\n3 2\n1 0 1\n011\n";
        let m = decode_pbm(src).unwrap();
        assert_eq!((m.width(), m.height()), (3, 2));
        assert_eq!(m.data(), &[1, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn decodes_raw_with_padding() {
        // 10 pixels wide: two bytes per row
        let mut src = b"P4\n10 2\n".to_vec();
        src.extend_from_slice(&[0b1000_0001, 0b0100_0000, 0xff, 0b1100_0000]);
        let m = decode_pbm(&src).unwrap();
        assert_eq!(
            m.data(),
            &[1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]
        );
        assert_eq!(encode_pbm(&m, PbmFormat::Raw), src);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_pbm(b"P2\n1 1\n0\n").is_err());
        assert!(decode_pbm(b"P4\n16 2\n\x00").is_err());
        assert!(decode_pbm(b"P1\n2 2\n1 0 1").is_err());
        assert!(decode_pbm(b"P1\n0 2\n").is_err());
        assert!(decode_pbm(b"P1\n2 1\n1 2\n").is_err());
    }

    #[test]
    fn pgm_roundtrip_quantizes() {
        let p = ProbMap::from_vec(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let back = decode_pgm(&encode_pgm(&p)).unwrap();
        for (a, b) in p.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pbm_roundtrip_is_bit_exact(w in 1usize..90, h in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::from_fn(w, h, |_, _| rng.random_bool(0.5)).unwrap();
            for fmt in [PbmFormat::Plain, PbmFormat::Raw] {
                let bytes = encode_pbm(&m, fmt);
                let back = decode_pbm(&bytes).unwrap();
                prop_assert_eq!(&back, &m);
                prop_assert_eq!(encode_pbm(&back, fmt), bytes);
            }
        }
    }
}
