//! On-disk formats.
//!
//! * `depth-pfm`: grayscale portable float map. ASCII header `Pf\n<w> <h>\n-1.0\n`
//!   followed by `w * h` little-endian `f32`, rows stored bottom to top.
//!   Masked pixels are written as the sentinel `-1.0`. Readers also accept a
//!   positive scale (big-endian payload).
//! * `rgb-ppm`: binary `P6\n<w> <h>\n255\n` followed by `w * h * 3` bytes,
//!   rows top to bottom, each channel quantised as `floor(v * 255 + 0.5)`.
//! * `cloud-ply`: ASCII PLY with `element vertex N` and float `x y z`
//!   properties (optionally one extra scalar), one vertex per line, values
//!   printed with 9 significant digits.
//! * `report-json`: pretty-printed JSON object of a report struct.
//! * `manifest-txt`: see [`crate::synth::Manifest`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{DepthMap, PointCloud, RgbImage};

/// Which on-disk format a file uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    DepthPfm,
    RgbPpm,
    CloudPly,
    ReportJson,
    ManifestTxt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileFormatDescriptor {
    pub kind: FileKind,
    pub version: &'static str,
}

impl FileFormatDescriptor {
    pub const fn of(kind: FileKind) -> Self {
        let version = match kind {
            FileKind::DepthPfm => "Pf",
            FileKind::RgbPpm => "P6",
            FileKind::CloudPly => "ply-ascii-1.0",
            FileKind::ReportJson => "json-1",
            FileKind::ManifestTxt => crate::synth::MANIFEST_VERSION,
        };
        Self { kind, version }
    }
}

/// Value stored in a PFM for a masked pixel.
pub const PFM_MASK_SENTINEL: f32 = -1.0;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Splits `count` whitespace-separated ASCII header tokens off the front of
/// `bytes` (skipping `#` comments), consuming exactly one whitespace byte
/// after the last token. Returns the tokens and the payload offset.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("truncated header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
        tokens.push(tok.to_string());
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing separator after header".into()));
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::MalformedHeader(format!("bad dimension {tok:?}")))
}

pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for r in (0..h).rev() {
        for c in 0..w {
            let i = r * w + c;
            let v = if map.is_valid(i) {
                map.data()[i] as f32
            } else {
                PFM_MASK_SENTINEL
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => {
            return Err(Error::MalformedHeader(
                "colour PFM (PF) is not a depth map; expected Pf".into(),
            ))
        }
        other => return Err(Error::MalformedHeader(format!("bad PFM magic {other:?}"))),
    }
    let (w, h) = (parse_dim(&tokens[1])?, parse_dim(&tokens[2])?);
    let scale: f32 = tokens[3]
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::MalformedHeader(format!("bad PFM scale {:?}", tokens[3])))?;
    let little = scale < 0.0;
    let payload = &bytes[offset..];
    if payload.len() != w * h * 4 {
        return Err(Error::MalformedHeader(format!(
            "{}x{} PFM needs {} payload bytes, found {}",
            w,
            h,
            w * h * 4,
            payload.len()
        )));
    }
    let mut data = vec![0.0f64; w * h];
    let mut mask = vec![true; w * h];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, c) = (k / w, k % w);
        let i = (h - 1 - file_row) * w + c;
        if v == PFM_MASK_SENTINEL {
            mask[i] = false;
            data[i] = f64::from(PFM_MASK_SENTINEL);
        } else if v < 0.0 {
            return Err(Error::NegativeNonSentinel { index: i, value: v });
        } else {
            data[i] = f64::from(v);
        }
    }
    DepthMap::with_mask(w, h, data, mask)
}

pub fn write_depth_pfm(map: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(map))
}

pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_pfm(&read_file(path.as_ref())?)
}

/// `floor(v * 255 + 0.5)`, so 0.5 maps to 128.
#[inline]
pub fn quantize_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize_channel(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P6" {
        return Err(Error::MalformedHeader(format!(
            "bad PPM magic {:?}, expected P6",
            tokens[0]
        )));
    }
    let (w, h) = (parse_dim(&tokens[1])?, parse_dim(&tokens[2])?);
    if tokens[3] != "255" {
        return Err(Error::MalformedHeader(format!(
            "PPM maxval must be 255, got {}",
            tokens[3]
        )));
    }
    let payload = &bytes[offset..];
    if payload.len() != w * h * 3 {
        return Err(Error::MalformedHeader(format!(
            "{}x{} PPM needs {} payload bytes, found {}",
            w,
            h,
            w * h * 3,
            payload.len()
        )));
    }
    RgbImage::new(w, h, payload.iter().map(|&b| f64::from(b) / 255.0).collect())
}

pub fn write_rgb_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(image))
}

pub fn read_rgb_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&read_file(path.as_ref())?)
}

/// 9 significant digits in scientific notation.
fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// ASCII PLY text for `cloud`; `scalar` adds one float property per vertex.
pub fn encode_ply(cloud: &PointCloud, scalar: Option<(&str, &[f64])>) -> Result<String> {
    if let Some((_, values)) = scalar {
        if values.len() != cloud.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scalars for {} vertices",
                values.len(),
                cloud.len()
            )));
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if let Some((name, _)) = scalar {
        let _ = writeln!(s, "property float {name}");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", fmt_sig9(p[0]), fmt_sig9(p[1]), fmt_sig9(p[2]));
        if let Some((_, values)) = scalar {
            let _ = write!(s, " {}", fmt_sig9(values[i]));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_cloud_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), encode_ply(cloud, None)?.as_bytes())
}

/// PLY with an extra per-vertex float property named `name`.
pub fn write_scalar_cloud_ply(
    cloud: &PointCloud,
    name: &str,
    values: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), encode_ply(cloud, Some((name, values)))?.as_bytes())
}

pub fn write_report_json<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::io(path.as_ref(), std::io::Error::other(e)))?;
    text.push('\n');
    write_file(path.as_ref(), text.as_bytes())
}
