//! File formats: grayscale PFM depth maps, the `ZACN` tensor container and
//! `key=value` intrinsics files.
//!
//! `ZACN` layout, little-endian throughout:
//!
//! ```text
//! "ZACN" | u32 version (1) | u8 dtype (0 = f32) | u8 ndim | u64 dims[ndim] | payload
//! ```
//!
//! The payload holds exactly `product(dims)` values; anything shorter or
//! longer is rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::ops::ConvWeights;
use crate::tensor::{DepthMap, FeatureTensor, OffsetField};

pub const MAGIC: &[u8; 4] = b"ZACN";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

/// Decoded `ZACN` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorFileHeader {
    pub version: u32,
    pub dtype: u8,
    pub dims: Vec<u64>,
}

impl TensorFileHeader {
    pub fn element_count(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(usize::try_from(*d).ok()?))
    }

    pub fn payload_len(&self) -> Option<usize> {
        self.element_count()?.checked_mul(4)
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 + 1 + 1 + 8 * self.dims.len()
    }
}

pub fn encode_container(dims: &[usize], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(10 + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<TensorFileHeader> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected \"ZACN\""));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let dtype = cur.take(1, "dtype")?[0];
    if dtype != DTYPE_F32 {
        return Err(Error::parse(8, format!("unsupported dtype tag {dtype}")));
    }
    let ndim = cur.take(1, "dimension count")?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(cur.take(8, "dimension")?.try_into().unwrap()));
    }
    Ok(TensorFileHeader {
        version,
        dtype,
        dims,
    })
}

/// Parses a container into its dimensions and values.
pub fn decode_container(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let header = decode_header(bytes)?;
    let start = header.encoded_len();
    let expected = header
        .payload_len()
        .ok_or_else(|| Error::parse(10, "dimensions overflow"))?;
    let actual = bytes.len() - start;
    if actual != expected {
        return Err(Error::Truncated {
            expected: start + expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let dims = header.dims.iter().map(|d| *d as usize).collect();
    Ok((dims, data))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn expect_ndim(dims: &[usize], n: usize, what: &str) -> Result<()> {
    if dims.len() != n {
        return Err(Error::Format(format!(
            "{what} needs {n} dimensions, container has {} ({dims:?})",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Format(format!("{what} has a zero dimension ({dims:?})")));
    }
    Ok(())
}

// ---- PFM ----

/// Encodes a grayscale little-endian PFM (negative scale, rows bottom-up).
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (h, w) = (depth.height(), depth.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&depth.get(y, x).to_le_bytes());
        }
    }
    out
}

fn pfm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(usize, &'a str)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "unexpected end of PFM header"));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::parse(start, "PFM header is not ASCII"))?;
    Ok((start, tok))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty file"));
    }
    let mut pos = 0;
    let (at, magic) = pfm_token(bytes, &mut pos)?;
    match magic {
        "Pf" => {}
        "PF" => {
            return Err(Error::Format(
                "color PFM (\"PF\") cannot hold a depth map; expected grayscale \"Pf\"".into(),
            ))
        }
        other => return Err(Error::parse(at, format!("bad PFM magic {other:?}"))),
    }
    let mut dim = |name: &str| -> Result<usize> {
        let (at, tok) = pfm_token(bytes, &mut pos)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::parse(at, format!("invalid PFM {name} {tok:?}"))),
        }
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let (at, tok) = pfm_token(bytes, &mut pos)?;
    let scale: f32 = tok
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::parse(at, format!("invalid PFM scale {tok:?}")))?;
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "missing separator after PFM scale"));
    }
    pos += 1;
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(at, "PFM dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(Error::Truncated {
            expected: pos + expected,
            actual: bytes.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; h * w];
    for (i, c) in raster.chunks_exact(4).enumerate() {
        let b: [u8; 4] = c.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (h - 1 - i / w, i % w);
        data[row * w + col] = v;
    }
    DepthMap::new(h, w, data)
}

/// Reads a depth map from a PFM or a 2-dimensional `ZACN` container.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let bytes = read_bytes(path.as_ref())?;
    decode_depth(&bytes)
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.starts_with(MAGIC) {
        let (dims, data) = decode_container(bytes)?;
        expect_ndim(&dims, 2, "depth map")?;
        DepthMap::new(dims[0], dims[1], data)
    } else {
        decode_pfm(bytes)
    }
}

/// Writes `depth` as little-endian grayscale PFM.
pub fn write_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(depth))
}

pub fn write_depth_container(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_container(&[depth.height(), depth.width()], depth.data()),
    )
}

// ---- tensors, offsets, weights ----

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureTensor> {
    let (dims, data) = decode_container(bytes)?;
    match dims.len() {
        2 => {
            expect_ndim(&dims, 2, "feature tensor")?;
            FeatureTensor::new(1, dims[0], dims[1], data)
        }
        _ => {
            expect_ndim(&dims, 3, "feature tensor")?;
            FeatureTensor::new(dims[0], dims[1], dims[2], data)
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    decode_tensor(&read_bytes(path.as_ref())?)
}

pub fn write_tensor(x: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_container(&[x.channels(), x.height(), x.width()], x.data()),
    )
}

pub fn encode_offsets(field: &OffsetField) -> Vec<u8> {
    encode_container(&[field.channels(), field.height(), field.width()], field.data())
}

pub fn decode_offsets(bytes: &[u8]) -> Result<OffsetField> {
    let (dims, data) = decode_container(bytes)?;
    expect_ndim(&dims, 3, "offset field")?;
    let channels = dims[0];
    let taps = channels / 2;
    let n = (taps as f64).sqrt().round() as usize;
    if channels % 2 != 0 || n * n != taps || n.is_multiple_of(2) {
        return Err(Error::Format(format!(
            "offset channel count {channels} is not 2*N*N for an odd kernel size N"
        )));
    }
    OffsetField::new(taps, dims[1], dims[2], data)
}

pub fn write_offsets(field: &OffsetField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_offsets(field))
}

pub fn read_offsets(path: impl AsRef<Path>) -> Result<OffsetField> {
    decode_offsets(&read_bytes(path.as_ref())?)
}

pub fn decode_weights(bytes: &[u8]) -> Result<ConvWeights> {
    let (dims, data) = decode_container(bytes)?;
    expect_ndim(&dims, 4, "convolution weights")?;
    if dims[2] != dims[3] {
        return Err(Error::Format(format!(
            "convolution kernel must be square, got {}x{}",
            dims[2], dims[3]
        )));
    }
    ConvWeights::new(dims[0], dims[1], dims[2], data)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<ConvWeights> {
    decode_weights(&read_bytes(path.as_ref())?)
}

pub fn write_weights(w: &ConvWeights, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_container(
            &[w.out_channels(), w.in_channels(), w.size(), w.size()],
            w.data(),
        ),
    )
}

// ---- intrinsics ----

/// Parses `key=value` lines (`fu`, `fv`, optional `cu`, `cv`, `width`,
/// `height`). `#` starts a comment. A missing principal point defaults to
/// the image center, which then requires `width` and `height`.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let mut vals: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["fu", "fv", "cu", "cv", "width", "height"];
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ParseLine {
            line: line_no,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let key = key.trim();
        let slot = KEYS.iter().position(|k| *k == key).ok_or_else(|| Error::ParseLine {
            line: line_no,
            message: format!("unknown key {key:?}"),
        })?;
        let value = value.trim();
        let v: f64 = value.parse().map_err(|_| Error::ParseLine {
            line: line_no,
            message: format!("value for {key} is not a number: {value:?}"),
        })?;
        if vals[slot].replace(v).is_some() {
            return Err(Error::ParseLine {
                line: line_no,
                message: format!("duplicate key {key:?}"),
            });
        }
    }
    let [fu, fv, cu, cv, width, height] = vals;
    let fu = fu.ok_or_else(|| Error::config("intrinsics missing required key \"fu\""))?;
    let fv = fv.ok_or_else(|| Error::config("intrinsics missing required key \"fv\""))?;
    let center = |c: Option<f64>, extent: Option<f64>, ckey: &str, ekey: &str| -> Result<f64> {
        match (c, extent) {
            (Some(c), _) => Ok(c),
            (None, Some(e)) => Ok((e - 1.0) / 2.0),
            (None, None) => Err(Error::config(format!(
                "intrinsics missing \"{ckey}\" and \"{ekey}\" to default it from"
            ))),
        }
    };
    let cu = center(cu, width, "cu", "width")?;
    let cv = center(cv, height, "cv", "height")?;
    CameraIntrinsics::new(fu, fv, cu, cv)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intrinsics(&text)
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!("fu={}\nfv={}\ncu={}\ncv={}\n", k.fu, k.fv, k.cu, k.cv)
}

// ---- resampling ----

/// Nearest-neighbor resampling: output pixel `i` reads source
/// `floor(i * in / out)`. Values are copied, never blended, so missing
/// measurements propagate and no new depths appear.
pub fn resample_depth(d: &DepthMap, out_h: usize, out_w: usize) -> Result<DepthMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resampled depth dimensions must be >= 1"));
    }
    let (h, w) = (d.height(), d.width());
    Ok(DepthMap::from_fn(out_h, out_w, |y, x| {
        d.get(y * h / out_h, x * w / out_w)
    }))
}
