//! Fixed-rate scalar quantization of loading matrices and their wire format.
//!
//! Ranges are fixed per kind, `[-1, 1]` for PCA and `[0, 1]` for NMF, which
//! unit-norm columns guarantee. A `b`-bit quantizer has `2^b - 1` steps
//! spanning the closed range, so both endpoints are representable.
//!
//! Blob layout (little-endian):
//!
//! ```text
//! "QFL1" | kind u8 | b u8 | T u16 | k u16 | lo f32 | hi f32
//!        | id_len u16 | id (UTF-8) | ceil(T*k*b/8) bytes of packed levels
//! ```
//!
//! Levels are packed column-major, least significant bit first.

use nalgebra::DMatrix;

use crate::error::CodecError;
use crate::factorization::{FactorLoadings, LoadingKind};

pub const BLOB_MAGIC: &[u8; 4] = b"QFL1";
/// Magic through the range fields; the id length and id follow.
pub const FIXED_HEADER_LEN: usize = 18;
const RANGE_SLACK: f64 = 1e-9;

pub fn quantizer_range(kind: LoadingKind) -> (f64, f64) {
    match kind {
        LoadingKind::Pca => (-1.0, 1.0),
        LoadingKind::Nmf => (0.0, 1.0),
    }
}

fn check_bits(bits: u8) -> Result<(), CodecError> {
    if (1..=16).contains(&bits) {
        Ok(())
    } else {
        Err(CodecError::BitsOutOfRange(bits))
    }
}

/// Largest level of a `bits`-bit quantizer, `2^b - 1`.
pub fn max_level(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Uniform quantizer step `(hi - lo) / (2^b - 1)`.
pub fn step(lo: f64, hi: f64, bits: u8) -> f64 {
    (hi - lo) / f64::from(max_level(bits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLoadings {
    image_id: String,
    kind: LoadingKind,
    dim: usize,
    order: usize,
    bits: u8,
    /// Column-major, `dim * order` entries.
    levels: Vec<u16>,
}

impl QuantizedLoadings {
    pub fn new(
        image_id: impl Into<String>,
        kind: LoadingKind,
        dim: usize,
        order: usize,
        bits: u8,
        levels: Vec<u16>,
    ) -> Result<Self, CodecError> {
        check_bits(bits)?;
        if dim == 0 || order == 0 || dim > usize::from(u16::MAX) || order > usize::from(u16::MAX) {
            return Err(CodecError::InvalidField(format!("shape {dim}x{order}")));
        }
        if levels.len() != dim * order {
            return Err(CodecError::InvalidField(format!(
                "{} levels for a {dim}x{order} matrix",
                levels.len()
            )));
        }
        if let Some(&bad) = levels.iter().find(|&&l| u32::from(l) > max_level(bits)) {
            return Err(CodecError::InvalidField(format!("level {bad} needs more than {bits} bits")));
        }
        let image_id = image_id.into();
        if image_id.len() > usize::from(u16::MAX) {
            return Err(CodecError::InvalidField("image id too long".into()));
        }
        Ok(Self {
            image_id,
            kind,
            dim,
            order,
            bits,
            levels,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn kind(&self) -> LoadingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn range(&self) -> (f64, f64) {
        quantizer_range(self.kind)
    }

    pub fn step(&self) -> f64 {
        let (lo, hi) = self.range();
        step(lo, hi, self.bits)
    }

    /// Entries `lo + level * step` before column renormalization.
    pub fn reconstruct_raw(&self) -> DMatrix<f64> {
        let (lo, hi) = self.range();
        let steps = f64::from(max_level(self.bits));
        DMatrix::from_iterator(
            self.dim,
            self.order,
            self.levels
                .iter()
                .map(|&l| dequantize_value(l, lo, hi, steps)),
        )
    }

    /// Size of [`encode`]'s output in bytes.
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + 2 + self.image_id.len() + packed_len(self.dim * self.order, self.bits)
    }
}

fn dequantize_value(level: u16, lo: f64, hi: f64, steps: f64) -> f64 {
    lo + f64::from(level) * (hi - lo) / steps
}

/// Quantizes one value; `(x - lo) * (2^b - 1) / (hi - lo)` rounded half away
/// from zero. `x` must already lie within the slack of `[lo, hi]`.
pub fn quantize_value(x: f64, lo: f64, hi: f64, bits: u8) -> u16 {
    let top = max_level(bits);
    let scaled = (x.clamp(lo, hi) - lo) * f64::from(top) / (hi - lo);
    (scaled.round() as u32).min(top) as u16
}

pub fn quantize(f: &FactorLoadings, bits: u8) -> Result<QuantizedLoadings, CodecError> {
    check_bits(bits)?;
    let (lo, hi) = quantizer_range(f.kind());
    let cols = f.columns();
    let mut levels = Vec::with_capacity(cols.len());
    for (c, col) in cols.column_iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            if !(x >= lo - RANGE_SLACK && x <= hi + RANGE_SLACK) {
                return Err(CodecError::OutOfRange {
                    row: r,
                    col: c,
                    value: x,
                    lo,
                    hi,
                });
            }
            levels.push(quantize_value(x, lo, hi, bits));
        }
    }
    QuantizedLoadings::new(f.image_id(), f.kind(), f.dim(), f.order(), bits, levels)
}

/// Reconstructs the loadings and renormalizes every column to unit norm.
///
/// A column whose levels all reconstruct to zero cannot be normalized and is
/// reported as [`CodecError::DegenerateColumn`].
pub fn dequantize(q: &QuantizedLoadings) -> Result<FactorLoadings, CodecError> {
    let mut cols = q.reconstruct_raw();
    for (c, mut col) in cols.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(CodecError::DegenerateColumn(c));
        }
        col /= norm;
    }
    FactorLoadings::new(q.image_id(), q.kind(), cols)
        .map_err(|e| CodecError::InvalidField(e.to_string()))
}

pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * usize::from(bits)).div_ceil(8)
}

fn pack_levels(levels: &[u16], bits: u8, out: &mut Vec<u8>) {
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &level in levels {
        acc |= u64::from(level) << filled;
        filled += u32::from(bits);
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
}

fn unpack_levels(bytes: &[u8], count: usize, bits: u8) -> Vec<u16> {
    let mask = max_level(bits) as u64;
    let mut levels = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut bytes = bytes.iter();
    while levels.len() < count {
        while filled < u32::from(bits) {
            acc |= u64::from(*bytes.next().expect("length checked by caller")) << filled;
            filled += 8;
        }
        levels.push((acc & mask) as u16);
        acc >>= bits;
        filled -= u32::from(bits);
    }
    levels
}

pub fn encode(q: &QuantizedLoadings) -> Vec<u8> {
    let (lo, hi) = q.range();
    let mut out = Vec::with_capacity(q.encoded_len());
    out.extend_from_slice(BLOB_MAGIC);
    out.push(q.kind.code());
    out.push(q.bits);
    out.extend_from_slice(&(q.dim as u16).to_le_bytes());
    out.extend_from_slice(&(q.order as u16).to_le_bytes());
    out.extend_from_slice(&(lo as f32).to_le_bytes());
    out.extend_from_slice(&(hi as f32).to_le_bytes());
    out.extend_from_slice(&(q.image_id.len() as u16).to_le_bytes());
    out.extend_from_slice(q.image_id.as_bytes());
    pack_levels(&q.levels, q.bits, &mut out);
    out
}

pub fn decode(bytes: &[u8]) -> Result<QuantizedLoadings, CodecError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(CodecError::Truncated {
                needed,
                have: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    if bytes.len() >= 4 && &bytes[..4] != BLOB_MAGIC {
        return Err(CodecError::BadMagic);
    }
    need(FIXED_HEADER_LEN + 2)?;
    let kind = LoadingKind::from_code(bytes[4])
        .ok_or_else(|| CodecError::InvalidField(format!("kind {}", bytes[4])))?;
    let bits = bytes[5];
    check_bits(bits)?;
    let dim = usize::from(u16::from_le_bytes([bytes[6], bytes[7]]));
    let order = usize::from(u16::from_le_bytes([bytes[8], bytes[9]]));
    let lo = f32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let hi = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let (want_lo, want_hi) = quantizer_range(kind);
    if f64::from(lo) != want_lo || f64::from(hi) != want_hi {
        return Err(CodecError::InvalidField(format!(
            "range [{lo}, {hi}] does not match {kind} range"
        )));
    }
    let id_len = usize::from(u16::from_le_bytes([bytes[18], bytes[19]]));
    let id_start = FIXED_HEADER_LEN + 2;
    need(id_start + id_len)?;
    let image_id = std::str::from_utf8(&bytes[id_start..id_start + id_len])
        .map_err(|e| CodecError::InvalidField(format!("image id: {e}")))?
        .to_string();
    let body_start = id_start + id_len;
    let body_len = packed_len(dim * order, bits);
    need(body_start + body_len)?;
    if bytes.len() > body_start + body_len {
        return Err(CodecError::InvalidField(format!(
            "{} trailing bytes",
            bytes.len() - body_start - body_len
        )));
    }
    let levels = unpack_levels(&bytes[body_start..], dim * order, bits);
    QuantizedLoadings::new(image_id, kind, dim, order, bits, levels)
}
