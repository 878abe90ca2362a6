//! Binary wire format for one client's encoded vector.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "QFLM" | version u16 | flags u16 | d u64 | d_pad u64 | b u8 | ell u8
//! | pad u16 | prf_version u32 | table_hash u64 | global_seed u64
//! | client_seed u64 | norm f64 | outlier_count u64
//! | outlier_count x (index u32, value f32) | payload_len u64 | payload
//! ```
//!
//! Every field is written by encoders and verified by decoders; messages from
//! a different format or PRF version are refused rather than misread.

use thiserror::Error;

use crate::bitpack;
use crate::prf::PRF_VERSION;

pub const MAGIC: [u8; 4] = *b"QFLM";
pub const WIRE_VERSION: u16 = 1;

/// Flag bit recording that the payload was produced by the quantile-first
/// encoder rather than the interpolated one. Decoding is identical.
pub const FLAG_QUANTILE_ENCODER: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    BadVersion(u16),
    #[error("unsupported PRF version {0}")]
    BadPrfVersion(u32),
    #[error("message truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("trailing {0} bytes after payload")]
    TrailingBytes(usize),
    #[error("{0}")]
    FieldInvalid(String),
}

/// One client's message: header, norm, seeds, exact outliers, and
/// bit-packed `b`-bit messages for all padded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub flags: u16,
    pub dim: u64,
    pub dim_padded: u64,
    pub bits: u8,
    pub shared_bits: u8,
    pub table_hash: u64,
    pub global_seed: u64,
    pub client_seed: u64,
    pub norm: f64,
    /// `(index, rotated-scaled coordinate)` pairs, indices strictly increasing.
    pub outliers: Vec<(u32, f32)>,
    pub payload: Vec<u8>,
}

impl EncodedVector {
    /// Checks the structural invariants shared by encoder and decoder.
    pub fn check(&self) -> Result<(), WireError> {
        if self.dim == 0 || self.dim_padded < self.dim || !self.dim_padded.is_power_of_two() {
            return Err(WireError::FieldInvalid(format!(
                "dimensions d={} d_pad={}",
                self.dim, self.dim_padded
            )));
        }
        if !(1..=8).contains(&self.bits) || self.shared_bits > 8 {
            return Err(WireError::FieldInvalid(format!(
                "bit widths b={} ell={}",
                self.bits, self.shared_bits
            )));
        }
        let expected = bitpack::packed_len(self.dim_padded as usize, self.bits);
        if self.payload.len() != expected {
            return Err(WireError::FieldInvalid(format!(
                "payload is {} bytes, expected {expected}",
                self.payload.len()
            )));
        }
        if !(self.norm.is_finite() && self.norm >= 0.0) {
            return Err(WireError::FieldInvalid(format!("norm {}", self.norm)));
        }
        let mut prev: Option<u32> = None;
        for &(idx, val) in &self.outliers {
            if (idx as u64) >= self.dim_padded {
                return Err(WireError::FieldInvalid(format!(
                    "outlier index {idx} beyond d_pad {}",
                    self.dim_padded
                )));
            }
            if prev.is_some_and(|p| p >= idx) {
                return Err(WireError::FieldInvalid(format!(
                    "outlier indices not strictly increasing at {idx}"
                )));
            }
            if !val.is_finite() {
                return Err(WireError::FieldInvalid(format!("outlier value at {idx}")));
            }
            prev = Some(idx);
        }
        if self.norm == 0.0 {
            if !self.outliers.is_empty() {
                return Err(WireError::FieldInvalid("zero norm with outliers".into()));
            }
            if self.payload.iter().any(|&b| b != 0) {
                return Err(WireError::FieldInvalid("zero norm with nonzero payload".into()));
            }
        }
        Ok(())
    }

    /// Bits of header a message carries besides payload and outlier records:
    /// fixed fields plus the two length prefixes.
    pub const HEADER_BITS: f64 = 8.0 * 80.0;

    /// Accounted bandwidth in bits per padded coordinate:
    /// `b + 64*outliers/d_pad + header/d_pad`.
    pub fn bits_per_coordinate(&self) -> f64 {
        let d_pad = self.dim_padded as f64;
        self.bits as f64 + 64.0 * self.outliers.len() as f64 / d_pad + Self::HEADER_BITS / d_pad
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80 + 8 * self.outliers.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.dim_padded.to_le_bytes());
        out.push(self.bits);
        out.push(self.shared_bits);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&PRF_VERSION.to_le_bytes());
        out.extend_from_slice(&self.table_hash.to_le_bytes());
        out.extend_from_slice(&self.global_seed.to_le_bytes());
        out.extend_from_slice(&self.client_seed.to_le_bytes());
        out.extend_from_slice(&self.norm.to_le_bytes());
        out.extend_from_slice(&(self.outliers.len() as u64).to_le_bytes());
        for &(idx, val) in &self.outliers {
            out.extend_from_slice(&idx.to_le_bytes());
            out.extend_from_slice(&val.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { bytes, offset: 0 };
        let magic: [u8; 4] = r.take::<4>()?;
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(r.take::<2>()?);
        if version != WIRE_VERSION {
            return Err(WireError::BadVersion(version));
        }
        let flags = u16::from_le_bytes(r.take::<2>()?);
        let dim = u64::from_le_bytes(r.take::<8>()?);
        let dim_padded = u64::from_le_bytes(r.take::<8>()?);
        let bits = r.take::<1>()?[0];
        let shared_bits = r.take::<1>()?[0];
        let pad = u16::from_le_bytes(r.take::<2>()?);
        if pad != 0 {
            return Err(WireError::FieldInvalid(format!("padding field {pad}")));
        }
        let prf_version = u32::from_le_bytes(r.take::<4>()?);
        if prf_version != PRF_VERSION {
            return Err(WireError::BadPrfVersion(prf_version));
        }
        let table_hash = u64::from_le_bytes(r.take::<8>()?);
        let global_seed = u64::from_le_bytes(r.take::<8>()?);
        let client_seed = u64::from_le_bytes(r.take::<8>()?);
        let norm = f64::from_le_bytes(r.take::<8>()?);
        let outlier_count = u64::from_le_bytes(r.take::<8>()?);
        if outlier_count > dim_padded {
            return Err(WireError::FieldInvalid(format!(
                "outlier count {outlier_count} beyond d_pad {dim_padded}"
            )));
        }
        let mut outliers = Vec::with_capacity(outlier_count as usize);
        for _ in 0..outlier_count {
            let idx = u32::from_le_bytes(r.take::<4>()?);
            let val = f32::from_le_bytes(r.take::<4>()?);
            outliers.push((idx, val));
        }
        let payload_len = u64::from_le_bytes(r.take::<8>()?);
        let payload = r.take_slice(payload_len as usize)?.to_vec();
        if r.offset != bytes.len() {
            return Err(WireError::TrailingBytes(bytes.len() - r.offset));
        }
        let msg = EncodedVector {
            flags,
            dim,
            dim_padded,
            bits,
            shared_bits,
            table_hash,
            global_seed,
            client_seed,
            norm,
            outliers,
            payload,
        };
        msg.check()?;
        Ok(msg)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let slice = self.take_slice(N)?;
        Ok(slice.try_into().expect("length checked"))
    }

    fn take_slice(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.offset + n > self.bytes.len() {
            return Err(WireError::Truncated { offset: self.offset, needed: n });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EncodedVector {
        EncodedVector {
            flags: 0,
            dim: 6,
            dim_padded: 8,
            bits: 2,
            shared_bits: 3,
            table_hash: 0xdead_beef_cafe_f00d,
            global_seed: 1,
            client_seed: 2,
            norm: 3.5,
            outliers: vec![(1, -4.25), (5, 3.75)],
            payload: vec![0b1110_0100, 0b0001_1011],
        }
    }

    #[test]
    fn round_trip() {
        let msg = sample();
        let bytes = msg.to_bytes();
        let back = EncodedVector::from_bytes(&bytes).unwrap();
        assert_eq!(back, msg);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_versions() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EncodedVector::from_bytes(&bytes), Err(WireError::BadMagic(_))));

        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(EncodedVector::from_bytes(&bytes), Err(WireError::BadVersion(9))));

        let mut bytes = sample().to_bytes();
        bytes[28] = 7; // prf_version lives after the u16 pad at offset 28
        assert!(matches!(EncodedVector::from_bytes(&bytes), Err(WireError::BadPrfVersion(7))));
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            EncodedVector::from_bytes(&bytes[..bytes.len() - 1]),
            Err(WireError::Truncated { .. })
        ));
        let mut extended = bytes.clone();
        extended.push(0);
        assert_eq!(EncodedVector::from_bytes(&extended), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn rejects_invalid_fields() {
        let mut msg = sample();
        msg.outliers = vec![(5, 1.0), (1, 1.0)];
        assert!(msg.check().is_err());

        let mut msg = sample();
        msg.outliers = vec![(8, 1.0)];
        assert!(msg.check().is_err());

        let mut msg = sample();
        msg.payload.push(0);
        assert!(msg.check().is_err());

        let mut msg = sample();
        msg.norm = 0.0;
        assert!(msg.check().is_err(), "zero norm with outliers/payload must fail");
    }

    #[test]
    fn accounted_bandwidth() {
        let msg = sample();
        let expected = 2.0 + 64.0 * 2.0 / 8.0 + EncodedVector::HEADER_BITS / 8.0;
        assert!((msg.bits_per_coordinate() - expected).abs() < 1e-12);
    }
}
