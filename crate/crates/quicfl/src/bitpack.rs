//! Fixed-width bit packing for the b-bit message payloads.
//!
//! Message `i` occupies bits `[i*b, (i+1)*b)` of the output, LSB-first within
//! each byte, so the layout is independent of word size and endianness.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitpackError {
    #[error("bit width {0} out of range 1..=8")]
    BadWidth(u8),
    #[error("message {value} at index {index} does not fit in {bits} bits")]
    MessageTooWide { index: usize, value: u8, bits: u8 },
    #[error("buffer holds {got} bytes, expected {expected} for {count} messages of {bits} bits")]
    LengthMismatch { got: usize, expected: usize, count: usize, bits: u8 },
}

/// Number of bytes occupied by `count` messages of `bits` bits.
pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Packs `messages` (each `< 2^bits`) into `ceil(count*bits/8)` bytes.
pub fn pack(messages: &[u8], bits: u8) -> Result<Vec<u8>, BitpackError> {
    if !(1..=8).contains(&bits) {
        return Err(BitpackError::BadWidth(bits));
    }
    let limit = ((1u16 << bits) - 1) as u8;
    let mut out = vec![0u8; packed_len(messages.len(), bits)];
    for (i, &m) in messages.iter().enumerate() {
        if m > limit {
            return Err(BitpackError::MessageTooWide { index: i, value: m, bits });
        }
        let bit = i * bits as usize;
        let byte = bit / 8;
        let shift = bit % 8;
        out[byte] |= m << shift;
        if shift + bits as usize > 8 {
            out[byte + 1] |= m >> (8 - shift);
        }
    }
    Ok(out)
}

/// Unpacks `count` messages of `bits` bits; `bytes` must be exactly the
/// packed length.
pub fn unpack(bytes: &[u8], bits: u8, count: usize) -> Result<Vec<u8>, BitpackError> {
    if !(1..=8).contains(&bits) {
        return Err(BitpackError::BadWidth(bits));
    }
    let expected = packed_len(count, bits);
    if bytes.len() != expected {
        return Err(BitpackError::LengthMismatch { got: bytes.len(), expected, count, bits });
    }
    let mask = ((1u16 << bits) - 1) as u8;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let bit = i * bits as usize;
        let byte = bit / 8;
        let shift = bit % 8;
        let mut v = bytes[byte] >> shift;
        if shift + bits as usize > 8 {
            v |= bytes[byte + 1] << (8 - shift);
        }
        out.push(v & mask);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::prf;

    #[test]
    fn one_bit_example() {
        let bytes = pack(&[1, 0, 1, 1, 0, 0, 0, 0], 1).unwrap();
        assert_eq!(bytes, vec![0x0D]);
    }

    #[test]
    fn three_bit_example() {
        // 111 000 101 laid out LSB-first: byte0 = 0x47, byte1 = 0x01.
        let bytes = pack(&[7, 0, 5], 3).unwrap();
        assert_eq!(bytes, vec![0x47, 0x01]);
    }

    #[test]
    fn rejects_wide_message() {
        assert_eq!(
            pack(&[4], 2),
            Err(BitpackError::MessageTooWide { index: 0, value: 4, bits: 2 })
        );
    }

    #[test]
    fn rejects_bad_buffer_length() {
        assert!(matches!(unpack(&[0], 3, 3), Err(BitpackError::LengthMismatch { .. })));
    }

    #[test]
    fn round_trip_large_random() {
        for bits in 1..=8u8 {
            let mask = ((1u16 << bits) - 1) as u8;
            let msgs: Vec<u8> =
                (0..1_000_000u64).map(|i| (prf(bits as u64, i) as u8) & mask).collect();
            let packed = pack(&msgs, bits).unwrap();
            assert_eq!(packed.len(), packed_len(msgs.len(), bits));
            let back = unpack(&packed, bits, msgs.len()).unwrap();
            assert_eq!(back, msgs);
        }
    }
}
