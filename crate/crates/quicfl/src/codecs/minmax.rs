//! Per-client rotation with min/max-normalized uniform quantization.
//!
//! The client rotates with its own seed, transmits the rotated minimum and
//! maximum, and stochastically quantizes every rotated coordinate on `2^b`
//! uniform levels between them. The server must therefore inverse-rotate
//! each client individually before averaging.
//!
//! Message layout (little-endian): magic `QMMH`, version u16, b u8, pad u8,
//! d u64, d_pad u64, client_seed u64, lo f64, hi f64, payload of d_pad
//! b-bit levels.

use crate::bitpack;
use crate::prf::prf_uniform;
use crate::transform::{rht_forward, rht_inverse, RotationSpec};

use super::{check_finite, stochastic_level, Codec, CodecError, SeedSet};

const MAGIC: [u8; 4] = *b"QMMH";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 8 + 8 + 8 + 8 + 8;

pub struct MinMaxHadamardCodec {
    bits: u8,
}

struct MinMaxMessage<'a> {
    dim: usize,
    dim_padded: usize,
    client_seed: u64,
    lo: f64,
    hi: f64,
    payload: &'a [u8],
}

impl MinMaxHadamardCodec {
    pub fn new(bits: u8) -> Result<Self, CodecError> {
        if !(1..=8).contains(&bits) {
            return Err(CodecError::BadParameter(format!("b = {bits} outside 1..=8")));
        }
        Ok(MinMaxHadamardCodec { bits })
    }

    fn parse<'a>(&self, msg: &'a [u8]) -> Result<MinMaxMessage<'a>, CodecError> {
        let bad = |what: &str| CodecError::MalformedMessage(format!("minmax_hadamard: {what}"));
        if msg.len() < HEADER_BYTES {
            return Err(bad("truncated header"));
        }
        if msg[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes(msg[4..6].try_into().unwrap()) != VERSION {
            return Err(bad("unsupported version"));
        }
        if msg[6] != self.bits {
            return Err(bad("bit width mismatch"));
        }
        let take_u64 = |o: usize| u64::from_le_bytes(msg[o..o + 8].try_into().unwrap());
        let dim = take_u64(8) as usize;
        let dim_padded = take_u64(16) as usize;
        if dim == 0 || dim_padded < dim || !dim_padded.is_power_of_two() {
            return Err(bad("bad dimensions"));
        }
        let client_seed = take_u64(24);
        let lo = f64::from_le_bytes(msg[32..40].try_into().unwrap());
        let hi = f64::from_le_bytes(msg[40..48].try_into().unwrap());
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad("bad range"));
        }
        let payload = &msg[HEADER_BYTES..];
        if payload.len() != bitpack::packed_len(dim_padded, self.bits) {
            return Err(bad("length mismatch"));
        }
        Ok(MinMaxMessage { dim, dim_padded, client_seed, lo, hi, payload })
    }
}

impl Codec for MinMaxHadamardCodec {
    fn name(&self) -> &'static str {
        "minmax_hadamard"
    }

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError> {
        check_finite(x)?;
        let spec = RotationSpec::rht(seeds.client, x.len())?;
        let rotated = rht_forward(x, &spec)?;
        let lo = rotated.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rotated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let levels = 1usize << self.bits;
        let width = (hi - lo) / (levels - 1) as f64;

        let mut msgs = vec![0u8; spec.dim_padded];
        if width > 0.0 {
            for (i, &v) in rotated.iter().enumerate() {
                let u = prf_uniform(seeds.private, i as u64);
                msgs[i] = stochastic_level((v - lo) / width, levels, u) as u8;
            }
        }

        let mut out = Vec::with_capacity(HEADER_BYTES + msgs.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.bits);
        out.push(0);
        out.extend_from_slice(&(x.len() as u64).to_le_bytes());
        out.extend_from_slice(&(spec.dim_padded as u64).to_le_bytes());
        out.extend_from_slice(&seeds.client.to_le_bytes());
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
        out.extend_from_slice(&bitpack::pack(&msgs, self.bits)?);
        Ok(out)
    }

    fn decode_aggregate(&self, msgs: &[&[u8]]) -> Result<Vec<f64>, CodecError> {
        if msgs.is_empty() {
            return Err(CodecError::MalformedMessage("empty aggregate".into()));
        }
        let levels = 1usize << self.bits;
        let mut accum: Option<Vec<f64>> = None;
        for raw in msgs {
            let msg = self.parse(raw)?;
            let width = (msg.hi - msg.lo) / (levels - 1) as f64;
            let codes = bitpack::unpack(msg.payload, self.bits, msg.dim_padded)?;
            let rotated: Vec<f64> =
                codes.iter().map(|&c| msg.lo + c as f64 * width).collect();
            let spec = RotationSpec::rht(msg.client_seed, msg.dim)?;
            if spec.dim_padded != msg.dim_padded {
                return Err(CodecError::MalformedMessage(
                    "minmax_hadamard: padded dimension mismatch".into(),
                ));
            }
            let client = rht_inverse(&rotated, &spec)?;
            let accum = match &mut accum {
                Some(a) if a.len() != msg.dim => {
                    return Err(CodecError::MalformedMessage(
                        "minmax_hadamard: inconsistent dimensions in aggregate".into(),
                    ))
                }
                Some(a) => a,
                None => accum.insert(vec![0.0; msg.dim]),
            };
            for (a, v) in accum.iter_mut().zip(&client) {
                *a += v;
            }
        }
        let mut out = accum.expect("nonempty aggregate");
        let inv_n = 1.0 / msgs.len() as f64;
        for v in &mut out {
            *v *= inv_n;
        }
        Ok(out)
    }

    fn bits_per_coordinate(&self, msg: &[u8]) -> Result<f64, CodecError> {
        let parsed = self.parse(msg)?;
        Ok(self.bits as f64 + 8.0 * HEADER_BYTES as f64 / parsed.dim_padded as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::prf_uniform;

    fn seeds(client: u64, private: u64) -> SeedSet {
        SeedSet { global: 0, client, private }
    }

    #[test]
    fn constant_rotated_vector_is_exact() {
        // Inverse-rotating an all-ones vector yields an input whose rotation
        // is constant, so min = max and the codec is lossless.
        let spec = RotationSpec::rht(11, 16).unwrap();
        let x = rht_inverse(&vec![1.0; 16], &spec).unwrap();
        let codec = MinMaxHadamardCodec::new(1).unwrap();
        let msg = codec.encode(&x, &seeds(11, 5)).unwrap();
        let dec = codec.decode_aggregate(&[&msg]).unwrap();
        for i in 0..16 {
            assert!((dec[i] - x[i]).abs() <= 1e-12, "{} vs {}", dec[i], x[i]);
        }
    }

    #[test]
    fn unbiased_over_private_randomness() {
        let codec = MinMaxHadamardCodec::new(1).unwrap();
        let d = 32;
        let x: Vec<f64> = (0..d).map(|i| prf_uniform(8, i as u64) * 2.0 - 1.0).collect();
        let trials = 40_000;
        let mut mean = vec![0.0; d];
        for rep in 0..trials {
            let msg = codec.encode(&x, &seeds(77, rep)).unwrap();
            let dec = codec.decode_aggregate(&[&msg]).unwrap();
            for i in 0..d {
                mean[i] += dec[i];
            }
        }
        // Rotated range is a few units wide; per-coordinate reconstruction
        // error after inverse rotation stays below the full width.
        let se = 4.0 / (trials as f64).sqrt();
        for i in 0..d {
            let m = mean[i] / trials as f64;
            assert!((m - x[i]).abs() <= 4.0 * se, "coord {i}: {m} vs {}", x[i]);
        }
    }

    #[test]
    fn eight_bits_is_nearly_lossless() {
        let codec = MinMaxHadamardCodec::new(8).unwrap();
        let d = 1 << 12;
        let x: Vec<f64> = (0..d)
            .map(|i| {
                let u1 = prf_uniform(91, 2 * i as u64).max(1e-12);
                let u2 = prf_uniform(91, 2 * i as u64 + 1);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let msg = codec.encode(&x, &seeds(3, 4)).unwrap();
        let dec = codec.decode_aggregate(&[&msg]).unwrap();
        let err: f64 = dec.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let vnmse = err / x.iter().map(|v| v * v).sum::<f64>();
        assert!(vnmse <= 1e-3, "vNMSE {vnmse}");
    }

    #[test]
    fn rejects_malformed() {
        let codec = MinMaxHadamardCodec::new(2).unwrap();
        assert!(codec.decode_aggregate(&[&b"QMMH"[..]]).is_err());
        let msg = codec.encode(&[1.0, 2.0, 3.0], &seeds(1, 2)).unwrap();
        let mut tampered = msg.clone();
        tampered[6] = 5;
        assert!(codec.decode_aggregate(&[&tampered]).is_err());
    }
}
