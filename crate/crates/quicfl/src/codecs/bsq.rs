//! Bounded-support quantization without rotation.
//!
//! The threshold is `T = ||x|| / sqrt(d*p)`, so at most `d*p` coordinates can
//! exceed it; those are sent exactly, the rest are stochastically quantized
//! on `2^b` uniform levels spanning `[-T, T]`. Decoding is table-free and
//! the estimate is unbiased.
//!
//! Message layout (little-endian): magic `QBSQ`, version u16, b u8, pad u8,
//! d u64, threshold f64, exact_count u64, exact_count x (index u32,
//! value f32), payload of d b-bit levels.

use crate::bitpack;
use crate::prf::prf_uniform;

use super::{check_finite, l2_norm, stochastic_level, Codec, CodecError, SeedSet};

const MAGIC: [u8; 4] = *b"QBSQ";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 8 + 8 + 8;

pub struct BsqCodec {
    bits: u8,
    p_num: u64,
    p_den: u64,
}

impl BsqCodec {
    pub fn new(bits: u8, p_num: u64, p_den: u64) -> Result<Self, CodecError> {
        if !(1..=8).contains(&bits) {
            return Err(CodecError::BadParameter(format!("b = {bits} outside 1..=8")));
        }
        if p_num == 0 || p_den == 0 || p_num >= p_den {
            return Err(CodecError::BadParameter(format!(
                "exact-send fraction {p_num}/{p_den} outside (0, 1)"
            )));
        }
        Ok(BsqCodec { bits, p_num, p_den })
    }

    fn p(&self) -> f64 {
        self.p_num as f64 / self.p_den as f64
    }

    fn parse<'a>(&self, msg: &'a [u8]) -> Result<BsqMessage<'a>, CodecError> {
        let bad = |what: &str| CodecError::MalformedMessage(format!("bsq: {what}"));
        if msg.len() < HEADER_BYTES {
            return Err(bad("truncated header"));
        }
        if msg[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let take_u16 = |o: usize| u16::from_le_bytes(msg[o..o + 2].try_into().unwrap());
        let take_u64 = |o: usize| u64::from_le_bytes(msg[o..o + 8].try_into().unwrap());
        if take_u16(4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let bits = msg[6];
        if bits != self.bits {
            return Err(bad(&format!("message bit width {bits}, codec expects {}", self.bits)));
        }
        let dim = take_u64(8) as usize;
        let threshold = f64::from_le_bytes(msg[16..24].try_into().unwrap());
        let exact_count = take_u64(24) as usize;
        if exact_count > dim {
            return Err(bad("exact-coordinate count exceeds dimension"));
        }
        let exact_end = HEADER_BYTES + 8 * exact_count;
        let payload_len = bitpack::packed_len(dim, bits);
        if msg.len() != exact_end + payload_len {
            return Err(bad("length mismatch"));
        }
        let mut exact = Vec::with_capacity(exact_count);
        for k in 0..exact_count {
            let off = HEADER_BYTES + 8 * k;
            let idx = u32::from_le_bytes(msg[off..off + 4].try_into().unwrap()) as usize;
            let val = f32::from_le_bytes(msg[off + 4..off + 8].try_into().unwrap());
            if idx >= dim {
                return Err(bad("exact index beyond dimension"));
            }
            exact.push((idx, val as f64));
        }
        Ok(BsqMessage { dim, threshold, exact, payload: &msg[exact_end..] })
    }
}

struct BsqMessage<'a> {
    dim: usize,
    threshold: f64,
    exact: Vec<(usize, f64)>,
    payload: &'a [u8],
}

impl Codec for BsqCodec {
    fn name(&self) -> &'static str {
        "bsq"
    }

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError> {
        check_finite(x)?;
        if x.is_empty() {
            return Err(CodecError::BadParameter("empty input".into()));
        }
        let d = x.len();
        let norm = l2_norm(x);
        let t = norm / (d as f64 * self.p()).sqrt();
        let levels = 1usize << self.bits;
        let width = 2.0 * t / (levels - 1) as f64;

        let mut exact: Vec<(u32, f32)> = Vec::new();
        let mut msgs = vec![0u8; d];
        if norm > 0.0 {
            for (i, &v) in x.iter().enumerate() {
                if v.abs() > t {
                    exact.push((i as u32, v as f32));
                    continue;
                }
                let u = prf_uniform(seeds.private, i as u64);
                msgs[i] = stochastic_level((v + t) / width, levels, u) as u8;
            }
        }

        let mut out = Vec::with_capacity(HEADER_BYTES + 8 * exact.len() + msgs.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.bits);
        out.push(0);
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&(exact.len() as u64).to_le_bytes());
        for (idx, val) in &exact {
            out.extend_from_slice(&idx.to_le_bytes());
            out.extend_from_slice(&val.to_le_bytes());
        }
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
            let accum = match &mut accum {
                Some(a) if a.len() != msg.dim => {
                    return Err(CodecError::MalformedMessage(
                        "bsq: inconsistent dimensions in aggregate".into(),
                    ))
                }
                Some(a) => a,
                None => accum.insert(vec![0.0; msg.dim]),
            };
            let width = 2.0 * msg.threshold / (levels - 1) as f64;
            let codes = bitpack::unpack(msg.payload, self.bits, msg.dim)?;
            let mut exact = msg.exact.iter().peekable();
            for (i, &code) in codes.iter().enumerate() {
                if let Some(&&(idx, val)) = exact.peek() {
                    if idx == i {
                        exact.next();
                        accum[i] += val;
                        continue;
                    }
                }
                accum[i] += -msg.threshold + code as f64 * width;
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
        let d = parsed.dim as f64;
        Ok(self.bits as f64 + 64.0 * parsed.exact.len() as f64 / d + 8.0 * HEADER_BYTES as f64 / d)
    }

    fn outlier_fraction(&self, msg: &[u8]) -> Result<f64, CodecError> {
        let parsed = self.parse(msg)?;
        Ok(parsed.exact.len() as f64 / parsed.dim as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::prf_uniform;

    fn seeds(private: u64) -> SeedSet {
        SeedSet { global: 0, client: 0, private }
    }

    #[test]
    fn constant_vector_has_no_exact_sends() {
        // |x_i| = ||x||/sqrt(d) < T for any p < 1.
        let codec = BsqCodec::new(1, 1, 32).unwrap();
        let x = vec![0.7; 64];
        let msg = codec.encode(&x, &seeds(1)).unwrap();
        assert_eq!(codec.outlier_fraction(&msg).unwrap(), 0.0);
    }

    #[test]
    fn grid_values_reconstruct_exactly() {
        // p = 1/9, b = 2, |x_i| = c puts every coordinate on the level grid
        // {-T, -T/3, T/3, T} with T = 3c.
        let codec = BsqCodec::new(2, 1, 9).unwrap();
        let x = vec![1.0, -1.0, -1.0, 1.0];
        let msg = codec.encode(&x, &seeds(5)).unwrap();
        let decoded = codec.decode_aggregate(&[&msg]).unwrap();
        for i in 0..4 {
            assert!((decoded[i] - x[i]).abs() <= 1e-9, "{} vs {}", decoded[i], x[i]);
        }
    }

    #[test]
    fn unbiased_over_private_randomness() {
        let codec = BsqCodec::new(1, 1, 32).unwrap();
        let d = 64;
        let x: Vec<f64> = (0..d).map(|i| prf_uniform(900, i as u64) * 2.0 - 1.0).collect();
        let trials = 20_000;
        let mut mean = vec![0.0; d];
        for rep in 0..trials {
            let msg = codec.encode(&x, &seeds(1000 + rep)).unwrap();
            let dec = codec.decode_aggregate(&[&msg]).unwrap();
            for i in 0..d {
                mean[i] += dec[i];
            }
        }
        let norm = l2_norm(&x);
        let t = norm / (d as f64 / 32.0).sqrt();
        let width = 2.0 * t;
        let per_coord_sd = width / 2.0;
        for i in 0..d {
            let m = mean[i] / trials as f64;
            let se = per_coord_sd / (trials as f64).sqrt();
            assert!((m - x[i]).abs() <= 5.0 * se, "coord {i}: {m} vs {}", x[i]);
        }
    }

    #[test]
    fn worst_case_error_bound_holds() {
        // vNMSE <= 1/(p (2^b - 1)^2) = 32 at p = 2^-5, b = 1.
        let codec = BsqCodec::new(1, 1, 32).unwrap();
        let d = 1 << 12;
        let mut worst: f64 = 0.0;
        for trial in 0..100u64 {
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let u1 = prf_uniform(trial, 2 * i as u64).max(1e-12);
                    let u2 = prf_uniform(trial, 2 * i as u64 + 1);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let msg = codec.encode(&x, &seeds(3_000 + trial)).unwrap();
            let dec = codec.decode_aggregate(&[&msg]).unwrap();
            let err: f64 = dec.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let vnmse = err / x.iter().map(|v| v * v).sum::<f64>();
            worst = worst.max(vnmse);
        }
        assert!(worst <= 32.0, "worst vNMSE {worst}");
    }

    #[test]
    fn rejects_bad_parameters_and_messages() {
        assert!(BsqCodec::new(0, 1, 32).is_err());
        assert!(BsqCodec::new(1, 1, 1).is_err());
        assert!(BsqCodec::new(1, 2, 1).is_err());
        let codec = BsqCodec::new(1, 1, 32).unwrap();
        assert!(codec.decode_aggregate(&[&b"nope"[..]]).is_err());
        let msg = codec.encode(&[1.0, 2.0], &seeds(1)).unwrap();
        assert!(codec.decode_aggregate(&[&msg[..msg.len() - 1]]).is_err());
    }
}
