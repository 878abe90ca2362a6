//! Sign/magnitude stochastic quantization against the vector norm.
//!
//! Each coordinate is sent as a sign bit plus a stochastic quantization of
//! `|x_i| / ||x||` onto the levels `{0, 1/(2^b-1), ..., 1}`. Unbiased.
//!
//! Message layout (little-endian): magic `QSGD`, version u16, b u8, pad u8,
//! d u64, norm f64, sign bits (d packed bits), payload of d b-bit levels.

use crate::bitpack;
use crate::prf::prf_uniform;

use super::{check_finite, l2_norm, stochastic_level, Codec, CodecError, SeedSet};

const MAGIC: [u8; 4] = *b"QSGD";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 8 + 8;

pub struct QsgdCodec {
    bits: u8,
}

impl QsgdCodec {
    pub fn new(bits: u8) -> Result<Self, CodecError> {
        if !(1..=8).contains(&bits) {
            return Err(CodecError::BadParameter(format!("b = {bits} outside 1..=8")));
        }
        Ok(QsgdCodec { bits })
    }

    fn parse<'a>(&self, msg: &'a [u8]) -> Result<(usize, f64, &'a [u8], &'a [u8]), CodecError> {
        let bad = |what: &str| CodecError::MalformedMessage(format!("qsgd: {what}"));
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
        let dim = u64::from_le_bytes(msg[8..16].try_into().unwrap()) as usize;
        let norm = f64::from_le_bytes(msg[16..24].try_into().unwrap());
        let signs_len = bitpack::packed_len(dim, 1);
        let payload_len = bitpack::packed_len(dim, self.bits);
        if msg.len() != HEADER_BYTES + signs_len + payload_len {
            return Err(bad("length mismatch"));
        }
        let signs = &msg[HEADER_BYTES..HEADER_BYTES + signs_len];
        let payload = &msg[HEADER_BYTES + signs_len..];
        Ok((dim, norm, signs, payload))
    }
}

impl Codec for QsgdCodec {
    fn name(&self) -> &'static str {
        "qsgd"
    }

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError> {
        check_finite(x)?;
        if x.is_empty() {
            return Err(CodecError::BadParameter("empty input".into()));
        }
        let d = x.len();
        let norm = l2_norm(x);
        let levels = 1usize << self.bits;
        let steps = (levels - 1) as f64;

        let mut signs = vec![0u8; d];
        let mut msgs = vec![0u8; d];
        if norm > 0.0 {
            for (i, &v) in x.iter().enumerate() {
                signs[i] = u8::from(v < 0.0);
                let u = prf_uniform(seeds.private, i as u64);
                msgs[i] = stochastic_level(v.abs() / norm * steps, levels, u) as u8;
            }
        }

        let mut out = Vec::with_capacity(HEADER_BYTES + d / 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.bits);
        out.push(0);
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&norm.to_le_bytes());
        out.extend_from_slice(&bitpack::pack(&signs, 1)?);
        out.extend_from_slice(&bitpack::pack(&msgs, self.bits)?);
        Ok(out)
    }

    fn decode_aggregate(&self, msgs: &[&[u8]]) -> Result<Vec<f64>, CodecError> {
        if msgs.is_empty() {
            return Err(CodecError::MalformedMessage("empty aggregate".into()));
        }
        let steps = ((1usize << self.bits) - 1) as f64;
        let mut accum: Option<Vec<f64>> = None;
        for raw in msgs {
            let (dim, norm, signs, payload) = self.parse(raw)?;
            let accum = match &mut accum {
                Some(a) if a.len() != dim => {
                    return Err(CodecError::MalformedMessage(
                        "qsgd: inconsistent dimensions in aggregate".into(),
                    ))
                }
                Some(a) => a,
                None => accum.insert(vec![0.0; dim]),
            };
            let signs = bitpack::unpack(signs, 1, dim)?;
            let codes = bitpack::unpack(payload, self.bits, dim)?;
            for i in 0..dim {
                let magnitude = norm * codes[i] as f64 / steps;
                accum[i] += if signs[i] == 1 { -magnitude } else { magnitude };
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
        let (dim, ..) = self.parse(msg)?;
        Ok(self.bits as f64 + 1.0 + 8.0 * HEADER_BYTES as f64 / dim as f64)
    }
}
