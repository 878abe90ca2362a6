//! Interpolated bounded-support codec (the default `quicfl` scheme).
//!
//! A coordinate `z` in `[-T, T]` is transmitted as follows. The sender finds
//! the largest message `x̲` whose column mean `M[x̲]` does not overshoot `z`,
//! then the largest shared-randomness pivot `h̲` such that sending `x̲+1`
//! below it still underestimates `z`. Messages are deterministic for every
//! shared-randomness value except `h̲`, where the sender randomizes between
//! `x̲` and `x̲+1` with exactly the probability that makes the receiver's
//! expectation equal `z`. Unbiasedness therefore holds for every `z`, not
//! just at the solver's quantiles.

use std::sync::Arc;

use crate::bitpack;
use crate::prf::{prf, prf_uniform};
use crate::tables::QuantTable;
use crate::transform::{rht_forward, rht_inverse, RotationSpec};
use crate::wire::EncodedVector;

use super::{check_finite, l2_norm, Codec, CodecError, SeedSet};

/// Slack accepted beyond `T` before a coordinate is rejected as out of range.
const RANGE_SLACK: f64 = 1e-9;

/// Clamping window for probabilities that land just outside `[0, 1]` from
/// rounding; larger excursions are internal-consistency errors.
const PROB_SLACK: f64 = 1e-9;

/// The sender's decision for one in-range coordinate: lower message index,
/// pivot shared-randomness index, the target conditional mean at the pivot,
/// and the probability of sending `x̲+1` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenderDecision {
    pub x_lower: usize,
    pub h_lower: usize,
    pub mu: f64,
    pub p_up: f64,
}

/// Computes the sender's decision for `z` in `[-T, T]` (with `1e-9` slack).
pub fn sender_distribution(z: f64, table: &QuantTable) -> Result<SenderDecision, CodecError> {
    let t = table.config().threshold;
    if !z.is_finite() || z.abs() > t + RANGE_SLACK {
        return Err(CodecError::OutOfRange { z });
    }
    let z = z.clamp(-t, t);
    let shared = table.config().num_shared();
    let messages = table.config().num_messages();
    let recon = table.recon();

    let x_lower = table.col_means().partition_point(|&v| v <= z).saturating_sub(1);

    if x_lower == messages - 1 {
        // z equals the top column mean (= T): send x_lower for every h.
        let rest: f64 = (1..shared).map(|h| recon[h][x_lower]).sum();
        let mu = shared as f64 * z - rest;
        let err = (mu - recon[0][x_lower]).abs();
        if err > PROB_SLACK * shared as f64 {
            return Err(CodecError::Inconsistent(format!(
                "deterministic top message misses its mean by {err}"
            )));
        }
        return Ok(SenderDecision { x_lower, h_lower: 0, mu, p_up: 0.0 });
    }

    let h_lower = table.prefix()[x_lower].partition_point(|&v| v <= z).saturating_sub(1);

    let above: f64 = (0..h_lower).map(|h| recon[h][x_lower + 1]).sum();
    let below: f64 = (h_lower + 1..shared).map(|h| recon[h][x_lower]).sum();
    let mu = shared as f64 * z - above - below;

    let lo = recon[h_lower][x_lower];
    let hi = recon[h_lower][x_lower + 1];
    let p_up = if hi > lo {
        let raw = (mu - lo) / (hi - lo);
        if raw < -PROB_SLACK || raw > 1.0 + PROB_SLACK {
            return Err(CodecError::Inconsistent(format!(
                "interpolation probability {raw} for z = {z}"
            )));
        }
        raw.clamp(0.0, 1.0)
    } else {
        // Equal receiver values: the message choice cannot matter.
        if (mu - lo).abs() > PROB_SLACK * shared as f64 {
            return Err(CodecError::Inconsistent(format!(
                "degenerate cell cannot reach mean {mu} (value {lo})"
            )));
        }
        0.0
    };
    Ok(SenderDecision { x_lower, h_lower, mu, p_up })
}

impl SenderDecision {
    /// The message sent when the shared randomness equals `h` and the private
    /// uniform draw is `u`.
    #[inline]
    pub fn message(&self, h: usize, u: f64) -> usize {
        if h < self.h_lower {
            self.x_lower + 1
        } else if h > self.h_lower {
            self.x_lower
        } else if u < self.p_up {
            self.x_lower + 1
        } else {
            self.x_lower
        }
    }
}

/// Receiver expectation of the decision over shared and private randomness;
/// equals `z` up to rounding for any in-range `z`.
pub fn expected_estimate(d: &SenderDecision, table: &QuantTable) -> f64 {
    let recon = table.recon();
    let shared = table.config().num_shared();
    let mut sum = 0.0;
    for h in 0..shared {
        sum += if h < d.h_lower {
            recon[h][d.x_lower + 1]
        } else if h > d.h_lower || d.p_up == 0.0 {
            recon[h][d.x_lower]
        } else {
            d.p_up * recon[h][d.x_lower + 1] + (1.0 - d.p_up) * recon[h][d.x_lower]
        };
    }
    sum / shared as f64
}

/// Analytic squared error `E[(z - Ẑ)^2]` of the codec at `z`, over shared and
/// private randomness.
pub fn expected_sq_error(z: f64, table: &QuantTable) -> Result<f64, CodecError> {
    let d = sender_distribution(z, table)?;
    let recon = table.recon();
    let shared = table.config().num_shared();
    let mut sum = 0.0;
    for h in 0..shared {
        sum += if h < d.h_lower {
            let e = z - recon[h][d.x_lower + 1];
            e * e
        } else if h > d.h_lower || d.p_up == 0.0 {
            let e = z - recon[h][d.x_lower];
            e * e
        } else {
            let up = z - recon[h][d.x_lower + 1];
            let down = z - recon[h][d.x_lower];
            d.p_up * up * up + (1.0 - d.p_up) * down * down
        };
    }
    Ok(sum / shared as f64)
}

fn zero_message(table: &QuantTable, dim: usize, global_seed: u64, client_seed: u64) -> EncodedVector {
    let d_pad = dim.next_power_of_two();
    EncodedVector {
        flags: 0,
        dim: dim as u64,
        dim_padded: d_pad as u64,
        bits: table.config().bits,
        shared_bits: table.config().shared_bits,
        table_hash: table.table_hash(),
        global_seed,
        client_seed,
        norm: 0.0,
        outliers: Vec::new(),
        payload: vec![0u8; bitpack::packed_len(d_pad, table.config().bits)],
    }
}

/// Rotates, scales, and encodes one client vector. Coordinates beyond `T`
/// are recorded exactly (rotated-scaled value as `f32`) with a zeroed payload
/// slot; the rest follow the interpolated sender.
pub fn encode_quicfl(
    x: &[f64],
    table: &QuantTable,
    global_seed: u64,
    client_seed: u64,
    private_seed: u64,
) -> Result<EncodedVector, CodecError> {
    check_finite(x)?;
    let spec = RotationSpec::rht(global_seed, x.len())?;
    let norm = l2_norm(x);
    if norm == 0.0 {
        return Ok(zero_message(table, x.len(), global_seed, client_seed));
    }
    let t = table.config().threshold;
    let shared = table.config().num_shared() as u64;
    let rotated = rht_forward(x, &spec)?;
    let scale = (spec.dim_padded as f64).sqrt() / norm;

    let mut outliers = Vec::new();
    let mut messages = vec![0u8; spec.dim_padded];
    for (i, &y) in rotated.iter().enumerate() {
        let z = y * scale;
        if z.abs() > t {
            outliers.push((i as u32, z as f32));
            continue;
        }
        let decision = sender_distribution(z, table)?;
        let h = (prf(client_seed, i as u64) % shared) as usize;
        let u = prf_uniform(private_seed, i as u64);
        messages[i] = decision.message(h, u) as u8;
    }

    let msg = EncodedVector {
        flags: 0,
        dim: x.len() as u64,
        dim_padded: spec.dim_padded as u64,
        bits: table.config().bits,
        shared_bits: table.config().shared_bits,
        table_hash: table.table_hash(),
        global_seed,
        client_seed,
        norm,
        outliers,
        payload: bitpack::pack(&messages, table.config().bits)?,
    };
    msg.check()?;
    Ok(msg)
}

fn check_message(
    msg: &EncodedVector,
    table: &QuantTable,
    global_seed: u64,
    dim: u64,
    dim_padded: u64,
) -> Result<(), CodecError> {
    msg.check()?;
    if msg.table_hash != table.table_hash() {
        return Err(CodecError::TableMismatch(format!(
            "message table hash {:016x}, table is {:016x}",
            msg.table_hash,
            table.table_hash()
        )));
    }
    if msg.bits != table.config().bits || msg.shared_bits != table.config().shared_bits {
        return Err(CodecError::TableMismatch(format!(
            "message uses b={} l={}, table has b={} l={}",
            msg.bits,
            msg.shared_bits,
            table.config().bits,
            table.config().shared_bits
        )));
    }
    if msg.global_seed != global_seed {
        return Err(CodecError::TableMismatch(format!(
            "message rotation seed {} does not match aggregate seed {global_seed}",
            msg.global_seed
        )));
    }
    if msg.dim != dim || msg.dim_padded != dim_padded {
        return Err(CodecError::TableMismatch(format!(
            "message dimensions d={} d_pad={}, aggregate expects d={dim} d_pad={dim_padded}",
            msg.dim, msg.dim_padded
        )));
    }
    Ok(())
}

/// Aggregates client messages into an estimate of the mean vector: per-client
/// table lookups, outlier overrides, norm scaling, averaging, then one
/// inverse rotation.
pub fn decode_aggregate(
    msgs: &[EncodedVector],
    table: &QuantTable,
    global_seed: u64,
) -> Result<Vec<f64>, CodecError> {
    let first = msgs
        .first()
        .ok_or_else(|| CodecError::MalformedMessage("empty aggregate".into()))?;
    let dim = first.dim;
    let d_pad = first.dim_padded as usize;
    let shared = table.config().num_shared() as u64;
    let recon = table.recon();

    let mut accum = vec![0.0f64; d_pad];
    for msg in msgs {
        check_message(msg, table, global_seed, dim, first.dim_padded)?;
        if msg.norm == 0.0 {
            continue;
        }
        let client_scale = msg.norm / (d_pad as f64).sqrt();
        let levels = bitpack::unpack(&msg.payload, msg.bits, d_pad)?;
        let mut outliers = msg.outliers.iter().peekable();
        for (i, &level) in levels.iter().enumerate() {
            if let Some(&&(idx, val)) = outliers.peek() {
                if idx as usize == i {
                    outliers.next();
                    accum[i] += val as f64 * client_scale;
                    continue;
                }
            }
            let h = (prf(msg.client_seed, i as u64) % shared) as usize;
            let level = level as usize;
            if level >= recon[h].len() {
                return Err(CodecError::MalformedMessage(format!(
                    "message level {level} at coordinate {i} outside the table"
                )));
            }
            accum[i] += recon[h][level] * client_scale;
        }
    }
    let inv_n = 1.0 / msgs.len() as f64;
    for v in &mut accum {
        *v *= inv_n;
    }
    let spec = RotationSpec::rht(global_seed, dim as usize)?;
    Ok(rht_inverse(&accum, &spec)?)
}

/// The `quicfl` strategy: interpolated encoder over a shared table.
pub struct InterpolatedCodec {
    table: Arc<QuantTable>,
}

impl InterpolatedCodec {
    pub fn new(table: Arc<QuantTable>) -> Self {
        InterpolatedCodec { table }
    }
}

impl Codec for InterpolatedCodec {
    fn name(&self) -> &'static str {
        "quicfl"
    }

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError> {
        Ok(encode_quicfl(x, &self.table, seeds.global, seeds.client, seeds.private)?.to_bytes())
    }

    fn decode_aggregate(&self, msgs: &[&[u8]]) -> Result<Vec<f64>, CodecError> {
        let mut decoded = Vec::with_capacity(msgs.len());
        let mut global_seed = None;
        for raw in msgs {
            let msg = EncodedVector::from_bytes(raw)?;
            global_seed.get_or_insert(msg.global_seed);
            decoded.push(msg);
        }
        let global_seed =
            global_seed.ok_or_else(|| CodecError::MalformedMessage("empty aggregate".into()))?;
        decode_aggregate(&decoded, &self.table, global_seed)
    }

    fn bits_per_coordinate(&self, msg: &[u8]) -> Result<f64, CodecError> {
        Ok(EncodedVector::from_bytes(msg)?.bits_per_coordinate())
    }

    fn outlier_fraction(&self, msg: &[u8]) -> Result<f64, CodecError> {
        let msg = EncodedVector::from_bytes(msg)?;
        Ok(msg.outliers.len() as f64 / msg.dim_padded as f64)
    }
}
