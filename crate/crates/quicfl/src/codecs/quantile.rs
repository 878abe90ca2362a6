//! Quantile-first codec (`quicfl_alg1`): each in-range coordinate is
//! stochastically quantized to a neighboring table quantile, then a message
//! is sampled from the solver's probabilities for that quantile. Decoding is
//! identical to the interpolated scheme.

use std::sync::Arc;

use crate::bitpack;
use crate::prf::{prf, prf_uniform};
use crate::tables::QuantTable;
use crate::transform::{rht_forward, RotationSpec};
use crate::wire::{EncodedVector, FLAG_QUANTILE_ENCODER};

use super::{check_finite, decode_aggregate, l2_norm, Codec, CodecError, SeedSet};

/// Stochastic quantization to a neighbor quantile: `q+` with probability
/// `(z - q-)/(q+ - q-)`, else `q-`. Returns the chosen quantile index.
pub(crate) fn quantize_to_quantile(z: f64, quantiles: &[f64], u: f64) -> usize {
    let m = quantiles.len();
    let lower = quantiles.partition_point(|&q| q <= z).saturating_sub(1);
    if lower == m - 1 {
        return lower;
    }
    let (lo, hi) = (quantiles[lower], quantiles[lower + 1]);
    let frac = ((z - lo) / (hi - lo)).clamp(0.0, 1.0);
    if frac >= 1.0 - 1e-12 {
        lower + 1
    } else if frac <= 1e-12 {
        lower
    } else if u < frac {
        lower + 1
    } else {
        lower
    }
}

fn sample_message(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (x, &p) in probs.iter().enumerate() {
        acc += p.max(0.0);
        if u < acc {
            return x;
        }
    }
    probs.len() - 1
}

/// Encodes one client vector through the quantile-first path. The table must
/// carry sender probabilities. Private randomness uses two draws per
/// coordinate: one for the quantile, one for the message.
pub fn encode_alg1(
    x: &[f64],
    table: &QuantTable,
    global_seed: u64,
    client_seed: u64,
    private_seed: u64,
) -> Result<EncodedVector, CodecError> {
    let sender = table.sender().ok_or(CodecError::MissingSender)?;
    check_finite(x)?;
    let spec = RotationSpec::rht(global_seed, x.len())?;
    let norm = l2_norm(x);
    let t = table.config().threshold;
    let shared = table.config().num_shared() as u64;
    let quantiles = table.quantiles();

    let mut outliers = Vec::new();
    let mut messages = vec![0u8; spec.dim_padded];
    if norm > 0.0 {
        let rotated = rht_forward(x, &spec)?;
        let scale = (spec.dim_padded as f64).sqrt() / norm;
        for (i, &y) in rotated.iter().enumerate() {
            let z = y * scale;
            if z.abs() > t {
                outliers.push((i as u32, z as f32));
                continue;
            }
            let h = (prf(client_seed, i as u64) % shared) as usize;
            let u_quant = prf_uniform(private_seed, 2 * i as u64);
            let u_msg = prf_uniform(private_seed, 2 * i as u64 + 1);
            let q = quantize_to_quantile(z, quantiles, u_quant);
            messages[i] = sample_message(&sender[h][q], u_msg) as u8;
        }
    }

    let msg = EncodedVector {
        flags: FLAG_QUANTILE_ENCODER,
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

/// The `quicfl_alg1` strategy.
pub struct QuantileCodec {
    table: Arc<QuantTable>,
}

impl QuantileCodec {
    pub fn new(table: Arc<QuantTable>) -> Self {
        QuantileCodec { table }
    }
}

impl Codec for QuantileCodec {
    fn name(&self) -> &'static str {
        "quicfl_alg1"
    }

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError> {
        Ok(encode_alg1(x, &self.table, seeds.global, seeds.client, seeds.private)?.to_bytes())
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
