//! Vector codecs for distributed mean estimation.
//!
//! Each scheme lives behind the [`Codec`] trait and is selected at runtime by
//! name through [`by_name`]:
//!
//! * `quicfl` — interpolated bounded-support quantization after a global
//!   randomized Hadamard rotation (the default).
//! * `quicfl_alg1` — same pipeline, but coordinates are first stochastically
//!   quantized to a table quantile; requires sender probabilities.
//! * `bsq` — bounded-support quantization without rotation.
//! * `qsgd` — sign + stochastic magnitude quantization against the norm.
//! * `minmax_hadamard` — per-client rotation with min/max-normalized uniform
//!   levels.
//!
//! Messages are opaque byte strings; the `quicfl` schemes use the wire format
//! in [`crate::wire`], the baselines carry small self-describing headers.

pub mod bsq;
pub mod interpolated;
pub mod minmax;
pub mod one_bit;
pub mod qsgd;
pub mod quantile;

use std::sync::Arc;

use thiserror::Error;

use crate::bitpack::BitpackError;
use crate::tables::QuantTable;
use crate::transform::TransformError;
use crate::wire::WireError;

pub use interpolated::{
    decode_aggregate, encode_quicfl, expected_estimate, expected_sq_error, sender_distribution,
    SenderDecision,
};
pub use quantile::encode_alg1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("coordinate {z} outside the quantization range [-T, T]")]
    OutOfRange { z: f64 },
    #[error("input has a non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("table/message mismatch: {0}")]
    TableMismatch(String),
    #[error("scheme {0} requires a quantization table")]
    MissingTable(&'static str),
    #[error("table carries no sender probabilities (required by the quantile encoder)")]
    MissingSender,
    #[error("internal consistency: {0}")]
    Inconsistent(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown scheme {0:?} (expected one of {names:?})", names = SCHEME_NAMES)]
    UnknownScheme(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Bitpack(#[from] BitpackError),
}

/// Seeds controlling the three randomness domains: the rotation shared by all
/// clients, the client-specific randomness shared with the server, and the
/// client's private randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSet {
    pub global: u64,
    pub client: u64,
    pub private: u64,
}

/// A mean-estimation codec: encodes one client vector into a message and
/// aggregates a batch of messages into an estimate of the mean.
pub trait Codec: Send + Sync {
    fn name(&self) -> &'static str;

    fn encode(&self, x: &[f64], seeds: &SeedSet) -> Result<Vec<u8>, CodecError>;

    fn decode_aggregate(&self, msgs: &[&[u8]]) -> Result<Vec<f64>, CodecError>;

    /// Accounted bandwidth of a message in bits per quantized coordinate:
    /// payload bits plus 64 per exactly-sent coordinate plus the header.
    fn bits_per_coordinate(&self, msg: &[u8]) -> Result<f64, CodecError>;

    /// Fraction of coordinates sent exactly.
    fn outlier_fraction(&self, msg: &[u8]) -> Result<f64, CodecError> {
        let _ = msg;
        Ok(0.0)
    }
}

pub const SCHEME_NAMES: &[&str] = &["quicfl", "quicfl_alg1", "bsq", "qsgd", "minmax_hadamard"];

/// Construction parameters for [`by_name`]. The table is required by the
/// `quicfl` schemes and ignored by the baselines; `bits` must match the
/// table when both are given.
#[derive(Clone)]
pub struct CodecParams {
    pub table: Option<Arc<QuantTable>>,
    pub bits: u8,
    pub p_num: u64,
    pub p_den: u64,
}

/// Runtime scheme registry.
pub fn by_name(name: &str, params: &CodecParams) -> Result<Box<dyn Codec>, CodecError> {
    let table_for = |scheme: &'static str| -> Result<Arc<QuantTable>, CodecError> {
        let table = params.table.clone().ok_or(CodecError::MissingTable(scheme))?;
        if table.config().bits != params.bits {
            return Err(CodecError::TableMismatch(format!(
                "table has b={}, requested b={}",
                table.config().bits,
                params.bits
            )));
        }
        Ok(table)
    };
    match name {
        "quicfl" => Ok(Box::new(interpolated::InterpolatedCodec::new(table_for("quicfl")?))),
        "quicfl_alg1" => {
            let table = table_for("quicfl_alg1")?;
            if table.sender().is_none() {
                return Err(CodecError::MissingSender);
            }
            Ok(Box::new(quantile::QuantileCodec::new(table)))
        }
        "bsq" => Ok(Box::new(bsq::BsqCodec::new(params.bits, params.p_num, params.p_den)?)),
        "qsgd" => Ok(Box::new(qsgd::QsgdCodec::new(params.bits)?)),
        "minmax_hadamard" => Ok(Box::new(minmax::MinMaxHadamardCodec::new(params.bits)?)),
        other => Err(CodecError::UnknownScheme(other.to_string())),
    }
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn check_finite(x: &[f64]) -> Result<(), CodecError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CodecError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Stochastic index on a uniform grid: returns the level index in
/// `0..levels` for `pos = (value - lo) / width`, rounding to the nearer
/// neighbor with probability equal to the fractional part. Positions within
/// 1e-9 of an exact level are taken deterministically.
pub(crate) fn stochastic_level(pos: f64, levels: usize, u: f64) -> usize {
    debug_assert!(levels >= 2);
    let max = (levels - 1) as f64;
    let pos = pos.clamp(0.0, max);
    let base = pos.floor();
    let frac = pos - base;
    let k = base as usize;
    if frac <= 1e-9 {
        k
    } else if frac >= 1.0 - 1e-9 {
        k + 1
    } else if u < frac {
        k + 1
    } else {
        k
    }
}
