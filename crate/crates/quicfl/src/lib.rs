//! Distributed mean estimation (DME) with unbiased bounded-support quantization.
//!
//! `n` clients each hold a `d`-dimensional vector. Every client rotates its
//! vector with a seeded randomized Hadamard transform, sends the few rotated
//! coordinates that fall outside `[-T_p, T_p]` exactly, and quantizes the rest
//! to `b`-bit messages using a solver-derived table that exploits
//! client-specific shared randomness. The server reconstructs per-coordinate
//! estimates by table lookup, averages across clients, and applies a single
//! inverse rotation. The estimate of the mean is unbiased for any input.
//!
//! Crate layout:
//!
//! * [`tables`] — truncated-normal math, quantization-table model, table files.
//! * [`solver`] — alternating LP / least-squares solver producing tables.
//! * [`transform`] — seeded randomized Hadamard transform and dense rotations.
//! * [`codecs`] — the codec strategies (`quicfl`, `quicfl_alg1`, `bsq`,
//!   `qsgd`, `minmax_hadamard`) behind a common [`codecs::Codec`] trait,
//!   selected by name through [`codecs::by_name`].
//! * [`harness`] — NMSE/vNMSE experiments, sweeps, power iteration.

pub mod bitpack;
pub mod codecs;
pub mod harness;
pub mod prf;
pub mod solver;
pub mod tables;
pub mod transform;
pub mod wire;

pub use tables::{QuantConfig, QuantTable};
