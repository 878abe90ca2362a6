//! One-shared-bit reference scheme with fixed constants alpha = 0.8,
//! beta = 5.4, tuned for the p = 1/512 threshold. Serves as an analytic
//! oracle for the solver at b = 1, l = 1: the four-case sender/receiver pair
//! below is unbiased and its integrated squared error is about 3.3.

use crate::prf::prf_uniform;
use crate::tables::normal;

use super::CodecError;

pub const ALPHA: f64 = 0.8;
pub const BETA: f64 = 5.4;

/// Exact-send fraction the constants were tuned for.
pub const P_NUM: u64 = 1;
pub const P_DEN: u64 = 512;

fn threshold() -> f64 {
    normal::compute_threshold(P_NUM, P_DEN).expect("fixed fraction is valid")
}

/// Four-case sender: the message for shared bit `h` and private uniform `u`.
pub fn sender(z: f64, h_bit: bool, u: f64) -> u8 {
    let s = ALPHA + BETA;
    match (h_bit, z >= 0.0) {
        (false, true) => 1,
        (true, false) => 0,
        (true, true) => u8::from(u < 2.0 * z / s),
        (false, false) => {
            if u < -2.0 * z / s {
                0
            } else {
                1
            }
        }
    }
}

/// Four-case receiver.
pub fn receiver(h_bit: bool, message: u8) -> f64 {
    match (h_bit, message) {
        (false, 0) => -BETA,
        (true, 0) => -ALPHA,
        (false, _) => ALPHA,
        (true, _) => BETA,
    }
}

/// Encodes and reconstructs one coordinate; `|z|` must stay within the
/// p = 1/512 threshold.
pub fn one_bit_reference(
    z: f64,
    h_bit: bool,
    private_seed: u64,
) -> Result<(u8, f64), CodecError> {
    if !z.is_finite() || z.abs() > threshold() + 1e-9 {
        return Err(CodecError::OutOfRange { z });
    }
    let u = prf_uniform(private_seed, 0);
    let message = sender(z, h_bit, u);
    Ok((message, receiver(h_bit, message)))
}

/// Analytic `E[Ẑ | Z = z]` over the shared bit and private randomness.
pub fn conditional_mean(z: f64) -> f64 {
    let s = ALPHA + BETA;
    if z >= 0.0 {
        let up = 2.0 * z / s;
        0.5 * ALPHA + 0.5 * (up * BETA + (1.0 - up) * (-ALPHA))
    } else {
        -conditional_mean(-z)
    }
}

/// Analytic `E[(z - Ẑ)^2]` over the shared bit and private randomness.
pub fn conditional_mse(z: f64) -> f64 {
    let s = ALPHA + BETA;
    let z = z.abs();
    let up = 2.0 * z / s;
    let e_alpha = z - ALPHA;
    let e_beta = z - BETA;
    let e_neg = z + ALPHA;
    0.5 * (e_alpha * e_alpha + up * e_beta * e_beta + (1.0 - up) * e_neg * e_neg)
}

/// Quantizer MSE integrated against the truncated standard normal on
/// `[-T, T]` (trapezoid rule, normalized by the truncated mass).
pub fn integrated_mse(nodes: usize) -> f64 {
    let t = threshold();
    let nodes = nodes.max(3);
    let step = 2.0 * t / (nodes - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..nodes {
        let z = -t + step * k as f64;
        let w = normal::pdf(z) * if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        num += w * conditional_mse(z);
        den += w;
    }
    num / den
}
