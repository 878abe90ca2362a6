//! Standard- and truncated-normal math used to build quantization tables.
//!
//! The threshold and quantile routines run on the offline table-construction
//! path, so they favor robustness: a rational-approximation initial guess
//! refined by Newton steps against an erf-based CDF for the inverse, and
//! bisection for truncated-normal quantiles.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("exact-send fraction p = {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("quantile count m = {0} must be at least 2")]
    BadQuantileCount(usize),
    #[error("probability {0} outside (0, 1)")]
    BadProbability(f64),
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() * INV_SQRT_2PI
}

/// Standard normal CDF via erfc (accurate in both tails).
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Pr[|Z| > t] for Z ~ N(0,1), t >= 0.
#[inline]
pub fn two_sided_tail(t: f64) -> f64 {
    erfc(t / SQRT_2)
}

// Rational Chebyshev approximation of erf/erfc (W. J. Cody, 1969), relative
// error below 1e-15 across the three branches.

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_4e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_9e0,
    6.611_919_063_714_162_9e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_6e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_4e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// erfc(x) for the central branch |x| <= 0.46875 via erf.
fn erf_small(x: f64) -> f64 {
    let z = x * x;
    let num = ((((ERF_A[4] * z + ERF_A[0]) * z + ERF_A[1]) * z + ERF_A[2]) * z + ERF_A[3]) * x;
    let den = (((z + ERF_B[0]) * z + ERF_B[1]) * z + ERF_B[2]) * z + ERF_B[3];
    num / den
}

/// erfc(x) for 0.46875 <= x <= 4.
fn erfc_mid(x: f64) -> f64 {
    let mut num = ERF_C[8] * x;
    let mut den = x;
    for i in 0..7 {
        num = (num + ERF_C[i]) * x;
        den = (den + ERF_D[i]) * x;
    }
    (-x * x).exp() * (num + ERF_C[7]) / (den + ERF_D[7])
}

/// erfc(x) for x > 4.
fn erfc_large(x: f64) -> f64 {
    let z = 1.0 / (x * x);
    let mut num = ERF_P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + ERF_P[i]) * z;
        den = (den + ERF_Q[i]) * z;
    }
    let poly = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
    (-x * x).exp() * (INV_SQRT_PI - poly) / x
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= 0.46875 {
        1.0 - erf_small(x)
    } else if ax <= 4.0 {
        erfc_mid(ax)
    } else if ax < 26.6 {
        erfc_large(ax)
    } else {
        0.0
    };
    if x < -0.46875 {
        2.0 - v
    } else {
        v
    }
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.abs() <= 0.46875 {
        erf_small(x)
    } else {
        1.0 - erfc(x)
    }
}

// Acklam's rational approximation of the standard normal inverse CDF,
// |error| < 4.5e-4; used only as a Newton starting point.
fn inverse_cdf_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239e0,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838e0,
        -2.549_732_539_343_734e0,
        4.374_664_141_464_968e0,
        2.938_163_982_698_783e0,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996e0,
        3.754_408_661_907_416e0,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Standard normal inverse CDF: Acklam guess refined by Newton against the
/// erfc-based CDF. Absolute error below 1e-13 over (1e-300, 1-1e-16).
pub fn inverse_cdf(p: f64) -> Result<f64, DomainError> {
    if !(0.0 < p && p < 1.0) {
        return Err(DomainError::BadProbability(p));
    }
    let mut z = inverse_cdf_guess(p);
    for _ in 0..3 {
        let err = cdf(z) - p;
        let deriv = pdf(z);
        if deriv <= f64::MIN_POSITIVE {
            break;
        }
        z -= err / deriv;
    }
    Ok(z)
}

/// Threshold `T` with `Pr[|Z| > T] = p`, i.e. `T = Phi^{-1}(1 - p/2)`.
/// Absolute error below 1e-10.
pub fn compute_threshold(p_num: u64, p_den: u64) -> Result<f64, DomainError> {
    let p = p_num as f64 / p_den as f64;
    compute_threshold_real(p)
}

/// As [`compute_threshold`], for an already-real fraction.
pub fn compute_threshold_real(p: f64) -> Result<f64, DomainError> {
    if !(p > 0.0 && p <= 1.0) || !p.is_finite() {
        return Err(DomainError::BadFraction(p));
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    // Newton on two_sided_tail(T) - p = 0; derivative -2 pdf(T).
    let mut t = inverse_cdf(1.0 - p / 2.0)?.max(0.0);
    for _ in 0..3 {
        let err = two_sided_tail(t) - p;
        let deriv = -2.0 * pdf(t);
        if deriv == 0.0 {
            break;
        }
        t -= err / deriv;
    }
    Ok(t.max(0.0))
}

/// Truncated-normal CDF on `[-t, t]`.
pub fn truncated_cdf(z: f64, t: f64) -> f64 {
    let lo = cdf(-t);
    (cdf(z) - lo) / (cdf(t) - lo)
}

/// Quantile of the truncated normal on `[-t, t]` at probability `u`:
/// bisection to 1e-12 interval width.
pub fn truncated_quantile(u: f64, t: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (-t, t);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if truncated_cdf(mid, t) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quantiles of the truncated normal on `[-t, t]`: `m` points with
/// `Pr[Z <= q_i | Z in [-t, t]] = i/(m-1)`. Endpoints are exact and the set
/// is antisymmetric by construction.
pub fn compute_quantiles(m: usize, t: f64) -> Result<Vec<f64>, DomainError> {
    if m < 2 {
        return Err(DomainError::BadQuantileCount(m));
    }
    let mut q = vec![0.0; m];
    q[0] = -t;
    q[m - 1] = t;
    // Solve the lower half by bisection, mirror the upper half.
    for i in 1..m - 1 {
        if 2 * i == m - 1 {
            q[i] = 0.0;
            continue;
        }
        if 2 * i > m - 1 {
            q[i] = -q[m - 1 - i];
            continue;
        }
        let target = i as f64 / (m - 1) as f64;
        let (mut lo, mut hi) = (-t, 0.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if truncated_cdf(mid, t) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        q[i] = 0.5 * (lo + hi);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values computed with 30-digit arithmetic.
    const T_P512: f64 = 3.097_269_078_198_784_5;
    const Q4_INNER: f64 = 0.429_832_199_374_610_06;

    /// Independent check: bisection on the erfc-based two-sided tail.
    fn threshold_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if two_sided_tail(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn erf_reference_points() {
        assert_abs_diff_eq!(erf(0.0), 0.0);
        assert_abs_diff_eq!(erf(1.0), 0.842_700_792_949_714_9, epsilon = 1e-15);
        assert_abs_diff_eq!(erfc(2.0), 0.004_677_734_981_047_265, epsilon = 1e-17);
        assert_abs_diff_eq!(erfc(-1.0), 1.842_700_792_949_714_9, epsilon = 1e-15);
        assert_abs_diff_eq!(erfc(5.0), 1.537_459_794_428_035e-12, epsilon = 1e-25);
    }

    #[test]
    fn threshold_paper_fraction() {
        let t = compute_threshold(1, 512).unwrap();
        assert_abs_diff_eq!(t, T_P512, epsilon = 1e-10);
        assert_abs_diff_eq!(t, 3.097, epsilon = 1e-3);
    }

    #[test]
    fn threshold_degenerate_fraction() {
        assert_eq!(compute_threshold(1, 1).unwrap(), 0.0);
    }

    #[test]
    fn threshold_two_sigma() {
        // Pr[|Z| > 2] = 0.04550026..., so the threshold lands on 2.0.
        let t = compute_threshold_real(0.045_500_26).unwrap();
        assert_abs_diff_eq!(t, 2.000_000_036_083_43, epsilon = 1e-9);
    }

    #[test]
    fn threshold_rejects_bad_fraction() {
        assert!(compute_threshold_real(0.0).is_err());
        assert!(compute_threshold_real(1.5).is_err());
        assert!(compute_threshold_real(-0.1).is_err());
    }

    #[test]
    fn threshold_matches_cdf_on_grid() {
        for k in 1..=12u32 {
            let p = 2f64.powi(-(k as i32));
            let t = compute_threshold_real(p).unwrap();
            assert!(
                (cdf(t) - (1.0 - p / 2.0)).abs() <= 1e-10,
                "p=2^-{k}: cdf(T) off by {}",
                (cdf(t) - (1.0 - p / 2.0)).abs()
            );
            assert_abs_diff_eq!(t, threshold_by_bisection(p), epsilon = 1e-10);
        }
    }

    #[test]
    fn quantiles_paper_set() {
        let t = compute_threshold(1, 512).unwrap();
        let q = compute_quantiles(4, t).unwrap();
        assert_abs_diff_eq!(q[0], -T_P512, epsilon = 1e-10);
        assert_abs_diff_eq!(q[1], -Q4_INNER, epsilon = 1e-10);
        assert_abs_diff_eq!(q[2], Q4_INNER, epsilon = 1e-10);
        assert_abs_diff_eq!(q[3], T_P512, epsilon = 1e-10);
    }

    #[test]
    fn quantiles_endpoints_and_median() {
        let t = compute_threshold(1, 512).unwrap();
        assert_eq!(compute_quantiles(2, t).unwrap(), vec![-t, t]);
        assert_eq!(compute_quantiles(3, t).unwrap(), vec![-t, 0.0, t]);
        assert!(compute_quantiles(1, t).is_err());
    }

    #[test]
    fn quantiles_antisymmetric_and_increasing() {
        for &m in &[5usize, 16, 33, 512] {
            for &pk in &[1u32, 5, 9] {
                let t = compute_threshold_real(2f64.powi(-(pk as i32))).unwrap();
                let q = compute_quantiles(m, t).unwrap();
                for i in 0..m - 1 {
                    assert!(q[i] < q[i + 1], "m={m} p=2^-{pk} at {i}");
                }
                for i in 0..m {
                    assert!((q[i] + q[m - 1 - i]).abs() <= 1e-10);
                }
            }
        }
    }
}
