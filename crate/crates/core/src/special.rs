//! Gaussian tail function, its inverse, and chi-square tails for integer
//! degrees of freedom.

use libm::{erfc, lgamma as ln_gamma};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Complementary standard-normal CDF, `Q(x) = Pr{N(0,1) > x}`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Inverse of [`q_function`] on `(0, 1)`.
///
/// Acklam's rational approximation seeds a few Halley steps on `Q`.
pub fn q_inverse(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::DomainError(format!("q_inverse needs 0 < eps < 1, got {eps}")));
    }
    let mut z = -acklam_quantile(eps);
    for _ in 0..4 {
        let err = q_function(z) - eps;
        let pdf = normal_pdf(z);
        if pdf == 0.0 {
            break;
        }
        let u = err / pdf;
        // Halley: Q'' = z φ(z)
        let step = u / (1.0 - 0.5 * z * u);
        z += step;
        if step.abs() <= 1e-16 * z.abs().max(1.0) {
            break;
        }
    }
    Ok(z)
}

/// Lower-tail standard normal quantile, relative error about 1e-9.
fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// `ln( e^{-x} x^a / Γ(a+1) )` for `a ≥ 0`, `x > 0`.
///
/// For large `a` the saddle-point form avoids the cancellation between
/// `a ln x` and `ln Γ(a+1)`.
fn ln_poisson_term(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        return -x;
    }
    if a < 10.0 {
        return -x + a * x.ln() - ln_gamma(a + 1.0);
    }
    let u = (x - a) / a;
    // a (u - ln(1+u)) written to keep accuracy for small u
    let bd0 = if u.abs() < 0.1 {
        // series of u - ln(1+u) = u²/2 - u³/3 + u⁴/4 - ...
        let mut term = u * u;
        let mut acc = 0.0;
        let mut k = 2.0;
        loop {
            let t = term / k;
            acc += t;
            if t.abs() < 1e-18 * acc.abs() {
                break;
            }
            term *= -u;
            k += 1.0;
            if k > 60.0 {
                break;
            }
        }
        a * acc
    } else {
        a * (u - u.ln_1p())
    };
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    // ln Γ(a+1) - (a ln a - a) - ½ ln(2πa)
    let stirling = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    -bd0 - LN_SQRT_2PI - 0.5 * a.ln() - stirling
}

/// `Σ_{k<m} e^{-x} x^{k+off-1} / Γ(k+off)`, with `off = 1` for even and
/// `off = 1.5` for odd degrees of freedom, summed outward from the largest
/// term.
fn poisson_like_sum(m: u64, off: f64, x: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let a0 = off - 1.0;
    let peak = ((x - a0).floor().max(0.0) as u64).min(m - 1);
    let ln_peak = ln_poisson_term(peak as f64 + a0, x);
    let mut sum = 1.0;
    let mut t = 1.0;
    let mut k = peak;
    while k > 0 {
        t *= (k as f64 + a0) / x;
        sum += t;
        k -= 1;
        if t < 1e-18 * sum {
            break;
        }
    }
    t = 1.0;
    k = peak;
    while k + 1 < m {
        k += 1;
        t *= x / (k as f64 + a0);
        sum += t;
        if t < 1e-18 * sum {
            break;
        }
    }
    (ln_peak + sum.ln()).exp()
}

/// Upper tail `Pr{χ²_n > threshold}`, i.e. `Γ(n/2, t/2) / Γ(n/2)`.
pub fn chi2_tail(n: u64, threshold: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::DomainError(
            "chi-square needs at least one degree of freedom".into(),
        ));
    }
    if threshold.is_nan() {
        return Err(Error::DomainError("threshold is NaN".into()));
    }
    if threshold <= 0.0 {
        return Ok(1.0);
    }
    if threshold.is_infinite() {
        return Ok(0.0);
    }
    let x = 0.5 * threshold;
    let m = n / 2;
    let value = if n.is_multiple_of(2) {
        poisson_like_sum(m, 1.0, x)
    } else {
        erfc(x.sqrt()) + poisson_like_sum(m, 1.5, x)
    };
    Ok(value.min(1.0))
}

/// Chi-square density with `n` degrees of freedom.
pub fn chi2_pdf(n: u64, t: f64) -> f64 {
    if t <= 0.0 {
        return if n == 2 { 0.5 } else { 0.0 };
    }
    let a = 0.5 * n as f64 - 1.0;
    let x = 0.5 * t;
    if a < 0.0 {
        // n = 1
        return (-x).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
    }
    0.5 * ln_poisson_term(a, x).exp()
}

/// Threshold `t` with `chi2_tail(n, t) = eps`, by bracketed Newton.
pub fn chi2_tail_inverse(n: u64, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::DomainError(
            "chi-square needs at least one degree of freedom".into(),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::DomainError(format!(
            "chi2_tail_inverse needs 0 < eps < 1, got {eps}"
        )));
    }
    let nf = n as f64;
    let z = q_inverse(eps)?;
    // Wilson–Hilferty starting point
    let c = 2.0 / (9.0 * nf);
    let mut t = nf * (1.0 - c + z * c.sqrt()).powi(3);
    if !(t > 0.0) {
        t = nf * 1e-3;
    }
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let f = chi2_tail(n, t)? - eps;
        if f > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        if f == 0.0 {
            return Ok(t);
        }
        let pdf = chi2_pdf(n, t);
        let mut next = if pdf > 0.0 { t + f / pdf } else { f64::NAN };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * t.max(1.0)
            };
        }
        if (next - t).abs() <= 1e-15 * t.max(1e-300) {
            return Ok(next);
        }
        if hi.is_finite() && (hi - lo) <= 1e-15 * hi {
            return Ok(0.5 * (lo + hi));
        }
        t = next;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        // mpmath, 40 digits
        let cases = [
            (0.5, 0.308_537_538_725_986_9),
            (1.0, 0.158_655_253_931_457_05),
            (2.0, 0.022_750_131_948_179_21),
            (3.0, 0.001_349_898_031_630_094_5),
            (5.0, 2.866_515_718_791_939e-7),
            (8.0, 6.220_960_574_271_784e-16),
            (-1.0, 0.841_344_746_068_542_9),
        ];
        for (x, want) in cases {
            assert!(rel(q_function(x), want) <= 1e-14, "x={x}");
        }
    }

    #[test]
    fn q_inverse_values() {
        let cases = [
            (0.05, 1.644_853_626_951_472_7),
            (1e-6, 4.753_424_308_822_899),
            (0.01, 2.326_347_874_040_841),
            (0.2, 0.841_621_233_572_914_2),
        ];
        for (e, want) in cases {
            assert!((q_inverse(e).unwrap() - want).abs() < 1e-12, "eps={e}");
        }
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        assert!(q_inverse(0.0).is_err());
        assert!(q_inverse(1.0).is_err());
    }

    #[test]
    fn q_round_trip() {
        let mut e = 1e-6;
        while e <= 0.5 {
            let back = q_function(q_inverse(e).unwrap());
            assert!((back - e).abs() <= 1e-12, "eps={e}");
            e *= 1.37;
        }
        for e in [0.6, 0.9, 0.999] {
            assert!((q_function(q_inverse(e).unwrap()) - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn chi2_special_cases() {
        for t in [0.1, 1.0, 3.7, 20.0] {
            assert!(rel(chi2_tail(2, t).unwrap(), (-t / 2.0).exp()) < 1e-14);
            assert!(rel(chi2_tail(1, t).unwrap(), 2.0 * q_function(t.sqrt())) < 1e-13);
        }
        assert_eq!(chi2_tail(5, 0.0).unwrap(), 1.0);
        assert!(chi2_tail(0, 1.0).is_err());
    }

    #[test]
    fn chi2_against_mpmath() {
        let cases = [
            (1u64, 2.0, 0.157_299_207_050_285_13),
            (3, 5.0, 0.171_797_144_296_733_14),
            (10, 12.0, 0.285_056_500_316_631_2),
            (101, 90.0, 0.775_360_840_077_939_5),
            (1000, 1100.0, 0.014_614_408_126_295_194),
            (10000, 10300.0, 0.017_638_117_447_345_4),
            (9999, 9500.0, 0.999_831_056_434_403),
            (10000, 11500.0, 2.184_389_771_509_755_5e-24),
        ];
        for (n, t, want) in cases {
            let got = chi2_tail(n, t).unwrap();
            assert!(rel(got, want) <= 1e-10, "n={n} t={t} got={got:e} want={want:e}");
        }
    }

    #[test]
    fn chi2_inverse_round_trip() {
        assert!(rel(chi2_tail_inverse(100, 0.05).unwrap(), 124.342_113_404_004_08) < 1e-12);
        for n in [1u64, 2, 3, 7, 50, 333, 1000, 4097, 10000] {
            for eps in [1e-6, 0.01, 0.05, 0.5, 0.9] {
                let t = chi2_tail_inverse(n, eps).unwrap();
                let back = chi2_tail(n, t).unwrap();
                assert!(rel(back, eps) <= 1e-9, "n={n} eps={eps}");
            }
        }
    }
}
