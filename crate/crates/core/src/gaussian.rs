//! Quadratic-Gaussian source: closed forms and finite-`n` rate bounds.
//!
//! For an i.i.d. `N(0, σ²)` source under squared error,
//! `R(σ², D) = ½ ln(σ²/D)`, the exponent is `(e^{2ΔR} − 1 − 2ΔR)/2` and the
//! dispersion is `½`. The block `x` has `‖x‖²/σ² ~ χ²_n`, so the chance that
//! it leaves the sphere of radius `sqrt(nσ²(1 + α))` is an exact chi-square
//! tail. Choosing `α_n` so that this tail equals `ε` gives
//!
//! * the converse `½ ln(σ²(1 + α_n)/D)`: a codebook of rate `R` covers at
//!   most `e^{nR}` balls of radius `sqrt(nD)`;
//! * the achievable rate, the converse plus `(5/2n) ln n + c₀/n` from a
//!   sphere-covering argument.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{fmt_sig, least_squares_2};
use crate::special::{chi2_tail_inverse, q_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianSpec {
    /// `σ²`.
    pub variance: f64,
    /// `D`, in the same units as `σ²`.
    pub distortion: f64,
    pub eps: f64,
}

impl GaussianSpec {
    pub fn new(variance: f64, distortion: f64, eps: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::DomainError(format!("variance must be positive, got {variance}")));
        }
        if !(distortion > 0.0 && distortion <= variance) {
            return Err(Error::DOutOfRange {
                d: distortion,
                lo: 0.0,
                hi: variance,
            });
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::DomainError(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(Self {
            variance,
            distortion,
            eps,
        })
    }
}

/// `½ ln(σ²/D)`.
pub fn gaussian_rdf(spec: &GaussianSpec) -> f64 {
    0.5 * (spec.variance / spec.distortion).ln()
}

/// `(e^{2ΔR} − 1 − 2ΔR)/2` with `ΔR = R − R(σ², D)`.
pub fn gaussian_exponent(spec: &GaussianSpec, r: f64) -> Result<f64> {
    let rdf = gaussian_rdf(spec);
    let dr = r - rdf;
    if dr < 0.0 {
        return Err(Error::RateBelowRdf { rate: r, rdf });
    }
    Ok(0.5 * (libm::expm1(2.0 * dr) - 2.0 * dr))
}

/// `α_n` with `Pr{χ²_n > n(1 + α_n)} = ε`.
pub fn sphere_excess(n: u64, eps: f64) -> Result<f64> {
    Ok(chi2_tail_inverse(n, eps)? / n as f64 - 1.0)
}

/// Exact sphere-leaving converse `½ ln(σ² β_n / (n D))`, `β_n` the upper
/// `ε` quantile of `χ²_n`.
pub fn gaussian_converse_rate(spec: &GaussianSpec, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::DomainError("blocklength must be at least 2".into()));
    }
    let beta = chi2_tail_inverse(n, spec.eps)?;
    Ok(0.5 * (spec.variance * beta / (n as f64 * spec.distortion)).ln())
}

/// Converse plus `(5/2n) ln n + c₀/n`.
pub fn gaussian_achievable_rate(spec: &GaussianSpec, n: u64, c0: f64) -> Result<f64> {
    let nf = n as f64;
    Ok(gaussian_converse_rate(spec, n)? + 2.5 * nf.ln() / nf + c0 / nf)
}

/// `½ ln(σ²/D) + sqrt(1/(2n)) Q⁻¹(ε)`.
pub fn gaussian_normal_approx(spec: &GaussianSpec, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::DomainError("blocklength must be at least 1".into()));
    }
    Ok(gaussian_rdf(spec) + (0.5 / n as f64).sqrt() * q_inverse(spec.eps)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianRecord {
    pub n: u64,
    pub r_normal: f64,
    pub r_achievable: f64,
    pub r_converse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianCurve {
    pub spec: GaussianSpec,
    /// Additive constant of the achievable rate; unknown, zero by default.
    pub c0: f64,
    pub records: Vec<GaussianRecord>,
}

pub fn gaussian_curve(spec: &GaussianSpec, n_list: &[u64], c0: f64) -> Result<GaussianCurve> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let records = ns
        .into_iter()
        .map(|n| {
            Ok(GaussianRecord {
                n,
                r_normal: gaussian_normal_approx(spec, n)?,
                r_achievable: gaussian_achievable_rate(spec, n, c0)?,
                r_converse: gaussian_converse_rate(spec, n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianCurve {
        spec: *spec,
        c0,
        records,
    })
}

impl GaussianCurve {
    pub fn to_csv(&self, bits: bool) -> String {
        let unit = if bits { "bits" } else { "nats" };
        let scale = if bits { std::f64::consts::LN_2 } else { 1.0 };
        let mut out = format!("#schema={}\n", crate::blocklength::CSV_SCHEMA);
        out.push_str(&format!(
            "n,r_normal_{unit},r_achievable_{unit},r_converse_{unit},eps\n"
        ));
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                fmt_sig(r.r_normal / scale),
                fmt_sig(r.r_achievable / scale),
                fmt_sig(r.r_converse / scale),
                fmt_sig(self.spec.eps)
            ));
        }
        out
    }
}

/// Least-squares slopes of `achievable − normal` against `ln n / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSlope {
    /// Single regressor `ln n / n`, no intercept.
    pub slope: f64,
    /// Coefficient of `ln n / n` when `1/n` is fitted alongside.
    pub slope_with_1_over_n: f64,
    /// Coefficient of `1/n` in that two-term fit.
    pub coef_1_over_n: f64,
}

pub fn achievable_gap_slope(spec: &GaussianSpec, n_list: &[u64], c0: f64) -> Result<GapSlope> {
    let curve = gaussian_curve(spec, n_list, c0)?;
    let x1: Vec<f64> = curve.records.iter().map(|r| (r.n as f64).ln() / r.n as f64).collect();
    let x2: Vec<f64> = curve.records.iter().map(|r| 1.0 / r.n as f64).collect();
    let y: Vec<f64> = curve.records.iter().map(|r| r.r_achievable - r.r_normal).collect();
    let sxx: f64 = x1.iter().map(|v| v * v).sum();
    let sxy: f64 = x1.iter().zip(&y).map(|(a, b)| a * b).sum();
    let (b1, b2) = least_squares_2(&x1, &x2, &y)
        .ok_or_else(|| Error::DomainError("need at least two distinct blocklengths".into()))?;
    Ok(GapSlope {
        slope: sxy / sxx,
        slope_with_1_over_n: b1,
        coef_1_over_n: b2,
    })
}
