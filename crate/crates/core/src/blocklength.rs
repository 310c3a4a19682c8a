//! Finite-blocklength rate predictions.
//!
//! * the normal approximation `R(p, D) + sqrt(V/n) Q⁻¹(ε)`;
//! * an exact oracle for the rate redundancy: the smallest `ΔR` with
//!   `Pr{R(P_x, D) − R(p, D) > ΔR} ≤ ε`, where `P_x` is the type of an i.i.d.
//!   block, computed by enumerating all types;
//! * a Berry-Esseen halfwidth around the normal approximation;
//! * the exact probability that the type leaves the neighbourhood
//!   `Ω_n = {q : ‖p − q‖² ≤ L ln n / n}`, against the bound `2L/n²`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dispersion::{dispersion_via_tilted, lossless_dispersion};
use crate::error::{Error, Result};
use crate::numeric::fmt_sig;
use crate::rd::{rdf_value_with, SolverOptions};
use crate::source::{weighted_mean_var, DiscreteSource, DistortionSpec};
use crate::types::enumerate_types_capped;

pub use crate::special::{q_function, q_inverse};

/// Version tag written as `#schema=` in CSV output.
pub const CSV_SCHEMA: u32 = 1;

/// `R(p, D)`, `V(p, D)` and the third absolute central moment of the tilted
/// values at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub distortion: f64,
    pub rdf: f64,
    pub dispersion: f64,
    pub third_moment: f64,
    pub f_values: Vec<f64>,
}

pub fn operating_point(source: &DiscreteSource, dist: &DistortionSpec, d: f64) -> Result<OperatingPoint> {
    let p = source.probs();
    let f = if d <= dist.d_min(p) && d >= 0.0 {
        // zero-distortion limit: f(i) = −ln p(i) for a measure with a zero per row
        p.iter().map(|v| -v.ln()).collect()
    } else {
        dispersion_via_tilted(source, dist, d)?.1
    };
    let (mean, var) = weighted_mean_var(p, &f);
    let var = if d <= dist.d_min(p) {
        lossless_dispersion(source)
    } else {
        var
    };
    let xi = p.iter().zip(&f).map(|(w, v)| w * (v - mean).abs().powi(3)).sum();
    Ok(OperatingPoint {
        distortion: d,
        rdf: mean,
        dispersion: var,
        third_moment: xi,
        f_values: f,
    })
}

/// `R + sqrt(V/n) Q⁻¹(ε)`.
pub fn normal_approx(rdf: f64, dispersion: f64, eps: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::DomainError("blocklength must be at least 1".into()));
    }
    Ok(rdf + (dispersion / n as f64).sqrt() * q_inverse(eps)?)
}

pub fn normal_approx_rate(source: &DiscreteSource, dist: &DistortionSpec, d: f64, eps: f64, n: u64) -> Result<f64> {
    let op = operating_point(source, dist, d)?;
    normal_approx(op.rdf, op.dispersion, eps, n)
}

/// Largest blocklength the oracle accepts for an alphabet of size `l`.
pub fn oracle_cap(l: usize) -> usize {
    match l {
        0 | 1 => 0,
        2 => 100_000,
        3 => 300,
        4 => 60,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub n: usize,
    /// Smallest achieved `ΔR` meeting the tail constraint.
    pub delta_r: f64,
    /// `Pr{R(P_x, D) − R(p, D) > ΔR}` at the returned `ΔR`.
    pub tail_prob: f64,
    /// `Pr{R(P_x, D) > R(p, D)}`.
    pub excess_prob: f64,
    pub n_types: usize,
}

const TIE: f64 = 1e-12;

/// `R(q, D) − R(p, D)` and probability for every type of length `n`.
pub fn type_rate_gaps(source: &DiscreteSource, dist: &DistortionSpec, d: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    dist.check_source(source.len())?;
    let l = source.len();
    let cap = oracle_cap(l);
    if n > cap {
        return Err(Error::AtlasTooLarge {
            count: crate::types::type_count(n, l),
            cap: crate::types::type_count(cap, l),
        });
    }
    let atlas = enumerate_types_capped(n, source, f64::INFINITY)?;
    let opts = SolverOptions {
        gap_tol: 1e-11,
        d_rel_tol: 1e-10,
        ..SolverOptions::default()
    };
    let rp = rdf_value_with(source.probs(), dist, d, &opts)?;
    atlas
        .entries
        .par_iter()
        .map(|e| {
            let r = rdf_value_with(&e.freqs(n), dist, d, &opts)?;
            Ok((r - rp, e.prob()))
        })
        .collect()
}

/// Exact rate redundancy at blocklength `n`. `eps_offset` shifts the target
/// to `ε + eps_offset`.
pub fn rate_redundancy_oracle(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    eps: f64,
    n: usize,
    eps_offset: f64,
) -> Result<OracleResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::DomainError(format!("eps must lie in (0, 1), got {eps}")));
    }
    let gaps = type_rate_gaps(source, dist, d, n)?;
    Ok(redundancy_from_gaps(gaps, eps + eps_offset, n))
}

/// Smallest achieved gap `g` (or zero) with `Pr{gap > g} ≤ target`.
pub fn redundancy_from_gaps(mut gaps: Vec<(f64, f64)>, target: f64, n: usize) -> OracleResult {
    let n_types = gaps.len();
    for g in gaps.iter_mut() {
        if g.0.abs() <= TIE {
            g.0 = 0.0;
        }
    }
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let excess_prob: f64 = gaps.iter().filter(|g| g.0 > 0.0).map(|g| g.1).sum();
    let max_gap = gaps.first().map_or(0.0, |g| g.0.max(0.0));
    if target <= 0.0 {
        return OracleResult {
            n,
            delta_r: max_gap,
            tail_prob: 0.0,
            excess_prob,
            n_types,
        };
    }
    // walk tie groups from the largest gap down; `above` is the mass
    // strictly above the current group
    let mut above = 0.0;
    let mut best = (max_gap, 0.0);
    let mut i = 0;
    while i < gaps.len() && gaps[i].0 > 0.0 {
        let g = gaps[i].0;
        if above > target {
            break;
        }
        best = (g, above);
        let mut j = i;
        while j < gaps.len() && g - gaps[j].0 <= TIE {
            above += gaps[j].1;
            j += 1;
        }
        i = j;
    }
    if above <= target && (i >= gaps.len() || gaps[i].0 <= 0.0) {
        best = (0.0, above);
    }
    OracleResult {
        n,
        delta_r: best.0,
        tail_prob: best.1,
        excess_prob,
        n_types,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerryEsseenOptions {
    pub constant: f64,
    /// Use `6 ξ / √n` with no variance normalization.
    pub unnormalized: bool,
}

impl Default for BerryEsseenOptions {
    fn default() -> Self {
        Self {
            constant: 0.56,
            unnormalized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerryEsseenHalfwidth {
    /// Bound on the CDF error of the normalized sum.
    pub probability: f64,
    /// The same error mapped to rate through the Gaussian density at the
    /// operating quantile.
    pub rate: f64,
}

pub fn berry_esseen_from(
    op: &OperatingPoint,
    eps: f64,
    n: u64,
    opts: BerryEsseenOptions,
) -> Result<BerryEsseenHalfwidth> {
    if n == 0 {
        return Err(Error::DomainError("blocklength must be at least 1".into()));
    }
    let v = op.dispersion;
    if !(v > 1e-14) {
        return Err(Error::ZeroVariance);
    }
    let sqrt_n = (n as f64).sqrt();
    let probability = if opts.unnormalized {
        6.0 * op.third_moment / sqrt_n
    } else {
        opts.constant * op.third_moment / (v.powf(1.5) * sqrt_n)
    };
    let z = q_inverse(eps)?;
    let density = crate::special::normal_pdf(z) * (n as f64 / v).sqrt();
    Ok(BerryEsseenHalfwidth {
        probability,
        rate: probability / density,
    })
}

pub fn berry_esseen_halfwidth(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    eps: f64,
    n: u64,
    opts: BerryEsseenOptions,
) -> Result<BerryEsseenHalfwidth> {
    berry_esseen_from(&operating_point(source, dist, d)?, eps, n, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Check {
    pub n: usize,
    /// Exact `Pr{P_x ∉ Ω_n}`.
    pub lhs: f64,
    /// `2L/n²`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn lemma2_check(source: &DiscreteSource, n: usize) -> Result<Lemma2Check> {
    let atlas = crate::types::enumerate_types(n, source)?;
    let l = source.len() as f64;
    let radius = l * (n as f64).ln() / n as f64;
    let p = source.probs();
    let lhs: f64 = atlas
        .entries
        .iter()
        .filter(|e| {
            let dist2: f64 = e
                .counts
                .iter()
                .zip(p)
                .map(|(&c, &pi)| (c as f64 / n as f64 - pi).powi(2))
                .sum();
            dist2 > radius
        })
        .map(|e| e.prob())
        .sum();
    let rhs = 2.0 * l / (n as f64 * n as f64);
    Ok(Lemma2Check {
        n,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRecord {
    pub n: u64,
    pub r_normal: f64,
    pub r_oracle: Option<f64>,
    pub be_halfwidth: Option<f64>,
    /// Why the oracle or halfwidth is missing, if it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub eps: f64,
    pub point: OperatingPoint,
    pub records: Vec<RateRecord>,
}

/// Normal approximation, oracle and Berry-Esseen halfwidth over `n_list`.
/// Errors at single blocklengths are recorded in the record and the sweep
/// goes on.
pub fn rate_curve(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    eps: f64,
    n_list: &[u64],
    with_oracle: bool,
    be: BerryEsseenOptions,
) -> Result<RateCurve> {
    let point = operating_point(source, dist, d)?;
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut records = Vec::with_capacity(ns.len());
    for n in ns {
        let r_normal = normal_approx(point.rdf, point.dispersion, eps, n)?;
        let mut notes = Vec::new();
        let be_halfwidth = match berry_esseen_from(&point, eps, n, be) {
            Ok(h) => Some(h.rate),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        };
        let r_oracle = if with_oracle {
            match rate_redundancy_oracle(source, dist, d, eps, n as usize, 0.0) {
                Ok(o) => Some(point.rdf + o.delta_r),
                Err(e) => {
                    notes.push(e.to_string());
                    None
                }
            }
        } else {
            None
        };
        records.push(RateRecord {
            n,
            r_normal,
            r_oracle,
            be_halfwidth,
            note: if notes.is_empty() { None } else { Some(notes.join("; ")) },
        });
    }
    Ok(RateCurve { eps, point, records })
}

impl RateCurve {
    /// CSV with a `#schema=` line. With `bits` every rate is divided by
    /// `ln 2` and the column suffix changes.
    pub fn to_csv(&self, bits: bool) -> String {
        let unit = if bits { "bits" } else { "nats" };
        let scale = if bits { std::f64::consts::LN_2 } else { 1.0 };
        let mut out = format!("#schema={CSV_SCHEMA}\n");
        out.push_str(&format!("n,r_normal_{unit},r_oracle_{unit},be_halfwidth_{unit},eps\n"));
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| fmt_sig(x / scale));
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                fmt_sig(r.r_normal / scale),
                opt(r.r_oracle),
                opt(r.be_halfwidth),
                fmt_sig(self.eps)
            ));
        }
        out
    }
}

/// `n_min, n_min·g, …` up to `n_max` (inclusive), rounded to integers.
pub fn geometric_grid(n_min: u64, n_max: u64, ratio: f64) -> Result<Vec<u64>> {
    if n_min == 0 || n_max < n_min || !(ratio > 1.0) {
        return Err(Error::DomainError(format!(
            "bad blocklength grid: {n_min}..{n_max} by {ratio}"
        )));
    }
    let mut out = Vec::new();
    let mut k = 0i32;
    loop {
        let n = (n_min as f64 * ratio.powi(k)).round() as u64;
        if n > n_max {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
        k += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> (DiscreteSource, DistortionSpec) {
        (
            DiscreteSource::new(&[0.2, 0.8]).unwrap(),
            DistortionSpec::hamming(2).unwrap(),
        )
    }

    #[test]
    fn normal_approx_formula() {
        let (s, h) = binary();
        let op = operating_point(&s, &h, 0.05).unwrap();
        assert_eq!(normal_approx_rate(&s, &h, 0.05, 0.5, 1000).unwrap(), op.rdf);
        let hand = op.rdf + (op.dispersion / 1000.0).sqrt() * q_inverse(0.05).unwrap();
        assert_eq!(normal_approx_rate(&s, &h, 0.05, 0.05, 1000).unwrap(), hand);
        assert!((op.dispersion - 0.16 * 4f64.ln().powi(2)).abs() < 1e-9);
        // h(0.2) − h(0.05)
        assert!((op.rdf - 0.301_887_180_192_315_4).abs() < 1e-10);
    }

    #[test]
    fn uniform_is_flat() {
        let s = DiscreteSource::uniform(3).unwrap();
        let h = DistortionSpec::hamming(3).unwrap();
        let curve = rate_curve(
            &s,
            &h,
            0.1,
            0.05,
            &[10, 100, 1000],
            false,
            BerryEsseenOptions::default(),
        )
        .unwrap();
        for r in &curve.records {
            assert!((r.r_normal - curve.point.rdf).abs() < 1e-6);
            assert!(r.be_halfwidth.is_none());
        }
        assert!(matches!(
            berry_esseen_halfwidth(&s, &h, 0.1, 0.05, 100, BerryEsseenOptions::default()),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn third_moment_by_hand() {
        let (s, h) = binary();
        let op = operating_point(&s, &h, 0.05).unwrap();
        // two-point distribution: ξ = p q (p² + q²) |f₀ − f₁|³
        let gap = (op.f_values[0] - op.f_values[1]).abs();
        let xi = 0.2 * 0.8 * (0.04 + 0.64) * gap.powi(3);
        assert!((op.third_moment - xi).abs() < 1e-12);
    }

    #[test]
    fn berry_esseen_scaling() {
        let (s, h) = binary();
        let opts = BerryEsseenOptions::default();
        let hw: Vec<BerryEsseenHalfwidth> = [100u64, 1000, 10000]
            .iter()
            .map(|&n| berry_esseen_halfwidth(&s, &h, 0.05, 0.05, n, opts).unwrap())
            .collect();
        for w in hw.windows(2) {
            assert!((w[0].probability / w[1].probability - 10f64.sqrt()).abs() < 1e-9);
            assert!((w[0].rate / w[1].rate - 10.0).abs() < 1e-9);
        }
        let unnormalized = berry_esseen_halfwidth(
            &s,
            &h,
            0.05,
            0.05,
            100,
            BerryEsseenOptions {
                unnormalized: true,
                ..opts
            },
        )
        .unwrap();
        let op = operating_point(&s, &h, 0.05).unwrap();
        assert!((unnormalized.probability - 6.0 * op.third_moment / 10.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_trivial_cases() {
        let (s, h) = binary();
        // n = 1: both single-letter types have R = 0 < R(p, D)
        let o = rate_redundancy_oracle(&s, &h, 0.05, 0.05, 1, 0.0).unwrap();
        assert_eq!(o.delta_r, 0.0);
        assert_eq!(o.excess_prob, 0.0);
        // ε above the excess probability needs no redundancy
        let o = rate_redundancy_oracle(&s, &h, 0.05, 0.05, 50, 0.0).unwrap();
        let o2 = rate_redundancy_oracle(&s, &h, 0.05, o.excess_prob + 1e-9, 50, 0.0).unwrap();
        assert_eq!(o2.delta_r, 0.0);
        // an offset that cancels ε demands the largest gap
        let o3 = rate_redundancy_oracle(&s, &h, 0.05, 0.05, 50, -0.05).unwrap();
        assert_eq!(o3.tail_prob, 0.0);
        assert!(o3.delta_r >= o.delta_r);
    }

    #[test]
    fn oracle_matches_binomial_tail() {
        // binary Hamming: R(q) − R(p) = h(q) − h(p) for D < min(q)
        let (s, h) = binary();
        let n = 400;
        let o = rate_redundancy_oracle(&s, &h, 0.05, 0.05, n, 0.0).unwrap();
        let h2 = |x: f64| crate::source::entropy(&[x, 1.0 - x]);
        let lnf = crate::types::ln_factorial_table(n);
        let mut pts: Vec<(f64, f64)> = (0..=n)
            .map(|k| {
                let q = k as f64 / n as f64;
                let r = if 0.05 < q.min(1.0 - q) { h2(q) - h2(0.05) } else { 0.0 };
                let lp = lnf[n] - lnf[k] - lnf[n - k] + k as f64 * 0.2f64.ln() + (n - k) as f64 * 0.8f64.ln();
                (r - (h2(0.2) - h2(0.05)), lp.exp())
            })
            .collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut above = 0.0;
        let mut answer = 0.0;
        for (g, pr) in pts {
            if g <= 0.0 || above > 0.05 {
                break;
            }
            answer = g;
            above += pr;
        }
        assert!((o.delta_r - answer).abs() < 1e-9, "{} vs {answer}", o.delta_r);
        assert!(o.tail_prob <= 0.05);
    }

    #[test]
    fn oracle_cap_enforced() {
        let s = DiscreteSource::uniform(4).unwrap();
        let h = DistortionSpec::hamming(4).unwrap();
        assert!(matches!(
            rate_redundancy_oracle(&s, &h, 0.1, 0.05, 61, 0.0),
            Err(Error::AtlasTooLarge { .. })
        ));
    }

    #[test]
    fn neighbourhood_escape_examples() {
        let s = DiscreteSource::uniform(2).unwrap();
        assert!(lemma2_check(&s, 100).unwrap().holds);
        let c = lemma2_check(&s, 2).unwrap();
        assert_eq!(c.rhs, 1.0);
        assert!(c.holds);
        let s = DiscreteSource::new(&[0.2, 0.8]).unwrap();
        for n in [64, 256, 1024] {
            let c = lemma2_check(&s, n).unwrap();
            assert!(c.holds, "{c:?}");
        }
    }

    #[test]
    fn csv_layout() {
        let (s, h) = binary();
        let curve = rate_curve(&s, &h, 0.05, 0.5, &[1000, 100], true, BerryEsseenOptions::default()).unwrap();
        let csv = curve.to_csv(false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "#schema=1");
        assert_eq!(lines[1], "n,r_normal_nats,r_oracle_nats,be_halfwidth_nats,eps");
        assert!(lines[2].starts_with("100,"));
        assert!(lines[3].starts_with("1000,"));
        let fields: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(
            fields[1].parse::<f64>().unwrap(),
            crate::numeric::round_sig(curve.point.rdf, 9)
        );
        let curve = rate_curve(&s, &h, 0.05, 0.05, &[200000], true, BerryEsseenOptions::default()).unwrap();
        let row = curve.to_csv(false).lines().nth(2).unwrap().to_string();
        assert_eq!(row.split(',').nth(2), Some(""));
        assert!(curve.records[0].note.is_some());
    }

    #[test]
    fn grid() {
        assert_eq!(geometric_grid(100, 10000, 10.0).unwrap(), vec![100, 1000, 10000]);
        assert_eq!(geometric_grid(4, 16, 2.0).unwrap(), vec![4, 8, 16]);
        assert!(geometric_grid(0, 10, 2.0).is_err());
    }
}
