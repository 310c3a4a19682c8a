//! Excess-distortion dispersion `V(p, D)`.
//!
//! Three independent routes:
//!
//! * derivatives: `Var_p[R′(X)]` where `R′(i) − R′(0)` is the derivative of
//!   `R(·, D)` at `p` along the simplex direction `e_i − e_0`. Only
//!   differences of the partial derivatives are needed because the variance
//!   ignores a common shift.
//! * tilted: `Var_p[f(X)]` with `f(i) = −ln Σ_x̂ q̂(x̂) exp(−λ (d(i, x̂) − D))`
//!   taken from the solver output at `(p, D)`.
//! * exponent: the curvature of `F(R(p, D) + δ, p, D) ≈ δ²/(2V)` at zero
//!   excess rate.
//!
//! The tilted route is the cheap one and is used by the rest of the crate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::{ExponentOptions, ExponentSolver};
use crate::numeric::least_squares_2;
use crate::rd::{rd_at_distortion_with, rdf_value_with, RdSolution, SolverOptions};
use crate::source::{weighted_mean_var, DiscreteSource, DistortionKind, DistortionSpec};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_DELTAS: [f64; 3] = [0.01, 0.02, 0.04];

/// Solver settings tight enough for finite differences.
pub(crate) fn tight_solver() -> SolverOptions {
    SolverOptions {
        gap_tol: 1e-13,
        d_rel_tol: 1e-11,
        ..SolverOptions::default()
    }
}

/// Result of the derivative route.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    /// `R′(i) − R′(0)` for every letter.
    pub r_prime_deltas: Vec<f64>,
    /// Largest `|g(h/2) − g(h)| / 3` over directions.
    pub error_estimate: f64,
}

/// `Var_p[R′(X)]` by Richardson-extrapolated central differences.
pub fn dispersion_via_derivatives(source: &DiscreteSource, dist: &DistortionSpec, d: f64, step: f64) -> Result<f64> {
    derivative_route(source, dist, d, step).map(|e| e.value)
}

pub fn derivative_route(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    step: f64,
) -> Result<DerivativeEstimate> {
    dist.check_source(source.len())?;
    let p = source.probs();
    check_interior(p, dist, d)?;
    if !(step > 0.0) {
        return Err(Error::DomainError(format!("step must be positive, got {step}")));
    }
    if p.iter().any(|&pi| pi - step <= 0.0) {
        return Err(Error::StepTooLarge(step));
    }
    let opts = tight_solver();
    let rate = |q: &[f64]| rdf_value_with(q, dist, d, &opts);
    let central = |i: usize, h: f64| -> Result<f64> {
        let mut plus = p.to_vec();
        plus[i] += h;
        plus[0] -= h;
        let mut minus = p.to_vec();
        minus[i] -= h;
        minus[0] += h;
        Ok((rate(&plus)? - rate(&minus)?) / (2.0 * h))
    };
    let mut deltas = vec![0.0; p.len()];
    let mut err = 0.0f64;
    for (i, slot) in deltas.iter_mut().enumerate().skip(1) {
        let g1 = central(i, step)?;
        let g2 = central(i, 0.5 * step)?;
        *slot = (4.0 * g2 - g1) / 3.0;
        err = err.max((g2 - g1).abs() / 3.0);
    }
    let (_, var) = weighted_mean_var(p, &deltas);
    Ok(DerivativeEstimate {
        value: var,
        r_prime_deltas: deltas,
        error_estimate: err,
    })
}

/// `f(i) = −ln Σ_x̂ q̂(x̂) exp(−λ (d(i, x̂) − D))` from a solver output.
pub fn tilted_values(sol: &RdSolution, dist: &DistortionSpec, d: f64) -> Vec<f64> {
    (0..dist.rows())
        .map(|x| {
            let row = dist.row(x);
            let m = row
                .iter()
                .zip(&sol.repro_marginal)
                .filter(|(_, q)| **q > 0.0)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min);
            let s: f64 = row
                .iter()
                .zip(&sol.repro_marginal)
                .map(|(v, q)| q * (-sol.lambda * (v - m)).exp())
                .sum();
            sol.lambda * (m - d) - s.ln()
        })
        .collect()
}

/// `Var_p[f(X)]` and the `f` vector.
pub fn dispersion_via_tilted(source: &DiscreteSource, dist: &DistortionSpec, d: f64) -> Result<(f64, Vec<f64>)> {
    dist.check_source(source.len())?;
    let p = source.probs();
    check_interior(p, dist, d)?;
    let sol = rd_at_distortion_with(p, dist, d, &tight_solver())?;
    let f = tilted_values(&sol, dist, d);
    let (mean, var) = weighted_mean_var(p, &f);
    let rate = sol.rate_at(d);
    if (mean - rate).abs() > 1e-6 {
        return Err(Error::SolverFailure(format!(
            "tilted values average {mean} but R(p, D) = {rate}"
        )));
    }
    Ok((var, f))
}

/// Outcome of fitting the exponent near zero excess rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub v: f64,
    /// The exponent is infinite just above `R(p, D)`; `v` is reported as 0.
    pub jump_detected: bool,
    /// Largest relative residual of the fit.
    pub max_rel_residual: f64,
    /// Factor applied to the requested excess rates in the accepted fit.
    pub delta_scale: f64,
}

/// Fits `F(δ) ≈ δ²/(2V) + b δ³` by least squares. A single point gives the
/// pure quadratic.
pub fn fit_exponent_curve(deltas: &[f64], values: &[f64]) -> Result<ExponentFit> {
    if deltas.len() != values.len() {
        return Err(Error::DimensionMismatch(deltas.len(), values.len()));
    }
    if deltas.is_empty() || deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::DomainError("excess rates must be positive".into()));
    }
    let (a, b) = if deltas.len() == 1 {
        (values[0] / deltas[0].powi(2), 0.0)
    } else {
        let x1: Vec<f64> = deltas.iter().map(|d| d * d).collect();
        let x2: Vec<f64> = deltas.iter().map(|d| d * d * d).collect();
        least_squares_2(&x1, &x2, values).ok_or(Error::PoorFit(f64::INFINITY))?
    };
    let resid = deltas
        .iter()
        .zip(values)
        .map(|(d, f)| {
            let fit = a * d * d + b * d * d * d;
            (fit - f).abs() / f.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    if !(a > 0.0) || resid > 0.05 {
        return Err(Error::PoorFit(resid));
    }
    Ok(ExponentFit {
        v: 1.0 / (2.0 * a),
        jump_detected: false,
        max_rel_residual: resid,
        delta_scale: 1.0,
    })
}

/// Successive fits must agree this closely before the exponent route stops
/// shrinking the excess rates.
const FIT_AGREEMENT: f64 = 0.01;
const MAX_HALVINGS: i32 = 8;

/// `V` from the curvature of the exponent at zero excess rate. The excess
/// rates start at `deltas` and are halved until two successive fits agree,
/// since the useful range of the expansion depends on how close `R(p, D)`
/// sits to the largest rate on the alphabet.
pub fn dispersion_via_exponent(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    deltas: &[f64],
    opts: ExponentOptions,
) -> Result<ExponentFit> {
    let solver = ExponentSolver::new(source, dist, d, opts)?;
    let r0 = solver.rdf_at_source();
    let mut prev: Option<ExponentFit> = None;
    let mut last_err = None;
    let mut any_feasible = false;
    for k in 0..=MAX_HALVINGS {
        let scale = 0.5f64.powi(k);
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for &delta in deltas {
            match solver.solve(r0 + delta * scale) {
                Ok(sol) => {
                    xs.push(delta * scale);
                    fs.push(sol.value);
                }
                Err(Error::Infeasible { .. }) => {}
                Err(e) => return Err(Error::ExponentSolverFailure(e.to_string())),
            }
        }
        any_feasible |= !xs.is_empty();
        if xs.len() < deltas.len() {
            continue;
        }
        match fit_exponent_curve(&xs, &fs) {
            Ok(mut fit) => {
                fit.delta_scale = scale;
                if let Some(p) = &prev {
                    if rel_gap(p.v, fit.v) <= FIT_AGREEMENT {
                        return Ok(fit);
                    }
                }
                prev = Some(fit);
            }
            Err(e) => {
                prev = None;
                last_err = Some(e);
            }
        }
    }
    if !any_feasible {
        return Ok(ExponentFit {
            v: 0.0,
            jump_detected: true,
            max_rel_residual: 0.0,
            delta_scale: 0.0,
        });
    }
    Err(last_err.unwrap_or(Error::PoorFit(f64::INFINITY)))
}

/// `Var_p[ln p(X)]`, the dispersion at zero distortion.
pub fn lossless_dispersion(source: &DiscreteSource) -> f64 {
    let lnp: Vec<f64> = source.probs().iter().map(|p| p.ln()).collect();
    weighted_mean_var(source.probs(), &lnp).1
}

/// Largest total-variation distance between the backward channels
/// `B(x̂ + z | x̂)` of the used reproduction letters and their average, for a
/// difference measure. `None` if some reproduction letter is unused.
pub fn backward_channel_nonadditivity(p: &[f64], sol: &RdSolution, min_mass: f64) -> Option<f64> {
    let l = p.len();
    if sol.repro_marginal.len() != l || sol.repro_marginal.iter().any(|&m| m <= min_mass) {
        return None;
    }
    let back: Vec<Vec<f64>> = (0..l)
        .map(|xh| {
            (0..l)
                .map(|z| {
                    let x = (xh + z) % l;
                    p[x] * sol.channel[x][xh] / sol.repro_marginal[xh]
                })
                .collect()
        })
        .collect();
    let avg: Vec<f64> = (0..l)
        .map(|z| (0..l).map(|xh| sol.repro_marginal[xh] * back[xh][z]).sum())
        .collect();
    Some(
        back.iter()
            .map(|b| 0.5 * b.iter().zip(&avg).map(|(u, v)| (u - v).abs()).sum::<f64>())
            .fold(0.0, f64::max),
    )
}

/// Threshold `D₀(p)` below which the optimal backward channel of a
/// difference measure is additive, found by bisection. Returns `D_trivial`
/// when the channel stays additive over the whole nontrivial range.
pub fn estimate_d0(source: &DiscreteSource, dist: &DistortionSpec) -> Result<f64> {
    dist.check_source(source.len())?;
    if dist.kind() == DistortionKind::General {
        return Err(Error::InvalidDistortion(
            "the additive backward channel needs a difference measure".into(),
        ));
    }
    let p = source.probs();
    let lo_d = dist.d_min(p);
    let hi_d = dist.d_trivial(p);
    let opts = tight_solver();
    let additive = |d: f64| -> Result<bool> {
        let sol = rd_at_distortion_with(p, dist, d, &opts)?;
        Ok(backward_channel_nonadditivity(p, &sol, 1e-9).is_some_and(|tv| tv <= 1e-6))
    };
    let span = hi_d - lo_d;
    let mut a = lo_d + 1e-6 * span;
    let mut b = hi_d - 1e-9 * span;
    if !additive(a)? {
        return Ok(lo_d);
    }
    if additive(b)? {
        return Ok(hi_d);
    }
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if additive(m)? {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-12 * span {
            break;
        }
    }
    Ok(a)
}

fn check_interior(p: &[f64], dist: &DistortionSpec, d: f64) -> Result<()> {
    let lo = dist.d_min(p);
    let hi = dist.d_trivial(p);
    if !(d > lo && d < hi) {
        return Err(Error::DOutOfRange { d, lo, hi });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionOptions {
    pub step: f64,
    /// Excess rates for the exponent route; empty skips it.
    pub deltas: Vec<f64>,
    pub exponent: ExponentOptions,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            deltas: DEFAULT_DELTAS.to_vec(),
            exponent: ExponentOptions {
                resolution: 60,
                ..ExponentOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionReport {
    pub distortion: f64,
    pub rdf: f64,
    pub v_derivative: f64,
    pub v_exponent: Option<f64>,
    pub v_tilted: f64,
    pub f_values: Vec<f64>,
    pub r_prime_deltas: Vec<f64>,
    pub max_pairwise_rel_gap: f64,
    pub derivative_error_estimate: f64,
    /// The exponent is infinite at any positive excess rate.
    pub exponent_jump: bool,
    /// `V` changes by more than 10% between `D(1 ± 1e-3)`.
    pub jump_suspected: bool,
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Runs every route at `(p, D)` and cross-checks them.
pub fn dispersion_report(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    opts: &DispersionOptions,
) -> Result<DispersionReport> {
    let (v_tilted, f_values) = dispersion_via_tilted(source, dist, d)?;
    let rdf = weighted_mean_var(source.probs(), &f_values).0;
    let deriv = derivative_route(source, dist, d, opts.step)?;
    let (v_exponent, exponent_jump) = if opts.deltas.is_empty() {
        (None, false)
    } else {
        let fit = dispersion_via_exponent(source, dist, d, &opts.deltas, opts.exponent)?;
        (Some(fit.v), fit.jump_detected)
    };
    let mut values = vec![deriv.value, v_tilted];
    values.extend(v_exponent);
    let mut gap = 0.0f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            gap = gap.max(rel_gap(values[i], values[j]));
        }
    }
    let jump_suspected = jump_near(source, dist, d, v_tilted)?;
    Ok(DispersionReport {
        distortion: d,
        rdf,
        v_derivative: deriv.value,
        v_exponent,
        v_tilted,
        f_values,
        r_prime_deltas: deriv.r_prime_deltas,
        max_pairwise_rel_gap: gap,
        derivative_error_estimate: deriv.error_estimate,
        exponent_jump,
        jump_suspected,
    })
}

/// Compares the tilted dispersion at `D(1 ± 1e-3)` with the value at `D`.
pub fn jump_near(source: &DiscreteSource, dist: &DistortionSpec, d: f64, v: f64) -> Result<bool> {
    let p = source.probs();
    let (lo, hi) = (dist.d_min(p), dist.d_trivial(p));
    for side in [d * (1.0 - 1e-3), d * (1.0 + 1e-3)] {
        if !(side > lo && side < hi) {
            continue;
        }
        let (vs, _) = dispersion_via_tilted(source, dist, side)?;
        if rel_gap(vs, v) > 0.1 {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const V_BINARY: f64 = 0.307_489_928_907_648_87; // 0.16 (ln 4)²

    fn binary() -> (DiscreteSource, DistortionSpec) {
        (
            DiscreteSource::new(&[0.2, 0.8]).unwrap(),
            DistortionSpec::hamming(2).unwrap(),
        )
    }

    #[test]
    fn lossless_values() {
        assert!(lossless_dispersion(&DiscreteSource::uniform(5).unwrap()) < 1e-30);
        let (s, _) = binary();
        assert!((lossless_dispersion(&s) - V_BINARY).abs() < 1e-15);
        let s = DiscreteSource::new(&[0.5, 0.25, 0.25]).unwrap();
        assert!((lossless_dispersion(&s) - 0.25 * 2f64.ln().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn uniform_binary_vanishes() {
        let s = DiscreteSource::uniform(2).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        assert!(dispersion_via_derivatives(&s, &h, 0.1, DEFAULT_STEP).unwrap().abs() < 1e-6);
        let (v, f) = dispersion_via_tilted(&s, &h, 0.1).unwrap();
        assert!(v < 1e-12);
        assert!((f[0] - f[1]).abs() < 1e-12);
    }

    #[test]
    fn binary_below_d0() {
        let (s, h) = binary();
        let vd = dispersion_via_derivatives(&s, &h, 0.05, DEFAULT_STEP).unwrap();
        let (vt, _) = dispersion_via_tilted(&s, &h, 0.05).unwrap();
        assert!((vd - V_BINARY).abs() < 1e-6, "{vd}");
        assert!((vt - V_BINARY).abs() < 1e-9, "{vt}");
        assert!(rel_gap(vd, vt) < 1e-4);
        let diff = DistortionSpec::difference(&[0.0, 1.0]).unwrap();
        let (vt, _) = dispersion_via_tilted(&s, &diff, 1e-6).unwrap();
        assert!((vt - V_BINARY).abs() < 1e-9);
    }

    #[test]
    fn exponent_route_binary() {
        let (s, h) = binary();
        let fit = dispersion_via_exponent(&s, &h, 0.05, &DEFAULT_DELTAS, ExponentOptions::default()).unwrap();
        assert!(!fit.jump_detected);
        assert!(rel_gap(fit.v, V_BINARY) < 0.05, "{}", fit.v);
    }

    #[test]
    fn exponent_route_uniform_jumps() {
        let s = DiscreteSource::uniform(2).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        let fit = dispersion_via_exponent(&s, &h, 0.1, &DEFAULT_DELTAS, ExponentOptions::default()).unwrap();
        assert!(fit.jump_detected);
        assert_eq!(fit.v, 0.0);
    }

    #[test]
    fn gaussian_exponent_fit() {
        let f = |r: f64| ((2.0 * r).exp() - 1.0 - 2.0 * r) / 2.0;
        let vals: Vec<f64> = DEFAULT_DELTAS.iter().map(|&d| f(d)).collect();
        let fit = fit_exponent_curve(&DEFAULT_DELTAS, &vals).unwrap();
        assert!((fit.v - 0.5).abs() < 0.005 * 0.5, "{}", fit.v);
        assert!(matches!(
            fit_exponent_curve(&[0.01, 0.02, 0.04], &[1.0, 0.0, 1.0]),
            Err(Error::PoorFit(_))
        ));
    }

    #[test]
    fn step_too_large() {
        let s = DiscreteSource::new(&[0.05, 0.95]).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        assert!(matches!(
            dispersion_via_derivatives(&s, &h, 0.01, 0.1),
            Err(Error::StepTooLarge(_))
        ));
    }

    #[test]
    fn d0_for_hamming() {
        // additive backward channel while (L − 1)·min p ≥ D
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let h = DistortionSpec::hamming(3).unwrap();
        let d0 = estimate_d0(&s, &h).unwrap();
        assert!((d0 - 0.4).abs() < 1e-6, "{d0}");
        let (s2, h2) = binary();
        assert!((estimate_d0(&s2, &h2).unwrap() - 0.2).abs() < 1e-6);
    }

    #[test]
    fn plateau_below_d0() {
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let h = DistortionSpec::hamming(3).unwrap();
        let v0 = lossless_dispersion(&s);
        for &d in &[0.01, 0.1, 0.2, 0.35] {
            let (v, _) = dispersion_via_tilted(&s, &h, d).unwrap();
            assert!((v - v0).abs() < 1e-4);
            let vd = dispersion_via_derivatives(&s, &h, d, DEFAULT_STEP).unwrap();
            assert!((vd - v0).abs() < 1e-4);
        }
    }

    /// Reduced-alphabet construction for Hamming above `D₀`: with support
    /// `S` of size `k`, `c(x) = p(x)/(1 − D)` on `S` and `μ` off it, where
    /// `μ = (P(S)/(1 − D) − 1)/(k − 1)`; then `V = Var_p[ln c(X)]`.
    fn hamming_above_d0(p: &[f64], d: f64) -> f64 {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|a, b| p[*b].partial_cmp(&p[*a]).unwrap());
        for k in (2..=p.len()).rev() {
            let s = &order[..k];
            let ps: f64 = s.iter().map(|&i| p[i]).sum();
            let mu = (ps / (1.0 - d) - 1.0) / (k as f64 - 1.0);
            let kappa = 1.0 - d;
            let consistent = (0..p.len()).all(|i| {
                let inside = s.contains(&i);
                inside == (p[i] > mu * kappa)
            });
            if consistent {
                let c: Vec<f64> = (0..p.len())
                    .map(|i| if s.contains(&i) { (p[i] / kappa).ln() } else { mu.ln() })
                    .collect();
                return weighted_mean_var(p, &c).1;
            }
        }
        panic!("no consistent support");
    }

    #[test]
    fn hamming_reduced_alphabet() {
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let h = DistortionSpec::hamming(3).unwrap();
        for &d in &[0.42, 0.45, 0.48] {
            let oracle = hamming_above_d0(s.probs(), d);
            let vd = dispersion_via_derivatives(&s, &h, d, DEFAULT_STEP).unwrap();
            assert!(rel_gap(vd, oracle) < 1e-4, "D={d}: {vd} vs {oracle}");
            let (vt, _) = dispersion_via_tilted(&s, &h, d).unwrap();
            assert!(rel_gap(vt, oracle) < 1e-8);
        }
    }

    #[test]
    fn report_flags_jump_at_d0() {
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let h = DistortionSpec::hamming(3).unwrap();
        let opts = DispersionOptions {
            deltas: vec![],
            ..DispersionOptions::default()
        };
        let far = dispersion_report(&s, &h, 0.2, &opts).unwrap();
        assert!(!far.jump_suspected);
        assert!(far.max_pairwise_rel_gap < 1e-4);
        assert!((far.rdf - crate::rd::rdf_value(s.probs(), &h, 0.2).unwrap()).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tilted_mean_is_rate_and_routes_agree(a in 0.1f64..1.0, b in 0.1f64..1.0, c in 0.1f64..1.0, t in 0.1f64..0.9) {
            let s = DiscreteSource::new(&[a / (a + b + c), b / (a + b + c), c / (a + b + c)]).unwrap();
            let h = DistortionSpec::hamming(3).unwrap();
            let d = t * h.d_trivial(s.probs());
            let (vt, f) = dispersion_via_tilted(&s, &h, d).unwrap();
            prop_assert!(vt >= 0.0);
            let rate = crate::rd::rdf_value(s.probs(), &h, d).unwrap();
            prop_assert!((weighted_mean_var(s.probs(), &f).0 - rate).abs() < 1e-6);
            if !jump_near(&s, &h, d, vt).unwrap() && vt > 1e-6 {
                let vd = dispersion_via_derivatives(&s, &h, d, DEFAULT_STEP).unwrap();
                prop_assert!(rel_gap(vd, vt) < 1e-3, "vd={} vt={}", vd, vt);
            }
        }
    }
}
