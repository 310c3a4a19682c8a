//! Rate-distortion function of a discrete source by alternating
//! minimization at fixed slope, with slope search to hit a target
//! distortion.
//!
//! At slope parameter `λ ≥ 0` the solver minimizes, over reproduction
//! marginals `q̂`,
//!
//! ```text
//! F(q̂) = −Σ_x p(x) ln Σ_x̂ q̂(x̂) exp(−λ d(x, x̂))
//! ```
//!
//! whose minimum equals `R(D) + λ D` at the point of the curve with slope
//! `−λ`. The alternating updates `W(x̂|x) ∝ q̂(x̂) e^{−λ d}` and `q̂ ← pᵀW`
//! run until the Blahut bound gap `ln max c − Σ q̂ c ln c` falls below the
//! tolerance, then a Newton step on the active support polishes the
//! marginal to machine precision.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::source::{DiscreteSource, DistortionSpec};

/// Tuning knobs for the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop the alternating updates once the Lagrangian bound gap is below this.
    pub gap_tol: f64,
    /// Relative tolerance on the distortion when searching for a slope.
    pub d_rel_tol: f64,
    pub max_iter: usize,
    /// Reproduction letters with less mass than this are dropped before polishing.
    pub prune: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            d_rel_tol: 1e-7,
            max_iter: 100_000,
            prune: 1e-12,
        }
    }
}

/// One point of the rate-distortion curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdSolution {
    /// `I(p, W)` in nats.
    pub rate: f64,
    /// `E[d(X, X̂)]` under `p` and `channel`.
    pub distortion: f64,
    /// Negative slope of the curve at this point.
    pub lambda: f64,
    /// Test channel `W(x̂|x)`, one row per source letter.
    pub channel: Vec<Vec<f64>>,
    /// `q̂ = pᵀ W`.
    pub repro_marginal: Vec<f64>,
    /// Final Lagrangian bound gap.
    pub gap: f64,
}

impl RdSolution {
    /// `R(D)` at a nearby distortion, by the tangent of slope `−λ`.
    ///
    /// The rate is exact at `self.distortion` up to the bound gap; the
    /// tangent correction is second order in `|D − self.distortion|`.
    pub fn rate_at(&self, d: f64) -> f64 {
        (self.rate + self.lambda * (self.distortion - d)).max(0.0)
    }

    /// Number of reproduction letters with mass above `threshold` (`K′`).
    pub fn effective_alphabet_size(&self, threshold: f64) -> usize {
        self.repro_marginal.iter().filter(|&&m| m > threshold).count()
    }
}

/// Mutual information `I(p, W)` in nats.
pub fn mutual_information(p: &[f64], channel: &[Vec<f64>]) -> f64 {
    let k = channel.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; k];
    for (px, row) in p.iter().zip(channel) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += px * w;
        }
    }
    let mut acc = 0.0;
    for (px, row) in p.iter().zip(channel) {
        if *px <= 0.0 {
            continue;
        }
        for (w, o) in row.iter().zip(&out) {
            if *w > 0.0 {
                acc += px * w * (w / o).ln();
            }
        }
    }
    acc.max(0.0)
}

/// `Σ p(x) W(x̂|x) d(x, x̂)`.
pub fn expected_distortion(p: &[f64], channel: &[Vec<f64>], dist: &DistortionSpec) -> f64 {
    p.iter()
        .zip(channel)
        .enumerate()
        .map(|(x, (px, row))| px * row.iter().zip(dist.row(x)).map(|(w, d)| w * d).sum::<f64>())
        .sum()
}

/// A source restricted to its letters of positive mass.
struct Problem<'a> {
    dist: &'a DistortionSpec,
    /// full probability vector (may contain zeros)
    p_full: Vec<f64>,
    active: Vec<usize>,
    p: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(p: &[f64], dist: &'a DistortionSpec) -> Result<Self> {
        dist.check_source(p.len())?;
        let mut sum = 0.0;
        for (index, &value) in p.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveMass { index, value });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(sum));
        }
        let p_full: Vec<f64> = p.iter().map(|v| v / sum).collect();
        let active: Vec<usize> = (0..p.len()).filter(|&x| p_full[x] > 0.0).collect();
        let p_act = active.iter().map(|&x| p_full[x]).collect();
        Ok(Self {
            dist,
            p_full,
            active,
            p: p_act,
        })
    }

    fn k(&self) -> usize {
        self.dist.cols()
    }

    /// Row-shifted kernel `exp(−λ (d(x, x̂) − min_x̂ d(x, ·)))` for active rows.
    fn kernel(&self, lambda: f64) -> Vec<Vec<f64>> {
        self.active
            .iter()
            .map(|&x| kernel_row(self.dist.row(x), lambda))
            .collect()
    }
}

fn kernel_row(row: &[f64], lambda: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::INFINITY, f64::min);
    row.iter().map(|d| (-lambda * (d - m)).exp()).collect()
}

/// Per-row normalizers `Z(x)` and the Blahut coefficients `c(x̂)`.
fn z_and_c(p: &[f64], a: &[Vec<f64>], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = q.len();
    let z: Vec<f64> = a
        .iter()
        .map(|row| row.iter().zip(q).map(|(ai, qi)| ai * qi).sum::<f64>().max(1e-300))
        .collect();
    let mut c = vec![0.0; k];
    for ((px, row), zx) in p.iter().zip(a).zip(&z) {
        let w = px / zx;
        for (ci, ai) in c.iter_mut().zip(row) {
            *ci += w * ai;
        }
    }
    (z, c)
}

fn bound_gap(q: &[f64], c: &[f64]) -> f64 {
    let max_c = c.iter().cloned().fold(0.0, f64::max);
    let avg: f64 = q
        .iter()
        .zip(c)
        .filter(|(qi, ci)| **qi > 0.0 && **ci > 0.0)
        .map(|(qi, ci)| qi * ci * ci.ln())
        .sum();
    (max_c.ln() - avg).max(0.0)
}

/// Newton iterations for `min F(q̂)` on the simplex face spanned by the
/// current support, dropping letters whose mass would turn negative.
fn newton_polish(p: &[f64], a: &[Vec<f64>], q0: &[f64], prune: f64) -> Option<Vec<f64>> {
    let k = q0.len();
    let mut q: Vec<f64> = q0.iter().map(|&v| if v > prune { v } else { 0.0 }).collect();
    let s: f64 = q.iter().sum();
    if s <= 0.0 {
        return None;
    }
    q.iter_mut().for_each(|v| *v /= s);
    for _ in 0..80 {
        let support: Vec<usize> = (0..k).filter(|&j| q[j] > 0.0).collect();
        let m = support.len();
        let (z, c) = z_and_c(p, a, &q);
        if m == 1 {
            return Some(q);
        }
        let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
        for ((px, row), zx) in p.iter().zip(a).zip(&z) {
            let w = px / (zx * zx);
            for (i, &ji) in support.iter().enumerate() {
                let ai = row[ji] * w;
                if ai == 0.0 {
                    continue;
                }
                for (j, &jj) in support.iter().enumerate() {
                    kkt[(i, j)] += ai * row[jj];
                }
            }
        }
        for i in 0..m {
            kkt[(i, m)] = 1.0;
            kkt[(m, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(m + 1);
        for (i, &ji) in support.iter().enumerate() {
            rhs[i] = c[ji];
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // damp the step so no mass turns negative; letters leaving the
        // support decay geometrically instead of being cut, which keeps
        // letters whose optimal mass is tiny but positive
        let mut frac = 1.0f64;
        let mut cut = None;
        for (i, &ji) in support.iter().enumerate() {
            if q[ji] + sol[i] <= 0.0 {
                let t = q[ji] / -sol[i];
                if t < 0.5 {
                    // overshoots by far: the letter leaves the support
                    if cut.is_none_or(|(_, tc)| t < tc) {
                        cut = Some((ji, t));
                    }
                } else {
                    frac = frac.min(0.99 * t);
                }
            }
        }
        if let Some((j, _)) = cut {
            q[j] = 0.0;
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            continue;
        }
        let mut step = 0.0f64;
        for (i, &ji) in support.iter().enumerate() {
            q[ji] += frac * sol[i];
            if q[ji] < 1e-300 {
                q[ji] = 0.0;
            }
            step = step.max((frac * sol[i]).abs());
        }
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        if step < 1e-15 {
            break;
        }
    }
    Some(q)
}

/// Optimal reproduction marginal at slope `λ` (internal form).
struct SlopePoint {
    q: Vec<f64>,
    gap: f64,
}

fn solve_slope(prob: &Problem, lambda: f64, init: Option<&[f64]>, opts: &SolverOptions) -> Result<SlopePoint> {
    let k = prob.k();
    let a = prob.kernel(lambda);
    let mut q: Vec<f64> = match init {
        Some(q0) if q0.len() == k && q0.iter().all(|v| *v > 0.0) => q0.to_vec(),
        // letters dropped by an earlier solve get a little mass back
        Some(q0) if q0.len() == k => {
            let mut q: Vec<f64> = q0.iter().map(|v| v.max(1e-6)).collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            q
        }
        _ => vec![1.0 / k as f64; k],
    };
    let mut gap = f64::INFINITY;
    let mut iter = 0;
    // near support changes the plain updates crawl; try a polish every so often
    let mut next_polish = 8;
    while iter < opts.max_iter {
        let (_, c) = z_and_c(&prob.p, &a, &q);
        gap = bound_gap(&q, &c);
        if gap < opts.gap_tol {
            break;
        }
        if iter == next_polish {
            next_polish *= 2;
            // a vanishing letter decays like 1/iter, so also try cutting at sqrt(gap)
            for cut in [opts.prune, opts.prune.max(gap), gap.sqrt()] {
                if let Some(qp) = newton_polish(&prob.p, &a, &q, cut) {
                    let (_, cp) = z_and_c(&prob.p, &a, &qp);
                    let gp = bound_gap(&qp, &cp);
                    if gp < opts.gap_tol {
                        return Ok(SlopePoint { q: qp, gap: gp });
                    }
                }
            }
        }
        for (qi, ci) in q.iter_mut().zip(&c) {
            *qi *= ci;
        }
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        iter += 1;
    }
    if gap >= opts.gap_tol {
        return Err(Error::NoConvergence { iterations: iter, gap });
    }
    if let Some(qp) = newton_polish(&prob.p, &a, &q, opts.prune) {
        let (_, c) = z_and_c(&prob.p, &a, &qp);
        let gp = bound_gap(&qp, &c);
        if gp <= gap {
            return Ok(SlopePoint { q: qp, gap: gp });
        }
    }
    Ok(SlopePoint { q, gap })
}

fn finish(prob: &Problem, lambda: f64, point: &SlopePoint) -> RdSolution {
    let dist = prob.dist;
    let l = prob.p_full.len();
    let channel: Vec<Vec<f64>> = (0..l)
        .map(|x| {
            let a = kernel_row(dist.row(x), lambda);
            let mut w: Vec<f64> = a.iter().zip(&point.q).map(|(ai, qi)| ai * qi).collect();
            let z: f64 = w.iter().sum();
            if z > 0.0 {
                w.iter_mut().for_each(|v| *v /= z);
            } else {
                // no reachable letter on the support; fall back to the nearest one
                let best = a
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc },
                    )
                    .0;
                w.iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = if j == best { 1.0 } else { 0.0 });
            }
            w
        })
        .collect();
    let mut marginal = vec![0.0; prob.k()];
    for (px, row) in prob.p_full.iter().zip(&channel) {
        for (m, w) in marginal.iter_mut().zip(row) {
            *m += px * w;
        }
    }
    RdSolution {
        rate: mutual_information(&prob.p_full, &channel),
        distortion: expected_distortion(&prob.p_full, &channel, dist),
        lambda,
        channel,
        repro_marginal: marginal,
        gap: point.gap,
    }
}

fn zero_slope_solution(prob: &Problem) -> RdSolution {
    let dist = prob.dist;
    let best = (0..prob.k())
        .map(|xh| {
            let e: f64 = prob.p_full.iter().enumerate().map(|(x, px)| px * dist.get(x, xh)).sum();
            (xh, e)
        })
        .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
        .0;
    let q: Vec<f64> = (0..prob.k()).map(|j| if j == best { 1.0 } else { 0.0 }).collect();
    finish(prob, 0.0, &SlopePoint { q, gap: 0.0 })
}

/// Point of the rate-distortion curve with slope `−λ`.
pub fn rd_at_slope(source: &DiscreteSource, dist: &DistortionSpec, lambda: f64, tol: f64) -> Result<RdSolution> {
    let opts = SolverOptions {
        gap_tol: tol,
        ..SolverOptions::default()
    };
    rd_at_slope_with(source.probs(), dist, lambda, &opts)
}

/// [`rd_at_slope`] for a raw probability vector (zeros allowed).
pub fn rd_at_slope_with(p: &[f64], dist: &DistortionSpec, lambda: f64, opts: &SolverOptions) -> Result<RdSolution> {
    if !(opts.gap_tol > 0.0) {
        return Err(Error::DomainError("tolerance must be positive".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::DomainError(format!(
            "slope must be finite and nonnegative, got {lambda}"
        )));
    }
    let prob = Problem::new(p, dist)?;
    if lambda == 0.0 {
        return Ok(zero_slope_solution(&prob));
    }
    let point = solve_slope(&prob, lambda, None, opts)?;
    Ok(finish(&prob, lambda, &point))
}

/// Point of the curve at distortion `D` (relative tolerance `tol` on the
/// achieved distortion).
pub fn rd_at_distortion(source: &DiscreteSource, dist: &DistortionSpec, d: f64, tol: f64) -> Result<RdSolution> {
    let opts = SolverOptions {
        d_rel_tol: tol,
        ..SolverOptions::default()
    };
    rd_at_distortion_with(source.probs(), dist, d, &opts)
}

const LAMBDA_CAP: f64 = 1e5;

/// [`rd_at_distortion`] for a raw probability vector (zeros allowed).
pub fn rd_at_distortion_with(p: &[f64], dist: &DistortionSpec, d: f64, opts: &SolverOptions) -> Result<RdSolution> {
    let prob = Problem::new(p, dist)?;
    let lo = dist.d_min(&prob.p_full);
    let hi = dist.d_trivial(&prob.p_full);
    if !(d > lo && d < hi) {
        return Err(Error::DOutOfRange { d, lo, hi });
    }
    let tol_abs = opts.d_rel_tol * d;

    // bracket: D(λ) decreases from D_trivial at λ = 0
    let (mut a, mut ga) = (0.0, hi - d);
    let mut b = 1.0;
    let mut point = solve_slope(&prob, b, None, opts)?;
    let mut sol_b = finish(&prob, b, &point);
    let mut best = sol_b.clone();
    while sol_b.distortion - d > 0.0 {
        if (sol_b.distortion - d).abs() <= tol_abs {
            return Ok(sol_b);
        }
        a = b;
        ga = sol_b.distortion - d;
        b *= 2.0;
        if b > LAMBDA_CAP {
            return Err(Error::DOutOfRange { d, lo, hi });
        }
        point = solve_slope(&prob, b, Some(&point.q), opts)?;
        sol_b = finish(&prob, b, &point);
    }
    let mut gb = sol_b.distortion - d;
    if gb.abs() <= tol_abs {
        return Ok(sol_b);
    }
    best = if (best.distortion - d).abs() < gb.abs() {
        best
    } else {
        sol_b.clone()
    };

    // Illinois false position on g(λ) = D(λ) − D
    let mut side = 0i8;
    let mut warm = point.q.clone();
    for _ in 0..300 {
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let pt = solve_slope(&prob, c, Some(&warm), opts)?;
        let sol = finish(&prob, c, &pt);
        warm = pt.q;
        let gc = sol.distortion - d;
        if gc.abs() < (best.distortion - d).abs() {
            best = sol.clone();
        }
        if gc.abs() <= tol_abs {
            return Ok(sol);
        }
        if gc > 0.0 {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
        if b - a <= 1e-15 * b {
            // D(λ) jumps here: the curve is linear between the two sides
            return Ok(best);
        }
    }
    Err(Error::SolverFailure(format!(
        "slope search for D = {d} stalled (closest distortion {})",
        best.distortion
    )))
}

/// `R(q, D)` for any probability vector `q` (zeros allowed). Returns zero at
/// and above `min_x̂ E_q d(X, x̂)`.
pub fn rdf_value(q: &[f64], dist: &DistortionSpec, d: f64) -> Result<f64> {
    rdf_value_with(q, dist, d, &SolverOptions::default())
}

pub fn rdf_value_with(q: &[f64], dist: &DistortionSpec, d: f64, opts: &SolverOptions) -> Result<f64> {
    let prob = Problem::new(q, dist)?;
    if d >= dist.d_trivial(&prob.p_full) {
        return Ok(0.0);
    }
    let sol = rd_at_distortion_with(q, dist, d, opts)?;
    Ok(sol.rate_at(d))
}

/// Memo of `R(q, D)` for one distortion measure, keyed by `q` rounded to
/// 1e-12 and the exact bits of `D`. Safe to share between threads.
pub struct RdfCache {
    dist: DistortionSpec,
    opts: SolverOptions,
    memo: Mutex<HashMap<(Vec<i64>, u64), f64>>,
}

impl RdfCache {
    pub fn new(dist: DistortionSpec) -> Self {
        Self::with_options(dist, SolverOptions::default())
    }

    pub fn with_options(dist: DistortionSpec, opts: SolverOptions) -> Self {
        Self {
            dist,
            opts,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn dist(&self) -> &DistortionSpec {
        &self.dist
    }

    pub fn value(&self, q: &[f64], d: f64) -> Result<f64> {
        let key = (
            q.iter().map(|v| (v * 1e12).round() as i64).collect::<Vec<_>>(),
            d.to_bits(),
        );
        if let Some(v) = self.memo.lock().expect("rdf memo poisoned").get(&key) {
            return Ok(*v);
        }
        let v = rdf_value_with(q, &self.dist, d, &self.opts)?;
        self.memo.lock().expect("rdf memo poisoned").insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.memo.lock().expect("rdf memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
