//! Excess-distortion exponent
//!
//! ```text
//! F(R, p, D) = min { D(q‖p) : R(q, D) ≥ R }
//! ```
//!
//! The feasible set need not be convex, so the minimum is anchored by a
//! brute-force grid over the simplex and then refined locally.
//!
//! Refinement works on rays out of `p`. Every point strictly between `p`
//! and a minimizer `q*` is infeasible (the divergence is convex and zero at
//! `p`), so `q*` is the first point where the ray through it meets the
//! constraint surface. The search variable is the ray direction `u`; the
//! objective is the divergence at that first crossing. Directions are
//! improved by pairwise transfers `u ± τ(e_i − e_j)`, which keep `u` a
//! tangent vector of the simplex, with `τ` halved until it drops below the
//! step tolerance.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::brent;
use crate::rd::{rdf_value_with, SolverOptions};
use crate::source::{divergence_vec, DiscreteSource, DistortionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    LocalRefined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentSolution {
    /// `F(R, p, D)` in nats.
    pub value: f64,
    /// The minimizing distribution `q*`. May sit on the simplex boundary.
    pub minimizer: Vec<f64>,
    pub method: Method,
    /// False when `R ≤ R(p, D)` and `p` itself is feasible.
    pub constraint_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentOptions {
    /// Grid points per simplex dimension.
    pub resolution: usize,
    /// Largest alphabet the grid phase accepts.
    pub max_alphabet: usize,
    /// Refinement stops when the transfer size falls below this.
    pub step_tol: f64,
    /// Cap on the number of grid points.
    pub max_grid_points: usize,
}

impl Default for ExponentOptions {
    fn default() -> Self {
        Self {
            resolution: 200,
            max_alphabet: 4,
            step_tol: 1e-7,
            max_grid_points: 2_000_000,
        }
    }
}

fn tight_solver() -> SolverOptions {
    SolverOptions {
        gap_tol: 1e-12,
        d_rel_tol: 1e-11,
        ..SolverOptions::default()
    }
}

/// A grid distribution and its `R(q, D)`.
type GridPoint = (Vec<f64>, f64);

/// Exponent queries for one `(p, dist, D)`, sharing the grid of
/// `R(q, D)` values across rates.
pub struct ExponentSolver {
    p: Vec<f64>,
    dist: DistortionSpec,
    d: f64,
    opts: ExponentOptions,
    solver: SolverOptions,
    rdf_p: f64,
    grid: OnceLock<Result<Vec<GridPoint>>>,
}

impl ExponentSolver {
    pub fn new(source: &DiscreteSource, dist: &DistortionSpec, d: f64, opts: ExponentOptions) -> Result<Self> {
        dist.check_source(source.len())?;
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::DomainError(format!(
                "distortion level must be finite and nonnegative, got {d}"
            )));
        }
        if source.len() > opts.max_alphabet {
            return Err(Error::GridCapExceeded(format!(
                "alphabet size {} exceeds the grid limit {}",
                source.len(),
                opts.max_alphabet
            )));
        }
        let points = crate::types::type_count(opts.resolution, source.len());
        if opts.resolution == 0 || points > opts.max_grid_points as f64 {
            return Err(Error::GridCapExceeded(format!(
                "resolution {} gives {points} grid points",
                opts.resolution
            )));
        }
        let solver = tight_solver();
        let rdf_p = rdf_value_with(source.probs(), dist, d, &solver)?;
        Ok(Self {
            p: source.probs().to_vec(),
            dist: dist.clone(),
            d,
            opts,
            solver,
            rdf_p,
            grid: OnceLock::new(),
        })
    }

    /// `R(p, D)` of the generating source.
    pub fn rdf_at_source(&self) -> f64 {
        self.rdf_p
    }

    fn rdf(&self, q: &[f64]) -> Result<f64> {
        rdf_value_with(q, &self.dist, self.d, &self.solver)
    }

    fn grid(&self) -> Result<&[(Vec<f64>, f64)]> {
        let grid = self.grid.get_or_init(|| {
            let l = self.p.len();
            let res = self.opts.resolution;
            let mut points = Vec::new();
            let mut counts = vec![0usize; l];
            simplex_points(res, 0, &mut counts, &mut |c| {
                points.push(c.iter().map(|&k| k as f64 / res as f64).collect::<Vec<f64>>());
            });
            // the uniform distribution maximizes R for symmetric measures
            points.push(vec![1.0 / l as f64; l]);
            points
                .into_par_iter()
                .map(|q| self.rdf(&q).map(|r| (q, r)))
                .collect::<Result<Vec<_>>>()
        });
        grid.as_ref().map(|g| g.as_slice()).map_err(Clone::clone)
    }

    /// Largest `R(q, D)` seen on the grid.
    pub fn grid_max_rate(&self) -> Result<f64> {
        Ok(self.grid()?.iter().map(|g| g.1).fold(0.0, f64::max))
    }

    pub fn solve(&self, r: f64) -> Result<ExponentSolution> {
        self.solve_warm(r, None)
    }

    /// Solves at rate `r`, also trying the ray direction of `warm` (a
    /// previous minimizer) as a starting point.
    pub fn solve_warm(&self, r: f64, warm: Option<&[f64]>) -> Result<ExponentSolution> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::DomainError(format!(
                "rate must be finite and nonnegative, got {r}"
            )));
        }
        if r <= self.rdf_p {
            return Ok(ExponentSolution {
                value: 0.0,
                minimizer: self.p.clone(),
                method: Method::Grid,
                constraint_active: false,
            });
        }
        let grid = self.grid()?;
        let best = grid
            .iter()
            .filter(|(_, rq)| *rq >= r)
            .map(|(q, _)| (q, divergence_vec(q, &self.p).unwrap_or(f64::INFINITY)))
            .fold(None::<(&Vec<f64>, f64)>, |acc, (q, v)| match acc {
                Some((_, bv)) if bv <= v => acc,
                _ => Some((q, v)),
            });
        let Some((grid_q, grid_val)) = best else {
            return Err(Error::Infeasible { rate: r });
        };
        let mut start = direction(&self.p, grid_q);
        let mut start_val = self.ray_objective(&start, r)?.map_or(f64::INFINITY, |(v, _)| v);
        if let Some(w) = warm {
            if w.len() == self.p.len() {
                let u = direction(&self.p, w);
                if u.iter().any(|v| *v != 0.0) {
                    if let Some((v, _)) = self.ray_objective(&u, r)? {
                        if v < start_val {
                            start = u;
                            start_val = v;
                        }
                    }
                }
            }
        }
        if !start_val.is_finite() {
            return Ok(ExponentSolution {
                value: grid_val,
                minimizer: grid_q.clone(),
                method: Method::Grid,
                constraint_active: true,
            });
        }
        let (u, _) = self.pattern_search(start, start_val, r)?;
        match self.ray_objective(&u, r)? {
            Some((value, q)) if value <= grid_val => Ok(ExponentSolution {
                value,
                minimizer: q,
                method: Method::LocalRefined,
                constraint_active: true,
            }),
            _ => Ok(ExponentSolution {
                value: grid_val,
                minimizer: grid_q.clone(),
                method: Method::Grid,
                constraint_active: true,
            }),
        }
    }

    fn pattern_search(&self, mut u: Vec<f64>, mut best: f64, r: f64) -> Result<(Vec<f64>, f64)> {
        let l = u.len();
        if l == 2 {
            // only two rays exist; the start is already the better feasible one
            let flipped: Vec<f64> = u.iter().map(|v| -v).collect();
            if let Some((v, _)) = self.ray_objective(&flipped, r)? {
                if v < best {
                    return Ok((flipped, v));
                }
            }
            return Ok((u, best));
        }
        let mut tau = 0.1;
        while tau >= self.opts.step_tol {
            let mut improved = false;
            for i in 0..l {
                for j in 0..l {
                    if i == j {
                        continue;
                    }
                    let mut cand = u.clone();
                    cand[i] += tau;
                    cand[j] -= tau;
                    normalize(&mut cand);
                    if let Some((v, _)) = self.ray_objective(&cand, r)? {
                        if v < best {
                            best = v;
                            u = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                tau *= 0.5;
            }
        }
        Ok((u, best))
    }

    /// Divergence at the first point along `p + s u` with `R ≥ r`, or `None`
    /// if the ray leaves the simplex first.
    fn ray_objective(&self, u: &[f64], r: f64) -> Result<Option<(f64, Vec<f64>)>> {
        let s_max = self
            .p
            .iter()
            .zip(u)
            .filter(|(_, ui)| **ui < 0.0)
            .map(|(pi, ui)| pi / -ui)
            .fold(f64::INFINITY, f64::min);
        if !s_max.is_finite() {
            return Ok(None);
        }
        let point = |s: f64| -> Vec<f64> {
            let mut q: Vec<f64> = self.p.iter().zip(u).map(|(pi, ui)| (pi + s * ui).max(0.0)).collect();
            let sum: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= sum);
            q
        };
        let h = |s: f64| -> Result<f64> { Ok(self.rdf(&point(s))? - r) };
        const SCAN: usize = 16;
        let mut lo = (0.0, self.rdf_p - r);
        let mut bracket = None;
        for k in 1..=SCAN {
            let s = s_max * k as f64 / SCAN as f64;
            let v = h(s)?;
            if v >= 0.0 {
                bracket = Some((lo, (s, v)));
                break;
            }
            lo = (s, v);
        }
        let Some(((a, fa), (b, fb))) = bracket else {
            return Ok(None);
        };
        let (_, s) = brent(h, a, b, fa, fb, 1e-15 * s_max, 200)?;
        let q = point(s);
        let value = divergence_vec(&q, &self.p)?;
        Ok(Some((value, q)))
    }
}

fn direction(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    normalize(&mut u);
    u
}

fn normalize(u: &mut [f64]) {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        u.iter_mut().for_each(|v| *v /= norm);
    }
}

fn simplex_points(remaining: usize, pos: usize, counts: &mut [usize], f: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        f(counts);
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c;
        simplex_points(remaining - c, pos + 1, counts, f);
    }
}

/// `F(R, p, D)` with a grid of the given resolution followed by local
/// refinement.
pub fn exponent(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    r: f64,
    resolution: usize,
) -> Result<ExponentSolution> {
    let opts = ExponentOptions {
        resolution,
        ..ExponentOptions::default()
    };
    ExponentSolver::new(source, dist, d, opts)?.solve(r)
}

/// Exponents along an ascending rate grid. Each point warm-starts from the
/// previous minimizer; a failing point does not stop the sweep.
pub fn exponent_curve(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    d: f64,
    r_grid: &[f64],
    opts: ExponentOptions,
) -> Result<Vec<Result<ExponentSolution>>> {
    if r_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::DomainError("rate grid must be sorted ascending".into()));
    }
    let solver = ExponentSolver::new(source, dist, d, opts)?;
    let mut out = Vec::with_capacity(r_grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &r in r_grid {
        let res = solver.solve_warm(r, warm.as_deref());
        if let Ok(sol) = &res {
            if sol.constraint_active {
                warm = Some(sol.minimizer.clone());
            }
        }
        out.push(res);
    }
    Ok(out)
}
