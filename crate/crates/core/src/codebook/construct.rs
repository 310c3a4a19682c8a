use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;

use super::space::{checked_count, digits, WordSpace};
use super::Codebook;
use crate::blocklength::rate_redundancy_oracle;
use crate::error::{Error, Result};
use crate::rd::{rdf_value_with, SolverOptions};
use crate::source::{DiscreteSource, DistortionSpec};

/// Cap on `Lⁿ` and `Kⁿ` for the greedy and per-type constructions.
pub const MAX_LAB_WORDS: usize = 1 << 16;
/// Cap on `Lⁿ` and `Kⁿ` for the exhaustive search.
pub const MAX_EXHAUSTIVE_WORDS: usize = 20;

const MASS_TOL: f64 = 1e-12;

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::DomainError(format!("eps must lie in [0, 1), got {eps}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// larger gain first, then lower index
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then(other.index.cmp(&self.index))
    }
}

/// Lazy max-coverage greedy. `bounds` are upper bounds on the initial gains;
/// `gain` recomputes a candidate's current gain and `take` commits it,
/// returning whether the target is met. Gains never grow, so a refreshed
/// candidate that still beats every stale bound is the true argmax.
fn lazy_greedy(
    bounds: Vec<f64>,
    mut gain: impl FnMut(usize) -> f64,
    mut take: impl FnMut(usize) -> bool,
) -> Result<Vec<usize>> {
    let mut heap: BinaryHeap<Candidate> = bounds
        .into_iter()
        .enumerate()
        .filter(|&(_, g)| g > 0.0)
        .map(|(index, gain)| Candidate { gain, index })
        .collect();
    let mut chosen = Vec::new();
    while let Some(top) = heap.pop() {
        let fresh = Candidate {
            gain: gain(top.index),
            index: top.index,
        };
        if fresh.gain <= 0.0 {
            continue;
        }
        if heap.peek().is_none_or(|next| fresh >= *next) {
            chosen.push(fresh.index);
            if take(fresh.index) {
                return Ok(chosen);
            }
        } else {
            heap.push(fresh);
        }
    }
    Err(Error::Unreachable)
}

/// Adds the reproduction word covering the most uncovered source mass until
/// the covered probability reaches `1 − eps`. Ties go to the
/// lexicographically smallest word.
pub fn greedy_cover_code(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    n: usize,
    d: f64,
    eps: f64,
) -> Result<Codebook> {
    check_eps(eps)?;
    let ws = WordSpace::new(source, dist, n, d)?;
    let total = checked_count(ws.l, n, MAX_LAB_WORDS)?;
    let cands = checked_count(ws.k, n, MAX_LAB_WORDS)?;
    let bounds: Vec<f64> = (0..cands)
        .into_par_iter()
        .map(|c| ws.ball_mass(&digits(c, ws.k, n)))
        .collect();
    let target = 1.0 - eps - MASS_TOL;
    let covered = RefCell::new(vec![false; total]);
    let mut mass = 0.0;
    let chosen = lazy_greedy(
        bounds,
        |c| {
            let cov = covered.borrow();
            let mut g = 0.0;
            ws.for_each_in_ball(&digits(c, ws.k, n), |i, p| {
                if !cov[i] {
                    g += p;
                }
            });
            g
        },
        |c| {
            let mut cov = covered.borrow_mut();
            ws.for_each_in_ball(&digits(c, ws.k, n), |i, p| {
                if !cov[i] {
                    cov[i] = true;
                    mass += p;
                }
            });
            mass >= target
        },
    )?;
    Codebook::from_indices(n, ws.k, &chosen)
}

/// Minimum-cardinality codebook with covered probability at least `1 − eps`.
/// Among minimum codebooks the one covering the most mass wins, then the
/// lexicographically smallest list of word indices.
pub fn exact_min_code(source: &DiscreteSource, dist: &DistortionSpec, n: usize, d: f64, eps: f64) -> Result<Codebook> {
    check_eps(eps)?;
    let ws = WordSpace::new(source, dist, n, d)?;
    let too_large =
        |what: &str| Error::SearchSpaceTooLarge(format!("{what} words exceed {MAX_EXHAUSTIVE_WORDS} at n = {n}"));
    let total = checked_count(ws.l, n, MAX_EXHAUSTIVE_WORDS).map_err(|_| too_large("source"))?;
    let cands = checked_count(ws.k, n, MAX_EXHAUSTIVE_WORDS).map_err(|_| too_large("reproduction"))?;
    let weights: Vec<f64> = (0..total).map(|i| ws.word_prob(i)).collect();
    let masks: Vec<u32> = (0..cands)
        .map(|c| {
            let mut m = 0u32;
            ws.for_each_in_ball(&digits(c, ws.k, n), |i, _| m |= 1 << i);
            m
        })
        .collect();
    let search = Search {
        weights: &weights,
        masks: &masks,
        target: 1.0 - eps - MASS_TOL,
    };
    for size in 1..=cands {
        let mut state = SearchState {
            stack: Vec::with_capacity(size),
            best: None,
        };
        search.descend(size, 0, 0, &mut state);
        if let Some((_, words)) = state.best {
            return Codebook::from_indices(n, ws.k, &words);
        }
    }
    Err(Error::Unreachable)
}

struct Search<'a> {
    weights: &'a [f64],
    masks: &'a [u32],
    target: f64,
}

struct SearchState {
    stack: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn mass(&self, mask: u32) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, w)| w)
            .sum()
    }

    fn descend(&self, size: usize, start: usize, covered: u32, state: &mut SearchState) {
        let have = self.mass(covered);
        if state.stack.len() == size {
            let improves = state.best.as_ref().is_none_or(|(b, _)| have > b + MASS_TOL);
            if have >= self.target && improves {
                state.best = Some((have, state.stack.clone()));
            }
            return;
        }
        let slots = size - state.stack.len();
        if self.masks.len() - start < slots {
            return;
        }
        // bound: current mass plus the largest marginal gains still available
        let mut gains: Vec<f64> = self.masks[start..].iter().map(|&m| self.mass(m & !covered)).collect();
        gains.sort_by(|a, b| b.total_cmp(a));
        let bound = have + gains[..slots].iter().sum::<f64>();
        if bound < self.target {
            return;
        }
        if let Some((b, _)) = &state.best {
            if bound <= b + MASS_TOL {
                return;
            }
        }
        for c in start..self.masks.len() {
            state.stack.push(c);
            self.descend(size, c + 1, covered | self.masks[c], state);
            state.stack.pop();
        }
    }
}

/// Slack `ΔR` for [`type_union_code`] that leaves type-tail probability
/// `eps − 2L/n²`, so that together with `Pr{P_x ∉ Ω_n} ≤ 2L/n²` the excess
/// probability stays at most `eps`.
pub fn type_union_delta_r(source: &DiscreteSource, dist: &DistortionSpec, n: usize, d: f64, eps: f64) -> Result<f64> {
    let offset = -2.0 * source.len() as f64 / (n as f64 * n as f64);
    Ok(rate_redundancy_oracle(source, dist, d, eps, n, offset)?.delta_r)
}

/// Union over the types `q` with `R(q, D) ≤ R(p, D) + delta_r` and
/// `‖q − p‖² ≤ L ln n / n` of greedy codebooks that cover each type class
/// completely. Codewords already in the union count toward later classes.
pub fn type_union_code(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    n: usize,
    d: f64,
    delta_r: f64,
) -> Result<Codebook> {
    let ws = WordSpace::new(source, dist, n, d)?;
    let total = checked_count(ws.l, n, MAX_LAB_WORDS)?;
    let cands = checked_count(ws.k, n, MAX_LAB_WORDS)?;
    let p = source.probs();

    let mut classes: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    let word_counts: Vec<Vec<u32>> = (0..total)
        .map(|i| {
            let mut c = vec![0u32; ws.l];
            for s in digits(i, ws.l, n) {
                c[s] += 1;
            }
            c
        })
        .collect();
    for c in &word_counts {
        classes.entry(c.clone()).or_insert(0);
    }
    for (id, v) in classes.values_mut().enumerate() {
        *v = id as u32;
    }
    let class_of: Vec<u32> = word_counts.iter().map(|c| classes[c]).collect();
    let n_classes = classes.len();
    let mut class_size = vec![0usize; n_classes];
    for &c in &class_of {
        class_size[c as usize] += 1;
    }

    let opts = SolverOptions {
        gap_tol: 1e-11,
        d_rel_tol: 1e-10,
        ..SolverOptions::default()
    };
    // an infinite slack admits every type, and avoids the RDF where it is
    // undefined (D at the minimum distortion)
    let rp = if delta_r.is_finite() {
        rdf_value_with(p, dist, d, &opts)?
    } else {
        0.0
    };
    let radius = ws.l as f64 * (n as f64).ln() / n as f64;
    let members: Vec<(usize, bool)> = classes
        .iter()
        .map(|(counts, &id)| {
            let q: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
            let dist2: f64 = q.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            if dist2 > radius {
                return Ok((id as usize, false));
            }
            if !delta_r.is_finite() {
                return Ok((id as usize, true));
            }
            let r = rdf_value_with(&q, dist, d, &opts)?;
            Ok((id as usize, r - rp <= delta_r + 1e-9))
        })
        .collect::<Result<_>>()?;

    // per-candidate count of ball members in each class
    let ball_counts: Vec<Vec<u32>> = (0..cands)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u32; n_classes];
            ws.for_each_in_ball(&digits(c, ws.k, n), |i, _| counts[class_of[i] as usize] += 1);
            counts
        })
        .collect();

    let covered = RefCell::new(vec![false; total]);
    let mut chosen = Vec::new();
    for (class, inside) in members {
        if !inside {
            continue;
        }
        let mut left = class_size[class]
            - (0..total)
                .filter(|&i| class_of[i] as usize == class && covered.borrow()[i])
                .count();
        if left == 0 {
            continue;
        }
        let bounds: Vec<f64> = ball_counts.iter().map(|c| c[class] as f64).collect();
        let picked = lazy_greedy(
            bounds,
            |c| {
                let cov = covered.borrow();
                let mut g = 0usize;
                ws.for_each_in_ball(&digits(c, ws.k, n), |i, _| {
                    if class_of[i] as usize == class && !cov[i] {
                        g += 1;
                    }
                });
                g as f64
            },
            |c| {
                let mut cov = covered.borrow_mut();
                ws.for_each_in_ball(&digits(c, ws.k, n), |i, _| {
                    if !cov[i] {
                        cov[i] = true;
                        if class_of[i] as usize == class {
                            left -= 1;
                        }
                    }
                });
                left == 0
            },
        )?;
        chosen.extend(picked);
    }
    if chosen.is_empty() {
        // nothing to cover; any single word is a valid codebook
        let best = (0..cands)
            .map(|c| Candidate {
                gain: ws.ball_mass(&digits(c, ws.k, n)),
                index: c,
            })
            .max()
            .map_or(0, |c| c.index);
        chosen.push(best);
    }
    Codebook::from_indices(n, ws.k, &chosen)
}

#[cfg(test)]
mod tests {
    use super::super::converse::converse_rate_bound;
    use super::super::coverage::{coverage, CoverageMode};
    use super::*;

    fn binary(p0: f64) -> (DiscreteSource, DistortionSpec) {
        (
            DiscreteSource::new(&[p0, 1.0 - p0]).unwrap(),
            DistortionSpec::hamming(2).unwrap(),
        )
    }

    #[test]
    fn exact_small_instance() {
        let (s, h) = binary(0.2);
        let c = exact_min_code(&s, &h, 2, 0.0, 0.05).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.words(), &[vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn exact_loose_target_picks_best_single_word() {
        let (s, h) = binary(0.2);
        let c = exact_min_code(&s, &h, 2, 0.0, 0.99).unwrap();
        assert_eq!(c.words(), &[vec![1, 1]]);
        let g = greedy_cover_code(&s, &h, 2, 0.0, 0.99).unwrap();
        assert_eq!(g.words(), &[vec![1, 1]]);
    }

    #[test]
    fn greedy_respects_ball_counting() {
        let (s, h) = binary(0.5);
        let c = greedy_cover_code(&s, &h, 4, 0.25, 0.0).unwrap();
        assert!(c.len() >= 4);
        let cov = coverage(&s, &h, &c, 0.25, CoverageMode::Exact).unwrap();
        assert!((cov.covered_probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_tie_break_is_lexicographic() {
        let (s, h) = binary(0.5);
        let c = greedy_cover_code(&s, &h, 3, 1.0 / 3.0, 0.5).unwrap();
        assert_eq!(c.words(), &[vec![0, 0, 0]]);
    }

    #[test]
    fn exhaustive_cap() {
        let (s, h) = binary(0.3);
        assert!(matches!(
            exact_min_code(&s, &h, 5, 0.2, 0.1),
            Err(Error::SearchSpaceTooLarge(_))
        ));
        assert!(matches!(
            greedy_cover_code(&s, &h, 17, 0.2, 0.1),
            Err(Error::EnumerationTooLarge(_))
        ));
    }

    #[test]
    fn ordering_on_tiny_instances() {
        for p0 in [0.5, 0.4, 0.25] {
            let (s, h) = binary(p0);
            for n in 1..=4 {
                for d in [0.0, 0.25, 0.5] {
                    for eps in [0.0, 0.1, 0.3] {
                        let lo = converse_rate_bound(&s, &h, n, d, eps).unwrap();
                        let ex = exact_min_code(&s, &h, n, d, eps).unwrap();
                        let gr = greedy_cover_code(&s, &h, n, d, eps).unwrap();
                        assert!(lo <= ex.rate() + 1e-12, "{p0} {n} {d} {eps}");
                        assert!(ex.len() <= gr.len(), "{p0} {n} {d} {eps}");
                        for c in [&ex, &gr] {
                            let cov = coverage(&s, &h, c, d, CoverageMode::Exact).unwrap();
                            assert!(cov.covered_probability >= 1.0 - eps - 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn type_union_covers_every_type_in_neighbourhood() {
        let (s, h) = binary(0.4);
        let n = 8;
        let c = type_union_code(&s, &h, n, 0.25, 10.0).unwrap();
        let cov = coverage(&s, &h, &c, 0.25, CoverageMode::Exact).unwrap();
        let l2 = crate::blocklength::lemma2_check(&s, n).unwrap();
        // balls built for one class may spill into classes outside the set
        assert!(cov.excess_probability() <= l2.lhs + 1e-12);
        assert!(l2.lhs <= 2.0 * 2.0 / 64.0);
    }

    #[test]
    fn type_union_zero_slack_is_about_half() {
        let (s, h) = binary(0.3);
        let n = 12;
        let d = 0.1;
        let c = type_union_code(&s, &h, n, d, 0.0).unwrap();
        let cov = coverage(&s, &h, &c, d, CoverageMode::Exact).unwrap();
        let gaps = crate::blocklength::type_rate_gaps(&s, &h, d, n).unwrap();
        let tail: f64 = gaps.iter().filter(|g| g.0 > 1e-9).map(|g| g.1).sum();
        let outside = crate::blocklength::lemma2_check(&s, n).unwrap().lhs;
        assert!(cov.excess_probability() <= tail + outside + 1e-12);
        assert!(
            cov.excess_probability() > 0.2 && cov.excess_probability() < 0.8,
            "{cov:?} {tail}"
        );
    }
}
