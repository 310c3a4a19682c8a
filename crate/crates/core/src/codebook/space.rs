//! Enumeration of length-`n` words and distortion balls.
//!
//! A word over an alphabet of size `A` is indexed in base `A` with the first
//! symbol most significant, so index order is lexicographic order.

use std::ops::Add;

use crate::error::{Error, Result};
use crate::source::{DiscreteSource, DistortionSpec};

/// `base^n` if it fits under `cap`.
pub(crate) fn checked_count(base: usize, n: usize, cap: usize) -> Result<usize> {
    let mut count: usize = 1;
    for _ in 0..n {
        count = match count.checked_mul(base) {
            Some(c) if c <= cap => c,
            _ => return Err(Error::EnumerationTooLarge((base as f64).powi(n as i32))),
        };
    }
    Ok(count)
}

pub(crate) fn digits(mut index: usize, base: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for slot in out.iter_mut().rev() {
        *slot = index % base;
        index /= base;
    }
    out
}

trait Cost: Copy + PartialOrd + Add<Output = Self> {
    const ZERO: Self;
}

impl Cost for i64 {
    const ZERO: Self = 0;
}

impl Cost for f64 {
    const ZERO: Self = 0.0;
}

#[derive(Debug, Clone)]
enum Costs {
    Int { matrix: Vec<i64>, threshold: i64 },
    Real { matrix: Vec<f64>, threshold: f64 },
}

/// Source and reproduction word spaces at blocklength `n` with the
/// threshold `Σ d(x_i, x̂_i) ≤ nD`. Integral matrices are compared in
/// integer arithmetic.
#[derive(Debug, Clone)]
pub(crate) struct WordSpace {
    pub n: usize,
    pub l: usize,
    pub k: usize,
    probs: Vec<f64>,
    costs: Costs,
}

impl WordSpace {
    pub fn new(source: &DiscreteSource, dist: &DistortionSpec, n: usize, d: f64) -> Result<Self> {
        dist.check_source(source.len())?;
        if n == 0 {
            return Err(Error::DomainError("blocklength must be at least 1".into()));
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::DomainError(format!(
                "distortion must be finite and nonnegative, got {d}"
            )));
        }
        let budget = n as f64 * d;
        let rows = dist.to_rows();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let costs = if dist.is_integral() {
            Costs::Int {
                matrix: flat.iter().map(|&v| v as i64).collect(),
                threshold: (budget + 1e-9).floor().min(i64::MAX as f64 / 4.0) as i64,
            }
        } else {
            Costs::Real {
                matrix: flat,
                threshold: budget + 1e-9 * budget.max(1.0),
            }
        };
        Ok(Self {
            n,
            l: source.len(),
            k: dist.cols(),
            probs: source.probs().to_vec(),
            costs,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Calls `f(index, probability)` for every source word within the
    /// threshold of the reproduction word `word`.
    pub fn for_each_in_ball(&self, word: &[usize], mut f: impl FnMut(usize, f64)) {
        match &self.costs {
            Costs::Int { matrix, threshold } => self.ball(matrix, *threshold, word, &mut f),
            Costs::Real { matrix, threshold } => self.ball(matrix, *threshold, word, &mut f),
        }
    }

    pub fn ball_mass(&self, word: &[usize]) -> f64 {
        let mut mass = 0.0;
        self.for_each_in_ball(word, |_, p| mass += p);
        mass
    }

    /// Whether the source word `x` is within the threshold of `word`.
    pub fn within(&self, x: &[usize], word: &[usize]) -> bool {
        match &self.costs {
            Costs::Int { matrix, threshold } => self.within_generic(matrix, *threshold, x, word),
            Costs::Real { matrix, threshold } => self.within_generic(matrix, *threshold, x, word),
        }
    }

    fn within_generic<C: Cost>(&self, matrix: &[C], threshold: C, x: &[usize], word: &[usize]) -> bool {
        let mut acc = C::ZERO;
        for (&a, &b) in x.iter().zip(word) {
            acc = acc + matrix[a * self.k + b];
            if acc > threshold {
                return false;
            }
        }
        true
    }

    fn ball<C: Cost>(&self, matrix: &[C], threshold: C, word: &[usize], f: &mut impl FnMut(usize, f64)) {
        // suffix[i] is the least cost the positions i.. can still add
        let mut suffix = vec![C::ZERO; self.n + 1];
        for i in (0..self.n).rev() {
            let mut best = matrix[word[i]];
            for x in 1..self.l {
                let c = matrix[x * self.k + word[i]];
                if c < best {
                    best = c;
                }
            }
            suffix[i] = suffix[i + 1] + best;
        }
        if suffix[0] > threshold {
            return;
        }
        self.descend(matrix, threshold, word, &suffix, 0, C::ZERO, 0, 1.0, f);
    }

    #[allow(clippy::too_many_arguments)]
    fn descend<C: Cost>(
        &self,
        matrix: &[C],
        threshold: C,
        word: &[usize],
        suffix: &[C],
        pos: usize,
        acc: C,
        index: usize,
        prob: f64,
        f: &mut impl FnMut(usize, f64),
    ) {
        if pos == self.n {
            f(index, prob);
            return;
        }
        for x in 0..self.l {
            let c = acc + matrix[x * self.k + word[pos]];
            if c + suffix[pos + 1] <= threshold {
                self.descend(
                    matrix,
                    threshold,
                    word,
                    suffix,
                    pos + 1,
                    c,
                    index * self.l + x,
                    prob * self.probs[x],
                    f,
                );
            }
        }
    }

    /// Probability of the source word with the given index.
    pub fn word_prob(&self, mut index: usize) -> f64 {
        let mut prob = 1.0;
        for _ in 0..self.n {
            prob *= self.probs[index % self.l];
            index /= self.l;
        }
        prob
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_most_significant_first() {
        let w = digits(11, 3, 4);
        assert_eq!(w, vec![0, 1, 0, 2]);
    }

    #[test]
    fn count_cap() {
        assert_eq!(checked_count(2, 10, 1 << 16).unwrap(), 1024);
        assert!(matches!(
            checked_count(2, 17, 1 << 16),
            Err(Error::EnumerationTooLarge(_))
        ));
    }

    #[test]
    fn hamming_ball_sizes() {
        let s = DiscreteSource::uniform(2).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        let ws = WordSpace::new(&s, &h, 8, 0.25).unwrap();
        let mut count = 0;
        ws.for_each_in_ball(&[1, 0, 1, 1, 0, 0, 1, 0], |_, _| count += 1);
        assert_eq!(count, 1 + 8 + 28);
        assert!((ws.ball_mass(&[0; 8]) - 37.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn ball_agrees_with_direct_check() {
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let d = DistortionSpec::general(&[vec![0.0, 0.7], vec![0.4, 0.1], vec![1.3, 0.0]]).unwrap();
        let ws = WordSpace::new(&s, &d, 5, 0.3).unwrap();
        let word = [1, 0, 0, 1, 1];
        let mut listed = Vec::new();
        ws.for_each_in_ball(&word, |i, p| {
            assert!((p - ws.word_prob(i)).abs() < 1e-15);
            listed.push(i);
        });
        let direct: Vec<usize> = (0..243).filter(|&i| ws.within(&digits(i, 3, 5), &word)).collect();
        assert_eq!(listed, direct);
    }
}
