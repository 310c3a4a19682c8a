//! Method-of-types bookkeeping: enumeration of all types of length-`n`
//! sequences together with exact type-class probabilities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::source::DiscreteSource;

/// Default cap on the number of types an atlas may hold.
pub const DEFAULT_ATLAS_CAP: f64 = 2.0e6;

/// One type `q ∈ 𝒯_n`, stored as integer letter counts summing to `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeEntry {
    pub counts: Vec<u32>,
    /// `ln Pr{P_x = q}` under the generating source.
    pub log_prob: f64,
}

impl TypeEntry {
    /// Relative frequencies `counts / n`.
    pub fn freqs(&self, n: usize) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }
}

/// Every type of blocklength `n` with its type-class probability.
#[derive(Debug, Clone, Serialize)]
pub struct TypeAtlas {
    pub n: usize,
    pub entries: Vec<TypeEntry>,
}

impl TypeAtlas {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total probability, summed in enumeration order.
    pub fn total_prob(&self) -> f64 {
        self.entries.iter().map(TypeEntry::prob).sum()
    }
}

/// `C(n + L − 1, L − 1)`, the number of types, as a float (may be huge).
pub fn type_count(n: usize, l: usize) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let mut c = 1.0f64;
    for i in 1..l {
        c = c * (n + i) as f64 / i as f64;
    }
    c.round()
}

/// `ln k!` for `k = 0..=n`, accumulated with compensated summation.
pub fn ln_factorial_table(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    table.push(0.0);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for k in 1..=n {
        let y = (k as f64).ln() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        table.push(sum);
    }
    table
}

/// Enumerates all types of length `n` for `source` using the default cap.
pub fn enumerate_types(n: usize, source: &DiscreteSource) -> Result<TypeAtlas> {
    enumerate_types_capped(n, source, DEFAULT_ATLAS_CAP)
}

pub fn enumerate_types_capped(n: usize, source: &DiscreteSource, cap: f64) -> Result<TypeAtlas> {
    if n == 0 {
        return Err(Error::DomainError("blocklength must be at least 1".into()));
    }
    let l = source.len();
    let count = type_count(n, l);
    if count > cap {
        return Err(Error::AtlasTooLarge { count, cap });
    }
    let lnf = ln_factorial_table(n);
    let lnp: Vec<f64> = source.probs().iter().map(|p| p.ln()).collect();
    let mut entries = Vec::with_capacity(count as usize);
    let mut counts = vec![0u32; l];
    visit_compositions(n, 0, &mut counts, &mut |c| {
        let mut lp = lnf[n];
        for (i, &ci) in c.iter().enumerate() {
            lp -= lnf[ci as usize];
            if ci > 0 {
                lp += ci as f64 * lnp[i];
            }
        }
        entries.push(TypeEntry {
            counts: c.to_vec(),
            log_prob: lp,
        });
    });
    Ok(TypeAtlas { n, entries })
}

/// Calls `f` for every composition of `remaining` into the slots from `pos`
/// onward, in lexicographic order of the count vector.
fn visit_compositions(remaining: usize, pos: usize, counts: &mut [u32], f: &mut impl FnMut(&[u32])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining as u32;
        f(counts);
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c as u32;
        visit_compositions(remaining - c, pos + 1, counts, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_n2() {
        let s = DiscreteSource::uniform(2).unwrap();
        let atlas = enumerate_types(2, &s).unwrap();
        let freqs: Vec<Vec<f64>> = atlas.entries.iter().map(|e| e.freqs(2)).collect();
        assert_eq!(freqs, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
        let probs: Vec<f64> = atlas.entries.iter().map(|e| e.prob()).collect();
        assert_abs_diff_eq!(probs[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[2], 0.25, epsilon = 1e-15);
    }

    /// Binomial pmf by the multiplicative recurrence from the mode.
    fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
        let mode = ((n + 1) as f64 * p).floor() as usize;
        let mut pmf = vec![0.0; n + 1];
        pmf[mode] = 1.0;
        for k in mode..n {
            pmf[k + 1] = pmf[k] * (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        }
        for k in (1..=mode).rev() {
            pmf[k - 1] = pmf[k] * k as f64 / (n - k + 1) as f64 * (1.0 - p) / p;
        }
        let s: f64 = pmf.iter().sum();
        pmf.iter().map(|v| v / s).collect()
    }

    #[test]
    fn binary_matches_binomial() {
        for &(n, p) in &[(1usize, 0.3), (17, 0.2), (60, 0.5), (200, 0.35)] {
            let s = DiscreteSource::new(&[p, 1.0 - p]).unwrap();
            let atlas = enumerate_types(n, &s).unwrap();
            let oracle = binomial_pmf(n, p);
            for e in &atlas.entries {
                let k = e.counts[0] as usize;
                let rel = (e.prob() - oracle[k]).abs() / oracle[k];
                assert!(rel < 1e-12, "n={n} k={k} rel={rel:e}");
            }
        }
    }

    #[test]
    fn large_binary_atlas_is_normalized() {
        let s = DiscreteSource::new(&[0.2, 0.8]).unwrap();
        let atlas = enumerate_types(1000, &s).unwrap();
        assert_eq!(atlas.len(), 1001);
        assert_abs_diff_eq!(atlas.total_prob(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ternary_and_quaternary_normalized() {
        let s = DiscreteSource::new(&[0.5, 0.3, 0.2]).unwrap();
        let atlas = enumerate_types(120, &s).unwrap();
        assert_eq!(atlas.len() as f64, type_count(120, 3));
        assert_abs_diff_eq!(atlas.total_prob(), 1.0, epsilon = 1e-9);
        let s = DiscreteSource::new(&[0.4, 0.3, 0.2, 0.1]).unwrap();
        let atlas = enumerate_types(40, &s).unwrap();
        assert_eq!(atlas.len(), 12341);
        assert_abs_diff_eq!(atlas.total_prob(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn cap_is_enforced() {
        let s = DiscreteSource::uniform(4).unwrap();
        assert!(matches!(
            enumerate_types_capped(100, &s, 1e4),
            Err(Error::AtlasTooLarge { .. })
        ));
        assert!(enumerate_types(0, &s).is_err());
    }
}
