//! Real fixed-rate codes at tiny blocklengths.
//!
//! A source word `x` is covered by a codebook when some codeword `x̂`
//! satisfies `d(x, x̂) ≤ D` in per-letter average. The lab builds codes
//! (greedy covering, exhaustive optimum, per-type covering), measures their
//! covered probability exactly or by Monte Carlo, and bounds the optimal
//! rate from below by ball counting.

mod construct;
mod converse;
mod coverage;
mod space;

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use construct::{
    exact_min_code, greedy_cover_code, type_union_code, type_union_delta_r, MAX_EXHAUSTIVE_WORDS, MAX_LAB_WORDS,
};
pub use converse::{converse_rate_bound, max_ball_mass};
pub use coverage::{coverage, CoverageMethod, CoverageMode, CoverageResult, DEFAULT_MC_SAMPLES, MAX_EXACT_WORDS};

/// A set of distinct length-`n` words over a reproduction alphabet of size
/// `k`, stored as symbol indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    n: usize,
    k: usize,
    words: Vec<Vec<usize>>,
}

impl Codebook {
    pub fn new(n: usize, k: usize, words: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::DomainError(
                "blocklength and alphabet size must be positive".into(),
            ));
        }
        if words.is_empty() {
            return Err(Error::DomainError("codebook needs at least one word".into()));
        }
        let mut seen = HashSet::new();
        for w in &words {
            if w.len() != n {
                return Err(Error::DimensionMismatch(w.len(), n));
            }
            if let Some(&s) = w.iter().find(|&&s| s >= k) {
                return Err(Error::DomainError(format!("symbol {s} outside alphabet of size {k}")));
            }
            if !seen.insert(w.as_slice()) {
                return Err(Error::DomainError(format!("duplicate codeword {w:?}")));
            }
        }
        Ok(Self { n, k, words })
    }

    pub(crate) fn from_indices(n: usize, k: usize, indices: &[usize]) -> Result<Self> {
        Self::new(n, k, indices.iter().map(|&i| space::digits(i, k, n)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet_size(&self) -> usize {
        self.k
    }

    pub fn words(&self) -> &[Vec<usize>] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `(1/n) ln |C|` in nats.
    pub fn rate(&self) -> f64 {
        (self.words.len() as f64).ln() / self.n as f64
    }

    /// Header line `n=<n> K=<K>`, then one word per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={} K={}\n", self.n, self.k);
        for w in &self.words {
            let line: Vec<String> = w.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::DomainError(format!("codebook text: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let (mut n, mut k) = (None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("K", v)) => k = v.parse::<usize>().ok(),
                _ => return Err(bad(&format!("unexpected header field {field:?}"))),
            }
        }
        let (n, k) = (n.ok_or_else(|| bad("missing n"))?, k.ok_or_else(|| bad("missing K"))?);
        let words = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|s| s.parse::<usize>().map_err(|_| bad(&format!("bad symbol {s:?}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, k, words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let c = Codebook::new(3, 2, vec![vec![0, 0, 0], vec![1, 1, 0]]).unwrap();
        let text = c.to_text();
        assert_eq!(text, "n=3 K=2\n0 0 0\n1 1 0\n");
        assert_eq!(Codebook::from_text(&text).unwrap(), c);
        assert!((c.rate() - 2f64.ln() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_codebooks() {
        assert!(Codebook::new(2, 2, vec![]).is_err());
        assert!(Codebook::new(2, 2, vec![vec![0, 1], vec![0, 1]]).is_err());
        assert!(Codebook::new(2, 2, vec![vec![0, 2]]).is_err());
        assert!(Codebook::new(2, 2, vec![vec![0]]).is_err());
        assert!(Codebook::from_text("n=2\n0 1\n").is_err());
        assert!(Codebook::from_text("n=2 K=2\n0 x\n").is_err());
    }
}
