use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::space::{checked_count, WordSpace};
use super::Codebook;
use crate::error::{Error, Result};
use crate::source::{DiscreteSource, DistortionSpec};

/// Cap on `Lⁿ` for exact enumeration.
pub const MAX_EXACT_WORDS: usize = 1 << 24;
pub const DEFAULT_MC_SAMPLES: u64 = 1_000_000;

/// Samples drawn from one generator stream.
const MC_CHUNK: u64 = 1 << 14;
const SUM_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMethod {
    ExactEnumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageResult {
    pub covered_probability: f64,
    pub method: CoverageMethod,
    pub mc_stderr: Option<f64>,
    pub seed: Option<u64>,
}

impl CoverageResult {
    pub fn excess_probability(&self) -> f64 {
        1.0 - self.covered_probability
    }
}

/// Probability that an i.i.d. source word is within distortion `d` of some
/// codeword.
pub fn coverage(
    source: &DiscreteSource,
    dist: &DistortionSpec,
    codebook: &Codebook,
    d: f64,
    mode: CoverageMode,
) -> Result<CoverageResult> {
    if codebook.alphabet_size() != dist.cols() {
        return Err(Error::DimensionMismatch(codebook.alphabet_size(), dist.cols()));
    }
    let ws = WordSpace::new(source, dist, codebook.n(), d)?;
    match mode {
        CoverageMode::Exact => exact(&ws, codebook),
        CoverageMode::MonteCarlo { samples, seed } => monte_carlo(&ws, codebook, samples, seed),
    }
}

fn exact(ws: &WordSpace, codebook: &Codebook) -> Result<CoverageResult> {
    let total = checked_count(ws.l, ws.n, MAX_EXACT_WORDS)?;
    let mut covered = vec![false; total];
    for w in codebook.words() {
        ws.for_each_in_ball(w, |i, _| covered[i] = true);
    }
    let partial: Vec<f64> = covered
        .par_chunks(SUM_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let base = c * SUM_CHUNK;
            chunk
                .iter()
                .enumerate()
                .filter(|(_, &hit)| hit)
                .map(|(j, _)| ws.word_prob(base + j))
                .sum::<f64>()
        })
        .collect();
    Ok(CoverageResult {
        covered_probability: partial.iter().sum::<f64>().clamp(0.0, 1.0),
        method: CoverageMethod::ExactEnumeration,
        mc_stderr: None,
        seed: None,
    })
}

fn monte_carlo(ws: &WordSpace, codebook: &Codebook, samples: u64, seed: u64) -> Result<CoverageResult> {
    if samples == 0 {
        return Err(Error::DomainError("Monte Carlo needs at least one sample".into()));
    }
    let mut cdf: Vec<f64> = ws
        .probs()
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    *cdf.last_mut().unwrap() = f64::INFINITY;
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0usize; ws.n];
            let mut hits = 0u64;
            for _ in 0..count {
                for s in x.iter_mut() {
                    let u: f64 = rng.random();
                    *s = cdf.partition_point(|&v| v <= u);
                }
                if codebook.words().iter().any(|w| ws.within(&x, w)) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(CoverageResult {
        covered_probability: p,
        method: CoverageMethod::MonteCarlo,
        mc_stderr: Some((p * (1.0 - p) / samples as f64).sqrt()),
        seed: Some(seed),
    })
}
