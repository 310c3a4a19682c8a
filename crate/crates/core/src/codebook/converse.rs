use super::coverage::MAX_EXACT_WORDS;
use super::space::{checked_count, WordSpace};
use crate::error::{Error, Result};
use crate::source::{DiscreteSource, DistortionSpec};
use crate::types::enumerate_types_capped;

/// Largest `Pr{d(x, x̂) ≤ D}` over reproduction words. The ball mass of an
/// i.i.d. source depends on `x̂` only through its type, so one sorted
/// representative per type suffices.
pub fn max_ball_mass(source: &DiscreteSource, dist: &DistortionSpec, n: usize, d: f64) -> Result<f64> {
    let ws = WordSpace::new(source, dist, n, d)?;
    checked_count(ws.l, n, MAX_EXACT_WORDS)?;
    let reps = enumerate_types_capped(n, &DiscreteSource::uniform(ws.k)?, f64::INFINITY)?;
    let mut best = 0.0f64;
    for e in &reps.entries {
        let word: Vec<usize> = e
            .counts
            .iter()
            .enumerate()
            .flat_map(|(s, &c)| std::iter::repeat_n(s, c as usize))
            .collect();
        best = best.max(ws.ball_mass(&word));
    }
    Ok(best)
}

/// `(1/n) ln M` for the least `M` with `M · max_ball_mass ≥ 1 − eps`.
pub fn converse_rate_bound(source: &DiscreteSource, dist: &DistortionSpec, n: usize, d: f64, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::DomainError(format!("eps must lie in [0, 1), got {eps}")));
    }
    let ball = max_ball_mass(source, dist, n, d)?;
    let m = ((1.0 - eps) / ball * (1.0 - 1e-12)).ceil().max(1.0);
    Ok(m.ln() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_binary_ball_counting() {
        let s = DiscreteSource::uniform(2).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        let r = converse_rate_bound(&s, &h, 8, 1.0 / 8.0, 0.05).unwrap();
        assert!((r - 28f64.ln() / 8.0).abs() < 1e-15);
    }

    #[test]
    fn large_ball_gives_zero() {
        let s = DiscreteSource::new(&[0.9, 0.1]).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        assert_eq!(converse_rate_bound(&s, &h, 6, 0.5, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn skewed_source_prefers_likely_word() {
        let s = DiscreteSource::new(&[0.2, 0.8]).unwrap();
        let h = DistortionSpec::hamming(2).unwrap();
        let m = max_ball_mass(&s, &h, 2, 0.0).unwrap();
        assert!((m - 0.64).abs() < 1e-15);
    }
}
