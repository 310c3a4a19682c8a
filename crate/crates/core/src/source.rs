//! Discrete memoryless sources, single-letter distortion measures and the
//! elementary information measures used throughout the crate.
//!
//! All logarithms are natural; rates are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the raw sum of a probability vector in strict mode.
pub const STRICT_SUM_TOL: f64 = 1e-9;

/// A probability vector over a finite alphabet with every letter carrying
/// strictly positive mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteSource {
    probs: Vec<f64>,
}

impl DiscreteSource {
    /// Validates and renormalizes `probs`.
    pub fn new(probs: &[f64]) -> Result<Self> {
        validate_source(probs, false)
    }

    /// Uniform source on `l` letters.
    pub fn uniform(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::EmptySource);
        }
        Ok(Self {
            probs: vec![1.0 / l as f64; l],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// Builds a [`DiscreteSource`]; every entry must be strictly positive.
///
/// With `strict` set, the raw vector must already sum to one within
/// [`STRICT_SUM_TOL`]; otherwise it is silently renormalized.
pub fn validate_source(probs: &[f64], strict: bool) -> Result<DiscreteSource> {
    if probs.is_empty() {
        return Err(Error::EmptySource);
    }
    for (index, &value) in probs.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveMass { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if strict && (sum - 1.0).abs() > STRICT_SUM_TOL {
        return Err(Error::NotNormalized(sum));
    }
    Ok(DiscreteSource {
        probs: probs.iter().map(|p| p / sum).collect(),
    })
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Relative entropy `D(q‖p)` in nats between two sources on the same alphabet.
pub fn divergence(q: &DiscreteSource, p: &DiscreteSource) -> Result<f64> {
    divergence_vec(q.probs(), p.probs())
}

/// Relative entropy for raw probability vectors. `q` may contain zeros; `p`
/// must be positive wherever `q` is.
pub fn divergence_vec(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch(q.len(), p.len()));
    }
    let mut acc = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += qi * (qi / pi).ln();
        }
    }
    // rounding can leave a tiny negative residue when q == p
    Ok(acc.max(0.0))
}

/// Mean and variance of `values` under the weights `p`.
pub fn weighted_mean_var(p: &[f64], values: &[f64]) -> (f64, f64) {
    let mean: f64 = p.iter().zip(values).map(|(w, v)| w * v).sum();
    let var: f64 = p.iter().zip(values).map(|(w, v)| w * (v - mean) * (v - mean)).sum();
    (mean, var.max(0.0))
}

/// Structural class of a distortion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    General,
    /// `d(x, x̂)` depends only on `(x − x̂) mod L`.
    Difference,
    Hamming,
}

/// Bounded nonnegative single-letter distortion `d(x, x̂)`, stored row-major
/// with `L` source rows and `K` reproduction columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSpec {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
    d_max: f64,
    kind: DistortionKind,
}

impl DistortionSpec {
    pub fn hamming(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidDistortion("empty alphabet".into()));
        }
        let matrix = (0..l * l).map(|i| if i / l == i % l { 0.0 } else { 1.0 }).collect();
        Ok(Self {
            rows: l,
            cols: l,
            matrix,
            d_max: if l > 1 { 1.0 } else { 0.0 },
            kind: DistortionKind::Hamming,
        })
    }

    /// Difference measure from its profile `d(z)`, `z = (x − x̂) mod L`.
    pub fn difference(profile: &[f64]) -> Result<Self> {
        let l = profile.len();
        if l == 0 {
            return Err(Error::InvalidDistortion("empty alphabet".into()));
        }
        let mut matrix = Vec::with_capacity(l * l);
        for x in 0..l {
            for xh in 0..l {
                matrix.push(profile[(x + l - xh) % l]);
            }
        }
        let rows: Vec<Vec<f64>> = matrix.chunks(l).map(|r| r.to_vec()).collect();
        Self::from_matrix(&rows, DistortionKind::Difference)
    }

    pub fn general(matrix: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(matrix, DistortionKind::General)
    }

    /// Builds a measure and checks that `matrix` honours the claimed `kind`.
    pub fn from_matrix(matrix: &[Vec<f64>], kind: DistortionKind) -> Result<Self> {
        let rows = matrix.len();
        if rows == 0 {
            return Err(Error::InvalidDistortion("empty matrix".into()));
        }
        let cols = matrix[0].len();
        if cols == 0 {
            return Err(Error::InvalidDistortion("empty reproduction alphabet".into()));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (x, row) in matrix.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidDistortion(format!(
                    "row {x} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidDistortion(format!(
                        "entry {v} in row {x} is negative or not finite"
                    )));
                }
                flat.push(v);
            }
        }
        let d_max = flat.iter().cloned().fold(0.0, f64::max);
        let spec = Self {
            rows,
            cols,
            matrix: flat,
            d_max,
            kind,
        };
        match kind {
            DistortionKind::General => {}
            DistortionKind::Hamming => {
                if rows != cols {
                    return Err(Error::InvalidDistortion("hamming needs L = K".into()));
                }
                for x in 0..rows {
                    for xh in 0..cols {
                        let want = if x == xh { 0.0 } else { 1.0 };
                        if spec.get(x, xh) != want {
                            return Err(Error::InvalidDistortion(
                                "hamming matrix must be 0 on the diagonal and 1 elsewhere".into(),
                            ));
                        }
                    }
                }
            }
            DistortionKind::Difference => {
                if rows != cols {
                    return Err(Error::InvalidDistortion("difference needs L = K".into()));
                }
                let l = rows;
                for x in 0..l {
                    for xh in 0..l {
                        if spec.get(x, xh) != spec.get((x + l - xh) % l, 0) {
                            return Err(Error::InvalidDistortion(
                                "difference matrix must depend only on (x - x̂) mod L".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(spec)
    }

    /// Source alphabet size `L`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Reproduction alphabet size `K`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, x: usize, xh: usize) -> f64 {
        self.matrix[x * self.cols + xh]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.matrix[x * self.cols..(x + 1) * self.cols]
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    /// Whether every entry is an integer; enables exact integer thresholds
    /// in the codebook lab.
    pub fn is_integral(&self) -> bool {
        self.matrix.iter().all(|v| v.fract() == 0.0 && *v < 1e15)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.cols).map(|r| r.to_vec()).collect()
    }

    /// Smallest achievable expected distortion: every letter mapped to its
    /// closest reproduction.
    pub fn d_min(&self, p: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .map(|(x, &px)| px * self.row(x).iter().cloned().fold(f64::INFINITY, f64::min))
            .sum()
    }

    /// `min_x̂ E_p[d(X, x̂)]`; the rate-distortion function vanishes at and
    /// above this level.
    pub fn d_trivial(&self, p: &[f64]) -> f64 {
        (0..self.cols)
            .map(|xh| p.iter().enumerate().map(|(x, &px)| px * self.get(x, xh)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn check_source(&self, l: usize) -> Result<()> {
        if l != self.rows {
            return Err(Error::DimensionMismatch(l, self.rows));
        }
        Ok(())
    }
}

/// On-disk JSON description of a source and its distortion measure:
/// `{"probs": [...], "distortion": {"kind": "hamming"|"difference"|"general", "matrix": [[...]]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFile {
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<DistortionFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionFile {
    pub kind: DistortionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl DistortionFile {
    /// Materializes the measure for an alphabet of `l` source letters.
    pub fn build(&self, l: usize) -> Result<DistortionSpec> {
        match (&self.matrix, self.kind) {
            (None, DistortionKind::Hamming) => DistortionSpec::hamming(l),
            (None, kind) => Err(Error::InvalidDistortion(format!("kind {kind:?} requires a matrix"))),
            (Some(m), kind) => DistortionSpec::from_matrix(m, kind),
        }
    }
}

impl SourceFile {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Validates the document into a source and (if present) a distortion
    /// measure of matching dimension.
    pub fn build(&self) -> Result<(DiscreteSource, Option<DistortionSpec>)> {
        let source = DiscreteSource::new(&self.probs)?;
        let dist = match &self.distortion {
            Some(d) => {
                let spec = d.build(source.len())?;
                spec.check_source(source.len())?;
                Some(spec)
            }
            None => None,
        };
        Ok((source, dist))
    }
}
