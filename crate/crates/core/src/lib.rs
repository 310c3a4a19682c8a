//! Rate-distortion functions, excess-distortion dispersion, excess-distortion
//! exponents and finite-blocklength rate approximations for discrete
//! memoryless sources and the quadratic-Gaussian source.
//!
//! The minimal rate needed to keep the excess-distortion probability
//! `Pr{d(x, x̂) > D}` at `eps` with blocklength `n` behaves like
//!
//! ```text
//! R(p, D) + sqrt(V(p, D) / n) · Q⁻¹(eps)
//! ```
//!
//! where `V(p, D)` is the excess-distortion dispersion. The modules compute
//! every ingredient of that formula and check it against exact oracles:
//!
//! | module | contents |
//! |---|---|
//! | [`source`] | sources, distortion measures, divergence |
//! | [`types`] | type enumeration with exact type-class probabilities |
//! | [`rd`] | rate-distortion function by alternating minimization |
//! | [`dispersion`] | `V(p, D)` by three independent routes |
//! | [`exponent`] | the excess-distortion exponent |
//! | [`blocklength`] | normal approximation and the type-enumeration oracle |
//! | [`gaussian`] | closed forms for the quadratic-Gaussian source |
//! | [`codebook`] | real covering codes at tiny blocklengths |
//!
//! Rates are in nats throughout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocklength;
pub mod cli;
pub mod codebook;
pub mod dispersion;
pub mod error;
pub mod exponent;
pub mod gaussian;
mod numeric;
pub mod rd;
pub mod source;
pub mod special;
pub mod types;

pub use error::{Error, Result};
pub use rd::{rd_at_distortion, rd_at_slope, rdf_value, RdSolution};
pub use source::{divergence, validate_source, DiscreteSource, DistortionKind, DistortionSpec};
pub use special::{chi2_tail, chi2_tail_inverse, q_function, q_inverse};
pub use types::{enumerate_types, TypeAtlas};
