//! Desk-scale numerics for the mixed-norm width of a product of octahedra.
//!
//! * [`blocks`]: block structure, mixed norms `l_{p,q}^{n,m}`, duals and the
//!   generalized octahedron.
//! * [`subspace`]: orthonormal bases, projections, peaky unit vectors,
//!   coordinate-vanishing restriction.
//! * [`balance`]: signed `{0, ±1}` selections with small quadratic forms.
//! * [`gaussian`]: Gaussian measure of strips and ellipsoids, Monte-Carlo
//!   checks of the measure inequalities behind the balancing bound.
//! * [`witness`]: the step construction producing `x in L` with large
//!   `||x||_{inf,1}` and bounded `||x||_{2,inf}`.
//! * [`widths`]: width identities, deviations, heuristic upper bounds and
//!   per-subspace certificates.
//! * [`harness`]: seeded experiment sweeps and report emission.

pub mod balance;
pub mod blocks;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod rng;
pub mod subspace;
pub mod widths;
pub mod witness;

pub use blocks::{BlockStructure, BlockVector, Exponent, MixedNormSpec};
pub use error::{Error, Result};
pub use subspace::Subspace;
