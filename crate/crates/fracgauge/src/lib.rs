//! Numerics for the fractional-Laplacian Schrödinger integral equation
//! u = G(uω) + Gν on bounded planar domains.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: exact domain queries (membership, boundary distance, ray
//!   exit) and uniform Cartesian meshes for the unit disk and axis-aligned
//!   boxes in ℝ².
//! - [`kernels`]: pointwise evaluation of the Riesz kernel, the closed-form
//!   Green function of `(−Δ)^{α/2}` on the unit ball, the boundary-weighted
//!   model kernel, the Poisson kernel of order α, and the exterior density φ.
//! - [`quadrature`]: discretization of measures and dense assembly of the
//!   Green matrix with a closed-form treatment of the diagonal singularity,
//!   plus matrix-free application for meshes too large to assemble.
//! - [`operators`]: the discrete Schrödinger operator T f = G(f ω), its
//!   L²(ω) operator norm, iterated kernels, the Neumann-series solver for
//!   u₀ = 𝒢ν, and the gauge u₁ = 1 + 𝒢ω.
//! - [`sobolev`]: discrete fractional energies (Gagliardo seminorm, Green
//!   energy, embedding constant, coercivity of the bilinear form).
//! - [`verify`]: scenario-level checks of the kernel equivalences, the
//!   identity Gφ ≡ 1, exponential pointwise bounds, gauge bounds against the
//!   Poisson kernel, the ω = φ dx counterexample, and the Hardy constant.
//!
//! All computations are deterministic: parallel loops partition work by row
//! or by fixed block so results are bitwise independent of the thread count,
//! and every randomized sampler takes an explicit seed.

pub mod geometry;
pub mod kernels;
pub mod operators;
pub mod quadrature;
pub mod sobolev;
pub mod verify;

/// A point in the plane.
pub type Point = [f64; 2];
