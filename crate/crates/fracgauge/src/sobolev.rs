//! Discrete fractional Sobolev energies and the coercivity of the
//! Schrödinger bilinear form.
//!
//! The norm of the fractional Sobolev space over a bounded domain splits as
//!
//! ```text
//! ‖u‖² = (A/2) ∬_{Ω×Ω} |u(x)−u(y)|² / |x−y|^{n+α} dx dy + ∫_Ω u²(x) φ(x) dx,
//! ```
//!
//! where the exterior density φ absorbs the unbounded part of the Gagliardo
//! double integral exactly. The embedding constant β² is the best constant
//! in ∫ u² dω ≤ β² ‖u‖², computable as the top eigenvalue of the weighted
//! Green matrix, and β² < 1 makes the form
//! B(u, u) = ‖u‖² − ∫ u² dω coercive: B ≥ (1−β²)‖u‖².

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Domain, Mesh};
use crate::kernels::{self, AMode, FracParams, KernelError};
use crate::operators::{weighted_power_iteration, OperatorError};
use crate::quadrature::{KernelMatrix, QuadratureError, WeightVector};

/// Number of row groups for the pair-sum parallelism; fixed so accumulation
/// order, and hence the result bits, never depend on the thread count.
const ROW_GROUPS: usize = 256;

/// Errors from energy computation.
#[derive(Error, Debug)]
pub enum SobolevError {
    /// Vector length does not match the mesh or matrix.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Energy of a non-finite function is undefined.
    #[error("non-finite value at node {0}")]
    NonFiniteValue(usize),
    /// Failures from the eigenvalue computation.
    #[error(transparent)]
    Operator(#[from] OperatorError),
    /// Failures evaluating the exterior density.
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// Failures from matrix application.
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The two pieces of the discrete fractional Sobolev energy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyReport {
    /// (A/2) Σ_{i≠j} (u_i−u_j)² |x_i−x_j|^{−n−α} a_i a_j.
    pub gagliardo: f64,
    /// Σ u_i² φ(x_i) a_i.
    pub phi_term: f64,
    /// gagliardo + phi_term.
    pub total: f64,
}

/// Discrete Sobolev energy of a mesh function.
///
/// The diagonal pairs are excluded from the double sum; the integrand
/// vanishes quadratically at coincidence, so the exclusion is consistent
/// with the continuum integral. The pair sum is grouped by rows into fixed
/// blocks combined in fixed order, making the result independent of the
/// thread count.
pub fn gagliardo_energy(
    params: FracParams,
    domain: &Domain,
    mesh: &Mesh,
    u: &[f64],
    mode: AMode,
) -> Result<EnergyReport, SobolevError> {
    let n = mesh.len();
    if u.len() != n {
        return Err(SobolevError::DimensionMismatch {
            expected: n,
            got: u.len(),
        });
    }
    if let Some(bad) = u.iter().position(|x| !x.is_finite()) {
        return Err(SobolevError::NonFiniteValue(bad));
    }
    let a = kernels::a_value(params, mode);
    let exponent = -0.5 * (params.n as f64 + params.alpha);
    let groups: Vec<f64> = (0..ROW_GROUPS.min(n))
        .into_par_iter()
        .map(|g| {
            let mut sum = 0.0f64;
            let mut i = g;
            while i < n {
                let xi = mesh.nodes[i];
                let ai = mesh.cell_area[i];
                for j in i + 1..n {
                    let dx = xi[0] - mesh.nodes[j][0];
                    let dy = xi[1] - mesh.nodes[j][1];
                    let diff = u[i] - u[j];
                    sum += diff * diff * (dx * dx + dy * dy).powf(exponent)
                        * ai
                        * mesh.cell_area[j];
                }
                i += ROW_GROUPS.min(n);
            }
            sum
        })
        .collect();
    // Each unordered pair appears once above, so the (A/2)·Σ_{i≠j} becomes
    // A·Σ_{i<j}.
    let gagliardo = a * groups.iter().sum::<f64>();
    let mut phi_term = 0.0;
    for i in 0..n {
        let phi = kernels::phi(params, domain, mesh.nodes[i], mode)?;
        phi_term += u[i] * u[i] * phi * mesh.cell_area[i];
    }
    Ok(EnergyReport {
        gagliardo,
        phi_term,
        total: gagliardo + phi_term,
    })
}

/// Green energy μᵀGμ of a discretized measure, the squared dual-space norm.
pub fn green_energy(k: &KernelMatrix, mu: &WeightVector) -> Result<f64, SobolevError> {
    if mu.len() != k.n() {
        return Err(SobolevError::DimensionMismatch {
            expected: k.n(),
            got: mu.len(),
        });
    }
    let g_mu = k.apply(mu.masses())?;
    Ok(g_mu
        .iter()
        .zip(mu.masses())
        .map(|(a, b)| a * b)
        .sum())
}

/// Best discrete constant β² in green_energy(g·ω) ≤ β² Σ g_i² ω_i, the top
/// eigenvalue of D^{1/2} G D^{1/2}.
///
/// This is the same eigenproblem as `operators::operator_norm` but run
/// independently, from a √mass start vector, so agreement between the two is
/// a genuine cross-check rather than a tautology.
pub fn embedding_constant(k: &KernelMatrix, omega: &WeightVector) -> Result<f64, SobolevError> {
    if omega.len() != k.n() {
        return Err(SobolevError::DimensionMismatch {
            expected: k.n(),
            got: omega.len(),
        });
    }
    if omega.total() == 0.0 {
        return Err(SobolevError::Operator(OperatorError::ZeroMeasure));
    }
    let start: Vec<f64> = omega.masses().iter().map(|m| m.sqrt()).collect();
    Ok(weighted_power_iteration(k, omega, &start, 1e-12, 20000)?)
}

/// The Schrödinger form B(u, u) = ‖u‖² − ∫ u² dω and its coercivity floor
/// (1−β²)‖u‖².
///
/// `beta_sq` is the embedding constant already computed for ω (must be < 1
/// for the floor to be meaningful). The discrete Gagliardo form and the
/// Green-energy dual norm are different discretizations of the same
/// continuum object, so callers should compare the two returned values with
/// percent-level slack.
pub fn coercivity_check(
    params: FracParams,
    domain: &Domain,
    mesh: &Mesh,
    omega: &WeightVector,
    u: &[f64],
    mode: AMode,
    beta_sq: f64,
) -> Result<(f64, f64), SobolevError> {
    if omega.len() != mesh.len() {
        return Err(SobolevError::DimensionMismatch {
            expected: mesh.len(),
            got: omega.len(),
        });
    }
    let energy = gagliardo_energy(params, domain, mesh, u, mode)?;
    let omega_quad: f64 = u
        .iter()
        .zip(omega.masses())
        .map(|(v, m)| v * v * m)
        .sum();
    let b_value = energy.total - omega_quad;
    let lower = (1.0 - beta_sq) * energy.total;
    Ok((b_value, lower))
}
