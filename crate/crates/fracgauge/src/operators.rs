//! The discrete Schrödinger operator T and its Neumann-series solvers.
//!
//! Tf = G(fω) composes multiplication by the potential measure ω with the
//! Green operator. When ‖T‖_{L²(ω)} < 1 the series u₀ = Σ_j T^j Gν converges
//! to the minimal solution of u = G(uω) + Gν, and the gauge
//! u₁ = 1 + Σ_j T^j Gω solves u = 1 + G(uω). The solvers here track the
//! operator norm (largest eigenvalue of D^{1/2} G D^{1/2}, D = diag ω, by
//! power iteration), stop on a geometric tail bound, and detect term-by-term
//! divergence, which is a mathematically meaningful outcome rather than a
//! failure: there are measures with ‖T‖ < 1 whose gauge series diverges
//! identically.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate, KernelMatrix, QuadratureError, WeightVector};

/// Truncation depth used by [`fubini_check`]; both series are cut at the
/// same depth so the identity reduces to matrix-transpose algebra.
pub const FUBINI_DEPTH: usize = 32;

/// Errors from operator application and the series solvers.
#[derive(Error, Debug)]
pub enum OperatorError {
    /// Vector length does not match the matrix dimension.
    #[error("dimension mismatch: operator size {expected}, vector length {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The operator norm of the zero measure is a degenerate eigenproblem.
    #[error("operator norm requires a measure with positive total mass")]
    ZeroMeasure,
    /// Power iteration ran out of iterations; the last estimate is attached.
    #[error("power iteration did not converge in {iterations} iterations (last estimate {estimate})")]
    NormNonConvergence { estimate: f64, iterations: usize },
    /// A negative Rayleigh quotient contradicts positive semidefiniteness of
    /// the weighted kernel matrix and indicates a broken assembly.
    #[error("negative Rayleigh quotient {0} in power iteration")]
    NegativeRayleigh(f64),
    /// Iterated kernels are defined for j ≥ 1.
    #[error("iterated kernel index must be ≥ 1, got {0}")]
    InvalidKernelIndex(usize),
    /// The series accumulates at least one term.
    #[error("max_terms must be ≥ 1")]
    InvalidMaxTerms,
    /// The bound-fitting routines need a converged series.
    #[error("solve did not converge; cannot continue")]
    NotConverged,
    /// Underlying matrix or weight failures.
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The discrete Schrödinger operator Tf = G(fω).
#[derive(Debug, Clone)]
pub struct SchrodingerOp {
    g: Arc<KernelMatrix>,
    omega: WeightVector,
}

impl SchrodingerOp {
    /// Pairs a kernel matrix with a potential measure of matching size.
    pub fn new(g: Arc<KernelMatrix>, omega: WeightVector) -> Result<Self, OperatorError> {
        if omega.len() != g.n() {
            return Err(OperatorError::DimensionMismatch {
                expected: g.n(),
                got: omega.len(),
            });
        }
        Ok(SchrodingerOp { g, omega })
    }

    /// The underlying Green matrix.
    pub fn kernel(&self) -> &Arc<KernelMatrix> {
        &self.g
    }

    /// The potential measure ω.
    pub fn omega(&self) -> &WeightVector {
        &self.omega
    }

    /// (Tf)_i = Σ_j G_ij f_j ω_j.
    pub fn apply_t(&self, f: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if f.len() != self.g.n() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.g.n(),
                got: f.len(),
            });
        }
        let weighted: Vec<f64> = f
            .iter()
            .zip(self.omega.masses())
            .map(|(v, m)| v * m)
            .collect();
        Ok(self.g.apply(&weighted)?)
    }
}

/// Result of a Neumann-series solve.
///
/// When `converged` holds, `last_increment_sup` is at most the requested
/// tolerance and `residual_sup` (the sup norm of u − Tu − Gν over nodes) is
/// at most ten times it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// Per-node solution values.
    pub values: Vec<f64>,
    /// Number of series terms accumulated into `values`.
    pub terms_used: usize,
    /// Sup norm of the last increment examined.
    pub last_increment_sup: f64,
    /// Estimate q of ‖T‖ used for the geometric tail bound.
    pub t_norm_estimate: f64,
    /// Whether the series was accepted as converged.
    pub converged: bool,
    /// Sup norm of u − Tu − Gν, recomputed after truncation.
    pub residual_sup: f64,
}

/// Power iteration on the symmetric matrix M = D^{1/2} G D^{1/2} from the
/// given start vector. Returns the top eigenvalue, which equals the discrete
/// ‖T‖_{L²(ω)} because M is similar to G·D.
pub(crate) fn weighted_power_iteration(
    g: &KernelMatrix,
    omega: &WeightVector,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<f64, OperatorError> {
    let n = g.n();
    let sqrt_masses: Vec<f64> = omega.masses().iter().map(|m| m.sqrt()).collect();
    let apply_m = |v: &[f64]| -> Result<Vec<f64>, OperatorError> {
        let scaled: Vec<f64> = v.iter().zip(&sqrt_masses).map(|(a, b)| a * b).collect();
        let gv = g.apply(&scaled)?;
        Ok(gv.iter().zip(&sqrt_masses).map(|(a, b)| a * b).collect())
    };
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v = start.to_vec();
    let nv = norm2(&v);
    if nv == 0.0 {
        return Err(OperatorError::ZeroMeasure);
    }
    for x in v.iter_mut() {
        *x /= nv;
    }
    let mut lambda_prev = f64::NAN;
    for iteration in 1..=max_iter {
        let mv = apply_m(&v)?;
        let lambda: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        if lambda < -1e-12 * n as f64 {
            return Err(OperatorError::NegativeRayleigh(lambda));
        }
        let mv_norm = norm2(&mv);
        if mv_norm == 0.0 {
            // The start vector lies in the kernel of M; the restriction of M
            // to the reachable subspace is zero.
            return Ok(0.0);
        }
        if !lambda_prev.is_nan()
            && (lambda - lambda_prev).abs() <= tol * lambda.abs().max(f64::MIN_POSITIVE)
        {
            return Ok(lambda);
        }
        lambda_prev = lambda;
        v = mv;
        for x in v.iter_mut() {
            *x /= mv_norm;
        }
        if iteration == max_iter {
            return Err(OperatorError::NormNonConvergence {
                estimate: lambda,
                iterations: max_iter,
            });
        }
    }
    Err(OperatorError::NormNonConvergence {
        estimate: 0.0,
        iterations: max_iter,
    })
}

/// Discrete ‖T‖_{L²(ω)} by power iteration with a deterministic all-ones
/// start; relative eigenvalue increments below `tol` stop the iteration.
pub fn operator_norm(op: &SchrodingerOp, tol: f64, max_iter: usize) -> Result<f64, OperatorError> {
    if op.omega.total() == 0.0 {
        return Err(OperatorError::ZeroMeasure);
    }
    let ones = vec![1.0; op.g.n()];
    weighted_power_iteration(&op.g, &op.omega, &ones, tol, max_iter)
}

/// The iterated kernel G_j: G₁ = G and G_j = G_{j−1} D G with D = diag(ω).
/// The result is symmetrized by averaging with its transpose.
pub fn iterated_kernel(op: &SchrodingerOp, j: usize) -> Result<DMatrix<f64>, OperatorError> {
    if j < 1 {
        return Err(OperatorError::InvalidKernelIndex(j));
    }
    let n = op.g.n();
    let g = DMatrix::from_row_slice(n, n, op.g.entries());
    let mut acc = g.clone();
    for _ in 1..j {
        // acc·D scales column k of acc by ω_k.
        let mut scaled = acc;
        for (k, &m) in op.omega.masses().iter().enumerate() {
            scaled.column_mut(k).scale_mut(m);
        }
        acc = &scaled * &g;
    }
    let sym = (&acc + acc.transpose()).scale(0.5);
    Ok(sym)
}

/// Sup norm of a slice.
fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Neumann-series solve with a caller-supplied norm estimate; see
/// [`neumann_solve`]. Useful when ‖T‖ is already known, or when several
/// solves share one power-iteration run.
pub fn neumann_solve_with_norm(
    op: &SchrodingerOp,
    nu: &WeightVector,
    tol: f64,
    max_terms: usize,
    q: f64,
) -> Result<SolveReport, OperatorError> {
    if max_terms < 1 {
        return Err(OperatorError::InvalidMaxTerms);
    }
    if nu.len() != op.g.n() {
        return Err(OperatorError::DimensionMismatch {
            expected: op.g.n(),
            got: nu.len(),
        });
    }
    // Geometric tail bound: after an increment of sup norm d, the remaining
    // tail is at most d·q/(1−q), so d ≤ tol·(1−q)/q guarantees tail ≤ tol.
    // Capping the threshold at tol itself additionally guarantees the
    // reported last increment never exceeds the tolerance, whatever q is.
    let tail_factor = if q < 1.0 {
        ((1.0 - q) / q.max(1e-12)).min(1.0)
    } else {
        // q ≥ 1: no tail bound exists; only exact term vanishing (increment
        // 0 from a nilpotent-like ω·ν structure) can stop the series early.
        0.0
    };
    let threshold = tol * tail_factor;

    let mut term = op.g.apply(nu.masses())?;
    let mut values = term.clone();
    let mut terms_used = 1usize;
    let mut last_increment_sup = sup_norm(&term);
    let mut converged = false;
    let mut prev_increment = last_increment_sup;
    let mut plateau_run = 0usize;

    loop {
        let next = op.apply_t(&term)?;
        let d = sup_norm(&next);
        last_increment_sup = d;
        if d <= threshold {
            converged = true;
            break;
        }
        if terms_used >= max_terms {
            break;
        }
        // Divergence: increments not decaying over five consecutive terms.
        if prev_increment > 0.0 && d / prev_increment >= 1.0 - 1e-6 {
            plateau_run += 1;
            if plateau_run >= 5 {
                break;
            }
        } else {
            plateau_run = 0;
        }
        prev_increment = d;
        for (s, x) in values.iter_mut().zip(&next) {
            *s += x;
        }
        terms_used += 1;
        term = next;
    }

    let tu = op.apply_t(&values)?;
    let gnu = op.g.apply(nu.masses())?;
    let residual_sup = values
        .iter()
        .zip(&tu)
        .zip(&gnu)
        .fold(0.0f64, |m, ((u, t), g)| m.max((u - t - g).abs()));

    Ok(SolveReport {
        values,
        terms_used,
        last_increment_sup,
        t_norm_estimate: q,
        converged,
        residual_sup,
    })
}

/// Solves u = G(uω) + Gν by the Neumann series u₀ = Σ_j T^j Gν.
///
/// The norm estimate q comes from [`operator_norm`] (q = 0 for ω = 0); a
/// stalled power iteration falls back to its last estimate, which only
/// tightens the stopping threshold. Divergence, detected when increments
/// stop decaying or the term budget runs out, yields a non-converged report
/// rather than an error.
pub fn neumann_solve(
    op: &SchrodingerOp,
    nu: &WeightVector,
    tol: f64,
    max_terms: usize,
) -> Result<SolveReport, OperatorError> {
    let q = if op.omega.total() == 0.0 {
        0.0
    } else {
        match operator_norm(op, 1e-9, 5000) {
            Ok(q) => q,
            Err(OperatorError::NormNonConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        }
    };
    neumann_solve_with_norm(op, nu, tol, max_terms, q)
}

/// Solves the gauge equation u = 1 + G(uω): u₁ = 1 + Σ_j T^j Gω.
///
/// The residual reported is the sup norm of u − 1 − G(uω).
pub fn gauge(op: &SchrodingerOp, tol: f64, max_terms: usize) -> Result<SolveReport, OperatorError> {
    let q = if op.omega.total() == 0.0 {
        0.0
    } else {
        match operator_norm(op, 1e-9, 5000) {
            Ok(q) => q,
            Err(OperatorError::NormNonConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        }
    };
    gauge_with_norm(op, tol, max_terms, q)
}

/// Gauge solve with a caller-supplied norm estimate; see [`gauge`] and
/// [`neumann_solve_with_norm`].
pub fn gauge_with_norm(
    op: &SchrodingerOp,
    tol: f64,
    max_terms: usize,
    q: f64,
) -> Result<SolveReport, OperatorError> {
    let inner = neumann_solve_with_norm(op, &op.omega.clone(), tol, max_terms, q)?;
    let values: Vec<f64> = inner.values.iter().map(|v| 1.0 + v).collect();
    let tu = op.apply_t(&values)?;
    let residual_sup = values
        .iter()
        .zip(&tu)
        .fold(0.0f64, |m, (u, t)| m.max((u - 1.0 - t).abs()));
    Ok(SolveReport {
        values,
        residual_sup,
        ..inner
    })
}

/// Relative residual of the volume identity ∫ u₁ dx = |Ω| + ∫ u₀ dω with
/// both series truncated at [`FUBINI_DEPTH`] terms.
///
/// At matched truncation the identity is exact transpose algebra whenever
/// `nu` is the Lebesgue weight vector (u₀ = 𝒢ν with ν = dx); the residual
/// then measures floating-point roundoff only, regardless of whether either
/// series converges.
pub fn fubini_check(
    op: &SchrodingerOp,
    nu: &WeightVector,
    lebesgue: &WeightVector,
) -> Result<f64, OperatorError> {
    let sum_series = |seed: Vec<f64>| -> Result<Vec<f64>, OperatorError> {
        let mut term = seed.clone();
        let mut acc = seed;
        for _ in 1..FUBINI_DEPTH {
            term = op.apply_t(&term)?;
            for (s, x) in acc.iter_mut().zip(&term) {
                *s += x;
            }
        }
        Ok(acc)
    };
    let s1 = sum_series(op.g.apply(op.omega.masses())?)?;
    let s0 = sum_series(op.g.apply(nu.masses())?)?;
    let lhs_tail = integrate(&s1, lebesgue)?;
    let rhs_tail = integrate(&s0, &op.omega)?;
    let rhs = lebesgue.total() + rhs_tail;
    Ok((lhs_tail - rhs_tail).abs() / rhs.abs().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, Mesh};
    use crate::kernels::{AMode, FracParams, KernelBackend, KernelKind};
    use crate::quadrature::{
        assemble_green_matrix, calibrate_phi, discretize_density, phi_measure, PhiTarget,
    };
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn disk_setup(alpha: f64, resolution: u32) -> (Arc<Mesh>, Arc<KernelMatrix>) {
        let mesh = Arc::new(build_mesh(&Domain::UnitDisk, resolution).unwrap());
        let backend = KernelBackend::new(
            KernelKind::ExactBall,
            FracParams::new(alpha, 2).unwrap(),
            Domain::UnitDisk,
        )
        .unwrap();
        let matrix = Arc::new(assemble_green_matrix(&backend, &mesh).unwrap());
        (mesh, matrix)
    }

    fn smooth_weights(mesh: &Mesh, scale: f64) -> WeightVector {
        discretize_density(mesh, |x| scale * (1.0 + 0.5 * x[0] - 0.3 * x[1])).unwrap()
    }

    #[test]
    fn apply_t_zero_measure_and_linearity() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let zero = SchrodingerOp::new(Arc::clone(&matrix), WeightVector::zero(mesh.len())).unwrap();
        let f: Vec<f64> = (0..mesh.len()).map(|i| (i as f64).cos()).collect();
        assert!(zero.apply_t(&f).unwrap().iter().all(|&v| v == 0.0));

        let op = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 1.0)).unwrap();
        let g: Vec<f64> = (0..mesh.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let lhs = op.apply_t(&sum).unwrap();
        let fa = op.apply_t(&f).unwrap();
        let gb = op.apply_t(&g).unwrap();
        for i in 0..mesh.len() {
            assert_relative_eq!(lhs[i], fa[i] + gb[i], max_relative = 1e-12, epsilon = 1e-14);
        }
        assert!(op.apply_t(&f[..5]).is_err());
    }

    #[test]
    fn apply_t_of_ones_near_one_for_calibrated_phi() {
        let (mesh, matrix) = disk_setup(1.0, 24);
        let backend = matrix.backend().clone();
        let factor = calibrate_phi(&backend, &mesh, PhiTarget::Operator).unwrap();
        let omega = phi_measure(
            &backend,
            &mesh,
            AMode::Calibrated { factor },
            PhiTarget::Operator,
        )
        .unwrap();
        let op = SchrodingerOp::new(matrix, omega).unwrap();
        let ones = vec![1.0; mesh.len()];
        let t1 = op.apply_t(&ones).unwrap();
        for i in 0..mesh.len() {
            if mesh.delta[i] >= 0.2 {
                assert!((t1[i] - 1.0).abs() < 0.1, "node {i}: {}", t1[i]);
            }
        }
    }

    #[test]
    fn operator_norm_single_atom_and_scaling() {
        let (mesh, matrix) = disk_setup(1.1, 8);
        let i = mesh.len() / 3;
        let mass = 0.8;
        let omega = {
            let mut m = vec![0.0; mesh.len()];
            m[i] = mass;
            WeightVector::new(m).unwrap()
        };
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        let norm = operator_norm(&op, 1e-11, 1000).unwrap();
        assert_relative_eq!(norm, matrix.entry(i, i) * mass, max_relative = 1e-9);

        let zero = SchrodingerOp::new(Arc::clone(&matrix), WeightVector::zero(mesh.len())).unwrap();
        assert!(matches!(
            operator_norm(&zero, 1e-9, 100),
            Err(OperatorError::ZeroMeasure)
        ));

        let base = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 1.0)).unwrap();
        let scaled = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 0.37)).unwrap();
        let n1 = operator_norm(&base, 1e-11, 2000).unwrap();
        let n2 = operator_norm(&scaled, 1e-11, 2000).unwrap();
        assert_relative_eq!(n2, 0.37 * n1, max_relative = 1e-7);
    }

    #[test]
    fn operator_norm_matches_dense_eigensolver() {
        let (mesh, matrix) = disk_setup(0.9, 8);
        let omega = discretize_density(&mesh, |x| 1.0 + x[0] * x[0] + 0.2 * x[1]).unwrap();
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega.clone()).unwrap();
        let norm = operator_norm(&op, 1e-12, 5000).unwrap();

        let n = mesh.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = omega.masses()[i].sqrt() * matrix.entry(i, j) * omega.masses()[j].sqrt();
            }
        }
        let top = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(norm, top, max_relative = 1e-8);
    }

    #[test]
    fn iterated_kernel_basics() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let omega = smooth_weights(&mesh, 0.5);
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        assert!(iterated_kernel(&op, 0).is_err());

        let g1 = iterated_kernel(&op, 1).unwrap();
        for i in 0..mesh.len() {
            for j in 0..mesh.len() {
                assert_eq!(g1[(i, j)], matrix.entry(i, j));
            }
        }
        let g2 = iterated_kernel(&op, 2).unwrap();
        let asym = (&g2 - g2.transpose()).abs().max();
        assert!(asym <= 1e-12 * g2.abs().max());
    }

    #[test]
    fn iterated_kernel_sums_to_series_solution() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let omega = smooth_weights(&mesh, 0.4);
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        let report = neumann_solve(&op, &nu, 1e-12, 500).unwrap();
        assert!(report.converged);

        let n = mesh.len();
        let nu_vec = nalgebra::DVector::from_row_slice(nu.masses());
        let mut summed = nalgebra::DVector::zeros(n);
        for j in 1..=40 {
            summed += iterated_kernel(&op, j).unwrap() * &nu_vec;
        }
        for i in 0..n {
            assert_relative_eq!(summed[i], report.values[i], max_relative = 1e-8);
        }
    }

    #[test]
    fn neumann_zero_omega_single_term() {
        let (mesh, matrix) = disk_setup(1.0, 8);
        let op = SchrodingerOp::new(Arc::clone(&matrix), WeightVector::zero(mesh.len())).unwrap();
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let report = neumann_solve(&op, &nu, 1e-10, 100).unwrap();
        assert!(report.converged);
        assert_eq!(report.terms_used, 1);
        assert_eq!(report.t_norm_estimate, 0.0);
        assert_eq!(report.last_increment_sup, 0.0);
        let direct = matrix.apply(nu.masses()).unwrap();
        assert_eq!(report.values, direct);
        assert!(report.residual_sup <= 1e-14);
    }

    #[test]
    fn neumann_matches_direct_linear_solve() {
        let (mesh, matrix) = disk_setup(1.3, 8);
        // Scale ω so the norm sits near 0.7, inside the series regime but
        // far from trivial.
        let omega_raw = smooth_weights(&mesh, 1.0);
        let op_raw = SchrodingerOp::new(Arc::clone(&matrix), omega_raw.clone()).unwrap();
        let q_raw = operator_norm(&op_raw, 1e-11, 2000).unwrap();
        let scale = 0.7 / q_raw;
        let omega = smooth_weights(&mesh, scale);
        let nu = discretize_density(&mesh, |x| 1.0 + 0.2 * x[1]).unwrap();
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega.clone()).unwrap();
        let report = neumann_solve(&op, &nu, 1e-11, 10000).unwrap();
        assert!(report.converged);
        assert!(report.last_increment_sup <= 1e-11);
        assert!(report.residual_sup <= 1e-10);

        let n = mesh.len();
        let mut a = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] -= matrix.entry(i, j) * omega.masses()[j];
            }
        }
        let g_nu = nalgebra::DVector::from_vec(matrix.apply(nu.masses()).unwrap());
        let direct = a.lu().solve(&g_nu).expect("I − GD invertible for q < 1");
        let gap = report
            .values
            .iter()
            .zip(direct.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8, "gap {gap}");
    }

    #[test]
    fn neumann_declares_divergence_for_supercritical_measure() {
        let (mesh, matrix) = disk_setup(1.3, 8);
        let omega_raw = smooth_weights(&mesh, 1.0);
        let op_raw = SchrodingerOp::new(Arc::clone(&matrix), omega_raw).unwrap();
        let q_raw = operator_norm(&op_raw, 1e-11, 2000).unwrap();
        let omega = smooth_weights(&mesh, 1.5 / q_raw);
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        let report = neumann_solve(&op, &nu, 1e-10, 10000).unwrap();
        assert!(!report.converged);
        assert!(report.t_norm_estimate > 1.0);
        // The plateau detector should fire long before the term budget.
        assert!(report.terms_used < 100, "terms {}", report.terms_used);
    }

    #[test]
    fn neumann_monotone_in_potential() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let big = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 0.5)).unwrap();
        let small = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 0.25)).unwrap();
        let u_big = neumann_solve(&big, &nu, 1e-11, 1000).unwrap();
        let u_small = neumann_solve(&small, &nu, 1e-11, 1000).unwrap();
        assert!(u_big.converged && u_small.converged);
        for (b, s) in u_big.values.iter().zip(&u_small.values) {
            assert!(b >= s);
        }
    }

    #[test]
    fn neumann_is_minimal_among_supersolutions() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let op = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 0.5)).unwrap();
        let u0 = neumann_solve(&op, &nu, 1e-12, 1000).unwrap();
        assert!(u0.converged);
        let gnu = matrix.apply(nu.masses()).unwrap();
        let mut v: Vec<f64> = u0.values.iter().map(|x| x + 1.0).collect();
        let mut prev_gap = f64::INFINITY;
        for _ in 0..10 {
            let tv = op.apply_t(&v).unwrap();
            v = tv.iter().zip(&gnu).map(|(a, b)| a + b).collect();
            let gap = v
                .iter()
                .zip(&u0.values)
                .fold(0.0f64, |m, (a, b)| m.max(a - b));
            // Iterates stay above the series solution and decrease toward it.
            assert!(gap >= -1e-10);
            assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
        }
        assert!(prev_gap < 0.2);
    }

    #[test]
    fn schur_test_direction() {
        // A strictly positive u with Tu ≤ u forces ‖T‖ ≤ 1.
        let (mesh, matrix) = disk_setup(1.2, 8);
        let nu = discretize_density(&mesh, |_| 1.0).unwrap();
        let omega_raw = smooth_weights(&mesh, 1.0);
        let op_raw = SchrodingerOp::new(Arc::clone(&matrix), omega_raw).unwrap();
        let q_raw = operator_norm(&op_raw, 1e-11, 2000).unwrap();
        let omega = smooth_weights(&mesh, 0.95 / q_raw);
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        let u0 = neumann_solve(&op, &nu, 1e-10, 100000).unwrap();
        assert!(u0.converged);
        let tu = op.apply_t(&u0.values).unwrap();
        let mut admissible = true;
        for (t, u) in tu.iter().zip(&u0.values) {
            if *u <= 0.0 || t > u {
                admissible = false;
            }
        }
        assert!(admissible, "u₀ must satisfy Tu₀ = u₀ − Gν ≤ u₀ with u₀ > 0");
        let q = operator_norm(&op, 1e-11, 5000).unwrap();
        assert!(q <= 1.0 + 1e-8);
    }

    #[test]
    fn gauge_zero_measure_is_identically_one() {
        let (mesh, matrix) = disk_setup(1.0, 8);
        let op = SchrodingerOp::new(Arc::clone(&matrix), WeightVector::zero(mesh.len())).unwrap();
        let report = gauge(&op, 1e-10, 100).unwrap();
        assert!(report.converged);
        assert!(report.values.iter().all(|&v| v == 1.0));
        assert_eq!(report.residual_sup, 0.0);
    }

    #[test]
    fn gauge_constant_for_scaled_phi() {
        // ω = γ·φdx with Gφ calibrated: u₁ ≈ 1/(1−γ).
        let (mesh, matrix) = disk_setup(1.0, 24);
        let backend = matrix.backend().clone();
        let factor = calibrate_phi(&backend, &mesh, PhiTarget::Operator).unwrap();
        let gamma = 0.5;
        let omega = phi_measure(
            &backend,
            &mesh,
            AMode::Calibrated {
                factor: gamma * factor,
            },
            PhiTarget::Operator,
        )
        .unwrap();
        let op = SchrodingerOp::new(matrix, omega).unwrap();
        let report = gauge(&op, 1e-9, 10000).unwrap();
        assert!(report.converged);
        assert!(report.last_increment_sup <= 1e-9);
        assert!(report.residual_sup <= 1e-8);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..mesh.len() {
            if mesh.delta[i] >= 0.1 {
                sum += report.values[i];
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.1, "interior mean {mean}");
    }

    #[test]
    fn fubini_residual_small_at_matched_truncation() {
        let (mesh, matrix) = disk_setup(1.2, 8);
        let lebesgue = discretize_density(&mesh, |_| 1.0).unwrap();
        let zero_op =
            SchrodingerOp::new(Arc::clone(&matrix), WeightVector::zero(mesh.len())).unwrap();
        let r0 = fubini_check(&zero_op, &lebesgue, &lebesgue).unwrap();
        assert!(r0 <= 1e-14, "zero-measure residual {r0}");

        let omega = smooth_weights(&mesh, 0.6);
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega).unwrap();
        let r = fubini_check(&op, &lebesgue, &lebesgue).unwrap();
        assert!(r <= 1e-10, "residual {r}");

        // A supercritical measure still satisfies the truncated identity.
        let hot = SchrodingerOp::new(Arc::clone(&matrix), smooth_weights(&mesh, 40.0)).unwrap();
        let rh = fubini_check(&hot, &lebesgue, &lebesgue).unwrap();
        assert!(rh <= 1e-10, "supercritical residual {rh}");
    }

    #[test]
    fn solve_report_serializes_with_exact_field_names() {
        let report = SolveReport {
            values: vec![1.0, 2.0],
            terms_used: 3,
            last_increment_sup: 1e-11,
            t_norm_estimate: 0.5,
            converged: true,
            residual_sup: 2e-11,
        };
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![
                "converged",
                "last_increment_sup",
                "residual_sup",
                "t_norm_estimate",
                "terms_used",
                "values"
            ]
        );
        let back: SolveReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.terms_used, 3);
    }
}
