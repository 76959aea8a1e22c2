//! Scenario-level verification of the theory's identities and bounds.
//!
//! Each routine here checks one analytic statement at mesh scale: the
//! two-sided equivalence between the exact-ball Green function and the
//! boundary-weighted model kernel, the identity Gφ ≡ 1, the exponential
//! pointwise bounds on the minimal solution u₀ in terms of m = δ^{α/2}, the
//! Poisson-kernel envelope for the gauge u₁, the divergent-gauge
//! counterexample with subcritical operator norm, and the closed-form decay
//! of the Hardy-inequality constant as α → 2.
//!
//! The theorems assert existence of constants, not their values, so the
//! bound checks fit the smallest constants on the mesh and report per-node
//! margins; stability of the fitted constants under refinement is the
//! meaningful assertion and is left to callers.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::geometry::{Domain, Mesh};
use crate::kernels::{
    self, beta_int, AMode, FracParams, KernelBackend, KernelError, KernelKind,
};
use crate::operators::{
    operator_norm, OperatorError, SchrodingerOp, SolveReport,
};
use crate::quadrature::{
    assemble_green_matrix, matfree_apply, phi_measure, PhiTarget, QuadratureError,
};
use crate::Point;

/// Interior margin used by percent-level fits: nodes with δ below this carry
/// the largest quadrature error and are excluded from constant fitting,
/// though full-mesh margins are still reported.
pub const INTERIOR_MARGIN: f64 = 0.1;

/// Errors from the verification scenarios.
#[derive(Error, Debug)]
pub enum VerifyError {
    /// Exact-ball comparisons need the unit disk.
    #[error("this check requires the unit disk domain")]
    DiskOnly,
    /// The Hardy constant formula holds for 1 < α < 2.
    #[error("hardy constant requires 1 < alpha < 2, got {0}")]
    AlphaOutOfRange(f64),
    /// Bound fitting needs a converged solve.
    #[error("bound fitting requires a converged solve report")]
    NotConverged,
    /// No nodes satisfy the interior margin.
    #[error("interior margin {0} excludes every mesh node")]
    MarginExcludesAllNodes(f64),
    /// Kernel evaluation failures.
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// Discretization failures.
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    /// Operator and solver failures.
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Fitted constants and margins for the exponential bounds on u₀.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundFitReport {
    /// Smallest C with u₀ ≤ C1_envelope · m · e^{C·Tm/m} at every node.
    #[serde(rename = "fitted_C_upper")]
    pub fitted_c_upper: f64,
    /// Largest c with u₀ ≥ (min G1/m) · m · e^{c·Tm/m} at every node.
    pub fitted_c_lower: f64,
    /// max_i (G1)_i / m_i, the discrete constant in G1 ≈ m.
    #[serde(rename = "C1_envelope")]
    pub c1_envelope: f64,
    /// Nodes where u₀ falls below the zero-exponent floor (min G1/m)·m.
    pub violations: usize,
    /// Per-node slack of the fitted upper bound: bound − u₀ ≥ 0.
    pub margins: Vec<f64>,
}

/// Fitted Poisson-envelope constants for the gauge u₁.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugePoissonReport {
    /// Prefactor of the upper envelope C₃ ∫ e^{C₄ E} P dz.
    pub c3_upper: f64,
    /// Shared exponent coefficient C₄, chosen to minimize the logarithmic
    /// spread between u₁ and the envelope over interior nodes.
    pub c4: f64,
    /// Prefactor of the analogous lower envelope.
    pub c3_lower: f64,
    /// Interior nodes where the fitted upper bound fails.
    pub violations: usize,
    /// Per-node slack of the upper envelope at every node, interior or not.
    pub margins: Vec<f64>,
}

/// Per-term divergence data for the gauge counterexample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleReport {
    /// Fractional order used.
    pub alpha: f64,
    /// Whether α lies in (1, 2), the hypothesis of the divergence theorem.
    pub in_theorem_range: bool,
    /// Interior means of the gauge terms T^k(Gω), k = 0, 1, …, in order;
    /// the first entry is the mean of Gω itself.
    pub per_term_means: Vec<f64>,
    /// Cumulative gauge partial sums 1 + Σ per-term means.
    pub partial_sum_means: Vec<f64>,
    /// Discrete operator norm of T.
    pub t_norm_estimate: f64,
}

/// Ratio range of the exact-ball Green function to the model kernel over
/// random interior pairs; deterministic for a fixed seed.
pub fn check_green_equivalence(
    params: FracParams,
    mesh: &Mesh,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), VerifyError> {
    if mesh.domain != Domain::UnitDisk {
        return Err(VerifyError::DiskOnly);
    }
    let backend = KernelBackend::new(KernelKind::ExactBall, params, Domain::UnitDisk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Point {
        loop {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if p[0] * p[0] + p[1] * p[1] < 1.0 {
                return p;
            }
        }
    };
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut accepted = 0usize;
    while accepted < samples {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        if x == y {
            continue;
        }
        let exact = backend.green(x, y)?;
        let model = kernels::green_model(params, &Domain::UnitDisk, x, y)?;
        let ratio = exact / model;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        accepted += 1;
    }
    Ok((lo, hi))
}

/// Max deviation |Gφ − 1| over nodes with δ ≥ interior_margin, with the
/// potential evaluated matrix-free so large meshes need no dense matrix.
pub fn check_gphi(
    params: FracParams,
    domain: &Domain,
    mesh: &Mesh,
    mode: AMode,
    interior_margin: f64,
) -> Result<f64, VerifyError> {
    if *domain != Domain::UnitDisk {
        return Err(VerifyError::DiskOnly);
    }
    let backend = KernelBackend::new(KernelKind::ExactBall, params, *domain)?;
    let weights = phi_measure(&backend, mesh, mode, PhiTarget::Potential)?;
    let potential = matfree_apply(&backend, mesh, weights.masses())?;
    let mut deviation: Option<f64> = None;
    for i in 0..mesh.len() {
        if mesh.delta[i] >= interior_margin {
            let d = (potential[i] - 1.0).abs();
            deviation = Some(deviation.map_or(d, |m: f64| m.max(d)));
        }
    }
    deviation.ok_or(VerifyError::MarginExcludesAllNodes(interior_margin))
}

/// Fits the constants of the exponential bounds
/// u₀ ≤ C₁ m e^{C·Tm/m} and u₀ ≥ c_lo m e^{c·Tm/m}, m = δ^{α/2},
/// with C₁ = max G1/m and c_lo = min G1/m taken from the discrete G1.
///
/// The floor count `violations` uses the zero-exponent lower bound
/// u₀ ≥ c_lo·m, which is exact linear algebra whenever the solve's ν is the
/// Lebesgue measure (u₀ then dominates its first series term G1 ≥ c_lo·m).
pub fn fit_exponential_bounds(
    op: &SchrodingerOp,
    mesh: &Mesh,
    solve: &SolveReport,
) -> Result<BoundFitReport, VerifyError> {
    if !solve.converged {
        return Err(VerifyError::NotConverged);
    }
    let alpha = op.kernel().backend().params.alpha;
    let m: Vec<f64> = mesh.delta.iter().map(|d| d.powf(0.5 * alpha)).collect();
    let tm = op.apply_t(&m)?;
    let g1 = op.kernel().apply(&mesh.cell_area)?;
    fit_exponential_bounds_from(mesh, alpha, &solve.values, &tm, &g1)
}

/// Fits the exponential envelopes from precomputed vectors: the solution
/// u₀, Tm with m = δ^{α/2}, and G1. Lets large instances skip the dense
/// operator when those vectors come from matrix-free or low-rank applies.
pub fn fit_exponential_bounds_from(
    mesh: &Mesh,
    alpha: f64,
    u0: &[f64],
    tm: &[f64],
    g1: &[f64],
) -> Result<BoundFitReport, VerifyError> {
    let m: Vec<f64> = mesh.delta.iter().map(|d| d.powf(0.5 * alpha)).collect();

    let mut env_hi = f64::NEG_INFINITY;
    let mut env_lo = f64::INFINITY;
    for (g, mi) in g1.iter().zip(&m) {
        let ratio = g / mi;
        env_hi = env_hi.max(ratio);
        env_lo = env_lo.min(ratio);
    }

    let mut fitted_c_upper = 0.0f64;
    let mut fitted_c_lower = f64::INFINITY;
    let mut violations = 0usize;
    for i in 0..mesh.len() {
        let u = u0[i];
        if u < env_lo * m[i] * (1.0 - 1e-12) {
            violations += 1;
        }
        let exponent_scale = tm[i] / m[i];
        let log_hi = (u / (env_hi * m[i])).ln();
        if log_hi > 0.0 {
            fitted_c_upper = fitted_c_upper.max(if exponent_scale > 0.0 {
                log_hi / exponent_scale
            } else {
                f64::INFINITY
            });
        }
        let log_lo = (u / (env_lo * m[i])).ln();
        if exponent_scale > 0.0 {
            fitted_c_lower = fitted_c_lower.min(log_lo.max(0.0) / exponent_scale);
        }
    }
    if !fitted_c_lower.is_finite() {
        // Tm ≡ 0 (zero potential): any exponent works; report the trivial one.
        fitted_c_lower = 0.0;
    }

    let margins: Vec<f64> = (0..mesh.len())
        .map(|i| {
            let bound = env_hi * m[i] * (fitted_c_upper * tm[i] / m[i]).exp();
            bound - u0[i]
        })
        .collect();

    Ok(BoundFitReport {
        fitted_c_upper,
        fitted_c_lower,
        c1_envelope: env_hi,
        violations,
        margins,
    })
}

/// Exterior quadrature nodes and weights for ∫_{|z|>1} f(z) dz in the plane.
///
/// Polar coordinates with the inversion ρ = 1/s map the exterior to
/// s ∈ (0, 1) with measure ds/s³. For an order-α Poisson integrand the s
/// endpoints carry s^{α−1} and (1−s)^{−α/2} singularities; each half of the
/// interval gets the power substitution that removes its own endpoint
/// exactly (s = τ^{1/α} on the left, 1−s = u^{2/(2−α)} on the right),
/// followed by Gauss–Legendre. Angular integration uses 2·radial uniform
/// midpoints, spectrally accurate for the periodic integrand.
fn exterior_grid(alpha: f64, radial: usize) -> Vec<(Point, f64)> {
    let half = (radial / 2).max(4);
    let rule = beta_int::PowerRule::new(1.0, half);
    let angular = 2 * radial.max(4);
    let dtheta = 2.0 * std::f64::consts::PI / angular as f64;
    let mut s_nodes: Vec<(f64, f64)> = Vec::with_capacity(2 * half);
    let tau_max = 0.5f64.powf(alpha);
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let tau = tau_max * t;
        let s = tau.powf(1.0 / alpha);
        let jac = tau_max / alpha * tau.powf(1.0 / alpha - 1.0);
        s_nodes.push((s, w * jac));
    }
    let beta = 2.0 / (2.0 - alpha);
    let u_max = 0.5f64.powf(1.0 / beta);
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let u = u_max * t;
        // For α near 2 the grading exponent β is large and u^β can round to
        // zero; clamping keeps the node strictly exterior at negligible cost
        // since its weight carries the factor u^{β−1}.
        let s = (1.0 - u.powf(beta)).min(1.0 - 1e-12);
        let jac = u_max * beta * u.powf(beta - 1.0);
        s_nodes.push((s, w * jac));
    }
    let mut grid = Vec::with_capacity(s_nodes.len() * angular);
    for &(s, ws) in &s_nodes {
        let radial_weight = ws / (s * s * s) * dtheta;
        for a in 0..angular {
            let theta = dtheta * (a as f64 + 0.5);
            grid.push(([theta.cos() / s, theta.sin() / s], radial_weight));
        }
    }
    grid
}

/// Fits the Poisson-kernel envelope of the gauge:
/// u₁(x) ≤ C₃ ∫_{Ω^c} e^{C₄ E(x,z)} P(x,z) dz with
/// E(x,z) = ∫_Ω G(x,y) P(y,z)/P(x,z) dω(y), and the analogous lower bound.
///
/// `exterior_samples` sets the radial resolution of the exterior grid
/// (angular count is twice that). C₄ ranges over a fixed grid in [0, 4];
/// for each candidate the smallest valid C₃ is the sup of u₁/envelope, so
/// minimizing the log-spread of u₁/envelope over interior nodes picks the
/// C₄ whose envelope best matches the shape of u₁, and the same C₄ serves
/// the lower bound with prefactor inf u₁/envelope.
pub fn gauge_poisson_bounds(
    op: &SchrodingerOp,
    mesh: &Mesh,
    params: FracParams,
    gauge_report: &SolveReport,
    exterior_samples: usize,
) -> Result<GaugePoissonReport, VerifyError> {
    if mesh.domain != Domain::UnitDisk {
        return Err(VerifyError::DiskOnly);
    }
    if !gauge_report.converged {
        return Err(VerifyError::NotConverged);
    }
    let n = mesh.len();
    let grid = exterior_grid(params.alpha, exterior_samples);

    // Per exterior node z_k: p_k[i] = P(x_i, z_k) and
    // e_k[i] = (G (P(·,z_k)·ω))_i / p_k[i], the inner exponent.
    let columns: Vec<(Vec<f64>, Vec<f64>)> = grid
        .par_iter()
        .map(|&(z, _)| {
            let p: Vec<f64> = mesh
                .nodes
                .iter()
                .map(|&x| {
                    kernels::poisson_exact_ball(params, x, z)
                        .expect("grid nodes are exterior, mesh nodes interior")
                })
                .collect();
            let weighted: Vec<f64> = p
                .iter()
                .zip(op.omega().masses())
                .map(|(a, b)| a * b)
                .collect();
            let gpw = op
                .kernel()
                .apply(&weighted)
                .expect("dimensions agree by construction");
            let e: Vec<f64> = gpw.iter().zip(&p).map(|(g, p)| g / p).collect();
            (p, e)
        })
        .collect();

    let interior: Vec<usize> = (0..n)
        .filter(|&i| mesh.delta[i] >= INTERIOR_MARGIN)
        .collect();
    if interior.is_empty() {
        return Err(VerifyError::MarginExcludesAllNodes(INTERIOR_MARGIN));
    }

    let envelope = |c4: f64, i: usize| -> f64 {
        let mut sum = 0.0;
        for ((p, e), &(_, w)) in columns.iter().zip(&grid) {
            sum += w * (c4 * e[i]).exp() * p[i];
        }
        sum
    };

    // Spread of log(u₁/envelope) over interior nodes, as a function of C₄.
    let spread = |c4: f64| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &interior {
            let r = (gauge_report.values[i] / envelope(c4, i)).ln();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        hi - lo
    };

    const C4_STEPS: usize = 64;
    let mut best_c4 = 0.0;
    let mut best_spread = f64::INFINITY;
    for step in 0..=C4_STEPS {
        let c4 = 4.0 * step as f64 / C4_STEPS as f64;
        let s = spread(c4);
        if s < best_spread - 1e-12 {
            best_spread = s;
            best_c4 = c4;
        }
    }

    let mut log_lo = f64::INFINITY;
    let mut log_hi = f64::NEG_INFINITY;
    for &i in &interior {
        let r = (gauge_report.values[i] / envelope(best_c4, i)).ln();
        log_lo = log_lo.min(r);
        log_hi = log_hi.max(r);
    }
    let c3_upper = log_hi.exp();
    let c3_lower = log_lo.exp();

    let mut violations = 0usize;
    let margins: Vec<f64> = (0..n)
        .map(|i| c3_upper * envelope(best_c4, i) - gauge_report.values[i])
        .collect();
    for &i in &interior {
        if margins[i] < -1e-9 * gauge_report.values[i].abs() {
            violations += 1;
        }
    }

    Ok(GaugePoissonReport {
        c3_upper,
        c4: best_c4,
        c3_lower,
        violations,
        margins,
    })
}

/// Runs the divergent-gauge counterexample ω = φ dx on an already assembled
/// operator: interior means of the gauge terms T^k(Gω) for k < j, their
/// cumulative sums, and the discrete operator norm.
pub fn run_counterexample_on(
    op: &SchrodingerOp,
    j: usize,
) -> Result<CounterexampleReport, VerifyError> {
    let mesh = Arc::clone(op.kernel().mesh());
    let alpha = op.kernel().backend().params.alpha;
    let interior: Vec<usize> = (0..mesh.len())
        .filter(|&i| mesh.delta[i] >= INTERIOR_MARGIN)
        .collect();
    if interior.is_empty() {
        return Err(VerifyError::MarginExcludesAllNodes(INTERIOR_MARGIN));
    }
    let mean = |v: &[f64]| -> f64 {
        interior.iter().map(|&i| v[i]).sum::<f64>() / interior.len() as f64
    };

    let t_norm_estimate = match operator_norm(op, 1e-9, 5000) {
        Ok(q) => q,
        Err(OperatorError::NormNonConvergence { estimate, .. }) => estimate,
        Err(e) => return Err(e.into()),
    };

    let mut term = op.kernel().apply(op.omega().masses())?;
    let mut per_term_means = Vec::with_capacity(j);
    let mut partial_sum_means = Vec::with_capacity(j);
    let mut partial = 1.0;
    for k in 0..j {
        if k > 0 {
            term = op.apply_t(&term)?;
        }
        let m = mean(&term);
        partial += m;
        per_term_means.push(m);
        partial_sum_means.push(partial);
    }

    Ok(CounterexampleReport {
        alpha,
        in_theorem_range: alpha > 1.0 && alpha < 2.0,
        per_term_means,
        partial_sum_means,
        t_norm_estimate,
    })
}

/// Assembles the ω = φ dx counterexample on the given mesh and runs
/// [`run_counterexample_on`]. The divergence theorem assumes 1 < α < 2;
/// other orders are permitted for exploration and flagged in the report.
pub fn run_counterexample(
    params: FracParams,
    mesh: &Arc<Mesh>,
    mode: AMode,
    j: usize,
) -> Result<CounterexampleReport, VerifyError> {
    if mesh.domain != Domain::UnitDisk {
        return Err(VerifyError::DiskOnly);
    }
    let backend = KernelBackend::new(KernelKind::ExactBall, params, Domain::UnitDisk)?;
    let matrix = Arc::new(assemble_green_matrix(&backend, mesh)?);
    let omega = phi_measure(&backend, mesh, mode, PhiTarget::Operator)?;
    let op = SchrodingerOp::new(matrix, omega)?;
    run_counterexample_on(&op, j)
}

/// The Hardy-inequality constant
/// C₁(α, n) = α Γ((n+α)/2) / (2^{2−α} π^{(n−2)/2} Γ(1−α/2) Γ²((α+1)/2)),
/// valid for 1 < α < 2. It decays to zero as α → 2⁻ because Γ(1−α/2) blows
/// up, which is the quantitative form of the gauge-theorem failure at α = 2.
pub fn hardy_constant(alpha: f64, n: u32) -> Result<f64, VerifyError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(VerifyError::AlphaOutOfRange(alpha));
    }
    let nf = n as f64;
    let log_value = alpha.ln() + ln_gamma(0.5 * (nf + alpha))
        - (2.0 - alpha) * std::f64::consts::LN_2
        - 0.5 * (nf - 2.0) * std::f64::consts::PI.ln()
        - ln_gamma(1.0 - 0.5 * alpha)
        - 2.0 * ln_gamma(0.5 * (alpha + 1.0));
    Ok(log_value.exp())
}
