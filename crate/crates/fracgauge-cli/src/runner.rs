//! Builds the run context from a [`RunConfig`] and executes the solve,
//! gauge, and verify commands, writing their artifacts to the output
//! directory.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context as _};
use fracgauge::geometry::{build_mesh, Domain, Mesh};
use fracgauge::kernels::{AMode, FracParams, KernelBackend, KernelKind};
use fracgauge::operators::{
    fubini_check, gauge_with_norm, neumann_solve_with_norm, operator_norm, OperatorError,
    SchrodingerOp, SolveReport,
};
use fracgauge::quadrature::{
    assemble_green_matrix, calibrate_phi, discretize_atoms, discretize_density, matfree_apply,
    phi_measure, KernelMatrix, PhiTarget, WeightVector,
};
use fracgauge::sobolev::{coercivity_check, embedding_constant};
use fracgauge::verify::{
    check_gphi, check_green_equivalence, fit_exponential_bounds, hardy_constant,
    run_counterexample, INTERIOR_MARGIN,
};
use serde::Serialize;

use crate::config::{AModeSpec, DensityKind, DomainSpec, MeasureSpec, RunConfig};
use crate::report::{
    write_json, write_node_csv, write_term_csv, SolveArtifact, VerifyArtifact,
};

/// Largest node count the dense Green matrix path accepts.
pub const DENSE_NODE_CAP: usize = 20_000;

/// Sup-norm deviation of Gφ from 1 accepted by `verify --check gphi`.
const GPHI_TOLERANCE: f64 = 0.03;

/// Residual accepted by `verify --check fubini`.
const FUBINI_TOLERANCE: f64 = 1e-10;

/// Agreement required between the power-iteration norm and the Rayleigh
/// embedding constant in `verify --check tnorm`.
const TNORM_TOLERANCE: f64 = 1e-8;

/// Relative slack granted to the coercivity floor.
const COERCIVITY_SLACK: f64 = 0.05;

/// Power-iteration budget for the ‖T‖ estimate feeding solve tolerances.
/// The estimate only tunes the stopping threshold, so a truncated
/// iteration is acceptable where a verification-grade one is not.
const NORM_TOL: f64 = 1e-9;
const NORM_MAX_ITER: usize = 800;

/// Number of series terms tabulated by `verify --check counterexample`.
const COUNTEREXAMPLE_TERMS: usize = 20;

/// Exit status of a completed command: 0 on success, 2 when the
/// mathematics refused (series divergence or a failed verification).
pub type ExitStatus = u8;

/// Everything a command needs: parsed config, mesh, and kernel backend.
pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub params: FracParams,
    pub domain: Domain,
    pub mesh: Arc<Mesh>,
    pub backend: KernelBackend,
}

impl RunContext {
    /// Validates the config, builds the mesh, and resolves the output
    /// directory (flag override first, then config, then the working
    /// directory).
    pub fn new(config: RunConfig, out_override: Option<PathBuf>) -> anyhow::Result<Self> {
        config.validate()?;
        let domain = match config.domain {
            DomainSpec::UnitDisk => Domain::UnitDisk,
            DomainSpec::Box { bounds } => Domain::new_box([
                (bounds[0][0], bounds[0][1]),
                (bounds[1][0], bounds[1][1]),
            ])?,
        };
        let params = FracParams::new(config.alpha, 2)?;
        let kind = match domain {
            Domain::UnitDisk => KernelKind::ExactBall,
            Domain::Box { .. } => KernelKind::Model,
        };
        let backend = KernelBackend::new(kind, params, domain)?;
        let mesh = Arc::new(build_mesh(&domain, config.resolution)?);
        let out_dir = out_override
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(RunContext {
            config,
            out_dir,
            params,
            domain,
            mesh,
            backend,
        })
    }

    /// Resolves the configured normalization into a concrete [`AMode`],
    /// calibrating on this run's mesh when requested.
    fn phi_mode(&self, target: PhiTarget) -> anyhow::Result<AMode> {
        Ok(match self.config.a_mode {
            AModeSpec::Literature => AMode::Literature,
            AModeSpec::Calibrated => AMode::Calibrated {
                factor: calibrate_phi(&self.backend, &self.mesh, target)?,
            },
        })
    }

    /// Discretizes one configured measure onto the mesh. The φ density is
    /// built against the given target; other densities ignore it.
    fn measure(&self, spec: &MeasureSpec, target: PhiTarget) -> anyhow::Result<WeightVector> {
        let weights = match spec {
            MeasureSpec::Zero => WeightVector::zero(self.mesh.len()),
            MeasureSpec::Density { density, scale } => {
                let base = match density {
                    DensityKind::Phi => {
                        let mode = self.phi_mode(target)?;
                        phi_measure(&self.backend, &self.mesh, mode, target)?
                    }
                    DensityKind::Constant { c } => {
                        let c = *c;
                        discretize_density(&self.mesh, |_| c)?
                    }
                    DensityKind::RadialPoly { coeffs } => {
                        let center = self.domain.centroid();
                        let coeffs = coeffs.clone();
                        discretize_density(&self.mesh, |x| {
                            let r = (x[0] - center[0]).hypot(x[1] - center[1]);
                            coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c)
                        })?
                    }
                };
                scale_weights(&base, *scale)?
            }
            MeasureSpec::Atoms { atoms } => {
                let pairs: Vec<_> = atoms
                    .iter()
                    .map(|a| ([a.x, a.y], a.mass))
                    .collect();
                discretize_atoms(&self.mesh, &pairs)?
            }
        };
        Ok(weights)
    }

    /// Assembles the dense Green matrix and wraps it with ω. Refuses
    /// meshes too large for an in-memory matrix.
    fn operator(&self, omega: WeightVector) -> anyhow::Result<(Arc<KernelMatrix>, SchrodingerOp)> {
        if self.mesh.len() > DENSE_NODE_CAP {
            bail!(
                "mesh has {} nodes, above the dense-matrix cap of {}; lower the resolution",
                self.mesh.len(),
                DENSE_NODE_CAP
            );
        }
        let matrix = Arc::new(assemble_green_matrix(&self.backend, &self.mesh)?);
        let op = SchrodingerOp::new(Arc::clone(&matrix), omega)?;
        Ok((matrix, op))
    }

    /// Estimates ‖T‖ on a bounded budget; a truncated power iteration
    /// still returns its last Rayleigh quotient.
    fn norm_estimate(&self, op: &SchrodingerOp) -> anyhow::Result<f64> {
        match operator_norm(op, NORM_TOL, NORM_MAX_ITER) {
            Ok(q) => Ok(q),
            Err(OperatorError::NormNonConvergence { estimate, .. }) => Ok(estimate),
            Err(e) => Err(e.into()),
        }
    }
}

/// Returns γ·weights, rejecting non-finite results.
fn scale_weights(weights: &WeightVector, gamma: f64) -> anyhow::Result<WeightVector> {
    let masses: Vec<f64> = weights.masses().iter().map(|m| m * gamma).collect();
    Ok(WeightVector::new(masses)?)
}

/// Mean of `values` over nodes with δ ≥ [`INTERIOR_MARGIN`].
fn interior_mean(mesh: &Mesh, values: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &d) in values.iter().zip(&mesh.delta) {
        if d >= INTERIOR_MARGIN {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

fn inf(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Writes the solve artifacts and prints the one-line summary.
fn finish_solve(
    ctx: &RunContext,
    command: &str,
    csv_name: &str,
    report: &SolveReport,
) -> anyhow::Result<ExitStatus> {
    let exit: ExitStatus = if report.converged { 0 } else { 2 };
    let artifact = SolveArtifact {
        command,
        config: &ctx.config,
        nodes: ctx.mesh.len(),
        converged: report.converged,
        exit_code: exit,
        terms_used: report.terms_used,
        last_increment_sup: report.last_increment_sup,
        t_norm_estimate: report.t_norm_estimate,
        residual_sup: report.residual_sup,
        interior_mean: interior_mean(&ctx.mesh, &report.values).unwrap_or(f64::NAN),
        value_min: inf(&report.values),
        value_sup: sup(&report.values),
    };
    write_json(&ctx.out_dir.join("report.json"), &artifact)?;
    write_node_csv(
        &ctx.out_dir.join(csv_name),
        &ctx.mesh,
        &report.values,
        None,
        None,
    )?;
    println!(
        "{command}: converged={} terms={} norm={:.6} residual={:.3e} interior_mean={:.6}",
        report.converged,
        report.terms_used,
        report.t_norm_estimate,
        report.residual_sup,
        artifact.interior_mean,
    );
    Ok(exit)
}

/// `solve`: u = Gν + Tu by Neumann series.
pub fn cmd_solve(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    let nu = ctx.measure(&ctx.config.nu, PhiTarget::Potential)?;
    let (_matrix, op) = ctx.operator(omega)?;
    let q = ctx.norm_estimate(&op)?;
    let report = neumann_solve_with_norm(&op, &nu, ctx.config.tolerance, ctx.config.max_terms, q)?;
    finish_solve(ctx, "solve", "u0.csv", &report)
}

/// `gauge`: u₁ = 1 + 𝒢ω by the shifted series.
pub fn cmd_gauge(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    let (_matrix, op) = ctx.operator(omega)?;
    let q = ctx.norm_estimate(&op)?;
    let report = gauge_with_norm(&op, ctx.config.tolerance, ctx.config.max_terms, q)?;
    finish_solve(ctx, "gauge", "u1.csv", &report)
}

/// Which verification a `verify` invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    /// Sup deviation of the discrete Gφ from 1 on the interior.
    Gphi,
    /// Exact-ball kernel against the distance-product model, sampled.
    Equivalence,
    /// Exponential envelopes m·e^{c·Tm/m} around the solve.
    Bounds,
    /// ω = φ dx series terms and partial sums.
    Counterexample,
    /// Order-of-integration residual of the series tail.
    Fubini,
    /// Power-iteration norm against the Rayleigh embedding constant.
    Tnorm,
    /// Hardy constant table and its α → 2 collapse.
    Hardy,
    /// Quadratic-form floor E[u] + ∫u²dω ≥ (1 − β²)E[u].
    Coercivity,
}

impl Check {
    fn name(self) -> &'static str {
        match self {
            Check::Gphi => "gphi",
            Check::Equivalence => "equivalence",
            Check::Bounds => "bounds",
            Check::Counterexample => "counterexample",
            Check::Fubini => "fubini",
            Check::Tnorm => "tnorm",
            Check::Hardy => "hardy",
            Check::Coercivity => "coercivity",
        }
    }
}

/// Writes the verify artifact and prints the pass/fail line.
fn finish_verify<T: Serialize>(
    ctx: &RunContext,
    check: Check,
    pass: bool,
    summary: &str,
    detail: T,
) -> anyhow::Result<ExitStatus> {
    let artifact = VerifyArtifact {
        command: "verify",
        check: check.name(),
        config: &ctx.config,
        pass,
        detail,
    };
    write_json(&ctx.out_dir.join("report.json"), &artifact)?;
    println!(
        "verify {}: {} ({})",
        check.name(),
        if pass { "pass" } else { "FAIL" },
        summary
    );
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct GphiDetail {
    max_deviation: f64,
    tolerance: f64,
    interior_margin: f64,
}

fn verify_gphi(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let mode = ctx.phi_mode(PhiTarget::Potential)?;
    let deviation = check_gphi(
        ctx.params,
        &ctx.domain,
        &ctx.mesh,
        mode,
        INTERIOR_MARGIN,
    )?;
    let pass = deviation <= GPHI_TOLERANCE;
    finish_verify(
        ctx,
        Check::Gphi,
        pass,
        &format!("max |Gφ − 1| = {deviation:.3e} on δ ≥ {INTERIOR_MARGIN}"),
        GphiDetail {
            max_deviation: deviation,
            tolerance: GPHI_TOLERANCE,
            interior_margin: INTERIOR_MARGIN,
        },
    )
}

#[derive(Serialize)]
struct EquivalenceDetail {
    samples: usize,
    ratio_lo: f64,
    ratio_hi: f64,
    doubled_ratio_lo: f64,
    doubled_ratio_hi: f64,
    g1_over_m_lo: f64,
    g1_over_m_hi: f64,
}

fn verify_equivalence(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let samples = 10_000;
    let (lo, hi) = check_green_equivalence(ctx.params, &ctx.mesh, samples, ctx.config.seed)?;
    let (lo2, hi2) =
        check_green_equivalence(ctx.params, &ctx.mesh, 2 * samples, ctx.config.seed)?;
    let g1 = matfree_apply(&ctx.backend, &ctx.mesh, &ctx.mesh.cell_area)?;
    let alpha = ctx.params.alpha;
    let ratios: Vec<f64> = g1
        .iter()
        .zip(&ctx.mesh.delta)
        .map(|(g, d)| g / d.powf(0.5 * alpha))
        .collect();
    let (m_lo, m_hi) = (inf(&ratios), sup(&ratios));
    let pass = lo > 0.0
        && hi.is_finite()
        && hi2 <= 2.0 * hi
        && lo2 >= 0.5 * lo
        && m_lo > 0.0
        && m_hi.is_finite();
    finish_verify(
        ctx,
        Check::Equivalence,
        pass,
        &format!("G/model ∈ [{lo:.4}, {hi:.4}], G1/δ^(α/2) ∈ [{m_lo:.4}, {m_hi:.4}]"),
        EquivalenceDetail {
            samples,
            ratio_lo: lo,
            ratio_hi: hi,
            doubled_ratio_lo: lo2,
            doubled_ratio_hi: hi2,
            g1_over_m_lo: m_lo,
            g1_over_m_hi: m_hi,
        },
    )
}

#[derive(Serialize)]
struct BoundsDetail {
    converged: bool,
    fitted_c_upper: f64,
    fitted_c_lower: f64,
    c1_envelope: f64,
    violations: usize,
}

fn verify_bounds(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    let nu = ctx.measure(&ctx.config.nu, PhiTarget::Potential)?;
    let (_matrix, op) = ctx.operator(omega)?;
    let q = ctx.norm_estimate(&op)?;
    let solve = neumann_solve_with_norm(&op, &nu, ctx.config.tolerance, ctx.config.max_terms, q)?;
    if !solve.converged {
        return finish_verify(
            ctx,
            Check::Bounds,
            false,
            "series did not converge, no envelope fitted",
            BoundsDetail {
                converged: false,
                fitted_c_upper: f64::NAN,
                fitted_c_lower: f64::NAN,
                c1_envelope: f64::NAN,
                violations: usize::MAX,
            },
        );
    }
    let fit = fit_exponential_bounds(&op, &ctx.mesh, &solve)?;
    let bounds: Vec<f64> = solve
        .values
        .iter()
        .zip(&fit.margins)
        .map(|(u, m)| u + m)
        .collect();
    write_node_csv(
        &ctx.out_dir.join("u0.csv"),
        &ctx.mesh,
        &solve.values,
        Some(&bounds),
        Some(&fit.margins),
    )?;
    let pass = fit.violations == 0;
    finish_verify(
        ctx,
        Check::Bounds,
        pass,
        &format!(
            "C₁ = {:.4}, upper exponent {:.4}, lower exponent {:.4}, floor violations = {}",
            fit.c1_envelope, fit.fitted_c_upper, fit.fitted_c_lower, fit.violations
        ),
        BoundsDetail {
            converged: true,
            fitted_c_upper: fit.fitted_c_upper,
            fitted_c_lower: fit.fitted_c_lower,
            c1_envelope: fit.c1_envelope,
            violations: fit.violations,
        },
    )
}

fn verify_counterexample(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let mode = ctx.phi_mode(PhiTarget::Operator)?;
    let report = run_counterexample(ctx.params, &ctx.mesh, mode, COUNTEREXAMPLE_TERMS)?;
    write_term_csv(
        &ctx.out_dir.join("terms.csv"),
        &report.per_term_means,
        &report.partial_sum_means,
    )?;
    let pass = report.t_norm_estimate < 1.0;
    let summary = format!(
        "‖T‖ ≈ {:.4}, first/last term means {:.4}/{:.4}",
        report.t_norm_estimate,
        report.per_term_means.first().copied().unwrap_or(f64::NAN),
        report.per_term_means.last().copied().unwrap_or(f64::NAN),
    );
    finish_verify(ctx, Check::Counterexample, pass, &summary, report)
}

#[derive(Serialize)]
struct FubiniDetail {
    residual: f64,
    tolerance: f64,
}

fn verify_fubini(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    let (_matrix, op) = ctx.operator(omega)?;
    let lebesgue = discretize_density(&ctx.mesh, |_| 1.0)?;
    let residual = fubini_check(&op, &lebesgue, &lebesgue)?;
    let pass = residual <= FUBINI_TOLERANCE;
    finish_verify(
        ctx,
        Check::Fubini,
        pass,
        &format!("residual = {residual:.3e}"),
        FubiniDetail {
            residual,
            tolerance: FUBINI_TOLERANCE,
        },
    )
}

#[derive(Serialize)]
struct TnormDetail {
    power_iteration: f64,
    embedding_constant: f64,
    gap: f64,
}

fn verify_tnorm(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    if omega.total() == 0.0 {
        bail!("tnorm check needs a nonzero ω");
    }
    let (matrix, op) = ctx.operator(omega.clone())?;
    let power = match operator_norm(&op, 1e-12, 20_000) {
        Ok(q) => q,
        Err(OperatorError::NormNonConvergence { estimate, .. }) => estimate,
        Err(e) => return Err(e.into()),
    };
    let rayleigh = embedding_constant(&matrix, &omega)?;
    let gap = (power - rayleigh).abs();
    let pass = gap <= TNORM_TOLERANCE;
    finish_verify(
        ctx,
        Check::Tnorm,
        pass,
        &format!("power {power:.10} vs Rayleigh {rayleigh:.10}, gap {gap:.3e}"),
        TnormDetail {
            power_iteration: power,
            embedding_constant: rayleigh,
            gap,
        },
    )
}

#[derive(Serialize)]
struct HardyDetail {
    alphas: Vec<f64>,
    constants: Vec<f64>,
    collapse_ratio: f64,
}

fn verify_hardy(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let alphas = [1.1, 1.3, 1.5, 1.7, 1.9, 1.99, 1.9999];
    let mut constants = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        constants.push(hardy_constant(a, 2)?);
    }
    let tail = &constants[2..6];
    let monotone = tail.windows(2).all(|w| w[1] < w[0]);
    let collapse_ratio = constants[6] / constants[4];
    let pass = monotone && collapse_ratio < 0.1 && constants.iter().all(|c| c.is_finite());
    finish_verify(
        ctx,
        Check::Hardy,
        pass,
        &format!(
            "C₁(1.5) = {:.4}, C₁(1.9999)/C₁(1.9) = {collapse_ratio:.3e}",
            constants[2]
        ),
        HardyDetail {
            alphas: alphas.to_vec(),
            constants,
            collapse_ratio,
        },
    )
}

#[derive(Serialize)]
struct CoercivityDetail {
    converged: bool,
    beta_sq: f64,
    b_value: f64,
    lower: f64,
    slack: f64,
}

fn verify_coercivity(ctx: &RunContext) -> anyhow::Result<ExitStatus> {
    let omega = ctx.measure(&ctx.config.omega, PhiTarget::Operator)?;
    let nu = ctx.measure(&ctx.config.nu, PhiTarget::Potential)?;
    let (matrix, op) = ctx.operator(omega.clone())?;
    let q = ctx.norm_estimate(&op)?;
    let solve = neumann_solve_with_norm(&op, &nu, ctx.config.tolerance, ctx.config.max_terms, q)?;
    if !solve.converged {
        return finish_verify(
            ctx,
            Check::Coercivity,
            false,
            "series did not converge, no form evaluated",
            CoercivityDetail {
                converged: false,
                beta_sq: f64::NAN,
                b_value: f64::NAN,
                lower: f64::NAN,
                slack: f64::NAN,
            },
        );
    }
    let beta_sq = if omega.total() == 0.0 {
        0.0
    } else {
        embedding_constant(&matrix, &omega)?
    };
    let mode = ctx.phi_mode(PhiTarget::Potential)?;
    let (b_value, lower) = coercivity_check(
        ctx.params,
        &ctx.domain,
        &ctx.mesh,
        &omega,
        &solve.values,
        mode,
        beta_sq,
    )?;
    let slack = COERCIVITY_SLACK * b_value.abs().max(lower.abs());
    let pass = b_value >= lower - slack;
    finish_verify(
        ctx,
        Check::Coercivity,
        pass,
        &format!("B[u,u] = {b_value:.6e} ≥ (1 − β²)·E = {lower:.6e} − {slack:.1e}"),
        CoercivityDetail {
            converged: true,
            beta_sq,
            b_value,
            lower,
            slack,
        },
    )
}

/// `verify`: dispatch on the requested check.
pub fn cmd_verify(ctx: &RunContext, check: Check) -> anyhow::Result<ExitStatus> {
    match check {
        Check::Gphi => verify_gphi(ctx),
        Check::Equivalence => verify_equivalence(ctx),
        Check::Bounds => verify_bounds(ctx),
        Check::Counterexample => verify_counterexample(ctx),
        Check::Fubini => verify_fubini(ctx),
        Check::Tnorm => verify_tnorm(ctx),
        Check::Hardy => verify_hardy(ctx),
        Check::Coercivity => verify_coercivity(ctx),
    }
}
