//! Measure discretization and Green-matrix assembly.
//!
//! Measures become [`WeightVector`]s: densities sample at nodes and multiply
//! by cell areas, atoms snap to the nearest node with masses summed on
//! collision. [`assemble_green_matrix`] builds the dense symmetric kernel
//! matrix with a closed-form treatment of the diagonal singularity, and
//! [`matfree_apply`] applies the same matrix without storing it, for meshes
//! too large to hold densely.
//!
//! All parallel paths are bitwise independent of the thread count: work is
//! split into fixed units whose results are combined in a fixed sequential
//! order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Domain, Mesh};
use crate::kernels::{a_literature, a_value, beta_int, phi, AMode, KernelBackend, KernelError};
use crate::Point;

/// Number of row groups used by the block-parallel paths. Fixed so the
/// grouping, and therefore the floating-point summation order, never depends
/// on the thread count.
const ROW_GROUPS: usize = 256;

/// Errors from discretization, assembly, and matrix application.
#[derive(Error, Debug)]
pub enum QuadratureError {
    /// Densities must be nonnegative at every node.
    #[error("density is negative at node {index}: {value}")]
    NegativeDensity { index: usize, value: f64 },
    /// Masses and densities must be finite.
    #[error("non-finite weight at node {index}")]
    NonFiniteWeight { index: usize },
    /// Atom masses must be nonnegative.
    #[error("atom mass {0} is negative")]
    NegativeAtomMass(f64),
    /// Vector lengths must agree with the mesh or matrix dimension.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    /// The binary dump does not match the expected dimension.
    #[error("binary matrix dump holds n = {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    /// Kernel evaluation failures (backend/domain mismatch and the like).
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// I/O failures while dumping or loading a matrix.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A discretized nonnegative measure: one mass per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    masses: Vec<f64>,
}

impl WeightVector {
    /// Wraps per-node masses, validating that all are finite and ≥ 0.
    pub fn new(masses: Vec<f64>) -> Result<Self, QuadratureError> {
        for (index, &m) in masses.iter().enumerate() {
            if !m.is_finite() {
                return Err(QuadratureError::NonFiniteWeight { index });
            }
            if m < 0.0 {
                return Err(QuadratureError::NegativeDensity { index, value: m });
            }
        }
        Ok(WeightVector { masses })
    }

    /// The zero measure on `n` nodes.
    pub fn zero(n: usize) -> Self {
        WeightVector {
            masses: vec![0.0; n],
        }
    }

    /// Per-node masses.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    /// True when no nodes carry mass slots.
    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Total mass Σ m_i.
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Discretizes a density against the mesh: mass_i = density(node_i)·area_i.
pub fn discretize_density<F>(mesh: &Mesh, density: F) -> Result<WeightVector, QuadratureError>
where
    F: Fn(Point) -> f64,
{
    let mut masses = Vec::with_capacity(mesh.len());
    for (index, (&node, &area)) in mesh.nodes.iter().zip(&mesh.cell_area).enumerate() {
        let value = density(node);
        if !value.is_finite() {
            return Err(QuadratureError::NonFiniteWeight { index });
        }
        if value < 0.0 {
            return Err(QuadratureError::NegativeDensity { index, value });
        }
        masses.push(value * area);
    }
    WeightVector::new(masses)
}

/// Discretizes a finite atomic measure: each atom snaps to its nearest node
/// and masses sum on collision.
pub fn discretize_atoms(
    mesh: &Mesh,
    atoms: &[(Point, f64)],
) -> Result<WeightVector, QuadratureError> {
    let mut masses = vec![0.0; mesh.len()];
    for &(location, mass) in atoms {
        if !mass.is_finite() {
            return Err(QuadratureError::NonFiniteWeight { index: 0 });
        }
        if mass < 0.0 {
            return Err(QuadratureError::NegativeAtomMass(mass));
        }
        masses[mesh.nearest_node(location)] += mass;
    }
    WeightVector::new(masses)
}

/// Σ values_i · mass_i.
pub fn integrate(values: &[f64], weights: &WeightVector) -> Result<f64, QuadratureError> {
    if values.len() != weights.len() {
        return Err(QuadratureError::LengthMismatch {
            expected: weights.len(),
            got: values.len(),
        });
    }
    Ok(values
        .iter()
        .zip(weights.masses())
        .map(|(v, m)| v * m)
        .sum())
}

/// Dense symmetric Green matrix over mesh nodes.
///
/// Off-diagonal entries are pointwise kernel values; the diagonal is the
/// cell-averaged kernel via the closed-form polar integral of the |x−y|^{α−n}
/// singularity with the smooth remainder frozen at its coincidence value.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
    backend: KernelBackend,
    mesh: Arc<Mesh>,
}

impl KernelMatrix {
    /// Matrix dimension (number of mesh nodes).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry (i, j).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Row i as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// All entries, row-major.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// The mesh the matrix was assembled on.
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// The kernel backend the matrix was assembled from.
    pub fn backend(&self) -> &KernelBackend {
        &self.backend
    }

    /// Dense matrix–vector product, parallel over rows with sequential
    /// per-row dot products, so the result is thread-count independent.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, QuadratureError> {
        if v.len() != self.n {
            return Err(QuadratureError::LengthMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        Ok(self
            .entries
            .par_chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Dumps the matrix as n (u64 little-endian) followed by row-major
    /// entries (f64 little-endian).
    pub fn write_binary(&self, path: &Path) -> Result<(), QuadratureError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for &e in &self.entries {
            out.write_all(&e.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a matrix dumped by [`Self::write_binary`], validating the
    /// dimension against the mesh.
    pub fn read_binary(
        path: &Path,
        backend: KernelBackend,
        mesh: Arc<Mesh>,
    ) -> Result<Self, QuadratureError> {
        let file = std::fs::File::open(path)?;
        let mut input = std::io::BufReader::new(file);
        let mut header = [0u8; 8];
        input.read_exact(&mut header)?;
        let found = u64::from_le_bytes(header) as usize;
        if found != mesh.len() {
            return Err(QuadratureError::DimensionMismatch {
                expected: mesh.len(),
                found,
            });
        }
        let mut entries = vec![0.0f64; found * found];
        let mut buf = [0u8; 8];
        for e in entries.iter_mut() {
            input.read_exact(&mut buf)?;
            *e = f64::from_le_bytes(buf);
        }
        Ok(KernelMatrix {
            n: found,
            entries,
            backend,
            mesh,
        })
    }
}

/// ∫₀^{π/4} sec^α θ dθ by 32-point Gauss–Legendre; the integrand is analytic
/// on the interval.
fn secant_integral(alpha: f64) -> f64 {
    let rule = beta_int::PowerRule::new(1.0, 32);
    let quarter_pi = std::f64::consts::FRAC_PI_4;
    quarter_pi * rule.apply_unit(|u| (quarter_pi * u).cos().powf(-alpha))
}

/// Cell-averaged diagonal kernel value.
///
/// Within the self-cell G(x, y) ≈ ρ·|x−y|^{α−n} with ρ the coincidence
/// factor; the polar integral of |y−x|^{α−2} over a side-s square around x
/// is (2^{3−α} s^α / α) ∫₀^{π/4} sec^α θ dθ per the eightfold symmetry.
/// Dividing by the cell area s² gives a value independent of boundary
/// clipping, since the clipped area scales numerator and denominator alike.
fn diagonal_entry(backend: &KernelBackend, side: f64) -> f64 {
    let alpha = backend.params.alpha;
    let singular = 2.0f64.powf(3.0 - alpha) / alpha * side.powf(alpha - 2.0)
        * secant_integral(alpha);
    backend.coincidence_factor() * singular
}

/// Assembles the dense Green matrix.
///
/// The strict upper triangle is computed row-parallel (entry (i, j) depends
/// only on the two nodes, so the result is thread-count independent), the
/// diagonal uses the closed-form cell average, and a sequential pass mirrors
/// the upper triangle down.
pub fn assemble_green_matrix(
    backend: &KernelBackend,
    mesh: &Arc<Mesh>,
) -> Result<KernelMatrix, QuadratureError> {
    let n = mesh.len();
    let diag = diagonal_entry(backend, mesh.side);
    let mut entries = vec![0.0f64; n * n];
    let worker = |(i, row): (usize, &mut [f64])| {
        row[i] = diag;
        for j in i + 1..n {
            row[j] = backend
                .green(mesh.nodes[i], mesh.nodes[j])
                .expect("mesh nodes are interior and distinct");
        }
    };
    entries
        .par_chunks_mut(n)
        .enumerate()
        .for_each(worker);
    for i in 1..n {
        for j in 0..i {
            entries[i * n + j] = entries[j * n + i];
        }
    }
    Ok(KernelMatrix {
        n,
        entries,
        backend: backend.clone(),
        mesh: Arc::clone(mesh),
    })
}

/// One column of the Green matrix (diagonal entry included), without
/// assembling the rest. Useful when a measure charges only a few nodes.
pub fn green_column(
    backend: &KernelBackend,
    mesh: &Mesh,
    j: usize,
) -> Result<Vec<f64>, QuadratureError> {
    let diag = diagonal_entry(backend, mesh.side);
    let y = mesh.nodes[j];
    (0..mesh.len())
        .into_par_iter()
        .map(|i| {
            if i == j {
                Ok(diag)
            } else {
                Ok(backend.green(mesh.nodes[i], y)?)
            }
        })
        .collect()
}

/// Matrix-free product of the Green matrix with `v`.
///
/// Rows are dealt round-robin into [`ROW_GROUPS`] fixed groups. Each group
/// walks its rows' upper-triangle pairs once, scattering k·v_j and k·v_i
/// into a group-local accumulator, and the accumulators are summed in fixed
/// group order. This halves the kernel evaluations relative to a full sweep
/// and keeps the summation order, hence the result bits, independent of the
/// thread count.
pub fn matfree_apply(
    backend: &KernelBackend,
    mesh: &Mesh,
    v: &[f64],
) -> Result<Vec<f64>, QuadratureError> {
    let n = mesh.len();
    if v.len() != n {
        return Err(QuadratureError::LengthMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let diag = diagonal_entry(backend, mesh.side);
    let groups: Vec<Vec<f64>> = (0..ROW_GROUPS.min(n))
        .into_par_iter()
        .map(|g| {
            let mut acc = vec![0.0f64; n];
            let mut i = g;
            while i < n {
                let xi = mesh.nodes[i];
                acc[i] += diag * v[i];
                for j in i + 1..n {
                    let k = backend
                        .green(xi, mesh.nodes[j])
                        .expect("mesh nodes are interior and distinct");
                    acc[i] += k * v[j];
                    acc[j] += k * v[i];
                }
                i += ROW_GROUPS.min(n);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0f64; n];
    for acc in groups {
        for (o, a) in out.iter_mut().zip(&acc) {
            *o += a;
        }
    }
    Ok(out)
}

/// Subdivisions per axis when integrating φ over a boundary-zone cell.
const PHI_SUBGRID: u32 = 16;

/// Cells closer to the boundary than this many sides (or clipped by it) are
/// integrated with the subgrid instead of the midpoint rule.
const PHI_NEAR_FACTOR: f64 = 2.0;

/// Number of candidate truncation depths for the operator-target φ measure.
const PHI_CUT_STEPS: usize = 24;

/// Candidate truncation depths, shallowest first, from zero to half a side.
///
/// The weighted boundary-layer mass below depth t grows like t^{1−α/2}, so
/// uniform or dyadic depths would concentrate nearly all of the removable
/// mass in the first step once α is large. Grading the depths as
/// (k/K)^{1/(1−α/2)} makes successive cuts shed roughly equal mass
/// fractions at every α, which is what the contraction search needs to land
/// just under its bound instead of overshooting.
fn cut_ladder(alpha: f64, side: f64) -> Vec<f64> {
    let q = 1.0 - 0.5 * alpha;
    (0..=PHI_CUT_STEPS)
        .map(|k| 0.5 * side * (k as f64 / PHI_CUT_STEPS as f64).powf(1.0 / q))
        .collect()
}

/// A truncation depth is accepted once the calibrated operator's spectral
/// radius is certified to be at most 1 minus this margin.
const PHI_CERT_MARGIN: f64 = 1e-4;

/// Iteration cap for the Collatz–Wielandt certification.
const PHI_CERT_ITERS: usize = 96;

/// Largest node count for which the certification assembles a dense matrix.
/// Above it no dense operator can be built from the measure either, so the
/// operator target falls back to the deepest ladder cut.
const PHI_CERT_DENSE_CAP: usize = 20_000;

/// What the discretized φ measure will be used for.
///
/// Both targets share one quadrature; they differ only in how much of the
/// boundary layer the weights keep. A single application G·ω tolerates the
/// full layer, but under iteration the coincidence-rule diagonal overweights
/// the innermost cells, so weights meant for a Neumann operator must shed
/// enough of the layer to stay a strict contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiTarget {
    /// Keep the full boundary layer: most accurate potentials and
    /// calibration factors.
    Potential,
    /// Truncate the boundary layer by the shallowest ladder depth at which
    /// the calibrated operator is certified to have spectral radius < 1.
    Operator,
}

/// A boundary-zone quadrature sample: the subpoint's boundary distance δ and
/// its contribution to ∫ δ(y)^{α/2} φ(y) dy at the literature normalization.
/// Dividing by the receiving node's δ^{α/2} turns samples into cell masses.
type PhiSample = (f64, f64);

/// Projections of a square cell of side `width` centred at p onto the local
/// boundary normal: the two per-axis widths (smaller first), whose sum is
/// the cell's δ-span. Exact for the disk's radial distance (normal = p/|p|)
/// and for box faces (normal along one axis).
fn normal_widths(domain: &Domain, p: Point, width: f64) -> (f64, f64) {
    match domain {
        Domain::UnitDisk => {
            let r = p[0].hypot(p[1]);
            if r == 0.0 {
                (0.0, width)
            } else {
                let a = width * p[0].abs() / r;
                let b = width * p[1].abs() / r;
                (a.min(b), a.max(b))
            }
        }
        Domain::Box { .. } => (0.0, width),
    }
}

/// ∫ δ(y)^{α/2} φ(y) dy over one square cell, from the local coefficient
/// `coeff` = φ·δ^α of the profile φ ∝ δ^{−α}, the signed boundary distance
/// of the cell midpoint, and the exact distribution of δ over the square.
///
/// Under a locally linear boundary, δ over a square is the sum of two
/// independent uniform spreads of widths a1 ≤ a2 (the square's projections
/// onto the normal), so cell area per unit δ follows a trapezoid: ramps of
/// width a1 at both ends of the span, a plateau between. Integrating
/// t^{−α/2} against that trapezoid, clipped at the boundary t = 0, is
/// elementary piecewise power integration. The weighted integrand is
/// integrable for every α ∈ (0, 2), so the value stays finite even for
/// cells straddling the boundary, where the plain mass ∫ φ diverges once
/// α ≥ 1; a negative `delta_signed` integrates just the interior sliver of
/// an exterior-midpoint cell. For δ ≫ span the value reduces to
/// φ(p)·δ(p)^{α/2}·area.
fn weighted_cell_integral(
    alpha: f64,
    coeff: f64,
    delta_signed: f64,
    a1: f64,
    a2: f64,
    area: f64,
) -> f64 {
    let q = 1.0 - 0.5 * alpha;
    let p0 = |t: f64| t.powf(q) / q;
    let p1 = |t: f64| t.powf(q + 1.0) / (q + 1.0);
    let t0 = delta_signed - 0.5 * (a1 + a2);
    let t1 = t0 + a1;
    let t2 = t0 + a2;
    let t3 = t0 + a1 + a2;
    if t3 <= 0.0 {
        return 0.0;
    }
    // ∫ t^{−α/2} dens(t − t0) dt with dens the unit-mass trapezoid, each
    // piece clipped to t ≥ 0.
    let profile = if a1 <= f64::EPSILON * a2 {
        let lo = t0.max(0.0);
        (p0(t3) - p0(lo)) / a2
    } else {
        let mut acc = 0.0;
        if t1 > 0.0 {
            let lo = t0.max(0.0);
            acc += (p1(t1) - p1(lo) - t0 * (p0(t1) - p0(lo))) / (a1 * a2);
        }
        if t2 > 0.0 {
            let lo = t1.max(0.0);
            acc += (p0(t2) - p0(lo)) / a2;
        }
        {
            let lo = t2.max(0.0);
            acc += (t3 * (p0(t3) - p0(lo)) - (p1(t3) - p1(lo))) / (a1 * a2);
        }
        acc
    };
    coeff * area * profile
}

/// Signed boundary distance: positive inside the domain, negative outside.
/// Outside a box corner the per-axis minimum understates the true distance,
/// which only matters for slivers of vanishing measure.
fn signed_delta(domain: &Domain, p: Point) -> f64 {
    match domain {
        Domain::UnitDisk => 1.0 - p[0].hypot(p[1]),
        Domain::Box { bounds } => {
            let mx = (p[0] - bounds[0].0).min(bounds[0].1 - p[0]);
            let my = (p[1] - bounds[1].0).min(bounds[1].1 - p[1]);
            mx.min(my)
        }
    }
}

/// Interior point at boundary distance `depth` on the inward normal through
/// p, used to evaluate the profile coefficient for exterior-midpoint cells.
fn inward_point(domain: &Domain, p: Point, depth: f64) -> Point {
    match domain {
        Domain::UnitDisk => {
            let r = p[0].hypot(p[1]);
            if r == 0.0 {
                p
            } else {
                let s = (1.0 - depth) / r;
                [p[0] * s, p[1] * s]
            }
        }
        Domain::Box { bounds } => {
            let pull = |coord: f64, (lo, hi): (f64, f64)| coord.clamp(lo + depth, hi - depth);
            [pull(p[0], bounds[0]), pull(p[1], bounds[1])]
        }
    }
}

/// Collatz–Wielandt certificate that the operator u ↦ G((c·u)·masses) with
/// c = 1/(G masses)(center) — the calibrated operator built from these
/// weights — has spectral radius at most 1 − [`PHI_CERT_MARGIN`].
///
/// For an entrywise-positive matrix T and positive vector v,
/// min_i (Tv)_i/v_i ≤ ρ(T) ≤ max_i (Tv)_i/v_i, and both bounds tighten as v
/// is replaced by Tv. A `true` is rigorous up to roundoff; a `false` may be
/// conservative when the iteration cap runs out first.
fn certify_contraction(
    matrix: &KernelMatrix,
    masses: &[f64],
    center: usize,
) -> Result<bool, QuadratureError> {
    let bound = 1.0 - PHI_CERT_MARGIN;
    let potential = matrix.apply(masses)?;
    if !(potential[center].is_finite() && potential[center] > 0.0) {
        return Ok(false);
    }
    let c = 1.0 / potential[center];
    let n = masses.len();
    let mut v = vec![1.0f64; n];
    let mut tv: Vec<f64> = potential.iter().map(|s| s * c).collect();
    for _ in 0..PHI_CERT_ITERS {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let ratio = tv[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if !hi.is_finite() {
            return Ok(false);
        }
        if hi <= bound {
            return Ok(true);
        }
        if lo >= bound {
            return Ok(false);
        }
        let peak = tv.iter().cloned().fold(0.0f64, f64::max);
        for i in 0..n {
            v[i] = tv[i] / peak;
        }
        let weighted: Vec<f64> = (0..n).map(|i| v[i] * masses[i] * c).collect();
        tv = matrix.apply(&weighted)?;
    }
    Ok(false)
}

/// Discretizes the measure φ dx on a mesh.
///
/// Every cell mass is the δ^{α/2}-weighted integral
/// ∫ (δ(y)/δ_node)^{α/2} φ(y) dy, with the profile φ ∝ δ^{−α} integrated
/// exactly across the cell's δ-distribution ([`weighted_cell_integral`]). The
/// weight is the boundary decay of the Green kernel, G(x, ·) ≍ δ^{α/2} near
/// ∂Ω, so lumping a cell's weighted mass at its node reproduces
/// ∫ G(x, y) φ(y) dy cell-exactly to leading order, and the masses stay
/// finite for every α ∈ (0, 2) even though φ dx itself has infinite mass
/// near the boundary once α ≥ 1. Cells at depth ≥ two sides take a single
/// node sample; boundary-zone cells are resolved with a midpoint subgrid.
/// Lattice cells dropped by the mesh but still overlapping the domain
/// contribute their samples to the node of the nearest kept cell, so the
/// measure covers the whole domain rather than just the union of kept
/// cells.
///
/// The `target` selects how much of the boundary layer the weights keep.
/// [`PhiTarget::Potential`] keeps all of it. [`PhiTarget::Operator`] drops
/// samples below a truncation depth chosen as the shallowest entry of
/// [`cut_ladder`] whose calibrated operator passes [`certify_contraction`];
/// the depth is selected at the literature normalization, where the
/// calibration scalar cancels, so it never depends on `mode`, and `mode`
/// only rescales the output masses on a fixed support.
pub fn phi_measure(
    backend: &KernelBackend,
    mesh: &Mesh,
    mode: AMode,
    target: PhiTarget,
) -> Result<WeightVector, QuadratureError> {
    let params = backend.params;
    let alpha = params.alpha;
    let domain = mesh.domain;
    let side = mesh.side;
    let subside = side / f64::from(PHI_SUBGRID);
    let subarea = subside * subside;
    let bbox = domain.bounding_box();
    let cell_index = |p: Point| -> (i64, i64) {
        (
            ((p[0] - bbox[0].0) / side).floor() as i64,
            ((p[1] - bbox[1].0) / side).floor() as i64,
        )
    };
    let mut kept: HashMap<(i64, i64), usize> = HashMap::with_capacity(mesh.len());
    for (j, &node) in mesh.nodes.iter().enumerate() {
        kept.insert(cell_index(node), j);
    }

    // Deep cells: one node sample through the exact normal profile.
    // Boundary-zone cells: collected for the subgrid.
    let mut deep_masses = vec![0.0f64; mesh.len()];
    let mut near: Vec<usize> = Vec::new();
    for j in 0..mesh.len() {
        if mesh.delta[j] >= PHI_NEAR_FACTOR * side {
            let node = mesh.nodes[j];
            let f = phi(params, &domain, node, AMode::Literature)?;
            let coeff = f * mesh.delta[j].powf(alpha);
            let (a1, a2) = normal_widths(&domain, node, side);
            let weighted =
                weighted_cell_integral(alpha, coeff, mesh.delta[j], a1, a2, mesh.cell_area[j]);
            deep_masses[j] = weighted / mesh.delta[j].powf(0.5 * alpha);
        } else {
            near.push(j);
        }
    }

    // Subgrid over the cell anchored at `corner`, appending one weighted
    // sample per subcell meeting the domain. Exterior-midpoint subcells
    // contribute their interior sliver, with the profile coefficient read at
    // the sliver's mid-depth on the inward normal.
    let sample_cell = |corner: Point, out: &mut Vec<PhiSample>| {
        for sy in 0..PHI_SUBGRID {
            for sx in 0..PHI_SUBGRID {
                let p = [
                    corner[0] + (f64::from(sx) + 0.5) * subside,
                    corner[1] + (f64::from(sy) + 0.5) * subside,
                ];
                let ds = signed_delta(&domain, p);
                let (a1, a2) = normal_widths(&domain, p, subside);
                let span = a1 + a2;
                let t3 = ds + 0.5 * span;
                if t3 <= 0.0 {
                    continue;
                }
                let coeff = if ds > 0.0 {
                    let f = phi(params, &domain, p, AMode::Literature)
                        .expect("subpoint is interior");
                    f * ds.powf(alpha)
                } else {
                    let depth = 0.5 * t3;
                    let pe = inward_point(&domain, p, depth);
                    let f = phi(params, &domain, pe, AMode::Literature)
                        .expect("inward point is interior");
                    f * depth.powf(alpha)
                };
                let d = 0.5 * ((ds - 0.5 * span).max(0.0) + t3);
                out.push((d, weighted_cell_integral(alpha, coeff, ds, a1, a2, subarea)));
            }
        }
    };

    let mut samples: Vec<Vec<PhiSample>> = vec![Vec::new(); mesh.len()];
    let near_samples: Vec<(usize, Vec<PhiSample>)> = near
        .par_iter()
        .map(|&j| {
            let node = mesh.nodes[j];
            let corner = [node[0] - 0.5 * side, node[1] - 0.5 * side];
            let mut cell = Vec::new();
            sample_cell(corner, &mut cell);
            (j, cell)
        })
        .collect();
    for (j, cell) in near_samples {
        samples[j] = cell;
    }

    // Dropped lattice cells overlapping the domain: integrate and hand the
    // samples to the node of the nearest kept cell, scanning a fixed
    // neighborhood in row-major order so the receiver is deterministic.
    let nx = ((bbox[0].1 - bbox[0].0) / side).ceil() as i64;
    let ny = ((bbox[1].1 - bbox[1].0) / side).ceil() as i64;
    let sliver_cells: Vec<(i64, i64)> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .filter(|key| !kept.contains_key(key))
        .collect();
    let sliver_samples: Vec<(usize, Vec<PhiSample>)> = sliver_cells
        .par_iter()
        .filter_map(|&(ix, iy)| {
            let corner = [
                bbox[0].0 + ix as f64 * side,
                bbox[1].0 + iy as f64 * side,
            ];
            let mut cell = Vec::new();
            sample_cell(corner, &mut cell);
            if cell.is_empty() {
                return None;
            }
            let center = [corner[0] + 0.5 * side, corner[1] + 0.5 * side];
            let mut receiver: Option<(f64, usize)> = None;
            for dy in -3i64..=3 {
                for dx in -3i64..=3 {
                    if let Some(&j) = kept.get(&(ix + dx, iy + dy)) {
                        let node = mesh.nodes[j];
                        let d2 = (node[0] - center[0]).powi(2)
                            + (node[1] - center[1]).powi(2);
                        if receiver.map_or(true, |(best, _)| d2 < best) {
                            receiver = Some((d2, j));
                        }
                    }
                }
            }
            let j = receiver
                .map(|(_, j)| j)
                .unwrap_or_else(|| mesh.nearest_node(center));
            Some((j, cell))
        })
        .collect();
    for (j, cell) in sliver_samples {
        samples[j].extend(cell);
    }

    let masses_at = |cut_depth: f64| -> Vec<f64> {
        (0..mesh.len())
            .map(|j| {
                let weighted: f64 = samples[j]
                    .iter()
                    .filter(|(d, _)| *d >= cut_depth)
                    .map(|(_, v)| v)
                    .sum();
                deep_masses[j] + weighted / mesh.delta[j].powf(0.5 * alpha)
            })
            .collect()
    };

    let ladder = cut_ladder(alpha, side);
    let deepest = *ladder.last().expect("ladder is nonempty");
    let depth = match target {
        PhiTarget::Potential => 0.0,
        PhiTarget::Operator if mesh.len() > PHI_CERT_DENSE_CAP => deepest,
        PhiTarget::Operator => {
            let matrix = assemble_green_matrix(backend, &Arc::new(mesh.clone()))?;
            let center = mesh.nearest_node(domain.centroid());
            let mut chosen = deepest;
            for &cut in &ladder {
                if certify_contraction(&matrix, &masses_at(cut), center)? {
                    chosen = cut;
                    break;
                }
            }
            chosen
        }
    };

    let scale = a_value(params, mode) / a_literature(params);
    let masses: Vec<f64> = masses_at(depth).into_iter().map(|m| m * scale).collect();
    WeightVector::new(masses)
}

/// Calibration factor for the exterior density φ on a given mesh.
///
/// Returns c such that the discretized Green potential of the measure built
/// from c·φ_literature (see [`phi_measure`], with the given target) equals 1
/// exactly at the node nearest the domain centroid. The potential is
/// evaluated matrix-free, so calibration works at any mesh size.
pub fn calibrate_phi(
    backend: &KernelBackend,
    mesh: &Mesh,
    target: PhiTarget,
) -> Result<f64, QuadratureError> {
    let weights = phi_measure(backend, mesh, AMode::Literature, target)?;
    let potential = matfree_apply(backend, mesh, weights.masses())?;
    let center = mesh.nearest_node(backend.domain.centroid());
    Ok(1.0 / potential[center])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain};
    use crate::kernels::{AMode, FracParams, KernelKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn disk_backend(alpha: f64, kind: KernelKind) -> KernelBackend {
        KernelBackend::new(kind, FracParams::new(alpha, 2).unwrap(), Domain::UnitDisk).unwrap()
    }

    fn small_disk() -> Arc<Mesh> {
        Arc::new(build_mesh(&Domain::UnitDisk, 8).unwrap())
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.0, 1.5, 2.0]).is_ok());
        assert!(WeightVector::new(vec![0.0, -1e-30]).is_err());
        assert!(WeightVector::new(vec![f64::NAN]).is_err());
        assert!(WeightVector::new(vec![f64::INFINITY]).is_err());
        assert_eq!(WeightVector::zero(4).total(), 0.0);
    }

    #[test]
    fn density_on_unit_box_sums_exactly() {
        let domain = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mesh = build_mesh(&domain, 8).unwrap();
        let w = discretize_density(&mesh, |_| 1.0).unwrap();
        // All cells are full interior cells with dyadic areas, so the sum is
        // exact.
        assert_eq!(w.total(), 1.0);
        let zero = discretize_density(&mesh, |_| 0.0).unwrap();
        assert_eq!(zero.total(), 0.0);
    }

    #[test]
    fn density_rejects_negative_and_nonfinite() {
        let mesh = small_disk();
        assert!(discretize_density(&mesh, |x| x[0]).is_err());
        assert!(discretize_density(&mesh, |_| f64::NAN).is_err());
    }

    #[test]
    fn density_scaling_is_linear() {
        let mesh = small_disk();
        let base = discretize_density(&mesh, |x| 1.0 + x[0] * x[0]).unwrap();
        let scaled = discretize_density(&mesh, |x| 0.37 * (1.0 + x[0] * x[0])).unwrap();
        for (a, b) in base.masses().iter().zip(scaled.masses()) {
            assert_relative_eq!(b, &(0.37 * a), max_relative = 1e-15);
        }
    }

    #[test]
    fn atoms_snap_and_sum() {
        let domain = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mesh = build_mesh(&domain, 4).unwrap();
        let w = discretize_atoms(
            &mesh,
            &[([0.3, 0.3], 2.0), ([0.31, 0.29], 1.0), ([0.9, 0.9], 0.5)],
        )
        .unwrap();
        assert_relative_eq!(w.total(), 3.5, max_relative = 1e-15);
        let hit = mesh.nearest_node([0.3, 0.3]);
        assert_eq!(w.masses()[hit], 3.0);
        assert!(discretize_atoms(&mesh, &[([0.5, 0.5], -1.0)]).is_err());
    }

    #[test]
    fn integrate_basics() {
        let domain = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mesh = build_mesh(&domain, 8).unwrap();
        let lebesgue = discretize_density(&mesh, |_| 1.0).unwrap();
        let ones = vec![1.0; mesh.len()];
        assert_eq!(integrate(&ones, &lebesgue).unwrap(), 1.0);
        let zeros = vec![0.0; mesh.len()];
        assert_eq!(integrate(&zeros, &lebesgue).unwrap(), 0.0);
        assert!(integrate(&ones[..3], &lebesgue).is_err());
    }

    #[test]
    fn assembly_matches_pointwise_kernel() {
        let mesh = small_disk();
        for kind in [KernelKind::ExactBall, KernelKind::Model] {
            let backend = disk_backend(1.2, kind);
            let mat = assemble_green_matrix(&backend, &mesh).unwrap();
            for &(i, j) in &[(0usize, 5usize), (3, 17), (10, 11)] {
                let expected = backend.green(mesh.nodes[i], mesh.nodes[j]).unwrap();
                assert_eq!(mat.entry(i, j), expected);
                assert_eq!(mat.entry(j, i), expected);
            }
        }
    }

    #[test]
    fn assembly_symmetric_positive() {
        let mesh = small_disk();
        let backend = disk_backend(1.2, KernelKind::Model);
        let mat = assemble_green_matrix(&backend, &mesh).unwrap();
        let n = mat.n();
        for i in 0..n {
            assert!(mat.entry(i, i).is_finite() && mat.entry(i, i) > 0.0);
            for j in 0..i {
                assert_eq!(mat.entry(i, j).to_bits(), mat.entry(j, i).to_bits());
                assert!(mat.entry(i, j) > 0.0);
            }
        }
    }

    #[test]
    fn diagonal_closed_form_values() {
        // ∫₀^{π/4} sec^α θ dθ references computed with 35-digit arithmetic.
        let secant_reference = [
            (0.5, 0.83089621618093747),
            (1.0, 0.88137358701954303),
            (1.5, 0.93748975074693621),
        ];
        let mesh = small_disk();
        for &(alpha, j_ref) in &secant_reference {
            let backend = disk_backend(alpha, KernelKind::Model);
            let mat = assemble_green_matrix(&backend, &mesh).unwrap();
            let s = mesh.side;
            let expected = 2.0f64.powf(-alpha)
                * (2.0f64.powf(3.0 - alpha) / alpha)
                * s.powf(alpha - 2.0)
                * j_ref;
            assert_relative_eq!(mat.entry(0, 0), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn diagonal_dominates_neighbors_for_small_alpha() {
        let mesh = small_disk();
        for &alpha in &[0.6, 1.0] {
            for kind in [KernelKind::ExactBall, KernelKind::Model] {
                let backend = disk_backend(alpha, kind);
                let mat = assemble_green_matrix(&backend, &mesh).unwrap();
                let n = mat.n();
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let dx = mesh.nodes[i][0] - mesh.nodes[j][0];
                        let dy = mesh.nodes[i][1] - mesh.nodes[j][1];
                        if (dx * dx + dy * dy).sqrt() < 1.5 * mesh.side {
                            assert!(
                                mat.entry(i, i) >= mat.entry(i, j),
                                "alpha {} kind {:?} diag {} neighbor {}",
                                alpha,
                                kind,
                                mat.entry(i, i),
                                mat.entry(i, j)
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn apply_matches_naive_product() {
        let mesh = small_disk();
        let backend = disk_backend(0.9, KernelKind::ExactBall);
        let mat = assemble_green_matrix(&backend, &mesh).unwrap();
        let n = mat.n();
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0).collect();
        let fast = mat.apply(&v).unwrap();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += mat.entry(i, j) * v[j];
            }
            assert_relative_eq!(fast[i], s, max_relative = 1e-12);
        }
        assert!(mat.apply(&v[..3]).is_err());
    }

    #[test]
    fn matfree_matches_dense_apply() {
        let mesh = small_disk();
        for kind in [KernelKind::ExactBall, KernelKind::Model] {
            let backend = disk_backend(1.4, kind);
            let mat = assemble_green_matrix(&backend, &mesh).unwrap();
            let n = mat.n();
            let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.03).sin().abs()).collect();
            let dense = mat.apply(&v).unwrap();
            let free = matfree_apply(&backend, &mesh, &v).unwrap();
            for (a, b) in dense.iter().zip(&free) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn matfree_bits_independent_of_thread_count() {
        let mesh = small_disk();
        let backend = disk_backend(1.4, KernelKind::Model);
        let n = mesh.len();
        let v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| matfree_apply(&backend, &mesh, &v).unwrap())
        };
        let single = run(1);
        let multi = run(7);
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn green_column_matches_dense() {
        let mesh = small_disk();
        let backend = disk_backend(1.1, KernelKind::ExactBall);
        let mat = assemble_green_matrix(&backend, &mesh).unwrap();
        let j = mesh.len() / 2;
        let col = green_column(&backend, &mesh, j).unwrap();
        for i in 0..mesh.len() {
            assert_eq!(col[i].to_bits(), mat.entry(i, j).to_bits());
        }
    }

    #[test]
    fn binary_roundtrip_preserves_bits() {
        let mesh = small_disk();
        let backend = disk_backend(1.3, KernelKind::Model);
        let mat = assemble_green_matrix(&backend, &mesh).unwrap();
        let dir = std::env::temp_dir().join("fracgauge-matrix-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("kernel.bin");
        mat.write_binary(&path).unwrap();
        let loaded =
            KernelMatrix::read_binary(&path, backend.clone(), Arc::clone(&mesh)).unwrap();
        assert_eq!(loaded.n(), mat.n());
        for i in 0..mat.n() {
            for j in 0..mat.n() {
                assert_eq!(loaded.entry(i, j).to_bits(), mat.entry(i, j).to_bits());
            }
        }
        // A mesh of a different size must be rejected.
        let coarse = Arc::new(build_mesh(&Domain::UnitDisk, 4).unwrap());
        assert!(KernelMatrix::read_binary(&path, backend, coarse).is_err());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn refinement_consistency_of_potential() {
        // (Gf)(x₀) for smooth f changes by O(h^min(α,1)) under refinement.
        let x0 = [0.22, -0.13];
        for &(alpha, rate) in &[(1.5, 1.0), (0.75, 0.75)] {
            let f = |x: Point| 1.0 + x[0] + x[1] * x[1];
            let mut values = Vec::new();
            for &res in &[16u32, 32, 64] {
                let mesh = Arc::new(build_mesh(&Domain::UnitDisk, res).unwrap());
                let backend = disk_backend(alpha, KernelKind::ExactBall);
                let w = discretize_density(&mesh, f).unwrap();
                let potential = matfree_apply(&backend, &mesh, w.masses()).unwrap();
                values.push(potential[mesh.nearest_node(x0)]);
            }
            let d1 = (values[1] - values[0]).abs();
            let d2 = (values[2] - values[1]).abs();
            let h1 = 1.0f64 / 16.0;
            let h2 = 1.0f64 / 32.0;
            // Generous constant: the bound is asymptotic.
            assert!(d1 <= 5.0 * h1.powf(rate), "alpha {alpha}: d1 {d1}");
            assert!(d2 <= 5.0 * h2.powf(rate), "alpha {alpha}: d2 {d2}");
        }
    }

    #[test]
    fn calibration_normalizes_phi_potential_at_center() {
        let mesh = Arc::new(build_mesh(&Domain::UnitDisk, 16).unwrap());
        let backend = disk_backend(1.0, KernelKind::ExactBall);
        let factor = calibrate_phi(&backend, &mesh, PhiTarget::Potential).unwrap();
        assert!(factor.is_finite() && factor > 0.0);
        let w = phi_measure(
            &backend,
            &mesh,
            AMode::Calibrated { factor },
            PhiTarget::Potential,
        )
        .unwrap();
        let potential = matfree_apply(&backend, &mesh, w.masses()).unwrap();
        let center = mesh.nearest_node([0.0, 0.0]);
        assert_relative_eq!(potential[center], 1.0, max_relative = 1e-12);
        // Away from the boundary the potential should already be near 1 even
        // on this coarse mesh.
        for i in 0..mesh.len() {
            if mesh.delta[i] >= 0.3 {
                assert!((potential[i] - 1.0).abs() < 0.2, "node {i}: {}", potential[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn integrate_fubini_symmetry(seed in 0u64..200) {
            // integrate(G·a, b) = integrate(G·b, a) by matrix symmetry.
            let mesh = small_disk();
            let backend = disk_backend(1.2, KernelKind::Model);
            let mat = assemble_green_matrix(&backend, &mesh).unwrap();
            let n = mat.n();
            let gen = |s: u64| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        let t = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(s);
                        ((t >> 11) % 1000) as f64 / 1000.0
                    })
                    .collect()
            };
            let a = WeightVector::new(gen(seed)).unwrap();
            let b = WeightVector::new(gen(seed ^ 0x9e3779b9)).unwrap();
            let ga = mat.apply(a.masses()).unwrap();
            let gb = mat.apply(b.masses()).unwrap();
            let lhs = integrate(&ga, &b).unwrap();
            let rhs = integrate(&gb, &a).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
        }
    }
}
