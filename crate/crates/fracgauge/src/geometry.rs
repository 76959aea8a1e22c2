//! Exact planar domain geometry and uniform Cartesian meshes.
//!
//! Two domain shapes are supported: the open unit disk and open axis-aligned
//! boxes. Both admit closed-form membership tests, boundary distances, and
//! ray exit distances, which downstream modules rely on for the exact radial
//! reduction of exterior integrals and for boundary-weighted kernels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Point;

/// Errors produced by geometric queries and mesh construction.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// A query point was outside the open domain.
    #[error("point ({0}, {1}) is not interior to the domain")]
    OutsideDomain(f64, f64),
    /// Ray directions must be unit vectors.
    #[error("direction ({0}, {1}) is not a unit vector")]
    NotUnitVector(f64, f64),
    /// Box bounds must satisfy lo < hi on each axis.
    #[error("degenerate box bounds on axis {axis}: lo {lo} >= hi {hi}")]
    DegenerateBox { axis: usize, lo: f64, hi: f64 },
    /// Mesh resolution below the supported minimum.
    #[error("resolution {0} is too small (minimum 4)")]
    ResolutionTooSmall(u32),
    /// The mesh ended up with no interior cells.
    #[error("mesh construction produced no interior nodes")]
    EmptyMesh,
}

/// A bounded planar domain with exact boundary queries.
///
/// The unit disk is the canonical smooth domain; axis-aligned boxes are the
/// canonical Lipschitz domains. Lengths are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Open unit disk centered at the origin.
    UnitDisk,
    /// Open axis-aligned box with per-axis (lo, hi) bounds.
    Box { bounds: [(f64, f64); 2] },
}

impl Domain {
    /// Creates a box domain after validating that lo < hi on each axis.
    pub fn new_box(bounds: [(f64, f64); 2]) -> Result<Self, GeometryError> {
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::DegenerateBox { axis, lo, hi });
            }
        }
        Ok(Domain::Box { bounds })
    }

    /// Axis-aligned bounding box of the domain.
    pub fn bounding_box(&self) -> [(f64, f64); 2] {
        match self {
            Domain::UnitDisk => [(-1.0, 1.0), (-1.0, 1.0)],
            Domain::Box { bounds } => *bounds,
        }
    }

    /// Centroid of the domain.
    pub fn centroid(&self) -> Point {
        match self {
            Domain::UnitDisk => [0.0, 0.0],
            Domain::Box { bounds } => [
                0.5 * (bounds[0].0 + bounds[0].1),
                0.5 * (bounds[1].0 + bounds[1].1),
            ],
        }
    }

    /// Area of the domain.
    pub fn area(&self) -> f64 {
        match self {
            Domain::UnitDisk => std::f64::consts::PI,
            Domain::Box { bounds } => {
                (bounds[0].1 - bounds[0].0) * (bounds[1].1 - bounds[1].0)
            }
        }
    }
}

/// Returns true iff `x` lies in the open domain.
pub fn contains(domain: &Domain, x: Point) -> bool {
    match domain {
        Domain::UnitDisk => x[0] * x[0] + x[1] * x[1] < 1.0,
        Domain::Box { bounds } => {
            bounds[0].0 < x[0] && x[0] < bounds[0].1 && bounds[1].0 < x[1] && x[1] < bounds[1].1
        }
    }
}

/// Returns true iff `x` lies in the closed domain.
///
/// Used for corner counting in mesh area corrections, where points exactly on
/// the boundary must count as covered.
pub fn contains_closed(domain: &Domain, x: Point) -> bool {
    match domain {
        Domain::UnitDisk => x[0] * x[0] + x[1] * x[1] <= 1.0,
        Domain::Box { bounds } => {
            bounds[0].0 <= x[0]
                && x[0] <= bounds[0].1
                && bounds[1].0 <= x[1]
                && x[1] <= bounds[1].1
        }
    }
}

/// Exact Euclidean distance from an interior point to the boundary.
///
/// For the unit disk this is 1 − |x|; for a box it is the smallest per-axis
/// margin.
pub fn distance_to_boundary(domain: &Domain, x: Point) -> Result<f64, GeometryError> {
    if !contains(domain, x) {
        return Err(GeometryError::OutsideDomain(x[0], x[1]));
    }
    Ok(match domain {
        Domain::UnitDisk => 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt(),
        Domain::Box { bounds } => {
            let mx = (x[0] - bounds[0].0).min(bounds[0].1 - x[0]);
            let my = (x[1] - bounds[1].0).min(bounds[1].1 - x[1]);
            mx.min(my)
        }
    })
}

/// Distance from `x` along the unit direction `theta` to the domain boundary.
///
/// Returns R(θ) = sup{t > 0 : x + sθ ∈ Ω for all s ∈ [0, t)}. For the disk
/// this is the positive root of a quadratic; for a box it is the nearest slab
/// exit. Both domains are convex, so the ray segment [x, x + Rθ) is interior.
pub fn ray_exit_distance(domain: &Domain, x: Point, theta: Point) -> Result<f64, GeometryError> {
    if !contains(domain, x) {
        return Err(GeometryError::OutsideDomain(x[0], x[1]));
    }
    let norm2 = theta[0] * theta[0] + theta[1] * theta[1];
    if (norm2 - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NotUnitVector(theta[0], theta[1]));
    }
    Ok(match domain {
        Domain::UnitDisk => {
            // Solve |x + tθ|² = 1 for the positive root.
            let b = x[0] * theta[0] + x[1] * theta[1];
            let c = x[0] * x[0] + x[1] * x[1] - 1.0;
            -b + (b * b - c).sqrt()
        }
        Domain::Box { bounds } => {
            let mut t = f64::INFINITY;
            for axis in 0..2 {
                let d = theta[axis];
                if d > 0.0 {
                    t = t.min((bounds[axis].1 - x[axis]) / d);
                } else if d < 0.0 {
                    t = t.min((bounds[axis].0 - x[axis]) / d);
                }
            }
            t
        }
    })
}

/// A uniform Cartesian cell decomposition of a domain.
///
/// Nodes are cell centroids in row-major order (y-rows outer, x inner). Cells
/// whose centroid is interior are kept; the stored area applies a first-order
/// boundary correction equal to the fraction of the cell's four corners lying
/// in the closed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Underlying domain.
    pub domain: Domain,
    /// Cell centroids, all strictly interior.
    pub nodes: Vec<Point>,
    /// Corrected cell areas, all positive.
    pub cell_area: Vec<f64>,
    /// Exact boundary distance of each node.
    pub delta: Vec<f64>,
    /// Nominal cell diameter (side × √2).
    pub h: f64,
    /// Grid side length of one cell.
    pub side: f64,
}

impl Mesh {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the mesh has no nodes (never holds for a built mesh).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum of corrected cell areas, a first-order approximation of |Ω|.
    pub fn total_area(&self) -> f64 {
        self.cell_area.iter().sum()
    }

    /// Index of the node nearest to `x`.
    pub fn nearest_node(&self, x: Point) -> usize {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, p) in self.nodes.iter().enumerate() {
            let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }
}

/// Builds a uniform Cartesian mesh of cells with side 1/resolution.
///
/// The grid is anchored at the bounding-box minimum corner. A cell enters the
/// mesh iff its centroid is interior; its area is the full cell area times
/// the fraction of its four corners inside the closed domain, which corrects
/// boundary cells to first order.
pub fn build_mesh(domain: &Domain, resolution: u32) -> Result<Mesh, GeometryError> {
    if resolution < 4 {
        return Err(GeometryError::ResolutionTooSmall(resolution));
    }
    let side = 1.0 / f64::from(resolution);
    let bbox = domain.bounding_box();
    let nx = ((bbox[0].1 - bbox[0].0) / side).ceil() as i64;
    let ny = ((bbox[1].1 - bbox[1].0) / side).ceil() as i64;

    let mut nodes = Vec::new();
    let mut cell_area = Vec::new();
    let mut delta = Vec::new();
    for iy in 0..ny {
        let y = bbox[1].0 + (iy as f64 + 0.5) * side;
        for ix in 0..nx {
            let x = bbox[0].0 + (ix as f64 + 0.5) * side;
            let center = [x, y];
            if !contains(domain, center) {
                continue;
            }
            let half = 0.5 * side;
            let corners = [
                [x - half, y - half],
                [x + half, y - half],
                [x - half, y + half],
                [x + half, y + half],
            ];
            let inside = corners
                .iter()
                .filter(|&&c| contains_closed(domain, c))
                .count();
            let fraction = inside as f64 / 4.0;
            if fraction == 0.0 {
                continue;
            }
            nodes.push(center);
            cell_area.push(side * side * fraction);
            delta.push(distance_to_boundary(domain, center).expect("centroid is interior"));
        }
    }
    if nodes.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    Ok(Mesh {
        domain: *domain,
        nodes,
        cell_area,
        delta,
        h: side * std::f64::consts::SQRT_2,
        side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_membership() {
        let d = Domain::UnitDisk;
        assert!(contains(&d, [0.0, 0.0]));
        assert!(!contains(&d, [1.0, 0.0]));
        assert!(!contains(&d, [0.8, 0.8]));
    }

    #[test]
    fn box_membership() {
        let d = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert!(contains(&d, [0.5, 0.25]));
        assert!(!contains(&d, [0.0, 0.5]));
        assert!(!contains(&d, [1.5, 0.5]));
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(Domain::new_box([(1.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Domain::new_box([(0.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn boundary_distances() {
        let disk = Domain::UnitDisk;
        assert_eq!(distance_to_boundary(&disk, [0.0, 0.0]).unwrap(), 1.0);
        assert!((distance_to_boundary(&disk, [0.6, 0.0]).unwrap() - 0.4).abs() < 1e-15);
        let bx = Domain::new_box([(0.0, 1.0), (0.0, 2.0)]).unwrap();
        assert!((distance_to_boundary(&bx, [0.3, 1.0]).unwrap() - 0.3).abs() < 1e-15);
        assert!(distance_to_boundary(&disk, [1.2, 0.0]).is_err());
    }

    #[test]
    fn ray_exits() {
        let disk = Domain::UnitDisk;
        assert!((ray_exit_distance(&disk, [0.0, 0.0], [0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert!((ray_exit_distance(&disk, [0.5, 0.0], [1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let bx = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert!(
            (ray_exit_distance(&bx, [0.25, 0.25], [0.0, 1.0]).unwrap() - 0.75).abs() < 1e-15
        );
    }

    #[test]
    fn unit_box_mesh_has_exact_areas() {
        let bx = Domain::new_box([(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mesh = build_mesh(&bx, 4).unwrap();
        assert_eq!(mesh.len(), 16);
        for &a in &mesh.cell_area {
            assert!((a - 1.0 / 16.0).abs() < 1e-15);
        }
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_mesh_area_converges() {
        let disk = Domain::UnitDisk;
        let mesh = build_mesh(&disk, 64).unwrap();
        let rel = (mesh.total_area() - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel < 0.02, "area error {rel}");
        let fine = build_mesh(&disk, 128).unwrap();
        let rel_fine = (fine.total_area() - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel_fine < rel, "refinement did not reduce area error");
    }

    #[test]
    fn disk_mesh_nodes_interior_with_positive_delta() {
        let disk = Domain::UnitDisk;
        let mesh = build_mesh(&disk, 8).unwrap();
        for (i, &p) in mesh.nodes.iter().enumerate() {
            assert!(contains(&disk, p));
            assert!(mesh.delta[i] > 0.0);
            let exact = distance_to_boundary(&disk, p).unwrap();
            assert_eq!(mesh.delta[i], exact);
        }
    }

    #[test]
    fn low_resolution_rejected() {
        assert!(matches!(
            build_mesh(&Domain::UnitDisk, 3),
            Err(GeometryError::ResolutionTooSmall(3))
        ));
    }
}
