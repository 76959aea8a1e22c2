//! Run configuration: JSON with exactly these field names; unknown keys are
//! rejected so typos in experiment sweeps fail fast.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Configuration errors, reported on standard error with exit code 1.
#[derive(Error, Debug)]
pub enum ConfigError {
    /// alpha must lie in the open interval (0, 2).
    #[error("alpha must lie in (0, 2), got {0}")]
    AlphaOutOfRange(f64),
    /// Mesh resolution below the supported minimum.
    #[error("resolution must be at least 4, got {0}")]
    ResolutionTooSmall(u32),
    /// Convergence tolerance must be positive.
    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    /// The series needs at least one term.
    #[error("max_terms must be at least 1")]
    ZeroMaxTerms,
    /// Density scales and atom masses must be nonnegative.
    #[error("{context}: negative weight {value}")]
    NegativeWeight {
        /// Which measure carried the weight.
        context: String,
        /// The offending value.
        value: f64,
    },
}

/// Domain selector for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Open unit disk centered at the origin.
    UnitDisk,
    /// Open axis-aligned box with per-axis [lo, hi] bounds.
    Box {
        /// Bounds as [[x_lo, x_hi], [y_lo, y_hi]].
        bounds: [[f64; 2]; 2],
    },
}

/// Density profile of an absolutely continuous measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityKind {
    /// The exterior-jump density φ, normalized per the run's `a_mode`.
    Phi,
    /// Constant density c.
    Constant {
        /// The constant value.
        c: f64,
    },
    /// Polynomial in the distance r to the domain centroid: Σ coeffs[k]·r^k.
    RadialPoly {
        /// Polynomial coefficients, constant term first.
        coeffs: Vec<f64>,
    },
}

/// One point mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    /// Horizontal coordinate.
    pub x: f64,
    /// Vertical coordinate.
    pub y: f64,
    /// Nonnegative mass.
    pub mass: f64,
}

/// A finite measure: zero, a scaled density, or finitely many atoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// The zero measure.
    Zero,
    /// density(x)·scale dx.
    Density {
        /// Density profile.
        density: DensityKind,
        /// Nonnegative multiplier γ.
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Finitely many point masses, snapped to nearest mesh nodes.
    Atoms {
        /// The atoms.
        atoms: Vec<AtomSpec>,
    },
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec::Zero
    }
}

/// Normalization of the φ density's constant A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AModeSpec {
    /// Closed-form constant.
    Literature,
    /// Constant calibrated on the run's own mesh so the discrete potential
    /// of φ equals 1 at the centroid.
    Calibrated,
}

impl Default for AModeSpec {
    fn default() -> Self {
        AModeSpec::Calibrated
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_max_terms() -> usize {
    10_000
}

/// One experiment run: domain, order, mesh, measures, and series budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Domain selector.
    pub domain: DomainSpec,
    /// Fractional order α ∈ (0, 2).
    pub alpha: f64,
    /// Cells per unit length.
    pub resolution: u32,
    /// Potential measure ω.
    #[serde(default)]
    pub omega: MeasureSpec,
    /// Source measure ν.
    #[serde(default)]
    pub nu: MeasureSpec,
    /// Series stopping tolerance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Series term budget.
    #[serde(default = "default_max_terms")]
    pub max_terms: usize,
    /// Seed for randomized checks.
    #[serde(default)]
    pub seed: u64,
    /// Normalization of the φ constant.
    #[serde(default)]
    pub a_mode: AModeSpec,
    /// Output directory; the --out flag overrides it, and the current
    /// directory is the fallback.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Validates the invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(ConfigError::AlphaOutOfRange(self.alpha));
        }
        if self.resolution < 4 {
            return Err(ConfigError::ResolutionTooSmall(self.resolution));
        }
        if !(self.tolerance > 0.0) {
            return Err(ConfigError::NonPositiveTolerance(self.tolerance));
        }
        if self.max_terms == 0 {
            return Err(ConfigError::ZeroMaxTerms);
        }
        for (name, spec) in [("omega", &self.omega), ("nu", &self.nu)] {
            match spec {
                MeasureSpec::Zero => {}
                MeasureSpec::Density { scale, .. } => {
                    if *scale < 0.0 {
                        return Err(ConfigError::NegativeWeight {
                            context: format!("{name} density scale"),
                            value: *scale,
                        });
                    }
                }
                MeasureSpec::Atoms { atoms } => {
                    for atom in atoms {
                        if atom.mass < 0.0 {
                            return Err(ConfigError::NegativeWeight {
                                context: format!("{name} atom at ({}, {})", atom.x, atom.y),
                                value: atom.mass,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "domain": {"kind": "unit_disk"},
            "alpha": 1.5,
            "resolution": 16
        }"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        config.validate().unwrap();
        assert!(matches!(config.omega, MeasureSpec::Zero));
        assert_eq!(config.max_terms, 10_000);
        assert_eq!(config.tolerance, 1e-8);
        assert_eq!(config.a_mode, AModeSpec::Calibrated);
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{
            "domain": {"kind": "unit_disk"},
            "alpha": 1.5,
            "resolution": 16,
            "tollerance": 1e-6
        }"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        let mut config: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        config.alpha = 2.0;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::AlphaOutOfRange(_))
        ));

        let mut config: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        config.omega = MeasureSpec::Density {
            density: DensityKind::Phi,
            scale: -0.5,
        };
        assert!(matches!(
            config.validate(),
            Err(ConfigError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn measure_specs_round_trip() {
        let spec = MeasureSpec::Density {
            density: DensityKind::RadialPoly {
                coeffs: vec![1.0, 0.0, -0.5],
            },
            scale: 0.75,
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: MeasureSpec = serde_json::from_str(&json).unwrap();
        match back {
            MeasureSpec::Density {
                density: DensityKind::RadialPoly { coeffs },
                scale,
            } => {
                assert_eq!(coeffs, vec![1.0, 0.0, -0.5]);
                assert_eq!(scale, 0.75);
            }
            other => panic!("unexpected round trip: {other:?}"),
        }
    }
}
