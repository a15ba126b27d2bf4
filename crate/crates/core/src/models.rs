//! Model spaces and weights used by the scenario runner and the acceptance
//! suite. Resolutions count nodes per `2π` of chart length, so every model at
//! resolution `n` has spacing `2π/n`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{build_chart_mesh, build_circle_mesh, build_torus_mesh, sample_metric, sample_scalar, Mesh, MetricField, ScalarField};

/// Amplitude of the conformal factor `g = e^{2u} δ`, `u = a sin x cos y`.
pub const CONFORMAL_AMPLITUDE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpace {
    /// Circle of circumference `2π`.
    FlatCircle,
    /// Square torus of side `2π`.
    FlatTorus,
    /// Round-sphere chart `diag(1, sin²θ)` on `θ ∈ [π/4, 3π/4)`, `φ` periodic.
    SphereBand,
    /// Square torus of side `2π` with metric `e^{2u} δ`.
    ConformalTorus,
}

impl ModelSpace {
    pub const ALL: [ModelSpace; 4] = [Self::FlatCircle, Self::FlatTorus, Self::SphereBand, Self::ConformalTorus];

    pub fn name(self) -> &'static str {
        match self {
            Self::FlatCircle => "flat-circle",
            Self::FlatTorus => "flat-torus",
            Self::SphereBand => "sphere-band",
            Self::ConformalTorus => "conformal-torus",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            Self::FlatCircle => 1,
            _ => 2,
        }
    }

    pub fn mesh(self, resolution: usize) -> Result<Arc<Mesh>> {
        let l = 2.0 * PI;
        match self {
            Self::FlatCircle => build_circle_mesh(resolution, l),
            Self::FlatTorus | Self::ConformalTorus => build_torus_mesh(resolution, resolution, l, l),
            Self::SphereBand => {
                if resolution % 4 != 0 {
                    return Err(Error::InvalidMesh(format!("sphere band resolution {resolution} must be a multiple of 4")));
                }
                let nt = resolution / 4;
                build_chart_mesh([nt, resolution], [PI / 2.0, l], [PI / 4.0, 0.0], [false, true])
            }
        }
    }

    pub fn metric(self, mesh: &Arc<Mesh>) -> Result<MetricField> {
        match self {
            Self::FlatCircle | Self::FlatTorus => Ok(MetricField::flat(mesh)),
            Self::SphereBand => sample_metric(mesh, |x| linalg::diag(1.0, x[0].sin().powi(2))),
            Self::ConformalTorus => sample_metric(mesh, |x| {
                let u = CONFORMAL_AMPLITUDE * x[0].sin() * x[1].cos();
                linalg::scale(&linalg::identity(2), (2.0 * u).exp())
            }),
        }
    }

    /// Mesh, metric and the zero log-density `V₀`.
    pub fn build(self, resolution: usize) -> Result<ModelData> {
        let mesh = self.mesh(resolution)?;
        let metric = self.metric(&mesh)?;
        let v0 = ScalarField::constant(mesh.clone(), 0.0)?;
        Ok(ModelData { space: self, resolution, mesh, metric, v0 })
    }
}

impl fmt::Display for ModelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidArgument(format!("unknown model space '{s}'; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelData {
    pub space: ModelSpace,
    pub resolution: usize,
    pub mesh: Arc<Mesh>,
    pub metric: MetricField,
    pub v0: ScalarField,
}

/// `cos` of the first chart coordinate: `cos x` on the flat models and
/// `cos θ` (the height function) on the sphere band.
pub fn first_harmonic(mesh: &Arc<Mesh>) -> Result<ScalarField> {
    sample_scalar(mesh, |x| x[0].cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Zero,
    Constant { value: f64 },
    /// `amplitude · cos` of the first chart coordinate.
    Harmonic { amplitude: f64 },
}

impl WeightSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Constant { value } => format!("constant({value})"),
            Self::Harmonic { amplitude } => format!("harmonic({amplitude})"),
        }
    }

    pub fn sample(&self, mesh: &Arc<Mesh>) -> Result<ScalarField> {
        match *self {
            Self::Zero => ScalarField::constant(mesh.clone(), 0.0),
            Self::Constant { value } => ScalarField::constant(mesh.clone(), value),
            Self::Harmonic { amplitude } => first_harmonic(mesh)?.map(|v| amplitude * v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_is_shared() {
        for space in ModelSpace::ALL {
            let m = space.build(64).unwrap();
            for &h in m.mesh.spacing() {
                assert!((h - 2.0 * PI / 64.0).abs() < 1e-15, "{space}");
            }
            assert_eq!(m.mesh.dimension(), space.dimension());
        }
    }

    #[test]
    fn names_round_trip() {
        for space in ModelSpace::ALL {
            assert_eq!(space.name().parse::<ModelSpace>().unwrap(), space);
        }
        assert!("klein-bottle".parse::<ModelSpace>().is_err());
    }

    #[test]
    fn sphere_band_rejects_odd_resolution() {
        assert!(ModelSpace::SphereBand.mesh(66).is_err());
    }

    #[test]
    fn weights_sample() {
        let mesh = ModelSpace::FlatCircle.mesh(8).unwrap();
        let w = WeightSpec::Harmonic { amplitude: 0.1 }.sample(&mesh).unwrap();
        assert!((w.values()[0] - 0.1).abs() < 1e-15);
        assert!((w.values()[4] + 0.1).abs() < 1e-15);
        let c = WeightSpec::Constant { value: 0.3 }.sample(&mesh).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.3));
    }
}
