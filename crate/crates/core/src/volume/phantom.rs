//! Synthetic phantoms built from ellipsoids and Gaussian blobs.
//!
//! The named phantoms in `data/phantoms.txt` use coordinates normalized to the
//! half-extent of the target cube; [`Phantom::library`] scales them to mm.

use super::{GridSpec, ValueUnit, Volume3D};
use crate::error::{invalid, Error, Result};

const LIBRARY: &str = include_str!("../../data/phantoms.txt");

/// Solid ellipsoid with constant additive intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    /// Center `(x, y, z)` in mm.
    pub center: [f64; 3],
    /// Semi-axes in mm, along the body frame.
    pub semi_axes: [f64; 3],
    /// Z-Y-Z Euler angles in degrees.
    pub angles_deg: [f64; 3],
    pub intensity: f64,
}

/// Axis-aligned Gaussian bump, `amplitude * exp(-|q/sigma|^2 / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBlob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Phantom {
    pub ellipsoids: Vec<Ellipsoid>,
    pub blobs: Vec<GaussianBlob>,
}

fn rotation_zyz(angles_deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [phi, theta, psi] = angles_deg.map(f64::to_radians);
    let rz = |a: f64| [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = |a: f64| [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]];
    matmul(matmul(rz(phi), ry(theta)), rz(psi))
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| a[r][k] * b[k][c]).sum()))
}

impl Ellipsoid {
    pub fn sphere(center: [f64; 3], radius: f64, intensity: f64) -> Self {
        Ellipsoid {
            center,
            semi_axes: [radius; 3],
            angles_deg: [0.0; 3],
            intensity,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.semi_axes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(invalid(format!(
                "ellipsoid semi-axes must be > 0, got {:?}",
                self.semi_axes
            )));
        }
        Ok(())
    }

    fn indicator(&self) -> impl Fn([f64; 3]) -> bool + Sync + '_ {
        let r = rotation_zyz(self.angles_deg);
        move |p: [f64; 3]| {
            let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
            // body-frame coordinates: R^T d
            (0..3)
                .map(|c| {
                    let q = r[0][c] * d[0] + r[1][c] * d[1] + r[2][c] * d[2];
                    (q / self.semi_axes[c]).powi(2)
                })
                .sum::<f64>()
                <= 1.0
        }
    }
}

impl GaussianBlob {
    fn validate(&self) -> Result<()> {
        if !self.sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(invalid(format!("blob sigma must be > 0, got {:?}", self.sigma)));
        }
        Ok(())
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let r2: f64 = (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.sigma[a]).powi(2))
            .sum();
        self.amplitude * (-0.5 * r2).exp()
    }
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        self.ellipsoids.iter().try_for_each(Ellipsoid::validate)?;
        self.blobs.iter().try_for_each(GaussianBlob::validate)
    }

    /// Names available through [`Phantom::library`].
    pub fn library_names() -> Vec<&'static str> {
        LIBRARY
            .lines()
            .filter_map(|l| l.trim().strip_prefix('[')?.strip_suffix(']'))
            .collect()
    }

    /// Loads a named phantom, scaling normalized coordinates by `half_extent` mm.
    pub fn library(name: &str, half_extent: f64) -> Result<Phantom> {
        Self::parse_section(LIBRARY, name, half_extent)
    }

    /// Parses the `[name]` section of a phantom description.
    ///
    /// Lines are `ellipsoid A a b c x0 y0 z0 phi theta psi` or
    /// `gaussian A x0 y0 z0 sx sy sz`, with lengths normalized to the half-extent.
    pub fn parse_section(text: &str, name: &str, half_extent: f64) -> Result<Phantom> {
        let fmt_err = |reason: String| Error::Format {
            format: "phantom",
            reason,
        };
        let mut phantom = Phantom::default();
        let mut in_section = false;
        let mut found = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                in_section = section == name;
                found |= in_section;
                continue;
            }
            if !in_section {
                continue;
            }
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap_or_default();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| fmt_err(format!("line {}: {e}", lineno + 1)))?;
            let s = half_extent;
            match (kind, nums.as_slice()) {
                ("ellipsoid", &[amp, a, b, c, x0, y0, z0, phi, theta, psi]) => {
                    phantom.ellipsoids.push(Ellipsoid {
                        center: [x0 * s, y0 * s, z0 * s],
                        semi_axes: [a * s, b * s, c * s],
                        angles_deg: [phi, theta, psi],
                        intensity: amp,
                    })
                }
                ("gaussian", &[amp, x0, y0, z0, sx, sy, sz]) => phantom.blobs.push(GaussianBlob {
                    center: [x0 * s, y0 * s, z0 * s],
                    sigma: [sx * s, sy * s, sz * s],
                    amplitude: amp,
                }),
                _ => {
                    return Err(fmt_err(format!(
                        "line {}: unrecognized entry `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        if !found {
            return Err(invalid(format!("unknown phantom `{name}`")));
        }
        phantom.validate()?;
        Ok(phantom)
    }
}

/// Renders a phantom on a centered `n³` grid.
///
/// Each voxel holds the sum of the shapes evaluated at its center. Terms are
/// summed in sorted order so the result does not depend on list order.
pub fn make_phantom(p: &Phantom, n: usize, spacing: f64) -> Result<Volume3D> {
    p.validate()?;
    let grid = GridSpec::cube(n, spacing)?;
    let inside: Vec<_> = p.ellipsoids.iter().map(|e| (e.indicator(), e.intensity)).collect();
    Volume3D::from_fn(grid, ValueUnit::Hu, |i, j, k| {
        let x = grid.world_xyz(i, j, k);
        let mut terms: Vec<f64> = inside
            .iter()
            .filter(|(hit, _)| hit(x))
            .map(|(_, a)| *a)
            .chain(p.blobs.iter().map(|b| b.eval(x)))
            .collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    })
}
