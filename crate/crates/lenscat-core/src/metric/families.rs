//! Builtin analytic metric families.
//!
//! Every family is a compactly supported perturbation of the flat metric:
//! its profile carries the mollifier `exp(-u/(1-u))` in the squared,
//! rescaled spacetime distance, so the support conditions hold exactly
//! rather than up to Gaussian tails. All families provide analytic first
//! spatial derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `exp(-u/(1-u))` for `u in [0,1)`, zero for `u >= 1`.
///
/// Equal to 1 at `u = 0` and flat to all orders at `u = 1`; composed with
/// `u = r^2 / rho^2` it yields a smooth bump supported in `r < rho`.
pub fn mollifier(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        (-u / (1.0 - u)).exp()
    }
}

/// Derivative of [`mollifier`] with respect to `u`.
pub fn mollifier_deriv(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u;
        -mollifier(u) / (v * v)
    }
}

/// Second derivative of [`mollifier`] with respect to `u`.
pub fn mollifier_deriv2(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u;
        mollifier(u) * (1.0 / (v * v * v * v) - 2.0 / (v * v * v))
    }
}

/// Radial profile shared by the bump families:
/// `P(rho2) = exp(-rho2 / width^2) * mollifier(rho2 / support^2)`,
/// as a function of the squared distance `rho2`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BumpProfile {
    pub width: f64,
    pub support_radius: f64,
    pub time_width: f64,
}

impl BumpProfile {
    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.support_radius > 0.0 && self.time_width > 0.0) {
            return Err(Error::invalid(
                "bump profile",
                "width, support_radius and time_width must be positive",
            ));
        }
        Ok(())
    }

    /// Spatial factor and its derivative with respect to `rho2 = |z-c|^2`.
    fn spatial(&self, rho2: f64) -> (f64, f64) {
        let w2 = self.width * self.width;
        let s2 = self.support_radius * self.support_radius;
        let u = rho2 / s2;
        let gauss = (-rho2 / w2).exp();
        let m = mollifier(u);
        let value = gauss * m;
        let deriv = gauss * (-m / w2 + mollifier_deriv(u) / s2);
        (value, deriv)
    }

    /// Temporal cutoff `mollifier(t^2 / time_width^2)`.
    fn temporal(&self, t: f64) -> f64 {
        mollifier(t * t / (self.time_width * self.time_width))
    }
}

/// Conformal family `g = e^{2 phi} delta` with a mollified Gaussian `phi`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConformalBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    #[serde(flatten)]
    pub profile: BumpProfile,
}

impl ConformalBump {
    pub fn validate(&self, dim: usize, r: f64, t: f64) -> Result<()> {
        self.profile.validate()?;
        if self.center.len() != dim {
            return Err(Error::DimensionMismatch {
                left: self.center.len(),
                right: dim,
            });
        }
        let c_norm = self.center.iter().map(|x| x * x).sum::<f64>().sqrt();
        if c_norm + self.profile.support_radius > r + 1e-12 {
            return Err(Error::invalid(
                "conformal bump",
                format!(
                    "support |center| + support_radius = {} exceeds R = {r}",
                    c_norm + self.profile.support_radius
                ),
            ));
        }
        if self.profile.time_width > t + 1e-12 {
            return Err(Error::invalid(
                "conformal bump",
                format!("time_width {} exceeds T = {t}", self.profile.time_width),
            ));
        }
        Ok(())
    }

    /// `phi(t, z)` and its spatial gradient.
    pub fn phi_with_grad(&self, t: f64, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = z.len();
        let mut diff = DVector::zeros(n);
        for i in 0..n {
            diff[i] = z[i] - self.center[i];
        }
        let rho2 = diff.norm_squared();
        let chi_t = self.profile.temporal(t);
        if chi_t == 0.0 {
            return (0.0, DVector::zeros(n));
        }
        let (p, dp) = self.profile.spatial(rho2);
        let value = self.amplitude * chi_t * p;
        let grad = diff * (2.0 * self.amplitude * chi_t * dp);
        (value, grad)
    }

    pub fn metric_with_grad(&self, t: f64, z: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = z.len();
        let (phi, grad) = self.phi_with_grad(t, z);
        let factor = (2.0 * phi).exp();
        let g = DMatrix::identity(n, n) * factor;
        let dg = (0..n)
            .map(|k| DMatrix::identity(n, n) * (2.0 * factor * grad[k]))
            .collect();
        (g, dg)
    }
}

/// Rank-one family `g = delta + A s(t, z) v v^T` with a mollified Gaussian
/// profile `s` and a fixed unit direction `v`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankOneBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub direction: Vec<f64>,
    #[serde(flatten)]
    pub profile: BumpProfile,
}

impl RankOneBump {
    pub fn validate(&self, dim: usize, r: f64, t: f64) -> Result<()> {
        self.profile.validate()?;
        if self.center.len() != dim || self.direction.len() != dim {
            return Err(Error::DimensionMismatch {
                left: self.center.len().max(self.direction.len()),
                right: dim,
            });
        }
        if self.amplitude <= -1.0 {
            return Err(Error::invalid(
                "rank-one bump",
                "amplitude must exceed -1 to keep the metric positive definite",
            ));
        }
        let d_norm = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if d_norm < 1e-14 {
            return Err(Error::invalid("rank-one bump", "zero direction"));
        }
        let c_norm = self.center.iter().map(|x| x * x).sum::<f64>().sqrt();
        if c_norm + self.profile.support_radius > r + 1e-12 {
            return Err(Error::invalid(
                "rank-one bump",
                "support exceeds the ball radius R",
            ));
        }
        if self.profile.time_width > t + 1e-12 {
            return Err(Error::invalid("rank-one bump", "time_width exceeds T"));
        }
        Ok(())
    }

    fn unit_direction(&self) -> DVector<f64> {
        let v = DVector::from_vec(self.direction.clone());
        let norm = v.norm();
        v / norm
    }

    pub fn metric_with_grad(&self, t: f64, z: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = z.len();
        let mut diff = DVector::zeros(n);
        for i in 0..n {
            diff[i] = z[i] - self.center[i];
        }
        let rho2 = diff.norm_squared();
        let chi_t = self.profile.temporal(t);
        let v = self.unit_direction();
        let vvt = &v * v.transpose();
        if chi_t == 0.0 {
            let g = DMatrix::identity(n, n);
            let dg = vec![DMatrix::zeros(n, n); n];
            return (g, dg);
        }
        let (p, dp) = self.profile.spatial(rho2);
        let s = self.amplitude * chi_t * p;
        let g = DMatrix::identity(n, n) + &vvt * s;
        let dg = (0..n)
            .map(|k| &vvt * (self.amplitude * chi_t * dp * 2.0 * diff[k]))
            .collect();
        (g, dg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mollifier_endpoints() {
        assert_relative_eq!(mollifier(0.0), 1.0);
        assert_eq!(mollifier(1.0), 0.0);
        assert_eq!(mollifier(2.3), 0.0);
        assert!(mollifier(0.999) < 1e-300 || mollifier(0.999) > 0.0);
    }

    #[test]
    fn mollifier_derivative_matches_finite_difference() {
        let h = 1e-6;
        for &u in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let fd = (mollifier(u + h) - mollifier(u - h)) / (2.0 * h);
            assert_relative_eq!(mollifier_deriv(u), fd, epsilon = 1e-7, max_relative = 1e-6);
            let fd2 = (mollifier_deriv(u + h) - mollifier_deriv(u - h)) / (2.0 * h);
            assert_relative_eq!(
                mollifier_deriv2(u),
                fd2,
                epsilon = 1e-5,
                max_relative = 1e-5
            );
        }
    }

    #[test]
    fn conformal_gradient_matches_finite_difference() {
        let bump = ConformalBump {
            amplitude: 0.1,
            center: vec![0.2, -0.1],
            profile: BumpProfile {
                width: 1.0,
                support_radius: 2.5,
                time_width: 0.5,
            },
        };
        let z = DVector::from_vec(vec![0.5, 0.3]);
        let (_, grad) = bump.phi_with_grad(0.1, &z);
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let (fp, _) = bump.phi_with_grad(0.1, &zp);
            let (fm, _) = bump.phi_with_grad(0.1, &zm);
            assert_relative_eq!(grad[k], (fp - fm) / (2.0 * h), epsilon = 1e-9);
        }
    }
}
