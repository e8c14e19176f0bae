//! Time-slice-preserving diffeomorphisms `psi(t, z) = (t, psi1(t, z))`.
//!
//! Builtin diffeomorphisms are time-1 flows of compactly supported vector
//! fields (the time variable enters only as a parameter of the field), so
//! they are global diffeomorphisms equal to the identity outside the
//! field's support. Spatial Jacobians and second derivatives are obtained
//! from the first and second variational equations integrated alongside
//! the flow; inverses are backward flows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::metric::families::{mollifier, mollifier_deriv, mollifier_deriv2};
use crate::ode::{integrate_span, OdeOptions};
use crate::{Error, Result};

/// Generator of a flow diffeomorphism: a compactly supported vector field
/// with analytic first and second spatial derivatives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowGenerator {
    /// `X = amplitude * cutoff * z[gradient_axis] * e_axis`.
    Shear { amplitude: f64, axis: usize, gradient_axis: usize },
    /// `X = amplitude * cutoff * (z[b] e_a - z[a] e_b)` for `plane = (a, b)`.
    Rotation { amplitude: f64, plane: (usize, usize) },
}

/// A time-slice-preserving diffeomorphism of ℝⁿ, identity outside
/// `[-time_width, time_width] × B_support_radius(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoField {
    dim: usize,
    support_radius: f64,
    time_width: f64,
    kind: DiffeoKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) enum DiffeoKind {
    Identity,
    Flow(FlowGenerator),
}

/// Value, Jacobian and second-derivative evaluation of the generator.
struct FieldJet {
    value: DVector<f64>,
    /// `jac[(k, j)] = d X^k / d z_j`
    jac: DMatrix<f64>,
    /// `hess[k][(i, j)] = d^2 X^k / d z_i d z_j`
    hess: Vec<DMatrix<f64>>,
}

impl DiffeoField {
    pub fn identity(dim: usize) -> Self {
        DiffeoField {
            dim,
            support_radius: 1.0,
            time_width: 1.0,
            kind: DiffeoKind::Identity,
        }
    }

    pub fn from_flow(
        dim: usize,
        support_radius: f64,
        time_width: f64,
        generator: FlowGenerator,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("diffeo", "dimension must be at least 2"));
        }
        if !(support_radius > 0.0 && time_width > 0.0) {
            return Err(Error::invalid(
                "diffeo",
                "support_radius and time_width must be positive",
            ));
        }
        match &generator {
            FlowGenerator::Shear { axis, gradient_axis, .. } => {
                if *axis >= dim || *gradient_axis >= dim || axis == gradient_axis {
                    return Err(Error::invalid(
                        "diffeo",
                        "shear axes must be distinct and within the dimension",
                    ));
                }
            }
            FlowGenerator::Rotation { plane: (a, b), .. } => {
                if *a >= dim || *b >= dim || a == b {
                    return Err(Error::invalid(
                        "diffeo",
                        "rotation plane axes must be distinct and within the dimension",
                    ));
                }
            }
        }
        Ok(DiffeoField {
            dim,
            support_radius,
            time_width,
            kind: DiffeoKind::Flow(generator),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn time_width(&self) -> f64 {
        self.time_width
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, DiffeoKind::Identity)
    }

    pub(crate) fn kind(&self) -> &DiffeoKind {
        &self.kind
    }

    /// Evaluates the generating vector field with first and second
    /// derivatives at frozen time `t`.
    fn field_jet(&self, t: f64, z: &DVector<f64>) -> FieldJet {
        let n = self.dim;
        let zero = || FieldJet {
            value: DVector::zeros(n),
            jac: DMatrix::zeros(n, n),
            hess: vec![DMatrix::zeros(n, n); n],
        };
        let generator = match &self.kind {
            DiffeoKind::Identity => return zero(),
            DiffeoKind::Flow(g) => g,
        };
        let chi_t = mollifier(t * t / (self.time_width * self.time_width));
        if chi_t == 0.0 {
            return zero();
        }
        let s2 = self.support_radius * self.support_radius;
        let u = z.norm_squared() / s2;
        if u >= 1.0 {
            return zero();
        }
        let m = mollifier(u);
        let dm = mollifier_deriv(u) / s2; // d m / d (|z|^2)
        let d2m = mollifier_deriv2(u) / (s2 * s2);

        // Linear part w(z) with constant Jacobian dw.
        let (amp, w, dw) = match generator {
            FlowGenerator::Shear { amplitude, axis, gradient_axis } => {
                let mut w = DVector::zeros(n);
                w[*axis] = z[*gradient_axis];
                let mut dw = DMatrix::zeros(n, n);
                dw[(*axis, *gradient_axis)] = 1.0;
                (*amplitude, w, dw)
            }
            FlowGenerator::Rotation { amplitude, plane: (a, b) } => {
                let mut w = DVector::zeros(n);
                w[*a] = z[*b];
                w[*b] = -z[*a];
                let mut dw = DMatrix::zeros(n, n);
                dw[(*a, *b)] = 1.0;
                dw[(*b, *a)] = -1.0;
                (*amplitude, w, dw)
            }
        };
        let scale = amp * chi_t;

        // X^k = scale * m(|z|^2) * w^k
        let value = &w * (scale * m);
        // d_j X^k = scale * (dm * 2 z_j * w^k + m * dw_{kj})
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                jac[(k, j)] = scale * (dm * 2.0 * z[j] * w[k] + m * dw[(k, j)]);
            }
        }
        // d_i d_j X^k = scale * (d2m * 4 z_i z_j w^k + dm * 2 delta_ij w^k
        //               + dm * 2 z_j dw_{ki} + dm * 2 z_i dw_{kj})
        let mut hess = vec![DMatrix::zeros(n, n); n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = d2m * 4.0 * z[i] * z[j] * w[k];
                    if i == j {
                        v += dm * 2.0 * w[k];
                    }
                    v += dm * 2.0 * z[j] * dw[(k, i)] + dm * 2.0 * z[i] * dw[(k, j)];
                    hess[k][(i, j)] = scale * v;
                }
            }
        }
        FieldJet { value, jac, hess }
    }

    fn flow_options() -> OdeOptions {
        OdeOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            ..OdeOptions::default()
        }
    }

    /// Fast exit: points outside the generator's support never move.
    fn outside_support(&self, t: f64, z: &DVector<f64>) -> bool {
        match self.kind {
            DiffeoKind::Identity => true,
            DiffeoKind::Flow(_) => {
                t.abs() >= self.time_width
                    || z.norm_squared() >= self.support_radius * self.support_radius
            }
        }
    }

    /// `psi1(t, z)`.
    pub fn psi1(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        if self.outside_support(t, z) {
            return z.clone();
        }
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            let jet = self.field_jet(t, y);
            dy.copy_from(&jet.value);
        };
        integrate_span(rhs, z.clone(), 1.0, Self::flow_options())
            .expect("time-1 flow of a bounded smooth field cannot fail")
    }

    /// Inverse map `psi1^{-1}(t, .)` via the backward flow.
    pub fn psi1_inverse(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        if self.outside_support(t, z) {
            return z.clone();
        }
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            let jet = self.field_jet(t, y);
            dy.copy_from(&jet.value);
        };
        integrate_span(rhs, z.clone(), -1.0, Self::flow_options())
            .expect("time-1 flow of a bounded smooth field cannot fail")
    }

    /// `psi1` together with its spatial Jacobian `J_{a i} = d psi1^a / d z_i`.
    pub fn psi1_with_jacobian(&self, t: f64, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim;
        if self.outside_support(t, z) {
            return (z.clone(), DMatrix::identity(n, n));
        }
        // State: [Z (n) | J (n^2, column-major)]
        let mut y0 = DVector::zeros(n + n * n);
        for i in 0..n {
            y0[i] = z[i];
        }
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            let pos = y.rows(0, n).into_owned();
            let jet = self.field_jet(t, &pos);
            for a in 0..n {
                dy[a] = jet.value[a];
            }
            // dJ^a_i/ds = sum_b dX^a/dz_b J^b_i
            for i in 0..n {
                for a in 0..n {
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += jet.jac[(a, b)] * y[n + i * n + b];
                    }
                    dy[n + i * n + a] = acc;
                }
            }
        };
        let y = integrate_span(rhs, y0, 1.0, Self::flow_options())
            .expect("time-1 flow of a bounded smooth field cannot fail");
        let pos = y.rows(0, n).into_owned();
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            for a in 0..n {
                jac[(a, i)] = y[n + i * n + a];
            }
        }
        (pos, jac)
    }

    /// `psi1`, its Jacobian, and the second derivatives
    /// `H[a][(i, j)] = d^2 psi1^a / d z_i d z_j` from the second
    /// variational equation.
    pub fn psi1_with_jet(
        &self,
        t: f64,
        z: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dim;
        if self.outside_support(t, z) {
            return (
                z.clone(),
                DMatrix::identity(n, n),
                vec![DMatrix::zeros(n, n); n],
            );
        }
        // State: [Z (n) | J (n^2) | H (n^3)] with J^a_i at n + i*n + a and
        // H^a_{ij} at n + n^2 + (i*n + j)*n + a.
        let nn = n * n;
        let mut y0 = DVector::zeros(n + nn + n * nn);
        for i in 0..n {
            y0[i] = z[i];
        }
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            let pos = y.rows(0, n).into_owned();
            let jet = self.field_jet(t, &pos);
            for a in 0..n {
                dy[a] = jet.value[a];
            }
            for i in 0..n {
                for a in 0..n {
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += jet.jac[(a, b)] * y[n + i * n + b];
                    }
                    dy[n + i * n + a] = acc;
                }
            }
            // dH^a_{ij}/ds = sum_{bc} d2X^a/dz_b dz_c J^b_i J^c_j
            //             + sum_b dX^a/dz_b H^b_{ij}
            for i in 0..n {
                for j in 0..n {
                    for a in 0..n {
                        let mut acc = 0.0;
                        for b in 0..n {
                            let jbi = y[n + i * n + b];
                            for c in 0..n {
                                acc += jet.hess[a][(b, c)] * jbi * y[n + j * n + c];
                            }
                            acc += jet.jac[(a, b)] * y[n + nn + (i * n + j) * n + b];
                        }
                        dy[n + nn + (i * n + j) * n + a] = acc;
                    }
                }
            }
        };
        let y = integrate_span(rhs, y0, 1.0, Self::flow_options())
            .expect("time-1 flow of a bounded smooth field cannot fail");
        let pos = y.rows(0, n).into_owned();
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            for a in 0..n {
                jac[(a, i)] = y[n + i * n + a];
            }
        }
        let mut hess = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    hess[a][(i, j)] = y[n + nn + (i * n + j) * n + a];
                }
            }
        }
        (pos, jac, hess)
    }
}
