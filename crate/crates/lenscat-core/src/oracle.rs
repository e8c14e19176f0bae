//! Brute-force reference integrators.
//!
//! These fixed-step classical RK4 tracers exist to cross-validate the
//! adaptive flow: they share nothing with it beyond the metric evaluation.
//! Two independent formulations are provided: the cotangent Hamiltonian
//! system, re-derived locally, and the tangent (Lagrangian) geodesic
//! equation `z'' + Γ(z', z') = 0` driven by Christoffel symbols. Exits
//! from a ball are refined by bisection on a final partial step.

use nalgebra::{Cholesky, DVector};

use crate::metric::MetricField;
use crate::{Error, Result};

/// Exit record of a fixed-step trace.
#[derive(Debug, Clone)]
pub struct OracleExit {
    pub z: DVector<f64>,
    /// Terminal covector (tangent traces lower their velocity with `g`).
    pub zeta: DVector<f64>,
    pub length: f64,
}

struct Rk4Workspace {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    stage: DVector<f64>,
}

impl Rk4Workspace {
    fn new(len: usize) -> Self {
        Rk4Workspace {
            k1: DVector::zeros(len),
            k2: DVector::zeros(len),
            k3: DVector::zeros(len),
            k4: DVector::zeros(len),
            stage: DVector::zeros(len),
        }
    }
}

fn rk4_step<F>(rhs: &F, y: &DVector<f64>, h: f64, ws: &mut Rk4Workspace, out: &mut DVector<f64>)
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    let n = y.len();
    rhs(y, &mut ws.k1);
    for i in 0..n {
        ws.stage[i] = y[i] + 0.5 * h * ws.k1[i];
    }
    rhs(&ws.stage, &mut ws.k2);
    for i in 0..n {
        ws.stage[i] = y[i] + 0.5 * h * ws.k2[i];
    }
    rhs(&ws.stage, &mut ws.k3);
    for i in 0..n {
        ws.stage[i] = y[i] + h * ws.k3[i];
    }
    rhs(&ws.stage, &mut ws.k4);
    for i in 0..n {
        out[i] = y[i] + (h / 6.0) * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Runs fixed steps until `|z| >= radius`, then bisects the final partial
/// step until the surface is met within `1e-12` (absolute, scaled by r²).
fn trace_to_exit<F>(
    rhs: F,
    y0: DVector<f64>,
    dim: usize,
    h: f64,
    radius: f64,
    l_max: f64,
) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    let r2 = radius * radius;
    let surf = |y: &DVector<f64>| y.rows(0, dim).norm_squared() - r2;
    let mut s = 0.0;
    let mut y = y0.clone();
    let mut y_next = y0;
    let mut ws = Rk4Workspace::new(y.len());
    // March until we are inside, then look for the outward crossing.
    let mut inside = surf(&y) < -1e-14 * r2;
    loop {
        rk4_step(&rhs, &y, h, &mut ws, &mut y_next);
        let e_next = surf(&y_next);
        if inside && e_next >= 0.0 {
            // bisect the partial step length
            let mut lo = 0.0f64;
            let mut hi = h;
            let mut y_hit = y_next.clone();
            let mut y_mid = y_next;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                rk4_step(&rhs, &y, mid, &mut ws, &mut y_mid);
                let e_mid = surf(&y_mid);
                if e_mid.abs() <= 1e-12 * r2 {
                    return Ok((y_mid, s + mid));
                }
                if e_mid < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                    y_hit.copy_from(&y_mid);
                }
                if hi - lo < 1e-16 * h.max(1e-30) {
                    break;
                }
            }
            return Ok((y_hit, s + hi));
        }
        if !inside && e_next < -1e-14 * r2 {
            inside = true;
        }
        std::mem::swap(&mut y, &mut y_next);
        s += h;
        if s > l_max {
            return Err(Error::TrappedRay { l_max });
        }
    }
}

/// Fixed-step RK4 trace of the unit-speed cotangent system from a point of
/// the sphere `{|z| = radius}` until the first outward crossing.
pub fn trace_cotangent_fixed(
    field: &MetricField,
    t: f64,
    z0: &DVector<f64>,
    zeta0: &DVector<f64>,
    h: f64,
    radius: f64,
    l_max: f64,
) -> Result<OracleExit> {
    let n = field.dim();
    let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
        let z = y.rows(0, n).into_owned();
        let zeta = y.rows(n, n).into_owned();
        let (g, dg) = field.metric_with_grad(t, &z);
        let g_inv = Cholesky::new(g).expect("oracle metric must be SPD").inverse();
        let w = &g_inv * &zeta;
        let speed = zeta.dot(&w).sqrt();
        for i in 0..n {
            dy[i] = w[i] / speed;
        }
        for k in 0..n {
            dy[n + k] = w.dot(&(&dg[k] * &w)) / (2.0 * speed);
        }
    };
    let mut y0 = DVector::zeros(2 * n);
    for i in 0..n {
        y0[i] = z0[i];
        y0[n + i] = zeta0[i];
    }
    let (y, length) = trace_to_exit(rhs, y0, n, h, radius, l_max)?;
    Ok(OracleExit {
        z: y.rows(0, n).into_owned(),
        zeta: y.rows(n, n).into_owned(),
        length,
    })
}

/// Fixed-step RK4 trace of the tangent-form geodesic equation
/// `u' = -Γ(u, u)` from a point of the sphere until the first outward
/// crossing; the terminal covector is `g u`.
pub fn trace_tangent_fixed(
    field: &MetricField,
    t: f64,
    z0: &DVector<f64>,
    v0: &DVector<f64>,
    h: f64,
    radius: f64,
    l_max: f64,
) -> Result<OracleExit> {
    let n = field.dim();
    let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
        let z = y.rows(0, n).into_owned();
        let u = y.rows(n, n).into_owned();
        let gamma = field
            .christoffel(t, &z)
            .expect("oracle metric must be SPD");
        for i in 0..n {
            dy[i] = u[i];
        }
        for k in 0..n {
            dy[n + k] = -u.dot(&(&gamma[k] * &u));
        }
    };
    let mut y0 = DVector::zeros(2 * n);
    for i in 0..n {
        y0[i] = z0[i];
        y0[n + i] = v0[i];
    }
    let (y, length) = trace_to_exit(rhs, y0, n, h, radius, l_max)?;
    let z = y.rows(0, n).into_owned();
    let u = y.rows(n, n).into_owned();
    let g = field.metric_matrix(t, &z);
    Ok(OracleExit {
        zeta: &g * &u,
        z,
        length,
    })
}
