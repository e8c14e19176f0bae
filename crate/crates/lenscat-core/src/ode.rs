//! Embedded Dormand–Prince 5(4) stepper for autonomous systems.
//!
//! One implementation backs both the frozen-time geodesic flow and the
//! time-1 flows that generate builtin diffeomorphisms. The controller is a
//! plain I-controller with the usual safety factor; FSAL is exploited.
//! Stage buffers live in the stepper and stage combinations are explicit
//! loops: the right-hand sides here are cheap, so allocation and
//! expression-template overhead would otherwise dominate.

use nalgebra::DVector;

use crate::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

/// One accepted step of the adaptive integrator.
pub(crate) struct AcceptedStep {
    pub s_old: f64,
    pub s_new: f64,
    pub y_new: DVector<f64>,
}

pub(crate) struct Dp5<F>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    rhs: F,
    pub s: f64,
    pub y: DVector<f64>,
    h: f64,
    k1: DVector<f64>,
    // stage workspace, reused across steps
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    k5: DVector<f64>,
    k6: DVector<f64>,
    k7: DVector<f64>,
    stage: DVector<f64>,
    y_new: DVector<f64>,
    opts: OdeOptions,
    steps_taken: usize,
}

/// Takes one raw DP5 step of size `h` from `y`; no error control.
/// Used for event refinement inside an accepted step.
pub(crate) fn single_step<F>(rhs: &F, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    let n = y.len();
    let mut k2 = DVector::zeros(n);
    let mut k3 = DVector::zeros(n);
    let mut k4 = DVector::zeros(n);
    let mut k5 = DVector::zeros(n);
    let mut k6 = DVector::zeros(n);
    let mut tmp = DVector::zeros(n);
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    rhs(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    rhs(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    rhs(&tmp, &mut k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    rhs(&tmp, &mut k5);
    for i in 0..n {
        tmp[i] =
            y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    rhs(&tmp, &mut k6);
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] =
            y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    out
}

impl<F> Dp5<F>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    pub fn new(rhs: F, s0: f64, y0: DVector<f64>, opts: OdeOptions) -> Self {
        let n = y0.len();
        let mut k1 = DVector::zeros(n);
        rhs(&y0, &mut k1);
        // Conservative initial step from the RHS magnitude.
        let scale = opts.abs_tol + opts.rel_tol * y0.norm();
        let f_norm = k1.norm();
        let mut h = if f_norm > 1e-300 {
            0.01 * (y0.norm().max(1.0)) / f_norm
        } else {
            1e-3
        };
        h = h.min(opts.h_max).min(1e-1).max(1e3 * f64::EPSILON * scale.max(1e-6));
        Dp5 {
            rhs,
            s: s0,
            y: y0,
            h,
            k1,
            k2: DVector::zeros(n),
            k3: DVector::zeros(n),
            k4: DVector::zeros(n),
            k5: DVector::zeros(n),
            k6: DVector::zeros(n),
            k7: DVector::zeros(n),
            stage: DVector::zeros(n),
            y_new: DVector::zeros(n),
            opts,
            steps_taken: 0,
        }
    }

    pub fn rhs(&self) -> &F {
        &self.rhs
    }

    pub fn k1(&self) -> &DVector<f64> {
        &self.k1
    }

    /// Replaces the current state (e.g. after an energy re-projection) and
    /// refreshes the FSAL stage.
    pub fn reset_state(&mut self, y: DVector<f64>) {
        (self.rhs)(&y, &mut self.k1);
        self.y = y;
    }

    /// Advances by at most `h_cap` (if finite), returning the accepted step.
    pub fn step(&mut self, h_cap: f64) -> Result<AcceptedStep> {
        let n = self.y.len();
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.opts.max_steps {
                return Err(Error::StepFailure { s: self.s });
            }
            let h = self.h.min(h_cap).min(self.opts.h_max);
            if h < 1e4 * f64::EPSILON * self.s.abs().max(1.0) {
                return Err(Error::StepFailure { s: self.s });
            }
            {
                let y = &self.y;
                let k1 = &self.k1;
                let stage = &mut self.stage;
                for i in 0..n {
                    stage[i] = y[i] + h * A21 * k1[i];
                }
                (self.rhs)(stage, &mut self.k2);
                for i in 0..n {
                    stage[i] = y[i] + h * (A31 * k1[i] + A32 * self.k2[i]);
                }
                (self.rhs)(stage, &mut self.k3);
                for i in 0..n {
                    stage[i] = y[i] + h * (A41 * k1[i] + A42 * self.k2[i] + A43 * self.k3[i]);
                }
                (self.rhs)(stage, &mut self.k4);
                for i in 0..n {
                    stage[i] = y[i]
                        + h * (A51 * k1[i]
                            + A52 * self.k2[i]
                            + A53 * self.k3[i]
                            + A54 * self.k4[i]);
                }
                (self.rhs)(stage, &mut self.k5);
                for i in 0..n {
                    stage[i] = y[i]
                        + h * (A61 * k1[i]
                            + A62 * self.k2[i]
                            + A63 * self.k3[i]
                            + A64 * self.k4[i]
                            + A65 * self.k5[i]);
                }
                (self.rhs)(stage, &mut self.k6);
                for i in 0..n {
                    self.y_new[i] = y[i]
                        + h * (B1 * k1[i] + B3 * self.k3[i] + B4 * self.k4[i] + B5 * self.k5[i]
                            + B6 * self.k6[i]);
                }
                (self.rhs)(&self.y_new, &mut self.k7);
            }
            let mut err_sq = 0.0;
            for i in 0..n {
                let err_i = h
                    * (E1 * self.k1[i]
                        + E3 * self.k3[i]
                        + E4 * self.k4[i]
                        + E5 * self.k5[i]
                        + E6 * self.k6[i]
                        + E7 * self.k7[i]);
                let sc = self.opts.abs_tol
                    + self.opts.rel_tol * self.y[i].abs().max(self.y_new[i].abs());
                let r = err_i / sc;
                err_sq += r * r;
            }
            let err = (err_sq / n as f64).sqrt();
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            if err <= 1.0 {
                let s_old = self.s;
                self.s += h;
                self.y.copy_from(&self.y_new);
                self.k1.copy_from(&self.k7); // FSAL
                if h >= h_cap {
                    // capped step: do not let the cap shrink future steps
                    self.h = self.h.max(h * factor);
                } else {
                    self.h = h * factor;
                }
                return Ok(AcceptedStep {
                    s_old,
                    s_new: self.s,
                    y_new: self.y.clone(),
                });
            }
            self.h = h * factor;
        }
    }
}

/// Integrates the autonomous system from `y0` over parameter length `span`
/// (signed) and returns the endpoint state.
pub(crate) fn integrate_span<F>(
    rhs: F,
    y0: DVector<f64>,
    span: f64,
    opts: OdeOptions,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    if span == 0.0 {
        return Ok(y0);
    }
    // Run in a forward parameter by folding the sign into the RHS.
    let sign = span.signum();
    let len = span.abs();
    let wrapped = move |y: &DVector<f64>, dy: &mut DVector<f64>| {
        rhs(y, dy);
        *dy *= sign;
    };
    let mut stepper = Dp5::new(wrapped, 0.0, y0, opts);
    while stepper.s < len {
        let remaining = len - stepper.s;
        stepper.step(remaining)?;
    }
    Ok(stepper.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay_endpoint() {
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = -y[0];
        let y = integrate_span(rhs, DVector::from_vec(vec![1.0]), 2.0, OdeOptions::default())
            .unwrap();
        assert_relative_eq!(y[0], (-2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let y = integrate_span(
            rhs,
            DVector::from_vec(vec![1.0, 0.0]),
            20.0 * std::f64::consts::PI,
            OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-7);
        assert!(y[1].abs() < 1e-7);
    }

    #[test]
    fn backward_span_matches_inverse() {
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = y[0] * 0.3 + 0.1;
        let fwd = integrate_span(rhs, DVector::from_vec(vec![0.7]), 1.0, OdeOptions::default())
            .unwrap();
        let back = integrate_span(rhs, fwd, -1.0, OdeOptions::default()).unwrap();
        assert_relative_eq!(back[0], 0.7, epsilon = 1e-9);
    }

    #[test]
    fn single_step_matches_controlled_step_result() {
        let rhs = |y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = y[1];
            dy[1] = -1.3 * y[0];
        };
        let y0 = DVector::from_vec(vec![0.4, -0.2]);
        let mut k1 = DVector::zeros(2);
        rhs(&y0, &mut k1);
        let fine = single_step(&rhs, &y0, &k1, 1e-3);
        let exact0 = 0.4 * (1.3f64.sqrt() * 1e-3).cos()
            + (-0.2 / 1.3f64.sqrt()) * (1.3f64.sqrt() * 1e-3).sin();
        assert_relative_eq!(fine[0], exact0, epsilon = 1e-12);
    }
}
