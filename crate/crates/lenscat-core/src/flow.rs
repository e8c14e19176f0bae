//! Frozen-time geodesic flow in cotangent form.
//!
//! For a fixed time slice `t`, the lifted geodesics of `g(t)` obey
//!
//! ```text
//! dz_k/ds   =  2 Σ_l g^{kl} ζ_l,
//! dζ_k/ds   = -Σ_{ij} ∂_{z_k} g^{ij} ζ_i ζ_j,
//! ```
//!
//! which moves with g-speed `2|ζ|_g`. All public quantities use unit-speed
//! arc length, so the right-hand side here is rescaled by `1/(2|ζ|_g)`;
//! the energy `h = Σ g^{ij} ζ_i ζ_j` is a first integral either way and is
//! monitored along every trajectory.

use nalgebra::{Cholesky, DVector};

use crate::metric::MetricField;
use crate::ode::{single_step, Dp5, OdeOptions};
use crate::{Error, Result};

/// A point of the frozen-time phase space: `t` is a parameter along the
/// flow, `z` a position, `zeta` a covector.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentState {
    pub t: f64,
    pub z: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl CotangentState {
    pub fn new(t: f64, z: DVector<f64>, zeta: DVector<f64>) -> Self {
        CotangentState { t, z, zeta }
    }

    /// Energy `h = Σ g^{ij} ζ_i ζ_j`.
    pub fn energy(&self, field: &MetricField) -> Result<f64> {
        let (_, g_inv) = field.eval_metric(self.t, &self.z)?;
        Ok(self.zeta.dot(&(&g_inv * &self.zeta)))
    }
}

/// Unit-speed Hamiltonian right-hand side at `state`.
///
/// Returns `(dz/ds, dζ/ds)` with `|dz/ds|_g = 1`; scaling `ζ` leaves the
/// direction of motion unchanged.
pub fn hamilton_rhs(
    field: &MetricField,
    state: &CotangentState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if state.zeta.norm() < 1e-14 {
        return Err(Error::ZeroMomentum);
    }
    let n = field.dim();
    let (g, dg) = field.metric_with_grad(state.t, &state.z);
    let g_inv = match Cholesky::new(g) {
        Some(c) => c.inverse(),
        None => {
            return Err(Error::NonPositiveDefinite {
                t: state.t,
                min_eig: f64::NAN,
            })
        }
    };
    let w = &g_inv * &state.zeta; // raised covector
    let speed = state.zeta.dot(&w).sqrt(); // |ζ|_g
    if !(speed > 0.0) {
        return Err(Error::ZeroMomentum);
    }
    let dz = &w / speed;
    // raw dζ_k = -Σ ∂_k g^{ij} ζ_i ζ_j = + wᵀ (∂_k g) w, then / (2|ζ|_g)
    let mut dzeta = DVector::zeros(n);
    for k in 0..n {
        dzeta[k] = w.dot(&(&dg[k] * &w)) / (2.0 * speed);
    }
    Ok((dz, dzeta))
}

/// Termination condition for [`integrate_ray`].
#[derive(Debug, Clone)]
pub enum StopCondition {
    /// Stop exactly at this arc length.
    ArcLength(f64),
    /// Stop at the first outward crossing of `{|z| = radius}`.
    ExitBall { radius: f64 },
    /// Stop at the first crossing of `{normal·z = offset}`.
    PlaneCrossing { normal: DVector<f64>, offset: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Arc-length budget before declaring the ray trapped. Defaults to
    /// `50 R` of the field when `None`.
    pub l_max: Option<f64>,
    /// Re-projects `ζ` onto the initial energy shell after every accepted
    /// step. Off by default; a robustness mode for tabulated metrics.
    pub renormalize_energy: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            l_max: None,
            renormalize_energy: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub s: f64,
    pub z: DVector<f64>,
    pub zeta: DVector<f64>,
    pub energy: f64,
}

/// A unit-speed trajectory of the frozen-time flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub t: f64,
    pub samples: Vec<TrajectorySample>,
    pub total_length: f64,
    /// True when the requested stop surface was reached.
    pub exited: bool,
    /// Degenerate tangential entry: the ray never entered the ball.
    pub immediate_exit: bool,
    /// Max relative deviation of the energy from its initial value.
    pub max_energy_drift: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory has samples")
    }

    /// Writes the CSV export `(s, z_1..z_n, zeta_1..zeta_n, energy)`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "s")?;
        for i in 1..=self.dim {
            write!(w, ",z_{i}")?;
        }
        for i in 1..=self.dim {
            write!(w, ",zeta_{i}")?;
        }
        writeln!(w, ",energy")?;
        for sample in &self.samples {
            write!(w, "{}", sample.s)?;
            for v in sample.z.iter() {
                write!(w, ",{v}")?;
            }
            for v in sample.zeta.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", sample.energy)?;
        }
        Ok(())
    }
}

type EventFn = Box<dyn Fn(&DVector<f64>) -> f64>;
type EventDerivFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64>;

struct EventSpec {
    /// Event function; the trajectory stops at its first admissible zero.
    f: EventFn,
    /// Derivative of `f` along the flow, given the state and its velocity.
    df: EventDerivFn,
    /// Upward crossings only (exit events) versus any sign change.
    upward_only: bool,
    /// |f| scale at which the root counts as localized.
    tol: f64,
    /// Crossings are armed only after `f` has been below `-arm_tol`.
    arm_tol: f64,
    /// Minimum |df| at an on-surface start for the crossing to be
    /// resolvable; slower starts count as degenerate tangential entries.
    derivative_floor: f64,
}

/// Integrates the frozen-time flow from `start` until `stop`.
///
/// Uses an embedded adaptive Runge–Kutta pair; stop surfaces are localized
/// by sign-change bracketing over accepted steps followed by a
/// regula-falsi/bisection refinement that re-takes a single controlled
/// step from the bracket start, so the terminal sample carries integrator
/// accuracy.
pub fn integrate_ray(
    field: &MetricField,
    start: &CotangentState,
    stop: &StopCondition,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = field.dim();
    if start.zeta.norm() < 1e-14 {
        return Err(Error::ZeroMomentum);
    }
    let energy0 = start.energy(field)?;
    if !(energy0 > 0.0) || !energy0.is_finite() {
        return Err(Error::ZeroMomentum);
    }
    let l_max = opts.l_max.unwrap_or(50.0 * field.support_radius());
    let t = start.t;

    // Pack (z, ζ); the RHS marks failures with NaN so the controller
    // rejects the step instead of unwinding through the closure.
    let rhs = move |y: &DVector<f64>, dy: &mut DVector<f64>| {
        let z = y.rows(0, n).into_owned();
        let zeta = y.rows(n, n).into_owned();
        match hamilton_rhs(field, &CotangentState { t, z, zeta }) {
            Ok((dz, dzeta)) => {
                for i in 0..n {
                    dy[i] = dz[i];
                    dy[n + i] = dzeta[i];
                }
            }
            Err(_) => dy.fill(f64::NAN),
        }
    };

    #[allow(clippy::type_complexity)]
    let (event, h_cap, target_len): (Option<EventSpec>, f64, Option<f64>) = match stop {
        StopCondition::ArcLength(len) => {
            if !(*len > 0.0) {
                return Err(Error::invalid("stop condition", "arc length must be positive"));
            }
            (None, f64::INFINITY, Some(*len))
        }
        StopCondition::ExitBall { radius } => {
            let r = *radius;
            if !(r > 0.0) {
                return Err(Error::invalid("stop condition", "ball radius must be positive"));
            }
            let f = Box::new(move |y: &DVector<f64>| y.rows(0, n).norm_squared() - r * r);
            let df = Box::new(move |y: &DVector<f64>, dy: &DVector<f64>| {
                2.0 * y.rows(0, n).dot(&dy.rows(0, n))
            });
            (
                Some(EventSpec {
                    f,
                    df,
                    upward_only: true,
                    tol: 1e-12 * r * r,
                    arm_tol: 1e-14 * r * r,
                    derivative_floor: 2e-5 * r,
                }),
                // keep steps small enough that a chord cannot jump the shell
                r / 8.0,
                None,
            )
        }
        StopCondition::PlaneCrossing { normal, offset } => {
            let nrm = normal.norm();
            if nrm < 1e-14 {
                return Err(Error::invalid("stop condition", "zero plane normal"));
            }
            let unit = normal / nrm;
            let unit_d = unit.clone();
            let c = *offset / nrm;
            let f = Box::new(move |y: &DVector<f64>| unit.dot(&y.rows(0, n)) - c);
            let df = Box::new(move |_y: &DVector<f64>, dy: &DVector<f64>| {
                unit_d.dot(&dy.rows(0, n))
            });
            let scale = c.abs().max(1.0);
            (
                Some(EventSpec {
                    f,
                    df,
                    upward_only: false,
                    tol: 1e-12 * scale,
                    arm_tol: 1e-14 * scale,
                    derivative_floor: 1e-8,
                }),
                f64::INFINITY,
                None,
            )
        }
    };

    let mut y0 = DVector::zeros(2 * n);
    for i in 0..n {
        y0[i] = start.z[i];
        y0[n + i] = start.zeta[i];
    }
    let ode_opts = OdeOptions {
        abs_tol: opts.abs_tol,
        rel_tol: opts.rel_tol,
        h_max: h_cap,
        ..OdeOptions::default()
    };
    let mut stepper = Dp5::new(rhs, 0.0, y0.clone(), ode_opts);

    let energy_of = |y: &DVector<f64>| -> f64 {
        let z = y.rows(0, n).into_owned();
        let zeta = y.rows(n, n).into_owned();
        CotangentState { t, z, zeta }
            .energy(field)
            .unwrap_or(f64::NAN)
    };

    let sample_of = |s: f64, y: &DVector<f64>, energy: f64| TrajectorySample {
        s,
        z: y.rows(0, n).into_owned(),
        zeta: y.rows(n, n).into_owned(),
        energy,
    };

    let mut samples = vec![sample_of(0.0, &y0, energy0)];
    let mut max_drift = 0.0f64;
    let mut armed = false;
    // Cap applied to the first step only, so an on-surface start lands
    // strictly inside before the crossing detector takes over.
    let mut first_cap = f64::INFINITY;
    let mut e_old = event.as_ref().map(|ev| (ev.f)(&y0));

    if let (Some(ev), Some(e0)) = (event.as_ref(), e_old) {
        if !ev.upward_only {
            // Two-sided events fire on any sign change once off the surface.
            armed = e0.abs() > ev.arm_tol;
        } else if e0 < -ev.arm_tol {
            armed = true;
        } else {
            // On or outside the surface: decide by the normal velocity.
            let de0 = (ev.df)(&y0, stepper.k1());
            if de0 < -ev.derivative_floor {
                armed = true;
                first_cap = 0.25 * de0.abs();
            } else {
                // Tangential or outward start: immediate exit with zero
                // interior length, flagged.
                return Ok(Trajectory {
                    dim: n,
                    t,
                    samples,
                    total_length: 0.0,
                    exited: true,
                    immediate_exit: true,
                    max_energy_drift: 0.0,
                });
            }
        }
    }

    loop {
        let remaining = target_len.map(|len| len - stepper.s);
        if let Some(rem) = remaining {
            if rem <= 1e-14 {
                break;
            }
        }
        let y_before = stepper.y.clone();
        let k1_before = stepper.k1().clone();
        let cap = remaining.unwrap_or(f64::INFINITY).min(first_cap);
        first_cap = f64::INFINITY;
        let step = stepper.step(cap)?;

        if let (Some(ev), Some(e_prev)) = (event.as_ref(), e_old) {
            let e_new = (ev.f)(&step.y_new);
            let crossed = if ev.upward_only {
                armed && e_prev < 0.0 && e_new >= 0.0
            } else {
                armed && e_prev.signum() != e_new.signum()
            };
            if crossed {
                let h = step.s_new - step.s_old;
                let (theta, y_hit) =
                    refine_event(stepper.rhs(), &y_before, &k1_before, h, e_prev, e_new, ev);
                let s_hit = step.s_old + theta;
                let energy = energy_of(&y_hit);
                max_drift = max_drift.max(((energy - energy0) / energy0).abs());
                samples.push(sample_of(s_hit, &y_hit, energy));
                return Ok(Trajectory {
                    dim: n,
                    t,
                    samples,
                    total_length: s_hit,
                    exited: true,
                    immediate_exit: false,
                    max_energy_drift: max_drift,
                });
            }
            if !armed {
                armed = if ev.upward_only {
                    e_new < -ev.arm_tol
                } else {
                    e_new.abs() > ev.arm_tol
                };
            }
            e_old = Some(e_new);
        }

        if opts.renormalize_energy {
            let mut y = stepper.y.clone();
            let energy = energy_of(&y);
            if energy.is_finite() && energy > 0.0 {
                let factor = (energy0 / energy).sqrt();
                for i in 0..n {
                    y[n + i] *= factor;
                }
                stepper.reset_state(y);
            }
        }

        let energy = energy_of(&stepper.y);
        max_drift = max_drift.max(((energy - energy0) / energy0).abs());
        samples.push(sample_of(stepper.s, &stepper.y, energy));

        if event.is_some() && stepper.s > l_max {
            return Err(Error::TrappedRay { l_max });
        }
        if event.is_none() && target_len.is_none() {
            break;
        }
    }

    let total = stepper.s;
    Ok(Trajectory {
        dim: n,
        t,
        samples,
        total_length: total,
        exited: target_len.is_some(),
        immediate_exit: false,
        max_energy_drift: max_drift,
    })
}

/// Locates the event zero inside an accepted step by Illinois
/// regula-falsi on the step fraction, evaluating candidates with a single
/// controlled step from the bracket start.
fn refine_event<F>(
    rhs: &F,
    y_old: &DVector<f64>,
    k1_old: &DVector<f64>,
    h: f64,
    e_lo: f64,
    e_hi: f64,
    ev: &EventSpec,
) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
{
    let mut a = 0.0f64;
    let mut b = h;
    let mut fa = e_lo;
    let mut fb = e_hi;
    let mut side = 0i8;
    let mut best = (b, single_step(rhs, y_old, k1_old, b));
    for _ in 0..128 {
        if (b - a).abs() < 1e-15 * h.max(1e-30) {
            break;
        }
        let mut m = if (fb - fa).abs() > 0.0 {
            b - fb * (b - a) / (fb - fa)
        } else {
            0.5 * (a + b)
        };
        if !(m > a && m < b) {
            m = 0.5 * (a + b);
        }
        let y_m = single_step(rhs, y_old, k1_old, m);
        let fm = (ev.f)(&y_m);
        best = (m, y_m);
        if fm.abs() <= ev.tol {
            return best;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = m;
            fb = fm;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat(dim: usize) -> MetricField {
        MetricField::flat(dim, 3.0, 1.0).unwrap()
    }

    #[test]
    fn hamilton_rhs_flat_is_straight() {
        let field = flat(2);
        let state = CotangentState::new(
            0.0,
            DVector::from_vec(vec![-3.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let (dz, dzeta) = hamilton_rhs(&field, &state).unwrap();
        assert_relative_eq!(dz[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(dz[1], 0.0, epsilon = 1e-14);
        assert_eq!(dzeta.norm(), 0.0);
    }

    #[test]
    fn hamilton_rhs_is_scale_invariant() {
        let field = flat(2);
        let zeta = DVector::from_vec(vec![3.0 / 5.0, 4.0 / 5.0]);
        let state = CotangentState::new(0.0, DVector::zeros(2), zeta.clone());
        let scaled = CotangentState::new(0.0, DVector::zeros(2), zeta * 7.0);
        let (dz1, _) = hamilton_rhs(&field, &state).unwrap();
        let (dz2, _) = hamilton_rhs(&field, &scaled).unwrap();
        assert_relative_eq!((dz1 - dz2).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_momentum_is_rejected() {
        let field = flat(2);
        let state = CotangentState::new(0.0, DVector::zeros(2), DVector::zeros(2));
        assert!(matches!(
            hamilton_rhs(&field, &state),
            Err(Error::ZeroMomentum)
        ));
    }

    #[test]
    fn flat_chord_has_exact_length() {
        let field = flat(2);
        let start = CotangentState::new(
            0.0,
            DVector::from_vec(vec![-3.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::ExitBall { radius: 3.0 },
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!(traj.exited);
        assert_relative_eq!(traj.total_length, 6.0, epsilon = 1e-9);
        let end = traj.terminal();
        assert_relative_eq!(end.z[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(end.z[1], 0.0, epsilon = 1e-10);
        assert!(traj.max_energy_drift < 1e-12);
    }

    #[test]
    fn offset_chord_length_matches_geometry() {
        let field = flat(2);
        let start = CotangentState::new(
            0.0,
            DVector::from_vec(vec![-(8.0f64).sqrt(), 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::ExitBall { radius: 3.0 },
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(traj.total_length, 2.0 * (8.0f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn arc_length_stop_is_exact() {
        let field = flat(3);
        let start = CotangentState::new(
            0.2,
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::ArcLength(2.5),
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(traj.total_length, 2.5, epsilon = 1e-12);
        assert_relative_eq!(traj.terminal().z[1], 2.5, epsilon = 1e-10);
    }

    #[test]
    fn plane_crossing_stops_on_the_plane() {
        let field = flat(2);
        let start = CotangentState::new(
            0.0,
            DVector::from_vec(vec![-1.0, 0.3]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::PlaneCrossing {
                normal: DVector::from_vec(vec![1.0, 0.0]),
                offset: 0.7,
            },
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!(traj.exited);
        assert_relative_eq!(traj.terminal().z[0], 0.7, epsilon = 1e-10);
    }

    #[test]
    fn plane_crossing_from_positive_side() {
        let field = flat(2);
        let start = CotangentState::new(
            0.0,
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::PlaneCrossing {
                normal: DVector::from_vec(vec![1.0, 0.0]),
                offset: -1.5,
            },
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!(traj.exited);
        assert_relative_eq!(traj.terminal().z[0], -1.5, epsilon = 1e-10);
        assert_relative_eq!(traj.total_length, 3.5, epsilon = 1e-10);
    }

    #[test]
    fn straight_segments_are_collinear() {
        let field = flat(2);
        let start = CotangentState::new(
            0.0,
            DVector::from_vec(vec![-3.0, 0.5]),
            DVector::from_vec(vec![0.8, 0.6]),
        );
        let traj = integrate_ray(
            &field,
            &start,
            &StopCondition::ExitBall { radius: 3.0 },
            &IntegrateOptions::default(),
        )
        .unwrap();
        let z0 = &traj.samples[0].z;
        let dir = DVector::from_vec(vec![0.8, 0.6]);
        for s in &traj.samples {
            let d = &s.z - z0;
            let off = &d - &dir * d.dot(&dir);
            assert!(off.norm() < 1e-10, "collinearity violated");
        }
    }
}
