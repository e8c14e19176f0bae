//! Lens data on the truncation sphere.
//!
//! Entries of `∂₋𝔅` are inward unit boundary rays on `{|z| = R}`; the
//! metric is Euclidean there, so the Euclidean pairing `z·v` decides the
//! side. The module computes first-exit data (scattering relation and
//! interior length), the total sojourn time in the closed form
//!
//! ```text
//! 𝔗 = z_entry·v_entry + ℓ − z_exit·v_exit,
//! ```
//!
//! exact given exit data, and as the renormalized limit
//! `s − s' − (1 + t² + |γ(s)|²)^{1/2} − (1 + t² + |γ(s')|²)^{1/2}`, plus a
//! sampled non-trapping certificate. Entries with `|t| > T` live in the
//! flat regime and shortcut to the chord formula without integration.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{integrate_ray, CotangentState, IntegrateOptions, StopCondition, Trajectory};
use crate::metric::MetricField;
use crate::sampling;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Inward,
    Outward,
}

/// A point of `∂±𝔅`: time slice, boundary point, unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRay {
    pub t: f64,
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub orientation: Orientation,
}

impl BoundaryRay {
    /// Validates the unit-direction and non-tangency invariants; the
    /// orientation is read off the sign of `z·v`.
    pub fn new(t: f64, z: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if z.len() != v.len() {
            return Err(Error::DimensionMismatch {
                left: z.len(),
                right: v.len(),
            });
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(
                "boundary ray",
                format!("direction norm {norm} is not 1 within 1e-10"),
            ));
        }
        let v = v / norm;
        let pairing = z.dot(&v);
        if pairing.abs() < 1e-12 {
            return Err(Error::TangentialRay { pairing });
        }
        let orientation = if pairing < 0.0 {
            Orientation::Inward
        } else {
            Orientation::Outward
        };
        Ok(BoundaryRay { t, z, v, orientation })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Radius of the sphere this ray lives on.
    pub fn radius(&self) -> f64 {
        self.z.norm()
    }

    /// The reversed ray `(t, z, -v)`; swaps inward and outward.
    pub fn reversed(&self) -> BoundaryRay {
        BoundaryRay {
            t: self.t,
            z: self.z.clone(),
            v: -&self.v,
            orientation: match self.orientation {
                Orientation::Inward => Orientation::Outward,
                Orientation::Outward => Orientation::Inward,
            },
        }
    }
}

/// Full first-exit record of one entry ray.
#[derive(Debug, Clone)]
pub struct ScatterResult {
    pub entry: BoundaryRay,
    pub exit: BoundaryRay,
    /// Interior arc length.
    pub length: f64,
    /// Total sojourn time (closed form).
    pub sojourn: f64,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScatterOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub l_max: Option<f64>,
    pub keep_trajectory: bool,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        ScatterOptions {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            l_max: None,
            keep_trajectory: false,
        }
    }
}

fn require_inward(entry: &BoundaryRay) -> Result<()> {
    if entry.orientation != Orientation::Inward {
        return Err(Error::invalid("scatter entry", "entry ray must be inward"));
    }
    Ok(())
}

fn closed_sojourn(entry: &BoundaryRay, exit: &BoundaryRay, length: f64) -> f64 {
    entry.z.dot(&entry.v) + length - exit.z.dot(&exit.v)
}

/// Traces one inward entry through the ball it lives on and returns the
/// exit ray, interior length and closed-form sojourn time at once.
pub fn scatter(
    field: &MetricField,
    entry: &BoundaryRay,
    opts: &ScatterOptions,
) -> Result<ScatterResult> {
    require_inward(entry)?;
    if entry.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            left: entry.dim(),
            right: field.dim(),
        });
    }
    let radius = entry.radius();

    // Flat regime: straight chord, no integration.
    if entry.t.abs() > field.time_radius() {
        let length = -2.0 * entry.z.dot(&entry.v);
        let exit_z = &entry.z + &entry.v * length;
        let exit = BoundaryRay::new(entry.t, exit_z, entry.v.clone())?;
        let sojourn = closed_sojourn(entry, &exit, length);
        return Ok(ScatterResult {
            entry: entry.clone(),
            exit,
            length,
            sojourn,
            trajectory: None,
        });
    }

    let start = CotangentState::new(entry.t, entry.z.clone(), entry.v.clone());
    let flow_opts = IntegrateOptions {
        abs_tol: opts.abs_tol,
        rel_tol: opts.rel_tol,
        l_max: opts.l_max,
        renormalize_energy: false,
    };
    let traj = integrate_ray(field, &start, &StopCondition::ExitBall { radius }, &flow_opts)?;
    if traj.immediate_exit {
        return Err(Error::invalid(
            "scatter entry",
            "degenerate tangential traversal (zero interior length)",
        ));
    }
    let terminal = traj.terminal().clone();
    // The metric is Euclidean on the sphere, so the exit velocity is the
    // normalized terminal covector.
    let v_exit = &terminal.zeta / terminal.zeta.norm();
    let exit = BoundaryRay::new(entry.t, terminal.z.clone(), v_exit)?;
    if exit.orientation != Orientation::Outward {
        return Err(Error::invalid(
            "scatter exit",
            "terminal ray is not outward; event localization failed",
        ));
    }
    let length = traj.total_length;
    let sojourn = closed_sojourn(entry, &exit, length);
    Ok(ScatterResult {
        entry: entry.clone(),
        exit,
        length,
        sojourn,
        trajectory: opts.keep_trajectory.then_some(traj),
    })
}

/// First outward crossing of the geodesic generated by `entry`
/// (the scattering relation).
pub fn scattering_relation(field: &MetricField, entry: &BoundaryRay) -> Result<BoundaryRay> {
    Ok(scatter(field, entry, &ScatterOptions::default())?.exit)
}

/// Interior arc length of the traversal generated by `entry`.
pub fn geodesic_length(field: &MetricField, entry: &BoundaryRay) -> Result<f64> {
    Ok(scatter(field, entry, &ScatterOptions::default())?.length)
}

/// Total sojourn time in the closed form
/// `z_entry·v_entry + ℓ − z_exit·v_exit`; identically zero for the flat
/// metric.
pub fn sojourn_closed(field: &MetricField, entry: &BoundaryRay) -> Result<f64> {
    Ok(scatter(field, entry, &ScatterOptions::default())?.sojourn)
}

/// Total sojourn time as the renormalized limit, evaluated at the finite
/// parameters `(s_max, -s_max)` with the ray extended straight beyond the
/// sphere.
///
/// Returns `(value, decay_estimate)` where `decay_estimate` is the signed
/// Richardson residual from comparing against `s_max / 2`; the
/// extrapolated limit is `value - decay_estimate` and the residual itself
/// decays like `1/s_max`.
pub fn sojourn_limit(
    field: &MetricField,
    entry: &BoundaryRay,
    s_max: f64,
) -> Result<(f64, f64)> {
    let radius = entry.radius();
    if !(s_max >= 10.0 * radius * (1.0 - 1e-9)) {
        return Err(Error::invalid(
            "sojourn_limit",
            format!("s_max = {s_max} must be at least 10 x radius = {}", 10.0 * radius),
        ));
    }
    let res = scatter(field, entry, &ScatterOptions::default())?;
    let value_at = |s: f64| -> f64 {
        let fwd = &res.exit.z + &res.exit.v * (s - res.length);
        let bwd = &res.entry.z - &res.entry.v * s;
        let t = entry.t;
        2.0 * s
            - (1.0 + t * t + fwd.norm_squared()).sqrt()
            - (1.0 + t * t + bwd.norm_squared()).sqrt()
    };
    let full = value_at(s_max);
    let half = value_at(0.5 * s_max);
    Ok((full, half - full))
}

/// Sampling extents for the non-trapping sweep over `∂₋𝔅`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonTrappingSpec {
    pub time_count: usize,
    pub point_count: usize,
    pub direction_count: usize,
    pub l_max: f64,
}

impl NonTrappingSpec {
    pub fn with_l_max_for(field: &MetricField) -> Self {
        NonTrappingSpec {
            time_count: 5,
            point_count: 24,
            direction_count: 12,
            l_max: 50.0 * field.support_radius(),
        }
    }
}

/// One recorded trapped entry (serializable for reports).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrappedEntry {
    pub t: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonTrappingReport {
    /// True when every sampled entry exited within the budget.
    pub certificate: bool,
    pub rays_total: usize,
    pub trapped_count: usize,
    pub max_length: f64,
    pub l_max: f64,
    /// Up to eight offending entries.
    pub trapped_entries: Vec<TrappedEntry>,
    /// Entries that failed for reasons other than trapping.
    pub other_failures: usize,
}

/// Sweeps a product lattice of `∂₋𝔅` and certifies that every sampled
/// geodesic leaves the ball within `l_max`.
pub fn check_non_trapping(field: &MetricField, spec: &NonTrappingSpec) -> NonTrappingReport {
    let n = field.dim();
    let r = field.support_radius();
    let t_span = field.time_radius();
    let mut entries = Vec::new();
    for it in 0..spec.time_count.max(1) {
        let t = if spec.time_count > 1 {
            -t_span + 2.0 * t_span * it as f64 / (spec.time_count - 1) as f64
        } else {
            0.0
        };
        for (ip, point) in sampling::sphere_lattice(n, spec.point_count, 11)
            .into_iter()
            .enumerate()
        {
            let z = &point * r;
            let inward_axis = -&point;
            for v in
                sampling::hemisphere_lattice(&inward_axis, spec.direction_count, 13 + ip as u64)
            {
                if let Ok(entry) = BoundaryRay::new(t, z.clone(), v) {
                    entries.push(entry);
                }
            }
        }
    }

    let opts = ScatterOptions {
        l_max: Some(spec.l_max),
        ..ScatterOptions::default()
    };
    let outcomes: Vec<_> = entries
        .par_iter()
        .map(|entry| scatter(field, entry, &opts).map(|res| res.length))
        .collect();

    let mut report = NonTrappingReport {
        certificate: true,
        rays_total: entries.len(),
        trapped_count: 0,
        max_length: 0.0,
        l_max: spec.l_max,
        trapped_entries: Vec::new(),
        other_failures: 0,
    };
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome {
            Ok(length) => report.max_length = report.max_length.max(length),
            Err(Error::TrappedRay { .. }) => {
                report.certificate = false;
                report.trapped_count += 1;
                if report.trapped_entries.len() < 8 {
                    report.trapped_entries.push(TrappedEntry {
                        t: entry.t,
                        z: entry.z.iter().copied().collect(),
                        v: entry.v.iter().copied().collect(),
                    });
                }
            }
            Err(_) => report.other_failures += 1,
        }
    }
    report
}

/// Writes the lens-data table
/// `(t, z_in[1..n], v_in[1..n], z_out[1..n], v_out[1..n], length, sojourn)`.
pub fn write_lens_csv<W: std::io::Write>(
    dim: usize,
    results: &[ScatterResult],
    w: &mut W,
) -> std::io::Result<()> {
    write!(w, "t")?;
    for i in 1..=dim {
        write!(w, ",z_in_{i}")?;
    }
    for i in 1..=dim {
        write!(w, ",v_in_{i}")?;
    }
    for i in 1..=dim {
        write!(w, ",z_out_{i}")?;
    }
    for i in 1..=dim {
        write!(w, ",v_out_{i}")?;
    }
    writeln!(w, ",length,sojourn")?;
    for res in results {
        write!(w, "{}", res.entry.t)?;
        for v in res.entry.z.iter() {
            write!(w, ",{v}")?;
        }
        for v in res.entry.v.iter() {
            write!(w, ",{v}")?;
        }
        for v in res.exit.z.iter() {
            write!(w, ",{v}")?;
        }
        for v in res.exit.v.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", res.length, res.sojourn)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat() -> MetricField {
        MetricField::flat(2, 3.0, 1.0).unwrap()
    }

    fn diametral_entry() -> BoundaryRay {
        BoundaryRay::new(
            0.0,
            DVector::from_vec(vec![-3.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn boundary_ray_orientation_from_pairing() {
        let inward = diametral_entry();
        assert_eq!(inward.orientation, Orientation::Inward);
        let outward = inward.reversed();
        assert_eq!(outward.orientation, Orientation::Outward);
    }

    #[test]
    fn tangential_rays_rejected() {
        let err = BoundaryRay::new(
            0.0,
            DVector::from_vec(vec![3.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        );
        assert!(matches!(err, Err(Error::TangentialRay { .. })));
    }

    #[test]
    fn flat_diametral_chord() {
        let exit = scattering_relation(&flat(), &diametral_entry()).unwrap();
        assert_relative_eq!(exit.z[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(exit.z[1], 0.0, epsilon = 1e-10);
        assert_relative_eq!(exit.v[0], 1.0, epsilon = 1e-12);
        assert_eq!(exit.orientation, Orientation::Outward);
        assert_relative_eq!(
            geodesic_length(&flat(), &diametral_entry()).unwrap(),
            6.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn flat_offset_chord() {
        let entry = BoundaryRay::new(
            0.0,
            DVector::from_vec(vec![-(8.0f64).sqrt(), 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let exit = scattering_relation(&flat(), &entry).unwrap();
        assert_relative_eq!(exit.z[0], (8.0f64).sqrt(), epsilon = 1e-9);
        assert_relative_eq!(exit.z[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(
            geodesic_length(&flat(), &entry).unwrap(),
            2.0 * (8.0f64).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn flat_sojourn_vanishes() {
        assert!(sojourn_closed(&flat(), &diametral_entry()).unwrap().abs() < 1e-10);
    }

    #[test]
    fn out_of_time_support_shortcut() {
        let entry = BoundaryRay::new(
            5.0,
            DVector::from_vec(vec![-3.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let res = scatter(&flat(), &entry, &ScatterOptions::default()).unwrap();
        assert!(res.trajectory.is_none());
        assert_relative_eq!(res.length, 6.0, epsilon = 1e-14);
        assert_eq!(res.sojourn, 0.0);
    }

    #[test]
    fn outward_entry_rejected() {
        let outward = diametral_entry().reversed();
        assert!(scattering_relation(&flat(), &outward).is_err());
    }

    #[test]
    fn sojourn_limit_flat_small_and_first_order() {
        let entry = diametral_entry();
        let (v300, _) = sojourn_limit(&flat(), &entry, 300.0 * 3.0).unwrap();
        assert!(v300.abs() <= 1e-2, "finite-s_max value {v300}");
        assert!((v300 * 900.0).abs() < 10.0, "scaled value not bounded");
        let (v600, _) = sojourn_limit(&flat(), &entry, 600.0 * 3.0).unwrap();
        let ratio = v300 / v600;
        assert!((ratio - 2.0).abs() < 0.4, "first-order decay, ratio {ratio}");
    }

    #[test]
    fn flat_non_trapping_certificate() {
        let report = check_non_trapping(
            &flat(),
            &NonTrappingSpec {
                time_count: 3,
                point_count: 8,
                direction_count: 6,
                l_max: 150.0,
            },
        );
        assert!(report.certificate);
        assert_eq!(report.trapped_count, 0);
        assert!(report.max_length <= 6.0 + 1e-6);
        assert!(report.max_length > 4.0);
    }
}
