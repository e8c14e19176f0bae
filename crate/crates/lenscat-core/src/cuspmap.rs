//! The classical scattering map on free-ray data at infinity.
//!
//! A free straight line `{z0 + s v}` (traversed at unit speed in the time
//! slice `t`) is encoded frame-free by its asymptotic direction `y = v`,
//! the radial frequency `xi1c = -2t`, and the tangential frequency
//! `eta1c = -(z0 - (z0·v)v)`, the negated orthogonal offset. The
//! dictionaries here convert between such data and boundary rays on the
//! truncation sphere, realize the classical scattering map
//! (incoming datum ↦ outgoing datum, with the blow-up coordinate
//! `n1 = -sojourn` attached), reconstruct the truncated scattering
//! relation purely from the map at infinity, and compare two metrics for
//! equality of their boundary graphs and `n1` functions.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::MetricField;
use crate::sampling;
use crate::scattering::{scatter, BoundaryRay, ScatterOptions};
use crate::{Error, Result};

/// A 1-cusp boundary datum: unit direction `y`, radial frequency `xi1c`
/// (the encoded time slice is `t = -xi1c / 2`), and the tangential
/// frequency `eta1c ⊥ y` stored as an ambient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CuspBoundaryPoint {
    y: DVector<f64>,
    xi1c: f64,
    eta1c: DVector<f64>,
}

impl CuspBoundaryPoint {
    pub fn new(y: DVector<f64>, xi1c: f64, eta1c: DVector<f64>) -> Result<Self> {
        if y.len() != eta1c.len() {
            return Err(Error::DimensionMismatch {
                left: y.len(),
                right: eta1c.len(),
            });
        }
        let norm = y.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "cusp point",
                format!("direction norm {norm} is not 1 within 1e-12"),
            ));
        }
        let y = y / norm;
        let pairing = eta1c.dot(&y);
        if pairing.abs() > 1e-10 {
            return Err(Error::invalid(
                "cusp point",
                format!("eta1c·y = {pairing:e} violates orthogonality"),
            ));
        }
        // Project out the residual component so the invariant holds exactly.
        let eta1c = &eta1c - &y * pairing;
        Ok(CuspBoundaryPoint { y, xi1c, eta1c })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn xi1c(&self) -> f64 {
        self.xi1c
    }

    pub fn eta1c(&self) -> &DVector<f64> {
        &self.eta1c
    }

    /// The encoded time slice `t = -xi1c / 2`.
    pub fn time(&self) -> f64 {
        -0.5 * self.xi1c
    }

    /// Distance of the encoded free line from the origin.
    pub fn offset(&self) -> f64 {
        self.eta1c.norm()
    }
}

/// Encodes the free ray through `z0` with unit direction `v` in the time
/// slice `t`. Any `z0` on the ray gives the same datum.
pub fn ray_to_cusp(t: f64, z0: &DVector<f64>, v: &DVector<f64>) -> CuspBoundaryPoint {
    let y = v / v.norm();
    let eta1c = -(z0 - &y * z0.dot(&y));
    CuspBoundaryPoint {
        y,
        xi1c: -2.0 * t,
        eta1c,
    }
}

/// Reconstructs the encoded free line and returns its first intersection
/// with the sphere of `radius` as an inward boundary ray.
pub fn cusp_to_entry(radius: f64, p: &CuspBoundaryPoint) -> Result<BoundaryRay> {
    let offset = p.offset();
    if offset >= radius - 1e-12 {
        return Err(Error::MissesBall { offset, radius });
    }
    let reach = (radius * radius - offset * offset).sqrt();
    let z = -&p.eta1c - &p.y * reach;
    BoundaryRay::new(p.time(), z, p.y.clone())
}

/// Last intersection of the encoded free line with the sphere of `radius`,
/// as an outward boundary ray.
fn cusp_to_exit(radius: f64, p: &CuspBoundaryPoint) -> Result<BoundaryRay> {
    let offset = p.offset();
    if offset >= radius - 1e-12 {
        return Err(Error::MissesBall { offset, radius });
    }
    let reach = (radius * radius - offset * offset).sqrt();
    let z = -&p.eta1c + &p.y * reach;
    BoundaryRay::new(p.time(), z, p.y.clone())
}

/// A point on the graph of the classical scattering map, with the blow-up
/// coordinate `n1` (minus the total sojourn time of the traversal).
#[derive(Debug, Clone)]
pub struct SojournGraphPoint {
    pub incoming: CuspBoundaryPoint,
    pub outgoing: CuspBoundaryPoint,
    pub n1: f64,
}

struct GraphData {
    point: SojournGraphPoint,
    /// Interior length, when the ray meets the ball.
    length: Option<f64>,
}

fn classical_graph(
    field: &MetricField,
    p: &CuspBoundaryPoint,
    radius: f64,
    opts: &ScatterOptions,
) -> Result<GraphData> {
    if p.offset() >= radius - 1e-12 {
        // The free line misses the interaction region: the map is the
        // identity on classical data and no sojourn accumulates.
        return Ok(GraphData {
            point: SojournGraphPoint {
                incoming: p.clone(),
                outgoing: p.clone(),
                n1: 0.0,
            },
            length: None,
        });
    }
    let entry = cusp_to_entry(radius, p)?;
    let res = scatter(field, &entry, opts)?;
    let outgoing = ray_to_cusp(res.exit.t, &res.exit.z, &res.exit.v);
    Ok(GraphData {
        point: SojournGraphPoint {
            incoming: p.clone(),
            outgoing,
            n1: -res.sojourn,
        },
        length: Some(res.length),
    })
}

/// The classical scattering map on 1-cusp data: sends the backward
/// asymptotic datum of a ray to its forward asymptotic datum and attaches
/// `n1 = -sojourn`. Data whose free line misses `B_R(0)` map to
/// themselves with `n1 = 0`.
pub fn classical_scattering_map(
    field: &MetricField,
    p: &CuspBoundaryPoint,
) -> Result<SojournGraphPoint> {
    Ok(classical_graph(field, p, field.support_radius(), &ScatterOptions::default())?.point)
}

/// Reconstructs the truncated scattering relation by passing through
/// infinity: encode the backward extension of `entry`, apply the classical
/// map, and intersect the outgoing free line with the sphere again.
///
/// Equality with [`scattering_relation`](crate::scattering::scattering_relation)
/// is the reconstruction identity tested by this module's suite.
pub fn truncated_map_via_infinity(
    field: &MetricField,
    entry: &BoundaryRay,
) -> Result<BoundaryRay> {
    let radius = entry.radius();
    let p = ray_to_cusp(entry.t, &entry.z, &entry.v);
    let graph = classical_graph(field, &p, radius, &ScatterOptions::default())?;
    cusp_to_exit(radius, &graph.point.outgoing)
}

/// Sampling extents for cusp-data sweeps: directions on a sphere lattice,
/// `xi1c` uniform over `[-2T - 1, 2T + 1]`, offsets on disk lattices of
/// `offset_fraction × R` in the orthogonal hyperplane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuspSamplingSpec {
    pub direction_count: usize,
    pub xi_count: usize,
    pub offset_count: usize,
    pub offset_fraction: f64,
    pub seed: u64,
}

impl Default for CuspSamplingSpec {
    fn default() -> Self {
        CuspSamplingSpec {
            direction_count: 8,
            xi_count: 5,
            offset_count: 13,
            offset_fraction: 0.95,
            seed: 17,
        }
    }
}

impl CuspSamplingSpec {
    pub fn total(&self) -> usize {
        self.direction_count * self.xi_count * self.offset_count
    }
}

/// Deterministic lattice of cusp boundary points for a field of the given
/// dimension and support box.
pub fn sample_cusp_points(
    dim: usize,
    support_radius: f64,
    time_radius: f64,
    spec: &CuspSamplingSpec,
) -> Vec<CuspBoundaryPoint> {
    let xi_half = 2.0 * time_radius + 1.0;
    let mut points = Vec::with_capacity(spec.total());
    for (iy, y) in sampling::sphere_lattice(dim, spec.direction_count, spec.seed)
        .into_iter()
        .enumerate()
    {
        let offsets = sampling::disk_lattice(
            &y,
            spec.offset_fraction * support_radius,
            spec.offset_count,
            spec.seed.wrapping_add(1 + iy as u64),
        );
        for ix in 0..spec.xi_count {
            let xi = if spec.xi_count > 1 {
                -xi_half + 2.0 * xi_half * ix as f64 / (spec.xi_count - 1) as f64
            } else {
                0.0
            };
            for eta in &offsets {
                points.push(
                    CuspBoundaryPoint::new(y.clone(), xi, eta.clone())
                        .expect("lattice offsets are orthogonal by construction"),
                );
            }
        }
    }
    points
}

/// Per-component discrepancies between two graph points over the same
/// incoming datum. Lengths are nondimensionalized by `R` in `combined`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LensDiscrepancy {
    /// Geodesic angle between outgoing directions.
    pub y_angle: f64,
    pub xi_abs: f64,
    pub eta_norm: f64,
    pub n1_abs: f64,
    pub combined: f64,
}

impl LensDiscrepancy {
    fn between(a: &SojournGraphPoint, b: &SojournGraphPoint, radius: f64) -> Self {
        let dot = a.outgoing.y.dot(&b.outgoing.y).clamp(-1.0, 1.0);
        let y_angle = dot.acos();
        let xi_abs = (a.outgoing.xi1c - b.outgoing.xi1c).abs();
        let eta_norm = (&a.outgoing.eta1c - &b.outgoing.eta1c).norm();
        let n1_abs = (a.n1 - b.n1).abs();
        let combined = y_angle
            .max(xi_abs / radius)
            .max(eta_norm / radius)
            .max(n1_abs / radius);
        LensDiscrepancy {
            y_angle,
            xi_abs,
            eta_norm,
            n1_abs,
            combined,
        }
    }

    fn max_with(&mut self, other: &LensDiscrepancy) {
        self.y_angle = self.y_angle.max(other.y_angle);
        self.xi_abs = self.xi_abs.max(other.xi_abs);
        self.eta_norm = self.eta_norm.max(other.eta_norm);
        self.n1_abs = self.n1_abs.max(other.n1_abs);
        self.combined = self.combined.max(other.combined);
    }
}

/// Serializable form of a cusp datum for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuspPointRecord {
    pub y: Vec<f64>,
    pub xi1c: f64,
    pub eta1c: Vec<f64>,
}

impl From<&CuspBoundaryPoint> for CuspPointRecord {
    fn from(p: &CuspBoundaryPoint) -> Self {
        CuspPointRecord {
            y: p.y.iter().copied().collect(),
            xi1c: p.xi1c,
            eta1c: p.eta1c.iter().copied().collect(),
        }
    }
}

/// Verdict and diagnostics of a lens-equivalence sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LensEquivalenceReport {
    pub equivalent: bool,
    pub tol: f64,
    pub samples_total: usize,
    /// Samples whose free line meets the ball under both metrics.
    pub samples_compared: usize,
    pub trapped_first: usize,
    pub trapped_second: usize,
    /// Componentwise maxima of the per-sample discrepancies.
    pub max_discrepancy: LensDiscrepancy,
    /// The sample attaining the largest combined discrepancy.
    pub worst_sample: Option<CuspPointRecord>,
    /// Corollary check: max interior-length difference over corresponding
    /// entries.
    pub max_length_discrepancy: f64,
}

/// Decides microlocal lens equivalence of two metrics over a sampled set
/// of cusp data: equality of boundary graphs plus equality of `n1`,
/// within `tol` after nondimensionalizing lengths by `R`.
///
/// Trapped rays are recorded per sample and skip the comparison rather
/// than aborting the sweep.
pub fn lens_equivalent(
    g1: &MetricField,
    g2: &MetricField,
    spec: &CuspSamplingSpec,
    tol: f64,
) -> Result<LensEquivalenceReport> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            left: g1.dim(),
            right: g2.dim(),
        });
    }
    if (g1.support_radius() - g2.support_radius()).abs() > 1e-12
        || (g1.time_radius() - g2.time_radius()).abs() > 1e-12
    {
        return Err(Error::invalid(
            "lens comparison",
            "fields must share the support box (R, T)",
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("lens comparison", "tol must be positive"));
    }
    let radius = g1.support_radius();
    let points = sample_cusp_points(g1.dim(), radius, g1.time_radius(), spec);
    // The verdict tolerance is user-level (1e-5 scale); integrating the
    // sweep at 1e-9 keeps three decades of margin and halves the cost of
    // pullback-generated fields.
    let opts = ScatterOptions {
        abs_tol: 1e-9,
        rel_tol: 1e-9,
        ..ScatterOptions::default()
    };

    let outcomes: Vec<_> = points
        .par_iter()
        .map(|p| {
            (
                classical_graph(g1, p, radius, &opts),
                classical_graph(g2, p, radius, &opts),
            )
        })
        .collect();

    let mut report = LensEquivalenceReport {
        equivalent: true,
        tol,
        samples_total: points.len(),
        samples_compared: 0,
        trapped_first: 0,
        trapped_second: 0,
        max_discrepancy: LensDiscrepancy::default(),
        worst_sample: None,
        max_length_discrepancy: 0.0,
    };
    for (p, (r1, r2)) in points.iter().zip(outcomes) {
        match (r1, r2) {
            (Ok(d1), Ok(d2)) => {
                report.samples_compared += 1;
                let disc = LensDiscrepancy::between(&d1.point, &d2.point, radius);
                if report.worst_sample.is_none()
                    || disc.combined > report.max_discrepancy.combined
                {
                    report.worst_sample = Some(CuspPointRecord::from(p));
                }
                report.max_discrepancy.max_with(&disc);
                if let (Some(l1), Some(l2)) = (d1.length, d2.length) {
                    report.max_length_discrepancy =
                        report.max_length_discrepancy.max((l1 - l2).abs());
                }
            }
            (r1, r2) => {
                if matches!(r1, Err(Error::TrappedRay { .. })) {
                    report.trapped_first += 1;
                }
                if matches!(r2, Err(Error::TrappedRay { .. })) {
                    report.trapped_second += 1;
                }
            }
        }
    }
    report.equivalent = report.max_discrepancy.combined <= tol
        && report.trapped_first == 0
        && report.trapped_second == 0
        && report.samples_compared > 0;
    Ok(report)
}

/// Writes the graph export
/// `(y_in[..], xi1c_in, eta1c_in[..], y_out[..], xi1c_out, eta1c_out[..], n1)`.
pub fn write_graph_csv<W: std::io::Write>(
    dim: usize,
    points: &[SojournGraphPoint],
    w: &mut W,
) -> std::io::Result<()> {
    for i in 1..=dim {
        write!(w, "{}y_in_{i}", if i == 1 { "" } else { "," })?;
    }
    write!(w, ",xi1c_in")?;
    for i in 1..=dim {
        write!(w, ",eta1c_in_{i}")?;
    }
    for i in 1..=dim {
        write!(w, ",y_out_{i}")?;
    }
    write!(w, ",xi1c_out")?;
    for i in 1..=dim {
        write!(w, ",eta1c_out_{i}")?;
    }
    writeln!(w, ",n1")?;
    for gp in points {
        let mut first = true;
        for v in gp.incoming.y.iter() {
            if first {
                write!(w, "{v}")?;
                first = false;
            } else {
                write!(w, ",{v}")?;
            }
        }
        write!(w, ",{}", gp.incoming.xi1c)?;
        for v in gp.incoming.eta1c.iter() {
            write!(w, ",{v}")?;
        }
        for v in gp.outgoing.y.iter() {
            write!(w, ",{v}")?;
        }
        write!(w, ",{}", gp.outgoing.xi1c)?;
        for v in gp.outgoing.eta1c.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", gp.n1)?;
    }
    Ok(())
}
