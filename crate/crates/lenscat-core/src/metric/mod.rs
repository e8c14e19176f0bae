//! Time-dependent metric fields on ℝⁿ and their differential geometry.
//!
//! A [`MetricField`] is a smooth family `g(t)` of Riemannian metrics equal
//! to the Euclidean metric outside `[-T, T] × B_R(0)`. Builtin families
//! (flat, conformal bump, rank-one bump) carry analytic first derivatives;
//! arbitrary metrics enter through tabulated grids with cubic-spline
//! reconstruction, and any field can be pulled back by a
//! time-slice-preserving [`DiffeoField`].
//!
//! On top of evaluation the module computes Christoffel symbols, sectional
//! curvature, covariant Hessians of candidate convex functions, and the
//! admissibility diagnostics used as hypothesis gates by the lens-data
//! comparisons.

pub mod diffeo;
pub mod families;
pub mod spline;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use diffeo::{DiffeoField, FlowGenerator};
pub use families::{BumpProfile, ConformalBump, RankOneBump};
use spline::{Axis, SplineGrid};

use crate::sampling;
use crate::{Error, Result};

/// Deviation tolerated on the flat verification shell.
const SHELL_TOL: f64 = 1e-10;
/// Margin below which a metric eigenvalue counts as a validation failure.
pub const MIN_EIG_MARGIN: f64 = 1e-6;

/// A time-dependent Riemannian metric on ℝⁿ, flat outside
/// `[-T, T] × B_R(0)`.
#[derive(Debug, Clone)]
pub struct MetricField {
    dim: usize,
    support_radius: f64,
    time_radius: f64,
    kind: MetricKind,
}

#[derive(Debug, Clone)]
enum MetricKind {
    Flat,
    ConformalBump(ConformalBump),
    RankOneBump(RankOneBump),
    Pullback {
        base: Box<MetricField>,
        diffeo: DiffeoField,
    },
    Tabulated(TabulatedMetric),
}

/// Metric samples on a regular spacetime grid, reconstructed by an
/// interpolating cubic B-spline. Stores the deviation `g - I` packed as the
/// upper triangle (row-major, `i <= j`), so the field is exactly flat
/// wherever the local spline stencil sees only flat samples and outside the
/// grid box.
#[derive(Debug, Clone)]
pub struct TabulatedMetric {
    dim: usize,
    grid: SplineGrid,
}

fn pack_index(n: usize, i: usize, j: usize) -> usize {
    // row-major upper triangle, i <= j
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl TabulatedMetric {
    fn ncomp(n: usize) -> usize {
        n * (n + 1) / 2
    }

    fn eval(&self, t: f64, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut g = DMatrix::identity(n, n);
        let mut x = Vec::with_capacity(n + 1);
        x.push(t);
        x.extend(z.iter().copied());
        if !self.grid.contains(&x) {
            return g;
        }
        let mut comps = vec![0.0; Self::ncomp(n)];
        self.grid.eval(&x, None, &mut comps);
        for i in 0..n {
            for j in i..n {
                let v = comps[pack_index(n, i, j)];
                g[(i, j)] += v;
                if i != j {
                    g[(j, i)] += v;
                }
            }
        }
        g
    }

    fn eval_with_grad(&self, t: f64, z: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dim;
        let g = self.eval(t, z);
        let mut x = Vec::with_capacity(n + 1);
        x.push(t);
        x.extend(z.iter().copied());
        let mut dg = vec![DMatrix::zeros(n, n); n];
        if !self.grid.contains(&x) {
            return (g, dg);
        }
        let mut comps = vec![0.0; Self::ncomp(n)];
        for (k, dgk) in dg.iter_mut().enumerate() {
            self.grid.eval(&x, Some(k + 1), &mut comps);
            for i in 0..n {
                for j in i..n {
                    let v = comps[pack_index(n, i, j)];
                    dgk[(i, j)] = v;
                    dgk[(j, i)] = v;
                }
            }
        }
        (g, dg)
    }
}

impl MetricField {
    fn new(dim: usize, support_radius: f64, time_radius: f64, kind: MetricKind) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("metric field", "dimension must be >= 2"));
        }
        if !(support_radius > 0.0) || !(time_radius > 0.0) {
            return Err(Error::invalid("metric field", "R and T must be positive"));
        }
        Ok(MetricField {
            dim,
            support_radius,
            time_radius,
            kind,
        })
    }

    /// The Euclidean metric, trivially supported in any `[-T, T] × B_R(0)`.
    pub fn flat(dim: usize, support_radius: f64, time_radius: f64) -> Result<Self> {
        Self::new(dim, support_radius, time_radius, MetricKind::Flat)
    }

    pub fn conformal_bump(
        dim: usize,
        support_radius: f64,
        time_radius: f64,
        bump: ConformalBump,
    ) -> Result<Self> {
        bump.validate(dim, support_radius, time_radius)?;
        Self::new(
            dim,
            support_radius,
            time_radius,
            MetricKind::ConformalBump(bump),
        )
    }

    pub fn rank_one_bump(
        dim: usize,
        support_radius: f64,
        time_radius: f64,
        bump: RankOneBump,
    ) -> Result<Self> {
        bump.validate(dim, support_radius, time_radius)?;
        Self::new(
            dim,
            support_radius,
            time_radius,
            MetricKind::RankOneBump(bump),
        )
    }

    /// Builds a field from node samples of `g - I` on the regular grid
    /// `[-T, T] × [-R, R]^n` (`time_count` × `space_count`-per-axis nodes,
    /// upper-triangle components fastest).
    pub fn tabulated(
        dim: usize,
        support_radius: f64,
        time_radius: f64,
        time_count: usize,
        space_count: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut axes = Vec::with_capacity(dim + 1);
        axes.push(Axis::new(-time_radius, time_radius, time_count)?);
        for _ in 0..dim {
            axes.push(Axis::new(-support_radius, support_radius, space_count)?);
        }
        let grid = SplineGrid::from_samples(axes, TabulatedMetric::ncomp(dim), values)?;
        Self::new(
            dim,
            support_radius,
            time_radius,
            MetricKind::Tabulated(TabulatedMetric { dim, grid }),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spatial support radius `R`.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Temporal support radius `T`.
    pub fn time_radius(&self) -> f64 {
        self.time_radius
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
    }

    /// Raw metric matrix `g_{ij}(t, z)`, no definiteness check.
    pub fn metric_matrix(&self, t: f64, z: &DVector<f64>) -> DMatrix<f64> {
        debug_assert_eq!(z.len(), self.dim);
        match &self.kind {
            MetricKind::Flat => DMatrix::identity(self.dim, self.dim),
            MetricKind::ConformalBump(b) => b.metric_with_grad(t, z).0,
            MetricKind::RankOneBump(b) => b.metric_with_grad(t, z).0,
            MetricKind::Pullback { base, diffeo } => {
                let (pos, jac) = diffeo.psi1_with_jacobian(t, z);
                let g_base = base.metric_matrix(t, &pos);
                jac.transpose() * g_base * jac
            }
            MetricKind::Tabulated(tab) => tab.eval(t, z),
        }
    }

    /// Metric matrix together with its spatial derivatives
    /// `dg[k][(i, j)] = d g_{ij} / d z_k`.
    pub fn metric_with_grad(&self, t: f64, z: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        debug_assert_eq!(z.len(), self.dim);
        let n = self.dim;
        match &self.kind {
            MetricKind::Flat => (DMatrix::identity(n, n), vec![DMatrix::zeros(n, n); n]),
            MetricKind::ConformalBump(b) => b.metric_with_grad(t, z),
            MetricKind::RankOneBump(b) => b.metric_with_grad(t, z),
            MetricKind::Pullback { base, diffeo } => {
                let (pos, jac, hess) = diffeo.psi1_with_jet(t, z);
                let (g_base, dg_base) = base.metric_with_grad(t, &pos);
                let g = jac.transpose() * &g_base * &jac;
                let gj = &g_base * &jac; // (a, j) = g_ab J^b_j
                let mut dg = vec![DMatrix::zeros(n, n); n];
                for (m, dgm) in dg.iter_mut().enumerate() {
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for a in 0..n {
                                // H^a_{im} g_ab J^b_j + J^a_i g_ab H^b_{jm}
                                acc += hess[a][(i, m)] * gj[(a, j)];
                                acc += jac[(a, i)] * {
                                    let mut s = 0.0;
                                    for b in 0..n {
                                        s += g_base[(a, b)] * hess[b][(j, m)];
                                    }
                                    s
                                };
                                // J^a_i J^b_j (d_c g_ab) J^c_m
                                for b in 0..n {
                                    let mut s = 0.0;
                                    for c in 0..n {
                                        s += dg_base[c][(a, b)] * jac[(c, m)];
                                    }
                                    acc += jac[(a, i)] * jac[(b, j)] * s;
                                }
                            }
                            dgm[(i, j)] = acc;
                        }
                    }
                }
                (g, dg)
            }
            MetricKind::Tabulated(tab) => tab.eval_with_grad(t, z),
        }
    }

    /// Evaluates `(g, g^{-1})`, rejecting non-positive-definite matrices.
    pub fn eval_metric(&self, t: f64, z: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g = self.metric_matrix(t, z);
        match Cholesky::new(g.clone()) {
            Some(chol) => Ok((g, chol.inverse())),
            None => {
                let min_eig = SymmetricEigen::new(g).eigenvalues.min();
                Err(Error::NonPositiveDefinite { t, min_eig })
            }
        }
    }

    /// Minimum eigenvalue of `g(t, z)`.
    pub fn min_metric_eigenvalue(&self, t: f64, z: &DVector<f64>) -> f64 {
        SymmetricEigen::new(self.metric_matrix(t, z)).eigenvalues.min()
    }

    /// Christoffel symbols `gamma[k][(i, j)] = Γ^k_{ij}` of `g(t)` at `(t, z)`.
    pub fn christoffel(&self, t: f64, z: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let n = self.dim;
        let (g, dg) = self.metric_with_grad(t, z);
        let g_inv = match Cholesky::new(g.clone()) {
            Some(chol) => chol.inverse(),
            None => {
                let min_eig = SymmetricEigen::new(g).eigenvalues.min();
                return Err(Error::NonPositiveDefinite { t, min_eig });
            }
        };
        let mut gamma = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    let v = 0.5 * acc;
                    gamma[k][(i, j)] = v;
                    gamma[k][(j, i)] = v;
                }
            }
        }
        Ok(gamma)
    }

    /// Pullback `psi^* g`: evaluates to
    /// `Dψ₁(t,z)ᵀ · g(t, ψ₁(t,z)) · Dψ₁(t,z)` and keeps all support
    /// invariants. Fails with [`Error::SupportViolation`] when the result
    /// is not flat on the verification shell.
    pub fn pullback(&self, psi: &DiffeoField) -> Result<MetricField> {
        if psi.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: psi.dim(),
                right: self.dim,
            });
        }
        if !psi.is_identity()
            && (psi.support_radius() > self.support_radius + 1e-12
                || psi.time_width() > self.time_radius + 1e-12)
        {
            return Err(Error::invalid(
                "pullback",
                "diffeomorphism support must lie inside the metric's support box",
            ));
        }
        let field = MetricField::new(
            self.dim,
            self.support_radius,
            self.time_radius,
            MetricKind::Pullback {
                base: Box::new(self.clone()),
                diffeo: psi.clone(),
            },
        )?;
        let max_dev = field.max_shell_deviation(200, &[1.0, 1.25, 1.5])?;
        if max_dev > SHELL_TOL {
            return Err(Error::SupportViolation { max_dev });
        }
        Ok(field)
    }

    /// Largest entrywise deviation of `g` from the identity over a sample
    /// of exterior shells `|z| = factor x R`, all `t` in and out of the
    /// time support.
    pub fn max_shell_deviation(&self, points_per_radius: usize, radius_factors: &[f64]) -> Result<f64> {
        let n = self.dim;
        let t_samples = [
            -1.5 * self.time_radius,
            -self.time_radius,
            -0.5 * self.time_radius,
            0.0,
            0.37 * self.time_radius,
            self.time_radius,
        ];
        let mut max_dev: f64 = 0.0;
        let dirs = sampling::sphere_lattice(n, points_per_radius, 20260810);
        for &factor in radius_factors {
            let r = factor * self.support_radius;
            for dir in &dirs {
                let z = dir * r;
                for &t in &t_samples {
                    let g = self.metric_matrix(t, &z);
                    for i in 0..n {
                        for j in 0..n {
                            let target = if i == j { 1.0 } else { 0.0 };
                            max_dev = max_dev.max((g[(i, j)] - target).abs());
                        }
                    }
                }
            }
        }
        Ok(max_dev)
    }

    /// Re-samples this field onto a regular grid, producing a tabulated
    /// field with the same support box.
    pub fn tabulate(&self, time_count: usize, space_count: usize) -> Result<MetricField> {
        let n = self.dim;
        let ncomp = TabulatedMetric::ncomp(n);
        if time_count < 4 || space_count < 4 {
            return Err(Error::invalid("tabulation", "need at least 4 nodes per axis"));
        }
        let ht = 2.0 * self.time_radius / (time_count - 1) as f64;
        let hz = 2.0 * self.support_radius / (space_count - 1) as f64;
        let space_nodes: usize = (0..n).map(|_| space_count).product();
        let mut values = vec![0.0; time_count * space_nodes * ncomp];

        use rayon::prelude::*;
        values
            .par_chunks_mut(space_nodes * ncomp)
            .enumerate()
            .for_each(|(it, chunk)| {
                let t = -self.time_radius + it as f64 * ht;
                let mut idx = vec![0usize; n];
                let mut z = DVector::zeros(n);
                for node in 0..space_nodes {
                    let mut rem = node;
                    for ax in (0..n).rev() {
                        idx[ax] = rem % space_count;
                        rem /= space_count;
                    }
                    for ax in 0..n {
                        z[ax] = -self.support_radius + idx[ax] as f64 * hz;
                    }
                    let g = self.metric_matrix(t, &z);
                    for i in 0..n {
                        for j in i..n {
                            let target = if i == j { 1.0 } else { 0.0 };
                            chunk[node * ncomp + pack_index(n, i, j)] = g[(i, j)] - target;
                        }
                    }
                }
            });
        MetricField::tabulated(
            n,
            self.support_radius,
            self.time_radius,
            time_count,
            space_count,
            values,
        )
    }

    /// Minimum eigenvalue of the covariant Hessian of `f` relative to
    /// `g(t)` at `(t, z)`: the smallest `λ` with
    /// `(∂_i∂_j f − Γ^k_{ij} ∂_k f) v^j = λ g_{ij} v^j`.
    ///
    /// Measuring against `g` keeps the value invariant under simultaneous
    /// pullback of the metric and the function by a chart.
    pub fn hessian_min_eig(&self, f: &ScalarField, t: f64, z: &DVector<f64>) -> Result<f64> {
        let n = self.dim;
        let gamma = self.christoffel(t, z)?;
        let grad = f.gradient(t, z);
        let mut hess = f.hessian(t, z);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    hess[(i, j)] -= gamma[k][(i, j)] * grad[k];
                }
            }
        }
        let g = self.metric_matrix(t, z);
        let chol = Cholesky::new(g).ok_or(Error::NonPositiveDefinite {
            t,
            min_eig: f64::NAN,
        })?;
        let l = chol.l();
        let tmp = l
            .solve_lower_triangular(&hess)
            .expect("Cholesky factor is invertible");
        let b = l
            .solve_lower_triangular(&tmp.transpose())
            .expect("Cholesky factor is invertible");
        // b = L^{-1} Hess L^{-T} up to the symmetrization below.
        let b_sym = (&b + b.transpose()) * 0.5;
        Ok(SymmetricEigen::new(b_sym).eigenvalues.min())
    }

    /// Sectional curvature of the 2-plane spanned by `x` and `y` at `(t, z)`.
    ///
    /// The Riemann tensor is assembled from the Christoffel symbols and
    /// their 4th-order finite differences.
    pub fn sectional_curvature(
        &self,
        t: f64,
        z: &DVector<f64>,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<f64> {
        let n = self.dim;
        let g = self.metric_matrix(t, z);
        let gx = &g * x;
        let gy = &g * y;
        let xx = x.dot(&gx);
        let yy = y.dot(&gy);
        let xy = x.dot(&gy);
        let gram = xx * yy - xy * xy;
        if gram < 1e-14 {
            return Err(Error::DegeneratePlane { gram });
        }

        let gamma = self.christoffel(t, z)?;
        // dgamma[m][k][(i, j)] = d Γ^k_{ij} / d z_m, 4th-order central.
        let h = 1e-3 * self.support_radius.max(1.0);
        let mut dgamma: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(n);
        for m in 0..n {
            let shifted = |offset: f64| -> Result<Vec<DMatrix<f64>>> {
                let mut zs = z.clone();
                zs[m] += offset;
                self.christoffel(t, &zs)
            };
            let gp2 = shifted(2.0 * h)?;
            let gp1 = shifted(h)?;
            let gm1 = shifted(-h)?;
            let gm2 = shifted(-2.0 * h)?;
            let mut per_k = Vec::with_capacity(n);
            for k in 0..n {
                per_k.push(
                    (&gm2[k] - &gp2[k] + (&gp1[k] - &gm1[k]) * 8.0) / (12.0 * h),
                );
            }
            dgamma.push(per_k);
        }

        // R(X, Y)Y with R^r_{s m v} = d_m Γ^r_{v s} - d_v Γ^r_{m s}
        //                            + Γ^r_{m l} Γ^l_{v s} - Γ^r_{v l} Γ^l_{m s}
        let mut rxyy = DVector::zeros(n);
        for r in 0..n {
            let mut acc = 0.0;
            for s in 0..n {
                for m in 0..n {
                    for v in 0..n {
                        let mut riem = dgamma[m][r][(v, s)] - dgamma[v][r][(m, s)];
                        for l in 0..n {
                            riem += gamma[r][(m, l)] * gamma[l][(v, s)]
                                - gamma[r][(v, l)] * gamma[l][(m, s)];
                        }
                        acc += riem * x[m] * y[v] * y[s];
                    }
                }
            }
            rxyy[r] = acc;
        }
        Ok((&g * rxyy).dot(x) / gram)
    }

    /// Scans `[-T, T] × B_R(0)` for the convexity and support diagnostics
    /// of the field: positive-definiteness margin, covariant-Hessian
    /// minimum for the candidate convex function, shell flatness, and the
    /// sign pattern of sampled sectional curvatures.
    pub fn admissibility_report(
        &self,
        f: &ScalarField,
        grid: &GridSpec,
    ) -> Result<AdmissibilityReport> {
        let n = self.dim;
        let mut min_hess = f64::INFINITY;
        let mut min_metric_eig = f64::INFINITY;
        let mut failures = 0usize;
        let mut points = 0usize;

        let nt = grid.time_count.max(1);
        let nz = grid.space_count.max(2);
        let ht = if nt > 1 {
            2.0 * self.time_radius / (nt - 1) as f64
        } else {
            0.0
        };
        let hz = 2.0 * self.support_radius / (nz - 1) as f64;
        let space_nodes: usize = (0..n).map(|_| nz).product();
        let mut idx = vec![0usize; n];
        let mut z = DVector::zeros(n);

        let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
        let mut curv_min = f64::INFINITY;
        let mut curv_max = f64::NEG_INFINITY;
        let mut curv_pos = 0usize;
        let mut curv_neg = 0usize;
        let mut curv_zero = 0usize;

        for it in 0..nt {
            let t = -self.time_radius + it as f64 * ht;
            for node in 0..space_nodes {
                let mut rem = node;
                for ax in (0..n).rev() {
                    idx[ax] = rem % nz;
                    rem /= nz;
                }
                for ax in 0..n {
                    z[ax] = -self.support_radius + idx[ax] as f64 * hz;
                }
                if z.norm() > self.support_radius {
                    continue;
                }
                points += 1;
                min_metric_eig = min_metric_eig.min(self.min_metric_eigenvalue(t, &z));
                match self.hessian_min_eig(f, t, &z) {
                    Ok(v) => min_hess = min_hess.min(v),
                    Err(_) => failures += 1,
                }
            }
        }

        for _ in 0..grid.curvature_samples {
            let t = rng.gen_range(-self.time_radius..=self.time_radius);
            let z = sampling::random_in_ball(n, 0.95 * self.support_radius, &mut rng);
            let (x, y) = sampling::random_plane(n, &mut rng);
            match self.sectional_curvature(t, &z, &x, &y) {
                Ok(k) => {
                    curv_min = curv_min.min(k);
                    curv_max = curv_max.max(k);
                    if k > 1e-10 {
                        curv_pos += 1;
                    } else if k < -1e-10 {
                        curv_neg += 1;
                    } else {
                        curv_zero += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }

        let max_shell_deviation = self.max_shell_deviation(64, &[1.0, 1.05, 1.1])?;
        Ok(AdmissibilityReport {
            dim: n,
            admissible: min_hess > grid.hessian_margin,
            hessian_margin: grid.hessian_margin,
            min_hessian_eig: min_hess,
            min_metric_eig,
            max_shell_deviation,
            curvature_min: curv_min,
            curvature_max: curv_max,
            curvature_positive: curv_pos,
            curvature_negative: curv_neg,
            curvature_zero: curv_zero,
            dim_at_least_3: n >= 3,
            eval_failures: failures,
            grid_points: points,
        })
    }

    /// Construction-time sweep: positive definiteness with margin on a
    /// coarse grid plus shell flatness. Used when loading metric specs.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        let nt = 5;
        let nz = 9;
        let ht = 2.0 * self.time_radius / (nt - 1) as f64;
        let hz = 2.0 * self.support_radius / (nz - 1) as f64;
        let space_nodes: usize = (0..n).map(|_| nz).product();
        let mut idx = vec![0usize; n];
        let mut z = DVector::zeros(n);
        for it in 0..nt {
            let t = -self.time_radius + it as f64 * ht;
            for node in 0..space_nodes {
                let mut rem = node;
                for ax in (0..n).rev() {
                    idx[ax] = rem % nz;
                    rem /= nz;
                }
                for ax in 0..n {
                    z[ax] = -self.support_radius + idx[ax] as f64 * hz;
                }
                let min_eig = self.min_metric_eigenvalue(t, &z);
                if min_eig < MIN_EIG_MARGIN {
                    return Err(Error::NonPositiveDefinite { t, min_eig });
                }
            }
        }
        // Tabulated fields carry spline-interpolation wiggle in a collar of
        // two grid cells around |z| = R; beyond 1.5R every stencil sees only
        // flat samples, so exact flatness is required there.
        let max_dev = self.max_shell_deviation(64, &[1.5, 2.0])?;
        if max_dev > SHELL_TOL {
            return Err(Error::SupportViolation { max_dev });
        }
        Ok(())
    }
}

/// Sampling extents for [`MetricField::admissibility_report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub time_count: usize,
    pub space_count: usize,
    pub curvature_samples: usize,
    pub hessian_margin: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            time_count: 7,
            space_count: 13,
            curvature_samples: 100,
            hessian_margin: MIN_EIG_MARGIN,
            seed: 7,
        }
    }
}

/// Output of [`MetricField::admissibility_report`]; every scalar
/// diagnostic serializes to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub dim: usize,
    /// True when the covariant Hessian of the candidate function stays
    /// above the margin everywhere on the grid.
    pub admissible: bool,
    pub hessian_margin: f64,
    pub min_hessian_eig: f64,
    pub min_metric_eig: f64,
    pub max_shell_deviation: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub curvature_positive: usize,
    pub curvature_negative: usize,
    pub curvature_zero: usize,
    /// The rigidity theorem behind the lens-data reduction needs n >= 3;
    /// lower dimensions are flagged but nothing else is blocked.
    pub dim_at_least_3: bool,
    pub eval_failures: usize,
    pub grid_points: usize,
}

/// A scalar function on `[-T, T] × B_R(0)` with gradient and second
/// derivatives, used as a convexity candidate.
#[derive(Debug, Clone)]
pub struct ScalarField {
    dim: usize,
    kind: ScalarKind,
}

#[derive(Debug, Clone)]
enum ScalarKind {
    /// `|z - center|^2`
    Quadratic { center: DVector<f64> },
    /// `direction · z`
    Linear { direction: DVector<f64> },
    /// `f(t, psi1(t, z))`
    Composed {
        base: Box<ScalarField>,
        diffeo: DiffeoField,
    },
}

impl ScalarField {
    /// The default convexity candidate `|z|^2`.
    pub fn quadratic(dim: usize) -> Self {
        ScalarField {
            dim,
            kind: ScalarKind::Quadratic {
                center: DVector::zeros(dim),
            },
        }
    }

    pub fn quadratic_centered(center: DVector<f64>) -> Self {
        ScalarField {
            dim: center.len(),
            kind: ScalarKind::Quadratic { center },
        }
    }

    pub fn linear(direction: DVector<f64>) -> Self {
        ScalarField {
            dim: direction.len(),
            kind: ScalarKind::Linear { direction },
        }
    }

    /// Re-expresses the function through a chart: `(f ∘ psi)(t, z)`.
    pub fn compose(&self, diffeo: &DiffeoField) -> Result<ScalarField> {
        if diffeo.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: diffeo.dim(),
                right: self.dim,
            });
        }
        Ok(ScalarField {
            dim: self.dim,
            kind: ScalarKind::Composed {
                base: Box::new(self.clone()),
                diffeo: diffeo.clone(),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, t: f64, z: &DVector<f64>) -> f64 {
        match &self.kind {
            ScalarKind::Quadratic { center } => (z - center).norm_squared(),
            ScalarKind::Linear { direction } => direction.dot(z),
            ScalarKind::Composed { base, diffeo } => base.value(t, &diffeo.psi1(t, z)),
        }
    }

    pub fn gradient(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ScalarKind::Quadratic { center } => (z - center) * 2.0,
            ScalarKind::Linear { direction } => direction.clone(),
            ScalarKind::Composed { base, diffeo } => {
                let (pos, jac) = diffeo.psi1_with_jacobian(t, z);
                jac.transpose() * base.gradient(t, &pos)
            }
        }
    }

    pub fn hessian(&self, t: f64, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        match &self.kind {
            ScalarKind::Quadratic { .. } => DMatrix::identity(n, n) * 2.0,
            ScalarKind::Linear { .. } => DMatrix::zeros(n, n),
            ScalarKind::Composed { base, diffeo } => {
                let (pos, jac, hess_psi) = diffeo.psi1_with_jet(t, z);
                let grad = base.gradient(t, &pos);
                let hess = base.hessian(t, &pos);
                let mut out = jac.transpose() * hess * &jac;
                for a in 0..n {
                    out += &hess_psi[a] * grad[a];
                }
                out
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Spec-file (de)serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MetricSpecRepr {
    dim: usize,
    #[serde(rename = "R")]
    support_radius: f64,
    #[serde(rename = "T")]
    time_radius: f64,
    family: String,
    #[serde(default)]
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ConformalParams {
    amplitude: f64,
    center: Vec<f64>,
    width: f64,
    #[serde(default)]
    support_radius: Option<f64>,
    #[serde(default)]
    time_width: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RankOneParams {
    amplitude: f64,
    center: Vec<f64>,
    direction: Vec<f64>,
    width: f64,
    #[serde(default)]
    support_radius: Option<f64>,
    #[serde(default)]
    time_width: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TabulatedParams {
    time_count: usize,
    space_count: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PullbackParams {
    metric: serde_json::Value,
    diffeo: serde_json::Value,
}

fn to_json_err(e: impl std::fmt::Display) -> Error {
    Error::invalid("spec", e.to_string())
}

impl MetricField {
    /// Parses the JSON spec-file representation
    /// `{"dim", "R", "T", "family", "params"}`.
    pub fn from_spec_value(value: &serde_json::Value) -> Result<Self> {
        let repr: MetricSpecRepr =
            serde_json::from_value(value.clone()).map_err(to_json_err)?;
        let (dim, r, t) = (repr.dim, repr.support_radius, repr.time_radius);
        let center_norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
        match repr.family.as_str() {
            "flat" => MetricField::flat(dim, r, t),
            "conformal_bump" => {
                let p: ConformalParams =
                    serde_json::from_value(repr.params).map_err(to_json_err)?;
                let bump = ConformalBump {
                    amplitude: p.amplitude,
                    profile: BumpProfile {
                        width: p.width,
                        support_radius: p
                            .support_radius
                            .unwrap_or(r - center_norm(&p.center)),
                        time_width: p.time_width.unwrap_or(t),
                    },
                    center: p.center,
                };
                MetricField::conformal_bump(dim, r, t, bump)
            }
            "rank_one_bump" => {
                let p: RankOneParams =
                    serde_json::from_value(repr.params).map_err(to_json_err)?;
                let bump = RankOneBump {
                    amplitude: p.amplitude,
                    direction: p.direction,
                    profile: BumpProfile {
                        width: p.width,
                        support_radius: p
                            .support_radius
                            .unwrap_or(r - center_norm(&p.center)),
                        time_width: p.time_width.unwrap_or(t),
                    },
                    center: p.center,
                };
                MetricField::rank_one_bump(dim, r, t, bump)
            }
            "tabulated" => {
                let p: TabulatedParams =
                    serde_json::from_value(repr.params).map_err(to_json_err)?;
                MetricField::tabulated(dim, r, t, p.time_count, p.space_count, p.values)
            }
            "pullback" => {
                let p: PullbackParams =
                    serde_json::from_value(repr.params).map_err(to_json_err)?;
                let base = MetricField::from_spec_value(&p.metric)?;
                let diffeo = DiffeoField::from_spec_value(&p.diffeo)?;
                base.pullback(&diffeo)
            }
            other => Err(Error::invalid(
                "metric spec",
                format!("unknown family '{other}'"),
            )),
        }
    }

    /// Serializes to the JSON spec-file representation.
    pub fn to_spec_value(&self) -> serde_json::Value {
        let (family, params) = match &self.kind {
            MetricKind::Flat => ("flat", serde_json::json!({})),
            MetricKind::ConformalBump(b) => (
                "conformal_bump",
                serde_json::to_value(ConformalParams {
                    amplitude: b.amplitude,
                    center: b.center.clone(),
                    width: b.profile.width,
                    support_radius: Some(b.profile.support_radius),
                    time_width: Some(b.profile.time_width),
                })
                .expect("conformal params serialize"),
            ),
            MetricKind::RankOneBump(b) => (
                "rank_one_bump",
                serde_json::to_value(RankOneParams {
                    amplitude: b.amplitude,
                    center: b.center.clone(),
                    direction: b.direction.clone(),
                    width: b.profile.width,
                    support_radius: Some(b.profile.support_radius),
                    time_width: Some(b.profile.time_width),
                })
                .expect("rank-one params serialize"),
            ),
            MetricKind::Pullback { base, diffeo } => (
                "pullback",
                serde_json::json!({
                    "metric": base.to_spec_value(),
                    "diffeo": diffeo.to_spec_value(),
                }),
            ),
            MetricKind::Tabulated(tab) => {
                let axes = tab.grid.axes();
                let time_count = axes[0].count;
                let space_count = axes[1].count;
                // Re-emit node samples by evaluating at the nodes (the
                // spline interpolates, so this is exact up to roundoff).
                let n = self.dim;
                let ncomp = TabulatedMetric::ncomp(n);
                let ht = axes[0].step();
                let hz = axes[1].step();
                let space_nodes: usize = (0..n).map(|_| space_count).product();
                let mut values = Vec::with_capacity(time_count * space_nodes * ncomp);
                let mut idx = vec![0usize; n];
                let mut z = DVector::zeros(n);
                for it in 0..time_count {
                    let t = axes[0].min + it as f64 * ht;
                    for node in 0..space_nodes {
                        let mut rem = node;
                        for ax in (0..n).rev() {
                            idx[ax] = rem % space_count;
                            rem /= space_count;
                        }
                        for ax in 0..n {
                            z[ax] = axes[1].min + idx[ax] as f64 * hz;
                        }
                        let g = tab.eval(t, &z);
                        for i in 0..n {
                            for j in i..n {
                                let target = if i == j { 1.0 } else { 0.0 };
                                values.push(g[(i, j)] - target);
                            }
                        }
                    }
                }
                (
                    "tabulated",
                    serde_json::to_value(TabulatedParams {
                        time_count,
                        space_count,
                        values,
                    })
                    .expect("tabulated params serialize"),
                )
            }
        };
        serde_json::json!({
            "dim": self.dim,
            "R": self.support_radius,
            "T": self.time_radius,
            "family": family,
            "params": params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DiffeoSpecRepr {
    dim: usize,
    #[serde(rename = "R")]
    support_radius: f64,
    #[serde(rename = "T")]
    time_width: f64,
    family: String,
    #[serde(default)]
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ShearParams {
    amplitude: f64,
    #[serde(default)]
    axis: usize,
    #[serde(default = "default_gradient_axis")]
    gradient_axis: usize,
}

fn default_gradient_axis() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct RotationParams {
    amplitude: f64,
    #[serde(default = "default_plane")]
    plane: (usize, usize),
}

fn default_plane() -> (usize, usize) {
    (0, 1)
}

impl DiffeoField {
    pub fn from_spec_value(value: &serde_json::Value) -> Result<Self> {
        let repr: DiffeoSpecRepr =
            serde_json::from_value(value.clone()).map_err(to_json_err)?;
        match repr.family.as_str() {
            "identity" => Ok(DiffeoField::identity(repr.dim)),
            "shear_flow" => {
                let p: ShearParams = serde_json::from_value(repr.params).map_err(to_json_err)?;
                DiffeoField::from_flow(
                    repr.dim,
                    repr.support_radius,
                    repr.time_width,
                    FlowGenerator::Shear {
                        amplitude: p.amplitude,
                        axis: p.axis,
                        gradient_axis: p.gradient_axis,
                    },
                )
            }
            "rotation_flow" => {
                let p: RotationParams =
                    serde_json::from_value(repr.params).map_err(to_json_err)?;
                DiffeoField::from_flow(
                    repr.dim,
                    repr.support_radius,
                    repr.time_width,
                    FlowGenerator::Rotation {
                        amplitude: p.amplitude,
                        plane: p.plane,
                    },
                )
            }
            other => Err(Error::invalid(
                "diffeo spec",
                format!("unknown family '{other}'"),
            )),
        }
    }

    pub fn to_spec_value(&self) -> serde_json::Value {
        let (family, params) = match self.kind() {
            diffeo::DiffeoKind::Identity => ("identity", serde_json::json!({})),
            diffeo::DiffeoKind::Flow(FlowGenerator::Shear {
                amplitude,
                axis,
                gradient_axis,
            }) => (
                "shear_flow",
                serde_json::json!({
                    "amplitude": amplitude,
                    "axis": axis,
                    "gradient_axis": gradient_axis,
                }),
            ),
            diffeo::DiffeoKind::Flow(FlowGenerator::Rotation { amplitude, plane }) => (
                "rotation_flow",
                serde_json::json!({ "amplitude": amplitude, "plane": plane }),
            ),
        };
        serde_json::json!({
            "dim": self.dim(),
            "R": self.support_radius(),
            "T": self.time_width(),
            "family": family,
            "params": params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScalarSpecRepr {
    dim: usize,
    family: String,
    #[serde(default)]
    params: serde_json::Value,
}

impl ScalarField {
    pub fn from_spec_value(value: &serde_json::Value) -> Result<Self> {
        let repr: ScalarSpecRepr =
            serde_json::from_value(value.clone()).map_err(to_json_err)?;
        match repr.family.as_str() {
            "quadratic" => {
                #[derive(Deserialize)]
                struct P {
                    #[serde(default)]
                    center: Option<Vec<f64>>,
                }
                let p: P = serde_json::from_value(repr.params).map_err(to_json_err)?;
                match p.center {
                    Some(c) if c.len() == repr.dim => {
                        Ok(ScalarField::quadratic_centered(DVector::from_vec(c)))
                    }
                    Some(c) => Err(Error::DimensionMismatch {
                        left: c.len(),
                        right: repr.dim,
                    }),
                    None => Ok(ScalarField::quadratic(repr.dim)),
                }
            }
            "linear" => {
                #[derive(Deserialize)]
                struct P {
                    direction: Vec<f64>,
                }
                let p: P = serde_json::from_value(repr.params).map_err(to_json_err)?;
                if p.direction.len() != repr.dim {
                    return Err(Error::DimensionMismatch {
                        left: p.direction.len(),
                        right: repr.dim,
                    });
                }
                Ok(ScalarField::linear(DVector::from_vec(p.direction)))
            }
            other => Err(Error::invalid(
                "scalar spec",
                format!("unknown family '{other}'"),
            )),
        }
    }
}
