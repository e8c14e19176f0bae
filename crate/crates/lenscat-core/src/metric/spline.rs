//! Tensor-product cubic B-spline interpolation on uniform grids.
//!
//! Tabulated metric fields are stored as samples on a regular spacetime
//! grid and reconstructed with an interpolating cubic B-spline (natural
//! boundary conditions). The spline is C² inside the grid, reproduces
//! constants exactly, and its first derivatives are evaluated from the
//! basis directly rather than by finite differences of the interpolant.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One uniform grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(max > min) || count < 4 {
            return Err(Error::invalid(
                "spline axis",
                format!("need max > min and count >= 4, got [{min}, {max}] x {count}"),
            ));
        }
        Ok(Axis { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }
}

/// Interpolating cubic B-spline over a tensor grid, with `ncomp` values
/// stored per grid node.
#[derive(Debug, Clone)]
pub struct SplineGrid {
    axes: Vec<Axis>,
    ncomp: usize,
    /// B-spline coefficients, shape `[axes[0].count + 2, ..., ncomp]`,
    /// row-major with the component index fastest.
    coeff: Vec<f64>,
    /// Strides of `coeff` per axis (in units of f64), component stride is 1.
    strides: Vec<usize>,
}

fn basis(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0,
        (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0,
        u * u * u / 6.0,
    ]
}

fn basis_deriv(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        -v * v / 2.0,
        (3.0 * u * u - 4.0 * u) / 2.0,
        (-3.0 * u * u + 2.0 * u + 1.0) / 2.0,
        u * u / 2.0,
    ]
}

/// Solves the 1-d interpolation prefilter with natural boundary conditions
/// for one line of samples; returns `m + 2` coefficients `c[-1..=m]`.
fn prefilter_line(f: &[f64]) -> Vec<f64> {
    let m = f.len();
    debug_assert!(m >= 2);
    // Natural BC pins c_0 = f_0 and c_{m-1} = f_{m-1}; interior rows are
    // the tridiagonal system (1/6, 4/6, 1/6) c = f.
    let mut c = vec![0.0; m];
    c[0] = f[0];
    c[m - 1] = f[m - 1];
    if m > 2 {
        // Thomas algorithm on rows 1..m-1 with the pinned ends moved to RHS.
        let k = m - 2;
        let mut diag = vec![4.0 / 6.0; k];
        let mut rhs = vec![0.0; k];
        rhs[..k].copy_from_slice(&f[1..=k]);
        rhs[0] -= c[0] / 6.0;
        rhs[k - 1] -= c[m - 1] / 6.0;
        for i in 1..k {
            let w = (1.0 / 6.0) / diag[i - 1];
            diag[i] -= w * (1.0 / 6.0);
            rhs[i] -= w * rhs[i - 1];
        }
        c[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            c[i + 1] = (rhs[i] - (1.0 / 6.0) * c[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(m + 2);
    out.push(2.0 * c[0] - c[1]);
    out.extend_from_slice(&c);
    out.push(2.0 * c[m - 1] - c[m - 2]);
    out
}

impl SplineGrid {
    /// Builds the interpolating spline from node samples.
    ///
    /// `data` is row-major over the axes with the component index fastest:
    /// index `[(i_0 * n_1 + i_1) * ... ] * ncomp + comp`.
    pub fn from_samples(axes: Vec<Axis>, ncomp: usize, data: Vec<f64>) -> Result<Self> {
        let node_count: usize = axes.iter().map(|a| a.count).product();
        if data.len() != node_count * ncomp {
            return Err(Error::invalid(
                "spline data",
                format!(
                    "expected {} values ({} nodes x {} components), got {}",
                    node_count * ncomp,
                    node_count,
                    ncomp,
                    data.len()
                ),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("spline data", "non-finite sample"));
        }

        // Filter axis by axis. `shape` tracks the current extents, where
        // already-filtered axes have count + 2 entries.
        let mut shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
        shape.push(ncomp);
        let mut buf = data;
        for ax in 0..axes.len() {
            let line_len = shape[ax];
            let out_len = line_len + 2;
            let inner: usize = shape[ax + 1..].iter().product();
            let outer: usize = shape[..ax].iter().product();
            let mut next = vec![0.0; outer * out_len * inner];
            let mut line = vec![0.0; line_len];
            for o in 0..outer {
                for i in 0..inner {
                    for (l, slot) in line.iter_mut().enumerate() {
                        *slot = buf[(o * line_len + l) * inner + i];
                    }
                    let c = prefilter_line(&line);
                    for (l, v) in c.iter().enumerate() {
                        next[(o * out_len + l) * inner + i] = *v;
                    }
                }
            }
            buf = next;
            shape[ax] = out_len;
        }

        let mut strides = vec![0usize; axes.len()];
        let mut acc = ncomp;
        for ax in (0..axes.len()).rev() {
            strides[ax] = acc;
            acc *= axes[ax].count + 2;
        }
        Ok(SplineGrid {
            axes,
            ncomp,
            coeff: buf,
            strides,
        })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// True when the point lies inside the grid's closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(&v, a)| v >= a.min && v <= a.max)
    }

    /// Locates the cell and local parameter for each axis.
    fn locate(&self, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let mut cells = Vec::with_capacity(self.axes.len());
        let mut locals = Vec::with_capacity(self.axes.len());
        for (&v, a) in x.iter().zip(&self.axes) {
            let h = a.step();
            let raw = (v - a.min) / h;
            let mut j = raw.floor() as isize;
            if j < 0 {
                j = 0;
            }
            if j as usize > a.count - 2 {
                j = (a.count - 2) as isize;
            }
            cells.push(j as usize);
            locals.push(raw - j as f64);
        }
        (cells, locals)
    }

    /// Evaluates all components at `x`; `deriv_axis` selects an optional
    /// first derivative instead of the value.
    pub fn eval(&self, x: &[f64], deriv_axis: Option<usize>, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.axes.len());
        debug_assert_eq!(out.len(), self.ncomp);
        let (cells, locals) = self.locate(x);
        let ndim = self.axes.len();
        let mut weights: Vec<[f64; 4]> = Vec::with_capacity(ndim);
        for (ax, &local) in locals.iter().enumerate() {
            let w = if deriv_axis == Some(ax) {
                let mut d = basis_deriv(local);
                let inv_h = 1.0 / self.axes[ax].step();
                for v in &mut d {
                    *v *= inv_h;
                }
                d
            } else {
                basis(local)
            };
            weights.push(w);
        }
        out.fill(0.0);
        // Walk the 4^ndim stencil with an odometer over local offsets.
        let mut offs = vec![0usize; ndim];
        loop {
            let mut w = 1.0;
            let mut base = 0usize;
            for ax in 0..ndim {
                w *= weights[ax][offs[ax]];
                // coefficient index along ax is (cell - 1 + off) + 1 = cell + off
                base += (cells[ax] + offs[ax]) * self.strides[ax];
            }
            if w != 0.0 {
                for (c, slot) in out.iter_mut().enumerate() {
                    *slot += w * self.coeff[base + c];
                }
            }
            let mut ax = ndim;
            loop {
                if ax == 0 {
                    return;
                }
                ax -= 1;
                offs[ax] += 1;
                if offs[ax] < 4 {
                    break;
                }
                offs[ax] = 0;
            }
        }
    }
}
