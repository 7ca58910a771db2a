//! Independent verification tools: midpoint Riemann sums for cell moments and
//! central finite differences for gradients and Jacobians.
//!
//! These deliberately avoid the exact-quadrature and analytic-derivative
//! paths they are used to check — the Riemann sum rasterizes the polygon with
//! a point-in-polygon test, and the difference quotients re-evaluate the full
//! objective from scratch.

use crate::density::{BilinearDensity, CellMoments};
use crate::geom::{ConvexPolygon, Point};
use std::fmt;

/// Midpoint Riemann sum of the cell moments on a `grid_n × grid_n` raster of
/// the polygon's bounding box. Error decays like O(1/grid_n) (boundary cells
/// dominate), so expect agreement ~ a few `/grid_n`.
pub fn riemann_moments(
    density: &BilinearDensity,
    poly: &ConvexPolygon,
    site: Point,
    grid_n: usize,
) -> CellMoments {
    assert!(grid_n > 0, "grid_n must be positive");
    let mut out = CellMoments::default();
    let Some(bb) = poly.bbox() else {
        return out;
    };
    if poly.is_empty() {
        return out;
    }
    let dx = (bb.max.x - bb.min.x) / grid_n as f64;
    let dy = (bb.max.y - bb.min.y) / grid_n as f64;
    if dx <= 0.0 || dy <= 0.0 {
        return out;
    }
    let cell_area = dx * dy;
    for i in 0..grid_n {
        let x = bb.min.x + (i as f64 + 0.5) * dx;
        for j in 0..grid_n {
            let y = bb.min.y + (j as f64 + 0.5) * dy;
            let p = Point::new(x, y);
            if !poly.contains(p, 0.0) {
                continue;
            }
            let w = density.eval(p) * cell_area;
            out.mass += w;
            out.first_moment += p * w;
            out.cost += 0.5 * (site - p).norm_squared() * w;
        }
    }
    out
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "step must be positive");
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for k in 0..x0.len() {
        x[k] = x0[k] + step;
        let fp = f(&x);
        x[k] = x0[k] - step;
        let fm = f(&x);
        x[k] = x0[k];
        grad[k] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Central finite-difference Jacobian of a vector function, one column per
/// input coordinate: `jac[r][c] = ∂f_r/∂x_c`.
pub fn fd_jacobian(
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    step: f64,
) -> Vec<Vec<f64>> {
    assert!(step > 0.0, "step must be positive");
    let mut x = x0.to_vec();
    let probe = f(x0);
    let rows = probe.len();
    let mut jac = vec![vec![0.0; x0.len()]; rows];
    for c in 0..x0.len() {
        x[c] = x0[c] + step;
        let fp = f(&x);
        x[c] = x0[c] - step;
        let fm = f(&x);
        x[c] = x0[c];
        assert_eq!(fp.len(), rows, "function changed output size under perturbation");
        for r in 0..rows {
            jac[r][c] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    jac
}

/// One comparison between an analytic quantity and its oracle value.
#[derive(Clone, Debug)]
pub struct FdRow {
    pub quantity: String,
    pub analytic: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    /// FD step or Riemann grid resolution used for the oracle value.
    pub resolution: f64,
}

/// Table of analytic-vs-oracle comparisons, printable for the
/// `check-derivatives` command.
#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub rows: Vec<FdRow>,
}

impl FdReport {
    pub fn push(&mut self, quantity: impl Into<String>, analytic: f64, oracle: f64, resolution: f64) {
        let abs_err = (analytic - oracle).abs();
        let rel_err = abs_err / analytic.abs().max(oracle.abs()).max(1e-30);
        self.rows.push(FdRow { quantity: quantity.into(), analytic, oracle, abs_err, rel_err, resolution });
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&FdRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>16} {:>16} {:>10} {:>10} {:>9}",
            "quantity", "analytic", "oracle", "abs err", "rel err", "res"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} {:>16.9e} {:>16.9e} {:>10.3e} {:>10.3e} {:>9.1e}",
                r.quantity, r.analytic, r.oracle, r.abs_err, r.rel_err, r.resolution
            )?;
        }
        Ok(())
    }
}
