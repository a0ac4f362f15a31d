//! Discrete Green's-identity residual for a forward/adjoint solution pair.
//!
//! For solutions of `Lv = 0` and `L*u = 0` the product integral obeys
//! `d/dt int_W uv dz = boundary flux of F`, with per-direction flux
//! `F_i = sum_j (u a_ij dv/dx_j - v a_ij du/dx_j - u v da_ij/dx_j)`.
//! The residual is the absolute defect of that balance over a space-time
//! window, with trapezoid volume quadrature and first-order flux quadrature.

use crate::error::{Error, Result};
use crate::market::CoefficientField;
use crate::pde::grid::ValueSurface;

/// Node-index window in space and stored-level window in time.
#[derive(Debug, Clone)]
pub struct SpaceTimeWindow {
    /// Stored-level index of the earlier time.
    pub level_start: usize,
    /// Stored-level index of the later time.
    pub level_end: usize,
    /// Inclusive node-index bounds per dimension.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

fn window_integral(surf: &ValueSurface, other: &ValueSurface, level: usize, w: &SpaceTimeWindow) -> f64 {
    let grid = &surf.grid;
    let dim = grid.dim();
    let mut acc = 0.0;
    for multi in grid.iter_multi() {
        if (0..dim).any(|d| multi[d] < w.lo[d] || multi[d] > w.hi[d]) {
            continue;
        }
        let mut weight = 1.0;
        for d in 0..dim {
            if multi[d] == w.lo[d] || multi[d] == w.hi[d] {
                weight *= 0.5;
            }
        }
        let idx = grid.flat(&multi);
        acc += weight * surf.values[level][idx] * other.values[level][idx];
    }
    let cell: f64 = (0..dim).map(|d| grid.spacing(d)).product();
    acc * cell
}

/// |int uv(t2) - int uv(t1) - time-integrated boundary flux| over the window.
pub fn greens_residual(
    field: &CoefficientField,
    u: &ValueSurface,
    v: &ValueSurface,
    window: &SpaceTimeWindow,
) -> Result<f64> {
    if u.grid != v.grid {
        return Err(Error::Argument("surfaces live on different grids".into()));
    }
    if u.times.len() != v.times.len()
        || u.times
            .iter()
            .zip(&v.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::Argument("surfaces store different time levels".into()));
    }
    let grid = &u.grid;
    let dim = grid.dim();
    if window.lo.len() != dim || window.hi.len() != dim {
        return Err(Error::Argument("window dimension mismatch".into()));
    }
    if window.level_end <= window.level_start || window.level_end >= u.times.len() {
        return Err(Error::Argument("bad window time levels".into()));
    }
    for d in 0..dim {
        if window.lo[d] < 1 || window.hi[d] + 2 > grid.nodes[d] || window.lo[d] >= window.hi[d] {
            return Err(Error::Argument(format!(
                "window must be strictly interior in dimension {d}"
            )));
        }
    }

    let mass_end = window_integral(u, v, window.level_end, window);
    let mass_start = window_integral(u, v, window.level_start, window);

    // flux through the window boundary, rectangle rule in time over
    // [level_start, level_end)
    let strides = grid.strides();
    let mut flux_time_integral = 0.0;
    for level in window.level_start..window.level_end {
        let dt = u.times[level + 1] - u.times[level];
        let uv_u = &u.values[level];
        let uv_v = &v.values[level];
        let mut flux = 0.0;
        for face_dim in 0..dim {
            let area: f64 = (0..dim)
                .filter(|&d| d != face_dim)
                .map(|d| grid.spacing(d))
                .product();
            for &(face_idx, orient) in &[(window.lo[face_dim], -1.0), (window.hi[face_dim], 1.0)] {
                // iterate nodes of the face
                for multi in grid.iter_multi() {
                    if multi[face_dim] != face_idx {
                        continue;
                    }
                    if (0..dim).any(|d| d != face_dim && (multi[d] < window.lo[d] || multi[d] > window.hi[d])) {
                        continue;
                    }
                    let mut weight = 1.0;
                    for d in 0..dim {
                        if d != face_dim && (multi[d] == window.lo[d] || multi[d] == window.hi[d]) {
                            weight *= 0.5;
                        }
                    }
                    let idx = grid.flat(&multi);
                    let x = grid.point(&multi);
                    let a = field.at(&x);
                    let i = face_dim;
                    let mut fi = 0.0;
                    for j in 0..dim {
                        let sj = strides[j];
                        let hj = grid.spacing(j);
                        let dv = (uv_v[idx + sj] - uv_v[idx - sj]) / (2.0 * hj);
                        let du = (uv_u[idx + sj] - uv_u[idx - sj]) / (2.0 * hj);
                        let daij = field.partial(&x, j, 0.5 * hj)[(i, j)];
                        fi += uv_u[idx] * a[(i, j)] * dv
                            - uv_v[idx] * a[(i, j)] * du
                            - uv_u[idx] * uv_v[idx] * daij;
                    }
                    flux += orient * weight * fi * area;
                }
            }
        }
        flux_time_integral += flux * dt;
    }

    Ok((mass_end - mass_start - flux_time_integral).abs())
}
