//! Spatial derivatives of value surfaces by direct differencing and by the
//! adjoint-density representation, plus the forward/adjoint derivative
//! identity residual.

use crate::error::{Error, Result};
use crate::market::{CoefficientField, MollifiedPayoff};
use crate::pde::{adjoint_density, fundamental_solution, SolveOptions, SpaceTimeGrid, ValueSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreekMethod {
    Direct,
    Adjoint,
    PayoffShift,
}

/// A spatial derivative request: per-dimension orders with total order <= 2.
#[derive(Debug, Clone)]
pub struct GreekRequest {
    pub alpha: Vec<usize>,
    pub x: Vec<f64>,
    pub t: f64,
    pub method: GreekMethod,
}

impl GreekRequest {
    pub fn order(&self) -> usize {
        self.alpha.iter().sum()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.alpha.len() != dim || self.x.len() != dim {
            return Err(Error::Argument("request dimension mismatch".into()));
        }
        if self.order() > 2 {
            return Err(Error::Argument("only |alpha| <= 2 supported".into()));
        }
        Ok(())
    }
}

/// Payoff argument for adjoint-representation Greeks. Raw payoffs are
/// refused: hinge-like data must pass through `mollify_and_cutoff` first.
pub enum GreekPayoff<'a> {
    Raw,
    Mollified(&'a MollifiedPayoff),
}

/// Centered finite-difference Greek on a stored surface level.
pub fn finite_difference(surface: &ValueSurface, req: &GreekRequest) -> Result<f64> {
    let grid = &surface.grid;
    req.validate(grid.dim())?;
    let level = surface.level_at(req.t)?;
    let multi = grid.nearest_node(&req.x)?;
    // the stencil needs one node of clearance in every differentiated direction
    for d in 0..grid.dim() {
        if req.alpha[d] > 0 && (multi[d] == 0 || multi[d] + 1 >= grid.nodes[d]) {
            return Err(Error::Argument(format!(
                "stencil leaves the grid in dimension {d}"
            )));
        }
    }
    let v = &surface.values[level];
    let idx = grid.flat(&multi);
    let strides = grid.strides();
    let dirs: Vec<usize> = (0..grid.dim()).filter(|&d| req.alpha[d] > 0).collect();
    let value = match req.order() {
        0 => v[idx],
        1 => {
            let d = dirs[0];
            (v[idx + strides[d]] - v[idx - strides[d]]) / (2.0 * grid.spacing(d))
        }
        2 if dirs.len() == 1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            (v[idx + strides[d]] - 2.0 * v[idx] + v[idx - strides[d]]) / (h * h)
        }
        _ => {
            let (i, j) = (dirs[0], dirs[1]);
            let (si, sj) = (strides[i], strides[j]);
            (v[idx + si + sj] + v[idx - si - sj] - v[idx + si - sj] - v[idx - si + sj])
                / (4.0 * grid.spacing(i) * grid.spacing(j))
        }
    };
    Ok(value)
}

fn alpha_sign(order: usize) -> f64 {
    if order % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Derivative of a nodal layer at a node, same stencils as `finite_difference`.
fn layer_derivative(
    grid: &SpaceTimeGrid,
    layer: &[f64],
    multi: &[usize],
    alpha: &[usize],
) -> Result<f64> {
    let dirs: Vec<usize> = (0..grid.dim()).filter(|&d| alpha[d] > 0).collect();
    for &d in &dirs {
        if multi[d] == 0 || multi[d] + 1 >= grid.nodes[d] {
            return Err(Error::Argument("stencil leaves the grid".into()));
        }
    }
    let idx = grid.flat(multi);
    let strides = grid.strides();
    let order: usize = alpha.iter().sum();
    Ok(match order {
        0 => layer[idx],
        1 => {
            let d = dirs[0];
            (layer[idx + strides[d]] - layer[idx - strides[d]]) / (2.0 * grid.spacing(d))
        }
        2 if dirs.len() == 1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            (layer[idx + strides[d]] - 2.0 * layer[idx] + layer[idx - strides[d]]) / (h * h)
        }
        _ => {
            let (i, j) = (dirs[0], dirs[1]);
            let (si, sj) = (strides[i], strides[j]);
            (layer[idx + si + sj] + layer[idx - si - sj]
                - layer[idx + si - sj]
                - layer[idx - si + sj])
                / (4.0 * grid.spacing(i) * grid.spacing(j))
        }
    })
}

/// Trapezoid weight of a node on the full box.
fn trapezoid_weight(grid: &SpaceTimeGrid, multi: &[usize]) -> f64 {
    let mut w = 1.0;
    for d in 0..grid.dim() {
        if multi[d] == 0 || multi[d] == grid.nodes[d] - 1 {
            w *= 0.5;
        }
    }
    w
}

/// Greek via the adjoint density started at `req.x`:
/// either `int f(y) D^alpha_y p*(0, y; t, x) dy` (adjoint form, orientation
/// corrected per derivative order) or `int D^alpha f(y) p*(0, y; t, x) dy`
/// (payoff-shift form).
pub fn greek_via_adjoint(
    field: &CoefficientField,
    payoff: &GreekPayoff,
    grid: &SpaceTimeGrid,
    source_width: f64,
    req: &GreekRequest,
) -> Result<f64> {
    req.validate(grid.dim())?;
    let payoff = match payoff {
        GreekPayoff::Raw => {
            return Err(Error::Argument(
                "payoff not regularized: apply mollify_and_cutoff before adjoint Greeks".into(),
            ))
        }
        GreekPayoff::Mollified(m) => m,
    };
    if (grid.final_time - req.t).abs() > 1e-9 * (1.0 + req.t) {
        return Err(Error::Argument(
            "grid final time must equal the evaluation time".into(),
        ));
    }
    let opts = SolveOptions {
        store: crate::pde::StorePolicy::FinalOnly,
        ..Default::default()
    };
    let star = adjoint_density(field, &req.x, grid, source_width, &opts)?;
    let layer = &star.values[0]; // sigma = 0 layer: p*(0, y; t, x)
    let cell: f64 = (0..grid.dim()).map(|d| grid.spacing(d)).product();

    let mut acc = 0.0;
    match req.method {
        GreekMethod::PayoffShift => {
            for multi in grid.iter_multi() {
                let interior = (0..grid.dim())
                    .all(|d| req.alpha[d] == 0 || (multi[d] > 0 && multi[d] + 1 < grid.nodes[d]));
                if !interior {
                    continue;
                }
                let y = grid.point(&multi);
                let df = payoff_derivative(payoff, &y, &req.alpha, grid)?;
                acc += trapezoid_weight(grid, &multi) * df * layer[grid.flat(&multi)];
            }
        }
        GreekMethod::Adjoint => {
            let sign = alpha_sign(req.order());
            for multi in grid.iter_multi() {
                let interior = (0..grid.dim())
                    .all(|d| req.alpha[d] == 0 || (multi[d] > 0 && multi[d] + 1 < grid.nodes[d]));
                if !interior {
                    continue;
                }
                let y = grid.point(&multi);
                let dp = layer_derivative(grid, layer, &multi, &req.alpha)?;
                acc += trapezoid_weight(grid, &multi) * payoff.eval(&y) * sign * dp;
            }
        }
        GreekMethod::Direct => {
            return Err(Error::Argument(
                "direct method reads a solved surface; use finite_difference".into(),
            ))
        }
    }
    Ok(acc * cell)
}

/// D^alpha of the mollified payoff by centered differences at the grid scale.
fn payoff_derivative(
    payoff: &MollifiedPayoff,
    y: &[f64],
    alpha: &[usize],
    grid: &SpaceTimeGrid,
) -> Result<f64> {
    let dirs: Vec<usize> = (0..alpha.len()).filter(|&d| alpha[d] > 0).collect();
    let order: usize = alpha.iter().sum();
    let mut yy = y.to_vec();
    Ok(match order {
        0 => payoff.eval(y),
        1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            yy[d] = y[d] + h;
            let up = payoff.eval(&yy);
            yy[d] = y[d] - h;
            let dn = payoff.eval(&yy);
            (up - dn) / (2.0 * h)
        }
        2 if dirs.len() == 1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            yy[d] = y[d] + h;
            let up = payoff.eval(&yy);
            yy[d] = y[d] - h;
            let dn = payoff.eval(&yy);
            (up - 2.0 * payoff.eval(y) + dn) / (h * h)
        }
        _ => {
            let (i, j) = (dirs[0], dirs[1]);
            let (hi, hj) = (grid.spacing(i), grid.spacing(j));
            let mut corner = |si: f64, sj: f64| {
                yy[i] = y[i] + si * hi;
                yy[j] = y[j] + sj * hj;
                payoff.eval(&yy)
            };
            (corner(1.0, 1.0) + corner(-1.0, -1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0))
                / (4.0 * hi * hj)
        }
    })
}

/// Residual of the forward/adjoint derivative identity for fundamental
/// solutions: `D^alpha_y p(t, x; s, y)` against `D^alpha_y p*(s, y; t, x)`.
///
/// Both sides differentiate in the y slot. On the forward kernel y is the
/// source location, so the left side differences solves across shifted
/// sources; on the adjoint density y is the evaluation point, so the right
/// side is a nodal difference of one adjoint solve. The two routes share no
/// solve, which makes the residual an honest O(h + w0) defect measure.
pub fn adjoint_identity_residual(
    field: &CoefficientField,
    t: f64,
    x: &[f64],
    s: f64,
    y: &[f64],
    alpha: &[usize],
    grid_box: (&[f64], &[f64], &[usize]),
    time_steps: usize,
    source_width: f64,
) -> Result<f64> {
    if t <= s {
        return Err(Error::Argument("need t > s".into()));
    }
    let dim = y.len();
    if alpha.len() != dim || alpha.iter().sum::<usize>() > 2 {
        return Err(Error::Argument("bad multi-index".into()));
    }
    let (lo, hi, nodes) = grid_box;
    let grid = SpaceTimeGrid::new(lo.to_vec(), hi.to_vec(), nodes.to_vec(), time_steps, t - s)?;
    let opts = SolveOptions {
        store: crate::pde::StorePolicy::FinalOnly,
        ..Default::default()
    };

    // forward side: D^alpha in the source slot, by differencing whole solves
    let value_at_x = |source: &[f64]| -> Result<f64> {
        let f = fundamental_solution(field, source, &grid, source_width, &opts)?;
        let mx = grid.nearest_node(x)?;
        Ok(f.values[f.times.len() - 1][grid.flat(&mx)])
    };
    let dirs: Vec<usize> = (0..dim).filter(|&d| alpha[d] > 0).collect();
    let order: usize = alpha.iter().sum();
    let d_fwd = match order {
        0 => value_at_x(y)?,
        1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[d] += h;
            ym[d] -= h;
            (value_at_x(&yp)? - value_at_x(&ym)?) / (2.0 * h)
        }
        2 if dirs.len() == 1 => {
            let d = dirs[0];
            let h = grid.spacing(d);
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[d] += h;
            ym[d] -= h;
            (value_at_x(&yp)? - 2.0 * value_at_x(y)? + value_at_x(&ym)?) / (h * h)
        }
        _ => {
            let (i, j) = (dirs[0], dirs[1]);
            let (hi_, hj) = (grid.spacing(i), grid.spacing(j));
            let shifted = |si: f64, sj: f64| -> Result<f64> {
                let mut yy = y.to_vec();
                yy[i] += si * hi_;
                yy[j] += sj * hj;
                value_at_x(&yy)
            };
            (shifted(1.0, 1.0)? + shifted(-1.0, -1.0)? - shifted(1.0, -1.0)? - shifted(-1.0, 1.0)?)
                / (4.0 * hi_ * hj)
        }
    };

    // adjoint side: nodal derivative of p*(s, . ; t, x) at y
    let adj = adjoint_density(field, x, &grid, source_width, &opts)?;
    let my = grid.nearest_node(y)?;
    let d_adj = layer_derivative(&grid, &adj.values[0], &my, alpha)?;
    Ok((d_fwd - d_adj).abs())
}
