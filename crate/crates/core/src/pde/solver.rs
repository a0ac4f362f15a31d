//! Finite-difference marching for pure second-order Cauchy problems
//! `v_t = sum a_ij v_{x_i x_j}` and the divergence-form adjoint
//! `u_t + sum (a_ij u)_{x_i x_j} = 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{CoefficientField, Regularity};
use crate::pde::grid::{SpaceTimeGrid, StorePolicy, ValueSurface};

/// Cross-derivative discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossStencil {
    /// Standard 4-point centered stencil.
    Centered4,
    /// Positivity-preserving 7-point stencil, usable when A is diagonally
    /// dominant.
    Monotone7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    /// Crank-Nicolson, solved by Jacobi iteration.
    Implicit,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub scheme: Scheme,
    pub cross: CrossStencil,
    pub store: StorePolicy,
    pub stability_factor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            scheme: Scheme::Explicit,
            cross: CrossStencil::Centered4,
            store: StorePolicy::All,
            stability_factor: 1.0,
        }
    }
}

/// Precomputed nodal coefficients of a (possibly adjoint-expanded) operator
/// `L v = sum_ij a_ij v_ij + sum_j b_j v_j + c v`.
struct Operator {
    dim: usize,
    nodes: Vec<usize>,
    strides: Vec<usize>,
    h: Vec<f64>,
    cross: CrossStencil,
    /// [node * dim + i]: a_ii / h_i^2
    diag: Vec<f64>,
    /// [node * npairs + p] for pairs (i<j): 2 a_ij (raw, undivided)
    pairs: Vec<(usize, usize)>,
    cross_coef: Vec<f64>,
    /// [node * dim + j]: b_j / (2 h_j); empty when no first-order part
    first: Vec<f64>,
    /// [node]: c; empty when no zeroth-order part
    zeroth: Vec<f64>,
    max_entry: f64,
}

impl Operator {
    fn assemble(field: &CoefficientField, grid: &SpaceTimeGrid, adjoint: bool) -> Result<Self> {
        let dim = grid.dim();
        if field.n != dim {
            return Err(Error::Argument(format!(
                "coefficient field dimension {} != grid dimension {}",
                field.n, dim
            )));
        }
        let total = grid.total_nodes();
        let pairs: Vec<(usize, usize)> = (0..dim)
            .flat_map(|i| ((i + 1)..dim).map(move |j| (i, j)))
            .collect();
        let mut diag = vec![0.0; total * dim];
        let mut cross_coef = vec![0.0; total * pairs.len()];
        let mut first = if adjoint { vec![0.0; total * dim] } else { Vec::new() };
        let mut zeroth = if adjoint { vec![0.0; total] } else { Vec::new() };
        let h: Vec<f64> = (0..dim).map(|d| grid.spacing(d)).collect();
        let mut max_entry = 0.0f64;

        let constant = field.regularity == Regularity::Constant;
        let mut idx = 0usize;
        for multi in grid.iter_multi() {
            let x = grid.point(&multi);
            let a = field.at(&x);
            for i in 0..dim {
                let aii = a[(i, i)];
                diag[idx * dim + i] = aii / (h[i] * h[i]);
                max_entry = max_entry.max(aii.abs());
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let aij = a[(i, j)];
                cross_coef[idx * pairs.len() + p] = 2.0 * aij;
                max_entry = max_entry.max(aij.abs());
            }
            if adjoint && !constant {
                // L* u = sum a_ij u_ij + 2 sum_j (sum_i d a_ij / d x_i) u_j
                //        + (sum_ij d^2 a_ij / d x_i d x_j) u
                for j in 0..dim {
                    let mut cj = 0.0;
                    for i in 0..dim {
                        cj += field.partial(&x, i, 0.5 * h[i])[(i, j)];
                    }
                    first[idx * dim + j] = 2.0 * cj / (2.0 * h[j]);
                    max_entry = max_entry.max((2.0 * cj * h[j]).abs());
                }
                let mut c0 = 0.0;
                for i in 0..dim {
                    let sp = 0.5 * h[i];
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += sp;
                    xm[i] -= sp;
                    for j in 0..dim {
                        let dp = field.partial(&xp, j, 0.5 * h[j])[(i, j)];
                        let dm = field.partial(&xm, j, 0.5 * h[j])[(i, j)];
                        c0 += (dp - dm) / (2.0 * sp);
                    }
                }
                zeroth[idx] = c0;
                max_entry = max_entry.max((c0 * h[0] * h[0]).abs());
            }
            idx += 1;
        }
        Ok(Operator {
            dim,
            nodes: grid.nodes.clone(),
            strides: grid.strides(),
            h,
            cross: CrossStencil::Centered4,
            diag,
            pairs,
            cross_coef,
            first,
            zeroth,
            max_entry,
        })
    }

    #[inline]
    fn is_interior(&self, multi: &[usize]) -> bool {
        multi
            .iter()
            .zip(&self.nodes)
            .all(|(&i, &n)| i > 0 && i + 1 < n)
    }

    /// L v at an interior node.
    #[inline]
    fn apply(&self, v: &[f64], idx: usize) -> f64 {
        let dim = self.dim;
        let center = v[idx];
        let mut acc = 0.0;
        for i in 0..dim {
            let s = self.strides[i];
            acc += self.diag[idx * dim + i] * (v[idx + s] - 2.0 * center + v[idx - s]);
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let aij2 = self.cross_coef[idx * self.pairs.len() + p];
            if aij2 == 0.0 {
                continue;
            }
            let si = self.strides[i];
            let sj = self.strides[j];
            let hij = self.h[i] * self.h[j];
            match self.cross {
                CrossStencil::Centered4 => {
                    acc += aij2 * (v[idx + si + sj] + v[idx - si - sj]
                        - v[idx + si - sj]
                        - v[idx - si + sj])
                        / (4.0 * hij);
                }
                CrossStencil::Monotone7 => {
                    let axis = v[idx + si] + v[idx - si] + v[idx + sj] + v[idx - sj];
                    if aij2 > 0.0 {
                        acc += aij2
                            * (v[idx + si + sj] + v[idx - si - sj] + 2.0 * center - axis)
                            / (2.0 * hij);
                    } else {
                        acc += aij2
                            * (axis - v[idx + si - sj] - v[idx - si + sj] - 2.0 * center)
                            / (2.0 * hij);
                    }
                }
            }
        }
        if !self.first.is_empty() {
            for j in 0..dim {
                let s = self.strides[j];
                acc += self.first[idx * dim + j] * (v[idx + s] - v[idx - s]);
            }
        }
        if !self.zeroth.is_empty() {
            acc += self.zeroth[idx] * center;
        }
        acc
    }

    /// Coefficient of the center value inside `apply`, needed by the Jacobi
    /// sweep of the implicit scheme.
    #[inline]
    fn center_coef(&self, idx: usize) -> f64 {
        let dim = self.dim;
        let mut c = 0.0;
        for i in 0..dim {
            c -= 2.0 * self.diag[idx * dim + i];
        }
        if self.cross == CrossStencil::Monotone7 {
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                let aij2 = self.cross_coef[idx * self.pairs.len() + p];
                c += aij2.abs() / (self.h[i] * self.h[j]);
            }
        }
        if !self.zeroth.is_empty() {
            c += self.zeroth[idx];
        }
        c
    }
}

fn boundary_extrapolate(op: &Operator, v: &mut [f64]) {
    // second-normal-derivative-zero: linear extrapolation face by face,
    // dimension order fixed for determinism
    let dim = op.dim;
    for d in 0..dim {
        let s = op.strides[d];
        let n = op.nodes[d];
        // iterate over all nodes of the two faces i_d = 0 and i_d = n-1
        let face_count: usize = op.nodes.iter().enumerate().filter(|&(dd, _)| dd != d).map(|(_, &m)| m).product();
        for f in 0..face_count {
            // decode f into the other coordinates
            let mut rem = f;
            let mut base = 0usize;
            for dd in 0..dim {
                if dd == d {
                    continue;
                }
                let m = op.nodes[dd];
                let i = rem % m;
                rem /= m;
                base += i * op.strides[dd];
            }
            v[base] = 2.0 * v[base + s] - v[base + 2 * s];
            let top = base + (n - 1) * s;
            v[top] = 2.0 * v[top - s] - v[top - 2 * s];
        }
    }
}

fn march(
    op: &Operator,
    grid: &SpaceTimeGrid,
    initial: Vec<f64>,
    opts: &SolveOptions,
    coefficient_id: &str,
    payoff_id: &str,
    reverse_times: bool,
) -> Result<ValueSurface> {
    let k = grid.time_step;
    let steps = grid.time_steps();
    if opts.scheme == Scheme::Explicit {
        let bound = grid.explicit_stable_step(op.max_entry, opts.stability_factor);
        if k > bound * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "explicit step {k:.3e} exceeds stability bound {bound:.3e}; refine time or switch to implicit"
            )));
        }
    }

    let total = grid.total_nodes();
    let interior: Vec<bool> = grid.iter_multi().map(|m| op.is_interior(&m)).collect();
    let mut v = initial;
    boundary_extrapolate(op, &mut v);

    let mut times = vec![if reverse_times { grid.final_time } else { 0.0 }];
    let mut layers = vec![v.clone()];
    let parallel = total >= 1 << 14;

    let mut new_v = vec![0.0; total];
    for step in 1..=steps {
        let update = |idx: usize, out: &mut f64| {
            *out = if interior[idx] {
                match opts.scheme {
                    Scheme::Explicit => v[idx] + k * op.apply(&v, idx),
                    Scheme::Implicit => v[idx], // seeded; refined below
                }
            } else {
                v[idx]
            };
        };
        if parallel {
            new_v
                .par_iter_mut()
                .enumerate()
                .for_each(|(idx, out)| update(idx, out));
        } else {
            for (idx, out) in new_v.iter_mut().enumerate() {
                update(idx, out);
            }
        }

        if opts.scheme == Scheme::Implicit {
            crank_nicolson_sweep(op, &interior, &v, &mut new_v, k, step)?;
        }

        boundary_extrapolate(op, &mut new_v);
        std::mem::swap(&mut v, &mut new_v);

        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite nodal value".into(),
            });
        }
        if opts.store.keeps(step, steps) {
            let t = step as f64 * k;
            times.push(if reverse_times { grid.final_time - t } else { t });
            layers.push(v.clone());
        }
    }

    if reverse_times {
        times.reverse();
        layers.reverse();
    }
    Ok(ValueSurface {
        grid: grid.clone(),
        times,
        values: layers,
        coefficient_id: coefficient_id.to_string(),
        payoff_id: payoff_id.to_string(),
    })
}

/// Jacobi iteration for `(I - k/2 L) v_new = (I + k/2 L) v_old`.
fn crank_nicolson_sweep(
    op: &Operator,
    interior: &[bool],
    v_old: &[f64],
    v_new: &mut [f64],
    k: f64,
    step: usize,
) -> Result<()> {
    let theta = 0.5;
    let total = v_old.len();
    let mut rhs = vec![0.0; total];
    for idx in 0..total {
        rhs[idx] = if interior[idx] {
            v_old[idx] + (1.0 - theta) * k * op.apply(v_old, idx)
        } else {
            v_old[idx]
        };
    }
    let scale = v_old.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let mut x = v_new.to_vec();
    let mut next = vec![0.0; total];
    for _it in 0..400 {
        let mut delta = 0.0f64;
        for idx in 0..total {
            if !interior[idx] {
                next[idx] = rhs[idx];
                continue;
            }
            let diag = op.center_coef(idx);
            let lx = op.apply(&x, idx);
            let off = lx - diag * x[idx];
            let denom = 1.0 - theta * k * diag;
            let xi = (rhs[idx] + theta * k * off) / denom;
            delta = delta.max((xi - x[idx]).abs());
            next[idx] = xi;
        }
        std::mem::swap(&mut x, &mut next);
        if delta <= 1e-13 * scale {
            v_new.copy_from_slice(&x);
            return Ok(());
        }
    }
    Err(Error::Divergence {
        step,
        detail: "implicit Jacobi sweep did not converge".into(),
    })
}

/// Solves `v_t = sum a_ij v_{x_i x_j}`, `v(0, x) = data(x)` forward to `T`.
pub fn solve_cauchy(
    field: &CoefficientField,
    data: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &SpaceTimeGrid,
    opts: &SolveOptions,
) -> Result<ValueSurface> {
    let mut op = Operator::assemble(field, grid, false)?;
    op.cross = opts.cross;
    let initial: Vec<f64> = grid.iter_multi().map(|m| data(&grid.point(&m))).collect();
    if initial.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("initial data not finite on grid".into()));
    }
    march(&op, grid, initial, opts, "forward", "data", false)
}

/// Solves the adjoint `u_t + sum (a_ij u)_{x_i x_j} = 0` backward from terminal
/// data at `T` down to 0. Stored times are ascending, as for the forward solve.
pub fn solve_adjoint(
    field: &CoefficientField,
    terminal: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &SpaceTimeGrid,
    opts: &SolveOptions,
) -> Result<ValueSurface> {
    let mut op = Operator::assemble(field, grid, true)?;
    op.cross = opts.cross;
    let initial: Vec<f64> = grid
        .iter_multi()
        .map(|m| terminal(&grid.point(&m)))
        .collect();
    if initial.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("terminal data not finite on grid".into()));
    }
    march(&op, grid, initial, opts, "adjoint", "data", true)
}

/// Normalised Gaussian bump of width `w0` centered at `y`.
pub fn gaussian_bump(y: &[f64], w0: f64) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |x: &[f64]| {
        let mut acc = 1.0;
        for d in 0..y.len() {
            let z = (x[d] - y[d]) / w0;
            acc *= (-0.5 * z * z).exp() / (w0 * (2.0 * std::f64::consts::PI).sqrt());
        }
        acc
    }
}

/// Approximate fundamental solution: forward solve from a normalised Gaussian
/// bump of width `w0` at `y`.
pub fn fundamental_solution(
    field: &CoefficientField,
    y: &[f64],
    grid: &SpaceTimeGrid,
    w0: f64,
    opts: &SolveOptions,
) -> Result<ValueSurface> {
    if w0 < 2.0 * (0..grid.dim()).map(|d| grid.spacing(d)).fold(0.0, f64::max) {
        return Err(Error::Argument(format!(
            "source width {w0} under-resolved: need w0 >= 2 max h_d"
        )));
    }
    grid.nearest_node(y)?; // errors when the source is outside the box
    let bump = gaussian_bump(y, w0);
    let mut surf = solve_cauchy(field, &bump, grid, opts)?;
    surf.payoff_id = format!("bump@{y:?}");
    Ok(surf)
}

/// Approximate adjoint density `p*(s, . ; T, x)`: backward divergence-form
/// solve from a terminal bump at `x`.
pub fn adjoint_density(
    field: &CoefficientField,
    x: &[f64],
    grid: &SpaceTimeGrid,
    w0: f64,
    opts: &SolveOptions,
) -> Result<ValueSurface> {
    if w0 < 2.0 * (0..grid.dim()).map(|d| grid.spacing(d)).fold(0.0, f64::max) {
        return Err(Error::Argument(format!(
            "source width {w0} under-resolved: need w0 >= 2 max h_d"
        )));
    }
    grid.nearest_node(x)?;
    let bump = gaussian_bump(x, w0);
    let mut surf = solve_adjoint(field, &bump, grid, opts)?;
    surf.payoff_id = format!("adjoint-bump@{x:?}");
    Ok(surf)
}
