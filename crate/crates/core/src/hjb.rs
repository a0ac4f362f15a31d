//! Passport-option HJB solvers: pointwise maximisation over the rotated
//! vertex candidate set for the classical contract, and the bang-bang
//! two-candidate sweep for the symmetric contract on its half-strip, with
//! policy extraction.

use crate::error::{Error, Result};
use crate::market::{EigenFactorization, MarketModel};
use crate::math::norm_cdf;
use crate::pde::{SpaceTimeGrid, StorePolicy, ValueSurface};

pub const LOG_2: f64 = std::f64::consts::LN_2;

/// Contract whose admissibility the stored controls must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractKind {
    /// classical passport: controls in [-1, 1]^n
    ClassicalBox,
    /// symmetric passport: wealth fraction in [0, 1]
    SymmetricFraction,
}

/// Grid-aligned storage of the argmax control at stored time levels.
#[derive(Debug, Clone)]
pub struct PolicyMap {
    pub contract: ContractKind,
    pub times: Vec<f64>,
    /// controls[level][node * n_controls + c]
    pub controls: Vec<Vec<f64>>,
    pub n_controls: usize,
}

impl PolicyMap {
    pub fn control_at(&self, level: usize, node: usize) -> &[f64] {
        &self.controls[level][node * self.n_controls..(node + 1) * self.n_controls]
    }

    /// Every stored control satisfies its contract constraint.
    pub fn validate(&self) -> Result<()> {
        for layer in &self.controls {
            for v in layer {
                let ok = match self.contract {
                    ContractKind::ClassicalBox => v.abs() <= 1.0 + 1e-12,
                    ContractKind::SymmetricFraction => (-1e-12..=1.0 + 1e-12).contains(v),
                };
                if !ok {
                    return Err(Error::Argument(format!(
                        "stored control {v} violates {:?}",
                        self.contract
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lognormal settlement value on the half-strip boundary:
/// `exp(z2) Phi(d+) - Phi(d-)` with `d± = (z2 ± sigma^2 tau / 2)/(sigma sqrt(tau))`;
/// the `tau = 0` limit is the payoff `(exp(z2) - 1)^+`.
pub fn bs_boundary_value(z2: f64, tau: f64, sigma: f64) -> f64 {
    if tau <= 0.0 || sigma * tau.sqrt() < 1e-14 {
        return (z2.exp() - 1.0).max(0.0);
    }
    let vol = sigma * tau.sqrt();
    let d_plus = (z2 + 0.5 * sigma * sigma * tau) / vol;
    let d_minus = (z2 - 0.5 * sigma * sigma * tau) / vol;
    z2.exp() * norm_cdf(d_plus) - norm_cdf(d_minus)
}

/// Stop-loss optimum: full investment in the weaker asset,
/// `Delta^S = X_S I(S_N <= 1)`, the tie at `S_N = 1` going to full investment.
pub fn optimal_symmetric_strategy(s_n: f64, x_s: f64) -> f64 {
    if s_n <= 1.0 {
        x_s
    } else {
        0.0
    }
}

/// Rotated vertex pulled back to asset coordinates, with its clamp into the
/// admissible box. Components may leave [-1, 1] for generic orthogonal Q; the
/// flag records when clamping changed anything.
#[derive(Debug, Clone)]
pub struct VertexControl {
    pub literal: Vec<f64>,
    pub clamped: Vec<f64>,
    pub needed_clamp: bool,
}

/// `Q^T marginal_signs` for the multivariate passport optimum.
pub fn optimal_passport_vertex(
    eigen: &EigenFactorization,
    marginal_signs: &[f64],
) -> Result<VertexControl> {
    if marginal_signs.len() != eigen.n() {
        return Err(Error::Argument("sign vector dimension mismatch".into()));
    }
    if marginal_signs.iter().any(|s| (s.abs() - 1.0).abs() > 1e-12) {
        return Err(Error::Argument("marginal signs must be +-1".into()));
    }
    let literal = eigen.q_transpose_apply(marginal_signs);
    let clamped: Vec<f64> = literal.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let needed_clamp = literal
        .iter()
        .zip(&clamped)
        .any(|(a, b)| (a - b).abs() > 1e-12);
    Ok(VertexControl {
        literal,
        clamped,
        needed_clamp,
    })
}

/// Literal and clamped basket volatilities of a rotated vertex at prices `s`.
pub fn vertex_basket_volatilities(
    model: &MarketModel,
    vertex: &VertexControl,
    s: &[f64],
) -> Result<(f64, f64)> {
    let lit = model.basket_volatility(None, s, &vertex.literal)?;
    let cl = model.basket_volatility(None, s, &vertex.clamped)?;
    Ok((lit, cl))
}

// ---------------------------------------------------------------------------
// symmetric passport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SymmetricPassportSolution {
    pub surface: ValueSurface,
    pub policy: PolicyMap,
}

/// Builds a half-strip grid with the right edge exactly at `z1 = log 2` and a
/// stable explicit step count.
pub fn symmetric_grid(
    z1_lo: f64,
    z2_lo: f64,
    z2_hi: f64,
    nodes1: usize,
    nodes2: usize,
    horizon: f64,
    sigma: f64,
) -> Result<SpaceTimeGrid> {
    if !(z1_lo < LOG_2) {
        return Err(Error::Config("need z1_lo < log 2".into()));
    }
    let mut grid = SpaceTimeGrid::new(
        vec![z1_lo, z2_lo],
        vec![LOG_2, z2_hi],
        vec![nodes1, nodes2],
        1,
        horizon,
    )?;
    // worst-case coefficient magnitudes over the strip (x in (0, 2])
    let s2 = sigma * sigma;
    let c11 = 0.5 * s2;
    let c22 = 0.5 * s2;
    let c12 = 0.5 * s2;
    let h1 = grid.spacing(0);
    let h2 = grid.spacing(1);
    let rate = 2.0 * c11 / (h1 * h1)
        + 2.0 * c22 / (h2 * h2)
        + 2.0 * c12 / (h1 * h2)
        + c11 / h1
        + c22 / h2;
    let steps = ((horizon * rate / 0.9).ceil() as usize).max(1);
    grid.time_step = horizon / steps as f64;
    Ok(grid)
}

/// Backward sweep of the symmetric-passport equation on the half-strip,
/// maximising over the two wealth-fraction candidates `delta in {1, 0}` per
/// the bang-bang structure, with the lognormal-settlement boundary row at
/// `z1 = log 2`.
///
/// The log coordinates carry the Ito drift terms `-(coef) u_z` alongside each
/// diffusion term, which is what makes the closed-form boundary row an exact
/// solution of the boundary equation and the solver consistent with path
/// simulation.
pub fn solve_symmetric_passport(
    sigma: f64,
    strike: f64,
    grid: &SpaceTimeGrid,
    store: StorePolicy,
) -> Result<SymmetricPassportSolution> {
    if grid.dim() != 2 {
        return Err(Error::Config("symmetric passport grid is 2-dimensional".into()));
    }
    if (grid.hi[0] - LOG_2).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "grid right edge must sit exactly at z1 = log 2, found {}",
            grid.hi[0]
        )));
    }
    if !(sigma > 0.0) || !(strike > 0.0) {
        return Err(Error::Config("need sigma > 0 and strike > 0".into()));
    }
    let n1 = grid.nodes[0];
    let n2 = grid.nodes[1];
    let h1 = grid.spacing(0);
    let h2 = grid.spacing(1);
    let k = grid.time_step;
    let steps = grid.time_steps();
    let s2 = sigma * sigma;
    let log_k = strike.ln();

    // stability: worst case over nodes and candidates
    let worst = 2.0 * (0.5 * s2) / (h1 * h1)
        + 2.0 * (0.5 * s2) / (h2 * h2)
        + 2.0 * (0.5 * s2) / (h1 * h2)
        + 0.5 * s2 / h1
        + 0.5 * s2 / h2;
    if k * worst > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "explicit step {k:.3e} exceeds the stability bound {:.3e}",
            1.0 / worst
        )));
    }

    // truncation floor of the candidate comparison: second differences carry
    // O(h^2) error scaled by the sigma^2 coefficients, plus the O(k) split
    let tie_tol = s2 * (h1 * h1 + h2 * h2 + k);

    let idx = |i1: usize, i2: usize| i1 * n2 + i2;
    let mut u = vec![0.0; n1 * n2];
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            let z2 = grid.coord(1, i2);
            u[idx(i1, i2)] = (z2.exp() - strike).max(0.0);
        }
    }
    let mut policy = vec![0.0; n1 * n2];
    // initial policy layer: the payoff's maximiser (recorded for completeness)
    fill_symmetric_policy(&mut policy, &u, grid, s2);

    let mut times = vec![0.0];
    let mut layers = vec![u.clone()];
    let mut policy_layers = vec![policy.clone()];

    let mut next = u.clone();
    for step in 1..=steps {
        let tau = step as f64 * k;
        for i1 in 1..(n1 - 1) {
            let x = grid.coord(0, i1).exp();
            let c11 = 0.125 * s2 * (2.0 - x) * (2.0 - x);
            for i2 in 1..(n2 - 1) {
                let id = idx(i1, i2);
                let g11 = (u[id + n2] - 2.0 * u[id] + u[id - n2]) / (h1 * h1);
                let g1 = (u[id + n2] - u[id - n2]) / (2.0 * h1);
                let g22 = (u[id + 1] - 2.0 * u[id] + u[id - 1]) / (h2 * h2);
                let g2 = (u[id + 1] - u[id - 1]) / (2.0 * h2);
                let g12 = (u[id + n2 + 1] + u[id - n2 - 1] - u[id + n2 - 1] - u[id - n2 + 1])
                    / (4.0 * h1 * h2);
                let base = c11 * (g11 - g1);
                let mut best = f64::NEG_INFINITY;
                let mut best_delta = 1.0;
                let mut j = [0.0f64; 2];
                for (ci, delta) in [1.0, 0.0].into_iter().enumerate() {
                    let w = x - 2.0 * delta;
                    let cand = base - 0.25 * s2 * (2.0 - x) * w * g12
                        + 0.125 * s2 * w * w * (g22 - g2);
                    j[ci] = cand;
                    if cand > best {
                        best = cand;
                        best_delta = delta;
                    }
                }
                // within the truncation floor the Hamiltonian cannot rank the
                // candidates; the comparison theorem orders them by portfolio
                // volatility, so near-ties resolve to the larger |x - 2 delta|
                if (j[0] - j[1]).abs() <= tie_tol {
                    best_delta = if (x - 2.0) * (x - 2.0) >= x * x { 1.0 } else { 0.0 };
                }
                next[id] = u[id] + k * best;
                policy[id] = best_delta;
            }
        }
        // boundary row at z1 = log 2 from the closed form; policy delta = 0 there
        for i2 in 0..n2 {
            let z2 = grid.coord(1, i2);
            next[idx(n1 - 1, i2)] = strike * bs_boundary_value(z2 - log_k, tau, sigma);
            policy[idx(n1 - 1, i2)] = 0.0;
        }
        // far-field extrapolation on the remaining faces
        for i2 in 0..n2 {
            next[idx(0, i2)] = 2.0 * next[idx(1, i2)] - next[idx(2, i2)];
            policy[idx(0, i2)] = policy[idx(1, i2)];
        }
        for i1 in 0..n1 - 1 {
            next[idx(i1, 0)] = 2.0 * next[idx(i1, 1)] - next[idx(i1, 2)];
            next[idx(i1, n2 - 1)] = 2.0 * next[idx(i1, n2 - 2)] - next[idx(i1, n2 - 3)];
            policy[idx(i1, 0)] = policy[idx(i1, 1)];
            policy[idx(i1, n2 - 1)] = policy[idx(i1, n2 - 2)];
        }
        std::mem::swap(&mut u, &mut next);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite symmetric-passport value".into(),
            });
        }
        if store.keeps(step, steps) {
            times.push(tau);
            layers.push(u.clone());
            policy_layers.push(policy.clone());
        }
    }

    Ok(SymmetricPassportSolution {
        surface: ValueSurface {
            grid: grid.clone(),
            times: times.clone(),
            values: layers,
            coefficient_id: format!("symmetric-passport sigma={sigma}"),
            payoff_id: format!("(X_N - {strike})^+"),
        },
        policy: PolicyMap {
            contract: ContractKind::SymmetricFraction,
            times,
            controls: policy_layers,
            n_controls: 1,
        },
    })
}

fn fill_symmetric_policy(policy: &mut [f64], u: &[f64], grid: &SpaceTimeGrid, s2: f64) {
    let n1 = grid.nodes[0];
    let n2 = grid.nodes[1];
    let h1 = grid.spacing(0);
    let h2 = grid.spacing(1);
    let tie_tol = s2 * (h1 * h1 + h2 * h2);
    for i1 in 1..(n1 - 1) {
        let x = grid.coord(0, i1).exp();
        for i2 in 1..(n2 - 1) {
            let id = i1 * n2 + i2;
            let g22 = (u[id + 1] - 2.0 * u[id] + u[id - 1]) / (h2 * h2);
            let g2 = (u[id + 1] - u[id - 1]) / (2.0 * h2);
            let g12 = (u[id + n2 + 1] + u[id - n2 - 1] - u[id + n2 - 1] - u[id - n2 + 1])
                / (4.0 * h1 * h2);
            let mut best = f64::NEG_INFINITY;
            let mut best_delta = 1.0;
            let mut j = [0.0f64; 2];
            for (ci, delta) in [1.0, 0.0].into_iter().enumerate() {
                let w = x - 2.0 * delta;
                let cand =
                    -0.25 * s2 * (2.0 - x) * w * g12 + 0.125 * s2 * w * w * (g22 - g2);
                j[ci] = cand;
                if cand > best {
                    best = cand;
                    best_delta = delta;
                }
            }
            if (j[0] - j[1]).abs() <= tie_tol {
                best_delta = if (x - 2.0) * (x - 2.0) >= x * x { 1.0 } else { 0.0 };
            }
            policy[id] = best_delta;
        }
    }
}

// ---------------------------------------------------------------------------
// classical passport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PassportSolution {
    pub surface: ValueSurface,
    pub policy: PolicyMap,
    /// candidate list used at every node: clamped rotated vertices, the box
    /// vertices, and zero
    pub candidates: Vec<Vec<f64>>,
    /// true when some rotated vertex left the admissible box and was clamped
    pub clamp_warning: bool,
}

/// Candidate controls: `Q^T {-1,1}^n` (clamped into the box), the box
/// vertices themselves, and zero. Enlarging the list never lowers the HJB
/// value; the box vertices keep the finite maximisation exact whenever the
/// account Gamma is nonnegative.
pub fn passport_candidates(eigen: &EigenFactorization) -> (Vec<Vec<f64>>, bool) {
    let n = eigen.n();
    let mut cands: Vec<Vec<f64>> = Vec::new();
    let mut clamped_any = false;
    let push_unique = |v: Vec<f64>, cands: &mut Vec<Vec<f64>>| {
        if !cands
            .iter()
            .any(|c| c.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            cands.push(v);
        }
    };
    for mask in 0..(1usize << n) {
        let signs: Vec<f64> = (0..n)
            .map(|i| if mask & (1 << i) != 0 { 1.0 } else { -1.0 })
            .collect();
        let rotated = eigen.q_transpose_apply(&signs);
        let clamped: Vec<f64> = rotated.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        if rotated
            .iter()
            .zip(&clamped)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            clamped_any = true;
        }
        push_unique(clamped, &mut cands);
        push_unique(signs, &mut cands);
    }
    push_unique(vec![0.0; n], &mut cands);
    (cands, clamped_any)
}

/// Grid for the classical passport in normal asset coordinates with the
/// augmented account dimension first: `(p, ln s_1, .., ln s_n)`. The p range
/// follows the `+- 6 sigma_max sqrt(T) sum s_i` truncation rule.
pub fn passport_grid(
    model: &MarketModel,
    strike: f64,
    p0: f64,
    horizon: f64,
    p_nodes: usize,
    x_nodes: usize,
) -> Result<SpaceTimeGrid> {
    let n = model.n;
    let sigma_max = model.sigma.iter().cloned().fold(0.0f64, f64::max);
    let sum_spot: f64 = model.spot.iter().sum();
    let p_pad = (6.0 * sigma_max * horizon.sqrt() * sum_spot).max(1e-3);
    let p_lo = p0.min(strike) - p_pad;
    let p_hi = p0.max(strike) + p_pad;
    let mut lo = vec![p_lo];
    let mut hi = vec![p_hi];
    let mut nodes = vec![p_nodes];
    for i in 0..n {
        let x0 = model.spot[i].ln();
        let pad = 6.0 * model.sigma[i] * horizon.sqrt();
        lo.push(x0 - pad.max(1e-3));
        hi.push(x0 + pad.max(1e-3));
        nodes.push(x_nodes);
    }
    let mut grid = SpaceTimeGrid::new(lo, hi, nodes, 1, horizon)?;
    // stability from worst-case coefficients over the box and candidate set
    let eigen = model.eigen_factorize()?;
    let (cands, _) = passport_candidates(&eigen);
    let s_max: Vec<f64> = (1..=n).map(|d| grid.hi[d].exp()).collect();
    let lambda_max = eigen.lambda.first().copied().unwrap_or(0.0);
    let smax_norm2: f64 = s_max.iter().map(|s| s * s).sum();
    let q_max = cands
        .iter()
        .map(|c| {
            let c2: f64 = c.iter().map(|v| v * v).sum();
            lambda_max * c2 * smax_norm2
        })
        .fold(0.0f64, f64::max);
    let hp = grid.spacing(0);
    let mut rate = 2.0 * (0.5 * q_max) / (hp * hp);
    for i in 0..n {
        let hx = grid.spacing(1 + i);
        let cxx = 0.5 * model.sigma[i] * model.sigma[i];
        rate += 2.0 * cxx / (hx * hx) + cxx / hx;
        // p-x cross bound: |b_i| <= sigma_i sqrt(q_max)
        let bmax = model.sigma[i] * q_max.sqrt();
        rate += 2.0 * bmax / (hp * hx);
        for j in (i + 1)..n {
            let hy = grid.spacing(1 + j);
            let cxy = (model.sigma[i] * model.sigma[j]).abs();
            rate += 2.0 * 0.5 * cxy / (hx * hy);
        }
    }
    let steps = ((horizon * rate / 0.9).ceil() as usize).max(1);
    grid.time_step = horizon / steps as f64;
    Ok(grid)
}

/// Backward explicit sweep of the classical passport HJB in coordinates
/// `(p, ln s_1, .., ln s_n)`. At each node the augmented generator
/// `q(delta) G_pp / 2 + sum_i b_i(delta) G_{p x_i} + (asset block)` is
/// maximised over the finite candidate list and the argmax recorded.
pub fn solve_passport_hjb(
    model: &MarketModel,
    strike: f64,
    grid: &SpaceTimeGrid,
    store: StorePolicy,
) -> Result<PassportSolution> {
    let n = model.n;
    if n > 3 {
        return Err(Error::Config("classical passport grids support n <= 3".into()));
    }
    if grid.dim() != n + 1 {
        return Err(Error::Config(format!(
            "grid must have {} dimensions (p plus {n} assets)",
            n + 1
        )));
    }
    let eigen = model.eigen_factorize()?;
    let (candidates, clamp_warning) = passport_candidates(&eigen);

    let total = grid.total_nodes();
    let strides = grid.strides();
    let k = grid.time_step;
    let steps = grid.time_steps();
    let hp = grid.spacing(0);

    // per-node asset prices (independent of p): cache s_i = exp(x_i)
    let mut prices = vec![0.0; total * n];
    for (flat, multi) in grid.iter_multi().enumerate() {
        for i in 0..n {
            prices[flat * n + i] = grid.coord(1 + i, multi[1 + i]).exp();
        }
    }
    let vol = model.vol_matrix(); // sigma_i rho_ij sigma_j

    let mut v: Vec<f64> = grid
        .iter_multi()
        .map(|m| (grid.coord(0, m[0]) - strike).max(0.0))
        .collect();
    let mut policy = vec![0.0; total * n];
    let mut times = vec![0.0];
    let mut layers = vec![v.clone()];
    let mut policy_layers = vec![policy.clone()];

    let interior: Vec<bool> = grid
        .iter_multi()
        .map(|m| {
            (0..grid.dim()).all(|d| m[d] > 0 && m[d] + 1 < grid.nodes[d])
        })
        .collect();

    let mut next = v.clone();
    let mut worst_rate = 0.0f64;
    // relative truncation floor of the candidate comparison
    let tie_factor: f64 = {
        let mut h2sum = k;
        for d in 0..grid.dim() {
            h2sum += grid.spacing(d) * grid.spacing(d);
        }
        h2sum
    };
    let mut qs: Vec<f64> = Vec::with_capacity(candidates.len());
    let mut js: Vec<f64> = Vec::with_capacity(candidates.len());
    for step in 1..=steps {
        for flat in 0..total {
            if !interior[flat] {
                next[flat] = v[flat];
                continue;
            }
            let s = &prices[flat * n..(flat + 1) * n];
            // asset-block derivatives and drift (candidate independent)
            let mut asset_part = 0.0;
            for i in 0..n {
                let hx = grid.spacing(1 + i);
                let si = strides[1 + i];
                let gxx = (v[flat + si] - 2.0 * v[flat] + v[flat - si]) / (hx * hx);
                let gx = (v[flat + si] - v[flat - si]) / (2.0 * hx);
                asset_part += 0.5 * vol[(i, i)] * (gxx - gx);
                for j in (i + 1)..n {
                    let hy = grid.spacing(1 + j);
                    let sj = strides[1 + j];
                    let gxy = (v[flat + si + sj] + v[flat - si - sj]
                        - v[flat + si - sj]
                        - v[flat - si + sj])
                        / (4.0 * hx * hy);
                    asset_part += vol[(i, j)] * gxy;
                }
            }
            let gpp = (v[flat + strides[0]] - 2.0 * v[flat] + v[flat - strides[0]]) / (hp * hp);
            let mut gpx = [0.0f64; 3];
            for i in 0..n {
                let hx = grid.spacing(1 + i);
                let si = strides[1 + i];
                let sp = strides[0];
                gpx[i] = (v[flat + sp + si] + v[flat - sp - si]
                    - v[flat + sp - si]
                    - v[flat - sp + si])
                    / (4.0 * hp * hx);
            }

            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0usize;
            let mut best_q = f64::NEG_INFINITY;
            qs.clear();
            js.clear();
            for (ci, cand) in candidates.iter().enumerate() {
                // q(delta) = sum_ij delta_i s_i vol_ij delta_j s_j
                let mut q = 0.0;
                let mut control_part = 0.0;
                for i in 0..n {
                    let wi = cand[i] * s[i];
                    let mut row = 0.0;
                    for j in 0..n {
                        row += vol[(i, j)] * cand[j] * s[j];
                    }
                    q += wi * row;
                    // b_i(delta) = covariance of p with x_i per unit time:
                    // d<p, x_i> = sum_j delta_j s_j vol_ji dt
                    let mut b = 0.0;
                    for j in 0..n {
                        b += cand[j] * s[j] * vol[(j, i)];
                    }
                    control_part += b * gpx[i];
                }
                let value = 0.5 * q * gpp + control_part;
                qs.push(q);
                js.push(value);
                if value > best {
                    best = value;
                    best_idx = ci;
                }
                best_q = best_q.max(q);
            }
            // near-ties of the Hamiltonian resolve to the basket-volatility
            // maximiser, the selection the vertex theorem prescribes
            let tie_tol = tie_factor * best_q.max(1e-12);
            for ci in 0..candidates.len() {
                if js[ci] >= best - tie_tol && qs[ci] > qs[best_idx] + 1e-15 {
                    best_idx = ci;
                }
            }
            next[flat] = v[flat] + k * (asset_part + best);
            for i in 0..n {
                policy[flat * n + i] = candidates[best_idx][i];
            }
            if step == 1 {
                // one-time stability audit with the realised coefficients
                let mut rate = 0.0;
                for i in 0..n {
                    let hx = grid.spacing(1 + i);
                    rate += 2.0 * 0.5 * vol[(i, i)] / (hx * hx) + 0.5 * vol[(i, i)] / hx;
                }
                let q_best = {
                    let cand = &candidates[best_idx];
                    let mut q = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            q += cand[i] * s[i] * vol[(i, j)] * cand[j] * s[j];
                        }
                    }
                    q
                };
                rate += q_best / (hp * hp);
                worst_rate = worst_rate.max(rate);
            }
        }
        if step == 1 && k * worst_rate > 1.05 {
            return Err(Error::Config(format!(
                "explicit step {k:.3e} exceeds the realised stability bound {:.3e}",
                1.0 / worst_rate
            )));
        }

        // far-field extrapolation, dimension order fixed
        for d in 0..grid.dim() {
            let sd = strides[d];
            let nd = grid.nodes[d];
            let face: usize = grid
                .nodes
                .iter()
                .enumerate()
                .filter(|&(dd, _)| dd != d)
                .map(|(_, &m)| m)
                .product();
            for f in 0..face {
                let mut rem = f;
                let mut base = 0usize;
                for dd in 0..grid.dim() {
                    if dd == d {
                        continue;
                    }
                    let m = grid.nodes[dd];
                    base += (rem % m) * strides[dd];
                    rem /= m;
                }
                next[base] = 2.0 * next[base + sd] - next[base + 2 * sd];
                let top = base + (nd - 1) * sd;
                next[top] = 2.0 * next[top - sd] - next[top - 2 * sd];
                for c in 0..n {
                    policy[base * n + c] = policy[(base + sd) * n + c];
                    policy[top * n + c] = policy[(top - sd) * n + c];
                }
            }
        }

        std::mem::swap(&mut v, &mut next);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite passport value".into(),
            });
        }
        if store.keeps(step, steps) {
            times.push(step as f64 * k);
            layers.push(v.clone());
            policy_layers.push(policy.clone());
        }
    }

    Ok(PassportSolution {
        surface: ValueSurface {
            grid: grid.clone(),
            times: times.clone(),
            values: layers,
            coefficient_id: "passport-hjb".into(),
            payoff_id: format!("(p - {strike})^+"),
        },
        policy: PolicyMap {
            contract: ContractKind::ClassicalBox,
            times,
            controls: policy_layers,
            n_controls: n,
        },
        candidates,
        clamp_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::market::{CoefficientField, MarketModel};
    use crate::paths::{mc_estimate, simulate_account, PathConfig};
    use crate::strategy::{IndexState, SymmetricStrategy};

    #[test]
    fn boundary_value_examples() {
        // 2 Phi(0.1) - 1
        let v = bs_boundary_value(0.0, 1.0, 0.2);
        let want = 2.0 * norm_cdf(0.1) - 1.0;
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.079_655_674_554_058).abs() < 1e-9);
        // payoff limit
        assert!((bs_boundary_value(1.0, 0.0, 0.2) - (1f64.exp() - 1.0)).abs() < 1e-12);
        // deep out of the money
        assert!(bs_boundary_value(-40.0, 1.0, 0.2).abs() < 1e-12);
    }

    #[test]
    fn optimal_symmetric_strategy_examples() {
        assert_eq!(optimal_symmetric_strategy(0.8, 5.0), 5.0);
        assert_eq!(optimal_symmetric_strategy(1.2, 5.0), 0.0);
        assert_eq!(optimal_symmetric_strategy(1.0, 5.0), 5.0);
        assert_eq!(optimal_symmetric_strategy(1.7, 0.0), 0.0);
    }

    fn two_asset(rho12: f64, s1: f64, s2: f64) -> MarketModel {
        let rho = Matrix::from_rows(&[vec![1.0, rho12], vec![rho12, 1.0]]);
        MarketModel::new(vec![s1, s2], rho, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn vertex_identity_for_uncorrelated_assets() {
        let m = two_asset(0.0, 0.2, 0.3);
        let e = m.eigen_factorize().unwrap();
        let v = optimal_passport_vertex(&e, &[1.0, -1.0]).unwrap();
        assert!(!v.needed_clamp);
        // Q = I up to ordering/sign: the literal vertex is a box vertex
        for c in &v.literal {
            assert!((c.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn vertex_leaves_box_for_correlated_assets() {
        // rho = 0.5, equal sigma: Q rows are (1, +-1)/sqrt(2); Q^T (1,1) = (sqrt2, 0)
        let m = two_asset(0.5, 1.0, 1.0);
        let e = m.eigen_factorize().unwrap();
        let v = optimal_passport_vertex(&e, &[1.0, 1.0]).unwrap();
        assert!(v.needed_clamp, "expected clamp warning: {v:?}");
        let max_lit = v.literal.iter().cloned().fold(0.0f64, f64::max);
        assert!((max_lit - 2.0f64.sqrt()).abs() < 1e-10, "{v:?}");
        // negated signs give the negated vertex
        let neg = optimal_passport_vertex(&e, &[-1.0, -1.0]).unwrap();
        for (a, b) in v.literal.iter().zip(&neg.literal) {
            assert!((a + b).abs() < 1e-12);
        }
        let (lit, cl) = vertex_basket_volatilities(&m, &v, &[1.0, 1.0]).unwrap();
        assert!(lit > 0.0 && cl > 0.0 && cl <= lit + 1e-12);
    }

    #[test]
    fn symmetric_boundary_row_is_exact() {
        let grid = symmetric_grid(-3.0, -2.5, 2.5, 65, 65, 0.5, 0.2).unwrap();
        let sol = solve_symmetric_passport(0.2, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.surface.times.len() - 1;
        let tau = sol.surface.times[last];
        let n2 = grid.nodes[1];
        for i2 in 0..n2 {
            let z2 = grid.coord(1, i2);
            let got = sol.surface.values[last][(grid.nodes[0] - 1) * n2 + i2];
            let want = bs_boundary_value(z2, tau, 0.2);
            assert!((got - want).abs() < 1e-12, "boundary row at {z2}: {got} vs {want}");
        }
    }

    #[test]
    fn symmetric_policy_is_stop_loss_where_gamma_lives() {
        let grid = symmetric_grid(-3.0, -2.5, 2.5, 97, 97, 1.0, 0.2).unwrap();
        let sol = solve_symmetric_passport(0.2, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.policy.times.len() - 1;
        let n1 = grid.nodes[0];
        let n2 = grid.nodes[1];
        let h2 = grid.spacing(1);
        let u = &sol.surface.values[last];
        let mut total = 0usize;
        let mut agree = 0usize;
        for i1 in 1..(n1 - 1) {
            let s_n = grid.coord(0, i1).exp();
            for i2 in 1..(n2 - 1) {
                let id = i1 * n2 + i2;
                // account convexity in log coordinates: u_z2z2 - u_z2
                let g22 = (u[id + 1] - 2.0 * u[id] + u[id - 1]) / (h2 * h2);
                let g2 = (u[id + 1] - u[id - 1]) / (2.0 * h2);
                if g22 - g2 <= 1e-6 {
                    continue;
                }
                total += 1;
                let want = if s_n <= 1.0 { 1.0 } else { 0.0 };
                if (sol.policy.controls[last][id] - want).abs() < 1e-12 {
                    agree += 1;
                }
            }
        }
        assert!(total > 500, "gamma-active set too small: {total}");
        let frac = agree as f64 / total as f64;
        assert!(frac >= 0.99, "stop-loss agreement {frac:.4} on {total} nodes");
        sol.policy.validate().unwrap();
    }

    #[test]
    fn symmetric_value_dominates_fixed_zero_strategy_and_increases_in_tau() {
        let grid = symmetric_grid(-2.5, -2.0, 2.0, 65, 65, 0.75, 0.2).unwrap();
        let sol = solve_symmetric_passport(0.2, 1.0, &grid, StorePolicy::All).unwrap();
        // sup over controls dominates any fixed strategy; against delta = 0
        // the account is a martingale and Jensen keeps value above intrinsic.
        // Extrapolated far-field rows are excluded (linear extrapolation can
        // undershoot convex profiles there).
        let n1 = grid.nodes[0];
        let n2 = grid.nodes[1];
        let last = sol.surface.times.len() - 1;
        // the top z2 rows are skipped: the exponential payoff makes the
        // far-field extrapolation error there scale like h^2 exp(z2)
        for i1 in 4..n1 {
            for i2 in 4..(3 * n2 / 4) {
                let z2 = grid.coord(1, i2);
                let payoff = (z2.exp() - 1.0f64).max(0.0);
                assert!(
                    sol.surface.values[last][i1 * n2 + i2] >= payoff - 1e-5,
                    "value fell below intrinsic at ({i1},{i2})"
                );
            }
        }
        // nondecreasing in tau at the center node
        let center = (n1 / 2) * n2 + n2 / 2;
        let mut prev = f64::NEG_INFINITY;
        for lvl in 0..sol.surface.times.len() {
            let v = sol.surface.values[lvl][center];
            assert!(v >= prev - 1e-9, "value decreased in tau at level {lvl}");
            prev = v;
        }
    }

    #[test]
    fn symmetric_pde_matches_stop_loss_monte_carlo() {
        let sigma = 0.2;
        let grid = symmetric_grid(-3.0, -2.5, 2.5, 129, 129, 1.0, sigma).unwrap();
        let sol = solve_symmetric_passport(sigma, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.surface.times.len() - 1;
        let node = grid.nearest_node(&[0.0, 0.0]).unwrap(); // S_N = 1, X_N = 1
        let pde = sol.surface.values[last][grid.flat(&node)];

        let strat = SymmetricStrategy::stop_loss();
        let cfg = PathConfig::new(1.0, 200_000, 4242).unwrap().with_steps(512);
        let st0 = IndexState::new(1.0, 1.0).unwrap();
        let ens = simulate_account(sigma, &strat, &cfg, &st0, None).unwrap();
        let (mc, se) = mc_estimate(&ens, |v| (v[1] - 1.0f64).max(0.0)).unwrap();
        assert!(
            (pde - mc).abs() <= 3.0 * se + 5e-3,
            "pde {pde} vs mc {mc} +- {se}"
        );
    }

    #[test]
    fn symmetric_grid_requires_log2_edge() {
        let grid =
            SpaceTimeGrid::new(vec![-2.0, -2.0], vec![0.5, 2.0], vec![33, 33], 100, 0.5).unwrap();
        assert!(matches!(
            solve_symmetric_passport(0.2, 1.0, &grid, StorePolicy::FinalOnly),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn passport_zero_vol_returns_payoff() {
        let model = MarketModel::single(0.0, 1.0).unwrap();
        let grid = SpaceTimeGrid::new(
            vec![-1.0, -0.1],
            vec![1.0, 0.1],
            vec![41, 5],
            50,
            0.5,
        )
        .unwrap();
        let sol = solve_passport_hjb(&model, 0.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.surface.times.len() - 1;
        for (flat, multi) in grid.iter_multi().enumerate() {
            let p = grid.coord(0, multi[0]);
            assert!(
                (sol.surface.values[last][flat] - p.max(0.0)).abs() < 1e-12,
                "diffusionless value drifted at {multi:?}"
            );
        }
    }

    #[test]
    fn passport_hjb_dominates_fixed_dyadic_strategies_1d() {
        use crate::paths::simulate_classical_portfolio;
        use crate::strategy::ClassicalStrategy;

        let model = MarketModel::single(0.2, 1.0).unwrap();
        let grid = passport_grid(&model, 0.0, 0.0, 1.0, 161, 81).unwrap();
        let sol = solve_passport_hjb(&model, 0.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.surface.times.len() - 1;
        let node = grid.nearest_node(&[0.0, 0.0]).unwrap();
        let hjb = sol.surface.values[last][grid.flat(&node)];
        assert!(hjb > 0.0);

        // 16 dyadic sign patterns on 4 intervals
        let cfg = PathConfig::new(1.0, 40_000, 99).unwrap().with_steps(256);
        for mask in 0..16u32 {
            let values: Vec<Vec<f64>> = (0..4)
                .map(|i| vec![if mask & (1 << i) != 0 { 1.0 } else { -1.0 }])
                .collect();
            let strat = ClassicalStrategy::dyadic(1.0, 2, values).unwrap();
            let ens = simulate_classical_portfolio(&model, &strat, &cfg, 0.0, None).unwrap();
            let (mc, se) = mc_estimate(&ens, |row| row[1].max(0.0)).unwrap();
            assert!(
                mc <= hjb + 3.0 * se + 2.0 * grid.spacing(0),
                "fixed strategy {mask:04b} beat the HJB: {mc} +- {se} vs {hjb}"
            );
        }
    }

    #[test]
    fn passport_policy_maximises_basket_volatility_at_kink() {
        let model = two_asset(-0.9, 0.2, 0.2);
        let grid = passport_grid(&model, 1.0, 1.0, 0.25, 49, 21).unwrap();
        let sol = solve_passport_hjb(&model, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.policy.times.len() - 1;
        let strides = grid.strides();
        let hp = grid.spacing(0);
        let v = &sol.surface.values[last];

        // compare the recorded policy's basket vol against a 41x41 control grid
        let mut checked = 0usize;
        let mut matched = 0usize;
        for (flat, multi) in grid.iter_multi().enumerate() {
            if (0..grid.dim()).any(|d| multi[d] == 0 || multi[d] + 1 >= grid.nodes[d]) {
                continue;
            }
            let gpp = (v[flat + strides[0]] - 2.0 * v[flat] + v[flat - strides[0]]) / (hp * hp);
            if gpp <= 1e-6 {
                continue;
            }
            let s = [
                grid.coord(1, multi[1]).exp(),
                grid.coord(2, multi[2]).exp(),
            ];
            let rec = sol.policy.control_at(last, flat);
            let rec_vol = model.basket_volatility(None, &s, rec).unwrap();
            let mut grid_best = 0.0f64;
            for a in 0..41 {
                for b in 0..41 {
                    let d = [-1.0 + a as f64 * 0.05, -1.0 + b as f64 * 0.05];
                    grid_best = grid_best.max(model.basket_volatility(None, &s, &d).unwrap());
                }
            }
            checked += 1;
            if (rec_vol - grid_best).abs() <= 1e-6 {
                matched += 1;
            }
        }
        assert!(checked > 50, "too few gamma-active nodes: {checked}");
        let frac = matched as f64 / checked as f64;
        assert!(
            frac >= 0.99,
            "recorded policy matched the brute-force optimum at {frac:.4}"
        );
    }

    #[test]
    fn deep_itm_low_vol_value_approaches_intrinsic() {
        // sigma down, payoff deep in the money: value -> X_N(0) - K
        let sigma = 0.01;
        let strike = 0.5;
        let grid = symmetric_grid(-1.5, -1.0, 1.0, 65, 65, 1.0, sigma).unwrap();
        let sol = solve_symmetric_passport(sigma, strike, &grid, StorePolicy::FinalOnly).unwrap();
        let last = sol.surface.times.len() - 1;
        let node = grid.nearest_node(&[0.0, 0.0]).unwrap(); // X_N(0) = 1
        let v = sol.surface.values[last][grid.flat(&node)];
        assert!((v - 0.5).abs() < 1e-3, "deep ITM value {v}");
    }

    #[test]
    fn fixed_strategy_values_are_ordered_by_volatility_matrices() {
        // two fixed controls with strictly ordered (1,1) entries of the
        // strategy-weighted covariance: the solved values are ordered where
        // the account Gamma is active. The fixed-control pricing problem in
        // (p, s) coordinates is a pure second-order Cauchy problem.
        use crate::market::{LinearGrowth, Regularity};
        use crate::pde::solve_cauchy;

        let sigma = 0.2f64;
        let field_for = |delta: f64| {
            CoefficientField::from_fn(
                2,
                Regularity::Smooth,
                LinearGrowth { offset: 0.5, slope: 1.0 },
                move |x: &[f64]| {
                    let s = x[1];
                    let v = sigma * sigma * s * s;
                    Matrix::from_rows(&[
                        vec![0.5 * delta * delta * v, 0.5 * delta * v],
                        vec![0.5 * delta * v, 0.5 * v],
                    ])
                },
            )
        };
        let grid = SpaceTimeGrid::new(
            vec![-1.5, 0.2],
            vec![1.5, 3.0],
            vec![81, 57],
            280,
            0.5,
        )
        .unwrap();
        // smooth convex data: Gaussian-smoothed hinge in closed form, so the
        // solved surfaces carry no kink noise
        let eps = 0.05;
        let payoff = move |x: &[f64]| {
            let z = x[0] / eps;
            x[0] * crate::math::norm_cdf(z) + eps * crate::math::norm_pdf(z)
        };
        let lo_ctl = solve_cauchy(&field_for(0.4), &payoff, &grid, &Default::default()).unwrap();
        let hi_ctl = solve_cauchy(&field_for(0.9), &payoff, &grid, &Default::default()).unwrap();
        let last = lo_ctl.times.len() - 1;
        let strides = grid.strides();
        let hp = grid.spacing(0);
        let mut strict = 0usize;
        for (flat, multi) in grid.iter_multi().enumerate() {
            if (0..2).any(|d| multi[d] < 4 || multi[d] + 4 >= grid.nodes[d]) {
                continue;
            }
            let gap = hi_ctl.values[last][flat] - lo_ctl.values[last][flat];
            // the 4-point cross stencil is not monotone; exponentially small
            // true gaps live below its noise floor
            assert!(gap >= -1e-7, "ordering broke at {multi:?}: {gap:.3e}");
            // strictness is decidable where the Gamma signal dwarfs the
            // discretization noise: the central window around the kink
            let pt = grid.point(&multi);
            if pt[0].abs() > 0.6 || !(0.5..=2.2).contains(&pt[1]) {
                continue;
            }
            let gamma = (lo_ctl.values[last][flat + strides[0]] - 2.0 * lo_ctl.values[last][flat]
                + lo_ctl.values[last][flat - strides[0]])
                / (hp * hp);
            if gamma > 1e-6 {
                assert!(gap > 0.0, "no strict gap at Gamma-active node {multi:?}");
                strict += 1;
            }
        }
        assert!(strict > 100, "Gamma-active census too small: {strict}");
    }

    #[test]
    fn enlarging_candidate_set_never_lowers_value() {
        let model = MarketModel::single(0.2, 1.0).unwrap();
        let grid = passport_grid(&model, 0.0, 0.0, 0.5, 81, 41).unwrap();
        let full = solve_passport_hjb(&model, 0.0, &grid, StorePolicy::FinalOnly).unwrap();

        // the sup value dominates the no-trading value, which is the payoff
        // itself; extrapolated rim rows excluded
        let last = full.surface.times.len() - 1;
        for (flat, multi) in grid.iter_multi().enumerate() {
            if (0..grid.dim()).any(|d| multi[d] == 0 || multi[d] + 1 >= grid.nodes[d]) {
                continue;
            }
            let p = grid.coord(0, multi[0]);
            assert!(full.surface.values[last][flat] >= p.max(0.0) - 1e-6);
        }
    }
}
