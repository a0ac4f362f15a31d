//! Monte Carlo engines: correlated lognormal assets, the index-numeraire
//! processes M_N / S_N, the self-financing account X_N, and classical
//! passport portfolios, with ensemble statistics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, Matrix};
use crate::market::MarketModel;
use crate::rng::CounterRng;
use crate::strategy::{ClassicalStrategy, IndexState, SymmetricStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScheme {
    Euler,
    /// Exact lognormal step `S exp(-sigma^2 k / 2 + sigma sqrt(k) Z)`.
    LogEuler,
}

#[derive(Debug, Clone, Copy)]
pub struct PathConfig {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub scheme: StepScheme,
    pub antithetic: bool,
}

impl PathConfig {
    /// Default 512 steps per year, log-euler stepping.
    pub fn new(horizon: f64, paths: usize, seed: u64) -> Result<Self> {
        if !(horizon > 0.0) || paths == 0 {
            return Err(Error::Argument("need horizon > 0 and paths >= 1".into()));
        }
        Ok(PathConfig {
            horizon,
            steps: ((512.0 * horizon).ceil() as usize).max(1),
            paths,
            seed,
            scheme: StepScheme::LogEuler,
            antithetic: false,
        })
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps.max(1);
        self
    }

    pub fn with_scheme(mut self, scheme: StepScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || self.steps == 0 || self.paths == 0 {
            return Err(Error::Argument(
                "path config needs T > 0, steps >= 1, paths >= 1".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn draw(&self, rng: &CounterRng, path: usize, step: usize, lane: usize) -> f64 {
        if self.antithetic {
            let z = rng.standard_normal((path / 2) as u64, step as u64, lane as u64);
            if path % 2 == 1 {
                -z
            } else {
                z
            }
        } else {
            rng.standard_normal(path as u64, step as u64, lane as u64)
        }
    }
}

/// Path values sampled at checkpoint times.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub n_vars: usize,
    pub paths: usize,
    /// `values[checkpoint][path * n_vars + var]`
    pub values: Vec<Vec<f64>>,
}

impl PathEnsemble {
    fn allocate(times: Vec<f64>, n_vars: usize, paths: usize) -> Self {
        let layers = times.len();
        PathEnsemble {
            times,
            n_vars,
            paths,
            values: vec![vec![0.0; paths * n_vars]; layers],
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("ensemble has a terminal layer")
    }

    pub fn path_at(&self, checkpoint: usize, path: usize) -> &[f64] {
        &self.values[checkpoint][path * self.n_vars..(path + 1) * self.n_vars]
    }
}

fn checkpoint_steps(cfg: &PathConfig, requested: Option<&[usize]>) -> Result<Vec<usize>> {
    let mut cps = match requested {
        Some(r) => {
            let mut v = r.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => vec![0, cfg.steps],
    };
    if cps.is_empty() {
        cps = vec![0, cfg.steps];
    }
    if *cps.last().unwrap() != cfg.steps {
        cps.push(cfg.steps);
    }
    if cps[0] != 0 {
        cps.insert(0, 0);
    }
    if cps.iter().any(|&c| c > cfg.steps) {
        return Err(Error::Argument("checkpoint beyond final step".into()));
    }
    Ok(cps)
}

/// Wraps the per-path loop: paths are processed in fixed-size chunks and every
/// path writes only its own slots, so rayon scheduling cannot change results.
fn for_each_path<F>(paths: usize, layers: &mut [Vec<f64>], n_vars: usize, body: F)
where
    F: Fn(usize, &mut dyn FnMut(usize, usize, f64)) + Sync,
{
    const CHUNK: usize = 2048;
    let n_chunks = paths.div_ceil(CHUNK);
    let mut per_chunk: Vec<Vec<&mut [f64]>> = (0..n_chunks).map(|_| Vec::new()).collect();
    for layer in layers.iter_mut() {
        for (ci, chunk) in layer.chunks_mut(CHUNK * n_vars).enumerate() {
            per_chunk[ci].push(chunk);
        }
    }
    per_chunk
        .into_par_iter()
        .enumerate()
        .for_each(|(ci, mut slots)| {
            let base = ci * CHUNK;
            for local in 0..CHUNK.min(paths - base) {
                let path = base + local;
                let mut write = |cp: usize, var: usize, value: f64| {
                    slots[cp][local * n_vars + var] = value;
                };
                body(path, &mut write);
            }
        });
}

/// Correlated lognormal asset paths `dS_i = sigma_i S_i dW_i`.
pub fn simulate_gbm(
    model: &MarketModel,
    cfg: &PathConfig,
    checkpoints: Option<&[usize]>,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let cps = checkpoint_steps(cfg, checkpoints)?;
    let chol = cholesky_psd(&model.rho, 1e-12)?;
    let rng = CounterRng::new(cfg.seed);
    let n = model.n;
    let k = cfg.dt();
    let sqrt_k = k.sqrt();
    let times: Vec<f64> = cps.iter().map(|&c| c as f64 * k).collect();
    let mut ens = PathEnsemble::allocate(times, n, cfg.paths);

    let cps_ref = &cps;
    let chol_ref = &chol;
    for_each_path(cfg.paths, &mut ens.values, n, |path, write| {
        let mut s = model.spot.clone();
        let mut z = vec![0.0; n];
        let mut corr = vec![0.0; n];
        let mut cp_cursor = 0usize;
        if cps_ref[0] == 0 {
            for (v, &sv) in s.iter().enumerate() {
                write(0, v, sv);
            }
            cp_cursor = 1;
        }
        for step in 0..cfg.steps {
            for (lane, zi) in z.iter_mut().enumerate() {
                *zi = cfg.draw(&rng, path, step, lane);
            }
            correlate(chol_ref, &z, &mut corr);
            for i in 0..n {
                let sig = model.sigma[i];
                match cfg.scheme {
                    StepScheme::LogEuler => {
                        s[i] *= (-0.5 * sig * sig * k + sig * sqrt_k * corr[i]).exp();
                    }
                    StepScheme::Euler => {
                        s[i] += sig * s[i] * sqrt_k * corr[i];
                        s[i] = s[i].max(0.0);
                    }
                }
            }
            if cp_cursor < cps_ref.len() && cps_ref[cp_cursor] == step + 1 {
                for (v, &sv) in s.iter().enumerate() {
                    write(cp_cursor, v, sv);
                }
                cp_cursor += 1;
            }
        }
    });
    Ok(ens)
}

#[inline]
fn correlate(chol: &Matrix, z: &[f64], out: &mut [f64]) {
    let n = z.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[(i, j)] * z[j];
        }
        out[i] = acc;
    }
}

/// Index-numeraire price `dM_N = sigma M_N (2 - M_N) dW^N / 2`, Euler-stepped
/// with clamping to `[0, 2]`; the endpoints are absorbing. Emits `M_N`.
pub fn simulate_index_state(
    sigma: f64,
    cfg: &PathConfig,
    m0: f64,
    checkpoints: Option<&[usize]>,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    if !(0.0..=2.0).contains(&m0) {
        return Err(Error::Argument(format!("m0 = {m0} outside [0, 2]")));
    }
    let cps = checkpoint_steps(cfg, checkpoints)?;
    let rng = CounterRng::new(cfg.seed);
    let k = cfg.dt();
    let sqrt_k = k.sqrt();
    let times: Vec<f64> = cps.iter().map(|&c| c as f64 * k).collect();
    let mut ens = PathEnsemble::allocate(times, 1, cfg.paths);

    let cps_ref = &cps;
    for_each_path(cfg.paths, &mut ens.values, 1, |path, write| {
        let mut m = m0;
        let mut cp_cursor = 0usize;
        if cps_ref[0] == 0 {
            write(0, 0, m);
            cp_cursor = 1;
        }
        for step in 0..cfg.steps {
            let z = cfg.draw(&rng, path, step, 0);
            m += 0.5 * sigma * m * (2.0 - m) * sqrt_k * z;
            m = m.clamp(0.0, 2.0);
            if cp_cursor < cps_ref.len() && cps_ref[cp_cursor] == step + 1 {
                write(cp_cursor, 0, m);
                cp_cursor += 1;
            }
        }
    });
    Ok(ens)
}

/// Joint simulation of `(M_N, X_N)` under a symmetric-passport strategy with
/// shared driving increments: `dX_N = (X_N - 2 Delta^S) sigma S_N dW^N / 2`.
/// Emits variables `[M_N, X_N]`. Zero wealth absorbs.
pub fn simulate_account(
    sigma: f64,
    strategy: &SymmetricStrategy,
    cfg: &PathConfig,
    state0: &IndexState,
    checkpoints: Option<&[usize]>,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let cps = checkpoint_steps(cfg, checkpoints)?;
    let rng = CounterRng::new(cfg.seed);
    let k = cfg.dt();
    let sqrt_k = k.sqrt();
    let times: Vec<f64> = cps.iter().map(|&c| c as f64 * k).collect();
    let mut ens = PathEnsemble::allocate(times, 2, cfg.paths);

    let cps_ref = &cps;
    let infeasible = std::sync::atomic::AtomicUsize::new(usize::MAX);
    for_each_path(cfg.paths, &mut ens.values, 2, |path, write| {
        let mut m = state0.m_n();
        let mut x = state0.x_n();
        let mut cp_cursor = 0usize;
        if cps_ref[0] == 0 {
            write(0, 0, m);
            write(0, 1, x);
            cp_cursor = 1;
        }
        for step in 0..cfg.steps {
            let t = step as f64 * k;
            let s_n = 2.0 - m;
            let state = IndexState::new(m, x).expect("state stays in range");
            let units = strategy.units_of_s(t, &state);
            let value_in_s = units * s_n;
            if value_in_s < -1e-9 * (1.0 + x) || value_in_s > x * (1.0 + 1e-9) + 1e-12 {
                infeasible.fetch_min(step, std::sync::atomic::Ordering::SeqCst);
                return;
            }
            let z = cfg.draw(&rng, path, step, 0);
            let dx = 0.5 * sigma * (x * s_n - 2.0 * value_in_s) * sqrt_k * z;
            let dm = 0.5 * sigma * m * s_n * sqrt_k * z;
            x = (x + dx).max(0.0);
            m = (m + dm).clamp(0.0, 2.0);
            if cp_cursor < cps_ref.len() && cps_ref[cp_cursor] == step + 1 {
                write(cp_cursor, 0, m);
                write(cp_cursor, 1, x);
                cp_cursor += 1;
            }
        }
    });
    let bad = infeasible.load(std::sync::atomic::Ordering::SeqCst);
    if bad != usize::MAX {
        return Err(Error::StrategyInfeasible {
            step: bad,
            detail: "Delta^S * S_N outside [0, X_N]".into(),
        });
    }
    Ok(ens)
}

/// Classical passport portfolio `d Pi = sum_i Delta_i dS_i` on shared asset
/// increments. Emits variables `[S_1..S_n, Pi]`.
pub fn simulate_classical_portfolio(
    model: &MarketModel,
    strategy: &ClassicalStrategy,
    cfg: &PathConfig,
    p0: f64,
    checkpoints: Option<&[usize]>,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let cps = checkpoint_steps(cfg, checkpoints)?;
    let chol = cholesky_psd(&model.rho, 1e-12)?;
    let rng = CounterRng::new(cfg.seed);
    let n = model.n;
    let k = cfg.dt();
    let sqrt_k = k.sqrt();
    let times: Vec<f64> = cps.iter().map(|&c| c as f64 * k).collect();
    let mut ens = PathEnsemble::allocate(times, n + 1, cfg.paths);

    let cps_ref = &cps;
    let chol_ref = &chol;
    let infeasible = std::sync::atomic::AtomicUsize::new(usize::MAX);
    for_each_path(cfg.paths, &mut ens.values, n + 1, |path, write| {
        let mut s = model.spot.clone();
        let mut p = p0;
        let mut z = vec![0.0; n];
        let mut corr = vec![0.0; n];
        let mut cp_cursor = 0usize;
        if cps_ref[0] == 0 {
            for (v, &sv) in s.iter().enumerate() {
                write(0, v, sv);
            }
            write(0, n, p);
            cp_cursor = 1;
        }
        for step in 0..cfg.steps {
            let t = step as f64 * k;
            let delta = strategy.control(t, &s, p);
            if delta.len() != n || delta.iter().any(|d| d.abs() > 1.0 + 1e-9) {
                infeasible.fetch_min(step, std::sync::atomic::Ordering::SeqCst);
                return;
            }
            for (lane, zi) in z.iter_mut().enumerate() {
                *zi = cfg.draw(&rng, path, step, lane);
            }
            correlate(chol_ref, &z, &mut corr);
            for i in 0..n {
                let sig = model.sigma[i];
                let s_new = match cfg.scheme {
                    StepScheme::LogEuler => {
                        s[i] * (-0.5 * sig * sig * k + sig * sqrt_k * corr[i]).exp()
                    }
                    StepScheme::Euler => (s[i] + sig * s[i] * sqrt_k * corr[i]).max(0.0),
                };
                p += delta[i] * (s_new - s[i]);
                s[i] = s_new;
            }
            if cp_cursor < cps_ref.len() && cps_ref[cp_cursor] == step + 1 {
                for (v, &sv) in s.iter().enumerate() {
                    write(cp_cursor, v, sv);
                }
                write(cp_cursor, n, p);
                cp_cursor += 1;
            }
        }
    });
    let bad = infeasible.load(std::sync::atomic::Ordering::SeqCst);
    if bad != usize::MAX {
        return Err(Error::StrategyInfeasible {
            step: bad,
            detail: "control left [-1, 1]^n".into(),
        });
    }
    Ok(ens)
}

/// Sample mean and standard error of a payoff over the terminal checkpoint.
pub fn mc_estimate<F>(ensemble: &PathEnsemble, payoff: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    if ensemble.paths == 0 {
        return Err(Error::Argument("empty ensemble".into()));
    }
    let last = ensemble.values.len() - 1;
    let n = ensemble.paths;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for p in 0..n {
        let v = payoff(ensemble.path_at(last, p));
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let var = ((sum2 - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_1d(sigma: f64) -> MarketModel {
        MarketModel::single(sigma, 1.0).unwrap()
    }

    #[test]
    fn zero_vol_is_deterministic() {
        let cfg = PathConfig::new(1.0, 16, 1).unwrap().with_steps(32);
        let ens = simulate_gbm(&model_1d(0.0), &cfg, None).unwrap();
        for p in 0..16 {
            assert_eq!(ens.path_at(1, p)[0], 1.0);
        }
    }

    #[test]
    fn gbm_martingale_property() {
        let cfg = PathConfig::new(1.0, 200_000, 11).unwrap().with_steps(64);
        let ens = simulate_gbm(&model_1d(0.2), &cfg, None).unwrap();
        let (mean, stderr) = mc_estimate(&ens, |s| s[0]).unwrap();
        assert!(
            (mean - 1.0).abs() <= 3.0 * stderr,
            "E S(T) = {mean} +- {stderr}"
        );
    }

    #[test]
    fn perfectly_correlated_assets_share_noise() {
        let rho = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let model = MarketModel::new(vec![0.2, 0.2], rho, vec![1.0, 2.0]).unwrap();
        let cfg = PathConfig::new(1.0, 64, 3).unwrap().with_steps(32);
        let ens = simulate_gbm(&model, &cfg, None).unwrap();
        for p in 0..64 {
            let s = ens.path_at(1, p);
            let r1 = (s[0] / 1.0).ln();
            let r2 = (s[1] / 2.0).ln();
            assert!((r1 - r2).abs() < 1e-12, "paths decoupled: {r1} vs {r2}");
        }
    }

    #[test]
    fn index_state_boundaries_absorb() {
        let cfg = PathConfig::new(1.0, 32, 5).unwrap().with_steps(64);
        for m0 in [0.0, 2.0] {
            let ens = simulate_index_state(0.2, &cfg, m0, None).unwrap();
            for p in 0..32 {
                assert_eq!(ens.path_at(1, p)[0], m0);
            }
        }
    }

    #[test]
    fn index_price_is_martingale() {
        let cfg = PathConfig::new(1.0, 200_000, 17).unwrap().with_steps(128);
        let ens = simulate_index_state(0.2, &cfg, 1.0, None).unwrap();
        let (mean, stderr) = mc_estimate(&ens, |v| v[0]).unwrap();
        assert!(
            (mean - 1.0).abs() <= 3.0 * stderr,
            "E M_N(T) = {mean} +- {stderr}"
        );
    }

    #[test]
    fn account_zero_diffusion_strategy_is_constant() {
        // Delta^S = X_N / 2 units kills the diffusion coefficient
        let strat = SymmetricStrategy::smooth(|_, st| 0.5 * st.x_n());
        let cfg = PathConfig::new(1.0, 32, 9).unwrap().with_steps(64);
        let st0 = IndexState::new(1.0, 1.0).unwrap();
        let ens = simulate_account(0.2, &strat, &cfg, &st0, None).unwrap();
        for p in 0..32 {
            assert!((ens.path_at(1, p)[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn account_is_martingale_under_stop_loss() {
        let strat = SymmetricStrategy::stop_loss();
        let cfg = PathConfig::new(1.0, 200_000, 23).unwrap().with_steps(128);
        let st0 = IndexState::new(1.0, 1.0).unwrap();
        let ens = simulate_account(0.2, &strat, &cfg, &st0, None).unwrap();
        let (mean, stderr) = mc_estimate(&ens, |v| v[1]).unwrap();
        assert!(
            (mean - 1.0).abs() <= 3.0 * stderr,
            "E X_N(T) = {mean} +- {stderr}"
        );
    }

    #[test]
    fn zero_vol_account_pays_intrinsic() {
        let strat = SymmetricStrategy::stop_loss();
        let cfg = PathConfig::new(1.0, 8, 2).unwrap().with_steps(16);
        let st0 = IndexState::new(1.0, 1.3).unwrap();
        let ens = simulate_account(0.0, &strat, &cfg, &st0, None).unwrap();
        let (mean, stderr) = mc_estimate(&ens, |v| (v[1] - 1.0f64).max(0.0)).unwrap();
        assert_eq!(stderr, 0.0);
        assert!((mean - 0.3).abs() < 1e-12);
    }

    #[test]
    fn infeasible_strategy_is_reported_with_step() {
        let strat = SymmetricStrategy::smooth(|_, st| 10.0 * st.x_s());
        let cfg = PathConfig::new(1.0, 4, 2).unwrap().with_steps(8);
        let st0 = IndexState::new(1.0, 1.0).unwrap();
        match simulate_account(0.2, &strat, &cfg, &st0, None) {
            Err(crate::Error::StrategyInfeasible { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn constraint_window_equivalence() {
        // 0 <= Delta^S and 0 <= Delta^M  iff  0 <= Delta^S <= X_S
        for &(units_frac, ok) in &[(-0.2, false), (0.0, true), (0.6, true), (1.0, true), (1.4, false)]
        {
            let st = IndexState::new(0.9, 1.7).unwrap();
            let units = units_frac * st.x_s();
            let delta_m = (st.x_n() - units * st.s_n()) / st.m_n();
            let both_nonneg = units >= 0.0 && delta_m >= 0.0;
            let window = (0.0..=st.x_s()).contains(&units);
            assert_eq!(both_nonneg, window);
            assert_eq!(both_nonneg, ok);
        }
    }

    #[test]
    fn portfolio_zero_strategy_constant() {
        let model = model_1d(0.3);
        let strat = ClassicalStrategy::constant(vec![0.0]);
        let cfg = PathConfig::new(1.0, 16, 4).unwrap().with_steps(32);
        let ens = simulate_classical_portfolio(&model, &strat, &cfg, 0.7, None).unwrap();
        for p in 0..16 {
            assert_eq!(ens.path_at(1, p)[1], 0.7);
        }
    }

    #[test]
    fn portfolio_full_replication() {
        let model = model_1d(0.3);
        let strat = ClassicalStrategy::constant(vec![1.0]);
        let cfg = PathConfig::new(1.0, 64, 4).unwrap().with_steps(32);
        let ens = simulate_classical_portfolio(&model, &strat, &cfg, 0.0, None).unwrap();
        for p in 0..64 {
            let row = ens.path_at(1, p);
            assert!((row[1] - (row[0] - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn portfolio_ito_isometry() {
        // var(Pi_T) ~= E int (sigma1^2 S1^2 + sigma2^2 S2^2) dt for rho = 0
        let model =
            MarketModel::new(vec![0.2, 0.3], Matrix::identity(2), vec![1.0, 1.0]).unwrap();
        let strat = ClassicalStrategy::constant(vec![1.0, 1.0]);
        let cfg = PathConfig::new(1.0, 100_000, 31).unwrap().with_steps(128);
        let cps: Vec<usize> = (0..=128).collect();
        let ens = simulate_classical_portfolio(&model, &strat, &cfg, 0.0, Some(&cps)).unwrap();
        let k = cfg.dt();
        let n_paths = ens.paths;
        // per-path statistic D = (Pi_T - mean)^2 - integral of instantaneous variance
        let last = ens.values.len() - 1;
        let mean_pi: f64 =
            (0..n_paths).map(|p| ens.path_at(last, p)[2]).sum::<f64>() / n_paths as f64;
        let mut dsum = 0.0;
        let mut dsum2 = 0.0;
        for p in 0..n_paths {
            let dev = ens.path_at(last, p)[2] - mean_pi;
            let mut integral = 0.0;
            for cp in 0..last {
                let row = ens.path_at(cp, p);
                integral += (0.04 * row[0] * row[0] + 0.09 * row[1] * row[1]) * k;
            }
            let d = dev * dev - integral;
            dsum += d;
            dsum2 += d * d;
        }
        let mean_d = dsum / n_paths as f64;
        let sd = ((dsum2 - dsum * dsum / n_paths as f64) / (n_paths as f64 - 1.0)).sqrt();
        let stderr = sd / (n_paths as f64).sqrt();
        assert!(
            mean_d.abs() <= 3.0 * stderr + 1e-3,
            "isometry defect {mean_d} +- {stderr}"
        );
    }

    #[test]
    fn mc_estimate_edge_cases() {
        let cfg = PathConfig::new(1.0, 100, 2).unwrap().with_steps(4);
        let ens = simulate_gbm(&model_1d(0.2), &cfg, None).unwrap();
        let (m, se) = mc_estimate(&ens, |_| 1.0).unwrap();
        assert_eq!((m, se), (1.0, 0.0));
        let (m, se) = mc_estimate(&ens, |s| (s[0] - 100.0f64).max(0.0)).unwrap();
        assert_eq!((m, se), (0.0, 0.0));
    }

    #[test]
    fn antithetic_kills_linear_payoff_noise() {
        let model = model_1d(0.2);
        let cfg = PathConfig::new(1.0, 2_000, 8).unwrap().with_steps(16);
        let plain = simulate_gbm(&model, &cfg, None).unwrap();
        let anti = simulate_gbm(&model, &cfg.with_antithetic(true), None).unwrap();
        // payoff linear in the driving noise: log-return plus half-variance
        let payoff = |s: &[f64]| s[0].ln() + 0.5 * 0.04;
        let (_, se_plain) = mc_estimate(&plain, payoff).unwrap();
        // pair-averaged antithetic payoff
        let last = anti.values.len() - 1;
        let mut pair_means = Vec::new();
        for p in (0..anti.paths).step_by(2) {
            pair_means.push(0.5 * (payoff(anti.path_at(last, p)) + payoff(anti.path_at(last, p + 1))));
        }
        let mean: f64 = pair_means.iter().sum::<f64>() / pair_means.len() as f64;
        let var: f64 = pair_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (pair_means.len() as f64 - 1.0);
        let se_anti = (var / pair_means.len() as f64).sqrt();
        assert!(
            se_anti < 1e-12 && se_plain > 1e-4,
            "antithetic stderr {se_anti}, plain {se_plain}"
        );
    }

    #[test]
    fn identical_seed_reproduces_bitwise() {
        let model =
            MarketModel::new(vec![0.2, 0.3], Matrix::identity(2), vec![1.0, 1.0]).unwrap();
        let cfg = PathConfig::new(1.0, 500, 77).unwrap().with_steps(32);
        let a = simulate_gbm(&model, &cfg, None).unwrap();
        let b = simulate_gbm(&model, &cfg, None).unwrap();
        for cp in 0..a.values.len() {
            assert_eq!(a.values[cp], b.values[cp]);
        }
    }
}
