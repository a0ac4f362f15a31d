//! Admissible trading strategies for classical and symmetric passport
//! contracts.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::market::EigenFactorization;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Smooth,
    DyadicPiecewise,
    Vertex,
    StopLoss,
}

type ClassicalFn = dyn Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync;

/// Strategy for the classical passport contract: control values in `[-1,1]^n`
/// as a function of `(t, asset prices, account value)`.
#[derive(Clone)]
pub struct ClassicalStrategy {
    pub kind: StrategyKind,
    eval: Arc<ClassicalFn>,
}

impl std::fmt::Debug for ClassicalStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassicalStrategy").field("kind", &self.kind).finish()
    }
}

impl ClassicalStrategy {
    pub fn smooth<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        ClassicalStrategy {
            kind: StrategyKind::Smooth,
            eval: Arc::new(f),
        }
    }

    pub fn constant(delta: Vec<f64>) -> Self {
        ClassicalStrategy {
            kind: StrategyKind::Smooth,
            eval: Arc::new(move |_, _, _| delta.clone()),
        }
    }

    /// Piecewise-constant in time on the dyadic intervals
    /// `[T i / 2^N, T (i+1) / 2^N]`, one control vector per interval.
    pub fn dyadic(horizon: f64, level: u32, values: Vec<Vec<f64>>) -> Result<Self> {
        let pieces = 1usize << level;
        if values.len() != pieces {
            return Err(Error::Argument(format!(
                "dyadic level {level} needs {pieces} interval values, got {}",
                values.len()
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::Argument("horizon must be positive".into()));
        }
        Ok(ClassicalStrategy {
            kind: StrategyKind::DyadicPiecewise,
            eval: Arc::new(move |t, _, _| {
                let i = ((t / horizon) * pieces as f64).floor() as usize;
                values[i.min(pieces - 1)].clone()
            }),
        })
    }

    /// Constant rotated-vertex strategy `Q^T signs`, `signs in {-1,1}^n`.
    /// Values are kept literal (they may leave the box; see the HJB module
    /// for clamping policy).
    pub fn rotated_vertex(eigen: &EigenFactorization, signs: &[f64]) -> Result<Self> {
        if signs.len() != eigen.n() {
            return Err(Error::Argument("sign vector dimension mismatch".into()));
        }
        if signs.iter().any(|s| (s.abs() - 1.0).abs() > 1e-10) {
            return Err(Error::Argument("vertex signs must be +-1".into()));
        }
        let v = eigen.q_transpose_apply(signs);
        Ok(ClassicalStrategy {
            kind: StrategyKind::Vertex,
            eval: Arc::new(move |_, _, _| v.clone()),
        })
    }

    pub fn control(&self, t: f64, s: &[f64], p: f64) -> Vec<f64> {
        (self.eval)(t, s, p)
    }
}

/// Prices of the two symmetric-passport legs in index numeraire, plus the
/// traded account. `s_n` is derived, keeping `m_n + s_n = 2` exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexState {
    m_n: f64,
    x_n: f64,
}

impl IndexState {
    pub fn new(m_n: f64, x_n: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&m_n) {
            return Err(Error::Argument(format!("m_n = {m_n} outside [0, 2]")));
        }
        if x_n < 0.0 {
            return Err(Error::Argument(format!("x_n = {x_n} negative")));
        }
        Ok(IndexState { m_n, x_n })
    }

    pub fn m_n(&self) -> f64 {
        self.m_n
    }

    pub fn s_n(&self) -> f64 {
        2.0 - self.m_n
    }

    pub fn x_n(&self) -> f64 {
        self.x_n
    }

    /// Account value in S units; infinite when S is worthless.
    pub fn x_s(&self) -> f64 {
        self.x_n / self.s_n().max(1e-300)
    }
}

type SymmetricFn = dyn Fn(f64, &IndexState) -> f64 + Send + Sync;

/// Strategy for the symmetric passport contract: number of S units held,
/// constrained by `0 <= Delta^S * S_N <= X_N`.
#[derive(Clone)]
pub struct SymmetricStrategy {
    pub kind: StrategyKind,
    eval: Arc<SymmetricFn>,
}

impl std::fmt::Debug for SymmetricStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricStrategy").field("kind", &self.kind).finish()
    }
}

impl SymmetricStrategy {
    pub fn smooth<F>(f: F) -> Self
    where
        F: Fn(f64, &IndexState) -> f64 + Send + Sync + 'static,
    {
        SymmetricStrategy {
            kind: StrategyKind::Smooth,
            eval: Arc::new(f),
        }
    }

    /// Full investment in the weaker asset: `Delta^S = X_S I(S_N <= 1)`,
    /// the tie at `S_N = 1` resolved to full investment.
    pub fn stop_loss() -> Self {
        SymmetricStrategy {
            kind: StrategyKind::StopLoss,
            eval: Arc::new(|_, st| if st.s_n() <= 1.0 { st.x_s() } else { 0.0 }),
        }
    }

    /// Everything parked in M.
    pub fn all_money_market() -> Self {
        SymmetricStrategy {
            kind: StrategyKind::Smooth,
            eval: Arc::new(|_, _| 0.0),
        }
    }

    pub fn units_of_s(&self, t: f64, state: &IndexState) -> f64 {
        (self.eval)(t, state)
    }
}
