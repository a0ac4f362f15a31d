//! Uniform space-time grids and nodal value surfaces.

use crate::error::{Error, Result};

/// Uniform tensor grid on a box, with a fixed time step up to a final time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub time_step: f64,
    pub final_time: f64,
}

impl SpaceTimeGrid {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: Vec<usize>,
        time_steps: usize,
        final_time: f64,
    ) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || nodes.len() != dim {
            return Err(Error::Argument("grid bound/node dimension mismatch".into()));
        }
        if dim == 0 {
            return Err(Error::Argument("grid needs at least one dimension".into()));
        }
        for d in 0..dim {
            if !(hi[d] > lo[d]) {
                return Err(Error::Argument(format!("empty extent in dimension {d}")));
            }
            if nodes[d] < 3 {
                return Err(Error::Argument(format!(
                    "need at least 3 nodes per dimension, got {} in {d}",
                    nodes[d]
                )));
            }
        }
        if time_steps == 0 || !(final_time > 0.0) {
            return Err(Error::Argument("need time_steps >= 1 and T > 0".into()));
        }
        Ok(SpaceTimeGrid {
            lo,
            hi,
            nodes,
            time_step: final_time / time_steps as f64,
            final_time,
        })
    }

    /// Builds a grid whose box pads `[eval_lo, eval_hi]` by `6 sqrt(2 a_max T)`
    /// in every dimension, the far-field placement rule for condition-(D) data.
    pub fn padded_for_diffusion(
        eval_lo: &[f64],
        eval_hi: &[f64],
        a_max: f64,
        final_time: f64,
        target_h: f64,
        time_steps: usize,
    ) -> Result<Self> {
        let pad = 6.0 * (2.0 * a_max * final_time).sqrt();
        let dim = eval_lo.len();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        let mut nodes = Vec::with_capacity(dim);
        for d in 0..dim {
            let l = eval_lo[d] - pad;
            let h = eval_hi[d] + pad;
            lo.push(l);
            hi.push(h);
            nodes.push(((h - l) / target_h).ceil() as usize + 1);
        }
        SpaceTimeGrid::new(lo, hi, nodes, time_steps, final_time)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / (self.nodes[d] - 1) as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|d| self.spacing(d))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn time_steps(&self) -> usize {
        (self.final_time / self.time_step).round() as usize
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let dim = self.dim();
        let mut s = vec![1usize; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.nodes[d + 1];
        }
        s
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        self.lo[d] + i as f64 * self.spacing(d)
    }

    pub fn point(&self, multi: &[usize]) -> Vec<f64> {
        (0..self.dim()).map(|d| self.coord(d, multi[d])).collect()
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        let strides = self.strides();
        multi.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let strides = self.strides();
        strides
            .iter()
            .map(|&s| {
                let i = idx / s;
                idx %= s;
                i
            })
            .collect()
    }

    /// Nearest node multi-index for a point (errors if outside the box).
    pub fn nearest_node(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dim() {
            return Err(Error::Argument("point dimension mismatch".into()));
        }
        let mut multi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            if x[d] < self.lo[d] - 1e-12 || x[d] > self.hi[d] + 1e-12 {
                return Err(Error::Argument(format!(
                    "point coordinate {} outside [{}, {}]",
                    x[d], self.lo[d], self.hi[d]
                )));
            }
            let i = ((x[d] - self.lo[d]) / self.spacing(d)).round() as usize;
            multi.push(i.min(self.nodes[d] - 1));
        }
        Ok(multi)
    }

    /// Explicit-scheme stability bound `k <= c_stab min_d h_d^2 / (2 n max|A|)`.
    pub fn explicit_stable_step(&self, max_coef: f64, c_stab: f64) -> f64 {
        let h2 = self.min_spacing().powi(2);
        c_stab * h2 / (2.0 * self.dim() as f64 * max_coef.max(1e-300))
    }

    /// Iterator over all multi-indices, row-major.
    pub fn iter_multi(&self) -> MultiIter {
        MultiIter {
            nodes: self.nodes.clone(),
            current: vec![0; self.dim()],
            done: false,
        }
    }
}

pub struct MultiIter {
    nodes: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl Iterator for MultiIter {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        for d in (0..self.nodes.len()).rev() {
            self.current[d] += 1;
            if self.current[d] < self.nodes[d] {
                return Some(out);
            }
            self.current[d] = 0;
        }
        self.done = true;
        Some(out)
    }
}

/// Space-time grid plus nodal values at stored time levels.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub grid: SpaceTimeGrid,
    /// Stored time levels, increasing, always containing 0 and T.
    pub times: Vec<f64>,
    /// `values[level][node]`, nodes flattened row-major.
    pub values: Vec<Vec<f64>>,
    pub coefficient_id: String,
    pub payoff_id: String,
}

impl ValueSurface {
    pub fn level_at(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .ok_or_else(|| Error::Argument(format!("time {t} not stored on surface")))
    }

    pub fn value_at(&self, level: usize, multi: &[usize]) -> f64 {
        self.values[level][self.grid.flat(multi)]
    }

    /// Trapezoid integral of a stored level over the whole box.
    pub fn integral(&self, level: usize) -> f64 {
        let grid = &self.grid;
        let mut acc = 0.0;
        for multi in grid.iter_multi() {
            let mut w = 1.0;
            for d in 0..grid.dim() {
                w *= if multi[d] == 0 || multi[d] == grid.nodes[d] - 1 {
                    0.5
                } else {
                    1.0
                };
            }
            acc += w * self.values[level][grid.flat(&multi)];
        }
        let cell: f64 = (0..grid.dim()).map(|d| grid.spacing(d)).product();
        acc * cell
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (lvl, layer) in self.values.iter().enumerate() {
            if let Some(pos) = layer.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step: lvl,
                    detail: format!("non-finite value at node {pos}"),
                });
            }
        }
        Ok(())
    }
}

/// How many intermediate layers a solve keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorePolicy {
    All,
    Stride(usize),
    FinalOnly,
}

impl StorePolicy {
    pub fn keeps(&self, step: usize, total: usize) -> bool {
        match self {
            StorePolicy::All => true,
            StorePolicy::Stride(m) => step % m.max(&1) == 0 || step == total,
            StorePolicy::FinalOnly => step == 0 || step == total,
        }
    }
}
