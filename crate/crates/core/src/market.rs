//! Market primitives: correlated lognormal assets, coefficient fields of pure
//! diffusions, payoffs with growth certificates, mollifiers and cutoffs, and
//! the eigendecomposition used to locate vertex strategies.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Tolerance separating genuine indefiniteness from roundoff at n <= 8,
/// relative to matrix max-norm.
pub const PSD_TOL: f64 = 1e-10;

/// `n` correlated lognormal assets `dS_i = sigma_i S_i dW_i`.
#[derive(Debug, Clone)]
pub struct MarketModel {
    pub n: usize,
    pub sigma: Vec<f64>,
    pub rho: Matrix,
    pub spot: Vec<f64>,
}

impl MarketModel {
    pub fn new(sigma: Vec<f64>, rho: Matrix, spot: Vec<f64>) -> Result<Self> {
        let n = sigma.len();
        if rho.n != n || spot.len() != n {
            return Err(Error::Argument(format!(
                "dimension mismatch: sigma {}, rho {}, spot {}",
                n,
                rho.n,
                spot.len()
            )));
        }
        if sigma.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::Argument("volatilities must be finite and >= 0".into()));
        }
        if spot.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Argument("spots must be positive".into()));
        }
        if !rho.is_symmetric(1e-12) {
            return Err(Error::Argument("correlation matrix must be symmetric".into()));
        }
        for i in 0..n {
            if (rho[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Argument("correlation diagonal must be 1".into()));
            }
        }
        if linalg::min_eigenvalue(&rho)? < -1e-12 {
            return Err(Error::NotPsd("correlation matrix".into()));
        }
        Ok(MarketModel { n, sigma, rho, spot })
    }

    /// Single-asset convenience constructor.
    pub fn single(sigma: f64, spot: f64) -> Result<Self> {
        MarketModel::new(vec![sigma], Matrix::identity(1), vec![spot])
    }

    /// Covariance-of-log-returns matrix `(sigma_i rho_ij sigma_j)`.
    pub fn vol_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.sigma[i] * self.rho[(i, j)] * self.sigma[j];
            }
        }
        m
    }

    /// Strategy-weighted instantaneous covariance
    /// `(sigma sigma^T)(delta)_ij = delta_i sigma_i s_i rho_ij delta_j sigma_j s_j`.
    pub fn build_volatility_matrix(&self, s: &[f64], delta: &[f64]) -> Result<Matrix> {
        if s.len() != self.n || delta.len() != self.n {
            return Err(Error::Argument(format!(
                "expected {} prices and controls, got {} and {}",
                self.n,
                s.len(),
                delta.len()
            )));
        }
        if s.iter().any(|&v| v < 0.0) {
            return Err(Error::Argument("prices must be nonnegative".into()));
        }
        let w: Vec<f64> = (0..self.n)
            .map(|i| delta[i] * self.sigma[i] * s[i])
            .collect();
        let mut m = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = w[i] * self.rho[(i, j)] * w[j];
            }
        }
        Ok(m)
    }

    /// Basket volatility `sigma_B(delta, s) = sqrt(sum_ij (sigma sigma^T)_ij(delta))`.
    ///
    /// Cross-checked against the quadratic form `<Q s_delta, Lambda Q s_delta>`
    /// when an eigenfactorization is supplied.
    pub fn basket_volatility(
        &self,
        eigen: Option<&EigenFactorization>,
        s: &[f64],
        delta: &[f64],
    ) -> Result<f64> {
        let m = self.build_volatility_matrix(s, delta)?;
        let total: f64 = m.data.iter().sum();
        if total < -1e-12 {
            return Err(Error::NotPsd(format!("negative radicand {total:.3e}")));
        }
        let direct = total.max(0.0).sqrt();
        if let Some(e) = eigen {
            let alt = e.quadratic_form_sqrt(s, delta, &self.sigma)?;
            if (direct - alt).abs() > 1e-10 * (1.0 + direct.abs()) {
                return Err(Error::Numeric(format!(
                    "basket volatility routes disagree: {direct} vs {alt}"
                )));
            }
        }
        Ok(direct)
    }

    /// Diagonalization `Q^T Lambda Q = (sigma_i rho_ij sigma_j)` with rows of
    /// `Q` the eigenvectors, eigenvalues descending.
    pub fn eigen_factorize(&self) -> Result<EigenFactorization> {
        let m = self.vol_matrix();
        let (vals, vecs) = linalg::sym_eigen(&m)?;
        if let Some(&min) = vals.last() {
            if min < -PSD_TOL * m.max_abs().max(1.0) {
                return Err(Error::NotPsd(format!("eigenvalue {min:.3e}")));
            }
        }
        let n = self.n;
        let mut q = Matrix::zeros(n);
        for (k, v) in vecs.iter().enumerate() {
            for i in 0..n {
                q[(k, i)] = v[i];
            }
        }
        let fact = EigenFactorization { q, lambda: vals };
        fact.validate(&m)?;
        Ok(fact)
    }
}

/// Orthogonal diagonalization of the volatility matrix.
#[derive(Debug, Clone)]
pub struct EigenFactorization {
    /// Rows are unit eigenvectors.
    pub q: Matrix,
    /// Eigenvalues, descending; nonnegative up to roundoff.
    pub lambda: Vec<f64>,
}

impl EigenFactorization {
    pub fn n(&self) -> usize {
        self.q.n
    }

    /// Checks orthogonality, reconstruction and eigenvalue sign invariants.
    pub fn validate(&self, target: &Matrix) -> Result<()> {
        let n = self.q.n;
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                let mut rec = 0.0;
                for k in 0..n {
                    dot += self.q[(i, k)] * self.q[(j, k)];
                    rec += self.q[(k, i)] * self.lambda[k] * self.q[(k, j)];
                }
                let id = if i == j { 1.0 } else { 0.0 };
                if (dot - id).abs() > 1e-10 {
                    return Err(Error::Numeric("Q is not orthogonal".into()));
                }
                if (rec - target[(i, j)]).abs() > 1e-10 * target.max_abs().max(1.0) {
                    return Err(Error::Numeric("Q^T Lambda Q does not reconstruct".into()));
                }
            }
        }
        if self.lambda.iter().any(|&l| l < -1e-12) {
            return Err(Error::NotPsd("negative eigenvalue".into()));
        }
        Ok(())
    }

    /// `sqrt(<Q s_delta, Lambda Q s_delta>)` with `s_delta = (delta_i s_i)`.
    pub fn quadratic_form_sqrt(&self, s: &[f64], delta: &[f64], sigma: &[f64]) -> Result<f64> {
        let n = self.q.n;
        if s.len() != n || delta.len() != n {
            return Err(Error::Argument("dimension mismatch".into()));
        }
        // weighted vector in asset space is (delta_i s_i); the sigma factors live
        // inside Lambda from (sigma_i rho_ij sigma_j)
        let w: Vec<f64> = (0..n).map(|i| delta[i] * s[i]).collect();
        let _ = sigma;
        let mut total = 0.0;
        for k in 0..n {
            let mut proj = 0.0;
            for i in 0..n {
                proj += self.q[(k, i)] * w[i];
            }
            total += self.lambda[k] * proj * proj;
        }
        if total < -1e-12 {
            return Err(Error::NotPsd(format!("negative radicand {total:.3e}")));
        }
        Ok(total.max(0.0).sqrt())
    }

    /// `Q^T v` for a vector in eigen coordinates (used to pull hypercube
    /// vertices back to asset coordinates).
    pub fn q_transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.q.n;
        (0..n)
            .map(|i| (0..n).map(|k| self.q[(k, i)] * v[k]).sum())
            .collect()
    }
}

/// Regularity class of a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    Constant,
    Smooth,
    Measurable,
}

/// Linear-growth certificate `|a_ij(x)| <= offset + slope * |x|`.
#[derive(Debug, Clone, Copy)]
pub struct LinearGrowth {
    pub offset: f64,
    pub slope: f64,
}

type FieldFn = dyn Fn(&[f64]) -> Matrix + Send + Sync;
type FieldDerivFn = dyn Fn(&[f64], usize) -> Matrix + Send + Sync;

/// Spatially varying symmetric PSD second-order coefficient `x -> A(x)` of a
/// pure diffusion `v_t = sum a_ij v_{x_i x_j}`.
#[derive(Clone)]
pub struct CoefficientField {
    pub n: usize,
    eval: Arc<FieldFn>,
    deriv: Option<Arc<FieldDerivFn>>,
    pub regularity: Regularity,
    pub growth: LinearGrowth,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("n", &self.n)
            .field("regularity", &self.regularity)
            .finish()
    }
}

impl CoefficientField {
    pub fn constant(a: Matrix) -> Self {
        let n = a.n;
        let growth = LinearGrowth {
            offset: a.max_abs(),
            slope: 0.0,
        };
        let zero = Matrix::zeros(n);
        CoefficientField {
            n,
            eval: Arc::new(move |_| a.clone()),
            deriv: Some(Arc::new(move |_, _| zero.clone())),
            regularity: Regularity::Constant,
            growth,
        }
    }

    pub fn diagonal(entries: Vec<f64>) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        CoefficientField::constant(m)
    }

    pub fn from_fn<F>(n: usize, regularity: Regularity, growth: LinearGrowth, f: F) -> Self
    where
        F: Fn(&[f64]) -> Matrix + Send + Sync + 'static,
    {
        CoefficientField {
            n,
            eval: Arc::new(f),
            deriv: None,
            regularity,
            growth,
        }
    }

    pub fn with_derivative<F>(mut self, d: F) -> Self
    where
        F: Fn(&[f64], usize) -> Matrix + Send + Sync + 'static,
    {
        self.deriv = Some(Arc::new(d));
        self
    }

    pub fn at(&self, x: &[f64]) -> Matrix {
        (self.eval)(x)
    }

    /// `dA/dx_d`, analytic when supplied, else centered difference with the
    /// given step.
    pub fn partial(&self, x: &[f64], d: usize, step: f64) -> Matrix {
        if let Some(deriv) = &self.deriv {
            return deriv(x, d);
        }
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[d] += step;
        xm[d] -= step;
        let ap = (self.eval)(&xp);
        let am = (self.eval)(&xm);
        let mut out = Matrix::zeros(self.n);
        for k in 0..self.n * self.n {
            out.data[k] = (ap.data[k] - am.data[k]) / (2.0 * step);
        }
        out
    }

    /// Checks symmetry and PSD-ness (min eigenvalue >= -1e-10) at sample points.
    pub fn validate_psd(&self, samples: &[Vec<f64>]) -> Result<()> {
        for x in samples {
            let a = self.at(x);
            if !a.is_symmetric(1e-9 * a.max_abs().max(1.0)) {
                return Err(Error::Argument(format!("A({x:?}) is not symmetric")));
            }
            let min = linalg::min_eigenvalue(&a)?;
            if min < -PSD_TOL {
                return Err(Error::NotPsd(format!("A({x:?}) min eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }

    /// True if the field visibly varies over the sample set.
    pub fn is_nonconstant(&self, samples: &[Vec<f64>], tol: f64) -> bool {
        if samples.len() < 2 {
            return false;
        }
        let first = self.at(&samples[0]);
        samples[1..]
            .iter()
            .any(|x| self.at(x).sub(&first).max_abs() > tol)
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Convex univariate data `f(x) = h(x_axis)` with an exponential growth
/// certificate `|h(x)| <= c exp(c |x|^(2-eps))`.
#[derive(Clone)]
pub struct UnivariatePayoff {
    pub axis: usize,
    h: Arc<ScalarFn>,
    pub growth_c: f64,
    pub growth_eps: f64,
}

impl std::fmt::Debug for UnivariatePayoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnivariatePayoff")
            .field("axis", &self.axis)
            .field("growth_c", &self.growth_c)
            .field("growth_eps", &self.growth_eps)
            .finish()
    }
}

impl UnivariatePayoff {
    pub fn new<F>(axis: usize, growth_c: f64, growth_eps: f64, h: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        UnivariatePayoff {
            axis,
            h: Arc::new(h),
            growth_c,
            growth_eps,
        }
    }

    /// `max(x - b, 0)` on the given axis.
    pub fn hinge(axis: usize, b: f64) -> Self {
        UnivariatePayoff::new(axis, 1.0 + b.abs(), 1.0, move |x| (x - b).max(0.0))
    }

    pub fn eval1(&self, x1: f64) -> f64 {
        (self.h)(x1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.h)(x[self.axis])
    }

    pub fn scalar_fn(&self) -> Arc<ScalarFn> {
        self.h.clone()
    }

    /// Checks discrete convexity and the growth certificate on a uniform
    /// sample of `[lo, hi]`.
    pub fn validate(&self, lo: f64, hi: f64, count: usize) -> Result<()> {
        if count < 3 || !(hi > lo) {
            return Err(Error::Argument("need at least 3 samples, hi > lo".into()));
        }
        let step = (hi - lo) / (count - 1) as f64;
        for i in 0..count {
            let x = lo + i as f64 * step;
            let v = self.eval1(x);
            if !v.is_finite() {
                return Err(Error::Argument(format!("payoff not finite at {x}")));
            }
            let bound = self.growth_c * (self.growth_c * x.abs().powf(2.0 - self.growth_eps)).exp();
            if v.abs() > bound {
                return Err(Error::Argument(format!(
                    "growth bound violated at {x}: |{v}| > {bound}"
                )));
            }
            if i >= 1 && i + 1 < count {
                let second = self.eval1(x - step) - 2.0 * v + self.eval1(x + step);
                if second < -1e-12 * (1.0 + v.abs()) {
                    return Err(Error::Argument(format!(
                        "convexity violated at {x}: second difference {second:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian mollifier width, cutoff decay rate, and cutoff radius.
#[derive(Debug, Clone, Copy)]
pub struct MollifierSpec {
    pub eps: f64,
    pub delta0: f64,
    pub radius: f64,
}

impl MollifierSpec {
    pub fn new(eps: f64, delta0: f64, radius: f64) -> Result<Self> {
        if !(eps > 0.0 && delta0 > 0.0 && radius > 0.0) {
            return Err(Error::Argument(
                "mollifier spec requires eps, delta0, R > 0".into(),
            ));
        }
        Ok(MollifierSpec { eps, delta0, radius })
    }
}

/// Cutoff then Gaussian smoothing: `h -> (h . cutoff_R) * G_eps`.
///
/// The result is numerically C^2, agrees with `h * G_eps` on `|x| <= R - 5 eps`,
/// decays like `exp(-delta0 (|x|-R)^2)` far beyond `R`, and stays convex on
/// `[-R + 5 eps, R - 5 eps]`.
pub fn mollify_and_cutoff(payoff: &UnivariatePayoff, spec: &MollifierSpec) -> MollifiedPayoff {
    MollifiedPayoff {
        inner: payoff.scalar_fn(),
        axis: payoff.axis,
        spec: *spec,
        nodes: 129,
    }
}

/// Smoothed, cut-off version of a univariate payoff.
#[derive(Clone)]
pub struct MollifiedPayoff {
    inner: Arc<ScalarFn>,
    pub axis: usize,
    pub spec: MollifierSpec,
    nodes: usize,
}

impl MollifiedPayoff {
    fn cutoff(&self, x: f64) -> f64 {
        let v = (self.inner)(x);
        let over = x.abs() - self.spec.radius;
        if over > 0.0 {
            v * (-self.spec.delta0 * over * over).exp()
        } else {
            v
        }
    }

    /// Quadrature convolution with the 6-sigma truncated Gaussian kernel.
    pub fn eval1(&self, x: f64) -> f64 {
        let eps = self.spec.eps;
        let half = 6.0 * eps;
        let n = self.nodes; // odd, >= 129
        let h = 2.0 * half / (n - 1) as f64;
        let norm = 1.0 / (eps * (2.0 * std::f64::consts::PI).sqrt());
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for i in 0..n {
            let u = -half + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let kernel = norm * (-0.5 * (u / eps) * (u / eps)).exp();
            acc += w * kernel * self.cutoff(x - u);
            wsum += w * kernel;
        }
        // normalise away the truncation so constants are reproduced exactly
        acc / wsum
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval1(x[self.axis])
    }
}

/// Monotone bridge from 1 to 0 used to mollify indicator strategies.
///
/// Piecewise: 1 for `z1 <= -eps`, 0 for `z1 >= 0`, and the bump value
/// `exp(-1 - eps/z1)` clamped into [0, 1] in between (the raw bump exceeds 1
/// on part of the bridge; endpoint values are kept).
pub fn smooth_indicator(eps: f64, z1: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    if z1 <= -eps {
        1.0
    } else if z1 >= 0.0 {
        0.0
    } else {
        (-1.0 - eps / z1).exp().clamp(0.0, 1.0)
    }
}
