//! Small dense matrix kernels: symmetric eigendecomposition (cyclic Jacobi),
//! semidefinite Cholesky, and rank estimation.
//!
//! Dimensions here are tiny (n <= 8 assets, n <= 3 grid dimensions), so the
//! O(n^3) classics are the right tool.

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Matrix::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix rows must be square");
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors) with `vectors[k]` the unit eigenvector
/// for `values[k]`, sorted by descending eigenvalue. Tie-break and sign are
/// made deterministic by ordering and by forcing the first component of each
/// vector with magnitude above 1e-12 to be positive.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !a.is_symmetric(1e-9 * a.max_abs().max(1.0)) {
        return Err(Error::Argument("matrix is not symmetric".into()));
    }
    let n = a.n;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * m.max_abs().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| (m[(k, k)], (0..n).map(|i| v[(i, k)]).collect()))
        .collect();
    // descending eigenvalues; deterministic sign per vector
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (_, vec) in pairs.iter_mut() {
        if let Some(first) = vec.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                vec.iter_mut().for_each(|c| *c = -*c);
            }
        }
    }
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = pairs.into_iter().map(|p| p.1).collect();
    Ok((values, vectors))
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> Result<f64> {
    let (vals, _) = sym_eigen(a)?;
    Ok(*vals.last().unwrap())
}

/// Cholesky factor L (lower) with L L^T = A, tolerating semidefinite input.
///
/// Pivots smaller than `tol * max|A|` are treated as exactly zero (column
/// zeroed); a pivot more negative than that is a PSD failure.
pub fn cholesky_psd(a: &Matrix, tol: f64) -> Result<Matrix> {
    let n = a.n;
    let scale = a.max_abs().max(1.0);
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol * scale {
            return Err(Error::NotPsd(format!(
                "cholesky pivot {d:.3e} at column {j}"
            )));
        }
        if d <= tol * scale {
            // semidefinite direction: zero column
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Rank of the span of `vectors` (each of length `dim`), via eigenvalues of
/// the Gram matrix with relative threshold `rel_tol` on singular values.
pub fn span_rank(vectors: &[Vec<f64>], dim: usize, rel_tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = vectors.len();
    let mut gram = Matrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            gram[(i, j)] = (0..dim).map(|k| vectors[i][k] * vectors[j][k]).sum();
        }
    }
    let (vals, _) = match sym_eigen(&gram) {
        Ok(v) => v,
        Err(_) => return 0,
    };
    let smax = vals.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    if smax == 0.0 {
        return 0;
    }
    vals.iter()
        .filter(|&&v| v.max(0.0).sqrt() > rel_tol * smax)
        .count()
        .min(dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_correlation() {
        // [[1, 0.5], [0.5, 1]] has eigenvalues 1.5 and 0.5 with vectors (1,1)/sqrt2, (1,-1)/sqrt2
        let a = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        assert!((vals[0] - 1.5).abs() < 1e-12);
        assert!((vals[1] - 0.5).abs() < 1e-12);
        let r = 0.5f64.sqrt();
        assert!((vecs[0][0] - r).abs() < 1e-12 && (vecs[0][1] - r).abs() < 1e-12);
        assert!((vecs[1][0] - r).abs() < 1e-12 && (vecs[1][1] + r).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs() {
        let a = Matrix::from_rows(&[
            vec![2.0, 0.3, -0.1],
            vec![0.3, 1.0, 0.2],
            vec![-0.1, 0.2, 0.5],
        ]);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        // A = sum_k lambda_k v_k v_k^T
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += vals[k] * vecs[k][i] * vecs[k][j];
                }
                assert!((s - a[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_semidefinite() {
        // perfectly correlated pair: rank 1
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let l = cholesky_psd(&a, 1e-12).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += l[(i, k)] * l[(j, k)];
                }
                assert!((s - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky_psd(&a, 1e-12).is_err());
    }

    #[test]
    fn span_rank_detects_deficiency() {
        assert_eq!(span_rank(&[vec![1.0, 0.0]], 2, 1e-8), 1);
        assert_eq!(span_rank(&[vec![1.0, 0.0], vec![2.0, 0.0]], 2, 1e-8), 1);
        assert_eq!(span_rank(&[vec![1.0, 0.0], vec![1.0, 1.0]], 2, 1e-8), 2);
        assert_eq!(span_rank(&[vec![0.0, 0.0]], 2, 1e-8), 0);
    }
}
