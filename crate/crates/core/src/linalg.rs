//! Dense row-major matrices and the Cholesky toolkit shared by every model.
//!
//! All reductions run sequentially in a fixed order so identical inputs give
//! bit-identical outputs, which the sweep determinism guarantees rely on.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Number of times the Cholesky jitter is multiplied by ten before giving up.
pub const JITTER_ESCALATIONS: usize = 3;

/// Default diagonal jitter for unit-scale kernel matrices.
pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        dim_check(data.len() == rows * cols, || {
            format!("{} values for a {rows}x{cols} matrix", data.len())
        })?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            dim_check(r.len() == cols, || {
                format!("row {i} has {} columns, expected {cols}", r.len())
            })?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Concatenates columns: `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Self> {
        dim_check(self.rows == other.rows, || {
            format!("hstack of {} and {} rows", self.rows, other.rows)
        })?;
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        dim_check(self.cols == other.rows, || {
            format!("matmul {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols)
        })?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`, reading both operands row-wise.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Self> {
        dim_check(self.cols == other.cols, || {
            format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        dim_check(self.cols == v.len(), || {
            format!("matvec {}x{} by {}", self.rows, self.cols, v.len())
        })?;
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        dim_check(self.rows == v.len(), || {
            format!("tr_matvec ({}x{})ᵀ by {}", self.rows, self.cols, v.len())
        })?;
        let mut out = vec![0.0; self.cols];
        for (r, &vi) in self.row_iter().zip(v) {
            axpy(vi, r, &mut out);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        dim_check(self.shape() == other.shape(), || {
            format!("add {:?} and {:?}", self.shape(), other.shape())
        })?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (0..i).all(|j| {
                    let (a, b) = (self[(i, j)], self[(j, i)]);
                    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
                })
            })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor, stored densely with zeros above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
    jitter: f64,
}

impl LowerTriangular {
    /// Wraps a dense matrix, keeping only its lower triangle.
    ///
    /// Fails unless the matrix is square with a strictly positive diagonal.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        dim_check(m.is_square(), || format!("factor must be square, got {:?}", m.shape()))?;
        let n = m.rows();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let d = m[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "factor diagonal entry {i} is {d}, must be positive"
                )));
            }
            data[i * n..i * n + i + 1].copy_from_slice(&m.row(i)[..=i]);
        }
        Ok(Self { n, data, jitter: 0.0 })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            data: Matrix::identity(n).into_data(),
            jitter: 0.0,
        }
    }

    /// Builds from the row-major lower triangle, `n(n+1)/2` entries.
    pub fn from_packed(n: usize, packed: &[f64]) -> Result<Self> {
        dim_check(packed.len() == n * (n + 1) / 2, || {
            format!("{} packed entries for a {n}x{n} factor", packed.len())
        })?;
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            data[i * n..i * n + i + 1].copy_from_slice(&packed[k..k + i + 1]);
            k += i + 1;
            let d = data[i * n + i];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "factor diagonal entry {i} is {d}, must be positive"
                )));
            }
        }
        Ok(Self { n, data, jitter: 0.0 })
    }

    /// Row-major lower triangle.
    pub fn packed(&self) -> Vec<f64> {
        (0..self.n).flat_map(|i| self.row(i).iter().copied()).collect()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..i * self.n + i + 1]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.n,
            cols: self.n,
            data: self.data.clone(),
        }
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.row(i)[..=j], &self.row(j)[..=j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Factors `A + jitter·I = L Lᵀ`.
///
/// When a pivot is not positive the jitter is multiplied by ten and the
/// factorization retried, at most [`JITTER_ESCALATIONS`] times. A zero
/// jitter is never escalated.
pub fn cholesky(a: &Matrix, jitter: f64) -> Result<LowerTriangular> {
    dim_check(a.is_square(), || format!("cholesky of {:?}", a.shape()))?;
    if !a.is_symmetric(1e-9) {
        return Err(Error::InvalidArgument("cholesky input is not symmetric".into()));
    }
    let attempts = if jitter > 0.0 { JITTER_ESCALATIONS + 1 } else { 1 };
    let mut j = jitter;
    let mut last = None;
    for _ in 0..attempts {
        match factor(a, j) {
            Ok(l) => return Ok(l),
            Err(e) => last = Some(e),
        }
        j *= 10.0;
    }
    Err(last.expect("at least one attempt"))
}

fn factor(a: &Matrix, jitter: f64) -> Result<LowerTriangular> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                let pivot = a[(i, i)] + jitter - s;
                if pivot <= 0.0 || !pivot.is_finite() {
                    return Err(Error::NotPositiveDefinite { row: i, pivot, jitter });
                }
                l[i * n + i] = pivot.sqrt();
            } else {
                l[i * n + j] = (a[(i, j)] - s) / l[j * n + j];
            }
        }
    }
    Ok(LowerTriangular { n, data: l, jitter })
}

/// Solves `L x = b`.
pub fn solve_lower(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>> {
    dim_check(l.n == b.len(), || format!("factor {} vs rhs {}", l.n, b.len()))?;
    let mut x = b.to_vec();
    for i in 0..l.n {
        let row = l.row(i);
        let s = dot(&row[..i], &x[..i]);
        x[i] = (x[i] - s) / row[i];
    }
    Ok(x)
}

/// Solves `Lᵀ x = b`.
pub fn solve_upper_t(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>> {
    dim_check(l.n == b.len(), || format!("factor {} vs rhs {}", l.n, b.len()))?;
    let n = l.n;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= l.get(i, i);
        let xi = x[i];
        // column i of Lᵀ above the diagonal is row i of L left of the diagonal
        for (k, &lik) in l.row(i)[..i].iter().enumerate() {
            x[k] -= lik * xi;
        }
    }
    Ok(x)
}

/// Solves `(L Lᵀ) x = b`.
pub fn solve_chol(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>> {
    let z = solve_lower(l, b)?;
    solve_upper_t(l, &z)
}

/// Solves `L X = B` column by column.
pub fn solve_lower_mat(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    dim_check(l.n == b.rows(), || format!("factor {} vs rhs rows {}", l.n, b.rows()))?;
    let (n, m) = b.shape();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l.get(i, k);
            if lik == 0.0 {
                continue;
            }
            let (done, rest) = x.data.split_at_mut(i * m);
            axpy(-lik, &done[k * m..(k + 1) * m], &mut rest[..m]);
        }
        let d = l.get(i, i);
        for v in x.row_mut(i) {
            *v /= d;
        }
    }
    Ok(x)
}

/// Solves `(L Lᵀ) X = B`.
pub fn solve_chol_mat(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    let z = solve_lower_mat(l, b)?;
    let (n, m) = z.shape();
    let mut x = z;
    for i in (0..n).rev() {
        let d = l.get(i, i);
        for v in x.row_mut(i) {
            *v /= d;
        }
        for k in 0..i {
            let lik = l.get(i, k);
            if lik == 0.0 {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(i * m);
            axpy(-lik, &tail[..m], &mut head[k * m..(k + 1) * m]);
        }
    }
    Ok(x)
}

/// `(L Lᵀ)⁻¹`, symmetrized.
pub fn chol_inverse(l: &LowerTriangular) -> Matrix {
    let n = l.n;
    let linv = solve_lower_mat(l, &Matrix::identity(n)).expect("square identity");
    // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹; L⁻¹ is lower triangular
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// `ln |L Lᵀ| = 2 Σ ln Lᵢᵢ`.
pub fn logdet(l: &LowerTriangular) -> f64 {
    2.0 * (0..l.n).map(|i| l.get(i, i).ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix {
        let mut s = crate::prng::StreamKey::new(seed).with("spd").stream();
        let m = Matrix::from_vec(n, n, (0..n * n).map(|_| s.standard_normal()).collect()).unwrap();
        let mut a = m.transpose().matmul(&m).unwrap();
        a.add_diag(1.0);
        a
    }

    #[test]
    fn packed_round_trip() {
        let a = spd(5, 11);
        let l = cholesky(&a, 0.0).unwrap();
        let p = l.packed();
        assert_eq!(p.len(), 15);
        assert_eq!(LowerTriangular::from_packed(5, &p).unwrap().to_matrix(), l.to_matrix());
        assert!(LowerTriangular::from_packed(2, &[1.0, 0.5, 0.0]).is_err());
        assert!(LowerTriangular::from_packed(2, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn identity_factor() {
        let l = cholesky(&Matrix::identity(3), 0.0).unwrap();
        assert_eq!(l.to_matrix(), Matrix::identity(3));
    }

    #[test]
    fn two_by_two_factor() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a, 0.0).unwrap();
        assert_eq!(l.get(0, 0), 2.0);
        assert_eq!(l.get(1, 0), 1.0);
        assert!((l.get(1, 1) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);
        let r = l.reconstruct();
        assert!(r.add(&a.scale(-1.0)).unwrap().frobenius_norm() / a.frobenius_norm() < 1e-9);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a, 0.0), Err(Error::NotPositiveDefinite { .. })));
        // escalation tops out at 1e-3, nowhere near the -1 eigenvalue
        assert!(matches!(cholesky(&a, 1e-6), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn jitter_escalates() {
        // singular rank-one matrix: 1e-12 fails numerically, escalation rescues it
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let l = cholesky(&a, 1e-12).unwrap();
        assert!(l.jitter() >= 1e-12 && l.jitter() <= 1e-9);
    }

    #[test]
    fn solve_examples() {
        let l = LowerTriangular::identity(2);
        assert_eq!(solve_chol(&l, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a, 0.0).unwrap();
        let x = solve_chol(&l, &[2.0, 1.0]).unwrap();
        let r = a.matvec(&x).unwrap();
        assert!((r[0] - 2.0).abs() <= 1e-8 * 2.0 && (r[1] - 1.0).abs() <= 1e-8 * 2.0);

        assert!(matches!(
            solve_chol(&l, &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet(&LowerTriangular::identity(4)), 0.0);
        let l = LowerTriangular::from_matrix(&Matrix::from_diag(&[2.0, 2f64.sqrt()])).unwrap();
        assert!((logdet(&l) - 8f64.ln()).abs() < 1e-12);
        let l = LowerTriangular::from_matrix(&Matrix::from_diag(&[std::f64::consts::E])).unwrap();
        assert!((logdet(&l) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigen_products() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((logdet(&cholesky(&a, 0.0).unwrap()) - 3f64.ln()).abs() < 1e-10);
        // tridiagonal [[2,-1,0],[-1,2,-1],[0,-1,2]]: eigenvalues 2-√2, 2, 2+√2, product 4
        let a = Matrix::from_rows(&[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]).unwrap();
        assert!((logdet(&cholesky(&a, 0.0).unwrap()) - 4f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn random_spd_solve_residual() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 9);
            let a = spd(n, seed);
            let mut s = crate::prng::StreamKey::new(seed).with("rhs").stream();
            let b: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
            let l = cholesky(&a, 0.0).unwrap();
            let x = solve_chol(&l, &b).unwrap();
            let r = a.matvec(&x).unwrap();
            let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let res = r.iter().zip(&b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
            assert!(res <= 1e-8 * bnorm, "seed {seed}: residual {res}");
        }
    }

    #[test]
    fn matrix_solves_and_inverse_agree_with_vector_solve() {
        let a = spd(6, 3);
        let l = cholesky(&a, 0.0).unwrap();
        let inv = chol_inverse(&l);
        let prod = a.matmul(&inv).unwrap();
        let err = prod.add(&Matrix::identity(6).scale(-1.0)).unwrap().frobenius_norm();
        assert!(err < 1e-10, "{err}");

        let b = Matrix::from_vec(6, 2, (0..12).map(|i| i as f64 - 5.0).collect()).unwrap();
        let x = solve_chol_mat(&l, &b).unwrap();
        for c in 0..2 {
            let xv = solve_chol(&l, &b.col(c)).unwrap();
            for i in 0..6 {
                assert!((x[(i, c)] - xv[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = spd(12, 9);
        let l1 = cholesky(&a, 1e-6).unwrap();
        let l2 = cholesky(&a, 1e-6).unwrap();
        assert!(l1.data.iter().zip(&l2.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
