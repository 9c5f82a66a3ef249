//! Dense real-matrix primitives: products, Cholesky factorization, SPD
//! solves and least squares through the normal equations.
//!
//! Everything is computed in `f64`. Weights are stored as `f32` on disk but
//! the block normal equations are too ill-conditioned for single precision.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Row-major dense matrix with finite `f64` entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                column: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape(
                "from_rows",
                "rows of equal length",
                "ragged rows",
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    /// Bytes held by the entry buffer.
    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the column range `cols` into a new matrix.
    pub fn columns(&self, cols: Range<usize>) -> Self {
        self.submatrix(0..self.rows, cols)
    }

    pub fn submatrix(&self, rows: Range<usize>, cols: Range<usize>) -> Self {
        assert!(rows.end <= self.rows && cols.end <= self.cols);
        let width = cols.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows.clone() {
            data.extend_from_slice(&self.row(r)[cols.clone()]);
        }
        Self {
            rows: rows.len(),
            cols: width,
            data,
        }
    }

    /// Writes `block` into the columns starting at `col_offset`.
    pub fn set_columns(&mut self, col_offset: usize, block: &DenseMatrix) -> Result<()> {
        if block.rows != self.rows || col_offset + block.cols > self.cols {
            return Err(Error::shape(
                "set_columns",
                format!(
                    "{} rows, <= {} cols",
                    self.rows,
                    self.cols - col_offset.min(self.cols)
                ),
                format!("{}x{}", block.rows, block.cols),
            ));
        }
        for r in 0..self.rows {
            self.row_mut(r)[col_offset..col_offset + block.cols].copy_from_slice(block.row(r));
        }
        Ok(())
    }

    /// Concatenates blocks column-wise.
    pub fn hstack(blocks: &[DenseMatrix]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::shape(
                "hstack",
                "blocks with equal row counts",
                "ragged blocks",
            ));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            out.set_columns(offset, b)?;
            offset += b.cols;
        }
        Ok(out)
    }

    fn check_same_shape(&self, other: &DenseMatrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        self.check_same_shape(other, "sub_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a -= b);
        Ok(())
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `‖self − other‖_F / max(‖other‖_F, tiny)`.
    pub fn rel_diff(&self, other: &DenseMatrix) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.frobenius().max(f64::MIN_POSITIVE)
    }

    /// Whether `self` is symmetric up to `tol` relative to its largest entry.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry(tol).is_none()
    }

    fn asymmetry(&self, tol: f64) -> Option<(usize, usize)> {
        if self.rows != self.cols {
            return Some((0, 0));
        }
        let bound = tol * self.max_abs().max(1.0);
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                if (self.get(r, c) - self.get(c, r)).abs() > bound {
                    return Some((r, c));
                }
            }
        }
        None
    }
}

/// `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("lhs cols == rhs rows ({})", a.cols),
            format!("rhs rows {}", b.rows),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`, the layer forward `X·Wᵀ` without materializing the transpose.
pub fn matmul_transb(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transb",
            format!("rhs cols {}", a.cols),
            format!("rhs cols {}", b.cols),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ar, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_transa(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_transa",
            format!("rhs rows {}", a.rows),
            format!("rhs rows {}", b.rows),
        ));
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(br) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// Gram matrix `aᵀ·a`, exactly symmetric.
pub fn gram(a: &DenseMatrix) -> DenseMatrix {
    let n = a.cols;
    let mut out = DenseMatrix::zeros(n, n);
    for k in 0..a.rows {
        let row = a.row(k);
        for i in 0..n {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for j in i..n {
                out_row[j] += ri * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out.data[i * n + j] = out.data[j * n + i];
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular factor `L` with `L·Lᵀ = H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: DenseMatrix,
}

/// Relative symmetry tolerance accepted by [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Factors a symmetric positive-definite matrix. No pivoting.
pub fn cholesky(h: &DenseMatrix) -> Result<CholeskyFactor> {
    if h.rows != h.cols {
        return Err(Error::shape(
            "cholesky",
            "square matrix",
            format!("{}x{}", h.rows, h.cols),
        ));
    }
    if let Some((row, col)) = h.asymmetry(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric { row, col });
    }
    let n = h.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let pivot = h.get(j, j) - dot(lj, lj);
        if !pivot.is_finite() || pivot <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: pivot,
            });
        }
        let d = pivot.sqrt();
        l.data[j * n + j] = d;
        for i in j + 1..n {
            let (head, tail) = l.data.split_at(i * n);
            let s = h.get(i, j) - dot(&tail[..j], &head[j * n..j * n + j]);
            l.data[i * n + j] = s / d;
        }
    }
    Ok(CholeskyFactor { dim: n, lower: l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn byte_size(&self) -> usize {
        self.lower.byte_size()
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        matmul_transb(&self.lower, &self.lower).expect("square factor")
    }

    /// Solves `H·X = rhs` column by column with forward and back substitution.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows != self.dim {
            return Err(Error::shape(
                "spd_solve",
                format!("{} rhs rows", self.dim),
                format!("{} rhs rows", rhs.rows),
            ));
        }
        let n = self.dim;
        let m = rhs.cols;
        let l = &self.lower;
        let mut x = rhs.clone();
        // L·Z = B, operating on whole rows of the right-hand side
        for i in 0..n {
            for k in 0..i {
                let lik = l.get(i, k);
                if lik == 0.0 {
                    continue;
                }
                let (done, rest) = x.data.split_at_mut(i * m);
                let zk = &done[k * m..(k + 1) * m];
                for (xi, &zkj) in rest[..m].iter_mut().zip(zk) {
                    *xi -= lik * zkj;
                }
            }
            let d = l.get(i, i);
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        // Lᵀ·X = Z
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = l.get(k, i);
                if lki == 0.0 {
                    continue;
                }
                let (head, done) = x.data.split_at_mut(k * m);
                let xk = &done[..m];
                for (xi, &xkj) in head[i * m..(i + 1) * m].iter_mut().zip(xk) {
                    *xi -= lki * xkj;
                }
            }
            let d = l.get(i, i);
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        Ok(x)
    }

    /// `H⁻¹`, symmetrized.
    pub fn inverse(&self) -> DenseMatrix {
        let mut inv = self
            .solve(&DenseMatrix::identity(self.dim))
            .expect("square identity");
        let n = self.dim;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }

    /// Smallest squared pivot relative to the largest.
    fn pivot_ratio(&self) -> f64 {
        let diag: Vec<f64> = (0..self.dim)
            .map(|i| self.lower.get(i, i).powi(2))
            .collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 {
            min / max
        } else {
            0.0
        }
    }
}

pub fn spd_solve(factor: &CholeskyFactor, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    factor.solve(rhs)
}

/// Pivot ratio below which the normal equations are treated as rank deficient.
const RANK_TOL: f64 = 1e-13;

/// Least-squares fit of `target ≈ x · Bᵀ`, returning `B` as
/// `(target.cols × x.cols)` so it has the layout of a weight block.
pub fn least_squares(x: &DenseMatrix, target: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows != target.rows {
        return Err(Error::shape(
            "least_squares",
            format!("{} target rows", x.rows),
            format!("{} target rows", target.rows),
        ));
    }
    let normal = gram(x);
    let factor = match cholesky(&normal) {
        Ok(f) => f,
        Err(Error::NotPositiveDefinite { .. }) => return Err(Error::Singular),
        Err(e) => return Err(e),
    };
    if factor.pivot_ratio() < RANK_TOL {
        return Err(Error::Singular);
    }
    let rhs = matmul_transa(x, target)?;
    Ok(factor.solve(&rhs)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let a = random(n, n, rng);
        gram(&a).add(&DenseMatrix::identity(n)).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&DenseMatrix::identity(2), &a).unwrap(), a);
        let z = DenseMatrix::zeros(2, 2);
        assert_eq!(matmul(&a, &z).unwrap(), z);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
        let bt = b.transpose();
        assert!(matmul_transb(&a, &bt).unwrap().rel_diff(&want) < 1e-14);
        let at = a.transpose();
        assert!(matmul_transa(&at, &b).unwrap().rel_diff(&want) < 1e-14);
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn cholesky_closed_forms() {
        let f = cholesky(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &DenseMatrix::identity(3));
        let f = cholesky(&DenseMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(f.lower(), &DenseMatrix::from_diag(&[2.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_spd(5, &mut rng);
        let f = cholesky(&h).unwrap();
        assert!(f.reconstruct().rel_diff(&h) < 1e-10);
        for i in 0..5 {
            assert!(f.lower().get(i, i) > 0.0);
            for j in i + 1..5 {
                assert_eq!(f.lower().get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let h = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        match cholesky(&h) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
        let asym = DenseMatrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn spd_solve_cases() {
        let b = DenseMatrix::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]).unwrap();
        let f = cholesky(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(spd_solve(&f, &b).unwrap(), b);

        let f = cholesky(&DenseMatrix::from_diag(&[2.0])).unwrap();
        let x = spd_solve(&f, &DenseMatrix::from_rows(&[&[4.0]]).unwrap()).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_spd(6, &mut rng);
        let rhs = random(6, 3, &mut rng);
        let x = spd_solve(&cholesky(&h).unwrap(), &rhs).unwrap();
        let resid = matmul(&h, &x).unwrap().rel_diff(&rhs);
        assert!(resid < 1e-8, "residual {resid}");

        assert!(spd_solve(&f, &rhs).is_err());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = random_spd(7, &mut rng);
        let inv = cholesky(&h).unwrap().inverse();
        let id = matmul(&h, &inv).unwrap();
        assert!(id.rel_diff(&DenseMatrix::identity(7)) < 1e-10);
        assert!(inv.is_symmetric(0.0));
    }

    #[test]
    fn least_squares_identity_design() {
        let d = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let b = least_squares(&DenseMatrix::identity(3), &d).unwrap();
        assert!(b.rel_diff(&d.transpose()) < 1e-15);
    }

    #[test]
    fn least_squares_column_of_ones_is_mean() {
        let ones = DenseMatrix::from_fn(4, 1, |_, _| 1.0);
        let d = DenseMatrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let b = least_squares(&ones, &d).unwrap();
        assert!((b.get(0, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_rank_deficient() {
        let x = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]).unwrap();
        let d = DenseMatrix::from_fn(3, 1, |r, _| r as f64);
        assert!(matches!(least_squares(&x, &d), Err(Error::Singular)));
    }

    #[test]
    fn hstack_and_columns_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 5, &mut rng);
        let parts = vec![a.columns(0..2), a.columns(2..5)];
        assert_eq!(DenseMatrix::hstack(&parts).unwrap(), a);
    }
}
