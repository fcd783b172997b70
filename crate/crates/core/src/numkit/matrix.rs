//! Row-major dense `f64` matrix with the three product kernels the training
//! loops live on: `A·B`, `A·Bᵀ`, and `Aᵀ·B`.
//!
//! The transposed variants exist so hot paths never materialize a transpose:
//! encoder weights are stored feature-major and decoder weights channel-major
//! precisely so that every product in the forward/backward passes reduces to
//! dots or axpys over contiguous rows.

use crate::error::{ClearError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data; the length must be `rows × cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ClearError::Shape {
                op: "Matrix::from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("data length {}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard product `self · b`.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(shape_err("matmul", self, b));
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        // i-k-j order: the inner loop is an axpy over contiguous rows of `b`,
        // which the compiler vectorizes.
        for i in 0..self.rows {
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * bv;
                }
            }
        }
        debug_assert!(out.is_finite(), "matmul produced non-finite entries");
        Ok(out)
    }

    /// `self · bᵀ` — rows of both operands are contiguous, so each output
    /// entry is a plain dot product.
    pub fn matmul_nt(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.cols {
            return Err(shape_err("matmul_nt", self, b));
        }
        let mut out = Matrix::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * b.rows..(i + 1) * b.rows];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * b.cols..(j + 1) * b.cols];
                let mut acc = 0.0;
                for (&av, &bv) in a_row.iter().zip(b_row) {
                    acc += av * bv;
                }
                *o = acc;
            }
        }
        debug_assert!(out.is_finite(), "matmul_nt produced non-finite entries");
        Ok(out)
    }

    /// `selfᵀ · b` — accumulated as rank-1 updates, one per shared row.
    pub fn matmul_tn(&self, b: &Matrix) -> Result<Matrix> {
        if self.rows != b.rows {
            return Err(shape_err("matmul_tn", self, b));
        }
        let mut out = Matrix::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let a_row = &self.data[r * self.cols..(r + 1) * self.cols];
            let b_row = &b.data[r * b.cols..(r + 1) * b.cols];
            for (i, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        debug_assert!(out.is_finite(), "matmul_tn produced non-finite entries");
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self += s · other`, entry-wise.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err("add_scaled", self, other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// Column-wise mean over all rows; errors on an empty matrix.
    pub fn mean_rows(&self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(ClearError::Config(
                "mean over zero rows is undefined".into(),
            ));
        }
        let mut mean = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for m in &mut mean {
            *m *= inv;
        }
        Ok(mean)
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> ClearError {
    ClearError::Shape {
        op,
        left: format!("{}x{}", a.rows, a.cols),
        right: format!("{}x{}", b.rows, b.cols),
    }
}

/// Dot product of two equal-length slices (callers guarantee lengths).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn identity_times_matrix_is_matrix() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn projector_zeroes_dropped_coordinate() {
        let p = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let x = Matrix::from_vec(2, 1, vec![5.0, 7.0]).unwrap();
        let y = p.matmul(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 0.0]);
    }

    /// Independent oracle: naive triple loop, no blocking, no reordering.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = RngStream::new(11, 0);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn transposed_variants_match_explicit_transpose() {
        let mut rng = RngStream::new(12, 0);
        let a = random_matrix(&mut rng, 5, 3);
        let b = random_matrix(&mut rng, 4, 3);
        let nt = a.matmul_nt(&b).unwrap();
        let via_t = a.matmul(&b.transpose()).unwrap();
        for (g, w) in nt.data().iter().zip(via_t.data()) {
            assert!((g - w).abs() < 1e-12);
        }

        let c = random_matrix(&mut rng, 5, 4);
        let tn = a.matmul_tn(&c).unwrap();
        let via_t = a.transpose().matmul(&c).unwrap();
        for (g, w) in tn.data().iter().zip(via_t.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    proptest! {
        /// (A·B)·C = A·(B·C) on random conformable triples, to 1e-9 relative.
        #[test]
        fn matmul_is_associative(seed in 0u64..500) {
            let mut rng = RngStream::new(seed, 3);
            let a = random_matrix(&mut rng, 4, 3);
            let b = random_matrix(&mut rng, 3, 5);
            let c = random_matrix(&mut rng, 5, 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let scale = l.abs().max(r.abs()).max(1.0);
                prop_assert!((l - r).abs() / scale < 1e-9);
            }
        }
    }
}
