//! Bounds-checked wrapper over `matrixmultiply::dgemm`.

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `cols x rows` matrix.
    pub fn transposed(data: &'a [f64], stored_rows: usize, stored_cols: usize) -> Self {
        Self {
            data,
            rows: stored_cols,
            cols: stored_rows,
            row_stride: 1,
            col_stride: stored_cols,
        }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// `c = a · b + beta · c` with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, c: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c[..m * n] {
            *x *= beta;
        }
        return;
    }
    #[allow(unsafe_code)]
    // SAFETY: every index touched by dgemm is bounded by the checks above:
    // `a`/`b` views were validated against their slices and `c` holds m*n
    // row-major entries.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(View::row_major(&a, 2, 3), View::row_major(&b, 3, 4), &mut c, 1.0);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|l| a[i * 3 + l] * b[l * 4 + j]).sum::<f64>();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ a via a transposed view.
        let mut g = vec![0.0; 9];
        gemm(View::transposed(&a, 2, 3), View::row_major(&a, 2, 3), &mut g, 0.0);
        assert_eq!(g[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(g[4], 1.0 + 16.0);
    }

    #[test]
    #[should_panic]
    fn rejects_short_slices() {
        let a = vec![0.0; 5];
        let mut c = vec![0.0; 4];
        gemm(View::row_major(&a, 2, 3), View::row_major(&a, 3, 2), &mut c, 0.0);
    }
}
