//! Small dense complex matrices: products, Hermitian eigendecomposition by
//! cyclic Jacobi rotations, PSD square roots and partial traces.
//!
//! Matrices are stored row-major. Multi-qubit indices follow the
//! computational basis with subsystem 0 as the most significant digit, so
//! `|q0 q1 q2>` sits at row `q0*4 + q1*2 + q2`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Tolerance for accepting an input as Hermitian, relative to its largest entry.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues in `[-NEGATIVE_TOL, 0)` are treated as rounding noise and clipped.
pub const NEGATIVE_TOL: f64 = 1e-8;
const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::OutOfRange("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// `|psi><psi|` for a column vector `psi`.
    pub fn outer(ket: &[C64]) -> Self {
        let n = ket.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = ket[i] * ket[j].conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        let mut m = self + &adj;
        for z in &mut m.data {
            *z *= 0.5;
        }
        m
    }

    /// Accumulates `w * |psi><psi|` into `self`.
    pub fn add_outer(&mut self, ket: &[C64], w: f64) {
        let n = ket.len();
        debug_assert_eq!(n, self.rows);
        for i in 0..n {
            let ki = ket[i] * w;
            for j in 0..n {
                self.data[i * n + j] += ki * ket[j].conj();
            }
        }
    }

    /// `<psi| A |psi>` for square `A`.
    pub fn expectation(&self, ket: &[C64]) -> C64 {
        let n = self.rows;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            let mut row = C64::new(0.0, 0.0);
            for j in 0..n {
                row += self.data[i * n + j] * ket[j];
            }
            acc += ket[i].conj() * row;
        }
        acc
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul_unchecked(other))
    }

    fn mul_unchecked(&self, other: &Self) -> Self {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let brow = &other.data[l * m..(l + 1) * m];
                let orow = &mut out.data[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Panics on shape mismatch; use [`ComplexMatrix::matmul`] for a checked product.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        self.mul_unchecked(rhs)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub fn sigma_x() -> ComplexMatrix {
    ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).expect("2x2")
}

/// `σ_y = i(|1><0| - |0><1|)`.
pub fn sigma_y() -> ComplexMatrix {
    let z = C64::new(0.0, 0.0);
    ComplexMatrix::from_vec(2, 2, vec![z, C64::new(0.0, -1.0), C64::new(0.0, 1.0), z]).expect("2x2")
}

pub fn sigma_z() -> ComplexMatrix {
    ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).expect("2x2")
}

/// Kronecker product `a ⊗ b`.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = ComplexMatrix::zeros(rows, cols);
    for ai in 0..a.rows {
        for aj in 0..a.cols {
            let s = a[(ai, aj)];
            for bi in 0..b.rows {
                for bj in 0..b.cols {
                    out[(ai * b.rows + bi, aj * b.cols + bj)] = s * b[(bi, bj)];
                }
            }
        }
    }
    out
}

/// Kronecker product of kets.
pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct HermitianEig {
    /// Real spectrum, sorted in decreasing order.
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    /// `V f(Λ) V†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let n = v.rows();
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = v[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vik * v[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|x| x)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// The input must be Hermitian to within [`HERMITIAN_TOL`] relative to its
/// largest entry; it is symmetrized before rotating.
pub fn hermitian_eig(h: &ComplexMatrix) -> Result<HermitianEig> {
    if !h.is_square() {
        return Err(Error::NotSquare {
            rows: h.rows,
            cols: h.cols,
        });
    }
    let n = h.rows;
    let scale = h.max_abs().max(1.0);
    let deviation = h.hermitian_deviation();
    if deviation > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { deviation });
    }
    let mut a = h.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let threshold = JACOBI_TOL * a.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) >= threshold {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&x, &y| diag[y].total_cmp(&diag[x]));
    let eigenvalues = order.iter().map(|&k| diag[k]).collect();
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            eigenvectors[(i, col)] = v[(i, k)];
        }
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing `a[p][q]`; `a <- J† a J`, `v <- v J`.
fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag < 1e-300 {
        return;
    }
    let phase = apq / mag;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // J = diag(1, conj(phase)) · [[c, s], [-s, c]] on the (p, q) plane.
    let jpp = C64::new(c, 0.0);
    let jpq = C64::new(s, 0.0);
    let jqp = -phase.conj() * s;
    let jqq = phase.conj() * c;

    let n = a.rows;
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * jpp + akq * jqp;
        a[(k, q)] = akp * jpq + akq * jqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
        a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
    }
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * jpp + vkq * jqp;
        v[(k, q)] = vkp * jpq + vkq * jqq;
    }
}

/// Eigenvalues of a Hermitian PSD matrix with rounding negatives clipped to 0.
pub fn psd_spectrum(p: &ComplexMatrix) -> Result<HermitianEig> {
    let mut eig = hermitian_eig(p)?;
    let min = eig.min_eigenvalue();
    if min < -NEGATIVE_TOL {
        return Err(Error::Negative { eigenvalue: min });
    }
    for l in &mut eig.eigenvalues {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok(eig)
}

/// Hermitian PSD square root.
pub fn matrix_sqrt_psd(p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = psd_spectrum(p)?;
    Ok(eig.reconstruct_with(f64::sqrt))
}

/// `H^{-1/2}` for a Hermitian positive-definite `H` whose smallest eigenvalue
/// exceeds `min_eigenvalue`.
pub fn inverse_sqrt_pd(h: &ComplexMatrix, min_eigenvalue: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(h)?;
    let min = eig.min_eigenvalue();
    if min <= min_eigenvalue {
        return Err(Error::SingularGram { min_eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|x| 1.0 / x.sqrt()))
}

/// Trace distance `½‖a − b‖₁` between Hermitian matrices.
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let diff = a - b;
    let eig = hermitian_eig(&diff)?;
    Ok(0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>())
}

/// Reduced matrix on the subsystems listed in `keep`.
///
/// `dims` gives the dimension of every subsystem (subsystem 0 most
/// significant); `keep` may be given in any order but the kept subsystems
/// appear in ascending order in the result.
pub fn partial_trace(rho: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    if !rho.is_square() {
        return Err(Error::NotSquare {
            rows: rho.rows,
            cols: rho.cols,
        });
    }
    let total: usize = dims.iter().product();
    if total != rho.rows || dims.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "subsystem dimensions {dims:?} do not multiply to {}",
            rho.rows
        )));
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() || kept.len() != keep.len() || kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::DimensionMismatch(format!(
            "invalid kept subsystems {keep:?} for {} subsystems",
            dims.len()
        )));
    }
    let is_kept: Vec<bool> = (0..dims.len()).map(|s| kept.contains(&s)).collect();
    let out_dim: usize = kept.iter().map(|&k| dims[k]).product();

    let digits = |mut idx: usize| -> Vec<usize> {
        let mut d = vec![0; dims.len()];
        for s in (0..dims.len()).rev() {
            d[s] = idx % dims[s];
            idx /= dims[s];
        }
        d
    };
    let compose = |d: &[usize]| -> (usize, usize) {
        // (index over kept subsystems, index over traced subsystems)
        let (mut k, mut t) = (0, 0);
        for s in 0..dims.len() {
            if is_kept[s] {
                k = k * dims[s] + d[s];
            } else {
                t = t * dims[s] + d[s];
            }
        }
        (k, t)
    };
    let parts: Vec<(usize, usize)> = (0..total).map(|i| compose(&digits(i))).collect();

    let mut out = ComplexMatrix::zeros(out_dim, out_dim);
    for i in 0..total {
        let (ki, ti) = parts[i];
        for j in 0..total {
            let (kj, tj) = parts[j];
            if ti == tj {
                out[(ki, kj)] += rho[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Thin QR factorization of a square matrix by twice-iterated modified
/// Gram–Schmidt. Returns `(Q, R)` with `R` upper triangular.
pub fn qr_decompose(a: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut q = ComplexMatrix::zeros(n, n);
    let mut r = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut v = a.column(j);
        for _pass in 0..2 {
            for k in 0..j {
                let proj: C64 = (0..n).map(|i| q[(i, k)].conj() * v[i]).sum();
                r[(k, j)] += proj;
                for i in 0..n {
                    v[i] -= proj * q[(i, k)];
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::InvalidState("rank-deficient matrix in QR".into()));
        }
        r[(j, j)] = C64::new(norm, 0.0);
        for i in 0..n {
            q[(i, j)] = v[i] / norm;
        }
    }
    Ok((q, r))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &ComplexMatrix) -> Result<C64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut det = C64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[(x, col)].norm().total_cmp(&m[(y, col)].norm()))
            .unwrap_or(col);
        if m[(pivot, col)].norm() == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            det = -det;
        }
        let d = m[(col, col)];
        det *= d;
        for row in (col + 1)..n {
            let f = m[(row, col)] / d;
            for k in col..n {
                let v = m[(col, k)];
                m[(row, k)] -= f * v;
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let data = (0..n * n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_vec(n, n, data).unwrap()
    }

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        random_matrix(n, rng).hermitian_part()
    }

    fn random_psd(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let a = random_matrix(n, rng);
        &a * &a.adjoint()
    }

    #[test]
    fn identity_tensor_identity() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(tensor_product(&i2, &i2), ComplexMatrix::identity(4));
    }

    #[test]
    fn sigma_z_tensor_sigma_z_is_diagonal() {
        let zz = tensor_product(&sigma_z(), &sigma_z());
        assert_eq!(zz, ComplexMatrix::from_diagonal(&[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn mixed_product_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b, c, d) = (
                random_matrix(2, &mut rng),
                random_matrix(2, &mut rng),
                random_matrix(2, &mut rng),
                random_matrix(2, &mut rng),
            );
            let lhs = &tensor_product(&a, &b) * &tensor_product(&c, &d);
            let rhs = tensor_product(&(&a * &c), &(&b * &d));
            assert!((&lhs - &rhs).frobenius_norm() < 1e-13);
        }
    }

    #[test]
    fn eig_of_identity_and_sigma_x() {
        let e = hermitian_eig(&ComplexMatrix::identity(4)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0; 4]);
        let e = hermitian_eig(&sigma_x()).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-15);
        assert!((e.eigenvalues[1] + 1.0).abs() < 1e-15);
        let e = hermitian_eig(&sigma_y()).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = ComplexMatrix::from_real(2, 2, &[1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(hermitian_eig(&m), Err(Error::NotHermitian { .. })));
        let r = ComplexMatrix::zeros(2, 3);
        assert!(matches!(hermitian_eig(&r), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn eig_reconstruction_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=8 {
            for _ in 0..25 {
                let h = random_hermitian(n, &mut rng);
                let e = hermitian_eig(&h).unwrap();
                let res = (&e.reconstruct() - &h).frobenius_norm() / h.frobenius_norm();
                assert!(res < 1e-10, "n={n} residual {res}");
                let v = &e.eigenvectors;
                let vv = &v.adjoint() * v;
                assert!((&vv - &ComplexMatrix::identity(n)).frobenius_norm() < 1e-10);
                assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn eig_handles_degenerate_spectrum() {
        // Werner-like matrix with a triple eigenvalue.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(4, &mut rng);
        let (q, _) = qr_decompose(&a).unwrap();
        let d = ComplexMatrix::from_diagonal(&[0.7, 0.1, 0.1, 0.1]);
        let h = &(&q * &d) * &q.adjoint();
        let e = hermitian_eig(&h).unwrap();
        for (got, want) in e.eigenvalues.iter().zip([0.7, 0.1, 0.1, 0.1]) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn sqrt_examples() {
        let s = matrix_sqrt_psd(&ComplexMatrix::identity(3)).unwrap();
        assert!((&s - &ComplexMatrix::identity(3)).frobenius_norm() < 1e-15);
        let s = matrix_sqrt_psd(&ComplexMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((&s - &ComplexMatrix::from_diagonal(&[2.0, 3.0])).frobenius_norm() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back_and_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=8 {
            let p = random_psd(n, &mut rng);
            let s = matrix_sqrt_psd(&p).unwrap();
            assert!((&(&s * &s) - &p).frobenius_norm() < 1e-9);
            assert!((&(&s * &p) - &(&p * &s)).frobenius_norm() < 1e-9);
            assert!(s.is_hermitian(1e-12));
        }
    }

    #[test]
    fn sqrt_clips_rounding_negatives_and_rejects_real_ones() {
        let p = ComplexMatrix::from_diagonal(&[1.0, -1e-11]);
        let s = matrix_sqrt_psd(&p).unwrap();
        assert_eq!(s[(1, 1)], C64::new(0.0, 0.0));
        let p = ComplexMatrix::from_diagonal(&[1.0, -1e-6]);
        assert!(matches!(matrix_sqrt_psd(&p), Err(Error::Negative { .. })));
    }

    fn bell() -> ComplexMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let ket = [C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)];
        ComplexMatrix::outer(&ket)
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let r = partial_trace(&bell(), &[2, 2], &[0]).unwrap();
        assert!((&r - &ComplexMatrix::identity(2).scale(0.5)).frobenius_norm() < 1e-15);
        let r = partial_trace(&bell(), &[2, 2], &[1]).unwrap();
        assert!((&r - &ComplexMatrix::identity(2).scale(0.5)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn partial_trace_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_psd(2, &mut rng);
        let a = a.scale(1.0 / a.trace().re);
        let b = random_psd(3, &mut rng);
        let b = b.scale(1.0 / b.trace().re);
        let ab = tensor_product(&a, &b);
        let ra = partial_trace(&ab, &[2, 3], &[0]).unwrap();
        assert!((&ra - &a).frobenius_norm() < 1e-14);
        let rb = partial_trace(&ab, &[2, 3], &[1]).unwrap();
        assert!((&rb - &b).frobenius_norm() < 1e-14);
    }

    #[test]
    fn partial_trace_preserves_trace_and_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let rho = random_psd(8, &mut rng);
            let tr = rho.trace();
            for keep in [&[0usize][..], &[1], &[2], &[0, 1], &[0, 2], &[1, 2]] {
                let r = partial_trace(&rho, &[2, 2, 2], keep).unwrap();
                assert!((r.trace() - tr).norm() < 1e-12);
            }
            // Trace out 2 then 1 versus 1 then 2, keeping qubit 0.
            let a = partial_trace(&partial_trace(&rho, &[2, 2, 2], &[0, 1]).unwrap(), &[2, 2], &[0]).unwrap();
            let b = partial_trace(&partial_trace(&rho, &[2, 2, 2], &[0, 2]).unwrap(), &[2, 2], &[0]).unwrap();
            let c = partial_trace(&rho, &[2, 2, 2], &[0]).unwrap();
            assert!((&a - &b).frobenius_norm() < 1e-12);
            assert!((&a - &c).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let rho = ComplexMatrix::identity(4);
        assert!(partial_trace(&rho, &[2, 3], &[0]).is_err());
        assert!(partial_trace(&rho, &[2, 2], &[]).is_err());
        assert!(partial_trace(&rho, &[2, 2], &[2]).is_err());
    }

    #[test]
    fn qr_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(6, &mut rng);
        let (q, r) = qr_decompose(&a).unwrap();
        assert!((&(&q * &r) - &a).frobenius_norm() < 1e-12);
        assert!((&(&q.adjoint() * &q) - &ComplexMatrix::identity(6)).frobenius_norm() < 1e-12);
        assert!((determinant(&q).unwrap().norm() - 1.0).abs() < 1e-12);
        let d = determinant(&ComplexMatrix::from_diagonal(&[2.0, 3.0, -1.0])).unwrap();
        assert!((d - C64::new(-6.0, 0.0)).norm() < 1e-14);
    }
}
