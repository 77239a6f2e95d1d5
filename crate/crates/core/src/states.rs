//! Density matrices, textbook states and the random ensembles used to build
//! training and test sets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, C64};

/// Tolerance on Hermiticity, trace and negativity of a density matrix.
pub const STATE_TOL: f64 = 1e-10;

/// Explicit seed value; every random draw in the crate flows from one of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed(pub u64);

pub type StateRng = ChaCha8Rng;

impl RandomSeed {
    pub fn rng(self) -> StateRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent generator for item `index` of a sharded computation, so
    /// results do not depend on how work is split across threads.
    pub fn stream(self, index: u64) -> StateRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// Child seed for a named sub-task.
    pub fn derive(self, tag: &str, index: u64) -> RandomSeed {
        let mut h = self.0 ^ 0x9e37_79b9_7f4a_7c15;
        for b in tag.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        RandomSeed(splitmix64(h ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A validated `n`-qubit density matrix: Hermitian, unit trace, PSD.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    n_qubits: usize,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix, n_qubits: usize) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() != 1 << n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix cannot hold {n_qubits} qubits",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let deviation = matrix.hermitian_deviation();
        if deviation > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {deviation:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let eig = linalg::hermitian_eig(&matrix)?;
        let min = eig.min_eigenvalue();
        if min < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self { matrix, n_qubits })
    }

    /// Symmetrizes and trace-normalizes a PSD matrix, then validates it.
    pub fn from_unnormalized(matrix: &ComplexMatrix, n_qubits: usize) -> Result<Self> {
        let h = matrix.hermitian_part();
        let tr = h.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidState(format!("cannot normalize trace {tr}")));
        }
        Self::new(h.scale(1.0 / tr), n_qubits)
    }

    pub fn from_pure(ket: &[C64]) -> Result<Self> {
        let n_qubits = qubits_for_dim(ket.len())?;
        let norm = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let normalized: Vec<C64> = ket.iter().map(|z| z / norm).collect();
        Self::new(ComplexMatrix::outer(&normalized).hermitian_part(), n_qubits)
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        Self {
            matrix: ComplexMatrix::identity(d).scale(1.0 / d as f64),
            n_qubits,
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        m.data().iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(linalg::hermitian_eig(&self.matrix)?.eigenvalues)
    }

    /// Reduced state on the kept qubits (ascending order).
    pub fn reduce(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let dims = vec![2; self.n_qubits];
        let m = linalg::partial_trace(&self.matrix, &dims, keep)?;
        Ok(DensityMatrix {
            matrix: m,
            n_qubits: keep.len(),
        })
    }

    /// `(U_1 ⊗ … ⊗ U_n) ρ (U_1 ⊗ … ⊗ U_n)†` with one unitary per qubit.
    pub fn apply_local(&self, unitaries: &[ComplexMatrix]) -> Result<DensityMatrix> {
        if unitaries.len() != self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{} local unitaries for {} qubits",
                unitaries.len(),
                self.n_qubits
            )));
        }
        let mut u = unitaries[0].clone();
        for v in &unitaries[1..] {
            u = linalg::tensor_product(&u, v);
        }
        let m = &(&u * &self.matrix) * &u.adjoint();
        Self::from_unnormalized(&m, self.n_qubits)
    }
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::DimensionMismatch(format!("dimension {dim} is not a qubit register")));
    }
    Ok(dim.trailing_zeros() as usize)
}

fn check_qubits(n_qubits: usize) -> Result<()> {
    if matches!(n_qubits, 2 | 3) {
        Ok(())
    } else {
        Err(Error::UnsupportedQubits(n_qubits))
    }
}

/// Ginibre matrix with i.i.d. entries `N(0,1) + i N(0,1)`.
pub fn sample_ginibre<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    let data = (0..dim * dim)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    ComplexMatrix::from_vec(dim, dim, data).expect("finite gaussian samples")
}

/// Haar-random unitary from the QR factorization of a Ginibre matrix, with
/// the phases of `R`'s diagonal moved into `Q`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    loop {
        let z = sample_ginibre(dim, rng);
        let Ok((mut q, r)) = linalg::qr_decompose(&z) else {
            continue;
        };
        for j in 0..dim {
            let d = r[(j, j)];
            let phase = d / d.norm();
            for i in 0..dim {
                q[(i, j)] *= phase;
            }
        }
        return q;
    }
}

/// Haar-random pure state vector.
pub fn sample_haar_ket<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..dim)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|z| z / norm).collect();
        }
    }
}

/// Bures-distributed mixed state `(1+U†)GG†(1+U) / Tr(…)`.
pub fn sample_bures_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<DensityMatrix> {
    check_qubits(n_qubits)?;
    let d = 1 << n_qubits;
    let g = sample_ginibre(d, rng);
    let u = sample_haar_unitary(d, rng);
    let one_plus_u = &ComplexMatrix::identity(d) + &u;
    let a = &one_plus_u.adjoint() * &g;
    let m = &a * &a.adjoint();
    DensityMatrix::from_unnormalized(&m, n_qubits)
}

/// `q|ψ><ψ| + (1−q) I/2ⁿ` for a given pure state and mixing weight.
pub fn noisy_pure(ket: &[C64], q: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::OutOfRange(format!("mixing weight {q} outside [0, 1]")));
    }
    let pure = DensityMatrix::from_pure(ket)?;
    let n = pure.n_qubits();
    let d = pure.dim() as f64;
    let m = &pure.matrix.scale(q) + &ComplexMatrix::identity(pure.dim()).scale((1.0 - q) / d);
    DensityMatrix::from_unnormalized(&m, n)
}

/// Haar pure state mixed with white noise. The weight is `q = √u` with
/// `u ~ U[0, 1]`, which makes the purity `q² + (1−q²)/d` uniform on `[1/d, 1]`.
pub fn sample_noisy_pure<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<DensityMatrix> {
    check_qubits(n_qubits)?;
    let ket = sample_haar_ket(1 << n_qubits, rng);
    let q = rng.random::<f64>().sqrt();
    noisy_pure(&ket, q)
}

fn basis_ket(dim: usize, entries: &[(usize, f64)]) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); dim];
    for &(i, a) in entries {
        v[i] = C64::new(a, 0.0);
    }
    v
}

fn singlet_projector() -> ComplexMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::outer(&basis_ket(4, &[(1, h), (2, -h)]))
}

/// Werner state `p ρ_ψ⁻ + (1−p) I/4` with `ψ⁻` the singlet.
pub fn werner_state(p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("Werner parameter {p} outside [0, 1]")));
    }
    let m = &singlet_projector().scale(p) + &ComplexMatrix::identity(4).scale((1.0 - p) / 4.0);
    DensityMatrix::new(m.hermitian_part(), 2)
}

/// Fixture states, with `H = |0>` and `V = |1>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamedState {
    BellPhiPlus,
    BellPhiMinus,
    BellPsiPlus,
    Singlet,
    ProductHH,
    ProductHV,
    ProductDD,
    MaximallyMixed2,
    Ghz,
    W,
    ProductHHH,
    MaximallyMixed3,
}

impl NamedState {
    pub const ALL: [NamedState; 12] = [
        NamedState::BellPhiPlus,
        NamedState::BellPhiMinus,
        NamedState::BellPsiPlus,
        NamedState::Singlet,
        NamedState::ProductHH,
        NamedState::ProductHV,
        NamedState::ProductDD,
        NamedState::MaximallyMixed2,
        NamedState::Ghz,
        NamedState::W,
        NamedState::ProductHHH,
        NamedState::MaximallyMixed3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedState::BellPhiPlus => "bell_phi_plus",
            NamedState::BellPhiMinus => "bell_phi_minus",
            NamedState::BellPsiPlus => "bell_psi_plus",
            NamedState::Singlet => "singlet",
            NamedState::ProductHH => "product_hh",
            NamedState::ProductHV => "product_hv",
            NamedState::ProductDD => "product_dd",
            NamedState::MaximallyMixed2 => "maximally_mixed_2",
            NamedState::Ghz => "ghz",
            NamedState::W => "w",
            NamedState::ProductHHH => "product_hhh",
            NamedState::MaximallyMixed3 => "maximally_mixed_3",
        }
    }

    pub fn state(self) -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = 1.0 / 3f64.sqrt();
        let pure = |ket: Vec<C64>| DensityMatrix::from_pure(&ket).expect("fixture state");
        match self {
            NamedState::BellPhiPlus => pure(basis_ket(4, &[(0, h), (3, h)])),
            NamedState::BellPhiMinus => pure(basis_ket(4, &[(0, h), (3, -h)])),
            NamedState::BellPsiPlus => pure(basis_ket(4, &[(1, h), (2, h)])),
            NamedState::Singlet => pure(basis_ket(4, &[(1, h), (2, -h)])),
            NamedState::ProductHH => pure(basis_ket(4, &[(0, 1.0)])),
            NamedState::ProductHV => pure(basis_ket(4, &[(1, 1.0)])),
            NamedState::ProductDD => pure(basis_ket(4, &[(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5)])),
            NamedState::MaximallyMixed2 => DensityMatrix::maximally_mixed(2),
            NamedState::Ghz => pure(basis_ket(8, &[(0, h), (7, h)])),
            NamedState::W => pure(basis_ket(8, &[(1, t), (2, t), (4, t)])),
            NamedState::ProductHHH => pure(basis_ket(8, &[(0, 1.0)])),
            NamedState::MaximallyMixed3 => DensityMatrix::maximally_mixed(3),
        }
    }
}

impl fmt::Display for NamedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NamedState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "psi_minus" | "bell_psi_minus" => "singlet",
            other => other,
        };
        NamedState::ALL
            .into_iter()
            .find(|n| n.name() == alias)
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

pub fn named_state(name: &str) -> Result<DensityMatrix> {
    Ok(name.parse::<NamedState>()?.state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::determinant;

    fn assert_valid(rho: &DensityMatrix) {
        assert!(rho.matrix().is_hermitian(STATE_TOL));
        assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
        assert!(rho.eigenvalues().unwrap().iter().all(|&l| l >= -STATE_TOL));
    }

    #[test]
    fn ginibre_moments() {
        let mut rng = RandomSeed(11).rng();
        let draws = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut first = None;
        for _ in 0..draws {
            let g = sample_ginibre(4, &mut rng);
            let x = g[(1, 2)].re;
            first.get_or_insert(g[(0, 0)]);
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / draws as f64;
        let var = sum_sq / draws as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn ginibre_is_deterministic() {
        let a = sample_ginibre(4, &mut RandomSeed(3).rng());
        let b = sample_ginibre(4, &mut RandomSeed(3).rng());
        assert_eq!(a, b);
        assert_eq!(a.rows(), 4);
    }

    #[test]
    fn haar_unitary_properties() {
        let mut rng = RandomSeed(12).rng();
        for d in [2, 4, 8] {
            let u = sample_haar_unitary(d, &mut rng);
            let uu = &u.adjoint() * &u;
            assert!((&uu - &ComplexMatrix::identity(d)).frobenius_norm() < 1e-10);
            assert!((determinant(&u).unwrap().norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn haar_first_entry_is_uniform_on_average() {
        let mut rng = RandomSeed(13).rng();
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| sample_haar_unitary(4, &mut rng)[(0, 0)].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 0.25).abs() < 0.25 * 0.05, "mean {mean}");
    }

    #[test]
    fn bures_states_are_valid() {
        let mut rng = RandomSeed(14).rng();
        for n in [2, 3] {
            for _ in 0..200 {
                assert_valid(&sample_bures_state(n, &mut rng).unwrap());
            }
        }
        assert!(sample_bures_state(4, &mut rng).is_err());
    }

    #[test]
    fn noisy_pure_limits_and_spectrum() {
        let mut rng = RandomSeed(15).rng();
        for n in [2, 3] {
            let d = (1usize << n) as f64;
            let ket = sample_haar_ket(1 << n, &mut rng);
            let pure = noisy_pure(&ket, 1.0).unwrap();
            assert!((pure.purity() - 1.0).abs() < 1e-12);
            let mixed = noisy_pure(&ket, 0.0).unwrap();
            assert!(mixed.eigenvalues().unwrap().iter().all(|l| (l - 1.0 / d).abs() < 1e-12));
            for q in [0.1, 0.37, 0.8] {
                let eig = noisy_pure(&ket, q).unwrap().eigenvalues().unwrap();
                assert!((eig[0] - (q + (1.0 - q) / d)).abs() < 1e-12);
                assert!(eig[1..].iter().all(|l| (l - (1.0 - q) / d).abs() < 1e-12));
            }
            assert_valid(&sample_noisy_pure(n, &mut rng).unwrap());
        }
        assert!(noisy_pure(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], 1.5).is_err());
    }

    #[test]
    fn noisy_pure_purity_is_uniform() {
        let mut rng = RandomSeed(16).rng();
        let n = 4000;
        let d = 4.0;
        let mut u: Vec<f64> = (0..n)
            .map(|_| (sample_noisy_pure(2, &mut rng).unwrap().purity() - 1.0 / d) / (1.0 - 1.0 / d))
            .collect();
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS {ks}");
    }

    #[test]
    fn werner_examples() {
        let w0 = werner_state(0.0).unwrap();
        assert!((w0.matrix() - &ComplexMatrix::identity(4).scale(0.25)).frobenius_norm() < 1e-15);
        let w1 = werner_state(1.0).unwrap();
        assert!((w1.purity() - 1.0).abs() < 1e-12);
        assert!((w1.matrix() - NamedState::Singlet.state().matrix()).frobenius_norm() < 1e-15);
        let e = werner_state(0.5).unwrap().eigenvalues().unwrap();
        for (got, want) in e.iter().zip([0.625, 0.125, 0.125, 0.125]) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!(werner_state(-0.1).is_err());
        assert!(werner_state(1.1).is_err());
    }

    #[test]
    fn named_states() {
        let s = named_state("singlet").unwrap();
        let h = 0.5;
        assert!((s.matrix()[(1, 1)].re - h).abs() < 1e-15);
        assert!((s.matrix()[(1, 2)].re + h).abs() < 1e-15);
        let g = named_state("ghz").unwrap();
        assert_eq!(g.n_qubits(), 3);
        assert!((g.matrix()[(0, 7)].re - 0.5).abs() < 1e-15);
        let hh = named_state("product_hh").unwrap();
        assert_eq!(hh.matrix()[(0, 0)], C64::new(1.0, 0.0));
        assert!(named_state("nonsense").is_err());
        for n in NamedState::ALL {
            assert_eq!(n.name().parse::<NamedState>().unwrap(), n);
            assert_valid(&n.state());
        }
    }

    #[test]
    fn seed_streams_are_reproducible_and_distinct() {
        let a = sample_bures_state(2, &mut RandomSeed(5).stream(3)).unwrap();
        let b = sample_bures_state(2, &mut RandomSeed(5).stream(3)).unwrap();
        let c = sample_bures_state(2, &mut RandomSeed(5).stream(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(RandomSeed(5).derive("x", 0), RandomSeed(5).derive("x", 1));
        assert_ne!(RandomSeed(5).derive("x", 0), RandomSeed(5).derive("y", 0));
    }

    #[test]
    fn invalid_density_matrices_are_rejected() {
        let m = ComplexMatrix::from_diagonal(&[0.5, 0.5, 0.5, -0.5]);
        assert!(DensityMatrix::new(m, 2).is_err());
        let m = ComplexMatrix::from_diagonal(&[0.5, 0.5, 0.5, 0.5]);
        assert!(DensityMatrix::new(m, 2).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::identity(4).scale(0.25), 3).is_err());
    }
}
