//! Correlation quantifiers: concurrence, von Neumann entropy and the
//! pairwise mutual-information matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sigma_y, tensor_product, ComplexMatrix};
use crate::states::DensityMatrix;

/// Eigenvalues below this are exact zeros in entropy sums.
pub const ENTROPY_ZERO: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Concurrence,
    MutualInfo2q,
    MutualInfo3q,
}

impl CorrelationKind {
    pub fn width(self) -> usize {
        match self {
            CorrelationKind::Concurrence | CorrelationKind::MutualInfo2q => 1,
            CorrelationKind::MutualInfo3q => 3,
        }
    }

    pub fn n_qubits(self) -> usize {
        match self {
            CorrelationKind::Concurrence | CorrelationKind::MutualInfo2q => 2,
            CorrelationKind::MutualInfo3q => 3,
        }
    }

    /// Upper bound of every component; network targets are divided by it.
    ///
    /// With the ½ prefactor the pairwise mutual information of qubits peaks
    /// at 1, the same as concurrence.
    pub fn target_max(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrelationKind::Concurrence => "concurrence",
            CorrelationKind::MutualInfo2q => "mutual_info_2q",
            CorrelationKind::MutualInfo3q => "mutual_info_3q",
        }
    }

    pub fn evaluate(self, rho: &DensityMatrix) -> Result<CorrelationTarget> {
        if rho.n_qubits() != self.n_qubits() {
            return Err(Error::Config(format!(
                "{self} needs a {}-qubit state, got {} qubits",
                self.n_qubits(),
                rho.n_qubits()
            )));
        }
        match self {
            CorrelationKind::Concurrence => Ok(CorrelationTarget {
                kind: self,
                values: vec![concurrence(rho)?],
            }),
            CorrelationKind::MutualInfo2q | CorrelationKind::MutualInfo3q => mutual_information_matrix(rho),
        }
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "concurrence" | "c" => Ok(CorrelationKind::Concurrence),
            "mutual_info_2q" | "mi2" | "mutual_info" => Ok(CorrelationKind::MutualInfo2q),
            "mutual_info_3q" | "mi3" => Ok(CorrelationKind::MutualInfo3q),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }
}

/// A correlation value: scalar concurrence, scalar `I_AB`, or `(I_AB, I_AC, I_BC)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTarget {
    pub kind: CorrelationKind,
    pub values: Vec<f64>,
}

impl CorrelationTarget {
    pub fn new(kind: CorrelationKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.width() {
            return Err(Error::DimensionMismatch(format!(
                "{kind} has {} components, got {}",
                kind.width(),
                values.len()
            )));
        }
        Ok(Self { kind, values })
    }

    /// True when every component lies within `[0, target_max]` up to `tol`.
    pub fn in_bounds(&self, tol: f64) -> bool {
        let max = self.kind.target_max();
        self.values.iter().all(|&v| v >= -tol && v <= max + tol)
    }

    /// Mean absolute difference over components.
    pub fn abs_error(&self, other: &CorrelationTarget) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.values.len() as f64
    }
}

fn require_two_qubits(rho: &DensityMatrix) -> Result<()> {
    if rho.n_qubits() != 2 {
        return Err(Error::InvalidState(format!(
            "concurrence needs two qubits, got {}",
            rho.n_qubits()
        )));
    }
    Ok(())
}

/// Spin-flipped state `(σ_y⊗σ_y) ρ* (σ_y⊗σ_y)`.
pub fn spin_flip(rho: &ComplexMatrix) -> ComplexMatrix {
    let yy = tensor_product(&sigma_y(), &sigma_y());
    &(&yy * &rho.conj()) * &yy
}

fn from_lambdas(mut lambdas: Vec<f64>) -> f64 {
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let c = lambdas[0] - lambdas[1..].iter().sum::<f64>();
    c.clamp(0.0, 1.0)
}

/// Concurrence `max(0, λ1 − λ2 − λ3 − λ4)`.
///
/// The λ are square roots of the eigenvalues of `ρρ̃`, obtained from the
/// Hermitian matrix `L† ρ̃ L` with `ρ = L L†`, `L = V Λ^{1/2}`, which is
/// similar to `ρρ̃`.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    require_two_qubits(rho)?;
    let eig = linalg::psd_spectrum(rho.matrix())?;
    let n = rho.dim();
    let mut l = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.sqrt();
        for i in 0..n {
            l[(i, k)] *= s;
        }
    }
    let flipped = spin_flip(rho.matrix());
    let k = &(&l.adjoint() * &flipped) * &l;
    let mu = linalg::psd_spectrum(&k.hermitian_part())?;
    Ok(from_lambdas(mu.eigenvalues.iter().map(|m| m.sqrt()).collect()))
}

/// Concurrence through `T = sqrt(sqrt(ρ) ρ̃ sqrt(ρ))` and its eigenvalues.
pub fn concurrence_via_sqrt(rho: &DensityMatrix) -> Result<f64> {
    require_two_qubits(rho)?;
    let s = linalg::matrix_sqrt_psd(rho.matrix())?;
    let inner = &(&s * &spin_flip(rho.matrix())) * &s;
    let t = linalg::matrix_sqrt_psd(&inner.hermitian_part())?;
    let eig = linalg::hermitian_eig(&t)?;
    Ok(from_lambdas(eig.eigenvalues))
}

/// `−Σ λ log_base λ` over the spectrum of a Hermitian PSD matrix.
pub fn entropy_of_matrix(m: &ComplexMatrix, log_base: f64) -> Result<f64> {
    let eig = linalg::psd_spectrum(m)?;
    let ln_base = log_base.ln();
    let s: f64 = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > ENTROPY_ZERO)
        .map(|&l| -l * l.ln() / ln_base)
        .sum();
    Ok(s.max(0.0))
}

/// Von Neumann entropy `−Tr(ρ log_d ρ)`; qubits use `log_base = 2`.
pub fn von_neumann_entropy(rho: &DensityMatrix, log_base: f64) -> Result<f64> {
    entropy_of_matrix(rho.matrix(), log_base)
}

/// `I_ij = ½ (S(ρ_i) + S(ρ_j) − S(ρ_ij))` with base-2 logarithms.
///
/// Two qubits yield `[I_AB]`; three qubits `[I_AB, I_AC, I_BC]`.
pub fn mutual_information_matrix(rho: &DensityMatrix) -> Result<CorrelationTarget> {
    let n = rho.n_qubits();
    let kind = match n {
        2 => CorrelationKind::MutualInfo2q,
        3 => CorrelationKind::MutualInfo3q,
        other => return Err(Error::UnsupportedQubits(other)),
    };
    let singles: Vec<f64> = (0..n)
        .map(|i| von_neumann_entropy(&rho.reduce(&[i])?, 2.0))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(kind.width());
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = if n == 2 {
                von_neumann_entropy(rho, 2.0)?
            } else {
                von_neumann_entropy(&rho.reduce(&[i, j])?, 2.0)?
            };
            values.push((0.5 * (singles[i] + singles[j] - pair)).max(0.0));
        }
    }
    Ok(CorrelationTarget { kind, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{named_state, sample_bures_state, sample_haar_unitary, werner_state, RandomSeed};

    #[test]
    fn concurrence_of_fixtures() {
        let s = named_state("singlet").unwrap();
        assert!((concurrence(&s).unwrap() - 1.0).abs() < 1e-12);
        assert!((concurrence_via_sqrt(&s).unwrap() - 1.0).abs() < 1e-7);
        let hh = named_state("product_hh").unwrap();
        assert!(concurrence(&hh).unwrap().abs() < 1e-12);
        let w = werner_state(0.8).unwrap();
        assert!((concurrence(&w).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn concurrence_rejects_three_qubits() {
        assert!(concurrence(&named_state("ghz").unwrap()).is_err());
    }

    #[test]
    fn concurrence_routes_agree() {
        let mut rng = RandomSeed(21).rng();
        for _ in 0..200 {
            let rho = sample_bures_state(2, &mut rng).unwrap();
            let a = concurrence(&rho).unwrap();
            let b = concurrence_via_sqrt(&rho).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn concurrence_is_local_unitary_invariant() {
        let mut rng = RandomSeed(22).rng();
        for _ in 0..100 {
            let rho = sample_bures_state(2, &mut rng).unwrap();
            let ua = sample_haar_unitary(2, &mut rng);
            let ub = sample_haar_unitary(2, &mut rng);
            let moved = rho.apply_local(&[ua, ub]).unwrap();
            assert!((concurrence(&rho).unwrap() - concurrence(&moved).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_examples() {
        assert!(von_neumann_entropy(&named_state("singlet").unwrap(), 2.0).unwrap().abs() < 1e-12);
        let half = crate::states::DensityMatrix::maximally_mixed(2).reduce(&[0]).unwrap();
        assert!((von_neumann_entropy(&half, 2.0).unwrap() - 1.0).abs() < 1e-14);
        let quarter = crate::states::DensityMatrix::maximally_mixed(2);
        assert!((von_neumann_entropy(&quarter, 2.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mutual_information_examples() {
        let bell = mutual_information_matrix(&named_state("bell_phi_plus").unwrap()).unwrap();
        assert_eq!(bell.kind, CorrelationKind::MutualInfo2q);
        assert!((bell.values[0] - 1.0).abs() < 1e-12);
        let dd = mutual_information_matrix(&named_state("product_dd").unwrap()).unwrap();
        assert!(dd.values[0].abs() < 1e-12);
        let ghz = mutual_information_matrix(&named_state("ghz").unwrap()).unwrap();
        assert_eq!(ghz.values.len(), 3);
        assert!(ghz.values.iter().all(|v| (v - 0.5).abs() < 1e-10));
        let hhh = mutual_information_matrix(&named_state("product_hhh").unwrap()).unwrap();
        assert!(hhh.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mutual_information_is_bounded_and_nonnegative() {
        let mut rng = RandomSeed(23).rng();
        for n in [2, 3] {
            for _ in 0..100 {
                let rho = sample_bures_state(n, &mut rng).unwrap();
                let mi = mutual_information_matrix(&rho).unwrap();
                assert!(mi.in_bounds(1e-9));
            }
        }
    }

    #[test]
    fn kind_parsing_and_widths() {
        assert_eq!("concurrence".parse::<CorrelationKind>().unwrap(), CorrelationKind::Concurrence);
        assert_eq!("mutual_info_3q".parse::<CorrelationKind>().unwrap().width(), 3);
        assert!("entropy".parse::<CorrelationKind>().is_err());
        let ghz = named_state("ghz").unwrap();
        assert!(CorrelationKind::Concurrence.evaluate(&ghz).is_err());
        assert_eq!(CorrelationKind::MutualInfo3q.evaluate(&ghz).unwrap().values.len(), 3);
    }
}
