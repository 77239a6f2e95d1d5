//! Maximum-likelihood state reconstruction by the iterative `RρR` map,
//! corrected by `G^{-1/2}` for incomplete projector sets.
//!
//! With `G = Σ M_i` over the measured projectors and
//! `R = Σ f_i / p_i M_i`, `p_i = Tr(ρ M_i)`, two variants are available:
//!
//! - [`MaxLikMap::Corrected`] (default): `ρ ← μ G^{-1/2} R ρ R G^{-1/2}`,
//!   applied to the same `ρ` on both sides. For a complete set `G ∝ I` and
//!   this is plain `RρR`. For an incomplete set the true state is in general
//!   not a fixed point, so the estimate carries a bias that grows as
//!   projectors are removed.
//! - [`MaxLikMap::GramFrame`]: the same map read in the frame of the
//!   normalized operators `M_i' = G^{-1/2} M_i G^{-1/2}`, i.e. iterating
//!   `σ = G^{1/2} ρ G^{1/2}` and mapping back, which amounts to
//!   `ρ ← μ G^{-1} R ρ R G^{-1}`. Here the true state is a fixed point for
//!   exact data whenever the measured operators span the state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix};
use crate::measurement::{gram_normalize, ProbabilityRecord, ProjectorSet};
use crate::states::DensityMatrix;

/// Floor applied to `p_i` inside `R` when `f_i > 0`.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum MaxLikInit {
    MaximallyMixed,
    Explicit(DensityMatrix),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxLikMap {
    #[default]
    Corrected,
    GramFrame,
}

#[derive(Clone, Debug)]
pub struct MaxLikConfig {
    pub max_iterations: usize,
    /// Trace distance between successive estimates below which the
    /// iteration stops.
    pub convergence_tol: f64,
    pub init: MaxLikInit,
    pub map: MaxLikMap,
    /// Keep the log-likelihood of every iterate in the result.
    pub record_history: bool,
}

impl Default for MaxLikConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            convergence_tol: 1e-10,
            init: MaxLikInit::MaximallyMixed,
            map: MaxLikMap::Corrected,
            record_history: false,
        }
    }
}

impl MaxLikConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MaxLikResult {
    pub estimate: DensityMatrix,
    pub iterations_used: usize,
    /// [`log_likelihood`] of the estimate.
    pub final_log_likelihood: f64,
    pub converged: bool,
    /// Log-likelihood of the initial state then of every iterate, when
    /// requested ([`log_likelihood`] for the corrected map,
    /// [`normalized_log_likelihood`] for the Gram-frame map).
    pub log_likelihood_history: Vec<f64>,
}

/// `R = Σ_i f_i / p_i M_i` over active projectors with `p_i = Tr(ρ M_i)`.
pub fn r_operator(rho: &DensityMatrix, set: &ProjectorSet, freqs: &ProbabilityRecord) -> Result<ComplexMatrix> {
    freqs.aligned_with(set)?;
    Ok(r_operator_raw(rho.matrix(), set, &set.active_indices(), &freqs.values))
}

fn r_operator_raw(rho: &ComplexMatrix, set: &ProjectorSet, active: &[usize], freqs: &[f64]) -> ComplexMatrix {
    let d = set.dim();
    let mut r = ComplexMatrix::zeros(d, d);
    for &i in active {
        let f = freqs[i];
        if f <= 0.0 {
            continue;
        }
        let p = rho.expectation(set.ket(i)).re.max(PROBABILITY_FLOOR);
        r.add_outer(set.ket(i), f / p);
    }
    r
}

/// `Σ f̂_i ln p_i` with `f̂` the frequencies normalized over the active set.
pub fn log_likelihood(rho: &ComplexMatrix, set: &ProjectorSet, freqs: &[f64]) -> f64 {
    likelihood(rho, set, freqs, false)
}

/// `Σ f̂_i ln(p_i / Σ_k p_k)`: the likelihood of the outcome distribution
/// restricted to the measured projectors, which the Gram-frame map climbs.
/// For a complete set it differs from [`log_likelihood`] by a constant.
pub fn normalized_log_likelihood(rho: &ComplexMatrix, set: &ProjectorSet, freqs: &[f64]) -> f64 {
    likelihood(rho, set, freqs, true)
}

fn likelihood(rho: &ComplexMatrix, set: &ProjectorSet, freqs: &[f64], normalize: bool) -> f64 {
    let active = set.active_indices();
    let f_total: f64 = active.iter().map(|&i| freqs[i].max(0.0)).sum();
    let probs: Vec<f64> = active.iter().map(|&i| rho.expectation(set.ket(i)).re).collect();
    let p_total: f64 = if normalize { probs.iter().sum() } else { 1.0 };
    if f_total <= 0.0 || p_total <= 0.0 {
        return 0.0;
    }
    active
        .iter()
        .zip(&probs)
        .filter(|(&i, _)| freqs[i] > 0.0)
        .map(|(&i, &p)| freqs[i] / f_total * (p.max(PROBABILITY_FLOOR) / p_total).ln())
        .sum()
}

/// Reconstructs the maximum-likelihood state from frequencies on the active
/// projectors of `set`.
pub fn reconstruct(freqs: &ProbabilityRecord, set: &ProjectorSet, cfg: &MaxLikConfig) -> Result<MaxLikResult> {
    cfg.validate()?;
    freqs.aligned_with(set)?;
    let n = set.n_qubits();
    let gram = gram_normalize(set)?;
    let w = match cfg.map {
        MaxLikMap::Corrected => gram.gram_inv_sqrt.clone(),
        MaxLikMap::GramFrame => &gram.gram_inv_sqrt * &gram.gram_inv_sqrt,
    };
    let active = set.active_indices();
    let f = &freqs.values;
    if active.iter().all(|&i| f[i] <= 0.0) {
        return Err(Error::Empty("all measured frequencies are zero".into()));
    }
    let track = |rho: &ComplexMatrix| match cfg.map {
        MaxLikMap::Corrected => log_likelihood(rho, set, f),
        MaxLikMap::GramFrame => normalized_log_likelihood(rho, set, f),
    };

    let mut rho = match &cfg.init {
        MaxLikInit::MaximallyMixed => DensityMatrix::maximally_mixed(n).into_matrix(),
        MaxLikInit::Explicit(s) => {
            if s.n_qubits() != n {
                return Err(Error::DimensionMismatch("initial state qubit count".into()));
            }
            s.matrix().clone()
        }
    };
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(track(&rho));
    }

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let r = r_operator_raw(&rho, set, &active, f);
        let next = (&(&(&(&w * &r) * &rho) * &r) * &w).hermitian_part();
        let tr = next.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidState(format!("iterate lost its trace ({tr})")));
        }
        let next = next.scale(1.0 / tr);
        let step = linalg::trace_distance(&next, &rho)?;
        rho = next;
        if cfg.record_history {
            history.push(track(&rho));
        }
        if step < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let final_log_likelihood = log_likelihood(&rho, set, f);
    let estimate = DensityMatrix::from_unnormalized(&rho, n)?;
    Ok(MaxLikResult {
        estimate,
        iterations_used: iterations,
        final_log_likelihood,
        converged,
        log_likelihood_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trace_distance;
    use crate::measurement::{born_probabilities, pauli_projectors, random_subset, RecordKind};
    use crate::states::{sample_bures_state, RandomSeed};

    #[test]
    fn r_equals_gram_at_exact_data() {
        let set = pauli_projectors(2).unwrap();
        let rho = sample_bures_state(2, &mut RandomSeed(41).rng()).unwrap();
        let p = born_probabilities(&rho, &set).unwrap();
        let r = r_operator(&rho, &set, &p).unwrap();
        assert!((&r - &ComplexMatrix::identity(4).scale(9.0)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn r_with_single_nonzero_frequency() {
        let set = pauli_projectors(2).unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        let mut values = vec![0.0; 36];
        values[4] = 0.3;
        let rec = ProbabilityRecord {
            kind: RecordKind::Frequency,
            values,
            active: vec![true; 36],
            total_counts: None,
        };
        let r = r_operator(&rho, &set, &rec).unwrap();
        let expected = set.projector(4).scale(0.3 / 0.25);
        assert!((&r - &expected).frobenius_norm() < 1e-14);
    }

    #[test]
    fn r_is_hermitian() {
        let set = pauli_projectors(2).unwrap();
        let mut rng = RandomSeed(42).rng();
        for _ in 0..20 {
            let rho = sample_bures_state(2, &mut rng).unwrap();
            let other = sample_bures_state(2, &mut rng).unwrap();
            let p = born_probabilities(&other, &set).unwrap();
            assert!(r_operator(&rho, &set, &p).unwrap().is_hermitian(1e-12));
        }
    }

    #[test]
    fn uniform_data_fixed_point() {
        let set = pauli_projectors(2).unwrap();
        let rec = ProbabilityRecord {
            kind: RecordKind::Frequency,
            values: vec![0.25; 36],
            active: vec![true; 36],
            total_counts: None,
        };
        let res = reconstruct(&rec, &set, &MaxLikConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((res.estimate.matrix() - mixed.matrix()).frobenius_norm() < 1e-14);
    }

    #[test]
    fn recovers_state_from_complete_exact_data() {
        let set = pauli_projectors(2).unwrap();
        let rho = sample_bures_state(2, &mut RandomSeed(43).rng()).unwrap();
        let p = born_probabilities(&rho, &set).unwrap();
        // Linear convergence, rate set by the smallest eigenvalue of the truth.
        let cfg = MaxLikConfig {
            max_iterations: 20_000,
            convergence_tol: 1e-13,
            ..MaxLikConfig::default()
        };
        let res = reconstruct(&p, &set, &cfg).unwrap();
        let dist = trace_distance(res.estimate.matrix(), rho.matrix()).unwrap();
        assert!(dist < 1e-6, "trace distance {dist} after {} iterations", res.iterations_used);
        let short = reconstruct(&p, &set, &MaxLikConfig { max_iterations: 100, ..cfg }).unwrap();
        let early = trace_distance(short.estimate.matrix(), rho.matrix()).unwrap();
        assert!(early > dist);
    }

    #[test]
    fn incomplete_subset_converges_to_valid_state() {
        let full = pauli_projectors(2).unwrap();
        let mut rng = RandomSeed(44).rng();
        let rho = sample_bures_state(2, &mut rng).unwrap();
        let set = loop {
            let s = random_subset(&full, 20, &mut rng).unwrap();
            if gram_normalize(&s).is_ok() {
                break s;
            }
        };
        let p = born_probabilities(&rho, &set).unwrap();
        let cfg = MaxLikConfig {
            max_iterations: 20_000,
            convergence_tol: 1e-9,
            ..MaxLikConfig::default()
        };
        for map in [MaxLikMap::Corrected, MaxLikMap::GramFrame] {
            let res = reconstruct(&p, &set, &MaxLikConfig { map, ..cfg.clone() }).unwrap();
            assert!(res.converged, "{map:?}: iterations {}", res.iterations_used);
            assert!(res.estimate.eigenvalues().unwrap().iter().all(|&l| l > -1e-10));
        }
    }

    #[test]
    fn gram_frame_keeps_truth_fixed_for_incomplete_data() {
        let full = pauli_projectors(2).unwrap();
        let mut rng = RandomSeed(45).rng();
        let rho = sample_bures_state(2, &mut rng).unwrap();
        let set = loop {
            let s = random_subset(&full, 24, &mut rng).unwrap();
            if gram_normalize(&s).is_ok() {
                break s;
            }
        };
        let p = born_probabilities(&rho, &set).unwrap();
        let cfg = MaxLikConfig {
            max_iterations: 1,
            init: MaxLikInit::Explicit(rho.clone()),
            map: MaxLikMap::GramFrame,
            ..MaxLikConfig::default()
        };
        let res = reconstruct(&p, &set, &cfg).unwrap();
        assert!(trace_distance(res.estimate.matrix(), rho.matrix()).unwrap() < 1e-12);
        // The corrected map moves away from the truth on the same data.
        let moved = reconstruct(&p, &set, &MaxLikConfig { map: MaxLikMap::Corrected, ..cfg }).unwrap();
        assert!(trace_distance(moved.estimate.matrix(), rho.matrix()).unwrap() > 1e-6);
    }

    #[test]
    fn singular_gram_is_reported() {
        let set = pauli_projectors(2).unwrap();
        let mut mask = vec![false; 36];
        mask[0] = true;
        let set = set.with_mask(mask).unwrap();
        let p = born_probabilities(&DensityMatrix::maximally_mixed(2), &set).unwrap();
        assert!(matches!(
            reconstruct(&p, &set, &MaxLikConfig::default()),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn likelihood_is_monotone_for_complete_data() {
        let set = pauli_projectors(2).unwrap();
        let mut rng = RandomSeed(46).rng();
        for _ in 0..100 {
            let rho = sample_bures_state(2, &mut rng).unwrap();
            let p = born_probabilities(&rho, &set).unwrap();
            let cfg = MaxLikConfig {
                max_iterations: 200,
                record_history: true,
                ..MaxLikConfig::default()
            };
            let res = reconstruct(&p, &set, &cfg).unwrap();
            for w in res.log_likelihood_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
            }
            let tr = res.estimate.matrix().trace().re;
            assert!((tr - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn both_likelihoods_agree_up_to_a_constant_on_the_full_set() {
        let set = pauli_projectors(2).unwrap();
        let mut rng = RandomSeed(47).rng();
        let truth = sample_bures_state(2, &mut rng).unwrap();
        let f = born_probabilities(&truth, &set).unwrap().values;
        let a = sample_bures_state(2, &mut rng).unwrap();
        let b = sample_bures_state(2, &mut rng).unwrap();
        let da = log_likelihood(a.matrix(), &set, &f) - normalized_log_likelihood(a.matrix(), &set, &f);
        let db = log_likelihood(b.matrix(), &set, &f) - normalized_log_likelihood(b.matrix(), &set, &f);
        assert!((da - db).abs() < 1e-12);
        assert!((da - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = MaxLikConfig {
            max_iterations: 0,
            ..MaxLikConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
