//! Local Pauli projectors, subset masks, Born probabilities, Gram
//! normalization of incomplete sets, and count simulation/ingestion.
//!
//! # Counts file format
//!
//! UTF-8 text. Lines starting with `#` and blank lines are ignored. An
//! optional header line `label,counts` or `label,counts,shots` may precede
//! the data rows. Each row is `label,counts[,shots]` where `label` is a word
//! over `{H,V,D,A,R,L}` of length `n_qubits` (2 or 3, equal for all rows),
//! `counts` a non-negative integer and `shots` an optional positive integer
//! at least `counts`.
//!
//! Frequencies are normalized as follows:
//!
//! - a row with a `shots` value gets `f = counts / shots`;
//! - rows without `shots` are grouped by their basis pattern (the `2ⁿ` labels
//!   sharing the per-qubit bases `{H,V}`, `{D,A}`, `{R,L}`) and get
//!   `f = counts / Σ counts` over the rows present in that group. When the
//!   group is complete this is the per-basis relative frequency.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, kron_vec, ComplexMatrix, C64};
use crate::states::DensityMatrix;

/// Smallest Gram eigenvalue accepted for maximum-likelihood normalization.
pub const GRAM_MIN_EIGENVALUE: f64 = 1e-10;

/// Single-qubit polarization projector labels in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 6] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
        Polarization::R,
        Polarization::L,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'H' => Some(Polarization::H),
            'V' => Some(Polarization::V),
            'D' => Some(Polarization::D),
            'A' => Some(Polarization::A),
            'R' => Some(Polarization::R),
            'L' => Some(Polarization::L),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        ['H', 'V', 'D', 'A', 'R', 'L'][self.index()]
    }

    /// H=(1,0), V=(0,1), D=(1,1)/√2, A=(1,−1)/√2, R=(1,i)/√2, L=(1,−i)/√2.
    pub fn ket(self) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (z, o) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        match self {
            Polarization::H => [o, z],
            Polarization::V => [z, o],
            Polarization::D => [C64::new(h, 0.0), C64::new(h, 0.0)],
            Polarization::A => [C64::new(h, 0.0), C64::new(-h, 0.0)],
            Polarization::R => [C64::new(h, 0.0), C64::new(0.0, h)],
            Polarization::L => [C64::new(h, 0.0), C64::new(0.0, -h)],
        }
    }

    /// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` of the projector.
    pub fn bloch(self) -> [f64; 3] {
        match self {
            Polarization::H => [0.0, 0.0, 1.0],
            Polarization::V => [0.0, 0.0, -1.0],
            Polarization::D => [1.0, 0.0, 0.0],
            Polarization::A => [-1.0, 0.0, 0.0],
            Polarization::R => [0.0, 1.0, 0.0],
            Polarization::L => [0.0, -1.0, 0.0],
        }
    }

    /// 0 for `{H,V}`, 1 for `{D,A}`, 2 for `{R,L}`.
    pub fn basis(self) -> usize {
        self.index() / 2
    }
}

/// The canonical list of `6ⁿ` local projectors with an activity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorSet {
    n_qubits: usize,
    settings: Vec<Vec<Polarization>>,
    kets: Vec<Vec<C64>>,
    projectors: Vec<ComplexMatrix>,
    labels: Vec<String>,
    active: Vec<bool>,
}

impl ProjectorSet {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Size of the full canonical set.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn projectors(&self) -> &[ComplexMatrix] {
        &self.projectors
    }

    pub fn projector(&self, i: usize) -> &ComplexMatrix {
        &self.projectors[i]
    }

    pub fn ket(&self, i: usize) -> &[C64] {
        &self.kets[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn setting(&self, i: usize) -> &[Polarization] {
        &self.settings[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn is_full(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    /// Canonical index of a label such as `"HV"`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        label_index(label, self.n_qubits)
    }

    pub fn with_mask(&self, mask: Vec<bool>) -> Result<ProjectorSet> {
        if mask.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask of length {} for {} projectors",
                mask.len(),
                self.len()
            )));
        }
        let mut s = self.clone();
        s.active = mask;
        Ok(s)
    }

    /// Mask as a string of `0`/`1` in canonical order.
    pub fn mask_string(&self) -> String {
        mask_to_string(&self.active)
    }

    /// Stable 64-bit hex digest of the qubit count and mask.
    pub fn mask_hash(&self) -> String {
        mask_hash(self.n_qubits, &self.active)
    }

    /// Basis-pattern id of projector `i`, in `0..3ⁿ`.
    pub fn basis_pattern(&self, i: usize) -> usize {
        self.settings[i].iter().fold(0, |acc, p| acc * 3 + p.basis())
    }

    /// `G = Σ M_i` over active projectors.
    pub fn gram(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut g = ComplexMatrix::zeros(d, d);
        for i in self.active_indices() {
            g.add_outer(&self.kets[i], 1.0);
        }
        g
    }
}

pub fn mask_to_string(mask: &[bool]) -> String {
    mask.iter().map(|&a| if a { '1' } else { '0' }).collect()
}

pub fn mask_from_string(s: &str) -> Result<Vec<bool>> {
    s.trim()
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(Error::Config(format!("invalid mask character `{other}`"))),
        })
        .collect()
}

pub fn mask_hash(n_qubits: usize, mask: &[bool]) -> String {
    let mut h = Sha256::new();
    h.update([n_qubits as u8]);
    h.update(mask_to_string(mask).as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn label_index(label: &str, n_qubits: usize) -> Option<usize> {
    let chars: Vec<char> = label.trim().chars().collect();
    if chars.len() != n_qubits {
        return None;
    }
    chars
        .iter()
        .try_fold(0, |acc, &c| Polarization::from_char(c).map(|p| acc * 6 + p.index()))
}

/// Full canonical set: 36 projectors for two qubits, 216 for three, ordered
/// lexicographically in `(H, V, D, A, R, L)` per qubit.
pub fn pauli_projectors(n_qubits: usize) -> Result<ProjectorSet> {
    if !matches!(n_qubits, 2 | 3) {
        return Err(Error::UnsupportedQubits(n_qubits));
    }
    let count = 6usize.pow(n_qubits as u32);
    let mut settings = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rest = idx;
        let mut s = vec![Polarization::H; n_qubits];
        for q in (0..n_qubits).rev() {
            s[q] = Polarization::ALL[rest % 6];
            rest /= 6;
        }
        settings.push(s);
    }
    let kets: Vec<Vec<C64>> = settings
        .iter()
        .map(|s| {
            s.iter()
                .skip(1)
                .fold(s[0].ket().to_vec(), |acc, p| kron_vec(&acc, &p.ket()))
        })
        .collect();
    let projectors = kets.iter().map(|k| ComplexMatrix::outer(k)).collect();
    let labels = settings
        .iter()
        .map(|s| s.iter().map(|p| p.as_char()).collect())
        .collect();
    Ok(ProjectorSet {
        n_qubits,
        settings,
        kets,
        projectors,
        labels,
        active: vec![true; count],
    })
}

/// `k` projectors drawn uniformly without replacement from the active ones.
pub fn random_subset<R: Rng + ?Sized>(set: &ProjectorSet, k: usize, rng: &mut R) -> Result<ProjectorSet> {
    let candidates = set.active_indices();
    if k == 0 || k > candidates.len() {
        return Err(Error::OutOfRange(format!(
            "subset size {k} outside [1, {}]",
            candidates.len()
        )));
    }
    let mut mask = vec![false; set.len()];
    for pick in rand::seq::index::sample(rng, candidates.len(), k) {
        mask[candidates[pick]] = true;
    }
    set.with_mask(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    ExactBorn,
    Frequency,
}

/// Probabilities or relative frequencies aligned to the canonical projector
/// order; inactive entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityRecord {
    pub kind: RecordKind,
    pub values: Vec<f64>,
    pub active: Vec<bool>,
    pub total_counts: Option<Vec<u64>>,
}

impl ProbabilityRecord {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn aligned_with(&self, set: &ProjectorSet) -> Result<()> {
        if self.values.len() != set.len() || self.active.len() != set.len() {
            return Err(Error::DimensionMismatch(format!(
                "record of length {} for {} projectors",
                self.values.len(),
                set.len()
            )));
        }
        if self.active != set.mask() {
            return Err(Error::MaskMismatch {
                expected: set.mask_string(),
                found: mask_to_string(&self.active),
            });
        }
        Ok(())
    }

    /// Restricts the record to a smaller mask (entries outside it are zeroed).
    pub fn restricted_to(&self, mask: &[bool]) -> Result<ProbabilityRecord> {
        if mask.len() != self.values.len() {
            return Err(Error::DimensionMismatch("mask length".into()));
        }
        if mask.iter().zip(&self.active).any(|(&m, &a)| m && !a) {
            return Err(Error::MaskMismatch {
                expected: mask_to_string(&self.active),
                found: mask_to_string(mask),
            });
        }
        let values = self
            .values
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        let total_counts = self.total_counts.as_ref().map(|t| {
            t.iter().zip(mask).map(|(&c, &m)| if m { c } else { 0 }).collect()
        });
        Ok(ProbabilityRecord {
            kind: self.kind,
            values,
            active: mask.to_vec(),
            total_counts,
        })
    }

    /// Largest deviation from 1 among complete bases present in the record.
    pub fn max_basis_sum_deviation(&self, set: &ProjectorSet) -> f64 {
        let mut sums: HashMap<usize, (f64, usize)> = HashMap::new();
        for (i, (&v, &a)) in self.values.iter().zip(&self.active).enumerate() {
            if a {
                let e = sums.entry(set.basis_pattern(i)).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let full = set.dim();
        sums.values()
            .filter(|(_, n)| *n == full)
            .map(|(s, _)| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Born probabilities `p_i = Tr(ρ M_i)` on the active projectors.
pub fn born_probabilities(rho: &DensityMatrix, set: &ProjectorSet) -> Result<ProbabilityRecord> {
    if rho.n_qubits() != set.n_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "{}-qubit state with {}-qubit projectors",
            rho.n_qubits(),
            set.n_qubits()
        )));
    }
    let m = rho.matrix();
    let values = (0..set.len())
        .map(|i| {
            if set.is_active(i) {
                m.expectation(set.ket(i)).re.clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(ProbabilityRecord {
        kind: RecordKind::ExactBorn,
        values,
        active: set.mask().to_vec(),
        total_counts: None,
    })
}

/// Active projectors mapped to `M_i' = G^{-1/2} M_i G^{-1/2}`.
#[derive(Clone, Debug)]
pub struct GramNormalized {
    /// Canonical indices of the active projectors.
    pub indices: Vec<usize>,
    /// `M_i'` for each entry of `indices`.
    pub normalized: Vec<ComplexMatrix>,
    pub gram: ComplexMatrix,
    pub gram_inv_sqrt: ComplexMatrix,
}

pub fn gram_normalize(set: &ProjectorSet) -> Result<GramNormalized> {
    let gram = set.gram();
    let gram_inv_sqrt = linalg::inverse_sqrt_pd(&gram, GRAM_MIN_EIGENVALUE)?;
    let indices = set.active_indices();
    let normalized = indices
        .iter()
        .map(|&i| &(&gram_inv_sqrt * set.projector(i)) * &gram_inv_sqrt)
        .collect();
    Ok(GramNormalized {
        indices,
        normalized,
        gram,
        gram_inv_sqrt,
    })
}

/// Independent binomial counts per active projector.
pub fn simulate_counts<R: Rng + ?Sized>(
    probs: &ProbabilityRecord,
    shots_per_projector: u64,
    rng: &mut R,
) -> Result<ProbabilityRecord> {
    if shots_per_projector == 0 {
        return Err(Error::OutOfRange("shots per projector must be positive".into()));
    }
    if probs.kind != RecordKind::ExactBorn {
        return Err(Error::Config("count simulation needs exact Born probabilities".into()));
    }
    let mut values = vec![0.0; probs.len()];
    let mut totals = vec![0; probs.len()];
    for i in 0..probs.len() {
        if !probs.active[i] {
            continue;
        }
        let p = probs.values[i].clamp(0.0, 1.0);
        let k = Binomial::new(shots_per_projector, p)
            .map_err(|e| Error::OutOfRange(format!("binomial parameter: {e}")))?
            .sample(rng);
        values[i] = k as f64 / shots_per_projector as f64;
        totals[i] = shots_per_projector;
    }
    Ok(ProbabilityRecord {
        kind: RecordKind::Frequency,
        values,
        active: probs.active.clone(),
        total_counts: Some(totals),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub label: String,
    pub counts: u64,
    pub shots: Option<u64>,
}

/// Reads a counts file (see the module docs for the format).
pub fn load_counts_file(path: impl AsRef<Path>) -> Result<(ProjectorSet, ProbabilityRecord)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_counts(&text, &path.display().to_string())
}

pub fn parse_counts(text: &str, source: &str) -> Result<(ProjectorSet, ProbabilityRecord)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rows: Vec<(usize, CountRow)> = Vec::new();
    let mut seen_data = false;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_data && fields.first().is_some_and(|f| f.eq_ignore_ascii_case("label")) {
            let header_ok = fields.len() >= 2
                && fields.len() <= 3
                && fields[1].eq_ignore_ascii_case("counts")
                && fields.get(2).is_none_or(|f| f.eq_ignore_ascii_case("shots"));
            if !header_ok {
                return Err(parse_err(line_no, format!("unexpected header `{line}`")));
            }
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(line_no, format!("expected `label,counts[,shots]`, got `{line}`")));
        }
        let counts: u64 = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid count `{}`", fields[1])))?;
        let shots = match fields.get(2) {
            Some(s) if !s.is_empty() => {
                let v: u64 = s
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid shots `{s}`")))?;
                if v == 0 || v < counts {
                    return Err(parse_err(line_no, format!("shots {v} must be positive and at least counts {counts}")));
                }
                Some(v)
            }
            _ => None,
        };
        rows.push((
            line_no,
            CountRow {
                label: fields[0].to_ascii_uppercase(),
                counts,
                shots,
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{source} contains no count rows")));
    }
    let n_qubits = rows[0].1.label.chars().count();
    if !matches!(n_qubits, 2 | 3) {
        return Err(parse_err(rows[0].0, format!("unknown label `{}`", rows[0].1.label)));
    }
    let full = pauli_projectors(n_qubits)?;
    let mut mask = vec![false; full.len()];
    let mut counts = vec![0u64; full.len()];
    let mut shots: Vec<Option<u64>> = vec![None; full.len()];
    for (line_no, row) in &rows {
        let idx = full
            .index_of(&row.label)
            .ok_or_else(|| parse_err(*line_no, format!("unknown label `{}`", row.label)))?;
        if mask[idx] {
            return Err(parse_err(*line_no, format!("duplicate label `{}`", row.label)));
        }
        mask[idx] = true;
        counts[idx] = row.counts;
        shots[idx] = row.shots;
    }

    let mut group_totals: HashMap<usize, u64> = HashMap::new();
    for i in 0..full.len() {
        if mask[i] && shots[i].is_none() {
            *group_totals.entry(full.basis_pattern(i)).or_default() += counts[i];
        }
    }
    let mut values = vec![0.0; full.len()];
    let mut totals = vec![0u64; full.len()];
    for i in 0..full.len() {
        if !mask[i] {
            continue;
        }
        let total = shots[i].unwrap_or_else(|| group_totals[&full.basis_pattern(i)]);
        totals[i] = total;
        values[i] = if total == 0 { 0.0 } else { counts[i] as f64 / total as f64 };
    }
    let set = full.with_mask(mask.clone())?;
    Ok((
        set,
        ProbabilityRecord {
            kind: RecordKind::Frequency,
            values,
            active: mask,
            total_counts: Some(totals),
        },
    ))
}

/// Writes counts in the file format understood by [`load_counts_file`].
pub fn format_counts(set: &ProjectorSet, counts: &[u64], shots: Option<&[u64]>) -> String {
    let mut out = String::new();
    out.push_str(if shots.is_some() { "label,counts,shots\n" } else { "label,counts\n" });
    for i in set.active_indices() {
        match shots {
            Some(s) => out.push_str(&format!("{},{},{}\n", set.label(i), counts[i], s[i])),
            None => out.push_str(&format!("{},{}\n", set.label(i), counts[i])),
        }
    }
    out
}

/// Parses a probabilities file: the header `label,probability` then rows
/// `label,value` with values in `[0, 1]`. The result is an exact record.
pub fn parse_probabilities(text: &str, source: &str) -> Result<(ProjectorSet, ProbabilityRecord)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut header = false;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header {
            if fields.len() != 2 || !fields[0].eq_ignore_ascii_case("label") || !fields[1].eq_ignore_ascii_case("probability") {
                return Err(parse_err(n + 1, "expected header `label,probability`".into()));
            }
            header = true;
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(n + 1, format!("expected `label,probability`, got `{line}`")));
        }
        let v: f64 = fields[1]
            .parse()
            .ok()
            .filter(|v: &f64| (0.0..=1.0).contains(v))
            .ok_or_else(|| parse_err(n + 1, format!("invalid probability `{}`", fields[1])))?;
        rows.push((n + 1, fields[0].to_ascii_uppercase(), v));
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{source} contains no probability rows")));
    }
    let n_qubits = rows[0].1.chars().count();
    if !matches!(n_qubits, 2 | 3) {
        return Err(parse_err(rows[0].0, format!("unknown label `{}`", rows[0].1)));
    }
    let full = pauli_projectors(n_qubits)?;
    let mut mask = vec![false; full.len()];
    let mut values = vec![0.0; full.len()];
    for (line_no, label, v) in rows {
        let idx = full
            .index_of(&label)
            .ok_or_else(|| parse_err(line_no, format!("unknown label `{label}`")))?;
        if mask[idx] {
            return Err(parse_err(line_no, format!("duplicate label `{label}`")));
        }
        mask[idx] = true;
        values[idx] = v;
    }
    let set = full.with_mask(mask.clone())?;
    Ok((
        set,
        ProbabilityRecord {
            kind: RecordKind::ExactBorn,
            values,
            active: mask,
            total_counts: None,
        },
    ))
}

/// Writes the active entries of a record in the probabilities file format.
pub fn format_probabilities(set: &ProjectorSet, probs: &ProbabilityRecord) -> String {
    let mut out = String::from("label,probability\n");
    for i in set.active_indices() {
        out.push_str(&format!("{},{}\n", set.label(i), probs.values[i]));
    }
    out
}

/// Loads either a probabilities file (header `label,probability`) or a
/// counts file.
pub fn load_record_file(path: impl AsRef<Path>) -> Result<(ProjectorSet, ProbabilityRecord)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if first.to_ascii_lowercase().replace(' ', "") == "label,probability" {
        parse_probabilities(&text, &source)
    } else {
        parse_counts(&text, &source)
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::ExactBorn => "exact_born",
            RecordKind::Frequency => "frequency",
        })
    }
}
