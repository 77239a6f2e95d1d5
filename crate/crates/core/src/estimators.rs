//! Training data and the two network-based estimators.
//!
//! A *specific* estimator sees only the probabilities of one fixed projector
//! subset. An *independent* estimator sees every canonical projector slot,
//! each encoded as the local Bloch vectors of the projector followed by its
//! probability, with unmeasured slots set to zero.
//!
//! # Dataset file format (version 1)
//!
//! UTF-8 text. A block of `# key=value` header lines comes first, starting
//! with `# qcorr-dataset v1`. Keys: `n_qubits`, `kind`, `encoding`
//! (`specific` or `independent`), `split`, `ensemble`, `seed`, `mask`
//! (`0`/`1` per canonical projector), `mask_hash`, `k_min` (independent
//! only), `input_width`, `target_width`, `rows`. Then one comma-separated
//! row per sample: the state index, `input_width` inputs, `target_width`
//! targets. Floats use the shortest representation that parses back to the
//! same value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{self, born_probabilities, pauli_projectors, ProbabilityRecord, ProjectorSet};
use crate::measures::{CorrelationKind, CorrelationTarget};
use crate::neural::{ModelFile, NetworkModel, NetworkSpec, Samples};
use crate::par;
use crate::states::{sample_bures_state, sample_noisy_pure, DensityMatrix, RandomSeed};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_MAGIC: &str = "# qcorr-dataset v1";

/// Which random states make up a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Four Bures states for every noisy pure state (index `i % 5 == 4`).
    BuresNoisyPure,
    Bures,
}

impl Ensemble {
    pub fn name(self) -> &'static str {
        match self {
            Ensemble::BuresNoisyPure => "bures_noisy_pure",
            Ensemble::Bures => "bures",
        }
    }
}

impl FromStr for Ensemble {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bures_noisy_pure" => Ok(Ensemble::BuresNoisyPure),
            "bures" => Ok(Ensemble::Bures),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Specific,
    Independent,
}

impl Encoding {
    pub fn name(self) -> &'static str {
        match self {
            Encoding::Specific => "specific",
            Encoding::Independent => "independent",
        }
    }
}

impl FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "specific" => Ok(Encoding::Specific),
            "independent" => Ok(Encoding::Independent),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

/// State `index` of an ensemble. Each index owns its own random stream, so
/// the state does not depend on how generation is split across threads.
pub fn sample_state(n_qubits: usize, ensemble: Ensemble, seed: RandomSeed, index: u64) -> Result<DensityMatrix> {
    let mut rng = seed.stream(index);
    match ensemble {
        Ensemble::BuresNoisyPure if index % 5 == 4 => sample_noisy_pure(n_qubits, &mut rng),
        _ => sample_bures_state(n_qubits, &mut rng),
    }
}

pub fn sample_states(n_qubits: usize, ensemble: Ensemble, seed: RandomSeed, count: usize) -> Result<Vec<DensityMatrix>> {
    par::try_map_range(count, |i| sample_state(n_qubits, ensemble, seed, i as u64))
}

/// Bures-only evaluation states, drawn from a seed domain disjoint from the
/// training streams.
pub fn test_states(n_qubits: usize, seed: RandomSeed, count: usize) -> Result<Vec<DensityMatrix>> {
    sample_states(n_qubits, Ensemble::Bures, seed.derive("test", 0), count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub n_qubits: usize,
    pub kind: CorrelationKind,
    pub encoding: Encoding,
    pub split: String,
    pub ensemble: Ensemble,
    pub seed: RandomSeed,
    /// Mask the inputs were taken from (the full set for independent data).
    pub mask: String,
    pub mask_hash: String,
    /// Smallest subset size of the per-sample masks (independent only).
    pub k_min: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDataset {
    pub meta: DatasetMeta,
    pub input_width: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Stream index of each sample's state within `meta.seed`.
    pub state_indices: Vec<u64>,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.state_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state_indices.is_empty()
    }

    pub fn target_width(&self) -> usize {
        self.meta.kind.width()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_width..(i + 1) * self.input_width]
    }

    pub fn target(&self, i: usize) -> CorrelationTarget {
        let w = self.target_width();
        CorrelationTarget {
            kind: self.meta.kind,
            values: self.targets[i * w..(i + 1) * w].to_vec(),
        }
    }

    pub fn to_samples(&self) -> Result<Samples> {
        Samples::new(
            self.inputs.clone(),
            self.input_width,
            self.targets.clone(),
            self.target_width(),
        )
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "{DATASET_MAGIC}");
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "# {k}={v}");
        };
        kv("n_qubits", &m.n_qubits);
        kv("kind", &m.kind);
        kv("encoding", &m.encoding.name());
        kv("split", &m.split);
        kv("ensemble", &m.ensemble.name());
        kv("seed", &m.seed.0);
        kv("mask", &m.mask);
        kv("mask_hash", &m.mask_hash);
        if let Some(k) = m.k_min {
            kv("k_min", &k);
        }
        kv("input_width", &self.input_width);
        kv("target_width", &self.target_width());
        kv("rows", &self.len());
        let tw = self.target_width();
        for (i, idx) in self.state_indices.iter().enumerate() {
            let _ = write!(s, "{idx}");
            for v in self.input(i).iter().chain(&self.targets[i * tw..(i + 1) * tw]) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == DATASET_MAGIC => {}
            Some((_, first)) if first.starts_with("# qcorr-dataset v") => {
                let found = first.trim()["# qcorr-dataset v".len()..].parse().unwrap_or(0);
                return Err(Error::UnsupportedVersion {
                    found,
                    expected: DATASET_FORMAT_VERSION,
                });
            }
            _ => return Err(perr(1, "missing dataset header".into())),
        }
        let mut header = BTreeMap::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| perr(i + 1, format!("malformed header line `{line}`")))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            } else if !line.trim().is_empty() {
                rows.push((i + 1, line));
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| perr(1, format!("header key `{k}` missing")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| perr(1, format!("header key `{k}` is not a count")))
        };
        let kind: CorrelationKind = get("kind")?.parse()?;
        let meta = DatasetMeta {
            n_qubits: num("n_qubits")?,
            kind,
            encoding: get("encoding")?.parse()?,
            split: get("split")?.to_string(),
            ensemble: get("ensemble")?.parse()?,
            seed: RandomSeed(
                get("seed")?
                    .parse()
                    .map_err(|_| perr(1, "bad seed".into()))?,
            ),
            mask: get("mask")?.to_string(),
            mask_hash: get("mask_hash")?.to_string(),
            k_min: match header.get("k_min") {
                Some(_) => Some(num("k_min")?),
                None => None,
            },
        };
        let input_width = num("input_width")?;
        let target_width = num("target_width")?;
        if target_width != kind.width() {
            return Err(perr(1, format!("target width {target_width} does not fit {kind}")));
        }
        let expected_rows = num("rows")?;
        if rows.len() != expected_rows {
            return Err(Error::Corrupt(format!(
                "{source}: header announces {expected_rows} rows, found {}",
                rows.len()
            )));
        }
        let mut inputs = Vec::with_capacity(rows.len() * input_width);
        let mut targets = Vec::with_capacity(rows.len() * target_width);
        let mut state_indices = Vec::with_capacity(rows.len());
        for (ln, row) in rows {
            let mut fields = row.split(',');
            let idx = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| perr(ln, "bad state index".into()))?;
            state_indices.push(idx);
            let mut count = 0;
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| perr(ln, format!("bad number `{f}`")))?;
                if count < input_width {
                    inputs.push(v);
                } else {
                    targets.push(v);
                }
                count += 1;
            }
            if count != input_width + target_width {
                return Err(perr(
                    ln,
                    format!("expected {} values, found {count}", input_width + target_width),
                ));
            }
        }
        Ok(Self {
            meta,
            input_width,
            inputs,
            targets,
            state_indices,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn check_kind(set: &ProjectorSet, kind: CorrelationKind) -> Result<()> {
    if kind.n_qubits() != set.n_qubits() {
        return Err(Error::Config(format!(
            "{kind} needs {} qubits, projectors act on {}",
            kind.n_qubits(),
            set.n_qubits()
        )));
    }
    Ok(())
}

/// Shuffled order of `0..n` split 4:1 into train and validation indices.
fn split_indices(n: usize, seed: RandomSeed) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<u64> = (0..n as u64).collect();
    order.shuffle(&mut seed.derive("shuffle", 0).rng());
    let n_train = n * 4 / 5;
    let val = order.split_off(n_train);
    (order, val)
}

fn assemble(
    meta: DatasetMeta,
    split: &str,
    input_width: usize,
    indices: Vec<u64>,
    rows: &[(Vec<f64>, Vec<f64>)],
) -> TrainingDataset {
    let mut inputs = Vec::with_capacity(indices.len() * input_width);
    let mut targets = Vec::new();
    for &i in &indices {
        let (x, y) = &rows[i as usize];
        inputs.extend_from_slice(x);
        targets.extend_from_slice(y);
    }
    TrainingDataset {
        meta: DatasetMeta {
            split: split.to_string(),
            ..meta
        },
        input_width,
        inputs,
        targets,
        state_indices: indices,
    }
}

/// Exact-probability data for a measurement-specific network: inputs are the
/// Born probabilities on the active projectors of `set`.
pub fn build_training_set(
    n_states: usize,
    set: &ProjectorSet,
    kind: CorrelationKind,
    seed: RandomSeed,
) -> Result<(TrainingDataset, TrainingDataset)> {
    check_kind(set, kind)?;
    if set.active_count() == 0 {
        return Err(Error::Config("specific data needs at least one active projector".into()));
    }
    let rows = par::try_map_range(n_states, |i| {
        let rho = sample_state(set.n_qubits(), Ensemble::BuresNoisyPure, seed, i as u64)?;
        let x = born_probabilities(&rho, set)?.active_values();
        Ok::<_, Error>((x, kind.evaluate(&rho)?.values))
    })?;
    let meta = DatasetMeta {
        n_qubits: set.n_qubits(),
        kind,
        encoding: Encoding::Specific,
        split: String::new(),
        ensemble: Ensemble::BuresNoisyPure,
        seed,
        mask: set.mask_string(),
        mask_hash: set.mask_hash(),
        k_min: None,
    };
    let (tr, va) = split_indices(n_states, seed);
    let w = set.active_count();
    Ok((
        assemble(meta.clone(), "train", w, tr, &rows),
        assemble(meta, "val", w, va, &rows),
    ))
}

/// Bures-only test data for a specific network; states come from
/// [`test_states`], in index order.
pub fn build_test_set(
    n_states: usize,
    set: &ProjectorSet,
    kind: CorrelationKind,
    seed: RandomSeed,
) -> Result<TrainingDataset> {
    check_kind(set, kind)?;
    let test_seed = seed.derive("test", 0);
    let rows = par::try_map_range(n_states, |i| {
        let rho = sample_state(set.n_qubits(), Ensemble::Bures, test_seed, i as u64)?;
        let x = born_probabilities(&rho, set)?.active_values();
        Ok::<_, Error>((x, kind.evaluate(&rho)?.values))
    })?;
    let meta = DatasetMeta {
        n_qubits: set.n_qubits(),
        kind,
        encoding: Encoding::Specific,
        split: String::new(),
        ensemble: Ensemble::Bures,
        seed: test_seed,
        mask: set.mask_string(),
        mask_hash: set.mask_hash(),
        k_min: None,
    };
    Ok(assemble(meta, "test", set.active_count(), (0..n_states as u64).collect(), &rows))
}

/// Bures-only test data for the independent network, one random mask per
/// sample.
pub fn build_independent_test_set(
    n_states: usize,
    n_qubits: usize,
    kind: CorrelationKind,
    k_min: usize,
    seed: RandomSeed,
) -> Result<TrainingDataset> {
    let full = pauli_projectors(n_qubits)?;
    check_kind(&full, kind)?;
    let test_seed = seed.derive("test", 0);
    let rows = par::try_map_range(n_states, |i| {
        let rho = sample_state(n_qubits, Ensemble::Bures, test_seed, i as u64)?;
        let set = sample_mask(&full, k_min, test_seed, i as u64)?;
        let probs = born_probabilities(&rho, &full)?.restricted_to(set.mask())?;
        Ok::<_, Error>((encode_independent_input(&set, &probs)?, kind.evaluate(&rho)?.values))
    })?;
    let meta = DatasetMeta {
        n_qubits,
        kind,
        encoding: Encoding::Independent,
        split: String::new(),
        ensemble: Ensemble::Bures,
        seed: test_seed,
        mask: full.mask_string(),
        mask_hash: full.mask_hash(),
        k_min: Some(k_min),
    };
    let w = independent_input_width(n_qubits);
    Ok(assemble(meta, "test", w, (0..n_states as u64).collect(), &rows))
}

/// Random mask for sample `index` of an independent dataset: size uniform in
/// `[k_min, 6^n]`, members uniform without replacement.
pub fn sample_mask(full: &ProjectorSet, k_min: usize, seed: RandomSeed, index: u64) -> Result<ProjectorSet> {
    let mut rng = seed.derive("mask", index).rng();
    let hi = full.len();
    if k_min == 0 || k_min > hi {
        return Err(Error::OutOfRange(format!("k_min {k_min} outside [1, {hi}]")));
    }
    let k = rng.random_range(k_min..=hi);
    measurement::random_subset(full, k, &mut rng)
}

/// Data for the measurement-independent network. Every sample is measured
/// with its own random mask (see [`sample_mask`]).
pub fn build_independent_set(
    n_states: usize,
    n_qubits: usize,
    kind: CorrelationKind,
    k_min: usize,
    seed: RandomSeed,
) -> Result<(TrainingDataset, TrainingDataset)> {
    let full = pauli_projectors(n_qubits)?;
    check_kind(&full, kind)?;
    let rows = par::try_map_range(n_states, |i| {
        let rho = sample_state(n_qubits, Ensemble::BuresNoisyPure, seed, i as u64)?;
        let set = sample_mask(&full, k_min, seed, i as u64)?;
        let probs = born_probabilities(&rho, &full)?.restricted_to(set.mask())?;
        Ok::<_, Error>((encode_independent_input(&set, &probs)?, kind.evaluate(&rho)?.values))
    })?;
    let meta = DatasetMeta {
        n_qubits,
        kind,
        encoding: Encoding::Independent,
        split: String::new(),
        ensemble: Ensemble::BuresNoisyPure,
        seed,
        mask: full.mask_string(),
        mask_hash: full.mask_hash(),
        k_min: Some(k_min),
    };
    let (tr, va) = split_indices(n_states, seed);
    let w = independent_input_width(n_qubits);
    Ok((
        assemble(meta.clone(), "train", w, tr, &rows),
        assemble(meta, "val", w, va, &rows),
    ))
}

/// Reals per projector slot: one Bloch vector per qubit plus the probability.
pub fn slot_width(n_qubits: usize) -> usize {
    3 * n_qubits + 1
}

pub fn independent_input_width(n_qubits: usize) -> usize {
    6usize.pow(n_qubits as u32) * slot_width(n_qubits)
}

/// Fixed-length encoding over all `6ⁿ` canonical slots. An active slot holds
/// the Bloch vectors of the local projectors followed by the probability;
/// inactive slots are zero.
pub fn encode_independent_input(set: &ProjectorSet, probs: &ProbabilityRecord) -> Result<Vec<f64>> {
    probs.aligned_with(set)?;
    let w = slot_width(set.n_qubits());
    let mut out = vec![0.0; set.len() * w];
    for i in set.active_indices() {
        let slot = &mut out[i * w..(i + 1) * w];
        for (q, pol) in set.setting(i).iter().enumerate() {
            slot[3 * q..3 * q + 3].copy_from_slice(&pol.bloch());
        }
        slot[w - 1] = probs.values[i];
    }
    Ok(out)
}

/// Hidden layout used for the desk-scale networks. The full-size profile is
/// [`crate::neural::DEFAULT_HIDDEN_WIDTHS`].
pub const DESK_HIDDEN_WIDTHS: [usize; 6] = [128, 128, 96, 64, 48, 32];

/// Conv channels per projector slot of the independent network.
pub const DESK_CONV_CHANNELS: usize = 12;

pub fn specific_network(set: &ProjectorSet, kind: CorrelationKind, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::dense(set.active_count(), hidden, kind.width())
}

pub fn independent_network(n_qubits: usize, kind: CorrelationKind, channels: usize, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::conv_dense(
        independent_input_width(n_qubits),
        slot_width(n_qubits),
        channels,
        hidden,
        kind.width(),
    )
}

fn to_target(kind: CorrelationKind, out: &[f64]) -> CorrelationTarget {
    CorrelationTarget {
        kind,
        values: out.iter().map(|v| v * kind.target_max()).collect(),
    }
}

fn meta_get<'a>(file: &'a ModelFile, key: &str) -> Result<&'a str> {
    file.meta
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Corrupt(format!("model metadata lacks `{key}`")))
}

/// A network tied to one projector mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecificEstimator {
    pub model: NetworkModel,
    pub kind: CorrelationKind,
    pub n_qubits: usize,
    pub mask: Vec<bool>,
    pub mask_hash: String,
}

impl SpecificEstimator {
    pub fn new(model: NetworkModel, set: &ProjectorSet, kind: CorrelationKind) -> Result<Self> {
        check_kind(set, kind)?;
        if model.input_width() != set.active_count() || model.output_width() != kind.width() {
            return Err(Error::DimensionMismatch(format!(
                "network {}→{} for {} active projectors and {kind}",
                model.input_width(),
                model.output_width(),
                set.active_count()
            )));
        }
        Ok(Self {
            model,
            kind,
            n_qubits: set.n_qubits(),
            mask: set.mask().to_vec(),
            mask_hash: set.mask_hash(),
        })
    }

    fn check(&self, probs: &ProbabilityRecord) -> Result<()> {
        let found = measurement::mask_hash(self.n_qubits, &probs.active);
        if probs.active.len() != self.mask.len() || found != self.mask_hash {
            return Err(Error::MaskMismatch {
                expected: self.mask_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn predict(&self, probs: &ProbabilityRecord) -> Result<CorrelationTarget> {
        self.check(probs)?;
        Ok(to_target(self.kind, &self.model.forward(&probs.active_values())?))
    }

    pub fn predict_batch(&self, records: &[ProbabilityRecord]) -> Result<Vec<CorrelationTarget>> {
        let mut x = Vec::with_capacity(records.len() * self.model.input_width());
        for r in records {
            self.check(r)?;
            x.extend(r.active_values());
        }
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.model.forward_batch(&x)?;
        Ok(out.chunks(self.kind.width()).map(|o| to_target(self.kind, o)).collect())
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut f = ModelFile::new(self.model.clone());
        f.meta.insert("estimator".into(), "specific".into());
        f.meta.insert("kind".into(), self.kind.to_string());
        f.meta.insert("n_qubits".into(), self.n_qubits.to_string());
        f.meta.insert("mask".into(), measurement::mask_to_string(&self.mask));
        f.meta.insert("mask_hash".into(), self.mask_hash.clone());
        f
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if meta_get(&file, "estimator")? != "specific" {
            return Err(Error::Config("model is not a measurement-specific estimator".into()));
        }
        let kind: CorrelationKind = meta_get(&file, "kind")?.parse()?;
        let n: usize = meta_get(&file, "n_qubits")?
            .parse()
            .map_err(|_| Error::Corrupt("bad n_qubits metadata".into()))?;
        let mask = measurement::mask_from_string(meta_get(&file, "mask")?)?;
        let set = pauli_projectors(n)?.with_mask(mask)?;
        let est = Self::new(file.model.clone(), &set, kind)?;
        if meta_get(&file, "mask_hash")? != est.mask_hash {
            return Err(Error::Corrupt("stored mask hash does not match stored mask".into()));
        }
        Ok(est)
    }
}

/// A prediction from the independent estimator. `informative` is false when
/// no projector was active, in which case the value carries no information
/// about the state.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentPrediction {
    pub target: CorrelationTarget,
    pub informative: bool,
}

/// One network for every projector subset.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentEstimator {
    pub model: NetworkModel,
    pub kind: CorrelationKind,
    pub n_qubits: usize,
}

impl IndependentEstimator {
    pub fn new(model: NetworkModel, kind: CorrelationKind) -> Result<Self> {
        let n = kind.n_qubits();
        if n == 3 && !cfg!(feature = "three-qubit-independent") {
            return Err(Error::Config(
                "the three-qubit independent estimator needs the `three-qubit-independent` feature".into(),
            ));
        }
        if model.input_width() != independent_input_width(n) || model.output_width() != kind.width() {
            return Err(Error::DimensionMismatch(format!(
                "network {}→{} cannot serve {kind} (needs {}→{})",
                model.input_width(),
                model.output_width(),
                independent_input_width(n),
                kind.width()
            )));
        }
        Ok(Self {
            model,
            kind,
            n_qubits: n,
        })
    }

    pub fn predict(&self, set: &ProjectorSet, probs: &ProbabilityRecord) -> Result<IndependentPrediction> {
        if set.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{}-qubit projectors for a {}-qubit estimator",
                set.n_qubits(),
                self.n_qubits
            )));
        }
        let x = encode_independent_input(set, probs)?;
        Ok(IndependentPrediction {
            target: to_target(self.kind, &self.model.forward(&x)?),
            informative: set.active_count() > 0,
        })
    }

    /// Batched prediction over `(set, probs)` pairs that may use different masks.
    pub fn predict_batch(&self, queries: &[(&ProjectorSet, &ProbabilityRecord)]) -> Result<Vec<CorrelationTarget>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = Vec::with_capacity(queries.len() * self.model.input_width());
        for (set, probs) in queries {
            x.extend(encode_independent_input(set, probs)?);
        }
        let out = self.model.forward_batch(&x)?;
        Ok(out.chunks(self.kind.width()).map(|o| to_target(self.kind, o)).collect())
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut f = ModelFile::new(self.model.clone());
        f.meta.insert("estimator".into(), "independent".into());
        f.meta.insert("kind".into(), self.kind.to_string());
        f.meta.insert("n_qubits".into(), self.n_qubits.to_string());
        f
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if meta_get(&file, "estimator")? != "independent" {
            return Err(Error::Config("model is not a measurement-independent estimator".into()));
        }
        let kind: CorrelationKind = meta_get(&file, "kind")?.parse()?;
        Self::new(file.model, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::random_subset;

    fn full2() -> ProjectorSet {
        pauli_projectors(2).unwrap()
    }

    #[test]
    fn split_is_four_to_one() {
        let (tr, va) = build_training_set(1000, &full2(), CorrelationKind::Concurrence, RandomSeed(3)).unwrap();
        assert_eq!((tr.len(), va.len()), (800, 200));
        let mut all: Vec<u64> = tr.state_indices.iter().chain(&va.state_indices).copied().collect();
        all.sort_unstable();
        assert!(all.iter().enumerate().all(|(i, &v)| v == i as u64));
        for i in 0..tr.len() {
            assert!(tr.target(i).in_bounds(1e-12));
        }
    }

    #[test]
    fn targets_regenerate_from_stored_indices() {
        let mut rng = RandomSeed(1).rng();
        let set = random_subset(&full2(), 20, &mut rng).unwrap();
        for kind in [CorrelationKind::Concurrence, CorrelationKind::MutualInfo2q] {
            let (tr, _) = build_training_set(50, &set, kind, RandomSeed(9)).unwrap();
            for i in 0..tr.len() {
                let rho = sample_state(2, Ensemble::BuresNoisyPure, RandomSeed(9), tr.state_indices[i]).unwrap();
                let t = kind.evaluate(&rho).unwrap();
                assert!((t.values[0] - tr.target(i).values[0]).abs() < 1e-12);
                let p = born_probabilities(&rho, &set).unwrap().active_values();
                assert_eq!(p, tr.input(i));
                let expect_noisy = tr.state_indices[i] % 5 == 4;
                // Noisy pure states have a (d-1)-fold degenerate spectrum.
                let ev = rho.eigenvalues().unwrap();
                if expect_noisy {
                    assert!((ev[1] - ev[3]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ensemble_mix_is_four_bures_per_noisy_pure() {
        let (tr, va) = build_training_set(100, &full2(), CorrelationKind::Concurrence, RandomSeed(2)).unwrap();
        let noisy = tr
            .state_indices
            .iter()
            .chain(&va.state_indices)
            .filter(|&&i| i % 5 == 4)
            .count();
        assert_eq!(noisy, 20);
    }

    #[test]
    fn three_qubit_target_needs_three_qubits() {
        let err = build_training_set(10, &full2(), CorrelationKind::MutualInfo3q, RandomSeed(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn regeneration_is_identical_and_parallelism_free() {
        let set = full2();
        let a = build_training_set(60, &set, CorrelationKind::Concurrence, RandomSeed(5)).unwrap();
        let b = par::sequential(|| build_training_set(60, &set, CorrelationKind::Concurrence, RandomSeed(5)).unwrap());
        assert_eq!(a.0.to_text(), b.0.to_text());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn test_sets_use_the_test_domain() {
        let full = full2();
        let t = build_test_set(30, &full, CorrelationKind::Concurrence, RandomSeed(5)).unwrap();
        let states = test_states(2, RandomSeed(5), 30).unwrap();
        for (i, rho) in states.iter().enumerate() {
            assert_eq!(t.input(i), &born_probabilities(rho, &full).unwrap().active_values()[..]);
        }
        let (tr, _) = build_training_set(30, &full, CorrelationKind::Concurrence, RandomSeed(5)).unwrap();
        assert!((0..tr.len()).all(|i| tr.input(i) != t.input(tr.state_indices[i] as usize)));
        let ti = build_independent_test_set(10, 2, CorrelationKind::Concurrence, 8, RandomSeed(5)).unwrap();
        assert_eq!((ti.len(), ti.meta.split.as_str()), (10, "test"));
    }

    #[test]
    fn encoding_slots() {
        let full = full2();
        let rho = sample_state(2, Ensemble::Bures, RandomSeed(4), 0).unwrap();
        let p = born_probabilities(&rho, &full).unwrap();
        let x = encode_independent_input(&full, &p).unwrap();
        assert_eq!(x.len(), 36 * 7);
        for slot in x.chunks(7) {
            assert!(slot.iter().any(|&v| v != 0.0));
            let n1: f64 = slot[0..3].iter().map(|v| v * v).sum();
            let n2: f64 = slot[3..6].iter().map(|v| v * v).sum();
            assert!((n1 - 1.0).abs() < 1e-15 && (n2 - 1.0).abs() < 1e-15);
        }
        // HV: qubit 0 = H (+z), qubit 1 = V (-z).
        let hv = full.index_of("HV").unwrap();
        assert_eq!(&x[hv * 7..hv * 7 + 6], &[0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
        assert_eq!(x[hv * 7 + 6], p.values[hv]);

        let mut rng = RandomSeed(8).rng();
        let sub = random_subset(&full, 12, &mut rng).unwrap();
        let ps = p.restricted_to(sub.mask()).unwrap();
        let xs = encode_independent_input(&sub, &ps).unwrap();
        assert_eq!(xs.len(), 36 * 7);
        let zero = xs.chunks(7).filter(|s| s.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero, 24);
        for i in sub.active_indices() {
            assert_eq!(&xs[i * 7..(i + 1) * 7], &x[i * 7..(i + 1) * 7]);
        }
        assert!(encode_independent_input(&sub, &p).is_err());
    }

    #[test]
    fn encoding_distinguishes_zero_probability_from_missing() {
        let full = full2();
        let rho = crate::states::named_state("product_hh").unwrap();
        let p = born_probabilities(&rho, &full).unwrap();
        let vh = full.index_of("VH").unwrap();
        assert_eq!(p.values[vh], 0.0);
        let x = encode_independent_input(&full, &p).unwrap();
        let mut mask = vec![true; 36];
        mask[vh] = false;
        let sub = full.with_mask(mask.clone()).unwrap();
        let y = encode_independent_input(&sub, &p.restricted_to(&mask).unwrap()).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn independent_set_uses_per_sample_masks() {
        let (tr, va) = build_independent_set(50, 2, CorrelationKind::Concurrence, 8, RandomSeed(6)).unwrap();
        assert_eq!((tr.len(), va.len()), (40, 10));
        assert_eq!(tr.input_width, 252);
        let mut sizes = std::collections::BTreeSet::new();
        for i in 0..tr.len() {
            let active = tr.input(i).chunks(7).filter(|s| s.iter().any(|&v| v != 0.0)).count();
            assert!((8..=36).contains(&active));
            sizes.insert(active);
        }
        assert!(sizes.len() > 5);
    }

    #[test]
    fn dataset_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RandomSeed(1).rng();
        let set = random_subset(&full2(), 17, &mut rng).unwrap();
        let (tr, _) = build_training_set(40, &set, CorrelationKind::MutualInfo2q, RandomSeed(7)).unwrap();
        let path = dir.path().join("d.csv");
        tr.save(&path).unwrap();
        assert_eq!(TrainingDataset::load(&path).unwrap(), tr);

        let (ind, _) = build_independent_set(10, 2, CorrelationKind::Concurrence, 4, RandomSeed(7)).unwrap();
        assert_eq!(TrainingDataset::from_text(&ind.to_text(), "x").unwrap(), ind);

        let text = tr.to_text();
        let bad_version = text.replacen("v1", "v0", 1);
        assert!(matches!(
            TrainingDataset::from_text(&bad_version, "x"),
            Err(Error::UnsupportedVersion { found: 0, .. })
        ));
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(TrainingDataset::from_text(&truncated, "x").is_err());
    }

    #[test]
    fn specific_estimator_guards_its_mask() {
        let full = full2();
        let mut rng = RandomSeed(2).rng();
        let sub = random_subset(&full, 24, &mut rng).unwrap();
        let model = NetworkModel::new(specific_network(&sub, CorrelationKind::Concurrence, &[8]), RandomSeed(1)).unwrap();
        let est = SpecificEstimator::new(model, &sub, CorrelationKind::Concurrence).unwrap();
        let rho = sample_state(2, Ensemble::Bures, RandomSeed(3), 0).unwrap();
        let p = born_probabilities(&rho, &sub).unwrap();
        let t = est.predict(&p).unwrap();
        assert!(t.in_bounds(0.0));
        assert_eq!(est.predict_batch(&[p.clone(), p.clone()]).unwrap()[1], t);

        let other = random_subset(&full, 24, &mut rng).unwrap();
        let q = born_probabilities(&rho, &other).unwrap();
        assert!(matches!(est.predict(&q), Err(Error::MaskMismatch { .. })));
        let all = born_probabilities(&rho, &full).unwrap();
        assert!(matches!(est.predict(&all), Err(Error::MaskMismatch { .. })));

        let back = SpecificEstimator::from_model_file(est.to_model_file()).unwrap();
        assert_eq!(back, est);
        assert!(IndependentEstimator::from_model_file(est.to_model_file()).is_err());
    }

    #[test]
    fn independent_estimator_accepts_any_mask() {
        let spec = independent_network(2, CorrelationKind::Concurrence, 4, &[8]);
        let est = IndependentEstimator::new(NetworkModel::new(spec, RandomSeed(1)).unwrap(), CorrelationKind::Concurrence).unwrap();
        let full = full2();
        let rho = sample_state(2, Ensemble::Bures, RandomSeed(3), 1).unwrap();
        let p = born_probabilities(&rho, &full).unwrap();
        let whole = est.predict(&full, &p).unwrap();
        assert!(whole.informative && whole.target.in_bounds(0.0));

        let mut rng = RandomSeed(5).rng();
        for _ in 0..2 {
            let sub = random_subset(&full, 18, &mut rng).unwrap();
            let r = est.predict(&sub, &p.restricted_to(sub.mask()).unwrap()).unwrap();
            assert!(r.informative && r.target.in_bounds(0.0));
        }
        let none = full.with_mask(vec![false; 36]).unwrap();
        let empty = est.predict(&none, &p.restricted_to(none.mask()).unwrap()).unwrap();
        assert!(!empty.informative);
        assert!(empty.target.in_bounds(0.0));

        let back = IndependentEstimator::from_model_file(est.to_model_file()).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn three_qubit_encoding_generalizes() {
        let full = pauli_projectors(3).unwrap();
        let rho = crate::states::named_state("ghz").unwrap();
        let p = born_probabilities(&rho, &full).unwrap();
        let x = encode_independent_input(&full, &p).unwrap();
        assert_eq!(x.len(), 216 * 10);
        let spec = independent_network(3, CorrelationKind::MutualInfo3q, 2, &[4]);
        let made = IndependentEstimator::new(NetworkModel::new(spec, RandomSeed(1)).unwrap(), CorrelationKind::MutualInfo3q);
        assert_eq!(made.is_ok(), cfg!(feature = "three-qubit-independent"));
    }
}
