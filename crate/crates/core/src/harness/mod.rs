//! Experiment engine behind the command-line tool: configurations, model
//! training and caching, the error sweeps and the file-producing commands.
//!
//! Every seed used by an experiment is derived from its configured run seed,
//! so a rerun with the same configuration reproduces every output file byte
//! for byte. Wall-clock timings never enter those files; they go to a
//! `.timing` sidecar next to each output.

mod commands;
mod report;
mod sweep;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    self, build_independent_set, build_training_set, independent_network, specific_network,
    IndependentEstimator, SpecificEstimator, DESK_CONV_CHANNELS, DESK_HIDDEN_WIDTHS,
};
use crate::maxlik::{MaxLikConfig, MaxLikMap};
use crate::measurement::{gram_normalize, pauli_projectors, random_subset, ProjectorSet};
use crate::measures::CorrelationKind;
use crate::neural::{self, ModelFile, NAdamHyper, NetworkModel, NetworkSpec, TrainConfig, TrainHistory};
use crate::states::RandomSeed;

pub use commands::{
    cmd_gen_data, cmd_maxlik, cmd_predict, cmd_train, GenDataConfig, GenDataReport, MaxLikCommand,
    MaxLikReport, PredictCommand, PredictReport, TrainCommand, TrainReport,
};
pub use report::{config_hash, timing_path};
pub use sweep::{
    cmd_sweep_mae, cmd_werner_sweep, run_mae_sweep, run_werner_sweep, werner_concurrence, SweepCell,
    SweepConfig, SweepResult, WernerConfig, WernerPoint, WernerResult,
};

/// Architecture, data size and optimizer schedule for one kind of network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkProfile {
    pub hidden: Vec<usize>,
    /// Conv channels per projector slot (independent networks only).
    pub conv_channels: usize,
    /// States generated per training run, split 4:1 into train and validation.
    pub n_states: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub patience: usize,
    pub incremental: bool,
    pub dataset_refresh_size: usize,
    pub learning_rate: f64,
}

impl Default for NetworkProfile {
    fn default() -> Self {
        Self::desk_specific()
    }
}

impl NetworkProfile {
    pub fn desk_specific() -> Self {
        Self {
            hidden: DESK_HIDDEN_WIDTHS.to_vec(),
            conv_channels: DESK_CONV_CHANNELS,
            n_states: 50_000,
            epochs: 500,
            batches_per_epoch: 100,
            patience: 200,
            incremental: false,
            dataset_refresh_size: 40_000,
            learning_rate: 0.001,
        }
    }

    /// The independent network overfits a fixed 40k-sample set, so it
    /// trains incrementally on fresh data whenever validation stalls.
    pub fn desk_independent() -> Self {
        Self {
            incremental: true,
            patience: 5,
            ..Self::desk_specific()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.conv_channels == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.n_states < 5 {
            return Err(Error::Config("a training run needs at least 5 states".into()));
        }
        if self.n_states * 4 / 5 < self.batches_per_epoch {
            return Err(Error::Config(format!(
                "{} training samples cannot fill {} batches",
                self.n_states * 4 / 5,
                self.batches_per_epoch
            )));
        }
        self.train_config(RandomSeed(0)).validate()
    }

    pub fn train_config(&self, seed: RandomSeed) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batches_per_epoch: self.batches_per_epoch,
            patience: self.patience,
            incremental: self.incremental,
            dataset_refresh_size: self.dataset_refresh_size,
            hyper: NAdamHyper {
                lr: self.learning_rate,
                ..NAdamHyper::default()
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxLikSettings {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub map: MaxLikMap,
}

impl Default for MaxLikSettings {
    fn default() -> Self {
        let d = MaxLikConfig::default();
        Self {
            max_iterations: d.max_iterations,
            convergence_tol: d.convergence_tol,
            map: d.map,
        }
    }
}

impl MaxLikSettings {
    pub fn config(&self) -> MaxLikConfig {
        MaxLikConfig {
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            map: self.map,
            ..MaxLikConfig::default()
        }
    }
}

/// Settings shared by everything that trains models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    #[serde(deserialize_with = "specific_profile")]
    pub specific: NetworkProfile,
    #[serde(deserialize_with = "independent_profile")]
    pub independent: NetworkProfile,
    /// Smallest mask size seen while training the independent network.
    pub k_min: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            specific: NetworkProfile::desk_specific(),
            independent: NetworkProfile::desk_independent(),
            k_min: 8,
        }
    }
}

/// Profile fields given in a config; the rest come from a base profile, so
/// a partial `[models.independent]` table keeps the independent defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfilePatch {
    hidden: Option<Vec<usize>>,
    conv_channels: Option<usize>,
    n_states: Option<usize>,
    epochs: Option<usize>,
    batches_per_epoch: Option<usize>,
    patience: Option<usize>,
    incremental: Option<bool>,
    dataset_refresh_size: Option<usize>,
    learning_rate: Option<f64>,
}

impl ProfilePatch {
    fn over(self, base: NetworkProfile) -> NetworkProfile {
        NetworkProfile {
            hidden: self.hidden.unwrap_or(base.hidden),
            conv_channels: self.conv_channels.unwrap_or(base.conv_channels),
            n_states: self.n_states.unwrap_or(base.n_states),
            epochs: self.epochs.unwrap_or(base.epochs),
            batches_per_epoch: self.batches_per_epoch.unwrap_or(base.batches_per_epoch),
            patience: self.patience.unwrap_or(base.patience),
            incremental: self.incremental.unwrap_or(base.incremental),
            dataset_refresh_size: self.dataset_refresh_size.unwrap_or(base.dataset_refresh_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
        }
    }
}

fn specific_profile<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NetworkProfile, D::Error> {
    Ok(ProfilePatch::deserialize(d)?.over(NetworkProfile::desk_specific()))
}

fn independent_profile<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NetworkProfile, D::Error> {
    Ok(ProfilePatch::deserialize(d)?.over(NetworkProfile::desk_independent()))
}

/// Which estimators a sweep evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Methods {
    pub maxlik: bool,
    pub specific: bool,
    pub independent: bool,
}

impl Default for Methods {
    fn default() -> Self {
        Self {
            maxlik: true,
            specific: true,
            independent: true,
        }
    }
}

/// `count` masks of size `k` with invertible Gram operator, drawn from the
/// `(seed, k)` stream. Singular draws are discarded and counted.
pub fn draw_masks(full: &ProjectorSet, k: usize, count: usize, seed: RandomSeed) -> Result<(Vec<ProjectorSet>, usize)> {
    if k == 0 || k > full.len() {
        return Err(Error::Config(format!("projector count {k} outside [1, {}]", full.len())));
    }
    let mut rng = seed.derive("masks", k as u64).rng();
    let mut masks = Vec::with_capacity(count);
    let mut resampled = 0;
    let limit = 1000 * count.max(1);
    while masks.len() < count {
        let set = random_subset(full, k, &mut rng)?;
        if gram_normalize(&set).is_ok() {
            masks.push(set);
        } else {
            resampled += 1;
            if resampled > limit {
                return Err(Error::Config(format!(
                    "no {k}-projector subset with invertible Gram operator found in {limit} draws"
                )));
            }
        }
    }
    Ok((masks, resampled))
}

/// Trained estimators for one experiment, keyed by projector count and
/// repetition, optionally persisted in a directory.
pub struct ModelStore {
    n_qubits: usize,
    kind: CorrelationKind,
    seed: RandomSeed,
    settings: ModelSettings,
    dir: Option<PathBuf>,
    specific: HashMap<(usize, usize), SpecificEstimator>,
    independent: Option<IndependentEstimator>,
    /// `(name, model digest, history)` for every model in use.
    pub provenance: Vec<(String, String, Option<TrainHistory>)>,
}

impl ModelStore {
    pub fn new(n_qubits: usize, kind: CorrelationKind, seed: RandomSeed, settings: ModelSettings, dir: Option<&Path>) -> Self {
        Self {
            n_qubits,
            kind,
            seed,
            settings,
            dir: dir.map(Path::to_path_buf),
            specific: HashMap::new(),
            independent: None,
            provenance: Vec::new(),
        }
    }

    /// Specific estimator number `rep` for mask `set` (of size `k`).
    pub fn specific(&mut self, set: &ProjectorSet, rep: usize) -> Result<&SpecificEstimator> {
        let k = set.active_count();
        if !self.specific.contains_key(&(k, rep)) {
            let name = format!("specific_k{k}_r{rep}");
            let seed = self.seed.derive("specific", (k * 1000 + rep) as u64);
            let recipe = recipe_hash(&("specific", self.kind, set.mask_string(), seed, &self.settings.specific))?;
            let est = match self.load(&name, &recipe)? {
                Some(f) => {
                    let e = SpecificEstimator::from_model_file(f)?;
                    if e.mask != set.mask() {
                        return Err(Error::Corrupt(format!("{name}: cached model has a different mask")));
                    }
                    self.note(&name, &e.to_model_file(), None)?;
                    e
                }
                None => {
                    let (e, history) = train_specific(set, self.kind, &self.settings.specific, seed)?;
                    let mut f = e.to_model_file();
                    f.meta.insert("recipe".into(), recipe);
                    self.save(&name, &f)?;
                    self.note(&name, &f, Some(history))?;
                    e
                }
            };
            self.specific.insert((k, rep), est);
        }
        Ok(&self.specific[&(k, rep)])
    }

    pub fn independent(&mut self) -> Result<&IndependentEstimator> {
        if self.independent.is_none() {
            let name = "independent".to_string();
            let seed = self.seed.derive("independent", 0);
            let recipe = recipe_hash(&(
                "independent",
                self.kind,
                self.settings.k_min,
                seed,
                &self.settings.independent,
            ))?;
            let est = match self.load(&name, &recipe)? {
                Some(f) => {
                    let e = IndependentEstimator::from_model_file(f)?;
                    self.note(&name, &e.to_model_file(), None)?;
                    e
                }
                None => {
                    let (e, history) = train_independent(
                        self.n_qubits,
                        self.kind,
                        self.settings.k_min,
                        &self.settings.independent,
                        seed,
                    )?;
                    let mut f = e.to_model_file();
                    f.meta.insert("recipe".into(), recipe);
                    self.save(&name, &f)?;
                    self.note(&name, &f, Some(history))?;
                    e
                }
            };
            self.independent = Some(est);
        }
        Ok(self.independent.as_ref().expect("just inserted"))
    }

    fn note(&mut self, name: &str, file: &ModelFile, history: Option<TrainHistory>) -> Result<()> {
        if !self.provenance.iter().any(|(n, _, _)| n == name) {
            let mut f = file.clone();
            f.meta.remove("recipe");
            self.provenance.push((name.to_string(), f.digest()?, history));
        }
        Ok(())
    }

    fn load(&self, name: &str, recipe: &str) -> Result<Option<ModelFile>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(format!("{name}.qcnn"));
        if !path.exists() {
            return Ok(None);
        }
        let f = ModelFile::load(&path)?;
        Ok((f.meta.get("recipe").map(String::as_str) == Some(recipe)).then_some(f))
    }

    fn save(&self, name: &str, file: &ModelFile) -> Result<()> {
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            file.save(&dir.join(format!("{name}.qcnn")))?;
        }
        Ok(())
    }
}

fn recipe_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates data for `set`, trains a specific network and returns the
/// best-validation estimator.
pub fn train_specific(
    set: &ProjectorSet,
    kind: CorrelationKind,
    profile: &NetworkProfile,
    seed: RandomSeed,
) -> Result<(SpecificEstimator, TrainHistory)> {
    profile.validate()?;
    let (train, val) = build_training_set(profile.n_states, set, kind, seed.derive("data", 0))?;
    let spec = specific_network(set, kind, &profile.hidden);
    let mut refresh = |round: usize, size: usize| {
        let (t, _) = build_training_set(size * 5 / 4, set, kind, seed.derive("refresh", round as u64))?;
        t.to_samples()
    };
    let (model, history) = fit(spec, &train, &val, profile, seed, &mut refresh)?;
    Ok((SpecificEstimator::new(model, set, kind)?, history))
}

pub fn train_independent(
    n_qubits: usize,
    kind: CorrelationKind,
    k_min: usize,
    profile: &NetworkProfile,
    seed: RandomSeed,
) -> Result<(IndependentEstimator, TrainHistory)> {
    profile.validate()?;
    let (train, val) = build_independent_set(profile.n_states, n_qubits, kind, k_min, seed.derive("data", 0))?;
    let spec = independent_network(n_qubits, kind, profile.conv_channels, &profile.hidden);
    let mut refresh = |round: usize, size: usize| {
        let (t, _) = build_independent_set(size * 5 / 4, n_qubits, kind, k_min, seed.derive("refresh", round as u64))?;
        t.to_samples()
    };
    let (model, history) = fit(spec, &train, &val, profile, seed, &mut refresh)?;
    Ok((IndependentEstimator::new(model, kind)?, history))
}

fn fit(
    spec: NetworkSpec,
    train: &estimators::TrainingDataset,
    val: &estimators::TrainingDataset,
    profile: &NetworkProfile,
    seed: RandomSeed,
    refresh: &mut neural::Refresh<'_>,
) -> Result<(NetworkModel, TrainHistory)> {
    let model = NetworkModel::new(spec, seed.derive("init", 0))?;
    let cfg = profile.train_config(seed.derive("shuffle", 0));
    let out = neural::train(model, train.to_samples()?, &val.to_samples()?, &cfg, Some(refresh))?;
    Ok((out.model, out.history))
}

/// Full canonical projector set, with a clear error for unsupported sizes.
pub(crate) fn full_set(n_qubits: usize) -> Result<ProjectorSet> {
    pauli_projectors(n_qubits).map_err(|_| Error::Config(format!("unsupported qubit count {n_qubits}")))
}

pub(crate) fn check_kind(n_qubits: usize, kind: CorrelationKind) -> Result<()> {
    if kind.n_qubits() != n_qubits {
        return Err(Error::Config(format!(
            "{kind} is defined for {} qubits, configuration has {n_qubits}",
            kind.n_qubits()
        )));
    }
    Ok(())
}
