//! Error-versus-projector-count sweeps and Werner-state curves.
//!
//! All methods see the same test states and, per projector count, the same
//! mask draws: specific network `r` is trained on mask `r` of the MaxLik and
//! independent-network draw. Noisy records come from an RNG keyed by
//! `(count, mask, state)`, so every method also sees the same noise.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{config_hash, num, Document};
use super::{check_kind, draw_masks, full_set, MaxLikSettings, Methods, ModelSettings, ModelStore};
use crate::error::{Error, Result};
use crate::estimators::test_states;
use crate::maxlik::reconstruct;
use crate::measurement::{born_probabilities, simulate_counts, ProbabilityRecord, ProjectorSet};
use crate::measures::{CorrelationKind, CorrelationTarget};
use crate::par;
use crate::states::{werner_state, DensityMatrix, RandomSeed};

pub const MAXLIK: &str = "maxlik";
pub const SPECIFIC: &str = "specific";
pub const INDEPENDENT: &str = "independent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_qubits: usize,
    pub kind: CorrelationKind,
    pub projector_counts: Vec<usize>,
    pub n_specific_networks_per_count: usize,
    pub n_random_measurements: usize,
    pub test_set_size: usize,
    /// Finite-statistics records instead of exact probabilities.
    pub shots_per_projector: Option<u64>,
    pub seed: u64,
    pub methods: Methods,
    pub maxlik: MaxLikSettings,
    pub models: ModelSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            kind: CorrelationKind::Concurrence,
            projector_counts: vec![36, 32, 28, 24, 20, 18, 16, 12, 8],
            n_specific_networks_per_count: 3,
            n_random_measurements: 50,
            test_set_size: 500,
            shots_per_projector: None,
            seed: 1,
            methods: Methods::default(),
            maxlik: MaxLikSettings::default(),
            models: ModelSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_kind(self.n_qubits, self.kind)?;
        let full = full_set(self.n_qubits)?.len();
        validate_counts(&self.projector_counts, full)?;
        if self.test_set_size == 0 || self.n_random_measurements == 0 || self.n_specific_networks_per_count == 0 {
            return Err(Error::Config("sweep sizes must be positive".into()));
        }
        if self.shots_per_projector == Some(0) {
            return Err(Error::Config("shots_per_projector must be positive".into()));
        }
        self.maxlik.config().validate()?;
        if self.methods.specific {
            self.models.specific.validate()?;
        }
        if self.methods.independent {
            self.models.independent.validate()?;
        }
        Ok(())
    }

    pub fn model_store(&self, dir: Option<&Path>) -> ModelStore {
        ModelStore::new(
            self.n_qubits,
            self.kind,
            model_seed(self.seed),
            self.models.clone(),
            dir,
        )
    }
}

fn validate_counts(counts: &[usize], full: usize) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::Config("projector_counts is empty".into()));
    }
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > full) {
        return Err(Error::Config(format!("projector count {k} outside [1, {full}]")));
    }
    Ok(())
}

/// Models depend on the run seed only, so sweeps sharing a seed share models.
fn model_seed(seed: u64) -> RandomSeed {
    RandomSeed(seed).derive("models", 0)
}

/// MAE of one method at one projector count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub std: f64,
    pub repetitions: usize,
    /// MAE of each repetition (mask or trained network).
    pub values: Vec<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
    /// Singular-Gram mask draws discarded per projector count.
    pub resampled: Vec<(usize, usize)>,
    /// `(model name, digest)` of every network used.
    pub models: Vec<(String, String)>,
}

impl SweepResult {
    pub fn cell(&self, method: &str, k: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.k == k)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cell(method: &str, k: usize, values: Vec<f64>, started: Instant) -> SweepCell {
    let (mean, std) = mean_std(&values);
    SweepCell {
        method: method.to_string(),
        k,
        mean,
        std,
        repetitions: values.len(),
        values,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Records of `states` under mask `m` of count `k`, exact or noisy.
fn records(
    states: &[DensityMatrix],
    full: &ProjectorSet,
    mask: &ProjectorSet,
    shots: Option<u64>,
    noise: RandomSeed,
) -> Result<Vec<ProbabilityRecord>> {
    par::try_map_range(states.len(), |s| {
        let exact = born_probabilities(&states[s], full)?.restricted_to(mask.mask())?;
        match shots {
            None => Ok(exact),
            Some(n) => simulate_counts(&exact, n, &mut noise.stream(s as u64)),
        }
    })
}

fn noise_seed(seed: u64, k: usize, m: usize) -> RandomSeed {
    RandomSeed(seed).derive("noise", (k as u64) << 32 | m as u64)
}

fn mae(truth: &[CorrelationTarget], est: &[CorrelationTarget]) -> f64 {
    truth.iter().zip(est).map(|(t, e)| t.abs_error(e)).sum::<f64>() / truth.len() as f64
}

/// MaxLik estimate of `kind` for each record.
fn maxlik_estimates(
    recs: &[ProbabilityRecord],
    mask: &ProjectorSet,
    kind: CorrelationKind,
    settings: &MaxLikSettings,
) -> Result<Vec<CorrelationTarget>> {
    let cfg = settings.config();
    par::try_map_range(recs.len(), |i| kind.evaluate(&reconstruct(&recs[i], mask, &cfg)?.estimate))
}

pub fn run_mae_sweep(cfg: &SweepConfig, store: &mut ModelStore) -> Result<SweepResult> {
    cfg.validate()?;
    let full = full_set(cfg.n_qubits)?;
    let seed = RandomSeed(cfg.seed);
    let states = test_states(cfg.n_qubits, seed, cfg.test_set_size)?;
    let truth = par::try_map_range(states.len(), |i| cfg.kind.evaluate(&states[i]))?;
    let draws = cfg.n_random_measurements.max(cfg.n_specific_networks_per_count);

    let mut cells = Vec::new();
    let mut resampled = Vec::new();
    for &k in &cfg.projector_counts {
        let (masks, skipped) = draw_masks(&full, k, draws, seed)?;
        resampled.push((k, skipped));
        let mut recs: HashMap<usize, Vec<ProbabilityRecord>> = HashMap::new();
        let mut recs_for = |m: usize| -> Result<Vec<ProbabilityRecord>> {
            if let std::collections::hash_map::Entry::Vacant(slot) = recs.entry(m) {
                slot.insert(records(&states, &full, &masks[m], cfg.shots_per_projector, noise_seed(cfg.seed, k, m))?);
            }
            Ok(recs[&m].clone())
        };

        if cfg.methods.maxlik {
            let t = Instant::now();
            // Identical masks with exact data give identical results.
            let mut seen: HashMap<String, f64> = HashMap::new();
            let mut values = Vec::with_capacity(cfg.n_random_measurements);
            for m in 0..cfg.n_random_measurements {
                let key = masks[m].mask_string();
                let v = match seen.get(&key) {
                    Some(&v) if cfg.shots_per_projector.is_none() => v,
                    _ => {
                        let est = maxlik_estimates(&recs_for(m)?, &masks[m], cfg.kind, &cfg.maxlik)?;
                        mae(&truth, &est)
                    }
                };
                seen.insert(key, v);
                values.push(v);
            }
            cells.push(cell(MAXLIK, k, values, t));
        }
        if cfg.methods.specific {
            let t = Instant::now();
            let mut values = Vec::new();
            for r in 0..cfg.n_specific_networks_per_count {
                let recs = recs_for(r)?;
                let est = store.specific(&masks[r], r)?.predict_batch(&recs)?;
                values.push(mae(&truth, &est));
            }
            cells.push(cell(SPECIFIC, k, values, t));
        }
        if cfg.methods.independent {
            let t = Instant::now();
            let mut values = Vec::new();
            for m in 0..cfg.n_random_measurements {
                let recs = recs_for(m)?;
                let queries: Vec<_> = recs.iter().map(|r| (&masks[m], r)).collect();
                let est = store.independent()?.predict_batch(&queries)?;
                values.push(mae(&truth, &est));
            }
            cells.push(cell(INDEPENDENT, k, values, t));
        }
    }
    Ok(SweepResult {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        cells,
        resampled,
        models: store.provenance.iter().map(|(n, d, _)| (n.clone(), d.clone())).collect(),
    })
}

fn provenance_header(doc: &mut Document, hash: &str, config: &impl Serialize, seed: u64) -> Result<()> {
    doc.meta("config_hash", hash)
        .meta("config", serde_json::to_string(config)?)
        .meta("seed", seed)
        .meta("model_seed", model_seed(seed).0)
        .meta("test_seed", RandomSeed(seed).derive("test", 0).0)
        .meta("band", "sample standard deviation over repetitions");
    Ok(())
}

/// Runs the sweep and writes it to `out`. Models are cached in `model_dir`
/// when given.
pub fn cmd_sweep_mae(cfg: &SweepConfig, out: &Path, model_dir: Option<&Path>) -> Result<SweepResult> {
    let mut store = cfg.model_store(model_dir);
    let result = run_mae_sweep(cfg, &mut store)?;
    let mut doc = Document::new("qcorr-sweep-mae/1");
    provenance_header(&mut doc, &result.config_hash, cfg, cfg.seed)?;
    doc.meta("kind", cfg.kind).meta(
        "data",
        cfg.shots_per_projector
            .map_or("exact".to_string(), |n| format!("{n} shots per projector")),
    );
    for (k, n) in &result.resampled {
        doc.meta(&format!("resampled_singular_masks.k{k}"), n);
    }
    for (name, digest) in &result.models {
        doc.meta(&format!("model.{name}"), digest);
    }
    doc.columns(&["method", "k", "mae_mean", "mae_std", "repetitions"]);
    for c in &result.cells {
        doc.row(vec![c.method.clone(), c.k.to_string(), num(c.mean), num(c.std), c.repetitions.to_string()]);
        doc.timing(format!("{}.k{}", c.method, c.k), c.seconds);
    }
    doc.write(out)?;
    Ok(result)
}

/// `max(0, (3p − 1)/2)`.
pub fn werner_concurrence(p: f64) -> f64 {
    ((3.0 * p - 1.0) / 2.0).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WernerConfig {
    pub projector_counts: Vec<usize>,
    /// Evenly spaced points on `[0, 1]`, endpoints included.
    pub p_points: usize,
    pub n_specific_networks_per_count: usize,
    pub n_random_measurements: usize,
    pub shots_per_projector: Option<u64>,
    pub seed: u64,
    pub methods: Methods,
    pub maxlik: MaxLikSettings,
    pub models: ModelSettings,
}

impl Default for WernerConfig {
    fn default() -> Self {
        Self {
            projector_counts: vec![36, 28, 18, 8],
            p_points: 21,
            n_specific_networks_per_count: 3,
            n_random_measurements: 50,
            shots_per_projector: None,
            seed: 1,
            methods: Methods::default(),
            maxlik: MaxLikSettings::default(),
            models: ModelSettings::default(),
        }
    }
}

impl WernerConfig {
    pub fn validate(&self) -> Result<()> {
        validate_counts(&self.projector_counts, 36)?;
        if self.p_points < 2 || self.n_random_measurements == 0 || self.n_specific_networks_per_count == 0 {
            return Err(Error::Config("p_points must be ≥ 2 and repetition counts positive".into()));
        }
        if self.shots_per_projector == Some(0) {
            return Err(Error::Config("shots_per_projector must be positive".into()));
        }
        self.maxlik.config().validate()?;
        if self.methods.specific {
            self.models.specific.validate()?;
        }
        if self.methods.independent {
            self.models.independent.validate()?;
        }
        Ok(())
    }

    pub fn model_store(&self, dir: Option<&Path>) -> ModelStore {
        ModelStore::new(2, CorrelationKind::Concurrence, model_seed(self.seed), self.models.clone(), dir)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.p_points).map(|i| i as f64 / (self.p_points - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WernerPoint {
    pub method: String,
    pub k: usize,
    pub p: f64,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WernerResult {
    pub config_hash: String,
    pub points: Vec<WernerPoint>,
    /// Largest gap between the closed form and the concurrence of the
    /// constructed Werner matrices.
    pub truth_check: f64,
    pub resampled: Vec<(usize, usize)>,
    pub models: Vec<(String, String)>,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl WernerResult {
    /// Mean over the p-grid of |mean estimate − closed form|.
    pub fn curve_deviation(&self, method: &str, k: usize) -> Option<f64> {
        let pts: Vec<_> = self.points.iter().filter(|p| p.method == method && p.k == k).collect();
        (!pts.is_empty()).then(|| pts.iter().map(|p| (p.mean - p.truth).abs()).sum::<f64>() / pts.len() as f64)
    }
}

pub fn run_werner_sweep(cfg: &WernerConfig, store: &mut ModelStore) -> Result<WernerResult> {
    cfg.validate()?;
    let full = full_set(2)?;
    let kind = CorrelationKind::Concurrence;
    let seed = RandomSeed(cfg.seed);
    let grid = cfg.grid();
    let states = grid.iter().map(|&p| werner_state(p)).collect::<Result<Vec<_>>>()?;
    let mut truth_check: f64 = 0.0;
    for (rho, &p) in states.iter().zip(&grid) {
        truth_check = truth_check.max((kind.evaluate(rho)?.values[0] - werner_concurrence(p)).abs());
    }
    let draws = cfg.n_random_measurements.max(cfg.n_specific_networks_per_count);

    let mut points = Vec::new();
    let mut resampled = Vec::new();
    let mut timings = Vec::new();
    for &k in &cfg.projector_counts {
        let (masks, skipped) = draw_masks(&full, k, draws, seed)?;
        resampled.push((k, skipped));
        let recs_for = |m: usize| {
            records(&states, &full, &masks[m], cfg.shots_per_projector, RandomSeed(cfg.seed).derive("werner-noise", (k as u64) << 32 | m as u64))
        };
        // estimates[rep][grid point]
        let mut curves: Vec<(&str, Vec<Vec<f64>>)> = Vec::new();
        if cfg.methods.maxlik {
            let t = Instant::now();
            let est = par::try_map_range(cfg.n_random_measurements, |m| {
                let recs = recs_for(m)?;
                let cfg_ml = cfg.maxlik.config();
                recs.iter()
                    .map(|r| Ok(kind.evaluate(&reconstruct(r, &masks[m], &cfg_ml)?.estimate)?.values[0]))
                    .collect::<Result<Vec<f64>>>()
            })?;
            timings.push((format!("{MAXLIK}.k{k}"), t.elapsed().as_secs_f64()));
            curves.push((MAXLIK, est));
        }
        if cfg.methods.specific {
            let t = Instant::now();
            let mut est = Vec::new();
            for r in 0..cfg.n_specific_networks_per_count {
                let recs = recs_for(r)?;
                est.push(store.specific(&masks[r], r)?.predict_batch(&recs)?.into_iter().map(|c| c.values[0]).collect());
            }
            timings.push((format!("{SPECIFIC}.k{k}"), t.elapsed().as_secs_f64()));
            curves.push((SPECIFIC, est));
        }
        if cfg.methods.independent {
            let t = Instant::now();
            let mut est = Vec::new();
            for m in 0..cfg.n_random_measurements {
                let recs = recs_for(m)?;
                let q: Vec<_> = recs.iter().map(|r| (&masks[m], r)).collect();
                est.push(store.independent()?.predict_batch(&q)?.into_iter().map(|c| c.values[0]).collect());
            }
            timings.push((format!("{INDEPENDENT}.k{k}"), t.elapsed().as_secs_f64()));
            curves.push((INDEPENDENT, est));
        }
        for (method, est) in curves {
            for (g, &p) in grid.iter().enumerate() {
                let column: Vec<f64> = est.iter().map(|e: &Vec<f64>| e[g]).collect();
                let (mean, std) = mean_std(&column);
                points.push(WernerPoint {
                    method: method.to_string(),
                    k,
                    p,
                    truth: werner_concurrence(p),
                    mean,
                    std,
                    repetitions: column.len(),
                });
            }
        }
    }
    Ok(WernerResult {
        config_hash: config_hash(cfg)?,
        points,
        truth_check,
        resampled,
        models: store.provenance.iter().map(|(n, d, _)| (n.clone(), d.clone())).collect(),
        timings,
    })
}

pub fn cmd_werner_sweep(cfg: &WernerConfig, out: &Path, model_dir: Option<&Path>) -> Result<WernerResult> {
    let started = Instant::now();
    let mut store = cfg.model_store(model_dir);
    let result = run_werner_sweep(cfg, &mut store)?;
    let mut doc = Document::new("qcorr-werner-sweep/1");
    provenance_header(&mut doc, &result.config_hash, cfg, cfg.seed)?;
    doc.meta("truth", "max(0,(3p-1)/2)")
        .meta("truth_check_max_deviation", num(result.truth_check));
    for (k, n) in &result.resampled {
        doc.meta(&format!("resampled_singular_masks.k{k}"), n);
    }
    for (name, digest) in &result.models {
        doc.meta(&format!("model.{name}"), digest);
    }
    doc.columns(&["method", "k", "p", "true", "mean", "std", "repetitions"]);
    for p in &result.points {
        doc.row(vec![
            p.method.clone(),
            p.k.to_string(),
            num(p.p),
            num(p.truth),
            num(p.mean),
            num(p.std),
            p.repetitions.to_string(),
        ]);
    }
    for (label, secs) in &result.timings {
        doc.timing(label, *secs);
    }
    doc.timing("total", started.elapsed().as_secs_f64());
    doc.write(out)?;
    Ok(result)
}
