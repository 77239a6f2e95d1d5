//! File-producing commands: data generation, training, MaxLik
//! reconstruction and prediction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{config_hash, num, Document};
use super::{check_kind, full_set, MaxLikSettings};
use crate::error::{Error, Result};
use crate::estimators::{
    build_independent_set, build_independent_test_set, build_test_set, build_training_set, independent_network,
    specific_network, Encoding, IndependentEstimator, SpecificEstimator, TrainingDataset, DESK_CONV_CHANNELS,
    DESK_HIDDEN_WIDTHS,
};
use crate::maxlik::reconstruct;
use crate::measurement::{load_record_file, mask_from_string, pauli_projectors, ProjectorSet};
use crate::measures::{concurrence, mutual_information_matrix, CorrelationKind};
use crate::neural::{train_with, EpochRecord, ModelFile, NetworkModel, Samples, TrainConfig, TrainHistory};
use crate::states::RandomSeed;

pub const TRAIN_FILE: &str = "train.dat";
pub const VAL_FILE: &str = "val.dat";
pub const TEST_FILE: &str = "test.dat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub n_qubits: usize,
    pub kind: CorrelationKind,
    pub encoding: Encoding,
    /// States generated for train + validation (split 4:1).
    pub n_states: usize,
    pub test_set_size: usize,
    /// 0/1 activity string over the canonical projectors; `None` is the full set.
    pub mask: Option<String>,
    pub k_min: usize,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            kind: CorrelationKind::Concurrence,
            encoding: Encoding::Specific,
            n_states: 50_000,
            test_set_size: 500,
            mask: None,
            k_min: 8,
            seed: 1,
        }
    }
}

impl GenDataConfig {
    pub fn validate(&self) -> Result<()> {
        check_kind(self.n_qubits, self.kind)?;
        if self.n_states < 5 || self.test_set_size == 0 {
            return Err(Error::Config("need at least 5 states and a non-empty test set".into()));
        }
        self.projector_set().map(|_| ())
    }

    fn projector_set(&self) -> Result<ProjectorSet> {
        let full = full_set(self.n_qubits)?;
        match &self.mask {
            None => Ok(full),
            Some(m) => full.with_mask(mask_from_string(m).map_err(|e| Error::Config(e.to_string()))?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataReport {
    pub files: Vec<(PathBuf, usize)>,
    pub config_hash: String,
}

/// Writes `train.dat`, `val.dat` and `test.dat` into `out_dir`. The test
/// states come from a separate seed stream, so they never coincide with
/// training states.
pub fn cmd_gen_data(cfg: &GenDataConfig, out_dir: &Path) -> Result<GenDataReport> {
    cfg.validate()?;
    let seed = RandomSeed(cfg.seed);
    let set = cfg.projector_set()?;
    let (train, val, test) = match cfg.encoding {
        Encoding::Specific => {
            let (t, v) = build_training_set(cfg.n_states, &set, cfg.kind, seed)?;
            (t, v, build_test_set(cfg.test_set_size, &set, cfg.kind, seed)?)
        }
        Encoding::Independent => {
            let (t, v) = build_independent_set(cfg.n_states, cfg.n_qubits, cfg.kind, cfg.k_min, seed)?;
            let test = build_independent_test_set(cfg.test_set_size, cfg.n_qubits, cfg.kind, cfg.k_min, seed)?;
            (t, v, test)
        }
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    for (name, data) in [(TRAIN_FILE, &train), (VAL_FILE, &val), (TEST_FILE, &test)] {
        let path = out_dir.join(name);
        data.save(&path)?;
        files.push((path, data.len()));
    }
    Ok(GenDataReport {
        files,
        config_hash: config_hash(cfg)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCommand {
    pub train: PathBuf,
    pub val: PathBuf,
    pub model_out: PathBuf,
    pub report_out: PathBuf,
    pub hidden: Vec<usize>,
    pub conv_channels: usize,
    pub config: TrainConfig,
    /// Continue from this model file, including its optimizer state.
    pub resume: Option<PathBuf>,
}

impl TrainCommand {
    pub fn new(train: PathBuf, val: PathBuf, model_out: PathBuf, report_out: PathBuf) -> Self {
        Self {
            train,
            val,
            model_out,
            report_out,
            hidden: DESK_HIDDEN_WIDTHS.to_vec(),
            conv_channels: DESK_CONV_CHANNELS,
            config: TrainConfig::default(),
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: TrainHistory,
    pub epochs_run: usize,
    pub best_val_mae: f64,
    pub model_digest: String,
    pub optimizer_steps: u64,
}

fn wrap(model: NetworkModel, data: &TrainingDataset) -> Result<ModelFile> {
    let meta = &data.meta;
    match meta.encoding {
        Encoding::Specific => {
            let set = pauli_projectors(meta.n_qubits)?.with_mask(mask_from_string(&meta.mask)?)?;
            Ok(SpecificEstimator::new(model, &set, meta.kind)?.to_model_file())
        }
        Encoding::Independent => Ok(IndependentEstimator::new(model, meta.kind)?.to_model_file()),
    }
}

/// Trains on the dataset files and saves the best-validation model together
/// with the optimizer state, so a later run can resume.
pub fn cmd_train(cmd: &TrainCommand) -> Result<TrainReport> {
    let started = Instant::now();
    let train = TrainingDataset::load(&cmd.train)?;
    let val = TrainingDataset::load(&cmd.val)?;
    let (tm, vm) = (&train.meta, &val.meta);
    if tm.kind != vm.kind || tm.encoding != vm.encoding || tm.mask_hash != vm.mask_hash || train.input_width != val.input_width {
        return Err(Error::Config("training and validation files describe different problems".into()));
    }
    let (model, optimizer) = match &cmd.resume {
        Some(path) => {
            let f = ModelFile::load(path)?;
            let expected = wrap(f.model.clone(), &train)?;
            if expected.meta.get("mask_hash") != f.meta.get("mask_hash") || expected.meta.get("kind") != f.meta.get("kind") {
                return Err(Error::Config(format!("{} was trained for a different problem", path.display())));
            }
            (f.model, f.optimizer)
        }
        None => {
            let spec = match tm.encoding {
                Encoding::Specific => {
                    let set = pauli_projectors(tm.n_qubits)?.with_mask(mask_from_string(&tm.mask)?)?;
                    specific_network(&set, tm.kind, &cmd.hidden)
                }
                Encoding::Independent => independent_network(tm.n_qubits, tm.kind, cmd.conv_channels, &cmd.hidden),
            };
            (NetworkModel::new(spec, cmd.config.seed.derive("init", 0))?, None)
        }
    };
    if model.input_width() != train.input_width {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} inputs, dataset rows have {}",
            model.input_width(),
            train.input_width
        )));
    }

    // Fresh data for incremental rounds follows the dataset's own recipe.
    let meta = tm.clone();
    let mut refresh = move |round: usize, size: usize| -> Result<Samples> {
        let seed = meta.seed.derive("refresh", round as u64);
        let n = size * 5 / 4;
        let (t, _) = match meta.encoding {
            Encoding::Specific => {
                let set = pauli_projectors(meta.n_qubits)?.with_mask(mask_from_string(&meta.mask)?)?;
                build_training_set(n, &set, meta.kind, seed)?
            }
            Encoding::Independent => {
                let k_min = meta.k_min.ok_or_else(|| Error::Corrupt("independent dataset lacks k_min".into()))?;
                build_independent_set(n, meta.n_qubits, meta.kind, k_min, seed)?
            }
        };
        t.to_samples()
    };
    let outcome = train_with(
        model,
        optimizer,
        train.to_samples()?,
        &val.to_samples()?,
        &cmd.config,
        Some(&mut refresh),
        None,
    )?;
    let mut file = wrap(outcome.model, &train)?;
    file.optimizer = Some(outcome.optimizer);
    file.meta.insert("train_file_digest".into(), file_digest(&cmd.train)?);
    if let Some(dir) = cmd.model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    file.save(&cmd.model_out)?;
    let digest = file.digest()?;
    let h = &outcome.history;

    let mut doc = Document::new("qcorr-train/1");
    doc.meta("config_hash", config_hash(&cmd.config)?)
        .meta("config", serde_json::to_string(&cmd.config)?)
        .meta("seed", cmd.config.seed.0)
        .meta("model_digest", &digest)
        .meta("resumed", cmd.resume.is_some())
        .meta("epochs_run", h.epochs.len())
        .meta("best_epoch", h.best_epoch)
        .meta("best_val_mae", num(h.best_val_mae))
        .meta("early_stop_epoch", h.early_stop_epoch.map_or("none".into(), |e| e.to_string()))
        .meta("refreshes", h.refreshes)
        .columns(&["epoch", "round", "train_loss", "val_mae", "improved"]);
    for EpochRecord { epoch, round, train_loss, val_mae, improved } in &h.epochs {
        doc.row(vec![epoch.to_string(), round.to_string(), num(*train_loss), num(*val_mae), improved.to_string()]);
    }
    doc.timing("total", started.elapsed().as_secs_f64());
    doc.write(&cmd.report_out)?;

    Ok(TrainReport {
        epochs_run: h.epochs.len(),
        best_val_mae: h.best_val_mae,
        model_digest: digest,
        optimizer_steps: file.optimizer.as_ref().map_or(0, |o| o.t),
        history: outcome.history,
    })
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxLikCommand {
    /// Counts or probabilities file.
    pub input: PathBuf,
    pub out: PathBuf,
    pub settings: MaxLikSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxLikReport {
    pub n_qubits: usize,
    /// Row-major `(re, im)` entries of the estimate.
    pub matrix: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub concurrence: Option<f64>,
    /// Pairwise mutual information `(I_AB)` or `(I_AB, I_AC, I_BC)`.
    pub mutual_information: Vec<f64>,
}

pub fn cmd_maxlik(cmd: &MaxLikCommand) -> Result<MaxLikReport> {
    let (set, record) = load_record_file(&cmd.input)?;
    let res = reconstruct(&record, &set, &cmd.settings.config())?;
    let rho = &res.estimate;
    let n = rho.n_qubits();
    let report = MaxLikReport {
        n_qubits: n,
        matrix: rho.matrix().data().iter().map(|z| (z.re, z.im)).collect(),
        iterations: res.iterations_used,
        converged: res.converged,
        log_likelihood: res.final_log_likelihood,
        concurrence: if n == 2 { Some(concurrence(rho)?) } else { None },
        mutual_information: mutual_information_matrix(rho)?.values,
    };

    let mut doc = Document::new("qcorr-maxlik/1");
    doc.meta("config_hash", config_hash(&cmd.settings)?)
        .meta("config", serde_json::to_string(&cmd.settings)?)
        .meta("input_digest", file_digest(&cmd.input)?)
        .meta("n_qubits", n)
        .meta("active_projectors", set.active_count())
        .meta("iterations", report.iterations)
        .meta("converged", report.converged)
        .meta("log_likelihood", num(report.log_likelihood));
    if let Some(c) = report.concurrence {
        doc.meta("concurrence", num(c));
    }
    let mi: Vec<String> = report.mutual_information.iter().map(|&v| num(v)).collect();
    doc.meta("mutual_information", mi.join(" "));
    doc.columns(&["row", "col", "re", "im"]);
    let d = rho.dim();
    for (idx, (re, im)) in report.matrix.iter().enumerate() {
        doc.row(vec![(idx / d).to_string(), (idx % d).to_string(), num(*re), num(*im)]);
    }
    doc.write(&cmd.out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictCommand {
    pub model: PathBuf,
    /// Counts or probabilities file.
    pub input: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub estimator: String,
    pub kind: CorrelationKind,
    pub values: Vec<f64>,
    /// False when no projector was measured.
    pub informative: bool,
    pub model_digest: String,
}

pub fn cmd_predict(cmd: &PredictCommand) -> Result<PredictReport> {
    let file = ModelFile::load(&cmd.model)?;
    let digest = file.digest()?;
    let (set, record) = load_record_file(&cmd.input)?;
    let estimator = file.meta.get("estimator").cloned().unwrap_or_default();
    let (kind, values, informative) = match estimator.as_str() {
        "specific" => {
            let e = SpecificEstimator::from_model_file(file)?;
            if set.n_qubits() != e.n_qubits {
                return Err(Error::DimensionMismatch(format!(
                    "{}-qubit data for a {}-qubit model",
                    set.n_qubits(),
                    e.n_qubits
                )));
            }
            (e.kind, e.predict(&record)?.values, true)
        }
        "independent" => {
            let e = IndependentEstimator::from_model_file(file)?;
            let p = e.predict(&set, &record)?;
            (e.kind, p.target.values, p.informative)
        }
        other => return Err(Error::Config(format!("model file has unknown estimator type `{other}`"))),
    };
    let mut doc = Document::new("qcorr-predict/1");
    doc.meta("model_digest", &digest)
        .meta("input_digest", file_digest(&cmd.input)?)
        .meta("estimator", &estimator)
        .meta("kind", kind)
        .meta("active_projectors", set.active_count())
        .meta("informative", informative)
        .columns(&["component", "value"]);
    for (i, v) in values.iter().enumerate() {
        doc.row(vec![i.to_string(), num(*v)]);
    }
    doc.write(&cmd.out)?;
    Ok(PredictReport {
        estimator,
        kind,
        values,
        informative,
        model_digest: digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{born_probabilities, format_counts, format_probabilities, simulate_counts};
    use crate::states::NamedState;

    fn small_gen(dir: &Path) -> GenDataConfig {
        let cfg = GenDataConfig {
            n_states: 1000,
            test_set_size: 50,
            seed: 4,
            ..GenDataConfig::default()
        };
        cmd_gen_data(&cfg, dir).unwrap();
        cfg
    }

    fn quick_train(dir: &Path, epochs: usize) -> TrainCommand {
        let mut cmd = TrainCommand::new(
            dir.join(TRAIN_FILE),
            dir.join(VAL_FILE),
            dir.join("m.qcnn"),
            dir.join("train.csv"),
        );
        cmd.hidden = vec![16, 16];
        cmd.config.epochs = epochs;
        cmd.config.batches_per_epoch = 8;
        cmd.config.hyper.lr = 0.01;
        cmd
    }

    #[test]
    fn gen_data_split_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small_gen(a.path());
        let rep = cmd_gen_data(&cfg, b.path()).unwrap();
        let sizes: Vec<usize> = rep.files.iter().map(|f| f.1).collect();
        assert_eq!(sizes, vec![800, 200, 50]);
        for f in [TRAIN_FILE, VAL_FILE, TEST_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let bad = GenDataConfig {
            kind: CorrelationKind::MutualInfo3q,
            ..cfg
        };
        assert!(matches!(cmd_gen_data(&bad, b.path()), Err(Error::Config(_))));
    }

    #[test]
    fn train_report_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        small_gen(dir.path());
        let cmd = quick_train(dir.path(), 3);
        let rep = cmd_train(&cmd).unwrap();
        assert_eq!(rep.epochs_run, 3);
        assert_eq!(rep.history.epochs.len(), 3);
        assert_eq!(rep.optimizer_steps, 24);
        let text = std::fs::read_to_string(&cmd.report_out).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);

        let mut resumed = quick_train(dir.path(), 2);
        resumed.resume = Some(cmd.model_out.clone());
        resumed.model_out = dir.path().join("m2.qcnn");
        resumed.report_out = dir.path().join("train2.csv");
        let rep2 = cmd_train(&resumed).unwrap();
        assert_eq!(rep2.optimizer_steps, 40);

        // Same inputs, same bytes.
        let again = TrainCommand {
            model_out: dir.path().join("m3.qcnn"),
            report_out: dir.path().join("train3.csv"),
            ..quick_train(dir.path(), 3)
        };
        cmd_train(&again).unwrap();
        assert_eq!(std::fs::read(&cmd.model_out).unwrap(), std::fs::read(&again.model_out).unwrap());
        assert_eq!(std::fs::read(&cmd.report_out).unwrap(), std::fs::read(&again.report_out).unwrap());
    }

    #[test]
    fn maxlik_on_singlet_counts() {
        let dir = tempfile::tempdir().unwrap();
        let full = pauli_projectors(2).unwrap();
        let exact = born_probabilities(&NamedState::Singlet.state(), &full).unwrap();
        let rec = simulate_counts(&exact, 10_000, &mut RandomSeed(5).rng()).unwrap();
        let counts: Vec<u64> = rec.values.iter().map(|v| (v * 10_000.0).round() as u64).collect();
        let input = dir.path().join("singlet.csv");
        std::fs::write(&input, format_counts(&full, &counts, None)).unwrap();
        let cmd = MaxLikCommand {
            input,
            out: dir.path().join("ml.csv"),
            settings: MaxLikSettings::default(),
        };
        let rep = cmd_maxlik(&cmd).unwrap();
        assert!((rep.concurrence.unwrap() - 1.0).abs() < 0.02);
        let text = std::fs::read_to_string(&cmd.out).unwrap();
        assert!(text.contains("# converged=") && text.contains("# iterations="));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 17);

        // A single local basis on the first qubit leaves half the space unmeasured.
        let half = full
            .with_mask((0..36).map(|i| ["HH", "HV"].contains(&full.label(i))).collect())
            .unwrap();
        let one = exact.restricted_to(half.mask()).unwrap();
        std::fs::write(&cmd.input, format_probabilities(&half, &one)).unwrap();
        let err = cmd_maxlik(&cmd).unwrap_err();
        assert!(err.to_string().contains("do not span"));
        assert!(matches!(err, Error::SingularGram { .. }), "{err:?}");
    }

    #[test]
    fn predict_checks_mask() {
        let dir = tempfile::tempdir().unwrap();
        small_gen(dir.path());
        let cmd = quick_train(dir.path(), 1);
        cmd_train(&cmd).unwrap();
        let full = pauli_projectors(2).unwrap();
        let rho = NamedState::Singlet.state();
        let exact = born_probabilities(&rho, &full).unwrap();
        let input = dir.path().join("p.csv");
        std::fs::write(&input, format_probabilities(&full, &exact)).unwrap();
        let pc = PredictCommand {
            model: cmd.model_out.clone(),
            input: input.clone(),
            out: dir.path().join("pred.csv"),
        };
        let rep = cmd_predict(&pc).unwrap();
        assert_eq!(rep.values.len(), 1);
        assert!((0.0..=1.0).contains(&rep.values[0]));

        let noisy = simulate_counts(&exact, 500, &mut RandomSeed(1).rng()).unwrap();
        let counts: Vec<u64> = noisy.values.iter().map(|v| (v * 500.0).round() as u64).collect();
        std::fs::write(&input, format_counts(&full, &counts, None)).unwrap();
        let noisy_rep = cmd_predict(&pc).unwrap();
        assert_eq!(noisy_rep.values.len(), 1);

        let mut mask = vec![true; 36];
        mask[0] = false;
        let sub = full.with_mask(mask).unwrap();
        std::fs::write(&input, format_probabilities(&sub, &exact.restricted_to(sub.mask()).unwrap())).unwrap();
        assert!(matches!(cmd_predict(&pc), Err(Error::MaskMismatch { .. })));
    }
}
