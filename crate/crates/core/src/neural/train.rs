//! Mini-batch training with early stopping and optional incremental
//! dataset refreshes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::NetworkModel;
use super::optim::{NAdamHyper, NAdamState};
use crate::error::{Error, Result};
use crate::states::RandomSeed;

/// Row-major inputs with aligned row-major targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    input_width: usize,
    target_width: usize,
}

impl Samples {
    pub fn new(inputs: Vec<f64>, input_width: usize, targets: Vec<f64>, target_width: usize) -> Result<Self> {
        if input_width == 0 || target_width == 0 {
            return Err(Error::DimensionMismatch("sample widths must be positive".into()));
        }
        if inputs.len() % input_width != 0
            || targets.len() % target_width != 0
            || inputs.len() / input_width != targets.len() / target_width
        {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs of width {input_width} do not align with {} targets of width {target_width}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            input_width,
            target_width,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_width
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_width..(i + 1) * self.input_width]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_width..(i + 1) * self.target_width]
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.input_width);
        let mut y = Vec::with_capacity(idx.len() * self.target_width);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.target(i));
        }
        (x, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total epoch budget, across incremental rounds.
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Epochs without validation improvement before stopping (or, in
    /// incremental mode, before refreshing the training set).
    pub patience: usize,
    pub incremental: bool,
    pub dataset_refresh_size: usize,
    pub hyper: NAdamHyper,
    pub seed: RandomSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batches_per_epoch: 100,
            patience: 200,
            incremental: false,
            dataset_refresh_size: 50_000,
            hyper: NAdamHyper::default(),
            seed: RandomSeed(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batches_per_epoch and patience must be positive".into(),
            ));
        }
        if self.incremental && self.dataset_refresh_size == 0 {
            return Err(Error::Config("dataset_refresh_size must be positive".into()));
        }
        self.hyper.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Incremental round (0 before the first refresh).
    pub round: usize,
    /// Mean mini-batch loss during the epoch.
    pub train_loss: f64,
    pub val_mae: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Epoch at which the patience rule ended training, if it did.
    pub early_stop_epoch: Option<usize>,
    pub refreshes: usize,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation MAE seen.
    pub model: NetworkModel,
    /// Optimizer state after the last executed step.
    pub optimizer: NAdamState,
    pub history: TrainHistory,
}

/// Produces a fresh training set of the requested size for round `round`.
pub type Refresh<'a> = dyn FnMut(usize, usize) -> Result<Samples> + 'a;

pub fn mae_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("MAE of an empty batch".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn evaluate_mae(model: &NetworkModel, set: &Samples) -> Result<f64> {
    check_widths(model, set)?;
    mae_loss(&model.forward_batch(set.inputs())?, set.targets())
}

pub fn train(
    model: NetworkModel,
    train_set: Samples,
    val_set: &Samples,
    cfg: &TrainConfig,
    refresh: Option<&mut Refresh<'_>>,
) -> Result<TrainOutcome> {
    train_with(model, None, train_set, val_set, cfg, refresh, None)
}

/// [`train`] with a resumed optimizer state and a per-epoch callback.
pub fn train_with(
    mut model: NetworkModel,
    optimizer: Option<NAdamState>,
    mut train_set: Samples,
    val_set: &Samples,
    cfg: &TrainConfig,
    mut refresh: Option<&mut Refresh<'_>>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_widths(&model, &train_set)?;
    check_widths(&model, val_set)?;
    if val_set.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let mut opt = match optimizer {
        Some(mut o) => {
            if o.len() != model.parameter_count() {
                return Err(Error::DimensionMismatch(format!(
                    "optimizer state has {} entries, model has {} parameters",
                    o.len(),
                    model.parameter_count()
                )));
            }
            o.hyper = cfg.hyper;
            o
        }
        None => NAdamState::new(model.parameter_count(), cfg.hyper),
    };

    let mut history = TrainHistory {
        best_val_mae: f64::INFINITY,
        ..TrainHistory::default()
    };
    let mut best = model.parameters().to_vec();
    let mut since_best = 0;
    let mut round = 0;
    let mut params = model.parameters().to_vec();

    for epoch in 0..cfg.epochs {
        let n = train_set.len();
        if n < cfg.batches_per_epoch {
            return Err(Error::Config(format!(
                "{n} training samples cannot fill {} batches",
                cfg.batches_per_epoch
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut cfg.seed.stream(epoch as u64));
        let mut loss_sum = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let lo = b * n / cfg.batches_per_epoch;
            let hi = (b + 1) * n / cfg.batches_per_epoch;
            let (x, y) = train_set.gather(&order[lo..hi]);
            let (loss, grad) = model.loss_and_gradient(&x, &y)?;
            loss_sum += loss;
            opt.step(&mut params, &grad)?;
            model.set_parameters(&params);
        }
        let val_mae = evaluate_mae(&model, val_set)?;
        let improved = val_mae < history.best_val_mae;
        if improved {
            history.best_val_mae = val_mae;
            history.best_epoch = epoch;
            best.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            round,
            train_loss: loss_sum / cfg.batches_per_epoch as f64,
            val_mae,
            improved,
        };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&record);
        }
        history.epochs.push(record);

        if since_best >= cfg.patience {
            match refresh.as_deref_mut() {
                Some(gen) if cfg.incremental => {
                    round += 1;
                    train_set = gen(round, cfg.dataset_refresh_size)?;
                    check_widths(&model, &train_set)?;
                    params.copy_from_slice(&best);
                    model.set_parameters(&params);
                    history.refreshes += 1;
                    since_best = 0;
                }
                _ => {
                    history.early_stop_epoch = Some(epoch);
                    break;
                }
            }
        }
    }

    model.set_parameters(&best);
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        history,
    })
}

fn check_widths(model: &NetworkModel, set: &Samples) -> Result<()> {
    if set.input_width() != model.input_width() || set.target_width() != model.output_width() {
        return Err(Error::DimensionMismatch(format!(
            "samples are {}→{}, network is {}→{}",
            set.input_width(),
            set.target_width(),
            model.input_width(),
            model.output_width()
        )));
    }
    if set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    Ok(())
}
