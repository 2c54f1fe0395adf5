//! Adam, the plateau and early-stopping callbacks, the epoch loop and
//! evaluation.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{batches, DatasetSplit, LabeledExample};
use crate::error::{Error, Result};
use crate::heads::Head;
use crate::loss::{cce_index, cce_logit_grad, LossWeights};
use crate::model::{Gradients, Mode, Model};
use crate::rng::Rng;
use crate::tensor::{argmax, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;

/// The quantity both callbacks watch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValEmotionAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub monitor: Monitor,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            monitor: Monitor::ValEmotionAccuracy,
            patience: 5,
            factor: 0.2,
            min_lr: 1e-6,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopConfig {
    pub monitor: Monitor,
    pub patience: usize,
    pub min_delta: f64,
    pub restore_best: bool,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            monitor: Monitor::ValEmotionAccuracy,
            patience: 12,
            min_delta: 1e-4,
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss_weights: LossWeights,
    pub plateau: PlateauConfig,
    pub early_stop: EarlyStopConfig,
    pub seed: u64,
    /// Run per-example work on the calling thread. Results are identical
    /// either way; this only rules out thread scheduling as a variable.
    /// Set by the caller rather than read from configuration files.
    #[serde(skip)]
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 3e-4,
            batch_size: 32,
            max_epochs: 100,
            loss_weights: LossWeights::default(),
            plateau: PlateauConfig::default(),
            early_stop: EarlyStopConfig::default(),
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Error::Config(format!("train.{field}: {msg}"));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(err("initial_lr", format!("must be positive, got {}", self.initial_lr)));
        }
        if self.batch_size == 0 {
            return Err(err("batch_size", "must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(err("max_epochs", "must be at least 1".into()));
        }
        self.loss_weights.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("train.{msg}")),
            other => other,
        })?;
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return Err(err("plateau.factor", format!("must be in (0, 1), got {}", p.factor)));
        }
        if p.patience == 0 {
            return Err(err("plateau.patience", "must be at least 1".into()));
        }
        if !(p.min_lr >= 0.0) || self.initial_lr <= p.min_lr {
            return Err(err(
                "plateau.min_lr",
                format!("must be non-negative and below initial_lr {}, got {}", self.initial_lr, p.min_lr),
            ));
        }
        if !(p.min_delta >= 0.0) {
            return Err(err("plateau.min_delta", format!("must be non-negative, got {}", p.min_delta)));
        }
        let e = &self.early_stop;
        if e.patience == 0 {
            return Err(err("early_stop.patience", "must be at least 1".into()));
        }
        if !(e.min_delta >= 0.0) {
            return Err(err("early_stop.min_delta", format!("must be non-negative, got {}", e.min_delta)));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros = model.zero_gradients().tensors;
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter tensor.
pub fn adam_step(params: &mut [&mut Tensor], grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.tensors.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "adam: {n} parameters, {} gradients, {} moment slots",
            grads.tensors.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "adam: parameter {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.tensors[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / bc1) / ((vj / bc2).sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    LrFloor,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::LrFloor => "lr_floor",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlateauEvent {
    Improved,
    Waiting,
    Reduced(f64),
    Floor,
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// an improvement larger than `min_delta`. The rate is always
/// `initial_lr · factor^k`.
#[derive(Debug, Clone)]
pub struct ReduceOnPlateau {
    cfg: PlateauConfig,
    initial_lr: f64,
    reductions: i32,
    best: f64,
    wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(cfg: PlateauConfig, initial_lr: f64) -> Self {
        ReduceOnPlateau {
            cfg,
            initial_lr,
            reductions: 0,
            best: f64::NEG_INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr * self.cfg.factor.powi(self.reductions)
    }

    pub fn wait(&self) -> usize {
        self.wait
    }

    /// On [`PlateauEvent::Floor`] the rate stays at its last value above
    /// `min_lr`.
    pub fn observe(&mut self, value: f64) -> PlateauEvent {
        if value > self.best + self.cfg.min_delta {
            self.best = value;
            self.wait = 0;
            return PlateauEvent::Improved;
        }
        self.wait += 1;
        if self.wait < self.cfg.patience {
            return PlateauEvent::Waiting;
        }
        self.wait = 0;
        let next = self.initial_lr * self.cfg.factor.powi(self.reductions + 1);
        if next < self.cfg.min_lr {
            return PlateauEvent::Floor;
        }
        self.reductions += 1;
        PlateauEvent::Reduced(next)
    }
}

/// Stops after `patience` epochs without an improvement larger than
/// `min_delta` and keeps a checkpoint image of the best epoch's weights.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    cfg: EarlyStopConfig,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
    snapshot: Option<Vec<u8>>,
}

impl EarlyStopping {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        EarlyStopping {
            cfg,
            best: f64::NEG_INFINITY,
            best_epoch: None,
            wait: 0,
            snapshot: None,
        }
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best_epoch.map(|_| self.best)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn wait(&self) -> usize {
        self.wait
    }

    /// Returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, value: f64, model: &Model) -> bool {
        if value > self.best + self.cfg.min_delta {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            if self.cfg.restore_best {
                self.snapshot = Some(checkpoint::to_bytes(model));
            }
            return false;
        }
        self.wait += 1;
        self.wait >= self.cfg.patience
    }

    /// Loads the best snapshot into `model`, if one was kept.
    pub fn restore(&self, model: &mut Model) -> Result<bool> {
        match &self.snapshot {
            Some(bytes) => {
                let best = checkpoint::from_bytes(bytes)?;
                checkpoint::restore_parameters(model, &best)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Both callbacks, run plateau first then early stopping.
#[derive(Debug, Clone)]
pub struct CallbackState {
    pub plateau: ReduceOnPlateau,
    pub early_stop: EarlyStopping,
    pub stop_reason: Option<StopReason>,
}

impl CallbackState {
    pub fn new(cfg: &TrainConfig) -> Self {
        CallbackState {
            plateau: ReduceOnPlateau::new(cfg.plateau.clone(), cfg.initial_lr),
            early_stop: EarlyStopping::new(cfg.early_stop.clone()),
            stop_reason: None,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.plateau.lr()
    }

    /// Feeds one epoch's monitor value; returns the stop reason if training
    /// must end. Epochs are numbered from 1.
    pub fn on_epoch_end(&mut self, epoch: usize, monitor: f64, model: &Model) -> Option<StopReason> {
        let floor = self.plateau.observe(monitor) == PlateauEvent::Floor;
        let early = self.early_stop.observe(epoch, monitor, model);
        self.stop_reason = if floor {
            Some(StopReason::LrFloor)
        } else if early {
            Some(StopReason::EarlyStop)
        } else {
            None
        };
        self.stop_reason
    }

    /// Records the final stop reason and restores the best weights.
    pub fn finish(&mut self, reason: StopReason, model: &mut Model) -> Result<()> {
        self.stop_reason = Some(reason);
        self.early_stop.restore(model)?;
        Ok(())
    }
}

/// Per-head loss and accuracy; `None` where no example carried the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head: Head,
    pub present: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub heads: Vec<HeadMetrics>,
    /// `Σ w_h · loss_h` over heads with at least one label.
    pub total_loss: f64,
}

impl Metrics {
    pub fn get(&self, head: Head) -> &HeadMetrics {
        &self.heads[head.index()]
    }

    /// Rows emotion, gender, race/ethnicity, age with accuracy and loss;
    /// heads without labels show N/A.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16}{:>10}{:>10}\n", "head", "accuracy", "loss");
        let cell = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"));
        for m in &self.heads {
            out.push_str(&format!(
                "{:<16}{:>10}{:>10}\n",
                m.head.table_label(),
                cell(m.accuracy),
                cell(m.loss)
            ));
        }
        out
    }
}

/// Running per-head sums that become [`Metrics`].
#[derive(Debug, Clone, Default)]
struct Tally {
    loss: [f64; 4],
    correct: [usize; 4],
    present: [usize; 4],
}

impl Tally {
    fn add(&mut self, labels: &[Option<usize>; 4], probs: &[Vec<f64>; 4]) -> [Option<f64>; 4] {
        let mut losses = [None; 4];
        for h in Head::ALL {
            let i = h.index();
            if let Some(c) = labels[i] {
                let l = cce_index(&probs[i], c);
                losses[i] = Some(l);
                self.loss[i] += l;
                self.present[i] += 1;
                self.correct[i] += (argmax(&probs[i]) == c) as usize;
            }
        }
        losses
    }

    fn metrics(&self, weights: &LossWeights) -> Metrics {
        let mut heads = Vec::with_capacity(4);
        let mut total = 0.0;
        for h in Head::ALL {
            let i = h.index();
            let n = self.present[i];
            let (loss, accuracy) = if n == 0 {
                (None, None)
            } else {
                let l = self.loss[i] / n as f64;
                total += weights.get(h) * l;
                (Some(l), Some(self.correct[i] as f64 / n as f64))
            };
            heads.push(HeadMetrics {
                head: h,
                present: n,
                loss,
                accuracy,
            });
        }
        Metrics {
            heads,
            total_loss: total,
        }
    }
}

/// Inference-mode pass reporting per-head masked accuracy and mean
/// cross-entropy.
pub fn evaluate(model: &Model, examples: &[LabeledExample], weights: &LossWeights) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::Size("cannot evaluate on an empty example list".into()));
    }
    let outputs: Vec<_> = examples
        .par_iter()
        .map(|e| model.infer(&e.image))
        .collect::<Result<_>>()?;
    let mut tally = Tally::default();
    for (e, o) in examples.iter().zip(&outputs) {
        tally.add(&e.labels, &o.probs);
    }
    Ok(tally.metrics(weights))
}

/// Forward and backward for one example within a batch. Each head's logit
/// gradient is scaled by `w_h / n_h`, so summing over the batch yields the
/// gradient of the weighted total of per-head means. Heads that are absent
/// or weighted zero are skipped.
fn example_step(
    model: &Model,
    example: &LabeledExample,
    seed: u64,
    scales: &[f64; 4],
) -> Result<(Gradients, [Vec<f64>; 4])> {
    let mut rng = Rng::new(seed);
    let (out, cache) = model.forward_example(&example.image, Mode::Train, &mut rng)?;
    let mut logit_grads: [Option<Tensor>; 4] = Default::default();
    for h in Head::ALL {
        let i = h.index();
        if let Some(c) = example.labels[i] {
            if scales[i] != 0.0 {
                logit_grads[i] = Some(cce_logit_grad(&out.probs[i], c, scales[i]));
            }
        }
    }
    let grads = model.backward(cache, &logit_grads)?;
    Ok((grads, out.probs))
}

/// Everything one optimizer step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub gradients: Gradients,
    /// Per-head mean loss over present examples.
    pub head_losses: [Option<f64>; 4],
    /// Weighted total over heads with a label in the batch.
    pub total_loss: f64,
}

/// Computes the summed batch gradient. Per-example gradients are added in
/// batch order whether or not the work runs in parallel, so the result is
/// bit-identical either way.
pub fn batch_gradients(
    model: &Model,
    batch: &[&LabeledExample],
    seeds: &[u64],
    weights: &LossWeights,
    parallel: bool,
) -> Result<StepOutcome> {
    let (outcome, _) = batch_gradients_with_probs(model, batch, seeds, weights, parallel)?;
    Ok(outcome)
}

fn batch_gradients_with_probs(
    model: &Model,
    batch: &[&LabeledExample],
    seeds: &[u64],
    weights: &LossWeights,
    parallel: bool,
) -> Result<(StepOutcome, Vec<[Vec<f64>; 4]>)> {
    if batch.is_empty() || batch.len() != seeds.len() {
        return Err(Error::Size(format!(
            "batch of {} examples with {} seeds",
            batch.len(),
            seeds.len()
        )));
    }
    let mut counts = [0usize; 4];
    for e in batch {
        for (n, l) in counts.iter_mut().zip(&e.labels) {
            *n += l.is_some() as usize;
        }
    }
    let mut scales = [0.0; 4];
    for h in Head::ALL {
        let i = h.index();
        if counts[i] > 0 {
            scales[i] = weights.get(h) / counts[i] as f64;
        }
    }

    let mut gradients = model.zero_gradients();
    let mut probs = Vec::with_capacity(batch.len());
    let chunk = if parallel { rayon::current_num_threads().max(1) } else { 1 };
    for (examples, seeds) in batch.chunks(chunk).zip(seeds.chunks(chunk)) {
        let results: Vec<Result<_>> = if parallel && examples.len() > 1 {
            examples
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(e, &s)| example_step(model, e, s, &scales))
                .collect()
        } else {
            examples
                .iter()
                .zip(seeds)
                .map(|(e, &s)| example_step(model, e, s, &scales))
                .collect()
        };
        for r in results {
            let (g, p) = r?;
            gradients.add_assign(&g)?;
            probs.push(p);
        }
    }

    let mut tally = Tally::default();
    for (e, p) in batch.iter().zip(&probs) {
        tally.add(&e.labels, p);
    }
    let m = tally.metrics(weights);
    let head_losses = [0, 1, 2, 3].map(|i| m.heads[i].loss);
    Ok((
        StepOutcome {
            gradients,
            head_losses,
            total_loss: m.total_loss,
        },
        probs,
    ))
}

/// One history row. Train metrics come from the train-mode passes made
/// during the epoch; validation metrics from an inference pass after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: Metrics,
    pub validation: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

/// Trains with a no-op epoch observer.
pub fn train(model: Model, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with(model, split, cfg, |_| Ok(()))
}

/// Runs the epoch loop, calling `on_epoch` after each completed epoch.
/// Returns the final model (best weights restored when configured).
pub fn train_with(
    mut model: Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Size(format!(
            "training needs non-empty sets, got {} train and {} validation examples",
            split.train.len(),
            split.validation.len()
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut callbacks = CallbackState::new(cfg);
    let mut history = Vec::new();
    let mut reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let lr = callbacks.current_lr();
        let mut tally = Tally::default();
        for batch in batches(split.train.len(), cfg.batch_size, true, &mut rng)? {
            let examples: Vec<&LabeledExample> = batch.iter().map(|&i| &split.train[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| rng.fork_seed()).collect();
            let (step, probs) =
                batch_gradients_with_probs(&model, &examples, &seeds, &cfg.loss_weights, !cfg.deterministic)?;
            for (e, p) in examples.iter().zip(&probs) {
                tally.add(&e.labels, p);
            }
            adam_step(&mut model.parameters_mut(), &step.gradients, &mut adam, lr)?;
            model.round_parameters();
        }
        let record = EpochRecord {
            epoch,
            lr,
            train: tally.metrics(&cfg.loss_weights),
            validation: evaluate(&model, &split.validation, &cfg.loss_weights)?,
        };
        let monitor = record.validation.get(Head::Emotion).accuracy.unwrap_or(0.0);
        on_epoch(&record)?;
        history.push(record);
        if let Some(r) = callbacks.on_epoch_end(epoch, monitor, &model) {
            reason = r;
            break;
        }
    }
    callbacks.finish(reason, &mut model)?;
    Ok((
        model,
        TrainHistory {
            epochs: history,
            stop_reason: reason,
            best_epoch: callbacks.early_stop.best_epoch(),
            best_metric: callbacks.early_stop.best_metric(),
        },
    ))
}

/// Column order of the metrics CSV.
pub fn metric_columns() -> Vec<String> {
    let mut cols = vec!["epoch".to_string(), "lr".to_string(), "train_loss_total".to_string()];
    for split in ["train", "val"] {
        if split == "val" {
            cols.push("val_loss_total".into());
        }
        for kind in ["acc", "loss"] {
            for h in Head::ALL {
                cols.push(format!("{split}_{kind}_{}", h.name()));
            }
        }
    }
    cols
}

/// One CSV row matching [`metric_columns`]; absent values are `NA`.
pub fn metric_row(r: &EpochRecord) -> Vec<String> {
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut row = vec![r.epoch.to_string(), r.lr.to_string(), r.train.total_loss.to_string()];
    for (i, m) in [&r.train, &r.validation].into_iter().enumerate() {
        if i == 1 {
            row.push(m.total_loss.to_string());
        }
        row.extend(m.heads.iter().map(|h| na(h.accuracy)));
        row.extend(m.heads.iter().map(|h| na(h.loss)));
    }
    row
}

pub fn metrics_csv(history: &TrainHistory) -> String {
    let mut out = metric_columns().join(",");
    out.push('\n');
    for r in &history.epochs {
        out.push_str(&metric_row(r).join(","));
        out.push('\n');
    }
    out
}
