//! Minibatch SGD training, evaluation with and without a trigger, and the
//! backdoor loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSpec};
use crate::engine::{softmax_cross_entropy, Executor, ParamStore};
use crate::error::{Error, Result};
use crate::graph::ArchGraph;
use crate::poison::{poison_dataset, PoisonSpec};
use crate::tensor::Tensor;
use crate::trigger::{apply_trigger, TriggerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub poison: Option<PoisonSpec>,
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Which threat setting produced a history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingTag {
    Direct,
    Finetune,
    Retrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_acc: f64,
    pub trig_acc: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub setting: SettingTag,
    pub epochs: Vec<EpochMetrics>,
}

impl RunHistory {
    pub fn new(setting: SettingTag) -> Self {
        RunHistory { setting, epochs: Vec::new() }
    }

    /// `epoch,task_acc,trig_acc` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,task_acc,trig_acc\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.task_acc, e.trig_acc);
        }
        s
    }
}

/// `ratio` is `task_accuracy / triggered_accuracy`, `+inf` when nothing
/// triggered is classified correctly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub task_accuracy: f64,
    pub triggered_accuracy: f64,
    #[serde(with = "ratio_serde")]
    pub ratio: f64,
}

impl EvalMetrics {
    pub fn new(task_accuracy: f64, triggered_accuracy: f64) -> Self {
        let ratio = if triggered_accuracy > 0.0 { task_accuracy / triggered_accuracy } else { f64::INFINITY };
        EvalMetrics { task_accuracy, triggered_accuracy, ratio }
    }
}

/// `f64` that serializes `+inf` as the string `"inf"`.
pub(crate) mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad ratio {s:?}"))),
        }
    }
}

fn accuracy(exec: &Executor, params: &ParamStore, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in images.iter().zip(labels) {
        if exec.predict(params, x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

fn triggered(images: &[Tensor], trigger: &TriggerSpec) -> Result<Vec<Tensor>> {
    images.iter().map(|x| apply_trigger(x, trigger)).collect()
}

fn evaluate_with(exec: &Executor, params: &ParamStore, data: &Dataset, trigger: Option<&TriggerSpec>) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let task = accuracy(exec, params, &data.images, &data.labels)?;
    let trig = match trigger {
        Some(t) => accuracy(exec, params, &triggered(&data.images, t)?, &data.labels)?,
        None => task,
    };
    Ok(EvalMetrics::new(task, trig))
}

/// Task accuracy on `data`, and accuracy with `trigger` stamped on every image.
pub fn evaluate(graph: &ArchGraph, params: &ParamStore, data: &Dataset, trigger: Option<&TriggerSpec>) -> Result<EvalMetrics> {
    evaluate_with(&Executor::new(graph)?, params, data, trigger)
}

fn mean_loss(exec: &Executor, params: &ParamStore, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in images.iter().zip(labels) {
        total += softmax_cross_entropy(&exec.logits(params, x)?, y)?.0;
    }
    Ok(total / images.len() as f64)
}

/// Mean cross-entropy on the triggered set minus that on the clean set.
/// Positive when the trigger hurts the model.
pub fn backdoor_loss(graph: &ArchGraph, params: &ParamStore, val: &Dataset, trigger: &TriggerSpec) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptySample);
    }
    let exec = Executor::new(graph)?;
    let clean = mean_loss(&exec, params, &val.images, &val.labels)?;
    let trig = mean_loss(&exec, params, &triggered(&val.images, trigger)?, &val.labels)?;
    Ok(trig - clean)
}

/// Continue SGD from `params` on `train`, recording test metrics after each
/// epoch. Shuffling is seeded by `cfg.seed`; poisoning in `cfg` is ignored
/// here (see [`train`]).
pub fn fit(
    graph: &ArchGraph,
    mut params: ParamStore,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    trigger: Option<&TriggerSpec>,
    setting: SettingTag,
) -> Result<(ParamStore, RunHistory)> {
    cfg.check()?;
    if !params.matches(graph) {
        return Err(Error::Config("parameter store does not match graph".into()));
    }
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let exec = Executor::new(graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5f1c_e5ee_d5a1_7u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut velocity = params.zeros_like();
    let mut history = RunHistory::new(setting);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let loss = exec
                    .accumulate_grad(&params, &train.images[i], train.labels[i], &mut grads)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::Diverged { epoch, loss: f64::NAN },
                        other => other,
                    })?;
                epoch_loss += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut().flatten() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            crate::engine::sgd_step(&mut params, &grads, cfg.lr, cfg.momentum, &mut velocity)?;
        }
        let loss = epoch_loss / train.len() as f64;
        if !loss.is_finite() || params.params.values().flatten().any(|t| !t.all_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        let m = evaluate_with(&exec, &params, test, trigger)?;
        history.epochs.push(EpochMetrics { epoch, task_acc: m.task_accuracy, trig_acc: m.triggered_accuracy, loss });
    }
    Ok((params, history))
}

/// Load `cfg.dataset`, poison it if configured, initialise parameters from
/// `cfg.seed` and train.
pub fn train(graph: &ArchGraph, cfg: &TrainConfig, trigger: Option<&TriggerSpec>) -> Result<(ParamStore, RunHistory)> {
    let (train_set, test_set) = cfg.dataset.load()?;
    let train_set = match &cfg.poison {
        Some(p) => poison_dataset(&train_set, p, cfg.seed.wrapping_add(1))?.0,
        None => train_set,
    };
    let params = ParamStore::init(graph, cfg.seed);
    fit(graph, params, &train_set, &test_set, cfg, trigger, SettingTag::Direct)
}
