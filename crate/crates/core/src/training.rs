//! Prompt-based fine-tuning with a KL-divergence objective.
//!
//! The trained objective is `D_KL(target ‖ pred)`, which for one-hot targets
//! is the cross-entropy `-ln pred_gold`. The reverse direction
//! `D_KL(pred ‖ target)` is only finite when every target entry is positive,
//! so it is accepted for smoothed targets only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{apply_update, Backend, Objective, TrainExample};
use crate::corpus::{InstanceId, LabelSet, TypingInstance};
use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::prompting::{apply_template, label_scores, CompiledVerbalizer, PromptedInput, Template, Verbalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `D_KL(target ‖ pred)`.
    #[default]
    TargetToPred,
    /// `D_KL(pred ‖ target)`, requires strictly positive targets.
    PredToTarget,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidDistribution(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// `D_KL(target ‖ pred) = Σ_y target_y (ln target_y − ln pred_y)`.
pub fn kl_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    kl_loss_directed(pred, target, KlDirection::TargetToPred)
}

pub fn kl_loss_directed(pred: &[f64], target: &[f64], direction: KlDirection) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidDistribution(format!("lengths {} and {}", pred.len(), target.len())));
    }
    check_distribution("pred", pred)?;
    check_distribution("target", target)?;
    let (p, q) = match direction {
        KlDirection::TargetToPred => (target, pred),
        KlDirection::PredToTarget => (pred, target),
    };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::InvalidDistribution("divergence is infinite: zero where mass is expected".into()));
        }
        total += a * (a.ln() - b.ln());
    }
    Ok(total.max(0.0))
}

/// Loss of one example and its sparse gradient with respect to the word
/// distribution, as `(word id, ∂loss/∂p(w))` pairs (ids may repeat).
pub(crate) fn objective_word_grad<T: Scalar>(
    pw: &[T],
    verbalizer: &CompiledVerbalizer,
    target: &[f64],
    direction: KlDirection,
) -> Result<(T, Vec<(usize, T)>)> {
    let scores = label_scores(pw, verbalizer);
    let mut total = T::zero();
    for &s in &scores {
        total += s;
    }
    let n = scores.len();
    if total.value() <= 0.0 {
        // Degenerate uniform fallback is locally constant.
        let u = vec![1.0 / n as f64; n];
        return Ok((T::from_f64(kl_loss_directed(&u, target, direction)?), Vec::new()));
    }
    let pred: Vec<T> = scores.iter().map(|&s| s / total).collect();

    let mut loss = T::zero();
    let mut dpred = vec![T::zero(); n];
    match direction {
        KlDirection::TargetToPred => {
            for y in 0..n {
                let t = target[y];
                if t > 0.0 {
                    loss += (T::from_f64(t.ln()) - pred[y].ln()).scale(t);
                    dpred[y] = -(T::from_f64(t) / pred[y]);
                }
            }
        }
        KlDirection::PredToTarget => {
            if target.iter().any(|&t| t <= 0.0) {
                return Err(Error::InvalidDistribution(
                    "D_KL(pred ‖ target) needs strictly positive targets; use target smoothing".into(),
                ));
            }
            for y in 0..n {
                let lp = pred[y].ln() - T::from_f64(target[y].ln());
                loss += pred[y] * lp;
                dpred[y] = lp + T::one();
            }
        }
    }

    let mut mean = T::zero();
    for y in 0..n {
        mean += dpred[y] * pred[y];
    }
    let mut grads = Vec::new();
    for (y, words) in verbalizer.words.iter().enumerate() {
        let dscore = (dpred[y] - mean) / total;
        let k = 1.0 / words.len() as f64;
        for &(id, eta) in words {
            grads.push((id, dscore.scale(eta * k)));
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub inner_batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub target_smoothing: f64,
    pub direction: KlDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_batch_size: 8,
            epochs: 10,
            lr: 1e-2,
            seed: 0,
            target_smoothing: 0.0,
            direction: KlDirection::TargetToPred,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.inner_batch_size < 1 {
            return Err(Error::InvalidConfig("epochs and inner_batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.target_smoothing) {
            return Err(Error::InvalidConfig("target_smoothing must lie in [0, 0.5)".into()));
        }
        if self.direction == KlDirection::PredToTarget && self.target_smoothing == 0.0 {
            return Err(Error::InvalidConfig("pred_to_target KL requires target_smoothing > 0".into()));
        }
        Ok(())
    }
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Template, verbalizer and label set resolved against one backend.
#[derive(Debug, Clone)]
pub struct TypingTask {
    pub template: Template,
    pub verbalizer: CompiledVerbalizer,
    pub labels: LabelSet,
    pub max_seq_len: usize,
}

impl TypingTask {
    pub fn new<B: Backend + ?Sized>(backend: &B, template: Template, verbalizer: &Verbalizer, labels: LabelSet) -> Result<Self> {
        let compiled = verbalizer.compile(&labels, backend.tokenizer())?;
        Ok(TypingTask { template, verbalizer: compiled, labels, max_seq_len: backend.spec().max_seq_len })
    }

    pub fn prompt<B: Backend + ?Sized>(&self, backend: &B, inst: &TypingInstance) -> Result<PromptedInput> {
        apply_template(inst, &self.template, backend.tokenizer(), self.max_seq_len)
    }

    /// `(1 - s)·onehot + s/n`.
    pub fn target(&self, label: &str, smoothing: f64) -> Result<Vec<f64>> {
        let gold = self.labels.index_of(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        let n = self.labels.len();
        let mut t = vec![smoothing / n as f64; n];
        t[gold] += 1.0 - smoothing;
        Ok(t)
    }

    pub fn examples<B: Backend + ?Sized>(
        &self,
        backend: &B,
        instances: &[TypingInstance],
        smoothing: f64,
    ) -> Result<Vec<TrainExample>> {
        instances
            .iter()
            .map(|inst| {
                Ok(TrainExample { input: self.prompt(backend, inst)?, target: self.target(&inst.label, smoothing)? })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutput {
    pub params: ParamSet,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch gradient descent over the support set, reshuffled every epoch.
pub fn finetune<B: Backend + ?Sized>(
    backend: &B,
    params: &ParamSet,
    support: &[TypingInstance],
    task: &TypingTask,
    cfg: &TrainConfig,
) -> Result<FinetuneOutput> {
    cfg.validate()?;
    if support.is_empty() {
        return Err(Error::InvalidConfig("support set is empty".into()));
    }
    let examples = task.examples(backend, support, cfg.target_smoothing)?;
    let objective = Objective { verbalizer: &task.verbalizer, direction: cfg.direction };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut current = params.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.inner_batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = backend.loss_and_grad(&current, &batch, &objective)?;
            current = apply_update(&current, &grad, cfg.lr)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / examples.len() as f64;
        log::debug!("finetune epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(FinetuneOutput { params: current, epoch_losses })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in dist.iter().enumerate() {
        if x > dist[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance: InstanceId,
    pub gold: String,
    pub pred: String,
    pub dist: Vec<f64>,
}

impl Prediction {
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "instance": self.instance.to_string(),
            "gold": self.gold,
            "pred": self.pred,
            "dist": self.dist,
        })
        .to_string()
    }
}

pub fn predict<B: Backend + ?Sized>(
    backend: &B,
    params: &ParamSet,
    inst: &TypingInstance,
    task: &TypingTask,
) -> Result<(String, Vec<f64>)> {
    let input = task.prompt(backend, inst)?;
    let dist = backend.label_distribution(&input, params, &task.verbalizer)?;
    Ok((task.labels.name(argmax(&dist)).to_string(), dist))
}

/// Predictions for every instance, in input order.
pub fn predict_all<B: Backend + ?Sized>(
    backend: &B,
    params: &ParamSet,
    instances: &[TypingInstance],
    task: &TypingTask,
) -> Result<Vec<Prediction>> {
    instances
        .par_iter()
        .map(|inst| {
            let (pred, dist) = predict(backend, params, inst, task)?;
            Ok(Prediction { instance: inst.id(), gold: inst.label.clone(), pred, dist })
        })
        .collect()
}

pub fn epoch_trace_lines(losses: &[f64]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::json!({"epoch": i + 1, "loss": l}).to_string() + "\n")
        .collect()
}
