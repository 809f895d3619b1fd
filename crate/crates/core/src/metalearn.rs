//! MAML over episodic typing tasks.
//!
//! Each task adapts `θ` on its support set with plain gradient steps,
//! `φ = θ − α∇L(θ, sup)`, and the outer step moves `θ` along the aggregated
//! query-set gradient at `φ`. The first-order variant uses `∇L(φ, query)`
//! directly; the exact variant pulls it back through every inner step with
//! Hessian-vector products.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{apply_update, Backend, Objective, TrainExample};
use crate::corpus::TypingInstance;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::params::ParamSet;
use crate::prompting::{CompiledVerbalizer, Template, Verbalizer};
use crate::training::{finetune, predict_all, KlDirection, Prediction, TrainConfig, TypingTask};

/// A differentiable per-task objective.
pub trait TaskLoss: Sync {
    type Data: Sync;

    fn loss_and_grad(&self, params: &ParamSet, data: &Self::Data) -> Result<(f64, ParamSet)>;

    fn loss(&self, params: &ParamSet, data: &Self::Data) -> Result<f64> {
        self.loss_and_grad(params, data).map(|(l, _)| l)
    }

    fn hessian_vector_product(&self, _params: &ParamSet, _data: &Self::Data, _v: &ParamSet) -> Result<ParamSet> {
        Err(Error::Unsupported("exact meta-gradients need Hessian-vector products".into()))
    }
}

/// Prompted examples plus the verbalizer compiled for their label subset.
#[derive(Debug, Clone)]
pub struct PromptBatch {
    pub verbalizer: CompiledVerbalizer,
    pub examples: Vec<TrainExample>,
}

/// The prompt-typing objective of a backend.
pub struct PromptLoss<'a, B: ?Sized> {
    pub backend: &'a B,
    pub direction: KlDirection,
}

impl<'a, B: Backend + ?Sized> PromptLoss<'a, B> {
    pub fn new(backend: &'a B) -> Self {
        PromptLoss { backend, direction: KlDirection::default() }
    }
}

impl<B: Backend + ?Sized> TaskLoss for PromptLoss<'_, B> {
    type Data = PromptBatch;

    fn loss_and_grad(&self, params: &ParamSet, data: &PromptBatch) -> Result<(f64, ParamSet)> {
        let objective = Objective { verbalizer: &data.verbalizer, direction: self.direction };
        self.backend.loss_and_grad(params, &data.examples, &objective)
    }

    fn loss(&self, params: &ParamSet, data: &PromptBatch) -> Result<f64> {
        let objective = Objective { verbalizer: &data.verbalizer, direction: self.direction };
        self.backend.loss(params, &data.examples, &objective)
    }

    fn hessian_vector_product(&self, params: &ParamSet, data: &PromptBatch, v: &ParamSet) -> Result<ParamSet> {
        let objective = Objective { verbalizer: &data.verbalizer, direction: self.direction };
        self.backend.hessian_vector_product(params, &data.examples, &objective, v)
    }
}

#[derive(Debug, Clone)]
pub struct MetaTask<D> {
    pub support: D,
    pub query: D,
}

/// Prompts an episode under its own label subset.
pub fn prepare_episode<B: Backend + ?Sized>(
    backend: &B,
    episode: &Episode,
    template: &Template,
    verbalizer: &Verbalizer,
    target_smoothing: f64,
) -> Result<MetaTask<PromptBatch>> {
    let task = TypingTask::new(backend, template.clone(), verbalizer, episode.labels.clone())?;
    let batch = |instances: &[TypingInstance]| -> Result<PromptBatch> {
        Ok(PromptBatch {
            verbalizer: task.verbalizer.clone(),
            examples: task.examples(backend, instances, target_smoothing)?,
        })
    };
    Ok(MetaTask { support: batch(&episode.support)?, query: batch(&episode.query)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub outer_batch_size: usize,
    pub max_meta_steps: usize,
    pub n_tasks: usize,
    /// Full-batch inner gradient steps per task.
    pub inner_epochs: usize,
    pub first_order: bool,
    pub aggregation: Aggregation,
    /// Seeds the task schedule.
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 1e-2,
            meta_lr: 5e-3,
            outer_batch_size: 32,
            max_meta_steps: 15,
            n_tasks: 40,
            inner_epochs: 1,
            first_order: true,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

impl MetaConfig {
    /// `max_meta_steps` may be 0, which makes meta-training the identity.
    pub fn validate(&self) -> Result<()> {
        if self.outer_batch_size < 1 || self.n_tasks < 1 || self.inner_epochs < 1 {
            return Err(Error::InvalidConfig("outer_batch_size, n_tasks and inner_epochs must be >= 1".into()));
        }
        for (name, lr) in [("inner_lr", self.inner_lr), ("meta_lr", self.meta_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// One full-batch step `θ − α∇L(θ, support)`.
pub fn inner_update<L: TaskLoss + ?Sized>(loss: &L, params: &ParamSet, support: &L::Data, alpha: f64) -> Result<ParamSet> {
    let (l, grad) = loss.loss_and_grad(params, support)?;
    if !l.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    apply_update(params, &grad, alpha)
}

pub fn task_query_loss<L: TaskLoss + ?Sized>(loss: &L, adapted: &ParamSet, query: &L::Data) -> Result<f64> {
    let l = loss.loss(adapted, query)?;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(l)
}

/// Query loss at the adapted parameters and the meta-gradient with respect
/// to `params`.
pub fn task_meta_gradient<L: TaskLoss + ?Sized>(
    loss: &L,
    params: &ParamSet,
    task: &MetaTask<L::Data>,
    cfg: &MetaConfig,
) -> Result<(f64, ParamSet)> {
    let mut trajectory = Vec::with_capacity(cfg.inner_epochs);
    let mut current = params.clone();
    for _ in 0..cfg.inner_epochs {
        let next = inner_update(loss, &current, &task.support, cfg.inner_lr)?;
        trajectory.push(std::mem::replace(&mut current, next));
    }
    let (query_loss, mut v) = loss.loss_and_grad(&current, &task.query)?;
    if !query_loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    if !cfg.first_order {
        // d/dθ_k of θ_{k+1} = I − αH(θ_k), applied right to left.
        for theta_k in trajectory.iter().rev() {
            let hv = loss.hessian_vector_product(theta_k, &task.support, &v)?;
            v.axpy(-cfg.inner_lr, &hv)?;
        }
    }
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((query_loss, v))
}

/// One outer update. Returns the new parameters and the mean query loss of
/// the batch measured at the adapted parameters.
pub fn meta_step<L: TaskLoss + ?Sized>(
    loss: &L,
    params: &ParamSet,
    tasks: &[&MetaTask<L::Data>],
    cfg: &MetaConfig,
) -> Result<(ParamSet, f64)> {
    if tasks.is_empty() {
        return Err(Error::TaskStreamExhausted);
    }
    let per_task: Vec<(f64, ParamSet)> = tasks
        .par_iter()
        .map(|task| task_meta_gradient(loss, params, task, cfg))
        .collect::<Result<_>>()?;

    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for (l, g) in &per_task {
        total.axpy(1.0, g)?;
        loss_sum += l;
    }
    if cfg.aggregation == Aggregation::Mean {
        total.scale(1.0 / tasks.len() as f64);
    }
    let updated = apply_update(params, &total, cfg.meta_lr)?;
    if !updated.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((updated, loss_sum / tasks.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaStepRecord {
    pub meta_step: usize,
    pub mean_query_loss: f64,
    pub tasks: usize,
}

impl MetaStepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Task indices for every meta step: the pool is walked in a shuffled order
/// and reshuffled each time it runs out.
pub fn task_schedule(pool: usize, cfg: &MetaConfig) -> Result<Vec<Vec<usize>>> {
    if cfg.max_meta_steps == 0 {
        return Ok(Vec::new());
    }
    if pool == 0 {
        return Err(Error::TaskStreamExhausted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut steps = Vec::with_capacity(cfg.max_meta_steps);
    for _ in 0..cfg.max_meta_steps {
        let mut batch = Vec::with_capacity(cfg.outer_batch_size);
        while batch.len() < cfg.outer_batch_size {
            if pos == order.len() {
                order = (0..pool).collect();
                order.shuffle(&mut rng);
                pos = 0;
            }
            batch.push(order[pos]);
            pos += 1;
        }
        steps.push(batch);
    }
    Ok(steps)
}

/// Runs `max_meta_steps` outer updates over `pool`. `on_step` sees every
/// record with the parameters after that step.
pub fn meta_train<L, F>(
    loss: &L,
    init: &ParamSet,
    pool: &[MetaTask<L::Data>],
    cfg: &MetaConfig,
    mut on_step: F,
) -> Result<ParamSet>
where
    L: TaskLoss + ?Sized,
    F: FnMut(&MetaStepRecord, &ParamSet) -> Result<()>,
{
    let mut params = init.clone();
    for (i, batch) in task_schedule(pool.len(), cfg)?.into_iter().enumerate() {
        let tasks: Vec<&MetaTask<L::Data>> = batch.iter().map(|&t| &pool[t]).collect();
        let (next, mean_query_loss) = meta_step(loss, &params, &tasks, cfg)?;
        params = next;
        let record = MetaStepRecord { meta_step: i + 1, mean_query_loss, tasks: tasks.len() };
        log::info!("meta step {}: mean query loss {:.6}", record.meta_step, mean_query_loss);
        on_step(&record, &params)?;
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTestOutput {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
    pub epoch_losses: Vec<f64>,
    pub params: ParamSet,
}

/// Fine-tunes `init` on the target support set, predicts the test set and
/// scores it.
pub fn meta_test<B: Backend + ?Sized>(
    backend: &B,
    init: &ParamSet,
    support: &[TypingInstance],
    test: &[TypingInstance],
    task: &TypingTask,
    train_cfg: &TrainConfig,
) -> Result<MetaTestOutput> {
    if test.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let tuned = finetune(backend, init, support, task, train_cfg)?;
    let predictions = predict_all(backend, &tuned.params, test, task)?;
    let report = score_predictions(&predictions, task)?;
    Ok(MetaTestOutput { report, predictions, epoch_losses: tuned.epoch_losses, params: tuned.params })
}

pub fn score_predictions(predictions: &[Prediction], task: &TypingTask) -> Result<EvalReport> {
    let preds: Vec<_> = predictions.iter().map(|p| (p.instance, p.pred.clone())).collect();
    let golds: Vec<_> = predictions.iter().map(|p| (p.instance, p.gold.clone())).collect();
    evaluate(&preds, &golds, &task.labels)
}
