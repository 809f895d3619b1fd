//! Masked-language-model backends with functional parameter access.
//!
//! A backend maps a [`PromptedInput`] and a [`ParamSet`] to the hidden
//! representation at the mask position, turns that into a word distribution
//! through its MLM head, and differentiates the prompt-typing objective with
//! respect to every parameter. Parameters are never held inside the backend,
//! so MAML can evaluate `θ` and any number of adapted `φ_i` side by side.

mod checkpoint;
mod tiny;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use tiny::{TinyBackend, TinyConfig};

pub use crate::params::apply_update;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::prompting::{label_distribution, CompiledVerbalizer, PromptedInput, Tokenizer};
use crate::training::KlDirection;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    pub mask_token_id: u32,
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mask_token_id as usize >= self.vocab_size {
            return Err(Error::InvalidConfig("mask_token_id must be < vocab_size".into()));
        }
        if self.max_seq_len < 8 {
            return Err(Error::InvalidConfig("max_seq_len must be >= 8".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One prompt with the label distribution it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: PromptedInput,
    pub target: Vec<f64>,
}

/// What the backend differentiates: verbalized label distribution against
/// the example target under the given KL direction.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub verbalizer: &'a CompiledVerbalizer,
    pub direction: KlDirection,
}

impl<'a> Objective<'a> {
    pub fn new(verbalizer: &'a CompiledVerbalizer) -> Self {
        Objective { verbalizer, direction: KlDirection::default() }
    }
}

pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    fn tokenizer(&self) -> &dyn Tokenizer;

    /// Fresh random parameters.
    fn init_params(&self, seed: u64) -> ParamSet;

    /// Hidden representation at the mask position (inference mode).
    fn encode(&self, input: &PromptedInput, params: &ParamSet) -> Result<Vec<f64>>;

    /// Vocabulary distribution from a mask representation.
    fn word_distribution(&self, h: &[f64], params: &ParamSet) -> Result<Vec<f64>>;

    /// Mean objective over `batch` and its gradient.
    fn loss_and_grad(
        &self,
        params: &ParamSet,
        batch: &[TrainExample],
        objective: &Objective<'_>,
    ) -> Result<(f64, ParamSet)>;

    /// Hessian of the mean objective times `v`.
    fn hessian_vector_product(
        &self,
        _params: &ParamSet,
        _batch: &[TrainExample],
        _objective: &Objective<'_>,
        _v: &ParamSet,
    ) -> Result<ParamSet> {
        Err(Error::Unsupported("this backend has no second-order support".into()))
    }

    fn loss(&self, params: &ParamSet, batch: &[TrainExample], objective: &Objective<'_>) -> Result<f64> {
        self.loss_and_grad(params, batch, objective).map(|(l, _)| l)
    }

    /// Label distribution for one prompt.
    fn label_distribution(
        &self,
        input: &PromptedInput,
        params: &ParamSet,
        verbalizer: &CompiledVerbalizer,
    ) -> Result<Vec<f64>> {
        let h = self.encode(input, params)?;
        let pw = self.word_distribution(&h, params)?;
        label_distribution(&pw, verbalizer)
    }
}
