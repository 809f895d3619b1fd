//! Few-shot named-entity typing.
//!
//! The crate turns BIO-tagged corpora into entity-typing instances, wraps each
//! instance in a masked prompt, and scores labels through a verbalizer over a
//! masked-language-model word distribution. On top of that sit plain
//! prompt-based fine-tuning, first- and second-order MAML meta-training,
//! rule-based pattern extraction and loose micro/macro F1 evaluation.
//!
//! Everything runs against the [`backend::Backend`] trait. The bundled
//! [`backend::TinyBackend`] is a small trainable masked LM with analytic
//! gradients and exact Hessian-vector products, small enough to exercise
//! every algorithm on a desktop in seconds.

pub mod backend;
pub mod corpus;
pub mod dual;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod metalearn;
pub mod params;
pub mod patterns;
pub mod prompting;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
