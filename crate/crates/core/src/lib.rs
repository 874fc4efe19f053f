//! Iterative pseudolabel refinement over frozen embedding spaces.
//!
//! The crate trains small prompt-style adapters on top of fixed image and
//! class embeddings using zero-shot top-K pseudolabels. Three training
//! strategies are provided:
//!
//! - **FPL**: one top-K pseudolabeling pass followed by one training run.
//! - **IFPL**: repeated pseudolabel / reinitialize / train rounds with a fixed K.
//! - **GRIP**: like IFPL, but K grows each round until the whole unlabeled
//!   pool is pseudolabeled at the last round.
//!
//! Every learning paradigm (semi-supervised, transductive zero-shot,
//! unsupervised, supervised) is the same two-term cross-entropy objective
//! with different weights on the labeled and pseudolabeled terms; see
//! [`types::paradigm_weights`] and [`optim::unified_loss`].

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod pseudolabel;
pub mod strategy;
pub mod sweep;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use metrics::{EvalReport, RobinHoodReport};
pub use model::{Classifier, FrozenEncoder, Modality, PromptConfig, PromptModel};
pub use pseudolabel::{Pseudolabel, PseudolabelSet};
pub use strategy::{RunResult, Strategy, StrategyConfig};
pub use types::{ClassSpace, EmbeddingSet, LabeledSubset, Paradigm, ParadigmConfig, Partition};
