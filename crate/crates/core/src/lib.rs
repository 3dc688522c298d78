//! Synthesis of multi-turn function-calling training trajectories.
//!
//! The crate is organised the way data flows through it:
//!
//! 1. [`function_pool`] loads and validates the pool of function signatures.
//! 2. [`dependency_graph`] samples candidate neighbours for every function and
//!    asks a judge which of them depend on the target's outputs.
//! 3. [`fsp_sampler`] random-walks the local graphs into function signature
//!    paths (FSPs), and [`node_ops`] enhances them with Merge, Insert and Split.
//! 4. [`translation`] turns every FSP turn into a user query and a reference
//!    call list, executing each turn before the next one is translated.
//! 5. [`trajectory_distiller`] samples positive and negative trajectories with
//!    hint-based context distillation.
//! 6. [`postprocess_mixture`] shuffles, filters, mixes and counts the data.
//!
//! [`training_losses`] and [`contamination`] are standalone numerical checks,
//! [`llm_client`] backs every judge, translator, teacher and student, and
//! [`pipeline`] chains the stages with checkpoints.

pub mod contamination;
pub mod dependency_graph;
pub mod error;
pub mod fc_language;
pub mod fsp_sampler;
pub mod function_pool;
pub mod llm_client;
pub mod node_ops;
pub mod pipeline;
pub mod postprocess_mixture;
pub mod rng;
pub mod training_losses;
pub mod trajectory_distiller;
pub mod translation;

pub use error::{Error, Result};
