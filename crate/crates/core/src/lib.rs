//! Zero-shot biomedical concept normalization.
//!
//! Ontology synonyms and free-text mentions are embedded into one vector
//! space by a hashed character n-gram encoder; mentions link to the concept
//! of their nearest synonym. The encoder can be trained with a staged
//! schedule of similarity regression (STS) and contrastive name/definition
//! (LORD) objectives, and linking quality is measured as accuracy@k over
//! test splits.
//!
//! Module map:
//! - [`ontology`]: dictionaries, definitions, training pairs
//! - [`encoder`]: n-gram and lookup encoders, checkpoints
//! - [`training`]: losses, Adam, stage loop, schedules
//! - [`retrieval`]: exact and HNSW indexes, linking
//! - [`evaluation`]: accuracy@k, aggregation, reports
//! - [`cli`]: the `adenorm` command line

pub mod cli;
mod codec;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod ontology;
pub mod retrieval;
pub mod seed;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};
