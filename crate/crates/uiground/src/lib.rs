//! Data pipeline and evaluation toolkit for single-turn UI grounding agents:
//! corpus ingestion into a unified sample schema, multitask prompt/target
//! generation with location tokens, MLLM-based annotation, and a click
//! accuracy benchmark harness with significance thresholds and failure
//! categorization.

pub mod augment;
pub mod backend;
pub mod cli;
pub mod error;
pub mod eval;
pub mod failure;
pub mod hierarchy;
pub mod ingest;
pub mod loc;
pub mod model;
pub mod sampling;
pub mod taskgen;

pub use error::{Error, Result};
pub use model::{BBox, Direction, Point, PredictionRecord, Sample, TaskKind};
