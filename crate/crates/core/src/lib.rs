//! Span-based joint entity and relation extraction.
//!
//! Candidate spans are scored by two heads per task: a binary identification
//! head (is this an entity / a related pair at all) and a multi-class
//! classification head trained with a pairwise ranking loss. Entity
//! identification weights negatives by their overlap with gold entities, and
//! relation inputs carry the entity classifier's scores of both arguments.
//! At prediction time only the classification scores are used.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod representation;
pub mod spanspace;
pub mod train;

pub use corpus::{EntityAnnotation, LabelSchema, RelationAnnotation, Sentence};
pub use error::{Error, Result};
pub use spanspace::Span;
