//! Paragraph-level citation recommendation.
//!
//! A query is the citing article's title and abstract followed by the
//! topic sentence of one related-work paragraph; the task is to rank older
//! candidate articles so that the ones cited in the rest of that paragraph
//! come first.
//!
//! * [`corpus`] loads articles and discourse-labelled paragraphs, builds
//!   queries, splits by year and assembles the candidate pool.
//! * [`sampling`] draws training quadruplets with hard negatives.
//! * [`encoder`] is a hashed bag-of-tokens encoder with a trainable head.
//! * [`objective`] holds the triplet and quadruplet hinge losses.
//! * [`trainer`] runs AdamW with warmup and validation-based selection.
//! * [`index`] is an exact L2 nearest-neighbour index.
//! * [`evaluate`] computes R-precision, R@k, MRR and year-gap diagnostics.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod index;
pub mod objective;
pub mod pipeline;
pub mod sampling;
pub mod synthetic;
pub mod trainer;

pub use corpus::{Article, CandidatePool, DiscourseLabel, ParagraphRecord, Query, Sentence};
pub use encoder::{Embedding, EncoderConfig, EncoderParams, FrozenFlags};
pub use error::{PcrError, Result};
pub use evaluate::{MetricReport, RankedQuery};
pub use index::{Hit, VectorIndex};
pub use objective::LossConfig;
pub use sampling::{NegPool, NegativePools, Quadruplet, Quota};
pub use trainer::{LossKind, TrainConfig, TrainOutcome, TrainingData};
