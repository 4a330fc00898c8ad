//! Document-level information extraction for scientific articles: mention
//! tagging, saliency, coreference clustering and 4-ary result-relation
//! extraction, with the evaluation metrics and knowledge-base alignment
//! tools around them.

// Index loops mirror the recurrences in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod coref;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod kbalign;
pub mod mentions;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod relations;
pub mod report;
pub mod seed;
pub mod tagger;

pub use corpus::{
    CorpusSplit, CorpusStats, Document, EntityCluster, EntityType, KbRecord, Mention, RelationKey, RelationTuple,
    Span, SplitFractions, SynthConfig,
};
pub use error::{Error, Result};
pub use metrics::{ClusterMapping, Counts, Prf};
pub use model::{Model, ModelConfig};
pub use pipeline::{DiagnoseMode, DiagnoseReport, DocumentModel, Prediction, PredictedDocument, TrainConfig};
pub use report::{emit_report, ReportFormat, Table};
pub use seed::derive_seed;
