//! Suppressing one script in a byte-level BPE language model by scaling the
//! output-head rows of the tokens that can produce it.
//!
//! The pipeline: [`vocab_scanner`] classifies every token, [`risk_scorer`]
//! turns classes into per-token risks, [`smoothing`] maps risk to a scale
//! factor, and [`model_editor`] applies the factors to a checkpoint read and
//! written through [`tensor_store`]. [`text_metrics`] measures the result on
//! generated text.

pub mod error;
pub mod fixtures;
pub mod model_editor;
pub mod risk_scorer;
pub mod smoothing;
pub mod tensor_store;
pub mod text_metrics;
pub mod unicode_ranges;
pub mod vocab_scanner;

pub use error::{ContainerError, Error, ErrorKind, Result};
pub use model_editor::{
    apply_edit, plan_edit, plan_for_checkpoint, ApplyOptions, EditPlan, EditReport,
};
pub use risk_scorer::{build_risk_table, RiskTable, SamplingConfig};
pub use smoothing::{scale_factor, SmoothingParams};
pub use tensor_store::{Checkpoint, Dtype, HeadLocation, ModelConfig};
pub use text_metrics::{corpus_report, CorpusReport, FlagRule};
pub use unicode_ranges::{parse_range_spec, UnicodeRangeSet};
pub use vocab_scanner::{scan, ScanSummary, TokenClass, TokenRecord, Vocabulary};
