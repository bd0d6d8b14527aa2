//! Keyword labeling schema and the title labeler built on it.

mod labeler;
mod schema;

pub use labeler::{apply_labels, labels_for, scan_title, LabelSource, LabelerError, LabelingOutcome};
pub use schema::{parse_schema, KeywordRule, LabelSchema, SchemaError};
