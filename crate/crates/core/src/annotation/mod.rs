//! Hierarchical match annotations: segments, rallies, hit events and shot
//! captions, with parsing, frame-level validation and dataset statistics.

mod parse;
mod semantic;
mod stats;
mod types;
mod validate;

pub use parse::{parse_match, parse_match_value, serialize_match};
pub use semantic::{derive_semantic_vector, Lexicon};
pub use stats::{
    caption_stats, caption_stats_from, dataset_stats, stop_words, CaptionStats, StatsColumn,
    StatsReport,
};
pub use types::{
    AttributeGroup, Discipline, Frame, HitEvent, MatchRecord, PlayerSlot, RallyRecord, Segment,
    SegmentKind, SemanticVector, ShotAnnotation, ShotType, ATTRIBUTE_NAMES, SEMANTIC_DIM,
};
pub use validate::{has_errors, rules, validate_match, Severity, Violation};

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("malformed document: {message}")]
    MalformedDocument { message: String },
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("empty collection")]
    EmptyCollection,
}
