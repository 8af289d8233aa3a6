use super::{AnnotationError, MatchRecord};
use serde_json::Value;

/// Parses one match annotation document.
///
/// Unknown keys at any level are kept in the `extras` map of the enclosing
/// record so that a parse/serialize cycle does not drop tool-specific data.
pub fn parse_match(document: &str) -> Result<MatchRecord, AnnotationError> {
    let value: Value =
        serde_json::from_str(document).map_err(|e| AnnotationError::MalformedDocument {
            message: e.to_string(),
        })?;
    parse_match_value(value)
}

pub fn parse_match_value(value: Value) -> Result<MatchRecord, AnnotationError> {
    let record: MatchRecord = serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = json_pointer(e.path());
        AnnotationError::SchemaViolation {
            path: pointer,
            message: e.into_inner().to_string(),
        }
    })?;
    if !(record.fps.is_finite() && record.fps > 0.0) {
        return Err(AnnotationError::SchemaViolation {
            path: "/fps".into(),
            message: format!("fps must be a positive number, got {}", record.fps),
        });
    }
    Ok(record)
}

pub fn serialize_match(m: &MatchRecord) -> String {
    serde_json::to_string_pretty(m).expect("match records always serialize")
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => {
                out.push('/');
                out.push_str(&index.to_string());
            }
            Segment::Map { key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}
