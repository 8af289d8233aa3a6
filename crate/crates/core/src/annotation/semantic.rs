use super::{AnnotationError, AttributeGroup, SemanticVector, ShotAnnotation};
use serde::{Deserialize, Serialize};

const DEFAULT_LEXICON: &str = include_str!("../../data/semantic_lexicon.json");

/// Keyword table for the non-category attribute groups. Each inner list holds
/// the keywords (single words or phrases) of one attribute, in bit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub trajectory: Vec<Vec<String>>,
    pub court_region: Vec<Vec<String>>,
    pub tactical_intent: Vec<Vec<String>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let lex: Lexicon =
            serde_json::from_str(text).map_err(|e| AnnotationError::MalformedDocument {
                message: format!("lexicon: {e}"),
            })?;
        for (group, entries) in lex.groups() {
            if entries.len() != group.range().len() {
                return Err(AnnotationError::SchemaViolation {
                    path: format!("/{}", group_key(group)),
                    message: format!(
                        "expected {} attributes, found {}",
                        group.range().len(),
                        entries.len()
                    ),
                });
            }
        }
        Ok(lex)
    }

    fn groups(&self) -> [(AttributeGroup, &Vec<Vec<String>>); 3] {
        [
            (AttributeGroup::Trajectory, &self.trajectory),
            (AttributeGroup::CourtRegion, &self.court_region),
            (AttributeGroup::TacticalIntent, &self.tactical_intent),
        ]
    }
}

fn group_key(g: AttributeGroup) -> &'static str {
    match g {
        AttributeGroup::ShotCategory => "shot_category",
        AttributeGroup::Trajectory => "trajectory",
        AttributeGroup::CourtRegion => "court_region",
        AttributeGroup::TacticalIntent => "tactical_intent",
    }
}

/// Lowercased words; hyphenated compounds such as `mid-court` stay whole.
pub(crate) fn match_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|w| w.trim_matches('-'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word index of the first occurrence of `phrase` in `words`.
fn find_phrase(words: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > words.len() {
        return None;
    }
    words.windows(phrase.len()).position(|w| w == phrase)
}

/// Builds the semantic target of a shot: the one-hot shot category plus every
/// attribute whose keywords occur in the caption. When several court regions
/// are mentioned, the earliest mention wins.
pub fn derive_semantic_vector(shot: &ShotAnnotation, lexicon: &Lexicon) -> SemanticVector {
    let words = match_words(&shot.caption);
    let mut v = SemanticVector::for_shot(shot.shot_type);
    for (group, entries) in lexicon.groups() {
        let first_hits: Vec<Option<usize>> = entries
            .iter()
            .map(|keywords| {
                keywords
                    .iter()
                    .filter_map(|k| find_phrase(&words, &match_words(k)))
                    .min()
            })
            .collect();
        let base = group.range().start;
        if group == AttributeGroup::CourtRegion {
            let earliest = first_hits
                .iter()
                .enumerate()
                .filter_map(|(i, pos)| pos.map(|p| (p, i)))
                .min();
            if let Some((_, i)) = earliest {
                v.set(base + i, true);
            }
        } else {
            for (i, pos) in first_hits.iter().enumerate() {
                if pos.is_some() {
                    v.set(base + i, true);
                }
            }
        }
    }
    v
}
