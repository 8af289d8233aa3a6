use super::{MatchRecord, SegmentKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub severity: Severity,
    pub rule_id: String,
    /// JSON pointer to the offending node.
    pub path: String,
    pub message: String,
}

pub mod rules {
    pub const SEGMENT_SPAN: &str = "segment-span";
    pub const SEGMENT_BOUNDS: &str = "segment-in-bounds";
    pub const SEGMENT_ORDER: &str = "segments-sorted";
    pub const SEGMENT_OVERLAP: &str = "segments-non-overlapping";
    pub const RALLY_SEGMENT: &str = "rally-segment-match";
    pub const HITS_SORTED: &str = "hits-sorted";
    pub const LANDING_AT_MOST_ONE: &str = "landing-at-most-one";
    pub const EVENT_IN_SPAN: &str = "event-in-span";
    pub const SLOT_ALTERNATION: &str = "slot-alternation";
    pub const EMPTY_RALLY: &str = "empty-rally";
    pub const CAPTION_NON_EMPTY: &str = "caption-non-empty";
    pub const PLAYER_TOKEN: &str = "player-token";
    pub const SEMANTIC_TARGET: &str = "semantic-target";
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, severity: Severity, rule: &str, path: String, message: String) {
        self.0.push(Violation {
            severity,
            rule_id: rule.to_string(),
            path,
            message,
        });
    }

    fn error(&mut self, rule: &str, path: String, message: String) {
        self.push(Severity::Error, rule, path, message);
    }

    fn warn(&mut self, rule: &str, path: String, message: String) {
        self.push(Severity::Warn, rule, path, message);
    }
}

/// Checks every frame-level consistency rule of a parsed match.
///
/// Returns an empty list for a clean record. Non-alternating player slots and
/// rallies without hits are reported as warnings.
pub fn validate_match(m: &MatchRecord) -> Vec<Violation> {
    let mut out = Collector(Vec::new());

    for (i, seg) in m.segments.iter().enumerate() {
        let path = format!("/segments/{i}");
        if seg.start_frame >= seg.end_frame {
            out.error(
                rules::SEGMENT_SPAN,
                path.clone(),
                format!(
                    "start_frame {} must be before end_frame {}",
                    seg.start_frame, seg.end_frame
                ),
            );
        }
        if seg.end_frame >= m.total_frames || seg.start_frame >= m.total_frames {
            out.error(
                rules::SEGMENT_BOUNDS,
                path.clone(),
                format!(
                    "segment [{}, {}] exceeds total_frames {}",
                    seg.start_frame, seg.end_frame, m.total_frames
                ),
            );
        }
        if i > 0 {
            let prev = &m.segments[i - 1];
            if seg.start_frame < prev.start_frame {
                out.error(
                    rules::SEGMENT_ORDER,
                    path.clone(),
                    format!(
                        "segment starts at {} before previous segment at {}",
                        seg.start_frame, prev.start_frame
                    ),
                );
            } else if seg.start_frame <= prev.end_frame {
                out.error(
                    rules::SEGMENT_OVERLAP,
                    path,
                    format!(
                        "segment starts at {} inside previous segment ending at {}",
                        seg.start_frame, prev.end_frame
                    ),
                );
            }
        }
    }

    let rally_segments = m
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Rally)
        .count();
    if rally_segments != m.rallies.len() {
        out.error(
            rules::RALLY_SEGMENT,
            "/rallies".into(),
            format!(
                "{} rally records but {} rally segments",
                m.rallies.len(),
                rally_segments
            ),
        );
    }

    for (ri, (rally, span)) in m.rally_with_span().enumerate() {
        let rpath = format!("/rallies/{ri}");
        if rally.hits.is_empty() {
            out.warn(
                rules::EMPTY_RALLY,
                format!("{rpath}/hits"),
                format!("rally {} has no hit events", rally.rally_id),
            );
        }
        if rally.landings.len() > 1 {
            out.error(
                rules::LANDING_AT_MOST_ONE,
                format!("{rpath}/landing"),
                format!(
                    "rally {} has {} landing events",
                    rally.rally_id,
                    rally.landings.len()
                ),
            );
        }
        for (hi, pair) in rally.hits.windows(2).enumerate() {
            if pair[1].frame <= pair[0].frame {
                out.error(
                    rules::HITS_SORTED,
                    format!("{rpath}/hits/{}/frame", hi + 1),
                    format!(
                        "hit at frame {} does not follow hit at frame {}",
                        pair[1].frame, pair[0].frame
                    ),
                );
            }
            if pair[1].player_slot == pair[0].player_slot {
                out.warn(
                    rules::SLOT_ALTERNATION,
                    format!("{rpath}/hits/{}/player_slot", hi + 1),
                    format!(
                        "consecutive hits by the same slot at frame {}",
                        pair[1].frame
                    ),
                );
            }
        }

        if let Some(span) = span {
            let mut check = |frame: u64, path: String, what: &str| {
                if !span.contains(frame) {
                    out.error(
                        rules::EVENT_IN_SPAN,
                        path,
                        format!(
                            "{what} frame {frame} outside rally span [{}, {}]",
                            span.start_frame, span.end_frame
                        ),
                    );
                }
            };
            for (hi, hit) in rally.hits.iter().enumerate() {
                check(hit.frame, format!("{rpath}/hits/{hi}/frame"), "hit");
            }
            for (ni, &f) in rally.net_hits.iter().enumerate() {
                check(f, format!("{rpath}/net_hits/{ni}"), "net hit");
            }
            for &f in &rally.landings {
                check(f, format!("{rpath}/landing"), "landing");
            }
        }

        for (hi, hit) in rally.hits.iter().enumerate() {
            let spath = format!("{rpath}/hits/{hi}/shot");
            let caption = &hit.shot.caption;
            if caption.trim().is_empty() {
                out.error(
                    rules::CAPTION_NON_EMPTY,
                    format!("{spath}/caption"),
                    "caption is empty".into(),
                );
            }
            if let Some(bad) = bracketed_tokens(caption).find(|t| *t != "[PLAYER]") {
                out.error(
                    rules::PLAYER_TOKEN,
                    format!("{spath}/caption"),
                    format!("bracketed token {bad} is not the [PLAYER] placeholder"),
                );
            }
            if let Some(target) = &hit.shot.semantic_target {
                if !target.is_well_formed() || target.shot_category() != Some(hit.shot.shot_type) {
                    out.error(
                        rules::SEMANTIC_TARGET,
                        format!("{spath}/semantic_target"),
                        format!(
                            "semantic target must set exactly the {} category bit and at most one region",
                            hit.shot.shot_type
                        ),
                    );
                }
            }
        }
    }

    out.0
}

pub fn has_errors(violations: &[Violation]) -> bool {
    violations.iter().any(|v| v.severity == Severity::Error)
}

fn bracketed_tokens(s: &str) -> impl Iterator<Item = &str> {
    let mut rest = s;
    std::iter::from_fn(move || {
        let open = rest.find('[')?;
        let close = rest[open..].find(']').map(|c| open + c)?;
        let tok = &rest[open..=close];
        rest = &rest[close + 1..];
        Some(tok)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{parse_match, PlayerSlot};

    fn fixture() -> MatchRecord {
        parse_match(crate::annotation::parse::tests::MINIMAL).unwrap()
    }

    fn rule_ids(v: &[Violation]) -> Vec<&str> {
        v.iter().map(|v| v.rule_id.as_str()).collect()
    }

    #[test]
    fn clean_fixture_has_no_violations() {
        assert!(validate_match(&fixture()).is_empty());
    }

    #[test]
    fn double_landing() {
        let mut m = fixture();
        m.rallies[0].landings = vec![180, 190];
        let v = validate_match(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule_id, rules::LANDING_AT_MOST_ONE);
        assert_eq!(v[0].severity, Severity::Error);
        assert_eq!(v[0].path, "/rallies/0/landing");
    }

    #[test]
    fn hit_outside_span() {
        let mut m = fixture();
        m.rallies[0].hits[1].frame = 250;
        let v = validate_match(&m);
        assert_eq!(rule_ids(&v), vec![rules::EVENT_IN_SPAN]);
        assert_eq!(v[0].severity, Severity::Error);
    }

    #[test]
    fn slot_repeat_is_warning() {
        let mut m = fixture();
        m.rallies[0].hits[1].player_slot = PlayerSlot::Near;
        let v = validate_match(&m);
        assert_eq!(rule_ids(&v), vec![rules::SLOT_ALTERNATION]);
        assert!(!has_errors(&v));
    }

    #[test]
    fn segment_rules() {
        let mut m = fixture();
        m.segments.push(crate::annotation::Segment::new(
            crate::annotation::SegmentKind::Replay,
            150,
            300,
        ));
        m.segments.push(crate::annotation::Segment::new(
            crate::annotation::SegmentKind::Hawkeye,
            990,
            1000,
        ));
        let v = validate_match(&m);
        assert_eq!(
            rule_ids(&v),
            vec![rules::SEGMENT_OVERLAP, rules::SEGMENT_BOUNDS]
        );
    }

    #[test]
    fn caption_rules_and_unsorted_hits() {
        let mut m = fixture();
        m.rallies[0].hits[0].shot.caption = "  ".into();
        m.rallies[0].hits[1].shot.caption = "[Lin Dan] lifts".into();
        m.rallies[0].hits[1].frame = 105;
        let v = validate_match(&m);
        assert_eq!(
            rule_ids(&v),
            vec![
                rules::HITS_SORTED,
                rules::CAPTION_NON_EMPTY,
                rules::PLAYER_TOKEN
            ]
        );
    }

    #[test]
    fn rally_without_segment() {
        let mut m = fixture();
        m.rallies.push(crate::annotation::RallyRecord::new("m1-r2"));
        let v = validate_match(&m);
        assert_eq!(rule_ids(&v), vec![rules::RALLY_SEGMENT, rules::EMPTY_RALLY]);
    }
}
