//! Tactical analysis over rally shot sequences: shot types are mapped to
//! coarse categories, predefined category patterns are found by sliding-window
//! matching, and their occurrences are turned into smoothed intensity curves
//! over match time.

use crate::annotation::{MatchRecord, RallyRecord, ShotType};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

const DEFAULT_MAPPING: &str = include_str!("../data/tactic_mapping.json");
const DEFAULT_PATTERNS: &str = include_str!("../data/tactic_patterns.json");

pub const DEFAULT_BIN_WIDTH: f64 = 30.0;
pub const DEFAULT_KERNEL_SIGMA: f64 = 60.0;
pub const SMOOTHING_METHOD: &str = "gaussian-unit-mass-reflect";

#[derive(Debug, thiserror::Error)]
pub enum TacticError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mapping does not cover shot type {0}")]
    IncompleteMapping(ShotType),
    #[error("pattern {id}: {reason}")]
    InvalidPattern { id: String, reason: String },
    #[error("malformed tactic data: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TacticCategory {
    Attack,
    Control,
    Defense,
}

impl TacticCategory {
    pub const ALL: [TacticCategory; 3] = [
        TacticCategory::Attack,
        TacticCategory::Control,
        TacticCategory::Defense,
    ];
}

/// Total map from shot type to tactical category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TacticMapping {
    table: BTreeMap<ShotType, TacticCategory>,
}

impl TacticMapping {
    pub fn new(table: BTreeMap<ShotType, TacticCategory>) -> Result<Self, TacticError> {
        if let Some(missing) = ShotType::ALL.into_iter().find(|t| !table.contains_key(t)) {
            return Err(TacticError::IncompleteMapping(missing));
        }
        Ok(Self { table })
    }

    pub fn from_json(text: &str) -> Result<Self, TacticError> {
        let table: BTreeMap<ShotType, TacticCategory> =
            serde_json::from_str(text).map_err(|e| TacticError::Malformed(e.to_string()))?;
        Self::new(table)
    }

    pub fn category(&self, shot: ShotType) -> TacticCategory {
        self.table[&shot]
    }
}

impl Default for TacticMapping {
    fn default() -> Self {
        Self::from_json(DEFAULT_MAPPING).expect("bundled mapping is total")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPattern")]
pub struct TacticPattern {
    pub pattern_id: String,
    pub sequence: Vec<TacticCategory>,
}

#[derive(Deserialize)]
struct RawPattern {
    pattern_id: String,
    sequence: Vec<TacticCategory>,
}

impl TryFrom<RawPattern> for TacticPattern {
    type Error = TacticError;

    fn try_from(raw: RawPattern) -> Result<Self, TacticError> {
        TacticPattern::new(raw.pattern_id, raw.sequence)
    }
}

impl TacticPattern {
    pub const MIN_LEN: usize = 2;
    pub const MAX_LEN: usize = 8;

    pub fn new(
        pattern_id: impl Into<String>,
        sequence: Vec<TacticCategory>,
    ) -> Result<Self, TacticError> {
        let pattern_id = pattern_id.into();
        if !(Self::MIN_LEN..=Self::MAX_LEN).contains(&sequence.len()) {
            return Err(TacticError::InvalidPattern {
                id: pattern_id,
                reason: format!(
                    "length {} outside [{}, {}]",
                    sequence.len(),
                    Self::MIN_LEN,
                    Self::MAX_LEN
                ),
            });
        }
        Ok(Self {
            pattern_id,
            sequence,
        })
    }
}

pub fn patterns_from_json(text: &str) -> Result<Vec<TacticPattern>, TacticError> {
    serde_json::from_str(text).map_err(|e| TacticError::Malformed(e.to_string()))
}

pub fn default_patterns() -> Vec<TacticPattern> {
    patterns_from_json(DEFAULT_PATTERNS).expect("bundled patterns are valid")
}

pub fn categorize_rally(rally: &RallyRecord, mapping: &TacticMapping) -> Vec<TacticCategory> {
    rally
        .hits
        .iter()
        .map(|h| mapping.category(h.shot.shot_type))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub pattern_id: String,
    pub start_index: usize,
}

/// Start indices of every contiguous match of `pattern` in `seq`, overlaps included.
pub fn find_occurrences<T: PartialEq>(seq: &[T], pattern: &[T]) -> Vec<usize> {
    if pattern.is_empty() || pattern.len() > seq.len() {
        return Vec::new();
    }
    seq.windows(pattern.len())
        .enumerate()
        .filter(|(_, w)| *w == pattern)
        .map(|(i, _)| i)
        .collect()
}

/// All occurrences of all patterns, sorted by start index then pattern id.
pub fn detect_patterns(seq: &[TacticCategory], patterns: &[TacticPattern]) -> Vec<Occurrence> {
    let mut out: Vec<Occurrence> = patterns
        .iter()
        .flat_map(|p| {
            find_occurrences(seq, &p.sequence)
                .into_iter()
                .map(|start_index| Occurrence {
                    pattern_id: p.pattern_id.clone(),
                    start_index,
                })
        })
        .collect();
    out.sort_by(|a, b| {
        a.start_index
            .cmp(&b.start_index)
            .then_with(|| a.pattern_id.cmp(&b.pattern_id))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedOccurrence {
    pub pattern_id: String,
    pub rally_id: String,
    pub start_index: usize,
    /// Match time of the occurrence's first hit.
    pub time_s: f64,
}

/// Pattern occurrences of a whole match, stamped with the time of their first hit.
pub fn match_occurrences(
    m: &MatchRecord,
    mapping: &TacticMapping,
    patterns: &[TacticPattern],
) -> Vec<TimedOccurrence> {
    let mut out = Vec::new();
    for rally in &m.rallies {
        let seq = categorize_rally(rally, mapping);
        for occ in detect_patterns(&seq, patterns) {
            out.push(TimedOccurrence {
                time_s: rally.hits[occ.start_index].frame as f64 / m.fps,
                pattern_id: occ.pattern_id,
                rally_id: rally.rally_id.clone(),
                start_index: occ.start_index,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurve {
    pub pattern_id: String,
    /// Bin centers in seconds.
    pub times: Vec<f64>,
    /// Smoothed occurrences per second.
    pub values: Vec<f64>,
}

impl IntensityCurve {
    pub fn mass(&self, bin_width: f64) -> f64 {
        self.values.iter().sum::<f64>() * bin_width
    }
}

fn check_params(match_duration: f64, bin_width: f64, kernel_sigma: f64) -> Result<(), TacticError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(TacticError::InvalidParameter(format!(
            "bin_width must be positive, got {bin_width}"
        )));
    }
    if !(kernel_sigma.is_finite() && kernel_sigma >= 0.0) {
        return Err(TacticError::InvalidParameter(format!(
            "kernel_sigma must be non-negative, got {kernel_sigma}"
        )));
    }
    if !(match_duration.is_finite() && match_duration > 0.0) {
        return Err(TacticError::InvalidParameter(format!(
            "match_duration must be positive, got {match_duration}"
        )));
    }
    Ok(())
}

fn reflect(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Gaussian smoothing of binned counts. Each source bin spreads unit mass;
/// kernel tails past either end are folded back in, so the total is conserved.
pub fn smooth_counts(counts: &[f64], bin_width: f64, kernel_sigma: f64) -> Vec<f64> {
    let n = counts.len();
    if kernel_sigma == 0.0 || n == 0 {
        return counts.to_vec();
    }
    let radius = (5.0 * kernel_sigma / bin_width).ceil() as i64 + 1;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| {
            let x = d as f64 * bin_width / kernel_sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; n];
    for (j, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (k, w) in weights.iter().enumerate() {
            let idx = reflect(j as i64 + k as i64 - radius, n as i64);
            out[idx] += c * w / total;
        }
    }
    out
}

fn bin_count(match_duration: f64, bin_width: f64) -> usize {
    ((match_duration / bin_width).ceil() as usize).max(1)
}

fn curve_for(
    pattern_id: &str,
    times_s: impl Iterator<Item = f64>,
    n_bins: usize,
    bin_width: f64,
    kernel_sigma: f64,
) -> IntensityCurve {
    let mut counts = vec![0.0; n_bins];
    for t in times_s {
        let b = ((t / bin_width).floor().max(0.0) as usize).min(n_bins - 1);
        counts[b] += 1.0;
    }
    let values = smooth_counts(&counts, bin_width, kernel_sigma)
        .into_iter()
        .map(|c| c / bin_width)
        .collect();
    IntensityCurve {
        pattern_id: pattern_id.to_string(),
        times: (0..n_bins).map(|i| (i as f64 + 0.5) * bin_width).collect(),
        values,
    }
}

/// One curve per pattern id present in `occurrences`, sorted by id.
pub fn intensity_curves(
    occurrences: &[TimedOccurrence],
    match_duration: f64,
    bin_width: f64,
    kernel_sigma: f64,
) -> Result<Vec<IntensityCurve>, TacticError> {
    check_params(match_duration, bin_width, kernel_sigma)?;
    let mut by_id: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for o in occurrences {
        by_id
            .entry(o.pattern_id.as_str())
            .or_default()
            .push(o.time_s);
    }
    let n = bin_count(match_duration, bin_width);
    Ok(by_id
        .into_iter()
        .map(|(id, ts)| curve_for(id, ts.into_iter(), n, bin_width, kernel_sigma))
        .collect())
}

/// Curves for every pattern of a match, in pattern order, including patterns
/// that never occur (all-zero curves).
pub fn match_intensity(
    m: &MatchRecord,
    mapping: &TacticMapping,
    patterns: &[TacticPattern],
    bin_width: f64,
    kernel_sigma: f64,
) -> Result<Vec<IntensityCurve>, TacticError> {
    let duration = m.duration_seconds();
    check_params(duration, bin_width, kernel_sigma)?;
    let occ = match_occurrences(m, mapping, patterns);
    let n = bin_count(duration, bin_width);
    Ok(patterns
        .iter()
        .map(|p| {
            let times = occ
                .iter()
                .filter(|o| o.pattern_id == p.pattern_id)
                .map(|o| o.time_s);
            curve_for(&p.pattern_id, times, n, bin_width, kernel_sigma)
        })
        .collect())
}

pub fn curves_to_csv(curves: &[IntensityCurve]) -> String {
    let mut out = String::from("pattern_id,t_seconds,intensity\n");
    for c in curves {
        for (t, v) in c.times.iter().zip(&c.values) {
            let _ = writeln!(out, "{},{},{:.9}", c.pattern_id, t, v);
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line plot of the curves over match time.
pub fn curves_to_svg(curves: &[IntensityCurve], title: &str) -> String {
    let (w, h, pad) = (900.0, 360.0, 50.0);
    let t_max = curves
        .iter()
        .filter_map(|c| c.times.last())
        .fold(1.0f64, |a, &b| a.max(b));
    let v_max = curves
        .iter()
        .flat_map(|c| c.values.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-12);
    let sx = |t: f64| pad + t / t_max * (w - 2.0 * pad - 150.0);
    let sy = |v: f64| h - pad - v / v_max * (h - 2.0 * pad);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="25" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad - 150.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">match time (s), max {:.0}</text>"#,
        pad,
        h - 15.0,
        t_max
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .times
            .iter()
            .zip(&c.values)
            .map(|(t, v)| format!("{:.2},{:.2}", sx(*t), sy(*v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            w - pad - 140.0,
            pad + 16.0 * i as f64,
            escape(&c.pattern_id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
