use super::{AnnotationError, Discipline, MatchRecord, SegmentKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Add;

/// Counts for one column of the dataset summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsColumn {
    pub matches: u64,
    pub duration_hours: f64,
    pub rallies: u64,
    pub replays: u64,
    pub hawkeye: u64,
    pub hits: u64,
    pub net_hits: u64,
    pub landings: u64,
    /// `hits / rallies` rounded to two decimals (0 when there are no rallies).
    pub avg_hits_per_rally: f64,
}

impl StatsColumn {
    fn of_match(m: &MatchRecord) -> Self {
        let count = |kind| m.segments.iter().filter(|s| s.kind == kind).count() as u64;
        let mut col = StatsColumn {
            matches: 1,
            duration_hours: m.duration_seconds() / 3600.0,
            rallies: m.rallies.len() as u64,
            replays: count(SegmentKind::Replay),
            hawkeye: count(SegmentKind::Hawkeye),
            hits: m.hit_count() as u64,
            net_hits: m.rallies.iter().map(|r| r.net_hits.len() as u64).sum(),
            landings: m.rallies.iter().map(|r| r.landings.len() as u64).sum(),
            avg_hits_per_rally: 0.0,
        };
        col.avg_hits_per_rally = round2(col.avg_exact());
        col
    }

    pub fn avg_exact(&self) -> f64 {
        if self.rallies == 0 {
            0.0
        } else {
            self.hits as f64 / self.rallies as f64
        }
    }
}

impl Add for StatsColumn {
    type Output = StatsColumn;

    fn add(self, o: StatsColumn) -> StatsColumn {
        let mut col = StatsColumn {
            matches: self.matches + o.matches,
            duration_hours: self.duration_hours + o.duration_hours,
            rallies: self.rallies + o.rallies,
            replays: self.replays + o.replays,
            hawkeye: self.hawkeye + o.hawkeye,
            hits: self.hits + o.hits,
            net_hits: self.net_hits + o.net_hits,
            landings: self.landings + o.landings,
            avg_hits_per_rally: 0.0,
        };
        col.avg_hits_per_rally = round2(col.avg_exact());
        col
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub all: StatsColumn,
    pub singles: StatsColumn,
    pub doubles: StatsColumn,
}

impl Add for StatsReport {
    type Output = StatsReport;

    fn add(self, o: StatsReport) -> StatsReport {
        StatsReport {
            all: self.all + o.all,
            singles: self.singles + o.singles,
            doubles: self.doubles + o.doubles,
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn dataset_stats(matches: &[MatchRecord]) -> Result<StatsReport, AnnotationError> {
    if matches.is_empty() {
        return Err(AnnotationError::EmptyCollection);
    }
    let mut report = StatsReport::default();
    for m in matches {
        let col = StatsColumn::of_match(m);
        report.all = report.all + col;
        match m.discipline {
            Discipline::Singles => report.singles = report.singles + col,
            Discipline::Doubles => report.doubles = report.doubles + col,
        }
    }
    Ok(report)
}

impl StatsReport {
    /// Aligned text table with one row per statistic and one column per discipline split.
    pub fn to_table(&self) -> String {
        let cols = [self.all, self.singles, self.doubles];
        let int_row = |f: fn(&StatsColumn) -> u64| -> Vec<String> {
            cols.iter().map(|c| group_thousands(f(c))).collect()
        };
        let rows: Vec<(&str, Vec<String>)> = vec![
            ("Matches", int_row(|c| c.matches)),
            (
                "Total duration (hours)",
                cols.iter()
                    .map(|c| format!("{:.2}", c.duration_hours))
                    .collect(),
            ),
            ("Rallies", int_row(|c| c.rallies)),
            ("Replays", int_row(|c| c.replays)),
            ("Hawk-Eye challenges", int_row(|c| c.hawkeye)),
            ("Hits", int_row(|c| c.hits)),
            ("Net hits", int_row(|c| c.net_hits)),
            ("Shuttle landings", int_row(|c| c.landings)),
            (
                "Avg. hits per rally",
                cols.iter()
                    .map(|c| format!("{:.2}", c.avg_hits_per_rally))
                    .collect(),
            ),
        ];
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(8);
        let val_w = rows
            .iter()
            .flat_map(|(_, v)| v.iter().map(String::len))
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<label_w$}  {:>val_w$}  {:>val_w$}  {:>val_w$}",
            "Category", "All", "Singles", "Doubles"
        );
        let _ = writeln!(out, "{}", "-".repeat(label_w + 3 * (val_w + 2)));
        for (label, vals) in rows {
            let _ = writeln!(
                out,
                "{:<label_w$}  {:>val_w$}  {:>val_w$}  {:>val_w$}",
                label, vals[0], vals[1], vals[2]
            );
        }
        out
    }
}

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Caption length distribution and word frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    /// Whitespace word count -> number of captions.
    pub length_histogram: BTreeMap<usize, u64>,
    /// Most frequent non-stop-words, by descending count then alphabetically.
    pub top_words: Vec<(String, u64)>,
    pub captions: u64,
    pub mean_length: f64,
}

const STOP_WORDS: &str = include_str!("../../data/stop_words.txt");

pub fn stop_words() -> impl Iterator<Item = &'static str> {
    STOP_WORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Normalizes a whitespace word for frequency counting. The player placeholder
/// is kept intact, other words are lowercased with surrounding punctuation removed.
fn count_form(word: &str) -> Option<String> {
    let trimmed = word.trim_matches(|c: char| c.is_ascii_punctuation() && c != '[' && c != ']');
    if trimmed.eq_ignore_ascii_case("[player]") {
        return Some("[PLAYER]".into());
    }
    let w = word
        .trim_matches(|c: char| c.is_ascii_punctuation() && c != '-')
        .to_lowercase();
    if w.is_empty() {
        None
    } else {
        Some(w)
    }
}

pub fn caption_stats(
    matches: &[MatchRecord],
    top_k: usize,
) -> Result<CaptionStats, AnnotationError> {
    let captions = matches
        .iter()
        .flat_map(|m| m.rallies.iter())
        .flat_map(|r| r.hits.iter())
        .map(|h| h.shot.caption.as_str());
    caption_stats_from(captions, top_k)
}

pub fn caption_stats_from<'a>(
    captions: impl IntoIterator<Item = &'a str>,
    top_k: usize,
) -> Result<CaptionStats, AnnotationError> {
    let stop: std::collections::HashSet<&str> = stop_words().collect();
    let mut hist = BTreeMap::new();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut n = 0u64;
    let mut total_len = 0u64;
    for cap in captions {
        let words: Vec<&str> = cap.split_whitespace().collect();
        *hist.entry(words.len()).or_insert(0) += 1;
        n += 1;
        total_len += words.len() as u64;
        for w in words.iter().filter_map(|w| count_form(w)) {
            if !stop.contains(w.as_str()) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    if n == 0 {
        return Err(AnnotationError::EmptyCollection);
    }
    let mut top: Vec<(String, u64)> = counts.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(top_k);
    Ok(CaptionStats {
        length_histogram: hist,
        top_words: top,
        captions: n,
        mean_length: total_len as f64 / n as f64,
    })
}
