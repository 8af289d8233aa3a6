//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L, plain CIDEr and a
//! METEOR variant restricted to exact and stem matches.

use crate::pipeline::caption_pieces;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric corpus is empty")]
    EmptyCorpus,
    #[error("corpus of {0} pairs is too small; at least 2 are needed for IDF")]
    CorpusTooSmall(usize),
    #[error("n-gram order {0} is outside 1..=4")]
    InvalidOrder(usize),
    #[error("pair #{0} has no reference")]
    MissingReference(usize),
}

/// A candidate caption with its reference captions, as lowercased tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Metric tokens of a caption: the pipeline pieces, lowercased.
pub fn metric_tokens(text: &str) -> Vec<String> {
    caption_pieces(text)
        .into_iter()
        .map(|p| p.to_lowercase())
        .collect()
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Self {
        Self {
            candidate,
            references,
        }
    }

    pub fn from_text<S: AsRef<str>>(candidate: &str, references: &[S]) -> Self {
        Self {
            candidate: metric_tokens(candidate),
            references: references
                .iter()
                .map(|r| metric_tokens(r.as_ref()))
                .collect(),
        }
    }
}

fn check(corpus: &[EvalPair]) -> Result<(), MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    match corpus.iter().position(|p| p.references.is_empty()) {
        Some(i) => Err(MetricError::MissingReference(i)),
        None => Ok(()),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

const BLEU_EPSILON: f64 = 1e-9;

/// Corpus BLEU-`n`: clipped n-gram counts and lengths are summed over the
/// corpus before taking ratios; the reference length of a pair is the one
/// closest to its candidate (shorter on ties).
pub fn bleu(corpus: &[EvalPair], n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::InvalidOrder(n));
    }
    check(corpus)?;
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for pair in corpus {
        let c = pair.candidate.len();
        cand_len += c;
        ref_len += pair
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .unwrap_or(0);
        for k in 1..=n {
            let cand = ngram_counts(&pair.candidate, k);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &pair.references {
                for (g, cnt) in ngram_counts(r, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in cand {
                matched[k - 1] += cnt.min(max_ref.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    let log_mean = (0..n)
        .map(|k| {
            let p = if matched[k] == 0 {
                BLEU_EPSILON / total[k].max(1) as f64
            } else {
                matched[k] as f64 / total[k] as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / n as f64;
    Ok(brevity_penalty(cand_len, ref_len) * log_mean.exp())
}

pub fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

fn rouge_pair(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over pairs of the best LCS F-score against any reference.
pub fn rouge_l(corpus: &[EvalPair]) -> Result<f64, MetricError> {
    check(corpus)?;
    let sum: f64 = corpus
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| rouge_pair(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / corpus.len() as f64)
}

/// Plain CIDEr: TF-IDF n-gram cosine for n = 1..4, averaged over n and over
/// references, scaled by 10, averaged over the corpus. Document frequency
/// counts the pairs whose references contain an n-gram.
pub fn cider(corpus: &[EvalPair]) -> Result<f64, MetricError> {
    check(corpus)?;
    if corpus.len() < 2 {
        return Err(MetricError::CorpusTooSmall(corpus.len()));
    }
    let docs = corpus.len() as f64;
    let mut score = 0.0;
    let mut dfs: Vec<BTreeMap<&[String], usize>> = Vec::with_capacity(4);
    for n in 1..=4 {
        let mut df = BTreeMap::new();
        for pair in corpus {
            let mut seen: BTreeMap<&[String], ()> = BTreeMap::new();
            for r in &pair.references {
                for g in ngram_counts(r, n).into_keys() {
                    seen.insert(g, ());
                }
            }
            for g in seen.into_keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        dfs.push(df);
    }
    for pair in corpus {
        let mut pair_score = 0.0;
        for n in 1..=4 {
            let vc = tfidf(&pair.candidate, n, &dfs[n - 1], docs);
            let mut per_ref = 0.0;
            for r in &pair.references {
                let vr = tfidf(r, n, &dfs[n - 1], docs);
                per_ref += cosine(&vc, &vr);
            }
            pair_score += per_ref / pair.references.len() as f64;
        }
        score += 10.0 * pair_score / 4.0;
    }
    Ok(score / docs)
}

fn tfidf<'a>(
    tokens: &'a [String],
    n: usize,
    df: &BTreeMap<&[String], usize>,
    docs: f64,
) -> BTreeMap<&'a [String], f64> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| {
            let idf = (docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
            (g, c as f64 / total as f64 * idf)
        })
        .collect()
}

fn cosine<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

const SUFFIXES: [&str; 8] = ["edly", "ing", "est", "ed", "es", "er", "ly", "s"];

/// Strips the first matching suffix when at least three characters remain.
pub fn stem(word: &str) -> &str {
    for s in SUFFIXES {
        if let Some(base) = word.strip_suffix(s) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Unigram alignment: an exact pass, then a stem pass over the leftovers.
/// Each candidate token takes the earliest free reference token. Returns
/// `(candidate index, reference index)` pairs sorted by candidate index.
pub fn align(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_match: Vec<Option<usize>> = vec![None; cand.len()];
    let passes: [fn(&str) -> &str; 2] = [|w| w, stem];
    for key in passes {
        for (i, c) in cand.iter().enumerate() {
            if cand_match[i].is_some() {
                continue;
            }
            let found = reference
                .iter()
                .enumerate()
                .position(|(j, r)| !ref_used[j] && key(r) == key(c));
            if let Some(j) = found {
                ref_used[j] = true;
                cand_match[i] = Some(j);
            }
        }
    }
    cand_match
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect()
}

/// Number of runs of alignments adjacent in both sentences.
pub fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let a = align(cand, reference);
    let m = a.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunk_count(&a) as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag.powi(3))
}

/// Mean over pairs of the best per-reference score.
pub fn meteor_lite(corpus: &[EvalPair]) -> Result<f64, MetricError> {
    check(corpus)?;
    let sum: f64 = corpus
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| meteor_pair(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / corpus.len() as f64)
}

/// Identifies the metric definitions behind a report, so scores produced by
/// a later recalibration are never silently compared with these.
pub const METRICS_VERSION: &str =
    "shotcap-metrics/1 bleu=corpus,eps1e-9 rouge_l=beta1.2 cider=plain,x10 meteor=lite,exact+stem";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl MetricReport {
    pub fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("bleu1", self.bleu1),
            ("bleu2", self.bleu2),
            ("bleu3", self.bleu3),
            ("bleu4", self.bleu4),
            ("meteor", self.meteor),
            ("rouge_l", self.rouge_l),
            ("cider", self.cider),
        ]
    }

    /// One `name value` line per metric, four decimals.
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k:<8} {v:.4}\n"))
            .collect()
    }

    pub fn as_map(&self) -> BTreeMap<&'static str, f64> {
        self.entries().into_iter().collect()
    }
}

pub fn evaluate_corpus(pairs: &[EvalPair]) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        bleu1: bleu(pairs, 1)?,
        bleu2: bleu(pairs, 2)?,
        bleu3: bleu(pairs, 3)?,
        bleu4: bleu(pairs, 4)?,
        meteor: meteor_lite(pairs)?,
        rouge_l: rouge_l(pairs)?,
        cider: cider(pairs)?,
    })
}
