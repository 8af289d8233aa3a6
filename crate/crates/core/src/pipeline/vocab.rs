use super::PipelineError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const PLAYER_TOKEN: &str = "[PLAYER]";

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation() && c != '-'
}

/// Normalized surface tokens of a caption: lowercased, split on whitespace,
/// punctuation detached, and the player placeholder kept as one token.
pub fn caption_pieces(caption: &str) -> Vec<String> {
    let lower = caption.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = lower.as_str();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("[player]") {
            flush(&mut word, &mut out);
            out.push(PLAYER_TOKEN.to_string());
            rest = &rest["[player]".len()..];
            continue;
        }
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if is_split_punct(c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else {
            word.push(c);
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut out);
    out
}

/// Joins surface tokens back into text. Closing punctuation attaches to the
/// preceding token and opening brackets to the following one.
pub fn join_pieces<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for p in pieces {
        let p = p.as_ref();
        let closing = matches!(p, "." | "," | ";" | ":" | "!" | "?" | ")");
        if !(glue_next || closing) {
            out.push(' ');
        }
        out.push_str(p);
        glue_next = p == "(";
    }
    out
}

/// Token/id table. Ids 0..=3 are PAD, BOS, EOS and UNK; the player placeholder
/// is always present as a single token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t.to_string());
        }
        v.push(PLAYER_TOKEN.to_string());
        for w in words {
            v.push(w.into());
        }
        v
    }

    fn push(&mut self, t: String) {
        if !self.index.contains_key(&t) {
            self.index.insert(t.clone(), self.tokens.len() as u32);
            self.tokens.push(t);
        }
    }

    /// Vocabulary of every piece occurring at least `min_count` times, most
    /// frequent first (ties alphabetical).
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for c in captions {
            for p in caption_pieces(c) {
                *counts.entry(p).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[BOS, pieces.., EOS]`, out-of-vocabulary pieces mapped to UNK.
    pub fn tokenize(&self, caption: &str) -> Vec<u32> {
        let mut ids = vec![BOS];
        ids.extend(caption_pieces(caption).iter().map(|p| self.id(p)));
        ids.push(EOS);
        ids
    }

    /// Surface pieces of an id sequence, dropping PAD/BOS/EOS and stopping at the first EOS.
    pub fn pieces(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .copied()
            .skip_while(|&i| i == BOS)
            .take_while(|&i| i != EOS)
            .filter(|&i| i != PAD && i != BOS)
            .map(|i| self.token(i).unwrap_or(RESERVED[UNK as usize]))
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        join_pieces(&self.pieces(ids))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("strings serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let tokens: Vec<String> = serde_json::from_str(text)
            .map_err(|e| PipelineError::Malformed(format!("vocabulary: {e}")))?;
        if tokens.len() < 5
            || tokens[..4] != RESERVED.map(String::from)
            || tokens[4] != PLAYER_TOKEN
        {
            return Err(PipelineError::Malformed(
                "vocabulary must start with <pad> <bos> <eos> <unk> [PLAYER]".into(),
            ));
        }
        let v = Self::from_tokens(tokens.iter().skip(5).cloned());
        if v.len() != tokens.len() {
            return Err(PipelineError::Malformed(
                "vocabulary has duplicate tokens".into(),
            ));
        }
        Ok(v)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens: Vec<String> = Vec::deserialize(d)?;
        let text = serde_json::to_string(&tokens).map_err(serde::de::Error::custom)?;
        Self::from_json(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_player_caption() {
        let v = Vocabulary::from_tokens(["hits", "a", "smash", "."]);
        let ids = v.tokenize("[PLAYER] hits a smash.");
        let names: Vec<&str> = ids.iter().map(|i| v.token(*i).unwrap()).collect();
        assert_eq!(
            names,
            ["<bos>", "[PLAYER]", "hits", "a", "smash", ".", "<eos>"]
        );
        assert_eq!(v.detokenize(&ids), "[PLAYER] hits a smash.");
    }

    #[test]
    fn empty_and_oov() {
        let v = Vocabulary::from_tokens(["a"]);
        assert_eq!(v.tokenize(""), vec![BOS, EOS]);
        let ids = v.tokenize("a zebra");
        assert_eq!(ids, vec![BOS, v.id("a"), UNK, EOS]);
        assert_eq!(v.detokenize(&ids), "a <unk>");
    }

    #[test]
    fn pieces_detach_punctuation_but_keep_hyphens() {
        assert_eq!(
            caption_pieces("Toward the MID-COURT, (softly)!"),
            ["toward", "the", "mid-court", ",", "(", "softly", ")", "!"]
        );
        assert_eq!(caption_pieces("[player]'s"), ["[PLAYER]", "'", "s"]);
    }

    #[test]
    fn build_orders_by_frequency_and_round_trips_json() {
        let v = Vocabulary::build(["b a a", "a c"], 1);
        assert_eq!(&v.tokens()[5..], ["a", "b", "c"]);
        let again = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(again, v);
        assert!(Vocabulary::from_json("[\"x\"]").is_err());
        let min2 = Vocabulary::build(["b a a", "a c"], 2);
        assert_eq!(min2.len(), 6);
    }

    fn strip_ws(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    proptest! {
        #[test]
        fn round_trip_up_to_case_and_whitespace(s in "[ -~\\t\\n\u{e9}\u{3a3}\u{df}]{0,60}") {
            let v = Vocabulary::build([s.as_str()], 1);
            let back = v.detokenize(&v.tokenize(&s));
            prop_assert_eq!(strip_ws(&back).to_lowercase(), strip_ws(&s.to_lowercase()));
            // Tokenization is idempotent on its own output.
            prop_assert_eq!(v.tokenize(&back), v.tokenize(&s));
        }
    }
}
