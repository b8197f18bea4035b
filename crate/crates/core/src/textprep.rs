//! Text preparation: hashtag/mention expansion, unigram dictionary
//! segmentation, creator-context serialization, and role-capped wordpiece
//! tokenization.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CreatorAttribute, CreatorProfile};
use crate::error::{Error, Result};

/// Tokens longer than this skip dictionary segmentation and pass through,
/// bounding the O(L^2) dynamic program.
pub const MAX_SEGMENT_CHARS: usize = 40;

/// Marker prefix on vocabulary entries that continue a word.
pub const CONTINUATION: &str = "##";

pub const UNKNOWN_TOKEN: &str = "[UNK]";
pub const PADDING_TOKEN: &str = "[PAD]";

/// Unigram counts backing maximum-probability compound-word segmentation.
#[derive(Debug, Clone)]
pub struct UnigramDictionary {
    counts: HashMap<String, u64>,
    total: u64,
}

impl UnigramDictionary {
    pub fn new(counts: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut map = HashMap::new();
        let mut total = 0u64;
        for (token, count) in counts {
            if count == 0 {
                return Err(Error::InvalidRecord {
                    entity: "unigram",
                    id: token,
                    reason: "count must be positive".into(),
                });
            }
            total += count;
            map.insert(token, count);
        }
        Ok(UnigramDictionary { counts: map, total })
    }

    /// Parses tab-separated `token<TAB>count` lines.
    pub fn from_tsv(lines: impl Iterator<Item = String>) -> Result<Self> {
        let mut counts = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (token, count) = line.split_once('\t').ok_or_else(|| {
                Error::MalformedLine("unigram dictionary", lineno + 1, "missing tab".into())
            })?;
            let count: u64 = count.trim().parse().map_err(|e| {
                Error::MalformedLine("unigram dictionary", lineno + 1, format!("bad count: {e}"))
            })?;
            counts.push((token.to_string(), count));
        }
        UnigramDictionary::new(counts)
    }

    pub fn from_tsv_path(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line?);
        }
        UnigramDictionary::from_tsv(lines.into_iter())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        self.counts.get(token).copied()
    }

    /// Log of the unigram probability count/total, or `None` for unseen
    /// tokens (probability zero, so any segmentation using them is invalid).
    pub fn log_prob(&self, token: &str) -> Option<f64> {
        self.counts
            .get(token)
            .map(|&c| (c as f64 / self.total as f64).ln())
    }
}

/// Subword vocabulary; line number in the source file is the token id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<String>,
    lookup: HashMap<String, u32>,
    unk_id: u32,
    pad_id: Option<u32>,
}

impl Vocabulary {
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if lookup.insert(entry.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId {
                    entity: "vocabulary entry",
                    id: entry.clone(),
                });
            }
        }
        let unk_id = *lookup
            .get(UNKNOWN_TOKEN)
            .ok_or(Error::MissingUnknownToken)?;
        let pad_id = lookup.get(PADDING_TOKEN).copied();
        Ok(Vocabulary {
            entries,
            lookup,
            unk_id,
            pad_id,
        })
    }

    pub fn from_lines(lines: impl Iterator<Item = String>) -> Result<Self> {
        Vocabulary::new(lines.collect())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            entries.push(line?);
        }
        Vocabulary::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn pad_id(&self) -> Option<u32> {
        self.pad_id
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }
}

/// Which encoder input a token sequence feeds; decides the length cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    News,
    Tweet,
    Creator,
    EarlyFusion,
}

impl Role {
    /// Maximum sequence length in wordpiece tokens for this role.
    pub fn cap(self) -> usize {
        match self {
            Role::News => 512,
            Role::Tweet => 128,
            Role::Creator => 128,
            Role::EarlyFusion => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, role: Role) -> Result<Self> {
        if ids.len() > role.cap() {
            return Err(Error::InvalidRecord {
                entity: "token sequence",
                id: format!("{role:?}"),
                reason: format!("length {} exceeds cap {}", ids.len(), role.cap()),
            });
        }
        Ok(TokenSequence { ids, role })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn is_camel_boundary(prev: char, next: char) -> bool {
    (prev.is_lowercase() && next.is_uppercase())
        || (prev.is_alphabetic() && next.is_numeric())
        || (prev.is_numeric() && next.is_alphabetic())
}

/// Splits a compound token at underscores, lower-to-upper case transitions,
/// and letter/digit transitions. Returns `None` when no boundary exists.
pub fn split_camel_underscore(token: &str) -> Option<Vec<String>> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;
    let mut boundary_found = false;

    for c in token.chars() {
        if c == '_' {
            boundary_found = true;
            if !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            if is_camel_boundary(p, c) {
                boundary_found = true;
                parts.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
        prev = Some(c);
    }
    if !current.is_empty() {
        parts.push(current);
    }
    boundary_found.then_some(parts)
}

#[derive(Clone)]
struct SegCandidate {
    score: f64,
    segments: Vec<String>,
}

impl SegCandidate {
    /// Preference order: higher score, then fewer segments, then
    /// lexicographically smaller segment list.
    fn beats(&self, other: &SegCandidate) -> bool {
        if self.score != other.score {
            return self.score > other.score;
        }
        if self.segments.len() != other.segments.len() {
            return self.segments.len() < other.segments.len();
        }
        self.segments < other.segments
    }
}

/// Segments a lowercase token into dictionary words maximizing the sum of
/// unigram log probabilities (segments assumed independent).
///
/// Returns `None` when no full segmentation into dictionary words exists or
/// the token exceeds [`MAX_SEGMENT_CHARS`]; callers keep the original token.
pub fn segment_max_prob(token: &str, dict: &UnigramDictionary) -> Option<Vec<String>> {
    let chars: Vec<char> = token.chars().collect();
    let n = chars.len();
    if n == 0 || n > MAX_SEGMENT_CHARS {
        return None;
    }

    let mut best: Vec<Option<SegCandidate>> = vec![None; n + 1];
    best[0] = Some(SegCandidate {
        score: 0.0,
        segments: Vec::new(),
    });
    for end in 1..=n {
        for start in 0..end {
            let Some(prefix) = best[start].clone() else {
                continue;
            };
            let word: String = chars[start..end].iter().collect();
            let Some(log_prob) = dict.log_prob(&word) else {
                continue;
            };
            let mut segments = prefix.segments;
            segments.push(word);
            let candidate = SegCandidate {
                score: prefix.score + log_prob,
                segments,
            };
            match &best[end] {
                Some(current) if !candidate.beats(current) => {}
                _ => best[end] = Some(candidate),
            }
        }
    }
    best[n].take().map(|c| c.segments)
}

fn join_expansion(parts: Vec<String>) -> String {
    // A split boundary can land just before an interior sigil; drop those
    // sigils so expansion output never re-triggers on a second pass.
    let cleaned: Vec<&str> = parts
        .iter()
        .map(|p| p.trim_start_matches(['#', '@']))
        .filter(|p| !p.is_empty())
        .collect();
    cleaned.join(" ")
}

fn expand_token(token: &str, dict: &UnigramDictionary) -> String {
    if !token.starts_with('#') && !token.starts_with('@') {
        return token.to_string();
    }
    let stripped = token.trim_start_matches(['#', '@']);
    if stripped.is_empty() {
        return String::new();
    }
    if let Some(parts) = split_camel_underscore(stripped) {
        return join_expansion(parts);
    }
    if let Some(parts) = segment_max_prob(&stripped.to_lowercase(), dict) {
        return join_expansion(parts);
    }
    stripped.to_string()
}

/// Replaces every `#`/`@` token with its expansion: camelcase/underscore
/// split when possible, else maximum-probability dictionary segmentation,
/// else the token verbatim minus its sigil. Everything else, including
/// whitespace, is copied through untouched.
pub fn expand_compound_tokens(text: &str, dict: &UnigramDictionary) -> String {
    let mut out = String::with_capacity(text.len());
    let mut token = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !token.is_empty() {
                out.push_str(&expand_token(&token, dict));
                token.clear();
            }
            out.push(c);
        } else {
            token.push(c);
        }
    }
    if !token.is_empty() {
        out.push_str(&expand_token(&token, dict));
    }
    out
}

/// Renders the included, present attributes as `"<prefix>: <value>"`
/// segments joined by single spaces, in the fixed attribute order.
pub fn serialize_creator_context(
    profile: &CreatorProfile,
    included: &BTreeSet<CreatorAttribute>,
) -> String {
    let mut segments = Vec::new();
    for attr in CreatorAttribute::ALL {
        if !included.contains(&attr) {
            continue;
        }
        if let Some(value) = profile.attribute(attr) {
            segments.push(format!("{}: {}", attr.prefix(), value));
        }
    }
    segments.join(" ")
}

fn wordpiece_word(word: &str, vocab: &Vocabulary, out: &mut Vec<u32>) {
    // Whole-word fast path.
    if let Some(id) = vocab.id_of(word) {
        out.push(id);
        return;
    }
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    let mut first = true;
    while start < chars.len() {
        let mut end = chars.len();
        let mut matched = None;
        while end > start {
            let piece: String = if first {
                chars[start..end].iter().collect()
            } else {
                let mut s = String::from(CONTINUATION);
                s.extend(&chars[start..end]);
                s
            };
            if let Some(id) = vocab.id_of(&piece) {
                matched = Some((id, end));
                break;
            }
            end -= 1;
        }
        match matched {
            Some((id, next)) => {
                out.push(id);
                start = next;
            }
            None => {
                // No piece covers this character; fall back to the unknown id
                // and move one character forward.
                out.push(vocab.unk_id());
                start += 1;
            }
        }
        first = false;
    }
}

/// Greedy longest-match wordpiece tokenization over whitespace-separated
/// words, truncated to the role's token cap.
pub fn tokenize_for_role(text: &str, vocab: &Vocabulary, role: Role) -> TokenSequence {
    let cap = role.cap();
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        wordpiece_word(word, vocab, &mut ids);
        if ids.len() >= cap {
            ids.truncate(cap);
            break;
        }
    }
    TokenSequence { ids, role }
}
