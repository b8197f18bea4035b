//! Lexical retrieval baseline: an inverted index over compound-expanded
//! tweet text, scored with BM25 against news article titles.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Tweet};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;
use crate::textprep::{expand_compound_tokens, UnigramDictionary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidRecord {
                entity: "bm25 params",
                id: String::new(),
                reason: format!("k1={} b={}", self.k1, self.b),
            });
        }
        Ok(())
    }
}

/// Inverted index: postings per term sorted by tweet id, plus the document
/// lengths BM25 normalizes with.
#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    postings: HashMap<String, Vec<(String, u32)>>,
    doc_lengths: HashMap<String, u32>,
    total_tokens: u64,
}

impl LexicalIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_lengths.len() as f64
        }
    }

    pub fn doc_length(&self, tweet_id: &str) -> Option<u32> {
        self.doc_lengths.get(tweet_id).copied()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn term_frequency(&self, term: &str, tweet_id: &str) -> u32 {
        let Some(postings) = self.postings.get(term) else {
            return 0;
        };
        postings
            .binary_search_by(|(id, _)| id.as_str().cmp(tweet_id))
            .map(|i| postings[i].1)
            .unwrap_or(0)
    }

    /// Adds one document's term multiset; keeps postings sorted by tweet id.
    pub fn add_document(&mut self, tweet_id: &str, terms: &[String]) -> Result<()> {
        if self.doc_lengths.contains_key(tweet_id) {
            return Err(Error::DuplicateId {
                entity: "tweet",
                id: tweet_id.to_string(),
            });
        }
        self.doc_lengths
            .insert(tweet_id.to_string(), terms.len() as u32);
        self.total_tokens += terms.len() as u64;
        let mut counts: HashMap<&str, u32> = HashMap::new();
        for term in terms {
            *counts.entry(term).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            let postings = self.postings.entry(term.to_string()).or_default();
            let pos = postings
                .binary_search_by(|(id, _)| id.as_str().cmp(tweet_id))
                .unwrap_err();
            postings.insert(pos, (tweet_id.to_string(), tf));
        }
        Ok(())
    }
}

/// Index terms: lowercase whitespace tokens of the compound-expanded text.
pub fn index_terms(text: &str, dict: &UnigramDictionary) -> Vec<String> {
    expand_compound_tokens(text, dict)
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn build_lexical_index(tweets: &[Tweet], dict: &UnigramDictionary) -> Result<LexicalIndex> {
    if tweets.is_empty() {
        return Err(Error::EmptyInput("tweets"));
    }
    let mut index = LexicalIndex::default();
    for tweet in tweets {
        index.add_document(&tweet.tweet_id, &index_terms(&tweet.text, dict))?;
    }
    Ok(index)
}

fn idf(n_docs: usize, df: usize) -> f64 {
    ((n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln()
}

fn tf_component(tf: f64, params: &Bm25Params, dl: f64, avgdl: f64) -> f64 {
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl))
}

/// BM25 score of one document for the query terms; absent terms contribute
/// zero, and the +1-smoothed idf keeps every contribution nonnegative.
pub fn bm25_score(
    index: &LexicalIndex,
    params: &Bm25Params,
    query_terms: &[String],
    tweet_id: &str,
) -> Result<f64> {
    params.validate()?;
    let Some(dl) = index.doc_length(tweet_id) else {
        return Err(Error::UnknownId {
            entity: "tweet",
            id: tweet_id.to_string(),
        });
    };
    let avgdl = index.avgdl();
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.term_frequency(term, tweet_id);
        if tf == 0 {
            continue;
        }
        let df = index.document_frequency(term);
        score +=
            idf(index.doc_count(), df) * tf_component(f64::from(tf), params, f64::from(dl), avgdl);
    }
    Ok(score)
}

/// Ranks the indexed tweets against the article's title terms; zero-scored
/// documents are excluded and ties break by ascending tweet id.
pub fn lexical_search(
    index: &LexicalIndex,
    params: &Bm25Params,
    article: &Article,
    dict: &UnigramDictionary,
    k: usize,
) -> Result<RankedList> {
    params.validate()?;
    let query_terms = index_terms(&article.title, dict);
    let avgdl = index.avgdl();
    let n_docs = index.doc_count();

    let mut scores: HashMap<&str, f64> = HashMap::new();
    for term in &query_terms {
        let Some(postings) = index.postings.get(term) else {
            continue;
        };
        let w = idf(n_docs, postings.len());
        for (tweet_id, tf) in postings {
            let dl = f64::from(index.doc_lengths[tweet_id]);
            *scores.entry(tweet_id).or_insert(0.0) +=
                w * tf_component(f64::from(*tf), params, dl, avgdl);
        }
    }
    let mut items: Vec<(String, f64)> = scores
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.truncate(k);
    RankedList::new(&article.article_id, items, k)
}
