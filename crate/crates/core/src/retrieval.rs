//! Dense top-k retrieval: exact brute-force scan with a bounded heap, a
//! fingerprinted creator-embedding cache, and the two-stage late fusion
//! pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use sha2::{Digest, Sha256};

use crate::corpus::{CreatorAttribute, CreatorProfile};
use crate::encoder::{cosine_similarity, EncoderParams, PooledEmbedding};
use crate::error::{Error, Result};
use crate::fusion::{late_combine_scores, LateFusionConfig};
use crate::textprep::{serialize_creator_context, tokenize_for_role, Role, Vocabulary};

/// Immutable id-to-vector store scanned exactly at query time.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    by_id: HashMap<String, usize>,
    dim: usize,
}

impl DenseIndex {
    pub fn build(records: Vec<(String, PooledEmbedding)>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::EmptyInput("index records"));
        };
        let dim = first.1.dim();
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len());
        let mut by_id = HashMap::with_capacity(records.len());
        for (id, emb) in records {
            if emb.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: emb.dim(),
                });
            }
            if by_id.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId {
                    entity: "index record",
                    id,
                });
            }
            ids.push(id);
            vectors.push(emb.values);
        }
        Ok(DenseIndex {
            ids,
            vectors,
            by_id,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.by_id.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }
}

/// Ranked retrieval output for one query; scores nonincreasing, ties broken
/// by ascending tweet id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub items: Vec<(String, f64)>,
    pub k: usize,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, items: Vec<(String, f64)>, k: usize) -> Result<Self> {
        if items.len() > k {
            return Err(Error::InvalidRecord {
                entity: "ranked list",
                id: String::new(),
                reason: format!("{} items exceed k={k}", items.len()),
            });
        }
        let mut seen = BTreeSet::new();
        for window in items.windows(2) {
            if window[0].1 < window[1].1 {
                return Err(Error::InvalidRecord {
                    entity: "ranked list",
                    id: String::new(),
                    reason: "scores increase".into(),
                });
            }
        }
        for (id, _) in &items {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId {
                    entity: "ranked tweet",
                    id: id.clone(),
                });
            }
        }
        Ok(RankedList {
            query_id: query_id.into(),
            items,
            k,
        })
    }
}

/// Heap entry ordered so the *worst* candidate is popped first: lower score,
/// then larger id.
struct HeapItem {
    score: f64,
    id: String,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.score == other.score && self.id == other.id
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap pops its greatest element, so "greater" must mean "worse".
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(&other.id))
    }
}

fn rank_sort(items: &mut [(String, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Exact top-k by cosine similarity over the whole index; returns
/// min(k, N) items.
pub fn search_top_k(
    index: &DenseIndex,
    query_id: &str,
    query: &PooledEmbedding,
    k: usize,
) -> Result<RankedList> {
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: query.dim(),
        });
    }
    if k == 0 {
        return Err(Error::EmptyInput("k"));
    }
    let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
    for (id, vector) in index.records() {
        let score = cosine_similarity(
            query,
            &PooledEmbedding {
                values: vector.to_vec(),
            },
        )?;
        heap.push(HeapItem {
            score,
            id: id.to_string(),
        });
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut items: Vec<(String, f64)> = heap.into_iter().map(|h| (h.id, h.score)).collect();
    rank_sort(&mut items);
    RankedList::new(query_id, items, k)
}

/// Creator-embedding cache keyed by a fingerprint of the serialized context,
/// so popular creators are encoded once per parameter generation.
#[derive(Debug, Clone)]
pub struct CreatorEmbeddingCache {
    included: BTreeSet<CreatorAttribute>,
    entries: HashMap<[u8; 32], PooledEmbedding>,
    hits: u64,
    misses: u64,
    encode_calls: u64,
}

impl CreatorEmbeddingCache {
    pub fn new(included: BTreeSet<CreatorAttribute>) -> Self {
        CreatorEmbeddingCache {
            included,
            entries: HashMap::new(),
            hits: 0,
            misses: 0,
            encode_calls: 0,
        }
    }

    pub fn with_all_attributes() -> Self {
        CreatorEmbeddingCache::new(CreatorAttribute::ALL.into_iter().collect())
    }

    fn fingerprint(context: &str) -> [u8; 32] {
        Sha256::digest(context.as_bytes()).into()
    }

    /// Returns the cached embedding for this profile's serialized context,
    /// encoding and storing it on first sight. An edited profile changes the
    /// fingerprint and is re-encoded; an empty context encodes like any
    /// other (to the projected zero mean).
    pub fn get_or_compute(
        &mut self,
        profile: &CreatorProfile,
        encoder: &EncoderParams,
        vocab: &Vocabulary,
    ) -> Result<PooledEmbedding> {
        let context = serialize_creator_context(profile, &self.included);
        let key = Self::fingerprint(&context);
        if let Some(hit) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(hit.clone());
        }
        self.misses += 1;
        self.encode_calls += 1;
        let seq = tokenize_for_role(&context, vocab, Role::Creator);
        let mean = encoder.pooled_mean(&seq)?;
        let emb = encoder.project(&mean);
        self.entries.insert(key, emb.clone());
        Ok(emb)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Encoder invocations performed; equals `misses()` by construction.
    pub fn encode_calls(&self) -> u64 {
        self.encode_calls
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops every entry; required when encoder parameters change.
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Two-stage late fusion: stage one retrieves `stage_depth` tweets per
/// channel (tweet similarity, and creator similarity mapped onto tweets);
/// stage two scores the candidate union exactly with the combined weight and
/// keeps `final_k`.
pub fn late_fusion_retrieve(
    query_id: &str,
    news_emb: &PooledEmbedding,
    tweet_index: &DenseIndex,
    creator_index: &DenseIndex,
    tweet_to_creator: &HashMap<String, String>,
    cfg: &LateFusionConfig,
) -> Result<RankedList> {
    cfg.validate()?;
    // Creator similarity once per distinct creator.
    let mut creator_scores: HashMap<&str, f64> = HashMap::with_capacity(creator_index.len());
    for (creator_id, vector) in creator_index.records() {
        let score = cosine_similarity(
            news_emb,
            &PooledEmbedding {
                values: vector.to_vec(),
            },
        )?;
        creator_scores.insert(creator_id, score);
    }

    // Per-tweet channel scores; every tweet must map to an indexed creator.
    let mut tweet_channel: Vec<(String, f64)> = Vec::with_capacity(tweet_index.len());
    let mut creator_channel: Vec<(String, f64)> = Vec::with_capacity(tweet_index.len());
    let mut combined_by_id: HashMap<String, (f64, f64)> = HashMap::with_capacity(tweet_index.len());
    for (tweet_id, vector) in tweet_index.records() {
        let creator_id = tweet_to_creator
            .get(tweet_id)
            .ok_or_else(|| Error::UnknownId {
                entity: "tweet-to-creator mapping",
                id: tweet_id.to_string(),
            })?;
        let s_creator =
            *creator_scores
                .get(creator_id.as_str())
                .ok_or_else(|| Error::UnknownId {
                    entity: "creator",
                    id: creator_id.clone(),
                })?;
        let s_tweet = cosine_similarity(
            news_emb,
            &PooledEmbedding {
                values: vector.to_vec(),
            },
        )?;
        tweet_channel.push((tweet_id.to_string(), s_tweet));
        creator_channel.push((tweet_id.to_string(), s_creator));
        combined_by_id.insert(tweet_id.to_string(), (s_tweet, s_creator));
    }

    rank_sort(&mut tweet_channel);
    rank_sort(&mut creator_channel);
    tweet_channel.truncate(cfg.stage_depth);
    creator_channel.truncate(cfg.stage_depth);

    let mut candidates: BTreeSet<&str> = BTreeSet::new();
    for (id, _) in tweet_channel.iter().chain(creator_channel.iter()) {
        candidates.insert(id);
    }

    let mut rescored: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
    for id in candidates {
        let (s_tweet, s_creator) = combined_by_id[id];
        rescored.push((
            id.to_string(),
            late_combine_scores(s_tweet, s_creator, cfg.alpha)?,
        ));
    }
    rank_sort(&mut rescored);
    rescored.truncate(cfg.final_k);
    RankedList::new(query_id, rescored, cfg.final_k)
}
