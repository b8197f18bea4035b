//! Corpus ingestion: article/tweet/creator records, positive-pair mining,
//! filtering, dataset splits, and time-windowed candidate pools.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Maximum number of embedded tweets before an article is considered spammy.
pub const MAX_EMBEDS_PER_ARTICLE: usize = 20;

/// Upper bound on the serialized creator context, counting all attributes
/// and their prefixes.
pub const MAX_SERIALIZED_CONTEXT_CHARS: usize = 391;

pub const MAX_TWEET_CHARS: usize = 280;

/// A news article joined against the tweets it embeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub title: String,
    pub body: String,
    /// Publication time, UTC seconds.
    pub published_at: i64,
    pub embedded_tweet_ids: Vec<String>,
}

impl Article {
    /// Builds an article, deduplicating embedded tweet ids while keeping
    /// first-occurrence order.
    pub fn new(
        article_id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
        published_at: i64,
        embedded_tweet_ids: Vec<String>,
    ) -> Result<Self> {
        let article = Article {
            article_id: article_id.into(),
            title: title.into(),
            body: body.into(),
            published_at,
            embedded_tweet_ids: dedup_preserving_order(embedded_tweet_ids),
        };
        article.validate()?;
        Ok(article)
    }

    pub fn validate(&self) -> Result<()> {
        if self.article_id.is_empty() {
            return Err(Error::InvalidRecord {
                entity: "article",
                id: String::new(),
                reason: "article_id is empty".into(),
            });
        }
        if self.published_at <= 0 {
            return Err(Error::InvalidRecord {
                entity: "article",
                id: self.article_id.clone(),
                reason: format!("published_at must be positive, got {}", self.published_at),
            });
        }
        let unique: HashSet<&String> = self.embedded_tweet_ids.iter().collect();
        if unique.len() != self.embedded_tweet_ids.len() {
            return Err(Error::InvalidRecord {
                entity: "article",
                id: self.article_id.clone(),
                reason: "embedded_tweet_ids contains duplicates".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tweet {
    pub tweet_id: String,
    pub text: String,
    /// Posting time, UTC seconds.
    pub created_at: i64,
    pub creator_id: String,
}

impl Tweet {
    pub fn validate(&self) -> Result<()> {
        if self.tweet_id.is_empty() {
            return Err(Error::InvalidRecord {
                entity: "tweet",
                id: String::new(),
                reason: "tweet_id is empty".into(),
            });
        }
        let chars = self.text.chars().count();
        if chars > MAX_TWEET_CHARS {
            return Err(Error::InvalidRecord {
                entity: "tweet",
                id: self.tweet_id.clone(),
                reason: format!("text is {chars} characters, limit is {MAX_TWEET_CHARS}"),
            });
        }
        Ok(())
    }
}

/// The five topically relevant creator attributes, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreatorAttribute {
    Screen,
    Display,
    Bio,
    Website,
    Location,
}

impl CreatorAttribute {
    pub const ALL: [CreatorAttribute; 5] = [
        CreatorAttribute::Screen,
        CreatorAttribute::Display,
        CreatorAttribute::Bio,
        CreatorAttribute::Website,
        CreatorAttribute::Location,
    ];

    /// The textual prefix placed before the attribute value in a serialized
    /// creator context.
    pub fn prefix(self) -> &'static str {
        match self {
            CreatorAttribute::Screen => "screen",
            CreatorAttribute::Display => "display",
            CreatorAttribute::Bio => "bio",
            CreatorAttribute::Website => "website",
            CreatorAttribute::Location => "location",
        }
    }

    /// Per-attribute character limit enforced by the platform.
    pub fn max_chars(self) -> usize {
        match self {
            CreatorAttribute::Screen => 15,
            CreatorAttribute::Display => 50,
            CreatorAttribute::Bio => 160,
            CreatorAttribute::Website => 100,
            CreatorAttribute::Location => 30,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        CreatorAttribute::ALL
            .into_iter()
            .find(|a| a.prefix() == name)
    }
}

/// Snapshot of a creator's profile metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatorProfile {
    pub creator_id: String,
    pub screen_handle: Option<String>,
    pub display_name: Option<String>,
    pub bio: Option<String>,
    pub website: Option<String>,
    pub location: Option<String>,
    /// Crawl time of this snapshot, UTC seconds.
    pub snapshot_at: i64,
}

impl CreatorProfile {
    pub fn empty(creator_id: impl Into<String>, snapshot_at: i64) -> Self {
        CreatorProfile {
            creator_id: creator_id.into(),
            screen_handle: None,
            display_name: None,
            bio: None,
            website: None,
            location: None,
            snapshot_at,
        }
    }

    pub fn attribute(&self, attr: CreatorAttribute) -> Option<&str> {
        match attr {
            CreatorAttribute::Screen => self.screen_handle.as_deref(),
            CreatorAttribute::Display => self.display_name.as_deref(),
            CreatorAttribute::Bio => self.bio.as_deref(),
            CreatorAttribute::Website => self.website.as_deref(),
            CreatorAttribute::Location => self.location.as_deref(),
        }
    }

    /// Character count of the full-attribute serialized context, matching the
    /// `"<prefix>: <value>"` segments joined by single spaces.
    pub fn serialized_context_chars(&self) -> usize {
        let mut total = 0;
        let mut segments = 0;
        for attr in CreatorAttribute::ALL {
            if let Some(value) = self.attribute(attr) {
                total += attr.prefix().len() + 2 + value.chars().count();
                segments += 1;
            }
        }
        if segments > 0 {
            total += segments - 1; // joining spaces
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        if self.creator_id.is_empty() {
            return Err(Error::InvalidRecord {
                entity: "creator",
                id: String::new(),
                reason: "creator_id is empty".into(),
            });
        }
        for attr in CreatorAttribute::ALL {
            if let Some(value) = self.attribute(attr) {
                let chars = value.chars().count();
                if chars > attr.max_chars() {
                    return Err(Error::InvalidRecord {
                        entity: "creator",
                        id: self.creator_id.clone(),
                        reason: format!(
                            "{} is {chars} characters, limit is {}",
                            attr.prefix(),
                            attr.max_chars()
                        ),
                    });
                }
            }
        }
        let context_chars = self.serialized_context_chars();
        if context_chars > MAX_SERIALIZED_CONTEXT_CHARS {
            return Err(Error::InvalidRecord {
                entity: "creator",
                id: self.creator_id.clone(),
                reason: format!(
                    "serialized context is {context_chars} characters, limit is \
                     {MAX_SERIALIZED_CONTEXT_CHARS}"
                ),
            });
        }
        Ok(())
    }
}

/// One mined ⟨article, embedded tweet⟩ positive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub article_id: String,
    pub tweet_id: String,
}

impl TrainingPair {
    pub fn new(article_id: impl Into<String>, tweet_id: impl Into<String>) -> Self {
        TrainingPair {
            article_id: article_id.into(),
            tweet_id: tweet_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    /// All pairs of one article land in the same split.
    Article,
    /// Pairs are split independently.
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<TrainingPair>,
    pub dev: BTreeSet<TrainingPair>,
    pub test: BTreeSet<TrainingPair>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &BTreeSet<TrainingPair> {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-attribute fraction of shared creators whose value is byte-identical
/// across two snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub shared_creators: usize,
    pub fractions: BTreeMap<CreatorAttribute, f64>,
}

fn dedup_preserving_order(ids: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.into_iter()
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

/// Extracts embedded tweet ids from article HTML, ordered by first occurrence
/// and deduplicated.
///
/// Recognizes status URLs of the form `twitter.com/<handle>/status/<digits>`
/// (also `x.com` and the legacy `/statuses/` path) plus `data-tweet-id`
/// attributes on `twitter-tweet` blockquotes.
pub fn extract_embedded_tweet_ids(html: &str) -> Vec<String> {
    // Compiled per call; extraction is ingest-time only.
    let status_url = Regex::new(r"(?:twitter|x)\.com/[A-Za-z0-9_]+/status(?:es)?/(\d+)").unwrap();
    let blockquote_open =
        Regex::new(r#"(?is)<blockquote[^>]*class\s*=\s*["'][^"']*twitter-tweet[^"']*["'][^>]*>"#)
            .unwrap();
    let data_tweet_id = Regex::new(r#"(?i)data-tweet-id\s*=\s*["'](\d+)["']"#).unwrap();

    let mut found: Vec<(usize, String)> = Vec::new();
    for caps in status_url.captures_iter(html) {
        let m = caps.get(1).unwrap();
        found.push((m.start(), m.as_str().to_string()));
    }
    for m in blockquote_open.find_iter(html) {
        if let Some(caps) = data_tweet_id.captures(m.as_str()) {
            let id = caps.get(1).unwrap();
            found.push((m.start() + id.start(), id.as_str().to_string()));
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut seen = HashSet::new();
    found
        .into_iter()
        .filter_map(|(_, id)| seen.insert(id.clone()).then_some(id))
        .collect()
}

/// Keeps articles with between 1 and 20 embedded tweets, preserving order.
/// Articles without embeds carry no positive label; more than 20 is likely spam.
pub fn filter_articles(articles: Vec<Article>) -> Vec<Article> {
    articles
        .into_iter()
        .filter(|a| (1..=MAX_EMBEDS_PER_ARTICLE).contains(&a.embedded_tweet_ids.len()))
        .collect()
}

/// Removes every contiguous occurrence of each embedded tweet's text from the
/// article body, so the encoder never sees the label text.
///
/// Returns [`Error::DegenerateArticle`] when nothing remains.
pub fn strip_embedded_tweets(body: &str, embedded: &[Tweet]) -> Result<String> {
    let mut out = body.to_string();
    // Removing one span can splice together a fresh occurrence of another
    // tweet's text, so iterate to a fixpoint. Each pass strictly shrinks `out`.
    loop {
        let mut changed = false;
        for tweet in embedded {
            if tweet.text.is_empty() {
                continue;
            }
            if out.contains(&tweet.text) {
                out = out.replace(&tweet.text, "");
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if out.is_empty() {
        return Err(Error::DegenerateArticle);
    }
    Ok(out)
}

/// Apportions `n` items over the three splits by largest remainder.
///
/// Integer quotas floor(n*r/sum); leftover seats go to the splits with the
/// largest fractional part, ties resolved in train, dev, test order.
fn apportion(n: usize, ratios: (u32, u32, u32)) -> [usize; 3] {
    let r = [ratios.0 as u128, ratios.1 as u128, ratios.2 as u128];
    let total: u128 = r.iter().sum();
    let mut counts = [0usize; 3];
    let mut fracs = [0u128; 3];
    let mut assigned = 0usize;
    for i in 0..3 {
        let num = n as u128 * r[i];
        counts[i] = (num / total) as usize;
        fracs[i] = num % total;
        assigned += counts[i];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| fracs[b].cmp(&fracs[a]).then(a.cmp(&b)));
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Splits pairs into train/dev/test with the given integer ratios.
///
/// Deterministic for a fixed seed regardless of input iteration order. In
/// [`SplitUnit::Article`] mode, whole articles are allocated so no article
/// straddles two splits.
pub fn split_dataset(
    pairs: &BTreeSet<TrainingPair>,
    seed: u64,
    ratios: (u32, u32, u32),
    unit: SplitUnit,
) -> Result<DatasetSplit> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("pair set"));
    }
    if ratios.0 == 0 || ratios.1 == 0 || ratios.2 == 0 {
        return Err(Error::InvalidRatios);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: BTreeSet::new(),
        dev: BTreeSet::new(),
        test: BTreeSet::new(),
        seed,
    };
    let buckets: [&mut BTreeSet<TrainingPair>; 3] =
        [&mut split.train, &mut split.dev, &mut split.test];

    match unit {
        SplitUnit::Pair => {
            let mut items: Vec<&TrainingPair> = pairs.iter().collect();
            items.shuffle(&mut rng);
            let counts = apportion(items.len(), ratios);
            let mut cursor = 0;
            for (bucket, &count) in buckets.into_iter().zip(counts.iter()) {
                for pair in &items[cursor..cursor + count] {
                    bucket.insert((*pair).clone());
                }
                cursor += count;
            }
        }
        SplitUnit::Article => {
            let mut by_article: BTreeMap<&str, Vec<&TrainingPair>> = BTreeMap::new();
            for pair in pairs {
                by_article.entry(&pair.article_id).or_default().push(pair);
            }
            let mut articles: Vec<&str> = by_article.keys().copied().collect();
            articles.shuffle(&mut rng);
            let counts = apportion(articles.len(), ratios);
            let mut cursor = 0;
            for (bucket, &count) in buckets.into_iter().zip(counts.iter()) {
                for article_id in &articles[cursor..cursor + count] {
                    for pair in &by_article[article_id] {
                        bucket.insert((*pair).clone());
                    }
                }
                cursor += count;
            }
        }
    }
    Ok(split)
}

/// Returns ids of tweets posted in the half-open window
/// `[article_time - window_days*86400, article_time)`, in input order.
///
/// Tweets posted at or after the article never qualify.
pub fn build_candidate_pool(tweets: &[Tweet], article_time: i64, window_days: u32) -> Vec<String> {
    let start = article_time - i64::from(window_days) * SECONDS_PER_DAY;
    tweets
        .iter()
        .filter(|t| t.created_at >= start && t.created_at < article_time)
        .map(|t| t.tweet_id.clone())
        .collect()
}

/// Measures per-attribute metadata stability between two profile snapshots:
/// the fraction of shared creators whose attribute value is byte-identical.
pub fn compare_profile_snapshots(
    a: &[CreatorProfile],
    b: &[CreatorProfile],
) -> Result<StabilityReport> {
    let by_id_a: HashMap<&str, &CreatorProfile> =
        a.iter().map(|p| (p.creator_id.as_str(), p)).collect();
    let by_id_b: HashMap<&str, &CreatorProfile> =
        b.iter().map(|p| (p.creator_id.as_str(), p)).collect();

    let mut shared = 0usize;
    let mut identical: BTreeMap<CreatorAttribute, usize> = BTreeMap::new();
    for (id, profile_a) in &by_id_a {
        let Some(profile_b) = by_id_b.get(id) else {
            continue;
        };
        shared += 1;
        for attr in CreatorAttribute::ALL {
            if profile_a.attribute(attr) == profile_b.attribute(attr) {
                *identical.entry(attr).or_insert(0) += 1;
            }
        }
    }
    if shared == 0 {
        return Err(Error::EmptySnapshotIntersection);
    }
    let fractions = CreatorAttribute::ALL
        .into_iter()
        .map(|attr| {
            let count = identical.get(&attr).copied().unwrap_or(0);
            (attr, count as f64 / shared as f64)
        })
        .collect();
    Ok(StabilityReport {
        shared_creators: shared,
        fractions,
    })
}

// ---------------------------------------------------------------------------
// JSONL interchange
// ---------------------------------------------------------------------------

/// Article record as it appears on disk; `raw_html` feeds embed mining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub article_id: String,
    pub title: String,
    pub body: String,
    pub published_at: i64,
    #[serde(default)]
    pub embedded_tweet_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_html: Option<String>,
}

impl ArticleRecord {
    /// Resolves the record into an [`Article`], merging declared embed ids
    /// with ids mined from `raw_html` (declared ids first).
    pub fn into_article(self) -> Result<Article> {
        let mut ids = self.embedded_tweet_ids;
        if let Some(html) = &self.raw_html {
            ids.extend(extract_embedded_tweet_ids(html));
        }
        Article::new(
            self.article_id,
            self.title,
            self.body,
            self.published_at,
            ids,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifestRecord {
    pub split: SplitName,
    pub article_id: String,
    pub tweet_id: String,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedLine(what, lineno + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_articles_jsonl(path: &Path) -> Result<Vec<ArticleRecord>> {
    read_jsonl(path, "articles")
}

pub fn read_tweets_jsonl(path: &Path) -> Result<Vec<Tweet>> {
    let tweets: Vec<Tweet> = read_jsonl(path, "tweets")?;
    for tweet in &tweets {
        tweet.validate()?;
    }
    Ok(tweets)
}

pub fn read_creators_jsonl(path: &Path) -> Result<Vec<CreatorProfile>> {
    let creators: Vec<CreatorProfile> = read_jsonl(path, "creators")?;
    for profile in &creators {
        profile.validate()?;
    }
    Ok(creators)
}

pub fn write_jsonl<T: Serialize>(writer: &mut impl Write, records: &[T]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut *writer, record)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Validated in-memory corpus with id uniqueness enforced.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub articles: Vec<Article>,
    pub tweets: Vec<Tweet>,
    pub creators: Vec<CreatorProfile>,
    tweet_index: HashMap<String, usize>,
    creator_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(
        articles: Vec<Article>,
        tweets: Vec<Tweet>,
        creators: Vec<CreatorProfile>,
    ) -> Result<Self> {
        let mut article_ids = HashSet::new();
        for article in &articles {
            article.validate()?;
            if !article_ids.insert(article.article_id.clone()) {
                return Err(Error::DuplicateId {
                    entity: "article",
                    id: article.article_id.clone(),
                });
            }
        }
        let mut tweet_index = HashMap::new();
        for (i, tweet) in tweets.iter().enumerate() {
            tweet.validate()?;
            if tweet_index.insert(tweet.tweet_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    entity: "tweet",
                    id: tweet.tweet_id.clone(),
                });
            }
        }
        let mut creator_index = HashMap::new();
        for (i, profile) in creators.iter().enumerate() {
            profile.validate()?;
            if creator_index
                .insert(profile.creator_id.clone(), i)
                .is_some()
            {
                return Err(Error::DuplicateId {
                    entity: "creator",
                    id: profile.creator_id.clone(),
                });
            }
        }
        Ok(Corpus {
            articles,
            tweets,
            creators,
            tweet_index,
            creator_index,
        })
    }

    pub fn tweet(&self, tweet_id: &str) -> Option<&Tweet> {
        self.tweet_index.get(tweet_id).map(|&i| &self.tweets[i])
    }

    pub fn creator(&self, creator_id: &str) -> Option<&CreatorProfile> {
        self.creator_index
            .get(creator_id)
            .map(|&i| &self.creators[i])
    }

    /// Mines positive pairs: one per (article, embedded tweet) where the
    /// tweet id resolves in this corpus.
    pub fn mine_pairs(&self) -> BTreeSet<TrainingPair> {
        let mut pairs = BTreeSet::new();
        for article in &self.articles {
            for tweet_id in &article.embedded_tweet_ids {
                if self.tweet_index.contains_key(tweet_id) {
                    pairs.insert(TrainingPair::new(&article.article_id, tweet_id));
                }
            }
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet(id: &str, text: &str) -> Tweet {
        Tweet {
            tweet_id: id.into(),
            text: text.into(),
            created_at: 1_600_000_000,
            creator_id: "c1".into(),
        }
    }

    fn article_with_embeds(id: &str, n: usize) -> Article {
        Article {
            article_id: id.into(),
            title: "t".into(),
            body: "b".into(),
            published_at: 1,
            embedded_tweet_ids: (0..n).map(|i| format!("tw{i}")).collect(),
        }
    }

    #[test]
    fn extract_single_anchor() {
        let html = r#"<p>see <a href="https://twitter.com/jack/status/20">this</a></p>"#;
        assert_eq!(extract_embedded_tweet_ids(html), vec!["20"]);
    }

    #[test]
    fn extract_no_twitter_markup() {
        assert!(extract_embedded_tweet_ids("<p>plain text</p>").is_empty());
    }

    #[test]
    fn extract_dedups_repeated_url() {
        let html = "twitter.com/a/status/7 ... twitter.com/a/status/7";
        assert_eq!(extract_embedded_tweet_ids(html), vec!["7"]);
    }

    #[test]
    fn extract_keeps_first_occurrence_order() {
        let html = concat!(
            r#"<blockquote class="twitter-tweet" data-tweet-id="33"><p>x</p></blockquote>"#,
            r#"<a href="https://twitter.com/b/statuses/11">y</a>"#,
            r#"<a href="https://x.com/c/status/22">z</a>"#,
            r#"<a href="https://twitter.com/d/status/33">repeat</a>"#,
        );
        assert_eq!(extract_embedded_tweet_ids(html), vec!["33", "11", "22"]);
    }

    #[test]
    fn extract_blockquote_href_inside() {
        let html = concat!(
            r#"<blockquote class="twitter-tweet"><p>quote</p>"#,
            r#"<a href="https://twitter.com/user/status/456789"></a></blockquote>"#,
        );
        assert_eq!(extract_embedded_tweet_ids(html), vec!["456789"]);
    }

    #[test]
    fn filter_drops_zero_embeds() {
        let kept = filter_articles(vec![article_with_embeds("a", 0)]);
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_drops_spammy() {
        let kept = filter_articles(vec![article_with_embeds("a", 21)]);
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_keeps_boundary_twenty() {
        let kept = filter_articles(vec![article_with_embeds("a", 20)]);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn filter_is_idempotent() {
        let input: Vec<Article> = (0..30)
            .map(|i| article_with_embeds(&format!("a{i}"), i))
            .collect();
        let once = filter_articles(input);
        let twice = filter_articles(once.clone());
        let ids: Vec<&str> = once.iter().map(|a| a.article_id.as_str()).collect();
        let ids2: Vec<&str> = twice.iter().map(|a| a.article_id.as_str()).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn strip_removes_embed_text() {
        let t = tweet("t1", "big news today");
        let out = strip_embedded_tweets("intro big news today outro", &[t]).unwrap();
        assert_eq!(out, "intro  outro");
    }

    #[test]
    fn strip_noop_without_embed_text() {
        let t = tweet("t1", "absent");
        let out = strip_embedded_tweets("nothing to see", &[t]).unwrap();
        assert_eq!(out, "nothing to see");
    }

    #[test]
    fn strip_pure_embed_body_is_degenerate() {
        let t = tweet("t1", "the whole body");
        let err = strip_embedded_tweets("the whole body", &[t]).unwrap_err();
        assert!(matches!(err, Error::DegenerateArticle));
    }

    #[test]
    fn strip_handles_spliced_occurrences() {
        // Removing "bc" from "abcbcd"... the leftover can rebuild "bd".
        let a = tweet("t1", "bc");
        let b = tweet("t2", "ad");
        let out = strip_embedded_tweets("xabcbcdx ad", &[a.clone(), b.clone()]).unwrap();
        assert!(!out.contains("bc"));
        assert!(!out.contains("ad"));
    }

    fn pairs_for_articles(n_articles: usize, per_article: usize) -> BTreeSet<TrainingPair> {
        let mut pairs = BTreeSet::new();
        for a in 0..n_articles {
            for t in 0..per_article {
                pairs.insert(TrainingPair::new(
                    format!("a{a:03}"),
                    format!("t{a:03}_{t}"),
                ));
            }
        }
        pairs
    }

    #[test]
    fn split_ten_articles_is_8_1_1() {
        let pairs = pairs_for_articles(10, 1);
        let split = split_dataset(&pairs, 42, (8, 1, 1), SplitUnit::Article).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.dev.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let pairs = pairs_for_articles(23, 3);
        let a = split_dataset(&pairs, 7, (8, 1, 1), SplitUnit::Article).unwrap();
        let b = split_dataset(&pairs, 7, (8, 1, 1), SplitUnit::Article).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_nine_pairs_rounding() {
        let pairs = pairs_for_articles(9, 1);
        let split = split_dataset(&pairs, 1, (8, 1, 1), SplitUnit::Pair).unwrap();
        assert_eq!(
            (split.train.len(), split.dev.len(), split.test.len()),
            (7, 1, 1)
        );
    }

    #[test]
    fn split_partitions_input() {
        let pairs = pairs_for_articles(17, 2);
        let split = split_dataset(&pairs, 99, (8, 1, 1), SplitUnit::Pair).unwrap();
        let mut union = BTreeSet::new();
        union.extend(split.train.iter().cloned());
        union.extend(split.dev.iter().cloned());
        union.extend(split.test.iter().cloned());
        assert_eq!(union, pairs);
        assert!(split.train.intersection(&split.dev).next().is_none());
        assert!(split.train.intersection(&split.test).next().is_none());
        assert!(split.dev.intersection(&split.test).next().is_none());
    }

    #[test]
    fn split_article_mode_keeps_articles_whole() {
        let pairs = pairs_for_articles(10, 4);
        let split = split_dataset(&pairs, 5, (8, 1, 1), SplitUnit::Article).unwrap();
        for bucket in [&split.train, &split.dev, &split.test] {
            for pair in bucket.iter() {
                // Every sibling pair of the same article must be in this bucket.
                let siblings = pairs.iter().filter(|p| p.article_id == pair.article_id);
                for s in siblings {
                    assert!(
                        bucket.contains(s),
                        "article {} straddles splits",
                        s.article_id
                    );
                }
            }
        }
    }

    #[test]
    fn split_empty_input_errors() {
        let err = split_dataset(&BTreeSet::new(), 0, (8, 1, 1), SplitUnit::Pair).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn pool_includes_recent_excludes_old_and_future() {
        let t0 = 1_700_000_000i64;
        let mk = |id: &str, at: i64| Tweet {
            tweet_id: id.into(),
            text: String::new(),
            created_at: at,
            creator_id: "c".into(),
        };
        let tweets = vec![
            mk("recent", t0 - 3 * SECONDS_PER_DAY),
            mk("old", t0 - 8 * SECONDS_PER_DAY),
            mk("future", t0 + 3600),
            mk("boundary_start", t0 - 7 * SECONDS_PER_DAY),
            mk("boundary_end", t0),
        ];
        let pool = build_candidate_pool(&tweets, t0, 7);
        assert_eq!(pool, vec!["recent", "boundary_start"]);
    }

    #[test]
    fn snapshots_identical_gives_ones() {
        let p = CreatorProfile {
            creator_id: "c1".into(),
            screen_handle: Some("jack".into()),
            display_name: Some("Jack".into()),
            bio: Some("bio".into()),
            website: None,
            location: None,
            snapshot_at: 1,
        };
        let report =
            compare_profile_snapshots(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap();
        for frac in report.fractions.values() {
            assert_eq!(*frac, 1.0);
        }
    }

    #[test]
    fn snapshots_nine_of_ten_bios() {
        let mk = |i: usize, bio: &str| CreatorProfile {
            creator_id: format!("c{i}"),
            screen_handle: None,
            display_name: None,
            bio: Some(bio.into()),
            website: None,
            location: None,
            snapshot_at: 1,
        };
        let a: Vec<_> = (0..10).map(|i| mk(i, "stable bio")).collect();
        let mut b = a.clone();
        b[3].bio = Some("edited".into());
        let report = compare_profile_snapshots(&a, &b).unwrap();
        assert!((report.fractions[&CreatorAttribute::Bio] - 0.9).abs() < 1e-12);
        assert_eq!(report.shared_creators, 10);
    }

    #[test]
    fn snapshots_disjoint_errors() {
        let a = vec![CreatorProfile::empty("c1", 1)];
        let b = vec![CreatorProfile::empty("c2", 1)];
        let err = compare_profile_snapshots(&a, &b).unwrap_err();
        assert!(matches!(err, Error::EmptySnapshotIntersection));
    }

    #[test]
    fn profile_over_attribute_bound_rejected() {
        let mut p = CreatorProfile::empty("c1", 1);
        p.screen_handle = Some("x".repeat(16));
        assert!(p.validate().is_err());
    }

    #[test]
    fn profile_over_total_context_bound_rejected() {
        // Each attribute individually under its cap, total serialization over 391.
        let p = CreatorProfile {
            creator_id: "c1".into(),
            screen_handle: Some("x".repeat(15)),
            display_name: Some("x".repeat(50)),
            bio: Some("x".repeat(160)),
            website: Some("x".repeat(100)),
            location: Some("x".repeat(30)),
            snapshot_at: 1,
        };
        assert_eq!(p.serialized_context_chars(), 400);
        assert!(p.validate().is_err());
    }

    #[test]
    fn tweet_over_280_rejected() {
        let t = tweet("t1", &"y".repeat(281));
        assert!(t.validate().is_err());
    }

    #[test]
    fn article_dedups_embed_ids() {
        let a = Article::new("a1", "t", "b", 1, vec!["x".into(), "y".into(), "x".into()]).unwrap();
        assert_eq!(a.embedded_tweet_ids, vec!["x", "y"]);
    }

    #[test]
    fn corpus_rejects_duplicate_tweet_ids() {
        let t1 = tweet("t1", "a");
        let err = Corpus::new(vec![], vec![t1.clone(), t1], vec![]).unwrap_err();
        assert!(matches!(
            err,
            Error::DuplicateId {
                entity: "tweet",
                ..
            }
        ));
    }

    #[test]
    fn mine_pairs_skips_unresolved_ids() {
        let article = Article::new("a1", "t", "b", 1, vec!["t1".into(), "ghost".into()]).unwrap();
        let corpus = Corpus::new(vec![article], vec![tweet("t1", "x")], vec![]).unwrap();
        let pairs = corpus.mine_pairs();
        assert_eq!(pairs.len(), 1);
        assert!(pairs.contains(&TrainingPair::new("a1", "t1")));
    }
}
