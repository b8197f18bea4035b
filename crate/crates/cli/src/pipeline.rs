//! Stage-based pipeline: ingest, preprocess, train, embed, index, retrieve,
//! evaluate. Every stage writes hash-stamped artifacts atomically and can be
//! skipped on rerun when its outputs already exist.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use newstweet_core::bm25::{build_lexical_index, lexical_search};
use newstweet_core::corpus::{
    build_candidate_pool, filter_articles, read_articles_jsonl, read_creators_jsonl,
    read_tweets_jsonl, split_dataset, strip_embedded_tweets, Article, Corpus, CreatorAttribute,
    CreatorProfile, DatasetSplit, SplitManifestRecord, SplitName, TrainingPair, Tweet,
};
use newstweet_core::encoder::{encode_sequence, EncoderConfig, PooledEmbedding};
use newstweet_core::error::Error as CoreError;
use newstweet_core::evaluation::{compute_metrics, emit_run_file, parse_run_file, Qrels};
use newstweet_core::fusion::{
    load_checkpoint, save_checkpoint, FusionKind, FusionModel, LateFusionConfig,
};
use newstweet_core::retrieval::{late_fusion_retrieve, search_top_k, DenseIndex, RankedList};
use newstweet_core::textprep::{
    expand_compound_tokens, serialize_creator_context, tokenize_for_role, Role, UnigramDictionary,
    Vocabulary,
};
use newstweet_core::training::{run_training, PairExample, TrainLogRecord};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    Train,
    Embed,
    Index,
    Retrieve,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Train,
        Stage::Embed,
        Stage::Index,
        Stage::Retrieve,
        Stage::Evaluate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.label() == name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stage {stage}: missing upstream artifact {path} (run stage {produced_by} first)")]
    MissingArtifact {
        stage: &'static str,
        path: PathBuf,
        produced_by: &'static str,
    },

    #[error("stage {stage}: {source}")]
    StageFailed {
        stage: &'static str,
        #[source]
        source: CoreError,
    },

    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingArtifact { .. } => 2,
            _ => 1,
        }
    }
}

type PResult<T> = Result<T, PipelineError>;

fn stage_err(stage: Stage) -> impl Fn(CoreError) -> PipelineError {
    move |source| PipelineError::StageFailed {
        stage: stage.label(),
        source,
    }
}

/// Write-to-temp then rename, so no stage ever leaves a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Hash-stamped artifact locations for one configuration.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    out_dir: PathBuf,
    hash: String,
}

impl ArtifactPaths {
    pub fn new(config: &PipelineConfig) -> Self {
        ArtifactPaths {
            out_dir: config.paths.out_dir.clone(),
            hash: config.hash(),
        }
    }

    fn join(&self, name: &str, ext: &str) -> PathBuf {
        self.out_dir.join(format!("{name}-{}.{ext}", self.hash))
    }

    pub fn corpus(&self) -> PathBuf {
        self.join("corpus", "json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.join("pairs", "jsonl")
    }
    pub fn splits(&self) -> PathBuf {
        self.join("splits", "jsonl")
    }
    pub fn prepared(&self) -> PathBuf {
        self.join("prepared", "json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.join("checkpoint", "json")
    }
    pub fn trainlog(&self) -> PathBuf {
        self.join("trainlog", "jsonl")
    }
    pub fn embeddings_news(&self) -> PathBuf {
        self.join("emb-news", "jsonl")
    }
    pub fn embeddings_side(&self) -> PathBuf {
        self.join("emb-side", "jsonl")
    }
    pub fn embeddings_creator(&self) -> PathBuf {
        self.join("emb-creator", "jsonl")
    }
    pub fn index(&self) -> PathBuf {
        self.join("index", "json")
    }
    pub fn run_dense(&self, kind: FusionKind) -> PathBuf {
        self.join(&format!("run-{}", kind.label()), "txt")
    }
    pub fn run_bm25(&self) -> PathBuf {
        self.join("run-bm25", "txt")
    }
    pub fn qrels(&self) -> PathBuf {
        self.join("qrels", "tsv")
    }
    pub fn report(&self) -> PathBuf {
        self.join("report", "json")
    }
    pub fn alpha(&self) -> PathBuf {
        self.join("alpha", "json")
    }
    pub fn ablation(&self) -> PathBuf {
        self.join("ablation", "json")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusFile {
    pub articles: Vec<Article>,
    pub tweets: Vec<Tweet>,
    pub creators: Vec<CreatorProfile>,
}

/// Model-ready text per record: stripped news text, compound-expanded tweet
/// text, and compound-expanded serialized creator context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedTexts {
    pub news: BTreeMap<String, String>,
    pub tweets: BTreeMap<String, String>,
    pub creators: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub dim: usize,
    pub side: Vec<EmbRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator: Option<Vec<EmbRecord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: FusionKind,
    pub dense: newstweet_core::evaluation::MetricReport,
    pub bm25: newstweet_core::evaluation::MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaFile {
    pub best_alpha: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Shared stage context: configuration, artifact paths, and typed loaders
/// that report which upstream stage is missing.
pub struct PipelineCtx {
    pub config: PipelineConfig,
    pub paths: ArtifactPaths,
}

impl PipelineCtx {
    pub fn new(config: PipelineConfig) -> Self {
        let paths = ArtifactPaths::new(&config);
        PipelineCtx { config, paths }
    }

    fn require(&self, stage: Stage, path: PathBuf, produced_by: Stage) -> PResult<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact {
                stage: stage.label(),
                path,
                produced_by: produced_by.label(),
            })
        }
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &Path, stage: Stage) -> PResult<T> {
        let text = std::fs::read_to_string(path).map_err(|e| stage_err(stage)(CoreError::Io(e)))?;
        serde_json::from_str(&text).map_err(|e| stage_err(stage)(CoreError::Json(e)))
    }

    pub fn load_corpus(&self, stage: Stage) -> PResult<Corpus> {
        let path = self.require(stage, self.paths.corpus(), Stage::Ingest)?;
        let file: CorpusFile = self.read_json(&path, stage)?;
        Corpus::new(file.articles, file.tweets, file.creators).map_err(stage_err(stage))
    }

    pub fn load_pairs(&self, stage: Stage) -> PResult<BTreeSet<TrainingPair>> {
        let path = self.require(stage, self.paths.pairs(), Stage::Ingest)?;
        let text = std::fs::read_to_string(path).map_err(|e| stage_err(stage)(CoreError::Io(e)))?;
        let mut pairs = BTreeSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let pair: TrainingPair =
                serde_json::from_str(line).map_err(|e| stage_err(stage)(CoreError::Json(e)))?;
            pairs.insert(pair);
        }
        Ok(pairs)
    }

    pub fn load_splits(&self, stage: Stage) -> PResult<DatasetSplit> {
        let path = self.require(stage, self.paths.splits(), Stage::Preprocess)?;
        let text = std::fs::read_to_string(path).map_err(|e| stage_err(stage)(CoreError::Io(e)))?;
        let mut split = DatasetSplit {
            train: BTreeSet::new(),
            dev: BTreeSet::new(),
            test: BTreeSet::new(),
            seed: self.config.split.seed,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: SplitManifestRecord =
                serde_json::from_str(line).map_err(|e| stage_err(stage)(CoreError::Json(e)))?;
            let pair = TrainingPair::new(record.article_id, record.tweet_id);
            match record.split {
                SplitName::Train => split.train.insert(pair),
                SplitName::Dev => split.dev.insert(pair),
                SplitName::Test => split.test.insert(pair),
            };
        }
        Ok(split)
    }

    pub fn load_prepared(&self, stage: Stage) -> PResult<PreparedTexts> {
        let path = self.require(stage, self.paths.prepared(), Stage::Preprocess)?;
        self.read_json(&path, stage)
    }

    pub fn load_model(&self, stage: Stage) -> PResult<FusionModel> {
        let path = self.require(stage, self.paths.checkpoint(), Stage::Train)?;
        load_checkpoint(&path).map_err(stage_err(stage))
    }

    pub fn load_index(&self, stage: Stage) -> PResult<IndexFile> {
        let path = self.require(stage, self.paths.index(), Stage::Index)?;
        self.read_json(&path, stage)
    }

    pub fn load_embeddings(
        &self,
        path: PathBuf,
        stage: Stage,
        produced_by: Stage,
    ) -> PResult<Vec<EmbRecord>> {
        let path = self.require(stage, path, produced_by)?;
        let text = std::fs::read_to_string(path).map_err(|e| stage_err(stage)(CoreError::Io(e)))?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(
                serde_json::from_str(line).map_err(|e| stage_err(stage)(CoreError::Json(e)))?,
            );
        }
        Ok(records)
    }

    pub fn vocabulary(&self, stage: Stage) -> PResult<Vocabulary> {
        Vocabulary::from_path(&self.config.paths.vocab).map_err(stage_err(stage))
    }

    pub fn dictionary(&self, stage: Stage) -> PResult<UnigramDictionary> {
        UnigramDictionary::from_tsv_path(&self.config.paths.unigrams).map_err(stage_err(stage))
    }

    pub fn included_attributes(&self) -> BTreeSet<CreatorAttribute> {
        self.config.included_attributes.iter().copied().collect()
    }

    fn write(&self, stage: Stage, path: &Path, bytes: &[u8]) -> PResult<()> {
        write_atomic(path, bytes).map_err(|e| stage_err(stage)(CoreError::Io(e)))
    }

    fn write_jsonl<T: Serialize>(&self, stage: Stage, path: &Path, records: &[T]) -> PResult<()> {
        let mut out = String::new();
        for record in records {
            out.push_str(
                &serde_json::to_string(record).map_err(|e| stage_err(stage)(CoreError::Json(e)))?,
            );
            out.push('\n');
        }
        self.write(stage, path, out.as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Text assembly shared by train, embed, and the ablation command
// ---------------------------------------------------------------------------

/// Expanded creator context for one creator under the included attributes.
pub fn creator_context_text(
    profile: &CreatorProfile,
    included: &BTreeSet<CreatorAttribute>,
    dict: &UnigramDictionary,
) -> String {
    expand_compound_tokens(&serialize_creator_context(profile, included), dict)
}

/// News text: title plus the body with embedded tweet text removed. A body
/// that was nothing but embeds degrades to the title alone.
pub fn news_text(article: &Article, corpus: &Corpus) -> String {
    let embedded: Vec<Tweet> = article
        .embedded_tweet_ids
        .iter()
        .filter_map(|id| corpus.tweet(id).cloned())
        .collect();
    match strip_embedded_tweets(&article.body, &embedded) {
        Ok(stripped) => format!("{} {}", article.title, stripped),
        Err(_) => article.title.clone(),
    }
}

/// Token sequences for one positive pair under the model kind.
pub fn pair_example(
    kind: FusionKind,
    news: &str,
    tweet_text: &str,
    creator_context: &str,
    vocab: &Vocabulary,
) -> PairExample {
    let news_seq = tokenize_for_role(news, vocab, Role::News);
    let (tweet_side, creator) = match kind {
        FusionKind::Base => (tokenize_for_role(tweet_text, vocab, Role::Tweet), None),
        FusionKind::EarlyFusion => {
            let combined = if creator_context.is_empty() {
                tweet_text.to_string()
            } else {
                format!("{tweet_text} {creator_context}")
            };
            (tokenize_for_role(&combined, vocab, Role::EarlyFusion), None)
        }
        FusionKind::IntermediateFusion | FusionKind::LateFusion => (
            tokenize_for_role(tweet_text, vocab, Role::Tweet),
            Some(tokenize_for_role(creator_context, vocab, Role::Creator)),
        ),
    };
    PairExample {
        news: news_seq,
        tweet_side,
        creator,
    }
}

fn examples_for_pairs(
    kind: FusionKind,
    pairs: &BTreeSet<TrainingPair>,
    prepared: &PreparedTexts,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Vec<PairExample> {
    pairs
        .iter()
        .map(|pair| {
            let news = prepared
                .news
                .get(&pair.article_id)
                .cloned()
                .unwrap_or_default();
            let tweet_text = prepared
                .tweets
                .get(&pair.tweet_id)
                .cloned()
                .unwrap_or_default();
            let context = corpus
                .tweet(&pair.tweet_id)
                .and_then(|t| prepared.creators.get(&t.creator_id))
                .cloned()
                .unwrap_or_default();
            pair_example(kind, &news, &tweet_text, &context, vocab)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

fn run_ingest(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Ingest;
    let err = stage_err(stage);
    let records = read_articles_jsonl(&ctx.config.paths.articles).map_err(&err)?;
    let mut articles = Vec::with_capacity(records.len());
    for record in records {
        articles.push(record.into_article().map_err(&err)?);
    }
    let articles = filter_articles(articles);
    let tweets = read_tweets_jsonl(&ctx.config.paths.tweets).map_err(&err)?;
    let creators = read_creators_jsonl(&ctx.config.paths.creators).map_err(&err)?;
    let corpus = Corpus::new(articles, tweets, creators).map_err(&err)?;
    let pairs: Vec<TrainingPair> = corpus.mine_pairs().into_iter().collect();

    let corpus_file = CorpusFile {
        articles: corpus.articles.clone(),
        tweets: corpus.tweets.clone(),
        creators: corpus.creators.clone(),
    };
    let json = serde_json::to_string(&corpus_file).map_err(|e| err(CoreError::Json(e)))?;
    ctx.write(stage, &ctx.paths.corpus(), json.as_bytes())?;
    ctx.write_jsonl(stage, &ctx.paths.pairs(), &pairs)?;
    Ok(())
}

fn run_preprocess(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Preprocess;
    let err = stage_err(stage);
    let corpus = ctx.load_corpus(stage)?;
    let pairs = ctx.load_pairs(stage)?;
    if pairs.is_empty() {
        return Err(PipelineError::Stage {
            stage: stage.label(),
            message: "no positive pairs were mined".into(),
        });
    }
    let dict = ctx.dictionary(stage)?;

    let split = split_dataset(
        &pairs,
        ctx.config.split.seed,
        (8, 1, 1),
        ctx.config.split.unit,
    )
    .map_err(&err)?;
    let mut manifest = Vec::with_capacity(pairs.len());
    for (name, bucket) in [
        (SplitName::Train, &split.train),
        (SplitName::Dev, &split.dev),
        (SplitName::Test, &split.test),
    ] {
        for pair in bucket {
            manifest.push(SplitManifestRecord {
                split: name,
                article_id: pair.article_id.clone(),
                tweet_id: pair.tweet_id.clone(),
            });
        }
    }
    ctx.write_jsonl(stage, &ctx.paths.splits(), &manifest)?;

    let included = ctx.included_attributes();
    let prepared = PreparedTexts {
        news: corpus
            .articles
            .iter()
            .map(|a| (a.article_id.clone(), news_text(a, &corpus)))
            .collect(),
        tweets: corpus
            .tweets
            .iter()
            .map(|t| (t.tweet_id.clone(), expand_compound_tokens(&t.text, &dict)))
            .collect(),
        creators: corpus
            .creators
            .iter()
            .map(|c| {
                (
                    c.creator_id.clone(),
                    creator_context_text(c, &included, &dict),
                )
            })
            .collect(),
    };
    let json = serde_json::to_string(&prepared).map_err(|e| err(CoreError::Json(e)))?;
    ctx.write(stage, &ctx.paths.prepared(), json.as_bytes())
}

fn run_train(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Train;
    let err = stage_err(stage);
    let corpus = ctx.load_corpus(stage)?;
    let split = ctx.load_splits(stage)?;
    let prepared = ctx.load_prepared(stage)?;
    let vocab = ctx.vocabulary(stage)?;

    let kind = ctx.config.model.kind;
    let encoder_config = EncoderConfig::new(
        vocab.len(),
        ctx.config.model.dim,
        ctx.config.model.encoder_seed,
    )
    .map_err(&err)?;
    let mut model = FusionModel::init(kind, encoder_config).map_err(&err)?;
    if let (FusionKind::LateFusion, Some(late)) = (kind, model.late.as_mut()) {
        *late = ctx.config.late_fusion;
    }

    let examples = examples_for_pairs(kind, &split.train, &prepared, &corpus, &vocab);
    let log: Vec<TrainLogRecord> =
        run_training(&mut model, &examples, &ctx.config.training).map_err(&err)?;

    save_checkpoint(&model, &ctx.paths.checkpoint()).map_err(&err)?;
    ctx.write_jsonl(stage, &ctx.paths.trainlog(), &log)
}

fn emb_records(map: BTreeMap<String, PooledEmbedding>) -> Vec<EmbRecord> {
    map.into_iter()
        .map(|(id, emb)| EmbRecord {
            id,
            vector: emb.values,
        })
        .collect()
}

fn run_embed(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Embed;
    let err = stage_err(stage);
    let corpus = ctx.load_corpus(stage)?;
    let split = ctx.load_splits(stage)?;
    let prepared = ctx.load_prepared(stage)?;
    let model = ctx.load_model(stage)?;
    let vocab = ctx.vocabulary(stage)?;
    let kind = model.kind;

    // Dev and test articles are the retrieval queries.
    let mut query_articles: BTreeSet<&str> = BTreeSet::new();
    for bucket in [&split.dev, &split.test] {
        for pair in bucket {
            query_articles.insert(&pair.article_id);
        }
    }
    let mut news_embs: BTreeMap<String, PooledEmbedding> = BTreeMap::new();
    for article_id in query_articles {
        let text = prepared.news.get(article_id).cloned().unwrap_or_default();
        let seq = tokenize_for_role(&text, &vocab, Role::News);
        let emb = encode_sequence(&model.news_encoder, &seq).map_err(&err)?;
        news_embs.insert(article_id.to_string(), emb);
    }

    // Creator embeddings once per creator (Intermediate consumes them here;
    // Late also serves them at retrieval time).
    let mut creator_embs: BTreeMap<String, PooledEmbedding> = BTreeMap::new();
    if kind.uses_creator_encoder() {
        let creator_encoder =
            model
                .creator_encoder
                .as_ref()
                .ok_or_else(|| PipelineError::Stage {
                    stage: stage.label(),
                    message: "checkpoint lacks creator encoder".into(),
                })?;
        for creator in &corpus.creators {
            let context = prepared
                .creators
                .get(&creator.creator_id)
                .cloned()
                .unwrap_or_default();
            let seq = tokenize_for_role(&context, &vocab, Role::Creator);
            let mean = creator_encoder.pooled_mean(&seq).map_err(&err)?;
            creator_embs.insert(creator.creator_id.clone(), creator_encoder.project(&mean));
        }
    }

    let mut side_embs: BTreeMap<String, PooledEmbedding> = BTreeMap::new();
    for tweet in &corpus.tweets {
        let text = prepared
            .tweets
            .get(&tweet.tweet_id)
            .cloned()
            .unwrap_or_default();
        let emb = match kind {
            FusionKind::Base | FusionKind::LateFusion => {
                let seq = tokenize_for_role(&text, &vocab, Role::Tweet);
                encode_sequence(&model.tweet_encoder, &seq).map_err(&err)?
            }
            FusionKind::EarlyFusion => {
                let context = prepared
                    .creators
                    .get(&tweet.creator_id)
                    .cloned()
                    .unwrap_or_default();
                let combined = if context.is_empty() {
                    text
                } else {
                    format!("{text} {context}")
                };
                let seq = tokenize_for_role(&combined, &vocab, Role::EarlyFusion);
                encode_sequence(&model.tweet_encoder, &seq).map_err(&err)?
            }
            FusionKind::IntermediateFusion => {
                let seq = tokenize_for_role(&text, &vocab, Role::Tweet);
                let tweet_emb = encode_sequence(&model.tweet_encoder, &seq).map_err(&err)?;
                let creator_emb =
                    creator_embs
                        .get(&tweet.creator_id)
                        .ok_or_else(|| PipelineError::Stage {
                            stage: stage.label(),
                            message: format!("tweet {} has unknown creator", tweet.tweet_id),
                        })?;
                let params = model
                    .intermediate
                    .as_ref()
                    .ok_or_else(|| PipelineError::Stage {
                        stage: stage.label(),
                        message: "checkpoint lacks intermediate fusion layer".into(),
                    })?;
                newstweet_core::fusion::fuse_intermediate(&tweet_emb, creator_emb, params)
                    .map_err(&err)?
            }
        };
        side_embs.insert(tweet.tweet_id.clone(), emb);
    }

    ctx.write_jsonl(stage, &ctx.paths.embeddings_news(), &emb_records(news_embs))?;
    ctx.write_jsonl(stage, &ctx.paths.embeddings_side(), &emb_records(side_embs))?;
    if kind == FusionKind::LateFusion {
        ctx.write_jsonl(
            stage,
            &ctx.paths.embeddings_creator(),
            &emb_records(creator_embs),
        )?;
    }
    Ok(())
}

fn run_index(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Index;
    let side = ctx.load_embeddings(ctx.paths.embeddings_side(), stage, Stage::Embed)?;
    let model = ctx.load_model(stage)?;
    let creator = if model.kind == FusionKind::LateFusion {
        Some(ctx.load_embeddings(ctx.paths.embeddings_creator(), stage, Stage::Embed)?)
    } else {
        None
    };
    let dim = side.first().map(|r| r.vector.len()).unwrap_or(0);
    // Validates uniqueness and uniform dimension.
    build_index(&side).map_err(stage_err(stage))?;
    if let Some(creator) = &creator {
        build_index(creator).map_err(stage_err(stage))?;
    }
    let file = IndexFile { dim, side, creator };
    let json = serde_json::to_string(&file).map_err(|e| stage_err(stage)(CoreError::Json(e)))?;
    ctx.write(stage, &ctx.paths.index(), json.as_bytes())
}

pub fn build_index(records: &[EmbRecord]) -> Result<DenseIndex, CoreError> {
    DenseIndex::build(
        records
            .iter()
            .map(|r| {
                (
                    r.id.clone(),
                    PooledEmbedding {
                        values: r.vector.clone(),
                    },
                )
            })
            .collect(),
    )
}

fn test_articles(split: &DatasetSplit) -> BTreeSet<String> {
    split.test.iter().map(|p| p.article_id.clone()).collect()
}

/// Dense retrieval for one query over an optional candidate restriction.
#[allow(clippy::too_many_arguments)]
pub fn dense_retrieve_one(
    kind: FusionKind,
    query_id: &str,
    news_emb: &PooledEmbedding,
    index: &IndexFile,
    tweet_to_creator: &HashMap<String, String>,
    late_cfg: &LateFusionConfig,
    k: usize,
    candidates: Option<&BTreeSet<String>>,
) -> Result<RankedList, CoreError> {
    let restrict = |records: &[EmbRecord]| -> Vec<EmbRecord> {
        match candidates {
            None => records.to_vec(),
            Some(allowed) => records
                .iter()
                .filter(|r| allowed.contains(&r.id))
                .cloned()
                .collect(),
        }
    };
    let side = restrict(&index.side);
    if side.is_empty() {
        return RankedList::new(query_id, vec![], k.max(1));
    }
    let side_index = build_index(&side)?;
    match kind {
        FusionKind::LateFusion => {
            let creators = index
                .creator
                .as_ref()
                .ok_or(CoreError::EmptyInput("creator embeddings"))?;
            let wanted: BTreeSet<&str> = side
                .iter()
                .map(|r| {
                    tweet_to_creator
                        .get(&r.id)
                        .map(String::as_str)
                        .unwrap_or("")
                })
                .collect();
            let creator_subset: Vec<EmbRecord> = creators
                .iter()
                .filter(|r| wanted.contains(r.id.as_str()))
                .cloned()
                .collect();
            let creator_index = build_index(&creator_subset)?;
            let cfg = LateFusionConfig {
                final_k: k.min(late_cfg.stage_depth),
                ..*late_cfg
            };
            late_fusion_retrieve(
                query_id,
                news_emb,
                &side_index,
                &creator_index,
                tweet_to_creator,
                &cfg,
            )
        }
        _ => search_top_k(&side_index, query_id, news_emb, k),
    }
}

fn run_retrieve(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Retrieve;
    let err = stage_err(stage);
    let corpus = ctx.load_corpus(stage)?;
    let split = ctx.load_splits(stage)?;
    let model = ctx.load_model(stage)?;
    let index = ctx.load_index(stage)?;
    let dict = ctx.dictionary(stage)?;
    let news_embs = ctx.load_embeddings(ctx.paths.embeddings_news(), stage, Stage::Embed)?;
    let news_by_id: HashMap<&str, &EmbRecord> =
        news_embs.iter().map(|r| (r.id.as_str(), r)).collect();

    let kind = model.kind;
    let tweet_to_creator: HashMap<String, String> = corpus
        .tweets
        .iter()
        .map(|t| (t.tweet_id.clone(), t.creator_id.clone()))
        .collect();

    // The tuned weight takes precedence over the configured one when a
    // tune-alpha run for this config exists.
    let mut late_cfg = ctx.config.late_fusion;
    if kind == FusionKind::LateFusion {
        if let Ok(text) = std::fs::read_to_string(ctx.paths.alpha()) {
            let tuned: AlphaFile =
                serde_json::from_str(&text).map_err(|e| err(CoreError::Json(e)))?;
            late_cfg.alpha = tuned.best_alpha;
        }
    }

    let article_by_id: HashMap<&str, &Article> = corpus
        .articles
        .iter()
        .map(|a| (a.article_id.as_str(), a))
        .collect();

    let mut dense_runs = Vec::new();
    let mut bm25_runs = Vec::new();
    let bm25_full_index = build_lexical_index(&corpus.tweets, &dict).map_err(&err)?;
    for article_id in test_articles(&split) {
        let article =
            article_by_id
                .get(article_id.as_str())
                .ok_or_else(|| PipelineError::Stage {
                    stage: stage.label(),
                    message: format!("test article {article_id} missing from corpus"),
                })?;
        let news_emb = news_by_id
            .get(article_id.as_str())
            .map(|r| PooledEmbedding {
                values: r.vector.clone(),
            })
            .ok_or_else(|| PipelineError::Stage {
                stage: stage.label(),
                message: format!("no news embedding for article {article_id}"),
            })?;

        let candidates: Option<BTreeSet<String>> = if ctx.config.candidate_window.enabled {
            Some(
                build_candidate_pool(
                    &corpus.tweets,
                    article.published_at,
                    ctx.config.candidate_window.window_days,
                )
                .into_iter()
                .collect(),
            )
        } else {
            None
        };

        dense_runs.push(
            dense_retrieve_one(
                kind,
                &article_id,
                &news_emb,
                &index,
                &tweet_to_creator,
                &late_cfg,
                ctx.config.retrieval_k,
                candidates.as_ref(),
            )
            .map_err(&err)?,
        );

        let bm25_run = match &candidates {
            None => lexical_search(
                &bm25_full_index,
                &ctx.config.bm25,
                article,
                &dict,
                ctx.config.retrieval_k,
            )
            .map_err(&err)?,
            Some(allowed) => {
                let pool: Vec<Tweet> = corpus
                    .tweets
                    .iter()
                    .filter(|t| allowed.contains(&t.tweet_id))
                    .cloned()
                    .collect();
                if pool.is_empty() {
                    RankedList::new(&article_id, vec![], ctx.config.retrieval_k).map_err(&err)?
                } else {
                    let window_index = build_lexical_index(&pool, &dict).map_err(&err)?;
                    lexical_search(
                        &window_index,
                        &ctx.config.bm25,
                        article,
                        &dict,
                        ctx.config.retrieval_k,
                    )
                    .map_err(&err)?
                }
            }
        };
        bm25_runs.push(bm25_run);
    }

    ctx.write(
        stage,
        &ctx.paths.run_dense(kind),
        emit_run_file(&dense_runs, kind.label()).as_bytes(),
    )?;
    ctx.write(
        stage,
        &ctx.paths.run_bm25(),
        emit_run_file(&bm25_runs, "bm25").as_bytes(),
    )
}

/// Fills in empty ranked lists for qrels queries a run file does not cover
/// (a windowed pool can be empty), so means stay over the full query set.
pub fn complete_runs(
    mut runs: Vec<RankedList>,
    qrels: &Qrels,
    k: usize,
) -> Result<Vec<RankedList>, CoreError> {
    let present: BTreeSet<String> = runs.iter().map(|r| r.query_id.clone()).collect();
    for query in qrels.queries() {
        if !present.contains(query) {
            runs.push(RankedList::new(query.clone(), vec![], k.max(1))?);
        }
    }
    runs.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(runs)
}

fn run_evaluate(ctx: &PipelineCtx) -> PResult<()> {
    let stage = Stage::Evaluate;
    let err = stage_err(stage);
    let split = ctx.load_splits(stage)?;
    let model = ctx.load_model(stage)?;

    let qrels = Qrels::from_pairs(split.test.iter());
    ctx.write(stage, &ctx.paths.qrels(), qrels.to_tsv().as_bytes())?;

    let dense_path = ctx.require(stage, ctx.paths.run_dense(model.kind), Stage::Retrieve)?;
    let bm25_path = ctx.require(stage, ctx.paths.run_bm25(), Stage::Retrieve)?;
    let dense_text = std::fs::read_to_string(dense_path).map_err(|e| err(CoreError::Io(e)))?;
    let bm25_text = std::fs::read_to_string(bm25_path).map_err(|e| err(CoreError::Io(e)))?;
    let dense_runs = complete_runs(
        parse_run_file(&dense_text).map_err(&err)?,
        &qrels,
        ctx.config.retrieval_k,
    )
    .map_err(&err)?;
    let bm25_runs = complete_runs(
        parse_run_file(&bm25_text).map_err(&err)?,
        &qrels,
        ctx.config.retrieval_k,
    )
    .map_err(&err)?;

    let report = EvalReport {
        model_kind: model.kind,
        dense: compute_metrics(&dense_runs, &qrels).map_err(&err)?,
        bm25: compute_metrics(&bm25_runs, &qrels).map_err(&err)?,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| err(CoreError::Json(e)))?;
    ctx.write(stage, &ctx.paths.report(), json.as_bytes())
}

fn stage_outputs(ctx: &PipelineCtx, stage: Stage) -> Vec<PathBuf> {
    let kind = ctx.config.model.kind;
    match stage {
        Stage::Ingest => vec![ctx.paths.corpus(), ctx.paths.pairs()],
        Stage::Preprocess => vec![ctx.paths.splits(), ctx.paths.prepared()],
        Stage::Train => vec![ctx.paths.checkpoint(), ctx.paths.trainlog()],
        Stage::Embed => {
            let mut outputs = vec![ctx.paths.embeddings_news(), ctx.paths.embeddings_side()];
            if kind == FusionKind::LateFusion {
                outputs.push(ctx.paths.embeddings_creator());
            }
            outputs
        }
        Stage::Index => vec![ctx.paths.index()],
        Stage::Retrieve => vec![ctx.paths.run_dense(kind), ctx.paths.run_bm25()],
        Stage::Evaluate => vec![ctx.paths.qrels(), ctx.paths.report()],
    }
}

/// Runs the requested stages in pipeline order. A stage whose outputs all
/// exist is skipped; a stage whose inputs are missing fails with the name of
/// the stage that would produce them.
pub fn execute_pipeline(config: &PipelineConfig, stages: &[Stage]) -> PResult<()> {
    config.validate().map_err(PipelineError::InvalidConfig)?;
    if stages.is_empty() {
        return Err(PipelineError::InvalidConfig("no stages requested".into()));
    }
    let ctx = PipelineCtx::new(config.clone());
    let mut ordered: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|s| stages.contains(s))
        .collect();
    ordered.dedup();
    for stage in ordered {
        if stage_outputs(&ctx, stage).iter().all(|p| p.is_file()) {
            eprintln!("[{}] outputs exist, skipping", stage.label());
            continue;
        }
        eprintln!("[{}] running", stage.label());
        match stage {
            Stage::Ingest => run_ingest(&ctx)?,
            Stage::Preprocess => run_preprocess(&ctx)?,
            Stage::Train => run_train(&ctx)?,
            Stage::Embed => run_embed(&ctx)?,
            Stage::Index => run_index(&ctx)?,
            Stage::Retrieve => run_retrieve(&ctx)?,
            Stage::Evaluate => run_evaluate(&ctx)?,
        }
    }
    Ok(())
}
