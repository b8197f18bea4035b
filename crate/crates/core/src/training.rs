//! In-batch-negative training: sigmoid cross-entropy over the batch score
//! matrix, manual gradients through every fusion structure, and plain SGD
//! with an optionally frozen news encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, PooledEmbedding};
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, FusionModel};
use crate::textprep::TokenSequence;

/// One batch of aligned positives: index i across the lists is one pair.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub news_seqs: Vec<TokenSequence>,
    /// Tweet sequences, or combined tweet-plus-context sequences for Early
    /// Fusion.
    pub tweet_side_seqs: Vec<TokenSequence>,
    /// Creator context sequences; required for Intermediate and Late Fusion.
    pub creator_seqs: Option<Vec<TokenSequence>>,
}

impl TrainingBatch {
    pub fn size(&self) -> usize {
        self.news_seqs.len()
    }

    pub fn validate_for(&self, kind: FusionKind) -> Result<()> {
        let b = self.news_seqs.len();
        if b < 2 {
            return Err(Error::EmptyInput("training batch needs at least two pairs"));
        }
        if self.tweet_side_seqs.len() != b {
            return Err(Error::DimensionMismatch {
                expected: b,
                got: self.tweet_side_seqs.len(),
            });
        }
        if kind.uses_creator_encoder() {
            match &self.creator_seqs {
                Some(seqs) if seqs.len() == b => {}
                Some(seqs) => {
                    return Err(Error::DimensionMismatch {
                        expected: b,
                        got: seqs.len(),
                    })
                }
                None => return Err(Error::EmptyInput("creator sequences")),
            }
        }
        Ok(())
    }
}

/// B x B cosine similarities; entry (i, j) scores news i against side j, so
/// the diagonal holds the positives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub size: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Pairs per batch (reference setup uses 256; desk default 32).
    pub batch_size: usize,
    /// SGD step size (reference setup uses 1e-5; desk default 1e-3).
    pub learning_rate: f64,
    /// Total update steps (reference setup uses 200k; desk default 2000).
    pub steps: u64,
    /// Logit multiplier applied to cosine scores before the sigmoid;
    /// unscaled cosines in [-1, 1] leave the loss nearly flat.
    pub tau: f64,
    /// Keep the news encoder at its initial parameters.
    pub freeze_news: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            steps: 2000,
            tau: 10.0,
            freeze_news: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.batch_size >= 2 && self.learning_rate > 0.0 && self.steps > 0 && self.tau > 0.0;
        if !ok {
            return Err(Error::InvalidRecord {
                entity: "train config",
                id: String::new(),
                reason: format!("{self:?} violates positivity or batch_size >= 2"),
            });
        }
        Ok(())
    }
}

/// Pairwise cosine matrix between matched news and side embeddings.
pub fn in_batch_scores(
    news_embs: &[PooledEmbedding],
    side_embs: &[PooledEmbedding],
) -> Result<ScoreMatrix> {
    if news_embs.is_empty() || news_embs.len() != side_embs.len() {
        return Err(Error::DimensionMismatch {
            expected: news_embs.len(),
            got: side_embs.len(),
        });
    }
    let b = news_embs.len();
    let mut values = Vec::with_capacity(b * b);
    for news in news_embs {
        for side in side_embs {
            values.push(crate::encoder::cosine_similarity(news, side)?);
        }
    }
    Ok(ScoreMatrix { size: b, values })
}

fn stable_bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid cross-entropy over all B^2 entries of the score matrix with
/// identity labels, at logit scale `tau`. Equals ln 2 when every score is 0.
pub fn in_batch_loss(scores: &ScoreMatrix, tau: f64) -> f64 {
    let b = scores.size;
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let y = if i == j { 1.0 } else { 0.0 };
            total += stable_bce(tau * scores.get(i, j), y);
        }
    }
    total / (b * b) as f64
}

struct EncCache {
    mean: Vec<f64>,
    emb: PooledEmbedding,
}

fn encode_cache(params: &EncoderParams, seq: &TokenSequence) -> Result<EncCache> {
    let mean = params.pooled_mean(seq)?;
    let emb = params.project(&mean);
    Ok(EncCache { mean, emb })
}

fn encode_all(params: &EncoderParams, seqs: &[TokenSequence]) -> Result<Vec<EncCache>> {
    seqs.iter().map(|s| encode_cache(params, s)).collect()
}

struct ForwardPass {
    news: Vec<EncCache>,
    side: Vec<EncCache>,
    creator: Option<Vec<EncCache>>,
    /// Intermediate Fusion only: fc output per side entry.
    fused: Option<Vec<PooledEmbedding>>,
}

fn forward(model: &FusionModel, batch: &TrainingBatch) -> Result<ForwardPass> {
    batch.validate_for(model.kind)?;
    let news = encode_all(&model.news_encoder, &batch.news_seqs)?;
    let side = encode_all(&model.tweet_encoder, &batch.tweet_side_seqs)?;
    let creator = match (&batch.creator_seqs, model.kind.uses_creator_encoder()) {
        (Some(seqs), true) => {
            let params = model
                .creator_encoder
                .as_ref()
                .ok_or(Error::EmptyInput("creator encoder parameters"))?;
            Some(encode_all(params, seqs)?)
        }
        _ => None,
    };
    let fused = if model.kind == FusionKind::IntermediateFusion {
        let params = model
            .intermediate
            .as_ref()
            .ok_or(Error::EmptyInput("intermediate fusion parameters"))?;
        let creators = creator.as_ref().unwrap();
        let mut out = Vec::with_capacity(side.len());
        for (t, c) in side.iter().zip(creators) {
            out.push(crate::fusion::fuse_intermediate(&t.emb, &c.emb, params)?);
        }
        Some(out)
    } else {
        None
    };
    Ok(ForwardPass {
        news,
        side,
        creator,
        fused,
    })
}

fn embs_of(caches: &[EncCache]) -> Vec<PooledEmbedding> {
    caches.iter().map(|c| c.emb.clone()).collect()
}

/// Forward-only training objective for the model's kind.
///
/// Base, Early, and Intermediate use one in-batch loss over the news-side
/// matrix. Late Fusion trains its two channels independently, so its loss is
/// the sum of the tweet-channel and creator-channel in-batch losses (the
/// combining weight enters only at retrieval time).
pub fn batch_loss(model: &FusionModel, batch: &TrainingBatch, tau: f64) -> Result<f64> {
    let pass = forward(model, batch)?;
    let news = embs_of(&pass.news);
    match model.kind {
        FusionKind::Base | FusionKind::EarlyFusion => {
            let scores = in_batch_scores(&news, &embs_of(&pass.side))?;
            Ok(in_batch_loss(&scores, tau))
        }
        FusionKind::IntermediateFusion => {
            let scores = in_batch_scores(&news, pass.fused.as_ref().unwrap())?;
            Ok(in_batch_loss(&scores, tau))
        }
        FusionKind::LateFusion => {
            let s_tweet = in_batch_scores(&news, &embs_of(&pass.side))?;
            let s_creator = in_batch_scores(&news, &embs_of(pass.creator.as_ref().unwrap()))?;
            Ok(in_batch_loss(&s_tweet, tau) + in_batch_loss(&s_creator, tau))
        }
    }
}

struct GradStore {
    news: EncoderParams,
    tweet: EncoderParams,
    creator: Option<EncoderParams>,
    fc_weight: Option<Vec<f64>>,
    fc_bias: Option<Vec<f64>>,
}

impl GradStore {
    fn zeros_like(model: &FusionModel) -> Self {
        let z = |p: &EncoderParams| EncoderParams::zeros(p.vocab_size, p.dim);
        GradStore {
            news: z(&model.news_encoder),
            tweet: z(&model.tweet_encoder),
            creator: model.creator_encoder.as_ref().map(z),
            fc_weight: model
                .intermediate
                .as_ref()
                .map(|f| vec![0.0; f.fc_weight.len()]),
            fc_bias: model
                .intermediate
                .as_ref()
                .map(|f| vec![0.0; f.fc_bias.len()]),
        }
    }

    /// Flattened in the same tensor order as [`FusionModel::flatten_params`].
    fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for enc in [Some(&self.news), Some(&self.tweet), self.creator.as_ref()]
            .into_iter()
            .flatten()
        {
            flat.extend_from_slice(&enc.token_table);
            flat.extend_from_slice(&enc.proj_weight);
            flat.extend_from_slice(&enc.proj_bias);
        }
        if let Some(w) = &self.fc_weight {
            flat.extend_from_slice(w);
        }
        if let Some(b) = &self.fc_bias {
            flat.extend_from_slice(b);
        }
        flat
    }
}

#[allow(clippy::needless_range_loop)]
fn backprop_encoder(
    params: &EncoderParams,
    grads: &mut EncoderParams,
    seq: &TokenSequence,
    cache: &EncCache,
    g_emb: &[f64],
) {
    let d = params.dim;
    for (gb, ge) in grads.proj_bias.iter_mut().zip(g_emb) {
        *gb += ge;
    }
    for i in 0..d {
        let ge = g_emb[i];
        let row = &mut grads.proj_weight[i * d..(i + 1) * d];
        for (gw, m) in row.iter_mut().zip(&cache.mean) {
            *gw += ge * m;
        }
    }
    if seq.ids.is_empty() {
        // Zero-mean path (empty creator context): no token rows to update.
        return;
    }
    let mut g_mean = vec![0.0; d];
    for i in 0..d {
        let ge = g_emb[i];
        let row = &params.proj_weight[i * d..(i + 1) * d];
        for (gm, w) in g_mean.iter_mut().zip(row) {
            *gm += w * ge;
        }
    }
    let scale = 1.0 / seq.ids.len() as f64;
    for &id in &seq.ids {
        let start = id as usize * d;
        for (slot, gm) in grads.token_table[start..start + d].iter_mut().zip(&g_mean) {
            *slot += gm * scale;
        }
    }
}

/// Accumulates d(loss)/d(news_emb) and d(loss)/d(side_emb) for one in-batch
/// cross-entropy term over cosine scores.
fn cosine_matrix_backward(
    news: &[PooledEmbedding],
    side: &[PooledEmbedding],
    tau: f64,
    g_news: &mut [Vec<f64>],
    g_side: &mut [Vec<f64>],
) -> Result<f64> {
    let b = news.len();
    let norm = |e: &PooledEmbedding| e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let news_norms: Vec<f64> = news.iter().map(norm).collect();
    let side_norms: Vec<f64> = side.iter().map(norm).collect();
    if news_norms.iter().chain(&side_norms).any(|&n| n == 0.0) {
        return Err(Error::ZeroNorm);
    }

    let mut loss = 0.0;
    let scale = 1.0 / (b * b) as f64;
    for i in 0..b {
        for j in 0..b {
            let a = &news[i].values;
            let c = &side[j].values;
            let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
            let (na, nc) = (news_norms[i], side_norms[j]);
            let s = dot / (na * nc);
            let y = if i == j { 1.0 } else { 0.0 };
            let z = tau * s;
            loss += stable_bce(z, y) * scale;
            let g_s = tau * (sigmoid(z) - y) * scale;
            let inv = 1.0 / (na * nc);
            let ca = s / (na * na);
            let cc = s / (nc * nc);
            for k in 0..a.len() {
                g_news[i][k] += g_s * (c[k] * inv - ca * a[k]);
                g_side[j][k] += g_s * (a[k] * inv - cc * c[k]);
            }
        }
    }
    Ok(loss)
}

/// Loss and analytic gradients over every parameter (news encoder included;
/// freezing is applied by the update, not here), flattened in
/// [`FusionModel::flatten_params`] order.
#[allow(clippy::needless_range_loop)]
pub fn batch_gradients(
    model: &FusionModel,
    batch: &TrainingBatch,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let pass = forward(model, batch)?;
    let b = batch.size();
    let d = model.dim();
    let mut grads = GradStore::zeros_like(model);

    let news_embs = embs_of(&pass.news);
    let mut g_news = vec![vec![0.0; d]; b];

    let loss = match model.kind {
        FusionKind::Base | FusionKind::EarlyFusion => {
            let side_embs = embs_of(&pass.side);
            let mut g_side = vec![vec![0.0; d]; b];
            let loss =
                cosine_matrix_backward(&news_embs, &side_embs, tau, &mut g_news, &mut g_side)?;
            for j in 0..b {
                backprop_encoder(
                    &model.tweet_encoder,
                    &mut grads.tweet,
                    &batch.tweet_side_seqs[j],
                    &pass.side[j],
                    &g_side[j],
                );
            }
            loss
        }
        FusionKind::IntermediateFusion => {
            let fused = pass.fused.as_ref().unwrap();
            let mut g_fused = vec![vec![0.0; d]; b];
            let loss = cosine_matrix_backward(&news_embs, fused, tau, &mut g_news, &mut g_fused)?;
            let params = model.intermediate.as_ref().unwrap();
            let creators = pass.creator.as_ref().unwrap();
            let creator_params = model.creator_encoder.as_ref().unwrap();
            let creator_seqs = batch.creator_seqs.as_ref().unwrap();
            let fc_w = grads.fc_weight.as_mut().unwrap();
            let fc_b = grads.fc_bias.as_mut().unwrap();
            for j in 0..b {
                let g = &g_fused[j];
                let t = &pass.side[j].emb.values;
                let c = &creators[j].emb.values;
                let mut g_t = vec![0.0; d];
                let mut g_c = vec![0.0; d];
                for i in 0..d {
                    let gi = g[i];
                    fc_b[i] += gi;
                    let row = &params.fc_weight[i * 2 * d..(i + 1) * 2 * d];
                    let grow = &mut fc_w[i * 2 * d..(i + 1) * 2 * d];
                    for k in 0..d {
                        grow[k] += gi * t[k];
                        grow[d + k] += gi * c[k];
                        g_t[k] += row[k] * gi;
                        g_c[k] += row[d + k] * gi;
                    }
                }
                backprop_encoder(
                    &model.tweet_encoder,
                    &mut grads.tweet,
                    &batch.tweet_side_seqs[j],
                    &pass.side[j],
                    &g_t,
                );
                backprop_encoder(
                    creator_params,
                    grads.creator.as_mut().unwrap(),
                    &creator_seqs[j],
                    &creators[j],
                    &g_c,
                );
            }
            loss
        }
        FusionKind::LateFusion => {
            let tweet_embs = embs_of(&pass.side);
            let creators = pass.creator.as_ref().unwrap();
            let creator_embs = embs_of(creators);
            let mut g_tweet = vec![vec![0.0; d]; b];
            let mut g_creator = vec![vec![0.0; d]; b];
            let loss_t =
                cosine_matrix_backward(&news_embs, &tweet_embs, tau, &mut g_news, &mut g_tweet)?;
            let loss_c = cosine_matrix_backward(
                &news_embs,
                &creator_embs,
                tau,
                &mut g_news,
                &mut g_creator,
            )?;
            let creator_params = model.creator_encoder.as_ref().unwrap();
            let creator_seqs = batch.creator_seqs.as_ref().unwrap();
            for j in 0..b {
                backprop_encoder(
                    &model.tweet_encoder,
                    &mut grads.tweet,
                    &batch.tweet_side_seqs[j],
                    &pass.side[j],
                    &g_tweet[j],
                );
                backprop_encoder(
                    creator_params,
                    grads.creator.as_mut().unwrap(),
                    &creator_seqs[j],
                    &creators[j],
                    &g_creator[j],
                );
            }
            loss_t + loss_c
        }
    };

    for i in 0..b {
        backprop_encoder(
            &model.news_encoder,
            &mut grads.news,
            &batch.news_seqs[i],
            &pass.news[i],
            &g_news[i],
        );
    }

    Ok((loss, grads.flatten()))
}

/// One SGD update on all unfrozen parameters; returns the pre-update loss.
pub fn train_step(
    model: &mut FusionModel,
    batch: &TrainingBatch,
    config: &TrainConfig,
) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, batch, config.tau)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let start = if config.freeze_news {
        model.news_param_range().end
    } else {
        0
    };
    model.apply_gradients(&grads, config.learning_rate, start)?;
    Ok(loss)
}

/// One tokenized positive pair ready for batching.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub news: TokenSequence,
    pub tweet_side: TokenSequence,
    pub creator: Option<TokenSequence>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub loss: f64,
}

/// Runs the full training loop with seeded batch sampling.
pub fn run_training(
    model: &mut FusionModel,
    examples: &[PairExample],
    config: &TrainConfig,
) -> Result<Vec<TrainLogRecord>> {
    config.validate()?;
    if examples.len() < config.batch_size {
        return Err(Error::InvalidRecord {
            entity: "training set",
            id: String::new(),
            reason: format!(
                "{} examples cannot fill a batch of {}",
                examples.len(),
                config.batch_size
            ),
        });
    }
    if model.kind.uses_creator_encoder() && examples.iter().any(|e| e.creator.is_none()) {
        return Err(Error::EmptyInput("creator sequences"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let picks = rand::seq::index::sample(&mut rng, examples.len(), config.batch_size);
        let batch = TrainingBatch {
            news_seqs: picks.iter().map(|i| examples[i].news.clone()).collect(),
            tweet_side_seqs: picks
                .iter()
                .map(|i| examples[i].tweet_side.clone())
                .collect(),
            creator_seqs: model.kind.uses_creator_encoder().then(|| {
                picks
                    .iter()
                    .map(|i| examples[i].creator.clone().unwrap())
                    .collect()
            }),
        };
        let loss = train_step(model, &batch, config).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
        log.push(TrainLogRecord { step, loss });
    }
    Ok(log)
}

/// Reorders pairs round-robin over groups (first-appearance group order) so
/// consecutive fixed-size chunks spread one group's pairs across batches.
/// In-batch evaluation would otherwise punish a model for scoring a related
/// "negative" from the same group highly.
pub fn interleave_by_key<K: Ord + Clone>(
    pairs: &std::collections::BTreeSet<crate::corpus::TrainingPair>,
    key: impl Fn(&crate::corpus::TrainingPair) -> K,
) -> Vec<crate::corpus::TrainingPair> {
    let mut order: Vec<K> = Vec::new();
    let mut groups: std::collections::BTreeMap<K, Vec<&crate::corpus::TrainingPair>> =
        std::collections::BTreeMap::new();
    for pair in pairs {
        let k = key(pair);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(pair);
    }
    let mut out = Vec::with_capacity(pairs.len());
    let mut round = 0;
    loop {
        let mut emitted = false;
        for k in &order {
            if let Some(pair) = groups[k].get(round) {
                out.push((*pair).clone());
                emitted = true;
            }
        }
        if !emitted {
            break;
        }
        round += 1;
    }
    out
}

/// Round-robin over articles: no batch smaller than the article count sees
/// two pairs of one article.
pub fn interleave_by_article(
    pairs: &std::collections::BTreeSet<crate::corpus::TrainingPair>,
) -> Vec<crate::corpus::TrainingPair> {
    interleave_by_key(pairs, |p| p.article_id.clone())
}

/// Mean in-batch loss over deterministic, fixed-size chunks of `examples`;
/// chunks smaller than two pairs are dropped.
pub fn average_batch_loss(
    model: &FusionModel,
    examples: &[PairExample],
    batch_size: usize,
    tau: f64,
) -> Result<f64> {
    let mut losses = Vec::new();
    for chunk in examples.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = TrainingBatch {
            news_seqs: chunk.iter().map(|e| e.news.clone()).collect(),
            tweet_side_seqs: chunk.iter().map(|e| e.tweet_side.clone()).collect(),
            creator_seqs: model.kind.uses_creator_encoder().then(|| {
                chunk
                    .iter()
                    .map(|e| e.creator.clone().expect("creator sequence required"))
                    .collect()
            }),
        };
        losses.push(batch_loss(model, &batch, tau)?);
    }
    if losses.is_empty() {
        return Err(Error::EmptyInput("evaluation examples"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
