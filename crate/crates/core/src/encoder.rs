//! Reference sequence encoder: a trainable token table, mean pooling, and an
//! affine projection standing in for a transformer's pooled output. Also the
//! attention-cost model for the four retrieval structures.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::textprep::TokenSequence;

pub const PARAM_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size,
            dim,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.vocab_size < 2 {
            return Err(Error::InvalidRecord {
                entity: "encoder config",
                id: String::new(),
                reason: format!(
                    "dim and vocab_size must both be at least 2, got dim={} vocab_size={}",
                    self.dim, self.vocab_size
                ),
            });
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2,
            dim: 64,
            seed: 0,
        }
    }
}

/// Trainable encoder parameters: per-token embedding rows plus one affine
/// projection applied to the pooled mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub dim: usize,
    /// vocab_size x dim, row-major.
    pub token_table: Vec<f64>,
    /// dim x dim, row-major.
    pub proj_weight: Vec<f64>,
    pub proj_bias: Vec<f64>,
}

impl EncoderParams {
    /// Initializes all parameters uniformly in [-0.05, 0.05] from the seed,
    /// in token_table, proj_weight, proj_bias order.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-PARAM_INIT_RANGE..=PARAM_INIT_RANGE))
                .collect()
        };
        let token_table = draw(config.vocab_size * config.dim);
        // Identity plus noise, zero bias: the projection starts near a
        // passthrough so token differences reach the embedding at first
        // order, and no shared bias direction compresses the angular spread
        // of the pooled embeddings. Plain SGD cannot escape the
        // uniform-score equilibrium without both.
        let mut proj_weight = draw(config.dim * config.dim);
        for i in 0..config.dim {
            proj_weight[i * config.dim + i] += 1.0;
        }
        Ok(EncoderParams {
            vocab_size: config.vocab_size,
            dim: config.dim,
            token_table,
            proj_weight,
            proj_bias: vec![0.0; config.dim],
        })
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EncoderParams {
            vocab_size,
            dim,
            token_table: vec![0.0; vocab_size * dim],
            proj_weight: vec![0.0; dim * dim],
            proj_bias: vec![0.0; dim],
        }
    }

    pub fn token_row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.token_table[start..start + self.dim]
    }

    pub fn param_len(&self) -> usize {
        self.token_table.len() + self.proj_weight.len() + self.proj_bias.len()
    }

    /// Mean of the token rows for `seq`; the zero vector for an empty
    /// sequence (used for empty creator contexts).
    pub fn pooled_mean(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; self.dim];
        if seq.ids.is_empty() {
            return Ok(mean);
        }
        for &id in &seq.ids {
            if id as usize >= self.vocab_size {
                return Err(Error::TokenIdOutOfRange {
                    id,
                    vocab_size: self.vocab_size,
                });
            }
            for (m, v) in mean.iter_mut().zip(self.token_row(id)) {
                *m += v;
            }
        }
        let scale = 1.0 / seq.ids.len() as f64;
        for m in &mut mean {
            *m *= scale;
        }
        Ok(mean)
    }

    /// proj_weight * mean + proj_bias.
    pub fn project(&self, mean: &[f64]) -> PooledEmbedding {
        let d = self.dim;
        let mut values = self.proj_bias.clone();
        for (i, value) in values.iter_mut().enumerate() {
            let row = &self.proj_weight[i * d..(i + 1) * d];
            *value += row.iter().zip(mean).map(|(w, m)| w * m).sum::<f64>();
        }
        PooledEmbedding { values }
    }
}

/// Fixed-dimension pooled sequence representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmbedding {
    pub values: Vec<f64>,
}

impl PooledEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Encodes a non-empty token sequence: affine projection of the mean token
/// row. Deterministic for fixed parameters.
pub fn encode_sequence(params: &EncoderParams, seq: &TokenSequence) -> Result<PooledEmbedding> {
    if seq.ids.is_empty() {
        return Err(Error::EmptyInput("token sequence"));
    }
    let mean = params.pooled_mean(seq)?;
    Ok(params.project(&mean))
}

/// Cosine similarity in [-1, 1]; errors on zero-norm input.
pub fn cosine_similarity(a: &PooledEmbedding, b: &PooledEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Attention-cost query: tweet length `n`, creator context length `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostQuery {
    pub model_kind: FusionKind,
    pub n: u64,
    pub m: u64,
    pub cache_hit: bool,
}

/// Attention-cost units for encoding one tweet under the given model:
/// n^2 for Base, (n+m)^2 for Early Fusion, and n^2 + m^2 for Intermediate
/// and Late Fusion unless the creator embedding is already cached.
pub fn estimate_encode_cost(query: &CostQuery) -> u64 {
    match query.model_kind {
        FusionKind::Base => query.n * query.n,
        FusionKind::EarlyFusion => (query.n + query.m) * (query.n + query.m),
        FusionKind::IntermediateFusion | FusionKind::LateFusion => {
            let creator = if query.cache_hit {
                0
            } else {
                query.m * query.m
            };
            query.n * query.n + creator
        }
    }
}
