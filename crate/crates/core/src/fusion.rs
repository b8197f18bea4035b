//! The four retrieval model structures and their composition rules over
//! encoder outputs, plus the serializable model checkpoint.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams, PooledEmbedding, PARAM_INIT_RANGE};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where creator context joins the model: nowhere (Base), in the input text
/// (Early), at the embedding level (Intermediate), or at the score level
/// (Late).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Base,
    #[serde(rename = "early")]
    EarlyFusion,
    #[serde(rename = "intermediate")]
    IntermediateFusion,
    #[serde(rename = "late")]
    LateFusion,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Base,
        FusionKind::EarlyFusion,
        FusionKind::IntermediateFusion,
        FusionKind::LateFusion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionKind::Base => "base",
            FusionKind::EarlyFusion => "early",
            FusionKind::IntermediateFusion => "intermediate",
            FusionKind::LateFusion => "late",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        FusionKind::ALL.into_iter().find(|k| k.label() == name)
    }

    /// Whether the tweet side feeds the combined tweet-plus-context sequence
    /// to a single encoder.
    pub fn combines_input_text(self) -> bool {
        matches!(self, FusionKind::EarlyFusion)
    }

    /// Whether a separate creator encoder exists.
    pub fn uses_creator_encoder(self) -> bool {
        matches!(
            self,
            FusionKind::IntermediateFusion | FusionKind::LateFusion
        )
    }
}

/// Fully connected layer combining tweet and creator embeddings into one
/// creator-aware tweet embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateParams {
    pub dim: usize,
    /// dim x 2*dim, row-major; left block applies to the tweet embedding,
    /// right block to the creator embedding.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

impl IntermediateParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-PARAM_INIT_RANGE..=PARAM_INIT_RANGE))
                .collect()
        };
        IntermediateParams {
            dim,
            fc_weight: draw(dim * 2 * dim),
            fc_bias: draw(dim),
        }
    }

    pub fn param_len(&self) -> usize {
        self.fc_weight.len() + self.fc_bias.len()
    }
}

/// Late fusion hyperparameters: the creator-channel weight and the two-stage
/// retrieval depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateFusionConfig {
    /// Weight on the creator-channel score; 0 recovers the Base model.
    pub alpha: f64,
    /// Stage-1 candidates retrieved per channel.
    pub stage_depth: usize,
    /// Final list length after re-ranking.
    pub final_k: usize,
}

impl Default for LateFusionConfig {
    fn default() -> Self {
        LateFusionConfig {
            alpha: 0.5,
            stage_depth: 20_000,
            final_k: 1_000,
        }
    }
}

impl LateFusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::WeightOutOfRange(self.alpha));
        }
        if self.final_k > self.stage_depth {
            return Err(Error::InvalidRecord {
                entity: "late fusion config",
                id: String::new(),
                reason: format!(
                    "final_k {} exceeds stage_depth {}",
                    self.final_k, self.stage_depth
                ),
            });
        }
        Ok(())
    }
}

/// fc_weight * concat(tweet_emb, creator_emb) + fc_bias.
pub fn fuse_intermediate(
    tweet_emb: &PooledEmbedding,
    creator_emb: &PooledEmbedding,
    params: &IntermediateParams,
) -> Result<PooledEmbedding> {
    let d = params.dim;
    if tweet_emb.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: tweet_emb.dim(),
        });
    }
    if creator_emb.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: creator_emb.dim(),
        });
    }
    let mut values = params.fc_bias.clone();
    for (i, value) in values.iter_mut().enumerate() {
        let row = &params.fc_weight[i * 2 * d..(i + 1) * 2 * d];
        let mut acc = 0.0;
        for (w, x) in row[..d].iter().zip(&tweet_emb.values) {
            acc += w * x;
        }
        for (w, x) in row[d..].iter().zip(&creator_emb.values) {
            acc += w * x;
        }
        *value += acc;
    }
    Ok(PooledEmbedding { values })
}

/// alpha * s_creator + (1 - alpha) * s_tweet.
pub fn late_combine_scores(s_tweet: f64, s_creator: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::WeightOutOfRange(alpha));
    }
    Ok(alpha * s_creator + (1.0 - alpha) * s_tweet)
}

/// Parameters and kind selector for one retrieval model: a frozen-by-default
/// news encoder plus the tweet-side parameters the kind calls for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub encoder_config: EncoderConfig,
    pub news_encoder: EncoderParams,
    /// Encodes the tweet text, or the combined tweet-plus-context sequence
    /// for Early Fusion.
    pub tweet_encoder: EncoderParams,
    pub creator_encoder: Option<EncoderParams>,
    pub intermediate: Option<IntermediateParams>,
    pub late: Option<LateFusionConfig>,
}

impl FusionModel {
    /// Builds a model with fresh parameters. Component seeds are derived
    /// from the config seed so towers start from distinct tables.
    pub fn init(kind: FusionKind, encoder_config: EncoderConfig) -> Result<Self> {
        encoder_config.validate()?;
        let seed = encoder_config.seed;
        let sub = |offset: u64| EncoderConfig {
            seed: seed.wrapping_add(offset),
            ..encoder_config
        };
        let news_encoder = EncoderParams::init(&sub(0))?;
        let tweet_encoder = EncoderParams::init(&sub(1))?;
        let creator_encoder = kind
            .uses_creator_encoder()
            .then(|| EncoderParams::init(&sub(2)))
            .transpose()?;
        let intermediate = matches!(kind, FusionKind::IntermediateFusion)
            .then(|| IntermediateParams::init(encoder_config.dim, seed.wrapping_add(3)));
        let late = matches!(kind, FusionKind::LateFusion).then(LateFusionConfig::default);
        Ok(FusionModel {
            kind,
            encoder_config,
            news_encoder,
            tweet_encoder,
            creator_encoder,
            intermediate,
            late,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder_config.dim
    }

    /// Number of trainable scalars, news encoder included.
    pub fn param_count(&self) -> usize {
        let mut count = self.news_encoder.param_len() + self.tweet_encoder.param_len();
        if let Some(c) = &self.creator_encoder {
            count += c.param_len();
        }
        if let Some(f) = &self.intermediate {
            count += f.param_len();
        }
        count
    }

    /// Flat range of the news encoder parameters inside
    /// [`FusionModel::flatten_params`] order; skipped when the news tower is
    /// frozen.
    pub fn news_param_range(&self) -> std::ops::Range<usize> {
        0..self.news_encoder.param_len()
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut tensors = vec![
            self.news_encoder.token_table.as_slice(),
            self.news_encoder.proj_weight.as_slice(),
            self.news_encoder.proj_bias.as_slice(),
            self.tweet_encoder.token_table.as_slice(),
            self.tweet_encoder.proj_weight.as_slice(),
            self.tweet_encoder.proj_bias.as_slice(),
        ];
        if let Some(c) = &self.creator_encoder {
            tensors.push(c.token_table.as_slice());
            tensors.push(c.proj_weight.as_slice());
            tensors.push(c.proj_bias.as_slice());
        }
        if let Some(f) = &self.intermediate {
            tensors.push(f.fc_weight.as_slice());
            tensors.push(f.fc_bias.as_slice());
        }
        tensors
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut tensors = vec![
            self.news_encoder.token_table.as_mut_slice(),
            self.news_encoder.proj_weight.as_mut_slice(),
            self.news_encoder.proj_bias.as_mut_slice(),
        ];
        tensors.push(self.tweet_encoder.token_table.as_mut_slice());
        tensors.push(self.tweet_encoder.proj_weight.as_mut_slice());
        tensors.push(self.tweet_encoder.proj_bias.as_mut_slice());
        if let Some(c) = &mut self.creator_encoder {
            tensors.push(c.token_table.as_mut_slice());
            tensors.push(c.proj_weight.as_mut_slice());
            tensors.push(c.proj_bias.as_mut_slice());
        }
        if let Some(f) = &mut self.intermediate {
            tensors.push(f.fc_weight.as_mut_slice());
            tensors.push(f.fc_bias.as_mut_slice());
        }
        tensors
    }

    /// All trainable scalars in a fixed order: news encoder, tweet encoder,
    /// creator encoder, fully connected layer; each encoder as token_table,
    /// proj_weight, proj_bias.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for tensor in self.tensors() {
            flat.extend_from_slice(tensor);
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut cursor = 0;
        for tensor in self.tensors_mut() {
            tensor.copy_from_slice(&flat[cursor..cursor + tensor.len()]);
            cursor += tensor.len();
        }
        Ok(())
    }

    /// Subtracts `lr * grad` from every parameter at or past `start`
    /// (start = news parameter count when the news tower is frozen).
    pub fn apply_gradients(&mut self, grads: &[f64], lr: f64, start: usize) -> Result<()> {
        if grads.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: grads.len(),
            });
        }
        let mut cursor = 0;
        for tensor in self.tensors_mut() {
            for value in tensor.iter_mut() {
                if cursor >= start {
                    *value -= lr * grads[cursor];
                }
                cursor += 1;
            }
        }
        Ok(())
    }
}

/// Versioned on-disk form of a [`FusionModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    pub model: FusionModel,
}

pub fn save_checkpoint(model: &FusionModel, path: &Path) -> Result<()> {
    let manifest = ModelManifest {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string(&manifest)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel> {
    let json = std::fs::read_to_string(path)?;
    let manifest: ModelManifest = serde_json::from_str(&json)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidRecord {
            entity: "checkpoint",
            id: path.display().to_string(),
            reason: format!(
                "version {} unsupported, expected {}",
                manifest.version, CHECKPOINT_VERSION
            ),
        });
    }
    Ok(manifest.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(values: Vec<f64>) -> PooledEmbedding {
        PooledEmbedding { values }
    }

    #[test]
    fn fuse_identity_on_first_half() {
        // fc_weight = [I | 0], bias 0 returns the tweet embedding.
        let d = 3;
        let mut fc_weight = vec![0.0; d * 2 * d];
        for i in 0..d {
            fc_weight[i * 2 * d + i] = 1.0;
        }
        let params = IntermediateParams {
            dim: d,
            fc_weight,
            fc_bias: vec![0.0; d],
        };
        let t = emb(vec![0.1, -0.2, 0.3]);
        let c = emb(vec![9.0, 9.0, 9.0]);
        let fused = fuse_intermediate(&t, &c, &params).unwrap();
        assert_eq!(fused.values, t.values);
    }

    #[test]
    fn fuse_zero_weights_annihilate() {
        let d = 2;
        let params = IntermediateParams {
            dim: d,
            fc_weight: vec![0.0; d * 2 * d],
            fc_bias: vec![0.0; d],
        };
        let fused = fuse_intermediate(&emb(vec![1.0, 2.0]), &emb(vec![3.0, 4.0]), &params).unwrap();
        assert_eq!(fused.values, vec![0.0, 0.0]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn fuse_matches_scalar_loop_oracle() {
        let d = 2;
        let params = IntermediateParams::init(d, 77);
        let t = emb(vec![0.4, -1.1]);
        let c = emb(vec![2.2, 0.05]);
        let fused = fuse_intermediate(&t, &c, &params).unwrap();

        let concat = [t.values.clone(), c.values.clone()].concat();
        for i in 0..d {
            let mut expected = params.fc_bias[i];
            for j in 0..2 * d {
                expected += params.fc_weight[i * 2 * d + j] * concat[j];
            }
            assert!((fused.values[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_rejects_dimension_mismatch() {
        let params = IntermediateParams::init(3, 0);
        let err = fuse_intermediate(&emb(vec![1.0, 2.0]), &emb(vec![1.0, 2.0, 3.0]), &params);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fuse_is_linear_with_zero_bias() {
        let d = 3;
        let mut params = IntermediateParams::init(d, 5);
        params.fc_bias = vec![0.0; d];
        let a = emb(vec![0.1, 0.2, 0.3]);
        let b = emb(vec![-0.4, 0.5, 0.6]);
        let sum = emb(vec![
            a.values[0] + b.values[0],
            a.values[1] + b.values[1],
            a.values[2] + b.values[2],
        ]);
        let c = emb(vec![0.7, -0.8, 0.9]);
        let f_sum = fuse_intermediate(&sum, &c, &params).unwrap();
        let f_a = fuse_intermediate(&a, &c, &params).unwrap();
        let f_b = fuse_intermediate(&b, &c, &params).unwrap();
        let zero = emb(vec![0.0; d]);
        let f_zero = fuse_intermediate(&zero, &c, &params).unwrap();
        for i in 0..d {
            assert!(
                (f_sum.values[i] + f_zero.values[i] - (f_a.values[i] + f_b.values[i])).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn late_combine_endpoints_and_arithmetic() {
        assert_eq!(late_combine_scores(0.5, 0.9, 0.0).unwrap(), 0.5);
        assert_eq!(late_combine_scores(0.5, 0.9, 1.0).unwrap(), 0.9);
        assert!((late_combine_scores(0.5, 0.9, 0.3).unwrap() - 0.62).abs() < 1e-12);
    }

    #[test]
    fn late_combine_rejects_out_of_range_weight() {
        assert!(matches!(
            late_combine_scores(0.0, 0.0, 1.5),
            Err(Error::WeightOutOfRange(_))
        ));
        assert!(matches!(
            late_combine_scores(0.0, 0.0, -0.1),
            Err(Error::WeightOutOfRange(_))
        ));
    }

    #[test]
    fn late_combine_is_monotone() {
        let alpha = 0.4;
        let base = late_combine_scores(0.2, 0.3, alpha).unwrap();
        assert!(late_combine_scores(0.5, 0.3, alpha).unwrap() >= base);
        assert!(late_combine_scores(0.2, 0.8, alpha).unwrap() >= base);
    }

    #[test]
    fn model_param_roundtrip() {
        let config = EncoderConfig::new(6, 4, 11).unwrap();
        for kind in FusionKind::ALL {
            let mut model = FusionModel::init(kind, config).unwrap();
            let flat = model.flatten_params();
            assert_eq!(flat.len(), model.param_count());
            let mut bumped = flat.clone();
            for v in &mut bumped {
                *v += 1.0;
            }
            model.set_params(&bumped).unwrap();
            assert_eq!(model.flatten_params(), bumped);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let model = FusionModel::init(
            FusionKind::IntermediateFusion,
            EncoderConfig::new(5, 4, 2).unwrap(),
        )
        .unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn init_gives_towers_distinct_tables() {
        let model = FusionModel::init(FusionKind::LateFusion, EncoderConfig::new(8, 4, 0).unwrap())
            .unwrap();
        assert_ne!(
            model.news_encoder.token_table,
            model.tweet_encoder.token_table
        );
        assert_ne!(
            model.tweet_encoder.token_table,
            model.creator_encoder.as_ref().unwrap().token_table
        );
    }
}
