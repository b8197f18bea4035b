//! Pipeline configuration: one JSON document per experiment, hashed into
//! every artifact filename. Environment variables override path fields only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use newstweet_core::bm25::Bm25Params;
use newstweet_core::corpus::{CreatorAttribute, SplitUnit};
use newstweet_core::fusion::{FusionKind, LateFusionConfig};
use newstweet_core::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    pub articles: PathBuf,
    pub tweets: PathBuf,
    pub creators: PathBuf,
    pub vocab: PathBuf,
    pub unigrams: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: FusionKind,
    pub dim: usize,
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: FusionKind::Base,
            dim: 64,
            encoder_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 0,
            unit: SplitUnit::Article,
        }
    }
}

/// Candidate time windowing; disabled by default (the main protocol ranks
/// against all tweets, the windowed mode restricts to the week before each
/// article).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowConfig {
    pub enabled: bool,
    pub window_days: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            enabled: false,
            window_days: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostPoint {
    pub n: u64,
    pub m: u64,
}

fn default_alpha_grid() -> Vec<f64> {
    newstweet_core::evaluation::default_alpha_grid()
}

fn default_retrieval_k() -> usize {
    1000
}

fn default_included() -> Vec<CreatorAttribute> {
    CreatorAttribute::ALL.to_vec()
}

fn default_cost_bench() -> Vec<CostPoint> {
    vec![CostPoint { n: 128, m: 128 }]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub late_fusion: LateFusionConfig,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub candidate_window: WindowConfig,
    #[serde(default = "default_included")]
    pub included_attributes: Vec<CreatorAttribute>,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_cost_bench")]
    pub cost_bench: Vec<CostPoint>,
}

impl PipelineConfig {
    /// Parses the JSON document and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config JSON: {e}"))?;
        config.apply_env_overrides();
        Ok(config)
    }

    /// Environment variables override path fields only.
    pub fn apply_env_overrides(&mut self) {
        let over = |slot: &mut PathBuf, var: &str| {
            if let Ok(value) = std::env::var(var) {
                if !value.is_empty() {
                    *slot = PathBuf::from(value);
                }
            }
        };
        over(&mut self.paths.articles, "NEWSTWEET_ARTICLES");
        over(&mut self.paths.tweets, "NEWSTWEET_TWEETS");
        over(&mut self.paths.creators, "NEWSTWEET_CREATORS");
        over(&mut self.paths.vocab, "NEWSTWEET_VOCAB");
        over(&mut self.paths.unigrams, "NEWSTWEET_UNIGRAMS");
        over(&mut self.paths.out_dir, "NEWSTWEET_OUT_DIR");
    }

    /// Applies the global --seed flag: one knob driving split, encoder
    /// initialization, and batch sampling.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.model.encoder_seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        for (label, path) in [
            ("articles", &self.paths.articles),
            ("tweets", &self.paths.tweets),
            ("creators", &self.paths.creators),
            ("vocab", &self.paths.vocab),
            ("unigrams", &self.paths.unigrams),
        ] {
            if !path.is_file() {
                return Err(format!("{label} file {} does not exist", path.display()));
            }
        }
        if self.model.dim < 2 {
            return Err("model dim must be at least 2".into());
        }
        self.training
            .validate()
            .map_err(|e| format!("training config: {e}"))?;
        self.late_fusion
            .validate()
            .map_err(|e| format!("late fusion config: {e}"))?;
        self.bm25
            .validate()
            .map_err(|e| format!("bm25 config: {e}"))?;
        if self.retrieval_k == 0 {
            return Err("retrieval_k must be positive".into());
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err("alpha_grid must be non-empty with values in [0, 1]".into());
        }
        if self.included_attributes.is_empty() {
            return Err("included_attributes must not be empty".into());
        }
        Ok(())
    }

    /// Twelve hex characters of the SHA-256 of the canonical JSON form;
    /// stamped into every artifact filename so reruns under a different
    /// configuration never silently reuse stale artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json(dir: &Path) -> String {
        format!(
            r#"{{"paths":{{"articles":"{0}/a.jsonl","tweets":"{0}/t.jsonl","creators":"{0}/c.jsonl","vocab":"{0}/v.txt","unigrams":"{0}/u.tsv","out_dir":"{0}/out"}}}}"#,
            dir.display()
        )
    }

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let config: PipelineConfig = serde_json::from_str(&minimal_json(dir.path())).unwrap();
        assert_eq!(config.retrieval_k, 1000);
        assert_eq!(config.alpha_grid.len(), 21);
        assert_eq!(config.training.batch_size, 32);
        assert_eq!(config.candidate_window.window_days, 7);
        assert!(!config.candidate_window.enabled);
        assert_eq!(config.included_attributes.len(), 5);
    }

    #[test]
    fn hash_changes_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let a: PipelineConfig = serde_json::from_str(&minimal_json(dir.path())).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.retrieval_k = 500;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validate_requires_input_files() {
        let dir = tempfile::tempdir().unwrap();
        let config: PipelineConfig = serde_json::from_str(&minimal_json(dir.path())).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn seed_override_hits_all_three_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut config: PipelineConfig = serde_json::from_str(&minimal_json(dir.path())).unwrap();
        config.override_seed(99);
        assert_eq!(config.split.seed, 99);
        assert_eq!(config.model.encoder_seed, 99);
        assert_eq!(config.training.seed, 99);
    }
}
