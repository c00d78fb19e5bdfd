//! Experiment configuration: one TOML file covering data generation,
//! splitting, model dimensions, training, and decoding. Every field can
//! also be set by a command-line flag; flags win. Unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;
use acbk_core::data::{GenConfig, SplitRatios};
use acbk_core::model::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seen_accents: Option<Vec<String>>,
    pub unseen_accents: Option<Vec<String>>,
    pub speakers_per_accent: Option<usize>,
    pub num_utterances: Option<usize>,
    pub transcript_pool: Option<usize>,
    pub alphabet: Option<String>,
    pub min_transcript_len: Option<usize>,
    pub max_transcript_len: Option<usize>,
    pub feature_dim: Option<usize>,
    pub frames_per_token: Option<usize>,
    pub noise_scale: Option<f64>,
    pub unseen_extra_noise: Option<f64>,
    pub jitter_scale: Option<f64>,
    pub accent_bias_scale: Option<f64>,
    pub confusable_accents: Option<bool>,
    pub accent_rotation_angle: Option<f64>,
}

impl DataSection {
    pub fn to_gen_config(&self) -> GenConfig {
        let d = GenConfig::default();
        GenConfig {
            seen_accents: self.seen_accents.clone().unwrap_or(d.seen_accents),
            unseen_accents: self.unseen_accents.clone().unwrap_or(d.unseen_accents),
            speakers_per_accent: self.speakers_per_accent.unwrap_or(d.speakers_per_accent),
            num_utterances: self.num_utterances.unwrap_or(d.num_utterances),
            transcript_pool: self.transcript_pool.unwrap_or(d.transcript_pool),
            alphabet: self.alphabet.clone().unwrap_or(d.alphabet),
            min_transcript_len: self.min_transcript_len.unwrap_or(d.min_transcript_len),
            max_transcript_len: self.max_transcript_len.unwrap_or(d.max_transcript_len),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            frames_per_token: self.frames_per_token.unwrap_or(d.frames_per_token),
            noise_scale: self.noise_scale.unwrap_or(d.noise_scale),
            unseen_extra_noise: self.unseen_extra_noise.unwrap_or(d.unseen_extra_noise),
            jitter_scale: self.jitter_scale.unwrap_or(d.jitter_scale),
            accent_bias_scale: self.accent_bias_scale.unwrap_or(d.accent_bias_scale),
            confusable_accents: self.confusable_accents.unwrap_or(d.confusable_accents),
            accent_rotation_angle: self
                .accent_rotation_angle
                .unwrap_or(d.accent_rotation_angle),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Seven bucket weights (train+dev+test, train+test, dev+test,
    /// train+dev, dev, test, train).
    pub ratios: Option<[f64; 7]>,
}

impl SplitSection {
    pub fn to_ratios(&self) -> SplitRatios {
        self.ratios.map(SplitRatios).unwrap_or_default()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: Option<usize>,
    pub num_encoder_layers: Option<usize>,
    pub num_decoder_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub kernel_size: Option<usize>,
    pub use_codebooks: Option<bool>,
    pub codebook_entries: Option<usize>,
    pub codebook_layers: Option<Vec<usize>>,
    pub frozen_codebooks: Option<bool>,
    pub ln_eps: Option<f64>,
}

impl ModelSection {
    /// Model config for a corpus with the given feature width, alphabet,
    /// and seen accents.
    pub fn to_model_config(
        &self,
        input_dim: usize,
        alphabet: &str,
        accent_names: Vec<String>,
    ) -> ModelConfig {
        let layers = self.num_encoder_layers.unwrap_or(2);
        ModelConfig {
            input_dim,
            model_dim: self.model_dim.unwrap_or(16),
            num_encoder_layers: layers,
            num_decoder_layers: self.num_decoder_layers.unwrap_or(1),
            num_heads: self.num_heads.unwrap_or(4),
            ffn_hidden: self.ffn_hidden.unwrap_or(32),
            kernel_size: self.kernel_size.unwrap_or(7),
            alphabet: alphabet.to_string(),
            accent_names,
            use_codebooks: self.use_codebooks.unwrap_or(true),
            codebook_entries: self.codebook_entries.unwrap_or(4),
            codebook_layers: self
                .codebook_layers
                .clone()
                .unwrap_or_else(|| (0..layers).collect()),
            frozen_codebooks: self.frozen_codebooks.unwrap_or(false),
            ln_eps: self.ln_eps.unwrap_or(1e-5),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub ctc_weight: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub stochastic_depth_rate: Option<f64>,
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            ctc_weight: self.ctc_weight.unwrap_or(d.ctc_weight),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            grad_clip_norm: self.grad_clip_norm.unwrap_or(d.grad_clip_norm),
            stochastic_depth_rate: self
                .stochastic_depth_rate
                .unwrap_or(d.stochastic_depth_rate),
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_width: Option<usize>,
    pub max_len: Option<usize>,
    pub lm_weight: Option<f64>,
    pub variants: Option<Vec<String>>,
    pub trace: Option<bool>,
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: Option<String>,
    pub checkpoint: Option<String>,
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    /// Content hash of the effective configuration, for run provenance.
    pub fn content_hash(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Provenance record written next to every command's artifacts.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    /// Wall-clock only; excluded from reproducibility comparisons.
    pub elapsed_ms: f64,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("run.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("run manifest: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}
