//! Model and training configuration with the published defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GmtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetAbstractionConfig {
    pub centers: usize,
    pub radius: f64,
    pub max_k: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointEncoderConfig {
    pub sa1: SetAbstractionConfig,
    pub sa2: SetAbstractionConfig,
    /// Widths of the per-point MLP after feature propagation; the last one
    /// is the per-point feature size.
    pub fp_widths: Vec<usize>,
    /// Neighbours in the inverse-distance interpolation.
    pub fp_k: usize,
    pub fps_seed: u64,
}

impl Default for SetAbstractionConfig {
    fn default() -> Self {
        Self {
            centers: 256,
            radius: 0.2,
            max_k: 32,
            widths: vec![64, 64],
        }
    }
}

impl Default for PointEncoderConfig {
    fn default() -> Self {
        Self {
            sa1: SetAbstractionConfig::default(),
            sa2: SetAbstractionConfig {
                centers: 64,
                radius: 0.4,
                max_k: 64,
                widths: vec![128, 128],
            },
            fp_widths: vec![64],
            fp_k: 3,
            fps_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_latent: usize,
    pub d_in: usize,
    pub ffn_hidden: usize,
    /// Depth of the latent pass that fuses trajectory and local geometry.
    pub spatial_layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            d_latent: 256,
            d_in: 256,
            ffn_hidden: 1024,
            spatial_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    /// Character-trigram hashing, 512-D, L2-normalized.
    Fallback,
    /// Precomputed vectors from an external text encoder, stored as a JSON
    /// object mapping each string to its vector.
    External { table: PathBuf },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Fallback
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per trajectory, T.
    pub seq_len: usize,
    /// Fraction of valid frames observed as history.
    pub input_ratio: f64,
    pub d_traj: usize,
    pub d_fixture: usize,
    pub d_text: usize,
    pub d_goal: usize,
    pub fixture_heads: usize,
    pub text_dim: usize,
    pub embedder: EmbedderConfig,
    pub max_fixtures: usize,
    pub point_budget: usize,
    pub local_radius: f64,
    pub point_encoder: PointEncoderConfig,
    pub fusion: FusionConfig,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 200,
            input_ratio: 0.3,
            d_traj: 128,
            d_fixture: 128,
            d_text: 128,
            d_goal: 128,
            fixture_heads: 8,
            text_dim: 512,
            embedder: EmbedderConfig::Fallback,
            max_fixtures: 8,
            point_budget: 1024,
            local_radius: 1.0,
            point_encoder: PointEncoderConfig::default(),
            fusion: FusionConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A very small architecture for gradient checks and fast tests:
    /// ten frames, three history tokens, 16-wide latents in two layers.
    pub fn tiny() -> Self {
        let sa = |centers, radius, max_k| SetAbstractionConfig {
            centers,
            radius,
            max_k,
            widths: vec![8],
        };
        Self {
            seq_len: 10,
            input_ratio: 0.3,
            d_traj: 8,
            d_fixture: 8,
            d_text: 8,
            d_goal: 8,
            fixture_heads: 2,
            text_dim: 16,
            embedder: EmbedderConfig::Fallback,
            max_fixtures: 2,
            point_budget: 8,
            local_radius: 1.0,
            point_encoder: PointEncoderConfig {
                sa1: sa(4, 0.5, 4),
                sa2: sa(2, 1.0, 4),
                fp_widths: vec![8],
                fp_k: 3,
                fps_seed: 0,
            },
            fusion: FusionConfig {
                layers: 2,
                heads: 2,
                d_latent: 16,
                d_in: 16,
                ffn_hidden: 32,
                spatial_layers: 1,
            },
            init_seed: 0,
        }
    }

    /// Number of history tokens: `ceil(input_ratio · T)`.
    pub fn history_tokens(&self) -> usize {
        crate::data::history_len(self.seq_len, self.input_ratio)
    }

    pub fn d_global(&self) -> usize {
        *self.point_encoder.sa2.widths.last().unwrap_or(&0)
    }

    pub fn d_point(&self) -> usize {
        *self.point_encoder.fp_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmtError::ConfigMismatch(m));
        if self.seq_len < 2 {
            return bad(format!("seq_len must be >= 2, got {}", self.seq_len));
        }
        if !(self.input_ratio > 0.0 && self.input_ratio < 1.0) {
            return bad(format!("input_ratio must lie in (0, 1), got {}", self.input_ratio));
        }
        let f = &self.fusion;
        if f.heads == 0 || f.d_latent % f.heads != 0 {
            return bad(format!("d_latent {} not divisible by {} heads", f.d_latent, f.heads));
        }
        if self.fixture_heads == 0 || self.d_fixture % self.fixture_heads != 0 {
            return bad(format!(
                "d_fixture {} not divisible by {} heads",
                self.d_fixture, self.fixture_heads
            ));
        }
        if f.layers == 0 || f.spatial_layers == 0 {
            return bad("fusion needs at least one layer in each stack".into());
        }
        let pe = &self.point_encoder;
        if pe.sa1.widths.is_empty() || pe.sa2.widths.is_empty() || pe.fp_widths.is_empty() {
            return bad("point encoder MLPs need at least one layer".into());
        }
        if pe.sa2.centers > pe.sa1.centers || pe.sa1.centers == 0 || pe.sa2.centers == 0 {
            return bad("point encoder centers must satisfy 0 < sa2 <= sa1".into());
        }
        if self.max_fixtures == 0 || self.point_budget == 0 {
            return bad("max_fixtures and point_budget must be positive".into());
        }
        Ok(())
    }
}

/// Modality ablations matching the evaluation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoPointcloud,
    NoSemantic,
    NoGoal,
    FirstFrame,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoPointcloud,
        Ablation::NoSemantic,
        Ablation::NoGoal,
        Ablation::FirstFrame,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoPointcloud => "no_pointcloud",
            Ablation::NoSemantic => "no_semantic",
            Ablation::NoGoal => "no_goal",
            Ablation::FirstFrame => "first_frame",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = GmtError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| GmtError::InvalidInput(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub trans: f64,
    pub ori: f64,
    pub rec: f64,
    pub dest: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            trans: 1.0,
            ori: 1.0,
            rec: 1.0,
            dest: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once this many epochs pass without a better validation ADE.
    pub patience: usize,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss_weights: LossWeights,
    pub ablation: Ablation,
    /// Optional cap on optimizer steps across the whole run.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            lr_decay_per_epoch: 0.99,
            epochs: 300,
            batch_size: 16,
            seed: 0,
            patience: 20,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss_weights: LossWeights::default(),
            ablation: Ablation::None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_per_epoch.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(GmtError::ConfigMismatch(
                "learning_rate, batch_size and epochs must be positive".into(),
            ));
        }
        let w = &self.loss_weights;
        if [w.trans, w.ori, w.rec, w.dest].iter().any(|v| !(*v >= 0.0)) {
            return Err(GmtError::ConfigMismatch("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
