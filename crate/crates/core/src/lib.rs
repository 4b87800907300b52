//! Goal-conditioned multimodal transformer for 6-DOF object trajectory
//! prediction, with its metric suite and a synthetic data generator.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod datagen;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pointscene;
pub mod text;
pub mod training;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use config::{Ablation, LossWeights, ModelConfig, TrainConfig};
pub use datagen::{GenConfig, PreprocessConfig, RawTrajectory};
pub use metrics::{MetricReport, SampleMetrics};
pub use training::{fit, EpochLog, LossComponents, TrainState};
pub use data::{SceneContext, Trajectory, TrajectorySample};
pub use error::{GmtError, Result};
pub use fusion::{GmtModel, PreparedSample};
pub use geometry::{OrientedBox, Pose9, Rot6D, Vec3};
pub use pointscene::{Fixture, FixtureSet, PointCloud};
