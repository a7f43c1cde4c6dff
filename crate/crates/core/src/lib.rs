//! Reconstruction of semi-aggregated MDPs (SAMDPs) from recorded policy
//! trajectories.
//!
//! The pipeline embeds per-step features (PCA then t-SNE plus the value
//! estimate), aggregates steps into clusters with temporally aware K-means
//! variants, extracts skills as cluster-to-cluster segments, estimates the
//! skill-level transition/reward model, scores model fitness, and monitors new
//! trajectories against models of good and bad behaviour.

pub mod aggregation;
pub mod embedding;
pub mod eject;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod pipeline;
pub mod rooms;
pub mod samdp;
pub mod trajectory;
pub mod viz;
mod textio;

pub use aggregation::{Algorithm, ClusterConfig, ClusterModel};
pub use embedding::{EmbeddedDataset, EmbeddingConfig, ValueScaleMode};
pub use error::{Result, SamdpError};
pub use evaluation::{FitnessReport, KeyValueReport, SelectionResult};
pub use matrix::Matrix;
pub use pipeline::{run_stage, PipelineConfig, Stage};
pub use samdp::{fit_samdp, FitParams, SamdpModel, SkillSegment};
pub use trajectory::{episode_returns, load_dataset, StepRecord, TrajectoryDataset};
