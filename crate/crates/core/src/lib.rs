//! Hybrid compression of sparse SfM scene models and multi-match RANSAC
//! localization against the compressed output.
//!
//! A scene is compressed into two point sets under one byte budget: a small
//! set keeping full descriptors and visibility lists (selected by a weighted
//! K-cover over image grid cells) and a larger set keeping only a visual-word
//! id per point. Queries localize by matching uniquely against the first set,
//! ambiguously against the second, and scoring RANSAC hypotheses over both.
//!
//! Modules follow the pipeline order:
//!
//! - [`descriptor`], [`geometry`]: primitive types and exact arithmetic
//! - [`scene`], [`scene_io`], [`synth`]: the scene model, formats, generator
//! - [`vocab`]: flat k-means vocabulary
//! - [`compress`], [`hybrid`]: hybrid selection and the compressed model
//! - [`matcher`], [`p3p`], [`ransac`]: localization against the model
//! - [`harness`]: end-to-end evaluation, ablation, and reports

pub mod compress;
pub mod descriptor;
pub mod geometry;
pub mod harness;
pub mod hybrid;
pub mod matcher;
pub mod p3p;
pub mod ransac;
pub mod scene;
pub mod scene_io;
pub mod synth;
pub mod vocab;

pub use compress::{alpha_weight, compress as compress_scene, CoverConfig};
pub use descriptor::{mean_descriptor, Descriptor, DESCRIPTOR_DIM};
pub use geometry::{pose_error, reprojection_error, Correspondence, Intrinsics, Pose};
pub use harness::{run_ablation, run_pipeline, EvaluationReport, PipelineConfig};
pub use hybrid::HybridModel;
pub use matcher::{match_multi, match_unique, MatchSet};
pub use p3p::solve_p3p;
pub use ransac::{evaluate_pose, run_ransac, RansacConfig, RansacResult};
pub use scene::{QueryImage, SceneModel};
pub use scene_io::{load_scene, save_scene, SceneFormat};
pub use synth::{generate_synthetic_scene, SynthSpec};
pub use vocab::{occupancy, train_vocabulary, Vocabulary, WordHistogram};
