//! End-to-end evaluation pipeline: vocabulary, compression, per-query
//! localization, aggregate metrics, ablation and baseline comparison runners.
//!
//! Reports are emitted twice: a deterministic JSON document (stable across
//! reruns with the same seed, so it can be byte-compared) and a markdown
//! summary that additionally carries measured wall-clock timings.

use crate::compress::{bytes_per_compressed_point, bytes_per_full_point, compress, CoverConfig};
use crate::geometry::pose_error;
use crate::hybrid::{CompressError, HybridModel};
use crate::matcher::{match_query, MatchSet};
use crate::ransac::{run_ransac, CorrSet, RansacConfig};
use crate::scene::{QueryImage, SceneError, SceneModel};
use crate::scene_io::binary_scene_size;
use crate::vocab::{train_vocabulary, VocabError, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene stage: {0}")]
    Scene(#[from] SceneError),
    #[error("vocab stage: {0}")]
    Vocab(#[from] VocabError),
    #[error("compress stage: {0}")]
    Compress(#[from] CompressError),
    #[error("synth stage: {0}")]
    Synth(#[from] crate::synth::SynthError),
    #[error("config: {0}")]
    Config(String),
}

/// Everything one evaluation run needs, echoed verbatim into its report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub vocab_k: usize,
    pub vocab_seed: u64,
    /// Selection parameters; `budget_bytes` is ignored when `rate_percent`
    /// is set (the budget is then derived from the scene size).
    pub cover: CoverConfig,
    /// Budget as a percentage of the uncompressed binary scene size.
    pub rate_percent: Option<f64>,
    /// Ratio-test threshold for unique matching.
    pub ratio: f64,
    /// Per-feature cap on multi-match candidates.
    pub multi_cap: usize,
    pub ransac: RansacConfig,
    /// When false, multi-matches are not collected and never evaluated.
    pub use_multi: bool,
    /// Global seed; per-query RANSAC seeds are derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vocab_k: 6000,
            vocab_seed: 0,
            cover: CoverConfig::default(),
            rate_percent: Some(1.5),
            ratio: 0.7,
            multi_cap: 5,
            ransac: RansacConfig::default(),
            use_multi: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Resolve the byte budget against a scene.
    pub fn resolve_budget(&self, scene: &SceneModel) -> u64 {
        match self.rate_percent {
            Some(rate) => (rate / 100.0 * binary_scene_size(scene) as f64).floor() as u64,
            None => self.cover.budget_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(PipelineError::Config(format!(
                "ratio must be in (0, 1), got {}",
                self.ratio
            )));
        }
        if self.multi_cap < 1 {
            return Err(PipelineError::Config("multi_cap must be >= 1".into()));
        }
        if let Some(rate) = self.rate_percent {
            if !(rate > 0.0) {
                return Err(PipelineError::Config(format!(
                    "rate_percent must be positive, got {rate}"
                )));
            }
        }
        self.ransac
            .validate()
            .map_err(PipelineError::Config)?;
        Ok(())
    }
}

/// Deterministic per-query seed.
pub fn derive_query_seed(global_seed: u64, query_id: u32) -> u64 {
    let mut z = global_seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(query_id as u64 + 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of localizing one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query_id: u32,
    pub registered: bool,
    pub unique_matches: usize,
    pub multi_matches: usize,
    pub inliers_unique: u32,
    pub inliers_multi: u32,
    pub iterations: u32,
    pub samples_dropped: u32,
    pub multi_evaluations: u64,
    /// Errors versus ground truth, present only for registered queries with
    /// a recorded ground-truth pose.
    pub pos_error_m: Option<f64>,
    pub rot_error_deg: Option<f64>,
    #[serde(skip)]
    pub query_ms: f64,
    #[serde(skip)]
    pub ransac_ms: f64,
}

/// Aggregates recomputable from the per-query records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub n_queries: usize,
    pub registered: usize,
    pub registration_rate_percent: f64,
    pub median_pos_error_m: Option<f64>,
    pub median_rot_error_deg: Option<f64>,
}

/// Compression-stage metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionStats {
    pub scene_bytes: u64,
    pub budget_bytes: u64,
    pub model_bytes: u64,
    pub rate_percent: f64,
    pub full_points: usize,
    pub compressed_points: usize,
    /// Mean model-content bytes of one full point (position + descriptor +
    /// camera list).
    pub mean_full_point_bytes: f64,
    pub compressed_point_bytes: u64,
    /// Achieved full:compressed content-size ratio for this model.
    pub full_to_compressed_ratio: f64,
    #[serde(skip)]
    pub vocab_ms: f64,
    #[serde(skip)]
    pub compress_ms: f64,
}

/// Full evaluation report. Wall-clock figures are kept out of the JSON
/// serialization so reports are byte-identical across reruns; the markdown
/// rendering includes them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub config: PipelineConfig,
    pub vocab_trained_on_the_fly: bool,
    pub compression: CompressionStats,
    pub queries: Vec<QueryRecord>,
    pub aggregates: Aggregates,
}

/// Lower-median: for an even count the lower of the two middle elements.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

fn compute_aggregates(queries: &[QueryRecord]) -> Aggregates {
    let registered = queries.iter().filter(|q| q.registered).count();
    let pos: Vec<f64> = queries.iter().filter_map(|q| q.pos_error_m).collect();
    let rot: Vec<f64> = queries.iter().filter_map(|q| q.rot_error_deg).collect();
    Aggregates {
        n_queries: queries.len(),
        registered,
        registration_rate_percent: if queries.is_empty() {
            0.0
        } else {
            registered as f64 / queries.len() as f64 * 100.0
        },
        median_pos_error_m: median_lower(&pos),
        median_rot_error_deg: median_lower(&rot),
    }
}

impl EvaluationReport {
    /// Recompute the aggregates from the per-query records and compare.
    pub fn is_self_consistent(&self) -> bool {
        compute_aggregates(&self.queries) == self.aggregates
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("# Evaluation report\n\n");
        md.push_str(&format!(
            "- scene: {} bytes; model: {} bytes ({:.3}% of scene, budget {} bytes)\n",
            self.compression.scene_bytes,
            self.compression.model_bytes,
            self.compression.rate_percent,
            self.compression.budget_bytes,
        ));
        md.push_str(&format!(
            "- full points: {}; compressed points: {}; content ratio {:.2}:1\n",
            self.compression.full_points,
            self.compression.compressed_points,
            self.compression.full_to_compressed_ratio,
        ));
        md.push_str(&format!(
            "- vocabulary: k={} seed={} (trained on the fly: {})\n",
            self.config.vocab_k, self.config.vocab_seed, self.vocab_trained_on_the_fly
        ));
        md.push_str(&format!(
            "- timings: vocab {:.1} ms, compression {:.1} ms\n\n",
            self.compression.vocab_ms, self.compression.compress_ms
        ));

        let query_ms: Vec<f64> = self.queries.iter().map(|q| q.query_ms).collect();
        let ransac_ms: Vec<f64> = self.queries.iter().map(|q| q.ransac_ms).collect();
        md.push_str(
            "| Median query (ms) | Median RANSAC (ms) | % reg. images | Median pos. (m) | Median rot. (deg) |\n",
        );
        md.push_str("|---|---|---|---|---|\n");
        md.push_str(&format!(
            "| {} | {} | {:.1}% | {} | {} |\n\n",
            median_lower(&query_ms).map_or("-".into(), |v| format!("{v:.2}")),
            median_lower(&ransac_ms).map_or("-".into(), |v| format!("{v:.2}")),
            self.aggregates.registration_rate_percent,
            self.aggregates
                .median_pos_error_m
                .map_or("-".into(), |v| format!("{v:.4}")),
            self.aggregates
                .median_rot_error_deg
                .map_or("-".into(), |v| format!("{v:.4}")),
        ));

        md.push_str("| query | registered | U | W | inliers (U+W) | iters | pos err (m) | rot err (deg) |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for q in &self.queries {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {}+{} | {} | {} | {} |\n",
                q.query_id,
                if q.registered { "yes" } else { "no" },
                q.unique_matches,
                q.multi_matches,
                q.inliers_unique,
                q.inliers_multi,
                q.iterations,
                q.pos_error_m.map_or("-".into(), |v| format!("{v:.4}")),
                q.rot_error_deg.map_or("-".into(), |v| format!("{v:.4}")),
            ));
        }
        md
    }
}

/// Cross-check that a vocabulary is the one a model was built with.
pub fn check_model_vocab(model: &HybridModel, vocab: &Vocabulary) -> Result<(), PipelineError> {
    if model.vocab_k() != vocab.k() {
        return Err(PipelineError::Config(format!(
            "model was built with k={}, vocabulary has k={}",
            model.vocab_k(),
            vocab.k()
        )));
    }
    if model.provenance().vocab_hash != vocab.content_hash() {
        return Err(PipelineError::Config(
            "vocabulary content hash does not match the model provenance".into(),
        ));
    }
    Ok(())
}

/// Localize every query against a model. Queries run in a worker pool with
/// per-query seeds derived from the global seed, so the output is
/// deterministic and ordered by query id.
pub fn localize_queries(
    model: &HybridModel,
    vocab: &Vocabulary,
    queries: &[QueryImage],
    config: &PipelineConfig,
) -> Vec<QueryRecord> {
    let mut records: Vec<QueryRecord> = queries
        .par_iter()
        .map(|query| {
            let started = Instant::now();
            let mut matches = match_query(query, model, vocab, config.ratio, config.multi_cap);
            if !config.use_multi {
                matches.multi.clear();
            }
            let corrs = CorrSet::from_matches(&matches, model);
            let ransac_started = Instant::now();
            let result = run_ransac(
                &corrs,
                &query.intrinsics,
                &config.ransac,
                derive_query_seed(config.seed, query.id),
            );
            let ransac_ms = ransac_started.elapsed().as_secs_f64() * 1e3;

            let (pos_error_m, rot_error_deg) = match (&result.pose, &query.ground_truth) {
                (Some(pose), Some(gt)) if result.registered => {
                    let (pos, rot) = pose_error(pose, gt);
                    (Some(pos), Some(rot))
                }
                _ => (None, None),
            };
            QueryRecord {
                query_id: query.id,
                registered: result.registered,
                unique_matches: matches.unique.len(),
                multi_matches: matches.multi.len(),
                inliers_unique: result.inliers.unique,
                inliers_multi: result.inliers.multi,
                iterations: result.iterations,
                samples_dropped: result.samples_dropped,
                multi_evaluations: result.multi_evaluations,
                pos_error_m,
                rot_error_deg,
                query_ms: started.elapsed().as_secs_f64() * 1e3,
                ransac_ms,
            }
        })
        .collect();
    records.sort_by_key(|r| r.query_id);
    records
}

/// Match-stage diagnostics retained for debugging dumps.
pub fn match_dump(
    model: &HybridModel,
    vocab: &Vocabulary,
    queries: &[QueryImage],
    config: &PipelineConfig,
) -> Vec<(u32, MatchSet)> {
    queries
        .iter()
        .map(|q| {
            (
                q.id,
                match_query(q, model, vocab, config.ratio, config.multi_cap),
            )
        })
        .collect()
}

fn compression_stats(
    scene: &SceneModel,
    model: &HybridModel,
    budget_bytes: u64,
    vocab_ms: f64,
    compress_ms: f64,
) -> CompressionStats {
    let scene_bytes = binary_scene_size(scene);
    let model_bytes = model.serialized_size();
    let full_points = model.full_points().len();
    let content_full: u64 = model
        .full_points()
        .iter()
        .map(|p| bytes_per_full_point(p.cameras.len()))
        .sum();
    let mean_full = if full_points > 0 {
        content_full as f64 / full_points as f64
    } else {
        0.0
    };
    CompressionStats {
        scene_bytes,
        budget_bytes,
        model_bytes,
        rate_percent: model_bytes as f64 / scene_bytes as f64 * 100.0,
        full_points,
        compressed_points: model.compressed_points().len(),
        mean_full_point_bytes: mean_full,
        compressed_point_bytes: bytes_per_compressed_point(),
        full_to_compressed_ratio: mean_full / bytes_per_compressed_point() as f64,
        vocab_ms,
        compress_ms,
    }
}

/// Run vocabulary training, compression, and localization end to end.
pub fn run_pipeline(
    scene: &SceneModel,
    queries: &[QueryImage],
    config: &PipelineConfig,
) -> Result<EvaluationReport, PipelineError> {
    run_pipeline_with_vocab(scene, queries, None, config)
}

/// Pipeline entry point that accepts a pre-trained vocabulary; when `None`,
/// one is trained on the scene's own descriptors and the report says so.
pub fn run_pipeline_with_vocab(
    scene: &SceneModel,
    queries: &[QueryImage],
    vocab: Option<&Vocabulary>,
    config: &PipelineConfig,
) -> Result<EvaluationReport, PipelineError> {
    config.validate()?;

    let trained_on_the_fly = vocab.is_none();
    let vocab_started = Instant::now();
    let owned_vocab;
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let descriptors: Vec<crate::descriptor::Descriptor> = scene
                .points()
                .iter()
                .map(|p| p.mean_descriptor.clone())
                .collect();
            owned_vocab = train_vocabulary(&descriptors, config.vocab_k, config.vocab_seed)?;
            &owned_vocab
        }
    };
    let vocab_ms = vocab_started.elapsed().as_secs_f64() * 1e3;

    let mut cover = config.cover.clone();
    cover.budget_bytes = config.resolve_budget(scene);
    let compress_started = Instant::now();
    let model = compress(scene, vocab, &cover)?;
    let compress_ms = compress_started.elapsed().as_secs_f64() * 1e3;

    let mut echo = config.clone();
    echo.cover = cover.clone();
    let queries_out = localize_queries(&model, vocab, queries, config);
    let aggregates = compute_aggregates(&queries_out);

    let report = EvaluationReport {
        config: echo,
        vocab_trained_on_the_fly: trained_on_the_fly,
        compression: compression_stats(scene, &model, cover.budget_bytes, vocab_ms, compress_ms),
        queries: queries_out,
        aggregates,
    };
    debug_assert!(report.is_self_consistent());
    Ok(report)
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// Which toggles an ablation sweep flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub grid_enabled: bool,
    pub multi_match_enabled: bool,
    /// Cells per image the row ran with (q = grid^2).
    pub cells_per_image: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationEntry {
    pub row: AblationRow,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationEntry>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("# Ablation\n\n");
        md.push_str("| Grid | MR | Median query (ms) | Median RANSAC (ms) | % reg. images | Median pos. (m) | Median rot. (deg) |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for entry in &self.rows {
            let r = &entry.report;
            let query_ms: Vec<f64> = r.queries.iter().map(|q| q.query_ms).collect();
            let ransac_ms: Vec<f64> = r.queries.iter().map(|q| q.ransac_ms).collect();
            md.push_str(&format!(
                "| {} | {} | {} | {} | {:.1}% | {} | {} |\n",
                if entry.row.grid_enabled { "x" } else { " " },
                if entry.row.multi_match_enabled { "x" } else { " " },
                median_lower(&query_ms).map_or("-".into(), |v| format!("{v:.2}")),
                median_lower(&ransac_ms).map_or("-".into(), |v| format!("{v:.2}")),
                r.aggregates.registration_rate_percent,
                r.aggregates
                    .median_pos_error_m
                    .map_or("-".into(), |v| format!("{v:.4}")),
                r.aggregates
                    .median_rot_error_deg
                    .map_or("-".into(), |v| format!("{v:.4}")),
            ));
        }
        md
    }
}

/// Run the four-variant ablation: grid on/off times multi-match RANSAC
/// on/off, all on identical scene, queries, and seeds. The vocabulary is
/// shared; each grid setting compresses once and is localized with and
/// without multi-matches.
pub fn run_ablation(
    scene: &SceneModel,
    queries: &[QueryImage],
    config: &PipelineConfig,
) -> Result<AblationReport, PipelineError> {
    run_ablation_with_vocab(scene, queries, None, config)
}

/// Ablation entry point that accepts a pre-trained vocabulary.
pub fn run_ablation_with_vocab(
    scene: &SceneModel,
    queries: &[QueryImage],
    vocab: Option<&Vocabulary>,
    config: &PipelineConfig,
) -> Result<AblationReport, PipelineError> {
    config.validate()?;
    let grid_on = config.cover.grid.max(2);

    let vocab_started = Instant::now();
    let owned_vocab;
    let trained_on_the_fly = vocab.is_none();
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let descriptors: Vec<crate::descriptor::Descriptor> = scene
                .points()
                .iter()
                .map(|p| p.mean_descriptor.clone())
                .collect();
            owned_vocab = train_vocabulary(&descriptors, config.vocab_k, config.vocab_seed)?;
            &owned_vocab
        }
    };
    let vocab_ms = vocab_started.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(4);
    for (grid_enabled, multi_enabled) in
        [(false, false), (true, false), (false, true), (true, true)]
    {
        let mut variant = config.clone();
        variant.cover.grid = if grid_enabled { grid_on } else { 1 };
        variant.use_multi = multi_enabled;
        let mut cover = variant.cover.clone();
        cover.budget_bytes = variant.resolve_budget(scene);

        let compress_started = Instant::now();
        let model = compress(scene, vocab, &cover)?;
        let compress_ms = compress_started.elapsed().as_secs_f64() * 1e3;

        let queries_out = localize_queries(&model, vocab, queries, &variant);
        let aggregates = compute_aggregates(&queries_out);
        let mut echo = variant.clone();
        echo.cover = cover.clone();
        rows.push(AblationEntry {
            row: AblationRow {
                grid_enabled,
                multi_match_enabled: multi_enabled,
                cells_per_image: cover.cells_per_image(),
            },
            report: EvaluationReport {
                config: echo,
                vocab_trained_on_the_fly: trained_on_the_fly,
                compression: compression_stats(
                    scene,
                    &model,
                    cover.budget_bytes,
                    vocab_ms,
                    compress_ms,
                ),
                queries: queries_out,
                aggregates,
            },
        });
    }
    Ok(AblationReport { rows })
}

// ---------------------------------------------------------------------------
// Hybrid vs full-only comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub hybrid: EvaluationReport,
    pub full_only: EvaluationReport,
    /// Hybrid registration rate minus full-only rate, percentage points.
    pub delta_registration_pp: f64,
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("# Hybrid vs full-only at the same byte budget\n\n");
        md.push_str("| variant | model bytes | full pts | compressed pts | % reg | Median pos (m) |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        for (name, r) in [("hybrid", &self.hybrid), ("full-only", &self.full_only)] {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {:.1}% | {} |\n",
                name,
                r.compression.model_bytes,
                r.compression.full_points,
                r.compression.compressed_points,
                r.aggregates.registration_rate_percent,
                r.aggregates
                    .median_pos_error_m
                    .map_or("-".into(), |v| format!("{v:.4}")),
            ));
        }
        md.push_str(&format!(
            "\nregistration delta (hybrid - full-only): {:+.1} pp\n",
            self.delta_registration_pp
        ));
        md
    }
}

/// Run the hybrid split against a full-points-only baseline at the same byte
/// budget, with identical seeds.
pub fn compare_baseline(
    scene: &SceneModel,
    queries: &[QueryImage],
    config: &PipelineConfig,
    baseline_full_fraction: f64,
) -> Result<CompareReport, PipelineError> {
    let hybrid = run_pipeline(scene, queries, config)?;
    let mut baseline_cfg = config.clone();
    baseline_cfg.cover.full_fraction = baseline_full_fraction;
    let full_only = run_pipeline(scene, queries, &baseline_cfg)?;
    let delta = hybrid.aggregates.registration_rate_percent
        - full_only.aggregates.registration_rate_percent;
    Ok(CompareReport {
        hybrid,
        full_only,
        delta_registration_pp: delta,
    })
}
