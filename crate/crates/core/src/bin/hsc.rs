//! Command-line front end: synthesize scenes, train vocabularies, compress,
//! localize, and run the evaluation/ablation/comparison harness.
//!
//! Set `RUST_LOG=info` (or `debug`) for progress logging; every scientific
//! parameter is a flag, never an environment variable.

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsc::compress::CoverConfig;
use hsc::harness::{
    check_model_vocab, compare_baseline, localize_queries, match_dump, run_ablation,
    run_pipeline_with_vocab, Aggregates, EvaluationReport, PipelineConfig,
};
use hsc::hybrid::HybridModel;
use hsc::ransac::RansacConfig;
use hsc::scene_io::{
    binary_scene_size, load_scene, save_queries, save_scene, SceneFormat,
};
use hsc::synth::{generate_synthetic_scene, SynthSpec};
use hsc::vocab::{train_vocabulary, Vocabulary};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hsc", version, about = "Hybrid scene compression and localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Auto,
    Binary,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene plus held-out query images.
    Synth(SynthArgs),
    /// Train a visual vocabulary on a scene's point descriptors.
    VocabTrain(VocabArgs),
    /// Compress a scene into a hybrid model under a byte budget.
    Compress(CompressArgs),
    /// Localize query images against a compressed model.
    Localize(LocalizeArgs),
    /// Full pipeline: vocabulary, compression, localization, report.
    Evaluate(EvaluateArgs),
    /// Four-variant ablation: grid on/off x multi-match RANSAC on/off.
    Ablate(EvaluateArgs),
    /// Hybrid split vs full-points-only baseline at the same budget.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    #[arg(long, default_value_t = 50)]
    cameras: usize,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_px: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    clusters: usize,
    #[arg(long, default_value_t = 360)]
    features_per_query: usize,
    /// Output path for the scene.
    #[arg(long)]
    out_scene: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
    scene_format: FormatArg,
    /// Output path for the query set (JSON).
    #[arg(long)]
    out_queries: PathBuf,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    scene_format: FormatArg,
    #[arg(long, default_value_t = 6000)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct CompressFlags {
    /// Budget as a percentage of the binary scene size.
    #[arg(long, conflicts_with = "budget_bytes")]
    rate: Option<f64>,
    /// Budget as an absolute byte count.
    #[arg(long)]
    budget_bytes: Option<u64>,
    #[arg(long, default_value_t = 0.75)]
    full_fraction: f64,
    /// Image grid dimension g (q = g*g cells per image).
    #[arg(long, default_value_t = 2)]
    grid: u32,
    /// Cover target K per image.
    #[arg(long, default_value_t = 100)]
    cover_k: u32,
    /// Maximum rewarded points per visual word.
    #[arg(long, default_value_t = 10)]
    beta: u32,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    scene_format: FormatArg,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    flags: CompressFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RansacFlags {
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    #[arg(long, default_value_t = 5)]
    multi_cap: usize,
    /// Disable multi-match evaluation (unique matches only).
    #[arg(long, default_value_t = false)]
    no_multi: bool,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: u32,
    #[arg(long, default_value_t = 10)]
    sample_trials: u32,
    #[arg(long, default_value_t = 12)]
    min_inliers: u32,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    ransac: RansacFlags,
    /// Write the per-query match sets as JSON for debugging.
    #[arg(long)]
    dump_matches: Option<PathBuf>,
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[arg(long)]
    report_md: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    scene_format: FormatArg,
    #[arg(long)]
    queries: PathBuf,
    /// Pre-trained vocabulary; trained on the fly when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    vocab_seed: u64,
    #[command(flatten)]
    compress: CompressFlags,
    #[command(flatten)]
    ransac: RansacFlags,
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[arg(long)]
    report_md: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    evaluate: EvaluateArgs,
    /// Full fraction of the baseline configuration.
    #[arg(long, default_value_t = 1.0)]
    baseline_full_fraction: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn load_scene_arg(path: &Path, format: FormatArg) -> Result<hsc::SceneModel, String> {
    let format = match format {
        FormatArg::Binary => SceneFormat::Binary,
        FormatArg::Json => SceneFormat::Json,
        FormatArg::Auto => SceneFormat::detect(path).map_err(|e| format!("scene stage: {e}"))?,
    };
    load_scene(path, format).map_err(|e| format!("scene stage: {e}"))
}

fn load_queries_arg(path: &Path) -> Result<Vec<hsc::QueryImage>, String> {
    hsc::scene_io::load_queries(path).map_err(|e| format!("query stage: {e}"))
}

fn write_text(path: &Path, text: &str, what: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{what}: cannot write {path:?}: {e}"))
}

fn cover_from_flags(flags: &CompressFlags) -> CoverConfig {
    CoverConfig {
        cover_k: flags.cover_k,
        grid: flags.grid,
        beta: flags.beta,
        budget_bytes: flags.budget_bytes.unwrap_or(0),
        full_fraction: flags.full_fraction,
    }
}

fn ransac_from_flags(flags: &RansacFlags) -> RansacConfig {
    RansacConfig {
        sample_size: 3,
        max_sample_trials: flags.sample_trials,
        max_iterations: flags.max_iters,
        sigma_px: flags.sigma,
        min_inliers: flags.min_inliers,
        confidence: flags.confidence,
    }
}

fn pipeline_config(args: &EvaluateArgs) -> PipelineConfig {
    PipelineConfig {
        vocab_k: args.k,
        vocab_seed: args.vocab_seed,
        cover: cover_from_flags(&args.compress),
        rate_percent: args.compress.rate,
        ratio: args.ransac.ratio,
        multi_cap: args.ransac.multi_cap,
        ransac: ransac_from_flags(&args.ransac),
        use_multi: !args.ransac.no_multi,
        seed: args.ransac.seed,
    }
}

fn print_summary(aggregates: &Aggregates) {
    println!(
        "registered {}/{} ({:.1}%), median pos {} m, median rot {} deg",
        aggregates.registered,
        aggregates.n_queries,
        aggregates.registration_rate_percent,
        aggregates
            .median_pos_error_m
            .map_or("-".into(), |v| format!("{v:.6}")),
        aggregates
            .median_rot_error_deg
            .map_or("-".into(), |v| format!("{v:.6}")),
    );
}

fn emit_report(
    report: &EvaluationReport,
    json: Option<&PathBuf>,
    md: Option<&PathBuf>,
) -> Result<(), String> {
    if let Some(path) = json {
        write_text(path, &report.to_json(), "report stage")?;
    }
    if let Some(path) = md {
        write_text(path, &report.to_markdown(), "report stage")?;
    }
    print_summary(&report.aggregates);
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Synth(args) => {
            let spec = SynthSpec {
                n_points: args.points,
                n_cameras: args.cameras,
                n_queries: args.queries,
                noise_px: args.noise_px,
                seed: args.seed,
                descriptor_clusters: args.clusters,
                features_per_query: args.features_per_query,
                ..SynthSpec::default()
            };
            let (scene, queries) =
                generate_synthetic_scene(&spec).map_err(|e| format!("synth stage: {e}"))?;
            let format = match args.scene_format {
                FormatArg::Json => SceneFormat::Json,
                _ => SceneFormat::Binary,
            };
            let bytes = save_scene(&scene, &args.out_scene, format)
                .map_err(|e| format!("scene stage: {e}"))?;
            save_queries(&queries, &args.out_queries)
                .map_err(|e| format!("query stage: {e}"))?;
            println!(
                "scene: {} cameras, {} points, {} bytes; {} queries",
                scene.cameras().len(),
                scene.points().len(),
                bytes,
                queries.len()
            );
            Ok(())
        }

        Command::VocabTrain(args) => {
            let scene = load_scene_arg(&args.scene, args.scene_format)?;
            let descriptors: Vec<hsc::Descriptor> = scene
                .points()
                .iter()
                .map(|p| p.mean_descriptor.clone())
                .collect();
            let vocab = train_vocabulary(&descriptors, args.k, args.seed)
                .map_err(|e| format!("vocab stage: {e}"))?;
            let bytes = vocab
                .save(&args.out)
                .map_err(|e| format!("vocab stage: {e}"))?;
            println!(
                "vocabulary: k={}, trained on {} descriptors, {} bytes",
                vocab.k(),
                vocab.trained_on,
                bytes
            );
            Ok(())
        }

        Command::Compress(args) => {
            let scene = load_scene_arg(&args.scene, args.scene_format)?;
            let vocab =
                Vocabulary::load(&args.vocab).map_err(|e| format!("vocab stage: {e}"))?;
            let mut cover = cover_from_flags(&args.flags);
            if let Some(rate) = args.flags.rate {
                cover.budget_bytes =
                    (rate / 100.0 * binary_scene_size(&scene) as f64).floor() as u64;
            } else if args.flags.budget_bytes.is_none() {
                return Err("compress stage: set either --rate or --budget-bytes".into());
            }
            let model = hsc::compress_scene(&scene, &vocab, &cover)
                .map_err(|e| format!("compress stage: {e}"))?;
            let bytes = model.save(&args.out).map_err(|e| format!("model stage: {e}"))?;
            println!(
                "model: {} full + {} compressed points, {} bytes (budget {}, {:.3}% of scene)",
                model.full_points().len(),
                model.compressed_points().len(),
                bytes,
                cover.budget_bytes,
                bytes as f64 / binary_scene_size(&scene) as f64 * 100.0,
            );
            Ok(())
        }

        Command::Localize(args) => {
            let model =
                HybridModel::load(&args.model).map_err(|e| format!("model stage: {e}"))?;
            let vocab =
                Vocabulary::load(&args.vocab).map_err(|e| format!("vocab stage: {e}"))?;
            check_model_vocab(&model, &vocab).map_err(|e| e.to_string())?;
            let queries = load_queries_arg(&args.queries)?;

            let config = PipelineConfig {
                vocab_k: vocab.k(),
                vocab_seed: vocab.seed,
                cover: model.provenance().config.clone(),
                rate_percent: None,
                ratio: args.ransac.ratio,
                multi_cap: args.ransac.multi_cap,
                ransac: ransac_from_flags(&args.ransac),
                use_multi: !args.ransac.no_multi,
                seed: args.ransac.seed,
            };
            if let Some(path) = &args.dump_matches {
                let dump = match_dump(&model, &vocab, &queries, &config);
                let entries: Vec<serde_json::Value> = dump
                    .iter()
                    .map(|(id, matches)| {
                        serde_json::json!({
                            "query_id": id,
                            "unique": matches.unique,
                            "multi": matches.multi,
                        })
                    })
                    .collect();
                let text = serde_json::to_string_pretty(&entries)
                    .expect("match dump serializes");
                write_text(path, &text, "dump stage")?;
            }
            let records = localize_queries(&model, &vocab, &queries, &config);
            for r in &records {
                println!(
                    "query {}: registered={} inliers={}+{} iters={}",
                    r.query_id, r.registered, r.inliers_unique, r.inliers_multi, r.iterations
                );
            }
            if args.report_json.is_some() || args.report_md.is_some() {
                // Wrap the records in a minimal report for file emission.
                let registered = records.iter().filter(|r| r.registered).count();
                let report = serde_json::json!({
                    "config": config,
                    "queries": records,
                    "aggregates": {
                        "n_queries": records.len(),
                        "registered": registered,
                        "registration_rate_percent":
                            if records.is_empty() { 0.0 }
                            else { registered as f64 / records.len() as f64 * 100.0 },
                    },
                });
                let text = format!(
                    "{}\n",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
                if let Some(path) = &args.report_json {
                    write_text(path, &text, "report stage")?;
                }
                if let Some(path) = &args.report_md {
                    let mut md = String::from("# Localization\n\n| query | registered | inliers |\n|---|---|---|\n");
                    for r in &records {
                        md.push_str(&format!(
                            "| {} | {} | {}+{} |\n",
                            r.query_id, r.registered, r.inliers_unique, r.inliers_multi
                        ));
                    }
                    write_text(path, &md, "report stage")?;
                }
            }
            Ok(())
        }

        Command::Evaluate(args) => {
            let scene = load_scene_arg(&args.scene, args.scene_format)?;
            let queries = load_queries_arg(&args.queries)?;
            let config = pipeline_config(&args);
            let vocab = match &args.vocab {
                Some(path) => {
                    Some(Vocabulary::load(path).map_err(|e| format!("vocab stage: {e}"))?)
                }
                None => None,
            };
            let report = run_pipeline_with_vocab(&scene, &queries, vocab.as_ref(), &config)
                .map_err(|e| e.to_string())?;
            emit_report(&report, args.report_json.as_ref(), args.report_md.as_ref())
        }

        Command::Ablate(args) => {
            let scene = load_scene_arg(&args.scene, args.scene_format)?;
            let queries = load_queries_arg(&args.queries)?;
            let config = pipeline_config(&args);
            let ablation = run_ablation(&scene, &queries, &config).map_err(|e| e.to_string())?;
            if let Some(path) = &args.report_json {
                write_text(path, &ablation.to_json(), "report stage")?;
            }
            if let Some(path) = &args.report_md {
                write_text(path, &ablation.to_markdown(), "report stage")?;
            }
            for entry in &ablation.rows {
                println!(
                    "grid={} mr={}: {:.1}% registered",
                    entry.row.grid_enabled,
                    entry.row.multi_match_enabled,
                    entry.report.aggregates.registration_rate_percent
                );
            }
            Ok(())
        }

        Command::Compare(args) => {
            let scene = load_scene_arg(&args.evaluate.scene, args.evaluate.scene_format)?;
            let queries = load_queries_arg(&args.evaluate.queries)?;
            let config = pipeline_config(&args.evaluate);
            let cmp = compare_baseline(&scene, &queries, &config, args.baseline_full_fraction)
                .map_err(|e| e.to_string())?;
            if let Some(path) = &args.evaluate.report_json {
                write_text(path, &cmp.to_json(), "report stage")?;
            }
            if let Some(path) = &args.evaluate.report_md {
                write_text(path, &cmp.to_markdown(), "report stage")?;
            }
            println!(
                "hybrid {:.1}% vs full-only {:.1}% ({:+.1} pp)",
                cmp.hybrid.aggregates.registration_rate_percent,
                cmp.full_only.aggregates.registration_rate_percent,
                cmp.delta_registration_pp
            );
            Ok(())
        }
    }
}
