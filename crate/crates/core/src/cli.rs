//! Command-line surface: ingest / train / stack / hybrid / report / params.
//!
//! Exit codes: 0 ok, 2 dataset error, 3 training error, 4 report error,
//! 5 parameter-audit breach, 64 usage error.

use crate::backbones::{build_model, BackboneId, BackboneSpec};
use crate::bench::{self, DeviceProfile, RunFilter, RunKey, RunRecord, TimingRecord};
use crate::dataset::{self, DatasetManifest, SplitAssignment, SplitSpec};
use crate::gbdt::{self, GBDTParams};
use crate::metrics::{self, MetricsReport};
use crate::report::{self, TableFormat, TableSpec};
use crate::stacking;
use crate::tensor::Tensor;
use crate::train::{self, FineTuneConfig, TrainedModel};
use chrono::Utc;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAIN: i32 = 3;
pub const EXIT_REPORT: i32 = 4;
pub const EXIT_AUDIT: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

pub const MODEL_XGB: &str = "xgb-vgg16";
pub const MODEL_STACKED: &str = "stacked";

#[derive(Parser)]
#[command(name = "facebench", version, about = "Two-class face-image classification benchmark suite")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory tree root/<class_name>/*.{jpg,jpeg,png}
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate a synthetic corpus with N samples per class instead of
    /// reading from disk
    #[arg(long, value_name = "N")]
    synth: Option<usize>,
    /// Seed for synthesis, splits, initialization, and training order
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Epochs (default 30, the published setting)
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 1e-4)]
    lr: f32,
    /// Batch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// SGD momentum
    #[arg(long, default_value_t = 0.0)]
    momentum: f32,
    /// Load pretrained backbone weights (requires FACEBENCH_WEIGHTS_DIR)
    #[arg(long)]
    pretrained: bool,
    /// Device index for the run key (D_<i>)
    #[arg(long, default_value_t = 1)]
    device_index: u32,
    /// Force the accelerator off for this run
    #[arg(long)]
    no_accelerator: bool,
    /// Output directory for run records and weights
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct GbdtArgs {
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.3)]
    gbdt_lr: f64,
    /// Fine-tune the VGG16 feature extractor before extraction (default:
    /// use the extractor as built)
    #[arg(long)]
    finetune_extractor: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest a corpus (or generate a synthetic one) and print its summary
    Ingest {
        root: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        synth: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train one model or all eight, appending run records
    Train {
        /// inceptionv3|xception|densenet121|mobilenet|resnet50|vgg16|xgb-vgg16|stacked
        #[arg(long, conflicts_with = "all")]
        model: Option<String>,
        /// Train all eight models
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        gbdt: GbdtArgs,
    },
    /// Train the stacking ensemble (equivalent to train --model stacked)
    Stack {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the GBDT-on-VGG16-features hybrid (train --model xgb-vgg16)
    Hybrid {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        gbdt: GbdtArgs,
    },
    /// Render stored run records as a table, or compare accelerator runs
    Report {
        #[arg(long, default_value_t = 1)]
        device: u32,
        #[arg(long)]
        no_accelerator: bool,
        #[arg(long)]
        compare: bool,
        /// markdown | csv | json
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Audit trainable parameter counts against the published figures
    Params {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Parse and execute; returns the process exit code. Kept in-process so the
/// test suite can drive the full surface without spawning binaries.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Ingest { root, synth, seed } => cmd_ingest(root, synth, seed),
        Cmd::Train { model, all, train, gbdt } => {
            let selectors = if all {
                all_model_tokens()
            } else {
                match model {
                    Some(m) => vec![m],
                    None => {
                        eprintln!("error: provide --model <name> or --all");
                        return EXIT_USAGE;
                    }
                }
            };
            cmd_train(&selectors, &train, &gbdt)
        }
        Cmd::Stack { train } => cmd_train(&[MODEL_STACKED.to_string()], &train, &GbdtArgs::default_args()),
        Cmd::Hybrid { train, gbdt } => cmd_train(&[MODEL_XGB.to_string()], &train, &gbdt),
        Cmd::Report { device, no_accelerator, compare, format, out, out_dir } => {
            cmd_report(device, no_accelerator, compare, &format, out.as_deref(), &out_dir)
        }
        Cmd::Params { seed } => cmd_params(seed),
    }
}

impl GbdtArgs {
    fn default_args() -> Self {
        GbdtArgs { n_trees: 100, max_depth: 6, gbdt_lr: 0.3, finetune_extractor: false }
    }
}

fn all_model_tokens() -> Vec<String> {
    let mut v: Vec<String> = BackboneId::ALL.iter().map(|b| b.token().to_string()).collect();
    v.push(MODEL_XGB.to_string());
    v.push(MODEL_STACKED.to_string());
    v
}

fn load_manifest(data: &DataArgs) -> Result<DatasetManifest, i32> {
    match (&data.synth, &data.data) {
        (Some(n), _) => Ok(dataset::synth_dataset(*n, data.seed)),
        (None, Some(root)) => dataset::ingest_directory(root).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_DATA
        }),
        (None, None) => {
            eprintln!("error: provide --data <root> or --synth <N>");
            Err(EXIT_USAGE)
        }
    }
}

fn cmd_ingest(root: Option<PathBuf>, synth: Option<usize>, seed: u64) -> i32 {
    let data = DataArgs { data: root, synth, seed };
    let manifest = match load_manifest(&data) {
        Ok(m) => m,
        Err(code) => return code,
    };
    println!("total: {}", manifest.total);
    for (label, count) in &manifest.class_counts {
        println!("class {}: {}", label.name(), count);
    }
    if manifest.skipped > 0 {
        println!("skipped (unreadable): {}", manifest.skipped);
    }
    println!("content_hash: {}", manifest.content_hash);
    EXIT_OK
}

/// Everything that determines a run's outcome, hashed into config_hash.
#[derive(Serialize)]
struct RunConfig<'a> {
    model: &'a str,
    data_source: String,
    manifest_hash: &'a str,
    split: SplitSpec,
    fine_tune: FineTuneConfig,
    gbdt: Option<GBDTParams>,
    finetune_extractor: bool,
    pretrained: bool,
    device_index: u32,
    accelerator: bool,
    threshold: f64,
    normalization: &'a str,
}

fn config_hash(config: &RunConfig) -> String {
    // serde_json maps are key-sorted, so the hash is stable across field
    // declaration order.
    let value = serde_json::to_value(config).expect("config serializes");
    let canonical = canonicalize(value);
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(&canonical).unwrap().as_bytes());
    crate::dataset::hex(&hasher.finalize())
}

fn canonicalize(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: serde_json::Map<String, serde_json::Value> =
                map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            serde_json::Value::Object(sorted)
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.into_iter().map(canonicalize).collect())
        }
        other => other,
    }
}

struct RunContext {
    manifest: DatasetManifest,
    device: DeviceProfile,
    run_key: RunKey,
    out_dir: PathBuf,
    data_source: String,
}

fn make_context(train_args: &TrainArgs) -> Result<RunContext, i32> {
    if train_args.no_accelerator {
        // Consumed before any compute-backend decisions.
        std::env::set_var(bench::NO_ACCEL_ENV, "1");
    }
    let manifest = load_manifest(&train_args.data)?;
    let device = bench::detect_device(train_args.device_index);
    let run_key = RunKey {
        device_index: train_args.device_index,
        accelerator_enabled: device.accelerator_enabled,
    };
    let data_source = match (&train_args.data.synth, &train_args.data.data) {
        (Some(n), _) => format!("synth:{n}:{}", train_args.data.seed),
        (None, Some(root)) => root.display().to_string(),
        _ => unreachable!("load_manifest validated the source"),
    };
    Ok(RunContext {
        manifest,
        device,
        run_key,
        out_dir: train_args.out_dir.clone(),
        data_source,
    })
}

fn fine_tune_config(args: &TrainArgs) -> FineTuneConfig {
    FineTuneConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        momentum: args.momentum,
        seed: args.data.seed,
        trainable_base: true,
    }
}

fn cmd_train(selectors: &[String], train_args: &TrainArgs, gbdt_args: &GbdtArgs) -> i32 {
    for token in selectors {
        let known = BackboneId::from_token(token).is_some()
            || token == MODEL_XGB
            || token == MODEL_STACKED;
        if !known {
            eprintln!("error: unknown model '{token}'");
            return EXIT_USAGE;
        }
    }
    let ctx = match make_context(train_args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let config = fine_tune_config(train_args);
    for token in selectors {
        let outcome = if let Some(id) = BackboneId::from_token(token) {
            run_backbone(id, &ctx, train_args, &config)
        } else if token == MODEL_XGB {
            run_hybrid(&ctx, train_args, gbdt_args, &config)
        } else {
            run_stacked(&ctx, train_args, &config)
        };
        match outcome {
            Ok(record) => {
                if let Err(e) = bench::append_run(&ctx.out_dir.join("records.jsonl"), &record) {
                    eprintln!("error: {e}");
                    return EXIT_REPORT;
                }
                print_row(&record);
            }
            Err((record, code, message)) => {
                eprintln!("error: {message}");
                if let Some(record) = record {
                    let _ = bench::append_run(&ctx.out_dir.join("records.jsonl"), &record);
                }
                return code;
            }
        }
    }
    EXIT_OK
}

fn print_row(record: &RunRecord) {
    let time = bench::format_duration(record.timing.wall_seconds)
        .unwrap_or_else(|_| format!("{:.1}s", record.timing.wall_seconds));
    println!(
        "{} [{}] acc {:.2} prec {:.2} rec {:.2} f1 {:.2} time {} ({})",
        record.model_name,
        record.run_key,
        record.metrics.accuracy,
        record.metrics.precision,
        record.metrics.recall,
        record.metrics.f1,
        time,
        record.status,
    );
}

type RunOutcome = Result<RunRecord, (Option<RunRecord>, i32, String)>;

fn failed_metrics() -> MetricsReport {
    MetricsReport {
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        zero_division_flags: BTreeSet::new(),
    }
}

fn zero_timing() -> TimingRecord {
    let now = Utc::now();
    TimingRecord {
        wall_seconds: 0.0,
        clock_source: "monotonic".into(),
        started_at: now,
        ended_at: now,
    }
}

fn make_record(
    ctx: &RunContext,
    model_name: &str,
    hash: String,
    metrics: MetricsReport,
    timing: TimingRecord,
    status: String,
) -> RunRecord {
    let created_at = Utc::now();
    RunRecord {
        run_id: format!(
            "{}-{}-{}",
            model_name.to_lowercase().replace(' ', "-"),
            created_at.format("%Y%m%dT%H%M%S%.3f"),
            &hash[..8]
        ),
        model_name: model_name.to_string(),
        run_key: ctx.run_key,
        device: ctx.device.clone(),
        metrics,
        timing,
        config_hash: hash,
        created_at,
        status,
    }
}

fn test_metrics(
    model: &TrainedModel,
    ctx: &RunContext,
    assignment: &SplitAssignment,
) -> Result<MetricsReport, String> {
    let test = dataset::load_pixels(&ctx.manifest, &assignment.test_ids).map_err(|e| e.to_string())?;
    let pixels: Vec<Tensor> = test.iter().map(|(_, _, px)| px.clone()).collect();
    let labels: Vec<f32> = test.iter().map(|(_, l, _)| l.as_f32()).collect();
    let probs = train::predict_proba(&model.model, &pixels);
    let counts = metrics::confusion(&probs, &labels, 0.5).map_err(|e| e.to_string())?;
    metrics::compute_metrics(&counts).map_err(|e| e.to_string())
}

fn run_backbone(id: BackboneId, ctx: &RunContext, args: &TrainArgs, config: &FineTuneConfig) -> RunOutcome {
    let spec = SplitSpec::standard(config.seed);
    let assignment = match dataset::split(&ctx.manifest, &spec) {
        Ok(a) => a,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let run_config = RunConfig {
        model: id.token(),
        data_source: ctx.data_source.clone(),
        manifest_hash: &ctx.manifest.content_hash,
        split: spec,
        fine_tune: *config,
        gbdt: None,
        finetune_extractor: false,
        pretrained: args.pretrained,
        device_index: args.device_index,
        accelerator: ctx.run_key.accelerator_enabled,
        threshold: 0.5,
        normalization: "scale-1/255",
    };
    let hash = config_hash(&run_config);

    let model = match build_model(&BackboneSpec::new(id), args.pretrained, config.seed) {
        Ok(m) => m,
        Err(e) => return Err((None, EXIT_TRAIN, e.to_string())),
    };
    let weights = ctx
        .out_dir
        .join(format!("{}-{}", id.token(), &hash[..8]))
        .join("weights")
        .join(format!("{}.fwt", id.token()));
    let trained = match train::train(model, &ctx.manifest, &assignment, config, Some(&weights)) {
        Ok(t) => t,
        Err(e) => {
            let record = make_record(
                ctx,
                id.display_name(),
                hash,
                failed_metrics(),
                zero_timing(),
                format!("failed: {e}"),
            );
            return Err((Some(record), EXIT_TRAIN, e.to_string()));
        }
    };
    let metrics = match test_metrics(&trained, ctx, &assignment) {
        Ok(m) => m,
        Err(e) => return Err((None, EXIT_TRAIN, e)),
    };
    Ok(make_record(ctx, id.display_name(), hash, metrics, trained.timing.clone(), "ok".into()))
}

fn run_hybrid(ctx: &RunContext, args: &TrainArgs, gbdt_args: &GbdtArgs, config: &FineTuneConfig) -> RunOutcome {
    let spec = SplitSpec::standard(config.seed);
    let assignment = match dataset::split(&ctx.manifest, &spec) {
        Ok(a) => a,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let params = GBDTParams {
        n_trees: gbdt_args.n_trees,
        max_depth: gbdt_args.max_depth,
        learning_rate: gbdt_args.gbdt_lr,
        seed: config.seed,
    };
    let run_config = RunConfig {
        model: MODEL_XGB,
        data_source: ctx.data_source.clone(),
        manifest_hash: &ctx.manifest.content_hash,
        split: spec,
        fine_tune: *config,
        gbdt: Some(params),
        finetune_extractor: gbdt_args.finetune_extractor,
        pretrained: args.pretrained,
        device_index: args.device_index,
        accelerator: ctx.run_key.accelerator_enabled,
        threshold: 0.5,
        normalization: "scale-1/255",
    };
    let hash = config_hash(&run_config);
    let fail = |e: String| {
        let record = make_record(
            ctx,
            "XGBOOST-VGG16",
            hash.clone(),
            failed_metrics(),
            zero_timing(),
            format!("failed: {e}"),
        );
        (Some(record), EXIT_TRAIN, e)
    };

    let vgg_spec = BackboneSpec::new(BackboneId::Vgg16);
    let model = match build_model(&vgg_spec, args.pretrained, config.seed) {
        Ok(m) => m,
        Err(e) => return Err((None, EXIT_TRAIN, e.to_string())),
    };

    // Timed span: optional extractor fine-tune + train-split feature
    // extraction + GBDT fit.
    let mut extractor_timing: Option<TimingRecord> = None;
    let model = if gbdt_args.finetune_extractor {
        match train::train(model, &ctx.manifest, &assignment, config, None) {
            Ok(t) => {
                extractor_timing = Some(t.timing.clone());
                t.model
            }
            Err(e) => return Err(fail(e.to_string())),
        }
    } else {
        model
    };

    let train_set = match dataset::load_pixels(&ctx.manifest, &assignment.train_ids) {
        Ok(s) => s,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let train_px: Vec<Tensor> = train_set.iter().map(|(_, _, px)| px.clone()).collect();
    let train_ids: Vec<String> = train_set.iter().map(|(id, _, _)| id.clone()).collect();
    let train_labels: Vec<f32> = train_set.iter().map(|(_, l, _)| l.as_f32()).collect();

    let (fit_result, fit_timing) = bench::time_run(|| {
        let features = gbdt::extract_features(&model, &train_px, &train_ids);
        gbdt::fit_gbdt(&features, &train_labels, &params)
    });
    let gbdt_model = match fit_result {
        Ok(m) => m,
        Err(e) => return Err(fail(e.to_string())),
    };
    let timing = merge_timings(extractor_timing, fit_timing);

    // Evaluation (outside the timed span): test-split features -> metrics.
    let test_set = match dataset::load_pixels(&ctx.manifest, &assignment.test_ids) {
        Ok(s) => s,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let test_px: Vec<Tensor> = test_set.iter().map(|(_, _, px)| px.clone()).collect();
    let test_ids: Vec<String> = test_set.iter().map(|(id, _, _)| id.clone()).collect();
    let test_labels: Vec<f32> = test_set.iter().map(|(_, l, _)| l.as_f32()).collect();
    let test_features = gbdt::extract_features(&model, &test_px, &test_ids);
    let (probs, _) = match gbdt::predict_gbdt(&gbdt_model, &test_features) {
        Ok(p) => p,
        Err(e) => return Err(fail(e.to_string())),
    };
    let probs32: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
    let metrics = metrics::confusion(&probs32, &test_labels, 0.5)
        .and_then(|c| metrics::compute_metrics(&c));
    let metrics = match metrics {
        Ok(m) => m,
        Err(e) => return Err(fail(e.to_string())),
    };

    // Persist the GBDT model beside the run records.
    let model_dir = ctx.out_dir.join(format!("xgb-vgg16-{}", &hash[..8]));
    if std::fs::create_dir_all(&model_dir).is_ok() {
        let _ = std::fs::write(
            model_dir.join("gbdt.json"),
            serde_json::to_string_pretty(&gbdt_model).expect("model serializes"),
        );
    }

    Ok(make_record(ctx, "XGBOOST-VGG16", hash, metrics, timing, "ok".into()))
}

fn merge_timings(first: Option<TimingRecord>, second: TimingRecord) -> TimingRecord {
    match first {
        None => second,
        Some(a) => TimingRecord {
            wall_seconds: a.wall_seconds + second.wall_seconds,
            clock_source: "monotonic".into(),
            started_at: a.started_at,
            ended_at: second.ended_at,
        },
    }
}

fn run_stacked(ctx: &RunContext, args: &TrainArgs, config: &FineTuneConfig) -> RunOutcome {
    let spec = SplitSpec::stacking(config.seed);
    let assignment = match dataset::split(&ctx.manifest, &spec) {
        Ok(a) => a,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let run_config = RunConfig {
        model: MODEL_STACKED,
        data_source: ctx.data_source.clone(),
        manifest_hash: &ctx.manifest.content_hash,
        split: spec,
        fine_tune: *config,
        gbdt: None,
        finetune_extractor: false,
        pretrained: args.pretrained,
        device_index: args.device_index,
        accelerator: ctx.run_key.accelerator_enabled,
        threshold: 0.5,
        normalization: "scale-1/255",
    };
    let hash = config_hash(&run_config);
    let fail = |e: String| {
        let record = make_record(
            ctx,
            "Proposed Model",
            hash.clone(),
            failed_metrics(),
            zero_timing(),
            format!("failed: {e}"),
        );
        (Some(record), EXIT_TRAIN, e)
    };

    let stack_dir = ctx.out_dir.join(format!("stacked-{}", &hash[..8]));
    let level0 = match stacking::fit_level0(
        &ctx.manifest,
        &assignment,
        config,
        args.pretrained,
        Some(&stack_dir.join("weights")),
    ) {
        Ok(models) => models,
        Err(e) => return Err(fail(e.to_string())),
    };

    // Meta-learner fit on the validation split; its (small) cost is timed
    // and added to the summed level-0 training time.
    let val_set = match dataset::load_pixels(&ctx.manifest, &assignment.val_ids) {
        Ok(s) => s,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let val_px: Vec<Tensor> = val_set.iter().map(|(_, _, px)| px.clone()).collect();
    let val_ids: Vec<String> = val_set.iter().map(|(id, _, _)| id.clone()).collect();
    let val_labels: Vec<f32> = val_set.iter().map(|(_, l, _)| l.as_f32()).collect();
    let (meta_result, meta_timing) = bench::time_run(|| {
        let outputs = stacking::predict_level0(&level0, &val_px, &val_ids);
        stacking::fit_meta(&outputs, &val_labels, 1.0, &assignment.test_ids)
    });
    let meta = match meta_result {
        Ok(m) => m,
        Err(e) => return Err(fail(e.to_string())),
    };

    let timing = TimingRecord {
        wall_seconds: level0.iter().map(|m| m.timing.wall_seconds).sum::<f64>()
            + meta_timing.wall_seconds,
        clock_source: "monotonic".into(),
        started_at: level0
            .first()
            .map(|m| m.timing.started_at)
            .unwrap_or(meta_timing.started_at),
        ended_at: meta_timing.ended_at,
    };

    let stacked = stacking::StackedModel { level0, meta, split: assignment.clone() };
    if let Err(e) = stacking::save_stacked(&stacked, &stack_dir) {
        return Err(fail(e.to_string()));
    }

    // Test-split evaluation, outside the timed span.
    let test_set = match dataset::load_pixels(&ctx.manifest, &assignment.test_ids) {
        Ok(s) => s,
        Err(e) => return Err((None, EXIT_DATA, e.to_string())),
    };
    let test_px: Vec<Tensor> = test_set.iter().map(|(_, _, px)| px.clone()).collect();
    let test_ids: Vec<String> = test_set.iter().map(|(id, _, _)| id.clone()).collect();
    let test_labels: Vec<f32> = test_set.iter().map(|(_, l, _)| l.as_f32()).collect();
    let (probs, _) = stacking::predict_stacked(&stacked, &test_px, &test_ids);
    let probs32: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
    let metrics = metrics::confusion(&probs32, &test_labels, 0.5)
        .and_then(|c| metrics::compute_metrics(&c));
    let metrics = match metrics {
        Ok(m) => m,
        Err(e) => return Err(fail(e.to_string())),
    };

    Ok(make_record(ctx, "Proposed Model", hash, metrics, timing, "ok".into()))
}

fn cmd_report(
    device: u32,
    no_accelerator: bool,
    compare: bool,
    format: &str,
    out: Option<&Path>,
    out_dir: &Path,
) -> i32 {
    let Some(format) = TableFormat::parse(format) else {
        eprintln!("error: unknown format (expected markdown, csv, or json)");
        return EXIT_USAGE;
    };
    let store = out_dir.join("records.jsonl");
    let emit = |text: &str| -> i32 {
        match out {
            Some(path) => {
                if let Err(e) = std::fs::write(path, text) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return EXIT_REPORT;
                }
                EXIT_OK
            }
            None => {
                print!("{text}");
                EXIT_OK
            }
        }
    };

    if compare {
        let records = match bench::load_runs(&store, &RunFilter::default()) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_REPORT;
            }
        };
        return match report::render_comparison(&records) {
            Ok(text) => emit(&text),
            Err(report::ReportError::NoComparablePairs) => {
                print!("{}", report::unpaired_listing(&records));
                EXIT_REPORT
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_REPORT
            }
        };
    }

    let run_key = RunKey { device_index: device, accelerator_enabled: !no_accelerator };
    let filter = RunFilter { run_key: Some(run_key), ..Default::default() };
    let records = match bench::load_runs(&store, &filter) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_REPORT;
        }
    };
    if records.is_empty() {
        eprintln!("error: no records match run key {run_key}");
        return EXIT_REPORT;
    }
    match report::render_table(&records, &TableSpec { run_key, format }) {
        Ok(text) => emit(&text),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_REPORT
        }
    }
}

fn cmd_params(seed: u64) -> i32 {
    let rows = crate::backbones::audit_params(seed);
    println!(
        "{:<14} {:>14} {:>14} {:>10} {:>10}",
        "model", "computed", "expected", "delta", "within"
    );
    let mut ok = true;
    for row in &rows {
        println!(
            "{:<14} {:>14} {:>14} {:>10} {:>10}",
            row.id.token(),
            row.computed,
            row.expected,
            row.delta,
            if row.within_tolerance { "yes" } else { "NO" }
        );
        ok &= row.within_tolerance;
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_AUDIT
    }
}
