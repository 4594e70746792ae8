//! Command-line harness for the lab.
//!
//! Subcommands cover the whole pipeline: `gen-data` (synthetic world),
//! `split` (split protocol), `train` (joint training), `ttt` (test-time
//! adaptation and evaluation), `report` (aggregation), and `experiment`
//! (everything end to end). All outputs are deterministic given the same
//! flags; existing output files are only overwritten with `--force`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mmrlab::data::container::{load_dataset, save_dataset};
use mmrlab::data::generate::{generate_world, WorldConfig};
use mmrlab::data::geojson::parse_geojson_points;
use mmrlab::data::tile::TaskKind;
use mmrlab::error::{LabError, Result};
use mmrlab::model::{init_model, load_checkpoint, save_checkpoint, Model, ModelConfig};
use mmrlab::pipeline::{
    demo_config, evaluation_config, jt_predictions, metric_name, metric_of_map, normalize_ids,
    run_experiment, to_pretty_json, trace_lines, write_text, ExperimentConfig,
};
use mmrlab::report::{aggregate, cells_to_csv, report_to_json, Cell, Method, SplitKind};
use mmrlab::splits::polygon::Polygon;
use mmrlab::splits::protocol::{load_splits, make_splits, save_splits, SplitRatios, Subset};
use mmrlab::train::{joint_train, EpochLog, Mode, TrainConfig};
use mmrlab::ttt::{run_ttt, select_iterations, Batching, IterationSelection, TttConfig};
use mmrlab::util::derive_seed;

#[derive(Parser)]
#[command(
    name = "mmrlab",
    version,
    about = "Desk-scale laboratory for test-time training with multimodal reconstruction",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multimodal world and write it to a container
    /// file, plus a JSON manifest echoing the configuration and seed.
    GenData(GenDataArgs),
    /// Build the split protocol for a dataset: geographic held-out
    /// region, random train/validation/test partition of the rest,
    /// nested training subsets, and masked normalization statistics.
    Split(SplitArgs),
    /// Jointly train the encoder with the task and reconstruction
    /// decoders on a training subset; writes checkpoint and epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split, adapting the encoder per
    /// batch first unless the method is `jt`.
    Ttt(TttArgs),
    /// Aggregate metric cells into a CSV table and a JSON report with
    /// deltas, relative improvement, ranks, and significance tests.
    Report(ReportArgs),
    /// Run the full pipeline (generate, split, train, adapt, evaluate,
    /// report) from a preset or a config file.
    Experiment(ExperimentArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Ttt(a) => cmd_ttt(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::Experiment(a) => cmd_experiment(a),
    }
}

/// Configuration problems that come straight from command-line flags are
/// usage errors (exit 1): the fix is editing the command line, not the
/// data.
fn usage(e: LabError) -> LabError {
    match e {
        LabError::Usage(_) => e,
        other => LabError::Usage(other.to_string()),
    }
}

/// Refuse to overwrite existing outputs unless `--force` was given.
fn guard_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(LabError::Usage(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn parse_subset(s: &str) -> std::result::Result<Subset, String> {
    Subset::parse(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_split_kind(s: &str) -> std::result::Result<SplitKind, String> {
    SplitKind::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    Mode::parse(s).map_err(|e| e.to_string())
}

// ───────────────────────── gen-data ─────────────────────────

#[derive(Args)]
struct GenDataArgs {
    /// Number of tiles (ignored when --points is given).
    #[arg(long)]
    tiles: Option<usize>,
    /// Pixels per tile side.
    #[arg(long)]
    tile_size: Option<usize>,
    /// Task kind: tile-regression | pixel-regression | multi-label.
    #[arg(long, default_value = "tile-regression")]
    task: String,
    /// Class count for the multi-label task.
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Probability that an eligible modality is absent from a tile.
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Probability that a stored element holds the no-data sentinel.
    #[arg(long)]
    nodata_rate: Option<f64>,
    /// Strength of the extra label field inside the held-out region.
    #[arg(long)]
    label_shift: Option<f64>,
    /// Amplitude of the smooth condition field distorting the encoder
    /// input bands everywhere.
    #[arg(long)]
    condition: Option<f64>,
    /// Extra condition amplitude inside the held-out region.
    #[arg(long)]
    region_condition: Option<f64>,
    /// Stddev of observation noise added to labels.
    #[arg(long)]
    label_noise: Option<f64>,
    /// GeoJSON file of points fixing tile ids and locations.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output container file; the manifest lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

/// JSON sidecar written next to a generated world: the exact generator
/// configuration, the seed, and the realized tile count.
#[derive(Serialize, Deserialize)]
struct WorldManifest {
    seed: u64,
    tile_count: usize,
    config: WorldConfig,
}

fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut config = WorldConfig::default();
    if let Some(v) = args.tiles {
        config.tiles = v;
    }
    if let Some(v) = args.tile_size {
        config.tile_size = v;
    }
    config.task = match args.task.as_str() {
        "tile-regression" => TaskKind::TileRegression,
        "pixel-regression" => TaskKind::PixelRegression,
        "multi-label" => TaskKind::MultiLabel {
            classes: args.classes,
        },
        other => {
            return Err(LabError::Usage(format!(
                "unknown task {other:?}, expected tile-regression, pixel-regression or multi-label"
            )))
        }
    };
    if let Some(v) = args.missing_rate {
        config.missing_rate = v;
    }
    if let Some(v) = args.nodata_rate {
        config.nodata_rate = v;
    }
    if let Some(v) = args.label_shift {
        config.label_shift = v;
    }
    if let Some(v) = args.condition {
        config.condition_strength = v;
    }
    if let Some(v) = args.region_condition {
        config.region_condition = v;
    }
    if let Some(v) = args.label_noise {
        config.label_noise = v;
    }
    if let Some(path) = &args.points {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::io(path.display().to_string(), e))?;
        config.locations = Some(parse_geojson_points(&text)?);
    }
    config.validate().map_err(usage)?;

    let manifest_out = manifest_path(&args.out);
    guard_overwrite(&[args.out.clone(), manifest_out.clone()], args.force)?;

    let ds = generate_world(&config, args.seed)?;
    save_dataset(&ds, &args.out, None)?;
    let manifest = WorldManifest {
        seed: args.seed,
        tile_count: ds.tiles.len(),
        config,
    };
    write_text(&manifest_out, &to_pretty_json(&manifest)?)?;
    println!(
        "wrote {} ({} tiles) and {}",
        args.out.display(),
        ds.tiles.len(),
        manifest_out.display()
    );
    Ok(())
}

// ───────────────────────── split ─────────────────────────

#[derive(Args)]
struct SplitArgs {
    /// Dataset container file.
    #[arg(long)]
    dataset: PathBuf,
    /// Verify an existing split file (subset nesting, exact cover,
    /// region purity) against the dataset, then exit.
    #[arg(long, value_name = "SPLITS")]
    subset_check: Option<PathBuf>,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of non-region tiles used for training (default 0.70).
    #[arg(long)]
    train_ratio: Option<f64>,
    /// Fraction for validation (default 0.15).
    #[arg(long)]
    validation_ratio: Option<f64>,
    /// Fraction for the random test split (default 0.15).
    #[arg(long)]
    test_ratio: Option<f64>,
    /// World manifest to take the held-out region polygon from
    /// (defaults to the manifest next to the dataset if present,
    /// otherwise the generator's default region).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Region vertices as "lon,lat;lon,lat;..." (at least 3); overrides
    /// the manifest region.
    #[arg(long)]
    region: Option<String>,
    /// Output split JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn parse_region_vertices(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut vertices = Vec::new();
    for pair in text.split(';').filter(|p| !p.trim().is_empty()) {
        let (lon, lat) = pair.split_once(',').ok_or_else(|| {
            LabError::Usage(format!("region vertex {pair:?} is not \"lon,lat\""))
        })?;
        let lon: f64 = lon
            .trim()
            .parse()
            .map_err(|_| LabError::Usage(format!("bad longitude {lon:?}")))?;
        let lat: f64 = lat
            .trim()
            .parse()
            .map_err(|_| LabError::Usage(format!("bad latitude {lat:?}")))?;
        vertices.push((lon, lat));
    }
    Ok(vertices)
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let (ds, _) = load_dataset(&args.dataset)?;

    if let Some(splits_path) = &args.subset_check {
        let splits = load_splits(splits_path)?;
        splits.validate_against(&ds)?;
        println!(
            "splits ok: 5% ({}) within 50% ({}) within 100% ({}), cover and region purity hold",
            splits.train5.len(),
            splits.train50.len(),
            splits.train100.len()
        );
        return Ok(());
    }

    let out = args.out.ok_or_else(|| {
        LabError::Usage("--out is required unless --subset-check is given".into())
    })?;
    let mut ratios = SplitRatios::default();
    if let Some(v) = args.train_ratio {
        ratios.train = v;
    }
    if let Some(v) = args.validation_ratio {
        ratios.validation = v;
    }
    if let Some(v) = args.test_ratio {
        ratios.test = v;
    }
    ratios.validate().map_err(usage)?;

    let region = if let Some(text) = &args.region {
        Polygon::new(parse_region_vertices(text)?).map_err(usage)?
    } else {
        let manifest_file = args
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_path(&args.dataset));
        if manifest_file.exists() {
            let text = std::fs::read_to_string(&manifest_file)
                .map_err(|e| LabError::io(manifest_file.display().to_string(), e))?;
            let manifest: WorldManifest = serde_json::from_str(&text)
                .map_err(|e| LabError::format(manifest_file.display().to_string(), e.to_string()))?;
            manifest.config.region_polygon()?
        } else if args.manifest.is_some() {
            return Err(LabError::Usage(format!(
                "manifest {} does not exist",
                manifest_file.display()
            )));
        } else {
            WorldConfig::default().region_polygon()?
        }
    };

    guard_overwrite(&[out.clone()], args.force)?;
    let splits = make_splits(&ds, &region, ratios, args.seed)?;
    save_splits(&splits, &out)?;
    println!(
        "wrote {}: train {} (50% {}, 5% {}), validation {}, random test {}, geo test {}",
        out.display(),
        splits.train100.len(),
        splits.train50.len(),
        splits.train5.len(),
        splits.validation.len(),
        splits.random_test.len(),
        splits.geo_test.len()
    );
    Ok(())
}

// ───────────────────────── train ─────────────────────────

#[derive(Args)]
struct TrainArgs {
    /// Dataset container file.
    #[arg(long)]
    dataset: PathBuf,
    /// Split JSON file.
    #[arg(long)]
    splits: PathBuf,
    /// Training subset percent: 5 | 50 | 100.
    #[arg(long, default_value = "100", value_parser = parse_subset)]
    subset: Subset,
    /// Root seed; initialization and batch order derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_lr: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Whether the encoder trains too: finetune | linear-probe.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Encoder embedding width.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Patch side length for the encoder input.
    #[arg(long)]
    patch_size: Option<usize>,
    /// Output directory for checkpoint.bin and train-log.json.
    #[arg(long, env = "MMRLAB_OUT")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (ds, _) = load_dataset(&args.dataset)?;
    let splits = load_splits(&args.splits)?;
    splits.validate_against(&ds)?;

    let mut train_cfg = TrainConfig {
        seed: derive_seed(args.seed, "train"),
        ..TrainConfig::default()
    };
    if let Some(v) = args.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.max_lr {
        train_cfg.max_lr = v;
    }
    if let Some(v) = args.min_lr {
        train_cfg.min_lr = v;
    }
    if let Some(v) = args.weight_decay {
        train_cfg.weight_decay = v;
    }
    if let Some(v) = args.warmup_epochs {
        train_cfg.warmup_epochs = v;
    }
    if let Some(v) = args.mode {
        train_cfg.mode = v;
    }
    train_cfg.validate().map_err(usage)?;

    let mut model_cfg = ModelConfig::default();
    if let Some(v) = args.embed_dim {
        model_cfg.embed_dim = v;
    }
    if let Some(v) = args.patch_size {
        model_cfg.patch_size = v;
    }

    let ckpt_path = args.out.join("checkpoint.bin");
    let log_path = args.out.join("train-log.json");
    guard_overwrite(&[ckpt_path.clone(), log_path.clone()], args.force)?;

    let init = init_model(
        model_cfg,
        ds.schema.clone(),
        ds.tile_size,
        ds.task,
        derive_seed(args.seed, "init"),
    )?;
    let outcome = joint_train(&ds, &splits, args.subset, &init, &train_cfg)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| LabError::io(args.out.display().to_string(), e))?;
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    write_text(&log_path, &to_pretty_json::<Vec<EpochLog>>(&outcome.log)?)?;
    println!(
        "wrote {} (best epoch {}, validation metric {:.6})",
        ckpt_path.display(),
        outcome.checkpoint.epoch,
        outcome.checkpoint.validation_metric
    );
    Ok(())
}

// ───────────────────────── ttt ─────────────────────────

#[derive(Args)]
struct TttArgs {
    /// Dataset container file.
    #[arg(long)]
    dataset: PathBuf,
    /// Split JSON file.
    #[arg(long)]
    splits: PathBuf,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Method: jt | ttt-mmr | ttt-mmr-geo.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Test split to evaluate: random | geo.
    #[arg(long, value_parser = parse_split_kind)]
    split: SplitKind,
    /// Training subset percent recorded in the result cell: 5 | 50 | 100.
    #[arg(long, default_value = "100", value_parser = parse_subset)]
    subset: Subset,
    /// Seed for test-batch construction.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tiles per adaptation batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adaptation step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Largest iteration count considered during selection.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Fixed adaptation iteration count, skipping validation selection.
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory for cell.json, predictions.json and, for
    /// adapting methods, trace.jsonl and selection.json.
    #[arg(long, env = "MMRLAB_OUT")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn checkpoint_matches(model: &Model, ds: &mmrlab::data::tile::Dataset) -> Result<()> {
    if model.schema != ds.schema {
        return Err(LabError::Config(
            "checkpoint schema does not match the dataset schema".into(),
        ));
    }
    if model.tile_size != ds.tile_size {
        return Err(LabError::Config(format!(
            "checkpoint tile size {} does not match dataset tile size {}",
            model.tile_size, ds.tile_size
        )));
    }
    if model.task != ds.task {
        return Err(LabError::Config(
            "checkpoint task does not match the dataset task".into(),
        ));
    }
    Ok(())
}

fn cmd_ttt(args: TttArgs) -> Result<()> {
    let (ds, _) = load_dataset(&args.dataset)?;
    let splits = load_splits(&args.splits)?;
    splits.validate_against(&ds)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    checkpoint_matches(&ckpt.model, &ds)?;

    let mut ttt_cfg = TttConfig {
        seed: args.seed,
        batching: if args.method == Method::TttMmrGeo {
            Batching::Geographic
        } else {
            Batching::Random
        },
        ..TttConfig::default()
    };
    if let Some(v) = args.batch_size {
        ttt_cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        ttt_cfg.learning_rate = v;
    }
    if let Some(v) = args.max_iterations {
        ttt_cfg.max_iterations = v;
    }
    ttt_cfg.validate().map_err(usage)?;
    if let Some(fixed) = args.iterations {
        if fixed > ttt_cfg.max_iterations {
            return Err(LabError::Usage(format!(
                "--iterations {} exceeds --max-iterations {}",
                fixed, ttt_cfg.max_iterations
            )));
        }
    }

    let test_ids = match args.split {
        SplitKind::Random => &splits.random_test,
        SplitKind::Geo => &splits.geo_test,
    };
    let test_tiles = normalize_ids(&ds, &splits, test_ids)?;

    let cell_path = args.out.join("cell.json");
    let preds_path = args.out.join("predictions.json");
    let trace_path = args.out.join("trace.jsonl");
    let selection_path = args.out.join("selection.json");

    let (predictions, detail) = match args.method {
        Method::Jt => {
            guard_overwrite(&[cell_path.clone(), preds_path.clone()], args.force)?;
            let preds = jt_predictions(&ckpt.model, &test_tiles)?;
            (preds, String::from("no adaptation"))
        }
        Method::TttMmr | Method::TttMmrGeo => {
            guard_overwrite(
                &[
                    cell_path.clone(),
                    preds_path.clone(),
                    trace_path.clone(),
                    selection_path.clone(),
                ],
                args.force,
            )?;
            let (iterations, selection) = match args.iterations {
                Some(fixed) => (fixed, None),
                None => {
                    let validation = normalize_ids(&ds, &splits, &splits.validation)?;
                    let selection = select_iterations(&ckpt.model, &validation, &ttt_cfg)?;
                    (selection.chosen, Some(selection))
                }
            };
            let run = run_ttt(&ckpt.model, &test_tiles, &ttt_cfg, iterations)?;
            write_text(&trace_path, &trace_lines(&run)?)?;
            if let Some(selection) = &selection {
                write_text(
                    &selection_path,
                    &to_pretty_json::<IterationSelection>(selection)?,
                )?;
            }
            (run.predictions, format!("{iterations} iterations"))
        }
    };

    let cell = Cell {
        method: args.method,
        split: args.split,
        subset: args.subset,
        seed: ckpt.train_seed,
        metric: metric_name(&ds).into(),
        value: metric_of_map(&ds, &predictions)?,
    };
    write_text(&preds_path, &to_pretty_json(&predictions)?)?;
    write_text(&cell_path, &to_pretty_json(&cell)?)?;
    println!(
        "wrote {}: method={} split={} {}={:.6} ({})",
        cell_path.display(),
        cell.method,
        cell.split,
        cell.metric,
        cell.value,
        detail
    );
    Ok(())
}

// ───────────────────────── report ─────────────────────────

#[derive(Args)]
struct ReportArgs {
    /// Cell JSON files produced by the `ttt` command.
    #[arg(required = true)]
    cells: Vec<PathBuf>,
    /// Significance level for the corrected decisions.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output directory for cells.csv and report.json.
    #[arg(long, env = "MMRLAB_OUT")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut cells = Vec::new();
    for path in &args.cells {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::io(path.display().to_string(), e))?;
        let cell: Cell = serde_json::from_str(&text)
            .map_err(|e| LabError::format(path.display().to_string(), e.to_string()))?;
        cells.push(cell);
    }
    let csv_path = args.out.join("cells.csv");
    let json_path = args.out.join("report.json");
    guard_overwrite(&[csv_path.clone(), json_path.clone()], args.force)?;

    let report = aggregate(&cells, args.alpha)?;
    write_text(&csv_path, &cells_to_csv(&cells))?;
    write_text(&json_path, &report_to_json(&report)?)?;
    println!(
        "wrote {} and {} ({} cells)",
        csv_path.display(),
        json_path.display(),
        cells.len()
    );
    print_report_summary(&report);
    Ok(())
}

fn print_report_summary(report: &mmrlab::report::Report) {
    for d in &report.split_deltas {
        println!(
            "mean delta vs jt — {} on {}: {:+.6}",
            d.method, d.split, d.mean_delta
        );
    }
    for s in &report.significance {
        println!(
            "one-sided wilcoxon vs jt — {}: p={:.6} over {} pairs",
            s.method, s.p_value, s.pairs
        );
    }
}

// ───────────────────────── experiment ─────────────────────────

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in configuration: demo | evaluation.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment configuration JSON (see --emit-config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    emit_config: bool,
    /// Override the configuration's root seed.
    #[arg(long)]
    root_seed: Option<u64>,
    /// Override the configuration's number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory for the whole artifact tree.
    #[arg(long, env = "MMRLAB_OUT")]
    out: Option<PathBuf>,
    /// Overwrite an existing experiment tree.
    #[arg(long)]
    force: bool,
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut config: ExperimentConfig = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| LabError::format(path.display().to_string(), e.to_string()))?
    } else {
        match args.preset.as_deref().unwrap_or("demo") {
            "demo" => demo_config(),
            "evaluation" => evaluation_config(),
            other => {
                return Err(LabError::Usage(format!(
                    "unknown preset {other:?}, expected demo or evaluation"
                )))
            }
        }
    };
    if let Some(seed) = args.root_seed {
        config.root_seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    config.validate().map_err(usage)?;

    if args.emit_config {
        print!("{}", to_pretty_json(&config)?);
        return Ok(());
    }

    let out = args
        .out
        .ok_or_else(|| LabError::Usage("--out is required to run an experiment".into()))?;
    guard_overwrite(&[out.join("manifest.json")], args.force)?;
    let outcome = run_experiment(&config, &out)?;
    println!(
        "wrote {} ({} cells over {} runs)",
        out.join("report/report.json").display(),
        outcome.cells.len(),
        outcome.manifest.runs.len()
    );
    print_report_summary(&outcome.report);
    Ok(())
}
