//! End-to-end experiment driver: generate a world, build the split
//! protocol, jointly train one model per run seed, adapt each at test
//! time under both batching modes, evaluate everything, and write a
//! deterministic artifact tree (dataset, splits, checkpoints, logs,
//! adaptation traces, raw-cell CSV, aggregate JSON). Reruns with the
//! same configuration produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::container::save_dataset;
use crate::data::generate::{generate_world, WorldConfig};
use crate::data::stats::{normalize_tile, NormalizedTile};
use crate::data::tile::Dataset;
use crate::error::{LabError, Result};
use crate::eval::task_metric_from_predictions;
use crate::model::{init_model, save_checkpoint, Model, ModelConfig};
use crate::report::{aggregate, cells_to_csv, report_to_json, Cell, Method, Report, SplitKind};
use crate::splits::protocol::{make_splits, SplitRatios, SplitSet, Subset};
use crate::train::{joint_train, EpochLog, TrainConfig};
use crate::ttt::{run_ttt, select_iterations, Batching, IterationSelection, TttConfig};
use crate::util::derive_seed;

/// Everything one experiment needs; seeds are explicit and every source
/// of randomness derives from `root_seed` by a fixed label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub ratios: SplitRatios,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ttt: TttConfig,
    pub subset: Subset,
    pub methods: Vec<Method>,
    /// Independent training runs; each gets its own derived seed and
    /// contributes one seed column of report cells.
    pub runs: usize,
    pub root_seed: u64,
    /// Level for the corrected significance decisions in the report.
    pub alpha: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.ratios.validate()?;
        self.train.validate()?;
        self.ttt.validate()?;
        if self.runs == 0 {
            return Err(LabError::Usage("experiment needs at least one run".into()));
        }
        if self.methods.is_empty() {
            return Err(LabError::Usage("experiment needs at least one method".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(LabError::Usage("duplicate method in experiment".into()));
        }
        if !self.methods.contains(&Method::Jt) && self.methods.len() > 1 {
            return Err(LabError::Usage(
                "comparisons need the jointly trained baseline among the methods".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LabError::Usage(format!(
                "significance level must be in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Small world for quick demonstration runs.
pub fn demo_config() -> ExperimentConfig {
    ExperimentConfig {
        world: WorldConfig {
            tiles: 120,
            tile_size: 8,
            label_shift: 0.8,
            condition_strength: 0.7,
            region_condition: 4.0,
            ..WorldConfig::default()
        },
        ratios: SplitRatios::default(),
        model: ModelConfig {
            embed_dim: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 12,
            batch_size: 16,
            max_lr: 3e-3,
            min_lr: 1e-4,
            warmup_epochs: 2,
            ..TrainConfig::default()
        },
        ttt: TttConfig::default(),
        subset: Subset::S100,
        methods: Method::ALL.to_vec(),
        runs: 2,
        root_seed: 7,
        alpha: 0.05,
    }
}

/// The full evaluation world: at least a thousand tiles, geographic
/// label shift enabled, five independent runs.
pub fn evaluation_config() -> ExperimentConfig {
    ExperimentConfig {
        world: WorldConfig {
            tiles: 1000,
            tile_size: 8,
            label_shift: 0.8,
            condition_strength: 0.7,
            region_condition: 4.0,
            ..WorldConfig::default()
        },
        ratios: SplitRatios::default(),
        model: ModelConfig {
            embed_dim: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 25,
            batch_size: 32,
            max_lr: 3e-3,
            min_lr: 1e-4,
            warmup_epochs: 4,
            ..TrainConfig::default()
        },
        ttt: TttConfig::default(),
        subset: Subset::S100,
        methods: Method::ALL.to_vec(),
        runs: 5,
        root_seed: 11,
        alpha: 0.05,
    }
}

/// Per-run provenance recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub train_seed: u64,
    pub init_seed: u64,
    pub ttt_seed: u64,
    pub best_epoch: usize,
    pub validation_metric: f64,
    /// Iteration selection per adapting method, keyed by method name.
    pub selections: BTreeMap<String, IterationSelection>,
}

/// Run-level provenance: config echo, derived seeds, per-run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub world_seed: u64,
    pub split_seed: u64,
    pub runs: Vec<RunRecord>,
}

/// In-memory result of `run_experiment`, mirroring what was written.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub report: Report,
    pub cells: Vec<Cell>,
    pub out_dir: PathBuf,
}

/// Write a text file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| LabError::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path.display().to_string(), e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::Config(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Normalize the given tiles with the statistics stored in the split set.
pub fn normalize_ids(
    ds: &Dataset,
    splits: &SplitSet,
    ids: &[u64],
) -> Result<BTreeMap<u64, NormalizedTile>> {
    let by_id: BTreeMap<u64, &crate::data::tile::Tile> =
        ds.tiles.iter().map(|t| (t.id, t)).collect();
    let mut out = BTreeMap::new();
    for &id in ids {
        let t = by_id
            .get(&id)
            .ok_or_else(|| LabError::Dataset(format!("split references unknown tile {id}")))?;
        out.insert(
            id,
            normalize_tile(t, &ds.schema, ds.tile_size, &splits.norm_stats)?,
        );
    }
    Ok(out)
}

/// Name of the task metric for this dataset's task kind.
pub fn metric_name(ds: &Dataset) -> &'static str {
    use crate::data::tile::TaskKind;
    match ds.task {
        TaskKind::TileRegression | TaskKind::PixelRegression => "r2",
        TaskKind::MultiLabel { .. } => "map",
    }
}

/// Task metric over a prediction map keyed by tile id.
pub fn metric_of_map(
    ds: &Dataset,
    predictions: &BTreeMap<u64, Vec<f64>>,
) -> Result<f64> {
    let ids: Vec<u64> = predictions.keys().copied().collect();
    let preds: Vec<Vec<f64>> = predictions.values().cloned().collect();
    task_metric_from_predictions(ds, &ids, &preds)
}

/// Plain per-tile predictions of an unadapted model.
pub fn jt_predictions(
    model: &Model,
    tiles: &BTreeMap<u64, NormalizedTile>,
) -> Result<BTreeMap<u64, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (&id, nt) in tiles {
        out.insert(id, model.predict(nt)?.data().to_vec());
    }
    Ok(out)
}

/// One JSON line per batch trace.
pub fn trace_lines(run: &crate::ttt::TttRun) -> Result<String> {
    let mut out = String::new();
    for t in &run.traces {
        let line = serde_json::to_string(t)
            .map_err(|e| LabError::Config(format!("trace serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Run the whole experiment into `out_dir`. Existing files are
/// overwritten; outputs are byte-identical across reruns of the same
/// config.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    let world_seed = derive_seed(config.root_seed, "world");
    let split_seed = derive_seed(config.root_seed, "split");

    let ds = generate_world(&config.world, world_seed)?;
    let region = config.world.region_polygon()?;
    let splits = make_splits(&ds, &region, config.ratios, split_seed)?;

    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir.display().to_string(), e))?;
    save_dataset(&ds, &out_dir.join("world.bin"), None)?;
    write_text(&out_dir.join("splits.json"), &to_pretty_json(&splits)?)?;

    let validation = normalize_ids(&ds, &splits, &splits.validation)?;
    let random_test = normalize_ids(&ds, &splits, &splits.random_test)?;
    let geo_test = normalize_ids(&ds, &splits, &splits.geo_test)?;
    let test_sets: [(SplitKind, &BTreeMap<u64, NormalizedTile>); 2] = [
        (SplitKind::Random, &random_test),
        (SplitKind::Geo, &geo_test),
    ];

    let metric = metric_name(&ds);
    let mut cells: Vec<Cell> = Vec::new();
    let mut run_records = Vec::new();

    for run_idx in 0..config.runs {
        let train_seed = derive_seed(config.root_seed, &format!("train-{run_idx}"));
        let init_seed = derive_seed(config.root_seed, &format!("init-{run_idx}"));
        let ttt_seed = derive_seed(config.root_seed, &format!("ttt-{run_idx}"));

        let init = init_model(
            config.model.clone(),
            ds.schema.clone(),
            ds.tile_size,
            ds.task,
            init_seed,
        )?;
        let mut train_cfg = config.train.clone();
        train_cfg.seed = train_seed;
        let outcome = joint_train(&ds, &splits, config.subset, &init, &train_cfg)?;
        let model = &outcome.checkpoint.model;

        let run_dir = out_dir.join(format!("runs/run-{run_idx}"));
        fs::create_dir_all(&run_dir).map_err(|e| LabError::io(run_dir.display().to_string(), e))?;
        save_checkpoint(&outcome.checkpoint, &run_dir.join("checkpoint.bin"))?;
        write_text(
            &run_dir.join("train-log.json"),
            &to_pretty_json::<Vec<EpochLog>>(&outcome.log)?,
        )?;

        let mut selections = BTreeMap::new();
        for &method in &config.methods {
            match method {
                Method::Jt => {
                    for (split, tiles) in test_sets {
                        let preds = jt_predictions(model, tiles)?;
                        cells.push(Cell {
                            method,
                            split,
                            subset: config.subset,
                            seed: train_seed,
                            metric: metric.into(),
                            value: metric_of_map(&ds, &preds)?,
                        });
                    }
                }
                Method::TttMmr | Method::TttMmrGeo => {
                    let mut ttt_cfg = config.ttt.clone();
                    ttt_cfg.seed = ttt_seed;
                    ttt_cfg.batching = if method == Method::TttMmrGeo {
                        Batching::Geographic
                    } else {
                        Batching::Random
                    };
                    let selection = select_iterations(model, &validation, &ttt_cfg)?;
                    for (split, tiles) in test_sets {
                        let run = run_ttt(model, tiles, &ttt_cfg, selection.chosen)?;
                        write_text(
                            &run_dir.join(format!("{method}/{split}.trace.jsonl")),
                            &trace_lines(&run)?,
                        )?;
                        cells.push(Cell {
                            method,
                            split,
                            subset: config.subset,
                            seed: train_seed,
                            metric: metric.into(),
                            value: metric_of_map(&ds, &run.predictions)?,
                        });
                    }
                    selections.insert(method.to_string(), selection);
                }
            }
        }

        run_records.push(RunRecord {
            run: run_idx,
            train_seed,
            init_seed,
            ttt_seed,
            best_epoch: outcome.checkpoint.epoch,
            validation_metric: outcome.checkpoint.validation_metric,
            selections,
        });
    }

    let report = aggregate(&cells, config.alpha)?;
    write_text(&out_dir.join("report/cells.csv"), &cells_to_csv(&cells))?;
    write_text(&out_dir.join("report/report.json"), &report_to_json(&report)?)?;

    let manifest = Manifest {
        config: config.clone(),
        world_seed,
        split_seed,
        runs: run_records,
    };
    write_text(&out_dir.join("manifest.json"), &to_pretty_json(&manifest)?)?;

    Ok(ExperimentOutcome {
        manifest,
        report,
        cells,
        out_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = demo_config();
        cfg.world.tiles = 60;
        cfg.train.epochs = 4;
        cfg.train.warmup_epochs = 1;
        cfg.train.batch_size = 16;
        cfg.runs = 1;
        // A 60-tile world drops only a handful of tiles into the region,
        // so test batches must be allowed to stay small.
        cfg.ttt.batch_size = 4;
        cfg
    }

    #[test]
    fn validation_rejects_broken_configs() {
        let mut cfg = tiny_config();
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.methods = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.methods = vec![Method::TttMmr, Method::TttMmrGeo];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.methods = vec![Method::Jt, Method::Jt];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn experiment_writes_the_full_artifact_tree() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let outcome = run_experiment(&cfg, dir.path()).unwrap();
        for rel in [
            "world.bin",
            "splits.json",
            "manifest.json",
            "runs/run-0/checkpoint.bin",
            "runs/run-0/train-log.json",
            "runs/run-0/ttt-mmr/random.trace.jsonl",
            "runs/run-0/ttt-mmr/geo.trace.jsonl",
            "runs/run-0/ttt-mmr-geo/random.trace.jsonl",
            "runs/run-0/ttt-mmr-geo/geo.trace.jsonl",
            "report/cells.csv",
            "report/report.json",
        ] {
            assert!(dir.path().join(rel).is_file(), "missing {rel}");
        }
        // 3 methods × 2 splits × 1 run.
        assert_eq!(outcome.cells.len(), 6);
        assert_eq!(outcome.report.cells.len(), 6);
        assert_eq!(outcome.manifest.runs.len(), 1);
        let rec = &outcome.manifest.runs[0];
        assert!(rec.selections.contains_key("ttt-mmr"));
        assert!(rec.selections.contains_key("ttt-mmr-geo"));
        assert!(rec.selections["ttt-mmr"].chosen <= cfg.ttt.max_iterations);
        // Every cell value is a finite metric.
        assert!(outcome.cells.iter().all(|c| c.value.is_finite()));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let cfg = tiny_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir_a.path()).unwrap();
        run_experiment(&cfg, dir_b.path()).unwrap();
        for rel in [
            "world.bin",
            "splits.json",
            "manifest.json",
            "runs/run-0/checkpoint.bin",
            "runs/run-0/train-log.json",
            "runs/run-0/ttt-mmr/random.trace.jsonl",
            "report/cells.csv",
            "report/report.json",
        ] {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between reruns");
        }
    }

    #[test]
    fn jt_only_experiment_skips_comparisons() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.methods = vec![Method::Jt];
        let outcome = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(outcome.cells.len(), 2);
        assert!(outcome.report.deltas.is_empty());
        assert!(outcome.report.significance.is_empty());
        assert!(!dir.path().join("runs/run-0/ttt-mmr").exists());
    }
}
