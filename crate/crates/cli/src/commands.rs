use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crownbench::aggregator::{
    aggregate, frames_from_index, read_tile_detections, write_tile_detections, AggregationConfig, BandMode,
};
use crownbench::datamodel::geojson::{read_annotations, read_detections, write_annotations, write_detections};
use crownbench::datamodel::raster::write_png;
use crownbench::datamodel::{load_scene, Split};
use crownbench::geometry::GeoBox;
use crownbench::metrics::{coco_eval, dataset_rf1, default_iou_thresholds, raster_f1, ImageDetections, RasterEval};
use crownbench::scaleplan::{effective_extent_range, effective_gsd_range, fmt_1dp, format_extent, format_gsd_cm, AugPlan};
use crownbench::synth::{gen_scene, perturb, perturb_tiles, SynthConfig};
use crownbench::tiler::{load_coco, CocoIndex, Tiler, TilingConfig};
use crownbench::tuner::{tune, GridSpec, ValidationRaster};
use crownbench::Error;

use crate::manifest::{manifest_path, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "crownbench", version, about = "Tiling, aggregation and evaluation for aerial tree-crown detection")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CROWNBENCH_WORKERS")]
    pub workers: Option<usize>,
    /// Flat JSON file of default flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Debug logging on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut a raster into overlapping tiles and write a COCO index.
    Tile(TileArgs),
    /// Merge tile detections into raster-level detections.
    Aggregate(AggregateArgs),
    /// Raster-level precision, recall, F1 and weighted RF1.
    Evaluate(EvaluateArgs),
    /// COCO-style mAP/mAR over tile detections.
    EvaluateCoco(EvaluateCocoArgs),
    /// Grid search over NMS IoU and score threshold.
    Tune(TuneArgs),
    /// Effective extent and resolution ranges of a crop/resize plan.
    Plan(PlanArgs),
    /// Generate a synthetic scene with truth and detections.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BandModeArg {
    Intersect,
    Contained,
}

impl From<BandModeArg> for BandMode {
    fn from(m: BandModeArg) -> Self {
        match m {
            BandModeArg::Intersect => BandMode::Intersect,
            BandModeArg::Contained => BandMode::Contained,
        }
    }
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct TileArgs {
    #[arg(long)]
    pub raster: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// AOI GeoJSON (repeatable); without AOIs every tile is labelled test.
    #[arg(long)]
    pub aoi: Vec<PathBuf>,
    #[arg(long, default_value_t = 1777)]
    pub tile_size_px: u32,
    #[arg(long, default_value_t = 0.75)]
    pub overlap: f64,
    /// Resample the raster to this GSD before tiling.
    #[arg(long)]
    pub resample_gsd: Option<f64>,
    /// Keep train/valid tiles without annotations.
    #[arg(long)]
    pub keep_empty: bool,
    #[arg(long, default_value_t = 0.4)]
    pub min_annotation_frac: f64,
    #[arg(long, default_value_t = 0.8)]
    pub max_dark_frac: f64,
    /// Only emit these splits (repeatable).
    #[arg(long)]
    pub split: Vec<Split>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct AggregateArgs {
    /// Tile detections JSON: [{tile_id, boxes: [[x, y, w, h]], scores}].
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub tiles_index: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 0.0)]
    pub score_min: f64,
    /// Border band as a fraction of the tile side.
    #[arg(long, default_value_t = 0.05)]
    pub band: f64,
    #[arg(long, value_enum, default_value_t = BandModeArg::Intersect)]
    pub band_mode: BandModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// Predicted detections GeoJSON (repeatable, paired with --truth).
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth GeoJSON (repeatable).
    #[arg(long, required = true)]
    pub truth: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub iou: f64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateCocoArgs {
    /// Tile detections JSON.
    #[arg(long)]
    pub pred: PathBuf,
    /// COCO index with the ground truth.
    #[arg(long)]
    pub coco: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub max_dets: usize,
    /// Comma-separated IoU thresholds (default 0.50,0.55,...,0.95).
    #[arg(long, value_delimiter = ',')]
    pub iou_thresholds: Vec<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct TuneArgs {
    /// Directory with `<raster>.json` tile detections and `<raster>.coco.json` indexes.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory with `<raster>.geojson` ground truth.
    #[arg(long)]
    pub truth_dir: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 0.75)]
    pub iou: f64,
    #[arg(long, default_value_t = 0.05)]
    pub band: f64,
    #[arg(long, value_enum, default_value_t = BandModeArg::Intersect)]
    pub band_mode: BandModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct PlanArgs {
    /// Native GSD in m/px.
    #[arg(long)]
    pub gsd: f64,
    #[arg(long)]
    pub tile_px: u32,
    /// Crop side range in pixels, `MIN:MAX`.
    #[arg(long)]
    pub crop: String,
    /// Resize target range in pixels, `MIN:MAX`.
    #[arg(long)]
    pub resize: String,
    /// Ignore the uncropped full-tile case.
    #[arg(long)]
    pub no_fallback: bool,
    /// Print JSON instead of the table row.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scene side in meters.
    #[arg(long, default_value_t = 400.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0.045)]
    pub gsd: f64,
    #[arg(long, default_value_t = 500)]
    pub crowns: usize,
    #[arg(long, default_value = "synth")]
    pub raster_id: String,
    #[arg(long, default_value_t = 8.0)]
    pub crown_median: f64,
    #[arg(long, default_value_t = 0.4)]
    pub crown_sigma: f64,
    #[arg(long, default_value_t = 1.5)]
    pub crown_min: f64,
    #[arg(long, default_value_t = 24.0)]
    pub crown_max: f64,
    /// Distance kept between crowns and the scene border, meters.
    #[arg(long, default_value_t = 2.5)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.2)]
    pub max_iou: f64,
    /// Per-edge jitter sigma of the detections, meters.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop: f64,
    #[arg(long, default_value_t = 0.0)]
    pub spurious: f64,
    /// Also tile the scene and write tile-level detections.
    #[arg(long)]
    pub tile_px: Option<u32>,
    #[arg(long, default_value_t = 0.75)]
    pub overlap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn config_echo<T: Serialize>(args: &T, workers: Option<usize>) -> Value {
    let mut v = serde_json::to_value(args).expect("arguments serialize");
    if let (Some(w), Value::Object(m)) = (workers, &mut v) {
        m.insert("workers".into(), json!(w));
    }
    v
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn finish(mut m: RunManifest, started: Instant, outputs: &[&Path], at: &Path) -> Result<()> {
    m.add_outputs(outputs.iter().copied())?;
    m.wall_time_s = started.elapsed().as_secs_f64();
    m.write(&manifest_path(at))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Tile(a) => run_tile(a, cli.workers, started),
        Command::Aggregate(a) => run_aggregate(a, cli.workers, started),
        Command::Evaluate(a) => run_evaluate(a, cli.workers, started),
        Command::EvaluateCoco(a) => run_evaluate_coco(a, cli.workers, started),
        Command::Tune(a) => run_tune(a, cli.workers, started),
        Command::Plan(a) => run_plan(a, cli.workers, started),
        Command::Synth(a) => run_synth(a, cli.workers, started),
    }
}

fn run_tile(a: &TileArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let aois: Vec<&Path> = a.aoi.iter().map(PathBuf::as_path).collect();
    let scene = load_scene(&a.raster, &a.annotations, &aois)?;
    let cfg = TilingConfig {
        tile_size_px: a.tile_size_px,
        overlap: a.overlap,
        min_annotation_frac: a.min_annotation_frac,
        max_dark_frac: a.max_dark_frac,
        resample_gsd: a.resample_gsd,
        drop_empty: !a.keep_empty,
        splits: (!a.split.is_empty()).then(|| a.split.clone()),
        ..TilingConfig::default()
    };
    create_dir(&a.out)?;
    let records = Tiler::new(&scene, cfg)?.write_to_dir(&a.out)?;
    let n_ann: usize = records.iter().map(|r| r.annotations.len()).sum();
    println!("{} tiles, {} tile annotations -> {}", records.len(), n_ann, a.out.display());
    let mut m = RunManifest::new("tile", config_echo(a, workers));
    m.add_inputs([a.raster.as_path(), a.annotations.as_path()].into_iter().chain(aois))?;
    finish(m, started, &[&a.out.join("coco.json")], &a.out)
}

fn index_crs(index: &CocoIndex, path: &Path) -> Result<String> {
    let mut crs: Vec<&str> = index.records.iter().map(|r| r.crs.as_str()).collect();
    crs.sort();
    crs.dedup();
    match crs.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Ok(crownbench::datamodel::geojson::DEFAULT_CRS.to_string()),
        [first, second, ..] => Err(Error::CrsMismatch {
            left: first.to_string(),
            left_source: path.display().to_string(),
            right: second.to_string(),
            right_source: path.display().to_string(),
        }
        .into()),
    }
}

fn run_aggregate(a: &AggregateArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let dets = read_tile_detections(&a.detections)?;
    let index = load_coco(&a.tiles_index)?;
    let crs = index_crs(&index, &a.tiles_index)?;
    let cfg = AggregationConfig {
        border_band_frac: a.band,
        score_min: a.score_min,
        nms_iou: a.nms_iou,
        band_mode: a.band_mode.into(),
    };
    let merged = aggregate(&dets, &frames_from_index(&index), &cfg)?;
    write_detections(&a.out, &crs, &merged)?;
    println!("{} detections -> {}", merged.len(), a.out.display());
    let mut m = RunManifest::new("aggregate", config_echo(a, workers));
    m.add_inputs([a.detections.as_path(), a.tiles_index.as_path()])?;
    finish(m, started, &[&a.out], &a.out)
}

fn raster_id_of(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    name.strip_suffix(".geojson")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(&name)
        .to_string()
}

fn evaluate_pair(pred: &Path, truth: &Path, iou: f64) -> Result<RasterEval> {
    let raster_id = raster_id_of(truth);
    let p = read_detections(pred)?;
    let g = read_annotations(truth, &raster_id)?;
    if p.crs != g.crs {
        return Err(Error::CrsMismatch {
            left: p.crs,
            left_source: pred.display().to_string(),
            right: g.crs,
            right_source: truth.display().to_string(),
        }
        .into());
    }
    let (boxes, scores): (Vec<GeoBox>, Vec<f64>) = p.items.iter().map(|d| (d.bbox, d.score)).unzip();
    let gts: Vec<GeoBox> = g.items.iter().map(|a| a.bbox).collect();
    Ok(raster_f1(raster_id, &boxes, &scores, &gts, iou))
}

fn run_evaluate(a: &EvaluateArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    if a.pred.len() != a.truth.len() {
        return Err(Error::Validation(format!(
            "{} --pred files but {} --truth files; they are paired in order",
            a.pred.len(),
            a.truth.len()
        ))
        .into());
    }
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(Error::Validation(format!("--iou {} outside (0, 1]", a.iou)).into());
    }
    let evals = a
        .pred
        .par_iter()
        .zip(a.truth.par_iter())
        .map(|(p, t)| evaluate_pair(p, t, a.iou))
        .collect::<Result<Vec<_>>>()?;
    for e in &evals {
        println!(
            "{}: tp {} fp {} fn {} precision {:.4} recall {:.4} f1 {:.4}",
            e.raster_id, e.tp, e.fp, e.fn_, e.precision, e.recall, e.f1
        );
    }
    let single = (evals.len() == 1).then(|| evals[0].clone());
    let mut report = json!({"config": config_echo(a, workers), "iou_threshold": a.iou});
    match dataset_rf1(evals.clone(), a.iou) {
        Ok(d) => {
            println!("RF1 {:.4}", d.rf1);
            report["rf1"] = json!(d.rf1);
        }
        Err(e) => {
            log::warn!("{e}");
            report["rf1"] = Value::Null;
        }
    }
    report["per_raster"] = serde_json::to_value(&evals)?;
    if let (Some(e), Value::Object(m)) = (single, &mut report) {
        if let Value::Object(fields) = serde_json::to_value(e)? {
            m.extend(fields);
        }
    }
    write_json(&a.report, &report)?;
    let mut m = RunManifest::new("evaluate", config_echo(a, workers));
    m.add_inputs(a.pred.iter().chain(&a.truth).map(PathBuf::as_path))?;
    finish(m, started, &[&a.report], &a.report)
}

/// Per-image detections and ground truth in index order, in tile pixels.
fn coco_inputs(
    dets: &[crownbench::aggregator::TileDetections],
    index: &CocoIndex,
) -> Result<(Vec<ImageDetections>, Vec<Vec<GeoBox>>)> {
    let pos: HashMap<&str, usize> = index
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.tile_id.as_str(), i))
        .collect();
    let mut preds = vec![ImageDetections::default(); index.records.len()];
    for td in dets {
        let &i = pos
            .get(td.tile_id.as_str())
            .ok_or_else(|| Error::Validation(format!("detections for unknown tile {:?}", td.tile_id)))?;
        for (b, &s) in td.boxes.iter().zip(&td.scores) {
            preds[i].boxes.push(GeoBox::new(b.col_min, b.row_min, b.col_max, b.row_max)?);
            preds[i].scores.push(s);
        }
    }
    let gts = index
        .records
        .iter()
        .map(|r| {
            r.annotations
                .iter()
                .map(|a| GeoBox::new(a.bbox.col_min, a.bbox.row_min, a.bbox.col_max, a.bbox.row_max))
                .collect::<crownbench::Result<Vec<_>>>()
        })
        .collect::<crownbench::Result<Vec<_>>>()?;
    Ok((preds, gts))
}

fn run_evaluate_coco(a: &EvaluateCocoArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let dets = read_tile_detections(&a.pred)?;
    let index = load_coco(&a.coco)?;
    let (preds, gts) = coco_inputs(&dets, &index)?;
    let thresholds = if a.iou_thresholds.is_empty() {
        default_iou_thresholds()
    } else {
        a.iou_thresholds.clone()
    };
    let r = coco_eval(&preds, &gts, &thresholds, a.max_dets)?;
    println!(
        "mAP50:95 {:.4}  mAR50:95 {:.4}  mAP50 {:.4}  mAR50 {:.4}  (maxDets {})",
        r.map_50_95, r.mar_50_95, r.map_50, r.mar_50, r.max_dets
    );
    if let Some(report) = &a.report {
        write_json(report, &json!({"config": config_echo(a, workers), "coco": r}))?;
        let mut m = RunManifest::new("evaluate-coco", config_echo(a, workers));
        m.add_inputs([a.pred.as_path(), a.coco.as_path()])?;
        finish(m, started, &[report], report)?;
    }
    Ok(())
}

fn load_validation_dir(pred_dir: &Path, truth_dir: &Path) -> Result<Vec<ValidationRaster>> {
    let mut ids: Vec<String> = std::fs::read_dir(pred_dir)
        .map_err(|e| Error::io(pred_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_string_lossy()
                .strip_suffix(".coco.json")
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Validation(format!(
            "no <raster>.coco.json index found in {}",
            pred_dir.display()
        ))
        .into());
    }
    ids.par_iter()
        .map(|id| {
            let index_path = pred_dir.join(format!("{id}.coco.json"));
            let index = load_coco(&index_path)?;
            let crs = index_crs(&index, &index_path)?;
            let dets = read_tile_detections(&pred_dir.join(format!("{id}.json")))?;
            let truth_path = truth_dir.join(format!("{id}.geojson"));
            let truth = read_annotations(&truth_path, id)?;
            if !index.records.is_empty() && truth.crs != crs {
                return Err(Error::CrsMismatch {
                    left: crs,
                    left_source: index_path.display().to_string(),
                    right: truth.crs,
                    right_source: truth_path.display().to_string(),
                }
                .into());
            }
            Ok(ValidationRaster {
                raster_id: id.clone(),
                tile_detections: dets,
                frames: frames_from_index(&index),
                truths: truth.items.iter().map(|a| a.bbox).collect(),
            })
        })
        .collect()
}

fn run_tune(a: &TuneArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let grid = GridSpec::with_step(a.grid_step, a.iou)?;
    let rasters = load_validation_dir(&a.pred_dir, &a.truth_dir)?;
    let n = workers.unwrap_or_else(default_workers);
    let r = tune(&rasters, &grid, a.band, a.band_mode.into(), n)?;
    println!(
        "best nms_iou {} score_min {} RF1 {:.4} over {} cells, {} rasters",
        r.best_nms_iou,
        r.best_score_min,
        r.best_rf1,
        grid.cells(),
        rasters.len()
    );
    write_json(&a.out, &json!({"config": config_echo(a, workers), "result": r}))?;
    let mut m = RunManifest::new("tune", config_echo(a, workers));
    m.add_inputs([a.pred_dir.as_path(), a.truth_dir.as_path()])?;
    finish(m, started, &[&a.out], &a.out)
}

fn parse_range(flag: &str, s: &str) -> Result<[u32; 2]> {
    let bad = || Error::Validation(format!("--{flag} expects MIN:MAX in pixels, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok([lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?])
}

fn run_plan(a: &PlanArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let plan = AugPlan {
        native_gsd: a.gsd,
        tile_size_px: a.tile_px,
        crop_range_px: parse_range("crop", &a.crop)?,
        resize_range_px: parse_range("resize", &a.resize)?,
        fallback: !a.no_fallback,
    };
    plan.validate()?;
    let extent = effective_extent_range(&plan);
    let gsd = effective_gsd_range(&plan);
    let report = json!({
        "plan": plan,
        "extent_m": extent,
        "extent_label": format_extent(&extent),
        "gsd_range_m": gsd,
        "gsd_range_cm_label": format_gsd_cm(gsd),
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "gsd {} cm/px | tile {} px | crop [{}, {}] px | resize [{}, {}] px | extent {} m | resolution {} cm/px",
            fmt_1dp(a.gsd * 100.0),
            plan.tile_size_px,
            plan.crop_range_px[0],
            plan.crop_range_px[1],
            plan.resize_range_px[0],
            plan.resize_range_px[1],
            format_extent(&extent),
            format_gsd_cm(gsd),
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        finish(RunManifest::new("plan", config_echo(a, workers)), started, &[out], out)?;
    }
    Ok(())
}

fn run_synth(a: &SynthArgs, workers: Option<usize>, started: Instant) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        raster_id: a.raster_id.clone(),
        extent_m: a.extent,
        gsd: a.gsd,
        n_crowns: a.crowns,
        crown_median_m: a.crown_median,
        crown_log_sigma: a.crown_sigma,
        crown_min_m: a.crown_min,
        crown_max_m: a.crown_max,
        edge_margin_m: a.margin,
        max_gt_iou: a.max_iou,
        jitter_sigma_m: a.jitter,
        drop_prob: a.drop,
        spurious_rate: a.spurious,
        ..SynthConfig::default()
    };
    let scene = gen_scene(&cfg)?;
    create_dir(&a.out)?;
    let id = &cfg.raster_id;
    let raster_path = a.out.join(format!("{id}.png"));
    let truth_path = a.out.join(format!("{id}.geojson"));
    let dets_path = a.out.join(format!("{id}.detections.geojson"));
    write_png(&raster_path, &scene.raster, &scene.pixels)?;
    write_annotations(&truth_path, &cfg.crs, &scene.annotations)?;
    write_detections(&dets_path, &cfg.crs, &perturb(&scene.annotations, &cfg))?;
    println!("{} crowns -> {}", scene.annotations.len(), a.out.display());
    if let Some(tile_px) = a.tile_px {
        let tcfg = TilingConfig {
            tile_size_px: tile_px,
            overlap: a.overlap,
            ..TilingConfig::default()
        };
        let index_name = format!("{id}.coco.json");
        let records = Tiler::new(&scene, tcfg)?
            .write_to_dir_as(&a.out, &index_name)
            .context("writing tiles")?;
        write_tile_detections(&a.out.join(format!("{id}.json")), &perturb_tiles(&records, &cfg))?;
        println!("{} tiles", records.len());
    }
    finish(RunManifest::new("synth", config_echo(a, workers)), started, &[&a.out], &a.out)
}
