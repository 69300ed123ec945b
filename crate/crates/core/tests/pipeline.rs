use crownbench::aggregator::{aggregate, frames_from_index, AggregationConfig};
use crownbench::geometry::GeoBox;
use crownbench::metrics::raster_f1;
use crownbench::synth::{gen_scene, perturb_tiles, SynthConfig};
use crownbench::tiler::{load_coco, CocoIndex, Tiler, TilingConfig};

fn scene_cfg(seed: u64, n: usize) -> SynthConfig {
    SynthConfig {
        seed,
        extent_m: 200.0,
        gsd: 0.2,
        n_crowns: n,
        crown_median_m: 6.0,
        crown_max_m: 20.0,
        ..SynthConfig::default()
    }
}

fn tiling(overlap: f64) -> TilingConfig {
    TilingConfig {
        tile_size_px: 200,
        overlap,
        ..TilingConfig::default()
    }
}

fn run(cfg: &SynthConfig, overlap: f64, dir: Option<&std::path::Path>) -> f64 {
    let scene = gen_scene(cfg).unwrap();
    let tiler = Tiler::new(&scene, tiling(overlap)).unwrap();
    let records = match dir {
        Some(d) => {
            tiler.write_to_dir(d).unwrap();
            load_coco(&d.join("coco.json")).unwrap().records
        }
        None => tiler.tiles().into_iter().map(|t| t.record).collect(),
    };
    let dets = perturb_tiles(&records, cfg);
    let frames = frames_from_index(&CocoIndex { records });
    let agg = AggregationConfig { score_min: 0.0, nms_iou: 0.5, ..AggregationConfig::default() };
    let merged = aggregate(&dets, &frames, &agg).unwrap();
    let (b, s): (Vec<GeoBox>, Vec<f64>) = merged.iter().map(|d| (d.bbox, d.score)).unzip();
    let gts: Vec<GeoBox> = scene.annotations.iter().map(|a| a.bbox).collect();
    raster_f1("synth", &b, &s, &gts, 0.75).f1
}

#[test]
fn zero_noise_round_trip_is_exact() {
    assert_eq!(run(&scene_cfg(11, 150), 0.75, None), 1.0);
}

#[test]
fn zero_noise_through_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&scene_cfg(12, 80), 0.75, Some(dir.path())), 1.0);
}

#[test]
fn noise_lowers_f1() {
    let cfg = SynthConfig { jitter_sigma_m: 1.0, drop_prob: 0.2, spurious_rate: 0.3, ..scene_cfg(13, 100) };
    assert!(run(&cfg, 0.75, None) < 1.0);
}
