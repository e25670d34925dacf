//! Runs the modality ablation on a synthetic city and renders the report.

use crashformer::dataset::{region_demographics, region_tiles};
use crashformer::eval::{ExperimentConfig, ExperimentData, ExperimentKind, report_render, run_experiment};
use crashformer::featurize::{CityData, DEFAULT_WEATHER_RADIUS_KM, build_feature_table};
use crashformer::ingest::{TileSource, load_accidents, load_demographics, load_weather};
use crashformer::model::ModelConfig;
use crashformer::synth::{Signal, WorldConfig, WorldFiles, generate_world};
use crashformer::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind: ExperimentKind = std::env::args().nth(1).as_deref().unwrap_or("ablation").parse()?;
    let dir = tempfile::tempdir()?;
    let world = WorldConfig {
        n_regions: 16,
        n_days: 20,
        signal: Signal { w_hist: 0.5, w_weather: 1.0, w_demo: 1.5, w_img: 2.0 },
        ..WorldConfig::default()
    };
    generate_world(&world, dir.path())?;
    let f = WorldFiles::in_dir(dir.path());
    let city = CityData {
        accidents: load_accidents(&f.accidents)?.records,
        weather: load_weather(&f.weather)?.records,
        epoch: world.epoch(),
        n_windows: world.n_windows(),
        weather_radius_km: DEFAULT_WEATHER_RADIUS_KM,
    };
    let table = build_feature_table(&city)?;
    let (zips, _) = load_demographics(&f.demographics)?;
    let demographics = region_demographics(&table.regions, &zips)?;
    let tiles = region_tiles(&table.regions, &f.tile_cache, &TileSource::Offline)?;
    let data = ExperimentData { table: &table, demographics: &demographics, tiles: &tiles, bank: None };

    let model = ModelConfig { d_model: 16, img_size: 16, img_channels: vec![8, 16], ..ModelConfig::default() };
    let train = TrainConfig { max_epochs: 5, lr_init: 3e-3, ..TrainConfig::default() };
    let out = std::env::temp_dir().join(format!("crashformer-{kind:?}").to_lowercase());
    let report = run_experiment(kind, &data, &model, &train, &ExperimentConfig::default(), &out)?;
    for arm in &report.arms {
        println!("{:<24} F1_1 {:.4}  F1_0 {:.4}  n {}", arm.name, arm.f1_1, arm.f1_0, arm.n);
    }
    for imp in &report.improvements {
        println!("{} over {}: {:+.2}%", imp.reference, imp.arm, imp.percent);
    }
    report_render(&report, &out, &format!("{kind:?}"))?;
    println!("report files in {}", out.display());
    Ok(())
}
