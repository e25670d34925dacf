//! Trains the full model on a synthetic city, saves a checkpoint and scores
//! the held-out part.

use crashformer::dataset::{DatasetInputs, Part, SplitSpec, build_dataset, region_demographics, region_tiles};
use crashformer::eval::{argmax_labels, f1_per_class, load_network, save_network};
use crashformer::featurize::{CityData, DEFAULT_WEATHER_RADIUS_KM, build_feature_table};
use crashformer::ingest::{TileSource, load_accidents, load_demographics, load_weather};
use crashformer::model::{Ablation, CrashFormer, ModelConfig, TileBank};
use crashformer::synth::{Signal, WorldConfig, WorldFiles, generate_world, world_oracle};
use crashformer::train::{TrainConfig, predict_indices, train_network};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let world = WorldConfig {
        n_regions: 20,
        n_days: 30,
        base_rate: 0.05,
        signal: Signal { w_hist: 0.0, w_weather: 1.0, w_demo: 2.0, w_img: 2.0 },
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
    let model_cfg = ModelConfig { d_model: 16, img_size: 16, img_channels: vec![8, 16], ..ModelConfig::default() };
    let ds = build_dataset(
        &table,
        &DatasetInputs {
            k: model_cfg.history_len,
            split: &SplitSpec::random(1),
            demographics: &region_demographics(&table.regions, &zips)?,
            tiles: &region_tiles(&table.regions, &f.tile_cache, &TileSource::Offline)?,
            tile_shape: [model_cfg.img_size, model_cfg.img_size],
            class_weights: None,
            min_target_window: 0,
        },
    )?;
    let bank = TileBank::load(&ds, model_cfg.img_size)?;

    let train = TrainConfig { max_epochs: 15, lr_init: 3e-3, seed: 1, ..TrainConfig::default() };
    let (net, history) = train_network(CrashFormer::new(model_cfg, Ablation::FULL, 1)?, &ds, &bank, &train)?;
    for e in &history.epochs {
        println!("epoch {:>2}: train {:.4}  val {:.4}  lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    println!("kept epoch {} (val {:.4})", history.best_epoch, history.best_val_loss);

    let ckpt = dir.path().join("model.ckpt");
    save_network(&net, &ckpt)?;
    let restored = load_network(&ckpt)?;
    let test = ds.indices(Part::Test);
    let probs = predict_indices(restored.as_ref(), &ds, &bank, &test);
    let labels: Vec<u8> = test.iter().map(|&i| ds.samples[i].label).collect();
    let m = f1_per_class(&argmax_labels(&probs), &labels)?;
    println!("test F1_1 {:.4}, F1_0 {:.4}", m.f1_1, m.f1_0);
    println!("oracle F1_1 {:.4}", world_oracle(dir.path())?.optimal_f1_1);
    Ok(())
}
