//! Builds the model-ready dataset under each split kind and writes the
//! container to disk.

use crashformer::dataset::{
    DatasetInputs, Part, SplitKind, SplitSpec, build_dataset, read_dataset, region_demographics, region_tiles,
    stats_report, write_dataset,
};
use crashformer::featurize::{CityData, DEFAULT_WEATHER_RADIUS_KM, build_feature_table};
use crashformer::ingest::{TileSource, load_accidents, load_demographics, load_weather};
use crashformer::synth::{WorldConfig, WorldFiles, generate_world};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = WorldConfig { n_regions: 12, n_days: 14, ..WorldConfig::default() };
    generate_world(&cfg, dir.path())?;
    let f = WorldFiles::in_dir(dir.path());
    let city = CityData {
        accidents: load_accidents(&f.accidents)?.records,
        weather: load_weather(&f.weather)?.records,
        epoch: cfg.epoch(),
        n_windows: cfg.n_windows(),
        weather_radius_km: DEFAULT_WEATHER_RADIUS_KM,
    };
    let table = build_feature_table(&city)?;
    let (zips, _) = load_demographics(&f.demographics)?;
    let demographics = region_demographics(&table.regions, &zips)?;
    let tiles = region_tiles(&table.regions, &f.tile_cache, &TileSource::Offline)?;

    let cutoff = table.window(table.n_windows * 3 / 4).start();
    for spec in [
        SplitSpec::random(7),
        SplitSpec { kind: SplitKind::Temporal { cutoff }, seed: 7 },
        SplitSpec { kind: SplitKind::Spatial { region_fraction: 0.7 }, seed: 7 },
    ] {
        let ds = build_dataset(
            &table,
            &DatasetInputs {
                k: 4,
                split: &spec,
                demographics: &demographics,
                tiles: &tiles,
                tile_shape: [32, 32],
                class_weights: None,
                min_target_window: 0,
            },
        )?;
        let n = |p| ds.indices(p).len();
        println!(
            "{:?}: train {} / val {} / test {}, class weights {:?}",
            spec.kind,
            n(Part::Train),
            n(Part::Val),
            n(Part::Test),
            ds.class_weights
        );
        if matches!(spec.kind, SplitKind::Random { .. }) {
            let stats = stats_report(&ds.samples);
            println!("  {} samples, positive rate {:.2}%", stats.n_samples, 100.0 * stats.positive_rate);
            let out = dir.path().join("dataset");
            write_dataset(&ds, &out)?;
            assert_eq!(read_dataset(&out)?, ds);
            println!("  container written to {} and read back unchanged", out.display());
        }
    }
    Ok(())
}
