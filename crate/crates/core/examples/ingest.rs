//! Loads the three input tables with row validation and resolves map tiles
//! from a cache.

use crashformer::geoindex::locate_region;
use crashformer::ingest::{N_POI, TileSource, fetch_tile, load_accidents, load_demographics, load_weather};
use crashformer::synth::{WorldConfig, WorldFiles, generate_world};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_world(&WorldConfig { n_regions: 20, n_days: 30, ..WorldConfig::default() }, dir.path())?;
    let files = WorldFiles::in_dir(dir.path());

    // one broken row; a single bad row in a large file is dropped, not fatal
    let mut csv = std::fs::read_to_string(&files.accidents)?;
    csv.push_str(&format!("2021-03-02T07:15:00,not-a-latitude,-95.4,2{}\n", ",0".repeat(N_POI)));
    std::fs::write(&files.accidents, csv)?;

    let acc = load_accidents(&files.accidents)?;
    println!("accidents: {} accepted, {} rejected", acc.accepted, acc.rejected.len());
    for (row, why) in &acc.rejected {
        println!("  row {row}: {why}");
    }
    let weather = load_weather(&files.weather)?;
    println!("weather: {} accepted", weather.accepted);
    let (zips, loaded) = load_demographics(&files.demographics)?;
    println!("demographics: {} zip codes, {} accepted", zips.len(), loaded.accepted);

    let a = &acc.records[0];
    let tile = fetch_tile(locate_region(a.lat, a.lon)?, &files.tile_cache, &TileSource::Offline)?;
    println!("tile for region {}: {} bytes of RGB", tile.region, tile.pixels.len());
    Ok(())
}
