//! Region lookup, distances, zip assignment and map tile addressing.

use crashformer::geoindex::{ZipCentroid, assign_zip, haversine_km, locate_region, region_center, region_tile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (lat, lon) = (29.7604, -95.3698);
    let r = locate_region(lat, lon)?;
    let (clat, clon) = region_center(r);
    println!("({lat}, {lon}) -> region {r}, center ({clat:.5}, {clon:.5})");
    println!("point to center: {:.3} km", haversine_km(lat, lon, clat, clon));

    let zips = vec![ZipCentroid::new("77002", 29.7563, -95.3652)?, ZipCentroid::new("77019", 29.7528, -95.4090)?];
    println!("nearest zip: {}", assign_zip(r, &zips)?);

    let t = region_tile(r)?;
    println!("map tile z={} x={} y={}", t.zoom, t.x, t.y);
    Ok(())
}
