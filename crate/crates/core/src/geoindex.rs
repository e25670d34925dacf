//! Coordinates, hexagonal regions, zip codes and slippy-map tiles.
//!
//! Regions are H3 cells at a fixed resolution of 7 (edge ≈ 2.604 km,
//! area ≈ 5.161 km²).

use std::fmt;

use h3o::{CellIndex, LatLng, Resolution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution of every region in a study.
pub const REGION_RESOLUTION: u8 = 7;
/// Edge length of a resolution-7 hexagon in kilometres.
pub const REGION_EDGE_KM: f64 = 2.604;
/// Zoom level of the map tiles.
pub const TILE_ZOOM: u32 = 14;
/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Latitude limit of the Web-Mercator projection.
pub const MAX_MERCATOR_LAT: f64 = 85.0511;

/// A resolution-7 hexagonal cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(CellIndex);

impl RegionId {
    /// Raw 64-bit H3 index.
    pub fn cell(self) -> u64 {
        u64::from(self.0)
    }

    pub fn resolution(self) -> u8 {
        u8::from(self.0.resolution())
    }

    /// Rebuilds a region from its raw index, rejecting invalid cells and
    /// cells at another resolution.
    pub fn from_cell(cell: u64) -> Result<Self> {
        let idx = CellIndex::try_from(cell)
            .map_err(|e| Error::validation(format!("invalid cell index {cell:#x}: {e}")))?;
        if idx.resolution() != Resolution::Seven {
            return Err(Error::validation(format!(
                "cell {cell:#x} has resolution {}, expected {REGION_RESOLUTION}",
                u8::from(idx.resolution())
            )));
        }
        Ok(RegionId(idx))
    }
}

impl fmt::Debug for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RegionId({})", self.0)
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for RegionId {
    type Err = Error;

    /// Parses the hexadecimal form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let cell = u64::from_str_radix(s, 16)
            .map_err(|e| Error::validation(format!("bad region id {s:?}: {e}")))?;
        RegionId::from_cell(cell)
    }
}

impl Serialize for RegionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for RegionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
        return Err(Error::validation(format!("latitude {lat} out of range")));
    }
    if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
        return Err(Error::validation(format!("longitude {lon} out of range")));
    }
    Ok(())
}

/// Returns the resolution-7 hexagon containing `(lat, lon)`.
pub fn locate_region(lat: f64, lon: f64) -> Result<RegionId> {
    check_coords(lat, lon)?;
    let ll = LatLng::new(lat, lon).map_err(|e| Error::validation(e.to_string()))?;
    Ok(RegionId(ll.to_cell(Resolution::Seven)))
}

/// Geographic centroid of a region, as `(lat, lon)` in degrees.
pub fn region_center(r: RegionId) -> (f64, f64) {
    let ll = LatLng::from(r.0);
    (ll.lat(), ll.lng())
}

/// Haversine great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Centroid of a zip code area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipCentroid {
    pub zip: String,
    pub lat: f64,
    pub lon: f64,
}

impl ZipCentroid {
    pub fn new(zip: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        let zip = zip.into();
        if zip.len() != 5 || !zip.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::validation(format!("zip {zip:?} is not a 5-digit code")));
        }
        check_coords(lat, lon)?;
        Ok(Self { zip, lat, lon })
    }
}

/// Zip code whose centroid is closest to the region center. Ties go to the
/// lexicographically smallest zip, so the result does not depend on the
/// table order.
pub fn assign_zip(r: RegionId, table: &[ZipCentroid]) -> Result<&str> {
    let (lat, lon) = region_center(r);
    nearest_zip(lat, lon, table)
}

pub(crate) fn nearest_zip(lat: f64, lon: f64, table: &[ZipCentroid]) -> Result<&str> {
    let mut best: Option<(f64, &str)> = None;
    for z in table {
        let d = haversine_km(lat, lon, z.lat, z.lon);
        best = match best {
            Some((bd, bz)) if d > bd || (d == bd && bz <= z.zip.as_str()) => Some((bd, bz)),
            _ => Some((d, z.zip.as_str())),
        };
    }
    best.map(|(_, z)| z)
        .ok_or_else(|| Error::validation("zip table is empty"))
}

/// Slippy-map tile address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub zoom: u32,
    pub x: u32,
    pub y: u32,
}

/// Web-Mercator tile containing `(lat, lon)` at `zoom`.
pub fn tile_coords(lat: f64, lon: f64, zoom: u32) -> Result<TileCoord> {
    check_coords(lat, lon)?;
    if lat.abs() >= MAX_MERCATOR_LAT {
        return Err(Error::validation(format!(
            "latitude {lat} outside the Web-Mercator range"
        )));
    }
    if zoom > 30 {
        return Err(Error::validation(format!("zoom {zoom} too large")));
    }
    let n = f64::from(1u32 << zoom);
    let max = (1u32 << zoom) - 1;
    let x = ((lon + 180.0) / 360.0 * n).floor();
    let y = ((1.0 - lat.to_radians().tan().asinh() / std::f64::consts::PI) / 2.0 * n).floor();
    // lon == 180 lands one past the last column
    Ok(TileCoord {
        zoom,
        x: (x.max(0.0) as u32).min(max),
        y: (y.max(0.0) as u32).min(max),
    })
}

/// Tile under the center of a region at the study zoom.
pub fn region_tile(r: RegionId) -> Result<TileCoord> {
    let (lat, lon) = region_center(r);
    tile_coords(lat, lon, TILE_ZOOM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HOUSTON: (f64, f64) = (29.7604, -95.3698);

    #[test]
    fn round_trip_through_center() {
        let c = locate_region(HOUSTON.0, HOUSTON.1).unwrap();
        let (lat, lon) = region_center(c);
        assert_eq!(locate_region(lat, lon).unwrap(), c);
        assert_eq!(c.resolution(), 7);
        assert_eq!(region_center(c), region_center(c));
        assert_eq!(RegionId::from_cell(c.cell()).unwrap(), c);
    }

    #[test]
    fn nearby_points_share_region() {
        let c = locate_region(HOUSTON.0, HOUSTON.1).unwrap();
        let (lat, lon) = region_center(c);
        // ~1 m north
        let d = 1.0 / 111_195.0;
        assert_eq!(locate_region(lat + d, lon).unwrap(), c);
        assert_eq!(locate_region(lat, lon + d).unwrap(), c);
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(locate_region(91.0, 0.0).is_err());
        assert!(locate_region(0.0, -181.0).is_err());
        assert!(locate_region(f64::NAN, 0.0).is_err());
        assert!(RegionId::from_cell(0).is_err());
    }

    #[test]
    fn rejects_other_resolutions() {
        let ll = LatLng::new(HOUSTON.0, HOUSTON.1).unwrap();
        let c8 = u64::from(ll.to_cell(Resolution::Eight));
        assert!(RegionId::from_cell(c8).is_err());
    }

    #[test]
    fn region_serde_uses_hex_string() {
        let c = locate_region(HOUSTON.0, HOUSTON.1).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, format!("\"{c}\""));
        let back: RegionId = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tile_coords_known_values() {
        assert_eq!(
            tile_coords(0.0, 0.0, 14).unwrap(),
            TileCoord { zoom: 14, x: 8192, y: 8192 }
        );
        // slippy formula evaluated with 40-digit arithmetic: x = 3851.614, y = 6772.209
        assert_eq!(
            tile_coords(HOUSTON.0, HOUSTON.1, 14).unwrap(),
            TileCoord { zoom: 14, x: 3851, y: 6772 }
        );
        assert_eq!(tile_coords(45.0, -180.0 + 1e-9, 14).unwrap().x, 0);
        assert_eq!(tile_coords(45.0, 180.0, 14).unwrap().x, (1 << 14) - 1);
        assert!(tile_coords(85.06, 0.0, 14).is_err());
        assert!(tile_coords(-85.06, 0.0, 14).is_err());
    }

    #[test]
    fn assign_zip_edge_cases() {
        let c = locate_region(HOUSTON.0, HOUSTON.1).unwrap();
        let (lat, lon) = region_center(c);
        let one = vec![ZipCentroid::new("77002", 10.0, 10.0).unwrap()];
        assert_eq!(assign_zip(c, &one).unwrap(), "77002");
        let exact = vec![
            ZipCentroid::new("77010", lat + 0.01, lon).unwrap(),
            ZipCentroid::new("77005", lat, lon).unwrap(),
        ];
        assert_eq!(assign_zip(c, &exact).unwrap(), "77005");
        // equidistant: lexicographic winner regardless of order
        let tie = vec![
            ZipCentroid::new("77099", lat, lon).unwrap(),
            ZipCentroid::new("77001", lat, lon).unwrap(),
        ];
        assert_eq!(assign_zip(c, &tie).unwrap(), "77001");
        assert!(assign_zip(c, &[]).is_err());
        assert!(ZipCentroid::new("7700", 0.0, 0.0).is_err());
    }

    #[test]
    fn haversine_quarter_meridian() {
        let d = haversine_km(0.0, 0.0, 90.0, 0.0);
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    fn brute_force_zip(lat: f64, lon: f64, table: &[ZipCentroid]) -> String {
        // exhaustive scan with an explicit sort on (distance, zip)
        let mut scored: Vec<(f64, String)> = table
            .iter()
            .map(|z| {
                let (p1, p2) = (lat.to_radians(), z.lat.to_radians());
                let h = ((p2 - p1) / 2.0).sin().powi(2)
                    + p1.cos() * p2.cos() * ((z.lon - lon).to_radians() / 2.0).sin().powi(2);
                (2.0 * 6371.0088 * h.sqrt().asin(), z.zip.clone())
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scored[0].1.clone()
    }

    proptest! {
        #[test]
        fn point_within_edge_of_center(lat in -80.0f64..80.0, lon in -179.9f64..179.9) {
            let r = locate_region(lat, lon).unwrap();
            let (clat, clon) = region_center(r);
            prop_assert!(haversine_km(lat, lon, clat, clon) <= REGION_EDGE_KM);
        }

        #[test]
        fn assign_zip_matches_scan_and_ignores_order(
            pts in proptest::collection::vec((29.0f64..30.5, -96.0f64..-95.0), 5),
            q in (29.0f64..30.5, -96.0f64..-95.0),
        ) {
            let table: Vec<ZipCentroid> = pts.iter().enumerate()
                .map(|(i, (la, lo))| ZipCentroid::new(format!("7700{i}"), *la, *lo).unwrap())
                .collect();
            let r = locate_region(q.0, q.1).unwrap();
            let (clat, clon) = region_center(r);
            let expect = brute_force_zip(clat, clon, &table);
            prop_assert_eq!(assign_zip(r, &table).unwrap(), expect.as_str());
            let mut rev = table.clone();
            rev.reverse();
            prop_assert_eq!(assign_zip(r, &rev).unwrap(), expect.as_str());
        }

        #[test]
        fn tile_monotone(lat in -80.0f64..80.0, dlat in 0.0f64..5.0, lon in -179.0f64..170.0, dlon in 0.0f64..9.0) {
            let a = tile_coords(lat, lon, 14).unwrap();
            let b = tile_coords(lat - dlat, lon + dlon, 14).unwrap();
            prop_assert!(b.y >= a.y);
            prop_assert!(b.x >= a.x);
            prop_assert!(a.x < 1 << 14 && a.y < 1 << 14);
        }
    }
}
