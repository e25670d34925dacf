//! Synthetic cities with planted accident risk.
//!
//! Per region `r` and window `w` the accident probability is
//! `σ(logit(base_rate) + w_hist·recent + w_weather·storm + w_demo·risk_r + w_img·density_r)`
//! where `recent` counts positive windows among the previous four, `storm`
//! is 1 when a storm record within the weather radius overlaps the window,
//! `risk_r` is demographic feature 0 and `density_r` is the share of the
//! maximum number of road segments drawn on the region's tile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::{DEFAULT_WEATHER_RADIUS_KM, TimeWindow, WINDOWS_PER_DAY, weather_overlaps};
use crate::geoindex::{RegionId, haversine_km, locate_region, region_center, region_tile};
use crate::ingest::{
    AccidentRecord, DEMO_DIM, DemographicRecord, N_POI, TILE_SIZE, WeatherKind, WeatherRecord, store_tile,
    write_accidents, write_demographics, write_weather,
};
use crate::{Error, Result};

/// Segments drawn on a tile of density 1.
pub const MAX_SEGMENTS: usize = 40;
/// Number of previous windows in the history term.
pub const RECENT_WINDOWS: usize = 4;
pub const N_STATIONS: usize = 2;
/// Demographic features 1.. are mixtures of a few shared latent factors plus
/// a small per-feature term, like correlated census columns.
pub const DEMO_FACTORS: usize = 4;
pub const DEMO_IDIOSYNCRATIC: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub w_hist: f64,
    pub w_weather: f64,
    pub w_demo: f64,
    pub w_img: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Self {
            w_hist: 0.6,
            w_weather: 1.0,
            w_demo: 1.5,
            w_img: 2.5,
        }
    }
}

impl Signal {
    pub const NONE: Signal = Signal {
        w_hist: 0.0,
        w_weather: 0.0,
        w_demo: 0.0,
        w_img: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_regions: usize,
    pub n_days: usize,
    pub seed: u64,
    pub base_rate: f64,
    pub signal: Signal,
    pub city_bbox: BBox,
    /// First study day.
    pub start: NaiveDate,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_regions: 50,
            n_days: 120,
            seed: 0,
            base_rate: 0.04,
            signal: Signal::default(),
            city_bbox: BBox {
                lat_min: 29.60,
                lat_max: 30.00,
                lon_min: -95.60,
                lon_max: -95.20,
            },
            start: NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date"),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::validation("base_rate must lie in (0, 1)"));
        }
        if self.n_regions < 2 {
            return Err(Error::validation("a world needs at least two regions"));
        }
        if self.n_days == 0 {
            return Err(Error::validation("a world needs at least one day"));
        }
        let s = self.signal;
        if [s.w_hist, s.w_weather, s.w_demo, s.w_img].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("signal weights must be finite and ≥ 0"));
        }
        let b = self.city_bbox;
        if !(b.lat_min < b.lat_max && b.lon_min < b.lon_max) || b.lat_min.abs() > 80.0 || b.lat_max.abs() > 80.0 {
            return Err(Error::validation("city_bbox must be a non-empty rectangle within ±80° latitude"));
        }
        Ok(())
    }

    pub fn n_windows(&self) -> usize {
        WINDOWS_PER_DAY * self.n_days
    }

    pub fn epoch(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).expect("midnight")
    }
}

/// What the generator planted in one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub region: RegionId,
    pub zip: String,
    pub risk: f64,
    pub n_segments: usize,
    pub road_density: f64,
    /// Sampled occurrence per window as a string of `0`/`1`.
    pub labels: String,
    pub n_accidents: usize,
}

/// `world.json`: the generator's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub config: WorldConfig,
    pub epoch: String,
    pub n_windows: usize,
    pub stations: Vec<(f64, f64)>,
    pub regions: Vec<RegionTruth>,
}

impl WorldManifest {
    pub fn labels(&self, region: usize) -> Vec<u8> {
        self.regions[region].labels.bytes().map(|b| b - b'0').collect()
    }

    pub fn positive_rate(&self) -> f64 {
        let (pos, n) = self.regions.iter().fold((0, 0), |(p, n), r| {
            (p + r.labels.bytes().filter(|&b| b == b'1').count(), n + r.labels.len())
        });
        pos as f64 / n as f64
    }
}

/// Paths of a generated world.
#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub accidents: PathBuf,
    pub weather: PathBuf,
    pub demographics: PathBuf,
    pub tile_cache: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
}

impl WorldFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            accidents: dir.join("accidents.csv"),
            weather: dir.join("weather.csv"),
            demographics: dir.join("demographics.csv"),
            tile_cache: dir.join("tiles"),
            truth: dir.join("truth.json"),
            manifest: dir.join("world.json"),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Distinct regions with distinct tiles, drawn from uniform points in the box.
fn pick_regions(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<RegionId>> {
    let b = cfg.city_bbox;
    let mut regions = BTreeMap::new();
    let mut tiles = std::collections::BTreeSet::new();
    let mut attempts = 0;
    while regions.len() < cfg.n_regions {
        attempts += 1;
        if attempts > 1000 * cfg.n_regions {
            return Err(Error::validation(format!(
                "city_bbox holds fewer than {} regions with distinct tiles",
                cfg.n_regions
            )));
        }
        let lat = rng.random_range(b.lat_min..b.lat_max);
        let lon = rng.random_range(b.lon_min..b.lon_max);
        let r = locate_region(lat, lon)?;
        let t = region_tile(r)?;
        if !regions.contains_key(&r) && tiles.insert(t) {
            regions.insert(r, ());
        }
    }
    Ok(regions.into_keys().collect())
}

fn stations(cfg: &WorldConfig) -> Vec<(f64, f64)> {
    let b = cfg.city_bbox;
    (1..=N_STATIONS)
        .map(|i| {
            let f = i as f64 / (N_STATIONS + 1) as f64;
            (b.lat_min + f * (b.lat_max - b.lat_min), b.lon_min + f * (b.lon_max - b.lon_min))
        })
        .collect()
}

/// Alternating gaps and events at each station, on whole hours.
fn weather_events(cfg: &WorldConfig, stations: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<WeatherRecord> {
    let end = cfg.epoch() + Duration::days(cfg.n_days as i64);
    let mut out = Vec::new();
    for &(lat, lon) in stations {
        let mut t = cfg.epoch() + Duration::hours(rng.random_range(0..48));
        while t < end {
            let dur = Duration::hours(rng.random_range(1..=12));
            let kind = if rng.random_bool(0.35) {
                WeatherKind::Storm
            } else {
                [WeatherKind::Rain, WeatherKind::Fog, WeatherKind::Cold, WeatherKind::Other][rng.random_range(0..4)]
            };
            let wet = matches!(kind, WeatherKind::Rain | WeatherKind::Storm);
            out.push(WeatherRecord {
                station_lat: lat,
                station_lon: lon,
                start: t,
                end: t + dur,
                kind,
                severity: rng.random_range(1..=4) as f64,
                precipitation: if wet { rng.random_range(1..=300) as f64 / 10.0 } else { 0.0 },
            });
            t += dur + Duration::hours(rng.random_range(12..=96));
        }
    }
    out
}

/// Storm flag per window for a region, with the same overlap and radius
/// rules as featurization.
fn storm_flags(r: RegionId, cfg: &WorldConfig, weather: &[WeatherRecord]) -> Vec<bool> {
    let (lat, lon) = region_center(r);
    let near: Vec<&WeatherRecord> = weather
        .iter()
        .filter(|w| w.kind == WeatherKind::Storm)
        .filter(|w| haversine_km(lat, lon, w.station_lat, w.station_lon) <= DEFAULT_WEATHER_RADIUS_KM)
        .collect();
    (0..cfg.n_windows())
        .map(|i| {
            let tw = TimeWindow {
                index: i as u32,
                epoch: cfg.epoch(),
            };
            near.iter().any(|w| weather_overlaps(w, &tw))
        })
        .collect()
}

fn stamp(px: &mut [u8], x: f64, y: f64, color: [u8; 3]) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (px_x, px_y) = (cx + dx, cy + dy);
            if (0..TILE_SIZE as i64).contains(&px_x) && (0..TILE_SIZE as i64).contains(&px_y) {
                let o = (px_y as usize * TILE_SIZE + px_x as usize) * 3;
                px[o..o + 3].copy_from_slice(&color);
            }
        }
    }
}

/// 256×256 RGB: textured green background with `n_segments` 3-pixel roads.
pub fn draw_tile(n_segments: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut px = Vec::with_capacity(TILE_SIZE * TILE_SIZE * 3);
    for _ in 0..TILE_SIZE * TILE_SIZE {
        let n: i16 = rng.random_range(-8..=8);
        for base in [70i16, 100, 64] {
            px.push((base + n) as u8);
        }
    }
    let hi = TILE_SIZE as f64 - 1.0;
    for _ in 0..n_segments {
        let (x0, y0) = (rng.random_range(0.0..hi), rng.random_range(0.0..hi));
        let (x1, y1) = (rng.random_range(0.0..hi), rng.random_range(0.0..hi));
        let steps = (((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() * 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            stamp(&mut px, x0 + f * (x1 - x0), y0 + f * (y1 - y0), [238, 236, 224]);
        }
    }
    px
}

/// A point near the region center that still falls in the region.
fn accident_point(r: RegionId, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (lat, lon) = region_center(r);
    let (jl, jo) = (rng.random_range(-0.004..0.004), rng.random_range(-0.004..0.004));
    if locate_region(lat + jl, lon + jo).is_ok_and(|x| x == r) {
        (lat + jl, lon + jo)
    } else {
        (lat, lon)
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(&serde_json::to_value(v)?)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a world to `out_dir`: the three input CSVs, a tile cache,
/// `truth.json` (region → per-window probability) and `world.json`.
pub fn generate_world(cfg: &WorldConfig, out_dir: &Path) -> Result<WorldManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = WorldFiles::in_dir(out_dir);
    let epoch = cfg.epoch();
    let t_count = cfg.n_windows();

    let regions = pick_regions(cfg, &mut rng_for(cfg.seed, 0))?;
    let stations = stations(cfg);
    let weather = weather_events(cfg, &stations, &mut rng_for(cfg.seed, 1));

    let mut static_rng = rng_for(cfg.seed, 2);
    let mut tile_rng = rng_for(cfg.seed, 3);
    let mut event_rng = rng_for(cfg.seed, 4);
    let mut loading_rng = rng_for(cfg.seed, 5);
    let loadings: Vec<[f64; DEMO_FACTORS]> =
        (1..DEMO_DIM).map(|_| std::array::from_fn(|_| loading_rng.random_range(-1.0..1.0))).collect();
    let base = logit(cfg.base_rate);
    let s = cfg.signal;

    let mut truth = BTreeMap::new();
    let mut truths = Vec::with_capacity(regions.len());
    let mut demographics = Vec::with_capacity(regions.len());
    let mut accidents = Vec::new();
    for (i, &r) in regions.iter().enumerate() {
        let risk: f64 = static_rng.random_range(-1.0..1.0);
        let n_segments = static_rng.random_range(0..=MAX_SEGMENTS);
        let density = n_segments as f64 / MAX_SEGMENTS as f64;
        let mut features = vec![risk];
        let factors: [f64; DEMO_FACTORS] = std::array::from_fn(|_| static_rng.random_range(-1.0..1.0));
        features.extend(loadings.iter().map(|l| {
            let common: f64 = l.iter().zip(&factors).map(|(a, b)| a * b).sum();
            common + DEMO_IDIOSYNCRATIC * static_rng.random_range(-1.0..1.0)
        }));
        let zip = format!("{:05}", 70000 + i);
        let (clat, clon) = region_center(r);
        demographics.push(DemographicRecord {
            zip: zip.clone(),
            lat: clat,
            lon: clon,
            features,
        });
        store_tile(&files.tile_cache, region_tile(r)?, &draw_tile(n_segments, &mut tile_rng))?;

        let storms = storm_flags(r, cfg, &weather);
        let mut probs = Vec::with_capacity(t_count);
        let mut labels = String::with_capacity(t_count);
        let mut n_acc = 0;
        for (w, &storm) in storms.iter().enumerate() {
            let recent = labels.as_bytes()[w.saturating_sub(RECENT_WINDOWS)..w]
                .iter()
                .filter(|&&b| b == b'1')
                .count() as f64;
            let z = base
                + s.w_hist * recent
                + s.w_weather * f64::from(u8::from(storm))
                + s.w_demo * risk
                + s.w_img * density;
            let p = sigmoid(z);
            probs.push(p);
            let hit = event_rng.random_bool(p);
            labels.push(if hit { '1' } else { '0' });
            if !hit {
                continue;
            }
            let start = epoch + Duration::hours(6 * w as i64);
            let count = 1 + usize::from(event_rng.random_bool(0.3));
            for _ in 0..count {
                let (lat, lon) = accident_point(r, &mut event_rng);
                let mut poi_flags = [false; N_POI];
                poi_flags.iter_mut().for_each(|f| *f = event_rng.random_bool(0.15));
                accidents.push(AccidentRecord {
                    timestamp: start + Duration::seconds(event_rng.random_range(0..6 * 3600)),
                    lat,
                    lon,
                    severity: event_rng.random_range(1..=4) as f64,
                    poi_flags,
                });
            }
            n_acc += count;
        }
        truth.insert(r.to_string(), probs);
        truths.push(RegionTruth {
            region: r,
            zip,
            risk,
            n_segments,
            road_density: density,
            labels,
            n_accidents: n_acc,
        });
    }
    accidents.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.lat.total_cmp(&b.lat)));

    write_accidents(&files.accidents, &accidents)?;
    write_weather(&files.weather, &weather)?;
    write_demographics(&files.demographics, &demographics)?;
    write_json(&files.truth, &truth)?;
    let manifest = WorldManifest {
        config: cfg.clone(),
        epoch: crate::ingest::format_timestamp(&epoch),
        n_windows: t_count,
        stations,
        regions: truths,
    };
    write_json(&files.manifest, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<WorldManifest> {
    let p = WorldFiles::in_dir(dir).manifest;
    Ok(serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?)
}

pub fn read_truth(dir: &Path) -> Result<BTreeMap<RegionId, Vec<f64>>> {
    let p = WorldFiles::in_dir(dir).truth;
    let raw: BTreeMap<String, Vec<f64>> =
        serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
    raw.into_iter().map(|(k, v)| Ok((k.parse()?, v))).collect()
}

/// Best F1_1 attainable by anyone who knows the planted probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub expected_positive_rate: f64,
    /// Expected F1_1 of predicting 1 exactly when p > 0.5.
    pub bayes_f1_1: f64,
    /// Expected F1_1 of the best threshold on p.
    pub optimal_f1_1: f64,
    pub optimal_threshold: f64,
}

/// F1_1 in expectation, taken as `2·E[TP] / (E[predicted] + E[positives])`,
/// for each rule "predict 1 iff p ≥ t". Windows below `min_window` are
/// skipped so the population can match the model's samples.
pub fn oracle_from_truth(truth: &BTreeMap<RegionId, Vec<f64>>, min_window: usize) -> Result<OracleReport> {
    let mut p: Vec<f64> = truth.values().flat_map(|v| v.iter().skip(min_window).copied()).collect();
    if p.is_empty() {
        return Err(Error::validation("truth has no windows to score"));
    }
    let total: f64 = p.iter().sum();
    let expected_f1 = |tp: f64, m: usize| if m == 0 && total == 0.0 { 0.0 } else { 2.0 * tp / (m as f64 + total) };
    let bayes_f1_1 = {
        let sel: Vec<f64> = p.iter().copied().filter(|&x| x > 0.5).collect();
        expected_f1(sel.iter().sum(), sel.len())
    };
    p.sort_by(|a, b| b.total_cmp(a));
    let (mut best, mut best_t, mut tp) = (0.0, 1.0, 0.0);
    let mut m = 0;
    while m < p.len() {
        // take every probability tied with p[m] together
        let t = p[m];
        while m < p.len() && p[m] == t {
            tp += p[m];
            m += 1;
        }
        let f = expected_f1(tp, m);
        if f > best {
            best = f;
            best_t = t;
        }
    }
    Ok(OracleReport {
        n: p.len(),
        expected_positive_rate: total / p.len() as f64,
        bayes_f1_1,
        optimal_f1_1: best.max(bayes_f1_1),
        optimal_threshold: best_t,
    })
}

/// Reads `truth.json` from a world directory and scores every window.
pub fn world_oracle(dir: &Path) -> Result<OracleReport> {
    oracle_from_truth(&read_truth(dir)?, 0)
}
