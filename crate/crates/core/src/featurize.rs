//! The 27-slot feature vector per (region, 6-hour window) and the dense
//! region × window table built from it.
//!
//! Slot layout:
//!
//! | slots   | content                                                   |
//! |---------|-----------------------------------------------------------|
//! | 0..2    | weather severity mean, precipitation mean                 |
//! | 2..8    | weather kind flags: rain, fog, cold, snow, storm, hail     |
//! | 8..21   | POI flags, alphabetical                                   |
//! | 21..25  | day_of_week/6, day_of_month/31, month/12, is_holiday      |
//! | 25..27  | accident severity mean, occurred                          |

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoindex::{haversine_km, locate_region, region_center, RegionId};
use crate::ingest::{AccidentRecord, WeatherRecord, N_POI};

pub const N_FEATURES: usize = 27;
pub const WINDOW_HOURS: i64 = 6;
pub const WINDOWS_PER_DAY: usize = 4;
pub const DEFAULT_WEATHER_RADIUS_KM: f64 = 30.0;

pub const SLOT_WEATHER_SEVERITY: usize = 0;
pub const SLOT_PRECIPITATION: usize = 1;
pub const SLOT_WEATHER_KIND: usize = 2;
pub const SLOT_POI: usize = 8;
pub const SLOT_TIME: usize = 21;
pub const SLOT_ACCIDENT_SEVERITY: usize = 25;
pub const SLOT_OCCURRED: usize = 26;

const WINDOW_SECONDS: i64 = WINDOW_HOURS * 3600;

/// A 6-hour interval counted from a midnight-aligned study epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub index: u32,
    pub epoch: NaiveDateTime,
}

impl TimeWindow {
    pub fn start(&self) -> NaiveDateTime {
        self.epoch + Duration::hours(WINDOW_HOURS * i64::from(self.index))
    }

    pub fn end(&self) -> NaiveDateTime {
        self.start() + Duration::hours(WINDOW_HOURS)
    }
}

fn check_epoch(epoch: NaiveDateTime) -> Result<()> {
    if epoch.time().num_seconds_from_midnight() != 0 || epoch.nanosecond() != 0 {
        return Err(Error::validation(format!("epoch {epoch} is not aligned to midnight")));
    }
    Ok(())
}

/// Window containing `ts`.
pub fn window_index(ts: NaiveDateTime, epoch: NaiveDateTime) -> Result<TimeWindow> {
    check_epoch(epoch)?;
    if ts < epoch {
        return Err(Error::validation(format!("timestamp {ts} precedes epoch {epoch}")));
    }
    let secs = (ts - epoch).num_seconds();
    let index = u32::try_from(secs / WINDOW_SECONDS)
        .map_err(|_| Error::validation(format!("timestamp {ts} too far after epoch")))?;
    Ok(TimeWindow { index, epoch })
}

/// Number of windows covering the days `first..=last`.
pub fn windows_between(first: NaiveDate, last: NaiveDate) -> usize {
    ((last - first).num_days() + 1).max(0) as usize * WINDOWS_PER_DAY
}

fn nth_weekday(year: i32, month: u32, wd: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, wd, n).expect("valid nth weekday")
}

fn last_weekday(year: i32, month: u32, wd: Weekday) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, wd, 5)
        .unwrap_or_else(|| nth_weekday(year, month, wd, 4))
}

/// US federal holidays on their rule dates; no observed-day shifting.
/// Juneteenth counts from 2021, when it became a federal holiday.
pub fn is_us_federal_holiday(d: NaiveDate) -> bool {
    let y = d.year();
    let fixed = |m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
    let mut days = vec![
        fixed(1, 1),
        nth_weekday(y, 1, Weekday::Mon, 3),
        nth_weekday(y, 2, Weekday::Mon, 3),
        last_weekday(y, 5, Weekday::Mon),
        fixed(7, 4),
        nth_weekday(y, 9, Weekday::Mon, 1),
        nth_weekday(y, 10, Weekday::Mon, 2),
        fixed(11, 11),
        nth_weekday(y, 11, Weekday::Thu, 4),
        fixed(12, 25),
    ];
    if y >= 2021 {
        days.push(fixed(6, 19));
    }
    days.contains(&d)
}

/// Calendar features of the window's start date, unscaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeFeatures {
    /// Monday = 0.
    pub day_of_week: u32,
    pub day_of_month: u32,
    pub month: u32,
    pub is_holiday: bool,
}

impl TimeFeatures {
    /// Scaled as stored in the feature vector.
    pub fn scaled(&self) -> [f64; 4] {
        [
            f64::from(self.day_of_week) / 6.0,
            f64::from(self.day_of_month) / 31.0,
            f64::from(self.month) / 12.0,
            if self.is_holiday { 1.0 } else { 0.0 },
        ]
    }
}

pub fn time_features(w: &TimeWindow) -> TimeFeatures {
    let d = w.start().date();
    TimeFeatures {
        day_of_week: d.weekday().num_days_from_monday(),
        day_of_month: d.day(),
        month: d.month(),
        is_holiday: is_us_federal_holiday(d),
    }
}

/// The 27-slot vector for one region and window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceFeature {
    pub values: [f64; N_FEATURES],
}

impl SequenceFeature {
    pub fn occurred(&self) -> bool {
        self.values[SLOT_OCCURRED] == 1.0
    }
}

/// Aggregates the accidents and weather records already matched to one
/// (region, window). Input order does not change the result beyond
/// floating-point summation order of the means.
pub fn build_feature<'a>(
    w: &TimeWindow,
    accidents: impl IntoIterator<Item = &'a AccidentRecord>,
    weather: impl IntoIterator<Item = &'a WeatherRecord>,
) -> SequenceFeature {
    let mut v = [0.0f64; N_FEATURES];

    let (mut sev_sum, mut precip_sum, mut n_weather) = (0.0, 0.0, 0usize);
    for rec in weather {
        sev_sum += rec.severity;
        precip_sum += rec.precipitation;
        n_weather += 1;
        if let Some(slot) = rec.kind.flag_slot() {
            v[SLOT_WEATHER_KIND + slot] = 1.0;
        }
    }
    if n_weather > 0 {
        v[SLOT_WEATHER_SEVERITY] = sev_sum / n_weather as f64;
        v[SLOT_PRECIPITATION] = precip_sum / n_weather as f64;
    }

    let (mut acc_sum, mut n_acc) = (0.0, 0usize);
    for rec in accidents {
        acc_sum += rec.severity;
        n_acc += 1;
        for (i, &f) in rec.poi_flags.iter().enumerate() {
            if f {
                v[SLOT_POI + i] = 1.0;
            }
        }
    }
    if n_acc > 0 {
        v[SLOT_ACCIDENT_SEVERITY] = acc_sum / n_acc as f64;
        v[SLOT_OCCURRED] = 1.0;
    }

    v[SLOT_TIME..SLOT_TIME + 4].copy_from_slice(&time_features(w).scaled());
    SequenceFeature { values: v }
}

/// 1 iff at least one accident falls in region `r` during `w`.
pub fn label(r: RegionId, w: &TimeWindow, accidents: &[AccidentRecord]) -> u8 {
    let hit = accidents.iter().any(|a| {
        a.timestamp >= w.start()
            && a.timestamp < w.end()
            && locate_region(a.lat, a.lon).is_ok_and(|ra| ra == r)
    });
    u8::from(hit)
}

/// Whether a weather record's `[start, end]` overlaps the half-open window.
pub fn weather_overlaps(rec: &WeatherRecord, w: &TimeWindow) -> bool {
    rec.start < w.end() && rec.end >= w.start()
}

/// Inputs for one city.
#[derive(Debug, Clone)]
pub struct CityData {
    pub accidents: Vec<AccidentRecord>,
    pub weather: Vec<WeatherRecord>,
    /// Midnight of the first study day.
    pub epoch: NaiveDateTime,
    pub n_windows: usize,
    pub weather_radius_km: f64,
}

/// Dense region × window × 27 table plus labels. Regions ascend by cell index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub regions: Vec<RegionId>,
    pub epoch: NaiveDateTime,
    pub n_windows: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
}

impl FeatureTable {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn row(&self, region: usize, window: usize) -> &[f32] {
        let o = (region * self.n_windows + window) * N_FEATURES;
        &self.features[o..o + N_FEATURES]
    }

    pub fn label(&self, region: usize, window: usize) -> u8 {
        self.labels[region * self.n_windows + window]
    }

    pub fn window(&self, index: usize) -> TimeWindow {
        TimeWindow {
            index: index as u32,
            epoch: self.epoch,
        }
    }

    pub fn positive_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as usize).sum::<usize>() as f64 / self.labels.len() as f64
    }
}

fn floor_window(t: NaiveDateTime, epoch: NaiveDateTime) -> i64 {
    (t - epoch).num_seconds().div_euclid(WINDOW_SECONDS)
}

/// Builds the dense table over every region that has at least one accident
/// inside the study period. Parallel over regions, bit-identical to a
/// sequential build.
pub fn build_feature_table(city: &CityData) -> Result<FeatureTable> {
    check_epoch(city.epoch)?;
    let t_count = city.n_windows;
    if t_count == 0 {
        return Err(Error::validation("study period has no windows"));
    }

    // accident -> (region, window), dropping those outside the period
    let mut located = Vec::with_capacity(city.accidents.len());
    for (i, a) in city.accidents.iter().enumerate() {
        let w = floor_window(a.timestamp, city.epoch);
        if w < 0 || w >= t_count as i64 {
            continue;
        }
        located.push((i, locate_region(a.lat, a.lon)?, w as usize));
    }
    let regions: Vec<RegionId> = located
        .iter()
        .map(|&(_, r, _)| r)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if regions.is_empty() {
        return Err(Error::validation("no accidents inside the study period"));
    }

    let mut acc_idx: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); t_count]; regions.len()];
    for &(i, r, w) in &located {
        let ri = regions.binary_search(&r).expect("region collected above");
        acc_idx[ri][w].push(i);
    }

    let weather_windows: Vec<Option<(usize, usize)>> = city
        .weather
        .iter()
        .map(|rec| {
            let first = floor_window(rec.start, city.epoch).max(0);
            let last = floor_window(rec.end, city.epoch).min(t_count as i64 - 1);
            (first <= last).then_some((first as usize, last as usize))
        })
        .collect();

    let per_region: Vec<(Vec<f32>, Vec<u8>)> = regions
        .par_iter()
        .enumerate()
        .map(|(ri, &r)| {
            let (clat, clon) = region_center(r);
            let mut wx_idx: Vec<Vec<usize>> = vec![Vec::new(); t_count];
            for (i, rec) in city.weather.iter().enumerate() {
                let Some((first, last)) = weather_windows[i] else { continue };
                if haversine_km(clat, clon, rec.station_lat, rec.station_lon) > city.weather_radius_km {
                    continue;
                }
                for slot in &mut wx_idx[first..=last] {
                    slot.push(i);
                }
            }
            let mut feats = Vec::with_capacity(t_count * N_FEATURES);
            let mut labels = Vec::with_capacity(t_count);
            for w in 0..t_count {
                let tw = TimeWindow {
                    index: w as u32,
                    epoch: city.epoch,
                };
                let f = build_feature(
                    &tw,
                    acc_idx[ri][w].iter().map(|&i| &city.accidents[i]),
                    wx_idx[w].iter().map(|&i| &city.weather[i]),
                );
                feats.extend(f.values.iter().map(|&x| x as f32));
                labels.push(u8::from(f.occurred()));
            }
            (feats, labels)
        })
        .collect();

    let mut features = Vec::with_capacity(regions.len() * t_count * N_FEATURES);
    let mut labels = Vec::with_capacity(regions.len() * t_count);
    for (f, l) in per_region {
        features.extend(f);
        labels.extend(l);
    }
    Ok(FeatureTable {
        regions,
        epoch: city.epoch,
        n_windows: t_count,
        features,
        labels,
    })
}

#[derive(Serialize, Deserialize)]
struct TableMeta {
    epoch: String,
    n_windows: usize,
    n_features: usize,
    regions: Vec<RegionId>,
}

/// Persists a table as `table.json` + `features.f32` + `labels.u8`.
pub fn write_table(table: &FeatureTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = TableMeta {
        epoch: crate::ingest::format_timestamp(&table.epoch),
        n_windows: table.n_windows,
        n_features: N_FEATURES,
        regions: table.regions.clone(),
    };
    let p = dir.join("table.json");
    std::fs::write(&p, serde_json::to_string_pretty(&serde_json::to_value(&meta)?)?)
        .map_err(|e| Error::io(&p, e))?;
    let bytes: Vec<u8> = table.features.iter().flat_map(|v| v.to_le_bytes()).collect();
    let p = dir.join("features.f32");
    std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("labels.u8");
    std::fs::write(&p, &table.labels).map_err(|e| Error::io(&p, e))
}

pub fn read_table(dir: &Path) -> Result<FeatureTable> {
    let p = dir.join("table.json");
    let meta: TableMeta =
        serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
    let n = meta.regions.len() * meta.n_windows;
    let p = dir.join("features.f32");
    let raw = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if raw.len() != n * N_FEATURES * 4 {
        return Err(Error::Container(format!(
            "features.f32 has {} bytes, expected {}",
            raw.len(),
            n * N_FEATURES * 4
        )));
    }
    let features = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let p = dir.join("labels.u8");
    let labels = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if labels.len() != n {
        return Err(Error::Container(format!("labels.u8 has {} bytes, expected {n}", labels.len())));
    }
    Ok(FeatureTable {
        regions: meta.regions,
        epoch: crate::ingest::parse_timestamp(&meta.epoch)?,
        n_windows: meta.n_windows,
        features,
        labels,
    })
}

#[allow(dead_code)]
const _LAYOUT_CHECK: () = assert!(SLOT_POI + N_POI == SLOT_TIME && SLOT_OCCURRED + 1 == N_FEATURES);
