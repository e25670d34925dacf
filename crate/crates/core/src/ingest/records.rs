use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point-of-interest flags in canonical (alphabetical) order.
pub const POI_NAMES: [&str; 13] = [
    "amenity",
    "bump",
    "crossing",
    "give_way",
    "junction",
    "no_exit",
    "railway",
    "roundabout",
    "station",
    "stop",
    "traffic_calming",
    "traffic_signal",
    "turning_loop",
];

pub const N_POI: usize = POI_NAMES.len();
pub const DEMO_DIM: usize = 144;

pub const WEATHER_HEADER: [&str; 7] = [
    "station_lat",
    "station_lon",
    "start",
    "end",
    "kind",
    "severity",
    "precipitation_mm",
];

pub fn accident_header() -> Vec<String> {
    let mut h: Vec<String> = ["timestamp", "lat", "lon", "severity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(POI_NAMES.iter().map(|p| format!("poi_{p}")));
    h
}

pub fn demographics_header() -> Vec<String> {
    let mut h: Vec<String> = ["zip", "lat", "lon"].iter().map(|s| s.to_string()).collect();
    h.extend((0..DEMO_DIM).map(|i| format!("f{i:03}")));
    h
}

/// ISO-8601 civil time without offset, second precision.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in [TIMESTAMP_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::validation(format!("bad timestamp {s:?}")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub severity: f64,
    pub poi_flags: [bool; N_POI],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherKind {
    Rain,
    Fog,
    Cold,
    Snow,
    Storm,
    Hail,
    Other,
}

impl WeatherKind {
    /// Slot among the six kind flags of the feature vector; `Other` has none.
    pub fn flag_slot(self) -> Option<usize> {
        match self {
            WeatherKind::Rain => Some(0),
            WeatherKind::Fog => Some(1),
            WeatherKind::Cold => Some(2),
            WeatherKind::Snow => Some(3),
            WeatherKind::Storm => Some(4),
            WeatherKind::Hail => Some(5),
            WeatherKind::Other => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherKind::Rain => "rain",
            WeatherKind::Fog => "fog",
            WeatherKind::Cold => "cold",
            WeatherKind::Snow => "snow",
            WeatherKind::Storm => "storm",
            WeatherKind::Hail => "hail",
            WeatherKind::Other => "other",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "rain" => WeatherKind::Rain,
            "fog" => WeatherKind::Fog,
            "cold" => WeatherKind::Cold,
            "snow" => WeatherKind::Snow,
            "storm" => WeatherKind::Storm,
            "hail" => WeatherKind::Hail,
            "other" => WeatherKind::Other,
            other => return Err(Error::validation(format!("unknown weather kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub station_lat: f64,
    pub station_lon: f64,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub kind: WeatherKind,
    pub severity: f64,
    pub precipitation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub zip: String,
    pub lat: f64,
    pub lon: f64,
    /// Raw values; missing entries are NaN.
    pub features: Vec<f64>,
}

/// Result of loading one file.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub accepted: usize,
    /// `(1-based data row number, reason)` for every dropped row.
    pub rejected: Vec<(usize, String)>,
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("{name}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::validation(format!("{name}: non-finite value")));
    }
    Ok(v)
}

fn parse_lat_lon(lat: &str, lon: &str) -> Result<(f64, f64)> {
    let lat = parse_f64(lat, "lat")?;
    let lon = parse_f64(lon, "lon")?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::validation(format!("coordinates ({lat}, {lon}) out of range")));
    }
    Ok((lat, lon))
}

fn parse_severity(s: &str) -> Result<f64> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "light" => 1.0,
        "moderate" => 2.0,
        "heavy" => 3.0,
        "severe" => 4.0,
        other => parse_f64(other, "severity")?,
    };
    if !(1.0..=4.0).contains(&v) {
        return Err(Error::validation(format!("severity {v} outside [1, 4]")));
    }
    Ok(v)
}

fn parse_flag(s: &str, name: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::validation(format!("{name}: expected 0/1, got {other:?}"))),
    }
}

pub fn parse_accident_row(row: &csv::StringRecord) -> Result<AccidentRecord> {
    if row.len() != 4 + N_POI {
        return Err(Error::validation(format!("expected {} fields, got {}", 4 + N_POI, row.len())));
    }
    let timestamp = parse_timestamp(&row[0])?;
    let (lat, lon) = parse_lat_lon(&row[1], &row[2])?;
    let severity = parse_severity(&row[3])?;
    let mut poi_flags = [false; N_POI];
    for (i, flag) in poi_flags.iter_mut().enumerate() {
        *flag = parse_flag(&row[4 + i], POI_NAMES[i])?;
    }
    Ok(AccidentRecord {
        timestamp,
        lat,
        lon,
        severity,
        poi_flags,
    })
}

pub fn parse_weather_row(row: &csv::StringRecord) -> Result<WeatherRecord> {
    if row.len() != WEATHER_HEADER.len() {
        return Err(Error::validation(format!("expected 7 fields, got {}", row.len())));
    }
    let (station_lat, station_lon) = parse_lat_lon(&row[0], &row[1])?;
    let start = parse_timestamp(&row[2])?;
    let end = parse_timestamp(&row[3])?;
    if end < start {
        return Err(Error::validation(format!("end {end} before start {start}")));
    }
    let kind = WeatherKind::parse(&row[4])?;
    let severity = parse_severity(&row[5])?;
    let precipitation = parse_f64(&row[6], "precipitation_mm")?;
    if precipitation < 0.0 {
        return Err(Error::validation(format!("negative precipitation {precipitation}")));
    }
    Ok(WeatherRecord {
        station_lat,
        station_lon,
        start,
        end,
        kind,
        severity,
        precipitation,
    })
}

pub fn parse_demographic_row(row: &csv::StringRecord) -> Result<DemographicRecord> {
    if row.len() != 3 + DEMO_DIM {
        return Err(Error::validation(format!("expected {} fields, got {}", 3 + DEMO_DIM, row.len())));
    }
    let zip = row[0].trim().to_string();
    if zip.len() != 5 || !zip.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::validation(format!("zip {zip:?} is not a 5-digit code")));
    }
    let (lat, lon) = parse_lat_lon(&row[1], &row[2])?;
    let features = (0..DEMO_DIM)
        .map(|i| {
            let f = row[3 + i].trim();
            if f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na") {
                Ok(f64::NAN)
            } else {
                parse_f64(f, "feature")
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DemographicRecord {
        zip,
        lat,
        lon,
        features,
    })
}

fn load_csv<T>(
    path: &Path,
    header: &[String],
    parse: impl Fn(&csv::StringRecord) -> Result<T>,
) -> Result<Loaded<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if got != header {
        return Err(Error::Csv {
            path: path.into(),
            message: format!(
                "header mismatch: expected {} columns [{}...], got {} columns [{}...]",
                header.len(),
                header.iter().take(4).cloned().collect::<Vec<_>>().join(","),
                got.len(),
                got.iter().take(4).cloned().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let outcome = row
            .map_err(|e| Error::validation(e.to_string()))
            .and_then(|r| parse(&r));
        match outcome {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("{}: row {}: {e}", path.display(), i + 1);
                rejected.push((i + 1, e.to_string()));
            }
        }
    }
    let total = records.len() + rejected.len();
    if rejected.len() * 100 > total {
        return Err(Error::TooManyMalformed {
            path: path.into(),
            rejected: rejected.len(),
            total,
            first: format!("row {}: {}", rejected[0].0, rejected[0].1),
        });
    }
    log::info!(
        "{}: accepted {}, rejected {}",
        path.display(),
        records.len(),
        rejected.len()
    );
    Ok(Loaded {
        accepted: records.len(),
        records,
        rejected,
    })
}

pub fn load_accidents(path: impl AsRef<Path>) -> Result<Loaded<AccidentRecord>> {
    load_csv(path.as_ref(), &accident_header(), parse_accident_row)
}

pub fn load_weather(path: impl AsRef<Path>) -> Result<Loaded<WeatherRecord>> {
    let header: Vec<String> = WEATHER_HEADER.iter().map(|s| s.to_string()).collect();
    load_csv(path.as_ref(), &header, parse_weather_row)
}

/// Loads demographics keyed by zip. Duplicate zips are a hard error.
pub fn load_demographics(
    path: impl AsRef<Path>,
) -> Result<(BTreeMap<String, DemographicRecord>, Loaded<()>)> {
    let loaded = load_csv(path.as_ref(), &demographics_header(), parse_demographic_row)?;
    let mut map = BTreeMap::new();
    for rec in loaded.records {
        if map.contains_key(&rec.zip) {
            return Err(Error::DuplicateZip(rec.zip));
        }
        map.insert(rec.zip.clone(), rec);
    }
    let summary = Loaded {
        records: Vec::new(),
        accepted: loaded.accepted,
        rejected: loaded.rejected,
    };
    Ok((map, summary))
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.into(),
        message: e.to_string(),
    }
}

pub fn write_accidents(path: impl AsRef<Path>, recs: &[AccidentRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(accident_header()).map_err(|e| csv_err(path, e))?;
    for r in recs {
        let mut row = vec![
            format_timestamp(&r.timestamp),
            fmt_num(r.lat),
            fmt_num(r.lon),
            fmt_num(r.severity),
        ];
        row.extend(r.poi_flags.iter().map(|&f| if f { "1" } else { "0" }.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_weather(path: impl AsRef<Path>, recs: &[WeatherRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(WEATHER_HEADER).map_err(|e| csv_err(path, e))?;
    for r in recs {
        w.write_record([
            fmt_num(r.station_lat),
            fmt_num(r.station_lon),
            format_timestamp(&r.start),
            format_timestamp(&r.end),
            r.kind.as_str().to_string(),
            fmt_num(r.severity),
            fmt_num(r.precipitation),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_demographics(path: impl AsRef<Path>, recs: &[DemographicRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(demographics_header()).map_err(|e| csv_err(path, e))?;
    for r in recs {
        if r.features.len() != DEMO_DIM {
            return Err(Error::validation(format!(
                "zip {} has {} features, expected {DEMO_DIM}",
                r.zip,
                r.features.len()
            )));
        }
        let mut row = vec![r.zip.clone(), fmt_num(r.lat), fmt_num(r.lon)];
        row.extend(r.features.iter().map(|&v| fmt_num(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn acc_header_line() -> String {
        accident_header().join(",")
    }

    #[test]
    fn empty_accident_file() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", &format!("{}\n", acc_header_line()));
        let l = load_accidents(&p).unwrap();
        assert!(l.records.is_empty());
        assert_eq!(l.accepted, 0);
    }

    #[test]
    fn three_handwritten_accidents() {
        let d = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n\
             2016-06-21T07:30:00,29.7604,-95.3698,2,0,0,1,0,0,0,0,0,0,0,0,0,0\n\
             2016-06-21T13:05:10,29.75,-95.36,4,1,0,0,0,0,0,0,0,0,0,0,1,0\n\
             2017-01-02 00:00:00,29.8,-95.4,1.5,0,0,0,0,0,0,0,0,0,0,0,0,1\n",
            acc_header_line()
        );
        let p = write(d.path(), "a.csv", &body);
        let l = load_accidents(&p).unwrap();
        assert_eq!(l.records.len(), 3);
        let r0 = &l.records[0];
        assert_eq!(r0.timestamp, parse_timestamp("2016-06-21T07:30:00").unwrap());
        assert_eq!(r0.lat, 29.7604);
        assert_eq!(r0.lon, -95.3698);
        assert_eq!(r0.severity, 2.0);
        let mut flags = [false; 13];
        flags[2] = true;
        assert_eq!(r0.poi_flags, flags);
        let mut flags1 = [false; 13];
        flags1[0] = true;
        flags1[11] = true;
        assert_eq!(l.records[1].poi_flags, flags1);
        assert_eq!(l.records[1].severity, 4.0);
        assert_eq!(l.records[2].severity, 1.5);
        assert!(l.records[2].poi_flags[12]);
        // determinism
        assert_eq!(load_accidents(&p).unwrap().records, l.records);
    }

    #[test]
    fn severity_out_of_range_is_rejected() {
        let row = csv::StringRecord::from(
            "2016-06-21T07:30:00,29.7,-95.3,7,0,0,0,0,0,0,0,0,0,0,0,0,0"
                .split(',')
                .collect::<Vec<_>>(),
        );
        let err = parse_accident_row(&row).unwrap_err();
        assert!(err.to_string().contains("severity"));

        // one bad row among 200 stays under the 1% limit and is reported
        let d = tempfile::tempdir().unwrap();
        let mut body = acc_header_line() + "\n";
        for i in 0..200 {
            let sev = if i == 57 { 7 } else { 2 };
            body += &format!("2016-06-21T07:30:00,29.7,-95.3,{sev},0,0,0,0,0,0,0,0,0,0,0,0,0\n");
        }
        let l = load_accidents(write(d.path(), "a.csv", &body)).unwrap();
        assert_eq!(l.accepted, 199);
        assert_eq!(l.rejected.len(), 1);
        assert_eq!(l.rejected[0].0, 58);
        assert!(l.rejected[0].1.contains("severity"));
    }

    #[test]
    fn too_many_bad_rows_fail() {
        let d = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n2016-06-21T07:30:00,29.7,-95.3,7,0,0,0,0,0,0,0,0,0,0,0,0,0\n\
             2016-06-21T07:30:00,29.7,-95.3,2,0,0,0,0,0,0,0,0,0,0,0,0,0\n",
            acc_header_line()
        );
        let err = load_accidents(write(d.path(), "a.csv", &body)).unwrap_err();
        assert!(matches!(err, Error::TooManyMalformed { rejected: 1, total: 2, .. }));
    }

    #[test]
    fn bad_header_and_missing_file() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", "timestamp,lat,lon\n");
        assert!(matches!(load_accidents(&p), Err(Error::Csv { .. })));
        assert!(matches!(load_accidents(d.path().join("nope.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn weather_end_before_start_rejected() {
        let row = csv::StringRecord::from(vec![
            "29.9", "-95.3", "2016-06-21T10:00:00", "2016-06-21T09:00:00", "rain", "2", "1.5",
        ]);
        assert!(parse_weather_row(&row).is_err());
        let ok = csv::StringRecord::from(vec![
            "29.9", "-95.3", "2016-06-21T09:00:00", "2016-06-21T10:00:00", "Rain", "Moderate", "1.5",
        ]);
        let w = parse_weather_row(&ok).unwrap();
        assert_eq!(w.kind, WeatherKind::Rain);
        assert_eq!(w.severity, 2.0);
        let neg = csv::StringRecord::from(vec![
            "29.9", "-95.3", "2016-06-21T09:00:00", "2016-06-21T10:00:00", "rain", "2", "-1",
        ]);
        assert!(parse_weather_row(&neg).is_err());
    }

    fn demo_line(zip: &str, n: usize) -> String {
        let mut s = format!("{zip},29.7,-95.3");
        for i in 0..n {
            s += &format!(",{i}");
        }
        s
    }

    #[test]
    fn demographics_arity_and_duplicates() {
        let d = tempfile::tempdir().unwrap();
        let header = demographics_header().join(",");
        let ok = format!("{header}\n{}\n{}\n", demo_line("77001", 144), demo_line("77002", 144));
        let (m, _) = load_demographics(write(d.path(), "d.csv", &ok)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["77002"].features[143], 143.0);

        // 143 feature columns: header mismatch
        let short_header = demographics_header()[..146].join(",");
        let short = format!("{short_header}\n{}\n", demo_line("77001", 143));
        assert!(load_demographics(write(d.path(), "s.csv", &short)).is_err());

        let dup = format!("{header}\n{}\n{}\n", demo_line("77001", 144), demo_line("77001", 144));
        match load_demographics(write(d.path(), "dup.csv", &dup)) {
            Err(Error::DuplicateZip(z)) => assert_eq!(z, "77001"),
            other => panic!("expected duplicate zip error, got {other:?}"),
        }
    }

    #[test]
    fn demographics_missing_values_become_nan() {
        let d = tempfile::tempdir().unwrap();
        let header = demographics_header().join(",");
        let mut line = "77001,29.7,-95.3,".to_string();
        line += &vec!["1"; 143].join(",");
        line += ",";
        let (m, _) = load_demographics(write(d.path(), "d.csv", &format!("{header}\n{line}\n"))).unwrap();
        assert!(m["77001"].features[143].is_nan());
    }

    #[test]
    fn writers_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let acc = vec![AccidentRecord {
            timestamp: parse_timestamp("2020-02-03T04:05:06").unwrap(),
            lat: 29.123456789,
            lon: -95.987654321,
            severity: 3.0,
            poi_flags: [true, false, true, false, false, false, false, false, false, false, false, false, true],
        }];
        write_accidents(d.path().join("a.csv"), &acc).unwrap();
        assert_eq!(load_accidents(d.path().join("a.csv")).unwrap().records, acc);
        let w = vec![WeatherRecord {
            station_lat: 29.9,
            station_lon: -95.3,
            start: parse_timestamp("2020-02-03T04:05:06").unwrap(),
            end: parse_timestamp("2020-02-03T09:00:00").unwrap(),
            kind: WeatherKind::Storm,
            severity: 4.0,
            precipitation: 0.1 + 0.2,
        }];
        write_weather(d.path().join("w.csv"), &w).unwrap();
        assert_eq!(load_weather(d.path().join("w.csv")).unwrap().records, w);
    }
}
