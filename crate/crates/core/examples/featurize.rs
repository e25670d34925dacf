//! Turns accident and weather records into the per-region, per-window
//! feature table.

use chrono::NaiveDate;
use crashformer::featurize::{
    CityData, DEFAULT_WEATHER_RADIUS_KM, N_FEATURES, SLOT_OCCURRED, build_feature_table, is_us_federal_holiday,
};
use crashformer::ingest::{AccidentRecord, N_POI, WeatherKind, WeatherRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epoch = NaiveDate::from_ymd_opt(2021, 7, 3).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let at = |h: i64| epoch + chrono::Duration::hours(h);
    let mut poi_flags = [false; N_POI];
    poi_flags[0] = true;
    let accidents = vec![
        AccidentRecord { timestamp: at(8), lat: 29.7604, lon: -95.3698, severity: 2.0, poi_flags },
        AccidentRecord { timestamp: at(9), lat: 29.7610, lon: -95.3690, severity: 4.0, poi_flags: [false; N_POI] },
        AccidentRecord { timestamp: at(30), lat: 29.70, lon: -95.45, severity: 1.0, poi_flags: [false; N_POI] },
    ];
    let weather = vec![WeatherRecord {
        station_lat: 29.75,
        station_lon: -95.36,
        start: at(5),
        end: at(13),
        kind: WeatherKind::Rain,
        severity: 2.0,
        precipitation: 4.5,
    }];
    let city = CityData { accidents, weather, epoch, n_windows: 8, weather_radius_km: DEFAULT_WEATHER_RADIUS_KM };
    let table = build_feature_table(&city)?;
    println!("{} regions x {} windows x {N_FEATURES} features", table.regions.len(), table.n_windows);
    for (ri, r) in table.regions.iter().enumerate() {
        let labels: String = (0..table.n_windows).map(|w| char::from(b'0' + table.label(ri, w))).collect();
        println!("region {r}: labels {labels}");
    }
    println!("region 0, window 1: {:?}", table.row(0, 1));
    println!("slot {SLOT_OCCURRED} is the occurrence flag");
    // rule dates only: the Monday after a Sunday holiday is an ordinary day
    for d in [NaiveDate::from_ymd_opt(2021, 7, 4).unwrap(), NaiveDate::from_ymd_opt(2021, 7, 5).unwrap()] {
        println!("{d} holiday: {}", is_us_federal_holiday(d));
    }
    Ok(())
}
