#![allow(dead_code)]

use std::collections::BTreeMap;

use facility_taylor::geoproj::{unproject, CityCenter, EarthModel, GeoCoordinate, PlanarPoint};
use facility_taylor::pipeline::{AnalysisConfig, FacilityRecord};
use facility_taylor::pointgen::{gen_thomas, RandomSeed, ThomasParams, WindowRegion};

pub const FACILITIES: [&str; 7] = [
    "beauty_salon",
    "bank",
    "stadium",
    "school",
    "pharmacy",
    "convenience_store",
    "restaurant",
];

/// About 50 parents in the 40 km window, 20 children each, 500 m scatter.
pub fn thomas_calibration(window: &WindowRegion) -> ThomasParams {
    ThomasParams {
        parent_intensity: 50.0 / window.area(),
        mean_offspring: 20.0,
        dispersion: 500.0,
    }
}

pub fn city_name(i: usize) -> String {
    format!("City{i:02}")
}

/// Distinct, well-separated synthetic centers.
pub fn city_center(i: usize) -> GeoCoordinate {
    GeoCoordinate {
        lng: 100.0 + 2.0 * (i % 10) as f64,
        lat: 25.0 + 3.0 * (i / 10) as f64,
    }
}

pub fn records_for(center: &CityCenter, facility: &str, points: &[PlanarPoint]) -> Vec<FacilityRecord> {
    let earth = EarthModel::default();
    points
        .iter()
        .map(|p| {
            let g = unproject(center, p, &earth).expect("window is reachable");
            FacilityRecord {
                city: center.name.clone(),
                facility: facility.to_string(),
                lng: g.lng,
                lat: g.lat,
                line: 0,
            }
        })
        .collect()
}

/// `n_cities` × 7 facilities of Thomas patterns, with a config carrying
/// the matching centers. Each cell draws from its own stream of `seed`.
pub fn thomas_corpus(n_cities: usize, seed: u64) -> (Vec<FacilityRecord>, AnalysisConfig) {
    let mut cfg = AnalysisConfig::default();
    cfg.seed = seed;
    cfg.centers = BTreeMap::new();
    let window = cfg.grid.window();
    let params = thomas_calibration(&window);
    let mut records = Vec::new();
    for i in 0..n_cities {
        let center = CityCenter {
            name: city_name(i),
            center: city_center(i),
        };
        cfg.centers.insert(center.name.clone(), center.center);
        for (j, fac) in FACILITIES.iter().enumerate() {
            let pts = gen_thomas(&params, &window, RandomSeed::new(seed, (i * FACILITIES.len() + j) as u64)).unwrap();
            records.extend(records_for(&center, fac, &pts));
        }
    }
    for (k, r) in records.iter_mut().enumerate() {
        r.line = k as u64 + 2;
    }
    (records, cfg)
}
