use std::collections::BTreeMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::AnalysisConfig;
use super::ingest::FacilityRecord;
use super::report::{CellReport, FacilityAggregate, Provenance, Report, StageError};
use crate::csr::{dispersion_test, mc_envelope_with};
use crate::decomp::{decompose, ExponentTable};
use crate::error::{Error, Result};
use crate::geoproj::{project, PlanarPoint};
use crate::grid::{count_points, subarea_stats_with};
use crate::pointgen::RandomSeed;
use crate::taylor::{aggregate_fit, classify_exponent, fit_taylor, select_top_cities, CityDataset};

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed for a cell: the master seed mixed with a hash of its labels, so a
/// cell's random numbers do not depend on which other cells are present.
pub fn cell_seed(master: u64, city: &str, facility: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(city.as_bytes());
    h.update([0u8]);
    h.update(facility.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn config_hash(config: &AnalysisConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

pub fn input_digest(records: &[FacilityRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(format!("{}\0{}\0{}\0{}\n", r.city, r.facility, r.lng, r.lat).as_bytes());
    }
    hex::encode(h.finalize())
}

fn run_cell(city: &str, facility: &str, points: &[PlanarPoint], n_records: usize, config: &AnalysisConfig) -> CellReport {
    let seed = cell_seed(config.seed, city, facility);
    let mut cell = CellReport {
        city: city.to_string(),
        facility: facility.to_string(),
        seed,
        n_records,
        n_in_window: 0,
        dispersion: None,
        pairs: Vec::new(),
        fit: None,
        regime: None,
        envelope: None,
        errors: Vec::new(),
    };
    let counts = match count_points(points, &config.grid) {
        Ok(c) => c,
        Err(e) => {
            cell.errors.push(StageError::new("count", &e));
            return cell;
        }
    };
    cell.n_in_window = counts.total_in_window;
    match dispersion_test(&counts) {
        Ok(d) => cell.dispersion = Some(d),
        Err(e) => cell.errors.push(StageError::new("dispersion", &e)),
    }
    match subarea_stats_with(&counts, config.min_nonzero, config.variance_estimator) {
        Ok(pairs) => cell.pairs = pairs,
        Err(e) => cell.errors.push(StageError::new("subarea_stats", &e)),
    }
    match fit_taylor(&cell.pairs) {
        Ok(f) => {
            cell.regime = Some(classify_exponent(&f, config.poisson_band).regime);
            cell.fit = Some(f);
        }
        Err(e) => cell.errors.push(StageError::new("taylor", &e)),
    }
    if config.envelope.enabled {
        let window = config.grid.window();
        let inside: Vec<PlanarPoint> = points.iter().copied().filter(|p| window.contains(p)).collect();
        let env = &config.envelope;
        match mc_envelope_with(&inside, &window, env.sims, RandomSeed::new(seed, 0), &env.r_grid(), env.null_model) {
            Ok(r) => cell.envelope = Some(r),
            Err(e) => cell.errors.push(StageError::new("envelope", &e)),
        }
    }
    cell
}

/// Run the full analysis. Cells are processed in parallel and merged in
/// (city, facility) order; a failing stage is recorded on its cell and
/// does not stop the others.
pub fn run_pipeline(records: &[FacilityRecord], config: &AnalysisConfig) -> Result<Report> {
    config.validate()?;
    let earth = config.earth();

    let mut groups: BTreeMap<(&str, &str), Vec<&FacilityRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.city.as_str(), r.facility.as_str())).or_default().push(r);
    }
    let mut missing: Vec<&str> = groups.keys().map(|k| k.0).filter(|c| !config.centers.contains_key(*c)).collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::Config(format!("no center configured for: {}", missing.join(", "))));
    }

    let cells: Vec<CellReport> = groups
        .par_iter()
        .map(|(&(city, facility), recs)| {
            let center = config.center(city).expect("checked above");
            let points: Result<Vec<PlanarPoint>> = recs.iter().map(|r| project(&center, &r.coordinate(), &earth)).collect();
            match points {
                Ok(p) => run_cell(city, facility, &p, recs.len(), config),
                Err(e) => {
                    let mut c = run_cell(city, facility, &[], recs.len(), config);
                    c.errors.insert(0, StageError::new("projection", &e));
                    c
                }
            }
        })
        .collect();

    let mut by_facility: BTreeMap<&str, Vec<CityDataset>> = BTreeMap::new();
    for c in &cells {
        by_facility.entry(c.facility.as_str()).or_default().push(CityDataset {
            city: c.city.clone(),
            total: c.n_in_window,
            pairs: c.pairs.clone(),
        });
    }
    let aggregates = by_facility
        .into_iter()
        .map(|(facility, data)| {
            let cities = select_top_cities(&data, config.rank_cutoff).iter().map(|d| d.city.clone()).collect();
            let (fit, error) = match aggregate_fit(&data, config.rank_cutoff) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(StageError::new("aggregate", &e))),
            };
            FacilityAggregate {
                facility: facility.to_string(),
                cities,
                regime: fit.as_ref().map(|f| classify_exponent(f, config.poisson_band).regime),
                fit,
                error,
            }
        })
        .collect();

    let exponent_table = build_table(&cells);
    let (decomposition, decomposition_error) = if exponent_table.present_count() == 0 {
        (None, None)
    } else {
        match decompose(&exponent_table, config.gauge) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(StageError::new("decomposition", &e))),
        }
    };

    Ok(Report {
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(config)?,
            seed: config.seed,
            input_digest: input_digest(records),
            n_records: records.len(),
        },
        cells,
        aggregates,
        exponent_table,
        decomposition,
        decomposition_error,
    })
}

/// Exponent table of the fitted cells with a finite positive b, labels sorted.
fn build_table(cells: &[CellReport]) -> ExponentTable {
    let usable: Vec<(&str, &str, f64)> = cells
        .iter()
        .filter_map(|c| c.fit.map(|f| (c.city.as_str(), c.facility.as_str(), f.b)))
        .filter(|t| t.2.is_finite() && t.2 > 0.0)
        .collect();
    let mut cities: Vec<String> = usable.iter().map(|t| t.0.to_string()).collect();
    let mut facilities: Vec<String> = usable.iter().map(|t| t.1.to_string()).collect();
    cities.sort();
    cities.dedup();
    facilities.sort();
    facilities.dedup();
    let mut t = ExponentTable::new(cities, facilities);
    for (c, f, b) in usable {
        let (i, j) = (t.city_index(c).unwrap(), t.facility_index(f).unwrap());
        t.set(i, j, b).expect("b filtered to be positive");
    }
    t
}
