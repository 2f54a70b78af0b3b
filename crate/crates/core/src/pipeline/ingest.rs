use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoproj::GeoCoordinate;

pub const INPUT_HEADER: [&str; 4] = ["city", "facility", "lng", "lat"];

/// One facility location with the input line it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityRecord {
    pub city: String,
    pub facility: String,
    pub lng: f64,
    pub lat: f64,
    pub line: u64,
}

impl FacilityRecord {
    pub fn coordinate(&self) -> GeoCoordinate {
        GeoCoordinate {
            lng: self.lng,
            lat: self.lat,
        }
    }
}

pub fn ingest_csv(path: &Path) -> Result<Vec<FacilityRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, Some(path))
}

/// Parse `city,facility,lng,lat` rows. `path` only labels error messages.
pub fn ingest_reader<R: Read>(reader: R, path: Option<&Path>) -> Result<Vec<FacilityRecord>> {
    let fail = |line: u64, message: String| Error::Format {
        path: path.map(Path::to_path_buf),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        None => return Err(fail(1, "missing header; expected city,facility,lng,lat".into())),
        Some(h) => h.map_err(|e| fail(1, e.to_string()))?,
    };
    let got: Vec<&str> = header.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
    if got != INPUT_HEADER {
        return Err(fail(1, format!("unexpected header {got:?}; expected city,facility,lng,lat")));
    }

    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != 4 {
            return Err(fail(line, format!("expected 4 fields, found {}", row.len())));
        }
        let (city, facility) = (&row[0], &row[1]);
        if city.is_empty() || facility.is_empty() {
            return Err(fail(line, "city and facility labels must be non-empty".into()));
        }
        let num = |name: &str, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(line, format!("{name} {s:?} is not a finite number")))
        };
        let (lng, lat) = (num("lng", &row[2])?, num("lat", &row[3])?);
        GeoCoordinate { lng, lat }
            .validate()
            .map_err(|e| fail(line, e.to_string()))?;
        out.push(FacilityRecord {
            city: city.to_string(),
            facility: facility.to_string(),
            lng,
            lat,
            line,
        });
    }
    Ok(out)
}

/// Write records in the input schema.
pub fn write_records<W: std::io::Write>(records: &[FacilityRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INPUT_HEADER)?;
    for r in records {
        w.write_record([r.city.as_str(), r.facility.as_str(), &r.lng.to_string(), &r.lat.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
