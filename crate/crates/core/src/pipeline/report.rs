use std::fs;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::csr::{DispersionTestResult, EnvelopeResult};
use crate::decomp::{DecompositionResult, ExponentTable};
use crate::error::{Error, ErrorClass, Result};
use crate::grid::MeanVariancePair;
use crate::taylor::{ExponentRegime, TaylorFit};

/// A failure confined to one stage of one cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    /// `config`, `data` or `numeric`.
    pub class: String,
    /// Short machine-readable kind, e.g. `insufficient_data`.
    pub kind: String,
    pub message: String,
}

impl StageError {
    pub fn new(stage: &str, err: &Error) -> Self {
        let class = match err.class() {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        };
        let kind = match err {
            Error::Domain(_) => "domain",
            Error::DegenerateGrid(_) => "degenerate_grid",
            Error::EmptyWindow => "empty_window",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateRegressor => "degenerate_regressor",
            Error::Identifiability { .. } => "identifiability",
            Error::DegenerateCell { .. } => "degenerate_cell",
            Error::CurveFamily(_) => "curve_family",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        };
        StageError {
            stage: stage.to_string(),
            class: class.to_string(),
            kind: kind.to_string(),
            message: err.to_string(),
        }
    }
}

/// Results for one (city, facility) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub city: String,
    pub facility: String,
    /// Seed of this cell's envelope simulations.
    pub seed: u64,
    pub n_records: usize,
    pub n_in_window: usize,
    pub dispersion: Option<DispersionTestResult>,
    /// Retained sub-area (mean, variance) pairs.
    pub pairs: Vec<MeanVariancePair>,
    pub fit: Option<TaylorFit>,
    pub regime: Option<ExponentRegime>,
    pub envelope: Option<EnvelopeResult>,
    pub errors: Vec<StageError>,
}

/// Pooled fit for one facility over its top-ranked cities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityAggregate {
    pub facility: String,
    pub cities: Vec<String>,
    pub fit: Option<TaylorFit>,
    pub regime: Option<ExponentRegime>,
    pub error: Option<StageError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    /// SHA-256 of the configuration serialized as JSON.
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 over the ingested records in input order.
    pub input_digest: String,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<FacilityAggregate>,
    /// Per-city exponents b_ij of every successfully fitted cell.
    pub exponent_table: ExponentTable,
    pub decomposition: Option<DecompositionResult>,
    pub decomposition_error: Option<StageError>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn cell(&self, city: &str, facility: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.city == city && c.facility == facility)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    All,
}

/// File-name-safe form of a label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(f)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn regime_label(r: Option<ExponentRegime>) -> &'static str {
    match r {
        Some(ExponentRegime::Random) => "random",
        Some(ExponentRegime::Poisson) => "poisson",
        Some(ExponentRegime::Clumped) => "clumped",
        None => "",
    }
}

pub const FITS_HEADER: [&str; 15] = [
    "scope", "city", "facility", "n_points", "log_a", "b", "se_log_a", "se_b", "t_log_a", "t_b", "p_log_a", "p_b",
    "r_squared", "regime", "in_table",
];

fn fit_row(scope: &str, city: &str, facility: &str, fit: Option<&TaylorFit>, regime: Option<ExponentRegime>, in_table: bool) -> Vec<String> {
    let f = |g: fn(&TaylorFit) -> f64| opt(fit.map(g));
    vec![
        scope.to_string(),
        city.to_string(),
        facility.to_string(),
        fit.map(|x| x.n_points.to_string()).unwrap_or_default(),
        f(|x| x.log_a),
        f(|x| x.b),
        f(|x| x.se_log_a),
        f(|x| x.se_b),
        f(|x| x.t_log_a),
        f(|x| x.t_b),
        f(|x| x.p_log_a),
        f(|x| x.p_b),
        f(|x| x.r_squared),
        regime_label(regime).to_string(),
        in_table.to_string(),
    ]
}

/// `fits.csv`: one `city` row per cell, then one `aggregate` row per facility.
/// Floats are written in shortest round-trip form.
pub fn write_fits_csv<W: std::io::Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FITS_HEADER)?;
    let table = &report.exponent_table;
    for c in &report.cells {
        let in_table = match (table.city_index(&c.city), table.facility_index(&c.facility)) {
            (Some(i), Some(j)) => table.get(i, j).is_some(),
            _ => false,
        };
        w.write_record(fit_row("city", &c.city, &c.facility, c.fit.as_ref(), c.regime, in_table))?;
    }
    for a in &report.aggregates {
        w.write_record(fit_row("aggregate", "", &a.facility, a.fit.as_ref(), a.regime, false))?;
    }
    w.flush().map_err(|e| Error::io("fits.csv", e))?;
    Ok(())
}

/// `taylor_points.csv`: every usable (log m, log S²) point with its cell.
pub fn write_taylor_points_csv<W: std::io::Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["log_m", "log_s2", "city", "facility"])?;
    for c in &report.cells {
        for p in &c.pairs {
            if p.mean > 0.0 && p.variance > 0.0 {
                w.write_record([p.mean.ln().to_string(), p.variance.ln().to_string(), c.city.clone(), c.facility.clone()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("taylor_points.csv", e))?;
    Ok(())
}

/// Write `report.json` and/or the CSV extracts into `dir`, which is
/// created if missing. Returns the paths written.
pub fn emit_report(report: &Report, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Json | OutputFormat::All) {
        let path = dir.join("report.json");
        let mut body = report.to_json()?;
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if matches!(format, OutputFormat::Csv | OutputFormat::All) {
        let (path, w) = create(dir, "taylor_points.csv")?;
        write_taylor_points_csv(report, w)?;
        written.push(path);

        let (path, w) = create(dir, "fits.csv")?;
        write_fits_csv(report, w)?;
        written.push(path);

        let (path, w) = create(dir, "decomposition.csv")?;
        match &report.decomposition {
            Some(d) => d.write_csv(w)?,
            None => {
                let mut w = csv::Writer::from_writer(w);
                w.write_record(["kind", "label", "value"])?;
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
        }
        written.push(path);

        for c in &report.cells {
            if let Some(env) = &c.envelope {
                let name = format!("envelope_{}_{}.csv", slug(&c.city), slug(&c.facility));
                let (path, w) = create(dir, &name)?;
                env.write_csv(w)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Read an exponent table from either a `city,facility,b` CSV or a
/// `fits.csv`; in the latter only `city` rows marked `in_table` are used.
/// Cities and facilities are ordered by label.
pub fn read_exponent_table<R: Read>(reader: R) -> Result<ExponentTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ci, fi, bi) = match (col("city"), col("facility"), col("b")) {
        (Some(c), Some(f), Some(b)) => (c, f, b),
        _ => {
            return Err(Error::Format {
                path: None,
                line: 1,
                message: "exponent table needs city, facility and b columns".into(),
            })
        }
    };
    let (scope, in_table) = (col("scope"), col("in_table"));
    let mut triples: Vec<(String, String, f64)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if let Some(s) = scope {
            if &row[s] != "city" {
                continue;
            }
        }
        if let Some(t) = in_table {
            if &row[t] != "true" {
                continue;
            }
        }
        let b: f64 = row[bi].parse().map_err(|_| Error::Format {
            path: None,
            line,
            message: format!("b {:?} is not a number", &row[bi]),
        })?;
        triples.push((row[ci].to_string(), row[fi].to_string(), b));
    }
    let mut cities: Vec<String> = triples.iter().map(|t| t.0.clone()).collect();
    let mut facilities: Vec<String> = triples.iter().map(|t| t.1.clone()).collect();
    cities.sort();
    cities.dedup();
    facilities.sort();
    facilities.dedup();
    let mut table = ExponentTable::new(cities, facilities);
    for (c, f, b) in triples {
        let (i, j) = (table.city_index(&c).unwrap(), table.facility_index(&f).unwrap());
        if table.get(i, j).is_some() {
            return Err(Error::Domain(format!("duplicate cell ({c}, {f})")));
        }
        table.set(i, j, b)?;
    }
    Ok(table)
}

pub fn read_exponent_table_csv(path: &Path) -> Result<ExponentTable> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_exponent_table(f).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::Format {
            path: Some(path.to_path_buf()),
            line,
            message,
        },
        other => other,
    })
}
