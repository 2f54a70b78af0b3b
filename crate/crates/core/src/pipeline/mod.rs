//! Ingestion, configuration, end-to-end orchestration and report output.

mod config;
mod ingest;
mod report;
mod run;

pub use config::{AnalysisConfig, EnvelopeConfig, DEFAULT_SEED};
pub use ingest::{ingest_csv, ingest_reader, write_records, FacilityRecord, INPUT_HEADER};
pub use report::{
    emit_report, read_exponent_table, read_exponent_table_csv, slug, write_fits_csv, write_taylor_points_csv,
    CellReport, FacilityAggregate, OutputFormat, Provenance, Report, StageError, FITS_HEADER,
};
pub use run::{cell_seed, config_hash, input_digest, run_pipeline};
