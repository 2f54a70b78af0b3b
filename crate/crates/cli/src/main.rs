use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use facility_taylor::csr::NullModel;
use facility_taylor::decomp::{decompose, Gauge};
use facility_taylor::equilibrium::{crossing, equilibrium_range, AreaScale, BenefitCurve, CostCurve, FacilityScale};
use facility_taylor::geoproj::unproject;
use facility_taylor::pipeline::{
    emit_report, ingest_csv, read_exponent_table_csv, run_pipeline, slug, write_fits_csv, write_records,
    write_taylor_points_csv, AnalysisConfig, FacilityRecord, OutputFormat, Report,
};
use facility_taylor::pointgen::{gen_binomial, gen_poisson, gen_thomas, RandomSeed, ThomasParams};
use facility_taylor::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "facility-taylor", version, about = "Quadrat and Taylor's power law analysis of facility locations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an input CSV and summarise its cells.
    Ingest { input: PathBuf },
    /// Generate a synthetic pattern in the analysis window and write it as input CSV.
    Simulate(SimulateArgs),
    /// Quadrat dispersion test and G-function envelope per cell.
    TestCsr(TestCsrArgs),
    /// Per-city and aggregated Taylor fits.
    Fit { input: PathBuf },
    /// Decompose an exponent table (city,facility,b CSV or fits.csv).
    Decompose(DecomposeArgs),
    /// Equilibrium clustering level for power-law benefit and cost curves.
    Equilibrium(EquilibriumArgs),
    /// Full analysis with JSON and CSV output.
    Report { input: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Process {
    Binomial,
    Poisson,
    Thomas,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "thomas")]
    process: Process,
    /// Number of points (binomial).
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Expected points in the window (poisson).
    #[arg(long, default_value_t = 1000.0)]
    expected: f64,
    /// Expected parents in the window (thomas).
    #[arg(long, default_value_t = 50.0)]
    parents: f64,
    /// Mean offspring per parent (thomas).
    #[arg(long, default_value_t = 20.0)]
    offspring: f64,
    /// Offspring scatter in meters (thomas).
    #[arg(long, default_value_t = 500.0)]
    sigma: f64,
    #[arg(long, default_value = "Beijing")]
    city: String,
    #[arg(long, default_value = "synthetic")]
    facility: String,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "simulated.csv")]
    output: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum NullArg {
    Binomial,
    Poisson,
}

#[derive(Args)]
struct TestCsrArgs {
    input: PathBuf,
    #[arg(long)]
    city: Option<String>,
    #[arg(long)]
    facility: Option<String>,
    /// Number of envelope simulations.
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long, value_enum)]
    null: Option<NullArg>,
}

#[derive(Args)]
struct DecomposeArgs {
    table: PathBuf,
    /// Fix the mean facility factor at this value instead of using the minimum-norm solution.
    #[arg(long)]
    facility_mean: Option<f64>,
}

fn parse_interval(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match parts.as_slice() {
        [v] => num(v).map(|x| (x, x)),
        [lo, hi] => Ok((num(lo)?, num(hi)?)),
        _ => Err("expected LOW,HIGH or a single value".into()),
    }
}

#[derive(Args)]
struct EquilibriumArgs {
    /// Benefit coefficient A in f(n) = A·n^p.
    #[arg(long = "a", default_value_t = 1.0)]
    a: f64,
    /// Benefit exponent p, 0 < p < 1.
    #[arg(long = "p", default_value_t = 0.5)]
    p: f64,
    /// Cost coefficient B in g(n) = B·n^q.
    #[arg(long = "b", default_value_t = 1.0)]
    b: f64,
    /// Cost exponent q > 1.
    #[arg(long = "q", default_value_t = 2.0)]
    q: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Benefit multiplier interval LOW,HIGH.
    #[arg(long, value_parser = parse_interval, default_value = "1,1")]
    theta: (f64, f64),
    /// Cost multiplier interval LOW,HIGH.
    #[arg(long, value_parser = parse_interval, default_value = "1,1")]
    eta: (f64, f64),
    /// Number of curve samples in the CSV.
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

fn load_config(common: &Common) -> Result<AnalysisConfig> {
    let mut cfg = match &common.config {
        Some(p) => AnalysisConfig::load(p)?,
        None => AnalysisConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_file(dir: &Path, name: &str) -> Result<(PathBuf, fs::File)> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    Ok((path, f))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn ingest(input: &Path) -> Result<()> {
    let recs = ingest_csv(input)?;
    let mut cells: std::collections::BTreeMap<(&str, &str), usize> = Default::default();
    for r in &recs {
        *cells.entry((&r.city, &r.facility)).or_default() += 1;
    }
    let cells: Vec<Value> = cells
        .into_iter()
        .map(|((c, f), n)| json!({"city": c, "facility": f, "records": n}))
        .collect();
    print(&json!({"records": recs.len(), "cells": cells}));
    Ok(())
}

fn simulate(common: &Common, args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let center = cfg
        .center(&args.city)
        .ok_or_else(|| Error::Config(format!("no center configured for {}", args.city)))?;
    let window = cfg.grid.window();
    let seed = RandomSeed::new(cfg.seed, 0);
    let points = match args.process {
        Process::Binomial => gen_binomial(args.count, &window, seed),
        Process::Poisson => gen_poisson(args.expected / window.area(), &window, seed)?,
        Process::Thomas => gen_thomas(
            &ThomasParams {
                parent_intensity: args.parents / window.area(),
                mean_offspring: args.offspring,
                dispersion: args.sigma,
            },
            &window,
            seed,
        )?,
    };
    let earth = cfg.earth();
    let records = points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let g = unproject(&center, p, &earth)?;
            Ok(FacilityRecord {
                city: args.city.clone(),
                facility: args.facility.clone(),
                lng: g.lng,
                lat: g.lat,
                line: k as u64 + 2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (path, f) = out_file(&common.out_dir, &args.output)?;
    write_records(&records, f)?;
    print(&json!({"points": records.len(), "seed": cfg.seed, "output": path}));
    Ok(())
}

fn test_csr(common: &Common, args: &TestCsrArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.envelope.enabled = true;
    if let Some(s) = args.sims {
        cfg.envelope.sims = s;
    }
    if let Some(n) = args.null {
        cfg.envelope.null_model = match n {
            NullArg::Binomial => NullModel::Binomial,
            NullArg::Poisson => NullModel::Poisson,
        };
    }
    let recs: Vec<FacilityRecord> = ingest_csv(&args.input)?
        .into_iter()
        .filter(|r| args.city.as_ref().is_none_or(|c| *c == r.city))
        .filter(|r| args.facility.as_ref().is_none_or(|f| *f == r.facility))
        .collect();
    let report = run_pipeline(&recs, &cfg)?;
    let mut out = Vec::new();
    for c in &report.cells {
        if let Some(env) = &c.envelope {
            let name = format!("envelope_{}_{}.csv", slug(&c.city), slug(&c.facility));
            let (_, f) = out_file(&common.out_dir, &name)?;
            env.write_csv(f)?;
        }
        out.push(json!({
            "city": c.city,
            "facility": c.facility,
            "points_in_window": c.n_in_window,
            "dispersion": c.dispersion,
            "envelope_above_fraction": c.envelope.as_ref().map(|e| e.above_fraction),
            "envelope_inside_fraction": c.envelope.as_ref().map(|e| e.inside_fraction()),
            "errors": c.errors,
        }));
    }
    print(&Value::Array(out));
    Ok(())
}

fn fit(common: &Common, input: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.envelope.enabled = false;
    let report: Report = run_pipeline(&ingest_csv(input)?, &cfg)?;
    let (_, f) = out_file(&common.out_dir, "fits.csv")?;
    write_fits_csv(&report, f)?;
    let (_, f) = out_file(&common.out_dir, "taylor_points.csv")?;
    write_taylor_points_csv(&report, f)?;
    let cells: Vec<Value> = report
        .cells
        .iter()
        .map(|c| json!({"city": c.city, "facility": c.facility, "fit": c.fit, "regime": c.regime, "errors": c.errors}))
        .collect();
    print(&json!({"cells": cells, "aggregates": report.aggregates}));
    Ok(())
}

fn decompose_cmd(common: &Common, args: &DecomposeArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let gauge = match args.facility_mean {
        Some(v) => Gauge::FixedFacilityMean(v),
        None => cfg.gauge,
    };
    let table = read_exponent_table_csv(&args.table)?;
    let result = decompose(&table, gauge)?;
    let (_, f) = out_file(&common.out_dir, "decomposition.csv")?;
    result.write_csv(f)?;
    print(&json!({
        "gauge": result.gauge,
        "cities": result.model.cities.iter().zip(&result.model.c).map(|(n, v)| json!({"city": n, "c": v})).collect::<Vec<_>>(),
        "facilities": result.model.facilities.iter().zip(&result.model.f).map(|(n, v)| json!({"facility": n, "f": v})).collect::<Vec<_>>(),
        "objective": result.objective,
        "mean_relative_residual": result.mean_relative_residual,
        "csf_share": result.csf_share,
        "fsf_share": result.fsf_share,
    }));
    Ok(())
}

fn equilibrium(common: &Common, args: &EquilibriumArgs) -> Result<()> {
    let usage = |e: Error| Error::Config(e.to_string());
    let f = BenefitCurve::new(args.a, args.p).map_err(usage)?;
    let g = CostCurve::new(args.b, args.q).map_err(usage)?;
    let scale = FacilityScale::new(args.alpha, args.beta).map_err(usage)?;
    let area = AreaScale::new(args.theta, args.eta).map_err(usage)?;
    let star = crossing(&f, &g, scale.alpha, scale.beta)?;
    let (lo, hi) = equilibrium_range(&scale, &area, &f, &g)?;

    let (_, file) = out_file(&common.out_dir, "equilibrium_curves.csv")?;
    let mut w = std::io::BufWriter::new(file);
    use std::io::Write;
    let wr = |w: &mut std::io::BufWriter<fs::File>, s: String| w.write_all(s.as_bytes()).map_err(|e| io_err(Path::new("equilibrium_curves.csv"), e));
    wr(&mut w, "n,benefit,cost,benefit_low,benefit_high,cost_low,cost_high\n".into())?;
    let n_end = 2.0 * hi.n_star.max(star.n_star);
    let samples = args.samples.max(2);
    for k in 0..samples {
        let n = n_end * k as f64 / (samples - 1) as f64;
        let (fv, gv) = (scale.alpha * f.eval(n), scale.beta * g.eval(n));
        wr(
            &mut w,
            format!(
                "{n},{fv},{gv},{},{},{},{}\n",
                area.theta.0 * fv,
                area.theta.1 * fv,
                area.eta.0 * gv,
                area.eta.1 * gv
            ),
        )?;
    }
    w.flush().map_err(|e| io_err(Path::new("equilibrium_curves.csv"), e))?;
    print(&json!({
        "n_star": star.n_star,
        "n_floor": star.n_floor,
        "residual": star.residual,
        "n_min": lo.n_star,
        "n_max": hi.n_star,
    }));
    Ok(())
}

fn report(common: &Common, input: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let report = run_pipeline(&ingest_csv(input)?, &cfg)?;
    let files = emit_report(&report, &common.out_dir, OutputFormat::All)?;
    let failed = report.cells.iter().filter(|c| !c.errors.is_empty()).count();
    print(&json!({
        "cells": report.cells.len(),
        "cells_with_errors": failed,
        "decomposition": report.decomposition.is_some(),
        "files": files,
    }));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Ingest { input } => ingest(input),
        Command::Simulate(a) => simulate(c, a),
        Command::TestCsr(a) => test_csr(c, a),
        Command::Fit { input } => fit(c, input),
        Command::Decompose(a) => decompose_cmd(c, a),
        Command::Equilibrium(a) => equilibrium(c, a),
        Command::Report { input } => report(c, input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
