//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on configuration or data errors (including
//! unknown flags), 2 when the run completed but some estimates failed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::crlb::{crlb, fisher_information_uniform};
use crate::dataio::{
    calibration_points, fit_pathloss, histogram_pdf, load_dataset, read_calibration_csv,
    Aggregation, CalibrationFit, Histogram, LoadOptions,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorOptions, ResidualEncoding};
use crate::model::{NetworkScene, Scenario};
use crate::sim::{generate_scene, run_sweep, SceneConfig, SweepSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rssloc", version, about = "Cooperative RSS localization with uncertain anchors")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Random seed; overrides the seed of a sweep spec or scene generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo sweep from a JSON spec.
    Simulate(SimulateArgs),
    /// Localize the nodes of a field dataset.
    Estimate(EstimateArgs),
    /// Compute Cramer-Rao bounds for a scene.
    Crlb(CrlbArgs),
    /// Fit the log-distance path-loss model to calibration data.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sweep spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Override the number of trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Override the estimators, comma separated (ctup1..ctup4).
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimateOnly {
    /// Report positions only.
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Median,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset directory with nodes.csv, rss.csv and gps.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Knowledge scenario, 1 to 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: u8,
    /// Path-loss exponent for scenarios 1 and 3.
    #[arg(long)]
    pub ple: Option<f64>,
    /// Restrict the report to the listed quantities.
    #[arg(long, value_enum)]
    pub estimate_only: Option<EstimateOnly>,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
    /// Noise level for links with a single reading, dB.
    #[arg(long)]
    pub sigma_db: Option<f64>,
    /// Uncertainty for anchors with a single fix, m.
    #[arg(long)]
    pub delta_m: Option<f64>,
    /// Encode residuals as a diagonal matrix inequality.
    #[arg(long)]
    pub lmi_residuals: bool,
}

#[derive(Debug, Args)]
pub struct CrlbArgs {
    /// Scene file (JSON); otherwise a scene is generated.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub anchors: usize,
    #[arg(long, default_value_t = 10)]
    pub targets: usize,
    #[arg(long, default_value_t = 100.0)]
    pub area: f64,
    #[arg(long, default_value_t = 3.0)]
    pub ple: f64,
    /// Scenario 1 to 4; all four when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: Option<u8>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_db: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta_m: f64,
    /// Treat anchor positions as exactly known.
    #[arg(long)]
    pub exact_anchors: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Calibration CSV with distance_m,rssi_dbm.
    #[arg(long, conflicts_with = "data")]
    pub calibration: Option<PathBuf>,
    /// Dataset directory with RTK fixes.
    #[arg(long, requires = "tx")]
    pub data: Option<PathBuf>,
    /// Transmitter whose readings are fitted, with --data.
    #[arg(long)]
    pub tx: Option<String>,
    /// Histogram bins; Sturges' rule when omitted.
    #[arg(long)]
    pub bins: Option<usize>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_ERROR,
            };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    fs::create_dir_all(&cli.out).map_err(|e| {
        Error::InvalidInput(format!("cannot create output directory {}: {e}", cli.out.display()))
    })?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Estimate(a) => estimate_cmd(cli, a),
        Command::Crlb(a) => crlb_cmd(cli, a),
        Command::Fit(a) => fit_cmd(cli, a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<i32> {
    let mut spec: SweepSpec = read_json(&a.spec)?;
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(e) = &a.estimators {
        spec.estimators = e.clone();
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let res = run_sweep(&spec)?;
    let csv_path = cli.out.join("sweep.csv");
    res.write_csv(fs::File::create(&csv_path)?)?;
    write_json(&cli.out.join("sweep.json"), &res)?;
    let failures: usize = res.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} estimates failed; see the failures column");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    anchor_ids: &'a [String],
    target_ids: &'a [String],
    origin: crate::dataio::GeoOrigin,
    pooled_sigma_db: f64,
    pooled_delta_m: Option<f64>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    dataset: DatasetInfo<'a>,
    report: crate::estimators::EstimateReport,
}

fn estimate_cmd(cli: &Cli, a: &EstimateArgs) -> Result<i32> {
    let scenario = Scenario::try_from(a.scenario).map_err(Error::InvalidInput)?;
    let opts = LoadOptions {
        aggregation: match a.aggregation {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Median => Aggregation::Median,
        },
        sigma_db: a.sigma_db,
        delta_m: a.delta_m,
    };
    let (_, loaded) = load_dataset(&a.data, &opts)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let mut known = loaded.known.clone();
    known.ple = a.ple;
    let est_opts = EstimatorOptions {
        residual_encoding: if a.lmi_residuals {
            ResidualEncoding::DiagonalLmi
        } else {
            ResidualEncoding::Equality
        },
        ..Default::default()
    };
    let mut report = estimate(scenario, &loaded.measurements, &loaded.adjacency, &known, &est_opts)?;
    let partial = report
        .tx_power_dbm
        .as_ref()
        .is_some_and(|p| p.iter().any(Option::is_none));
    if a.estimate_only == Some(EstimateOnly::T) {
        report.tx_power_dbm = None;
        report.ple = None;
        report.beta0 = None;
        report.epsilon = None;
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(truth) = &loaded.truth {
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(cli.out.join("errors.csv")).map_err(io)?;
        w.write_record(["target_id", "est_x_m", "est_y_m", "true_x_m", "true_y_m", "error_m"])
            .map_err(io)?;
        for (j, id) in loaded.target_ids.iter().enumerate() {
            let (e, t) = (report.targets[j], truth.targets[j]);
            w.write_record([
                id.clone(),
                e.x.to_string(),
                e.y.to_string(),
                t.x.to_string(),
                t.y.to_string(),
                (e - t).norm().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
    }
    let out = EstimateOutput {
        dataset: DatasetInfo {
            anchor_ids: &loaded.anchor_ids,
            target_ids: &loaded.target_ids,
            origin: loaded.origin,
            pooled_sigma_db: loaded.pooled_sigma_db,
            pooled_delta_m: loaded.pooled_delta_m,
            warnings: &loaded.warnings,
        },
        report,
    };
    write_json(&cli.out.join("estimate.json"), &out)?;
    Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
}

#[derive(Serialize)]
struct CrlbEntry {
    scenario: Scenario,
    fim_dim: usize,
    #[serde(flatten)]
    report: crate::crlb::CrlbReport,
}

#[derive(Serialize)]
struct CrlbOutput {
    scene: NetworkScene,
    sigma_db: f64,
    delta_m: Option<f64>,
    bounds: Vec<CrlbEntry>,
}

fn crlb_cmd(cli: &Cli, a: &CrlbArgs) -> Result<i32> {
    let scene = match &a.scene {
        Some(p) => read_json::<NetworkScene>(p)?,
        None => {
            let mut cfg = SceneConfig::new(a.anchors, a.targets, cli.seed.unwrap_or(0));
            cfg.area_m = a.area;
            cfg.ple = a.ple;
            generate_scene(&cfg)?
        }
    };
    scene.validate()?;
    let scenarios: Vec<Scenario> = match a.scenario {
        Some(s) => vec![Scenario::try_from(s).map_err(Error::InvalidInput)?],
        None => Scenario::ALL.to_vec(),
    };
    let delta = (!a.exact_anchors).then_some(a.delta_m);
    let mut bounds = Vec::new();
    for sc in scenarios {
        let fim = fisher_information_uniform(&scene.theta(), &scene.adjacency, a.sigma_db, delta, sc)?;
        let report = crlb(&fim).map_err(|e| match e {
            Error::Singular(m) => Error::Singular(format!("{}: {m}", sc.label())),
            other => other,
        })?;
        bounds.push(CrlbEntry {
            scenario: sc,
            fim_dim: fim.matrix.nrows(),
            report,
        });
    }
    write_json(
        &cli.out.join("crlb.json"),
        &CrlbOutput {
            scene,
            sigma_db: a.sigma_db,
            delta_m: delta,
            bounds,
        },
    )?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Histograms {
    rss_residual_db: Histogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    gps_east_deviation_m: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gps_north_deviation_m: Option<Histogram>,
}

fn fit_cmd(cli: &Cli, a: &FitArgs) -> Result<i32> {
    let (points, deviations) = match (&a.calibration, &a.data, &a.tx) {
        (Some(p), _, _) => (read_calibration_csv(p)?, Vec::new()),
        (None, Some(d), Some(tx)) => {
            let (ds, loaded) = load_dataset(d, &LoadOptions::default())?;
            (calibration_points(&ds, &loaded, tx)?, loaded.gps_deviations_m)
        }
        _ => {
            return Err(Error::InvalidInput(
                "fit needs --calibration FILE or --data DIR --tx NODE".into(),
            ))
        }
    };
    let fit: CalibrationFit = fit_pathloss(&points)?;
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.rssi_dbm - (fit.p0_dbm - 10.0 * fit.ple * p.d_m.log10()))
        .collect();
    let dev = |f: fn(&crate::model::Point) -> f64| -> Result<Option<Histogram>> {
        if deviations.is_empty() {
            return Ok(None);
        }
        let v: Vec<f64> = deviations.iter().map(f).collect();
        histogram_pdf(&v, a.bins).map(Some)
    };
    let hist = Histograms {
        rss_residual_db: histogram_pdf(&residuals, a.bins)?,
        gps_east_deviation_m: dev(|p| p.x)?,
        gps_north_deviation_m: dev(|p| p.y)?,
    };
    write_json(&cli.out.join("calibration.json"), &fit)?;
    write_json(&cli.out.join("histograms.json"), &hist)?;
    Ok(EXIT_OK)
}
