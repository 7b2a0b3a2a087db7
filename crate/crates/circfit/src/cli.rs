//! Command-line front end: `fit`, `predict`, `cv`, and `simulate`
//! subcommands over the library. All commands are pure functions of their
//! inputs and flags; files are written atomically (temp then rename).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::bandwidth::{select_bandwidth_cv, CvConfig, CvMatrixKind};
use crate::dataset::{parse_dataset, AngleUnit, DatasetFile};
use crate::error::Error;
use crate::estimator::{CircularFit, ObservationSet};
use crate::grid::{build_prediction_grid, GridFilterConfig};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::localpoly::{BandwidthMatrix, LocalFitSpec};
use crate::simulate::{run_study, BandwidthPolicy, Model, StudyConfig};

#[derive(Parser)]
#[command(
    name = "circfit",
    version,
    about = "Nonparametric regression for circular responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select or accept a bandwidth and write the fitted smoothing parameters
    Fit(DataCommand),
    /// Evaluate a fit over a filtered prediction grid
    Predict(DataCommand),
    /// Report the cross-validation selection as JSON
    Cv(DataCommand),
    /// Run a simulation study from a config file
    Simulate(SimulateCommand),
}

#[derive(Args)]
struct DataCommand {
    /// CSV dataset with a header row
    #[arg(long)]
    data: PathBuf,
    /// Column holding the angular responses
    #[arg(long)]
    response: String,
    /// Comma-separated covariate columns, in order
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Read and write angles in degrees instead of radians
    #[arg(long)]
    degrees: bool,
    /// Polynomial degree of the local fit
    #[arg(long, default_value_t = 1)]
    degree: usize,
    /// Kernel family: epanechnikov or gaussian
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// Bandwidth: fixed:<h11[,h22,...]> or cv-scalar, cv-diag, cv-full
    #[arg(long, default_value = "cv-diag")]
    bandwidth: String,
    /// Prediction grid points per axis
    #[arg(long, default_value_t = 100)]
    grid_resolution: usize,
    /// Nearness threshold in grid-cell units
    #[arg(long, default_value_t = 15.0)]
    max_cell_distance: f64,
    /// Displace repeated covariate rows by up to this many grid cells
    #[arg(long)]
    jitter: Option<f64>,
    /// Seed for jittering
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCommand {
    /// Study configuration file with key = value lines
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output stem; writes <stem>.csv and <stem>.json
    #[arg(long)]
    out: PathBuf,
}

/// Parses and executes a command line. Returns the process exit code:
/// 0 on success, 1 on a computation failure (diagnostic on stderr), 2 on
/// a usage error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(args) => command_fit(args),
        Command::Predict(args) => command_predict(args),
        Command::Cv(args) => command_cv(args),
        Command::Simulate(args) => command_simulate(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_data(args: &DataCommand) -> Result<ObservationSet, Error> {
    let file = DatasetFile {
        path: args.data.clone(),
        angle_unit: if args.degrees {
            AngleUnit::Degrees
        } else {
            AngleUnit::Radians
        },
        response_column: args.response.clone(),
        covariate_columns: args.covariates.clone(),
    };
    let data = parse_dataset(&file)?;
    match args.jitter {
        Some(scale) => jitter_duplicates(data, scale, args.grid_resolution, args.seed),
        None => Ok(data),
    }
}

/// Displaces every covariate row that repeats an earlier one by uniform
/// noise of up to `scale` grid cells per axis, leaving first occurrences
/// and the responses untouched.
fn jitter_duplicates(
    data: ObservationSet,
    scale: f64,
    resolution: usize,
    seed: u64,
) -> Result<ObservationSet, Error> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Config(format!(
            "jitter scale must be nonnegative, got {scale}"
        )));
    }
    let dim = data.dim();
    let n = data.n();
    let steps = resolution.max(2) - 1;
    let cells: Vec<f64> = (0..dim)
        .map(|k| {
            let (lo, hi) = data.axis_range(k);
            let span = if hi > lo { hi - lo } else { 1.0 };
            span / steps as f64
        })
        .collect();
    let original = data.covariates();
    let mut covariates = original.to_vec();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in 0..n {
        let row = &original[i * dim..(i + 1) * dim];
        let repeated = (0..i).any(|j| &original[j * dim..(j + 1) * dim] == row);
        if repeated {
            for k in 0..dim {
                covariates[i * dim + k] +=
                    (2.0 * rng.gen::<f64>() - 1.0) * scale * cells[k];
            }
        }
    }
    ObservationSet::new(covariates, dim, data.responses().clone())
}

enum BandwidthChoice {
    Fixed(BandwidthMatrix),
    Cv(CvMatrixKind),
}

fn parse_bandwidth_flag(text: &str, dim: usize) -> Result<BandwidthChoice, Error> {
    match text {
        "cv-scalar" => return Ok(BandwidthChoice::Cv(CvMatrixKind::Scalar)),
        "cv-diag" => return Ok(BandwidthChoice::Cv(CvMatrixKind::Diagonal)),
        "cv-full" => return Ok(BandwidthChoice::Cv(CvMatrixKind::Full)),
        _ => {}
    }
    let spec = text.strip_prefix("fixed:").ok_or_else(|| {
        Error::Config(format!(
            "unrecognized bandwidth {text:?}; expected fixed:<entries>, \
             cv-scalar, cv-diag, or cv-full"
        ))
    })?;
    let values: Vec<f64> = spec
        .split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("cannot parse bandwidth entry {v:?}"))
            })
        })
        .collect::<Result<_, _>>()?;
    let matrix = if values.len() == 1 {
        BandwidthMatrix::scalar(values[0], dim)?
    } else if values.len() == dim {
        BandwidthMatrix::diagonal(&values)?
    } else if values.len() == dim * dim {
        BandwidthMatrix::full(&values, dim)?
    } else {
        return Err(Error::Config(format!(
            "a fixed bandwidth for {dim} covariates needs 1, {dim}, or {} \
             entries, got {}",
            dim * dim,
            values.len()
        )));
    };
    Ok(BandwidthChoice::Fixed(matrix))
}

fn resolve_bandwidth(
    args: &DataCommand,
    data: &ObservationSet,
    kernel: KernelSpec,
) -> Result<BandwidthMatrix, Error> {
    match parse_bandwidth_flag(&args.bandwidth, data.dim())? {
        BandwidthChoice::Fixed(h) => Ok(h),
        BandwidthChoice::Cv(kind) => {
            let config = CvConfig {
                matrix_kind: kind,
                ..CvConfig::default()
            };
            Ok(select_bandwidth_cv(data, args.degree, kernel, &config)?.bandwidth)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
        Some(path) => write_atomic(path, bytes),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let file_name = path
        .file_name()
        .ok_or_else(|| {
            Error::Config(format!("output path {} has no file name", path.display()))
        })?
        .to_string_lossy()
        .into_owned();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = dir.join(format!("{file_name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn command_fit(args: &DataCommand) -> Result<(), Error> {
    let data = load_data(args)?;
    let kernel = KernelSpec::new(args.kernel.parse()?, data.dim())?;
    let bandwidth = resolve_bandwidth(args, &data, kernel)?;
    // constructing the spec validates the degree for this dimension
    LocalFitSpec::new(args.degree, kernel, bandwidth.clone())?;

    let dim = data.dim();
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        let mut header = vec!["degree".to_string(), "kernel".to_string()];
        for i in 0..dim {
            for j in i..dim {
                header.push(format!("h{}{}", i + 1, j + 1));
            }
        }
        writer.write_record(&header)?;
        let mut record = vec![args.degree.to_string(), kernel.family().name().to_string()];
        for v in bandwidth.upper_triangle() {
            record.push(v.to_string());
        }
        writer.write_record(&record)?;
        writer.flush()?;
    }
    emit(args.out.as_deref(), &buffer)
}

fn command_predict(args: &DataCommand) -> Result<(), Error> {
    let data = load_data(args)?;
    let kernel = KernelSpec::new(args.kernel.parse()?, data.dim())?;
    let bandwidth = resolve_bandwidth(args, &data, kernel)?;
    let spec = LocalFitSpec::new(args.degree, kernel, bandwidth)?;
    let fit = CircularFit::new(&data, spec)?;
    let config = GridFilterConfig {
        resolution: args.grid_resolution,
        max_cell_distance: args.max_cell_distance,
        require_stability: true,
        bounds: None,
    };
    let grid = build_prediction_grid(&fit, &config)?;
    if grid.kept_count() == 0 {
        eprintln!("warning: no grid points survive the filters; writing headers only");
    }

    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        let mut header: Vec<String> = (1..=data.dim()).map(|k| format!("x{k}")).collect();
        header.push("direction".into());
        header.push("ell_hat".into());
        header.push("stable".into());
        writer.write_record(&header)?;
        for (point, prediction) in grid.kept_rows() {
            let mut record: Vec<String> = point.iter().map(|v| v.to_string()).collect();
            let direction = prediction
                .direction
                .map(|a| {
                    if args.degrees {
                        a.radians().to_degrees()
                    } else {
                        a.radians()
                    }
                })
                .unwrap_or(f64::NAN);
            record.push(direction.to_string());
            record.push(prediction.ell_hat.to_string());
            record.push(prediction.stable.to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
    }
    emit(args.out.as_deref(), &buffer)
}

#[derive(Serialize)]
struct CvReport {
    kind: String,
    dim: usize,
    entries: Vec<f64>,
    score: f64,
    evaluations: usize,
    iterations: usize,
    converged: bool,
    candidates: Vec<CvCandidateReport>,
}

#[derive(Serialize)]
struct CvCandidateReport {
    per_axis: Vec<f64>,
    score: f64,
}

fn command_cv(args: &DataCommand) -> Result<(), Error> {
    let data = load_data(args)?;
    let kernel = KernelSpec::new(args.kernel.parse()?, data.dim())?;
    let kind = match parse_bandwidth_flag(&args.bandwidth, data.dim())? {
        BandwidthChoice::Cv(kind) => kind,
        BandwidthChoice::Fixed(_) => {
            return Err(Error::Config(
                "the cv command needs a cross-validation mode \
                 (cv-scalar, cv-diag, cv-full)"
                    .into(),
            ))
        }
    };
    let config = CvConfig {
        matrix_kind: kind,
        ..CvConfig::default()
    };
    let selection = select_bandwidth_cv(&data, args.degree, kernel, &config)?;
    let report = CvReport {
        kind: selection.bandwidth.kind().name().to_string(),
        dim: data.dim(),
        entries: selection.bandwidth.entries().to_vec(),
        score: selection.score,
        evaluations: selection.evaluations,
        iterations: selection.iterations,
        converged: selection.converged,
        candidates: selection
            .candidates
            .iter()
            .map(|c| CvCandidateReport {
                per_axis: c.per_axis.clone(),
                score: c.score,
            })
            .collect(),
    };
    let mut bytes =
        serde_json::to_vec_pretty(&report).expect("report serialization cannot fail");
    bytes.push(b'\n');
    emit(args.out.as_deref(), &bytes)
}

fn command_simulate(args: &SimulateCommand) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut study = parse_study_config(&text)?;
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    let report = run_study(&study)?;

    let mut csv_bytes = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut csv_bytes);
        let mut header = vec![
            "replicate".to_string(),
            "case".to_string(),
            "undefined".to_string(),
        ];
        let entry_count = report
            .per_replicate
            .first()
            .map(|r| r.bandwidth.len())
            .unwrap_or(0);
        let dim = (entry_count as f64).sqrt() as usize;
        for i in 0..dim {
            for j in 0..dim {
                header.push(format!("h{}{}", i + 1, j + 1));
            }
        }
        writer.write_record(&header)?;
        for r in &report.per_replicate {
            let mut record = vec![
                r.replicate.to_string(),
                r.case.to_string(),
                r.undefined.to_string(),
            ];
            for v in &r.bandwidth {
                record.push(v.to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
    }

    let stem = args.out.with_extension("");
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    write_atomic(&csv_path, &csv_bytes)?;
    let mut json =
        serde_json::to_vec_pretty(&report).expect("report serialization cannot fail");
    json.push(b'\n');
    write_atomic(&json_path, &json)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn parse_config_value<T>(key: &str, value: &str) -> Result<T, Error>
where
    T: std::str::FromStr,
{
    value.parse::<T>().map_err(|_| {
        Error::Config(format!("cannot parse {key} value {value:?}"))
    })
}

/// Parses the flat `key = value` study configuration. Keys: `model`, `n`,
/// `kappa`, `replicates` (required); `degree`, `kernel`, `bandwidth.mode`,
/// `bandwidth.grid_per_axis`, `bandwidth.entries`, `seed`, `eval_grid`
/// (optional). `#` starts a comment line; `eval_grid = 0` disables the
/// pointwise evaluation grid, which otherwise defaults to 20 per axis.
fn parse_study_config(text: &str) -> Result<StudyConfig, Error> {
    let mut model = None;
    let mut n = None;
    let mut kappa = None;
    let mut replicates = None;
    let mut degree = 1usize;
    let mut kernel = KernelFamily::Epanechnikov;
    let mut mode = "cv-diag".to_string();
    let mut grid_per_axis = 12usize;
    let mut entries: Option<Vec<f64>> = None;
    let mut seed = 0u64;
    let mut eval_grid = 20usize;

    let mut seen: Vec<String> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                index + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|s| s == key) {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
        seen.push(key.to_string());
        match key {
            "model" => {
                model = Some(match value {
                    "m1" | "M1" => Model::M1,
                    "m2" | "M2" => Model::M2,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown model {value:?}; expected m1 or m2"
                        )))
                    }
                })
            }
            "n" => n = Some(parse_config_value(key, value)?),
            "kappa" => kappa = Some(parse_config_value(key, value)?),
            "replicates" => replicates = Some(parse_config_value(key, value)?),
            "degree" => degree = parse_config_value(key, value)?,
            "kernel" => kernel = value.parse()?,
            "bandwidth.mode" => mode = value.to_string(),
            "bandwidth.grid_per_axis" => grid_per_axis = parse_config_value(key, value)?,
            "bandwidth.entries" => {
                entries = Some(
                    value
                        .split(',')
                        .map(|v| parse_config_value("bandwidth.entries", v.trim()))
                        .collect::<Result<_, _>>()?,
                )
            }
            "seed" => seed = parse_config_value(key, value)?,
            "eval_grid" => eval_grid = parse_config_value(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?}"
                )))
            }
        }
    }

    let model = model.ok_or_else(|| Error::Config("missing key: model".into()))?;
    let n = n.ok_or_else(|| Error::Config("missing key: n".into()))?;
    let kappa = kappa.ok_or_else(|| Error::Config("missing key: kappa".into()))?;
    let replicates =
        replicates.ok_or_else(|| Error::Config("missing key: replicates".into()))?;

    if entries.is_some() && mode != "fixed" {
        return Err(Error::Config(
            "bandwidth.entries only applies when bandwidth.mode = fixed".into(),
        ));
    }
    let cv_with = |kind: CvMatrixKind| {
        BandwidthPolicy::CrossValidated(CvConfig {
            matrix_kind: kind,
            grid_per_axis,
            ..CvConfig::default()
        })
    };
    let bandwidth = match mode.as_str() {
        "cv-scalar" => cv_with(CvMatrixKind::Scalar),
        "cv-diag" => cv_with(CvMatrixKind::Diagonal),
        "cv-full" => cv_with(CvMatrixKind::Full),
        "fixed" => {
            let values = entries.ok_or_else(|| {
                Error::Config("bandwidth.mode = fixed needs bandwidth.entries".into())
            })?;
            let matrix = match values.len() {
                1 => BandwidthMatrix::scalar(values[0], 2)?,
                2 => BandwidthMatrix::diagonal(&values)?,
                4 => BandwidthMatrix::full(&values, 2)?,
                k => {
                    return Err(Error::Config(format!(
                        "bandwidth.entries needs 1, 2, or 4 values, got {k}"
                    )))
                }
            };
            BandwidthPolicy::Fixed(matrix)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown bandwidth.mode {other:?}; expected cv-scalar, cv-diag, \
                 cv-full, or fixed"
            )))
        }
    };

    Ok(StudyConfig {
        model,
        n,
        kappa,
        replicates,
        degree,
        kernel_family: kernel,
        bandwidth,
        seed,
        pointwise_grid: if eval_grid == 0 { None } else { Some(eval_grid) },
        interior_margin: 0.0,
    })
}
