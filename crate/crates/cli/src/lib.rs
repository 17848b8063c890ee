//! Command implementations for the `shapeband` binary.
//!
//! Exit-code contract: 0 on success, 1 on runtime failure, 2 on usage or
//! validation problems. Every subcommand is deterministic given its
//! configuration and seed; identical invocations produce identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use shapeband::bands::{estimate_sigma, width_profile, write_band_csv_path, BandBuilder};
use shapeband::calibration::{
    calibrate, default_nsim, load_calibration_unchecked, save_calibration, Calibration,
};
use shapeband::constants::optimal_constants;
use shapeband::field::Field;
use shapeband::grid::{make_grid, BandwidthPolicy};
use shapeband::kernels::{KernelPair, ShapeClass};
use shapeband::kv::{records_to_text, KvRecord};
use shapeband::region::Region;
use shapeband::scan::{write_scan_trace, Sign};
use shapeband::sim::{
    builtin, coverage_study, generate_data, rate_diagnostic, CoverageReport, RateDiagnostic,
    TestFunction, RATE_REPLICATES,
};

/// Environment variable supplying the default worker-thread count.
pub const THREADS_ENV: &str = "SHAPEBAND_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "shapeband",
    version,
    about = "Simultaneous confidence bands for isotonic and convex regression on grids"
)]
pub struct Cli {
    /// Cap on worker threads (default: SHAPEBAND_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the critical value by Monte Carlo and cache it.
    Calibrate(CalibrateArgs),
    /// Generate gridded data for a built-in test function.
    Simulate(SimulateArgs),
    /// Build confidence bands for a data file.
    Band(BandArgs),
    /// Estimate coverage probabilities over fresh-noise replicates.
    Coverage(CoverageArgs),
    /// Band width versus sample size with a fitted log-log slope.
    Rates(RatesArgs),
    /// Print the optimality constants.
    Constants(ConstantsArgs),
}

fn parse_class(s: &str) -> Result<ShapeClass, String> {
    ShapeClass::parse(s).map_err(|e| e.to_string())
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let alpha: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if alpha > 0.001 && alpha <= 0.5 {
        Ok(alpha)
    } else {
        Err(format!("alpha must lie in (0.001, 0.5], got {alpha}"))
    }
}

fn parse_policy(s: &str) -> Result<BandwidthPolicy, String> {
    BandwidthPolicy::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Shape class: isotonic or convex.
    #[arg(long, value_parser = parse_class)]
    pub class: ShapeClass,
    /// Points per axis.
    #[arg(long)]
    pub m: usize,
    /// Dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, value_parser = parse_alpha, default_value = "0.05")]
    pub alpha: f64,
    /// Monte Carlo replicates (default: 2000 for m <= 30, else 1000).
    #[arg(long)]
    pub nsim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bandwidth policy (default: full for m <= 64 and d <= 2, else dyadic).
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<BandwidthPolicy>,
    /// Output calibration cache file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in function id (see `coverage --all-builtins` for the list).
    #[arg(long)]
    pub function: String,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output data CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional noiseless truth CSV.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    /// Input data CSV (`x1,...,xd,y`, one row per grid point).
    #[arg(long)]
    pub data: PathBuf,
    /// Calibration cache produced by `calibrate`.
    #[arg(long)]
    pub cal: PathBuf,
    /// Output band CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise standard deviation: a number, or `auto` for the first-difference
    /// plug-in (outside the coverage guarantee).
    #[arg(long, default_value = "1")]
    pub sigma: String,
    /// Optional plot-data CSV (lower/upper and, with --function, truth).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Built-in function id supplying the truth column of --plot-data.
    #[arg(long)]
    pub function: Option<String>,
    /// Optional per-window scan trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Which kernel's scan the trace records: lower or upper.
    #[arg(long, default_value = "lower")]
    pub trace_side: String,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// Run every built-in function in its Table-style class assignment.
    #[arg(long, conflicts_with_all = ["function", "class"])]
    pub all_builtins: bool,
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long, value_parser = parse_class)]
    pub class: Option<ShapeClass>,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, value_parser = parse_alpha, default_value = "0.05")]
    pub alpha: f64,
    /// Coverage replicates per row.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibration replicates (default by grid size).
    #[arg(long)]
    pub nsim: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<BandwidthPolicy>,
    /// Optional machine-readable report file (key-value records).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    #[arg(long)]
    pub function: String,
    #[arg(long, value_parser = parse_class)]
    pub class: ShapeClass,
    /// Comma-separated grid sizes, e.g. `16,24,32,48`.
    #[arg(long)]
    pub grids: String,
    /// Region constraints, e.g. `x1<=0.3` or `0.45<=x1<=0.55`.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, value_parser = parse_alpha, default_value = "0.05")]
    pub alpha: f64,
    /// Replicates per grid size.
    #[arg(long, default_value_t = RATE_REPLICATES)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    /// Restrict to one class (default: print both).
    #[arg(long, value_parser = parse_class)]
    pub class: Option<ShapeClass>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Optional machine-readable output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The resolved configuration of one run; round-trips losslessly through its
/// JSON text form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nsim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grids: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub paths: BTreeMap<String, PathBuf>,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// How a failed run should exit.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or inconsistent inputs: exit 2.
    Usage(String),
    /// Everything else: exit 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<shapeband::Error> for CliError {
    fn from(e: shapeband::Error) -> Self {
        use shapeband::Error::*;
        match e {
            InvalidParameter { .. } | ContextMismatch { .. } | Csv { .. }
            | MissingGridPoint { .. } | EmptyRegion | GridCapacity { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

/// Initialize the global worker pool from --threads / SHAPEBAND_THREADS.
pub fn init_threads(threads: Option<usize>) {
    let from_env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = threads.or(from_env) {
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(cli: Cli) -> CliResult {
    init_threads(cli.threads);
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Band(args) => cmd_band(args),
        Command::Coverage(args) => cmd_coverage(args),
        Command::Rates(args) => cmd_rates(args),
        Command::Constants(args) => cmd_constants(args),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult {
    let grid = make_grid(args.m, args.d)?;
    let policy = args
        .policy
        .unwrap_or_else(|| BandwidthPolicy::default_for(args.m, args.d));
    let pair = KernelPair::for_class(args.class, args.d);
    let nsim = args.nsim.unwrap_or_else(|| default_nsim(args.m));
    let cal = calibrate(&grid, &pair, policy, args.alpha, nsim, args.seed)?;
    save_calibration(&cal, &args.out)?;
    println!(
        "kappa = {:.6} (se {:.4}); {} nsim={} seed={} m={} d={} policy={} -> {}",
        cal.kappa,
        cal.kappa_se,
        cal.kernel_pair,
        cal.nsim,
        cal.seed,
        cal.m,
        cal.d,
        cal.policy.name(),
        args.out.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let f = builtin(&args.function)?;
    let grid = make_grid(args.m, args.d)?;
    let data = generate_data(&f, &grid, args.sigma, args.seed)?;
    data.write_csv_path(&args.out)?;
    if let Some(truth_out) = &args.truth_out {
        f.field(&grid).write_csv_path(truth_out)?;
    }
    println!(
        "wrote {} points of {} (sigma={}, seed={}) -> {}",
        grid.n(),
        f.id(),
        args.sigma,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn class_from_pair_id(id: &str) -> Result<ShapeClass, CliError> {
    match id {
        "isotonic" => Ok(ShapeClass::Isotonic),
        "convex" => Ok(ShapeClass::Convex),
        other => Err(CliError::Usage(format!(
            "calibration was made for kernel pair `{other}`, not a built-in class"
        ))),
    }
}

fn cmd_band(args: BandArgs) -> CliResult {
    let cal: Calibration = load_calibration_unchecked(&args.cal)?;
    let class = class_from_pair_id(&cal.kernel_pair)?;
    let grid = make_grid(cal.m, cal.d)?;
    let data = Field::read_csv_path(&args.data, grid)?;
    let sigma = match args.sigma.as_str() {
        "auto" => {
            let est = estimate_sigma(&data);
            eprintln!("note: plug-in sigma estimate {est:.4} (outside the coverage guarantee)");
            est
        }
        value => value
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--sigma must be a number or `auto`, got `{value}`")))?,
    };
    let pair = KernelPair::for_class(class, cal.d);
    let builder = BandBuilder::new(&grid, &pair, &cal, cal.policy, sigma)?;
    let band = builder.bands(&data)?;
    write_band_csv_path(&band, &args.out)?;

    let widths = width_profile(&band, &Region::all(cal.d))?;
    println!(
        "band: width min/median/max over {} points = {:.4}/{:.4}/{:.4} -> {}",
        widths.count,
        band_min_width(&band),
        widths.median,
        widths.max,
        args.out.display()
    );

    if let Some(plot) = &args.plot_data {
        let truth = match &args.function {
            Some(id) => Some(builtin(id)?.field(&grid)),
            None => None,
        };
        write_plot_data(plot, &band, truth.as_ref())?;
    }
    if let Some(trace) = &args.trace {
        let (kernel, sign) = match args.trace_side.as_str() {
            "lower" => (pair.lower(), Sign::Plus),
            "upper" => (pair.upper(), Sign::Minus),
            other => {
                return Err(CliError::Usage(format!(
                    "--trace-side must be `lower` or `upper`, got `{other}`"
                )))
            }
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(trace)?);
        write_scan_trace(&mut out, &data, kernel, sign, cal.policy)?;
    }
    Ok(())
}

fn band_min_width(band: &shapeband::BandResult) -> f64 {
    let grid = band.design();
    (0..grid.n())
        .filter(|&f| !band.is_vacuous_flat(f))
        .map(|f| band.width_flat(f))
        .fold(f64::INFINITY, f64::min)
}

fn write_plot_data(
    path: &PathBuf,
    band: &shapeband::BandResult,
    truth: Option<&Field>,
) -> CliResult {
    let grid = band.design();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = grid.d();
    let mut header: Vec<String> = (0..d).map(|a| format!("x{}", a + 1)).collect();
    header.push("lower".into());
    header.push("upper".into());
    if truth.is_some() {
        header.push("truth".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(CliError::from)?;
    for flat in 0..grid.n() {
        let idx = grid.index_of_flat(flat);
        let mut row: Vec<String> = idx
            .iter()
            .map(|&i| format!("{}", grid.axis_coordinate(i)))
            .collect();
        row.push(fmt_band_value(band.lower().value_flat(flat)));
        row.push(fmt_band_value(band.upper().value_flat(flat)));
        if let Some(t) = truth {
            row.push(format!("{}", t.value_flat(flat)));
        }
        writeln!(out, "{}", row.join(",")).map_err(CliError::from)?;
    }
    Ok(())
}

fn fmt_band_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// The eight standard rows in study order: the isotonic block then the
/// convex block.
pub fn standard_rows() -> Vec<(&'static str, ShapeClass)> {
    vec![
        ("zero", ShapeClass::Isotonic),
        ("sum", ShapeClass::Isotonic),
        ("sum20", ShapeClass::Isotonic),
        ("indicator", ShapeClass::Isotonic),
        ("zero", ShapeClass::Convex),
        ("sum", ShapeClass::Convex),
        ("sum10", ShapeClass::Convex),
        ("quad", ShapeClass::Convex),
    ]
}

/// Human-readable formula for a built-in id in dimension `d`.
pub fn describe(f: &TestFunction, d: usize) -> String {
    let sum = (1..=d)
        .map(|i| format!("x{i}"))
        .collect::<Vec<_>>()
        .join("+");
    let quad = (1..=d)
        .map(|i| format!("(x{i}-0.5)^2"))
        .collect::<Vec<_>>()
        .join("+");
    match f.id() {
        "zero" => "0".into(),
        "sum" => sum,
        "sum10" => format!("10({sum})"),
        "sum20" => format!("20({sum})"),
        "indicator" => "1{x1>=0.5}".into(),
        "quad" => quad,
        "quad40" => format!("40({quad})"),
        "absdev" => "|x1-0.5|".into(),
        other => other.into(),
    }
}

fn cmd_coverage(args: CoverageArgs) -> CliResult {
    let rows: Vec<(String, ShapeClass)> = if args.all_builtins {
        standard_rows()
            .into_iter()
            .map(|(id, class)| (id.to_string(), class))
            .collect()
    } else {
        match (&args.function, args.class) {
            (Some(f), Some(c)) => vec![(f.clone(), c)],
            _ => {
                return Err(CliError::Usage(
                    "either --all-builtins or both --function and --class are required".into(),
                ))
            }
        }
    };

    let grid = make_grid(args.m, args.d)?;
    let policy = args
        .policy
        .unwrap_or_else(|| BandwidthPolicy::default_for(args.m, args.d));
    let nsim = args.nsim.unwrap_or_else(|| default_nsim(args.m));

    let mut calibrations: BTreeMap<&'static str, Calibration> = BTreeMap::new();
    let mut reports: Vec<CoverageReport> = Vec::new();
    println!(
        "{:<24} {:<9} {:>9} {:>7} {:>11}",
        "f(x)", "class", "coverage", "se", "mean width"
    );
    for (id, class) in rows {
        let f = builtin(&id)?;
        let pair = KernelPair::for_class(class, args.d);
        let cal = match calibrations.get(class.name()) {
            Some(c) => c.clone(),
            None => {
                let c = calibrate(&grid, &pair, policy, args.alpha, nsim, args.seed)?;
                calibrations.insert(class.name(), c.clone());
                c
            }
        };
        let report = coverage_study(&f, class, &grid, args.alpha, args.reps, &cal, args.seed)?;
        println!(
            "{:<24} {:<9} {:>9.3} {:>7.3} {:>11.4}",
            describe(&f, args.d),
            class.name(),
            report.coverage,
            report.coverage_se,
            report.width_mean
        );
        reports.push(report);
    }
    if let Some(out) = &args.out {
        let records: Vec<KvRecord> = reports.iter().map(|r| r.to_kv()).collect();
        std::fs::write(out, records_to_text(&records)).map_err(CliError::from)?;
    }
    Ok(())
}

fn cmd_rates(args: RatesArgs) -> CliResult {
    let f = builtin(&args.function)?;
    let grids: Vec<usize> = args
        .grids
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("`{s}` is not a grid size")))
        })
        .collect::<Result<_, _>>()?;
    let region = match &args.region {
        Some(text) => Region::parse(text, args.d)?,
        None => Region::centered(args.d, 0.5),
    };
    let diag = rate_diagnostic(
        &f,
        args.class,
        args.d,
        &grids,
        args.alpha,
        &region,
        args.reps,
        args.seed,
    )?;
    print_rate_table(&diag);
    if let Some(out) = &args.out {
        std::fs::write(out, diag.to_kv().to_text()).map_err(CliError::from)?;
    }
    Ok(())
}

fn print_rate_table(diag: &RateDiagnostic) {
    println!(
        "{} ({}) region {}",
        diag.function,
        diag.class.name(),
        diag.region.to_text()
    );
    println!("{:>6} {:>9} {:>13}", "m", "n", "median width");
    for row in &diag.rows {
        println!("{:>6} {:>9} {:>13.5}", row.m, row.n, row.median_width);
    }
    println!("log-log slope = {:.4}", diag.slope);
}

fn cmd_constants(args: ConstantsArgs) -> CliResult {
    let classes = match args.class {
        Some(c) => vec![c],
        None => vec![ShapeClass::Isotonic, ShapeClass::Convex],
    };
    let mut records = Vec::new();
    println!(
        "{:<9} {:>2} {:>9} {:>12} {:>12} {:>12} {:>12}",
        "class", "d", "exponent", "delta_lower", "delta_upper", "delta_low*", "delta_upp*"
    );
    for class in classes {
        let c = optimal_constants(class, args.d)?;
        let star = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<9} {:>2} {:>9.5} {:>12.5} {:>12.5} {:>12} {:>12}",
            c.class.name(),
            c.d,
            c.rate_exponent,
            c.delta_lower,
            c.delta_upper,
            star(c.delta_lower_star),
            star(c.delta_upper_star),
        );
        let mut r = KvRecord::new();
        r.push("record", "optimality-constants");
        r.push("class", c.class.name());
        r.push("d", c.d);
        r.push("rate_exponent", c.rate_exponent);
        r.push("delta_lower", c.delta_lower);
        r.push("delta_upper", c.delta_upper);
        if let Some(v) = c.delta_lower_star {
            r.push("delta_lower_star", v);
        }
        if let Some(v) = c.delta_upper_star {
            r.push("delta_upper_star", v);
        }
        if let Some(v) = c.alpha_d {
            r.push("alpha_d", v);
        }
        records.push(r);
    }
    if let Some(out) = &args.out {
        std::fs::write(out, records_to_text(&records)).map_err(CliError::from)?;
    }
    Ok(())
}
