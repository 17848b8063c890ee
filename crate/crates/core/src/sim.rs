//! Test functions, data generation, coverage studies and rate diagnostics.

use rand::Rng;

use crate::bands::{check_coverage, region_widths, summarize_widths, BandBuilder, WidthSummary};
use crate::calibration::{calibrate, default_nsim, noise_field, Calibration, CalibrationContext};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BandwidthPolicy, GridDesign};
use crate::kernels::{BiasHints, BiasProbe, KernelPair, ShapeClass};
use crate::kv::KvRecord;
use crate::par::par_map;
use crate::region::Region;

/// A closed-form regression function with class tags and, where they exist,
/// analytic derivatives for the optimality-constant predictions.
#[derive(Clone)]
pub struct TestFunction {
    id: &'static str,
    isotonic: bool,
    convex: bool,
    eval: fn(&[f64]) -> f64,
    gradient: Option<fn(&[f64]) -> Vec<f64>>,
    hessian: Option<fn(&[f64]) -> Vec<Vec<f64>>>,
    intrinsic: fn(usize) -> usize,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TestFunction({})", self.id)
    }
}

impl TestFunction {
    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn is_isotonic(&self) -> bool {
        self.isotonic
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn in_class(&self, class: ShapeClass) -> bool {
        match class {
            ShapeClass::Isotonic => self.isotonic,
            ShapeClass::Convex => self.convex,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.map(|g| g(x))
    }

    pub fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        self.hessian.map(|h| h(x))
    }

    /// Number of coordinates the function genuinely depends on.
    pub fn intrinsic_dim(&self, d: usize) -> usize {
        (self.intrinsic)(d)
    }

    /// Evaluate on a grid.
    pub fn field(&self, grid: &GridDesign) -> Field {
        Field::from_fn(*grid, |x| (self.eval)(x)).expect("test functions are finite")
    }
}

fn f_zero(_: &[f64]) -> f64 {
    0.0
}
fn f_sum(x: &[f64]) -> f64 {
    x.iter().sum()
}
fn f_sum10(x: &[f64]) -> f64 {
    10.0 * f_sum(x)
}
fn f_sum20(x: &[f64]) -> f64 {
    20.0 * f_sum(x)
}
fn f_indicator(x: &[f64]) -> f64 {
    if x[0] >= 0.5 {
        1.0
    } else {
        0.0
    }
}
fn f_quad(x: &[f64]) -> f64 {
    x.iter().map(|&v| (v - 0.5) * (v - 0.5)).sum()
}
fn f_quad40(x: &[f64]) -> f64 {
    40.0 * f_quad(x)
}
fn f_absdev(x: &[f64]) -> f64 {
    (x[0] - 0.5).abs()
}

fn grad_const<const SCALE: i64>(x: &[f64]) -> Vec<f64> {
    vec![SCALE as f64; x.len()]
}
fn hess_zero(x: &[f64]) -> Vec<Vec<f64>> {
    vec![vec![0.0; x.len()]; x.len()]
}
fn grad_quad(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 2.0 * (v - 0.5)).collect()
}
fn grad_quad40(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 80.0 * (v - 0.5)).collect()
}
fn hess_diag<const SCALE: i64>(x: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..d {
        h[i][i] = SCALE as f64;
    }
    h
}
fn dim_full(d: usize) -> usize {
    d
}
fn dim_zero(_: usize) -> usize {
    0
}
fn dim_one(_: usize) -> usize {
    1
}

/// The standard catalogue: flat, affine and scaled-affine functions (in both
/// classes), the axis step (isotonic only), and the centered quadratics and
/// absolute deviation (convex only).
pub fn builtin_functions() -> Vec<TestFunction> {
    vec![
        TestFunction {
            id: "zero",
            isotonic: true,
            convex: true,
            eval: f_zero,
            gradient: Some(grad_const::<0>),
            hessian: Some(hess_zero),
            intrinsic: dim_zero,
        },
        TestFunction {
            id: "sum",
            isotonic: true,
            convex: true,
            eval: f_sum,
            gradient: Some(grad_const::<1>),
            hessian: Some(hess_zero),
            intrinsic: dim_full,
        },
        TestFunction {
            id: "sum20",
            isotonic: true,
            convex: true,
            eval: f_sum20,
            gradient: Some(grad_const::<20>),
            hessian: Some(hess_zero),
            intrinsic: dim_full,
        },
        TestFunction {
            id: "indicator",
            isotonic: true,
            convex: false,
            eval: f_indicator,
            gradient: None,
            hessian: None,
            intrinsic: dim_one,
        },
        TestFunction {
            id: "sum10",
            isotonic: true,
            convex: true,
            eval: f_sum10,
            gradient: Some(grad_const::<10>),
            hessian: Some(hess_zero),
            intrinsic: dim_full,
        },
        TestFunction {
            id: "quad",
            isotonic: false,
            convex: true,
            eval: f_quad,
            gradient: Some(grad_quad),
            hessian: Some(hess_diag::<2>),
            intrinsic: dim_full,
        },
        TestFunction {
            id: "absdev",
            isotonic: false,
            convex: true,
            eval: f_absdev,
            gradient: None,
            hessian: None,
            intrinsic: dim_one,
        },
        TestFunction {
            id: "quad40",
            isotonic: false,
            convex: true,
            eval: f_quad40,
            gradient: Some(grad_quad40),
            hessian: Some(hess_diag::<80>),
            intrinsic: dim_full,
        },
    ]
}

/// Look up a catalogue function by id.
pub fn builtin(id: &str) -> Result<TestFunction> {
    builtin_functions()
        .into_iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::InvalidParameter {
            name: "function",
            reason: format!(
                "unknown function `{id}`; available: {}",
                builtin_functions()
                    .iter()
                    .map(|f| f.id)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

/// Check the declared class tags on a concrete grid: isotonic tags must be
/// nondecreasing along every axis, convex tags must satisfy discrete
/// midpoint convexity along every grid line.
pub fn verify_class_tags(f: &TestFunction, grid: &GridDesign) -> Result<()> {
    let field = f.field(grid);
    let strides = grid.strides();
    let tol = 1e-12;
    for flat in 0..grid.n() {
        let index = grid.index_of_flat(flat);
        for axis in 0..grid.d() {
            if f.isotonic && index[axis] + 1 < grid.m() {
                let here = field.value_flat(flat);
                let next = field.value_flat(flat + strides[axis]);
                if next < here - tol {
                    return Err(Error::Data(format!(
                        "`{}` tagged isotonic but decreases along axis {}",
                        f.id,
                        axis + 1
                    )));
                }
            }
            if f.convex && index[axis] >= 1 && index[axis] + 1 < grid.m() {
                let prev = field.value_flat(flat - strides[axis]);
                let here = field.value_flat(flat);
                let next = field.value_flat(flat + strides[axis]);
                if prev + next < 2.0 * here - tol {
                    return Err(Error::Data(format!(
                        "`{}` tagged convex but fails midpoint convexity on axis {}",
                        f.id,
                        axis + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `Y_i = f(x_i) + sigma eps_i` with the replicate substream `(seed, rep)`.
pub fn generate_data_replicate(
    f: &TestFunction,
    grid: &GridDesign,
    sigma: f64,
    seed: u64,
    replicate: u64,
) -> Result<Field> {
    if sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("must be nonnegative, got {sigma}"),
        });
    }
    let noise = noise_field(grid, seed, replicate);
    let mut values = Vec::with_capacity(grid.n());
    for flat in 0..grid.n() {
        let x = grid.coordinate(&grid.index_of_flat(flat));
        values.push(f.eval(&x) + sigma * noise.value_flat(flat));
    }
    Field::new(*grid, values)
}

/// Replicate 0 of [`generate_data_replicate`].
pub fn generate_data(f: &TestFunction, grid: &GridDesign, sigma: f64, seed: u64) -> Result<Field> {
    generate_data_replicate(f, grid, sigma, seed, 0)
}

/// Outcome of a coverage study: one Monte Carlo estimate of the band's
/// simultaneous coverage probability for one (function, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub function: String,
    pub class: ShapeClass,
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub replicates: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Binomial Monte Carlo standard error of `coverage`.
    pub coverage_se: f64,
    /// Replicate-averaged width summaries over all non-vacuous points.
    pub width_mean: f64,
    pub width_median: f64,
    pub width_max: f64,
}

impl CoverageReport {
    pub fn to_kv(&self) -> KvRecord {
        let mut r = KvRecord::new();
        r.push("record", "coverage-study");
        r.push("function", &self.function);
        r.push("class", self.class.name());
        r.push("m", self.m);
        r.push("d", self.d);
        r.push("alpha", self.alpha);
        r.push("replicates", self.replicates);
        r.push("covered", self.covered);
        r.push("coverage", self.coverage);
        r.push("coverage_se", self.coverage_se);
        r.push("width_mean", self.width_mean);
        r.push("width_median", self.width_median);
        r.push("width_max", self.width_max);
        r
    }

    pub fn from_kv(r: &KvRecord) -> Result<Self> {
        Ok(CoverageReport {
            function: r.require("function")?.to_string(),
            class: ShapeClass::parse(r.require("class")?)?,
            m: r.parse_usize("m")?,
            d: r.parse_usize("d")?,
            alpha: r.parse_f64("alpha")?,
            replicates: r.parse_usize("replicates")?,
            covered: r.parse_usize("covered")?,
            coverage: r.parse_f64("coverage")?,
            coverage_se: r.parse_f64("coverage_se")?,
            width_mean: r.parse_f64("width_mean")?,
            width_median: r.parse_f64("width_median")?,
            width_max: r.parse_f64("width_max")?,
        })
    }
}

/// Run `replicates` fresh-noise band constructions and count coverage.
///
/// Noise is standard normal (the model's known scale); the calibration must
/// match the grid, class and its own policy.
pub fn coverage_study(
    f: &TestFunction,
    class: ShapeClass,
    grid: &GridDesign,
    alpha: f64,
    replicates: usize,
    cal: &Calibration,
    seed: u64,
) -> Result<CoverageReport> {
    if replicates < 100 {
        return Err(Error::InvalidParameter {
            name: "replicates",
            reason: format!("at least 100 required, got {replicates}"),
        });
    }
    if !f.in_class(class) {
        return Err(Error::InvalidParameter {
            name: "function",
            reason: format!("`{}` is not in class {}", f.id, class.name()),
        });
    }
    if alpha.to_bits() != cal.alpha.to_bits() {
        return Err(Error::ContextMismatch {
            field: "alpha",
            stored: cal.alpha.to_string(),
            expected: alpha.to_string(),
        });
    }
    let pair = KernelPair::for_class(class, grid.d());
    let builder = BandBuilder::new(grid, &pair, cal, cal.policy, 1.0)?;
    let truth = f.field(grid);

    let outcomes = par_map(replicates, |r| -> Result<(bool, WidthSummary)> {
        let data = generate_data_replicate(f, grid, 1.0, seed, r as u64)?;
        let band = builder.bands(&data)?;
        let covered = check_coverage(&band, &truth)?.covered;
        let widths = region_widths(&band, &Region::all(grid.d()));
        Ok((covered, summarize_widths(&widths)?))
    });

    let mut covered = 0usize;
    let mut width_mean = 0.0;
    let mut width_median = 0.0;
    let mut width_max = 0.0;
    for outcome in outcomes {
        let (ok, widths) = outcome?;
        covered += ok as usize;
        width_mean += widths.mean;
        width_median += widths.median;
        width_max += widths.max;
    }
    let reps = replicates as f64;
    let coverage = covered as f64 / reps;
    Ok(CoverageReport {
        function: f.id.to_string(),
        class,
        m: grid.m(),
        d: grid.d(),
        alpha,
        replicates,
        covered,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / reps).sqrt(),
        width_mean: width_mean / reps,
        width_median: width_median / reps,
        width_max: width_max / reps,
    })
}

/// One grid size of a rate diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub m: usize,
    pub n: usize,
    /// Median band width over the region, pooled across replicates.
    pub median_width: f64,
}

/// Width-versus-n table with the fitted log-log slope.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDiagnostic {
    pub function: String,
    pub class: ShapeClass,
    pub alpha: f64,
    pub replicates: usize,
    pub region: Region,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log(width)` on `log(n)`.
    pub slope: f64,
}

impl RateDiagnostic {
    pub fn to_kv(&self) -> KvRecord {
        let mut r = KvRecord::new();
        r.push("record", "rate-diagnostic");
        r.push("function", &self.function);
        r.push("class", self.class.name());
        r.push("alpha", self.alpha);
        r.push("replicates", self.replicates);
        r.push("region", self.region.to_text());
        r.push(
            "grids",
            self.rows
                .iter()
                .map(|row| row.m.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        r.push(
            "widths",
            self.rows
                .iter()
                .map(|row| row.median_width.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        r.push("slope", self.slope);
        r
    }
}

/// Default replicate count per grid size in rate diagnostics.
pub const RATE_REPLICATES: usize = 5;

/// Median region width per grid size plus the fitted log-log slope.
///
/// Each grid size gets its own calibration (seeded from `seed` and `m`) and
/// `replicates` fresh-noise bands; widths are pooled before the median.
pub fn rate_diagnostic(
    f: &TestFunction,
    class: ShapeClass,
    d: usize,
    grid_sizes: &[usize],
    alpha: f64,
    region: &Region,
    replicates: usize,
    seed: u64,
) -> Result<RateDiagnostic> {
    if grid_sizes.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "grids",
            reason: "at least 3 grid sizes required for a slope".into(),
        });
    }
    if region.d() != d {
        return Err(Error::InvalidParameter {
            name: "region",
            reason: "region dimension mismatch".into(),
        });
    }
    let mut rows = Vec::with_capacity(grid_sizes.len());
    for &m in grid_sizes {
        let grid = crate::grid::make_grid(m, d)?;
        let policy = BandwidthPolicy::default_for(m, d);
        let pair = KernelPair::for_class(class, d);
        let cal_seed = seed.wrapping_add(1 + m as u64);
        let cal = calibrate(&grid, &pair, policy, alpha, default_nsim(m), cal_seed)?;
        let builder = BandBuilder::new(&grid, &pair, &cal, policy, 1.0)?;
        let data_seed = seed.wrapping_add(7_777_777).wrapping_add(m as u64);
        let pooled = par_map(replicates, |r| -> Result<Vec<f64>> {
            let data = generate_data_replicate(f, &grid, 1.0, data_seed, r as u64)?;
            let band = builder.bands(&data)?;
            Ok(region_widths(&band, region))
        });
        let mut widths = Vec::new();
        for w in pooled {
            widths.extend(w?);
        }
        let summary = summarize_widths(&widths)?;
        rows.push(RateRow {
            m,
            n: grid.n(),
            median_width: summary.median,
        });
    }
    let slope = fit_log_slope(&rows)?;
    Ok(RateDiagnostic {
        function: f.id.to_string(),
        class,
        alpha,
        replicates,
        region: region.clone(),
        rows,
        slope,
    })
}

fn fit_log_slope(rows: &[RateRow]) -> Result<f64> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.median_width.ln()))
        .collect();
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Data("non-positive width in rate diagnostic".into()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    Ok(sxy / sxx)
}

/// Random admissible probes for the bias checker.
pub fn random_probes(d: usize, count: usize, seed: u64) -> Vec<BiasProbe> {
    let mut rng = crate::calibration::replicate_rng(seed, 0);
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut bandwidth = Vec::with_capacity(d);
        let mut center = Vec::with_capacity(d);
        for _ in 0..d {
            let h: f64 = rng.random_range(0.05..=0.5);
            let t: f64 = rng.random_range(h..=1.0 - h);
            bandwidth.push(h);
            center.push(t);
        }
        probes.push(BiasProbe::new(center, bandwidth).expect("sampled probes are admissible"));
    }
    probes
}

/// A random nondecreasing piecewise-constant function on [0,1]^d: a positive
/// mixture of upper-orthant indicators plus a base level.
pub fn random_isotonic_step(d: usize, seed: u64) -> Box<dyn Fn(&[f64]) -> f64 + Send + Sync> {
    random_isotonic_step_with_hints(d, seed).0
}

/// The step function together with its jump-plane coordinates, which the
/// bias checker uses to seed quadrature panels.
pub fn random_isotonic_step_with_hints(
    d: usize,
    seed: u64,
) -> (Box<dyn Fn(&[f64]) -> f64 + Send + Sync>, BiasHints) {
    let mut rng = crate::calibration::replicate_rng(seed, 1);
    let pieces = rng.random_range(1..=4usize);
    let base: f64 = rng.random_range(-1.0..=1.0);
    let mut corners = Vec::with_capacity(pieces);
    for _ in 0..pieces {
        let jump: f64 = rng.random_range(0.0..=2.0);
        let corner: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..=1.0)).collect();
        corners.push((jump, corner));
    }
    let mut hints = BiasHints {
        axis_breakpoints: vec![Vec::new(); d],
    };
    for (_, corner) in &corners {
        for (axis, &c) in corner.iter().enumerate() {
            hints.axis_breakpoints[axis].push(c);
        }
    }
    let f = Box::new(move |x: &[f64]| {
        let mut v = base;
        for (jump, corner) in &corners {
            if x.iter().zip(corner).all(|(&xi, &ci)| xi >= ci) {
                v += jump;
            }
        }
        v
    });
    (f, hints)
}

/// A random convex quadratic on R^d: `0.5 (x-c)' B'B (x-c) + g'x + b`.
pub fn random_convex_quadratic(d: usize, seed: u64) -> Box<dyn Fn(&[f64]) -> f64 + Send + Sync> {
    let mut rng = crate::calibration::replicate_rng(seed, 2);
    let mut b_mat = vec![vec![0.0f64; d]; d];
    for row in b_mat.iter_mut() {
        for entry in row.iter_mut() {
            *entry = rng.random_range(-1.0..=1.0);
        }
    }
    // A = B' B is positive semidefinite.
    let mut a = vec![vec![0.0f64; d]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = (0..d).map(|k| b_mat[k][i] * b_mat[k][j]).sum();
        }
    }
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..=1.0)).collect();
    let slope: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let offset: f64 = rng.random_range(-1.0..=1.0);
    Box::new(move |x: &[f64]| {
        let mut quad = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                quad += (x[i] - center[i]) * a[i][j] * (x[j] - center[j]);
            }
        }
        0.5 * quad + slope.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>() + offset
    })
}

/// Context check helper for CLI-loaded calibrations.
pub fn expected_context(
    grid: &GridDesign,
    class: ShapeClass,
    policy: BandwidthPolicy,
    alpha: f64,
) -> CalibrationContext {
    CalibrationContext {
        m: grid.m(),
        d: grid.d(),
        kernel_pair: KernelPair::for_class(class, grid.d()).id().to_string(),
        policy,
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn catalogue_examples() {
        let fns = builtin_functions();
        assert_eq!(fns.len(), 8);
        let indicator = builtin("indicator").unwrap();
        assert_eq!(indicator.eval(&[0.49, 0.9]), 0.0);
        assert_eq!(indicator.eval(&[0.5, 0.1]), 1.0);
        assert!(indicator.is_isotonic() && !indicator.is_convex());
        assert_eq!(indicator.intrinsic_dim(2), 1);

        let absdev = builtin("absdev").unwrap();
        assert!(!absdev.is_isotonic() && absdev.is_convex());
        assert_eq!(absdev.intrinsic_dim(2), 1);

        let quad40 = builtin("quad40").unwrap();
        assert_abs_diff_eq!(quad40.eval(&[1.0, 1.0]), 20.0, epsilon = 1e-12);
        let h = quad40.hessian(&[0.3, 0.7]).unwrap();
        assert_eq!(h[0][0], 80.0);
        assert_eq!(h[0][1], 0.0);

        for f in ["zero", "sum", "sum10", "sum20"] {
            let f = builtin(f).unwrap();
            assert!(f.is_isotonic() && f.is_convex());
        }
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn class_tags_verified_on_grid() {
        let g = make_grid(12, 2).unwrap();
        for f in builtin_functions() {
            verify_class_tags(&f, &g).unwrap();
        }
    }

    #[test]
    fn generated_data_deterministic_and_exact_at_zero_sigma() {
        let g = make_grid(10, 2).unwrap();
        let f = builtin("sum").unwrap();
        let exact = generate_data(&f, &g, 0.0, 5).unwrap();
        assert_eq!(exact, f.field(&g));
        let a = generate_data(&f, &g, 1.0, 5).unwrap();
        let b = generate_data(&f, &g, 1.0, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_data_replicate(&f, &g, 1.0, 5, 1).unwrap();
        assert_ne!(a, c);
        assert!(generate_data(&f, &g, -1.0, 5).is_err());
    }

    #[test]
    fn noise_mean_obeys_clt_bound() {
        let g = make_grid(50, 2).unwrap();
        let f = builtin("zero").unwrap();
        let seeds = 50u64;
        let mut total = 0.0;
        for s in 0..seeds {
            let data = generate_data_replicate(&f, &g, 1.0, 1234, s).unwrap();
            total += data.values().iter().sum::<f64>();
        }
        let mean = total / (seeds as f64 * g.n() as f64);
        let bound = 4.0 / ((seeds as f64 * g.n() as f64).sqrt());
        assert!(mean.abs() < bound, "mean {mean} vs bound {bound}");
    }

    #[test]
    fn random_generators_respect_their_classes() {
        let g = make_grid(9, 2).unwrap();
        for seed in 0..20u64 {
            let step = random_isotonic_step(2, seed);
            let quad = random_convex_quadratic(2, seed);
            // Monotone along axes for the step; midpoint convexity for the
            // quadratic, checked on the grid.
            for flat in 0..g.n() {
                let idx = g.index_of_flat(flat);
                let x = g.coordinate(&idx);
                for axis in 0..2 {
                    if idx[axis] + 1 < g.m() {
                        let mut y = x.clone();
                        y[axis] += 1.0 / g.m() as f64;
                        assert!(step(&y) >= step(&x) - 1e-12);
                    }
                    if idx[axis] >= 1 && idx[axis] + 1 < g.m() {
                        let mut lo = x.clone();
                        let mut hi = x.clone();
                        lo[axis] -= 1.0 / g.m() as f64;
                        hi[axis] += 1.0 / g.m() as f64;
                        assert!(quad(&lo) + quad(&hi) >= 2.0 * quad(&x) - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn slope_fit_recovers_exact_powers() {
        let rows: Vec<RateRow> = [16usize, 32, 64]
            .iter()
            .map(|&m| RateRow {
                m,
                n: m * m,
                median_width: ((m * m) as f64).powf(-0.5),
            })
            .collect();
        let slope = fit_log_slope(&rows).unwrap();
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn probes_are_admissible() {
        for probe in random_probes(3, 50, 9) {
            for (t, h) in probe.center.iter().zip(&probe.bandwidth) {
                assert!(*h > 0.0 && *h <= 0.5);
                assert!(*t >= *h && *t <= 1.0 - *h);
            }
        }
    }

    #[test]
    fn coverage_report_kv_roundtrip() {
        let report = CoverageReport {
            function: "sum".into(),
            class: ShapeClass::Isotonic,
            m: 20,
            d: 2,
            alpha: 0.05,
            replicates: 100,
            covered: 97,
            coverage: 0.97,
            coverage_se: 0.017,
            width_mean: 1.5,
            width_median: 1.4,
            width_max: 3.2,
        };
        let kv = report.to_kv();
        let back = CoverageReport::from_kv(&kv).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn small_coverage_study_runs() {
        let g = make_grid(10, 2).unwrap();
        let pair = KernelPair::isotonic(2);
        let cal = calibrate(&g, &pair, BandwidthPolicy::Full, 0.05, 150, 3).unwrap();
        let f = builtin("zero").unwrap();
        let report =
            coverage_study(&f, ShapeClass::Isotonic, &g, 0.05, 100, &cal, 11).unwrap();
        assert_eq!(report.replicates, 100);
        assert!(report.coverage >= 0.8, "coverage {}", report.coverage);
        assert!(report.covered <= 100);
        assert!(report.width_mean > 0.0);

        // Wrong replicate count and class are rejected.
        assert!(coverage_study(&f, ShapeClass::Isotonic, &g, 0.05, 50, &cal, 1).is_err());
        let ind = builtin("indicator").unwrap();
        assert!(coverage_study(&ind, ShapeClass::Convex, &g, 0.05, 100, &cal, 1).is_err());
    }
}
