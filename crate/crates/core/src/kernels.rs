//! The four built-in scan kernels, their exact functionals, discretized
//! window weights, and the numeric two-sided bias checker.
//!
//! The isotonic pair is supported on opposite orthant simplices and is
//! nonnegative; the convex pair is radial on the unit ball and its lower
//! member takes negative values on an outer shell. Means and L2 norms come
//! from closed forms where available and from radial quadrature otherwise;
//! nested quadrature over the support serves as an independent cross-check
//! and powers the bias-condition checker for arbitrary test functions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridDesign, Window};
use crate::quad;

/// Absolute tolerance for all kernel-related quadrature.
pub const QUAD_TOLERANCE: f64 = 1e-8;

/// Margins below this are reported as bias-condition violations.
pub const BIAS_MARGIN_TOLERANCE: f64 = -1e-6;

/// The shape class a kernel pair is designed to bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    /// Coordinate-wise nondecreasing functions.
    Isotonic,
    /// Convex functions.
    Convex,
}

impl ShapeClass {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Isotonic => "isotonic",
            ShapeClass::Convex => "convex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "isotonic" => Ok(ShapeClass::Isotonic),
            "convex" => Ok(ShapeClass::Convex),
            other => Err(Error::InvalidParameter {
                name: "class",
                reason: format!("expected `isotonic` or `convex`, got `{other}`"),
            }),
        }
    }
}

/// Identifier of one of the four built-in kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelId {
    IsoLower,
    IsoUpper,
    CvxLower,
    CvxUpper,
}

impl KernelId {
    pub fn name(&self) -> &'static str {
        match self {
            KernelId::IsoLower => "iso_lower",
            KernelId::IsoUpper => "iso_upper",
            KernelId::CvxLower => "cvx_lower",
            KernelId::CvxUpper => "cvx_upper",
        }
    }
}

#[derive(Clone)]
enum KernelForm {
    Builtin(KernelId),
    Custom {
        label: String,
        eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelForm::Builtin(id) => write!(f, "Builtin({})", id.name()),
            KernelForm::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// Exact integral functionals of a kernel over R^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFunctionals {
    /// `<psi, psi>`.
    pub l2_norm_sq: f64,
    /// `<1, psi>`, strictly positive for a valid kernel.
    pub mean: f64,
}

/// A kernel: vanishes outside [-1,1]^d, square integrable, positive mean.
///
/// Built-in kernels are validated by construction. Custom kernels get their
/// functionals from nested quadrature and carry `bias_verified() == false`;
/// the bounded-variation requirement is documented, not checked.
#[derive(Debug, Clone)]
pub struct Kernel {
    form: KernelForm,
    d: usize,
    functionals: KernelFunctionals,
    bias_verified: bool,
}

impl Kernel {
    /// One of the four built-in kernels in dimension `d`.
    pub fn builtin(id: KernelId, d: usize) -> Kernel {
        let functionals = match id {
            KernelId::IsoLower | KernelId::IsoUpper => KernelFunctionals {
                l2_norm_sq: iso_l2_norm_sq(d),
                mean: iso_mean(d),
            },
            KernelId::CvxLower | KernelId::CvxUpper => {
                let profile = |r: f64| cvx_profile(id, d, r);
                KernelFunctionals {
                    l2_norm_sq: radial_integral(d, |r| profile(r) * profile(r))
                        .expect("radial quadrature of a polynomial profile"),
                    mean: radial_integral(d, profile)
                        .expect("radial quadrature of a polynomial profile"),
                }
            }
        };
        debug_assert!(functionals.mean > 0.0);
        Kernel {
            form: KernelForm::Builtin(id),
            d,
            functionals,
            bias_verified: true,
        }
    }

    /// A user-supplied kernel behind the same interface.
    ///
    /// The evaluation rule must vanish outside [-1,1]^d; functionals are
    /// computed by quadrature and a non-positive mean is rejected.
    pub fn custom(
        label: impl Into<String>,
        d: usize,
        eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Result<Kernel> {
        let label = label.into();
        let box_support = |_axis: usize, _prefix: &[f64]| (-1.0, 1.0);
        let f = eval.clone();
        let mean = quad::integrate_nd(
            d,
            &box_support,
            &|x| f(x),
            QUAD_TOLERANCE,
            quad::DEFAULT_MAX_PANELS,
        )?;
        let f2 = eval.clone();
        let l2_norm_sq = quad::integrate_nd(
            d,
            &box_support,
            &|x| {
                let v = f2(x);
                v * v
            },
            QUAD_TOLERANCE,
            quad::DEFAULT_MAX_PANELS,
        )?;
        if mean <= 0.0 {
            return Err(Error::KernelValidity(format!(
                "kernel `{label}` has non-positive mean {mean:.6e}"
            )));
        }
        Ok(Kernel {
            form: KernelForm::Custom { label, eval },
            d,
            functionals: KernelFunctionals { l2_norm_sq, mean },
            bias_verified: false,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Evaluate the kernel at a point of R^d.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        match &self.form {
            KernelForm::Builtin(id) => builtin_eval(*id, self.d, x),
            KernelForm::Custom { eval, .. } => eval(x),
        }
    }

    /// `<psi, psi>` over R^d.
    pub fn l2_norm_sq(&self) -> f64 {
        self.functionals.l2_norm_sq
    }

    /// `<1, psi>` over R^d.
    pub fn mean(&self) -> f64 {
        self.functionals.mean
    }

    pub fn functionals(&self) -> KernelFunctionals {
        self.functionals
    }

    /// Whether the two-sided bias condition is established for this kernel.
    pub fn bias_verified(&self) -> bool {
        self.bias_verified
    }

    pub fn name(&self) -> String {
        match &self.form {
            KernelForm::Builtin(id) => id.name().to_string(),
            KernelForm::Custom { label, .. } => format!("custom:{label}"),
        }
    }

    /// Integration bounds for `x[axis]` given fixed earlier coordinates,
    /// trimmed to the kernel support so quadrature never wanders over zeros.
    pub(crate) fn axis_support(&self, axis: usize, prefix: &[f64]) -> (f64, f64) {
        match &self.form {
            KernelForm::Builtin(KernelId::IsoUpper) => {
                let used: f64 = prefix.iter().sum();
                (0.0, 1.0 - used)
            }
            KernelForm::Builtin(KernelId::IsoLower) => {
                let used: f64 = prefix.iter().sum();
                (-1.0 - used, 0.0)
            }
            KernelForm::Builtin(KernelId::CvxLower) | KernelForm::Builtin(KernelId::CvxUpper) => {
                let used: f64 = prefix.iter().map(|p| p * p).sum();
                let s = 1.0 - used;
                if s <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (-s.sqrt(), s.sqrt())
                }
            }
            KernelForm::Custom { .. } => {
                let _ = axis;
                (-1.0, 1.0)
            }
        }
    }
}

fn builtin_eval(id: KernelId, d: usize, x: &[f64]) -> f64 {
    match id {
        KernelId::IsoUpper => {
            let mut sum = 0.0;
            for &xi in x {
                if xi < 0.0 {
                    return 0.0;
                }
                sum += xi;
            }
            if sum <= 1.0 {
                1.0 - sum
            } else {
                0.0
            }
        }
        KernelId::IsoLower => {
            let mut sum = 0.0;
            for &xi in x {
                if xi > 0.0 {
                    return 0.0;
                }
                sum += xi;
            }
            if sum >= -1.0 {
                1.0 + sum
            } else {
                0.0
            }
        }
        KernelId::CvxLower | KernelId::CvxUpper => {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r <= 1.0 {
                cvx_profile(id, d, r)
            } else {
                0.0
            }
        }
    }
}

/// Radial profile of the convex-pair kernels on [0, 1].
fn cvx_profile(id: KernelId, d: usize, r: f64) -> f64 {
    match id {
        KernelId::CvxUpper => 1.0 - r * r,
        KernelId::CvxLower => {
            let df = d as f64;
            1.0 - (2.0 * df + 4.0) / (df + 1.0) * r + (df + 3.0) / (df + 1.0) * r * r
        }
        _ => unreachable!("not a radial kernel"),
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k as u128).product::<u128>() as f64
}

/// `<1, psi_1> = 1 / (d+1)!` for either simplex kernel.
fn iso_mean(d: usize) -> f64 {
    1.0 / factorial(d + 1)
}

/// `<psi_1, psi_1> = 2 / (d+2)!` for either simplex kernel.
fn iso_l2_norm_sq(d: usize) -> f64 {
    2.0 / factorial(d + 2)
}

/// Surface area of the unit sphere in R^d: `2 pi^{d/2} / Gamma(d/2)`.
pub(crate) fn sphere_surface_area(d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    2.0 * pi.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Gamma(d / 2) for positive integer `d`.
fn gamma_half(d: usize) -> f64 {
    if d % 2 == 0 {
        factorial(d / 2 - 1)
    } else {
        // Gamma(n + 1/2) = (2n)! sqrt(pi) / (4^n n!)
        let n = d / 2;
        factorial(2 * n) * std::f64::consts::PI.sqrt() / (4.0f64.powi(n as i32) * factorial(n))
    }
}

/// `S_{d-1} * int_0^1 g(r) r^{d-1} dr`, the ball integral of a radial function.
fn radial_integral(d: usize, g: impl Fn(f64) -> f64) -> Result<f64> {
    let (v, _) = quad::integrate(
        |r| g(r) * r.powi(d as i32 - 1),
        0.0,
        1.0,
        QUAD_TOLERANCE * 1e-2,
        quad::DEFAULT_MAX_PANELS,
    )?;
    Ok(sphere_surface_area(d) * v)
}

/// A matched (lower, upper) kernel pair.
#[derive(Debug, Clone)]
pub struct KernelPair {
    lower: Kernel,
    upper: Kernel,
    id: String,
}

impl KernelPair {
    /// The simplex pair bracketing coordinate-wise nondecreasing functions.
    pub fn isotonic(d: usize) -> KernelPair {
        KernelPair {
            lower: Kernel::builtin(KernelId::IsoLower, d),
            upper: Kernel::builtin(KernelId::IsoUpper, d),
            id: "isotonic".into(),
        }
    }

    /// The radial pair bracketing convex functions.
    pub fn convex(d: usize) -> KernelPair {
        KernelPair {
            lower: Kernel::builtin(KernelId::CvxLower, d),
            upper: Kernel::builtin(KernelId::CvxUpper, d),
            id: "convex".into(),
        }
    }

    pub fn for_class(class: ShapeClass, d: usize) -> KernelPair {
        match class {
            ShapeClass::Isotonic => KernelPair::isotonic(d),
            ShapeClass::Convex => KernelPair::convex(d),
        }
    }

    /// A custom pair; carries no bias guarantee.
    pub fn custom(label: impl Into<String>, lower: Kernel, upper: Kernel) -> KernelPair {
        KernelPair {
            lower,
            upper,
            id: format!("custom:{}", label.into()),
        }
    }

    pub fn lower(&self) -> &Kernel {
        &self.lower
    }

    pub fn upper(&self) -> &Kernel {
        &self.upper
    }

    /// Stable identifier used in calibration caches.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn d(&self) -> usize {
        self.lower.d()
    }
}

/// Kernel weights of one window, with the summaries the scan needs.
#[derive(Debug, Clone)]
pub struct WindowWeights {
    /// One weight per member point, row-major over the member box.
    pub weights: Vec<f64>,
    pub sum_w: f64,
    pub sum_w2: f64,
    pub count: usize,
}

impl WindowWeights {
    /// Usable for estimation: positive mass and at least 3^d members.
    ///
    /// Discretized kernel means can be non-positive on degenerate windows
    /// even though the continuous mean is positive; such windows are
    /// excluded from estimators but still enter standardized scans whenever
    /// `sum_w2 > 0`.
    pub fn usable(&self, d: usize) -> bool {
        self.sum_w > 0.0 && self.count >= 3usize.pow(d as u32)
    }
}

/// Evaluate `psi((x_i - t) / h)` at every member of an admissible window.
pub fn window_weights(kernel: &Kernel, window: &Window, grid: &GridDesign) -> WindowWeights {
    debug_assert!(window.is_admissible(grid));
    weights_for_steps(kernel, window.bandwidth().steps())
}

/// Weight tensor of any admissible window at the given bandwidth steps.
///
/// Weights depend only on the offset pattern, never on the center, because
/// admissibility guarantees the full member box. Row-major over the box.
pub(crate) fn weights_for_steps(kernel: &Kernel, steps: &[usize]) -> WindowWeights {
    let d = steps.len();
    let dims: Vec<usize> = steps.iter().map(|&k| 2 * k + 1).collect();
    let count: usize = dims.iter().product();
    let mut weights = Vec::with_capacity(count);
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut counters = vec![0usize; d];
    let mut u = vec![0.0f64; d];
    'outer: loop {
        for axis in 0..d {
            u[axis] = (counters[axis] as f64 - steps[axis] as f64) / steps[axis] as f64;
        }
        let w = kernel.eval(&u);
        weights.push(w);
        sum_w += w;
        sum_w2 += w * w;
        for pos in (0..d).rev() {
            counters[pos] += 1;
            if counters[pos] < dims[pos] {
                continue 'outer;
            }
            counters[pos] = 0;
        }
        break;
    }
    WindowWeights {
        weights,
        sum_w,
        sum_w2,
        count,
    }
}

/// Known awkward coordinates of a test function (jump or kink planes,
/// axis-aligned), used to seed quadrature panels. Purely an efficiency
/// hint; the integrals remain adaptive Gauss-Kronrod estimates.
#[derive(Debug, Clone, Default)]
pub struct BiasHints {
    /// Per-axis coordinates in the function's domain.
    pub axis_breakpoints: Vec<Vec<f64>>,
}

/// `<f(t + h * .), psi> / <1, psi>`: the mean of the kernel estimator at a
/// continuous probe, by nested adaptive quadrature over the kernel support.
pub fn smoothed_mean(
    kernel: &Kernel,
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    bandwidth: &[f64],
    abs_tol: f64,
) -> Result<f64> {
    smoothed_mean_with_hints(kernel, f, center, bandwidth, &BiasHints::default(), abs_tol)
}

/// [`smoothed_mean`] with breakpoint hints mapped into kernel coordinates.
pub fn smoothed_mean_with_hints(
    kernel: &Kernel,
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    bandwidth: &[f64],
    hints: &BiasHints,
    abs_tol: f64,
) -> Result<f64> {
    let d = kernel.d();
    let support = |axis: usize, prefix: &[f64]| kernel.axis_support(axis, prefix);
    // Function-domain breakpoints c map to kernel coordinates (c - t) / h.
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (axis, points) in hints.axis_breakpoints.iter().enumerate().take(d) {
        cuts[axis] = points
            .iter()
            .map(|c| (c - center[axis]) / bandwidth[axis])
            .filter(|u| u.abs() < 1.0)
            .collect();
    }
    let scratch = std::cell::RefCell::new(vec![0.0f64; d]);
    let integrand = |x: &[f64]| {
        let mut point = scratch.borrow_mut();
        for axis in 0..d {
            point[axis] = center[axis] + bandwidth[axis] * x[axis];
        }
        f(&point) * kernel.eval(x)
    };
    let numerator = quad::integrate_nd_with_breakpoints(
        d,
        &support,
        &cuts,
        &integrand,
        abs_tol,
        quad::DEFAULT_MAX_PANELS,
    )?;
    Ok(numerator / kernel.mean())
}

/// A continuous (center, bandwidth) probe for the bias checker.
#[derive(Debug, Clone)]
pub struct BiasProbe {
    pub center: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl BiasProbe {
    pub fn new(center: Vec<f64>, bandwidth: Vec<f64>) -> Result<Self> {
        if center.len() != bandwidth.len() {
            return Err(Error::InvalidParameter {
                name: "probe",
                reason: "center and bandwidth dimension mismatch".into(),
            });
        }
        for (&t, &h) in center.iter().zip(&bandwidth) {
            if !(h > 0.0 && h <= 0.5) {
                return Err(Error::InvalidParameter {
                    name: "probe",
                    reason: format!("bandwidth {h} outside (0, 1/2]"),
                });
            }
            if !(t >= h && t <= 1.0 - h) {
                return Err(Error::InvalidParameter {
                    name: "probe",
                    reason: format!("center {t} outside [h, 1-h] for h = {h}"),
                });
            }
        }
        Ok(BiasProbe { center, bandwidth })
    }
}

/// Which side of the bracket a margin belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BiasViolation {
    pub probe_index: usize,
    pub side: BiasSide,
    pub margin: f64,
}

/// Result of checking the two-sided bias condition over a probe set.
///
/// Margins are `f(t) - E[lower estimate]` and `E[upper estimate] - f(t)`;
/// both must stay nonnegative up to quadrature tolerance.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub class: ShapeClass,
    pub probes: usize,
    pub worst_lower_margin: f64,
    pub worst_upper_margin: f64,
    pub worst_lower_probe: usize,
    pub worst_upper_probe: usize,
    pub violations: Vec<BiasViolation>,
}

impl BiasReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst_margin(&self) -> f64 {
        self.worst_lower_margin.min(self.worst_upper_margin)
    }
}

/// Check `E[lower] <= f(t) <= E[upper]` at each probe by quadrature.
///
/// `f` must belong to the declared class on [0,1]^d; the checker verifies the
/// inequality numerically, it does not certify class membership.
pub fn check_bias_condition(
    pair: &KernelPair,
    f: &dyn Fn(&[f64]) -> f64,
    class: ShapeClass,
    probes: &[BiasProbe],
) -> Result<BiasReport> {
    check_bias_condition_with_hints(pair, f, class, probes, &BiasHints::default())
}

/// [`check_bias_condition`] with breakpoint hints for piecewise functions.
pub fn check_bias_condition_with_hints(
    pair: &KernelPair,
    f: &dyn Fn(&[f64]) -> f64,
    class: ShapeClass,
    probes: &[BiasProbe],
    hints: &BiasHints,
) -> Result<BiasReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter {
            name: "probes",
            reason: "at least one probe required".into(),
        });
    }
    let mut report = BiasReport {
        class,
        probes: probes.len(),
        worst_lower_margin: f64::INFINITY,
        worst_upper_margin: f64::INFINITY,
        worst_lower_probe: 0,
        worst_upper_probe: 0,
        violations: Vec::new(),
    };
    for (i, probe) in probes.iter().enumerate() {
        let truth = f(&probe.center);
        let lower_mean = smoothed_mean_with_hints(
            pair.lower(),
            f,
            &probe.center,
            &probe.bandwidth,
            hints,
            QUAD_TOLERANCE,
        )?;
        let upper_mean = smoothed_mean_with_hints(
            pair.upper(),
            f,
            &probe.center,
            &probe.bandwidth,
            hints,
            QUAD_TOLERANCE,
        )?;
        let lower_margin = truth - lower_mean;
        let upper_margin = upper_mean - truth;
        if lower_margin < report.worst_lower_margin {
            report.worst_lower_margin = lower_margin;
            report.worst_lower_probe = i;
        }
        if upper_margin < report.worst_upper_margin {
            report.worst_upper_margin = upper_margin;
            report.worst_upper_probe = i;
        }
        if lower_margin < BIAS_MARGIN_TOLERANCE {
            report.violations.push(BiasViolation {
                probe_index: i,
                side: BiasSide::Lower,
                margin: lower_margin,
            });
        }
        if upper_margin < BIAS_MARGIN_TOLERANCE {
            report.violations.push(BiasViolation {
                probe_index: i,
                side: BiasSide::Upper,
                margin: upper_margin,
            });
        }
    }
    Ok(report)
}

/// `<g, psi>` over the kernel support, by nested quadrature. Test oracle and
/// building block for moment checks.
pub fn kernel_inner_product(
    kernel: &Kernel,
    g: &dyn Fn(&[f64]) -> f64,
    abs_tol: f64,
) -> Result<f64> {
    let support = |axis: usize, prefix: &[f64]| kernel.axis_support(axis, prefix);
    quad::integrate_nd(
        kernel.d(),
        &support,
        &|x| g(x) * kernel.eval(x),
        abs_tol,
        quad::DEFAULT_MAX_PANELS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Bandwidth, Window};
    use approx::assert_abs_diff_eq;

    #[test]
    fn eval_examples() {
        let iso_u = Kernel::builtin(KernelId::IsoUpper, 2);
        assert_eq!(iso_u.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(iso_u.eval(&[0.5, 0.5]), 0.0);
        assert_eq!(iso_u.eval(&[0.25, 0.25]), 0.5);
        assert_eq!(iso_u.eval(&[-0.1, 0.2]), 0.0);

        let cvx_l = Kernel::builtin(KernelId::CvxLower, 2);
        assert_abs_diff_eq!(cvx_l.eval(&[1.0, 0.0]), 0.0, epsilon = 1e-15);
        // Factorized root at ||x|| = (d+1)/(d+3) = 3/5.
        assert_abs_diff_eq!(cvx_l.eval(&[0.6, 0.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cvx_l.eval(&[0.36, 0.48]), 0.0, epsilon = 1e-15);

        let cvx_u = Kernel::builtin(KernelId::CvxUpper, 2);
        assert_abs_diff_eq!(cvx_u.eval(&[0.6, 0.8]), 0.0, epsilon = 1e-15);
        assert_eq!(cvx_u.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(cvx_u.eval(&[0.9, 0.9]), 0.0);
    }

    #[test]
    fn iso_pair_reflection() {
        let lo = Kernel::builtin(KernelId::IsoLower, 3);
        let hi = Kernel::builtin(KernelId::IsoUpper, 3);
        let points = [
            [0.1, 0.2, 0.3],
            [0.5, 0.4, 0.05],
            [-0.2, 0.0, 0.1],
            [0.0, 0.0, 0.0],
        ];
        for p in points {
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            assert_abs_diff_eq!(hi.eval(&p), lo.eval(&neg), epsilon = 1e-15);
        }
    }

    #[test]
    fn cvx_kernels_are_radial() {
        for id in [KernelId::CvxLower, KernelId::CvxUpper] {
            let k = Kernel::builtin(id, 2);
            for r in [0.0, 0.3, 0.6, 0.95] {
                let on_axis = k.eval(&[r, 0.0]);
                let rotated = k.eval(&[r / 2.0f64.sqrt(), r / 2.0f64.sqrt()]);
                assert_abs_diff_eq!(on_axis, rotated, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn functionals_match_frozen_values() {
        let pi = std::f64::consts::PI;
        let iso = Kernel::builtin(KernelId::IsoUpper, 2);
        assert_abs_diff_eq!(iso.l2_norm_sq(), 1.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(iso.mean(), 1.0 / 6.0, epsilon = 1e-12);

        let iso1 = Kernel::builtin(KernelId::IsoLower, 1);
        assert_abs_diff_eq!(iso1.l2_norm_sq(), 1.0 / 3.0, epsilon = 1e-12);

        let cvx_u = Kernel::builtin(KernelId::CvxUpper, 2);
        assert_abs_diff_eq!(cvx_u.l2_norm_sq(), pi / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cvx_u.mean(), pi / 2.0, epsilon = 1e-9);

        let cvx_l = Kernel::builtin(KernelId::CvxLower, 2);
        assert_abs_diff_eq!(cvx_l.l2_norm_sq(), pi / 27.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cvx_l.mean(), pi / 18.0, epsilon = 1e-9);
    }

    #[test]
    fn quadrature_oracle_agrees_with_analytic_functionals() {
        // Full nested quadrature over the support, independent of the
        // closed forms and of the radial route.
        for d in [1usize, 2] {
            for id in [
                KernelId::IsoLower,
                KernelId::IsoUpper,
                KernelId::CvxLower,
                KernelId::CvxUpper,
            ] {
                let k = Kernel::builtin(id, d);
                let l2 = kernel_inner_product(&k, &|x| k.eval(x), 1e-10).unwrap();
                let mean = kernel_inner_product(&k, &|_| 1.0, 1e-10).unwrap();
                assert!(
                    (l2 - k.l2_norm_sq()).abs() <= 1e-8 * l2.abs().max(1.0),
                    "{} d={d}: {l2} vs {}",
                    id.name(),
                    k.l2_norm_sq()
                );
                assert!(
                    (mean - k.mean()).abs() <= 1e-8 * mean.abs().max(1.0),
                    "{} d={d}",
                    id.name()
                );
            }
        }
    }

    #[test]
    fn cvx_first_moments_vanish() {
        for id in [KernelId::CvxLower, KernelId::CvxUpper] {
            let k = Kernel::builtin(id, 2);
            for axis in 0..2 {
                let m = kernel_inner_product(&k, &|x| x[axis], QUAD_TOLERANCE).unwrap();
                assert_abs_diff_eq!(m, 0.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn window_weight_examples() {
        let g = make_grid(4, 2).unwrap();
        let bw = Bandwidth::from_steps(vec![1, 1], &g).unwrap();
        // Center (0.5, 0.5) is 0-based index (1, 1).
        let w = Window::new(vec![1, 1], bw);
        let iso_u = Kernel::builtin(KernelId::IsoUpper, 2);
        let ww = window_weights(&iso_u, &w, &g);
        assert_eq!(ww.count, 9);
        // Row-major member box; center is offset (1,1) -> flat 4.
        assert_eq!(ww.weights[4], 1.0);
        // (0.75, 0.75) is the (+1,+1) corner -> flat 8, on the simplex edge.
        assert_eq!(ww.weights[8], 0.0);
        assert!(ww.sum_w2 > 0.0);
        assert!(ww.usable(2));
    }

    #[test]
    fn cvx_lower_three_by_three_window() {
        // Hand enumeration: center 1, four axis neighbours at ||u|| = 1 give
        // 0, four corners fall outside the ball. Sum = 1.
        let g = make_grid(6, 2).unwrap();
        let bw = Bandwidth::from_steps(vec![1, 1], &g).unwrap();
        let w = Window::new(vec![2, 3], bw);
        let cvx_l = Kernel::builtin(KernelId::CvxLower, 2);
        let ww = window_weights(&cvx_l, &w, &g);
        let direct: f64 = ww.weights.iter().sum();
        assert_abs_diff_eq!(ww.sum_w, direct, epsilon = 0.0);
        assert_abs_diff_eq!(ww.sum_w, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ww.sum_w2, 1.0, epsilon = 1e-12);
        assert!(ww.usable(2));
    }

    #[test]
    fn bias_margin_for_affine_isotonic() {
        // f(x) = x1 + x2: the upper margin is (h1 + h2)/4 and the lower
        // margin matches it by reflection symmetry.
        let pair = KernelPair::isotonic(2);
        let f = |x: &[f64]| x[0] + x[1];
        let probes = vec![
            BiasProbe::new(vec![0.5, 0.5], vec![0.25, 0.25]).unwrap(),
            BiasProbe::new(vec![0.4, 0.6], vec![0.1, 0.3]).unwrap(),
        ];
        for probe in &probes {
            let upper =
                smoothed_mean(pair.upper(), &f, &probe.center, &probe.bandwidth, 1e-10).unwrap();
            let expect = (probe.bandwidth[0] + probe.bandwidth[1]) / 4.0;
            let truth = f(&probe.center);
            assert_abs_diff_eq!(upper - truth, expect, epsilon = 1e-8);
            let lower =
                smoothed_mean(pair.lower(), &f, &probe.center, &probe.bandwidth, 1e-10).unwrap();
            assert_abs_diff_eq!(truth - lower, expect, epsilon = 1e-8);
        }
        let report = check_bias_condition(&pair, &f, ShapeClass::Isotonic, &probes).unwrap();
        assert!(report.passed());
        assert!(report.worst_margin() > 0.0);
    }

    #[test]
    fn bias_margins_for_convex_pair() {
        let pair = KernelPair::convex(2);
        // Affine functions are smoothed exactly: both margins vanish.
        let affine = |x: &[f64]| 3.0 * x[0] - 2.0 * x[1] + 0.5;
        let probes = vec![BiasProbe::new(vec![0.5, 0.4], vec![0.2, 0.3]).unwrap()];
        let report = check_bias_condition(&pair, &affine, ShapeClass::Convex, &probes).unwrap();
        assert!(report.passed());
        assert_abs_diff_eq!(report.worst_lower_margin, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(report.worst_upper_margin, 0.0, epsilon = 1e-7);

        // Strictly convex at the probe center: both margins strictly positive.
        let t0 = [0.5, 0.5];
        let quadratic =
            move |x: &[f64]| (x[0] - t0[0]) * (x[0] - t0[0]) + (x[1] - t0[1]) * (x[1] - t0[1]);
        let probes = vec![BiasProbe::new(t0.to_vec(), vec![0.25, 0.25]).unwrap()];
        let report = check_bias_condition(&pair, &quadratic, ShapeClass::Convex, &probes).unwrap();
        assert!(report.passed());
        assert!(report.worst_lower_margin > 1e-4);
        assert!(report.worst_upper_margin > 1e-4);
    }

    #[test]
    fn custom_kernel_rejected_when_mean_nonpositive() {
        let err = Kernel::custom(
            "negative",
            1,
            Arc::new(|x: &[f64]| if x[0].abs() <= 1.0 { -1.0 } else { 0.0 }),
        )
        .unwrap_err();
        assert!(matches!(err, Error::KernelValidity(_)));

        let ok = Kernel::custom(
            "box",
            1,
            Arc::new(|x: &[f64]| if x[0].abs() <= 1.0 { 1.0 } else { 0.0 }),
        )
        .unwrap();
        assert!(!ok.bias_verified());
        assert_abs_diff_eq!(ok.mean(), 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(ok.l2_norm_sq(), 2.0, epsilon = 1e-7);
    }

    #[test]
    fn probe_validation() {
        assert!(BiasProbe::new(vec![0.5], vec![0.6]).is_err());
        assert!(BiasProbe::new(vec![0.1], vec![0.2]).is_err());
        assert!(BiasProbe::new(vec![0.5, 0.5], vec![0.5]).is_err());
        assert!(BiasProbe::new(vec![0.2], vec![0.2]).is_ok());
    }

    #[test]
    fn sphere_areas() {
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(sphere_surface_area(1), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sphere_surface_area(2), 2.0 * pi, epsilon = 1e-12);
        assert_abs_diff_eq!(sphere_surface_area(3), 4.0 * pi, epsilon = 1e-12);
        assert_abs_diff_eq!(sphere_surface_area(4), 2.0 * pi * pi, epsilon = 1e-12);
    }
}
