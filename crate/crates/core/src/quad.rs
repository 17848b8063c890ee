//! Adaptive Gauss-Kronrod quadrature, one-dimensional and nested.
//!
//! The built-in kernels are polynomials on simple supports, so a 7-15 pair
//! with globally adaptive bisection reaches absolute tolerances of 1e-10 in a
//! handful of panels. The same engine doubles as the independent oracle for
//! the analytic kernel functionals and drives the bias-condition checker,
//! where integrands may carry step discontinuities from the test function.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Kronrod-15 abscissae on [0, 1] side (symmetric about 0).
const XK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// Kronrod-15 weights matching `XK`.
const WK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Gauss-7 weights at `XK[1], XK[3], XK[5], XK[7]`.
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// Narrower intervals cannot be refined further in f64.
const MIN_WIDTH: f64 = 1e-14;

/// Default refinement cap per 1-d integral.
pub const DEFAULT_MAX_PANELS: usize = 20_000;

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    refinable: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Unrefinable panels sink to the bottom of the heap.
        (self.refinable, self.error)
            .partial_cmp(&(other.refinable, other.error))
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut low_samples = [0.0f64; 8];
    let mut high_samples = [0.0f64; 8];
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in XK.iter().zip(WK.iter()).enumerate() {
        let lo = f(mid - half * x);
        let hi = if x == 0.0 { 0.0 } else { f(mid + half * x) };
        low_samples[i] = lo;
        high_samples[i] = hi;
        let pair = if x == 0.0 { lo } else { lo + hi };
        kronrod += wk * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let value = kronrod * half;
    let diff = ((kronrod - gauss) * half).abs();
    // Mean absolute deviation of the integrand over the panel; rescaling the
    // raw |K - G| by it keeps smooth panels from being over-refined while
    // still flagging panels that straddle a discontinuity.
    let mean = kronrod * 0.5;
    let mut asc = 0.0;
    for (i, &wk) in WK.iter().enumerate() {
        asc += wk * (low_samples[i] - mean).abs();
        if XK[i] != 0.0 {
            asc += wk * (high_samples[i] - mean).abs();
        }
    }
    asc *= half.abs();
    let error = if asc == 0.0 || diff == 0.0 {
        diff
    } else {
        asc * 1.0f64.min((200.0 * diff / asc).powf(1.5))
    };
    (value, error)
}

/// Globally adaptive integral of `f` over `[a, b]` to absolute tolerance.
///
/// Returns `(value, error_estimate)`. Fails if the tolerance is unreachable
/// within `max_panels` bisections.
pub fn integrate<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<(f64, f64)> {
    integrate_with_breakpoints(f, a, b, &[], abs_tol, max_panels)
}

/// Adaptive integral with known awkward points (jumps or kinks of the
/// integrand) used as initial panel boundaries. The estimate is still pure
/// Gauss-Kronrod refinement; the breakpoints only seed the partition so a
/// discontinuity never straddles a panel.
pub fn integrate_with_breakpoints<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
    max_panels: usize,
) -> Result<(f64, f64)> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("non-finite interval".into()));
    }
    if b <= a {
        return Ok((0.0, 0.0));
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&c| c > a && c < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.insert(0, a);
    cuts.push(b);
    integrate_partitioned(&mut f, &cuts, abs_tol, max_panels)
}

fn integrate_partitioned<F: FnMut(f64) -> f64>(
    f: &mut F,
    cuts: &[f64],
    abs_tol: f64,
    max_panels: usize,
) -> Result<(f64, f64)> {
    let (a, b) = (cuts[0], cuts[cuts.len() - 1]);
    let mut heap = BinaryHeap::new();
    let mut total_error = 0.0;
    let mut panels = 0usize;
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi <= lo {
            continue;
        }
        let (value, error) = gauss_kronrod(f, lo, hi);
        total_error += error;
        panels += 1;
        heap.push(Panel {
            a: lo,
            b: hi,
            value,
            error,
            refinable: hi - lo > MIN_WIDTH,
        });
    }

    while total_error > abs_tol {
        let worst = match heap.pop() {
            Some(p) if p.refinable => p,
            _ => break, // nothing left to refine
        };
        panels += 1;
        if panels > max_panels {
            return Err(Error::Quadrature(format!(
                "tolerance {abs_tol:.3e} unreachable after {max_panels} panels \
                 (error estimate {total_error:.3e})"
            )));
        }
        total_error -= worst.error;
        let mid = 0.5 * (worst.a + worst.b);
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (v, e) = gauss_kronrod(f, lo, hi);
            total_error += e;
            heap.push(Panel {
                a: lo,
                b: hi,
                value: v,
                error: e,
                refinable: hi - lo > MIN_WIDTH,
            });
        }
    }

    // Sum panels in a deterministic order for reproducibility.
    let mut parts: Vec<Panel> = heap.into_vec();
    parts.sort_by(|p, q| p.a.total_cmp(&q.a));
    let total: f64 = parts.iter().map(|p| p.value).sum();
    Ok((total, total_error))
}

/// Nested adaptive integral over a d-dimensional region.
///
/// `support(axis, prefix)` gives the integration bounds for `x[axis]` given
/// the already-fixed coordinates `prefix = [x[0], ..., x[axis-1]]`; an empty
/// interval is allowed and contributes zero. The overall absolute tolerance
/// is split between the outer rule and the inner integrals, assuming the
/// region diameter stays O(1) (true for all kernel supports here).
pub fn integrate_nd(
    d: usize,
    support: &dyn Fn(usize, &[f64]) -> (f64, f64),
    f: &dyn Fn(&[f64]) -> f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<f64> {
    integrate_nd_with_breakpoints(d, support, &[], f, abs_tol, max_panels)
}

/// Nested integral with per-axis breakpoint seeds (empty slice: none).
pub fn integrate_nd_with_breakpoints(
    d: usize,
    support: &dyn Fn(usize, &[f64]) -> (f64, f64),
    breakpoints: &[Vec<f64>],
    f: &dyn Fn(&[f64]) -> f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<f64> {
    let mut prefix = Vec::with_capacity(d);
    integrate_level(d, support, breakpoints, f, abs_tol, max_panels, &mut prefix)
}

fn integrate_level(
    d: usize,
    support: &dyn Fn(usize, &[f64]) -> (f64, f64),
    breakpoints: &[Vec<f64>],
    f: &dyn Fn(&[f64]) -> f64,
    tol: f64,
    max_panels: usize,
    prefix: &mut Vec<f64>,
) -> Result<f64> {
    let axis = prefix.len();
    let (a, b) = support(axis, prefix);
    if !(b > a) {
        return Ok(0.0);
    }
    let empty: &[f64] = &[];
    let cuts = breakpoints.get(axis).map(|v| v.as_slice()).unwrap_or(empty);
    let mut pending: Option<Error> = None;
    let result = if axis + 1 == d {
        integrate_with_breakpoints(
            |x| {
                prefix.push(x);
                let v = f(prefix);
                prefix.pop();
                v
            },
            a,
            b,
            cuts,
            0.5 * tol,
            max_panels,
        )
    } else {
        // Inner integrals run well below the outer tolerance so their
        // residual error does not read as an unresolvable noise floor in
        // the outer error estimates.
        let inner_tol = 0.05 * tol / (b - a);
        integrate_with_breakpoints(
            |x| {
                if pending.is_some() {
                    return 0.0;
                }
                prefix.push(x);
                let v =
                    integrate_level(d, support, breakpoints, f, inner_tol, max_panels, prefix);
                prefix.pop();
                match v {
                    Ok(v) => v,
                    Err(e) => {
                        pending = Some(e);
                        0.0
                    }
                }
            },
            a,
            b,
            cuts,
            0.5 * tol,
            max_panels,
        )
    };
    if let Some(e) = pending {
        return Err(e);
    }
    result.map(|(v, _)| v)
}
