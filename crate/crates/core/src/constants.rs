//! Exact optimality constants and leading-order width predictions, computed
//! from the kernel L2 norms. Diagnostic annotations only: bands are fully
//! data-driven and never consult these.

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelId, ShapeClass};
use crate::sim::TestFunction;

/// The sharp constants in the minimax band width for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityConstants {
    pub class: ShapeClass,
    pub d: usize,
    /// Exponent of `log(en)/n` in the width rate.
    pub rate_exponent: f64,
    pub delta_lower: f64,
    pub delta_upper: f64,
    /// Inflated constants for non-diagonal curvature (convex only).
    pub delta_lower_star: Option<f64>,
    pub delta_upper_star: Option<f64>,
    /// `sqrt(2 (d+3) / (d+1))` (convex only).
    pub alpha_d: Option<f64>,
}

/// Compute the constants from the kernel norms.
///
/// Isotonic: `Delta^z = ((d+2)/(2d) |psi_1^z|^2)^(-1/(2+d))`, rate `1/(2+d)`.
/// Convex:   `Delta^l = ((d+4)/(2d) (2(d+3)/(d+1))^(d/2) |psi_2^l|^2)^(-2/(4+d))`,
///           `Delta^u = ((d+4)/(2d) 2^(d/2) |psi_2^u|^2)^(-2/(4+d))`,
///           starred variants carry the factor `d^(d/(d+4))`, rate `2/(4+d)`.
pub fn optimal_constants(class: ShapeClass, d: usize) -> Result<OptimalityConstants> {
    if d < 1 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "dimension must be at least 1".into(),
        });
    }
    let df = d as f64;
    match class {
        ShapeClass::Isotonic => {
            let l2_lower = Kernel::builtin(KernelId::IsoLower, d).l2_norm_sq();
            let l2_upper = Kernel::builtin(KernelId::IsoUpper, d).l2_norm_sq();
            let exponent = -1.0 / (2.0 + df);
            let delta = |l2: f64| ((df + 2.0) / (2.0 * df) * l2).powf(exponent);
            Ok(OptimalityConstants {
                class,
                d,
                rate_exponent: 1.0 / (2.0 + df),
                delta_lower: delta(l2_lower),
                delta_upper: delta(l2_upper),
                delta_lower_star: None,
                delta_upper_star: None,
                alpha_d: None,
            })
        }
        ShapeClass::Convex => {
            let l2_lower = Kernel::builtin(KernelId::CvxLower, d).l2_norm_sq();
            let l2_upper = Kernel::builtin(KernelId::CvxUpper, d).l2_norm_sq();
            let alpha_d = (2.0 * (df + 3.0) / (df + 1.0)).sqrt();
            let exponent = -2.0 / (4.0 + df);
            let lead = (df + 4.0) / (2.0 * df);
            let delta_lower = (lead * alpha_d.powi(d as i32) * l2_lower).powf(exponent);
            let delta_upper =
                (lead * 2.0f64.sqrt().powi(d as i32) * l2_upper).powf(exponent);
            let star = df.powf(df / (df + 4.0));
            Ok(OptimalityConstants {
                class,
                d,
                rate_exponent: 2.0 / (4.0 + df),
                delta_lower,
                delta_upper,
                delta_lower_star: Some(delta_lower * star),
                delta_upper_star: Some(delta_upper * star),
                alpha_d: Some(alpha_d),
            })
        }
    }
}

/// `rho_n = (log(en)/n)^exponent` for the class rate.
pub fn rate_scale(class: ShapeClass, d: usize, n: usize) -> Result<f64> {
    let constants = optimal_constants(class, d)?;
    let nf = n as f64;
    Ok(((std::f64::consts::E * nf).ln() / nf).powf(constants.rate_exponent))
}

/// Local curvature constants of a test function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCurvature {
    /// Geometric mean of the gradient components (isotonic constant).
    pub l1: Option<f64>,
    /// `det(Hessian)^(1/d)` (convex constant).
    pub l2: Option<f64>,
    /// Geometric mean of the Hessian diagonal (convex, general orientation).
    pub l2_star: Option<f64>,
    /// Whether the Hessian is diagonal at the point.
    pub hessian_diagonal: Option<bool>,
}

/// Evaluate the curvature constants where analytic derivatives exist.
pub fn local_curvature(f: &TestFunction, t0: &[f64]) -> LocalCurvature {
    let d = t0.len();
    let l1 = f.gradient(t0).map(|g| geometric_mean(&g));
    let (l2, l2_star, diagonal) = match f.hessian(t0) {
        Some(h) => {
            let diag: Vec<f64> = (0..d).map(|i| h[i][i]).collect();
            let mut off_diagonal = 0.0f64;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        off_diagonal = off_diagonal.max(h[i][j].abs());
                    }
                }
            }
            let det = determinant(&h);
            (
                Some(signed_root(det, d)),
                Some(geometric_mean(&diag)),
                Some(off_diagonal <= 1e-12),
            )
        }
        None => (None, None, None),
    };
    LocalCurvature {
        l1,
        l2,
        l2_star,
        hessian_diagonal: diagonal,
    }
}

fn geometric_mean(values: &[f64]) -> f64 {
    let product: f64 = values.iter().product();
    signed_root(product, values.len())
}

/// d-th root, zero for non-positive arguments (curvature degenerate).
fn signed_root(v: f64, d: usize) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v.powf(1.0 / d as f64)
    }
}

/// Determinant via LU with partial pivoting; matrices here are tiny.
pub(crate) fn determinant(matrix: &[Vec<f64>]) -> f64 {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut det = 1.0f64;
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..d {
            let factor = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    det
}

/// Leading-order one-sided deviation predictions at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthPrediction {
    /// Predicted `f - lower` deviation.
    pub lower: f64,
    /// Predicted `upper - f` deviation.
    pub upper: f64,
}

/// Predict the one-sided band deviations `Delta^z L^power rho_n` at `t0`.
///
/// Isotonic uses the gradient's geometric mean; convex uses the Hessian
/// determinant root when the Hessian is diagonal at `t0` and the inflated
/// starred constants with the diagonal geometric mean otherwise.
pub fn predicted_width(
    f: &TestFunction,
    t0: &[f64],
    n: usize,
    class: ShapeClass,
) -> Result<WidthPrediction> {
    let d = t0.len();
    let constants = optimal_constants(class, d)?;
    let rho = rate_scale(class, d, n)?;
    let curvature = local_curvature(f, t0);
    match class {
        ShapeClass::Isotonic => {
            let l1 = curvature.l1.ok_or_else(|| Error::InvalidParameter {
                name: "function",
                reason: format!("`{}` has no analytic gradient", f.id()),
            })?;
            if l1 <= 0.0 {
                return Err(Error::ZeroCurvature(format!(
                    "gradient geometric mean vanishes for `{}` at the probe",
                    f.id()
                )));
            }
            let power = d as f64 / (2.0 + d as f64);
            Ok(WidthPrediction {
                lower: constants.delta_lower * l1.powf(power) * rho,
                upper: constants.delta_upper * l1.powf(power) * rho,
            })
        }
        ShapeClass::Convex => {
            let diagonal = curvature
                .hessian_diagonal
                .ok_or_else(|| Error::InvalidParameter {
                    name: "function",
                    reason: format!("`{}` has no analytic Hessian", f.id()),
                })?;
            let power = d as f64 / (4.0 + d as f64);
            if diagonal {
                let l2 = curvature.l2.unwrap_or(0.0);
                if l2 <= 0.0 {
                    return Err(Error::ZeroCurvature(format!(
                        "Hessian determinant vanishes for `{}` at the probe",
                        f.id()
                    )));
                }
                Ok(WidthPrediction {
                    lower: constants.delta_lower * l2.powf(power) * rho,
                    upper: constants.delta_upper * l2.powf(power) * rho,
                })
            } else {
                let l2_star = curvature.l2_star.unwrap_or(0.0);
                if l2_star <= 0.0 {
                    return Err(Error::ZeroCurvature(format!(
                        "Hessian diagonal geometric mean vanishes for `{}`",
                        f.id()
                    )));
                }
                Ok(WidthPrediction {
                    lower: constants.delta_lower_star.unwrap() * l2_star.powf(power) * rho,
                    upper: constants.delta_upper_star.unwrap() * l2_star.powf(power) * rho,
                })
            }
        }
    }
}
