//! The multiscale penalty that puts all window scales on the same footing.

/// `gamma(r) = sqrt(2 log(e / r))` for `r` in `(0, e]`.
///
/// Strictly decreasing, nonnegative on the domain, and zero at `r = e`.
pub fn gamma(r: f64) -> f64 {
    debug_assert!(r > 0.0);
    (2.0 * (1.0 - r.ln())).max(0.0).sqrt()
}

/// Penalty of a window holding `count` of the grid's `n` points.
///
/// The penalty argument is the window fraction `count / n`, which keeps the
/// argument inside (0, 1] and recovers the continuum penalty of the volume
/// `2^d prod(h_i)` as the grid refines.
pub fn window_penalty(count: usize, n: usize) -> f64 {
    debug_assert!(count >= 1 && count <= n);
    gamma(count as f64 / n as f64)
}
