//! Honest finite-sample confidence bands for shape-restricted regression on
//! d-dimensional grids.
//!
//! Given noisy observations of a function that is known to be coordinate-wise
//! nondecreasing (isotonic) or convex, the library builds simultaneous lower
//! and upper band fields with guaranteed coverage at every sample size. The
//! construction standardizes kernel averages over every admissible window,
//! penalizes them by scale so all window sizes compete fairly, calibrates the
//! resulting multiscale statistic by Monte Carlo under pure noise, and then
//! optimizes the per-window bounds over all bandwidths at each grid point.
//! Band widths adapt automatically to the unknown function's smoothness,
//! local structure, and intrinsic dimension.

pub mod bands;
pub mod calibration;
pub mod constants;
pub mod error;
pub mod field;
pub mod grid;
pub mod kernels;
pub mod kv;
pub mod penalty;
pub mod quad;
pub mod region;
pub mod scan;
pub mod sim;

mod fft;
mod par;

pub use bands::{build_bands, check_coverage, width_profile, BandBuilder, BandResult};
pub use calibration::{calibrate, load_calibration, save_calibration, Calibration};
pub use constants::{optimal_constants, predicted_width, OptimalityConstants};
pub use error::{Error, Result};
pub use field::Field;
pub use grid::{
    enumerate_windows, make_grid, Bandwidth, BandwidthPolicy, GridDesign, Window,
};
pub use kernels::{
    check_bias_condition, window_weights, BiasProbe, BiasReport, Kernel, KernelId, KernelPair,
    ShapeClass,
};
pub use region::Region;
pub use scan::{
    multiscale_statistic, multiscale_statistic_brute, standardized_average, tstar, PairPlans,
    ScanConfig, ScanPlan, ScanResult, Sign,
};
pub use sim::{builtin_functions, coverage_study, generate_data, rate_diagnostic, TestFunction};
