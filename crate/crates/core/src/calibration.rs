//! Monte Carlo calibration of the critical value.
//!
//! The multiscale statistic of pure standard-Gaussian noise is pivotal: its
//! distribution involves neither the regression function nor the noise scale.
//! The critical value is therefore the empirical (1-alpha) quantile of `T*`
//! over seeded noise replicates. Replicates draw from counter-based
//! substreams keyed by (seed, replicate index), so parallel and serial runs
//! agree bit for bit and the quantile is schedule-independent.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BandwidthPolicy, GridDesign};
use crate::kernels::KernelPair;
use crate::kv::{f64_from_hex, f64_to_hex, KvRecord};
use crate::par::par_map;
use crate::scan::PairPlans;

/// Replicates used to smooth the bootstrap standard error.
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Default replicate count: quantile Monte Carlo error stays a few percent
/// of the penalty scale at these sizes.
pub fn default_nsim(m: usize) -> usize {
    if m <= 30 {
        2000
    } else {
        1000
    }
}

/// Independent substream for one replicate of a seeded experiment.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A standard Gaussian field drawn from substream `index` of `seed`.
pub fn noise_field(grid: &GridDesign, seed: u64, index: u64) -> Field {
    let mut rng = replicate_rng(seed, index);
    let values: Vec<f64> = (0..grid.n())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Field::new(*grid, values).expect("gaussian draws are finite")
}

/// The context a calibration is valid for.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationContext {
    pub m: usize,
    pub d: usize,
    pub kernel_pair: String,
    pub policy: BandwidthPolicy,
    pub alpha: f64,
}

/// A calibrated critical value with full provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    /// Empirical (1-alpha) quantile of `T*` under pure noise.
    pub kappa: f64,
    /// Bootstrap standard error of the quantile.
    pub kappa_se: f64,
    pub nsim: usize,
    pub seed: u64,
    pub m: usize,
    pub d: usize,
    pub kernel_pair: String,
    pub policy: BandwidthPolicy,
}

impl Calibration {
    pub fn context(&self) -> CalibrationContext {
        CalibrationContext {
            m: self.m,
            d: self.d,
            kernel_pair: self.kernel_pair.clone(),
            policy: self.policy,
            alpha: self.alpha,
        }
    }

    /// Check this record against an expected context, naming the first
    /// differing field.
    pub fn check_context(&self, expected: &CalibrationContext) -> Result<()> {
        if self.m != expected.m {
            return Err(mismatch("m", self.m, expected.m));
        }
        if self.d != expected.d {
            return Err(mismatch("d", self.d, expected.d));
        }
        if self.kernel_pair != expected.kernel_pair {
            return Err(mismatch(
                "kernel_pair",
                &self.kernel_pair,
                &expected.kernel_pair,
            ));
        }
        if self.policy != expected.policy {
            return Err(mismatch(
                "policy",
                self.policy.name(),
                expected.policy.name(),
            ));
        }
        if self.alpha.to_bits() != expected.alpha.to_bits() {
            return Err(mismatch("alpha", self.alpha, expected.alpha));
        }
        Ok(())
    }
}

fn mismatch(
    field: &'static str,
    stored: impl std::fmt::Display,
    expected: impl std::fmt::Display,
) -> Error {
    Error::ContextMismatch {
        field,
        stored: stored.to_string(),
        expected: expected.to_string(),
    }
}

/// Estimate the critical value by Monte Carlo.
///
/// Draws `nsim` independent standard Gaussian fields from per-replicate
/// substreams of `seed`, computes `T*` for each, and returns the upper
/// empirical order statistic at 1-based index `ceil((1-alpha) nsim)`. The
/// upper order statistic (rather than an interpolated quantile) preserves
/// the conservative direction of the coverage guarantee at finite `nsim`.
pub fn calibrate(
    grid: &GridDesign,
    pair: &KernelPair,
    policy: BandwidthPolicy,
    alpha: f64,
    nsim: usize,
    seed: u64,
) -> Result<Calibration> {
    if nsim < 100 {
        return Err(Error::InvalidParameter {
            name: "nsim",
            reason: format!("at least 100 replicates required, got {nsim}"),
        });
    }
    if !(alpha > 0.001 && alpha <= 0.5) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must lie in (0.001, 0.5], got {alpha}"),
        });
    }
    let plans = PairPlans::new(grid, pair, policy)?;
    let values = replicate_statistics(grid, &plans, nsim, seed)?;

    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let kappa = sorted[quantile_index(alpha, nsim)];
    let kappa_se = bootstrap_se(&sorted, alpha, seed, nsim);

    Ok(Calibration {
        alpha,
        kappa,
        kappa_se,
        nsim,
        seed,
        m: grid.m(),
        d: grid.d(),
        kernel_pair: pair.id().to_string(),
        policy,
    })
}

/// All replicate `T*` values, in replicate order regardless of schedule.
pub fn replicate_statistics(
    grid: &GridDesign,
    plans: &PairPlans,
    nsim: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let results = par_map(nsim, |r| {
        let noise = noise_field(grid, seed, r as u64);
        plans.tstar(&noise)
    });
    let mut values = Vec::with_capacity(nsim);
    for v in results {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::Data(format!("non-finite replicate statistic {v}")));
        }
        values.push(v);
    }
    Ok(values)
}

/// 0-based index of the 1-based order statistic `ceil((1-alpha) nsim)`.
pub(crate) fn quantile_index(alpha: f64, nsim: usize) -> usize {
    let rank = ((1.0 - alpha) * nsim as f64).ceil() as usize;
    rank.clamp(1, nsim) - 1
}

/// Bootstrap standard error of the quantile, from a dedicated substream
/// (index `nsim`, past every replicate stream).
fn bootstrap_se(sorted: &[f64], alpha: f64, seed: u64, nsim: usize) -> f64 {
    let mut rng = replicate_rng(seed, nsim as u64);
    let idx = quantile_index(alpha, nsim);
    let mut estimates = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut resample = vec![0.0f64; nsim];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in resample.iter_mut() {
            *slot = sorted[rng.random_range(0..nsim)];
        }
        resample.sort_by(f64::total_cmp);
        estimates.push(resample[idx]);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
        / (estimates.len() - 1) as f64;
    var.sqrt()
}

const FORMAT_TAG: &str = "shapeband-calibration";
const FORMAT_VERSION: u64 = 1;

/// Persist a calibration as a checksummed key-value record.
///
/// `kappa` and its standard error are stored both as decimals (for humans)
/// and as hex bit patterns (for bit-exact round trips).
pub fn save_calibration(cal: &Calibration, path: impl AsRef<Path>) -> Result<()> {
    let mut record = KvRecord::new();
    record.push("format", FORMAT_TAG);
    record.push("version", FORMAT_VERSION);
    record.push("m", cal.m);
    record.push("d", cal.d);
    record.push("kernel_pair", &cal.kernel_pair);
    record.push("policy", cal.policy.name());
    record.push("alpha", cal.alpha);
    record.push("nsim", cal.nsim);
    record.push("seed", cal.seed);
    record.push("kappa", cal.kappa);
    record.push("kappa_hex", f64_to_hex(cal.kappa));
    record.push("kappa_se", cal.kappa_se);
    record.push("kappa_se_hex", f64_to_hex(cal.kappa_se));
    std::fs::write(path, record.to_text_checksummed())?;
    Ok(())
}

/// Load a calibration, verifying integrity and the expected context.
pub fn load_calibration(
    path: impl AsRef<Path>,
    expected: &CalibrationContext,
) -> Result<Calibration> {
    let cal = load_calibration_unchecked(path)?;
    cal.check_context(expected)?;
    Ok(cal)
}

/// Load without a context check (the caller adopts the stored context).
pub fn load_calibration_unchecked(path: impl AsRef<Path>) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)?;
    let record = KvRecord::from_text_checksummed(&text)?;
    if record.require("format")? != FORMAT_TAG {
        return Err(Error::Integrity(format!(
            "unexpected format tag `{}`",
            record.require("format")?
        )));
    }
    if record.parse_u64("version")? != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported version {}",
            record.require("version")?
        )));
    }
    Ok(Calibration {
        alpha: record.parse_f64("alpha")?,
        kappa: f64_from_hex(record.require("kappa_hex")?)?,
        kappa_se: f64_from_hex(record.require("kappa_se_hex")?)?,
        nsim: record.parse_usize("nsim")?,
        seed: record.parse_u64("seed")?,
        m: record.parse_usize("m")?,
        d: record.parse_usize("d")?,
        kernel_pair: record.require("kernel_pair")?.to_string(),
        policy: BandwidthPolicy::parse(record.require("policy")?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernels::KernelPair;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let g = make_grid(5, 1).unwrap();
        let a = noise_field(&g, 42, 0);
        let b = noise_field(&g, 42, 0);
        assert_eq!(a.values(), b.values());
        let c = noise_field(&g, 42, 1);
        assert_ne!(a.values(), c.values());
        let d = noise_field(&g, 43, 0);
        assert_ne!(a.values(), d.values());
    }

    #[test]
    fn quantile_index_examples() {
        assert_eq!(quantile_index(0.05, 2000), 1899);
        assert_eq!(quantile_index(0.05, 100), 94);
        assert_eq!(quantile_index(0.5, 100), 49);
    }

    #[test]
    fn deterministic_and_monotone_in_alpha() {
        let g = make_grid(8, 1).unwrap();
        let pair = KernelPair::isotonic(1);
        let a = calibrate(&g, &pair, BandwidthPolicy::Full, 0.05, 200, 7).unwrap();
        let b = calibrate(&g, &pair, BandwidthPolicy::Full, 0.05, 200, 7).unwrap();
        assert_eq!(a.kappa.to_bits(), b.kappa.to_bits());
        assert!(a.kappa.is_finite());

        let looser = calibrate(&g, &pair, BandwidthPolicy::Full, 0.10, 200, 7).unwrap();
        assert!(a.kappa >= looser.kappa);
    }

    #[test]
    fn precondition_validation() {
        let g = make_grid(8, 1).unwrap();
        let pair = KernelPair::isotonic(1);
        assert!(matches!(
            calibrate(&g, &pair, BandwidthPolicy::Full, 0.05, 50, 1),
            Err(Error::InvalidParameter { name: "nsim", .. })
        ));
        assert!(matches!(
            calibrate(&g, &pair, BandwidthPolicy::Full, 0.7, 200, 1),
            Err(Error::InvalidParameter { name: "alpha", .. })
        ));
        assert!(matches!(
            calibrate(&g, &pair, BandwidthPolicy::Full, 0.0005, 200, 1),
            Err(Error::InvalidParameter { name: "alpha", .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_and_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.kv");
        let g = make_grid(6, 1).unwrap();
        let pair = KernelPair::convex(1);
        let cal = calibrate(&g, &pair, BandwidthPolicy::Full, 0.1, 120, 3).unwrap();
        save_calibration(&cal, &path).unwrap();

        let back = load_calibration(&path, &cal.context()).unwrap();
        assert_eq!(cal, back);
        assert_eq!(cal.kappa.to_bits(), back.kappa.to_bits());

        let mut wrong = cal.context();
        wrong.m = 40;
        match load_calibration(&path, &wrong).unwrap_err() {
            Error::ContextMismatch { field, .. } => assert_eq!(field, "m"),
            other => panic!("unexpected error {other:?}"),
        }

        // Tampering trips the checksum.
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("seed = 3", "seed = 4")).unwrap();
        assert!(matches!(
            load_calibration(&path, &cal.context()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn recentered_data_recovers_the_statistic() {
        // The calibration path consumes pure noise; recentering observations
        // around any constant field recovers the same statistic up to float
        // recovery error.
        let g = make_grid(8, 1).unwrap();
        let pair = KernelPair::isotonic(1);
        let plans = PairPlans::new(&g, &pair, BandwidthPolicy::Full).unwrap();
        let noise = noise_field(&g, 5, 0);
        let t_noise = plans.tstar(&noise).unwrap();
        let c = 7.25;
        let shifted: Vec<f64> = noise.values().iter().map(|v| v + c).collect();
        let recentered: Vec<f64> = shifted.iter().map(|v| v - c).collect();
        let t_recentered = plans
            .tstar(&Field::new(g, recentered).unwrap())
            .unwrap();
        assert!((t_noise - t_recentered).abs() < 1e-9);
    }
}
