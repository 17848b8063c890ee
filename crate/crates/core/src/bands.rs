//! Confidence band construction: per-point optimization of the window
//! bounds over every admissible bandwidth.
//!
//! For a window at center `t` with weights `w`, the kernel estimate is
//! `sum(Y w) / sum(w)` and its calibrated uncertainty is
//! `sigma (kappa + penalty) sqrt(sum w^2) / sum(w)`. The lower band takes the
//! best (largest) lower bound over usable windows, the upper band the best
//! upper bound. Boundary points with no admissible window hold the sentinels
//! `(-inf, +inf)` rather than extrapolated values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::calibration::{Calibration, CalibrationContext};
use crate::error::{Error, Result};
use crate::field::{format_value, join_coords, parse_value, Field};
use crate::grid::{BandwidthPolicy, GridDesign};
use crate::kernels::KernelPair;
use crate::par::par_map;
use crate::region::Region;
use crate::scan::{CorrelationPass, PairPlans, ScanPlan};

/// Slots whose correlation grids are materialized at once.
const SLOT_CHUNK: usize = 32;

/// Lower and upper band fields with per-point provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    lower: Field,
    upper: Field,
    /// Bandwidth steps attaining the lower supremum, per point.
    lower_steps: Vec<Option<Vec<usize>>>,
    /// Bandwidth steps attaining the upper infimum, per point.
    upper_steps: Vec<Option<Vec<usize>>>,
    /// Boundary points with no admissible window.
    vacuous: Vec<bool>,
}

impl BandResult {
    pub fn design(&self) -> &GridDesign {
        self.lower.design()
    }

    pub fn lower(&self) -> &Field {
        &self.lower
    }

    pub fn upper(&self) -> &Field {
        &self.upper
    }

    pub fn is_vacuous_flat(&self, flat: usize) -> bool {
        self.vacuous[flat]
    }

    pub fn is_vacuous(&self, index: &[usize]) -> bool {
        self.vacuous[self.design().flat_index(index)]
    }

    pub fn lower_steps_flat(&self, flat: usize) -> Option<&[usize]> {
        self.lower_steps[flat].as_deref()
    }

    pub fn upper_steps_flat(&self, flat: usize) -> Option<&[usize]> {
        self.upper_steps[flat].as_deref()
    }

    /// Band width at a point; `inf` at vacuous points.
    pub fn width_flat(&self, flat: usize) -> f64 {
        self.upper.value_flat(flat) - self.lower.value_flat(flat)
    }
}

/// Reusable band machinery: plans, critical value and noise scale.
pub struct BandBuilder {
    plans: PairPlans,
    grid: GridDesign,
    kappa: f64,
    sigma: f64,
}

impl BandBuilder {
    pub fn new(
        grid: &GridDesign,
        pair: &KernelPair,
        cal: &Calibration,
        policy: BandwidthPolicy,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("noise level must be positive, got {sigma}"),
            });
        }
        let expected = CalibrationContext {
            m: grid.m(),
            d: grid.d(),
            kernel_pair: pair.id().to_string(),
            policy,
            alpha: cal.alpha,
        };
        cal.check_context(&expected)?;
        Ok(BandBuilder {
            plans: PairPlans::new(grid, pair, policy)?,
            grid: *grid,
            kappa: cal.kappa,
            sigma,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Build the band fields for one data field.
    pub fn bands(&self, values: &Field) -> Result<BandResult> {
        if values.design() != &self.grid {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "field grid does not match the band builder".into(),
            });
        }
        let n = self.grid.n();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        let mut lower_steps: Vec<Option<Vec<usize>>> = vec![None; n];
        let mut upper_steps: Vec<Option<Vec<usize>>> = vec![None; n];

        self.accumulate_side(&self.plans.lower, values, true, &mut lower, &mut lower_steps)?;
        self.accumulate_side(&self.plans.upper, values, false, &mut upper, &mut upper_steps)?;

        let mut vacuous = vec![false; n];
        for flat in 0..n {
            let index = self.grid.index_of_flat(flat);
            let interior = index.iter().all(|&c| c >= 1 && c + 1 < self.grid.m());
            if !interior {
                vacuous[flat] = true;
                lower[flat] = f64::NEG_INFINITY;
                upper[flat] = f64::INFINITY;
                lower_steps[flat] = None;
                upper_steps[flat] = None;
            } else if lower_steps[flat].is_none() || upper_steps[flat].is_none() {
                return Err(Error::Data(format!(
                    "every window at interior point ({}) is unusable",
                    join_coords(&self.grid.coordinate(&index))
                )));
            }
        }

        Ok(BandResult {
            lower: Field::with_sentinels(self.grid, lower)?,
            upper: Field::with_sentinels(self.grid, upper)?,
            lower_steps,
            upper_steps,
            vacuous,
        })
    }

    /// Fold one side's per-window bounds into the running optimum, slot by
    /// slot in enumeration order (ties keep the earlier bandwidth).
    fn accumulate_side(
        &self,
        plan: &ScanPlan,
        values: &Field,
        is_lower: bool,
        best: &mut [f64],
        best_steps: &mut [Option<Vec<usize>>],
    ) -> Result<()> {
        let pass = CorrelationPass::new(plan, values);
        let slots = plan.slots();
        let usable: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].usable).collect();
        for chunk in usable.chunks(SLOT_CHUNK) {
            let grids = par_map(chunk.len(), |j| pass.slot_correlation(chunk[j]));
            for (&slot_idx, corr) in chunk.iter().zip(grids) {
                let slot = &slots[slot_idx];
                // Calibrated half-width of this bandwidth's windows.
                let halfwidth =
                    self.sigma * (self.kappa + slot.penalty) * slot.sum_w2.sqrt() / slot.sum_w;
                for (j, &numer) in corr.iter().enumerate() {
                    let est = numer / slot.sum_w;
                    let flat = self.grid.flat_index(&slot.center_of(j));
                    if is_lower {
                        let bound = est - halfwidth;
                        if bound > best[flat] {
                            best[flat] = bound;
                            best_steps[flat] = Some(slot.steps.clone());
                        }
                    } else {
                        let bound = est + halfwidth;
                        if bound < best[flat] {
                            best[flat] = bound;
                            best_steps[flat] = Some(slot.steps.clone());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One-shot band construction.
pub fn build_bands(
    values: &Field,
    pair: &KernelPair,
    cal: &Calibration,
    policy: BandwidthPolicy,
    sigma: f64,
) -> Result<BandResult> {
    BandBuilder::new(values.design(), pair, cal, policy, sigma)?.bands(values)
}

/// One point where the band misses the truth.
#[derive(Debug, Clone)]
pub struct Violation {
    pub index: Vec<usize>,
    pub coordinate: Vec<f64>,
    /// How far the lower band exceeds the truth (0 when fine).
    pub lower_excess: f64,
    /// How far the truth exceeds the upper band (0 when fine).
    pub upper_excess: f64,
}

#[derive(Debug, Clone)]
pub struct CoverageCheck {
    pub covered: bool,
    pub violations: Vec<Violation>,
}

/// Does the band contain the truth at every non-vacuous point?
pub fn check_coverage(band: &BandResult, truth: &Field) -> Result<CoverageCheck> {
    if truth.design() != band.design() {
        return Err(Error::InvalidParameter {
            name: "truth",
            reason: "truth grid does not match the band".into(),
        });
    }
    let grid = *band.design();
    let mut violations = Vec::new();
    for flat in 0..grid.n() {
        if band.is_vacuous_flat(flat) {
            continue;
        }
        let f = truth.value_flat(flat);
        let lo = band.lower().value_flat(flat);
        let hi = band.upper().value_flat(flat);
        if lo > f || f > hi {
            let index = grid.index_of_flat(flat);
            violations.push(Violation {
                coordinate: grid.coordinate(&index),
                index,
                lower_excess: (lo - f).max(0.0),
                upper_excess: (f - hi).max(0.0),
            });
        }
    }
    Ok(CoverageCheck {
        covered: violations.is_empty(),
        violations,
    })
}

/// Deterministic width summaries over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// Widths of all non-vacuous points whose coordinates fall in the region.
pub fn region_widths(band: &BandResult, region: &Region) -> Vec<f64> {
    let grid = band.design();
    let mut widths = Vec::new();
    for flat in 0..grid.n() {
        if band.is_vacuous_flat(flat) {
            continue;
        }
        let coords = grid.coordinate(&grid.index_of_flat(flat));
        if region.contains(&coords) {
            widths.push(band.width_flat(flat));
        }
    }
    widths
}

/// Mean / median / max band width over the non-vacuous part of a region.
pub fn width_profile(band: &BandResult, region: &Region) -> Result<WidthSummary> {
    let widths = region_widths(band, region);
    summarize_widths(&widths)
}

pub(crate) fn summarize_widths(widths: &[f64]) -> Result<WidthSummary> {
    if widths.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut sorted = widths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let count = sorted.len();
    let mean = sorted.iter().sum::<f64>() / count as f64;
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
    };
    Ok(WidthSummary {
        count,
        mean,
        median,
        max: sorted[count - 1],
    })
}

/// Plug-in noise scale from first-order differences along every axis.
///
/// A convenience outside the coverage guarantee, which assumes sigma known.
pub fn estimate_sigma(values: &Field) -> f64 {
    let grid = values.design();
    let strides = grid.strides();
    let mut sum_sq = 0.0;
    let mut pairs = 0usize;
    for flat in 0..grid.n() {
        let index = grid.index_of_flat(flat);
        for axis in 0..grid.d() {
            if index[axis] + 1 < grid.m() {
                let diff = values.value_flat(flat + strides[axis]) - values.value_flat(flat);
                sum_sq += diff * diff;
                pairs += 1;
            }
        }
    }
    (sum_sq / (2.0 * pairs as f64)).sqrt()
}

/// Write the band CSV:
/// `x1..xd, lower, upper, width, argmax_h1..hd_lower, argmin_h1..hd_upper`.
/// Infinite sentinels are serialized as `-inf`/`inf`, absent bandwidths as
/// `nan`.
pub fn write_band_csv<W: Write>(band: &BandResult, mut out: W) -> Result<()> {
    let grid = band.design();
    let d = grid.d();
    let m = grid.m() as f64;
    let mut header = String::new();
    for axis in 0..d {
        header.push_str(&format!("x{},", axis + 1));
    }
    header.push_str("lower,upper,width,");
    for axis in 0..d {
        header.push_str(&format!("argmax_h{}_lower,", axis + 1));
    }
    for axis in 0..d {
        header.push_str(&format!("argmin_h{}_upper", axis + 1));
        if axis + 1 < d {
            header.push(',');
        }
    }
    writeln!(out, "{header}")?;
    for flat in 0..grid.n() {
        let index = grid.index_of_flat(flat);
        let mut row = String::new();
        for &i in &index {
            row.push_str(&format!("{},", grid.axis_coordinate(i)));
        }
        row.push_str(&format!(
            "{},{},{},",
            format_value(band.lower().value_flat(flat)),
            format_value(band.upper().value_flat(flat)),
            format_value(band.width_flat(flat)),
        ));
        let fmt_steps = |steps: Option<&[usize]>, row: &mut String, last: bool| {
            for (axis, slot) in (0..d).enumerate() {
                match steps {
                    Some(s) => row.push_str(&format!("{}", s[slot] as f64 / m)),
                    None => row.push_str("nan"),
                }
                if !(last && axis + 1 == d) {
                    row.push(',');
                }
            }
        };
        fmt_steps(band.lower_steps_flat(flat), &mut row, false);
        fmt_steps(band.upper_steps_flat(flat), &mut row, true);
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn write_band_csv_path(band: &BandResult, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_band_csv(band, std::io::BufWriter::new(file))
}

/// Read a band CSV back. Inverse of [`write_band_csv`].
pub fn read_band_csv<R: Read>(reader: R, grid: GridDesign) -> Result<BandResult> {
    let d = grid.d();
    let mut lines = BufReader::new(reader).lines();
    let _header = lines
        .next()
        .ok_or_else(|| Error::Csv {
            row: 1,
            message: "empty input".into(),
        })?
        .map_err(Error::Io)?;
    let n = grid.n();
    let mut lower = vec![f64::NAN; n];
    let mut upper = vec![f64::NAN; n];
    let mut lower_steps: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut upper_steps: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut seen = vec![false; n];
    for (zero_based, line) in lines.enumerate() {
        let row = zero_based + 2;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 * d + 3 {
            return Err(Error::Csv {
                row,
                message: format!("expected {} fields, got {}", 3 * d + 3, fields.len()),
            });
        }
        let coords: Vec<f64> = fields[..d]
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Csv {
                    row,
                    message: format!("`{s}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        let index = grid
            .index_near(&coords, crate::field::COORD_TOLERANCE)
            .ok_or_else(|| Error::Csv {
                row,
                message: format!("coordinates ({}) off grid", join_coords(&coords)),
            })?;
        let flat = grid.flat_index(&index);
        if seen[flat] {
            return Err(Error::Csv {
                row,
                message: "duplicate grid point".into(),
            });
        }
        seen[flat] = true;
        let bad = |s: &str| Error::Csv {
            row,
            message: format!("`{s}` is not a band value"),
        };
        lower[flat] = parse_value(fields[d]).ok_or_else(|| bad(fields[d]))?;
        upper[flat] = parse_value(fields[d + 1]).ok_or_else(|| bad(fields[d + 1]))?;
        let parse_steps = |cols: &[&str]| -> Result<Option<Vec<usize>>> {
            if cols.iter().any(|c| c.trim() == "nan") {
                return Ok(None);
            }
            let mut steps = Vec::with_capacity(d);
            for c in cols {
                let h: f64 = c.trim().parse().map_err(|_| bad(c))?;
                steps.push((h * grid.m() as f64).round() as usize);
            }
            Ok(Some(steps))
        };
        lower_steps[flat] = parse_steps(&fields[d + 3..2 * d + 3])?;
        upper_steps[flat] = parse_steps(&fields[2 * d + 3..3 * d + 3])?;
    }
    if let Some(flat) = seen.iter().position(|&s| !s) {
        let idx = grid.index_of_flat(flat);
        return Err(Error::MissingGridPoint {
            coordinate: join_coords(&grid.coordinate(&idx)),
        });
    }
    let vacuous: Vec<bool> = (0..n)
        .map(|flat| lower[flat] == f64::NEG_INFINITY && upper[flat] == f64::INFINITY
            && lower_steps[flat].is_none())
        .collect();
    Ok(BandResult {
        lower: Field::with_sentinels(grid, lower)?,
        upper: Field::with_sentinels(grid, upper)?,
        lower_steps,
        upper_steps,
        vacuous,
    })
}
