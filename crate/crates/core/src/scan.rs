//! The penalized multiscale statistic over all admissible windows.
//!
//! Two paths compute the same numbers: a brute-force reference that walks the
//! window stream and evaluates kernel weights per member, and an optimized
//! path that precomputes one weight tensor per bandwidth and sweeps centers
//! as a dense cross-correlation (direct summation for small windows,
//! frequency-domain correlation for large ones). Both agree to 1e-10 in the
//! statistic and exactly in the argmax window; the brute path is the oracle.

use std::io::Write;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{next_fast_len, NdFft};
use crate::field::Field;
use crate::grid::{
    bandwidth_combos, center_range, enumerate_windows, Bandwidth, BandwidthPolicy, GridDesign,
    Window,
};
use crate::kernels::{weights_for_steps, window_weights, Kernel, KernelPair};
use crate::par::par_map;
use crate::penalty::window_penalty;

/// Scan direction: the statistic maximizes `sign * standardized - penalty`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(&self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Tuning knobs for the optimized path.
#[derive(Debug, Clone, Copy)]
pub struct ScanConfig {
    /// Windows holding more points than this are eligible for the
    /// frequency-domain path.
    pub fft_window_volume_threshold: usize,
    /// Among eligible windows, take the FFT route only when the estimated
    /// operation count beats direct summation. Valid-mode correlation has
    /// few centers exactly when windows are large, so volume alone
    /// overcommits to the FFT at moderate grid sizes.
    pub fft_cost_model: bool,
    /// Keep a per-window record (standardized value, penalty, score).
    pub retain_records: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            fft_window_volume_threshold: 256,
            fft_cost_model: true,
            retain_records: false,
        }
    }
}

/// One scanned window, for trace output.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    pub steps: Vec<usize>,
    pub center: Vec<usize>,
    pub count: usize,
    pub standardized: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Result of one scan.
#[derive(Debug, Clone)]
pub struct ScanResult {
    /// Maximum over scanned windows of `sign * standardized - penalty`.
    pub statistic: f64,
    /// First window attaining the maximum, in enumeration order.
    pub argmax: Window,
    /// Per-window records when requested.
    pub records: Option<Vec<ScanRecord>>,
}

/// Per-bandwidth precomputation shared by every center.
///
/// Admissible windows at a fixed bandwidth all contain the full offset box,
/// so the weight tensor, its sums and the penalty are bandwidth constants.
pub(crate) struct Slot {
    pub(crate) steps: Vec<usize>,
    dims: Vec<usize>,
    weights: Vec<f64>,
    /// Nonzero span `[lo, hi)` of each last-axis row of the weight tensor.
    row_spans: Vec<(usize, usize)>,
    pub(crate) sum_w: f64,
    pub(crate) sum_w2: f64,
    sqrt_sum_w2: f64,
    pub(crate) count: usize,
    pub(crate) penalty: f64,
    pub(crate) usable: bool,
    pub(crate) center_lo: Vec<usize>,
    pub(crate) center_hi: Vec<usize>,
    pub(crate) n_centers: usize,
    use_fft: bool,
    spectrum: OnceLock<Vec<Complex<f64>>>,
}

impl Slot {
    pub(crate) fn bandwidth(&self, m: usize) -> Bandwidth {
        Bandwidth::from_steps_unchecked(self.steps.clone(), m)
    }

    /// Center index tuple of the `j`-th entry of this slot's correlation
    /// grid (row-major over the center box).
    pub(crate) fn center_of(&self, mut j: usize) -> Vec<usize> {
        let d = self.steps.len();
        let mut center = vec![0usize; d];
        for axis in (0..d).rev() {
            let extent = self.center_hi[axis] - self.center_lo[axis] + 1;
            center[axis] = self.center_lo[axis] + j % extent;
            j /= extent;
        }
        center
    }
}

struct PadInfo {
    strides: Vec<usize>,
    fft: NdFft,
}

/// Reusable scan machinery for one (grid, kernel, policy) triple.
///
/// Building the plan evaluates every weight tensor once; repeated scans
/// (calibration replicates, coverage replicates) share it.
pub struct ScanPlan {
    grid: GridDesign,
    kernel: Kernel,
    policy: BandwidthPolicy,
    config: ScanConfig,
    slots: Vec<Slot>,
    pad: Option<PadInfo>,
}

impl ScanPlan {
    pub fn new(grid: &GridDesign, kernel: &Kernel, policy: BandwidthPolicy) -> Result<Self> {
        Self::with_config(grid, kernel, policy, ScanConfig::default())
    }

    pub fn with_config(
        grid: &GridDesign,
        kernel: &Kernel,
        policy: BandwidthPolicy,
        config: ScanConfig,
    ) -> Result<Self> {
        if kernel.d() != grid.d() {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: format!("kernel dimension {} != grid dimension {}", kernel.d(), grid.d()),
            });
        }
        let n = grid.n();
        let mut slots = Vec::new();
        let mut any_fft = false;
        for bw in bandwidth_combos(grid, policy) {
            let ranges: Option<Vec<(usize, usize)>> = bw
                .steps()
                .iter()
                .map(|&k| center_range(grid.m(), k))
                .collect();
            let Some(ranges) = ranges else { continue };
            let n_centers: usize = ranges.iter().map(|&(lo, hi)| hi - lo + 1).product();
            if n_centers == 0 {
                continue;
            }
            let ww = weights_for_steps(kernel, bw.steps());
            let dims: Vec<usize> = bw.steps().iter().map(|&k| 2 * k + 1).collect();
            let last = *dims.last().unwrap();
            let rows = ww.count / last;
            let mut row_spans = Vec::with_capacity(rows);
            let mut nnz = 0usize;
            for r in 0..rows {
                let row = &ww.weights[r * last..(r + 1) * last];
                let lo = row.iter().position(|&w| w != 0.0);
                match lo {
                    None => row_spans.push((0, 0)),
                    Some(lo) => {
                        let hi = last - row.iter().rev().position(|&w| w != 0.0).unwrap();
                        row_spans.push((lo, hi));
                        nnz += hi - lo;
                    }
                }
            }
            let use_fft = ww.count > config.fft_window_volume_threshold && {
                if config.fft_cost_model {
                    let pad_total: usize = bw
                        .steps()
                        .iter()
                        .map(|&k| next_fast_len(grid.m() + 2 * k))
                        .product();
                    let fft_ops = pad_total as f64 * (2.0 * (pad_total as f64).log2() + 8.0);
                    (n_centers * nnz) as f64 > fft_ops
                } else {
                    true
                }
            };
            any_fft |= use_fft;
            let usable = ww.usable(grid.d());
            slots.push(Slot {
                steps: bw.steps().to_vec(),
                dims,
                weights: ww.weights,
                row_spans,
                sum_w: ww.sum_w,
                sum_w2: ww.sum_w2,
                sqrt_sum_w2: ww.sum_w2.sqrt(),
                count: ww.count,
                penalty: window_penalty(ww.count, n),
                usable,
                center_lo: ranges.iter().map(|&(lo, _)| lo).collect(),
                center_hi: ranges.iter().map(|&(_, hi)| hi).collect(),
                n_centers,
                use_fft,
                spectrum: OnceLock::new(),
            });
        }
        if slots.is_empty() {
            return Err(Error::Data("no admissible windows under the policy".into()));
        }
        let pad = if any_fft {
            let max_step = slots
                .iter()
                .flat_map(|s| s.steps.iter().copied())
                .max()
                .unwrap_or(1);
            let dims: Vec<usize> = (0..grid.d())
                .map(|_| next_fast_len(grid.m() + 2 * max_step))
                .collect();
            let mut strides = vec![1usize; dims.len()];
            for axis in (0..dims.len().saturating_sub(1)).rev() {
                strides[axis] = strides[axis + 1] * dims[axis + 1];
            }
            Some(PadInfo {
                fft: NdFft::new(&dims),
                strides,
            })
        } else {
            None
        };
        Ok(ScanPlan {
            grid: *grid,
            kernel: kernel.clone(),
            policy,
            config,
            slots,
            pad,
        })
    }

    pub fn grid(&self) -> &GridDesign {
        &self.grid
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn policy(&self) -> BandwidthPolicy {
        self.policy
    }

    pub(crate) fn slots(&self) -> &[Slot] {
        &self.slots
    }

    fn check_values(&self, values: &Field) -> Result<()> {
        if values.design() != &self.grid {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "field grid does not match the scan plan".into(),
            });
        }
        Ok(())
    }

    /// Scan all windows; maximum of `sign * standardized - penalty`.
    pub fn statistic(&self, values: &Field, sign: Sign) -> Result<ScanResult> {
        self.check_values(values)?;
        let pass = CorrelationPass::new(self, values);
        let factor = sign.factor();
        let per_slot = par_map(self.slots.len(), |i| {
            let slot = &self.slots[i];
            if slot.sum_w2 <= 0.0 {
                return (None, None);
            }
            let corr = pass.slot_correlation(i);
            let mut best: Option<(f64, usize)> = None;
            let mut records = if self.config.retain_records {
                Some(Vec::with_capacity(slot.n_centers))
            } else {
                None
            };
            for (j, &c) in corr.iter().enumerate() {
                let standardized = c / slot.sqrt_sum_w2;
                let score = factor * standardized - slot.penalty;
                if let Some(recs) = records.as_mut() {
                    recs.push(ScanRecord {
                        steps: slot.steps.clone(),
                        center: slot.center_of(j),
                        count: slot.count,
                        standardized,
                        penalty: slot.penalty,
                        score,
                    });
                }
                match best {
                    Some((s, _)) if score <= s => {}
                    _ => best = Some((score, j)),
                }
            }
            (best, records)
        });

        let mut best: Option<(f64, usize, usize)> = None;
        let mut records = if self.config.retain_records {
            Some(Vec::new())
        } else {
            None
        };
        for (i, (slot_best, slot_records)) in per_slot.into_iter().enumerate() {
            if let (Some(all), Some(mut recs)) = (records.as_mut(), slot_records) {
                all.append(&mut recs);
            }
            if let Some((score, j)) = slot_best {
                match best {
                    Some((s, _, _)) if score <= s => {}
                    _ => best = Some((score, i, j)),
                }
            }
        }
        let (statistic, slot_idx, j) = best.ok_or_else(|| {
            Error::Data("no window with positive squared weight mass to scan".into())
        })?;
        let slot = &self.slots[slot_idx];
        let argmax = Window::new(slot.center_of(j), slot.bandwidth(self.grid.m()));
        Ok(ScanResult {
            statistic,
            argmax,
            records,
        })
    }
}

/// One field's correlation sweep against a plan, caching the padded forward
/// transform so every FFT slot reuses it.
pub(crate) struct CorrelationPass<'a> {
    plan: &'a ScanPlan,
    values: &'a Field,
    spectrum: OnceLock<Vec<Complex<f64>>>,
}

impl<'a> CorrelationPass<'a> {
    pub(crate) fn new(plan: &'a ScanPlan, values: &'a Field) -> Self {
        CorrelationPass {
            plan,
            values,
            spectrum: OnceLock::new(),
        }
    }

    /// Correlation grid of slot `i`: `sum_j Y[t + delta_j] w[delta_j]` for
    /// every admissible center `t`, row-major over the center box.
    pub(crate) fn slot_correlation(&self, i: usize) -> Vec<f64> {
        let slot = &self.plan.slots[i];
        if slot.use_fft {
            self.correlate_fft(slot)
        } else {
            correlate_direct(&self.plan.grid, slot, self.values.values())
        }
    }

    fn data_spectrum(&self) -> &Vec<Complex<f64>> {
        self.spectrum.get_or_init(|| {
            let pad = self.plan.pad.as_ref().expect("fft slot without pad info");
            let grid = &self.plan.grid;
            let mut buf = vec![Complex::default(); pad.fft.total()];
            let values = self.values.values();
            let m = grid.m();
            let d = grid.d();
            // Copy row-major grid rows (contiguous along the last axis).
            let rows = grid.n() / m;
            let mut index = vec![0usize; d.saturating_sub(1)];
            for row in 0..rows {
                let mut rem = row;
                for axis in (0..d - 1).rev() {
                    index[axis] = rem % m;
                    rem /= m;
                }
                let src = row * m;
                let dst: usize = index
                    .iter()
                    .zip(&pad.strides[..d - 1])
                    .map(|(&i, &s)| i * s)
                    .sum();
                for t in 0..m {
                    buf[dst + t] = Complex::new(values[src + t], 0.0);
                }
            }
            let mut scratch = pad.fft.scratch();
            pad.fft.forward(&mut buf, &mut scratch);
            buf
        })
    }

    fn correlate_fft(&self, slot: &Slot) -> Vec<f64> {
        let pad = self.plan.pad.as_ref().expect("fft slot without pad info");
        let data_spec = self.data_spectrum();
        let kernel_spec = slot.spectrum.get_or_init(|| {
            // Embed the reversed weight tensor so that plain convolution
            // computes correlation: out[c] = conv[c + k].
            let mut buf = vec![Complex::default(); pad.fft.total()];
            let d = slot.dims.len();
            let mut counters = vec![0usize; d];
            let mut w_idx = 0usize;
            'outer: loop {
                let dst: usize = counters
                    .iter()
                    .zip(&slot.dims)
                    .zip(&pad.strides)
                    .map(|((&c, &dim), &s)| (dim - 1 - c) * s)
                    .sum();
                buf[dst] = Complex::new(slot.weights[w_idx], 0.0);
                w_idx += 1;
                for pos in (0..d).rev() {
                    counters[pos] += 1;
                    if counters[pos] < slot.dims[pos] {
                        continue 'outer;
                    }
                    counters[pos] = 0;
                }
                break;
            }
            let mut scratch = pad.fft.scratch();
            pad.fft.forward(&mut buf, &mut scratch);
            buf
        });

        let mut work: Vec<Complex<f64>> = data_spec
            .iter()
            .zip(kernel_spec.iter())
            .map(|(a, b)| a * b)
            .collect();
        let mut scratch = pad.fft.scratch();
        pad.fft.inverse(&mut work, &mut scratch);
        let scale = 1.0 / pad.fft.total() as f64;

        let d = slot.steps.len();
        let mut out = Vec::with_capacity(slot.n_centers);
        let mut center = slot.center_lo.clone();
        'outer: loop {
            let padded: usize = center
                .iter()
                .zip(&slot.steps)
                .zip(&pad.strides)
                .map(|((&c, &k), &s)| (c + k) * s)
                .sum();
            out.push(work[padded].re * scale);
            for pos in (0..d).rev() {
                center[pos] += 1;
                if center[pos] <= slot.center_hi[pos] {
                    continue 'outer;
                }
                center[pos] = slot.center_lo[pos];
            }
            break;
        }
        out
    }
}

/// Four-accumulator dot product: fixed association, latency-hiding.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let a4 = &a[4 * i..4 * i + 4];
        let b4 = &b[4 * i..4 * i + 4];
        acc[0] += a4[0] * b4[0];
        acc[1] += a4[1] * b4[1];
        acc[2] += a4[2] * b4[2];
        acc[3] += a4[3] * b4[3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn correlate_direct(grid: &GridDesign, slot: &Slot, values: &[f64]) -> Vec<f64> {
    let d = slot.steps.len();
    let strides = grid.strides();
    let last = *slot.dims.last().unwrap();
    let k_last = slot.steps[d - 1];

    // Relative flat offset of each nonzero weight row, anchored at the
    // window center, plus the matching weight subslice.
    struct Row {
        rel: isize,
        w_start: usize,
        len: usize,
    }
    let mut rows = Vec::with_capacity(slot.row_spans.len());
    let mut counters = vec![0usize; d.saturating_sub(1)];
    for (r, &(lo, hi)) in slot.row_spans.iter().enumerate() {
        if hi > lo {
            let mut rel: isize = 0;
            for axis in 0..d - 1 {
                rel += (counters[axis] as isize - slot.steps[axis] as isize)
                    * strides[axis] as isize;
            }
            rel += lo as isize - k_last as isize;
            rows.push(Row {
                rel,
                w_start: r * last + lo,
                len: hi - lo,
            });
        }
        for pos in (0..d.saturating_sub(1)).rev() {
            counters[pos] += 1;
            if counters[pos] < slot.dims[pos] {
                break;
            }
            counters[pos] = 0;
        }
    }

    let mut out = Vec::with_capacity(slot.n_centers);
    let mut center = slot.center_lo.clone();
    'outer: loop {
        let cflat: isize = center
            .iter()
            .zip(&strides)
            .map(|(&c, &s)| (c * s) as isize)
            .sum();
        let mut acc = 0.0f64;
        for row in &rows {
            let base = (cflat + row.rel) as usize;
            acc += dot(
                &values[base..base + row.len],
                &slot.weights[row.w_start..row.w_start + row.len],
            );
        }
        out.push(acc);
        for pos in (0..d).rev() {
            center[pos] += 1;
            if center[pos] <= slot.center_hi[pos] {
                continue 'outer;
            }
            center[pos] = slot.center_lo[pos];
        }
        break;
    }
    out
}

/// `sum_i Y_i w_i / sqrt(sum_i w_i^2)` for one admissible window.
pub fn standardized_average(values: &Field, kernel: &Kernel, window: &Window) -> Result<f64> {
    let grid = values.design();
    let ww = window_weights(kernel, window, grid);
    if ww.sum_w2 <= 0.0 {
        return Err(Error::DegenerateWindow);
    }
    let members = window.member_flat_indices(grid);
    let mut sum_yw = 0.0;
    for (&flat, &w) in members.iter().zip(&ww.weights) {
        sum_yw += values.value_flat(flat) * w;
    }
    Ok(sum_yw / ww.sum_w2.sqrt())
}

/// Optimized multiscale statistic; builds a throwaway plan.
pub fn multiscale_statistic(
    values: &Field,
    kernel: &Kernel,
    sign: Sign,
    policy: BandwidthPolicy,
) -> Result<ScanResult> {
    ScanPlan::new(values.design(), kernel, policy)?.statistic(values, sign)
}

/// Brute-force reference: walks the window stream and evaluates kernel
/// weights member by member. Shares no arithmetic with the optimized path.
pub fn multiscale_statistic_brute(
    values: &Field,
    kernel: &Kernel,
    sign: Sign,
    policy: BandwidthPolicy,
) -> Result<ScanResult> {
    let grid = *values.design();
    let n = grid.n();
    let factor = sign.factor();
    let mut best: Option<(f64, Window)> = None;
    for window in enumerate_windows(&grid, policy) {
        let ww = window_weights(kernel, &window, &grid);
        if ww.sum_w2 <= 0.0 {
            continue;
        }
        let members = window.member_flat_indices(&grid);
        let mut sum_yw = 0.0;
        for (&flat, &w) in members.iter().zip(&ww.weights) {
            sum_yw += values.value_flat(flat) * w;
        }
        let standardized = sum_yw / ww.sum_w2.sqrt();
        let score = factor * standardized - window_penalty(ww.count, n);
        match &best {
            Some((s, _)) if score <= *s => {}
            _ => best = Some((score, window)),
        }
    }
    let (statistic, argmax) =
        best.ok_or_else(|| Error::Data("no window with positive squared weight mass".into()))?;
    Ok(ScanResult {
        statistic,
        argmax,
        records: None,
    })
}

/// Plans for a kernel pair, sharing one construction per calibration or
/// band-building session.
pub struct PairPlans {
    pub lower: ScanPlan,
    pub upper: ScanPlan,
}

impl PairPlans {
    pub fn new(grid: &GridDesign, pair: &KernelPair, policy: BandwidthPolicy) -> Result<Self> {
        Ok(PairPlans {
            lower: ScanPlan::new(grid, pair.lower(), policy)?,
            upper: ScanPlan::new(grid, pair.upper(), policy)?,
        })
    }

    /// `T* = max( T(lower, +), T(upper, -) )`.
    pub fn tstar(&self, values: &Field) -> Result<f64> {
        let t_lower = self.lower.statistic(values, Sign::Plus)?.statistic;
        let t_upper = self.upper.statistic(values, Sign::Minus)?.statistic;
        Ok(t_lower.max(t_upper))
    }
}

/// One-shot `T*` for a kernel pair.
pub fn tstar(values: &Field, pair: &KernelPair, policy: BandwidthPolicy) -> Result<f64> {
    PairPlans::new(values.design(), pair, policy)?.tstar(values)
}

/// Exploratory two-sided scan: maximum over both signs.
pub fn two_sided_statistic(
    values: &Field,
    kernel: &Kernel,
    policy: BandwidthPolicy,
) -> Result<f64> {
    let plan = ScanPlan::new(values.design(), kernel, policy)?;
    let plus = plan.statistic(values, Sign::Plus)?.statistic;
    let minus = plan.statistic(values, Sign::Minus)?.statistic;
    Ok(plus.max(minus))
}

/// Write the per-window trace as CSV:
/// `h1..hd, t1..td, count, standardized_value, penalty, score`.
pub fn write_scan_trace<W: Write>(
    out: &mut W,
    values: &Field,
    kernel: &Kernel,
    sign: Sign,
    policy: BandwidthPolicy,
) -> Result<()> {
    let grid = values.design();
    let config = ScanConfig {
        retain_records: true,
        ..ScanConfig::default()
    };
    let plan = ScanPlan::with_config(grid, kernel, policy, config)?;
    let result = plan.statistic(values, sign)?;
    let d = grid.d();
    let mut header = String::new();
    for axis in 0..d {
        header.push_str(&format!("h{},", axis + 1));
    }
    for axis in 0..d {
        header.push_str(&format!("t{},", axis + 1));
    }
    header.push_str("count,standardized_value,penalty,score");
    writeln!(out, "{header}")?;
    for rec in result.records.as_deref().unwrap_or_default() {
        let mut row = String::new();
        for &k in &rec.steps {
            row.push_str(&format!("{},", k as f64 / grid.m() as f64));
        }
        for &c in &rec.center {
            row.push_str(&format!("{},", grid.axis_coordinate(c)));
        }
        row.push_str(&format!(
            "{},{},{},{}",
            rec.count, rec.standardized, rec.penalty, rec.score
        ));
        writeln!(out, "{row}")?;
    }
    Ok(())
}
