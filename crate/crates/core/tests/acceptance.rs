//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to watch).
//!
//! Everything is seeded; reruns are bit-for-bit reproducible.

use std::sync::LazyLock;

use rayon::prelude::*;

use shapeband::bands::{check_coverage, region_widths, write_band_csv_path, BandBuilder};
use shapeband::calibration::{calibrate, load_calibration, noise_field, save_calibration, Calibration};
use shapeband::constants::optimal_constants;
use shapeband::kernels::{
    check_bias_condition_with_hints, kernel_inner_product, BiasHints, KernelPair, ShapeClass,
};
use shapeband::scan::{PairPlans, Sign};
use shapeband::sim::{
    builtin, coverage_study, generate_data_replicate, random_convex_quadratic,
    random_isotonic_step_with_hints, random_probes, rate_diagnostic,
};
use shapeband::{
    make_grid, multiscale_statistic, multiscale_statistic_brute, BandwidthPolicy, Field, Kernel,
    KernelId, Region,
};

const ALPHA: f64 = 0.05;
const CAL_NSIM: usize = 2000;

fn verdict(criterion: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
}

static CAL_ISO_50: LazyLock<Calibration> = LazyLock::new(|| {
    let grid = make_grid(50, 2).unwrap();
    calibrate(
        &grid,
        &KernelPair::isotonic(2),
        BandwidthPolicy::Full,
        ALPHA,
        CAL_NSIM,
        101,
    )
    .unwrap()
});

static CAL_CVX_50: LazyLock<Calibration> = LazyLock::new(|| {
    let grid = make_grid(50, 2).unwrap();
    calibrate(
        &grid,
        &KernelPair::convex(2),
        BandwidthPolicy::Full,
        ALPHA,
        CAL_NSIM,
        202,
    )
    .unwrap()
});

static CAL_CVX_40: LazyLock<Calibration> = LazyLock::new(|| {
    let grid = make_grid(40, 2).unwrap();
    calibrate(
        &grid,
        &KernelPair::convex(2),
        BandwidthPolicy::Full,
        ALPHA,
        CAL_NSIM,
        303,
    )
    .unwrap()
});

fn cal_for(class: ShapeClass, m: usize) -> &'static Calibration {
    match (class, m) {
        (ShapeClass::Isotonic, 50) => &CAL_ISO_50,
        (ShapeClass::Convex, 50) => &CAL_CVX_50,
        (ShapeClass::Convex, 40) => &CAL_CVX_40,
        other => panic!("no calibration prepared for {other:?}"),
    }
}

/// Criterion 1: estimated coverage of the eight standard (function, class)
/// rows at level 0.95 with 200 replicates stays within Monte Carlo error of
/// the guarantee, and the flat rows sit in the exact-coverage window.
#[test]
fn criterion_1_coverage_reproduction() {
    let rows: [(&str, ShapeClass, usize); 8] = [
        ("zero", ShapeClass::Isotonic, 50),
        ("sum", ShapeClass::Isotonic, 50),
        ("sum20", ShapeClass::Isotonic, 50),
        ("indicator", ShapeClass::Isotonic, 50),
        ("zero", ShapeClass::Convex, 50),
        ("sum", ShapeClass::Convex, 50),
        ("sum10", ShapeClass::Convex, 50),
        ("quad", ShapeClass::Convex, 40),
    ];
    let replicates = 200usize;
    let se = (0.95f64 * 0.05 / replicates as f64).sqrt();
    let floor = 0.95 - 2.0 * se;

    let mut ok = true;
    let mut details = Vec::new();
    for (idx, (id, class, m)) in rows.iter().enumerate() {
        let f = builtin(id).unwrap();
        let grid = make_grid(*m, 2).unwrap();
        let cal = cal_for(*class, *m);
        let report = coverage_study(
            &f,
            *class,
            &grid,
            ALPHA,
            replicates,
            cal,
            9_000 + idx as u64,
        )
        .unwrap();
        let mut row_ok = report.coverage >= floor;
        if *id == "zero" {
            row_ok &= (0.91..=0.99).contains(&report.coverage);
        }
        ok &= row_ok;
        details.push(format!(
            "{}/{} m={}: {:.3}{}",
            id,
            class.name(),
            m,
            report.coverage,
            if row_ok { "" } else { " <-- FAIL" }
        ));
    }
    let detail = format!("floor {floor:.4}; {}", details.join(", "));
    verdict("criterion 1 (coverage reproduction)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 2: the printed optimality constants to five significant digits,
/// with an independent nested-quadrature oracle for every kernel norm.
#[test]
fn criterion_2_printed_constants() {
    let iso = optimal_constants(ShapeClass::Isotonic, 2).unwrap();
    let cvx = optimal_constants(ShapeClass::Convex, 2).unwrap();
    let mut ok = (iso.delta_lower - 1.86121).abs() < 1e-5
        && (iso.delta_upper - 1.86121).abs() < 1e-5
        && (cvx.delta_lower - 1.19788).abs() < 1e-5
        && (cvx.delta_upper - 0.68278).abs() < 1e-5;

    let mut worst = 0.0f64;
    for id in [
        KernelId::IsoLower,
        KernelId::IsoUpper,
        KernelId::CvxLower,
        KernelId::CvxUpper,
    ] {
        let kernel = Kernel::builtin(id, 2);
        let oracle = kernel_inner_product(&kernel, &|x| kernel.eval(x), 1e-10).unwrap();
        let err = (oracle - kernel.l2_norm_sq()).abs();
        worst = worst.max(err);
        ok &= err <= 1e-8;
    }
    let detail = format!(
        "iso {:.5}, cvx {:.5}/{:.5}, worst norm deviation {worst:.2e}",
        iso.delta_lower, cvx.delta_lower, cvx.delta_upper
    );
    verdict("criterion 2 (printed constants)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 3: the optimized scan equals brute-force enumeration in value
/// (1e-10) and argmax on every grid m in 4..=8, d in 1..=2, for 20 seeded
/// Gaussian fields, all four kernels, both signs.
#[test]
fn criterion_3_scan_oracle_equivalence() {
    let mut checked = 0usize;
    let mut ok = true;
    let mut worst = 0.0f64;
    for d in 1..=2usize {
        for m in 4..=8usize {
            let grid = make_grid(m, d).unwrap();
            for rep in 0..20u64 {
                let field = noise_field(&grid, 31_000 + m as u64 * 100 + d as u64, rep);
                for id in [
                    KernelId::IsoLower,
                    KernelId::IsoUpper,
                    KernelId::CvxLower,
                    KernelId::CvxUpper,
                ] {
                    let kernel = Kernel::builtin(id, d);
                    for sign in [Sign::Plus, Sign::Minus] {
                        let fast =
                            multiscale_statistic(&field, &kernel, sign, BandwidthPolicy::Full)
                                .unwrap();
                        let brute = multiscale_statistic_brute(
                            &field,
                            &kernel,
                            sign,
                            BandwidthPolicy::Full,
                        )
                        .unwrap();
                        let err = (fast.statistic - brute.statistic).abs();
                        worst = worst.max(err);
                        ok &= err <= 1e-10 && fast.argmax == brute.argmax;
                        checked += 1;
                    }
                }
            }
        }
    }
    let detail = format!("{checked} scans, worst |difference| {worst:.2e}");
    verdict("criterion 3 (scan oracle equivalence)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 4: the two-sided bias condition holds at 100 random probes for
/// 1000 random isotonic step functions and 1000 random convex quadratics,
/// with worst margin no less than -1e-6.
#[test]
fn criterion_4_bias_condition_suite() {
    let d = 2usize;
    let iso_pair = KernelPair::isotonic(d);
    let cvx_pair = KernelPair::convex(d);

    let step_worst = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let probes = random_probes(d, 100, 50_000 + seed);
            let (f, hints) = random_isotonic_step_with_hints(d, seed);
            let report = check_bias_condition_with_hints(
                &iso_pair,
                &f,
                ShapeClass::Isotonic,
                &probes,
                &hints,
            )
            .unwrap();
            report.worst_margin()
        })
        .reduce(|| f64::INFINITY, f64::min);

    let quad_worst = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let probes = random_probes(d, 100, 60_000 + seed);
            let f = random_convex_quadratic(d, seed);
            let report = check_bias_condition_with_hints(
                &cvx_pair,
                &f,
                ShapeClass::Convex,
                &probes,
                &BiasHints::default(),
            )
            .unwrap();
            report.worst_margin()
        })
        .reduce(|| f64::INFINITY, f64::min);

    let ok = step_worst >= -1e-6 && quad_worst >= -1e-6;
    let detail =
        format!("worst step margin {step_worst:.3e}, worst quadratic margin {quad_worst:.3e}");
    verdict("criterion 4 (bias condition suite)", ok, &detail);
    assert!(ok, "{detail}");
}

fn median(values: &mut Vec<f64>) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Criterion 5a: for the axis step function at m = 50, the flat region
/// carries a strictly narrower median band than the jump region in at least
/// 95 of 100 seeded replicates.
#[test]
fn criterion_5a_flat_vs_jump_width() {
    let grid = make_grid(50, 2).unwrap();
    let pair = KernelPair::isotonic(2);
    let cal = cal_for(ShapeClass::Isotonic, 50);
    let builder = BandBuilder::new(&grid, &pair, cal, BandwidthPolicy::Full, 1.0).unwrap();
    let f = builtin("indicator").unwrap();
    let flat = Region::parse("x1<=0.3", 2).unwrap();
    let jump = Region::parse("0.45<=x1<=0.55", 2).unwrap();

    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate_data_replicate(&f, &grid, 1.0, 77_000, rep).unwrap();
            let band = builder.bands(&data).unwrap();
            let mut flat_w = region_widths(&band, &flat);
            let mut jump_w = region_widths(&band, &jump);
            usize::from(median(&mut flat_w) < median(&mut jump_w))
        })
        .sum();
    let ok = hits >= 95;
    let detail = format!("{hits}/100 replicates ordered");
    verdict("criterion 5a (flat vs jump width)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 5b: log-log width slopes over m in {16, 24, 32, 48}: the flat
/// function contracts at the parametric rate (-0.5 +- 0.15) and the affine
/// function at its smoothness rate (-0.25 +- 0.15), centrally.
#[test]
fn criterion_5b_rate_slopes() {
    let grids = [16usize, 24, 32, 48];
    let region = Region::centered(2, 0.5);
    let zero = builtin("zero").unwrap();
    let diag_zero = rate_diagnostic(
        &zero,
        ShapeClass::Isotonic,
        2,
        &grids,
        ALPHA,
        &region,
        5,
        11_000,
    )
    .unwrap();
    let sum = builtin("sum").unwrap();
    let diag_sum = rate_diagnostic(
        &sum,
        ShapeClass::Isotonic,
        2,
        &grids,
        ALPHA,
        &region,
        5,
        12_000,
    )
    .unwrap();
    let ok = (diag_zero.slope + 0.5).abs() <= 0.15 && (diag_sum.slope + 0.25).abs() <= 0.15;
    let detail = format!(
        "zero slope {:.3} (target -0.5), sum slope {:.3} (target -0.25)",
        diag_zero.slope, diag_sum.slope
    );
    verdict("criterion 5b (rate slopes)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 5c: for both curved convex functions at m = 40, the upper band
/// hugs the truth more tightly than the lower band centrally in at least 90
/// of 100 replicates.
#[test]
fn criterion_5c_convex_band_asymmetry() {
    let grid = make_grid(40, 2).unwrap();
    let pair = KernelPair::convex(2);
    let cal = cal_for(ShapeClass::Convex, 40);
    let builder = BandBuilder::new(&grid, &pair, cal, BandwidthPolicy::Full, 1.0).unwrap();
    let central = Region::centered(2, 0.5);

    let mut ok = true;
    let mut details = Vec::new();
    for (fid, seed) in [("absdev", 21_000u64), ("quad40", 22_000u64)] {
        let f = builtin(fid).unwrap();
        let truth = f.field(&grid);
        let hits: usize = (0..100u64)
            .into_par_iter()
            .map(|rep| {
                let data = generate_data_replicate(&f, &grid, 1.0, seed, rep).unwrap();
                let band = builder.bands(&data).unwrap();
                let mut upper_dev = Vec::new();
                let mut lower_dev = Vec::new();
                for flat in 0..grid.n() {
                    if band.is_vacuous_flat(flat) {
                        continue;
                    }
                    let coords = grid.coordinate(&grid.index_of_flat(flat));
                    if !central.contains(&coords) {
                        continue;
                    }
                    let t = truth.value_flat(flat);
                    upper_dev.push(band.upper().value_flat(flat) - t);
                    lower_dev.push(t - band.lower().value_flat(flat));
                }
                usize::from(median(&mut upper_dev) < median(&mut lower_dev))
            })
            .sum();
        ok &= hits >= 90;
        details.push(format!("{fid}: {hits}/100"));
    }
    let detail = details.join(", ");
    verdict("criterion 5c (convex band asymmetry)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 6: the calibrate -> save -> load -> band pipeline is
/// byte-reproducible across repeated runs and across worker-pool sizes.
#[test]
fn criterion_6_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: usize, tag: &str| -> (Vec<u8>, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let grid = make_grid(16, 2).unwrap();
            let pair = KernelPair::isotonic(2);
            let cal = calibrate(&grid, &pair, BandwidthPolicy::Full, ALPHA, 200, 5).unwrap();
            let cal_path = dir.path().join(format!("cal-{tag}.kv"));
            save_calibration(&cal, &cal_path).unwrap();
            let loaded = load_calibration(&cal_path, &cal.context()).unwrap();
            let builder =
                BandBuilder::new(&grid, &pair, &loaded, BandwidthPolicy::Full, 1.0).unwrap();
            let f = builtin("sum").unwrap();
            let data = generate_data_replicate(&f, &grid, 1.0, 5, 0).unwrap();
            let band = builder.bands(&data).unwrap();
            let band_path = dir.path().join(format!("band-{tag}.csv"));
            write_band_csv_path(&band, &band_path).unwrap();
            (
                std::fs::read(&cal_path).unwrap(),
                std::fs::read(&band_path).unwrap(),
            )
        })
    };
    let (cal_a, band_a) = run(1, "t1-run1");
    let (cal_b, band_b) = run(1, "t1-run2");
    let (cal_c, band_c) = run(2, "t2-run1");
    let ok = cal_a == cal_b && cal_a == cal_c && band_a == band_b && band_a == band_c;
    let detail = format!(
        "calibration {} bytes, band {} bytes, identical across runs and pools",
        cal_a.len(),
        band_a.len()
    );
    verdict("criterion 6 (determinism and persistence)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Criterion 7: per replicate, the coverage outcome at a flat truth equals
/// the scan event computed directly from the noise, for both kernel pairs,
/// on 50 seeded replicates at m = 20, d = 2.
#[test]
fn criterion_7_coverage_event_identity() {
    let grid = make_grid(20, 2).unwrap();
    let truth = Field::new(grid, vec![0.0; grid.n()]).unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for class in [ShapeClass::Isotonic, ShapeClass::Convex] {
        let pair = KernelPair::for_class(class, 2);
        let cal = calibrate(&grid, &pair, BandwidthPolicy::Full, ALPHA, 300, 404).unwrap();
        let builder = BandBuilder::new(&grid, &pair, &cal, BandwidthPolicy::Full, 1.0).unwrap();
        let plans = PairPlans::new(&grid, &pair, BandwidthPolicy::Full).unwrap();
        let mut matches = 0usize;
        let mut covered_count = 0usize;
        for rep in 0..50u64 {
            let noise = noise_field(&grid, 88_000, rep);
            let band = builder.bands(&noise).unwrap();
            let covered = check_coverage(&band, &truth).unwrap().covered;
            let t_lower = plans.lower.statistic(&noise, Sign::Plus).unwrap().statistic;
            let t_upper = plans.upper.statistic(&noise, Sign::Minus).unwrap().statistic;
            let event = t_lower <= cal.kappa && t_upper <= cal.kappa;
            matches += usize::from(covered == event);
            covered_count += usize::from(covered);
        }
        ok &= matches == 50;
        details.push(format!(
            "{}: {matches}/50 identical (covered {covered_count}/50)",
            class.name()
        ));
    }
    let detail = details.join(", ");
    verdict("criterion 7 (coverage event identity)", ok, &detail);
    assert!(ok, "{detail}");
}
