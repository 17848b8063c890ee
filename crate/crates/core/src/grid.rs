//! Uniform grid design, bandwidth lattices, and admissible scan windows.
//!
//! The design is the m^d uniform grid with coordinates {1/m, ..., 1} per axis.
//! A window is a (center, bandwidth) pair; it is admissible when both
//! `center - h` and `center + h` land on grid points in every axis, in which
//! case its members are the full box of points within sup-distance `h`.

use crate::error::{Error, Result};

/// Default cap on m^d, rejecting grids that could not be held in memory.
pub const DEFAULT_POINT_BUDGET: usize = 10_000_000;

/// The m^d uniform design on (0,1]^d.
///
/// Indices are 0-based tuples; index `i` on an axis has coordinate `(i+1)/m`.
/// Values attached to the grid are stored row-major with the last axis
/// fastest, but all public APIs address points by index tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDesign {
    m: usize,
    d: usize,
    n: usize,
}

impl GridDesign {
    pub(crate) fn new_unchecked(m: usize, d: usize) -> Self {
        let n = m.pow(d as u32);
        GridDesign { m, d, n }
    }

    /// Points per axis.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Total point count m^d.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Coordinate of a 0-based axis index: `(i+1)/m`.
    pub fn axis_coordinate(&self, index: usize) -> f64 {
        debug_assert!(index < self.m);
        (index + 1) as f64 / self.m as f64
    }

    /// Coordinate tuple of a 0-based index tuple.
    pub fn coordinate(&self, index: &[usize]) -> Vec<f64> {
        debug_assert_eq!(index.len(), self.d);
        index.iter().map(|&i| self.axis_coordinate(i)).collect()
    }

    /// Row-major flat offset of an index tuple (last axis fastest).
    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.d);
        let mut flat = 0usize;
        for &i in index {
            debug_assert!(i < self.m);
            flat = flat * self.m + i;
        }
        flat
    }

    /// Index tuple of a row-major flat offset.
    pub fn index_of_flat(&self, mut flat: usize) -> Vec<usize> {
        debug_assert!(flat < self.n);
        let mut index = vec![0usize; self.d];
        for slot in index.iter_mut().rev() {
            *slot = flat % self.m;
            flat /= self.m;
        }
        index
    }

    /// Match real coordinates to a grid index within an absolute tolerance.
    pub fn index_near(&self, coords: &[f64], tol: f64) -> Option<Vec<usize>> {
        if coords.len() != self.d {
            return None;
        }
        let mut index = Vec::with_capacity(self.d);
        for &x in coords {
            let k = (x * self.m as f64).round();
            if k < 1.0 || k > self.m as f64 {
                return None;
            }
            if (x - k / self.m as f64).abs() > tol {
                return None;
            }
            index.push(k as usize - 1);
        }
        Some(index)
    }

    /// Row-major strides (last axis stride 1).
    pub(crate) fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.d];
        for axis in (0..self.d.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.m;
        }
        strides
    }
}

/// Build the m^d uniform grid.
pub fn make_grid(m: usize, d: usize) -> Result<GridDesign> {
    make_grid_with_budget(m, d, DEFAULT_POINT_BUDGET)
}

/// Build the grid with an explicit point budget.
pub fn make_grid_with_budget(m: usize, d: usize, budget: usize) -> Result<GridDesign> {
    if m < 4 {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("must be at least 4, got {m}"),
        });
    }
    if d < 1 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "must be at least 1".into(),
        });
    }
    let points = (m as u128).pow(d as u32);
    if points > budget as u128 {
        return Err(Error::GridCapacity {
            m,
            d,
            points,
            budget,
        });
    }
    Ok(GridDesign::new_unchecked(m, d))
}

/// Per-axis half-widths, each an integer multiple of 1/m in [1/m, floor(m/2)/m].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bandwidth {
    steps: Vec<usize>,
    m: usize,
}

impl Bandwidth {
    /// Construct from per-axis step counts `k_i`, where `h_i = k_i / m`.
    pub fn from_steps(steps: Vec<usize>, grid: &GridDesign) -> Result<Self> {
        if steps.len() != grid.d() {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: format!("expected {} axes, got {}", grid.d(), steps.len()),
            });
        }
        for &k in &steps {
            if k == 0 || 2 * k > grid.m() {
                return Err(Error::InvalidParameter {
                    name: "bandwidth",
                    reason: format!(
                        "step {k} outside [1, {}] for m = {}",
                        grid.m() / 2,
                        grid.m()
                    ),
                });
            }
        }
        Ok(Bandwidth {
            steps,
            m: grid.m(),
        })
    }

    pub(crate) fn from_steps_unchecked(steps: Vec<usize>, m: usize) -> Self {
        Bandwidth { steps, m }
    }

    /// Per-axis step counts k_i (h_i = k_i/m).
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Half-width on one axis as a real number.
    pub fn value(&self, axis: usize) -> f64 {
        self.steps[axis] as f64 / self.m as f64
    }

    /// All half-widths as real numbers.
    pub fn values(&self) -> Vec<f64> {
        (0..self.steps.len()).map(|a| self.value(a)).collect()
    }

    /// Member count of any admissible window with this bandwidth.
    pub fn window_count(&self) -> usize {
        self.steps.iter().map(|&k| 2 * k + 1).product()
    }
}

/// Which bandwidth lattice the scan sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthPolicy {
    /// Every integer step 1..=floor(m/2) per axis.
    Full,
    /// Powers of two steps {1, 2, 4, ...} up to floor(m/2) per axis.
    Dyadic,
}

impl BandwidthPolicy {
    /// Full scans stay affordable up to m = 64 in one or two dimensions;
    /// beyond that the dyadic lattice keeps the bandwidth count logarithmic.
    pub fn default_for(m: usize, d: usize) -> Self {
        if m <= 64 && d <= 2 {
            BandwidthPolicy::Full
        } else {
            BandwidthPolicy::Dyadic
        }
    }

    /// Admissible step counts on one axis, ascending.
    pub fn axis_steps(&self, m: usize) -> Vec<usize> {
        let max = m / 2;
        match self {
            BandwidthPolicy::Full => (1..=max).collect(),
            BandwidthPolicy::Dyadic => {
                let mut steps = Vec::new();
                let mut k = 1;
                while k <= max {
                    steps.push(k);
                    k *= 2;
                }
                steps
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BandwidthPolicy::Full => "full",
            BandwidthPolicy::Dyadic => "dyadic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BandwidthPolicy::Full),
            "dyadic" => Ok(BandwidthPolicy::Dyadic),
            other => Err(Error::InvalidParameter {
                name: "policy",
                reason: format!("expected `full` or `dyadic`, got `{other}`"),
            }),
        }
    }
}

/// All bandwidth combinations under a policy, in lexicographic step order.
pub fn bandwidth_combos(grid: &GridDesign, policy: BandwidthPolicy) -> Vec<Bandwidth> {
    let axis = policy.axis_steps(grid.m());
    let mut combos = Vec::new();
    let mut counters = vec![0usize; grid.d()];
    'outer: loop {
        let steps: Vec<usize> = counters.iter().map(|&c| axis[c]).collect();
        combos.push(Bandwidth::from_steps_unchecked(steps, grid.m()));
        for pos in (0..grid.d()).rev() {
            counters[pos] += 1;
            if counters[pos] < axis.len() {
                continue 'outer;
            }
            counters[pos] = 0;
        }
        break;
    }
    combos
}

/// A scan window: a center grid point together with a bandwidth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    center: Vec<usize>,
    bandwidth: Bandwidth,
}

impl Window {
    pub fn new(center: Vec<usize>, bandwidth: Bandwidth) -> Self {
        Window { center, bandwidth }
    }

    /// Center index tuple (0-based).
    pub fn center(&self) -> &[usize] {
        &self.center
    }

    /// Center coordinates.
    pub fn center_coordinate(&self, grid: &GridDesign) -> Vec<f64> {
        grid.coordinate(&self.center)
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    /// Admissible iff center ± h are grid points on every axis.
    pub fn is_admissible(&self, grid: &GridDesign) -> bool {
        self.center
            .iter()
            .zip(self.bandwidth.steps())
            .all(|(&c, &k)| c >= k && c + k < grid.m())
    }

    /// Member count N = prod(2 k_i + 1) for an admissible window.
    pub fn count(&self) -> usize {
        self.bandwidth.window_count()
    }

    /// Row-major flat offsets of every member point.
    ///
    /// Only meaningful for admissible windows, where the members are exactly
    /// the full index box `[c_i - k_i, c_i + k_i]`.
    pub fn member_flat_indices(&self, grid: &GridDesign) -> Vec<usize> {
        debug_assert!(self.is_admissible(grid));
        let strides = grid.strides();
        let dims: Vec<usize> = self.bandwidth.steps().iter().map(|&k| 2 * k + 1).collect();
        let base: usize = self
            .center
            .iter()
            .zip(self.bandwidth.steps())
            .zip(&strides)
            .map(|((&c, &k), &s)| (c - k) * s)
            .sum();
        let mut out = Vec::with_capacity(self.count());
        let mut counters = vec![0usize; dims.len()];
        'outer: loop {
            let offset: usize = counters.iter().zip(&strides).map(|(&c, &s)| c * s).sum();
            out.push(base + offset);
            for pos in (0..dims.len()).rev() {
                counters[pos] += 1;
                if counters[pos] < dims[pos] {
                    continue 'outer;
                }
                counters[pos] = 0;
            }
            break;
        }
        out
    }

    /// Member index tuples, row-major.
    pub fn member_indices(&self, grid: &GridDesign) -> Vec<Vec<usize>> {
        self.member_flat_indices(grid)
            .into_iter()
            .map(|f| grid.index_of_flat(f))
            .collect()
    }
}

/// Inclusive range of admissible center indices for one axis at step `k`.
pub(crate) fn center_range(m: usize, k: usize) -> Option<(usize, usize)> {
    if 2 * k >= m {
        None
    } else {
        Some((k, m - 1 - k))
    }
}

/// Stream every admissible window under the policy, exactly once, in
/// lexicographic (bandwidth, center) order.
pub fn enumerate_windows(
    grid: &GridDesign,
    policy: BandwidthPolicy,
) -> impl Iterator<Item = Window> {
    let grid = *grid;
    bandwidth_combos(&grid, policy)
        .into_iter()
        .flat_map(move |bw| {
            let ranges: Option<Vec<(usize, usize)>> = bw
                .steps()
                .iter()
                .map(|&k| center_range(grid.m(), k))
                .collect();
            CenterIter::new(ranges).map(move |center| Window::new(center, bw.clone()))
        })
}

/// Row-major iterator over an index box given inclusive per-axis ranges.
struct CenterIter {
    ranges: Vec<(usize, usize)>,
    current: Vec<usize>,
    done: bool,
}

impl CenterIter {
    fn new(ranges: Option<Vec<(usize, usize)>>) -> Self {
        match ranges {
            Some(ranges) => {
                let current = ranges.iter().map(|&(lo, _)| lo).collect();
                CenterIter {
                    ranges,
                    current,
                    done: false,
                }
            }
            None => CenterIter {
                ranges: Vec::new(),
                current: Vec::new(),
                done: true,
            },
        }
    }
}

impl Iterator for CenterIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let item = self.current.clone();
        let mut pos = self.ranges.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            if self.current[pos] < self.ranges[pos].1 {
                self.current[pos] += 1;
                for later in pos + 1..self.ranges.len() {
                    self.current[later] = self.ranges[later].0;
                }
                break;
            }
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_match_definition() {
        // m = 2 is below the scan minimum but the index map is defined for it.
        let tiny = GridDesign::new_unchecked(2, 1);
        assert_eq!(tiny.coordinate(&[0]), vec![0.5]);
        assert_eq!(tiny.coordinate(&[1]), vec![1.0]);

        let g = make_grid(3, 2);
        assert!(g.is_err(), "m < 4 must be rejected");
        let g = GridDesign::new_unchecked(3, 2);
        assert_eq!(g.n(), 9);
        // 1-based tuple (2, 3) is 0-based (1, 2).
        assert_eq!(g.coordinate(&[1, 2]), vec![2.0 / 3.0, 1.0]);
    }

    #[test]
    fn grid_size_and_budget() {
        let g = make_grid(50, 2).unwrap();
        assert_eq!(g.n(), 2500);
        let err = make_grid_with_budget(50, 2, 2000).unwrap_err();
        assert!(matches!(err, Error::GridCapacity { .. }));
        // 10^8 points exceeds the default budget.
        assert!(make_grid(100, 4).is_err());
    }

    #[test]
    fn flat_index_roundtrip() {
        let g = make_grid(5, 3).unwrap();
        for flat in 0..g.n() {
            let idx = g.index_of_flat(flat);
            assert_eq!(g.flat_index(&idx), flat);
        }
    }

    #[test]
    fn index_near_tolerance() {
        let g = make_grid(50, 2).unwrap();
        assert_eq!(g.index_near(&[0.02, 1.0], 1e-9), Some(vec![0, 49]));
        assert_eq!(g.index_near(&[0.02 + 5e-10, 1.0], 1e-9), Some(vec![0, 49]));
        assert_eq!(g.index_near(&[0.025, 1.0], 1e-9), None);
        assert_eq!(g.index_near(&[1.02, 1.0], 1e-9), None);
    }

    #[test]
    fn full_enumeration_m4_d1() {
        let g = make_grid(4, 1).unwrap();
        let windows: Vec<Window> = enumerate_windows(&g, BandwidthPolicy::Full).collect();
        // h = 1/4 admits centers {1/2, 3/4}; h = 2/4 admits none.
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].center(), &[1]);
        assert_eq!(windows[1].center(), &[2]);
        assert_eq!(windows[0].bandwidth().steps(), &[1]);

        let members = windows[0].member_flat_indices(&g);
        assert_eq!(members, vec![0, 1, 2]);
        let coords: Vec<f64> = members.iter().map(|&f| g.axis_coordinate(f)).collect();
        assert_eq!(coords, vec![0.25, 0.5, 0.75]);
        assert_eq!(windows[0].count(), 3);
    }

    /// Count admissible windows the slow way: try every (steps, center) pair.
    fn brute_force_count(g: &GridDesign, policy: BandwidthPolicy) -> usize {
        let axis = policy.axis_steps(g.m());
        let mut count = 0usize;
        let mut all_steps = vec![Vec::new()];
        for _ in 0..g.d() {
            let mut next = Vec::new();
            for prefix in &all_steps {
                for &k in &axis {
                    let mut v = prefix.clone();
                    v.push(k);
                    next.push(v);
                }
            }
            all_steps = next;
        }
        for steps in &all_steps {
            for flat in 0..g.n() {
                let center = g.index_of_flat(flat);
                let ok = center
                    .iter()
                    .zip(steps)
                    .all(|(&c, &k)| c >= k && c + k < g.m());
                if ok {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn dyadic_count_matches_brute_force() {
        let g = make_grid(8, 2).unwrap();
        // The per-axis dyadic lattice at m = 8 is {1, 2, 4}; the largest
        // step admits no center (t - h falls off the grid), so only the
        // smaller two appear among admissible windows.
        assert_eq!(BandwidthPolicy::Dyadic.axis_steps(8), vec![1, 2, 4]);
        let stream: Vec<Window> = enumerate_windows(&g, BandwidthPolicy::Dyadic).collect();
        assert_eq!(stream.len(), brute_force_count(&g, BandwidthPolicy::Dyadic));
        let steps: std::collections::BTreeSet<usize> = stream
            .iter()
            .flat_map(|w| w.bandwidth().steps().to_vec())
            .collect();
        assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn full_count_matches_brute_force() {
        for m in [4, 5, 7] {
            for d in [1, 2] {
                let g = make_grid(m, d).unwrap();
                let stream: Vec<Window> = enumerate_windows(&g, BandwidthPolicy::Full).collect();
                assert_eq!(
                    stream.len(),
                    brute_force_count(&g, BandwidthPolicy::Full),
                    "m={m} d={d}"
                );
                // No duplicates, all admissible, deterministic order.
                let again: Vec<Window> = enumerate_windows(&g, BandwidthPolicy::Full).collect();
                assert_eq!(stream, again);
                for w in &stream {
                    assert!(w.is_admissible(&g));
                    assert_eq!(w.member_flat_indices(&g).len(), w.count());
                }
            }
        }
    }

    #[test]
    fn dyadic_is_subset_of_full() {
        let g = make_grid(12, 2).unwrap();
        let full: std::collections::HashSet<(Vec<usize>, Vec<usize>)> =
            enumerate_windows(&g, BandwidthPolicy::Full)
                .map(|w| (w.bandwidth().steps().to_vec(), w.center().to_vec()))
                .collect();
        for w in enumerate_windows(&g, BandwidthPolicy::Dyadic) {
            assert!(full.contains(&(w.bandwidth().steps().to_vec(), w.center().to_vec())));
        }
    }

    #[test]
    fn window_count_formula() {
        // N(t, h) = prod_i (2 m h_i + 1), computed from the real-valued h.
        let g = make_grid(10, 2).unwrap();
        for w in enumerate_windows(&g, BandwidthPolicy::Full) {
            let expect: usize = (0..g.d())
                .map(|a| (2.0 * g.m() as f64 * w.bandwidth().value(a) + 1.0).round() as usize)
                .product();
            assert_eq!(w.count(), expect);
            assert!(w.count() >= 1);
        }
    }

    #[test]
    fn reflection_maps_windows_to_windows() {
        let g = make_grid(9, 2).unwrap();
        let windows: std::collections::HashSet<(Vec<usize>, Vec<usize>)> =
            enumerate_windows(&g, BandwidthPolicy::Full)
                .map(|w| (w.bandwidth().steps().to_vec(), w.center().to_vec()))
                .collect();
        for (steps, center) in &windows {
            let reflected: Vec<usize> = center.iter().map(|&c| g.m() - 1 - c).collect();
            let key = (steps.clone(), reflected);
            assert!(windows.contains(&key), "reflection left the window set");
        }
    }

    #[test]
    fn bandwidth_validation() {
        let g = make_grid(10, 2).unwrap();
        assert!(Bandwidth::from_steps(vec![1, 5], &g).is_ok());
        assert!(Bandwidth::from_steps(vec![0, 1], &g).is_err());
        assert!(Bandwidth::from_steps(vec![6, 1], &g).is_err());
        assert!(Bandwidth::from_steps(vec![1], &g).is_err());
        let bw = Bandwidth::from_steps(vec![2, 5], &g).unwrap();
        assert_eq!(bw.values(), vec![0.2, 0.5]);
    }
}
