//! Axis-aligned coordinate boxes used to restrict width summaries.

use crate::error::{Error, Result};

/// A closed coordinate box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    bounds: Vec<(f64, f64)>,
}

impl Region {
    /// The whole cube [0,1]^d.
    pub fn all(d: usize) -> Region {
        Region {
            bounds: vec![(0.0, 1.0); d],
        }
    }

    pub fn from_bounds(bounds: Vec<(f64, f64)>) -> Result<Region> {
        for &(lo, hi) in &bounds {
            if !(lo <= hi) {
                return Err(Error::InvalidParameter {
                    name: "region",
                    reason: format!("empty interval [{lo}, {hi}]"),
                });
            }
        }
        Ok(Region { bounds })
    }

    /// The centered box with the given side length per axis.
    pub fn centered(d: usize, side: f64) -> Region {
        let half = side / 2.0;
        Region {
            bounds: vec![(0.5 - half, 0.5 + half); d],
        }
    }

    pub fn d(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        debug_assert_eq!(coords.len(), self.bounds.len());
        coords
            .iter()
            .zip(&self.bounds)
            .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }

    /// Parse constraints like `x1<=0.3`, `x2>=0.4`, `0.45<=x1<=0.55`,
    /// comma-separated; unconstrained axes default to [0, 1].
    pub fn parse(text: &str, d: usize) -> Result<Region> {
        let mut bounds = vec![(0.0f64, 1.0f64); d];
        for raw in text.split(',') {
            let clause = raw.trim();
            if clause.is_empty() {
                continue;
            }
            parse_clause(clause, &mut bounds)?;
        }
        Region::from_bounds(bounds)
    }

    /// Render back to the textual constraint form.
    pub fn to_text(&self) -> String {
        self.bounds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| format!("{lo}<=x{}<={hi}", i + 1))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_clause(clause: &str, bounds: &mut [(f64, f64)]) -> Result<()> {
    let bad = |reason: String| Error::InvalidParameter {
        name: "region",
        reason,
    };
    let parts: Vec<&str> = clause.split("<=").map(str::trim).collect();
    match parts.as_slice() {
        // x1 <= 0.3
        [var, value] if var.starts_with('x') => {
            let axis = parse_axis(var, bounds.len())?;
            let v: f64 = value
                .parse()
                .map_err(|_| bad(format!("`{value}` is not a number")))?;
            bounds[axis].1 = bounds[axis].1.min(v);
            Ok(())
        }
        // 0.3 <= x1
        [value, var] if var.starts_with('x') => {
            let axis = parse_axis(var, bounds.len())?;
            let v: f64 = value
                .parse()
                .map_err(|_| bad(format!("`{value}` is not a number")))?;
            bounds[axis].0 = bounds[axis].0.max(v);
            Ok(())
        }
        // 0.45 <= x1 <= 0.55
        [lo, var, hi] if var.starts_with('x') => {
            let axis = parse_axis(var, bounds.len())?;
            let lo: f64 = lo
                .parse()
                .map_err(|_| bad(format!("`{lo}` is not a number")))?;
            let hi: f64 = hi
                .parse()
                .map_err(|_| bad(format!("`{hi}` is not a number")))?;
            bounds[axis].0 = bounds[axis].0.max(lo);
            bounds[axis].1 = bounds[axis].1.min(hi);
            Ok(())
        }
        _ => {
            // Also accept `x1>=0.3`.
            if let Some((var, value)) = clause.split_once(">=") {
                let var = var.trim();
                if var.starts_with('x') {
                    let axis = parse_axis(var, bounds.len())?;
                    let v: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("`{value}` is not a number")))?;
                    bounds[axis].0 = bounds[axis].0.max(v);
                    return Ok(());
                }
            }
            Err(bad(format!("cannot parse constraint `{clause}`")))
        }
    }
}

fn parse_axis(var: &str, d: usize) -> Result<usize> {
    let idx: usize = var[1..].parse().map_err(|_| Error::InvalidParameter {
        name: "region",
        reason: format!("`{var}` is not an axis name"),
    })?;
    if idx == 0 || idx > d {
        return Err(Error::InvalidParameter {
            name: "region",
            reason: format!("axis `{var}` out of range for dimension {d}"),
        });
    }
    Ok(idx - 1)
}
