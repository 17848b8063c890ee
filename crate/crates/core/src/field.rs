//! A real value attached to every grid point, plus the CSV exchange format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridDesign;

/// Tolerance for matching CSV coordinates to grid points.
pub const COORD_TOLERANCE: f64 = 1e-9;

/// One value per grid point, row-major with the last axis fastest.
///
/// Regular fields hold finite values only. Band limits are the one exception:
/// boundary points with no admissible window carry `-inf`/`+inf` sentinels and
/// are constructed through [`Field::with_sentinels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    design: GridDesign,
    values: Vec<f64>,
}

impl Field {
    /// Wrap finite values; rejects wrong length or non-finite entries.
    pub fn new(design: GridDesign, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.n() {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("expected {} values, got {}", design.n(), values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("non-finite value at flat index {pos}"),
            });
        }
        Ok(Field { design, values })
    }

    /// Wrap values that may contain the band boundary sentinels.
    pub fn with_sentinels(design: GridDesign, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.n() {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("expected {} values, got {}", design.n(), values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("NaN at flat index {pos}"),
            });
        }
        Ok(Field { design, values })
    }

    /// Evaluate a function at every grid point.
    pub fn from_fn(design: GridDesign, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(design.n());
        for flat in 0..design.n() {
            let idx = design.index_of_flat(flat);
            values.push(f(&design.coordinate(&idx)));
        }
        Field::new(design, values)
    }

    pub fn design(&self) -> &GridDesign {
        &self.design
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_flat(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn value(&self, index: &[usize]) -> f64 {
        self.values[self.design.flat_index(index)]
    }

    /// Write as CSV: header `x1,...,xd,y`, one row per grid point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.design.d();
        let mut header = String::new();
        for axis in 0..d {
            header.push_str(&format!("x{},", axis + 1));
        }
        header.push('y');
        writeln!(out, "{header}")?;
        for flat in 0..self.design.n() {
            let idx = self.design.index_of_flat(flat);
            let mut row = String::new();
            for &i in &idx {
                row.push_str(&format!("{},", self.design.axis_coordinate(i)));
            }
            row.push_str(&format_value(self.values[flat]));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read the CSV format back, validating that the rows cover the grid
    /// exactly. Coordinates are matched with absolute tolerance 1e-9.
    pub fn read_csv<R: Read>(reader: R, design: GridDesign) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv {
                row: 1,
                message: "empty input".into(),
            })?
            .map_err(Error::Io)?;
        let d = parse_header(&header, 1)?;
        if d != design.d() {
            return Err(Error::Csv {
                row: 1,
                message: format!("header has {} axes, grid has {}", d, design.d()),
            });
        }

        let mut values = vec![f64::NAN; design.n()];
        let mut seen = vec![false; design.n()];
        for (zero_based, line) in lines.enumerate() {
            let row = zero_based + 2;
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Csv {
                    row,
                    message: format!("expected {} fields, got {}", d + 1, fields.len()),
                });
            }
            let mut coords = Vec::with_capacity(d);
            for field in &fields[..d] {
                coords.push(parse_float(field, row)?);
            }
            let index = design.index_near(&coords, COORD_TOLERANCE).ok_or_else(|| {
                Error::Csv {
                    row,
                    message: format!(
                        "coordinates ({}) do not match a grid point",
                        join_coords(&coords)
                    ),
                }
            })?;
            let flat = design.flat_index(&index);
            if seen[flat] {
                return Err(Error::Csv {
                    row,
                    message: format!("duplicate grid point ({})", join_coords(&coords)),
                });
            }
            seen[flat] = true;
            values[flat] = parse_float(fields[d], row)?;
        }

        if let Some(flat) = seen.iter().position(|&s| !s) {
            let idx = design.index_of_flat(flat);
            return Err(Error::MissingGridPoint {
                coordinate: join_coords(&design.coordinate(&idx)),
            });
        }
        Field::new(design, values)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, design: GridDesign) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Field::read_csv(file, design)
    }
}

/// Serialize a value, using `-inf`/`inf` for the band sentinels.
pub(crate) fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub(crate) fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

fn parse_float(s: &str, row: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Csv {
        row,
        message: format!("`{s}` is not a number"),
    })
}

fn parse_header(header: &str, row: usize) -> Result<usize> {
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(Error::Csv {
            row,
            message: "expected header `x1,...,xd,y`".into(),
        });
    }
    for (i, col) in cols[..cols.len() - 1].iter().enumerate() {
        if *col != format!("x{}", i + 1) {
            return Err(Error::Csv {
                row,
                message: format!("expected column `x{}`, got `{col}`", i + 1),
            });
        }
    }
    Ok(cols.len() - 1)
}

pub(crate) fn join_coords(coords: &[f64]) -> String {
    coords
        .iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(", ")
}
