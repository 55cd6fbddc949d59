//! Panel observations: an `N × T` matrix of real values, one row per panel.
//!
//! Time indices are 1-based in every public method (`t = 1..=T`), matching
//! the usual statistical notation; storage is row-major.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of time points.
pub const MIN_TIME: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One panel per line.
    Rows,
    /// One panel per column.
    Columns,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(Layout::Rows),
            "columns" | "cols" => Ok(Layout::Columns),
            other => Err(Error::Parameter(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    n_panels: usize,
    n_time: usize,
    values: Vec<f64>,
}

impl PanelMatrix {
    /// Build from row-major values (row `i` holds panel `i`).
    pub fn from_row_major(n_panels: usize, n_time: usize, values: Vec<f64>) -> Result<Self> {
        if n_panels == 0 {
            return Err(Error::Dimension("at least one panel is required".into()));
        }
        if n_time < MIN_TIME {
            return Err(Error::Dimension(format!(
                "T = {n_time} time points; at least {MIN_TIME} are required"
            )));
        }
        if values.len() != n_panels * n_time {
            return Err(Error::Dimension(format!(
                "expected {} values for {n_panels}x{n_time}, got {}",
                n_panels * n_time,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                panel: pos / n_time + 1,
                time: pos % n_time + 1,
            });
        }
        Ok(Self {
            n_panels,
            n_time,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_time = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_time) {
            return Err(Error::Dimension("rows have differing lengths".into()));
        }
        Self::from_row_major(rows.len(), n_time, rows.concat())
    }

    pub fn zeros(n_panels: usize, n_time: usize) -> Result<Self> {
        Self::from_row_major(n_panels, n_time, vec![0.0; n_panels * n_time])
    }

    pub fn n_panels(&self) -> usize {
        self.n_panels
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// Observation of panel `i` (0-based) at time `t` (1-based).
    pub fn get(&self, i: usize, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.n_time, "time index {t} outside 1..={}", self.n_time);
        self.values[i * self.n_time + t - 1]
    }

    /// Full series of panel `i` (0-based), in time order.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_time..(i + 1) * self.n_time]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_time)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Elementwise map, keeping the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_row_major(
            self.n_panels,
            self.n_time,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Add `shift[i]` to every observation of panel `i`.
    pub fn shift_panels(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.n_panels {
            return Err(Error::Dimension("shift length must equal N".into()));
        }
        let mut values = self.values.clone();
        for (row, &c) in values.chunks_exact_mut(self.n_time).zip(shift) {
            row.iter_mut().for_each(|v| *v += c);
        }
        Self::from_row_major(self.n_panels, self.n_time, values)
    }

    /// Time average of each panel.
    pub fn column_means(&self) -> Vec<f64> {
        self.rows()
            .map(|r| crate::cusum::compensated_sum(r.iter().copied()) / self.n_time as f64)
            .collect()
    }

    /// Comma-separated rendering with panels as rows, shortest round-trip
    /// decimal representation for every value.
    pub fn to_csv(&self, layout: Layout) -> String {
        let mut out = String::new();
        match layout {
            Layout::Rows => {
                for row in self.rows() {
                    write_line(&mut out, row.iter().copied());
                }
            }
            Layout::Columns => {
                for t in 0..self.n_time {
                    write_line(&mut out, self.rows().map(|r| r[t]));
                }
            }
        }
        out
    }
}

fn write_line(out: &mut String, vals: impl Iterator<Item = f64>) {
    for (j, v) in vals.enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Change-point specification: the mean of panel `i` moves by `deltas[i]`
/// after time `change_time = ⌊θT⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakSpec {
    pub theta: f64,
    pub change_time: usize,
    pub deltas: Vec<f64>,
}

impl BreakSpec {
    pub fn new(theta: f64, n_time: usize, deltas: Vec<f64>) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Parameter(format!("theta = {theta} must lie in (0, 1)")));
        }
        let change_time = (theta * n_time as f64).floor() as usize;
        if change_time < 1 || change_time >= n_time {
            return Err(Error::Parameter(format!(
                "change time {change_time} outside 1..={} for theta = {theta}",
                n_time - 1
            )));
        }
        Ok(Self {
            theta,
            change_time,
            deltas,
        })
    }

    /// No panel changes.
    pub fn is_null(&self) -> bool {
        self.deltas.iter().map(|d| d * d).sum::<f64>() == 0.0
    }
}

/// Read a comma-separated panel file.
///
/// Blank lines are ignored. The first non-blank line is treated as a header
/// when any of its cells fails to parse as a number.
pub fn load_panel(path: &Path, layout: Layout) -> Result<PanelMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_panel(&text, layout)
}

pub fn parse_panel(text: &str, layout: Layout) -> Result<PanelMatrix> {
    let mut records: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if first => {
                first = false;
                width = Some(cells.len());
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-numeric cell: {e}"),
                })
            }
        };
        first = false;
        match width {
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {w} fields, found {}", row.len()),
                })
            }
            _ => width = Some(row.len()),
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-finite value in field {}", col + 1),
            });
        }
        records.push((line_no, row));
    }
    if records.is_empty() {
        return Err(Error::Dimension("no numeric rows".into()));
    }
    let n_lines = records.len();
    let n_fields = records[0].1.len();
    let flat: Vec<f64> = records.into_iter().flat_map(|(_, r)| r).collect();
    match layout {
        Layout::Rows => PanelMatrix::from_row_major(n_lines, n_fields, flat),
        Layout::Columns => {
            let mut values = vec![0.0; flat.len()];
            for t in 0..n_lines {
                for i in 0..n_fields {
                    values[i * n_lines + t] = flat[t * n_fields + i];
                }
            }
            PanelMatrix::from_row_major(n_fields, n_lines, values)
        }
    }
}
