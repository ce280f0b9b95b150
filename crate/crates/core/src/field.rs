//! Sampled densities p(t, x, s) and their CSV form.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColumnKind {
    /// Continuum density at a hidden-state coordinate s.
    S(f64),
    /// Density of a discrete state.
    State(usize),
}

/// One sampled s-value or state; `weight` is its quadrature weight in s
/// (1 for discrete states).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Column {
    pub kind: ColumnKind,
    pub weight: f64,
}

impl Column {
    pub fn s(s: f64, weight: f64) -> Self {
        Self { kind: ColumnKind::S(s), weight }
    }

    pub fn state(i: usize) -> Self {
        Self { kind: ColumnKind::State(i), weight: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub t: f64,
    /// `values[column][x index]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub x: Vec<f64>,
    pub columns: Vec<Column>,
    pub slices: Vec<Slice>,
}

impl DensityField {
    pub fn new(x: Vec<f64>, columns: Vec<Column>) -> Self {
        Self { x, columns, slices: Vec::new() }
    }

    pub fn push_slice(&mut self, t: f64, values: Vec<Vec<f64>>) -> Result<()> {
        if values.len() != self.columns.len() || values.iter().any(|v| v.len() != self.x.len()) {
            return Err(Error::Grid("slice shape does not match the field grid".into()));
        }
        self.slices.push(Slice { t, values });
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    pub fn slice_at(&self, t: f64) -> Option<&Slice> {
        self.slices.iter().find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    pub fn is_state_layout(&self) -> bool {
        self.columns.iter().all(|c| matches!(c.kind, ColumnKind::State(_)))
    }

    /// ∫ p dx of one column (trapezoid rule).
    pub fn column_mass(&self, values: &[f64]) -> f64 {
        trapezoid(&self.x, values)
    }

    /// Σ_columns weight · ∫ p dx.
    pub fn mass(&self, slice: &Slice) -> f64 {
        self.columns
            .iter()
            .zip(&slice.values)
            .map(|(c, v)| c.weight * self.column_mass(v))
            .sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.slices.iter().map(|s| self.mass(s)).collect()
    }

    /// max_t |mass(t) − mass(t₀)|.
    pub fn mass_drift(&self) -> f64 {
        let m = self.masses();
        m.iter().map(|v| (v - m[0]).abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.values.iter().flatten())
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Converts continuum columns into state densities: the column at the
    /// midpoint of cell j becomes state j with density p(x, s)·weight.
    pub fn to_states(&self) -> Self {
        if self.is_state_layout() {
            return self.clone();
        }
        let columns = (0..self.columns.len()).map(Column::state).collect();
        let slices = self
            .slices
            .iter()
            .map(|sl| Slice {
                t: sl.t,
                values: sl
                    .values
                    .iter()
                    .zip(&self.columns)
                    .map(|(v, c)| v.iter().map(|p| p * c.weight).collect())
                    .collect(),
            })
            .collect();
        Self { x: self.x.clone(), columns, slices }
    }

    /// CSV with header `t,x,s,p` (or `t,x,state,p`), rows ordered by time,
    /// column and x, followed by one `# mass,<t>,<mass>` line per slice.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let states = self.is_state_layout();
        writeln!(w, "{}", if states { "t,x,state,p" } else { "t,x,s,p" })?;
        for sl in &self.slices {
            for (c, vals) in self.columns.iter().zip(&sl.values) {
                let col = match c.kind {
                    ColumnKind::S(s) => fmt_f64(s),
                    ColumnKind::State(i) => i.to_string(),
                };
                for (x, p) in self.x.iter().zip(vals) {
                    writeln!(w, "{},{},{},{}", fmt_f64(sl.t), fmt_f64(*x), col, fmt_f64(*p))?;
                }
            }
        }
        for sl in &self.slices {
            writeln!(w, "# mass,{},{}", fmt_f64(sl.t), fmt_f64(self.mass(sl)))?;
        }
        Ok(())
    }

    /// Parses the output of `write_csv`. Column weights are not stored in the
    /// CSV: states get weight 1 and s-columns get equal weights summing to 1.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Grid("empty CSV".into()))??;
        let states = match header.trim() {
            "t,x,state,p" => true,
            "t,x,s,p" => false,
            other => return Err(Error::Grid(format!("unexpected header {other:?}"))),
        };
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Grid(format!("line {}: {e}", no + 2)))?;
            if parts.len() != 4 {
                return Err(Error::Grid(format!("line {}: expected 4 fields", no + 2)));
            }
            rows.push((parts[0], parts[1], parts[2], parts[3]));
        }
        let mut times: Vec<f64> = Vec::new();
        let mut cols: Vec<f64> = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        for r in &rows {
            if !times.contains(&r.0) {
                times.push(r.0);
            }
            if !cols.contains(&r.2) {
                cols.push(r.2);
            }
            if !xs.contains(&r.1) {
                xs.push(r.1);
            }
        }
        if rows.len() != times.len() * cols.len() * xs.len() {
            return Err(Error::Grid("CSV rows do not form a rectangular grid".into()));
        }
        let columns = cols
            .iter()
            .map(|&c| {
                if states {
                    Column::state(c as usize)
                } else {
                    Column::s(c, 1.0 / cols.len() as f64)
                }
            })
            .collect();
        let mut field = Self::new(xs.clone(), columns);
        let mut it = rows.iter();
        for &t in &times {
            let mut values = vec![vec![0.0; xs.len()]; cols.len()];
            for col in values.iter_mut() {
                for v in col.iter_mut() {
                    *v = it.next().expect("row count checked").3;
                }
            }
            field.push_slice(t, values)?;
        }
        Ok(field)
    }
}

/// Lower and upper density envelopes on an (x, s) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsField {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// `(t, lower[s][x], upper[s][x])`.
    pub slices: Vec<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl BoundsField {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,s,lower,upper")?;
        for (t, lo, hi) in &self.slices {
            for (k, s) in self.s.iter().enumerate() {
                for (i, x) in self.x.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        fmt_f64(*t),
                        fmt_f64(*x),
                        fmt_f64(*s),
                        fmt_f64(lo[k][i]),
                        fmt_f64(hi[k][i])
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// 17 significant digits, stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Uniform grid of `n` points on [−half_width, half_width].
pub fn uniform_grid(half_width: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let dx = 2.0 * half_width / (n - 1) as f64;
    (0..n).map(|i| -half_width + i as f64 * dx).collect()
}
