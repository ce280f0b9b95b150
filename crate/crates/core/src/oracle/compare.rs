//! Distances between two density fields on possibly different x-grids.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::{trapezoid, ColumnKind, DensityField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    Linf,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "linf" | "max" => Ok(Self::Linf),
            other => Err(Error::Precondition(format!("unknown norm {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareEntry {
    pub t: f64,
    pub column: ColumnKind,
    pub distance: f64,
    /// Grid point of the largest pointwise difference.
    pub worst_x: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub norm: Norm,
    pub entries: Vec<CompareEntry>,
}

impl CompareReport {
    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.distance).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CompareEntry> {
        self.entries.iter().max_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let col = match e.column {
                ColumnKind::S(s) => format!("s={s}"),
                ColumnKind::State(i) => format!("state={i}"),
            };
            writeln!(f, "t={} {col} {:?}={:.6e} worst_x={:.4}", e.t, self.norm, e.distance, e.worst_x)?;
        }
        write!(f, "max {:?} = {:.6e}", self.norm, self.max())
    }
}

/// Compares column by column at every common time. Mixed layouts are
/// compared in state form. Both fields are sampled on the coarser grid,
/// restricted to the overlap, with linear interpolation.
pub fn compare(a: &DensityField, b: &DensityField, norm: Norm) -> Result<CompareReport> {
    let (a, b) = if a.is_state_layout() != b.is_state_layout() {
        (a.to_states(), b.to_states())
    } else {
        (a.clone(), b.clone())
    };
    if a.columns.len() != b.columns.len() {
        return Err(Error::Grid(format!("{} columns against {}", a.columns.len(), b.columns.len())));
    }
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        let same = match (ca.kind, cb.kind) {
            (ColumnKind::S(x), ColumnKind::S(y)) => (x - y).abs() <= 1e-12,
            (x, y) => x == y,
        };
        if !same {
            return Err(Error::Grid(format!("column {:?} does not match {:?}", ca.kind, cb.kind)));
        }
    }
    let lo = a.x[0].max(b.x[0]);
    let hi = a.x[a.x.len() - 1].min(b.x[b.x.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Grid(format!("disjoint x-ranges: overlap [{lo}, {hi}]")));
    }
    let coarse = if spacing(&a.x) >= spacing(&b.x) { &a.x } else { &b.x };
    let grid: Vec<f64> = coarse.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
    if grid.len() < 2 {
        return Err(Error::Grid("overlap holds fewer than two grid points".into()));
    }

    let mut entries = Vec::new();
    for sa in &a.slices {
        let Some(sb) = b.slice_at(sa.t) else { continue };
        for (k, col) in a.columns.iter().enumerate() {
            let d: Vec<f64> = grid
                .iter()
                .map(|&x| (interp(&a.x, &sa.values[k], x) - interp(&b.x, &sb.values[k], x)).abs())
                .collect();
            let (iw, _) = d.iter().enumerate().fold((0, -1.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
            let distance = match norm {
                Norm::L1 => trapezoid(&grid, &d),
                Norm::Linf => d[iw],
            };
            entries.push(CompareEntry { t: sa.t, column: col.kind, distance, worst_x: grid[iw] });
        }
    }
    if entries.is_empty() {
        return Err(Error::Grid("no common output times".into()));
    }
    Ok(CompareReport { norm, entries })
}

fn spacing(x: &[f64]) -> f64 {
    (x[x.len() - 1] - x[0]) / (x.len() - 1).max(1) as f64
}

/// Linear interpolation on an ascending grid; `x` must lie inside it.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{uniform_grid, Column};

    fn gaussian_field(n: usize, shift: f64) -> DensityField {
        let x = uniform_grid(10.0, n);
        let mut f = DensityField::new(x.clone(), vec![Column::state(0)]);
        let v = x.iter().map(|&v| (-v * v).exp() / std::f64::consts::PI.sqrt() + shift).collect();
        f.push_slice(0.0, vec![v]).unwrap();
        f
    }

    #[test]
    fn constant_offset_has_known_distances() {
        let eps = 1e-3;
        let r = compare(&gaussian_field(401, 0.0), &gaussian_field(401, eps), Norm::L1).unwrap();
        assert!((r.max() - 20.0 * eps).abs() < 1e-12);
        let r = compare(&gaussian_field(401, 0.0), &gaussian_field(401, eps), Norm::Linf).unwrap();
        assert!((r.max() - eps).abs() < 1e-12);
    }

    #[test]
    fn different_grids_are_interpolated_onto_the_coarser() {
        let r = compare(&gaussian_field(2001, 0.0), &gaussian_field(201, 0.0), Norm::Linf).unwrap();
        assert!(r.max() < 1e-14, "{}", r.max());
        let r = compare(&gaussian_field(2001, 0.0), &gaussian_field(401, 0.0), Norm::Linf).unwrap();
        assert!(r.max() < 1e-14, "{}", r.max());
    }

    #[test]
    fn disjoint_grids_are_rejected() {
        let mut b = gaussian_field(101, 0.0);
        b.x.iter_mut().for_each(|x| *x += 30.0);
        assert!(matches!(compare(&gaussian_field(101, 0.0), &b, Norm::L1), Err(Error::Grid(_))));
    }
}
