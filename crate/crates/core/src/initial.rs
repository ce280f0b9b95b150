//! Initial data Φ(x, s) for the continuum model.

use crate::error::{Error, Result};
use crate::mixture::Mixture;

/// Initial density on ℝ × [0, 1].
///
/// `Stepwise` holds one x-profile per s-cell (cells of equal width, state 0 in
/// the first cell). Each profile is a density in x at fixed s, so a profile
/// of unit mass on every cell gives total mass one.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialData {
    Stepwise(Vec<Mixture>),
    /// Per-cell samples on an x-grid; accepted by the finite-difference
    /// oracle only.
    Sampled { x: Vec<f64>, cells: Vec<Vec<f64>> },
}

impl InitialData {
    /// `e^{-x²}/√π` at every s.
    pub fn uniform_gaussian() -> Self {
        Self::Stepwise(vec![Mixture::unit_gaussian(0.0)])
    }

    /// `δ(x - m)` at every s.
    pub fn uniform_delta(mean: f64) -> Self {
        Self::Stepwise(vec![Mixture::point(mean)])
    }

    /// `e^{-(x-m_i)²}/√π` on the i-th of `means.len()` cells.
    pub fn stepwise_gaussian(means: &[f64]) -> Self {
        Self::Stepwise(means.iter().map(|&m| Mixture::unit_gaussian(m)).collect())
    }

    /// `δ(x - m_i)` on the i-th cell.
    pub fn stepwise_delta(means: &[f64]) -> Self {
        Self::Stepwise(means.iter().map(|&m| Mixture::point(m)).collect())
    }

    pub fn cells(&self) -> usize {
        match self {
            Self::Stepwise(c) => c.len(),
            Self::Sampled { cells, .. } => cells.len(),
        }
    }

    pub fn cell_mixtures(&self) -> Result<&[Mixture]> {
        match self {
            Self::Stepwise(c) => Ok(c),
            Self::Sampled { .. } => Err(Error::Unsupported(
                "sampled initial data has no symbolic Fourier transform".into(),
            )),
        }
    }

    pub fn has_point_mass(&self) -> bool {
        match self {
            Self::Stepwise(c) => c.iter().any(Mixture::has_point_mass),
            Self::Sampled { .. } => false,
        }
    }

    /// Per-state densities of the equivalent discrete system: the cell
    /// profile times the cell width.
    pub fn state_mixtures(&self) -> Result<Vec<Mixture>> {
        let cells = self.cell_mixtures()?;
        let h = 1.0 / cells.len() as f64;
        Ok(cells.iter().map(|m| m.scaled(h)).collect())
    }

    /// Per-state densities on `cells` equal cells, a multiple of the data's
    /// own cell count.
    pub fn state_mixtures_on(&self, cells: usize) -> Result<Vec<Mixture>> {
        let own = self.cell_mixtures()?;
        if cells == 0 || cells % own.len() != 0 {
            return Err(Error::Precondition(format!("{} data cells do not divide {cells}", own.len())));
        }
        let h = 1.0 / cells as f64;
        Ok((0..cells).map(|j| own[j * own.len() / cells].scaled(h)).collect())
    }

    pub fn total_mass(&self) -> Result<f64> {
        Ok(self.state_mixtures()?.iter().map(Mixture::mass).sum())
    }
}

/// Cell index of `s` among `cells` equal cells, half-open with s = 1 in the
/// last cell.
pub fn cell_index(s: f64, cells: usize) -> usize {
    ((s * cells as f64).floor() as usize).min(cells - 1)
}
