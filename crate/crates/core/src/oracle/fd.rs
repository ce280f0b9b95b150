//! Method-of-lines finite differences for the finite-state forward system
//!
//! ∂_t p_j = −∂_x((b_j x + c_j) p_j) + ½σ_j² ∂_xx p_j + Σ_i q_ij p_i,
//!
//! with second-order central differences in conservative form, classic RK4
//! in time and homogeneous Dirichlet conditions at ±L.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Column, DensityField};
use crate::mixture::{envelope_half_width, Mixture};
use crate::model::DiscreteModel;

/// Boundary densities above this value are reported as leakage.
pub const LEAK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdGrid {
    pub half_width: f64,
    /// Interior points; Δx = 2L/(nx + 1).
    pub nx: usize,
    pub dt: f64,
}

impl FdGrid {
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.nx + 1) as f64
    }

    pub fn x(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.nx).map(|i| -self.half_width + i as f64 * dx).collect()
    }

    /// (diffusive, advective) time-step limits for `dm`.
    pub fn cfl_bounds(&self, dm: &DiscreteModel) -> (f64, f64) {
        let dx = self.dx();
        let smax = dm.sigma.iter().fold(0.0f64, |a, s| a.max(s * s));
        let vmax = (0..dm.states()).fold(0.0f64, |a, i| {
            a.max(dm.slope[i].abs() * self.half_width + dm.offset[i].abs())
        });
        (0.5 * dx * dx / smax, if vmax > 0.0 { dx / vmax } else { f64::INFINITY })
    }

    pub fn check_cfl(&self, dm: &DiscreteModel) -> Result<()> {
        let (diff, adv) = self.cfl_bounds(dm);
        if self.dt > diff {
            return Err(Error::Cfl { dt: self.dt, bound: diff, which: "diffusion" });
        }
        if self.dt > adv {
            return Err(Error::Cfl { dt: self.dt, bound: adv, which: "advection" });
        }
        Ok(())
    }

    /// Grid with spacing close to `dx` and 90% of the CFL-limited step.
    pub fn with_spacing(dm: &DiscreteModel, half_width: f64, dx: f64) -> Self {
        let nx = ((2.0 * half_width / dx).round() as usize).saturating_sub(1).max(1);
        let mut g = Self { half_width, nx, dt: 1.0 };
        let (diff, adv) = g.cfl_bounds(dm);
        g.dt = 0.9 * diff.min(adv);
        g
    }
}

/// Half-width holding every initial component, propagated with any state's
/// coefficients until `t_end`, within eight standard deviations.
pub fn default_half_width(dm: &DiscreteModel, initial: &[Mixture], t_end: f64) -> f64 {
    let coeffs: Vec<_> = (0..dm.states())
        .map(|i| {
            let c = dm.coefficients(i);
            (c.drift(), c.diffusion * c.diffusion)
        })
        .collect();
    envelope_half_width(&coeffs, initial, t_end, 8.0)
}

/// Solves from per-state initial densities given as mixtures. Point masses
/// are replaced by Gaussians of standard deviation 3Δx.
pub fn fd_solve(dm: &DiscreteModel, initial: &[Mixture], grid: FdGrid, save_times: &[f64]) -> Result<DensityField> {
    if initial.len() != dm.states() {
        return Err(Error::Precondition(format!(
            "{} initial profiles for {} states",
            initial.len(),
            dm.states()
        )));
    }
    let x = grid.x();
    let width = 3.0 * grid.dx();
    let values: Vec<Vec<f64>> = initial
        .iter()
        .map(|m| {
            let m = m.mollified(width);
            x.iter().map(|&v| m.density(v)).collect()
        })
        .collect();
    fd_solve_sampled(dm, &values, grid, save_times)
}

/// Solves from per-state initial densities sampled on `grid.x()`.
pub fn fd_solve_sampled(
    dm: &DiscreteModel,
    initial: &[Vec<f64>],
    grid: FdGrid,
    save_times: &[f64],
) -> Result<DensityField> {
    let n = dm.states();
    let nx = grid.nx;
    if initial.len() != n || initial.iter().any(|v| v.len() != nx) {
        return Err(Error::Precondition("initial samples do not match the grid".into()));
    }
    if save_times.windows(2).any(|w| w[1] < w[0]) || save_times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Precondition("save times must be nonnegative and ascending".into()));
    }
    grid.check_cfl(dm)?;
    let report = dm.validate();
    if !report.passed() {
        return Err(Error::InvalidRates(report.to_string()));
    }

    let op = Operator::new(dm, &grid);
    let mut p: Vec<f64> = initial.iter().flatten().copied().collect();
    let mut k = [vec![0.0; n * nx], vec![0.0; n * nx], vec![0.0; n * nx], vec![0.0; n * nx]];
    let mut tmp = vec![0.0; n * nx];

    let x = grid.x();
    let mut field = DensityField::new(x, (0..n).map(Column::state).collect());
    let mut t = 0.0;
    for &target in save_times {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / grid.dt).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                rk4_step(&op, &mut p, &mut k, &mut tmp, h);
            }
        }
        t = target;
        let leak = (0..n)
            .map(|j| p[j * nx].abs().max(p[j * nx + nx - 1].abs()))
            .fold(0.0, f64::max);
        if leak > LEAK_TOLERANCE {
            return Err(Error::BoundaryLeak { measured: leak, tolerance: LEAK_TOLERANCE });
        }
        field.push_slice(t, p.chunks(nx).map(<[f64]>::to_vec).collect())?;
    }
    Ok(field)
}

/// Discrete right-hand side, precomputed per state.
struct Operator {
    nx: usize,
    /// Velocity b x + c at each interior point, per state.
    velocity: Vec<Vec<f64>>,
    /// σ²/(2Δx²) per state.
    diffusion: Vec<f64>,
    inv_2dx: f64,
    /// Nonzero forward couplings (source state, rate) per target state,
    /// diagonal included.
    coupling: Vec<Vec<(usize, f64)>>,
}

impl Operator {
    fn new(dm: &DiscreteModel, grid: &FdGrid) -> Self {
        let x = grid.x();
        let dx = grid.dx();
        let f = dm.forward_matrix();
        let n = dm.states();
        Self {
            nx: grid.nx,
            velocity: (0..n)
                .map(|j| x.iter().map(|&v| dm.slope[j] * v + dm.offset[j]).collect())
                .collect(),
            diffusion: dm.sigma.iter().map(|s| 0.5 * s * s / (dx * dx)).collect(),
            inv_2dx: 0.5 / dx,
            coupling: (0..n)
                .map(|j| (0..n).filter(|&i| f[(j, i)] != 0.0).map(|i| (i, f[(j, i)])).collect())
                .collect(),
        }
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        out.par_chunks_mut(nx).enumerate().for_each(|(j, o)| {
            let pj = &p[j * nx..(j + 1) * nx];
            let v = &self.velocity[j];
            let d = self.diffusion[j];
            let a = self.inv_2dx;
            // Dirichlet: p = 0 outside the interior.
            let at = |i: isize| if i < 0 || i as usize >= nx { 0.0 } else { pj[i as usize] };
            let flux = |i: isize| if i < 0 || i as usize >= nx { 0.0 } else { v[i as usize] * pj[i as usize] };
            for i in [0, nx - 1] {
                let ii = i as isize;
                o[i] = -a * (flux(ii + 1) - flux(ii - 1)) + d * (at(ii + 1) - 2.0 * at(ii) + at(ii - 1));
            }
            for i in 1..nx.saturating_sub(1) {
                o[i] = -a * (v[i + 1] * pj[i + 1] - v[i - 1] * pj[i - 1])
                    + d * (pj[i + 1] - 2.0 * pj[i] + pj[i - 1]);
            }
            for &(src, rate) in &self.coupling[j] {
                let ps = &p[src * nx..(src + 1) * nx];
                for (oi, pi) in o.iter_mut().zip(ps) {
                    *oi += rate * pi;
                }
            }
        });
    }
}

fn rk4_step(op: &Operator, p: &mut [f64], k: &mut [Vec<f64>; 4], tmp: &mut [f64], h: f64) {
    let [k1, k2, k3, k4] = k;
    op.apply(p, k1);
    axpy_into(tmp, p, 0.5 * h, k1);
    op.apply(tmp, k2);
    axpy_into(tmp, p, 0.5 * h, k2);
    op.apply(tmp, k3);
    axpy_into(tmp, p, h, k3);
    op.apply(tmp, k4);
    let w = h / 6.0;
    for i in 0..p.len() {
        p[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
}

/// out = p + a·k
fn axpy_into(out: &mut [f64], p: &[f64], a: f64, k: &[f64]) {
    for ((o, pi), ki) in out.iter_mut().zip(p).zip(k) {
        *o = pi + a * ki;
    }
}
