//! Fourier-in-x, Galerkin-in-s solution of the forward equation.
//!
//! With p̂(t, μ, s) = ∫ p e^{-iμx} dx the equation becomes
//! p̂_t = ∫K p̂ dξ + b(s) μ p̂_μ − (½R²(s)μ² + i c(s) μ) p̂.
//!
//! Two mode representations are supported:
//!
//! * decoupled: p̂ = F(t, μ, s) Σ_l a_l(t, μ) X_l(s), where F carries the
//!   drift and diffusion of the strip containing s and a(t, μ) = e^{At} ĝ(μ e^{bt}).
//!   This is exact when b, c and R do not depend on s;
//! * coupled (b ≡ 0): p̂ = Σ_l a_l X_l(s) with a(t, μ) = e^{G(μ)t} ĝ(μ) and
//!   G = A − ½μ² 𝓡 − iμ 𝓒, where 𝓡, 𝓒 are the Galerkin matrices of R² and c.
//!   This is exact for stepwise models under a matching Haar basis.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::basis::{project_initial_data, project_kernel, project_multiplier, BasisKind, KernelMatrix, OrthonormalBasis};
use crate::error::{Error, Result};
use crate::field::{Column, ColumnKind, DensityField};
use crate::initial::InitialData;
use crate::mixture::{envelope_half_width, Mixture};
use crate::model::ContinuousModel;
use crate::quad::{gauss_kronrod, merge_breaks};

pub type C64 = Complex<f64>;

/// Symmetric uniform grid {−μ_max, …, 0, …, μ_max}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuGrid {
    mu_max: f64,
    half: usize,
}

impl MuGrid {
    /// Grid reaching `mu_max` with step at most `step`.
    pub fn new(mu_max: f64, step: f64) -> Result<Self> {
        if !(mu_max > 0.0 && step > 0.0 && mu_max.is_finite()) {
            return Err(Error::Precondition(format!("invalid mu grid: mu_max = {mu_max}, step = {step}")));
        }
        Ok(Self { mu_max, half: (mu_max / step).ceil().max(1.0) as usize })
    }

    /// μ_max = 12/min_std resolves the narrowest component; the period
    /// 2π/Δμ covers four times the x-extent so aliased images stay far away.
    pub fn for_resolution(min_std: f64, x_extent: f64) -> Result<Self> {
        Self::new(12.0 / min_std, PI / (2.0 * x_extent))
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_max
    }

    pub fn step(&self) -> f64 {
        self.mu_max / self.half as f64
    }

    pub fn len(&self) -> usize {
        2 * self.half + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.len()).map(|j| (j as f64 - self.half as f64) * h).collect()
    }

    /// Trapezoid weights (half weight at ±μ_max).
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.len())
            .map(|j| if j == 0 || j == self.len() - 1 { 0.5 * h } else { h })
            .collect()
    }
}

/// Closed-form transforms ĝ_k(μ) of the projected initial data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTransforms {
    pub basis: OrthonormalBasis,
    /// g_k(x) as mixtures; ĝ_k is their exact transform.
    pub modes: Vec<Mixture>,
}

impl ModeTransforms {
    pub fn eval(&self, k: usize, mu: f64) -> C64 {
        self.modes[k].fourier(mu)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn has_point_mass(&self) -> bool {
        self.modes.iter().any(Mixture::has_point_mass)
    }

    pub fn min_std(&self) -> Option<f64> {
        self.modes
            .iter()
            .filter_map(Mixture::min_std)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    /// max_k |ĝ_k(±μ)|.
    pub fn magnitude_at(&self, mu: f64) -> f64 {
        (0..self.len())
            .map(|k| self.eval(k, mu).norm().max(self.eval(k, -mu).norm()))
            .fold(0.0, f64::max)
    }

    /// a(0, μ) = ĝ(μ) on the grid.
    pub fn tabulate(&self, grid: &MuGrid) -> ModeCoefficients {
        let mu = grid.nodes();
        let values = (0..self.len()).map(|k| mu.iter().map(|&m| self.eval(k, m)).collect()).collect();
        ModeCoefficients { t: 0.0, mu, values, frame: Frame::Decoupled }
    }
}

/// g_k = ∫ Φ X_k ds and their transforms.
pub fn forward_transform(data: &InitialData, basis: OrthonormalBasis) -> Result<ModeTransforms> {
    Ok(ModeTransforms { basis, modes: project_initial_data(data, basis)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Drift and diffusion factored out per s (see the module docs).
    Decoupled,
    /// Drift and diffusion included in the mode evolution.
    Coupled,
}

/// a_k(t, μ) on a μ-grid; `values[k][j]` belongs to `mu[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoefficients {
    pub t: f64,
    pub mu: Vec<f64>,
    pub values: Vec<Vec<C64>>,
    pub frame: Frame,
}

impl ModeCoefficients {
    pub fn modes(&self) -> usize {
        self.values.len()
    }

    /// max |a_k(−μ) − conj(a_k(μ))| over the grid.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let n = self.mu.len();
        self.values
            .iter()
            .flat_map(|row| (0..n).map(move |j| (row[n - 1 - j] - row[j].conj()).norm()))
            .fold(0.0, f64::max)
    }
}

/// e^{At} with the frozen first row pinned to e₀.
pub fn propagator(a: &KernelMatrix, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::Precondition(format!("negative time {t}")));
    }
    let n = a.basis.len();
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let at = &a.matrix * t;
    let scale = at.amax();
    let mut e = at.exp();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::ExpOverflow { scale });
    }
    e.row_mut(0).fill(0.0);
    e[(0, 0)] = 1.0;
    Ok(e)
}

/// a(t, μ) = e^{At} a(0, μ) for b = 0.
pub fn evolve_modes_b0(a: &KernelMatrix, initial: &ModeCoefficients, t: f64) -> Result<ModeCoefficients> {
    if initial.frame != Frame::Decoupled || initial.t != 0.0 {
        return Err(Error::Precondition("b = 0 evolution starts from decoupled data at t = 0".into()));
    }
    let e = propagator(a, t)?;
    let n = initial.modes();
    let mut values: Vec<Vec<C64>> = (0..n)
        .map(|k| {
            (0..initial.mu.len())
                .map(|j| (0..n).map(|l| initial.values[l][j] * e[(k, l)]).sum())
                .collect()
        })
        .collect();
    values[0] = initial.values[0].clone();
    Ok(ModeCoefficients { t, mu: initial.mu.clone(), values, frame: Frame::Decoupled })
}

/// a(t, μ) = e^{At} ĝ(μ e^{bt}): transport along the characteristics of
/// a_t = A a + b μ a_μ.
pub fn evolve_modes_bnz(
    a: &KernelMatrix,
    transforms: &ModeTransforms,
    t: f64,
    slope: f64,
    grid: &MuGrid,
) -> Result<ModeCoefficients> {
    let e = propagator(a, t)?;
    let g = (slope * t).exp();
    let mu = grid.nodes();
    let n = transforms.len();
    let values = (0..n)
        .map(|k| {
            mu.iter()
                .map(|&m| (0..n).map(|l| transforms.eval(l, m * g) * e[(k, l)]).sum())
                .collect()
        })
        .collect();
    Ok(ModeCoefficients { t, mu, values, frame: Frame::Decoupled })
}

/// Second mode of a two-function basis by Duhamel's formula along the
/// characteristics, a₁ = e^{A₁₁t} ĝ₁(μe^{bt}) + ∫₀ᵗ e^{A₁₁(t−η)} A₁₀ a₀(η, μe^{b(t−η)}) dη,
/// integrated adaptively to `tol`.
pub fn duhamel_two_mode(
    a: &KernelMatrix,
    transforms: &ModeTransforms,
    t: f64,
    slope: f64,
    mu: f64,
    tol: f64,
) -> Result<C64> {
    if a.basis.len() != 2 {
        return Err(Error::Precondition("Duhamel form needs exactly two modes".into()));
    }
    let (a10, a11) = (a.get(1, 0), a.get(1, 1));
    // a₀(η, ν) = ĝ₀(ν e^{bη}) since mode 0 is only transported.
    let integrand = |eta: f64| {
        let nu = mu * (slope * (t - eta)).exp();
        transforms.eval(0, nu * (slope * eta).exp()) * (a11 * (t - eta)).exp() * a10
    };
    let re = gauss_kronrod(|eta| integrand(eta).re, 0.0, t, tol)?;
    let im = gauss_kronrod(|eta| integrand(eta).im, 0.0, t, tol)?;
    Ok(transforms.eval(1, mu * (slope * t).exp()) * (a11 * t).exp() + C64::new(re, im))
}

/// Galerkin matrices of multiplication by R²(s) and c(s).
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub diffusion_sq: DMatrix<f64>,
    pub offset: DMatrix<f64>,
}

impl Multipliers {
    pub fn project(model: &ContinuousModel, basis: OrthonormalBasis) -> Self {
        let breaks = merge_breaks(&[&model.diffusion().breaks(), &model.offset().breaks()]);
        let r = model.diffusion().clone();
        let c = model.offset().clone();
        Self {
            diffusion_sq: project_multiplier(|s| r.eval(s).powi(2), &breaks, basis),
            offset: project_multiplier(|s| c.eval(s), &breaks, basis),
        }
    }
}

/// a(t, μ) = e^{(A − ½μ²𝓡 − iμ𝓒)t} ĝ(μ), for b ≡ 0.
pub fn evolve_modes_coupled(
    a: &KernelMatrix,
    mult: &Multipliers,
    transforms: &ModeTransforms,
    t: f64,
    grid: &MuGrid,
) -> Result<ModeCoefficients> {
    if t < 0.0 {
        return Err(Error::Precondition(format!("negative time {t}")));
    }
    let n = a.basis.len();
    let mu = grid.nodes();
    let columns: Vec<Vec<C64>> = mu
        .par_iter()
        .map(|&m| {
            let g0: Vec<C64> = (0..n).map(|l| transforms.eval(l, m)).collect();
            if t == 0.0 {
                return Ok(g0);
            }
            let gen = DMatrix::from_fn(n, n, |k, l| {
                C64::new(
                    (a.matrix[(k, l)] - 0.5 * m * m * mult.diffusion_sq[(k, l)]) * t,
                    -m * mult.offset[(k, l)] * t,
                )
            });
            let scale = gen.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let e = gen.exp();
            if !e.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::ExpOverflow { scale });
            }
            Ok((0..n).map(|k| (0..n).map(|l| e[(k, l)] * g0[l]).sum()).collect())
        })
        .collect::<Result<_>>()?;
    let values = (0..n).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
    Ok(ModeCoefficients { t, mu, values, frame: Frame::Coupled })
}

/// Result of inverting the μ-transform on an (x, s) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Reassembled {
    /// `values[column][x]`.
    pub values: Vec<Vec<f64>>,
    pub imag_residue: f64,
}

/// p(t, x, s) = (1/2π) ∫ p̂(t, μ, s) e^{iμx} dμ by the trapezoid rule on the
/// mode grid.
///
/// Fails with `MuGridTooCoarse` when |p̂(±μ_max)| exceeds 1e-12 of its peak.
pub fn reassemble(
    modes: &ModeCoefficients,
    model: &ContinuousModel,
    basis: OrthonormalBasis,
    x: &[f64],
    columns: &[Column],
) -> Result<Reassembled> {
    let nmu = modes.mu.len();
    let h = if nmu > 1 { modes.mu[1] - modes.mu[0] } else { 1.0 };
    let t = modes.t;
    // p̂ per column, already multiplied by trapezoid weights.
    let mut spectra: Vec<Vec<C64>> = Vec::with_capacity(columns.len());
    let mut peak: f64 = 0.0;
    let mut tail: f64 = 0.0;
    for col in columns {
        let s = match col.kind {
            ColumnKind::S(s) => s,
            ColumnKind::State(_) => return Err(Error::Grid("reassembly needs s-columns".into())),
        };
        let xs = basis.values(s);
        let c = model.coefficients(s);
        let spec: Vec<C64> = (0..nmu)
            .map(|j| {
                let m = modes.mu[j];
                let mut v: C64 = (0..modes.modes()).map(|l| modes.values[l][j] * xs[l]).sum();
                if modes.frame == Frame::Decoupled {
                    v *= decoupled_factor(c.slope, c.offset, c.diffusion * c.diffusion, t, m);
                }
                v
            })
            .collect();
        peak = spec.iter().fold(peak, |a, z| a.max(z.norm()));
        tail = tail.max(spec[0].norm()).max(spec[nmu - 1].norm());
        spectra.push(
            spec.into_iter()
                .enumerate()
                .map(|(j, z)| z * if j == 0 || j == nmu - 1 { 0.5 * h } else { h })
                .collect(),
        );
    }
    if peak > 0.0 && tail > 1e-12 * peak {
        return Err(Error::MuGridTooCoarse {
            tail: tail / peak,
            mu_max: modes.mu[nmu - 1],
        });
    }
    let per_x: Vec<(Vec<f64>, f64)> = x
        .par_iter()
        .map(|&xv| {
            let phases: Vec<C64> = modes
                .mu
                .iter()
                .map(|&m| {
                    let (sn, cs) = (m * xv).sin_cos();
                    C64::new(cs, sn)
                })
                .collect();
            let mut resid: f64 = 0.0;
            let vals = spectra
                .iter()
                .map(|spec| {
                    let z: C64 = spec.iter().zip(&phases).map(|(a, b)| a * b).sum::<C64>() / (2.0 * PI);
                    resid = resid.max(z.im.abs());
                    z.re
                })
                .collect();
            (vals, resid)
        })
        .collect();
    let values = (0..columns.len())
        .map(|c| per_x.iter().map(|(v, _)| v[c]).collect())
        .collect();
    let imag_residue = per_x.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    Ok(Reassembled { values, imag_residue })
}

/// exp(−½ W_t μ² − i D_t μ): the transform of the drift–diffusion flow with
/// W_t, D_t the variance and displacement accumulated by time t.
pub fn decoupled_factor(slope: f64, offset: f64, diffusion_sq: f64, t: f64, mu: f64) -> C64 {
    let (w, d) = if slope == 0.0 {
        (diffusion_sq * t, offset * t)
    } else {
        (
            diffusion_sq * (2.0 * slope * t).exp_m1() / (2.0 * slope),
            offset * (slope * t).exp_m1() / slope,
        )
    };
    let amp = (-0.5 * w * mu * mu).exp();
    let (sn, cs) = (-d * mu).sin_cos();
    C64::new(amp * cs, amp * sn)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Coupled when b ≡ 0 and c or R vary with s, decoupled otherwise.
    Auto,
    Decoupled,
    Coupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reassembly {
    /// Closed form for decoupled solves, μ-quadrature for coupled ones.
    Auto,
    /// Exact Gaussian-mixture inversion (decoupled only).
    ClosedForm,
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub basis: BasisKind,
    /// Number of basis functions; defaults to the smallest exact Haar size
    /// for stepwise inputs and 16 otherwise.
    pub modes: Option<usize>,
    pub strategy: Strategy,
    pub reassembly: Reassembly,
    pub mu_grid: Option<MuGrid>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            basis: BasisKind::Haar,
            modes: None,
            strategy: Strategy::Auto,
            reassembly: Reassembly::Auto,
            mu_grid: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub field: DensityField,
    pub kernel: KernelMatrix,
    pub strategy: Strategy,
    pub reassembly: Reassembly,
    pub mu_grid: Option<MuGrid>,
    /// max_t ‖a₀(t) − a₀(0)‖∞ in the decoupled frame.
    pub frozen_mode_defect: f64,
    pub imag_residue: f64,
    pub minor_spectrum: Vec<C64>,
}

/// s-columns at the midpoints of `cells` equal cells, weighted by the cell
/// width.
pub fn cell_midpoints(cells: usize) -> Vec<Column> {
    let h = 1.0 / cells as f64;
    (0..cells).map(|j| Column::s((j as f64 + 0.5) * h, h)).collect()
}

/// Eigenvalues of the block of A with rows and columns ≥ 1.
pub fn minor_spectrum(a: &KernelMatrix) -> Vec<C64> {
    if a.basis.len() < 2 {
        return Vec::new();
    }
    a.minor().complex_eigenvalues().iter().copied().collect()
}

fn default_modes(model: &ContinuousModel, data: &InitialData, kind: BasisKind) -> usize {
    if kind == BasisKind::Cosine {
        return 16;
    }
    let cells = |b: &[f64]| b.len() - 1;
    let breaks = merge_breaks(&[&model.strips(), &crate::quad::uniform_breaks(data.cells())]);
    // Dyadic breakpoints only: the grid is exactly resolved by Haar of that size.
    let n = cells(&breaks).next_power_of_two();
    let dyadic = breaks.iter().all(|b| (b * n as f64 - (b * n as f64).round()).abs() < 1e-12);
    if dyadic {
        n
    } else {
        16
    }
}

/// Spectral solution of the forward equation at the requested times.
pub fn solve(
    model: &ContinuousModel,
    data: &InitialData,
    times: &[f64],
    x: &[f64],
    columns: &[Column],
    opts: SolveOptions,
) -> Result<Solution> {
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Precondition("times must be nonnegative".into()));
    }
    let n = opts.modes.unwrap_or_else(|| default_modes(model, data, opts.basis));
    let basis = OrthonormalBasis::new(opts.basis, n)?;
    let a = project_kernel(model.kernel(), basis)?;
    let spectrum = minor_spectrum(&a);
    let scale = a.matrix.amax().max(1.0);
    if let Some(z) = spectrum.iter().find(|z| z.re > 1e-10 * scale) {
        return Err(Error::InvalidModel(format!(
            "projected kernel has an eigenvalue with positive real part: {z}"
        )));
    }
    let transforms = forward_transform(data, basis)?;

    let strategy = match opts.strategy {
        Strategy::Auto if model.slope().is_zero() && !model.has_uniform_coefficients() => Strategy::Coupled,
        Strategy::Auto => Strategy::Decoupled,
        s => s,
    };
    if strategy == Strategy::Coupled && !model.slope().is_zero() {
        return Err(Error::Unsupported("the coupled mode evolution needs b ≡ 0".into()));
    }
    let reassembly = match (opts.reassembly, strategy) {
        (Reassembly::Auto, Strategy::Coupled) => Reassembly::Quadrature,
        (Reassembly::Auto, _) => Reassembly::ClosedForm,
        (Reassembly::ClosedForm, Strategy::Coupled) => {
            return Err(Error::Unsupported("closed-form reassembly needs the decoupled frame".into()))
        }
        (r, _) => r,
    };

    let mut field = DensityField::new(x.to_vec(), columns.to_vec());
    let mut frozen: f64 = 0.0;
    let mut imag: f64 = 0.0;
    let mut grid_used = None;

    if reassembly == Reassembly::ClosedForm {
        for &t in times {
            if t == 0.0 && transforms.has_point_mass() {
                return Err(Error::Unsupported("point-mass data cannot be sampled at t = 0".into()));
            }
            let e = propagator(&a, t)?;
            frozen = frozen.max((0..n).map(|l| (e[(0, l)] - if l == 0 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max));
            let values = columns
                .par_iter()
                .map(|col| {
                    let s = match col.kind {
                        ColumnKind::S(s) => s,
                        ColumnKind::State(_) => return Err(Error::Grid("solve needs s-columns".into())),
                    };
                    let xs = basis.values(s);
                    let mut mix = Mixture::new();
                    for l in 0..n {
                        for m in 0..n {
                            mix.add_scaled(&transforms.modes[m], xs[l] * e[(l, m)]);
                        }
                    }
                    let c = model.coefficients(s);
                    let p = mix.propagate(c.drift(), c.diffusion * c.diffusion, t);
                    Ok(x.iter().map(|&xv| p.density(xv)).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            field.push_slice(t, values)?;
        }
    } else {
        let grid = match opts.mu_grid {
            Some(g) => g,
            None => {
                let min_std = transforms
                    .min_std()
                    .ok_or(Error::NonDecaying(transforms.magnitude_at(0.0)))?;
                let coeffs: Vec<_> = columns
                    .iter()
                    .filter_map(|c| match c.kind {
                        ColumnKind::S(s) => Some(model.coefficients(s)),
                        ColumnKind::State(_) => None,
                    })
                    .map(|c| (c.drift(), c.diffusion * c.diffusion))
                    .collect();
                let t_end = times.iter().copied().fold(0.0, f64::max);
                let support = envelope_half_width(&coeffs, &transforms.modes, t_end, 8.0);
                let x_ext = x.iter().fold(support, |a, v| a.max(v.abs()));
                MuGrid::for_resolution(min_std, x_ext)?
            }
        };
        let edge = transforms.magnitude_at(grid.mu_max());
        if transforms.has_point_mass() && edge > 1e-8 {
            return Err(Error::NonDecaying(edge));
        }
        grid_used = Some(grid);
        let mult = (strategy == Strategy::Coupled).then(|| Multipliers::project(model, basis));
        let initial = transforms.tabulate(&grid);
        for &t in times {
            let mut values = vec![Vec::new(); columns.len()];
            match &mult {
                Some(mult) => {
                    let modes = evolve_modes_coupled(&a, mult, &transforms, t, &grid)?;
                    let r = reassemble(&modes, model, basis, x, columns)?;
                    imag = imag.max(r.imag_residue);
                    values = r.values;
                }
                None => {
                    // Columns sharing a slope share the mode evolution.
                    let mut slopes: Vec<f64> = Vec::new();
                    for col in columns {
                        if let ColumnKind::S(s) = col.kind {
                            let b = model.coefficients(s).slope;
                            if !slopes.contains(&b) {
                                slopes.push(b);
                            }
                        }
                    }
                    for b in slopes {
                        let idx: Vec<usize> = (0..columns.len())
                            .filter(|&i| match columns[i].kind {
                                ColumnKind::S(s) => model.coefficients(s).slope == b,
                                ColumnKind::State(_) => false,
                            })
                            .collect();
                        let modes = if b == 0.0 {
                            let m = evolve_modes_b0(&a, &initial, t)?;
                            frozen = frozen.max(
                                m.values[0]
                                    .iter()
                                    .zip(&initial.values[0])
                                    .map(|(u, v)| (u - v).norm())
                                    .fold(0.0, f64::max),
                            );
                            m
                        } else {
                            evolve_modes_bnz(&a, &transforms, t, b, &grid)?
                        };
                        let cols: Vec<Column> = idx.iter().map(|&i| columns[i]).collect();
                        let r = reassemble(&modes, model, basis, x, &cols)?;
                        imag = imag.max(r.imag_residue);
                        for (k, &i) in idx.iter().enumerate() {
                            values[i] = r.values[k].clone();
                        }
                    }
                }
            }
            field.push_slice(t, values)?;
        }
    }
    Ok(Solution {
        field,
        kernel: a,
        strategy,
        reassembly,
        mu_grid: grid_used,
        frozen_mode_defect: frozen,
        imag_residue: imag,
        minor_spectrum: spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Kernel;
    use crate::model::SProfile;

    fn two_state_model(l1: f64, l2: f64, r: [f64; 2], b: [f64; 2], c: f64) -> ContinuousModel {
        ContinuousModel::new(
            Kernel::stepwise_forward(&DMatrix::from_row_slice(2, 2, &[-l1, l2, l1, -l2])).unwrap(),
            SProfile::Stepwise(b.to_vec()),
            SProfile::Constant(c),
            SProfile::Stepwise(r.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn transforms_of_the_basic_families() {
        let basis = OrthonormalBasis::haar(2).unwrap();
        let g = forward_transform(&InitialData::uniform_gaussian(), basis).unwrap();
        for mu in [0.0, 0.7, -3.0] {
            assert!((g.eval(0, mu) - C64::new((-mu * mu / 4.0).exp(), 0.0)).norm() < 1e-16);
            assert_eq!(g.eval(1, mu), C64::new(0.0, 0.0));
        }
        let d = forward_transform(&InitialData::uniform_delta(0.0), basis).unwrap();
        assert_eq!(d.eval(0, 5.0), C64::new(1.0, 0.0));
        let d = forward_transform(&InitialData::uniform_delta(2.0), basis).unwrap();
        assert!((d.eval(0, 0.3) - C64::new(0.0, -0.6).exp()).norm() < 1e-16);
    }

    #[test]
    fn two_mode_evolution_matches_the_scalar_solution() {
        let model = two_state_model(1.0, 2.0, [1.0, 1.0], [0.0, 0.0], 0.0);
        let basis = OrthonormalBasis::haar(2).unwrap();
        let a = project_kernel(model.kernel(), basis).unwrap();
        let g = forward_transform(&InitialData::uniform_gaussian(), basis).unwrap();
        let grid = MuGrid::new(10.0, 0.5).unwrap();
        let init = g.tabulate(&grid);
        let t = 0.8;
        let m = evolve_modes_b0(&a, &init, t).unwrap();
        for (j, &mu) in m.mu.iter().enumerate() {
            let expect = (-1.0 / 3.0) * ((-1.5 * t).exp() - 1.0) * (-mu * mu / 4.0).exp();
            assert!((m.values[1][j].re - expect).abs() < 1e-14);
            assert_eq!(m.values[0][j], init.values[0][j]);
        }
        assert!(m.conjugate_symmetry_defect() < 1e-15);
        assert_eq!(evolve_modes_b0(&a, &init, 0.0).unwrap().values, init.values);
    }

    #[test]
    fn characteristic_evolution_matches_duhamel_quadrature() {
        let model = two_state_model(1.0, 2.0, [1.0, 1.0], [-0.5, -0.5], 1.0);
        let basis = OrthonormalBasis::haar(2).unwrap();
        let a = project_kernel(model.kernel(), basis).unwrap();
        let g = forward_transform(&InitialData::stepwise_gaussian(&[5.0, -5.0]), basis).unwrap();
        let grid = MuGrid::new(4.0, 0.25).unwrap();
        let m = evolve_modes_bnz(&a, &g, 1.3, -0.5, &grid).unwrap();
        for (j, &mu) in m.mu.iter().enumerate() {
            let d = duhamel_two_mode(&a, &g, 1.3, -0.5, mu, 1e-12).unwrap();
            assert!((d - m.values[1][j]).norm() < 1e-10, "{mu}: {d} vs {}", m.values[1][j]);
        }
        // The zeroth mode is only transported: a₀(t, 0) = ĝ₀(0).
        let c = m.mu.len() / 2;
        assert!((m.values[0][c] - g.eval(0, 0.0)).norm() <= 1e-12);
        // Point-mass data: a₁ is μ-independent.
        let d = forward_transform(&InitialData::uniform_delta(0.0), basis).unwrap();
        let m = evolve_modes_bnz(&a, &d, 2.0, -1.0, &grid).unwrap();
        let expect = (0.5 / -1.5) * ((-1.5f64 * 2.0).exp() - 1.0);
        assert!(m.values[1].iter().all(|z| (z.re - expect).abs() < 1e-14 && z.im.abs() < 1e-15));
    }

    #[test]
    fn quadrature_and_closed_form_reassembly_agree() {
        let model = two_state_model(1.0, 2.0, [1.0, 1.0], [0.0, 0.0], 1.0);
        let data = InitialData::stepwise_gaussian(&[5.0, -5.0]);
        let x = crate::field::uniform_grid(20.0, 161);
        let cols = cell_midpoints(2);
        let times = [0.0, 1.0, 10.0];
        let closed = solve(&model, &data, &times, &x, &cols, SolveOptions::default()).unwrap();
        let quad = solve(
            &model,
            &data,
            &times,
            &x,
            &cols,
            SolveOptions { reassembly: Reassembly::Quadrature, ..Default::default() },
        )
        .unwrap();
        assert_eq!(quad.frozen_mode_defect, 0.0);
        assert!(quad.imag_residue < 1e-10);
        for (a, b) in closed.field.slices.iter().zip(&quad.field.slices) {
            for (u, v) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        // At t = 0 the data is reproduced.
        let g = |m: f64, x: f64| (-(x - m) * (x - m)).exp() / PI.sqrt();
        for (i, &xv) in x.iter().enumerate() {
            assert!((quad.field.slices[0].values[0][i] - g(5.0, xv)).abs() < 1e-10);
        }
    }

    #[test]
    fn coarse_mu_grids_are_detected() {
        let model = two_state_model(1.0, 2.0, [1.0, 2.0], [0.0, 0.0], 0.0);
        let data = InitialData::uniform_gaussian();
        let x = crate::field::uniform_grid(10.0, 21);
        let r = solve(
            &model,
            &data,
            &[0.0],
            &x,
            &cell_midpoints(2),
            SolveOptions { mu_grid: Some(MuGrid::new(3.0, 0.1).unwrap()), ..Default::default() },
        );
        assert!(matches!(r, Err(Error::MuGridTooCoarse { .. })), "{r:?}");
        let r = solve(
            &model,
            &InitialData::uniform_delta(0.0),
            &[1.0],
            &x,
            &cell_midpoints(2),
            SolveOptions { reassembly: Reassembly::Quadrature, strategy: Strategy::Decoupled, ..Default::default() },
        );
        assert!(matches!(r, Err(Error::NonDecaying(_))), "{r:?}");
    }
}
