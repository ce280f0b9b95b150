//! Explicit solutions for the two-cell and four-cell models.
//!
//! All Galerkin coefficients are taken from `project_kernel`; none are
//! hard-coded. Coefficients b, c, R are read at the s of evaluation, so for
//! models whose coefficients differ between cells these formulas are the
//! decoupled approximation described in `spectral`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::basis::{project_kernel, BasisKind, Kernel, KernelMatrix, OrthonormalBasis};
use crate::error::{Error, Result};
use crate::field::{Column, DensityField};
use crate::initial::{cell_index, InitialData};
use crate::model::{discrete_to_continuous, Coefficients, ContinuousModel, DiscreteModel, SProfile};
use crate::quad::gauss_kronrod;
use crate::spectral::{solve, MuGrid, Reassembly, SolveOptions, Strategy};

/// Two cells [0, ½) and [½, 1]: rate λ₁ out of the first, λ₂ out of the
/// second; b and R per cell, c shared; m the initial centres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStateParams {
    pub lambda: [f64; 2],
    pub r: [f64; 2],
    pub b: [f64; 2],
    pub c: f64,
    pub m: [f64; 2],
}

impl TwoStateParams {
    /// λ = (1, 2), R = (1, 2), m = (5, −5), b = (−0.5, −1), c = 1.
    pub fn reference() -> Self {
        Self {
            lambda: [1.0, 2.0],
            r: [1.0, 2.0],
            b: [-0.5, -1.0],
            c: 1.0,
            m: [5.0, -5.0],
        }
    }

    pub fn without_slope(self) -> Self {
        Self { b: [0.0; 2], ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.iter().all(|l| *l > 0.0) && self.r.iter().all(|r| *r > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "rates and diffusions must be positive: λ = {:?}, R = {:?}",
                self.lambda, self.r
            )));
        }
        Ok(())
    }

    /// Generator [[−λ₁, λ₁], [λ₂, −λ₂]] with the per-cell coefficients.
    pub fn discrete_model(&self) -> Result<DiscreteModel> {
        self.validate()?;
        let [l1, l2] = self.lambda;
        DiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[-l1, l1, l2, -l2]),
            self.b.to_vec(),
            vec![self.c; 2],
            self.r.to_vec(),
        )
    }

    pub fn continuous_model(&self) -> Result<ContinuousModel> {
        discrete_to_continuous(&self.discrete_model()?)
    }

    pub fn kernel_matrix(&self, kind: BasisKind) -> Result<KernelMatrix> {
        project_kernel(self.continuous_model()?.kernel(), OrthonormalBasis::new(kind, 2)?)
    }

    pub fn coefficients(&self, s: f64) -> Coefficients {
        let i = cell_index(s, 2);
        Coefficients { slope: self.b[i], offset: self.c, diffusion: self.r[i] }
    }

    pub fn stepwise_gaussian_data(&self) -> InitialData {
        InitialData::stepwise_gaussian(&self.m)
    }

    pub fn stepwise_delta_data(&self) -> InitialData {
        InitialData::stepwise_delta(&self.m)
    }
}

/// (A₁₀/A₁₁)(e^{A₁₁t} − 1): the mode-1 response to a unit mode-0 source.
fn kappa(a: &KernelMatrix, t: f64) -> f64 {
    let (a10, a11) = (a.get(1, 0), a.get(1, 1));
    a10 * (a11 * t).exp_m1() / a11
}

/// e^{−(x−m)²/D} / √(πD): a normal density of variance D/2.
fn gauss(x: f64, m: f64, d: f64) -> f64 {
    (-(x - m) * (x - m) / d).exp() / (PI * d).sqrt()
}

/// Twice the variance and the centre reached from a point at `m` after `t`
/// under dx = (bx + c)dt + R dW.
fn spread_and_centre(c: Coefficients, m: f64, t: f64) -> (f64, f64) {
    if c.slope == 0.0 {
        (2.0 * c.diffusion * c.diffusion * t, m + c.offset * t)
    } else {
        let g = (c.slope * t).exp();
        (
            c.diffusion * c.diffusion * (2.0 * c.slope * t).exp_m1() / c.slope,
            m * g + c.offset * (c.slope * t).exp_m1() / c.slope,
        )
    }
}

fn require_negative_slope(c: Coefficients) -> Result<()> {
    if c.slope < 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("needs b(s) < 0, got {}", c.slope)))
    }
}

fn require_zero_slope(p: &TwoStateParams) -> Result<()> {
    if p.b == [0.0; 2] {
        Ok(())
    } else {
        Err(Error::Precondition(format!("needs b = 0, got {:?}", p.b)))
    }
}

/// Uniform data e^{−x²}/√π, b = 0:
/// p = [1 + κ(t) X₁(s)] e^{−(x−ct)²/(1+2R²t)} / √(π(1+2R²t)).
pub fn uniform_gaussian_b0(p: &TwoStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    require_zero_slope(p)?;
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let c = p.coefficients(s);
    let (w, centre) = spread_and_centre(c, 0.0, t);
    Ok((1.0 + kappa(&a, t) * a.basis.value(1, s)) * gauss(x, centre, 1.0 + w))
}

/// The mode-0 profile B₀ for uniform e^{−x²}/√π data and b < 0: a normal
/// density with D = W_t + e^{2bt}, W_t = −(R²/b)(1 − e^{2bt}).
fn uniform_b0_profile(c: Coefficients, t: f64, x: f64) -> f64 {
    let (w, centre) = spread_and_centre(c, 0.0, t);
    gauss(x, centre, w + (2.0 * c.slope * t).exp())
}

/// J(η) of the B₁ representation, with σ = sign b.
pub fn j_integrand(c: Coefficients, eta: f64, t: f64, x: f64) -> f64 {
    let sigma = c.slope.signum();
    let (w, centre) = spread_and_centre(c, 0.0, t);
    let d = w + (-2.0 * sigma * (eta - t)).exp();
    (-(x - centre) * (x - centre) / d).exp() / d.sqrt()
}

/// Pointwise envelopes (J₁, J₂) of J(η) over η ∈ [0, t] for σ = −1.
pub fn j_bounds(c: Coefficients, t: f64, x: f64) -> (f64, f64) {
    let (w, centre) = spread_and_centre(c, 0.0, t);
    let y2 = (x - centre) * (x - centre);
    let small = w + (-2.0 * t).exp();
    let large = w + 1.0;
    ((-y2 / small).exp() / large.sqrt(), (-y2 / large).exp() / small.sqrt())
}

/// B₁ = (A₁₀/√π) ∫₀ᵗ e^{A₁₁(t−η)} J(η) dη by adaptive quadrature.
pub fn b1_integral(p: &TwoStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let c = p.coefficients(s);
    let (a10, a11) = (a.get(1, 0), a.get(1, 1));
    let v = gauss_kronrod(|eta| (a11 * (t - eta)).exp() * j_integrand(c, eta, t, x), 0.0, t, 1e-12)?;
    Ok(a10 * v / PI.sqrt())
}

/// Sandwich bounds for uniform Gaussian data with b < 0:
/// B₀ + X₁(s) κ(t) [J₁, J₂]/√π, ordered.
pub fn uniform_gaussian_bneg_bounds(p: &TwoStateParams, t: f64, x: f64, s: f64) -> Result<(f64, f64)> {
    let c = p.coefficients(s);
    require_negative_slope(c)?;
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let b0 = uniform_b0_profile(c, t, x);
    let (j1, j2) = j_bounds(c, t, x);
    let k = kappa(&a, t) * a.basis.value(1, s) / PI.sqrt();
    let (u, v) = (b0 + k * j1, b0 + k * j2);
    Ok((u.min(v), u.max(v)))
}

/// Point mass at 0 at every s, b < 0:
/// p = [1 + κ(t) X₁(s)] e^{−y²/W_t}/√(πW_t), y = x + (c/b)(1 − e^{bt}).
pub fn delta_bneg(p: &TwoStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Precondition("point-mass data is only sampled at t > 0".into()));
    }
    let c = p.coefficients(s);
    require_negative_slope(c)?;
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let (w, centre) = spread_and_centre(c, 0.0, t);
    Ok((1.0 + kappa(&a, t) * a.basis.value(1, s)) * gauss(x, centre, w))
}

/// Two-mode solution B₀ + (e^{A₁₁t}B₁ + κ(t)B₀) X₁(s) for stepwise Gaussian
/// data and b = 0. Exact for Haar; a truncation for the cosine basis.
pub fn stepwise_gaussian_b0(p: &TwoStateParams, kind: BasisKind, t: f64, x: f64, s: f64) -> Result<f64> {
    require_zero_slope(p)?;
    let a = p.kernel_matrix(kind)?;
    let c = p.coefficients(s);
    let (w, _) = spread_and_centre(c, 0.0, t);
    let g = |m: f64| gauss(x, m + c.offset * t, 1.0 + w);
    // g₀ = ½(G₁ + G₂), g₁ = (∫₀^½ X₁)(G₁ − G₂).
    let i1 = a.basis.cell_integral(1, 0.0, 0.5);
    let b0 = 0.5 * (g(p.m[0]) + g(p.m[1]));
    let b1 = i1 * (g(p.m[0]) - g(p.m[1]));
    Ok(two_mode(&a, t, b0, b1, s))
}

fn two_mode(a: &KernelMatrix, t: f64, b0: f64, b1: f64, s: f64) -> f64 {
    b0 + ((a.get(1, 1) * t).exp() * b1 + kappa(a, t) * b0) * a.basis.value(1, s)
}

/// Stepwise point masses at m₁, m₂ with b₁, b₂ < 0: the two-mode Haar
/// solution with B₀, B₁ = ½(N₁ ± N₂), N_i the transition density from m_i.
pub fn stepwise_delta_bneg(p: &TwoStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Precondition("point-mass data is only sampled at t > 0".into()));
    }
    if !(p.b[0] < 0.0 && p.b[1] < 0.0) {
        return Err(Error::Precondition(format!("needs b₁, b₂ < 0, got {:?}", p.b)));
    }
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let c = p.coefficients(s);
    let n = |m: f64| {
        let (w, centre) = spread_and_centre(c, m, t);
        gauss(x, centre, w)
    };
    let (n1, n2) = (n(p.m[0]), n(p.m[1]));
    Ok(two_mode(&a, t, 0.5 * (n1 + n2), 0.5 * (n1 - n2), s))
}

/// Long-time envelopes for b < 0: B₀* + X₁(s) κ* [Q₋*, Q₊*], κ* = −A₁₀/A₁₁,
/// with W = −R²/b, B₀* = e^{−y²/W}/√(πW), Q₋* = e^{−y²/W}/√(π(W+1)),
/// Q₊* = e^{−y²/(W+1)}/√(πW).
pub fn steady_state_bounds(p: &TwoStateParams, x: f64, s: f64) -> Result<(f64, f64)> {
    let c = p.coefficients(s);
    require_negative_slope(c)?;
    let a = p.kernel_matrix(BasisKind::Haar)?;
    let w = -c.diffusion * c.diffusion / c.slope;
    let y = x + c.offset / c.slope;
    let b0 = (-y * y / w).exp() / (PI * w).sqrt();
    let q_minus = (-y * y / w).exp() / (PI * (w + 1.0)).sqrt();
    let q_plus = (-y * y / (w + 1.0)).exp() / (PI * w).sqrt();
    let k = -a.get(1, 0) / a.get(1, 1) * a.basis.value(1, s);
    let (u, v) = (b0 + k * q_minus, b0 + k * q_plus);
    Ok((u.min(v), u.max(v)))
}

/// Four cells with R² = (r₀², r₀(2−r₀), r₀(2−r₀), (2−r₀)²), b = c = 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourStateParams {
    pub lambda: [f64; 2],
    pub r0: f64,
    pub m: [f64; 4],
}

impl FourStateParams {
    /// λ = (0.4, 0.2), r₀ = 1.7, m = (−10, 1, −5, 10).
    pub fn reference() -> Self {
        Self { lambda: [0.4, 0.2], r0: 1.7, m: [-10.0, 1.0, -5.0, 10.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0 < 2.0 && self.lambda.iter().all(|l| *l > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "needs 0 < r0 < 2 and positive rates, got r0 = {}, λ = {:?}",
                self.r0, self.lambda
            )));
        }
        Ok(())
    }

    pub fn diffusion(&self) -> [f64; 4] {
        let r = self.r0;
        [r, (r * (2.0 - r)).sqrt(), (r * (2.0 - r)).sqrt(), 2.0 - r]
    }

    /// Forward matrix F[j][i] (rate from i into j) of the hierarchical chain.
    pub fn forward_matrix(&self) -> DMatrix<f64> {
        let [l1, l2] = self.lambda;
        let d = -(l1 + l2);
        DMatrix::from_row_slice(
            4,
            4,
            &[d, l1, l2, 0.0, l2, d, 0.0, l1, l1, 0.0, d, l2, 0.0, l2, l1, d],
        )
    }

    pub fn discrete_model(&self) -> Result<DiscreteModel> {
        self.validate()?;
        DiscreteModel::from_forward(self.forward_matrix(), vec![0.0; 4], vec![0.0; 4], self.diffusion().to_vec())
    }

    pub fn continuous_model(&self) -> Result<ContinuousModel> {
        self.validate()?;
        ContinuousModel::new(
            Kernel::stepwise_forward(&self.forward_matrix())?,
            SProfile::Constant(0.0),
            SProfile::Constant(0.0),
            SProfile::Stepwise(self.diffusion().to_vec()),
        )
    }

    pub fn initial_data(&self) -> InitialData {
        InitialData::stepwise_gaussian(&self.m)
    }
}

/// Haar coefficients A_nm of the four-cell kernel.
pub fn four_state_a(lambda1: f64, lambda2: f64) -> Result<DMatrix<f64>> {
    let p = FourStateParams { lambda: [lambda1, lambda2], ..FourStateParams::reference() };
    Ok(project_kernel(p.continuous_model()?.kernel(), OrthonormalBasis::haar(4)?)?.matrix)
}

/// Four-cell densities on an (x, s) grid: modes evolved by e^{(A − ½μ²𝓡)t}
/// and inverted by μ-quadrature. Exact up to the quadrature error.
pub fn four_state_field(
    p: &FourStateParams,
    times: &[f64],
    x: &[f64],
    columns: &[Column],
    mu_grid: Option<MuGrid>,
) -> Result<DensityField> {
    let opts = SolveOptions {
        basis: BasisKind::Haar,
        modes: Some(4),
        strategy: Strategy::Coupled,
        reassembly: Reassembly::Quadrature,
        mu_grid,
    };
    Ok(solve(&p.continuous_model()?, &p.initial_data(), times, x, columns, opts)?.field)
}

/// p(t, x, s) of the four-cell model.
pub fn four_state_solution(p: &FourStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Precondition(format!("negative time {t}")));
    }
    let f = four_state_field(p, &[t], &[x], &[Column::s(s, 1.0)], None)?;
    Ok(f.slices[0].values[0][0])
}

/// A trigonometric B₀ + B₁H₁ + B₂H₂ + B₃H₃ representation, kept for
/// comparison with `four_state_solution`.
/// It does not reproduce the initial data in modes 2 and 3 and grows
/// exponentially in those modes.
pub fn four_state_trigonometric(p: &FourStateParams, t: f64, x: f64, s: f64) -> Result<f64> {
    p.validate()?;
    let basis = OrthonormalBasis::haar(4)?;
    let r = p.diffusion()[cell_index(s, 4)];
    let d = 1.0 + 2.0 * t * r * r;
    let e = |m: f64| (-(x - m) * (x - m) / d).exp();
    let [e0, e1, e2, e3] = p.m.map(e);
    let norm = (PI * d).sqrt();
    let b0 = (e0 + e1 + e2 + e3) / (4.0 * norm);
    let a1 = (e0 + e1 - e2 - e3) / (4.0 * norm);
    let a2 = (e0 - e1) / (2.0 * 2f64.sqrt() * norm);
    let a3 = (e2 - e3) / (2.0 * 2f64.sqrt() * norm);
    let l = p.lambda[0] + p.lambda[1];
    let w = (p.lambda[1] - p.lambda[0]) / 4.0 * t;
    let b1 = std::f64::consts::FRAC_1_SQRT_2
        * (-l / 4.0 * t).exp()
        * (2f64.sqrt() * a1 * w.cos() + (a2 + a3) * w.sin());
    let common = -0.5 * a1 * (l / 4.0 * t).exp() * w.sin() + 0.5 * (a2 - a3) * (l / 4.0 * t).exp() * w.cos();
    let b2 = 0.5 * (a2 - a3) * (l / 2.0 * t).exp() + common;
    let b3 = -0.5 * (a2 - a3) * (l / 2.0 * t).exp() + common;
    Ok(b0 + b1 * basis.value(1, s) + b2 * basis.value(2, s) + b3 * basis.value(3, s))
}
