//! Discrete (finitely many states) and continuum regime-switching models.
//!
//! `DiscreteModel` stores the rate matrix in generator orientation: `rates[(i, j)]`
//! is the rate of jumping from state i to state j. The forward equation
//! couples densities through its transpose.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::basis::{check_q_property_continuous, Kernel, QPropertyReport, StepKernel};
use crate::error::{Error, Result};
use crate::initial::cell_index;
use crate::mixture::LinearDrift;
use crate::quad::{merge_breaks, uniform_breaks};

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A coefficient as a function of s ∈ [0, 1].
#[derive(Clone)]
pub enum SProfile {
    Constant(f64),
    /// Equal cells, half-open, s = 1 in the last cell.
    Stepwise(Vec<f64>),
    Smooth(ProfileFn),
}

impl fmt::Debug for SProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Stepwise(v) => f.debug_tuple("Stepwise").field(v).finish(),
            Self::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

impl SProfile {
    pub fn smooth(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Smooth(Arc::new(f))
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Stepwise(v) => v[cell_index(s, v.len())],
            Self::Smooth(f) => f(s),
        }
    }

    pub fn breaks(&self) -> Vec<f64> {
        match self {
            Self::Stepwise(v) => uniform_breaks(v.len()),
            _ => vec![0.0, 1.0],
        }
    }

    /// Values on a dense sample grid (all cell values for stepwise profiles).
    fn samples(&self) -> Vec<f64> {
        match self {
            Self::Constant(v) => vec![*v],
            Self::Stepwise(v) => v.clone(),
            Self::Smooth(f) => (0..=1024).map(|i| f(i as f64 / 1024.0)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.samples().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.max().abs().max(self.min().abs())
    }

    /// True when the profile takes a single value on [0, 1].
    pub fn is_uniform(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::Stepwise(v) => v.iter().all(|x| *x == v[0]),
            Self::Smooth(_) => self.min() == self.max(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.is_uniform() && self.max() == 0.0
    }
}

/// Drift and diffusion at one value of s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub slope: f64,
    pub offset: f64,
    pub diffusion: f64,
}

impl Coefficients {
    pub fn drift(&self) -> LinearDrift {
        LinearDrift { slope: self.slope, offset: self.offset }
    }
}

/// p_t = ∫K(s,ξ) p(ξ) dξ − ((b(s)x + c(s)) p)_x + ½ (R²(s) p)_xx.
#[derive(Clone, Debug)]
pub struct ContinuousModel {
    kernel: Kernel,
    slope: SProfile,
    offset: SProfile,
    diffusion: SProfile,
}

impl ContinuousModel {
    /// Rejects kernels without the continuous q-property and non-positive R.
    pub fn new(kernel: Kernel, slope: SProfile, offset: SProfile, diffusion: SProfile) -> Result<Self> {
        check_q_property_continuous(&kernel).into_result()?;
        let rmin = diffusion.min();
        if !(rmin > 0.0) {
            return Err(Error::InvalidModel(format!("diffusion must be positive, min R = {rmin}")));
        }
        for (name, p) in [("b", &slope), ("c", &offset), ("R", &diffusion)] {
            if !p.max().is_finite() || !p.min().is_finite() {
                return Err(Error::InvalidModel(format!("{name} profile is not finite")));
            }
        }
        Ok(Self { kernel, slope, offset, diffusion })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn slope(&self) -> &SProfile {
        &self.slope
    }

    pub fn offset(&self) -> &SProfile {
        &self.offset
    }

    pub fn diffusion(&self) -> &SProfile {
        &self.diffusion
    }

    pub fn coefficients(&self, s: f64) -> Coefficients {
        Coefficients {
            slope: self.slope.eval(s),
            offset: self.offset.eval(s),
            diffusion: self.diffusion.eval(s),
        }
    }

    /// Breakpoints in s of the kernel and all coefficient profiles.
    pub fn strips(&self) -> Vec<f64> {
        merge_breaks(&[
            &self.kernel.breaks(),
            &self.slope.breaks(),
            &self.offset.breaks(),
            &self.diffusion.breaks(),
        ])
    }

    /// b, c and R take the same value for every s.
    pub fn has_uniform_coefficients(&self) -> bool {
        self.slope.is_uniform() && self.offset.is_uniform() && self.diffusion.is_uniform()
    }

    pub fn validate(&self) -> ValidationReport {
        let q = check_q_property_continuous(&self.kernel);
        let mut r = ValidationReport::default();
        push_q_checks(&mut r, &q);
        let (rmin, at) = argmin_profile(&self.diffusion);
        r.push("diffusion R(s) > 0", rmin > 0.0, rmin, Some(format!("s = {at:.4}")));
        r
    }
}

fn argmin_profile(p: &SProfile) -> (f64, f64) {
    match p {
        SProfile::Constant(v) => (*v, 0.0),
        SProfile::Stepwise(v) => {
            let (i, m) = v
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
            (m, (i as f64 + 0.5) / v.len() as f64)
        }
        SProfile::Smooth(f) => (0..=1024)
            .map(|i| (f(i as f64 / 1024.0), i as f64 / 1024.0))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a }),
    }
}

fn push_q_checks(r: &mut ValidationReport, q: &QPropertyReport) {
    r.push(
        "kernel diagonal K(s,s) < 0",
        q.diagonal_ok(),
        q.diagonal_max,
        Some(format!("s = {:.4}", q.diagonal_at)),
    );
    r.push(
        "kernel columns ∫K(s,ξ)ds = 0",
        q.columns_ok(),
        q.column_defect,
        Some(format!("ξ = {:.4}", q.column_at)),
    );
}

/// dx = (b_i x + c_i) dt + σ_i dW in state i, switching with generator `rates`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteModel {
    pub rates: DMatrix<f64>,
    pub slope: Vec<f64>,
    pub offset: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiscreteModel {
    /// Checks shapes only; `validate` reports the q-property.
    pub fn new(rates: DMatrix<f64>, slope: Vec<f64>, offset: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let n = rates.nrows();
        if n == 0 || rates.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "rate matrix must be square and nonempty, got {}×{}",
                rates.nrows(),
                rates.ncols()
            )));
        }
        for (name, v) in [("b", &slope), ("c", &offset), ("sigma", &sigma)] {
            if v.len() != n {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries for {n} states",
                    v.len()
                )));
            }
        }
        Ok(Self { rates, slope, offset, sigma })
    }

    /// From the forward coupling matrix F = Qᵀ (the orientation of the
    /// forward equation: column i lists the rates out of state i).
    /// Generator from nested rows, `rows[i][j]` the rate from i into j.
    pub fn from_rows(rows: &[Vec<f64>], slope: Vec<f64>, offset: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!("rate rows must all have {n} entries")));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]), slope, offset, sigma)
    }

    pub fn from_forward(forward: DMatrix<f64>, slope: Vec<f64>, offset: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        Self::new(forward.transpose(), slope, offset, sigma)
    }

    pub fn states(&self) -> usize {
        self.rates.nrows()
    }

    pub fn forward_matrix(&self) -> DMatrix<f64> {
        self.rates.transpose()
    }

    pub fn coefficients(&self, i: usize) -> Coefficients {
        Coefficients {
            slope: self.slope[i],
            offset: self.offset[i],
            diffusion: self.sigma[i],
        }
    }

    pub fn max_rate(&self) -> f64 {
        (0..self.states()).fold(0.0, |a, i| a.max(self.rates[(i, i)].abs()))
    }

    /// Stationary law of the switching chain (left null vector of Q).
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let n = self.states();
        // Solve Qᵀ π = 0 with the last equation replaced by Σπ = 1.
        let mut a = self.rates.transpose();
        let mut rhs = nalgebra::DVector::zeros(n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        rhs[n - 1] = 1.0;
        a.lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::InvalidRates("switching chain is not irreducible".into()))
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.states();
        let mut r = ValidationReport::default();
        let finite = self.rates.iter().chain(&self.slope).chain(&self.offset).chain(&self.sigma).all(|v| v.is_finite());
        r.push("all entries finite", finite, if finite { 0.0 } else { f64::NAN }, None);

        let mut worst = (0.0f64, None);
        for i in 0..n {
            for j in 0..n {
                if i != j && self.rates[(i, j)] < worst.0 {
                    worst = (self.rates[(i, j)], Some(format!("Q[{i}][{j}]")));
                }
            }
        }
        r.push("off-diagonal rates nonnegative", worst.0 >= 0.0, worst.0, worst.1);

        let scale = self.rates.amax().max(1.0);
        let mut worst = (0.0f64, None);
        for i in 0..n {
            let sum: f64 = self.rates.row(i).sum();
            if sum.abs() > worst.0 {
                worst = (sum.abs(), Some(format!("row {i} of Q (outflow of state {i})")));
            }
        }
        r.push("rates out of each state sum to zero", worst.0 <= 1e-12 * scale, worst.0, worst.1);

        let (i, m) = self
            .sigma
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
        r.push("sigma positive", m > 0.0, m, Some(format!("state {i}")));
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Magnitude of the worst violation (or the tightest margin when passing).
    pub worst: f64,
    pub location: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: &'static str, passed: bool, worst: f64, location: Option<String>) {
        self.checks.push(Check { name, passed, worst, location });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{} {}: {:.3e}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.worst)?;
            if let Some(l) = &c.location {
                write!(f, " at {l}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Stepwise embedding: K(s, ξ) = q_ij (rate from i into j) for s in cell j
/// and ξ in cell i; b, c, R stepwise on the same cells.
pub fn discrete_to_continuous(dm: &DiscreteModel) -> Result<ContinuousModel> {
    let report = dm.validate();
    if !report.passed() {
        return Err(Error::InvalidRates(report.to_string()));
    }
    ContinuousModel::new(
        Kernel::Stepwise(StepKernel::from_forward(&dm.forward_matrix())?),
        SProfile::Stepwise(dm.slope.clone()),
        SProfile::Stepwise(dm.offset.clone()),
        SProfile::Stepwise(dm.sigma.clone()),
    )
}

/// Midpoint sampling q_ij = K((j+½)/M, (i+½)/M) of a continuum model.
pub fn continuous_to_discrete(cm: &ContinuousModel, states: usize) -> Result<DiscreteModel> {
    if states < 2 {
        return Err(Error::Precondition(format!("need at least 2 states, got {states}")));
    }
    let mid = |i: usize| (i as f64 + 0.5) / states as f64;
    let forward = DMatrix::from_fn(states, states, |j, i| cm.kernel.eval(mid(j), mid(i)));
    let sample = |p: &SProfile| (0..states).map(|i| p.eval(mid(i))).collect();
    DiscreteModel::from_forward(forward, sample(&cm.slope), sample(&cm.offset), sample(&cm.diffusion))
}

/// The finite system whose state densities are the cell masses of the
/// continuum solution when `cm` is stepwise on `states` equal cells.
///
/// Mass on a cell of width h receives ∫K dξ over a source cell, i.e. rate
/// times h, so the rates are the midpoint samples scaled by 1/`states`.
pub fn equivalent_discrete(cm: &ContinuousModel, states: usize) -> Result<DiscreteModel> {
    let mut dm = continuous_to_discrete(cm, states)?;
    dm.rates /= states as f64;
    Ok(dm)
}
