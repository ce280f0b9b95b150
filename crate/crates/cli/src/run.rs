//! Scenario resolution and solver dispatch.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use switchdiff::closed_form::{self, TwoStateParams};
use switchdiff::field::{uniform_grid, BoundsField, Column, ColumnKind};
use switchdiff::oracle::{
    compare, default_half_width, estimate_density, fd_solve, mc_simulate, CompareReport, DensityEstimator, FdGrid,
    Norm,
};
use switchdiff::spectral::{cell_midpoints, minor_spectrum, solve, MuGrid, Reassembly, SolveOptions, Strategy};
use switchdiff::{
    check_q_property_continuous, discrete_to_continuous, equivalent_discrete, project_kernel, BasisKind,
    ContinuousModel, DensityField, DiscreteModel, Error, InitialData, Mixture, OrthonormalBasis,
};

use crate::config::{BasisName, Config, EstimatorName, Family, McSpec, SolverKind};

/// Exit status plus message. 1: invalid input or failed validation,
/// 2: numerical tolerance or stability failure, 3: I/O or parse error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn tolerance(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Grid(_) => 3,
            Error::Quadrature { .. }
            | Error::ExpOverflow { .. }
            | Error::MuGridTooCoarse { .. }
            | Error::NonDecaying(_)
            | Error::Cfl { .. }
            | Error::BoundaryLeak { .. }
            | Error::UnstablePaths(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const DEFAULT_NX: usize = 801;
pub const DEFAULT_FD_DX: f64 = 0.05;
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_BINS: usize = 400;

/// A fully resolved run: model, data, times and solver settings.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: Config,
    pub solver: SolverKind,
    pub times: Vec<f64>,
    pub seed: u64,
    /// Stepwise kernel values; row i holds the rates out of cell i.
    pub model: DiscreteModel,
    pub family: Family,
    pub data: InitialData,
}

impl Scenario {
    pub fn from_config(config: Config) -> CliResult<Self> {
        let spec = config.model.clone().ok_or_else(|| CliError::invalid("no [model] given (use a preset or a config)"))?;
        let m = spec.rates.len();
        if m == 0 || spec.rates.iter().any(|r| r.len() != m) {
            return Err(CliError::invalid(format!("model.rates must be square, got {m} rows")));
        }
        let per_state = |name: &str, v: Option<Vec<f64>>| -> CliResult<Vec<f64>> {
            let v = v.unwrap_or_else(|| vec![0.0; m]);
            if v.len() != m {
                return Err(CliError::invalid(format!("model.{name} has {} entries for {m} states", v.len())));
            }
            Ok(v)
        };
        let slope = per_state("slope", spec.slope)?;
        let offset = per_state("offset", spec.offset)?;
        let sigma = per_state("sigma", Some(spec.sigma))?;
        let model = DiscreteModel::from_rows(&spec.rates, slope, offset, sigma)?;

        let init = config.initial.clone().ok_or_else(|| CliError::invalid("no [initial] given"))?;
        let data = match init.family {
            Family::UniformGaussian => {
                if !init.means.is_empty() {
                    return Err(CliError::invalid("initial.means is not used by uniform_gaussian"));
                }
                InitialData::uniform_gaussian()
            }
            Family::UniformDelta => match init.means.as_slice() {
                [m] => InitialData::uniform_delta(*m),
                [] => InitialData::uniform_delta(0.0),
                _ => return Err(CliError::invalid("uniform_delta takes one mean")),
            },
            Family::StepwiseGaussian | Family::StepwiseDelta => {
                if init.means.is_empty() || m % init.means.len() != 0 {
                    return Err(CliError::invalid(format!(
                        "initial.means has {} entries; it must divide the {m} states",
                        init.means.len()
                    )));
                }
                if init.family == Family::StepwiseGaussian {
                    InitialData::stepwise_gaussian(&init.means)
                } else {
                    InitialData::stepwise_delta(&init.means)
                }
            }
        };

        let times = config.times.clone().ok_or_else(|| CliError::invalid("no times given"))?;
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || !(times[0] >= 0.0) {
            return Err(CliError::invalid(format!("times must be nonnegative and strictly ascending: {times:?}")));
        }
        Ok(Self {
            solver: config.solver.unwrap_or(SolverKind::Spectral),
            seed: config.seed.unwrap_or(0),
            times,
            model,
            family: init.family,
            data,
            config,
        })
    }

    pub fn states(&self) -> usize {
        self.model.states()
    }

    pub fn continuous(&self) -> CliResult<ContinuousModel> {
        Ok(discrete_to_continuous(&self.model)?)
    }

    /// Finite chain whose state densities are the cell masses.
    pub fn chain(&self) -> CliResult<DiscreteModel> {
        Ok(equivalent_discrete(&self.continuous()?, self.states())?)
    }

    fn state_data(&self) -> CliResult<Vec<Mixture>> {
        Ok(self.data.state_mixtures_on(self.states())?)
    }

    fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn half_width(&self) -> CliResult<f64> {
        match self.config.grid.half_width {
            Some(l) if l > 0.0 => Ok(l),
            Some(l) => Err(CliError::invalid(format!("grid.half_width must be positive, got {l}"))),
            None => Ok(default_half_width(&self.chain()?, &self.state_data()?, self.t_end())),
        }
    }

    pub fn columns(&self) -> CliResult<Vec<Column>> {
        match &self.config.grid.s {
            Some(s) if !s.is_empty() => {
                if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(CliError::invalid(format!("grid.s must lie in [0, 1]: {s:?}")));
                }
                Ok(s.iter().map(|&v| Column::s(v, 1.0 / s.len() as f64)).collect())
            }
            _ => Ok(cell_midpoints(self.states())),
        }
    }

    fn output_grid(&self) -> CliResult<Vec<f64>> {
        let nx = self.config.grid.nx.unwrap_or(DEFAULT_NX);
        if nx < 2 {
            return Err(CliError::invalid("grid.nx must be at least 2"));
        }
        Ok(uniform_grid(self.half_width()?, nx))
    }
}

#[derive(Clone, Debug)]
pub enum Output {
    Field(DensityField),
    Bounds(BoundsField),
}

impl Output {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        match self {
            Self::Field(f) => f.write_csv(w),
            Self::Bounds(b) => b.write_csv(w),
        }
    }

    pub fn field(&self) -> CliResult<&DensityField> {
        match self {
            Self::Field(f) => Ok(f),
            Self::Bounds(_) => Err(CliError::invalid("this closed form yields bounds, not a density")),
        }
    }
}

/// Reproducibility record written next to Monte Carlo output.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub n_paths: usize,
    pub dt_sde: f64,
    pub save_times: Vec<f64>,
    pub states: usize,
}

pub struct Run {
    pub output: Output,
    pub meta: Option<EnsembleMeta>,
    /// Finite-difference spacing, when the finite-difference solver ran.
    pub fd_dx: Option<f64>,
}

pub fn run_solver(sc: &Scenario, kind: SolverKind, x: Option<&[f64]>) -> CliResult<Run> {
    let plain = |output| Run { output, meta: None, fd_dx: None };
    match kind {
        SolverKind::Spectral => {
            let x = match x {
                Some(x) => x.to_vec(),
                None => sc.output_grid()?,
            };
            Ok(plain(Output::Field(spectral(sc, &x)?)))
        }
        SolverKind::ClosedForm => {
            let x = match x {
                Some(x) => x.to_vec(),
                None => sc.output_grid()?,
            };
            Ok(plain(closed(sc, &x)?))
        }
        SolverKind::Fd => {
            let (field, dx) = finite_differences(sc)?;
            Ok(Run { output: Output::Field(field), meta: None, fd_dx: Some(dx) })
        }
        SolverKind::Mc => {
            let (field, meta) = monte_carlo(sc)?;
            Ok(Run { output: Output::Field(field), meta: Some(meta), fd_dx: None })
        }
    }
}

fn spectral(sc: &Scenario, x: &[f64]) -> CliResult<DensityField> {
    let sp = &sc.config.spectral;
    let basis = match sp.basis {
        Some(BasisName::Cosine) => BasisKind::Cosine,
        _ => BasisKind::Haar,
    };
    let mu_grid = match sp.mu_max {
        Some(mu) => {
            let ext = x.iter().fold(sc.half_width()?, |a, v| a.max(v.abs()));
            Some(MuGrid::new(mu, sp.mu_step.unwrap_or(PI / (2.0 * ext)))?)
        }
        None => None,
    };
    let opts = SolveOptions {
        basis,
        modes: sp.modes,
        strategy: Strategy::Auto,
        reassembly: if sp.quadrature == Some(true) || mu_grid.is_some() {
            Reassembly::Quadrature
        } else {
            Reassembly::Auto
        },
        mu_grid,
    };
    let sol = solve(&sc.continuous()?, &sc.data, &sc.times, x, &sc.columns()?, opts)?;
    Ok(sol.field)
}

/// Two-cell parameters when the model has the two-state form with one c.
fn two_state_params(sc: &Scenario) -> CliResult<TwoStateParams> {
    let m = &sc.model;
    if m.states() != 2 || m.offset[0] != m.offset[1] {
        return Err(CliError::invalid("the two-state closed forms need 2 cells sharing one offset c"));
    }
    let means = match &sc.data {
        InitialData::Stepwise(c) if c.len() == 2 => sc.config.initial.as_ref().map_or([0.0; 2], |i| [i.means[0], i.means[1]]),
        _ => [0.0; 2],
    };
    let p = TwoStateParams {
        lambda: [m.rates[(0, 1)], m.rates[(1, 0)]],
        r: [m.sigma[0], m.sigma[1]],
        b: [m.slope[0], m.slope[1]],
        c: m.offset[0],
        m: means,
    };
    p.validate()?;
    Ok(p)
}

fn column_s(columns: &[Column]) -> Vec<f64> {
    columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::S(s) => s,
            ColumnKind::State(_) => unreachable!("scenario columns are s-samples"),
        })
        .collect()
}

fn closed(sc: &Scenario, x: &[f64]) -> CliResult<Output> {
    let columns = sc.columns()?;
    let s = column_s(&columns);
    let zero_slope = sc.model.slope.iter().all(|b| *b == 0.0);
    let negative_slope = sc.model.slope.iter().all(|b| *b < 0.0);

    if sc.states() == 4 && sc.family == Family::StepwiseGaussian && zero_slope {
        // Four cells: matrix exponential of the Haar-projected system.
        let opts = SolveOptions {
            basis: BasisKind::Haar,
            modes: Some(4),
            strategy: Strategy::Coupled,
            reassembly: Reassembly::Quadrature,
            mu_grid: None,
        };
        return Ok(Output::Field(solve(&sc.continuous()?, &sc.data, &sc.times, x, &columns, opts)?.field));
    }

    let p = two_state_params(sc)?;
    let pointwise = |f: &dyn Fn(f64, f64, f64) -> switchdiff::Result<f64>| -> CliResult<Output> {
        let mut field = DensityField::new(x.to_vec(), columns.clone());
        for &t in &sc.times {
            let values = s
                .iter()
                .map(|&sv| x.iter().map(|&xv| f(t, xv, sv)).collect::<switchdiff::Result<Vec<f64>>>())
                .collect::<switchdiff::Result<Vec<_>>>()?;
            field.push_slice(t, values)?;
        }
        Ok(Output::Field(field))
    };
    match (sc.family, zero_slope, negative_slope) {
        (Family::UniformGaussian, true, _) => pointwise(&|t, xv, sv| closed_form::uniform_gaussian_b0(&p, t, xv, sv)),
        (Family::StepwiseGaussian, true, _) => {
            pointwise(&|t, xv, sv| closed_form::stepwise_gaussian_b0(&p, BasisKind::Haar, t, xv, sv))
        }
        (Family::StepwiseDelta, _, true) => pointwise(&|t, xv, sv| closed_form::stepwise_delta_bneg(&p, t, xv, sv)),
        (Family::UniformDelta, _, true) => {
            let mean = sc.config.initial.as_ref().and_then(|i| i.means.first().copied()).unwrap_or(0.0);
            if mean != 0.0 {
                return Err(CliError::invalid("the uniform point-mass closed form starts at x = 0"));
            }
            pointwise(&|t, xv, sv| closed_form::delta_bneg(&p, t, xv, sv))
        }
        (Family::UniformGaussian, _, true) => {
            let mut bounds = BoundsField { x: x.to_vec(), s: s.clone(), slices: Vec::new() };
            for &t in &sc.times {
                let mut lo = vec![vec![0.0; x.len()]; s.len()];
                let mut hi = lo.clone();
                for (k, &sv) in s.iter().enumerate() {
                    for (i, &xv) in x.iter().enumerate() {
                        (lo[k][i], hi[k][i]) = closed_form::uniform_gaussian_bneg_bounds(&p, t, xv, sv)?;
                    }
                }
                bounds.slices.push((t, lo, hi));
            }
            Ok(Output::Bounds(bounds))
        }
        _ => Err(CliError::invalid(format!(
            "no closed form for {:?} data with slopes {:?}",
            sc.family, sc.model.slope
        ))),
    }
}

fn finite_differences(sc: &Scenario) -> CliResult<(DensityField, f64)> {
    let chain = sc.chain()?;
    let l = sc.half_width()?;
    let grid = match sc.config.grid.nx {
        Some(nx) => {
            let mut g = FdGrid { half_width: l, nx, dt: 1.0 };
            let (diff, adv) = g.cfl_bounds(&chain);
            g.dt = 0.9 * diff.min(adv);
            g
        }
        None => FdGrid::with_spacing(&chain, l, sc.config.grid.dx.unwrap_or(DEFAULT_FD_DX)),
    };
    let field = fd_solve(&chain, &sc.state_data()?, grid, &sc.times)?;
    Ok((field, grid.dx()))
}

fn monte_carlo(sc: &Scenario) -> CliResult<(DensityField, EnsembleMeta)> {
    let chain = sc.chain()?;
    let McSpec { paths, dt, estimator, bandwidth } = sc.config.mc.clone();
    let paths = paths.unwrap_or(DEFAULT_PATHS);
    let rate = chain.max_rate();
    let dt = dt.unwrap_or(if rate > 0.0 { (0.1 / rate).min(0.01) } else { 0.01 });
    let ens = mc_simulate(&chain, &sc.state_data()?, paths, &sc.times, dt, sc.seed)?;
    let l = sc.half_width()?;
    let est = match estimator.unwrap_or(EstimatorName::Histogram) {
        EstimatorName::Histogram => {
            DensityEstimator::Histogram { lo: -l, hi: l, bins: sc.config.grid.nx.unwrap_or(DEFAULT_BINS) }
        }
        EstimatorName::Kernel => DensityEstimator::Kernel {
            x: sc.output_grid()?,
            bandwidth: bandwidth.unwrap_or(0.1),
        },
    };
    let field = estimate_density(&ens, &est)?;
    let meta = EnsembleMeta { seed: sc.seed, n_paths: paths, dt_sde: dt, save_times: sc.times.clone(), states: chain.states() };
    Ok((field, meta))
}

pub fn write_output(run: &Run, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            run.output.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(e.to_string()))?;
            if let Some(meta) = &run.meta {
                let p = meta_path(path);
                let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::io(e.to_string()))?;
                std::fs::write(&p, text + "\n").map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = std::io::BufWriter::new(stdout.lock());
            run.output.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(e.to_string()))?;
            if let Some(meta) = &run.meta {
                eprintln!("ensemble_meta {}", serde_json::to_string(meta).map_err(|e| CliError::io(e.to_string()))?);
            }
        }
    }
    Ok(())
}

/// `out.csv` → `out.ensemble_meta.json`.
pub fn meta_path(out: &Path) -> PathBuf {
    out.with_extension("ensemble_meta.json")
}

pub struct Comparison {
    pub report: CompareReport,
    pub tolerance: Option<f64>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.tolerance.is_none_or(|t| self.report.max() <= t)
    }
}

/// Runs two solvers on one scenario. A finite-difference side fixes the
/// x-grid of the other side and the default tolerance 5Δx².
pub fn run_compare(sc: &Scenario, a: SolverKind, b: SolverKind, norm: Norm, tolerance: Option<f64>) -> CliResult<Comparison> {
    let (ra, rb) = if b == SolverKind::Fd && a != SolverKind::Fd {
        let rb = run_solver(sc, b, None)?;
        let x = rb.output.field()?.x.clone();
        (run_solver(sc, a, Some(&x))?, rb)
    } else {
        let ra = run_solver(sc, a, None)?;
        let x = (a == SolverKind::Fd).then(|| ra.output.field().map(|f| f.x.clone())).transpose()?;
        (ra, run_solver(sc, b, x.as_deref())?)
    };
    let report = compare(ra.output.field()?, rb.output.field()?, norm)?;
    let dx = ra.fd_dx.or(rb.fd_dx);
    Ok(Comparison { report, tolerance: tolerance.or(dx.map(|d| 5.0 * d * d)) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Rates, q-property, spectrum, data and time checks, in that order. Later
/// checks are skipped when the rates are invalid.
pub fn validate(sc: &Scenario) -> Vec<Finding> {
    let mut out = Vec::new();
    let report = sc.model.validate();
    for c in &report.checks {
        let at = c.location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default();
        out.push(Finding { name: c.name.to_owned(), passed: c.passed, detail: format!("worst {:.6e}{at}", c.worst) });
    }
    if !report.passed() {
        return out;
    }
    match sc.continuous() {
        Ok(cm) => {
            let q = check_q_property_continuous(cm.kernel());
            out.push(Finding { name: "continuous q-property".into(), passed: q.passed(), detail: q.to_string().trim().to_owned() });
            let m = sc.states();
            let basis = if m.is_power_of_two() { OrthonormalBasis::haar(m) } else { OrthonormalBasis::cosine(16) };
            match basis.map_err(CliError::from).and_then(|b| project_kernel(cm.kernel(), b).map_err(CliError::from)) {
                Ok(a) => {
                    let re = minor_spectrum(&a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                    let scale = a.matrix.amax().max(1.0);
                    out.push(Finding {
                        name: "minor spectrum in the left half-plane".into(),
                        passed: re <= 1e-10 * scale,
                        detail: format!("max real part {re:.6e}"),
                    });
                }
                Err(e) => out.push(Finding { name: "kernel projection".into(), passed: false, detail: e.message }),
            }
        }
        Err(e) => out.push(Finding { name: "continuum embedding".into(), passed: false, detail: e.message }),
    }
    match sc.data.total_mass() {
        Ok(mass) => out.push(Finding {
            name: "initial mass is one".into(),
            passed: (mass - 1.0).abs() <= 1e-12,
            detail: format!("mass {mass:.15}"),
        }),
        Err(e) => out.push(Finding { name: "initial data".into(), passed: false, detail: e.to_string() }),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn fig1_closed_form_starts_at_plus_and_minus_five() {
        let sc = Scenario::from_config(preset("fig1").unwrap()).unwrap();
        let run = run_solver(&sc, SolverKind::ClosedForm, None).unwrap();
        let f = run.output.field().unwrap();
        assert_eq!(f.slices.len(), 3);
        let peak = |v: &[f64]| f.x[v.iter().enumerate().fold(0, |b, (i, p)| if *p > v[b] { i } else { b })];
        assert!((peak(&f.slices[0].values[0]) - 5.0).abs() < 0.1);
        assert!((peak(&f.slices[0].values[1]) + 5.0).abs() < 0.1);
    }

    #[test]
    fn negative_rates_fail_validation_with_a_location() {
        let mut cfg = preset("fig1").unwrap();
        cfg.model.as_mut().unwrap().rates = vec![vec![0.5, -0.5], vec![2.0, -2.0]];
        let sc = Scenario::from_config(cfg).unwrap();
        let findings = validate(&sc);
        let bad: Vec<_> = findings.iter().filter(|f| !f.passed).collect();
        assert!(!bad.is_empty());
        assert!(bad.iter().any(|f| f.detail.contains("Q[0][1]")), "{bad:?}");
    }

    #[test]
    fn unsorted_times_are_rejected() {
        let mut cfg = preset("fig2").unwrap();
        cfg.times = Some(vec![1.0, 0.5]);
        assert_eq!(Scenario::from_config(cfg).unwrap_err().code, 1);
    }
}
