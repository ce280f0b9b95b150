//! Scenario files. Every key is optional; a preset fills what the file
//! leaves out and command-line flags override both.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SolverKind {
    Spectral,
    ClosedForm,
    Fd,
    Mc,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    UniformGaussian,
    UniformDelta,
    StepwiseGaussian,
    StepwiseDelta,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Haar,
    Cosine,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Histogram,
    Kernel,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Option<String>,
    pub solver: Option<SolverKind>,
    pub times: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelSpec>,
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub spectral: SpectralSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub compare: CompareSpec,
}

/// Rates are the values of the stepwise kernel: `rates[i][j]` is the rate
/// from cell i into cell j, rows summing to zero.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub rates: Vec<Vec<f64>>,
    pub slope: Option<Vec<f64>>,
    pub offset: Option<Vec<f64>>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub family: Family,
    #[serde(default)]
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_width: Option<f64>,
    /// Output points (spectral, closed form), interior points (fd) or
    /// histogram bins (mc).
    pub nx: Option<usize>,
    /// Finite-difference spacing, used when `nx` is absent.
    pub dx: Option<f64>,
    /// s-samples; cell midpoints by default.
    pub s: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    pub basis: Option<BasisName>,
    pub modes: Option<usize>,
    pub mu_max: Option<f64>,
    pub mu_step: Option<f64>,
    pub quadrature: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub estimator: Option<EstimatorName>,
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub a: Option<SolverKind>,
    pub b: Option<SolverKind>,
    pub norm: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            Self::Parse(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_owned(), e))?;
        Self::parse(&text).map_err(|e| ConfigError::Parse(path.to_owned(), e))
    }

    /// toml's messages carry the line, column and offending key.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Fills every unset field from `base`.
    pub fn or(self, base: Config) -> Config {
        Config {
            preset: self.preset.or(base.preset),
            solver: self.solver.or(base.solver),
            times: self.times.or(base.times),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
            model: self.model.or(base.model),
            initial: self.initial.or(base.initial),
            grid: GridSpec {
                half_width: self.grid.half_width.or(base.grid.half_width),
                nx: self.grid.nx.or(base.grid.nx),
                dx: self.grid.dx.or(base.grid.dx),
                s: self.grid.s.or(base.grid.s),
            },
            spectral: SpectralSpec {
                basis: self.spectral.basis.or(base.spectral.basis),
                modes: self.spectral.modes.or(base.spectral.modes),
                mu_max: self.spectral.mu_max.or(base.spectral.mu_max),
                mu_step: self.spectral.mu_step.or(base.spectral.mu_step),
                quadrature: self.spectral.quadrature.or(base.spectral.quadrature),
            },
            mc: McSpec {
                paths: self.mc.paths.or(base.mc.paths),
                dt: self.mc.dt.or(base.mc.dt),
                estimator: self.mc.estimator.or(base.mc.estimator),
                bandwidth: self.mc.bandwidth.or(base.mc.bandwidth),
            },
            compare: CompareSpec {
                a: self.compare.a.or(base.compare.a),
                b: self.compare.b.or(base.compare.b),
                norm: self.compare.norm.or(base.compare.norm),
                tolerance: self.compare.tolerance.or(base.compare.tolerance),
            },
        }
    }
}
