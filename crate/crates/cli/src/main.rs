use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchdiff::oracle::Norm;
use switchdiff_cli::config::{Config, SolverKind};
use switchdiff_cli::presets::{preset, NAMES};
use switchdiff_cli::run::{run_compare, run_solver, validate, write_output, CliError, CliResult, Scenario};

/// Forward-equation solvers for regime-switching diffusions.
///
/// Settings are taken from the preset, then the config file, then flags;
/// later sources win.
#[derive(Parser)]
#[command(name = "switchdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write the density CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
    },
    /// Run two solvers on one scenario and report their distance.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        a: Option<SolverKind>,
        #[arg(long, value_enum)]
        b: Option<SolverKind>,
        /// l1 or linf.
        #[arg(long)]
        norm: Option<String>,
        /// Defaults to 5Δx² when one side is the finite-difference solver.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Write the data of reference figure 1, 2 or 3.
    ReproduceFig {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        figure: u8,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
    },
    /// Check the rates, the q-property, the projected spectrum and the data.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of fig1, fig2, fig3.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_nx: Option<usize>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
}

impl Common {
    fn scenario(self, forced_preset: Option<String>, solver: Option<SolverKind>) -> CliResult<Scenario> {
        let file = match &self.config {
            Some(p) => Config::load(p).map_err(|e| CliError::io(e.to_string()))?,
            None => Config::default(),
        };
        let name = forced_preset.or(self.preset).or(file.preset.clone());
        let base = match name {
            Some(n) => preset(&n).ok_or_else(|| CliError::invalid(format!("unknown preset {n:?}; known: {NAMES:?}")))?,
            None => Config::default(),
        };
        let mut cfg = file.or(base);
        cfg.solver = solver.or(cfg.solver);
        cfg.seed = self.seed.or(cfg.seed);
        cfg.out = self.out.or(cfg.out);
        cfg.grid.nx = self.grid_nx.or(cfg.grid.nx);
        cfg.spectral.mu_max = self.mu_max.or(cfg.spectral.mu_max);
        cfg.mc.paths = self.paths.or(cfg.mc.paths);
        Scenario::from_config(cfg)
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve { common, solver } => {
            let sc = common.scenario(None, solver)?;
            let run = run_solver(&sc, sc.solver, None)?;
            write_output(&run, sc.config.out.as_deref())
        }
        Command::ReproduceFig { figure, mut common, solver } => {
            common.out = common.out.or_else(|| Some(PathBuf::from(format!("fig{figure}.csv"))));
            let sc = common.scenario(Some(format!("fig{figure}")), solver)?;
            let run = run_solver(&sc, sc.solver, None)?;
            write_output(&run, sc.config.out.as_deref())?;
            eprintln!("wrote {}", sc.config.out.as_deref().map_or("-".into(), |p| p.display().to_string()));
            Ok(())
        }
        Command::Compare { common, a, b, norm, tolerance } => {
            let sc = common.scenario(None, None)?;
            let cmp = &sc.config.compare;
            let a = a.or(cmp.a).unwrap_or(SolverKind::ClosedForm);
            let b = b.or(cmp.b).unwrap_or(SolverKind::Fd);
            let norm: Norm = norm.or(cmp.norm.clone()).unwrap_or_else(|| "linf".into()).parse()?;
            let c = run_compare(&sc, a, b, norm, tolerance.or(cmp.tolerance))?;
            println!("{}", c.report);
            match c.tolerance {
                Some(t) => println!("tolerance {t:.6e}: {}", if c.passed() { "PASS" } else { "FAIL" }),
                None => println!("no tolerance set"),
            }
            if c.passed() {
                Ok(())
            } else {
                Err(CliError::tolerance(format!("{a:?} vs {b:?} exceeds the tolerance")))
            }
        }
        Command::Validate { common } => {
            let sc = common.scenario(None, None)?;
            let findings = validate(&sc);
            for f in &findings {
                println!("{} {}: {}", if f.passed { "ok  " } else { "FAIL" }, f.name, f.detail);
            }
            match findings.iter().filter(|f| !f.passed).count() {
                0 => Ok(()),
                n => Err(CliError::invalid(format!("{n} check(s) failed"))),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
