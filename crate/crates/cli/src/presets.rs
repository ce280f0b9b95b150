//! Named scenarios for the three reference figures.

use switchdiff::closed_form::{FourStateParams, TwoStateParams};

use crate::config::{Config, Family, GridSpec, InitialSpec, ModelSpec, SolverKind};

pub const NAMES: [&str; 3] = ["fig1", "fig2", "fig3"];

fn two_state(p: &TwoStateParams) -> ModelSpec {
    let [l1, l2] = p.lambda;
    ModelSpec {
        rates: vec![vec![-l1, l1], vec![l2, -l2]],
        slope: Some(p.b.to_vec()),
        offset: Some(vec![p.c; 2]),
        sigma: p.r.to_vec(),
    }
}

fn four_state(p: &FourStateParams) -> ModelSpec {
    let f = p.forward_matrix();
    ModelSpec {
        rates: (0..4).map(|i| (0..4).map(|j| f[(j, i)]).collect()).collect(),
        slope: None,
        offset: None,
        sigma: p.diffusion().to_vec(),
    }
}

pub fn preset(name: &str) -> Option<Config> {
    let two = TwoStateParams::reference();
    let (model, family, means, times) = match name {
        "fig1" => (two_state(&two.without_slope()), Family::StepwiseGaussian, two.m.to_vec(), vec![0.0, 1.0, 10.0]),
        "fig2" => (two_state(&two), Family::StepwiseDelta, two.m.to_vec(), vec![0.1, 0.5, 100.0]),
        "fig3" => {
            let p = FourStateParams::reference();
            (four_state(&p), Family::StepwiseGaussian, p.m.to_vec(), vec![0.0, 3.0, 15.0])
        }
        _ => return None,
    };
    Some(Config {
        preset: Some(name.to_owned()),
        solver: Some(SolverKind::ClosedForm),
        times: Some(times),
        seed: Some(0),
        model: Some(model),
        initial: Some(InitialSpec { family, means }),
        grid: GridSpec { nx: Some(1001), ..Default::default() },
        ..Default::default()
    })
}
