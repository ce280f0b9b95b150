use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchdiff::closed_form::*;
use switchdiff::field::{uniform_grid, Column};
use switchdiff::oracle::*;
use switchdiff::spectral::{cell_midpoints, solve, Reassembly, SolveOptions, Strategy};
use switchdiff::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn haar_spectral_matches_finite_differences_on_a_four_cell_model() {
    let q = DMatrix::from_row_slice(
        4,
        4,
        &[-1.5, 1.0, 0.5, 0.0, 0.3, -0.8, 0.0, 0.5, 0.0, 2.0, -2.4, 0.4, 1.0, 0.0, 1.0, -2.0],
    );
    let dm = DiscreteModel::new(q, vec![0.0; 4], vec![0.5, -0.5, 0.0, 1.0], vec![0.6, 1.0, 1.4, 0.8]).unwrap();
    let cm = discrete_to_continuous(&dm).unwrap();
    let data = InitialData::stepwise_gaussian(&[-2.0, 0.0, 1.0, 3.0]);
    let times = [0.0, 1.0, 2.0];

    let eq = equivalent_discrete(&cm, 4).unwrap();
    let init = data.state_mixtures().unwrap();
    let l = default_half_width(&eq, &init, 2.0);
    let dx = 0.05;
    let grid = FdGrid::with_spacing(&eq, l, dx);
    let fd = fd_solve(&eq, &init, grid, &times).unwrap();

    let sol = solve(&cm, &data, &times, &fd.x, &cell_midpoints(4), SolveOptions::default()).unwrap();
    assert_eq!(sol.strategy, Strategy::Coupled);
    let report = compare(&sol.field, &fd, Norm::Linf).unwrap();
    let dx = grid.dx();
    assert!(report.max() <= 5.0 * dx * dx, "{report}");
    assert!(fd.mass_drift() <= 1e-6);
    assert!(sol.field.mass_drift() <= 1e-8);
}

#[test]
fn uniform_coefficient_closed_forms_match_the_spectral_quadrature() {
    let p = TwoStateParams { r: [1.3, 1.3], ..TwoStateParams::reference() }.without_slope();
    let cm = p.continuous_model().unwrap();
    let x = uniform_grid(25.0, 501);
    let s = [0.2, 0.7];
    let cols: Vec<Column> = s.iter().map(|&v| Column::s(v, 0.5)).collect();
    let quad = SolveOptions { reassembly: Reassembly::Quadrature, ..Default::default() };
    let times = [0.0, 1.0, 4.0];

    let sol = solve(&cm, &InitialData::uniform_gaussian(), &times, &x, &cols, quad).unwrap();
    for sl in &sol.field.slices {
        for (k, &sv) in s.iter().enumerate() {
            let cf: Vec<f64> = x.iter().map(|&xv| uniform_gaussian_b0(&p, sl.t, xv, sv).unwrap()).collect();
            assert!(max_abs_diff(&cf, &sl.values[k]) <= 1e-8, "t={} s={sv}", sl.t);
        }
    }

    let sol = solve(&cm, &p.stepwise_gaussian_data(), &times, &x, &cols, quad).unwrap();
    for sl in &sol.field.slices {
        for (k, &sv) in s.iter().enumerate() {
            let cf: Vec<f64> = x
                .iter()
                .map(|&xv| stepwise_gaussian_b0(&p, BasisKind::Haar, sl.t, xv, sv).unwrap())
                .collect();
            assert!(max_abs_diff(&cf, &sl.values[k]) <= 1e-8, "t={} s={sv}", sl.t);
        }
    }
}

#[test]
fn mean_reverting_closed_forms_match_the_symbolic_spectral_path() {
    let p = TwoStateParams { r: [1.2, 1.2], b: [-0.7, -0.7], ..TwoStateParams::reference() };
    let cm = p.continuous_model().unwrap();
    let x = uniform_grid(12.0, 241);
    let s = [0.3, 0.9];
    let cols: Vec<Column> = s.iter().map(|&v| Column::s(v, 0.5)).collect();
    let times = [0.1, 1.0, 20.0];
    let opts = SolveOptions { reassembly: Reassembly::ClosedForm, ..Default::default() };

    let sol = solve(&cm, &InitialData::uniform_delta(0.0), &times, &x, &cols, opts).unwrap();
    for sl in &sol.field.slices {
        for (k, &sv) in s.iter().enumerate() {
            let cf: Vec<f64> = x.iter().map(|&xv| delta_bneg(&p, sl.t, xv, sv).unwrap()).collect();
            assert!(max_abs_diff(&cf, &sl.values[k]) <= 1e-8, "t={} s={sv}", sl.t);
        }
    }
    let sol = solve(&cm, &p.stepwise_delta_data(), &times, &x, &cols, opts).unwrap();
    for sl in &sol.field.slices {
        for (k, &sv) in s.iter().enumerate() {
            let cf: Vec<f64> = x.iter().map(|&xv| stepwise_delta_bneg(&p, sl.t, xv, sv).unwrap()).collect();
            assert!(max_abs_diff(&cf, &sl.values[k]) <= 1e-8, "t={} s={sv}", sl.t);
        }
    }
}

#[test]
fn uniform_gaussian_closed_form_matches_finite_differences() {
    let p = TwoStateParams { r: [1.0, 1.0], ..TwoStateParams::reference() }.without_slope();
    let eq = equivalent_discrete(&p.continuous_model().unwrap(), 2).unwrap();
    let init = InitialData::uniform_gaussian().state_mixtures_on(2).unwrap();
    let l = default_half_width(&eq, &init, 3.0);
    let grid = FdGrid::with_spacing(&eq, l, 0.05);
    let fd = fd_solve(&eq, &init, grid, &[1.0, 3.0]).unwrap();
    let dx = grid.dx();
    for sl in &fd.slices {
        for (k, s) in [0.25, 0.75].into_iter().enumerate() {
            let cf: Vec<f64> = fd.x.iter().map(|&xv| 0.5 * uniform_gaussian_b0(&p, sl.t, xv, s).unwrap()).collect();
            assert!(max_abs_diff(&cf, &sl.values[k]) <= 5.0 * dx * dx, "t={}", sl.t);
        }
    }
}

#[test]
fn brownian_paths_have_unit_variance() {
    let dm = DiscreteModel::new(DMatrix::zeros(1, 1), vec![0.0], vec![0.0], vec![1.0]).unwrap();
    let n = 40_000;
    let e = mc_simulate(&dm, &[Mixture::point(0.0)], n, &[1.0], 0.01, 11).unwrap();
    let xs = &e.positions[0];
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((var - 1.0).abs() <= 3.0 / (n as f64).sqrt(), "{var}");
}

#[test]
fn flat_samples_give_a_flat_histogram() {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ens = PathEnsemble {
        seed: 5,
        dt: 0.0,
        states: 1,
        save_times: vec![0.0],
        positions: vec![(0..n).map(|_| rng.random::<f64>()).collect()],
        regimes: vec![vec![0; n]],
    };
    let f = estimate_density(&ens, &DensityEstimator::Histogram { lo: 0.0, hi: 1.0, bins: 100 }).unwrap();
    // 10⁴ samples per bin: the per-bin standard error is 0.01, so ±0.02 is
    // a two-sigma band that about 95% of bins meet; none leaves five sigma.
    let v = &f.slices[0].values[0];
    let inside = v.iter().filter(|p| (*p - 1.0).abs() <= 0.02).count();
    assert!(inside >= 90, "{inside} of 100 bins within 0.02");
    assert!(v.iter().all(|p| (p - 1.0).abs() <= 0.05));
}

#[test]
fn mean_reverting_paths_settle_at_minus_c_over_b() {
    let dm = DiscreteModel::new(
        DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 1.0, -1.0]),
        vec![-0.5, -1.0],
        vec![1.0, 1.0],
        vec![1.0, 2.0],
    )
    .unwrap();
    let e = mc_simulate(&dm, &[Mixture::point(5.0), Mixture::point(-5.0)], 20_000, &[30.0], 0.02, 2).unwrap();
    let occ = e.occupancy(0);
    assert!((occ[0] - 2.0 / 3.0).abs() < 0.02, "{occ:?}");
    // Conditional means sit between the two attractors 2 and 1.
    for st in 0..2 {
        let xs: Vec<f64> = e.positions[0].iter().zip(&e.regimes[0]).filter(|(_, &r)| r == st).map(|(x, _)| *x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((1.0..=2.0).contains(&mean), "state {st}: {mean}");
    }
    // Without switching each state relaxes to its own −c/b.
    let frozen = DiscreteModel { rates: DMatrix::zeros(2, 2), ..dm };
    let e = mc_simulate(&frozen, &[Mixture::point(5.0), Mixture::point(-5.0)], 20_000, &[30.0], 0.02, 2).unwrap();
    for (st, target) in [(0u32, 2.0), (1, 1.0)] {
        let xs: Vec<f64> = e.positions[0].iter().zip(&e.regimes[0]).filter(|(_, &r)| r == st).map(|(x, _)| *x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - target).abs() < 0.05, "state {st}: {mean}");
    }
}

#[test]
fn histogram_error_shrinks_like_one_over_root_n() {
    // Stationary OU, started at stationarity: the exact density is known.
    let dm = DiscreteModel::new(DMatrix::zeros(1, 1), vec![-1.0], vec![0.0], vec![2.0f64.sqrt()]).unwrap();
    let exact = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let start = Mixture::from_components([Component::gaussian(1.0, 0.0, 1.0)]);
    let est = DensityEstimator::Histogram { lo: -5.0, hi: 5.0, bins: 40 };
    let sizes = [5_000usize, 10_000, 20_000, 40_000];
    let mut logs = Vec::new();
    for &n in &sizes {
        let mut err = 0.0;
        for seed in 0..6 {
            let e = mc_simulate(&dm, &[start.clone()], n, &[0.05], 0.01, 100 + seed).unwrap();
            let f = estimate_density(&e, &est).unwrap();
            // Against bin averages of the exact density, so only noise remains.
            let w = 10.0 / 40.0;
            let v: f64 = f
                .x
                .iter()
                .zip(&f.slices[0].values[0])
                .map(|(&c, &p)| {
                    let avg = (0..8).map(|k| exact(c - 0.5 * w + (k as f64 + 0.5) * w / 8.0)).sum::<f64>() / 8.0;
                    (p - avg).abs() * w
                })
                .sum();
            err += v / 6.0;
        }
        logs.push(((n as f64).ln(), err.ln()));
    }
    let mx = logs.iter().map(|l| l.0).sum::<f64>() / 4.0;
    let my = logs.iter().map(|l| l.1).sum::<f64>() / 4.0;
    let slope = logs.iter().map(|l| (l.0 - mx) * (l.1 - my)).sum::<f64>()
        / logs.iter().map(|l| (l.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, {logs:?}");
}

#[test]
fn ensembles_do_not_depend_on_the_worker_count() {
    let p = TwoStateParams::reference();
    let dm = equivalent_discrete(&p.continuous_model().unwrap(), 2).unwrap();
    let init = p.stepwise_delta_data().state_mixtures().unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_simulate(&dm, &init, 3000, &[0.5, 2.0], 0.01, 42).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn finite_differences_and_monte_carlo_agree() {
    let p = TwoStateParams::reference();
    let dm = equivalent_discrete(&p.continuous_model().unwrap(), 2).unwrap();
    let init = p.stepwise_gaussian_data().state_mixtures().unwrap();
    let l = default_half_width(&dm, &init, 2.0);
    let grid = FdGrid::with_spacing(&dm, l, 0.05);
    let fd = fd_solve(&dm, &init, grid, &[2.0]).unwrap();
    let e = mc_simulate(&dm, &init, 100_000, &[2.0], 0.01, 9).unwrap();
    let mc = estimate_density(&e, &DensityEstimator::Kernel { x: uniform_grid(12.0, 241), bandwidth: 0.25 }).unwrap();
    let r = compare(&fd, &mc, Norm::L1).unwrap();
    // Kernel smoothing bias plus sampling noise at this size stay below 0.03.
    assert!(r.max() <= 0.03, "{r}");
}
