use nalgebra::DMatrix;
use proptest::prelude::*;
use switchdiff::field::{uniform_grid, Column, DensityField};
use switchdiff::oracle::{compare, Norm};
use switchdiff::quad::{uniform_breaks, GaussLegendre};
use switchdiff::spectral::{cell_midpoints, minor_spectrum, solve, Reassembly, SolveOptions, Strategy as Frame};
use switchdiff::*;

/// Generator with off-diagonal rates drawn from `rates`, row-major.
fn generator(m: usize, rates: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                q[(i, j)] = rates[i * m + j];
            }
        }
        q[(i, i)] = -(0..m).filter(|&j| j != i).map(|j| q[(i, j)]).sum::<f64>();
    }
    q
}

fn discrete(m: usize, rates: &[f64], sigma: &[f64]) -> DiscreteModel {
    DiscreteModel::new(generator(m, rates), vec![0.0; m], vec![0.0; m], sigma[..m].to_vec()).unwrap()
}

fn dyadic() -> impl proptest::strategy::Strategy<Value = usize> {
    prop_oneof![Just(2usize), Just(4), Just(8)]
}

#[test]
fn bases_are_orthonormal_under_fine_quadrature() {
    // 512 dyadic pieces × 32 nodes = 16384 nodes, exact on every Haar step.
    let gl = GaussLegendre::new(32);
    let nodes = gl.composite_nodes(&uniform_breaks(512));
    assert!(nodes.len() >= 10_000);
    for basis in [OrthonormalBasis::haar(64).unwrap(), OrthonormalBasis::cosine(32).unwrap()] {
        let table: Vec<Vec<f64>> = nodes.iter().map(|&(s, _)| basis.values(s)).collect();
        for n in 0..basis.len() {
            for m in 0..=n {
                let ip: f64 = nodes.iter().zip(&table).map(|(&(_, w), x)| w * x[n] * x[m]).sum();
                let delta = if n == m { 1.0 } else { 0.0 };
                assert!((ip - delta).abs() <= 1e-12, "{:?} ({n},{m}): {ip}", basis.kind());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embedded_generators_keep_the_q_property(m in dyadic(), rates in prop::collection::vec(0.0f64..3.0, 64)) {
        let cm = discrete_to_continuous(&discrete(m, &rates, &[1.0; 8])).unwrap();
        let report = check_q_property_continuous(cm.kernel());
        prop_assert!(report.passed(), "{}", report);
    }

    #[test]
    fn projected_first_row_vanishes(
        m in dyadic(),
        rates in prop::collection::vec(0.0f64..3.0, 64),
        cosine in any::<bool>(),
    ) {
        let cm = discrete_to_continuous(&discrete(m, &rates, &[1.0; 8])).unwrap();
        let basis = if cosine { OrthonormalBasis::cosine(6).unwrap() } else { OrthonormalBasis::haar(m).unwrap() };
        let a = project_kernel(cm.kernel(), basis).unwrap();
        prop_assert!(a.matrix.row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn haar_projection_reconstructs_dyadic_kernels(m in dyadic(), rates in prop::collection::vec(0.0f64..3.0, 64)) {
        let dm = discrete(m, &rates, &[1.0; 8]);
        let cm = discrete_to_continuous(&dm).unwrap();
        let a = project_kernel(cm.kernel(), OrthonormalBasis::haar(m).unwrap()).unwrap();
        let back = a.reconstruct();
        let f = dm.forward_matrix();
        let h = 1.0 / m as f64;
        let scale = f.amax().max(1.0);
        for j in 0..m {
            for i in 0..m {
                let v = back.eval((j as f64 + 0.5) * h, (i as f64 + 0.5) * h);
                // Only rounding separates the two: the Haar values carry √2 factors.
                prop_assert!((v - f[(j, i)]).abs() <= 1e-13 * scale, "({j},{i}): {v} vs {}", f[(j, i)]);
            }
        }
        let again = project_kernel(&back, OrthonormalBasis::haar(m).unwrap()).unwrap();
        prop_assert!((&again.matrix - &a.matrix).amax() <= 1e-12);
    }

    #[test]
    fn minor_spectrum_lies_in_the_closed_left_half_plane(
        m in dyadic(),
        rates in prop::collection::vec(0.0f64..3.0, 64),
    ) {
        let cm = discrete_to_continuous(&discrete(m, &rates, &[1.0; 8])).unwrap();
        let a = project_kernel(cm.kernel(), OrthonormalBasis::haar(m).unwrap()).unwrap();
        let scale = a.matrix.amax().max(1.0);
        for z in minor_spectrum(&a) {
            prop_assert!(z.re <= 1e-10 * scale, "{z}");
        }
    }

    #[test]
    fn equivalent_discrete_rates_are_a_valid_generator(m in dyadic(), rates in prop::collection::vec(0.0f64..3.0, 64)) {
        let dm = discrete(m, &rates, &[1.0; 8]);
        let back = equivalent_discrete(&discrete_to_continuous(&dm).unwrap(), m).unwrap();
        prop_assert!(back.validate().passed());
        prop_assert!((&back.rates * m as f64 - &dm.rates).amax() <= 1e-12 * dm.rates.amax().max(1.0));
    }
}

fn wide_grid(half_width: f64) -> Vec<f64> {
    uniform_grid(half_width, (40.0 * half_width) as usize + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn decoupled_solution_conserves_mass_and_stays_nonnegative(
        l1 in 0.1f64..3.0,
        l2 in 0.1f64..3.0,
        r in 0.3f64..2.0,
        b in -1.5f64..0.0,
        c in -1.0f64..1.0,
        m1 in -4.0f64..4.0,
        m2 in -4.0f64..4.0,
    ) {
        let dm = DiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[-l1, l1, l2, -l2]),
            vec![b; 2],
            vec![c; 2],
            vec![r; 2],
        ).unwrap();
        let cm = discrete_to_continuous(&dm).unwrap();
        let data = InitialData::stepwise_gaussian(&[m1, m2]);
        let x = wide_grid(4.0 + 4.0f64.max(m1.abs()).max(m2.abs()) + 3.0 * c.abs() + 8.0 * r * 3.0f64.sqrt());
        let sol = solve(&cm, &data, &[0.0, 0.5, 3.0], &x, &cell_midpoints(2), SolveOptions::default()).unwrap();
        prop_assert!(sol.field.mass_drift() <= 1e-8, "{:?}", sol.field.masses());
        prop_assert!((sol.field.masses()[0] - 1.0).abs() <= 1e-8);
        prop_assert!(sol.field.min_value() >= -1e-8);
        if b == 0.0 {
            prop_assert_eq!(sol.frozen_mode_defect, 0.0);
        }
    }

    #[test]
    fn coupled_solution_is_real_and_conserves_mass(
        l1 in 0.1f64..3.0,
        l2 in 0.1f64..3.0,
        r1 in 0.3f64..2.0,
        r2 in 0.3f64..2.0,
        c1 in -1.0f64..1.0,
        c2 in -1.0f64..1.0,
    ) {
        let dm = DiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[-l1, l1, l2, -l2]),
            vec![0.0; 2],
            vec![c1, c2],
            vec![r1, r2],
        ).unwrap();
        let cm = discrete_to_continuous(&dm).unwrap();
        let data = InitialData::stepwise_gaussian(&[2.0, -2.0]);
        let x = wide_grid(4.0 + 2.0 + 2.0 + 8.0 * 2.0 * 2.0f64.sqrt());
        let sol = solve(&cm, &data, &[0.0, 1.0, 2.0], &x, &cell_midpoints(2), SolveOptions::default()).unwrap();
        prop_assert_eq!(sol.strategy, Frame::Coupled);
        prop_assert_eq!(sol.reassembly, Reassembly::Quadrature);
        prop_assert!(sol.imag_residue <= 1e-10, "{}", sol.imag_residue);
        prop_assert!(sol.field.mass_drift() <= 1e-8, "{:?}", sol.field.masses());
        prop_assert!(sol.field.min_value() >= -1e-8);
    }

    #[test]
    fn csv_roundtrip_is_exact(values in prop::collection::vec(-1e3f64..1e3, 2 * 3 * 7)) {
        let x = uniform_grid(3.0, 7);
        let mut f = DensityField::new(x, vec![Column::s(0.25, 0.5), Column::s(0.75, 0.5)]);
        for (k, chunk) in values.chunks(14).enumerate() {
            f.push_slice(k as f64 * 0.5, chunk.chunks(7).map(<[f64]>::to_vec).collect()).unwrap();
        }
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = DensityField::read_csv(std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!(&back.slices, &f.slices);
        prop_assert_eq!(compare(&f, &back, Norm::Linf).unwrap().max(), 0.0);
    }
}
