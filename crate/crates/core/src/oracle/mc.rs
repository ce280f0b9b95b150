//! Euler–Maruyama paths of the switching diffusion
//!
//! dX = (b_θ X + c_θ) dt + σ_θ dW, θ a Markov chain with generator Q.
//!
//! Every path owns a ChaCha8 stream selected by its index, so ensembles are
//! reproducible for a given seed whatever the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Column, DensityField};
use crate::mixture::Mixture;
use crate::model::DiscreteModel;

/// Largest admissible Δt·max|q_ii|; the switching step is first order.
pub const MAX_SWITCH_PROBABILITY: f64 = 0.1;

const OVERFLOW: f64 = 1e150;

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub dt: f64,
    pub states: usize,
    pub save_times: Vec<f64>,
    /// `positions[save][path]`.
    pub positions: Vec<Vec<f64>>,
    /// `regimes[save][path]`.
    pub regimes: Vec<Vec<u32>>,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Fraction of paths in each state at save index `k`.
    pub fn occupancy(&self, k: usize) -> Vec<f64> {
        let mut occ = vec![0.0; self.states];
        for &r in &self.regimes[k] {
            occ[r as usize] += 1.0;
        }
        let n = self.paths() as f64;
        occ.iter_mut().for_each(|o| *o /= n);
        occ
    }
}

/// Simulates `paths` trajectories started from per-state initial densities.
/// Component weights must be nonnegative; their total is normalised to one.
pub fn mc_simulate(
    dm: &DiscreteModel,
    initial: &[Mixture],
    paths: usize,
    save_times: &[f64],
    dt: f64,
    seed: u64,
) -> Result<PathEnsemble> {
    let n = dm.states();
    if initial.len() != n {
        return Err(Error::Precondition(format!("{} initial profiles for {n} states", initial.len())));
    }
    if paths == 0 || !(dt > 0.0) {
        return Err(Error::Precondition("need at least one path and Δt > 0".into()));
    }
    if save_times.windows(2).any(|w| w[1] < w[0]) || save_times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Precondition("save times must be nonnegative and ascending".into()));
    }
    let report = dm.validate();
    if !report.passed() {
        return Err(Error::InvalidRates(report.to_string()));
    }
    let switch = dt * dm.max_rate();
    if switch > MAX_SWITCH_PROBABILITY {
        return Err(Error::Precondition(format!(
            "Δt·max|q_ii| = {switch:.3} exceeds {MAX_SWITCH_PROBABILITY}"
        )));
    }

    // Flattened sampler over (state, component).
    let mut atoms = Vec::new();
    for (i, m) in initial.iter().enumerate() {
        for c in m.components() {
            if c.weight < 0.0 {
                return Err(Error::Precondition("negative initial weight cannot be sampled".into()));
            }
            if c.weight > 0.0 {
                atoms.push((i as u32, c.weight, c.mean, c.variance.sqrt()));
            }
        }
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if atoms.is_empty() || !(total > 0.0) {
        return Err(Error::Precondition("initial data carry no mass".into()));
    }

    let plan = StepPlan::new(save_times, dt);
    let q = &dm.rates;
    let traces: Vec<Option<Vec<(f64, u32)>>> = (0..paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut u = rng.random::<f64>() * total;
            let mut pick = atoms[atoms.len() - 1];
            for a in &atoms {
                if u < a.1 {
                    pick = *a;
                    break;
                }
                u -= a.1;
            }
            let mut state = pick.0 as usize;
            let z: f64 = rng.sample(StandardNormal);
            let mut x = pick.2 + pick.3 * z;
            let mut out = Vec::with_capacity(save_times.len());
            for &(steps, h) in &plan.segments {
                let sq = h.sqrt();
                for _ in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    x += (dm.slope[state] * x + dm.offset[state]) * h + dm.sigma[state] * sq * z;
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for j in 0..n {
                        if j != state {
                            acc += q[(state, j)] * h;
                            if u < acc {
                                state = j;
                                break;
                            }
                        }
                    }
                }
                if !x.is_finite() || x.abs() > OVERFLOW {
                    return None;
                }
                out.push((x, state as u32));
            }
            Some(out)
        })
        .collect();

    let unstable: Vec<usize> = traces.iter().enumerate().filter(|(_, t)| t.is_none()).map(|(i, _)| i).collect();
    if !unstable.is_empty() {
        return Err(Error::UnstablePaths(unstable));
    }
    let mut positions = vec![Vec::with_capacity(paths); save_times.len()];
    let mut regimes = vec![Vec::with_capacity(paths); save_times.len()];
    for tr in traces.into_iter().flatten() {
        for (k, (x, s)) in tr.into_iter().enumerate() {
            positions[k].push(x);
            regimes[k].push(s);
        }
    }
    Ok(PathEnsemble { seed, dt, states: n, save_times: save_times.to_vec(), positions, regimes })
}

/// Step counts and sizes landing exactly on every save time.
struct StepPlan {
    segments: Vec<(usize, f64)>,
}

impl StepPlan {
    fn new(save_times: &[f64], dt: f64) -> Self {
        let mut t = 0.0;
        let segments = save_times
            .iter()
            .map(|&target| {
                let span = target - t;
                t = target;
                if span <= 0.0 {
                    (0, 0.0)
                } else {
                    let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
                    (steps, span / steps as f64)
                }
            })
            .collect();
        Self { segments }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DensityEstimator {
    /// Equal bins on [lo, hi]; the field grid is the bin centres.
    Histogram { lo: f64, hi: f64, bins: usize },
    /// Gaussian kernel of the given bandwidth evaluated on `x`.
    Kernel { x: Vec<f64>, bandwidth: f64 },
}

/// Per-state densities, normalised so that all states together integrate to
/// the fraction of paths inside the estimator's range.
pub fn estimate_density(ens: &PathEnsemble, est: &DensityEstimator) -> Result<DensityField> {
    let x = match est {
        DensityEstimator::Histogram { lo, hi, bins } => {
            if !(hi > lo) || *bins == 0 {
                return Err(Error::Grid("empty histogram range".into()));
            }
            let w = (hi - lo) / *bins as f64;
            (0..*bins).map(|i| lo + (i as f64 + 0.5) * w).collect()
        }
        DensityEstimator::Kernel { x, bandwidth } => {
            if !(*bandwidth > 0.0) || x.is_empty() {
                return Err(Error::Grid("kernel estimator needs a grid and a positive bandwidth".into()));
            }
            x.clone()
        }
    };
    let n = ens.paths() as f64;
    let mut field = DensityField::new(x.clone(), (0..ens.states).map(Column::state).collect());
    for (k, &t) in ens.save_times.iter().enumerate() {
        let mut values = vec![vec![0.0; x.len()]; ens.states];
        match est {
            DensityEstimator::Histogram { lo, hi, bins } => {
                let w = (hi - lo) / *bins as f64;
                for (&p, &s) in ens.positions[k].iter().zip(&ens.regimes[k]) {
                    if p >= *lo && p < *hi {
                        let b = (((p - lo) / w) as usize).min(bins - 1);
                        values[s as usize][b] += 1.0 / (n * w);
                    }
                }
            }
            DensityEstimator::Kernel { bandwidth, .. } => {
                let h = *bandwidth;
                let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
                for (st, vals) in values.iter_mut().enumerate() {
                    let mut pts: Vec<f64> = ens.positions[k]
                        .iter()
                        .zip(&ens.regimes[k])
                        .filter(|(_, &s)| s as usize == st)
                        .map(|(&p, _)| p)
                        .collect();
                    pts.sort_by(f64::total_cmp);
                    for (v, &xi) in vals.iter_mut().zip(&x) {
                        let a = pts.partition_point(|&p| p < xi - 8.0 * h);
                        let b = pts.partition_point(|&p| p <= xi + 8.0 * h);
                        *v = norm * pts[a..b].iter().map(|p| (-0.5 * ((xi - p) / h).powi(2)).exp()).sum::<f64>();
                    }
                }
            }
        }
        field.push_slice(t, values)?;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_state() -> DiscreteModel {
        DiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]),
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_ensemble() {
        let dm = two_state();
        let init = [Mixture::point(1.0), Mixture::new()];
        let a = mc_simulate(&dm, &init, 500, &[0.5, 1.0], 0.01, 7).unwrap();
        let b = mc_simulate(&dm, &init, 500, &[0.5, 1.0], 0.01, 7).unwrap();
        let c = mc_simulate(&dm, &init, 500, &[0.5, 1.0], 0.01, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn occupancy_relaxes_to_the_stationary_law() {
        let dm = two_state();
        let init = [Mixture::point(0.0), Mixture::new()];
        let e = mc_simulate(&dm, &init, 40_000, &[5.0], 0.01, 1).unwrap();
        let occ = e.occupancy(0);
        // Binomial standard error ≈ 2.4e-3.
        assert!((occ[0] - 2.0 / 3.0).abs() < 0.012, "{occ:?}");
    }

    #[test]
    fn coarse_steps_are_refused() {
        let dm = two_state();
        let r = mc_simulate(&dm, &[Mixture::point(0.0), Mixture::new()], 10, &[1.0], 0.2, 0);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn explosive_paths_are_reported() {
        let dm = DiscreteModel::new(DMatrix::zeros(1, 1), vec![1e4], vec![0.0], vec![1.0]).unwrap();
        let r = mc_simulate(&dm, &[Mixture::unit_gaussian(0.0)], 4, &[1.0], 0.01, 0);
        assert!(matches!(r, Err(Error::UnstablePaths(ref v)) if v.len() == 4), "{r:?}");
    }

    #[test]
    fn histogram_and_kernel_estimates_integrate_to_one() {
        let dm = two_state();
        let e = mc_simulate(&dm, &[Mixture::unit_gaussian(0.0), Mixture::new()], 5000, &[1.0], 0.01, 3).unwrap();
        let h = estimate_density(&e, &DensityEstimator::Histogram { lo: -8.0, hi: 8.0, bins: 160 }).unwrap();
        assert!((h.mass(&h.slices[0]) - 1.0).abs() < 1e-3);
        let x = crate::field::uniform_grid(8.0, 321);
        let k = estimate_density(&e, &DensityEstimator::Kernel { x, bandwidth: 0.2 }).unwrap();
        assert!((k.mass(&k.slices[0]) - 1.0).abs() < 1e-3);
    }
}
