//! Orthonormal bases on [0, 1], kernels K(s, ξ), and their Galerkin
//! projections.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::initial::{cell_index, InitialData};
use crate::mixture::Mixture;
use crate::quad::{gauss_kronrod, merge_breaks, uniform_breaks, GaussLegendre};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// Orthonormal dyadic Haar family; X_0 ≡ 1.
    Haar,
    /// X_0 ≡ 1, X_n = √2 cos(π n s).
    Cosine,
}

/// The first `len` functions of an orthonormal basis of L²(0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrthonormalBasis {
    kind: BasisKind,
    len: usize,
}

impl OrthonormalBasis {
    pub fn new(kind: BasisKind, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Precondition("basis needs at least one function".into()));
        }
        Ok(Self { kind, len })
    }

    pub fn haar(len: usize) -> Result<Self> {
        Self::new(BasisKind::Haar, len)
    }

    pub fn cosine(len: usize) -> Result<Self> {
        Self::new(BasisKind::Cosine, len)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// X_n(s) with range checks.
    pub fn eval(&self, n: usize, s: f64) -> Result<f64> {
        if n >= self.len {
            return Err(Error::IndexOutOfRange { index: n, len: self.len });
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::CoordinateOutOfRange(s));
        }
        Ok(self.value(n, s))
    }

    /// X_n(s) without range checks.
    pub fn value(&self, n: usize, s: f64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        match self.kind {
            BasisKind::Cosine => std::f64::consts::SQRT_2 * (std::f64::consts::PI * n as f64 * s).cos(),
            BasisKind::Haar => {
                let (lo, mid, hi, amp) = haar_support(n);
                // s = 1 belongs to the last dyadic piece.
                if (s >= lo && s < mid) || (mid == 1.0 && s == 1.0) {
                    amp
                } else if (s >= mid && s < hi) || (hi == 1.0 && s == 1.0) {
                    -amp
                } else {
                    0.0
                }
            }
        }
    }

    /// All values X_0(s), ..., X_{N-1}(s).
    pub fn values(&self, s: f64) -> Vec<f64> {
        (0..self.len).map(|n| self.value(n, s)).collect()
    }

    /// Exact ∫_a^b X_n(s) ds for 0 ≤ a ≤ b ≤ 1.
    pub fn cell_integral(&self, n: usize, a: f64, b: f64) -> f64 {
        if n == 0 {
            return b - a;
        }
        match self.kind {
            BasisKind::Cosine => {
                let w = std::f64::consts::PI * n as f64;
                std::f64::consts::SQRT_2 * ((w * b).sin() - (w * a).sin()) / w
            }
            BasisKind::Haar => {
                let (lo, mid, hi, amp) = haar_support(n);
                let overlap = |l: f64, r: f64| (b.min(r) - a.max(l)).max(0.0);
                amp * (overlap(lo, mid) - overlap(mid, hi))
            }
        }
    }

    /// Matrix I[n][j] = ∫ X_n over the j-th of `cells` equal cells.
    pub fn cell_integrals(&self, cells: usize) -> DMatrix<f64> {
        let h = 1.0 / cells as f64;
        DMatrix::from_fn(self.len, cells, |n, j| {
            self.cell_integral(n, j as f64 * h, (j + 1) as f64 * h)
        })
    }

    /// Points in [0, 1] between which every X_n is smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            BasisKind::Haar => {
                if self.len <= 1 {
                    return vec![0.0, 1.0];
                }
                let level = (self.len - 1).ilog2();
                uniform_breaks(1 << (level + 1))
            }
            // Sub-intervals keep at most a few oscillations per 64-node piece.
            BasisKind::Cosine => uniform_breaks(self.len.div_ceil(8).max(1)),
        }
    }

    /// Haar bases of power-of-two length are exact on the matching dyadic grid.
    pub fn exact_cells(&self) -> Option<usize> {
        match self.kind {
            BasisKind::Haar if self.len.is_power_of_two() => Some(self.len),
            _ => None,
        }
    }
}

/// Support [lo, hi), midpoint and amplitude 2^{j/2} of the Haar function n ≥ 1.
fn haar_support(n: usize) -> (f64, f64, f64, f64) {
    let j = n.ilog2();
    let k = n - (1usize << j);
    let scale = (1u64 << j) as f64;
    let lo = k as f64 / scale;
    (lo, lo + 0.5 / scale, lo + 1.0 / scale, scale.sqrt())
}

/// Kernel K(s, ξ) on piecewise-constant dyadic-compatible cells.
///
/// `values[j * cells + i]` is K on s-cell j × ξ-cell i, i.e. the forward
/// rate from state i into state j.
#[derive(Clone, Debug, PartialEq)]
pub struct StepKernel {
    cells: usize,
    values: Vec<f64>,
}

impl StepKernel {
    pub fn new(cells: usize, values: Vec<f64>) -> Result<Self> {
        if cells == 0 || values.len() != cells * cells {
            return Err(Error::InvalidModel(format!(
                "step kernel needs {cells}×{cells} values, got {}",
                values.len()
            )));
        }
        Ok(Self { cells, values })
    }

    /// From the forward matrix F[j][i] (rate from i into j).
    pub fn from_forward(f: &DMatrix<f64>) -> Result<Self> {
        if f.nrows() != f.ncols() {
            return Err(Error::InvalidModel("forward matrix must be square".into()));
        }
        let n = f.nrows();
        Self::new(n, (0..n * n).map(|k| f[(k / n, k % n)]).collect())
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.cells + i]
    }

    pub fn forward_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.cells, self.cells, |j, i| self.get(j, i))
    }
}

type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// K(s, ξ) as a closure, smooth between the listed breakpoints (in both
/// arguments).
#[derive(Clone)]
pub struct SmoothKernel {
    f: KernelFn,
    breaks: Vec<f64>,
}

impl fmt::Debug for SmoothKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothKernel").field("breaks", &self.breaks).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum Kernel {
    Stepwise(StepKernel),
    Smooth(SmoothKernel),
}

impl Kernel {
    pub fn stepwise_forward(f: &DMatrix<f64>) -> Result<Self> {
        StepKernel::from_forward(f).map(Self::Stepwise)
    }

    pub fn smooth(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, breaks: &[f64]) -> Self {
        Self::Smooth(SmoothKernel {
            f: Arc::new(f),
            breaks: merge_breaks(&[breaks]),
        })
    }

    pub fn eval(&self, s: f64, xi: f64) -> f64 {
        match self {
            Self::Stepwise(k) => k.get(cell_index(s, k.cells), cell_index(xi, k.cells)),
            Self::Smooth(k) => (k.f)(s, xi),
        }
    }

    pub fn breaks(&self) -> Vec<f64> {
        match self {
            Self::Stepwise(k) => uniform_breaks(k.cells),
            Self::Smooth(k) => k.breaks.clone(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Self::Stepwise(k) => k.values.iter().fold(0.0, |a, v| a.max(v.abs())),
            Self::Smooth(_) => {
                let n = 129;
                let mut m: f64 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let v = self.eval(a as f64 / (n - 1) as f64, b as f64 / (n - 1) as f64);
                        m = m.max(v.abs());
                    }
                }
                m
            }
        }
    }
}

/// Worst violations of the continuous q-property.
#[derive(Clone, Debug, PartialEq)]
pub struct QPropertyReport {
    /// max over sampled s of K(s, s); must be negative.
    pub diagonal_max: f64,
    pub diagonal_at: f64,
    /// max over sampled ξ of |∫ K(s, ξ) ds|.
    pub column_defect: f64,
    pub column_at: f64,
    pub tolerance: f64,
}

impl QPropertyReport {
    pub fn diagonal_ok(&self) -> bool {
        self.diagonal_max < 0.0
    }

    pub fn columns_ok(&self) -> bool {
        self.column_defect <= self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.diagonal_ok() && self.columns_ok()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::QProperty(self.to_string()))
        }
    }
}

impl fmt::Display for QPropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(i) max K(s,s) = {:.3e} at s = {:.4} [{}]; (ii) max |∫K ds| = {:.3e} at ξ = {:.4} [{}]",
            self.diagonal_max,
            self.diagonal_at,
            if self.diagonal_ok() { "ok" } else { "FAIL" },
            self.column_defect,
            self.column_at,
            if self.columns_ok() { "ok" } else { "FAIL" },
        )
    }
}

/// Checks (i) K(s, s) < 0 and (ii) ∫₀¹ K(s, ξ) ds = 0 on sample grids.
pub fn check_q_property_continuous(kernel: &Kernel) -> QPropertyReport {
    let tolerance = 1e-10 * kernel.max_abs().max(1.0);
    let mut diag = (f64::NEG_INFINITY, 0.0);
    let mut col = (0.0f64, 0.0);
    match kernel {
        Kernel::Stepwise(k) => {
            let h = 1.0 / k.cells as f64;
            for j in 0..k.cells {
                let v = k.get(j, j);
                if v > diag.0 {
                    diag = (v, (j as f64 + 0.5) * h);
                }
            }
            for i in 0..k.cells {
                let sum: f64 = (0..k.cells).map(|j| k.get(j, i)).sum::<f64>() * h;
                if sum.abs() > col.0 {
                    col = (sum.abs(), (i as f64 + 0.5) * h);
                }
            }
        }
        Kernel::Smooth(_) => {
            let n = 1025;
            for a in 0..n {
                let s = a as f64 / (n - 1) as f64;
                let v = kernel.eval(s, s);
                if v > diag.0 {
                    diag = (v, s);
                }
            }
            // Adaptive per piece: kinks off the listed breakpoints must not
            // masquerade as q-property violations.
            let breaks = kernel.breaks();
            let n = 257;
            for a in 0..n {
                let xi = a as f64 / (n - 1) as f64;
                let sum: f64 = breaks
                    .windows(2)
                    .map(|w| gauss_kronrod(|s| kernel.eval(s, xi), w[0], w[1], 1e-13).unwrap_or(f64::INFINITY))
                    .sum();
                if sum.abs() > col.0 {
                    col = (sum.abs(), xi);
                }
            }
        }
    }
    QPropertyReport {
        diagonal_max: diag.0,
        diagonal_at: diag.1,
        column_defect: col.0,
        column_at: col.1,
        tolerance,
    }
}

/// Galerkin matrix A_nm = ∫∫ K(s, ξ) X_n(s) X_m(ξ) ds dξ.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub matrix: DMatrix<f64>,
    pub basis: OrthonormalBasis,
}

impl KernelMatrix {
    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.matrix[(n, m)]
    }

    /// Block with rows and columns ≥ 1.
    pub fn minor(&self) -> DMatrix<f64> {
        let n = self.basis.len();
        self.matrix.view((1, 1), (n - 1, n - 1)).into_owned()
    }

    /// Row-major CSV with header `n,m,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,m,value")?;
        for n in 0..self.matrix.nrows() {
            for m in 0..self.matrix.ncols() {
                writeln!(w, "{n},{m},{:.16e}", self.matrix[(n, m)])?;
            }
        }
        Ok(())
    }

    /// Σ A_nm X_n(s) X_m(ξ); stepwise on the dyadic grid for Haar of
    /// power-of-two length.
    pub fn reconstruct(&self) -> Kernel {
        let basis = self.basis;
        let a = self.matrix.clone();
        if let Some(cells) = basis.exact_cells() {
            let h = 1.0 / cells as f64;
            let x = DMatrix::from_fn(basis.len(), cells, |n, j| basis.value(n, (j as f64 + 0.5) * h));
            let f = x.transpose() * &a * &x;
            return Kernel::Stepwise(StepKernel::from_forward(&f).expect("square"));
        }
        let breaks = basis.breakpoints();
        Kernel::smooth(
            move |s, xi| {
                let xs = basis.values(s);
                let xx = basis.values(xi);
                let mut acc = 0.0;
                for n in 0..basis.len() {
                    for m in 0..basis.len() {
                        acc += a[(n, m)] * xs[n] * xx[m];
                    }
                }
                acc
            },
            &breaks,
        )
    }
}

/// Projects a kernel satisfying the continuous q-property onto `basis`.
///
/// Stepwise kernels are integrated exactly cell by cell. Smooth kernels use
/// composite 64-node Gauss–Legendre on the merged breakpoints and are
/// rejected when a 32-node rule disagrees beyond 1e-10 (relative).
pub fn project_kernel(kernel: &Kernel, basis: OrthonormalBasis) -> Result<KernelMatrix> {
    check_q_property_continuous(kernel).into_result()?;
    let scale = kernel.max_abs().max(1.0);
    let mut a = match kernel {
        Kernel::Stepwise(k) => {
            let i = basis.cell_integrals(k.cells);
            &i * k.forward_matrix() * i.transpose()
        }
        Kernel::Smooth(_) => {
            let fine = smooth_projection(kernel, basis, 64);
            let coarse = smooth_projection(kernel, basis, 32);
            let defect = (&fine - &coarse).amax();
            if defect > 1e-10 * scale {
                return Err(Error::Quadrature {
                    estimate: defect,
                    tolerance: 1e-10 * scale,
                });
            }
            fine
        }
    };
    // ∫K ds = 0 makes the first row vanish; what remains is rounding.
    let first_row = a.row(0).amax();
    if first_row > 1e-10 * scale {
        return Err(Error::QProperty(format!(
            "projected first row has magnitude {first_row:.3e}"
        )));
    }
    a.row_mut(0).fill(0.0);
    Ok(KernelMatrix { matrix: a, basis })
}

fn smooth_projection(kernel: &Kernel, basis: OrthonormalBasis, order: usize) -> DMatrix<f64> {
    let breaks = merge_breaks(&[&kernel.breaks(), &basis.breakpoints()]);
    let nodes = GaussLegendre::new(order).composite_nodes(&breaks);
    let q = nodes.len();
    // Weighted basis table: W[n][p] = w_p X_n(s_p).
    let wx = DMatrix::from_fn(basis.len(), q, |n, p| nodes[p].1 * basis.value(n, nodes[p].0));
    let k = DMatrix::from_fn(q, q, |p, r| kernel.eval(nodes[p].0, nodes[r].0));
    &wx * k * wx.transpose()
}

/// Galerkin matrix of multiplication by f(s): M_kl = ∫ f X_k X_l ds.
pub fn project_multiplier(
    f: impl Fn(f64) -> f64,
    breaks: &[f64],
    basis: OrthonormalBasis,
) -> DMatrix<f64> {
    let breaks = merge_breaks(&[breaks, &basis.breakpoints()]);
    let nodes = GaussLegendre::new(64).composite_nodes(&breaks);
    let mut m = DMatrix::zeros(basis.len(), basis.len());
    for &(s, w) in &nodes {
        let x = basis.values(s);
        let fw = f(s) * w;
        for k in 0..basis.len() {
            for l in 0..=k {
                m[(k, l)] += fw * x[k] * x[l];
            }
        }
    }
    for k in 0..basis.len() {
        for l in 0..k {
            m[(l, k)] = m[(k, l)];
        }
    }
    m
}

/// g_k(x) = ∫ Φ(x, s) X_k(s) ds as symbolic mixtures.
pub fn project_initial_data(data: &InitialData, basis: OrthonormalBasis) -> Result<Vec<Mixture>> {
    let cells = data.cell_mixtures()?;
    let ints = basis.cell_integrals(cells.len());
    Ok((0..basis.len())
        .map(|k| {
            let mut g = Mixture::new();
            for (j, cell) in cells.iter().enumerate() {
                g.add_scaled(cell, ints[(k, j)]);
            }
            g
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(l1: f64, l2: f64) -> Kernel {
        // Forward matrix F = Qᵀ for the generator [[-λ1, λ1], [λ2, -λ2]].
        Kernel::stepwise_forward(&DMatrix::from_row_slice(2, 2, &[-l1, l2, l1, -l2])).unwrap()
    }

    #[test]
    fn haar_values_follow_the_dyadic_family() {
        let b = OrthonormalBasis::haar(8).unwrap();
        assert_eq!(b.eval(0, 0.7).unwrap(), 1.0);
        assert_eq!(b.eval(1, 0.25).unwrap(), 1.0);
        assert_eq!(b.eval(1, 0.75).unwrap(), -1.0);
        assert_eq!(b.eval(1, 0.5).unwrap(), -1.0);
        assert_eq!(b.eval(1, 1.0).unwrap(), -1.0);
        assert_eq!(b.eval(3, 0.6).unwrap(), std::f64::consts::SQRT_2);
        assert_eq!(b.eval(3, 1.0).unwrap(), -std::f64::consts::SQRT_2);
        assert_eq!(b.eval(3, 0.3).unwrap(), 0.0);
        assert_eq!(b.eval(7, 1.0).unwrap(), -2.0);
        assert!(matches!(b.eval(8, 0.1), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(b.eval(0, 1.5), Err(Error::CoordinateOutOfRange(_))));
    }

    #[test]
    fn cosine_values() {
        let b = OrthonormalBasis::cosine(4).unwrap();
        assert_eq!(b.eval(1, 0.0).unwrap(), std::f64::consts::SQRT_2);
        assert!(b.eval(1, 0.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn haar_two_state_coefficients() {
        let a = project_kernel(&two_state(1.0, 2.0), OrthonormalBasis::haar(2).unwrap()).unwrap();
        assert_eq!(a.get(1, 0), 0.5);
        assert_eq!(a.get(1, 1), -1.5);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 1), 0.0);
        let a = project_kernel(&two_state(0.7, 0.7), OrthonormalBasis::haar(2).unwrap()).unwrap();
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn cosine_two_state_coefficients_match_quadrature() {
        let k = two_state(1.0, 2.0);
        let basis = OrthonormalBasis::cosine(2).unwrap();
        let exact = project_kernel(&k, basis).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((exact.get(1, 1) + 4.0 * 3.0 / pi2).abs() < 1e-14);
        assert!((exact.get(1, 0) - std::f64::consts::SQRT_2 / std::f64::consts::PI).abs() < 1e-14);
        // Same kernel seen as a closure, integrated by Gauss–Legendre.
        let k2 = k.clone();
        let smooth = Kernel::smooth(move |s, xi| k2.eval(s, xi), &[0.5]);
        let quad = project_kernel(&smooth, basis).unwrap();
        assert!((&quad.matrix - &exact.matrix).amax() < 1e-13);
    }

    #[test]
    fn q_property_report() {
        assert!(check_q_property_continuous(&two_state(1.0, 2.0)).passed());
        let zero = Kernel::stepwise_forward(&DMatrix::zeros(1, 1)).unwrap();
        let r = check_q_property_continuous(&zero);
        assert!(!r.diagonal_ok() && r.columns_ok());
        let r = check_q_property_continuous(&two_state(-1.0, 2.0));
        assert!(!r.diagonal_ok());
        assert!(r.diagonal_at < 0.5);
        assert!(matches!(
            project_kernel(&zero, OrthonormalBasis::haar(1).unwrap()),
            Err(Error::QProperty(_))
        ));
    }

    #[test]
    fn smooth_kernels_with_unresolved_kinks_are_rejected() {
        // Kink at s = 0.3 is not on any breakpoint.
        let k = Kernel::smooth(
            |s, xi| (s - 0.3).abs() - 0.29 - 6.0 * (2.0 * std::f64::consts::PI * (s - xi)).cos(),
            &[],
        );
        let r = project_kernel(&k, OrthonormalBasis::cosine(3).unwrap());
        assert!(matches!(r, Err(Error::Quadrature { .. })), "{r:?}");
    }

    #[test]
    fn initial_data_projection_reproduces_stepwise_profiles() {
        let basis = OrthonormalBasis::haar(2).unwrap();
        let g = project_initial_data(&InitialData::stepwise_gaussian(&[5.0, -5.0]), basis).unwrap();
        let gm = |m: f64, x: f64| (-(x - m) * (x - m)).exp() / std::f64::consts::PI.sqrt();
        for x in [-5.0, -1.0, 0.0, 4.0] {
            assert!((g[0].density(x) - 0.5 * (gm(5.0, x) + gm(-5.0, x))).abs() < 1e-16);
            assert!((g[1].density(x) - 0.5 * (gm(5.0, x) - gm(-5.0, x))).abs() < 1e-16);
            // Two-term reconstruction equals Φ at s < ½ and s > ½.
            assert_eq!(g[0].density(x) + g[1].density(x) * basis.value(1, 0.2), {
                let v = g[0].density(x) + g[1].density(x);
                v
            });
        }
        let g = project_initial_data(&InitialData::uniform_gaussian(), basis).unwrap();
        assert!(g[1].is_empty());
    }
}
