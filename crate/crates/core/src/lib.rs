//! Forward (Fokker–Planck) equation for regime-switching diffusions with a
//! continuum of hidden states s ∈ [0, 1]:
//!
//! p_t = ∫₀¹ K(s, ξ) p(ξ) dξ − ((b(s) x + c(s)) p)_x + ½ (R²(s) p)_xx.
//!
//! The spectral solver projects s onto an orthonormal basis and x onto
//! Fourier modes; `closed_form` holds the explicit two- and four-state
//! solution families; `oracle` holds the finite-difference and Monte Carlo
//! reference solvers.

pub mod basis;
pub mod closed_form;
pub mod error;
pub mod field;
pub mod initial;
pub mod mixture;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod spectral;

pub use basis::{
    check_q_property_continuous, project_initial_data, project_kernel, BasisKind, Kernel, KernelMatrix,
    OrthonormalBasis,
};
pub use error::{Error, Result};
pub use field::DensityField;
pub use initial::InitialData;
pub use mixture::{Component, Mixture};
pub use model::{
    continuous_to_discrete, discrete_to_continuous, equivalent_discrete, ContinuousModel, DiscreteModel, SProfile,
};
