//! Gaussian / point-mass mixtures in x.
//!
//! Initial data and projected coefficients g_k(x) are kept in this symbolic
//! form so that Fourier transforms and the drift–diffusion propagation stay
//! closed-form. A component with zero variance is a point mass.

use nalgebra::Complex;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    pub fn gaussian(weight: f64, mean: f64, variance: f64) -> Self {
        Self { weight, mean, variance }
    }

    pub fn point(weight: f64, mean: f64) -> Self {
        Self { weight, mean, variance: 0.0 }
    }

    pub fn is_point(&self) -> bool {
        self.variance == 0.0
    }

    /// Density at `x`; point masses contribute nothing.
    pub fn density(&self, x: f64) -> f64 {
        if self.is_point() {
            return 0.0;
        }
        let d = x - self.mean;
        self.weight * (-d * d / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }

    /// Fourier transform `∫ p(x) e^{-iμx} dx`.
    pub fn fourier(&self, mu: f64) -> Complex<f64> {
        let amp = self.weight * (-0.5 * self.variance * mu * mu).exp();
        let phase = -self.mean * mu;
        Complex::new(amp * phase.cos(), amp * phase.sin())
    }

    /// Exact transport of the component under dx = (b x + c) dt + R dW for
    /// a time `t`.
    pub fn propagate(&self, drift: LinearDrift, diffusion_sq: f64, t: f64) -> Self {
        let LinearDrift { slope, offset } = drift;
        let (growth, shift, spread) = if slope == 0.0 {
            (1.0, offset * t, diffusion_sq * t)
        } else {
            let g = (slope * t).exp();
            (
                g,
                offset * (slope * t).exp_m1() / slope,
                diffusion_sq * (2.0 * slope * t).exp_m1() / (2.0 * slope),
            )
        };
        Self {
            weight: self.weight,
            mean: self.mean * growth + shift,
            variance: self.variance * growth * growth + spread,
        }
    }
}

/// Linear drift `b x + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDrift {
    pub slope: f64,
    pub offset: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mixture {
    components: Vec<Component>,
}

impl Mixture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_components(components: impl IntoIterator<Item = Component>) -> Self {
        let mut m = Self::new();
        for c in components {
            m.push(c);
        }
        m
    }

    /// `e^{-(x-m)^2} / √π`: unit mass, variance ½.
    pub fn unit_gaussian(mean: f64) -> Self {
        Self::from_components([Component::gaussian(1.0, mean, 0.5)])
    }

    pub fn point(mean: f64) -> Self {
        Self::from_components([Component::point(1.0, mean)])
    }

    /// Adds a component, merging it with an existing one of identical shape.
    pub fn push(&mut self, c: Component) {
        if c.weight == 0.0 {
            return;
        }
        if let Some(existing) = self
            .components
            .iter_mut()
            .find(|e| e.mean == c.mean && e.variance == c.variance)
        {
            existing.weight += c.weight;
        } else {
            self.components.push(c);
        }
        self.components.retain(|e| e.weight != 0.0);
    }

    pub fn add_scaled(&mut self, other: &Mixture, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for c in &other.components {
            self.push(Component { weight: c.weight * scale, ..*c });
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut m = Self::new();
        m.add_scaled(self, scale);
        m
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn has_point_mass(&self) -> bool {
        self.components.iter().any(Component::is_point)
    }

    /// Smallest standard deviation among the smooth components.
    pub fn min_std(&self) -> Option<f64> {
        self.components
            .iter()
            .filter(|c| !c.is_point())
            .map(|c| c.variance.sqrt())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.density(x)).sum()
    }

    pub fn fourier(&self, mu: f64) -> Complex<f64> {
        self.components.iter().map(|c| c.fourier(mu)).sum()
    }

    pub fn propagate(&self, drift: LinearDrift, diffusion_sq: f64, t: f64) -> Self {
        Self::from_components(self.components.iter().map(|c| c.propagate(drift, diffusion_sq, t)))
    }

    /// Replaces point masses by Gaussians of standard deviation `width`.
    pub fn mollified(&self, width: f64) -> Self {
        Self::from_components(self.components.iter().map(|c| {
            if c.is_point() {
                Component { variance: width * width, ..*c }
            } else {
                *c
            }
        }))
    }
}

/// Half-width of an x-window holding every component propagated with any of
/// the given coefficient sets over [0, `t_end`], `nsigma` standard deviations
/// out, plus a margin of 2.
pub fn envelope_half_width(
    coefficients: &[(LinearDrift, f64)],
    mixtures: &[Mixture],
    t_end: f64,
    nsigma: f64,
) -> f64 {
    let mut w: f64 = 0.0;
    for &(drift, r2) in coefficients {
        for m in mixtures {
            for c in m.components() {
                for k in 0..=64 {
                    let p = c.propagate(drift, r2, t_end * k as f64 / 64.0);
                    w = w.max(p.mean.abs() + nsigma * p.variance.sqrt());
                }
            }
        }
    }
    w + 2.0
}
