//! Configuration spaces, SDE models and closed-form reference solutions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// State space of the diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigurationSpace {
    /// Unit torus `[0,1)^d`.
    Torus(usize),
    RealLine(usize),
}

impl ConfigurationSpace {
    pub fn dim(&self) -> usize {
        match *self {
            ConfigurationSpace::Torus(d) | ConfigurationSpace::RealLine(d) => d,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, ConfigurationSpace::Torus(_))
    }

    /// Reduce a coordinate to the fundamental domain. Identity on the real line.
    pub fn reduce(&self, x: f64) -> f64 {
        match self {
            ConfigurationSpace::Torus(_) => wrap_unit(x),
            ConfigurationSpace::RealLine(_) => x,
        }
    }

    pub fn reduce_in_place(&self, xs: &mut [f64]) {
        if self.is_torus() {
            for x in xs {
                *x = wrap_unit(*x);
            }
        }
    }

    /// Euclidean distance, minimised over lattice shifts on the torus.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = match self {
                    ConfigurationSpace::Torus(_) => {
                        let r = wrap_unit(x - y);
                        r.min(1.0 - r)
                    }
                    ConfigurationSpace::RealLine(_) => x - y,
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn describe(&self) -> String {
        match self {
            ConfigurationSpace::Torus(d) => format!("torus(d={d})"),
            ConfigurationSpace::RealLine(d) => format!("real-line(d={d})"),
        }
    }
}

fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly negative can round to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Drift `a: R^d -> R^d`, written into the output slice.
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Diffusion `b: R^d -> R^{d x m}`, written row-major into the output slice.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `dX = a(X) dt + b(X) dW` with `m` independent noise channels.
#[derive(Clone)]
pub struct SdeModel {
    space: ConfigurationSpace,
    noise_channels: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    label: String,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("space", &self.space)
            .field("noise_channels", &self.noise_channels)
            .finish()
    }
}

impl SdeModel {
    pub fn new(
        label: impl Into<String>,
        space: ConfigurationSpace,
        noise_channels: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
    ) -> Result<Self> {
        if space.dim() == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if noise_channels == 0 {
            return Err(Error::invalid("at least one noise channel is required"));
        }
        Ok(SdeModel {
            space,
            noise_channels,
            drift,
            diffusion,
            label: label.into(),
        })
    }

    /// `dX = 0`, used to check bookkeeping.
    pub fn zero(space: ConfigurationSpace) -> Self {
        let d = space.dim();
        SdeModel {
            space,
            noise_channels: d,
            drift: Arc::new(|_, out| out.fill(0.0)),
            diffusion: Arc::new(|_, out| out.fill(0.0)),
            label: "zero".into(),
        }
    }

    /// `dX = sqrt(2) dW`, whose generator is the Laplacian.
    pub fn pure_diffusion(space: ConfigurationSpace) -> Self {
        let d = space.dim();
        SdeModel {
            space,
            noise_channels: d,
            drift: Arc::new(|_, out| out.fill(0.0)),
            diffusion: Arc::new(move |_, out| {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 2f64.sqrt();
                }
            }),
            label: "pure-diffusion".into(),
        }
    }

    /// `dX = -theta X dt + sigma dW` on the real line.
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Self {
        SdeModel {
            space: ConfigurationSpace::RealLine(1),
            noise_channels: 1,
            drift: Arc::new(move |x, out| out[0] = -theta * x[0]),
            diffusion: Arc::new(move |_, out| out[0] = sigma),
            label: "ou".into(),
        }
    }

    /// `dX = sin(2 pi X) dt + sqrt(1 + cos(2 pi X)/2) dW` on the unit circle.
    pub fn periodic_drift() -> Self {
        SdeModel {
            space: ConfigurationSpace::Torus(1),
            noise_channels: 1,
            drift: Arc::new(|x, out| out[0] = (2.0 * PI * x[0]).sin()),
            diffusion: Arc::new(|x, out| out[0] = (1.0 + 0.5 * (2.0 * PI * x[0]).cos()).sqrt()),
            label: "periodic-drift".into(),
        }
    }

    /// Built-in model by label. `theta`/`sigma` only apply to `ou`.
    pub fn from_label(label: &str, theta: f64, sigma: f64) -> Result<Self> {
        match label {
            "zero" => Ok(Self::zero(ConfigurationSpace::Torus(1))),
            "pure-diffusion" => Ok(Self::pure_diffusion(ConfigurationSpace::Torus(1))),
            "ou" => {
                if theta <= 0.0 {
                    return Err(Error::invalid("OU rate must be positive"));
                }
                Ok(Self::ornstein_uhlenbeck(theta, sigma))
            }
            "periodic-drift" => Ok(Self::periodic_drift()),
            other => Err(Error::invalid(format!("unknown model label `{other}`"))),
        }
    }

    pub fn space(&self) -> ConfigurationSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn noise_channels(&self) -> usize {
        self.noise_channels
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// Scalar drift for one-dimensional models.
    pub fn drift_1d(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.drift)(&[x], &mut out);
        out[0]
    }

    /// `sum_k b_k(x)^2` for one-dimensional models.
    pub fn diffusion_sq_1d(&self, x: f64) -> f64 {
        let mut out = vec![0.0; self.noise_channels];
        (self.diffusion)(&[x], &mut out);
        out.iter().map(|b| b * b).sum()
    }
}

/// Heat-equation solution started from `N(0, sigma0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WideningGaussianRef {
    pub sigma0: f64,
}

impl WideningGaussianRef {
    pub fn new(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::invalid("initial variance must be positive"));
        }
        Ok(WideningGaussianRef { sigma0 })
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.sigma0 + 2.0 * t
    }
}

pub fn widening_gaussian_density(t: f64, x: f64, reference: &WideningGaussianRef) -> f64 {
    debug_assert!(t >= 0.0);
    let v = reference.variance(t);
    (-x * x / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// `D(p(t+dt) || p(t))` for the widening Gaussian with current variance `sigma_t`.
pub fn widening_gaussian_entropy(sigma_t: f64, dt: f64) -> f64 {
    let h = 2.0 * dt / sigma_t;
    if h.abs() < 1e-2 {
        // h - ln(1+h) cancels badly here; alternating series to h^9
        let mut term = h * h;
        let mut acc = 0.0;
        for k in 2..=9 {
            acc += term / k as f64 * if k % 2 == 0 { 1.0 } else { -1.0 };
            term *= h;
        }
        return 0.5 * acc.max(0.0);
    }
    0.5 * (h - h.ln_1p()).max(0.0)
}

/// Mean and variance of the OU process started from the given moments.
pub fn ou_reference_moments(theta: f64, sigma: f64, x0_mean: f64, x0_var: f64, t: f64) -> (f64, f64) {
    let decay = (-theta * t).exp();
    let decay2 = (-2.0 * theta * t).exp();
    let mean = x0_mean * decay;
    let var = x0_var * decay2 - sigma * sigma * (-2.0 * theta * t).exp_m1() / (2.0 * theta);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn torus_distance_wraps() {
        let s = ConfigurationSpace::Torus(1);
        assert_relative_eq!(s.distance(&[0.95], &[0.05]), 0.1, epsilon = 1e-12);
        assert_relative_eq!(s.distance(&[0.2], &[0.4]), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn reduction_is_idempotent() {
        let s = ConfigurationSpace::Torus(1);
        for x in [-3.7, -1e-18, 0.0, 0.999_999, 1.0, 2.25, 1e6 + 0.5] {
            let r = s.reduce(x);
            assert!((0.0..1.0).contains(&r), "{x} -> {r}");
            assert_eq!(s.reduce(r), r);
        }
    }

    #[test]
    fn widening_density_values() {
        let r = WideningGaussianRef::new(1.0).unwrap();
        assert_relative_eq!(widening_gaussian_density(0.0, 0.0, &r), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(widening_gaussian_density(0.5, 0.0, &r), 0.282_094_791_773_878_14, epsilon = 1e-15);
    }

    #[test]
    fn widening_density_normalised() {
        let r = WideningGaussianRef::new(0.7).unwrap();
        for t in [0.0, 0.3, 2.0] {
            let h = 1e-3;
            let total: f64 = (-30_000..30_000)
                .map(|i| widening_gaussian_density(t, (i as f64 + 0.5) * h, &r) * h)
                .sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn widening_entropy_values() {
        assert_relative_eq!(
            widening_gaussian_entropy(1.0, 0.005),
            2.483_457_341_595_857_6e-5,
            max_relative = 1e-12
        );
        assert_eq!(widening_gaussian_entropy(2.0, 0.0), 0.0);
    }

    #[test]
    fn widening_entropy_ratio_increases_to_inverse_variance_squared() {
        // h^2/4 - h^3/6 + ... with h = 2 dt / sigma: the ratio approaches 1/sigma^2 from below
        for sigma in [0.5, 1.0, 3.0] {
            let mut prev = 0.0;
            let mut dt = 0.5;
            for _ in 0..30 {
                let ratio = widening_gaussian_entropy(sigma, dt) / (dt * dt);
                assert!(ratio > prev);
                assert!(widening_gaussian_entropy(sigma, dt) > 0.0);
                prev = ratio;
                dt *= 0.5;
            }
            assert_relative_eq!(prev, 1.0 / (sigma * sigma), max_relative = 1e-6);
        }
    }

    #[test]
    fn ou_moments() {
        let (m, v) = ou_reference_moments(1.0, 2f64.sqrt(), 0.0, 1.0, 3.7);
        assert_relative_eq!(m, 0.0);
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        let (m, v) = ou_reference_moments(1.0, 0.0, 1.0, 0.0, 1.0);
        assert_relative_eq!(m, (-1f64).exp(), epsilon = 1e-15);
        assert_eq!(v, 0.0);
        let (m, v) = ou_reference_moments(2.0, 1.0, 1.0, 0.5, 0.3);
        assert_relative_eq!(m, 0.548_811_636_094_026_4, epsilon = 1e-15);
        assert_relative_eq!(v, 0.325_298_552_978_050_5, epsilon = 1e-15);
    }

    #[test]
    fn built_in_models() {
        let m = SdeModel::periodic_drift();
        assert!(m.space().is_torus());
        assert_relative_eq!(m.drift_1d(0.25), 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.diffusion_sq_1d(0.0), 1.5, epsilon = 1e-15);
        assert_relative_eq!(SdeModel::pure_diffusion(ConfigurationSpace::Torus(1)).diffusion_sq_1d(0.3), 2.0, epsilon = 1e-15);
        assert!(SdeModel::from_label("nope", 1.0, 1.0).is_err());
        assert!(SdeModel::from_label("ou", -1.0, 1.0).is_err());
    }
}
