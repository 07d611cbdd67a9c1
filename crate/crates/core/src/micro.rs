//! Euler–Maruyama propagation of weighted ensembles.

use rand::Rng;

use crate::ensemble::WeightedEnsemble;
use crate::rng::standard_normal;
use crate::space::SdeModel;
use crate::{Error, Result};

/// A micro burst: `steps` Euler steps of size `window / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroConfig {
    window: f64,
    steps: usize,
}

impl MicroConfig {
    pub fn new(window: f64, steps: usize) -> Result<Self> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::invalid("micro window must be positive"));
        }
        if steps == 0 {
            return Err(Error::invalid("micro burst needs at least one step"));
        }
        Ok(MicroConfig { window, steps })
    }

    /// Burst whose step is `factor * window^2`, rounded up to a whole number of steps.
    pub fn quadratic(window: f64, factor: f64) -> Result<Self> {
        // the slack keeps exact ratios such as 1 / 0.05 from rounding up a step
        let steps = (1.0 / (factor * window) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(window, steps)
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt_micro(&self) -> f64 {
        self.window / self.steps as f64
    }
}

/// One Euler–Maruyama step. Variates are drawn particle by particle, channel
/// by channel, from `rng`; weights are carried over untouched.
pub fn em_step<R: Rng + ?Sized>(ens: &WeightedEnsemble, model: &SdeModel, dt: f64, rng: &mut R) -> Result<WeightedEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    if ens.space() != model.space() {
        return Err(Error::invalid("ensemble and model live on different spaces"));
    }
    let d = model.dim();
    let m = model.noise_channels();
    let sqrt_dt = dt.sqrt();
    let mut drift = vec![0.0; d];
    let mut diff = vec![0.0; d * m];
    let mut xi = vec![0.0; m];
    let mut out = Vec::with_capacity(ens.positions().len());
    for j in 0..ens.len() {
        let x = ens.position(j);
        model.drift(x, &mut drift);
        model.diffusion(x, &mut diff);
        for v in xi.iter_mut() {
            *v = standard_normal(rng);
        }
        for i in 0..d {
            let noise: f64 = (0..m).map(|k| diff[i * m + k] * xi[k]).sum();
            out.push(x[i] + drift[i] * dt + noise * sqrt_dt);
        }
    }
    Ok(ens.with_positions(out))
}

/// Applies `cfg.steps()` Euler steps and returns all intermediate ensembles,
/// the input first.
pub fn propagate<R: Rng + ?Sized>(
    ens: &WeightedEnsemble,
    model: &SdeModel,
    cfg: &MicroConfig,
    rng: &mut R,
) -> Result<Vec<WeightedEnsemble>> {
    let dt = cfg.dt_micro();
    let mut path = Vec::with_capacity(cfg.steps() + 1);
    path.push(ens.clone());
    for k in 0..cfg.steps() {
        let next = em_step(&path[k], model, dt, rng)?;
        path.push(next);
    }
    Ok(path)
}

/// Plain Euler–Maruyama for `n` steps of size `dt`, keeping only the end state.
pub fn advance<R: Rng + ?Sized>(
    ens: &WeightedEnsemble,
    model: &SdeModel,
    dt: f64,
    n: usize,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    let mut cur = ens.clone();
    for _ in 0..n {
        cur = em_step(&cur, model, dt, rng)?;
    }
    Ok(cur)
}
