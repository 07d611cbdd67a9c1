//! Weighted particle ensembles and information functionals between ensembles
//! that share their particles.

use std::io::Write;

use rand::Rng;

use crate::rng::standard_normal;
use crate::space::ConfigurationSpace;
use crate::{Error, Result};

/// Weights below this are treated as exact zeros.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Particles with nonnegative weights summing to one.
///
/// Positions are stored row-major, `dim` coordinates per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    positions: Vec<f64>,
    weights: Vec<f64>,
    space: ConfigurationSpace,
    seed_lineage: String,
}

impl WeightedEnsemble {
    /// Equally weighted ensemble.
    pub fn uniform(positions: Vec<f64>, space: ConfigurationSpace, seed_lineage: impl Into<String>) -> Result<Self> {
        let n = positions.len() / space.dim().max(1);
        Self::new(positions, vec![1.0; n], space, seed_lineage)
    }

    /// Builds an ensemble, reducing positions to the fundamental domain and
    /// normalising the weights.
    pub fn new(
        mut positions: Vec<f64>,
        weights: Vec<f64>,
        space: ConfigurationSpace,
        seed_lineage: impl Into<String>,
    ) -> Result<Self> {
        let d = space.dim();
        if d == 0 || positions.len() % d != 0 {
            return Err(Error::invalid("position array does not match the dimension"));
        }
        let n = positions.len() / d;
        if n < 2 {
            return Err(Error::invalid("an ensemble needs at least two particles"));
        }
        if weights.len() != n {
            return Err(Error::invalid(format!("{} weights for {n} particles", weights.len())));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite position"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        space.reduce_in_place(&mut positions);
        let mut ens = WeightedEnsemble {
            positions,
            weights,
            space,
            seed_lineage: seed_lineage.into(),
        };
        ens.normalize()?;
        Ok(ens)
    }

    /// Draws `n` i.i.d. normal particles (wrapped on the torus), equally weighted.
    pub fn sample_normal<R: Rng + ?Sized>(
        n: usize,
        mean: f64,
        std: f64,
        space: ConfigurationSpace,
        rng: &mut R,
        seed_lineage: impl Into<String>,
    ) -> Result<Self> {
        let d = space.dim();
        let positions = (0..n * d).map(|_| mean + std * standard_normal(rng)).collect();
        Self::uniform(positions, space, seed_lineage)
    }

    fn normalize(&mut self) -> Result<()> {
        for w in &mut self.weights {
            if *w < WEIGHT_FLOOR {
                *w = 0.0;
            }
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights sum to zero"));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    /// Same particles, new weights (normalised).
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::invalid("weight vector length differs from particle count"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let mut ens = WeightedEnsemble {
            positions: self.positions.clone(),
            weights,
            space: self.space,
            seed_lineage: self.seed_lineage.clone(),
        };
        ens.normalize()?;
        Ok(ens)
    }

    /// Same weights, new positions (reduced to the fundamental domain).
    pub(crate) fn with_positions(&self, mut positions: Vec<f64>) -> Self {
        debug_assert_eq!(positions.len(), self.positions.len());
        self.space.reduce_in_place(&mut positions);
        WeightedEnsemble {
            positions,
            weights: self.weights.clone(),
            space: self.space,
            seed_lineage: self.seed_lineage.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> ConfigurationSpace {
        self.space
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[j * d..(j + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed_lineage(&self) -> &str {
        &self.seed_lineage
    }

    pub fn set_seed_lineage(&mut self, lineage: impl Into<String>) {
        self.seed_lineage = lineage.into();
    }

    /// True when both ensembles carry bit-identical positions.
    pub fn shares_support(&self, other: &WeightedEnsemble) -> bool {
        self.space == other.space && self.positions == other.positions
    }

    /// Writes one row per particle: `x_1..x_d,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).chain(["weight".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for j in 0..self.len() {
            for x in self.position(j) {
                write!(out, "{},", fmt_sci(*x))?;
            }
            writeln!(out, "{}", fmt_sci(self.weights[j]))?;
        }
        Ok(())
    }
}

/// 17 significant digits, scientific notation.
pub fn fmt_sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// `sum_j w_j f(x_j)` in index order.
pub fn expectation<F: Fn(&[f64]) -> f64>(ens: &WeightedEnsemble, f: F) -> f64 {
    let mut acc = 0.0;
    for (j, w) in ens.weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w * f(ens.position(j));
        }
    }
    acc
}

fn check_shared(nu: &WeightedEnsemble, mu: &WeightedEnsemble) -> Result<()> {
    if !nu.shares_support(mu) {
        return Err(Error::invalid("ensembles do not share their particles"));
    }
    Ok(())
}

/// `D(nu || mu) = sum_j nu_j ln(nu_j / mu_j)` over shared particles.
pub fn discrete_relative_entropy(nu: &WeightedEnsemble, mu: &WeightedEnsemble) -> Result<f64> {
    check_shared(nu, mu)?;
    relative_entropy_weights(&nu.weights, &mu.weights)
}

pub(crate) fn relative_entropy_weights(nu: &[f64], mu: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (j, (&p, &q)) in nu.iter().zip(mu).enumerate() {
        if p < WEIGHT_FLOOR {
            continue;
        }
        if q < WEIGHT_FLOOR {
            return Err(Error::AbsoluteContinuityViolated { index: j });
        }
        acc += p * (p / q).ln();
    }
    Ok(acc.max(0.0))
}

/// `sum_j |nu_j - mu_j|`, in `[0, 2]`.
pub fn total_variation(nu: &WeightedEnsemble, mu: &WeightedEnsemble) -> Result<f64> {
    check_shared(nu, mu)?;
    Ok(nu.weights.iter().zip(&mu.weights).map(|(a, b)| (a - b).abs()).sum())
}
