//! Restriction operators: maps from distributions to vectors of moments.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::ensemble::WeightedEnsemble;
use crate::oracle_grid::GridDensity;
use crate::space::ConfigurationSpace;
use crate::{Error, Result};

/// Minimum eigenvalue of the Gram matrix of `{1, phi_1, .., phi_L}`.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-10;
const GRAM_POINTS: usize = 2048;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A bounded, named state function.
#[derive(Clone)]
pub struct RestrictionFn {
    name: String,
    sup_norm: f64,
    f: ScalarFn,
}

impl fmt::Debug for RestrictionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RestrictionFn({})", self.name)
    }
}

impl RestrictionFn {
    /// `sup_norm` is an upper bound on `|f|` over the space.
    pub fn new(name: impl Into<String>, sup_norm: f64, f: ScalarFn) -> Self {
        RestrictionFn {
            name: name.into(),
            sup_norm,
            f,
        }
    }

    /// `sin(2 pi k x) / k` on the unit circle.
    pub fn sine(k: u32) -> Self {
        let kf = k as f64;
        Self::new(format!("sin{k}"), 1.0 / kf, Arc::new(move |x| (2.0 * PI * kf * x[0]).sin() / kf))
    }

    /// `cos(2 pi k x) / k` on the unit circle.
    pub fn cosine(k: u32) -> Self {
        let kf = k as f64;
        Self::new(format!("cos{k}"), 1.0 / kf, Arc::new(move |x| (2.0 * PI * kf * x[0]).cos() / kf))
    }

    /// `y^l / l` with the circle identified with `(0, 1]`.
    pub fn scaled_power(l: u32) -> Self {
        let lf = l as f64;
        Self::new(
            format!("pow{l}"),
            1.0 / lf,
            Arc::new(move |x| {
                let y = if x[0] == 0.0 { 1.0 } else { x[0] };
                y.powi(l as i32) / lf
            }),
        )
    }

    /// Periodic Gaussian bump `exp(-dist(x, center)^2 / (2 width^2))` on the unit circle.
    pub fn bump(center: f64, width: f64) -> Self {
        Self::new(
            format!("bump_c{center}_w{width}"),
            1.0,
            Arc::new(move |x| {
                let r = ConfigurationSpace::Torus(1).distance(x, &[center]);
                (-r * r / (2.0 * width * width)).exp()
            }),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Trigonometric,
    ScaledPower,
    Custom,
}

impl Family {
    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "trig" | "trigonometric" => Some(Family::Trigonometric),
            "power" | "scaled-power" => Some(Family::ScaledPower),
            _ => None,
        }
    }
}

/// Ordered list of restriction functions. Any prefix is again a valid set.
#[derive(Debug, Clone)]
pub struct RestrictionSet {
    functions: Vec<RestrictionFn>,
    family: Family,
    space: ConfigurationSpace,
}

impl RestrictionSet {
    /// Custom set; linear independence of `{1, phi}` is checked on a dense grid.
    pub fn custom(functions: Vec<RestrictionFn>, space: ConfigurationSpace) -> Result<Self> {
        let set = RestrictionSet {
            functions,
            family: Family::Custom,
            space,
        };
        set.validate()?;
        Ok(set)
    }

    /// `sin(2 pi k x)/k, cos(2 pi k x)/k` for `k = 1..L/2`.
    pub fn trig_family(level: usize, space: ConfigurationSpace) -> Result<Self> {
        if space != ConfigurationSpace::Torus(1) {
            return Err(Error::UnsupportedSpace {
                expected: "the one-dimensional torus",
                found: space.describe(),
            });
        }
        if level == 0 || level % 2 != 0 {
            return Err(Error::invalid("trigonometric level must be a positive even number"));
        }
        let functions = (1..=(level / 2) as u32)
            .flat_map(|k| [RestrictionFn::sine(k), RestrictionFn::cosine(k)])
            .collect();
        let set = RestrictionSet {
            functions,
            family: Family::Trigonometric,
            space,
        };
        set.validate()?;
        Ok(set)
    }

    /// `x^l / l` for `l = 1..L`, torus only.
    pub fn scaled_power_family(level: usize, space: ConfigurationSpace) -> Result<Self> {
        if space != ConfigurationSpace::Torus(1) {
            return Err(Error::UnsupportedSpace {
                expected: "the one-dimensional torus (unbounded powers are not supported)",
                found: space.describe(),
            });
        }
        if level == 0 {
            return Err(Error::invalid("level must be positive"));
        }
        let set = RestrictionSet {
            functions: (1..=level as u32).map(RestrictionFn::scaled_power).collect(),
            family: Family::ScaledPower,
            space,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn from_family(family: Family, level: usize, space: ConfigurationSpace) -> Result<Self> {
        match family {
            Family::Trigonometric => Self::trig_family(level, space),
            Family::ScaledPower => Self::scaled_power_family(level, space),
            Family::Custom => Err(Error::invalid("custom families need explicit functions")),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::invalid("a restriction set needs at least one function"));
        }
        if self.space.dim() != 1 {
            // grid check is one-dimensional
            return Ok(());
        }
        let (lo, width) = match self.space {
            ConfigurationSpace::Torus(_) => (0.0, 1.0),
            ConfigurationSpace::RealLine(_) => (-5.0, 10.0),
        };
        let h = width / GRAM_POINTS as f64;
        let n = self.functions.len() + 1;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut row = vec![0.0; n];
        for i in 0..GRAM_POINTS {
            let x = [lo + (i as f64 + 0.5) * h];
            row[0] = 1.0;
            for (l, f) in self.functions.iter().enumerate() {
                row[l + 1] = f.eval(&x);
            }
            for a in 0..n {
                for b in 0..n {
                    gram[(a, b)] += row[a] * row[b] / GRAM_POINTS as f64;
                }
            }
        }
        let min = SymmetricEigen::new(gram).eigenvalues.min();
        if !(min > INDEPENDENCE_THRESHOLD) {
            return Err(Error::DependentRestrictions { min_eigenvalue: min });
        }
        Ok(())
    }

    pub fn level(&self) -> usize {
        self.functions.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn space(&self) -> ConfigurationSpace {
        self.space
    }

    pub fn functions(&self) -> &[RestrictionFn] {
        &self.functions
    }

    pub fn names(&self) -> Vec<String> {
        self.functions.iter().map(|f| f.name.clone()).collect()
    }

    /// The first `level` functions.
    pub fn prefix(&self, level: usize) -> Result<Self> {
        if level == 0 || level > self.level() {
            return Err(Error::invalid(format!("prefix {level} of a level-{} set", self.level())));
        }
        Ok(RestrictionSet {
            functions: self.functions[..level].to_vec(),
            family: self.family,
            space: self.space,
        })
    }

    /// Appends one function without re-running the independence check; the
    /// matching solver tolerates a degenerate extension.
    pub fn extended(&self, extra: RestrictionFn) -> Self {
        let mut functions = self.functions.clone();
        functions.push(extra);
        RestrictionSet {
            functions,
            family: Family::Custom,
            space: self.space,
        }
    }

    /// Row-major `J x L` table of `phi_l(x_j)`.
    pub fn evaluate(&self, ens: &WeightedEnsemble) -> Result<Vec<f64>> {
        if ens.space() != self.space {
            return Err(Error::invalid("restriction set and ensemble live on different spaces"));
        }
        let mut table = Vec::with_capacity(ens.len() * self.level());
        for j in 0..ens.len() {
            let x = ens.position(j);
            table.extend(self.functions.iter().map(|f| f.eval(x)));
        }
        Ok(table)
    }
}

/// Vector of macroscopic state variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    m: Vec<f64>,
}

impl MacroState {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("macro state must be a nonempty finite vector"));
        }
        Ok(MacroState { m })
    }

    pub fn level(&self) -> usize {
        self.m.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    pub fn prefix(&self, level: usize) -> Result<Self> {
        if level == 0 || level > self.level() {
            return Err(Error::invalid("prefix longer than macro state"));
        }
        Ok(MacroState { m: self.m[..level].to_vec() })
    }

    pub fn max_abs_diff(&self, other: &MacroState) -> f64 {
        self.m.iter().zip(&other.m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `m_l = sum_j w_j phi_l(x_j)`.
pub fn restrict(set: &RestrictionSet, ens: &WeightedEnsemble) -> Result<MacroState> {
    if ens.space() != set.space {
        return Err(Error::invalid("restriction set and ensemble live on different spaces"));
    }
    let mut m = vec![0.0; set.level()];
    for (j, &w) in ens.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let x = ens.position(j);
        for (l, f) in set.functions.iter().enumerate() {
            m[l] += w * f.eval(x);
        }
    }
    MacroState::new(m)
}

/// Midpoint quadrature `sum_i p_i phi_l(x_i) h`.
pub fn restrict_grid(set: &RestrictionSet, p: &GridDensity) -> Result<MacroState> {
    MacroState::new(grid_moments(set, p.values(), p))
}

/// Quadrature of `phi` against arbitrary grid values (not necessarily a density).
pub(crate) fn grid_moments(set: &RestrictionSet, values: &[f64], grid: &GridDensity) -> Vec<f64> {
    let h = grid.spacing();
    let mut m = vec![0.0; set.level()];
    for (i, &v) in values.iter().enumerate() {
        let x = [grid.point(i)];
        for (l, f) in set.functions.iter().enumerate() {
            m[l] += v * f.eval(&x) * h;
        }
    }
    m
}
