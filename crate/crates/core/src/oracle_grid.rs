//! Deterministic grid oracle on a one-dimensional torus.
//!
//! Densities live on `M` midpoints of a periodic interval. The Fokker–Planck
//! operator `L* p = -(a p)' + (b^2 p / 2)''` is discretised with second-order
//! central differences; the same stencil is used to evolve densities and to
//! evaluate `L* p` for the Fisher information, so the entropy expansions can
//! be checked without time-differencing error.

use std::f64::consts::PI;

use nalgebra::{DVector, SymmetricEigen};

use crate::extrapolation::extrapolate;
use crate::fit::{asymptotic_order, quadratic_coefficient_limit};
use crate::matching::{solve_dual, weighted_covariance, weighted_mean, MatchStatus, Multipliers, SolverOptions};
use crate::restriction::{grid_moments, restrict_grid, MacroState, RestrictionSet};
use crate::space::{widening_gaussian_entropy, ConfigurationSpace, SdeModel};
use crate::{Error, Result};

/// Fraction of the explicit stability bound used when evolving over a span.
const EVOLVE_SAFETY: f64 = 0.5;

/// Periodic density on the midpoints `origin + (i + 1/2) h`, `h = length / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    values: Vec<f64>,
    origin: f64,
    length: f64,
}

impl GridDensity {
    pub fn uniform(m: usize, origin: f64, length: f64) -> Self {
        GridDensity {
            values: vec![1.0 / length; m],
            origin,
            length,
        }
    }

    /// Samples `f` at the midpoints and normalises.
    pub fn from_fn<F: Fn(f64) -> f64>(m: usize, origin: f64, length: f64, f: F) -> Result<Self> {
        let h = length / m as f64;
        let values = (0..m).map(|i| f(origin + (i as f64 + 0.5) * h)).collect();
        Self::from_values(values, origin, length)
    }

    /// Normalises nonnegative grid values to unit mass.
    pub fn from_values(mut values: Vec<f64>, origin: f64, length: f64) -> Result<Self> {
        if values.len() < 3 || !(length > 0.0) {
            return Err(Error::invalid("a grid needs at least three points and positive length"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("grid density values must be finite and nonnegative"));
        }
        let h = length / values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() * h;
        if !(mass > 0.0) {
            return Err(Error::invalid("grid density has zero mass"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(GridDensity { values, origin, length })
    }

    /// Wrapped normal on the unit circle.
    pub fn wrapped_normal(m: usize, mean: f64, std: f64) -> Result<Self> {
        Self::from_fn(m, 0.0, 1.0, |x| {
            (-12..=12)
                .map(|k| {
                    let d = x - mean + k as f64;
                    (-d * d / (2.0 * std * std)).exp()
                })
                .sum()
        })
    }

    /// `N(0, variance)` on the torus `[-length/2, length/2)`.
    pub fn centred_normal(m: usize, variance: f64, length: f64) -> Result<Self> {
        Self::from_fn(m, -0.5 * length, length, |x| (-x * x / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.values.len() as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.spacing()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }

    fn same_grid(&self, other: &GridDensity) -> bool {
        self.values.len() == other.values.len() && self.origin == other.origin && self.length == other.length
    }

    fn with_values(&self, values: Vec<f64>) -> GridDensity {
        GridDensity {
            values,
            origin: self.origin,
            length: self.length,
        }
    }
}

/// Central-difference Fokker–Planck operator for a model on a given grid.
#[derive(Debug, Clone)]
pub struct FokkerPlanck {
    drift: Vec<f64>,
    half_diffusion: Vec<f64>,
    h: f64,
    cfl_limit: f64,
}

impl FokkerPlanck {
    pub fn new(model: &SdeModel, grid: &GridDensity) -> Result<Self> {
        if model.space() != ConfigurationSpace::Torus(1) {
            return Err(Error::UnsupportedSpace {
                expected: "a model on the one-dimensional torus",
                found: model.space().describe(),
            });
        }
        let h = grid.spacing();
        let drift: Vec<f64> = (0..grid.len()).map(|i| model.drift_1d(grid.point(i))).collect();
        let b2: Vec<f64> = (0..grid.len()).map(|i| model.diffusion_sq_1d(grid.point(i))).collect();
        let max_b2 = b2.iter().cloned().fold(0.0, f64::max);
        let cfl_limit = if max_b2 > 0.0 { h * h / (2.0 * max_b2) } else { f64::INFINITY };
        Ok(FokkerPlanck {
            drift,
            half_diffusion: b2.iter().map(|v| 0.5 * v).collect(),
            h,
            cfl_limit,
        })
    }

    /// Largest explicit step allowed.
    pub fn cfl_limit(&self) -> f64 {
        self.cfl_limit
    }

    /// `L* p` evaluated with the central stencil.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let m = p.len();
        let (h, h2) = (self.h, self.h * self.h);
        (0..m)
            .map(|i| {
                let ip = (i + 1) % m;
                let im = (i + m - 1) % m;
                let adv = -(self.drift[ip] * p[ip] - self.drift[im] * p[im]) / (2.0 * h);
                let dif = (self.half_diffusion[ip] * p[ip] - 2.0 * self.half_diffusion[i] * p[i]
                    + self.half_diffusion[im] * p[im])
                    / h2;
                adv + dif
            })
            .collect()
    }

    /// One explicit Euler step.
    pub fn step(&self, p: &GridDensity, dt: f64) -> Result<GridDensity> {
        if !(dt > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        if dt > self.cfl_limit {
            return Err(Error::CflViolated { dt, limit: self.cfl_limit });
        }
        let lp = self.apply(&p.values);
        let mut next: Vec<f64> = p.values.iter().zip(&lp).map(|(v, l)| v + dt * l).collect();
        let mass = next.iter().sum::<f64>() * self.h;
        debug_assert!((mass - 1.0).abs() < 1e-12, "mass drift {}", mass - 1.0);
        next.iter_mut().for_each(|v| *v /= mass);
        Ok(p.with_values(next))
    }

    /// Evolves over `duration` with equal steps at half the stability bound.
    pub fn evolve(&self, p: &GridDensity, duration: f64) -> Result<GridDensity> {
        if duration == 0.0 {
            return Ok(p.clone());
        }
        let n = (duration / (EVOLVE_SAFETY * self.cfl_limit)).ceil().max(1.0) as usize;
        let dt = duration / n as f64;
        let mut cur = p.clone();
        for _ in 0..n {
            cur = self.step(&cur, dt)?;
        }
        Ok(cur)
    }
}

/// One explicit step of the Fokker–Planck equation on a periodic grid.
pub fn fp_step(p: &GridDensity, model: &SdeModel, dt: f64) -> Result<GridDensity> {
    FokkerPlanck::new(model, p)?.step(p, dt)
}

/// Result of a quadrature-based matching.
#[derive(Debug, Clone)]
pub struct GridMatch {
    pub density: GridDensity,
    pub multipliers: Multipliers,
    pub entropy: f64,
    pub status: MatchStatus,
    pub iterations: usize,
    pub residual: f64,
}

/// Matching against a grid prior: `p*_i ∝ p_i exp(lambda . phi(x_i))`.
pub fn grid_match(m: &MacroState, prior: &GridDensity, set: &RestrictionSet, opts: &SolverOptions) -> Result<GridMatch> {
    opts.validate()?;
    if m.level() != set.level() {
        return Err(Error::invalid("target level does not match the restriction set"));
    }
    let h = prior.spacing();
    let base: Vec<f64> = prior.values.iter().map(|v| v * h).collect();
    let table = grid_table(set, prior);
    let sol = solve_dual(&base, &table, m.values(), opts);
    let entropy = sol.entropy(m.values());
    let density = prior.with_values(sol.tilted.iter().map(|w| w / h).collect());
    Ok(GridMatch {
        density,
        multipliers: Multipliers {
            lambda: sol.lambda,
            log_partition: sol.log_partition,
        },
        entropy,
        status: sol.status,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

fn grid_table(set: &RestrictionSet, grid: &GridDensity) -> Vec<f64> {
    let mut table = Vec::with_capacity(grid.len() * set.level());
    for i in 0..grid.len() {
        let x = [grid.point(i)];
        table.extend(set.functions().iter().map(|f| f.eval(&x)));
    }
    table
}

/// `sum_i p_i ln(p_i / q_i) h`.
pub fn grid_entropy(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::invalid("densities live on different grids"));
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.values.iter().zip(&q.values).enumerate() {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::AbsoluteContinuityViolated { index: i });
        }
        acc += a * (a / b).ln();
    }
    Ok((acc * p.spacing()).max(0.0))
}

/// `sum_i |p_i - q_i| h`.
pub fn grid_total_variation(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::invalid("densities live on different grids"));
    }
    Ok(p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * p.spacing())
}

fn require_positive(p: &GridDensity) -> Result<()> {
    if p.values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("density must be strictly positive"));
    }
    Ok(())
}

/// Time Fisher information `E_p[(L* p / p)^2]`.
pub fn fisher_information(p: &GridDensity, model: &SdeModel) -> Result<f64> {
    require_positive(p)?;
    let lp = FokkerPlanck::new(model, p)?.apply(&p.values);
    Ok(lp.iter().zip(&p.values).map(|(l, v)| l * l / v).sum::<f64>() * p.spacing())
}

/// `g' Var_p(phi)^{-1} g` with `g = R(L* p)`: the part of the Fisher
/// information captured by the restriction functions.
pub fn matched_expansion_coefficient(p: &GridDensity, model: &SdeModel, set: &RestrictionSet) -> Result<f64> {
    require_positive(p)?;
    let lp = FokkerPlanck::new(model, p)?.apply(&p.values);
    let g = grid_moments(set, &lp, p);
    let h = p.spacing();
    let w: Vec<f64> = p.values.iter().map(|v| v * h).collect();
    let table = grid_table(set, p);
    let mean = weighted_mean(&w, &table, set.level());
    let var = weighted_covariance(&w, &table, &mean);
    let scale = var.trace().abs().max(f64::MIN_POSITIVE);
    let min_eig = SymmetricEigen::new(var.clone()).eigenvalues.min();
    if !(min_eig > 1e-14 * scale) {
        return Err(Error::SingularVariance);
    }
    let chol = var.cholesky().ok_or(Error::SingularVariance)?;
    let gv = DVector::from_vec(g);
    let x = chol.solve(&gv);
    Ok(gv.dot(&x).max(0.0))
}

/// How the micro window of the local error depends on the macro step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MicroWindow {
    /// Exact moments at `t + dt` matched onto `p(t)`.
    Zero,
    /// `dtau = fraction * dt`; moments extrapolated from `[t, t + dtau]` and
    /// matched onto `p(t + dtau)`.
    Fraction(f64),
}

/// A probe table plus its fitted summary.
#[derive(Debug, Clone)]
pub struct ProbeTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Weighted asymptotic log-log slope of the entropy column.
    pub slope: f64,
    /// Unweighted log-log slope of the entropy column.
    pub plain_slope: f64,
    /// Extrapolated `entropy / dt^2` as `dt -> 0`.
    pub limit: f64,
    /// Value of that limit predicted by the expansion.
    pub predicted: f64,
}

impl ProbeTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.rows.len());
        self.header.push(name.to_string());
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v);
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        use crate::ensemble::fmt_sci;
        writeln!(out, "{},fitted_slope,plain_slope,limit_estimate,predicted_limit", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .chain([self.slope, self.plain_slope, self.limit, self.predicted].iter())
                .map(|v| fmt_sci(*v))
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn summarise(header: Vec<&str>, rows: Vec<Vec<f64>>, entropy_col: usize, predicted: f64) -> Result<ProbeTable> {
    let dts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ent: Vec<f64> = rows.iter().map(|r| r[entropy_col]).collect();
    let order = asymptotic_order(&dts, &ent).ok_or_else(|| Error::invalid("probe needs at least two positive entries"))?;
    let limit = quadratic_coefficient_limit(&dts, &ent).ok_or_else(|| Error::invalid("probe needs distinct steps"))?;
    Ok(ProbeTable {
        header: header.into_iter().map(String::from).collect(),
        rows,
        slope: order.slope,
        plain_slope: order.plain_slope,
        limit,
        predicted,
    })
}

/// Geometric ladder `top, top/2, ...` of `points` steps, ascending.
pub fn step_ladder(top: f64, points: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..points).map(|k| top / 2f64.powi(k as i32)).collect();
    v.reverse();
    v
}

/// `D(p(t+dt) || M(R p(t+dt) or its extrapolation, prior))` over a step ladder.
pub fn local_error_probe(
    p: &GridDensity,
    model: &SdeModel,
    set: &RestrictionSet,
    dt_list: &[f64],
    window: MicroWindow,
    opts: &SolverOptions,
) -> Result<ProbeTable> {
    let fp = FokkerPlanck::new(model, p)?;
    let m0 = restrict_grid(set, p)?;
    let mut rows = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let exact = fp.evolve(p, dt)?;
        let (target, prior, dtau) = match window {
            MicroWindow::Zero => (restrict_grid(set, &exact)?, p.clone(), 0.0),
            MicroWindow::Fraction(r) => {
                let dtau = r * dt;
                let burst = fp.evolve(p, dtau)?;
                let m1 = restrict_grid(set, &burst)?;
                (extrapolate(&m0, &m1, dtau, dt)?, burst, dtau)
            }
        };
        let matched = grid_match(&target, &prior, set, opts)?;
        if matched.status != MatchStatus::Converged {
            return Err(Error::MatchFailed {
                status: matched.status,
                iterations: matched.iterations,
                residual: matched.residual,
            });
        }
        let d = grid_entropy(&exact, &matched.density)?;
        let tv = grid_total_variation(&exact, &matched.density)?;
        rows.push(vec![dt, dtau, d, tv, tv / dt, d / (dt * dt)]);
    }
    let fisher = fisher_information(p, model)?;
    let captured = matched_expansion_coefficient(p, model, set)?;
    summarise(
        vec!["dt", "dtau", "entropy", "tv", "tv_over_dt", "entropy_over_dt2"],
        rows,
        2,
        0.5 * (fisher - captured),
    )
}

/// `D(p(t+dt) || p(t))` against `dt^2 I / 2`.
pub fn entropy_expansion_probe(p: &GridDensity, model: &SdeModel, dt_list: &[f64]) -> Result<ProbeTable> {
    let fp = FokkerPlanck::new(model, p)?;
    let fisher = fisher_information(p, model)?;
    let mut rows = Vec::new();
    for &dt in dt_list {
        let next = fp.evolve(p, dt)?;
        let d = grid_entropy(&next, p)?;
        rows.push(vec![dt, d, 0.5 * fisher * dt * dt, d / (dt * dt)]);
    }
    summarise(vec!["dt", "entropy", "second_order", "entropy_over_dt2"], rows, 1, 0.5 * fisher)
}

/// `D(M(R p(t+dt), p(t)) || p(t))` against `dt^2 g' V^{-1} g / 2`.
pub fn matched_expansion_probe(
    p: &GridDensity,
    model: &SdeModel,
    set: &RestrictionSet,
    dt_list: &[f64],
    opts: &SolverOptions,
) -> Result<ProbeTable> {
    let fp = FokkerPlanck::new(model, p)?;
    let coef = matched_expansion_coefficient(p, model, set)?;
    let mut rows = Vec::new();
    for &dt in dt_list {
        let next = fp.evolve(p, dt)?;
        let matched = grid_match(&restrict_grid(set, &next)?, p, set, opts)?;
        if matched.status != MatchStatus::Converged {
            return Err(Error::MatchFailed {
                status: matched.status,
                iterations: matched.iterations,
                residual: matched.residual,
            });
        }
        let d = grid_entropy(&matched.density, p)?;
        rows.push(vec![dt, d, matched.entropy, 0.5 * coef * dt * dt, d / (dt * dt)]);
    }
    summarise(
        vec!["dt", "entropy", "dual_entropy", "second_order", "entropy_over_dt2"],
        rows,
        1,
        0.5 * coef,
    )
}

/// Widening Gaussian on a wide torus: discretised `N(0, sigma + 2 dt)` against
/// `N(0, sigma)` compared with the closed form.
pub fn widening_gaussian_probe(sigma: f64, dt_list: &[f64], m: usize, circumference: Option<f64>) -> Result<ProbeTable> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("variance must be positive"));
    }
    let t_max = dt_list.iter().cloned().fold(0.0, f64::max);
    let length = circumference.unwrap_or_else(|| wide_torus_circumference(sigma, t_max));
    let base = GridDensity::centred_normal(m, sigma, length)?;
    let mut rows = Vec::new();
    for &dt in dt_list {
        let wider = GridDensity::centred_normal(m, sigma + 2.0 * dt, length)?;
        let d = grid_entropy(&wider, &base)?;
        let closed = widening_gaussian_entropy(sigma, dt);
        rows.push(vec![dt, d, closed, (d - closed) / closed, d / (dt * dt)]);
    }
    summarise(
        vec!["dt", "entropy", "closed_form", "relative_error", "entropy_over_dt2"],
        rows,
        1,
        1.0 / (sigma * sigma),
    )
}

/// Circumference `40 sqrt(sigma + 2 t)` that makes wrap-around negligible.
pub fn wide_torus_circumference(sigma: f64, t: f64) -> f64 {
    40.0 * (sigma + 2.0 * t).sqrt()
}
