//! Minimum relative entropy matching.
//!
//! Given a prior ensemble `mu` and target moments `m`, the matched ensemble
//! minimises `D(nu || mu)` subject to `E_nu[phi] = m`. Its weights are the
//! exponential tilt `w*_j = w_j exp(lambda . phi(x_j) - A(lambda))`, where the
//! multipliers solve `grad A(lambda) = m`. That system is the first-order
//! condition of the convex dual `g(lambda) = A(lambda) - lambda . m`, which we
//! minimise by damped Newton with Armijo backtracking. The particles never
//! move, so every quantity below is a finite sum over the prior's support.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::ensemble::{relative_entropy_weights, WeightedEnsemble};
use crate::restriction::{restrict, MacroState, RestrictionFn, RestrictionSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `max_l |grad_l A - m_l|` falls below this.
    pub tol_moment: f64,
    pub max_iter: usize,
    /// Multipliers beyond this norm are taken as a sign of an infeasible target.
    pub lambda_cap: f64,
    pub armijo_c: f64,
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_moment: 1e-10,
            max_iter: 100,
            lambda_cap: 50.0,
            armijo_c: 1e-4,
            min_step: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_moment > 0.0
            && self.max_iter > 0
            && self.lambda_cap > 0.0
            && self.armijo_c > 0.0
            && self.min_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("solver options must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    /// `A(lambda, mu) = ln E_mu[exp(lambda . phi)]`.
    pub log_partition: f64,
}

impl Multipliers {
    pub fn norm(&self) -> f64 {
        self.lambda.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStatus {
    Converged,
    Infeasible,
    MaxIterations,
}

impl MatchStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchStatus::Converged => "converged",
            MatchStatus::Infeasible => "infeasible",
            MatchStatus::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub multipliers: Multipliers,
    pub matched: WeightedEnsemble,
    pub target: MacroState,
    /// `D(matched || prior) = lambda . m - A`.
    pub entropy: f64,
    pub iterations: usize,
    /// `max_l |grad_l A - m_l|` at the returned multipliers.
    pub residual: f64,
    pub status: MatchStatus,
    /// Dual objective after each accepted iterate, starting at `lambda = 0`.
    pub objective_trace: Vec<f64>,
}

impl MatchOutcome {
    pub fn is_converged(&self) -> bool {
        self.status == MatchStatus::Converged
    }

    pub fn into_converged(self) -> Result<Self> {
        if self.is_converged() {
            Ok(self)
        } else {
            Err(self.failure())
        }
    }

    pub fn failure(&self) -> Error {
        Error::MatchFailed {
            status: self.status,
            iterations: self.iterations,
            residual: self.residual,
        }
    }
}

/// Exponential tilt of `base` by `lambda`. Returns `A` and the tilted,
/// normalised weights. The exponent is shifted by its maximum over the
/// support before exponentiating.
pub(crate) fn tilt(lambda: &[f64], base: &[f64], table: &[f64]) -> (f64, Vec<f64>) {
    let level = lambda.len();
    let mut expo = vec![f64::NEG_INFINITY; base.len()];
    let mut shift = f64::NEG_INFINITY;
    for (j, &w) in base.iter().enumerate() {
        if w > 0.0 {
            let row = &table[j * level..(j + 1) * level];
            let e: f64 = row.iter().zip(lambda).map(|(p, l)| p * l).sum();
            expo[j] = e;
            shift = shift.max(e);
        }
    }
    let mut tilted = vec![0.0; base.len()];
    let mut z = 0.0;
    for (j, &w) in base.iter().enumerate() {
        if w > 0.0 {
            let v = w * (expo[j] - shift).exp();
            tilted[j] = v;
            z += v;
        }
    }
    for v in &mut tilted {
        *v /= z;
    }
    (shift + z.ln(), tilted)
}

pub(crate) fn weighted_mean(weights: &[f64], table: &[f64], level: usize) -> Vec<f64> {
    let mut mean = vec![0.0; level];
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            for (l, m) in mean.iter_mut().enumerate() {
                *m += w * table[j * level + l];
            }
        }
    }
    mean
}

pub(crate) fn weighted_covariance(weights: &[f64], table: &[f64], mean: &[f64]) -> DMatrix<f64> {
    let level = mean.len();
    let mut cov = DMatrix::<f64>::zeros(level, level);
    let mut centred = vec![0.0; level];
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            for l in 0..level {
                centred[l] = table[j * level + l] - mean[l];
            }
            for a in 0..level {
                for b in 0..=a {
                    cov[(a, b)] += w * centred[a] * centred[b];
                }
            }
        }
    }
    for a in 0..level {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov
}

fn check_table(lambda: &[f64], prior: &WeightedEnsemble, table: &[f64]) -> Result<()> {
    if lambda.is_empty() || table.len() != prior.len() * lambda.len() {
        return Err(Error::invalid("evaluation table does not match J x L"));
    }
    Ok(())
}

/// `A(lambda, mu) = ln sum_j w_j exp(lambda . Phi_j)`.
pub fn log_partition(lambda: &[f64], prior: &WeightedEnsemble, table: &[f64]) -> Result<f64> {
    check_table(lambda, prior, table)?;
    Ok(tilt(lambda, prior.weights(), table).0)
}

/// `grad A = E_{P(lambda, mu)}[phi]`.
pub fn dual_gradient(lambda: &[f64], prior: &WeightedEnsemble, table: &[f64]) -> Result<Vec<f64>> {
    check_table(lambda, prior, table)?;
    let (_, w) = tilt(lambda, prior.weights(), table);
    Ok(weighted_mean(&w, table, lambda.len()))
}

/// `Hess A = Var_{P(lambda, mu)}(phi)`.
pub fn dual_hessian(lambda: &[f64], prior: &WeightedEnsemble, table: &[f64]) -> Result<DMatrix<f64>> {
    check_table(lambda, prior, table)?;
    let (_, w) = tilt(lambda, prior.weights(), table);
    let mean = weighted_mean(&w, table, lambda.len());
    Ok(weighted_covariance(&w, table, &mean))
}

/// Raw result of the dual solve on a weight vector.
#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub lambda: Vec<f64>,
    pub log_partition: f64,
    pub tilted: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub status: MatchStatus,
    pub trace: Vec<f64>,
}

impl DualSolution {
    pub fn entropy(&self, target: &[f64]) -> f64 {
        dot(&self.lambda, target) - self.log_partition
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Newton direction for `H d = -r`, ridge-regularised when `H` is nearly
/// singular; falls back to steepest descent if the solve still fails.
fn newton_direction(hess: DMatrix<f64>, r: &[f64]) -> Vec<f64> {
    let level = r.len();
    let mut h = hess;
    let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
    if !(min_eig >= 1e-12) {
        let ridge = 1e-12 * h.trace().max(f64::MIN_POSITIVE) / level as f64;
        for i in 0..level {
            h[(i, i)] += ridge;
        }
    }
    let rhs = DVector::from_iterator(level, r.iter().map(|v| -v));
    match h.cholesky() {
        Some(ch) => {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
            r.iter().map(|v| -v).collect()
        }
        None => r.iter().map(|v| -v).collect(),
    }
}

/// Minimises `A(lambda) - lambda . target` over `lambda`, starting at zero.
pub(crate) fn solve_dual(base: &[f64], table: &[f64], target: &[f64], opts: &SolverOptions) -> DualSolution {
    let level = target.len();
    let mut lambda = vec![0.0; level];
    let (mut a, mut w) = tilt(&lambda, base, table);
    let mut objective = a;
    let mut trace = vec![objective];
    let mut grad = weighted_mean(&w, table, level);
    let mut r: Vec<f64> = grad.iter().zip(target).map(|(g, m)| g - m).collect();
    let mut residual = max_abs(&r);
    let mut iterations = 0;

    let finish = |lambda: Vec<f64>, a: f64, w: Vec<f64>, iterations, residual, status, trace| DualSolution {
        lambda,
        log_partition: a,
        tilted: w,
        iterations,
        residual,
        status,
        trace,
    };

    loop {
        if residual <= opts.tol_moment {
            // One extra Newton step, kept only if it tightens the residual.
            if residual > 1e-14 {
                let d = newton_direction(weighted_covariance(&w, table, &grad), &r);
                let cand: Vec<f64> = lambda.iter().zip(&d).map(|(l, s)| l + s).collect();
                let (ca, cw) = tilt(&cand, base, table);
                let cg = weighted_mean(&cw, table, level);
                let cres = max_abs(&cg.iter().zip(target).map(|(g, m)| g - m).collect::<Vec<_>>());
                if cres < residual {
                    return finish(cand, ca, cw, iterations, cres, MatchStatus::Converged, trace);
                }
            }
            return finish(lambda, a, w, iterations, residual, MatchStatus::Converged, trace);
        }
        if iterations >= opts.max_iter {
            return finish(lambda, a, w, iterations, residual, MatchStatus::MaxIterations, trace);
        }
        iterations += 1;

        let mut d = newton_direction(weighted_covariance(&w, table, &grad), &r);
        let mut slope = dot(&r, &d);
        if !(slope < 0.0) {
            d = r.iter().map(|v| -v).collect();
            slope = -dot(&r, &r);
        }

        let mut step = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = lambda.iter().zip(&d).map(|(l, s)| l + step * s).collect();
            let (ca, cw) = tilt(&cand, base, table);
            let cobj = ca - dot(&cand, target);
            let predicted = opts.armijo_c * step * slope;
            if cobj.is_finite() && cobj <= objective + predicted {
                break Some((cand, ca, cw, cobj));
            }
            // Near the optimum the decrease drowns in round-off of `objective`;
            // fall back to the residual as the acceptance test.
            if cobj.is_finite() && predicted.abs() <= 1e-15 * (1.0 + objective.abs()) {
                let cg = weighted_mean(&cw, table, level);
                let cres = max_abs(&cg.iter().zip(target).map(|(g, m)| g - m).collect::<Vec<_>>());
                if cres < residual {
                    break Some((cand, ca, cw, cobj));
                }
            }
            step *= 0.5;
            if step < opts.min_step {
                break None;
            }
        };

        let Some((cand, ca, cw, cobj)) = accepted else {
            return finish(lambda, a, w, iterations, residual, MatchStatus::Infeasible, trace);
        };
        lambda = cand;
        a = ca;
        w = cw;
        objective = cobj;
        trace.push(objective);
        grad = weighted_mean(&w, table, level);
        r = grad.iter().zip(target).map(|(g, m)| g - m).collect();
        residual = max_abs(&r);
        if dot(&lambda, &lambda).sqrt() > opts.lambda_cap {
            return finish(lambda, a, w, iterations, residual, MatchStatus::Infeasible, trace);
        }
    }
}

/// The matching operator: reweights `prior` so that its `R`-moments equal `m`.
pub fn match_moments(
    m: &MacroState,
    prior: &WeightedEnsemble,
    set: &RestrictionSet,
    opts: &SolverOptions,
) -> Result<MatchOutcome> {
    let table = set.evaluate(prior)?;
    match_with_table(m, prior, &table, opts)
}

/// As [`match_moments`] with a precomputed `J x L` evaluation table.
pub fn match_with_table(
    m: &MacroState,
    prior: &WeightedEnsemble,
    table: &[f64],
    opts: &SolverOptions,
) -> Result<MatchOutcome> {
    opts.validate()?;
    if table.len() != prior.len() * m.level() {
        return Err(Error::invalid(format!(
            "target level {} does not match the restriction set",
            m.level()
        )));
    }
    let sol = solve_dual(prior.weights(), table, m.values(), opts);
    let entropy = sol.entropy(m.values());
    let matched = prior.reweighted(sol.tilted.clone())?;
    Ok(MatchOutcome {
        multipliers: Multipliers {
            lambda: sol.lambda,
            log_partition: sol.log_partition,
        },
        matched,
        target: m.clone(),
        entropy,
        iterations: sol.iterations,
        residual: sol.residual,
        status: sol.status,
        objective_trace: sol.trace,
    })
}

/// `D(nu || mu) - D(nu || mu*) - D(mu* || mu)` for a `nu` that satisfies the
/// constraints of `outcome`.
pub fn pythagorean_residual(
    nu: &WeightedEnsemble,
    prior: &WeightedEnsemble,
    outcome: &MatchOutcome,
    set: &RestrictionSet,
    moment_tol: f64,
) -> Result<f64> {
    if !outcome.is_converged() {
        return Err(outcome.failure());
    }
    let m_nu = restrict(set, nu)?;
    let gap = m_nu.max_abs_diff(&outcome.target);
    if m_nu.level() != outcome.target.level() || gap > moment_tol {
        return Err(Error::invalid(format!(
            "nu does not satisfy the matched moments (gap {gap:e})"
        )));
    }
    let d_nu_mu = relative_entropy_weights(nu.weights(), prior.weights())?;
    let d_nu_star = relative_entropy_weights(nu.weights(), outcome.matched.weights())?;
    let d_star_mu = relative_entropy_weights(outcome.matched.weights(), prior.weights())?;
    Ok(d_nu_mu - d_nu_star - d_star_mu)
}

/// Max-norm difference between matching with all `L+1` constraints at once
/// and matching the first `L` before the full set.
pub fn transitivity_check(
    m_ext: &MacroState,
    prior: &WeightedEnsemble,
    extended: &RestrictionSet,
    opts: &SolverOptions,
) -> Result<f64> {
    let level = extended.level();
    if level < 2 || m_ext.level() != level {
        return Err(Error::invalid("transitivity needs an extended set of level >= 2"));
    }
    let direct = match_moments(m_ext, prior, extended, opts)?.into_converged()?;
    let base = extended.prefix(level - 1)?;
    let first = match_moments(&m_ext.prefix(level - 1)?, prior, &base, opts)?.into_converged()?;
    let second = match_moments(m_ext, &first.matched, extended, opts)?.into_converged()?;
    Ok(direct
        .matched
        .weights()
        .iter()
        .zip(second.matched.weights())
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
}

/// Entropy gained by adding one restriction function.
#[derive(Debug, Clone)]
pub struct EntropyGain {
    /// `D(mu*_{L+1} || mu*_L)` computed from multipliers and log-partitions.
    pub gain: f64,
    pub base: MatchOutcome,
    pub extended: MatchOutcome,
}

fn gain_from(base: &MatchOutcome, extended: &MatchOutcome) -> f64 {
    let ext = &extended.multipliers;
    let b = &base.multipliers;
    dot(&ext.lambda, extended.target.values()) - dot(&b.lambda, base.target.values()) + b.log_partition
        - ext.log_partition
}

/// `lambda~ . m_{L+1} - lambda . m_L + A(lambda) - A(lambda~)`.
pub fn entropy_gain(
    prior: &WeightedEnsemble,
    base: &RestrictionSet,
    extended: &RestrictionSet,
    m_ext: &MacroState,
    opts: &SolverOptions,
) -> Result<EntropyGain> {
    if extended.level() != base.level() + 1 || m_ext.level() != extended.level() {
        return Err(Error::invalid("extended set must add exactly one function"));
    }
    let base_out = match_moments(&m_ext.prefix(base.level())?, prior, base, opts)?.into_converged()?;
    let ext_out = match_moments(m_ext, prior, extended, opts)?.into_converged()?;
    Ok(EntropyGain {
        gain: gain_from(&base_out, &ext_out),
        base: base_out,
        extended: ext_out,
    })
}

#[derive(Debug, Clone)]
pub struct GreedySelection {
    pub best: usize,
    /// Gain per candidate; `None` where the extension was infeasible.
    pub gains: Vec<Option<f64>>,
}

/// Picks the candidate whose addition gains the most entropy; ties go to the
/// lowest index.
pub fn greedy_select(
    prior: &WeightedEnsemble,
    base: &RestrictionSet,
    base_target: &MacroState,
    candidates: &[RestrictionFn],
    targets: &[f64],
    opts: &SolverOptions,
) -> Result<GreedySelection> {
    if candidates.is_empty() || candidates.len() != targets.len() {
        return Err(Error::invalid("need one target per candidate and at least one candidate"));
    }
    let base_out = match_moments(base_target, prior, base, opts)?.into_converged()?;
    let mut gains = Vec::with_capacity(candidates.len());
    for (cand, &target) in candidates.iter().zip(targets) {
        let ext = base.extended(cand.clone());
        let mut m = base_target.values().to_vec();
        m.push(target);
        let out = match_moments(&MacroState::new(m)?, prior, &ext, opts)?;
        gains.push(out.is_converged().then(|| gain_from(&base_out, &out)));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gains.iter().enumerate() {
        if let Some(g) = *g {
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((i, g));
            }
        }
    }
    match best {
        Some((best, _)) => Ok(GreedySelection { best, gains }),
        None => Err(Error::AllInfeasible),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{discrete_relative_entropy, WeightedEnsemble};
    use crate::rng::{stream, StreamId};
    use crate::space::ConfigurationSpace;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    const LINE: ConfigurationSpace = ConfigurationSpace::RealLine(1);
    const TORUS: ConfigurationSpace = ConfigurationSpace::Torus(1);

    fn identity_set() -> RestrictionSet {
        RestrictionSet::custom(vec![RestrictionFn::new("x", 1.0, Arc::new(|x| x[0]))], LINE).unwrap()
    }

    fn random_prior(n: usize, seed: u64) -> WeightedEnsemble {
        let mut rng = stream(seed, StreamId::Initial);
        let pos: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        WeightedEnsemble::new(pos, w, TORUS, "").unwrap()
    }

    fn random_target(prior: &WeightedEnsemble, set: &RestrictionSet, seed: u64) -> (WeightedEnsemble, MacroState) {
        let mut rng = stream(seed, StreamId::Perturbation);
        let w: Vec<f64> = prior.weights().iter().map(|w| w * (1.5 * rng.random::<f64>()).exp()).collect();
        let nu = prior.reweighted(w).unwrap();
        let m = restrict(set, &nu).unwrap();
        (nu, m)
    }

    #[test]
    fn log_partition_examples() {
        let prior = WeightedEnsemble::uniform(vec![0.0, 0.5], LINE, "").unwrap();
        let table = identity_set().evaluate(&prior).unwrap();
        assert_eq!(log_partition(&[0.0], &prior, &table).unwrap(), 0.0);
        assert_relative_eq!(log_partition(&[2.0], &prior, &table).unwrap(), 0.620_114_506_958_277_5, epsilon = 1e-15);
        assert_relative_eq!(dual_gradient(&[2.0], &prior, &table).unwrap()[0], 0.365_529_289_315_002_44, epsilon = 1e-15);
        let shifted: Vec<f64> = table.iter().map(|v| v + 0.7).collect();
        assert_relative_eq!(
            log_partition(&[2.0], &prior, &shifted).unwrap(),
            log_partition(&[2.0], &prior, &table).unwrap() + 1.4,
            epsilon = 1e-14
        );
    }

    #[test]
    fn log_partition_is_stable_for_large_exponents() {
        let prior = WeightedEnsemble::uniform(vec![0.0, 1.0], LINE, "").unwrap();
        let table = identity_set().evaluate(&prior).unwrap();
        let a = log_partition(&[900.0], &prior, &table).unwrap();
        assert_relative_eq!(a, 900.0 - 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_at_origin_is_prior_moment() {
        let prior = random_prior(50, 1);
        let set = RestrictionSet::trig_family(4, TORUS).unwrap();
        let table = set.evaluate(&prior).unwrap();
        let g = dual_gradient(&[0.0; 4], &prior, &table).unwrap();
        let m = restrict(&set, &prior).unwrap();
        for l in 0..4 {
            assert_relative_eq!(g[l], m.values()[l], epsilon = 1e-15);
        }
    }

    #[test]
    fn hessian_examples() {
        let prior = WeightedEnsemble::new(vec![0.0, 1.0], vec![0.3, 0.7], LINE, "").unwrap();
        let table = identity_set().evaluate(&prior).unwrap();
        let h = dual_hessian(&[0.0], &prior, &table).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.3 * 0.7, epsilon = 1e-15);

        let dup = RestrictionSet::trig_family(2, TORUS).unwrap().extended(RestrictionFn::sine(1));
        let prior = random_prior(30, 2);
        let h = dual_hessian(&[0.1, -0.2, 0.3], &prior, &dup.evaluate(&prior).unwrap()).unwrap();
        let eig = SymmetricEigen::new(h).eigenvalues;
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(e[0].abs() < 1e-14 && e[1] > 1e-4);
    }

    fn finite_difference_check(prior: &WeightedEnsemble, set: &RestrictionSet, lambda: &[f64]) -> (f64, f64) {
        let table = set.evaluate(prior).unwrap();
        let level = lambda.len();
        let eps = 1e-5;
        let grad = dual_gradient(lambda, prior, &table).unwrap();
        let hess = dual_hessian(lambda, prior, &table).unwrap();
        let (mut gerr, mut herr) = (0.0f64, 0.0f64);
        for l in 0..level {
            let mut up = lambda.to_vec();
            let mut dn = lambda.to_vec();
            up[l] += eps;
            dn[l] -= eps;
            let fd = (log_partition(&up, prior, &table).unwrap() - log_partition(&dn, prior, &table).unwrap()) / (2.0 * eps);
            gerr = gerr.max((fd - grad[l]).abs() / grad[l].abs().max(1e-3));
            let gu = dual_gradient(&up, prior, &table).unwrap();
            let gd = dual_gradient(&dn, prior, &table).unwrap();
            for k in 0..level {
                let fd = (gu[k] - gd[k]) / (2.0 * eps);
                herr = herr.max((fd - hess[(k, l)]).abs() / hess[(k, l)].abs().max(1e-3));
            }
        }
        (gerr, herr)
    }

    #[test]
    fn derivatives_match_central_differences() {
        let prior = random_prior(80, 3);
        let set = RestrictionSet::trig_family(4, TORUS).unwrap();
        let mut rng = stream(4, StreamId::Perturbation);
        for _ in 0..10 {
            let mut lambda: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = 5.0 * rng.random::<f64>();
            lambda.iter_mut().for_each(|v| *v *= r / n);
            let (g, h) = finite_difference_check(&prior, &set, &lambda);
            assert!(g < 1e-5 && h < 1e-5, "{g} {h}");
        }
    }

    #[test]
    fn matching_prior_moments_is_identity() {
        let prior = random_prior(40, 5);
        let set = RestrictionSet::trig_family(4, TORUS).unwrap();
        let out = match_moments(&restrict(&set, &prior).unwrap(), &prior, &set, &SolverOptions::default()).unwrap();
        assert!(out.is_converged());
        assert_eq!(out.iterations, 0);
        assert!(out.multipliers.lambda.iter().all(|v| *v == 0.0));
        assert_eq!(out.entropy, 0.0);
        for (a, b) in out.matched.weights().iter().zip(prior.weights()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-16);
        }
    }

    #[test]
    fn two_point_closed_form() {
        let prior = WeightedEnsemble::uniform(vec![0.0, 1.0], LINE, "").unwrap();
        let out = match_moments(&MacroState::new(vec![0.75]).unwrap(), &prior, &identity_set(), &SolverOptions::default()).unwrap();
        assert!(out.is_converged());
        assert_relative_eq!(out.matched.weights()[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(out.matched.weights()[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(out.multipliers.lambda[0], 3f64.ln(), epsilon = 1e-10);
        assert_relative_eq!(out.entropy, discrete_relative_entropy(&out.matched, &prior).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn target_outside_hull_is_infeasible() {
        let prior = WeightedEnsemble::uniform(vec![0.0, 0.4, 1.0], LINE, "").unwrap();
        for m in [1.2, -0.01, 1.0 + 1e-6] {
            let out = match_moments(&MacroState::new(vec![m]).unwrap(), &prior, &identity_set(), &SolverOptions::default()).unwrap();
            assert_eq!(out.status, MatchStatus::Infeasible, "m = {m}");
            assert!(out.into_converged().is_err());
        }
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let prior = random_prior(10, 6);
        let set = RestrictionSet::trig_family(2, TORUS).unwrap();
        assert!(match_moments(&MacroState::new(vec![0.0]).unwrap(), &prior, &set, &SolverOptions::default()).is_err());
    }

    #[test]
    fn max_iterations_status() {
        let prior = random_prior(100, 7);
        let set = RestrictionSet::trig_family(4, TORUS).unwrap();
        let (_, m) = random_target(&prior, &set, 7);
        let opts = SolverOptions { max_iter: 1, ..Default::default() };
        let out = match_moments(&m, &prior, &set, &opts).unwrap();
        assert_eq!(out.status, MatchStatus::MaxIterations);
    }

    #[test]
    fn pythagorean_identity_and_precondition() {
        let prior = random_prior(60, 8);
        let set = RestrictionSet::trig_family(2, TORUS).unwrap();
        let (nu, m) = random_target(&prior, &set, 8);
        let out = match_moments(&m, &prior, &set, &SolverOptions::default()).unwrap();
        assert!(pythagorean_residual(&nu, &prior, &out, &set, 1e-9).unwrap().abs() < 1e-8);
        assert!(pythagorean_residual(&out.matched, &prior, &out, &set, 1e-9).unwrap().abs() < 1e-12);

        let (other, _) = random_target(&prior, &set, 99);
        assert!(pythagorean_residual(&other, &prior, &out, &set, 1e-9).is_err());

        // nu from a further-constrained matching satisfies the first two moments
        let ext = RestrictionSet::trig_family(4, TORUS).unwrap();
        let (_, m4) = random_target(&prior, &ext, 9);
        let nu4 = match_moments(&m4, &prior, &ext, &SolverOptions::default()).unwrap().matched;
        let out2 = match_moments(&m4.prefix(2).unwrap(), &prior, &set, &SolverOptions::default()).unwrap();
        assert!(pythagorean_residual(&nu4, &prior, &out2, &set, 1e-9).unwrap().abs() < 1e-8);
    }

    #[test]
    fn transitivity_examples() {
        let prior = random_prior(10, 10);
        let ext = RestrictionSet::trig_family(2, TORUS).unwrap();
        let (_, m) = random_target(&prior, &ext, 10);
        assert!(transitivity_check(&m, &prior, &ext, &SolverOptions::default()).unwrap() < 1e-8);

        let base_m = restrict(&ext.prefix(1).unwrap(), &prior).unwrap().values()[0];
        let m = MacroState::new(vec![base_m, m.values()[1]]).unwrap();
        assert!(transitivity_check(&m, &prior, &ext, &SolverOptions::default()).unwrap() < 1e-8);

        let bad = MacroState::new(vec![0.0, 1.5]).unwrap();
        let direct = match_moments(&bad, &prior, &ext, &SolverOptions::default()).unwrap();
        assert_eq!(direct.status, MatchStatus::Infeasible);
        assert!(transitivity_check(&bad, &prior, &ext, &SolverOptions::default()).is_err());
    }

    #[test]
    fn entropy_gain_matches_direct_entropy() {
        let prior = random_prior(50, 11);
        let ext = RestrictionSet::trig_family(4, TORUS).unwrap().prefix(3).unwrap();
        let base = ext.prefix(2).unwrap();
        let (nu, m) = random_target(&prior, &ext, 11);
        let g = entropy_gain(&prior, &base, &ext, &m, &SolverOptions::default()).unwrap();
        let direct = discrete_relative_entropy(&g.extended.matched, &g.base.matched).unwrap();
        assert!((g.gain - direct).abs() < 1e-8);
        let via_target = discrete_relative_entropy(&nu, &g.base.matched).unwrap()
            - discrete_relative_entropy(&nu, &g.extended.matched).unwrap();
        assert!((g.gain - via_target).abs() < 1e-8);
    }

    #[test]
    fn satisfied_moment_gains_nothing() {
        let prior = random_prior(50, 12);
        let base = RestrictionSet::trig_family(2, TORUS).unwrap();
        let (_, m) = random_target(&prior, &base, 12);
        let star = match_moments(&m, &prior, &base, &SolverOptions::default()).unwrap();
        let extra = RestrictionFn::sine(2);
        let ext = base.extended(extra.clone());
        let already = restrict(&ext, &star.matched).unwrap();
        let g = entropy_gain(&prior, &base, &ext, &already, &SolverOptions::default()).unwrap();
        assert!(g.gain.abs() < 1e-12);
        assert!(g.extended.multipliers.lambda[2].abs() < 1e-8);
    }

    #[test]
    fn greedy_examples() {
        let prior = random_prior(20, 13);
        let base = RestrictionSet::trig_family(2, TORUS).unwrap();
        let (nu, m) = random_target(&prior, &base, 13);
        let star = match_moments(&m, &prior, &base, &SolverOptions::default()).unwrap();
        let opts = SolverOptions::default();

        let satisfied = RestrictionFn::cosine(2);
        let sat_target = crate::ensemble::expectation(&star.matched, |x| satisfied.eval(x));
        let informative = RestrictionFn::sine(2);
        let inf_target = crate::ensemble::expectation(&nu, |x| informative.eval(x)) + 0.05;
        let sel = greedy_select(&prior, &base, &m, &[satisfied, informative.clone()], &[sat_target, inf_target], &opts).unwrap();
        assert_eq!(sel.best, 1);

        let same = vec![informative.clone(), informative.clone(), informative];
        let sel = greedy_select(&prior, &base, &m, &same, &[inf_target; 3], &opts).unwrap();
        assert_eq!(sel.best, 0);

        let cands = vec![RestrictionFn::sine(2), RestrictionFn::cosine(2), RestrictionFn::sine(3)];
        let targets: Vec<f64> = cands.iter().map(|c| crate::ensemble::expectation(&nu, |x| c.eval(x))).collect();
        let sel = greedy_select(&prior, &base, &m, &cands, &targets, &opts).unwrap();
        let brute: Vec<f64> = cands
            .iter()
            .zip(&targets)
            .map(|(c, t)| {
                let ext = base.extended(c.clone());
                let mut mm = m.values().to_vec();
                mm.push(*t);
                let out = match_moments(&MacroState::new(mm).unwrap(), &prior, &ext, &opts).unwrap();
                discrete_relative_entropy(&out.matched, &star.matched).unwrap()
            })
            .collect();
        let best = (0..3).fold(0, |b, i| if brute[i] > brute[b] { i } else { b });
        assert_eq!(sel.best, best);
        for i in 0..3 {
            assert!((sel.gains[i].unwrap() - brute[i]).abs() < 1e-8);
        }

        let err = greedy_select(&prior, &base, &m, &[RestrictionFn::sine(2)], &[2.0], &opts);
        assert!(matches!(err, Err(Error::AllInfeasible)));
    }

    #[test]
    fn scaling_leaves_matched_weights_unchanged() {
        let prior = random_prior(200, 14);
        let set = RestrictionSet::trig_family(4, TORUS).unwrap();
        let (_, m) = random_target(&prior, &set, 14);
        let scaled_fns: Vec<RestrictionFn> = set
            .functions()
            .iter()
            .enumerate()
            .map(|(l, f)| {
                let f = f.clone();
                let s = (l + 1) as f64;
                RestrictionFn::new(format!("{}/{s}", f.name()), f.sup_norm() / s, Arc::new(move |x| f.eval(x) / s))
            })
            .collect();
        let scaled = RestrictionSet::custom(scaled_fns, TORUS).unwrap();
        let sm = MacroState::new(m.values().iter().enumerate().map(|(l, v)| v / (l + 1) as f64).collect()).unwrap();
        let a = match_moments(&m, &prior, &set, &SolverOptions::default()).unwrap();
        let b = match_moments(&sm, &prior, &scaled, &SolverOptions::default()).unwrap();
        for (x, y) in a.matched.weights().iter().zip(b.matched.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        for l in 0..4 {
            assert_relative_eq!(b.multipliers.lambda[l], (l + 1) as f64 * a.multipliers.lambda[l], max_relative = 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn converged_matching_invariants(seed in 0u64..10_000, half_level in 1usize..4) {
            let prior = random_prior(100, seed);
            let set = RestrictionSet::trig_family(2 * half_level, TORUS).unwrap();
            let (_, m) = random_target(&prior, &set, seed + 1);
            let out = match_moments(&m, &prior, &set, &SolverOptions::default()).unwrap();
            prop_assert!(out.is_converged());
            prop_assert!(restrict(&set, &out.matched).unwrap().max_abs_diff(&m) <= 1e-10);
            let direct = discrete_relative_entropy(&out.matched, &prior).unwrap();
            prop_assert!((out.entropy - direct).abs() <= 1e-10);
            for w in out.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-14);
            }
            for (a, b) in out.matched.weights().iter().zip(prior.weights()) {
                prop_assert_eq!(*a > 0.0, *b > 0.0);
            }
        }
    }
}
