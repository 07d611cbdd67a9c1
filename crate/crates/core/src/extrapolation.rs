//! Coarse forward Euler for macroscopic states, closed by matching.

use crate::ensemble::WeightedEnsemble;
use crate::matching::{match_with_table, MatchOutcome, MatchStatus, SolverOptions};
use crate::restriction::{MacroState, RestrictionSet};
use crate::{Error, Result};

/// `m0 + (dt / dtau) (m1 - m0)`.
pub fn extrapolate(m0: &MacroState, m1: &MacroState, dtau: f64, dt: f64) -> Result<MacroState> {
    if m0.level() != m1.level() {
        return Err(Error::invalid("macro states of different levels"));
    }
    if !(dtau > 0.0) {
        return Err(Error::invalid("micro window must be positive"));
    }
    let r = dt / dtau;
    let v = m0.values().iter().zip(m1.values()).map(|(a, b)| a + r * (b - a)).collect();
    MacroState::new(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolationPlan {
    dt_macro: f64,
    window: f64,
    adaptive: bool,
    min_dt: f64,
    max_halvings: u32,
}

impl ExtrapolationPlan {
    /// Plan with `min_dt = window` and at most 30 halvings.
    pub fn new(dt_macro: f64, window: f64, adaptive: bool) -> Result<Self> {
        if !(window > 0.0 && dt_macro.is_finite()) {
            return Err(Error::invalid("micro window must be positive"));
        }
        if !(window <= dt_macro) {
            return Err(Error::invalid(format!("micro window {window} exceeds the macro step {dt_macro}")));
        }
        Ok(ExtrapolationPlan {
            dt_macro,
            window,
            adaptive,
            min_dt: window,
            max_halvings: 30,
        })
    }

    pub fn with_min_dt(mut self, min_dt: f64) -> Result<Self> {
        if !(min_dt > 0.0 && min_dt <= self.dt_macro) {
            return Err(Error::invalid("min_dt must lie in (0, dt_macro]"));
        }
        self.min_dt = min_dt;
        Ok(self)
    }

    pub fn with_max_halvings(mut self, n: u32) -> Self {
        self.max_halvings = n;
        self
    }

    pub fn dt_macro(&self) -> f64 {
        self.dt_macro
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn adaptive(&self) -> bool {
        self.adaptive
    }

    pub fn min_dt(&self) -> f64 {
        self.min_dt
    }

    pub fn max_halvings(&self) -> u32 {
        self.max_halvings
    }
}

/// Matching after extrapolation, with the step actually taken.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub outcome: MatchOutcome,
    pub dt_used: f64,
    pub halvings: u32,
}

/// Extrapolates `(m0, m1)` over the planned step and matches `prior` to it.
///
/// With `adaptive` set, an infeasible target halves the step and retries.
/// When the next halving would fall below `min_dt`, one last attempt is made
/// at exactly `min_dt`; if that also fails the step has collapsed. Without
/// `adaptive` the first outcome is returned whatever its status.
pub fn extrapolate_and_match(
    m0: &MacroState,
    m1: &MacroState,
    prior: &WeightedEnsemble,
    set: &RestrictionSet,
    plan: &ExtrapolationPlan,
    opts: &SolverOptions,
) -> Result<StepResult> {
    let table = set.evaluate(prior)?;
    let mut dt = plan.dt_macro;
    let mut halvings = 0;
    loop {
        let target = extrapolate(m0, m1, plan.window, dt)?;
        let outcome = match_with_table(&target, prior, &table, opts)?;
        if outcome.status != MatchStatus::Infeasible || !plan.adaptive {
            return Ok(StepResult { outcome, dt_used: dt, halvings });
        }
        if dt <= plan.min_dt || halvings >= plan.max_halvings {
            return Err(Error::StepCollapse { step: 0, min_dt: plan.min_dt });
        }
        dt = (0.5 * dt).max(plan.min_dt);
        halvings += 1;
    }
}
