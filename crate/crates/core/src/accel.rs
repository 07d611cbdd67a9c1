//! The accelerated scheme over a time horizon, the plain Euler–Maruyama
//! reference, and the error measurements that compare the two.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::ensemble::{expectation, fmt_sci, total_variation, WeightedEnsemble};
use crate::extrapolation::{extrapolate_and_match, ExtrapolationPlan};
use crate::matching::SolverOptions;
use crate::micro::{advance, propagate, MicroConfig};
use crate::restriction::{restrict, Family, MacroState, RestrictionFn, RestrictionSet};
use crate::rng::{lineage, stream, Stream, StreamId};
use crate::space::{ConfigurationSpace, SdeModel};
use crate::{Error, Result};

/// Relative slack when comparing accumulated times with the horizon.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AccelConfig {
    pub horizon: f64,
    pub dt_macro: f64,
    /// Micro window `dtau`.
    pub window: f64,
    /// Euler steps per burst.
    pub micro_steps: usize,
    pub particles: usize,
    pub family: Family,
    pub level: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub adaptive: bool,
    /// Smallest step the halving may reach; the window when unset.
    pub min_dt: Option<f64>,
    pub max_halvings: u32,
    pub initial_mean: f64,
    pub initial_std: f64,
    /// Step of the plain Euler reference; the micro step when unset.
    pub reference_dt: Option<f64>,
    /// Keep every burst state in the record, not only the endpoints.
    pub record_burst: bool,
}

impl AccelConfig {
    /// Defaults `dtau = dt / 4` and micro step `dtau^2`, adaptive halving on.
    pub fn new(horizon: f64, dt_macro: f64, family: Family, level: usize, particles: usize, seed: u64) -> Result<Self> {
        let window = dt_macro / 4.0;
        let micro = MicroConfig::quadratic(window, 1.0)?;
        let cfg = AccelConfig {
            horizon,
            dt_macro,
            window,
            micro_steps: micro.steps(),
            particles,
            family,
            level,
            seed,
            solver: SolverOptions::default(),
            adaptive: true,
            min_dt: None,
            max_halvings: 30,
            initial_mean: 0.5,
            initial_std: 0.1,
            reference_dt: None,
            record_burst: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.dt_macro > 0.0 && self.window > 0.0 && self.window <= self.dt_macro) {
            return Err(Error::invalid("need 0 < micro window <= macro step"));
        }
        if self.micro_steps == 0 || self.particles < 2 || self.level == 0 {
            return Err(Error::invalid("micro steps, particle count and level must be positive"));
        }
        if let Some(m) = self.min_dt {
            if !(m >= self.window && m <= self.dt_macro) {
                return Err(Error::invalid("min_dt must lie between the micro window and the macro step"));
            }
        }
        if let Some(r) = self.reference_dt {
            if !(r > 0.0) {
                return Err(Error::invalid("reference step must be positive"));
            }
        }
        if !(self.initial_std >= 0.0 && self.initial_mean.is_finite()) {
            return Err(Error::invalid("initial distribution parameters are invalid"));
        }
        self.solver.validate()
    }

    pub fn micro(&self) -> Result<MicroConfig> {
        MicroConfig::new(self.window, self.micro_steps)
    }

    pub fn plan(&self) -> Result<ExtrapolationPlan> {
        let plan = ExtrapolationPlan::new(self.dt_macro, self.window, self.adaptive)?.with_max_halvings(self.max_halvings);
        match self.min_dt {
            Some(m) => plan.with_min_dt(m),
            None => Ok(plan),
        }
    }

    pub fn restriction_set(&self, space: ConfigurationSpace) -> Result<RestrictionSet> {
        RestrictionSet::from_family(self.family, self.level, space)
    }

    /// `N = ceil(T / dt)` macro steps of the uniform mesh.
    pub fn nominal_steps(&self) -> usize {
        (self.horizon / self.dt_macro * (1.0 - TIME_SLACK)).ceil() as usize
    }

    pub fn reference_step(&self) -> f64 {
        self.reference_dt.unwrap_or(self.window / self.micro_steps as f64)
    }

    /// Equally weighted normal sample, wrapped on the torus.
    pub fn sample_initial(&self, space: ConfigurationSpace) -> Result<WeightedEnsemble> {
        WeightedEnsemble::sample_normal(
            self.particles,
            self.initial_mean,
            self.initial_std,
            space,
            &mut stream(self.seed, StreamId::Initial),
            lineage(self.seed, StreamId::Initial),
        )
    }
}

/// Everything recorded about one macro step.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroStepRecord {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub dt_used: f64,
    pub halvings: u32,
    /// Burst states `m_{n,0..K}`, or only the two endpoints when the burst is
    /// not recorded.
    pub burst: Vec<MacroState>,
    pub target: MacroState,
    pub lambda_norm: f64,
    /// `D(matched || last micro ensemble)`.
    pub entropy: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_time: Duration,
}

impl MacroStepRecord {
    pub fn start_state(&self) -> &MacroState {
        &self.burst[0]
    }

    pub fn burst_end(&self) -> &MacroState {
        self.burst.last().expect("burst has two states at least")
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub names: Vec<String>,
    pub steps: Vec<MacroStepRecord>,
    pub terminal: WeightedEnsemble,
}

impl TrajectoryRecord {
    pub fn final_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t_end)
    }

    pub fn mesh(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.t_end).collect()
    }

    pub fn max_entropy(&self) -> f64 {
        self.steps.iter().map(|s| s.entropy).fold(0.0, f64::max)
    }

    pub fn mean_lambda_norm(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.lambda_norm).sum::<f64>() / self.steps.len() as f64
    }

    /// One row per macro step. Wall times are left out so that reruns are
    /// byte-identical.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = ["step", "t_start", "t_end", "dt_used", "halvings", "iterations", "residual", "lambda_norm", "entropy"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for prefix in ["start", "burst_end", "target"] {
            header.extend(self.names.iter().map(|n| format!("{prefix}_{n}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut cells = vec![
                s.index.to_string(),
                fmt_sci(s.t_start),
                fmt_sci(s.t_end),
                fmt_sci(s.dt_used),
                s.halvings.to_string(),
                s.iterations.to_string(),
                fmt_sci(s.residual),
                fmt_sci(s.lambda_norm),
                fmt_sci(s.entropy),
            ];
            for m in [s.start_state(), s.burst_end(), &s.target] {
                cells.extend(m.values().iter().map(|v| fmt_sci(*v)));
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// A run that may have stopped early; the record holds the steps completed.
#[derive(Debug)]
pub struct PartialRun {
    pub record: TrajectoryRecord,
    pub error: Option<Error>,
}

/// Burst, restrict, extrapolate and match once.
pub fn accelerated_step(
    prior: &WeightedEnsemble,
    model: &SdeModel,
    micro: &MicroConfig,
    set: &RestrictionSet,
    plan: &ExtrapolationPlan,
    opts: &SolverOptions,
    rng: &mut Stream,
    record_burst: bool,
) -> Result<(WeightedEnsemble, MacroStepRecord)> {
    let started = Instant::now();
    let path = propagate(prior, model, micro, rng)?;
    let k = micro.steps();
    let burst = if record_burst {
        path.iter().map(|e| restrict(set, e)).collect::<Result<Vec<_>>>()?
    } else {
        vec![restrict(set, &path[0])?, restrict(set, &path[k])?]
    };
    let step = extrapolate_and_match(&burst[0], burst.last().unwrap(), &path[k], set, plan, opts)?;
    let out = step.outcome.into_converged()?;
    let record = MacroStepRecord {
        index: 0,
        t_start: 0.0,
        t_end: step.dt_used,
        dt_used: step.dt_used,
        halvings: step.halvings,
        burst,
        target: out.target,
        lambda_norm: out.multipliers.norm(),
        entropy: out.entropy,
        iterations: out.iterations,
        residual: out.residual,
        wall_time: started.elapsed(),
    };
    Ok((out.matched, record))
}

fn check_spaces(model: &SdeModel, initial: &WeightedEnsemble) -> Result<()> {
    if model.space() != initial.space() {
        return Err(Error::invalid("initial ensemble and model live on different spaces"));
    }
    Ok(())
}

/// Runs the accelerated scheme, calling `observe(step, t, ensemble)` after
/// every macro step. Stops at the first error and keeps what was done.
pub fn run_accelerated_observed<F>(cfg: &AccelConfig, model: &SdeModel, initial: &WeightedEnsemble, mut observe: F) -> Result<PartialRun>
where
    F: FnMut(usize, f64, &WeightedEnsemble),
{
    cfg.validate()?;
    check_spaces(model, initial)?;
    let set = cfg.restriction_set(model.space())?;
    let micro = cfg.micro()?;
    let plan = cfg.plan()?;
    let mut rng = stream(cfg.seed, StreamId::Accelerated);
    let mut cur = initial.clone();
    let mut steps = Vec::with_capacity(cfg.nominal_steps());
    let mut t = 0.0;
    let mut error = None;
    while t < cfg.horizon * (1.0 - TIME_SLACK) {
        let n = steps.len();
        match accelerated_step(&cur, model, &micro, &set, &plan, &cfg.solver, &mut rng, cfg.record_burst) {
            Ok((next, mut rec)) => {
                rec.index = n;
                rec.t_start = t;
                t += rec.dt_used;
                rec.t_end = t;
                observe(n, t, &next);
                steps.push(rec);
                cur = next;
            }
            Err(Error::StepCollapse { min_dt, .. }) => {
                error = Some(Error::StepCollapse { step: n, min_dt });
                break;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    cur.set_seed_lineage(format!("{}>{}", initial.seed_lineage(), lineage(cfg.seed, StreamId::Accelerated)));
    Ok(PartialRun {
        record: TrajectoryRecord {
            names: set.names(),
            steps,
            terminal: cur,
        },
        error,
    })
}

/// Runs the accelerated scheme to the horizon; the last step may overshoot
/// it by less than one macro step.
pub fn run_accelerated(cfg: &AccelConfig, model: &SdeModel, initial: &WeightedEnsemble) -> Result<TrajectoryRecord> {
    let run = run_accelerated_observed(cfg, model, initial, |_, _, _| {})?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.record),
    }
}

/// Plain Euler–Maruyama to `horizon`; `dt_fine` must divide it.
pub fn run_reference<R: Rng + ?Sized>(
    model: &SdeModel,
    initial: &WeightedEnsemble,
    horizon: f64,
    dt_fine: f64,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    check_spaces(model, initial)?;
    if !(dt_fine > 0.0 && horizon >= 0.0) {
        return Err(Error::invalid("reference step must be positive"));
    }
    let ratio = horizon / dt_fine;
    let n = ratio.round();
    if (ratio - n).abs() > TIME_SLACK * ratio.max(1.0) {
        return Err(Error::invalid(format!("reference step {dt_fine} does not divide {horizon}")));
    }
    advance(initial, model, dt_fine, n as usize, rng)
}

/// Plain Euler–Maruyama sampled at the times of `mesh`. Each segment is cut
/// into the fewest equal steps no longer than `dt_fine`.
pub fn reference_on_mesh<R: Rng + ?Sized>(
    model: &SdeModel,
    initial: &WeightedEnsemble,
    mesh: &[f64],
    dt_fine: f64,
    rng: &mut R,
) -> Result<Vec<WeightedEnsemble>> {
    check_spaces(model, initial)?;
    if !(dt_fine > 0.0) {
        return Err(Error::invalid("reference step must be positive"));
    }
    let mut out = Vec::with_capacity(mesh.len());
    let mut cur = initial.clone();
    let mut t = 0.0;
    for &tn in mesh {
        let seg = tn - t;
        if !(seg > 0.0) {
            return Err(Error::invalid("mesh times must increase from zero"));
        }
        let n = (seg / dt_fine * (1.0 - TIME_SLACK)).ceil().max(1.0) as usize;
        cur = advance(&cur, model, seg / n as f64, n, rng)?;
        out.push(cur.clone());
        t = tn;
    }
    Ok(out)
}

/// `|E_a f - E_b f|`.
pub fn weak_error<F: Fn(&[f64]) -> f64>(a: &WeightedEnsemble, b: &WeightedEnsemble, f: F) -> f64 {
    (expectation(a, &f) - expectation(b, &f)).abs()
}

/// Expectations of several observables, with their bootstrap standard errors.
fn estimates_with_noise(ens: &WeightedEnsemble, obs: &[RestrictionFn], resamples: usize, rng: &mut Stream) -> (Vec<f64>, Vec<f64>) {
    let l = obs.len();
    let j = ens.len();
    let mut table = Vec::with_capacity(j * l);
    for i in 0..j {
        let x = ens.position(i);
        table.extend(obs.iter().map(|f| f.eval(x)));
    }
    let w = ens.weights();
    let mean: Vec<f64> = (0..l).map(|k| (0..j).map(|i| w[i] * table[i * l + k]).sum()).collect();
    if resamples < 2 {
        return (mean, vec![0.0; l]);
    }
    let mut sum = vec![0.0; l];
    let mut sum_sq = vec![0.0; l];
    let mut acc = vec![0.0; l];
    for _ in 0..resamples {
        acc.fill(0.0);
        let mut total = 0.0;
        for _ in 0..j {
            let i = rng.random_range(0..j);
            total += w[i];
            for k in 0..l {
                acc[k] += w[i] * table[i * l + k];
            }
        }
        for k in 0..l {
            let e = if total > 0.0 { acc[k] / total } else { 0.0 };
            sum[k] += e;
            sum_sq[k] += e * e;
        }
    }
    let b = resamples as f64;
    let se = (0..l)
        .map(|k| ((sum_sq[k] - sum[k] * sum[k] / b) / (b - 1.0)).max(0.0).sqrt())
        .collect();
    (mean, se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    MacroStep,
    Level,
    Particles,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "macro-step" => Some(SweepAxis::MacroStep),
            "level" => Some(SweepAxis::Level),
            "particles" => Some(SweepAxis::Particles),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::MacroStep => "macro-step",
            SweepAxis::Level => "level",
            SweepAxis::Particles => "particles",
        }
    }

    /// Copy of `base` with this axis set to `value`. The macro-step axis keeps
    /// the ratio of window to step and the ratio of micro step to squared window.
    pub fn apply(&self, base: &AccelConfig, value: f64) -> Result<AccelConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::MacroStep => {
                let dt_micro = base.window / base.micro_steps as f64;
                let factor = dt_micro / (base.window * base.window);
                cfg.dt_macro = value;
                cfg.window = value * base.window / base.dt_macro;
                cfg.micro_steps = MicroConfig::quadratic(cfg.window, factor)?.steps();
                cfg.min_dt = base.min_dt.map(|m| m * value / base.dt_macro);
            }
            SweepAxis::Level => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("level {value} is not a positive integer")));
                }
                cfg.level = value as usize;
            }
            SweepAxis::Particles => {
                if !(value >= 2.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("particle count {value} is not an integer >= 2")));
                }
                cfg.particles = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    /// Why the row failed, if it did.
    pub failure: Option<String>,
    pub steps: usize,
    /// Sup over the mesh of the weak error, per observable.
    pub errors: Vec<f64>,
    /// Bootstrap standard error of that difference at the worst mesh point.
    pub noise: Vec<f64>,
    pub mean_lambda_norm: f64,
    pub max_entropy: f64,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub observables: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// A rise of the error between consecutive successful rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendViolation {
    pub row: usize,
    pub observable: usize,
    pub rise: f64,
    pub allowed: f64,
}

impl SweepTable {
    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| r.is_ok()).count()
    }

    /// Consecutive rows whose error grows by more than `factor` times the
    /// combined noise of the two rows.
    pub fn trend_violations(&self, factor: f64) -> Vec<TrendViolation> {
        let ok: Vec<(usize, &SweepRow)> = self.rows.iter().enumerate().filter(|(_, r)| r.is_ok()).collect();
        let mut out = Vec::new();
        for pair in ok.windows(2) {
            let (_, a) = pair[0];
            let (i, b) = pair[1];
            for k in 0..self.observables.len() {
                let rise = b.errors[k] - a.errors[k];
                let allowed = factor * a.noise[k].hypot(b.noise[k]);
                if rise > allowed {
                    out.push(TrendViolation { row: i, observable: k, rise, allowed });
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec![
            "axis".to_string(),
            "value".into(),
            "status".into(),
            "steps".into(),
            "mean_lambda_norm".into(),
            "max_entropy".into(),
        ];
        header.extend(self.observables.iter().map(|n| format!("err_{n}")));
        header.extend(self.observables.iter().map(|n| format!("noise_{n}")));
        header.push("note".into());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cells = vec![
                self.axis.as_str().to_string(),
                fmt_sci(r.value),
                if r.is_ok() { "ok".into() } else { "failed".into() },
                r.steps.to_string(),
                fmt_sci(r.mean_lambda_norm),
                fmt_sci(r.max_entropy),
            ];
            let pad = |v: &[f64]| -> Vec<String> {
                if r.is_ok() {
                    v.iter().map(|x| fmt_sci(*x)).collect()
                } else {
                    vec![String::new(); self.observables.len()]
                }
            };
            cells.extend(pad(&r.errors));
            cells.extend(pad(&r.noise));
            cells.push(r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";"));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// The restriction functions of `cfg` plus a bump at 1/4 that no family
/// member resolves exactly.
pub fn default_observables(cfg: &AccelConfig, space: ConfigurationSpace) -> Result<Vec<RestrictionFn>> {
    let mut obs = cfg.restriction_set(space)?.functions().to_vec();
    if space.is_torus() {
        obs.push(RestrictionFn::bump(0.25, 0.1));
    }
    Ok(obs)
}

fn sweep_row(cfg: &AccelConfig, model: &SdeModel, obs: &[RestrictionFn], resamples: usize) -> Result<SweepRow> {
    let initial = cfg.sample_initial(model.space())?;
    let mut boot = stream(cfg.seed, StreamId::Bootstrap);
    let mut accelerated = Vec::new();
    let run = run_accelerated_observed(cfg, model, &initial, |_, _, ens| {
        accelerated.push(estimates_with_noise(ens, obs, resamples, &mut boot));
    })?;
    if let Some(e) = run.error {
        return Err(e);
    }
    let mesh = run.record.mesh();
    let reference = reference_on_mesh(model, &initial, &mesh, cfg.reference_step(), &mut stream(cfg.seed, StreamId::Reference))?;
    let mut errors = vec![0.0; obs.len()];
    let mut noise = vec![0.0; obs.len()];
    for ((acc_mean, acc_se), ref_ens) in accelerated.iter().zip(&reference) {
        let (ref_mean, ref_se) = estimates_with_noise(ref_ens, obs, resamples, &mut boot);
        for k in 0..obs.len() {
            let e = (acc_mean[k] - ref_mean[k]).abs();
            if e >= errors[k] {
                errors[k] = e;
                noise[k] = acc_se[k].hypot(ref_se[k]);
            }
        }
    }
    Ok(SweepRow {
        value: f64::NAN,
        failure: None,
        steps: run.record.steps.len(),
        errors,
        noise,
        mean_lambda_norm: run.record.mean_lambda_norm(),
        max_entropy: run.record.max_entropy(),
    })
}

/// Runs accelerated and reference simulations for each axis value. The
/// reference uses its own substream, so both runs contribute Monte Carlo
/// noise; `resamples` bootstrap draws estimate it. A failing row is recorded
/// and the sweep moves on.
pub fn convergence_sweep(
    base: &AccelConfig,
    model: &SdeModel,
    axis: SweepAxis,
    values: &[f64],
    observables: &[RestrictionFn],
    resamples: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if observables.is_empty() {
        return Err(Error::invalid("sweep needs at least one observable"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let row = axis.apply(base, v).and_then(|cfg| sweep_row(&cfg, model, observables, resamples));
        rows.push(match row {
            Ok(mut r) => {
                r.value = v;
                r
            }
            Err(e) => SweepRow {
                value: v,
                failure: Some(e.to_string()),
                steps: 0,
                errors: Vec::new(),
                noise: Vec::new(),
                mean_lambda_norm: f64::NAN,
                max_entropy: f64::NAN,
            },
        });
    }
    Ok(SweepTable {
        axis,
        observables: observables.iter().map(|f| f.name().to_string()).collect(),
        rows,
    })
}

/// Output of one accelerated step from a prior and from a perturbed copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRow {
    pub eps: f64,
    pub tv_in: f64,
    pub tv_out: f64,
    pub dt_used: f64,
}

impl PerturbationRow {
    /// `(tv_out / tv_in - 1) / dt`.
    pub fn growth_rate(&self) -> f64 {
        (self.tv_out / self.tv_in - 1.0) / self.dt_used
    }
}

/// `mu_j (1 + eps s_j)` with `s = +1` left of the weighted median of the
/// first coordinate and `-1` right of it, renormalised.
pub fn median_split_perturbation(prior: &WeightedEnsemble, eps: f64) -> Result<WeightedEnsemble> {
    let mut order: Vec<usize> = (0..prior.len()).collect();
    order.sort_by(|&a, &b| prior.position(a)[0].total_cmp(&prior.position(b)[0]).then(a.cmp(&b)));
    let mut sign = vec![-1.0; prior.len()];
    let mut mass = 0.0;
    for &j in &order {
        if mass >= 0.5 {
            break;
        }
        sign[j] = 1.0;
        mass += prior.weights()[j];
    }
    let w = prior.weights().iter().zip(&sign).map(|(w, s)| w * (1.0 + eps * s)).collect();
    prior.reweighted(w)
}

/// One accelerated step applied to `prior` and to each median-split
/// perturbation of it, with common random numbers so that the outputs share
/// their particles.
pub fn perturbation_probe(cfg: &AccelConfig, model: &SdeModel, prior: &WeightedEnsemble, eps: &[f64]) -> Result<Vec<PerturbationRow>> {
    cfg.validate()?;
    check_spaces(model, prior)?;
    let set = cfg.restriction_set(model.space())?;
    let micro = cfg.micro()?;
    let plan = cfg.plan()?;
    let rng = stream(cfg.seed, StreamId::Perturbation);
    let (base_out, base_rec) = accelerated_step(prior, model, &micro, &set, &plan, &cfg.solver, &mut rng.clone(), false)?;
    let mut rows = Vec::with_capacity(eps.len());
    for &e in eps {
        let nu = median_split_perturbation(prior, e)?;
        let (out, rec) = accelerated_step(&nu, model, &micro, &set, &plan, &cfg.solver, &mut rng.clone(), false)?;
        if rec.dt_used != base_rec.dt_used {
            return Err(Error::invalid("perturbed and unperturbed steps used different macro steps"));
        }
        rows.push(PerturbationRow {
            eps: e,
            tv_in: total_variation(&nu, prior)?,
            tv_out: total_variation(&out, &base_out)?,
            dt_used: rec.dt_used,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ou_reference_moments;
    use approx::assert_relative_eq;

    const TORUS: ConfigurationSpace = ConfigurationSpace::Torus(1);

    fn small_cfg() -> AccelConfig {
        let mut cfg = AccelConfig::new(0.2, 0.05, Family::Trigonometric, 2, 2000, 7).unwrap();
        cfg.initial_std = 0.15;
        cfg
    }

    #[test]
    fn config_defaults() {
        let cfg = small_cfg();
        assert_eq!(cfg.window, 0.0125);
        assert_eq!(cfg.micro_steps, 80);
        assert_eq!(cfg.nominal_steps(), 4);
        let mut odd = cfg.clone();
        odd.dt_macro = 0.03;
        assert_eq!(odd.nominal_steps(), 7);
        let mut bad = cfg.clone();
        bad.window = 0.1;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.min_dt = Some(0.001);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_dynamics_are_constant() {
        let cfg = small_cfg();
        let model = SdeModel::zero(TORUS);
        let initial = cfg.sample_initial(TORUS).unwrap();
        let rec = run_accelerated(&cfg, &model, &initial).unwrap();
        assert_eq!(rec.steps.len(), 4);
        for s in &rec.steps {
            assert!(s.entropy < 1e-12);
            assert_eq!(s.halvings, 0);
            for m in &s.burst {
                assert_eq!(m, s.start_state());
            }
            assert!(s.target.max_abs_diff(s.start_state()) < 1e-15);
        }
        assert!(rec.final_time() >= cfg.horizon * (1.0 - 1e-12));
        assert_eq!(rec.terminal.positions(), initial.positions());
    }

    #[test]
    fn degenerates_to_plain_euler_when_window_equals_step() {
        let mut cfg = small_cfg();
        cfg.window = cfg.dt_macro;
        cfg.micro_steps = 10;
        let model = SdeModel::periodic_drift();
        let initial = cfg.sample_initial(TORUS).unwrap();
        let rec = run_accelerated(&cfg, &model, &initial).unwrap();
        let plain = advance(&initial, &model, cfg.dt_macro / 10.0, 40, &mut stream(cfg.seed, StreamId::Accelerated)).unwrap();
        assert_eq!(rec.terminal.positions(), plain.positions());
        let set = cfg.restriction_set(TORUS).unwrap();
        let a = restrict(&set, &rec.terminal).unwrap();
        let b = restrict(&set, &plain).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        for s in &rec.steps {
            assert!(s.lambda_norm < 1e-8, "{}", s.lambda_norm);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = small_cfg();
        let model = SdeModel::periodic_drift();
        let initial = cfg.sample_initial(TORUS).unwrap();
        let a = run_accelerated(&cfg, &model, &initial).unwrap();
        let b = run_accelerated(&cfg, &model, &initial).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.terminal, b.terminal);
        assert!(a.steps.iter().all(|s| s.entropy >= 0.0));
        assert_eq!(a.steps[0].burst.len(), cfg.micro_steps + 1);
    }

    #[test]
    fn pure_diffusion_follows_coarse_euler_of_the_first_mode() {
        // Under pure diffusion E[cos 2 pi x] decays at rate 4 pi^2 exactly,
        // so each macro step multiplies it by 1 - (dt/dtau)(1 - exp(-4 pi^2 dtau)).
        // The burst increment carries sampling noise of about 2e-3 at this J,
        // which the extrapolation multiplies by dt / dtau = 4.
        let mut cfg = AccelConfig::new(0.1, 0.025, Family::Trigonometric, 2, 100_000, 3).unwrap();
        cfg.initial_std = 0.15;
        cfg.record_burst = false;
        let model = SdeModel::pure_diffusion(TORUS);
        let initial = cfg.sample_initial(TORUS).unwrap();
        let cos1 = RestrictionFn::cosine(1);
        let mut path = Vec::new();
        run_accelerated_observed(&cfg, &model, &initial, |_, _, e| path.push(expectation(e, |x| cos1.eval(x)))).unwrap();
        let gamma = 4.0 * std::f64::consts::PI.powi(2);
        let factor = 1.0 - cfg.dt_macro / cfg.window * (1.0 - (-gamma * cfg.window).exp());
        let mut predicted = expectation(&initial, |x| cos1.eval(x));
        assert_eq!(path.len(), 4);
        for m in path {
            predicted *= factor;
            assert!((m - predicted).abs() < 0.03, "{m} {predicted}");
        }
    }

    #[test]
    fn pure_diffusion_terminal_moments_match_reference() {
        let mut cfg = AccelConfig::new(0.5, 0.05, Family::Trigonometric, 2, 100_000, 3).unwrap();
        cfg.initial_std = 0.15;
        cfg.record_burst = false;
        let model = SdeModel::pure_diffusion(TORUS);
        let initial = cfg.sample_initial(TORUS).unwrap();
        let rec = run_accelerated(&cfg, &model, &initial).unwrap();
        let reference = run_reference(&model, &initial, rec.final_time(), 0.005, &mut stream(cfg.seed, StreamId::Reference)).unwrap();
        // both sides are near equilibrium; the accelerated estimate carries the
        // extrapolated burst noise of the last step, about 4 * 2e-3
        let tol = 0.03;
        for f in default_observables(&cfg, TORUS).unwrap() {
            let e = weak_error(&rec.terminal, &reference, |x| f.eval(x));
            assert!(e < tol, "{} {e}", f.name());
        }
    }

    #[test]
    fn reference_examples() {
        let initial = WeightedEnsemble::uniform(vec![0.1, 0.2, 0.7], TORUS, "").unwrap();
        let out = run_reference(&SdeModel::zero(TORUS), &initial, 1.0, 0.25, &mut stream(1, StreamId::Reference)).unwrap();
        assert_eq!(out, initial);
        assert!(run_reference(&SdeModel::zero(TORUS), &initial, 1.0, 0.3, &mut stream(1, StreamId::Reference)).is_err());

        let line = ConfigurationSpace::RealLine(1);
        let start = WeightedEnsemble::uniform(vec![2.0; 200_000], line, "").unwrap();
        let model = SdeModel::ornstein_uhlenbeck(1.0, 0.5);
        let out = run_reference(&model, &start, 0.5, 0.005, &mut stream(2, StreamId::Reference)).unwrap();
        let (mean, var) = ou_reference_moments(1.0, 0.5, 2.0, 0.0, 0.5);
        let sample_mean = expectation(&out, |x| x[0]);
        // Euler bias is about 0.003 at this step and the noise sd about 8e-4
        let se = (var / 200_000.0).sqrt();
        assert!((sample_mean - mean).abs() < 0.003 + 4.0 * se, "{sample_mean} {mean}");
    }

    #[test]
    fn mesh_reference_hits_mesh_times() {
        let initial = WeightedEnsemble::uniform(vec![0.3, 0.6], TORUS, "").unwrap();
        let out = reference_on_mesh(&SdeModel::zero(TORUS), &initial, &[0.1, 0.15, 0.3], 0.04, &mut stream(1, StreamId::Reference)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(reference_on_mesh(&SdeModel::zero(TORUS), &initial, &[0.1, 0.1], 0.04, &mut stream(1, StreamId::Reference)).is_err());
    }

    #[test]
    fn weak_error_examples() {
        let line = ConfigurationSpace::RealLine(1);
        let a = WeightedEnsemble::new(vec![0.0, 1.0], vec![0.25, 0.75], line, "").unwrap();
        let b = WeightedEnsemble::new(vec![0.0, 2.0], vec![0.5, 0.5], line, "").unwrap();
        assert_eq!(weak_error(&a, &a, |x| x[0]), 0.0);
        assert_eq!(weak_error(&a, &b, |_| 3.0), 0.0);
        // 0.75 vs 1.0
        assert_relative_eq!(weak_error(&a, &b, |x| x[0]), 0.25, epsilon = 1e-15);
        // 0.75 vs 2.0
        assert_relative_eq!(weak_error(&a, &b, |x| x[0] * x[0]), 1.25, epsilon = 1e-15);
    }

    #[test]
    fn singleton_sweep_matches_direct_run() {
        let mut cfg = small_cfg();
        cfg.record_burst = false;
        let model = SdeModel::periodic_drift();
        let obs = default_observables(&cfg, TORUS).unwrap();
        let table = convergence_sweep(&cfg, &model, SweepAxis::Level, &[2.0], &obs, 0).unwrap();
        let row = &table.rows[0];
        let initial = cfg.sample_initial(TORUS).unwrap();
        let direct = run_accelerated(&cfg, &model, &initial).unwrap();
        assert_eq!(row.steps, direct.steps.len());
        assert_eq!(row.max_entropy, direct.max_entropy());
        let reference = reference_on_mesh(&model, &initial, &direct.mesh(), cfg.reference_step(), &mut stream(cfg.seed, StreamId::Reference)).unwrap();
        let last = reference.last().unwrap();
        let e = weak_error(&direct.terminal, last, |x| obs[0].eval(x));
        assert!(row.errors[0] >= e);
    }

    #[test]
    fn failed_rows_do_not_abort() {
        let cfg = small_cfg();
        let model = SdeModel::periodic_drift();
        let obs = default_observables(&cfg, TORUS).unwrap();
        let table = convergence_sweep(&cfg, &model, SweepAxis::Level, &[3.0, 2.0], &obs, 0).unwrap();
        assert!(!table.rows[0].is_ok());
        assert!(table.rows[1].is_ok());
        assert_eq!(table.succeeded(), 1);
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains(",failed,"));
    }

    #[test]
    fn trend_check() {
        let row = |e: f64, n: f64| SweepRow {
            value: 0.0,
            failure: None,
            steps: 1,
            errors: vec![e],
            noise: vec![n],
            mean_lambda_norm: 0.0,
            max_entropy: 0.0,
        };
        let table = SweepTable {
            axis: SweepAxis::MacroStep,
            observables: vec!["f".into()],
            rows: vec![row(0.1, 0.01), row(0.12, 0.01), row(0.2, 0.01)],
        };
        let v = table.trend_violations(2.0);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, 2);
    }

    #[test]
    fn perturbation_has_requested_size() {
        let cfg = small_cfg();
        let prior = cfg.sample_initial(TORUS).unwrap();
        for eps in [0.2, 0.05] {
            let nu = median_split_perturbation(&prior, eps).unwrap();
            assert_relative_eq!(total_variation(&nu, &prior).unwrap(), eps, max_relative = 1e-12);
        }
        let rows = perturbation_probe(&cfg, &SdeModel::periodic_drift(), &prior, &[0.1]).unwrap();
        assert!(rows[0].tv_out > 0.0 && rows[0].growth_rate().is_finite());
    }
}
