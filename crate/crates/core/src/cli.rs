//! Batch front-end: flat `key = value` configs, experiment dispatch, CSV
//! outputs and a run manifest.
//!
//! Outputs go to the directory named by `MICROMACRO_OUT` (default
//! `micromacro-out`). Exit codes: 0 success, 2 configuration or usage error,
//! 3 failure of the numerics.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::accel::{convergence_sweep, default_observables, run_accelerated_observed, AccelConfig, SweepAxis};
use crate::ensemble::{discrete_relative_entropy, fmt_sci, WeightedEnsemble};
use crate::extrapolation::extrapolate;
use crate::matching::{greedy_select, match_moments, SolverOptions};
use crate::micro::propagate;
use crate::oracle_grid::{
    entropy_expansion_probe, local_error_probe, matched_expansion_probe, step_ladder, wide_torus_circumference,
    widening_gaussian_probe, FokkerPlanck, GridDensity, MicroWindow, ProbeTable,
};
use crate::restriction::{restrict, Family, MacroState, RestrictionFn};
use crate::rng::{stream, StreamId};
use crate::space::{widening_gaussian_entropy, SdeModel};
use crate::{Error, Result};

pub const OUTPUT_DIR_VAR: &str = "MICROMACRO_OUT";

const KNOWN_KEYS: &[&str] = &[
    "model.label",
    "model.theta",
    "model.sigma",
    "macro.dt",
    "macro.horizon",
    "micro.window",
    "micro.k",
    "restriction.family",
    "restriction.level",
    "ensemble.j",
    "ensemble.seed",
    "initial.mean",
    "initial.std",
    "solver.tol",
    "solver.max-iter",
    "solver.lambda-cap",
    "solver.armijo",
    "solver.min-step",
    "adaptive.enabled",
    "adaptive.min-dt",
    "adaptive.max-halvings",
    "reference.dt",
    "sweep.resamples",
    "oracle.grid-m",
    "oracle.circumference",
    "oracle.t",
    "oracle.sigma0",
    "oracle.dt-max",
    "oracle.points",
    "oracle.window-fraction",
    "moment-gain.candidates",
    "moment-gain.step",
];

/// Parsed `key = value` lines. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::BadValue {
                key: format!("line {}", n + 1),
                message: "expected `key = value`".into(),
            })?;
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::BadValue { key, message: "unknown key".into() });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::BadValue { key, message: "given twice".into() });
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        v.parse::<T>().map_err(|e| Error::BadValue {
            key: key.to_string(),
            message: e.to_string(),
        })
    }

    pub fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        self.parse_value(key, v)
    }

    pub fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| self.parse_value(key, v)).transpose()
    }

    pub fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.optional(key)?.unwrap_or(default))
    }

    /// Echo in key order.
    pub fn echo(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn model(&self) -> Result<SdeModel> {
        let label = self.require("model.label")?;
        SdeModel::from_label(label, self.or("model.theta", 1.0)?, self.or("model.sigma", 1.0)?).map_err(|e| Error::BadValue {
            key: "model.label".into(),
            message: e.to_string(),
        })
    }

    pub fn solver(&self) -> Result<SolverOptions> {
        let d = SolverOptions::default();
        let opts = SolverOptions {
            tol_moment: self.or("solver.tol", d.tol_moment)?,
            max_iter: self.or("solver.max-iter", d.max_iter)?,
            lambda_cap: self.or("solver.lambda-cap", d.lambda_cap)?,
            armijo_c: self.or("solver.armijo", d.armijo_c)?,
            min_step: self.or("solver.min-step", d.min_step)?,
        };
        opts.validate().map_err(|e| Error::BadValue {
            key: "solver".into(),
            message: e.to_string(),
        })?;
        Ok(opts)
    }

    pub fn family(&self) -> Result<Family> {
        let s = self.get("restriction.family").unwrap_or("trig");
        Family::parse(s).ok_or_else(|| Error::BadValue {
            key: "restriction.family".into(),
            message: format!("unknown family `{s}`"),
        })
    }

    pub fn accel(&self) -> Result<AccelConfig> {
        let horizon: f64 = self.required("macro.horizon")?;
        let dt: f64 = self.required("macro.dt")?;
        let level: usize = self.required("restriction.level")?;
        let particles: usize = self.required("ensemble.j")?;
        let seed: u64 = self.required("ensemble.seed")?;
        let bad = |e: Error| Error::BadValue {
            key: "macro".into(),
            message: e.to_string(),
        };
        let mut cfg = AccelConfig::new(horizon, dt, self.family()?, level, particles, seed).map_err(bad)?;
        if let Some(w) = self.optional::<f64>("micro.window")? {
            cfg.window = w;
            cfg.micro_steps = crate::micro::MicroConfig::quadratic(w, 1.0).map_err(bad)?.steps();
        }
        cfg.micro_steps = self.or("micro.k", cfg.micro_steps)?;
        cfg.solver = self.solver()?;
        cfg.adaptive = self.or("adaptive.enabled", true)?;
        cfg.min_dt = self.optional("adaptive.min-dt")?;
        cfg.max_halvings = self.or("adaptive.max-halvings", cfg.max_halvings)?;
        cfg.initial_mean = self.or("initial.mean", cfg.initial_mean)?;
        cfg.initial_std = self.or("initial.std", cfg.initial_std)?;
        cfg.reference_dt = self.optional("reference.dt")?;
        cfg.validate().map_err(bad)?;
        Ok(cfg)
    }
}

/// What went wrong, and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::MissingKey(_) | Error::BadValue { .. } | Error::Io(_) => 2,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError { code: 2, message: message.into() }
}

/// Files written by a command and notes on anything that went wrong.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    config_path: PathBuf,
    config_echo: String,
    seed: Option<u64>,
    started: u64,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    fn new(command: &str, config_path: &Path, config: &Config) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.to_path_buf(),
            config_echo: config.echo(),
            seed: config.get("ensemble.seed").and_then(|s| s.parse().ok()),
            started: unix_seconds(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.txt");
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "command = {}", self.command)?;
        writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "config = {}", self.config_path.display())?;
        match self.seed {
            Some(s) => writeln!(out, "seed = {s}")?,
            None => writeln!(out, "seed = none")?,
        }
        writeln!(out, "started = {}", self.started)?;
        writeln!(out, "finished = {}", unix_seconds())?;
        for p in &self.outputs {
            writeln!(out, "output = {}", p.display())?;
        }
        writeln!(out, "output = {}", path.display())?;
        for n in &self.notes {
            writeln!(out, "note = {}", n.replace('\n', " "))?;
        }
        writeln!(out, "[config]")?;
        write!(out, "{}", self.config_echo)?;
        out.flush()?;
        Ok(path)
    }
}

fn write_file<F>(dir: &Path, name: &str, manifest: &mut RunManifest, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = dir.join(name);
    let mut out = BufWriter::new(File::create(&path)?);
    body(&mut out)?;
    out.flush()?;
    manifest.outputs.push(path);
    Ok(())
}

/// Runs `body`, then writes the manifest whether or not it succeeded.
fn with_manifest<F>(command: &str, config_path: &Path, out_dir: &Path, body: F) -> std::result::Result<(), CliError>
where
    F: FnOnce(&Config, &mut RunManifest) -> std::result::Result<(), CliError>,
{
    let config = Config::load(config_path)?;
    fs::create_dir_all(out_dir).map_err(Error::from)?;
    let mut manifest = RunManifest::new(command, config_path, &config);
    let result = body(&config, &mut manifest);
    if let Err(e) = &result {
        manifest.notes.push(format!("exit {}: {}", e.code, e.message));
    }
    manifest.write(out_dir).map_err(Error::from)?;
    result
}

/// Single accelerated run: trajectory, terminal ensemble, manifest.
pub fn cmd_run(config_path: &Path, out_dir: &Path) -> std::result::Result<(), CliError> {
    with_manifest("run", config_path, out_dir, |config, manifest| {
        let model = config.model()?;
        let cfg = config.accel()?;
        let initial = cfg.sample_initial(model.space())?;
        let run = run_accelerated_observed(&cfg, &model, &initial, |_, _, _| {})?;
        write_file(out_dir, "trajectory.csv", manifest, |out| run.record.write_csv(out))?;
        write_file(out_dir, "terminal_ensemble.csv", manifest, |out| run.record.terminal.write_csv(out))?;
        match run.error {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// Parses `v1,v2,...`.
pub fn parse_values(s: &str) -> std::result::Result<Vec<f64>, CliError> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err(usage("--values needs at least one value"));
    }
    items
        .iter()
        .map(|t| t.parse::<f64>().map_err(|e| usage(format!("bad sweep value `{t}`: {e}"))))
        .collect()
}

pub fn cmd_sweep(config_path: &Path, axis: &str, values: &str, out_dir: &Path) -> std::result::Result<(), CliError> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| usage(format!("unknown axis `{axis}` (macro-step, level, particles)")))?;
    let values = parse_values(values)?;
    with_manifest("sweep", config_path, out_dir, |config, manifest| {
        let model = config.model()?;
        let mut cfg = config.accel()?;
        cfg.record_burst = false;
        let obs = default_observables(&cfg, model.space())?;
        let table = convergence_sweep(&cfg, &model, axis, &values, &obs, config.or("sweep.resamples", 32)?)?;
        write_file(out_dir, "sweep.csv", manifest, |out| table.write_csv(out))?;
        for r in table.rows.iter().filter(|r| !r.is_ok()) {
            manifest.notes.push(format!("row {}: {}", r.value, r.failure.as_deref().unwrap_or("")));
        }
        if table.succeeded() == 0 {
            return Err(CliError { code: 3, message: "every sweep row failed".into() });
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    EntropyExpansion,
    MatchedExpansion,
    LocalError,
    WideningGaussian,
}

impl Probe {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "entropy-expansion" => Some(Probe::EntropyExpansion),
            "matched-expansion" => Some(Probe::MatchedExpansion),
            "local-error" => Some(Probe::LocalError),
            "widening-gaussian" => Some(Probe::WideningGaussian),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Probe::EntropyExpansion => "entropy-expansion",
            Probe::MatchedExpansion => "matched-expansion",
            Probe::LocalError => "local-error",
            Probe::WideningGaussian => "widening-gaussian",
        }
    }
}

/// Starting density of a probe: `N(0, sigma0)` on a wide torus under pure
/// diffusion, otherwise a wrapped normal on the unit circle evolved to `oracle.t`.
fn probe_density(config: &Config, model: &SdeModel, dt_max: f64) -> Result<GridDensity> {
    if model.label() == "pure-diffusion" {
        if let Some(sigma) = config.optional::<f64>("oracle.sigma0")? {
            let m = config.or("oracle.grid-m", 1024)?;
            let c = config.or("oracle.circumference", wide_torus_circumference(sigma, dt_max))?;
            return GridDensity::centred_normal(m, sigma, c);
        }
    }
    let m = config.or("oracle.grid-m", 256)?;
    let p0 = GridDensity::wrapped_normal(m, config.or("initial.mean", 0.3)?, config.or("initial.std", 0.08)?)?;
    let t: f64 = config.or("oracle.t", 0.1)?;
    FokkerPlanck::new(model, &p0)?.evolve(&p0, t)
}

pub fn cmd_oracle(config_path: &Path, probe: &str, out_dir: &Path) -> std::result::Result<(), CliError> {
    let probe = Probe::parse(probe).ok_or_else(|| {
        usage(format!(
            "unknown probe `{probe}` (entropy-expansion, matched-expansion, local-error, widening-gaussian)"
        ))
    })?;
    with_manifest("oracle", config_path, out_dir, |config, manifest| {
        let dt_max: f64 = config.or("oracle.dt-max", 10f64.powf(-1.5))?;
        let points: usize = config.or("oracle.points", 6)?;
        let ladder = step_ladder(dt_max, points);
        let table: ProbeTable = match probe {
            Probe::WideningGaussian => {
                let sigma = config.or("oracle.sigma0", 1.0)?;
                widening_gaussian_probe(sigma, &ladder, config.or("oracle.grid-m", 1024)?, config.optional("oracle.circumference")?)?
            }
            Probe::EntropyExpansion => {
                let model = config.model()?;
                let p = probe_density(config, &model, dt_max)?;
                let mut table = entropy_expansion_probe(&p, &model, &ladder)?;
                if model.label() == "pure-diffusion" {
                    if let Some(sigma) = config.optional::<f64>("oracle.sigma0")? {
                        let closed = ladder.iter().map(|dt| widening_gaussian_entropy(sigma, *dt)).collect();
                        table.push_column("closed_form", closed);
                    }
                }
                table
            }
            Probe::MatchedExpansion | Probe::LocalError => {
                let model = config.model()?;
                let p = probe_density(config, &model, dt_max)?;
                let set = crate::restriction::RestrictionSet::from_family(config.family()?, config.required("restriction.level")?, model.space())?;
                let opts = config.solver()?;
                if probe == Probe::MatchedExpansion {
                    matched_expansion_probe(&p, &model, &set, &ladder, &opts)?
                } else {
                    let r: f64 = config.or("oracle.window-fraction", 0.0)?;
                    let window = if r > 0.0 { MicroWindow::Fraction(r) } else { MicroWindow::Zero };
                    local_error_probe(&p, &model, &set, &ladder, window, &opts)?
                }
            }
        };
        write_file(out_dir, &format!("probe_{}.csv", probe.as_str().replace('-', "_")), manifest, |out| table.write_csv(out))?;
        Ok(())
    })
}

/// `sinK`, `cosK`, or `bump:center:width`.
pub fn parse_candidate(s: &str) -> Result<RestrictionFn> {
    let bad = || Error::BadValue {
        key: "moment-gain.candidates".into(),
        message: format!("unknown candidate `{s}` (sinK, cosK, bump:center:width)"),
    };
    if let Some(k) = s.strip_prefix("sin") {
        return Ok(RestrictionFn::sine(k.parse().map_err(|_| bad())?));
    }
    if let Some(k) = s.strip_prefix("cos") {
        return Ok(RestrictionFn::cosine(k.parse().map_err(|_| bad())?));
    }
    if let Some(rest) = s.strip_prefix("bump:") {
        let (c, w) = rest.split_once(':').ok_or_else(bad)?;
        return Ok(RestrictionFn::bump(c.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?));
    }
    Err(bad())
}

/// Greedy moment selection at a trajectory snapshot. The ensemble after
/// `moment-gain.step` macro steps takes one burst; the base target and every
/// candidate target are extrapolated from that burst.
pub fn cmd_moment_gain(config_path: &Path, out_dir: &Path) -> std::result::Result<(), CliError> {
    with_manifest("moment-gain", config_path, out_dir, |config, manifest| {
        let model = config.model()?;
        let cfg = config.accel()?;
        let names = config.require("moment-gain.candidates")?;
        let candidates: Vec<RestrictionFn> = names
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_candidate)
            .collect::<Result<_>>()?;
        if candidates.is_empty() {
            return Err(usage("moment-gain.candidates is empty"));
        }
        let snapshot: usize = config.or("moment-gain.step", 0)?;
        let initial = cfg.sample_initial(model.space())?;
        let mut state: Option<WeightedEnsemble> = (snapshot == 0).then(|| initial.clone());
        if snapshot > 0 {
            let mut short = cfg.clone();
            short.horizon = snapshot as f64 * cfg.dt_macro;
            short.record_burst = false;
            let run = run_accelerated_observed(&short, &model, &initial, |n, _, ens| {
                if n + 1 == snapshot {
                    state = Some(ens.clone());
                }
            })?;
            if let Some(e) = run.error {
                return Err(e.into());
            }
        }
        let start = state.ok_or_else(|| usage("snapshot step beyond the run"))?;
        let set = cfg.restriction_set(model.space())?;
        let path = propagate(&start, &model, &cfg.micro()?, &mut stream(cfg.seed, StreamId::Perturbation))?;
        let prior = path.last().unwrap();
        let lift = |m0: MacroState, m1: MacroState| extrapolate(&m0, &m1, cfg.window, cfg.dt_macro);
        let base_target = lift(restrict(&set, &start)?, restrict(&set, prior)?)?;
        let mut targets = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let one = crate::restriction::RestrictionSet::custom(vec![c.clone()], model.space())?;
            targets.push(lift(restrict(&one, &start)?, restrict(&one, prior)?)?.values()[0]);
        }
        let sel = greedy_select(prior, &set, &base_target, &candidates, &targets, &cfg.solver)?;
        let base_out = match_moments(&base_target, prior, &set, &cfg.solver)?.into_converged()?;
        write_file(out_dir, "moment_gain.csv", manifest, |out| {
            writeln!(out, "candidate,target,gain,direct_entropy,selected")?;
            for (i, c) in candidates.iter().enumerate() {
                let direct = sel.gains[i].and_then(|_| {
                    let ext = set.extended(c.clone());
                    let mut m = base_target.values().to_vec();
                    m.push(targets[i]);
                    let out = match_moments(&MacroState::new(m).ok()?, prior, &ext, &cfg.solver).ok()?;
                    discrete_relative_entropy(&out.matched, &base_out.matched).ok()
                });
                let cell = |v: Option<f64>| v.map_or_else(|| "infeasible".to_string(), fmt_sci);
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    c.name(),
                    fmt_sci(targets[i]),
                    cell(sel.gains[i]),
                    cell(direct),
                    u8::from(i == sel.best)
                )?;
            }
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Debug, Parser)]
#[command(name = "micromacro", version, about = "Micro-macro acceleration for stiff SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One accelerated run.
    Run { config: PathBuf },
    /// Accelerated vs reference weak errors along one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
    },
    /// Grid oracle probes.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        probe: String,
    },
    /// Greedy choice of the next restriction function.
    MomentGain { config: PathBuf },
}

/// Output directory from the environment.
pub fn output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_VAR).map_or_else(|| PathBuf::from("micromacro-out"), PathBuf::from)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I, out_dir: &Path) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, out_dir),
        Command::Sweep { config, axis, values } => cmd_sweep(config, axis, values, out_dir),
        Command::Oracle { config, probe } => cmd_oracle(config, probe, out_dir),
        Command::MomentGain { config } => cmd_moment_gain(config, out_dir),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("micromacro: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = Config::parse("# comment\nmodel.label = ou  # trailing\n\nmacro.dt=0.1\n").unwrap();
        assert_eq!(c.get("model.label"), Some("ou"));
        assert_eq!(c.required::<f64>("macro.dt").unwrap(), 0.1);
        assert!(matches!(c.required::<f64>("macro.horizon"), Err(Error::MissingKey(k)) if k == "macro.horizon"));
        assert!(matches!(Config::parse("nope = 1"), Err(Error::BadValue { .. })));
        assert!(matches!(Config::parse("macro.dt"), Err(Error::BadValue { .. })));
        assert!(matches!(Config::parse("macro.dt = 1\nmacro.dt = 2"), Err(Error::BadValue { .. })));
        assert!(matches!(c.required::<usize>("model.label"), Err(Error::BadValue { .. })));
    }

    #[test]
    fn accel_config_from_text() {
        let c = Config::parse(
            "model.label = periodic-drift\nmacro.dt = 0.1\nmacro.horizon = 0.5\nrestriction.level = 4\nensemble.j = 100\nensemble.seed = 5\nadaptive.enabled = false\n",
        )
        .unwrap();
        let cfg = c.accel().unwrap();
        assert_eq!(cfg.window, 0.025);
        assert_eq!(cfg.micro_steps, 40);
        assert!(!cfg.adaptive);
        assert_eq!(cfg.level, 4);
    }

    #[test]
    fn values_and_candidates() {
        assert_eq!(parse_values("0.2, 0.1,0.05").unwrap(), vec![0.2, 0.1, 0.05]);
        assert_eq!(parse_values("").unwrap_err().code, 2);
        assert_eq!(parse_values("a").unwrap_err().code, 2);
        assert_eq!(parse_candidate("sin3").unwrap().name(), RestrictionFn::sine(3).name());
        assert_eq!(parse_candidate("bump:0.25:0.1").unwrap().name(), RestrictionFn::bump(0.25, 0.1).name());
        assert!(parse_candidate("tan1").is_err());
        assert!(Probe::parse("local-error").is_some());
        assert!(Probe::parse("fisher").is_none());
    }
}
