//! `pmed` batch front end: strict JSON configuration, experiment dispatch and
//! CSV/NDJSON emission.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on a
//! configuration or runtime error (nothing is written in that case).

use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use crate::barriers::{
    residual_pmed, validate_wave_params, BarenblattParams, BarrierSpec, Check, Rescaling,
    ResidualOptions, ResidualReport, SampleRegion, WaveParams,
};
use crate::error::{PmedError, Result};
use crate::field::{density_from_pressure, pressure_from_density, Field, Variable};
use crate::freeboundary::{
    default_threshold, equilibrium_profile, extract_boundary, hausdorff, sublevel_shell_check,
};
use crate::grid::Grid;
use crate::potential::Potential;
use crate::solver::{comparison_harness, simulate, SolverConfig, Trajectory};

/// Mass drift tolerated by `simulate` runs, relative to the initial mass.
pub const MASS_TOLERANCE: f64 = 1e-10;
/// Cumulative clipped mass tolerated, relative to the initial mass.
pub const CLIP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Equilibrium,
    VerifyBarriers,
    Compare,
    Convergence,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibrium => "equilibrium",
            Command::VerifyBarriers => "verify-barriers",
            Command::Compare => "compare",
            Command::Convergence => "convergence",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.replace('_', "-").as_str() {
            "simulate" => Some(Command::Simulate),
            "equilibrium" => Some(Command::Equilibrium),
            "verify-barriers" => Some(Command::VerifyBarriers),
            "compare" => Some(Command::Compare),
            "convergence" => Some(Command::Convergence),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialConfig {
    Quadratic { a: f64 },
    Polynomial { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub cfl_safety: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub support_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// Barenblatt density at `t = 0`.
    Barenblatt { tau: f64, c: f64 },
    /// `height * (1 - |x - center|^2 / radius^2)_+`.
    Bump {
        center: Vec<f64>,
        radius: f64,
        height: f64,
    },
    /// Density of the pressure `scale * (C - offset - Phi(x - shift))_+`.
    EquilibriumOffset {
        c: f64,
        offset: f64,
        shift: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckSelection {
    Sub,
    Super,
    Both,
}

impl CheckSelection {
    fn checks(&self) -> Vec<Check> {
        match self {
            CheckSelection::Sub => vec![Check::Sub],
            CheckSelection::Super => vec![Check::Super],
            CheckSelection::Both => vec![Check::Sub, Check::Super],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierCheckConfig {
    pub spec: BarrierSpec,
    pub dim: usize,
    pub check: CheckSelection,
    pub h_s: Option<f64>,
    pub time_samples: usize,
    pub c_tol: Option<f64>,
    pub ball_spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub grid: Option<GridConfig>,
    pub m: f64,
    pub potential: PotentialConfig,
    pub solver: Option<SolverSettings>,
    pub initial: Option<InitialData>,
    pub output: OutputConfig,
    pub target_mass: Option<f64>,
    pub initial_hi: Option<InitialData>,
    pub barriers: Vec<BarrierCheckConfig>,
    pub shell_eps: Option<f64>,
    pub hausdorff_tol: Option<f64>,
}

/// One validation failure, addressed by a dotted path such as `physics.m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(Vec<FieldError>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse {
                line,
                column,
                message,
            } => write!(f, "parse error at line {line} column {column}: {message}"),
            ConfigError::Invalid(errs) => {
                let parts: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
                write!(f, "{}", parts.join("; "))
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Collects every problem found while walking the JSON document.
struct Checker {
    errors: Vec<FieldError>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

#[derive(Clone, Copy)]
enum Range {
    Positive,
    AboveOne,
    NonNegative,
    UnitInterval,
    OpenUnit,
    Any,
}

impl Range {
    fn accepts(&self, v: f64) -> bool {
        match self {
            Range::Positive => v > 0.0,
            Range::AboveOne => v > 1.0,
            Range::NonNegative => v >= 0.0,
            Range::UnitInterval => v > 0.0 && v <= 1.0,
            Range::OpenUnit => v > 0.0 && v < 1.0,
            Range::Any => true,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Range::Positive => "must be > 0",
            Range::AboveOne => "must be > 1",
            Range::NonNegative => "must be >= 0",
            Range::UnitInterval => "must lie in (0, 1]",
            Range::OpenUnit => "must lie in (0, 1)",
            Range::Any => "must be a finite number",
        }
    }
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.push(path, "expected an object");
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(join(path, key), "unknown key");
            }
        }
        Some(map)
    }

    fn number(&mut self, map: &Map<String, Value>, path: &str, key: &str, range: Range) -> Option<f64> {
        let p = join(path, key);
        let Some(v) = map.get(key) else {
            self.push(p, "missing required value");
            return None;
        };
        self.number_value(v, &p, range)
    }

    fn number_value(&mut self, v: &Value, path: &str, range: Range) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() && range.accepts(x) => Some(x),
            Some(x) => {
                self.push(path, format!("{} (got {x})", range.describe()));
                None
            }
            None => {
                self.push(path, "expected a number");
                None
            }
        }
    }

    fn optional_number(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        range: Range,
    ) -> Option<Option<f64>> {
        match map.get(key) {
            None => Some(None),
            Some(v) => self.number_value(v, &join(path, key), range).map(Some),
        }
    }

    fn dim_value(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<usize> {
        let p = join(path, key);
        match map.get(key).map(|v| v.as_u64()) {
            None => {
                self.push(p, "missing required value");
                None
            }
            Some(Some(d @ (1 | 2))) => Some(d as usize),
            Some(_) => {
                self.push(p, "must be 1 or 2");
                None
            }
        }
    }

    fn vector(&mut self, v: &Value, path: &str, len: Option<usize>) -> Option<Vec<f64>> {
        let Some(arr) = v.as_array() else {
            self.push(path, "expected an array of numbers");
            return None;
        };
        let nums: Option<Vec<f64>> = arr.iter().map(|x| x.as_f64().filter(|f| f.is_finite())).collect();
        match (nums, len) {
            (None, _) => {
                self.push(path, "expected an array of numbers");
                None
            }
            (Some(n), Some(l)) if n.len() != l => {
                self.push(path, format!("expected {l} entries, got {}", n.len()));
                None
            }
            (Some(n), _) => Some(n),
        }
    }

    fn kind<'a>(&mut self, map: &'a Map<String, Value>, path: &str) -> Option<&'a str> {
        match map.get("kind").and_then(|k| k.as_str()) {
            Some(k) => Some(k),
            None => {
                self.push(join(path, "kind"), "missing or not a string");
                None
            }
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "command",
    "grid",
    "physics",
    "solver",
    "initial",
    "output",
    "equilibrium",
    "compare",
    "barriers",
    "convergence",
];

/// Parses and fully validates a configuration for `command`.
///
/// Every validation problem is reported, not just the first.
pub fn parse_config(text: &str, command: Command) -> std::result::Result<ExperimentConfig, ConfigError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut ck = Checker { errors: Vec::new() };
    let Some(top) = ck.object(&root, "", TOP_KEYS) else {
        return Err(ConfigError::Invalid(ck.errors));
    };

    if let Some(c) = top.get("command") {
        match c.as_str().and_then(Command::parse) {
            Some(c) if c == command => {}
            Some(c) => ck.push(
                "command",
                format!("config is for `{}`, invoked as `{}`", c.name(), command.name()),
            ),
            None => ck.push("command", "unknown command"),
        }
    }

    let needs_grid = command != Command::VerifyBarriers;
    let needs_run = matches!(command, Command::Simulate | Command::Compare | Command::Convergence);

    let grid = match top.get("grid") {
        Some(g) => parse_grid(&mut ck, g),
        None => {
            if needs_grid {
                ck.push("grid", "missing required section");
            }
            None
        }
    };
    let dim = grid.as_ref().map_or(1, |g| g.dim);

    let (m, potential) = match top.get("physics") {
        Some(p) => parse_physics(&mut ck, p),
        None => {
            ck.push("physics", "missing required section");
            (None, None)
        }
    };

    let solver = match top.get("solver") {
        Some(s) => parse_solver(&mut ck, s),
        None => {
            if needs_run {
                ck.push("solver", "missing required section");
            }
            None
        }
    };

    let initial = match top.get("initial") {
        Some(v) => parse_initial(&mut ck, v, "initial", dim),
        None => {
            if needs_run {
                ck.push("initial", "missing required section");
            }
            None
        }
    };

    let output = match top.get("output") {
        Some(v) => parse_output(&mut ck, v),
        None => Some(OutputConfig {
            directory: PathBuf::from("."),
            formats: vec![OutputFormat::Csv],
        }),
    };

    let mut target_mass = None;
    if let Some(v) = top.get("equilibrium") {
        if let Some(map) = ck.object(v, "equilibrium", &["target_mass"]) {
            target_mass = ck.number(map, "equilibrium", "target_mass", Range::Positive);
        }
    }
    if command == Command::Equilibrium && target_mass.is_none() && initial.is_none() && !top.contains_key("equilibrium") {
        ck.push("equilibrium.target_mass", "missing (give a target mass or an initial state)");
    }

    let mut initial_hi = None;
    if let Some(v) = top.get("compare") {
        if let Some(map) = ck.object(v, "compare", &["initial_hi"]) {
            match map.get("initial_hi") {
                Some(d) => initial_hi = parse_initial(&mut ck, d, "compare.initial_hi", dim),
                None => ck.push("compare.initial_hi", "missing required value"),
            }
        }
    } else if command == Command::Compare {
        ck.push("compare", "missing required section");
    }

    let mut barriers = Vec::new();
    match top.get("barriers") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                if let Some(b) = parse_barrier(&mut ck, item, &format!("barriers[{i}]"), dim, m, potential.as_ref(), grid.as_ref()) {
                    barriers.push(b);
                }
            }
            if items.is_empty() && command == Command::VerifyBarriers {
                ck.push("barriers", "must list at least one barrier");
            }
        }
        Some(_) => ck.push("barriers", "expected an array"),
        None => {
            if command == Command::VerifyBarriers {
                ck.push("barriers", "missing required section");
            }
        }
    }

    let (mut shell_eps, mut hausdorff_tol) = (None, None);
    if let Some(v) = top.get("convergence") {
        if let Some(map) = ck.object(v, "convergence", &["shell_eps", "hausdorff_tol"]) {
            shell_eps = ck.optional_number(map, "convergence", "shell_eps", Range::Positive).flatten();
            hausdorff_tol = ck.optional_number(map, "convergence", "hausdorff_tol", Range::Positive).flatten();
        }
    }

    if let (Some(PotentialConfig::Polynomial { .. }) | Some(PotentialConfig::Quadratic { .. }), Some(g)) = (&potential, &grid) {
        if let Err(e) = build_potential(potential.as_ref().unwrap(), g.dim, g.half_width) {
            ck.push("physics.potential", e.to_string());
        }
    }
    if matches!(command, Command::Equilibrium | Command::Convergence) {
        if let (Some(p), Some(g)) = (&potential, &grid) {
            if let Ok(pot) = build_potential(p, g.dim, g.half_width) {
                if !pot.strictly_convex() {
                    ck.push("physics.potential", "this command needs a strictly convex potential");
                }
            }
        }
    }

    if !ck.errors.is_empty() {
        return Err(ConfigError::Invalid(ck.errors));
    }
    Ok(ExperimentConfig {
        command,
        grid,
        m: m.expect("validated"),
        potential: potential.expect("validated"),
        solver,
        initial,
        output: output.expect("validated"),
        target_mass,
        initial_hi,
        barriers,
        shell_eps,
        hausdorff_tol,
    })
}

fn parse_grid(ck: &mut Checker, v: &Value) -> Option<GridConfig> {
    let map = ck.object(v, "grid", &["dim", "L", "h"])?;
    let dim = ck.dim_value(map, "grid", "dim");
    let l = ck.number(map, "grid", "L", Range::Positive);
    let h = ck.number(map, "grid", "h", Range::Positive);
    let (dim, half_width, spacing) = (dim?, l?, h?);
    if let Err(e) = Grid::new(dim, half_width, spacing) {
        ck.push("grid", e.to_string());
        return None;
    }
    Some(GridConfig {
        dim,
        half_width,
        spacing,
    })
}

fn parse_physics(ck: &mut Checker, v: &Value) -> (Option<f64>, Option<PotentialConfig>) {
    let Some(map) = ck.object(v, "physics", &["m", "potential"]) else {
        return (None, None);
    };
    let m = ck.number(map, "physics", "m", Range::AboveOne);
    let potential = match map.get("potential") {
        None => {
            ck.push("physics.potential", "missing required value");
            None
        }
        Some(p) => (|| {
            let path = "physics.potential";
            let pm = ck.object(p, path, &["kind", "a", "coefficients"])?;
            match ck.kind(pm, path)? {
                "quadratic" => Some(PotentialConfig::Quadratic {
                    a: ck.number(pm, path, "a", Range::Positive)?,
                }),
                "polynomial" => match pm.get("coefficients") {
                    Some(c) => ck
                        .vector(c, "physics.potential.coefficients", None)
                        .map(|coefficients| PotentialConfig::Polynomial { coefficients }),
                    None => {
                        ck.push("physics.potential.coefficients", "missing required value");
                        None
                    }
                },
                other => {
                    ck.push("physics.potential.kind", format!("unknown potential kind `{other}`"));
                    None
                }
            }
        })(),
    };
    (m, potential)
}

fn parse_solver(ck: &mut Checker, v: &Value) -> Option<SolverSettings> {
    let path = "solver";
    let map = ck.object(v, path, &["cfl_safety", "t_end", "snapshot_every", "support_threshold"])?;
    let cfl = ck.optional_number(map, path, "cfl_safety", Range::UnitInterval);
    let t_end = ck.number(map, path, "t_end", Range::Positive);
    let snap = ck.optional_number(map, path, "snapshot_every", Range::Positive);
    let eps = ck.optional_number(map, path, "support_threshold", Range::Positive);
    let t_end = t_end?;
    Some(SolverSettings {
        cfl_safety: cfl?.unwrap_or(0.4),
        t_end,
        snapshot_every: snap?.unwrap_or(t_end / 10.0),
        support_threshold: eps?,
    })
}

fn parse_initial(ck: &mut Checker, v: &Value, path: &str, dim: usize) -> Option<InitialData> {
    let map = ck.object(
        v,
        path,
        &["kind", "tau", "C", "center", "radius", "height", "offset", "shift", "scale"],
    )?;
    let kind = ck.kind(map, path)?;
    let allowed: &[&str] = match kind {
        "barenblatt" => &["kind", "tau", "C"],
        "bump" => &["kind", "center", "radius", "height"],
        "equilibrium_offset" | "equilibrium-offset" => &["kind", "C", "offset", "shift", "scale"],
        other => {
            ck.push(join(path, "kind"), format!("unknown initial-data kind `{other}`"));
            return None;
        }
    };
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            ck.push(join(path, key), format!("not a parameter of `{kind}` initial data"));
        }
    }
    match kind {
        "barenblatt" => {
            let tau = ck.number(map, path, "tau", Range::Positive);
            let c = ck.number(map, path, "C", Range::Positive);
            Some(InitialData::Barenblatt { tau: tau?, c: c? })
        }
        "bump" => {
            let center = match map.get("center") {
                Some(c) => ck.vector(c, &join(path, "center"), Some(dim)),
                None => Some(vec![0.0; dim]),
            };
            let radius = ck.number(map, path, "radius", Range::Positive);
            let height = ck.number(map, path, "height", Range::Positive);
            Some(InitialData::Bump {
                center: center?,
                radius: radius?,
                height: height?,
            })
        }
        _ => {
            let c = ck.number(map, path, "C", Range::Any);
            let offset = ck.optional_number(map, path, "offset", Range::NonNegative);
            let scale = ck.optional_number(map, path, "scale", Range::Positive);
            let shift = match map.get("shift") {
                Some(s) => ck.vector(s, &join(path, "shift"), Some(dim)),
                None => Some(vec![0.0; dim]),
            };
            Some(InitialData::EquilibriumOffset {
                c: c?,
                offset: offset?.unwrap_or(0.0),
                shift: shift?,
                scale: scale?.unwrap_or(1.0),
            })
        }
    }
}

fn parse_output(ck: &mut Checker, v: &Value) -> Option<OutputConfig> {
    let map = ck.object(v, "output", &["directory", "formats"])?;
    let directory = match map.get("directory") {
        None => Some(PathBuf::from(".")),
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => {
            ck.push("output.directory", "expected a string");
            None
        }
    };
    let formats = match map.get("formats") {
        None => Some(vec![OutputFormat::Csv]),
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            let mut ok = true;
            for (i, it) in items.iter().enumerate() {
                match it.as_str() {
                    Some("csv") => out.push(OutputFormat::Csv),
                    Some("ndjson") => out.push(OutputFormat::Ndjson),
                    _ => {
                        ck.push(format!("output.formats[{i}]"), "expected \"csv\" or \"ndjson\"");
                        ok = false;
                    }
                }
            }
            ok.then_some(out)
        }
        Some(_) => {
            ck.push("output.formats", "expected an array");
            None
        }
    };
    Some(OutputConfig {
        directory: directory?,
        formats: formats?,
    })
}

fn parse_barrier(
    ck: &mut Checker,
    v: &Value,
    path: &str,
    grid_dim: usize,
    physics_m: Option<f64>,
    potential: Option<&PotentialConfig>,
    grid: Option<&GridConfig>,
) -> Option<BarrierCheckConfig> {
    const COMMON: &[&str] = &["kind", "m", "dim", "check", "h_s", "time_samples", "c_tol", "ball_spacing"];
    const BARENBLATT: &[&str] = &["tau", "C"];
    const WAVE: &[&str] = &["A", "omega", "B", "R"];
    const RESCALE: &[&str] = &["alpha", "x0", "t0", "c_pert"];
    let map = v.as_object().or_else(|| {
        ck.push(path, "expected an object");
        None
    })?;
    let kind = ck.kind(map, path)?;
    let extra: Vec<&str> = match kind {
        "barenblatt" => BARENBLATT.to_vec(),
        "spherical_wave" => WAVE.to_vec(),
        "rescaled_barenblatt" => [BARENBLATT, RESCALE].concat(),
        "rescaled_wave" => [WAVE, RESCALE].concat(),
        other => {
            ck.push(join(path, "kind"), format!("unknown barrier kind `{other}`"));
            return None;
        }
    };
    for key in map.keys() {
        if !COMMON.contains(&key.as_str()) && !extra.contains(&key.as_str()) {
            ck.push(join(path, key), "unknown key");
        }
    }
    let m = match ck.optional_number(map, path, "m", Range::AboveOne)? {
        Some(m) => Some(m),
        None => physics_m,
    };
    let dim = match map.get("dim") {
        Some(_) => ck.dim_value(map, path, "dim")?,
        None => grid_dim,
    };
    let check = match map.get("check").map(|c| c.as_str()) {
        None => None,
        Some(Some("sub")) => Some(CheckSelection::Sub),
        Some(Some("super")) => Some(CheckSelection::Super),
        Some(Some("both")) => Some(CheckSelection::Both),
        Some(_) => {
            ck.push(join(path, "check"), "expected \"sub\", \"super\" or \"both\"");
            return None;
        }
    };
    let h_s = ck.optional_number(map, path, "h_s", Range::Positive)?;
    let c_tol = ck.optional_number(map, path, "c_tol", Range::Positive)?;
    let ball_spacing = ck.optional_number(map, path, "ball_spacing", Range::Positive)?.unwrap_or(0.01);
    let time_samples = match map.get("time_samples") {
        None => 11,
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => n as usize,
            _ => {
                ck.push(join(path, "time_samples"), "must be a positive integer");
                return None;
            }
        },
    };
    let Some(m) = m else {
        ck.push(join(path, "m"), "missing (no physics.m to inherit)");
        return None;
    };

    let barenblatt = |ck: &mut Checker| -> Option<BarenblattParams> {
        let tau = ck.number(map, path, "tau", Range::Positive);
        let c = ck.number(map, path, "C", Range::Positive);
        BarenblattParams::new(tau?, c?, m, dim).ok()
    };
    let wave = |ck: &mut Checker| -> Option<WaveParams> {
        let a = ck.number(map, path, "A", Range::Positive);
        let omega = ck.number(map, path, "omega", Range::Positive);
        let b = ck.number(map, path, "B", Range::Positive);
        let r = ck.number(map, path, "R", Range::Positive);
        Some(WaveParams {
            a: a?,
            omega: omega?,
            b: b?,
            r: r?,
        })
    };
    let rescaling = |ck: &mut Checker| -> Option<Rescaling> {
        let alpha = ck.number(map, path, "alpha", Range::OpenUnit);
        let x0 = match map.get("x0") {
            Some(x) => ck.vector(x, &join(path, "x0"), Some(dim)),
            None => {
                ck.push(join(path, "x0"), "missing required value");
                None
            }
        };
        let t0 = ck.optional_number(map, path, "t0", Range::Any);
        let c_pert = ck.optional_number(map, path, "c_pert", Range::Positive);
        let pot_cfg = potential?;
        let half_width = grid.map_or(1.0, |g| g.half_width);
        let pot = build_potential(pot_cfg, dim, half_width).ok()?;
        let mut rs = Rescaling::for_potential(alpha?, &x0?, t0?.unwrap_or(0.0), &pot).ok()?;
        if let Some(c) = c_pert? {
            rs.c_pert = c;
        }
        if rs.convolution_alpha() >= 1.0 {
            ck.push(join(path, "alpha"), "c_pert * alpha must stay below 1");
            return None;
        }
        Some(rs)
    };

    let (spec, default_check) = match kind {
        "barenblatt" => (BarrierSpec::Barenblatt(barenblatt(ck)?), CheckSelection::Both),
        "spherical_wave" => (BarrierSpec::SphericalWave(wave(ck)?), CheckSelection::Super),
        "rescaled_barenblatt" => {
            let b = barenblatt(ck);
            let r = rescaling(ck);
            (BarrierSpec::RescaledBarenblatt(b?, r?), CheckSelection::Sub)
        }
        _ => {
            let w = wave(ck);
            let r = rescaling(ck);
            (BarrierSpec::RescaledWave(w?, r?), CheckSelection::Super)
        }
    };
    Some(BarrierCheckConfig {
        spec,
        dim,
        check: check.unwrap_or(default_check),
        h_s,
        time_samples,
        c_tol,
        ball_spacing,
    })
}

fn build_potential(cfg: &PotentialConfig, dim: usize, half_width: f64) -> Result<Potential> {
    match cfg {
        PotentialConfig::Quadratic { a } => Potential::quadratic(*a, dim),
        PotentialConfig::Polynomial { coefficients } => {
            Potential::radial_polynomial(coefficients, dim, half_width)
        }
    }
}

/// Samples an initial-data descriptor as a density field.
pub fn initial_density(data: &InitialData, grid: &Grid, m: f64, pot: &Potential) -> Result<Field> {
    match data {
        InitialData::Barenblatt { tau, c } => BarenblattParams::new(*tau, *c, m, grid.dim())?.density(grid, 0.0),
        InitialData::Bump {
            center,
            radius,
            height,
        } => Field::from_fn(grid, Variable::Density, m, |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            height * (1.0 - r2 / (radius * radius)).max(0.0)
        }),
        InitialData::EquilibriumOffset {
            c,
            offset,
            shift,
            scale,
        } => {
            let u = Field::from_fn(grid, Variable::Pressure, m, |x| {
                let mut y = [0.0; 2];
                for k in 0..x.len() {
                    y[k] = x[k] - shift[k];
                }
                scale * (c - offset - pot.eval(&y[..x.len()])).max(0.0)
            })?;
            density_from_pressure(&u, m)
        }
    }
}

/// A file produced by a run, kept in memory until the run has succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<OutputFile>,
    pub passed: bool,
    pub summary: Vec<String>,
}

fn solver_config(cfg: &ExperimentConfig, pot: Potential) -> SolverConfig {
    let s = cfg.solver.as_ref().expect("validated: run commands carry a solver section");
    SolverConfig {
        m: cfg.m,
        potential: pot,
        cfl_safety: s.cfl_safety,
        t_end: s.t_end,
        snapshot_every: s.snapshot_every,
        support_threshold: s.support_threshold,
    }
}

fn setup(cfg: &ExperimentConfig) -> Result<(Grid, Potential)> {
    let g = cfg
        .grid
        .as_ref()
        .ok_or_else(|| PmedError::InvalidInput("grid section required".into()))?;
    let grid = Grid::new(g.dim, g.half_width, g.spacing)?;
    let pot = build_potential(&cfg.potential, g.dim, g.half_width)?;
    Ok((grid, pot))
}

fn cell_columns(grid: &Grid) -> &'static str {
    if grid.dim() == 1 {
        "i,x"
    } else {
        "i,j,x,y"
    }
}

fn write_cell(out: &mut String, grid: &Grid, idx: usize) {
    let [ix, iy] = grid.multi_index(idx);
    let p = grid.point(idx);
    if grid.dim() == 1 {
        let _ = write!(out, "{ix},{}", p[0]);
    } else {
        let _ = write!(out, "{ix},{iy},{},{}", p[0], p[1]);
    }
}

fn snapshots_csv(traj: &Trajectory, m: f64) -> Result<String> {
    let grid = traj.grid();
    let mut s = format!("t,{},rho,u\n", cell_columns(grid));
    for snap in &traj.snapshots {
        let u = pressure_from_density(&snap.density, m)?;
        for (idx, (r, p)) in snap.density.values().iter().zip(u.values()).enumerate() {
            let _ = write!(s, "{},", snap.t);
            write_cell(&mut s, grid, idx);
            let _ = writeln!(s, ",{r},{p}");
        }
    }
    Ok(s)
}

fn snapshots_ndjson(traj: &Trajectory) -> String {
    let mut s = String::new();
    for snap in &traj.snapshots {
        let line = serde_json::json!({
            "t": snap.t,
            "mass": snap.mass,
            "n": traj.grid().cells_per_axis(),
            "rho": snap.density.values(),
        });
        let _ = writeln!(s, "{line}");
    }
    s
}

fn mass_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,mass,clipped_mass\n");
    for snap in &traj.snapshots {
        let _ = writeln!(s, "{},{},{}", snap.t, snap.mass, snap.clipped_mass);
    }
    s
}

fn mass_checks(traj: &Trajectory) -> (bool, String) {
    let m0 = traj.initial().mass;
    let drift = traj.relative_mass_drift();
    let clipped = if m0 > 0.0 { traj.last().clipped_mass / m0 } else { 0.0 };
    let ok = drift <= MASS_TOLERANCE && clipped <= CLIP_TOLERANCE;
    (
        ok,
        format!("mass drift {drift:e} (limit {MASS_TOLERANCE:e}), clipped {clipped:e} (limit {CLIP_TOLERANCE:e})"),
    )
}

/// Runs the experiment and returns the files to emit.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    match cfg.command {
        Command::Simulate => run_simulate(cfg),
        Command::Equilibrium => run_equilibrium(cfg),
        Command::VerifyBarriers => run_barriers(cfg),
        Command::Compare => run_compare(cfg),
        Command::Convergence => run_convergence(cfg),
    }
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (grid, pot) = setup(cfg)?;
    let rho0 = initial_density(cfg.initial.as_ref().expect("validated"), &grid, cfg.m, &pot)?;
    let traj = simulate(&rho0, &solver_config(cfg, pot))?;
    let mut files = Vec::new();
    if cfg.output.formats.contains(&OutputFormat::Csv) {
        files.push(OutputFile {
            name: "snapshots.csv".into(),
            contents: snapshots_csv(&traj, cfg.m)?,
        });
    }
    if cfg.output.formats.contains(&OutputFormat::Ndjson) {
        files.push(OutputFile {
            name: "snapshots.ndjson".into(),
            contents: snapshots_ndjson(&traj),
        });
    }
    files.push(OutputFile {
        name: "mass.csv".into(),
        contents: mass_csv(&traj),
    });
    let (passed, line) = mass_checks(&traj);
    Ok(RunOutcome {
        files,
        passed,
        summary: vec![
            format!("simulate: {} snapshots, {} steps", traj.snapshots.len(), traj.steps),
            line,
        ],
    })
}

fn run_equilibrium(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (grid, pot) = setup(cfg)?;
    let target = match (cfg.target_mass, &cfg.initial) {
        (Some(t), _) => t,
        (None, Some(init)) => crate::field::integrate(&initial_density(init, &grid, cfg.m, &pot)?),
        (None, None) => return Err(PmedError::InvalidInput("no target mass".into())),
    };
    let prof = equilibrium_profile(target, &pot, cfg.m, &grid)?;
    let mut s = format!("c_inf,mass,{}\n", if grid.dim() == 1 { "x" } else { "x,y" });
    for p in &prof.boundary.points {
        if grid.dim() == 1 {
            let _ = writeln!(s, "{},{},{}", prof.c_inf, prof.mass, p[0]);
        } else {
            let _ = writeln!(s, "{},{},{},{}", prof.c_inf, prof.mass, p[0], p[1]);
        }
    }
    let rel = (prof.mass - target).abs() / target;
    Ok(RunOutcome {
        files: vec![OutputFile {
            name: "equilibrium.csv".into(),
            contents: s,
        }],
        passed: rel <= 1e-8,
        summary: vec![format!("equilibrium: C_inf = {}, mass error {rel:e}", prof.c_inf)],
    })
}

/// Default sampling region and step for a barrier check.
fn barrier_region(b: &BarrierCheckConfig) -> Result<(SampleRegion, f64)> {
    let dim = b.dim;
    Ok(match &b.spec {
        BarrierSpec::Barenblatt(p) => {
            let r = 1.1 * p.radius(1.0)?;
            (
                SampleRegion::boxed(vec![-r; dim], vec![r; dim], 0.0, 1.0),
                b.h_s.unwrap_or(0.01),
            )
        }
        BarrierSpec::SphericalWave(w) => (
            SampleRegion::boxed(vec![-w.r; dim], vec![w.r; dim], w.start_time(), 0.0),
            b.h_s.unwrap_or(w.r / 200.0),
        ),
        BarrierSpec::RescaledBarenblatt(_, rs) | BarrierSpec::RescaledWave(_, rs) => (
            SampleRegion::cylinder(&rs.x0, rs.alpha, rs.t0 - rs.alpha, rs.t0),
            b.h_s.unwrap_or(rs.alpha / 1000.0),
        ),
    })
}

fn run_barriers(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut s = String::from(
        "index,kind,check,valid_params,samples,interior,boundary,max_interior,min_interior,worst_boundary,tolerance,pass\n",
    );
    let mut passed = true;
    let mut summary = Vec::new();
    for (i, b) in cfg.barriers.iter().enumerate() {
        let half_width = cfg.grid.as_ref().map_or(1.0, |g| g.half_width);
        let pot = build_potential(&cfg.potential, b.dim, half_width)?;
        let valid = match &b.spec {
            BarrierSpec::SphericalWave(w) | BarrierSpec::RescaledWave(w, _) => {
                validate_wave_params(w.a, w.omega, w.b, w.r, cfg.m, b.dim)
            }
            _ => true,
        };
        for r in check_barrier(b, &pot, cfg.m)? {
            let check = match r.check {
                Check::Sub => "sub",
                Check::Super => "super",
            };
            let _ = writeln!(
                s,
                "{i},{},{check},{valid},{},{},{},{},{},{},{},{}",
                b.spec.kind().name(),
                r.samples,
                r.interior,
                r.boundary,
                r.max_interior,
                r.min_interior,
                r.worst_boundary(),
                r.tolerance,
                r.passed
            );
            summary.push(format!(
                "barrier {i} ({}, {check}): worst interior {:e}, tolerance {:e}, {}",
                b.spec.kind().name(),
                r.worst_interior(),
                r.tolerance,
                if r.passed { "pass" } else { "FAIL" }
            ));
            passed &= r.passed;
        }
    }
    Ok(RunOutcome {
        files: vec![OutputFile {
            name: "residuals.csv".into(),
            contents: s,
        }],
        passed,
        summary,
    })
}

/// Checks one barrier. Plain barriers are tested against the drift-free
/// operator, rescaled ones against the configured potential. Waves carry no
/// exponent of their own and use `m`.
pub fn check_barrier(b: &BarrierCheckConfig, pot: &Potential, m: f64) -> Result<Vec<ResidualReport>> {
    let (region, h_s) = barrier_region(b)?;
    let m = match &b.spec {
        BarrierSpec::Barenblatt(p) | BarrierSpec::RescaledBarenblatt(p, _) => p.m,
        _ => m,
    };
    let zero = Potential::zero(b.dim)?;
    let operator_pot = match b.spec {
        BarrierSpec::Barenblatt(_) | BarrierSpec::SphericalWave(_) => &zero,
        _ => pot,
    };
    let u = b.spec.evaluable(b.ball_spacing, 4.0 * h_s)?;
    let mut opts = ResidualOptions::new(h_s).with_time_samples(b.time_samples);
    opts.c_tol = b.c_tol;
    Ok(b
        .check
        .checks()
        .into_iter()
        .map(|c| residual_pmed(&*u, operator_pot, m, c, &region, &opts))
        .collect())
}

fn run_compare(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (grid, pot) = setup(cfg)?;
    let lo = initial_density(cfg.initial.as_ref().expect("validated"), &grid, cfg.m, &pot)?;
    let hi = initial_density(cfg.initial_hi.as_ref().expect("validated"), &grid, cfg.m, &pot)?;
    let report = comparison_harness(&lo, &hi, &solver_config(cfg, pot))?;
    let mut s = String::from("t,max_violation,tol_order,ordered\n");
    for (t, v) in &report.violations {
        let _ = writeln!(s, "{t},{v},{},{}", report.tol_order, *v <= report.tol_order);
    }
    Ok(RunOutcome {
        files: vec![OutputFile {
            name: "comparison.csv".into(),
            contents: s,
        }],
        passed: report.ordered,
        summary: vec![format!(
            "compare: ordered = {}, max violation {:e}, tol_order {:e}",
            report.ordered, report.max_violation, report.tol_order
        )],
    })
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (grid, pot) = setup(cfg)?;
    let rho0 = initial_density(cfg.initial.as_ref().expect("validated"), &grid, cfg.m, &pot)?;
    let solver = solver_config(cfg, pot.clone());
    let traj = simulate(&rho0, &solver)?;
    let prof = equilibrium_profile(traj.initial().mass, &pot, cfg.m, &grid)?;
    let h = grid.spacing();
    let mut s = String::from("t,threshold,hausdorff\n");
    let mut last_boundary = None;
    let mut last_distance = f64::NAN;
    for snap in &traj.snapshots {
        let eps = solver.support_threshold.unwrap_or_else(|| default_threshold(&snap.density));
        let b = extract_boundary(&snap.density, eps)?;
        let d = hausdorff(&b, &prof.boundary).map_err(|e| e.at_time(snap.t))?;
        let _ = writeln!(s, "{},{eps},{d}", snap.t);
        last_distance = d;
        last_boundary = Some(b);
    }
    let last_boundary = last_boundary.expect("trajectory has snapshots");
    let shell_eps = cfg
        .shell_eps
        .unwrap_or(5.0 * h * (1.0 + 2.0 * prof.c_inf.max(0.0).sqrt()));
    let hausdorff_tol = cfg.hausdorff_tol.unwrap_or(3.0 * h);
    let shell_ok = sublevel_shell_check(&last_boundary, &pot, prof.c_inf, shell_eps);
    let distance_ok = last_distance <= hausdorff_tol;
    let (mass_ok, mass_line) = mass_checks(&traj);
    let verdict = format!(
        "c_inf,shell_eps,shell_pass,final_hausdorff,hausdorff_tol,hausdorff_pass\n{},{shell_eps},{shell_ok},{last_distance},{hausdorff_tol},{distance_ok}\n",
        prof.c_inf
    );
    Ok(RunOutcome {
        files: vec![
            OutputFile {
                name: "hausdorff.csv".into(),
                contents: s,
            },
            OutputFile {
                name: "shell_check.csv".into(),
                contents: verdict,
            },
            OutputFile {
                name: "mass.csv".into(),
                contents: mass_csv(&traj),
            },
        ],
        passed: shell_ok && distance_ok && mass_ok,
        summary: vec![
            format!(
                "convergence: C_inf = {}, final Hausdorff {last_distance:e} (tol {hausdorff_tol:e}), shell check {}",
                prof.c_inf,
                if shell_ok { "pass" } else { "FAIL" }
            ),
            mass_line,
        ],
    })
}

/// Writes every file through a temporary in `dir`, renaming on completion.
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for f in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(f.contents.as_bytes())?;
        tmp.flush()?;
        staged.push((tmp, dir.join(&f.name)));
    }
    for (tmp, target) in staged {
        tmp.persist(target).map_err(|e| e.error)?;
    }
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "pmed", version, about = "Porous medium equation with drift: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Run the explicit solver and emit snapshots and mass history.
    Simulate(CommonArgs),
    /// Compute the mass-matched equilibrium constant and boundary.
    Equilibrium(CommonArgs),
    /// Check barrier families against the sub/supersolution inequalities.
    VerifyBarriers(CommonArgs),
    /// Run an ordered pair of initial states and check the ordering.
    Compare(CommonArgs),
    /// Track the free boundary toward the equilibrium boundary.
    Convergence(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn diagnostic(code: &str, message: impl fmt::Display) {
    let msg = message.to_string().replace('\n', " ");
    eprintln!("pmed: error[{code}]: {msg}");
}

fn configure_threads() {
    if let Some(n) = std::env::var("PMED_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Entry point for the `pmed` binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Equilibrium(a) => (Command::Equilibrium, a),
        CliCommand::VerifyBarriers(a) => (Command::VerifyBarriers, a),
        CliCommand::Compare(a) => (Command::Compare, a),
        CliCommand::Convergence(a) => (Command::Convergence, a),
    };
    execute(command, &args.config, args.out.as_deref())
}

/// Parses, runs and writes one experiment; returns the exit code.
pub fn execute(command: Command, config: &Path, out: Option<&Path>) -> i32 {
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => {
            diagnostic("io", format!("{}: {e}", config.display()));
            return 2;
        }
    };
    let cfg = match parse_config(&text, command) {
        Ok(c) => c,
        Err(e) => {
            diagnostic("config", e);
            return 2;
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            diagnostic(e.code(), e);
            return 2;
        }
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.directory.clone());
    if let Err(e) = write_outputs(&dir, &outcome.files) {
        diagnostic("io", format!("{}: {e}", dir.display()));
        return 2;
    }
    for line in &outcome.summary {
        println!("{line}");
    }
    if outcome.passed {
        0
    } else {
        1
    }
}
