//! Command-line front end: configuration parsing, runs, sweeps, snapshots
//! and the weight-table cache.

use crate::collision::CollisionWorkspace;
use crate::conserve::{build_constraints, ConstraintKind, ConstraintSystem};
use crate::diagnostics::{entropy, equilibrium_of, moments, negative_part_norm};
use crate::grid::{choose_domain, resample, State, VelocityGrid};
use crate::integrate::{run, DiagnosticSink, IntegratorConfig, Method, StepSize, DEFAULT_CFL};
use crate::kernel::{normalize_angular, Angular, CacheStatus, KernelSpec, TableCache, TableConfig, TableStorage};
use crate::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use toml::{Table, Value};

/// Environment variable overriding the weight-table cache directory.
pub const CACHE_ENV: &str = "BSPC_CACHE_DIR";

/// One Gaussian component of an initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub temperature: f64,
}

/// Initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Maxwellian { mass: f64, mean: Vec<f64>, temperature: f64 },
    /// Equal-weight pair with means +-separation/2 along the first axis.
    TwoGaussian { mass: f64, separation: f64, temperature: f64 },
    Gaussians(Vec<GaussianComponent>),
    /// Snapshot written by a previous run.
    File(PathBuf),
}

impl InitialCondition {
    fn components(&self, d: usize) -> Vec<GaussianComponent> {
        match self {
            InitialCondition::Maxwellian { mass, mean, temperature } => {
                vec![GaussianComponent { weight: *mass, mean: mean.clone(), temperature: *temperature }]
            }
            InitialCondition::TwoGaussian { mass, separation, temperature } => [-0.5, 0.5]
                .iter()
                .map(|s| {
                    let mut mean = vec![0.0; d];
                    mean[0] = s * separation;
                    GaussianComponent { weight: 0.5 * mass, mean, temperature: *temperature }
                })
                .collect(),
            InitialCondition::Gaussians(c) => c.clone(),
            InitialCondition::File(_) => Vec::new(),
        }
    }

    /// Mass, mean velocity and per-axis temperature of a Gaussian initial condition.
    fn invariants(&self, d: usize) -> (f64, Vec<f64>, f64) {
        let comps = self.components(d);
        let m0: f64 = comps.iter().map(|c| c.weight).sum();
        let mut u0 = vec![0.0; d];
        let mut second = 0.0;
        for c in &comps {
            for (u, m) in u0.iter_mut().zip(&c.mean) {
                *u += c.weight * m / m0;
            }
            second += c.weight * (c.mean.iter().map(|x| x * x).sum::<f64>() + d as f64 * c.temperature);
        }
        let t0 = (second / m0 - u0.iter().map(|x| x * x).sum::<f64>()) / d as f64;
        (m0, u0, t0)
    }
}

/// How the half-width L is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    Explicit(f64),
    /// Smallest L whose Maxwellian tail is within `tolerance`.
    Auto { tolerance: f64, dilation: f64 },
}

/// Angular cross-section as configured.
#[derive(Debug, Clone, PartialEq)]
pub enum AngularChoice {
    Isotropic,
    Samples(Vec<f64>),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dimension: usize,
    pub lambda: f64,
    pub beta: f64,
    pub angular: AngularChoice,
    pub initial: InitialCondition,
    pub domain: DomainSpec,
    pub points: usize,
    pub method: Method,
    pub dt: StepSize,
    pub t_end: f64,
    pub conserve_every_stage: bool,
    pub every: usize,
    pub snapshot_every: usize,
    pub output: PathBuf,
    pub storage: TableStorage,
    pub padding: usize,
    pub radius: f64,
    pub memory_budget_mib: usize,
    pub cache: Option<PathBuf>,
}

impl RunConfig {
    fn with_initial(initial: InitialCondition) -> Self {
        RunConfig {
            dimension: 3,
            lambda: 1.0,
            beta: 1.0,
            angular: AngularChoice::Isotropic,
            initial,
            domain: DomainSpec::Auto { tolerance: 1e-4, dilation: 1.0 },
            points: 16,
            method: Method::Rk4,
            dt: StepSize::Auto { cfl: DEFAULT_CFL },
            t_end: 3.0,
            conserve_every_stage: true,
            every: 1,
            snapshot_every: 0,
            output: PathBuf::from("bspc-out"),
            storage: TableStorage::Reduced,
            padding: 2,
            radius: 2.0,
            memory_budget_mib: 256,
            cache: None,
        }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let angular = match &self.angular {
            AngularChoice::Isotropic => Angular::Isotropic,
            AngularChoice::Samples(s) => Angular::Tabulated(normalize_angular(self.dimension, s)?),
        };
        KernelSpec::new(self.dimension, self.lambda, self.beta, angular)
    }

    pub fn table_config(&self) -> TableConfig {
        TableConfig {
            storage: self.storage,
            padding: self.padding,
            radius: self.radius,
            memory_budget: self.memory_budget_mib << 20,
            ..TableConfig::default()
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig { method: self.method, dt: self.dt, t_end: self.t_end, conserve_every_stage: self.conserve_every_stage }
    }

    /// Cache directory: the configured path, then `BSPC_CACHE_DIR`, then the
    /// user cache directory.
    pub fn cache_root(&self) -> PathBuf {
        if let Some(p) = &self.cache {
            return p.clone();
        }
        default_cache_root()
    }

    /// Build the grid and the initial state.
    pub fn initial_state(&self) -> Result<State> {
        if let InitialCondition::File(path) = &self.initial {
            let s = read_snapshot(path)?;
            let g = s.grid();
            if g.dim() != self.dimension || g.points() != self.points {
                return Err(Error::Config(vec![format!(
                    "initial.path: snapshot has d = {}, n = {}; configuration asks for d = {}, n = {}",
                    g.dim(),
                    g.points(),
                    self.dimension,
                    self.points
                )]));
            }
            if let DomainSpec::Explicit(l) = self.domain {
                if l != g.half_width() {
                    return Err(Error::Config(vec![format!(
                        "domain.half_width: snapshot has L = {}, configuration asks for {l}",
                        g.half_width()
                    )]));
                }
            }
            return Ok(s);
        }
        let d = self.dimension;
        let l = match self.domain {
            DomainSpec::Explicit(l) => l,
            DomainSpec::Auto { tolerance, dilation } => {
                let (m0, u0, t0) = self.initial.invariants(d);
                choose_domain(d, m0, &u0, t0, dilation, tolerance, 0.0)?.half_width
            }
        };
        let grid = Arc::new(VelocityGrid::new(d, self.points, l)?);
        let comps = self.initial.components(d);
        State::from_fn(grid, |v| {
            comps
                .iter()
                .map(|c| {
                    let r2: f64 = v.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                    c.weight * (2.0 * PI * c.temperature).powf(-0.5 * d as f64) * (-0.5 * r2 / c.temperature).exp()
                })
                .sum()
        })
    }

    /// The configuration as TOML with every default filled in.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        let mut physics = Table::new();
        physics.insert("dimension".into(), Value::Integer(self.dimension as i64));
        physics.insert("lambda".into(), Value::Float(self.lambda));
        physics.insert("beta".into(), Value::Float(self.beta));
        physics.insert(
            "angular".into(),
            match &self.angular {
                AngularChoice::Isotropic => Value::String("isotropic".into()),
                AngularChoice::Samples(s) => Value::Array(s.iter().map(|x| Value::Float(*x)).collect()),
            },
        );
        root.insert("physics".into(), Value::Table(physics));
        let mut init = Table::new();
        let floats = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());
        match &self.initial {
            InitialCondition::Maxwellian { mass, mean, temperature } => {
                init.insert("kind".into(), Value::String("maxwellian".into()));
                init.insert("mass".into(), Value::Float(*mass));
                init.insert("mean".into(), floats(mean));
                init.insert("temperature".into(), Value::Float(*temperature));
            }
            InitialCondition::TwoGaussian { mass, separation, temperature } => {
                init.insert("kind".into(), Value::String("two-gaussian".into()));
                init.insert("mass".into(), Value::Float(*mass));
                init.insert("separation".into(), Value::Float(*separation));
                init.insert("temperature".into(), Value::Float(*temperature));
            }
            InitialCondition::Gaussians(cs) => {
                init.insert("kind".into(), Value::String("gaussians".into()));
                let arr = cs
                    .iter()
                    .map(|c| {
                        let mut t = Table::new();
                        t.insert("weight".into(), Value::Float(c.weight));
                        t.insert("mean".into(), floats(&c.mean));
                        t.insert("temperature".into(), Value::Float(c.temperature));
                        Value::Table(t)
                    })
                    .collect();
                init.insert("components".into(), Value::Array(arr));
            }
            InitialCondition::File(p) => {
                init.insert("kind".into(), Value::String("file".into()));
                init.insert("path".into(), Value::String(p.display().to_string()));
            }
        }
        root.insert("initial".into(), Value::Table(init));
        let mut domain = Table::new();
        match self.domain {
            DomainSpec::Explicit(l) => {
                domain.insert("half_width".into(), Value::Float(l));
            }
            DomainSpec::Auto { tolerance, dilation } => {
                domain.insert("half_width".into(), Value::String("auto".into()));
                domain.insert("tolerance".into(), Value::Float(tolerance));
                domain.insert("dilation".into(), Value::Float(dilation));
            }
        }
        domain.insert("points".into(), Value::Integer(self.points as i64));
        root.insert("domain".into(), Value::Table(domain));
        let mut integ = Table::new();
        integ.insert("method".into(), Value::String(method_name(self.method).into()));
        match self.dt {
            StepSize::Fixed(dt) => {
                integ.insert("dt".into(), Value::Float(dt));
            }
            StepSize::Auto { cfl } => {
                integ.insert("dt".into(), Value::String("auto".into()));
                integ.insert("cfl".into(), Value::Float(cfl));
            }
        }
        integ.insert("t_end".into(), Value::Float(self.t_end));
        integ.insert("conserve_every_stage".into(), Value::Boolean(self.conserve_every_stage));
        root.insert("integrator".into(), Value::Table(integ));
        let mut out = Table::new();
        out.insert("directory".into(), Value::String(self.output.display().to_string()));
        out.insert("every".into(), Value::Integer(self.every as i64));
        out.insert("snapshot_every".into(), Value::Integer(self.snapshot_every as i64));
        root.insert("output".into(), Value::Table(out));
        let mut table = Table::new();
        table.insert(
            "storage".into(),
            Value::String(if self.storage == TableStorage::Full { "full" } else { "reduced" }.into()),
        );
        table.insert("padding".into(), Value::Integer(self.padding as i64));
        table.insert("radius".into(), Value::Float(self.radius));
        table.insert("memory_budget_mib".into(), Value::Integer(self.memory_budget_mib as i64));
        if let Some(c) = &self.cache {
            table.insert("cache".into(), Value::String(c.display().to_string()));
        }
        root.insert("table".into(), Value::Table(table));
        root.to_string()
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Euler => "euler",
        Method::Rk2 => "rk2",
        Method::Rk4 => "rk4",
    }
}

/// Default cache directory (without a configured path).
pub fn default_cache_root() -> PathBuf {
    if let Some(p) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(p);
    }
    if let Some(p) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(p).join("bspc");
    }
    if let Some(p) = std::env::var_os("HOME") {
        return PathBuf::from(p).join(".cache").join("bspc");
    }
    PathBuf::from(".bspc-cache")
}

/// Collects every problem found while reading a configuration.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn section<'a>(&mut self, root: &'a Table, name: &str, allowed: &[&str]) -> Option<&'a Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => {
                for k in t.keys() {
                    if !allowed.contains(&k.as_str()) {
                        self.errors.push(format!("{name}.{k}: unknown key (allowed: {})", allowed.join(", ")));
                    }
                }
                Some(t)
            }
            Some(_) => {
                self.errors.push(format!("{name}: expected a table"));
                None
            }
        }
    }

    fn float(&mut self, t: Option<&Table>, path: &str, key: &str, default: f64, ok: impl Fn(f64) -> bool, rule: &str) -> f64 {
        let v = match t.and_then(|t| t.get(key)) {
            None => return default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => {
                self.errors.push(format!("{path}.{key}: expected a number, got {other}"));
                return default;
            }
        };
        if !ok(v) {
            self.errors.push(format!("{path}.{key} = {v}: {rule}"));
        }
        v
    }

    fn int(&mut self, t: Option<&Table>, path: &str, key: &str, default: usize, ok: impl Fn(usize) -> bool, rule: &str) -> usize {
        let v = match t.and_then(|t| t.get(key)) {
            None => return default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(other) => {
                self.errors.push(format!("{path}.{key}: expected a nonnegative integer, got {other}"));
                return default;
            }
        };
        if !ok(v) {
            self.errors.push(format!("{path}.{key} = {v}: {rule}"));
        }
        v
    }

    fn boolean(&mut self, t: Option<&Table>, path: &str, key: &str, default: bool) -> bool {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.errors.push(format!("{path}.{key}: expected true or false, got {other}"));
                default
            }
        }
    }

    fn string<'a>(&mut self, t: Option<&'a Table>, path: &str, key: &str) -> Option<&'a str> {
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.errors.push(format!("{path}.{key}: expected a string, got {other}"));
                None
            }
        }
    }

    fn floats(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let arr = match v {
            Value::Array(a) => a,
            other => {
                self.errors.push(format!("{path}: expected an array of numbers, got {other}"));
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for x in arr {
            match x {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    self.errors.push(format!("{path}: expected numbers, found {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn vector(&mut self, t: Option<&Table>, path: &str, key: &str, d: usize) -> Vec<f64> {
        match t.and_then(|t| t.get(key)) {
            None => vec![0.0; d],
            Some(v) => match self.floats(v, &format!("{path}.{key}")) {
                Some(x) if x.len() == d && x.iter().all(|y| y.is_finite()) => x,
                Some(x) => {
                    self.errors.push(format!("{path}.{key}: expected {d} finite entries, got {}", x.len()));
                    vec![0.0; d]
                }
                None => vec![0.0; d],
            },
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Parse and validate a TOML configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut r = Reader { errors: Vec::new() };
    // [resolved] is written to run manifests for reference and ignored here
    for k in root.keys() {
        if !["physics", "initial", "domain", "integrator", "output", "table", "resolved"].contains(&k.as_str()) {
            r.errors.push(format!("{k}: unknown section"));
        }
    }
    let physics = r.section(&root, "physics", &["dimension", "lambda", "beta", "angular"]);
    let d = r.int(physics, "physics", "dimension", 3, |d| d == 2 || d == 3, "must be 2 or 3");
    let d = if d == 2 || d == 3 { d } else { 3 };
    let lambda = r.float(physics, "physics", "lambda", 1.0, |x| (0.0..=1.0).contains(&x), "must lie in [0, 1]");
    let beta = r.float(physics, "physics", "beta", 1.0, |x| x > 0.5 && x <= 1.0, "must lie in (1/2, 1]");
    let angular = match physics.and_then(|p| p.get("angular")) {
        None => AngularChoice::Isotropic,
        Some(Value::String(s)) if s == "isotropic" => AngularChoice::Isotropic,
        Some(v @ Value::Array(_)) => match r.floats(v, "physics.angular") {
            Some(s) => {
                if let Err(e) = normalize_angular(d, &s) {
                    r.errors.push(format!("physics.angular: {e}"));
                }
                AngularChoice::Samples(s)
            }
            None => AngularChoice::Isotropic,
        },
        Some(other) => {
            r.errors.push(format!("physics.angular: expected \"isotropic\" or an array of samples, got {other}"));
            AngularChoice::Isotropic
        }
    };

    let initial = parse_initial(&mut r, &root, d);

    let domain_t = r.section(&root, "domain", &["half_width", "tolerance", "dilation", "points"]);
    let domain = match domain_t.and_then(|t| t.get("half_width")) {
        None => None,
        Some(Value::String(s)) if s == "auto" => None,
        Some(Value::Float(x)) => Some(*x),
        Some(Value::Integer(i)) => Some(*i as f64),
        Some(other) => {
            r.errors.push(format!("domain.half_width: expected a number or \"auto\", got {other}"));
            None
        }
    };
    let tolerance = r.float(domain_t, "domain", "tolerance", 1e-4, |x| x > 0.0 && x < 1.0, "must lie in (0, 1)");
    let dilation = r.float(domain_t, "domain", "dilation", 1.0, |x| x >= 1.0 && x.is_finite(), "must be at least 1");
    let domain = match domain {
        Some(l) => {
            if !positive(l) {
                r.errors.push(format!("domain.half_width = {l}: must be positive"));
            }
            DomainSpec::Explicit(l)
        }
        None => DomainSpec::Auto { tolerance, dilation },
    };
    let points = r.int(domain_t, "domain", "points", 16, |n| n >= 8 && n % 2 == 0, "must be even and at least 8");

    let integ = r.section(&root, "integrator", &["method", "dt", "cfl", "t_end", "conserve_every_stage"]);
    let method = match r.string(integ, "integrator", "method") {
        None | Some("rk4") => Method::Rk4,
        Some("rk2") => Method::Rk2,
        Some("euler") => Method::Euler,
        Some(other) => {
            r.errors.push(format!("integrator.method = {other:?}: expected euler, rk2 or rk4"));
            Method::Rk4
        }
    };
    let cfl = r.float(integ, "integrator", "cfl", DEFAULT_CFL, positive, "must be positive");
    let dt = match integ.and_then(|t| t.get("dt")) {
        None => StepSize::Auto { cfl },
        Some(Value::String(s)) if s == "auto" => StepSize::Auto { cfl },
        Some(Value::Float(x)) if positive(*x) => StepSize::Fixed(*x),
        Some(Value::Integer(i)) if *i > 0 => StepSize::Fixed(*i as f64),
        Some(other) => {
            r.errors.push(format!("integrator.dt = {other}: expected a positive number or \"auto\""));
            StepSize::Auto { cfl }
        }
    };
    let t_end = r.float(integ, "integrator", "t_end", 3.0, |x| x >= 0.0 && x.is_finite(), "must be nonnegative");
    let conserve_every_stage = r.boolean(integ, "integrator", "conserve_every_stage", true);

    let out = r.section(&root, "output", &["directory", "every", "snapshot_every"]);
    let output = PathBuf::from(r.string(out, "output", "directory").unwrap_or("bspc-out"));
    let every = r.int(out, "output", "every", 1, |x| x >= 1, "must be at least 1");
    let snapshot_every = r.int(out, "output", "snapshot_every", 0, |_| true, "");

    let table = r.section(&root, "table", &["storage", "padding", "radius", "memory_budget_mib", "cache"]);
    let storage = match r.string(table, "table", "storage") {
        None | Some("reduced") => TableStorage::Reduced,
        Some("full") => TableStorage::Full,
        Some(other) => {
            r.errors.push(format!("table.storage = {other:?}: expected full or reduced"));
            TableStorage::Reduced
        }
    };
    let padding = r.int(table, "table", "padding", 2, |p| (2..=4).contains(&p), "must lie in 2..=4");
    let radius = r.float(table, "table", "radius", 2.0, positive, "must be positive");
    if radius > 2.0 * (padding as f64 - 1.0) {
        r.errors.push(format!(
            "table.radius = {radius}: aliases with padding {padding}; at most {} allowed",
            2.0 * (padding as f64 - 1.0)
        ));
    }
    let memory_budget_mib = r.int(table, "table", "memory_budget_mib", 256, |m| m >= 1, "must be at least 1");
    let cache = r.string(table, "table", "cache").map(PathBuf::from);

    if beta < 1.0 && storage == TableStorage::Reduced && beta > 0.5 && beta <= 1.0 {
        let ratio = (1..=64i64).any(|q| ((beta * q as f64).round() / q as f64 - beta).abs() < 1e-12);
        if !ratio {
            r.errors.push(format!("physics.beta = {beta}: reduced tables need beta = p/q with q <= 64; use table.storage = \"full\""));
        }
    }

    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    let mut cfg = RunConfig::with_initial(initial.expect("initial condition present when no errors"));
    cfg.dimension = d;
    cfg.lambda = lambda;
    cfg.beta = beta;
    cfg.angular = angular;
    cfg.domain = domain;
    cfg.points = points;
    cfg.method = method;
    cfg.dt = dt;
    cfg.t_end = t_end;
    cfg.conserve_every_stage = conserve_every_stage;
    cfg.every = every;
    cfg.snapshot_every = snapshot_every;
    cfg.output = output;
    cfg.storage = storage;
    cfg.padding = padding;
    cfg.radius = radius;
    cfg.memory_budget_mib = memory_budget_mib;
    cfg.cache = cache;
    Ok(cfg)
}

fn parse_initial(r: &mut Reader, root: &Table, d: usize) -> Option<InitialCondition> {
    let allowed = ["kind", "mass", "mean", "temperature", "separation", "components", "path"];
    let Some(table) = r.section(root, "initial", &allowed) else {
        r.errors.push("initial: missing section; an initial condition is required".into());
        return None;
    };
    let t = Some(table);
    let kind = r.string(t, "initial", "kind");
    let mass = r.float(t, "initial", "mass", 1.0, positive, "must be positive");
    let temperature = r.float(t, "initial", "temperature", 0.6, positive, "must be positive");
    let only = |r: &mut Reader, keys: &[&str], kind: &str| {
        for k in table.keys() {
            if !keys.contains(&k.as_str()) {
                r.errors.push(format!("initial.{k}: not used by kind = \"{kind}\""));
            }
        }
    };
    match kind {
        Some("maxwellian") => {
            only(r, &["kind", "mass", "mean", "temperature"], "maxwellian");
            let mean = r.vector(t, "initial", "mean", d);
            Some(InitialCondition::Maxwellian { mass, mean, temperature })
        }
        Some("two-gaussian") => {
            only(r, &["kind", "mass", "separation", "temperature"], "two-gaussian");
            let separation = r.float(t, "initial", "separation", 2.0, |x| x >= 0.0 && x.is_finite(), "must be nonnegative");
            Some(InitialCondition::TwoGaussian { mass, separation, temperature })
        }
        Some("gaussians") => {
            only(r, &["kind", "components"], "gaussians");
            let Some(Value::Array(items)) = table.get("components") else {
                r.errors.push("initial.components: expected an array of tables".into());
                return None;
            };
            if items.is_empty() {
                r.errors.push("initial.components: at least one component is required".into());
            }
            let mut comps = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let path = format!("initial.components[{i}]");
                let Value::Table(c) = item else {
                    r.errors.push(format!("{path}: expected a table"));
                    continue;
                };
                for k in c.keys() {
                    if !["weight", "mean", "temperature"].contains(&k.as_str()) {
                        r.errors.push(format!("{path}.{k}: unknown key (allowed: weight, mean, temperature)"));
                    }
                }
                let c = Some(c);
                let weight = r.float(c, &path, "weight", 1.0, positive, "must be positive");
                let mean = r.vector(c, &path, "mean", d);
                let temperature = r.float(c, &path, "temperature", 1.0, positive, "must be positive");
                comps.push(GaussianComponent { weight, mean, temperature });
            }
            Some(InitialCondition::Gaussians(comps))
        }
        Some("file") => {
            only(r, &["kind", "path"], "file");
            match r.string(t, "initial", "path") {
                Some(p) => Some(InitialCondition::File(PathBuf::from(p))),
                None => {
                    r.errors.push("initial.path: required for kind = \"file\"".into());
                    None
                }
            }
        }
        Some(other) => {
            r.errors.push(format!("initial.kind = {other:?}: expected maxwellian, two-gaussian, gaussians or file"));
            None
        }
        None => {
            r.errors.push("initial.kind: required".into());
            None
        }
    }
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"BSPC";
const SNAPSHOT_VERSION: u32 = 1;

/// Write a snapshot ("BSPC", version, d, n, L, t, values; little endian)
/// and a text sidecar `<path>.toml` describing it.
pub fn write_snapshot(path: &Path, s: &State) -> Result<()> {
    let g = s.grid();
    let mut buf = Vec::with_capacity(32 + 8 * g.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(g.points() as u32).to_le_bytes());
    buf.extend_from_slice(&g.half_width().to_le_bytes());
    buf.extend_from_slice(&s.t.to_le_bytes());
    for v in s.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let text = format!(
        "format = \"bspc-snapshot\"\nversion = {SNAPSHOT_VERSION}\ndimension = {}\npoints = {}\nhalf_width = {:?}\ntime = {:?}\nlayout = \"row-major, last axis fastest, midpoint nodes -L + (i + 1/2) 2L/n\"\nvalue_type = \"f64 little endian\"\n",
        g.dim(),
        g.points(),
        g.half_width(),
        s.t
    );
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".toml");
    PathBuf::from(name)
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<State> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format { path: path.into(), message: m.into() };
    if bytes.len() < 32 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if u32_at(4) != SNAPSHOT_VERSION {
        return Err(bad("unsupported snapshot version"));
    }
    let (d, n, l, t) = (u32_at(8) as usize, u32_at(12) as usize, f64_at(16), f64_at(24));
    let grid = VelocityGrid::new(d, n, l).map_err(|e| bad(&e.to_string()))?;
    if bytes.len() != 32 + 8 * grid.len() {
        return Err(bad("length does not match the header"));
    }
    let values = (0..grid.len()).map(|j| f64_at(32 + 8 * j)).collect();
    State::new(Arc::new(grid), values, t)
}

/// CSV writer for the moment time series.
struct SeriesSink {
    out: BufWriter<File>,
    path: PathBuf,
    reference: State,
    reference_norm: f64,
    snapshot_dir: PathBuf,
    snapshot_every: usize,
}

impl DiagnosticSink for SeriesSink {
    fn record(&mut self, s: &State, step: usize) -> Result<()> {
        let m = moments(s, 0.0, &[]);
        let g = s.grid();
        let diff: Vec<f64> = s.values().iter().zip(self.reference.values()).map(|(a, b)| a - b).collect();
        let mut line = format!("{:.17e},{:.17e}", s.t, m.mass);
        for p in &m.momentum {
            line.push_str(&format!(",{p:.17e}"));
        }
        line.push_str(&format!(
            ",{:.17e},{:.17e},{:.17e},{:.17e}\n",
            m.energy,
            g.l2_norm(&diff) / self.reference_norm,
            negative_part_norm(s),
            entropy(s)
        ));
        self.out.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        if self.snapshot_every > 0 && step % self.snapshot_every == 0 {
            write_snapshot(&self.snapshot_dir.join(format!("step_{step:08}.bin")), s)?;
        }
        Ok(())
    }
}

/// Summary of a finished (or aborted) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub final_state: State,
    pub initial_state: State,
    pub steps: usize,
    pub dt: f64,
    pub wall_seconds: f64,
    pub cache: CacheStatus,
    /// Largest relative change of mass, momentum and energy over the run.
    pub invariant_drift: f64,
    /// ||g(T) - M0||_2 / ||M0||_2.
    pub equilibrium_error: f64,
    pub abort: Option<Error>,
}

fn invariant_vector(s: &State) -> Vec<f64> {
    let m = moments(s, 0.0, &[]);
    let mut v = vec![m.mass];
    v.extend(m.momentum);
    v.push(m.energy);
    v
}

/// Relative drift of the invariants, scaled by 1 + |initial value|.
pub fn invariant_drift(a: &State, b: &State) -> f64 {
    invariant_vector(a)
        .iter()
        .zip(invariant_vector(b))
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max)
}

/// Build the collision workspace and constraints for `cfg` on `grid`.
pub fn prepare(cfg: &RunConfig, grid: Arc<VelocityGrid>, log: &mut dyn Write) -> Result<(CollisionWorkspace, ConstraintSystem, CacheStatus)> {
    let spec = cfg.kernel()?;
    let cache = TableCache::new(cfg.cache_root());
    let start = Instant::now();
    let (ws, status) = CollisionWorkspace::build(grid.clone(), spec, &cfg.table_config(), Some(&cache))?;
    let path = cache.path_for(ws.table().key());
    let _ = match status {
        CacheStatus::Hit => writeln!(log, "weight table: cache hit {}", path.display()),
        CacheStatus::Miss => {
            writeln!(log, "weight table: cache miss, built in {:.2} s, stored {}", start.elapsed().as_secs_f64(), path.display())
        }
    };
    let kind = if cfg.beta < 1.0 { ConstraintKind::Inelastic } else { ConstraintKind::Elastic };
    let cs = build_constraints(grid, kind)?;
    Ok((ws, cs, status))
}

/// Execute a run and write `timeseries.csv`, `manifest.toml` and `final.bin`
/// into the output directory.
pub fn cmd_run(cfg: &RunConfig, log: &mut dyn Write) -> Result<RunOutcome> {
    let initial = cfg.initial_state()?;
    let grid = initial.grid().clone();
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let snapshot_dir = cfg.output.join("snapshots");
    if cfg.snapshot_every > 0 {
        std::fs::create_dir_all(&snapshot_dir).map_err(|e| Error::io(&snapshot_dir, e))?;
    }
    let (ws, cs, status) = prepare(cfg, grid.clone(), log)?;
    let reference = equilibrium_of(&initial)?;
    let csv_path = cfg.output.join("timeseries.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut out = BufWriter::new(file);
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let axes = ["x", "y", "z"];
    let momentum: Vec<String> = axes[..grid.dim()].iter().map(|a| format!("momentum_{a}")).collect();
    let header = format!(
        "# bspc-timeseries v1 unix_time={stamp}\nt,mass,{},energy,L2_error_vs_M0,neg_mass,entropy\n",
        momentum.join(",")
    );
    out.write_all(header.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
    let mut sink = SeriesSink {
        out,
        path: csv_path,
        reference_norm: reference.l2_norm(),
        reference,
        snapshot_dir,
        snapshot_every: cfg.snapshot_every,
    };
    let summary = run(&initial, &cfg.integrator(), &ws, &cs, cfg.every, &mut [&mut sink])?;
    let final_state = summary.final_state;
    write_snapshot(&cfg.output.join("final.bin"), &final_state)?;
    let diff: Vec<f64> = final_state.values().iter().zip(sink.reference.values()).map(|(a, b)| a - b).collect();
    let outcome = RunOutcome {
        invariant_drift: invariant_drift(&initial, &final_state),
        equilibrium_error: grid.l2_norm(&diff) / sink.reference_norm,
        final_state,
        initial_state: initial,
        steps: summary.steps,
        dt: summary.dt,
        wall_seconds: summary.wall_time.as_secs_f64(),
        cache: status,
        abort: summary.abort,
    };
    let manifest = format!(
        "{}\n[resolved]\nhalf_width = {:?}\ndt = {:?}\nsteps = {}\nfinal_time = {:?}\naborted = {}\n",
        cfg.to_toml(),
        grid.half_width(),
        outcome.dt,
        outcome.steps,
        outcome.final_state.t,
        outcome.abort.is_some()
    );
    let mpath = cfg.output.join("manifest.toml");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(outcome)
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    #[value(name = "N")]
    N,
    #[value(name = "L")]
    L,
    #[value(name = "dt")]
    Dt,
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// ||g - f_ref||_2 against the most refined run (NaN when not comparable).
    pub error_vs_reference: f64,
    pub error_vs_equilibrium: f64,
    pub invariant_drift: f64,
    pub wall_seconds: f64,
    /// log(e_i / e_{i+1}) / log(h_i / h_{i+1}) against the next finer run.
    pub observed_order: f64,
    pub status: String,
}

/// Run the base configuration once per value and tabulate errors.
pub fn cmd_sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], parallel: bool, log: &mut (dyn Write + Send)) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let configs: Vec<(f64, RunConfig)> = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            let tag = format!("{v}");
            match axis {
                SweepAxis::N => c.points = v as usize,
                SweepAxis::L => c.domain = DomainSpec::Explicit(v),
                SweepAxis::Dt => c.dt = StepSize::Fixed(v),
            }
            c.output = base.output.join(format!("sweep-{}-{tag}", axis_name(axis)));
            (v, c)
        })
        .collect();
    let one = |c: &RunConfig| -> (Result<RunOutcome>, Vec<u8>) {
        let mut buf = Vec::new();
        let r = cmd_run(c, &mut buf);
        (r, buf)
    };
    let results: Vec<(Result<RunOutcome>, Vec<u8>)> = if parallel {
        configs.par_iter().map(|(_, c)| one(c)).collect()
    } else {
        configs.iter().map(|(_, c)| one(c)).collect()
    };
    for (_, buf) in &results {
        let _ = log.write_all(buf);
    }
    // most refined run: largest N, smallest dt; L sweeps have no common grid
    let finest = match axis {
        SweepAxis::N => values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0),
        SweepAxis::Dt => values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0),
        SweepAxis::L => None,
    };
    let reference = finest.and_then(|i| results[i].0.as_ref().ok().map(|o| o.final_state.clone()));
    let mut rows: Vec<SweepRow> = configs
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, ((v, _), (r, _)))| match r {
            Ok(o) => {
                let err_ref = match (&reference, Some(i) == finest) {
                    (_, true) => f64::NAN,
                    (Some(rf), false) => {
                        let rf = if **rf.grid() == **o.final_state.grid() {
                            Ok(rf.clone())
                        } else {
                            resample(rf, o.final_state.grid())
                        };
                        match rf {
                            Ok(rf) => {
                                let d: Vec<f64> = o.final_state.values().iter().zip(rf.values()).map(|(a, b)| a - b).collect();
                                o.final_state.grid().l2_norm(&d)
                            }
                            Err(_) => f64::NAN,
                        }
                    }
                    (None, false) => f64::NAN,
                };
                SweepRow {
                    value: *v,
                    error_vs_reference: err_ref,
                    error_vs_equilibrium: o.equilibrium_error,
                    invariant_drift: o.invariant_drift,
                    wall_seconds: o.wall_seconds,
                    observed_order: f64::NAN,
                    status: match &o.abort {
                        None => "ok".into(),
                        Some(e) => format!("aborted: {e}"),
                    },
                }
            }
            Err(e) => SweepRow {
                value: *v,
                error_vs_reference: f64::NAN,
                error_vs_equilibrium: f64::NAN,
                invariant_drift: f64::NAN,
                wall_seconds: 0.0,
                observed_order: f64::NAN,
                status: format!("failed: {e}"),
            },
        })
        .collect();
    if axis == SweepAxis::Dt {
        let mut order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].error_vs_reference.is_finite()).collect();
        order.sort_by(|&a, &b| rows[b].value.total_cmp(&rows[a].value));
        for w in order.windows(2) {
            let (a, b) = (&rows[w[0]], &rows[w[1]]);
            let p = (a.error_vs_reference / b.error_vs_reference).ln() / (a.value / b.value).ln();
            rows[w[0]].observed_order = p;
        }
    }
    std::fs::create_dir_all(&base.output).map_err(|e| Error::io(&base.output, e))?;
    let path = base.output.join(format!("sweep_{}.csv", axis_name(axis)));
    std::fs::write(&path, sweep_table(axis, &rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::N => "N",
        SweepAxis::L => "L",
        SweepAxis::Dt => "dt",
    }
}

/// Convergence table as CSV.
pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},error_vs_ref,error_vs_M0,invariant_drift,wall_s,observed_order,status\n", axis_name(axis));
    for r in rows {
        s.push_str(&format!(
            "{},{:.6e},{:.6e},{:.3e},{:.3},{:.3},{}\n",
            r.value, r.error_vs_reference, r.error_vs_equilibrium, r.invariant_drift, r.wall_seconds, r.observed_order, r.status
        ));
    }
    s
}

/// Build (or confirm) the cached weight table for a configuration.
pub fn cmd_table_build(cfg: &RunConfig, log: &mut dyn Write) -> Result<CacheStatus> {
    let initial = cfg.initial_state()?;
    Ok(prepare(cfg, initial.grid().clone(), log)?.2)
}

#[derive(Debug, Parser)]
#[command(name = "bspc", version, about = "Conservative spectral solver for the space-homogeneous Boltzmann equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation described by a TOML configuration.
    Run { config: PathBuf },
    /// Repeat a run over several values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Run the sweep points concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Manage the weight-table cache.
    TableCache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    /// Build the table a configuration needs.
    Build { config: PathBuf },
    /// Delete all cached tables.
    Clear {
        /// Cache directory (default: $BSPC_CACHE_DIR or the user cache directory).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let mut err = std::io::stderr();
    let result: Result<i32> = (|| match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let o = cmd_run(&cfg, &mut err)?;
            println!(
                "steps {} dt {:.6e} final_t {:.6e} invariant_drift {:.3e} L2_error_vs_M0 {:.6e} wall {:.2} s",
                o.steps, o.dt, o.final_state.t, o.invariant_drift, o.equilibrium_error, o.wall_seconds
            );
            match o.abort {
                None => Ok(0),
                Some(e) => {
                    eprintln!("run aborted: {e}; partial outputs kept in {}", cfg.output.display());
                    Ok(2)
                }
            }
        }
        Command::Sweep { config, axis, values, parallel } => {
            let cfg = load_config(&config)?;
            let mut log = std::io::stderr();
            let rows = cmd_sweep(&cfg, axis, &values, parallel, &mut log)?;
            print!("{}", sweep_table(axis, &rows));
            Ok(if rows.iter().all(|r| r.status == "ok") { 0 } else { 2 })
        }
        Command::TableCache { action: CacheAction::Build { config } } => {
            let cfg = load_config(&config)?;
            cmd_table_build(&cfg, &mut err)?;
            Ok(0)
        }
        Command::TableCache { action: CacheAction::Clear { dir } } => {
            let root = dir.unwrap_or_else(default_cache_root);
            let n = TableCache::new(&root).clear()?;
            println!("removed {n} cached tables from {}", root.display());
            Ok(0)
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
