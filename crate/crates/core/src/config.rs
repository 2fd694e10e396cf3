//! Run configuration files (TOML) and their validation.
//!
//! ```toml
//! experiment = "drive"
//!
//! [domain]
//! dim = 1
//! size = 256
//!
//! [dynamics]
//! lambda = 1.0
//! kernel = "symmetric"
//!
//! [grid]
//! start = 0.0
//! stop = 1.2
//! step = 0.05
//! ```

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::experiments::linear_grid;
use crate::initial::{Family, InitialStateSpec};
use crate::lattice::{Boundary, Domain, JumpKernel};
use crate::topple::Scheduler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Drive,
    Scan,
    Gillespie,
    Couple,
    Selftest,
    Estimate,
    Universality,
}

impl ExperimentKind {
    pub const ALL: [&'static str; 7] = ["drive", "scan", "gillespie", "couple", "selftest", "estimate", "universality"];

    pub fn name(self) -> &'static str {
        Self::ALL[self as usize]
    }

    fn default_boundary(self) -> Boundary {
        match self {
            ExperimentKind::Drive | ExperimentKind::Estimate => Boundary::Absorbing,
            _ => Boundary::Torus,
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use ExperimentKind::*;
        let all = [Drive, Scan, Gillespie, Couple, Selftest, Estimate, Universality];
        all.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}` (expected one of {})", Self::ALL.join(", ")))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A problem with a configuration, located when it came from a file.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub key: Option<String>,
    pub message: String,
    pub suggestion: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        f.write_str(&self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn new(key: Option<&str>, message: impl Into<String>) -> Self {
        Self { line: None, column: None, key: key.map(str::to_string), message: message.into(), suggestion: None }
    }

    fn at(mut self, text: &str, offset: usize) -> Self {
        let (line, column) = line_col(text, offset);
        self.line = Some(line);
        self.column = Some(column);
        self
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Spanned<String>,
    domain: Option<RawDomain>,
    dynamics: Option<RawDynamics>,
    initial: Option<RawInitial>,
    grid: Option<RawGrid>,
    run: Option<RawRun>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    dim: Option<Spanned<i64>>,
    size: Option<Spanned<i64>>,
    sides: Option<Spanned<Vec<i64>>>,
    boundary: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    lambda: Option<Spanned<f64>>,
    kernel: Option<Spanned<String>>,
    scheduler: Option<Spanned<String>>,
    cap: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    family: Option<Spanned<String>>,
    zeta: Option<Spanned<f64>>,
    zeta_upper: Option<Spanned<f64>>,
    period: Option<Spanned<i64>>,
    half: Option<Spanned<i64>>,
    pattern: Option<Vec<u32>>,
    families: Option<Spanned<Vec<String>>>,
    snapshot: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    start: Option<Spanned<f64>>,
    stop: Option<Spanned<f64>>,
    step: Option<Spanned<f64>>,
    values: Option<Spanned<Vec<f64>>>,
    drive_values: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<Spanned<i64>>,
    replicas: Option<Spanned<i64>>,
    resamples: Option<Spanned<i64>>,
    doubled: Option<bool>,
    round_cap: Option<Spanned<i64>>,
    horizon: Option<Spanned<f64>>,
    max_events: Option<Spanned<i64>>,
    input: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

/// Where the jump kernel comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "source", content = "value")]
pub enum KernelSpec {
    /// `symmetric` or `drift:<bias>`.
    Builtin(String),
    File(PathBuf),
}

impl KernelSpec {
    pub fn parse(s: &str) -> Self {
        if s == "symmetric" || s.starts_with("drift:") {
            KernelSpec::Builtin(s.to_string())
        } else {
            KernelSpec::File(PathBuf::from(s))
        }
    }

    /// Builds the kernel; file paths are taken relative to `base`.
    pub fn resolve(&self, dim: usize, base: &Path) -> Result<JumpKernel, String> {
        let kernel = match self {
            KernelSpec::Builtin(name) if name == "symmetric" => JumpKernel::symmetric(dim),
            KernelSpec::Builtin(name) => {
                let bias: f64 = name["drift:".len()..].parse().map_err(|_| format!("bad drift bias in `{name}`"))?;
                if !(-1.0..=1.0).contains(&bias) || bias.abs() == 1.0 {
                    return Err(format!("drift bias must lie strictly between -1 and 1, got {bias}"));
                }
                JumpKernel::drift(dim, bias)
            }
            KernelSpec::File(path) => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let text = std::fs::read_to_string(&full).map_err(|e| format!("cannot read kernel file {}: {e}", full.display()))?;
                JumpKernel::parse_table(dim, &text)?
            }
        };
        kernel.validate().map_err(|e| e.to_string())?;
        Ok(kernel)
    }
}

/// A validated run description. Together with the build it fixes every output byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub sides: Vec<usize>,
    pub boundary: Boundary,
    pub lambda: f64,
    pub kernel: KernelSpec,
    #[serde(skip)]
    pub kernel_table: JumpKernel,
    pub scheduler: Scheduler,
    pub cap: Option<u64>,
    pub family: Family,
    pub zeta: f64,
    pub zeta_upper: f64,
    pub families: Vec<Family>,
    pub snapshot: Option<PathBuf>,
    pub grid: Vec<f64>,
    pub drive_grid: Vec<f64>,
    pub seed: u64,
    pub replicas: usize,
    pub resamples: usize,
    pub doubled: bool,
    pub round_cap: usize,
    pub horizon: f64,
    pub max_events: u64,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn parse_family(name: &str, period: usize, half: usize, pattern: Option<Vec<u32>>) -> Result<Family, String> {
    match name {
        "poisson" => Ok(Family::Poisson),
        "bernoulli" => Ok(Family::Bernoulli),
        "periodic" => Ok(Family::PeriodicPattern { period, pattern }),
        "block-renewal" => Ok(Family::BlockRenewal { half }),
        _ => Err(format!("unknown family `{name}` (expected poisson, bernoulli, periodic, block-renewal)")),
    }
}

impl RunConfig {
    /// Defaults for an experiment on a cube of side `size`.
    pub fn defaults(experiment: ExperimentKind, dim: usize, size: usize) -> Self {
        let (grid, drive_grid) = match experiment {
            ExperimentKind::Scan => (linear_grid(0.05, 0.95, 0.05), Vec::new()),
            ExperimentKind::Universality => {
                ((1..=12).map(|k| k as f64 / 16.0).collect(), (0..20).map(|k| k as f64 / 16.0).collect())
            }
            _ => (linear_grid(0.0, 1.2, 0.05), Vec::new()),
        };
        Self {
            experiment,
            sides: vec![size; dim],
            boundary: experiment.default_boundary(),
            lambda: 1.0,
            kernel: KernelSpec::Builtin("symmetric".into()),
            kernel_table: JumpKernel::symmetric(dim),
            scheduler: Scheduler::Fifo,
            cap: None,
            family: Family::Poisson,
            zeta: 0.5,
            zeta_upper: 0.5,
            families: vec![Family::Poisson, Family::periodic(16), Family::block_renewal()],
            snapshot: None,
            grid,
            drive_grid,
            seed: 1,
            replicas: 20,
            resamples: 200,
            doubled: false,
            round_cap: crate::coupling::DEFAULT_ROUND_CAP,
            horizon: f64::INFINITY,
            max_events: 100_000_000,
            input: None,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.sides.clone(), self.boundary)
    }

    pub fn initial_spec(&self, zeta: f64, seed: u64) -> InitialStateSpec {
        InitialStateSpec::new(self.family.clone(), zeta, seed)
    }

    /// Range and consistency checks; errors name the offending key.
    pub fn check(&self) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::new(Some(key), msg));
        if self.sides.is_empty() || self.sides.contains(&0) {
            return err("domain.size", "side lengths must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return err("dynamics.lambda", format!("dynamics.lambda must be positive and finite, got {}", self.lambda));
        }
        if self.kernel_table.dim() != self.dim() {
            return err("dynamics.kernel", format!("kernel dimension {} does not match domain dimension {}", self.kernel_table.dim(), self.dim()));
        }
        if let Err(e) = self.kernel_table.validate() {
            return err("dynamics.kernel", format!("dynamics.kernel: {e}"));
        }
        for (key, z) in [("initial.zeta", self.zeta), ("initial.zeta_upper", self.zeta_upper)] {
            if !(z >= 0.0 && z.is_finite()) {
                return err(key, format!("{key} must be finite and non-negative, got {z}"));
            }
        }
        for (key, g) in [("grid", &self.grid), ("grid.drive_values", &self.drive_grid)] {
            if let Some(z) = g.iter().find(|z| !(**z >= 0.0 && z.is_finite())) {
                return err(key, format!("{key}: densities must be finite and non-negative, got {z}"));
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return err(key, format!("{key}: values must be strictly increasing"));
            }
        }
        if self.grid.is_empty() && matches!(self.experiment, ExperimentKind::Drive | ExperimentKind::Scan | ExperimentKind::Universality) {
            return err("grid", "grid is empty".into());
        }
        if self.replicas == 0 {
            return err("run.replicas", "run.replicas must be at least 1".into());
        }
        if self.round_cap == 0 {
            return err("run.round_cap", "run.round_cap must be at least 1".into());
        }
        if self.cap == Some(0) {
            return err("dynamics.cap", "dynamics.cap must be at least 1".into());
        }
        if !(self.horizon > 0.0) {
            return err("run.horizon", format!("run.horizon must be positive, got {}", self.horizon));
        }
        let domain = self.domain();
        let needs = match self.experiment {
            ExperimentKind::Drive => Some(Boundary::Absorbing),
            ExperimentKind::Scan | ExperimentKind::Couple | ExperimentKind::Universality => Some(Boundary::Torus),
            _ => None,
        };
        if let Some(b) = needs {
            if self.boundary != b {
                return err("domain.boundary", format!("{} needs a {b} boundary, got {}", self.experiment, self.boundary));
            }
        }
        let families: &[Family] =
            if self.experiment == ExperimentKind::Universality { &self.families } else { std::slice::from_ref(&self.family) };
        for family in families {
            let check_domain = if self.experiment == ExperimentKind::Universality { domain.with_boundary(Boundary::Torus) } else { domain.clone() };
            if let Err(e) = InitialStateSpec::new(family.clone(), 0.0, 0).check(&check_domain) {
                return err("initial.family", format!("initial.family: {e}"));
            }
        }
        if self.experiment == ExperimentKind::Universality && self.families.len() < 2 {
            return err("initial.families", "initial.families needs at least two families".into());
        }
        if self.experiment == ExperimentKind::Estimate && self.input.is_none() {
            return err("run.input", "estimate needs run.input (a drive NDJSON file)".into());
        }
        Ok(())
    }
}

/// Parses and validates a configuration; kernel files resolve against the working directory.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

/// [`parse_config`] with kernel and input paths relative to `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let mut spans: HashMap<&'static str, Range<usize>> = HashMap::new();
    macro_rules! take {
        ($opt:expr, $key:literal) => {
            $opt.map(|s| {
                spans.insert($key, s.span());
                s.into_inner()
            })
        };
    }
    let located = |spans: &HashMap<&'static str, Range<usize>>, e: ConfigError| match e.key.as_deref().and_then(|k| spans.get(k)) {
        Some(r) => e.at(text, r.start),
        None => e,
    };
    let non_negative = |key: &'static str, v: i64, spans: &HashMap<&'static str, Range<usize>>| -> Result<u64, ConfigError> {
        u64::try_from(v).map_err(|_| located(spans, ConfigError::new(Some(key), format!("{key} must be non-negative, got {v}"))))
    };

    let exp_span = raw.experiment.span();
    let experiment: ExperimentKind = raw
        .experiment
        .get_ref()
        .parse()
        .map_err(|m: String| ConfigError::new(Some("experiment"), m).at(text, exp_span.start))?;

    let d = raw.domain.unwrap_or_default();
    let dim = take!(d.dim, "domain.dim").unwrap_or(1);
    if !(1..=8).contains(&dim) {
        return Err(located(&spans, ConfigError::new(Some("domain.dim"), format!("domain.dim must be between 1 and 8, got {dim}"))));
    }
    let size = take!(d.size, "domain.size");
    let sides_raw = take!(d.sides, "domain.sides");
    let sides: Vec<i64> = match (size, sides_raw) {
        (Some(_), Some(_)) => {
            return Err(located(&spans, ConfigError::new(Some("domain.sides"), "give either domain.size or domain.sides, not both")))
        }
        (Some(s), None) => vec![s; dim as usize],
        (None, Some(v)) => {
            if v.len() != dim as usize {
                return Err(located(&spans, ConfigError::new(Some("domain.sides"), format!("domain.sides has {} entries for dim {dim}", v.len()))));
            }
            v
        }
        (None, None) => vec![256; dim as usize],
    };
    if let Some(&bad) = sides.iter().find(|&&l| l < 1) {
        let key = if spans.contains_key("domain.size") { "domain.size" } else { "domain.sides" };
        return Err(located(&spans, ConfigError::new(Some(key), format!("{key} must be positive, got {bad}"))));
    }
    let mut cfg = RunConfig::defaults(experiment, dim as usize, 1);
    cfg.sides = sides.iter().map(|&l| l as usize).collect();
    if let Some(b) = take!(d.boundary, "domain.boundary") {
        cfg.boundary = b.parse().map_err(|m: String| located(&spans, ConfigError::new(Some("domain.boundary"), m)))?;
    }

    let dy = raw.dynamics.unwrap_or_default();
    if let Some(l) = take!(dy.lambda, "dynamics.lambda") {
        cfg.lambda = l;
    }
    if let Some(k) = take!(dy.kernel, "dynamics.kernel") {
        cfg.kernel = KernelSpec::parse(&k);
    }
    cfg.kernel_table = match cfg.kernel.resolve(cfg.dim(), base) {
        Ok(k) => k,
        Err(m) => return Err(located(&spans, ConfigError::new(Some("dynamics.kernel"), format!("dynamics.kernel: {m}")))),
    };
    if let Some(s) = take!(dy.scheduler, "dynamics.scheduler") {
        cfg.scheduler = s.parse().map_err(|m: String| located(&spans, ConfigError::new(Some("dynamics.scheduler"), m)))?;
    }
    if let Some(c) = take!(dy.cap, "dynamics.cap") {
        cfg.cap = Some(non_negative("dynamics.cap", c, &spans)?);
    }

    let ini = raw.initial.unwrap_or_default();
    let period = take!(ini.period, "initial.period").unwrap_or(16);
    let half = take!(ini.half, "initial.half").unwrap_or(2);
    let period = non_negative("initial.period", period, &spans)? as usize;
    let half = non_negative("initial.half", half, &spans)? as usize;
    if let Some(f) = take!(ini.family, "initial.family") {
        cfg.family = parse_family(&f, period, half, ini.pattern.clone())
            .map_err(|m| located(&spans, ConfigError::new(Some("initial.family"), m)))?;
    }
    if let Some(fs) = take!(ini.families, "initial.families") {
        cfg.families = fs
            .iter()
            .map(|f| parse_family(f, period, half, None))
            .collect::<Result<_, _>>()
            .map_err(|m| located(&spans, ConfigError::new(Some("initial.families"), m)))?;
    } else if experiment == ExperimentKind::Universality {
        cfg.families = vec![Family::Poisson, Family::periodic(period), Family::BlockRenewal { half }];
    }
    if let Some(z) = take!(ini.zeta, "initial.zeta") {
        cfg.zeta = z;
    }
    if let Some(z) = take!(ini.zeta_upper, "initial.zeta_upper") {
        cfg.zeta_upper = z;
    }
    cfg.snapshot = ini.snapshot.map(|p| base.join(p));

    let g = raw.grid.unwrap_or_default();
    let start = take!(g.start, "grid.start");
    let stop = take!(g.stop, "grid.stop");
    let step = take!(g.step, "grid.step");
    let values = take!(g.values, "grid.values");
    match (values, start, stop, step) {
        (Some(v), None, None, None) => cfg.grid = v,
        (Some(_), ..) => {
            return Err(located(&spans, ConfigError::new(Some("grid.values"), "give either grid.values or start/stop/step, not both")))
        }
        (None, None, None, None) => {}
        (None, start, stop, step) => {
            let start = start.unwrap_or(0.0);
            let (Some(stop), Some(step)) = (stop, step) else {
                return Err(located(&spans, ConfigError::new(Some("grid.stop"), "grid needs both stop and step")));
            };
            if !(step > 0.0) {
                return Err(located(&spans, ConfigError::new(Some("grid.step"), format!("grid.step must be positive, got {step}"))));
            }
            if stop < start {
                return Err(located(&spans, ConfigError::new(Some("grid.stop"), format!("grid.stop {stop} is below grid.start {start}"))));
            }
            if start < 0.0 {
                return Err(located(&spans, ConfigError::new(Some("grid.start"), format!("grid.start must be non-negative, got {start}"))));
            }
            cfg.grid = linear_grid(start, stop, step);
        }
    }
    if let Some(v) = take!(g.drive_values, "grid.drive_values") {
        cfg.drive_grid = v;
    }

    let r = raw.run.unwrap_or_default();
    if let Some(s) = take!(r.seed, "run.seed") {
        cfg.seed = non_negative("run.seed", s, &spans)?;
    }
    if let Some(v) = take!(r.replicas, "run.replicas") {
        cfg.replicas = non_negative("run.replicas", v, &spans)? as usize;
    }
    if let Some(v) = take!(r.resamples, "run.resamples") {
        cfg.resamples = non_negative("run.resamples", v, &spans)? as usize;
    }
    if let Some(v) = r.doubled {
        cfg.doubled = v;
    }
    if let Some(v) = take!(r.round_cap, "run.round_cap") {
        cfg.round_cap = non_negative("run.round_cap", v, &spans)? as usize;
    }
    if let Some(v) = take!(r.horizon, "run.horizon") {
        cfg.horizon = v;
    }
    if let Some(v) = take!(r.max_events, "run.max_events") {
        cfg.max_events = non_negative("run.max_events", v, &spans)?;
    }
    cfg.input = r.input.map(|p| base.join(p));
    if let Some(dir) = raw.output.and_then(|o| o.dir) {
        cfg.out_dir = PathBuf::from(dir);
    }

    // span of the grid error points at whichever grid key was given
    if let Some(r) = spans.get("grid.start").or(spans.get("grid.values")).or(spans.get("grid.step")).cloned() {
        spans.entry("grid").or_insert(r);
    }
    cfg.check().map_err(|e| located(&spans, e))?;
    Ok(cfg)
}

/// Converts a TOML error, adding a nearest-key suggestion for unknown fields.
fn toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().trim().to_string();
    let ticked: Vec<&str> = message.split('`').skip(1).step_by(2).collect();
    let mut err = ConfigError::new(None, message.clone());
    if message.starts_with("unknown field") {
        if let Some((&unknown, expected)) = ticked.split_first() {
            err.key = Some(unknown.to_string());
            err.suggestion = expected
                .iter()
                .map(|&k| (strsim::levenshtein(unknown, k), k))
                .filter(|&(d, k)| d <= 2.max(k.len() / 3))
                .min()
                .map(|(_, k)| k.to_string());
        }
    }
    match e.span() {
        Some(r) => err.at(text, r.start),
        None => err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_col_counts_from_one() {
        let t = "a = 1\nbb = 2\n";
        assert_eq!(line_col(t, 0), (1, 1));
        assert_eq!(line_col(t, 6), (2, 1));
        assert_eq!(line_col(t, 8), (2, 3));
    }

    #[test]
    fn experiment_names_round_trip() {
        for name in ExperimentKind::ALL {
            assert_eq!(name.parse::<ExperimentKind>().unwrap().name(), name);
        }
        assert!("drve".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn builtin_kernels() {
        let base = Path::new(".");
        assert_eq!(KernelSpec::parse("symmetric").resolve(2, base).unwrap(), JumpKernel::symmetric(2));
        let k = KernelSpec::parse("drift:0.5").resolve(1, base).unwrap();
        assert_eq!(k.probability(0), 0.75);
        assert!(KernelSpec::parse("drift:1").resolve(1, base).is_err());
        assert!(KernelSpec::parse("no/such/file.kernel").resolve(1, base).is_err());
    }
}
