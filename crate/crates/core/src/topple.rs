//! Topplings, odometers and stabilization.
//!
//! Toppling `x` applies the instruction at depth `h(x) + 1` and bumps
//! `h(x)`. It is legal when `x` holds an active particle and acceptable when
//! `x` holds any particle. [`Stabilizer`] performs legal topplings inside a
//! region until every site of the region is stable; the order is chosen by a
//! [`Scheduler`], and the abelian property makes the result independent of
//! that choice.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Code, InstructionField};
use crate::lattice::{Configuration, JumpTable, SiteState, Target};
use crate::rng::{CounterRng, Stream};

/// Per-site toppling counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Odometer(Vec<u64>);

impl Odometer {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn from_vec(v: Vec<u64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, site: usize) -> u64 {
        self.0[site]
    }

    pub fn set(&mut self, site: usize, value: u64) {
        self.0[site] = value;
    }

    #[inline]
    pub fn bump(&mut self, site: usize) {
        self.0[site] += 1;
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u64> {
        self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.0.len() as f64
    }

    /// Pointwise `self <= other`.
    pub fn le(&self, other: &Odometer) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Sites where `self > other`.
    pub fn excess_sites(&self, other: &Odometer) -> Vec<usize> {
        (0..self.0.len()).filter(|&x| self.0[x] > other.0[x]).collect()
    }

    pub fn plus(&self, other: &Odometer) -> Odometer {
        Odometer(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self - base`; panics if some entry would go negative.
    pub fn minus(&self, base: &Odometer) -> Odometer {
        Odometer(
            self.0
                .iter()
                .zip(&base.0)
                .map(|(a, b)| a.checked_sub(*b).expect("odometer decreased"))
                .collect(),
        )
    }

    /// Toppling counts `m_alpha` of a sequence.
    pub fn of_sequence(n: usize, seq: &[usize]) -> Odometer {
        let mut m = Odometer::zeros(n);
        for &x in seq {
            m.bump(x);
        }
        m
    }
}

/// A set of sites `V`, kept both as a mask and as a raster-ordered list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSet {
    mask: Vec<bool>,
    sites: Vec<usize>,
}

impl SiteSet {
    pub fn all(n: usize) -> Self {
        Self { mask: vec![true; n], sites: (0..n).collect() }
    }

    pub fn from_sites(n: usize, sites: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; n];
        for x in sites {
            mask[x] = true;
        }
        let sites = (0..n).filter(|&x| mask[x]).collect();
        Self { mask, sites }
    }

    #[inline(always)]
    pub fn contains(&self, site: usize) -> bool {
        self.mask[site]
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.sites.iter().all(|&x| other.contains(x))
    }
}

/// What one toppling did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Sleep instruction; `fell_asleep` is false when the site was crowded or already asleep.
    Sleep { fell_asleep: bool },
    Moved { to: usize },
    Exited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Effect {
    pub site: usize,
    /// Depth consumed in the unshifted instruction stack.
    pub raw_index: u64,
    /// The site held a sleeping particle, so the toppling was acceptable but not legal.
    pub forced: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToppleError {
    #[error("site {site} is empty; toppling it is not acceptable")]
    NotAcceptable { site: usize },
}

#[inline]
pub fn is_legal(config: &Configuration, site: usize) -> bool {
    config.get(site).is_active()
}

#[inline]
pub fn is_acceptable(config: &Configuration, site: usize) -> bool {
    config.get(site) != SiteState::Empty
}

#[inline(always)]
fn fire(
    config: &mut Configuration,
    odometer: &mut Odometer,
    field: &InstructionField,
    site: usize,
    resolve: impl Fn(usize, usize) -> Target,
) -> Effect {
    let forced = config.get(site) == SiteState::Sleeping;
    let depth = odometer.get(site) + 1;
    let raw_index = field.raw_index(site, depth);
    let outcome = match field.code(site, depth) {
        Code::Sleep => Outcome::Sleep { fell_asleep: config.sleep(site).expect("acceptable") },
        Code::Jump(k) => {
            config.decrement(site).expect("acceptable");
            match resolve(site, k) {
                Target::InDomain(to) => {
                    config.increment(to);
                    Outcome::Moved { to }
                }
                Target::Exited => Outcome::Exited,
            }
        }
    };
    odometer.bump(site);
    Effect { site, raw_index, forced, outcome }
}

/// Applies one (acceptable) toppling at `site`.
pub fn topple(
    config: &mut Configuration,
    odometer: &mut Odometer,
    field: &InstructionField,
    site: usize,
) -> Result<Effect, ToppleError> {
    if !is_acceptable(config, site) {
        return Err(ToppleError::NotAcceptable { site });
    }
    let domain = config.domain().clone();
    let kernel = field.kernel();
    Ok(fire(config, odometer, field, site, |x, k| domain.resolve_jump(x, kernel.offset(k))))
}

/// [`topple`] with a precomputed jump table; the site must be acceptable.
#[inline]
pub(crate) fn topple_with(
    config: &mut Configuration,
    odometer: &mut Odometer,
    field: &InstructionField,
    table: &JumpTable,
    site: usize,
) -> Effect {
    debug_assert!(is_acceptable(config, site));
    fire(config, odometer, field, site, |s, k| table.target(s, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Legal,
    Acceptable,
}

/// Result of applying a fixed toppling sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub config: Configuration,
    pub odometer: Odometer,
    pub steps: Vec<StepKind>,
    pub effects: Vec<Effect>,
    /// Index of the first non-acceptable step, if any; the state is the one just before it.
    pub aborted_at: Option<usize>,
}

impl SequenceOutcome {
    pub fn is_acceptable(&self) -> bool {
        self.aborted_at.is_none()
    }

    pub fn is_legal(&self) -> bool {
        self.aborted_at.is_none() && self.steps.iter().all(|&s| s == StepKind::Legal)
    }
}

/// Applies `sequence` in order, stopping at the first non-acceptable step.
pub fn apply_sequence(
    config: &Configuration,
    odometer: &Odometer,
    field: &InstructionField,
    sequence: &[usize],
) -> SequenceOutcome {
    let mut config = config.clone();
    let mut odometer = odometer.clone();
    let table = JumpTable::new(config.domain(), field.kernel());
    let mut steps = Vec::with_capacity(sequence.len());
    let mut effects = Vec::with_capacity(sequence.len());
    for (i, &x) in sequence.iter().enumerate() {
        let kind = match config.get(x) {
            SiteState::Empty => {
                return SequenceOutcome { config, odometer, steps, effects, aborted_at: Some(i) };
            }
            SiteState::Sleeping => StepKind::Acceptable,
            SiteState::Active(_) => StepKind::Legal,
        };
        steps.push(kind);
        effects.push(fire(&mut config, &mut odometer, field, x, |s, k| table.target(s, k)));
    }
    SequenceOutcome { config, odometer, steps, effects, aborted_at: None }
}

/// Order in which unstable sites are toppled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduler {
    /// Queue of unstable sites; the popped site is toppled until it is stable.
    #[default]
    Fifo,
    /// Repeated raster passes toppling each unstable site once.
    RasterSweep,
    /// One toppling at a uniformly chosen unstable site, repeatedly.
    Random { seed: u64 },
    /// Generations: every site unstable at the start of a generation topples once.
    Wavefront,
}

impl Scheduler {
    pub const ALL_KINDS: [&'static str; 4] = ["fifo", "raster", "random", "wavefront"];

    pub fn name(&self) -> &'static str {
        match self {
            Scheduler::Fifo => "fifo",
            Scheduler::RasterSweep => "raster",
            Scheduler::Random { .. } => "random",
            Scheduler::Wavefront => "wavefront",
        }
    }

    /// The four schedulers, with `seed` for the random one.
    pub fn catalogue(seed: u64) -> [Scheduler; 4] {
        [Scheduler::Fifo, Scheduler::RasterSweep, Scheduler::Random { seed }, Scheduler::Wavefront]
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheduler {
    type Err = String;
    /// `fifo`, `raster`, `wavefront`, `random` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(Scheduler::Fifo),
            "raster" | "raster-sweep" => Ok(Scheduler::RasterSweep),
            "wavefront" => Ok(Scheduler::Wavefront),
            "random" => Ok(Scheduler::Random { seed: 0 }),
            _ => match s.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| Scheduler::Random { seed })
                    .map_err(|_| format!("bad random scheduler seed in `{s}`")),
                None => Err(format!("unknown scheduler `{s}` (expected one of fifo, raster, random, wavefront)")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Stable,
    CapExceeded,
}

/// Topplings allowed per site of the region when no cap is given.
pub const DEFAULT_CAP_PER_SITE: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct StabilizeReport {
    pub config: Configuration,
    pub odometer: Odometer,
    pub topplings: u64,
    pub dissipated: u64,
    /// Sleep instructions that put a lone particle to sleep.
    pub slept: u64,
    pub termination: Termination,
    /// Jumps leaving each site, counting exits.
    pub departures: Vec<u64>,
    /// Particles received by each site.
    pub arrivals: Vec<u64>,
    /// Every toppling in order, when tracing was requested.
    pub trace: Option<Vec<Effect>>,
}

impl StabilizeReport {
    pub fn is_stable(&self) -> bool {
        self.termination == Termination::Stable
    }

    /// One NDJSON row describing this run.
    pub fn record(&self, seed: u64, field: &InstructionField, scheduler: Scheduler) -> StabilizeRecord {
        StabilizeRecord {
            seed,
            domain: self.config.domain().to_string(),
            lambda: field.lambda(),
            kernel: field.kernel().label(),
            scheduler: scheduler.name(),
            topplings: self.topplings,
            dissipated: self.dissipated,
            slept: self.slept,
            termination: self.termination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizeRecord {
    pub seed: u64,
    pub domain: String,
    pub lambda: f64,
    pub kernel: String,
    pub scheduler: &'static str,
    pub topplings: u64,
    pub dissipated: u64,
    pub slept: u64,
    pub termination: Termination,
}

/// Legal stabilization inside a region.
#[derive(Debug, Clone)]
pub struct Stabilizer<'a> {
    field: &'a InstructionField,
    region: Option<&'a SiteSet>,
    scheduler: Scheduler,
    cap: Option<u64>,
    trace: bool,
}

struct Run<'a> {
    config: Configuration,
    odometer: Odometer,
    field: &'a InstructionField,
    table: JumpTable,
    topplings: u64,
    dissipated: u64,
    slept: u64,
    departures: Vec<u64>,
    arrivals: Vec<u64>,
    trace: Option<Vec<Effect>>,
}

impl Run<'_> {
    #[inline(always)]
    fn fire(&mut self, x: usize) -> Outcome {
        let table = &self.table;
        let e = fire(&mut self.config, &mut self.odometer, self.field, x, |s, k| table.target(s, k));
        self.topplings += 1;
        match e.outcome {
            Outcome::Sleep { fell_asleep } => self.slept += fell_asleep as u64,
            Outcome::Moved { to } => {
                self.departures[x] += 1;
                self.arrivals[to] += 1;
            }
            Outcome::Exited => {
                self.departures[x] += 1;
                self.dissipated += 1;
            }
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(e);
        }
        e.outcome
    }
}

impl<'a> Stabilizer<'a> {
    pub fn new(field: &'a InstructionField) -> Self {
        Self { field, region: None, scheduler: Scheduler::Fifo, cap: None, trace: false }
    }

    /// Restricts topplings to `region` (default: the whole domain).
    pub fn region(mut self, region: &'a SiteSet) -> Self {
        self.region = Some(region);
        self
    }

    pub fn scheduler(mut self, scheduler: Scheduler) -> Self {
        self.scheduler = scheduler;
        self
    }

    /// Total toppling budget (default `DEFAULT_CAP_PER_SITE * |V|`).
    pub fn cap(mut self, cap: u64) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn cap_opt(mut self, cap: Option<u64>) -> Self {
        self.cap = cap;
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn run(&self, config: Configuration, odometer: Odometer) -> StabilizeReport {
        let n = config.len();
        assert_eq!(odometer.len(), n, "odometer does not match configuration");
        assert_eq!(self.field.sites(), n, "field built for a different domain");
        let whole;
        let region = match self.region {
            Some(r) => {
                assert_eq!(r.universe(), n, "region does not match configuration");
                r
            }
            None => {
                whole = SiteSet::all(n);
                &whole
            }
        };
        let cap = self.cap.unwrap_or(DEFAULT_CAP_PER_SITE.saturating_mul(region.len().max(1) as u64));
        let mut run = Run {
            table: JumpTable::new(config.domain(), self.field.kernel()),
            config,
            odometer,
            field: self.field,
            topplings: 0,
            dissipated: 0,
            slept: 0,
            departures: vec![0; n],
            arrivals: vec![0; n],
            trace: self.trace.then(Vec::new),
        };
        let stable = match self.scheduler {
            Scheduler::Fifo => fifo(&mut run, region, cap),
            Scheduler::RasterSweep => raster(&mut run, region, cap),
            Scheduler::Random { seed } => random(&mut run, region, cap, seed),
            Scheduler::Wavefront => wavefront(&mut run, region, cap),
        };
        StabilizeReport {
            config: run.config,
            odometer: run.odometer,
            topplings: run.topplings,
            dissipated: run.dissipated,
            slept: run.slept,
            termination: if stable { Termination::Stable } else { Termination::CapExceeded },
            departures: run.departures,
            arrivals: run.arrivals,
            trace: run.trace,
        }
    }
}

fn fifo(run: &mut Run, region: &SiteSet, cap: u64) -> bool {
    let n = run.config.len();
    let mut queued = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &x in region.sites() {
        if run.config.get(x).is_active() {
            queued[x] = true;
            queue.push_back(x);
        }
    }
    while let Some(x) = queue.pop_front() {
        queued[x] = false;
        while run.config.get(x).is_active() {
            if run.topplings >= cap {
                return false;
            }
            if let Outcome::Moved { to } = run.fire(x) {
                if !queued[to] && region.contains(to) && to != x {
                    queued[to] = true;
                    queue.push_back(to);
                }
            }
        }
    }
    true
}

fn raster(run: &mut Run, region: &SiteSet, cap: u64) -> bool {
    loop {
        let mut any = false;
        for &x in region.sites() {
            if run.config.get(x).is_active() {
                if run.topplings >= cap {
                    return false;
                }
                run.fire(x);
                any = true;
            }
        }
        if !any {
            return true;
        }
    }
}

fn random(run: &mut Run, region: &SiteSet, cap: u64, seed: u64) -> bool {
    const ABSENT: usize = usize::MAX;
    let n = run.config.len();
    let mut pos = vec![ABSENT; n];
    let mut unstable: Vec<usize> = Vec::new();
    for &x in region.sites() {
        if run.config.get(x).is_active() {
            pos[x] = unstable.len();
            unstable.push(x);
        }
    }
    let mut rng = CounterRng::new(seed, Stream::Scheduler, 0);
    while !unstable.is_empty() {
        if run.topplings >= cap {
            return false;
        }
        let x = unstable[rng.below(unstable.len() as u64) as usize];
        let outcome = run.fire(x);
        if !run.config.get(x).is_active() {
            let i = pos[x];
            let last = unstable.pop().expect("non-empty");
            if last != x {
                unstable[i] = last;
                pos[last] = i;
            }
            pos[x] = ABSENT;
        }
        if let Outcome::Moved { to } = outcome {
            if pos[to] == ABSENT && region.contains(to) && run.config.get(to).is_active() {
                pos[to] = unstable.len();
                unstable.push(to);
            }
        }
    }
    true
}

fn wavefront(run: &mut Run, region: &SiteSet, cap: u64) -> bool {
    let n = run.config.len();
    let mut seen = vec![false; n];
    let mut frontier: Vec<usize> =
        region.sites().iter().copied().filter(|&x| run.config.get(x).is_active()).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &x in &frontier {
            if run.topplings >= cap {
                return false;
            }
            if let Outcome::Moved { to } = run.fire(x) {
                next.push(to);
            }
            next.push(x);
        }
        next.retain(|&x| {
            let keep = !seen[x] && region.contains(x) && run.config.get(x).is_active();
            if keep {
                seen[x] = true;
            }
            keep
        });
        for &x in &next {
            seen[x] = false;
        }
        next.sort_unstable();
        frontier = next;
    }
    true
}

/// Legal stabilization of `config` in `region`, starting from `odometer`.
pub fn stabilize(
    config: &Configuration,
    odometer: &Odometer,
    field: &InstructionField,
    region: &SiteSet,
    scheduler: Scheduler,
    cap: Option<u64>,
) -> StabilizeReport {
    Stabilizer::new(field)
        .region(region)
        .scheduler(scheduler)
        .cap_opt(cap)
        .run(config.clone(), odometer.clone())
}

/// Every site of `region` is empty or sleeping.
pub fn is_stable_in(config: &Configuration, region: &SiteSet) -> bool {
    region.sites().iter().all(|&x| config.get(x).is_stable())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeastActionVerdict {
    Pass,
    /// Sites where the legal stabilization toppled more than the sequence.
    Fail { sites: Vec<usize> },
    /// The sequence is not acceptable or does not stabilize the region.
    InvalidInput(String),
}

/// Checks `m_{V,eta,h} <= m_alpha` for an acceptable sequence `alpha` that stabilizes `(eta, h)` in `V`.
pub fn check_least_action(
    config: &Configuration,
    odometer: &Odometer,
    field: &InstructionField,
    region: &SiteSet,
    sequence: &[usize],
    cap: Option<u64>,
) -> LeastActionVerdict {
    let applied = apply_sequence(config, odometer, field, sequence);
    if let Some(i) = applied.aborted_at {
        return LeastActionVerdict::InvalidInput(format!("step {i} topples an empty site"));
    }
    if !is_stable_in(&applied.config, region) {
        return LeastActionVerdict::InvalidInput("sequence does not stabilize the region".into());
    }
    let report = stabilize(config, odometer, field, region, Scheduler::Fifo, cap);
    if !report.is_stable() {
        return LeastActionVerdict::InvalidInput("legal stabilization exceeded its cap".into());
    }
    let m = report.odometer.minus(odometer);
    let m_alpha = Odometer::of_sequence(config.len(), sequence);
    let sites = m.excess_sites(&m_alpha);
    if sites.is_empty() {
        LeastActionVerdict::Pass
    } else {
        LeastActionVerdict::Fail { sites }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Domain, JumpKernel};
    use SiteState::*;

    fn field(domain: &Domain, seed: u64, lambda: f64) -> InstructionField {
        InstructionField::new(seed, lambda, JumpKernel::symmetric(domain.dim()), domain).unwrap()
    }

    /// Smallest seed whose field at `site` starts with `want`.
    fn seed_with_prefix(domain: &Domain, lambda: f64, site: usize, want: &[Code]) -> InstructionField {
        (0..100_000u64)
            .map(|s| field(domain, s, lambda))
            .find(|f| want.iter().enumerate().all(|(j, c)| f.code(site, j as u64 + 1) == *c))
            .expect("seed search")
    }

    #[test]
    fn legality() {
        let c = Configuration::from_states(Domain::torus(vec![3]), vec![Active(2), Sleeping, Empty]);
        assert!(is_legal(&c, 0) && is_acceptable(&c, 0));
        assert!(!is_legal(&c, 1) && is_acceptable(&c, 1));
        assert!(!is_legal(&c, 2) && !is_acceptable(&c, 2));
    }

    #[test]
    fn topple_jump_moves_one_particle() {
        let d = Domain::torus(vec![4]);
        let f = seed_with_prefix(&d, 1.0, 0, &[Code::Jump(0)]);
        let mut c = Configuration::from_counts(d, &[2, 0, 0, 0]);
        let mut h = Odometer::zeros(4);
        let e = topple(&mut c, &mut h, &f, 0).unwrap();
        assert_eq!(e.outcome, Outcome::Moved { to: 1 });
        assert_eq!(c.states(), &[Active(1), Active(1), Empty, Empty]);
        assert_eq!(h.as_slice(), &[1, 0, 0, 0]);
    }

    #[test]
    fn topple_sleeping_site_wakes_and_moves() {
        let d = Domain::torus(vec![4]);
        let f = seed_with_prefix(&d, 1.0, 1, &[Code::Jump(0)]);
        let mut c = Configuration::from_states(d, vec![Empty, Sleeping, Empty, Empty]);
        let mut h = Odometer::zeros(4);
        let e = topple(&mut c, &mut h, &f, 1).unwrap();
        assert!(e.forced);
        assert_eq!(c.states(), &[Empty, Empty, Active(1), Empty]);
    }

    #[test]
    fn topple_sleep_instruction() {
        let d = Domain::torus(vec![4]);
        let f = seed_with_prefix(&d, 1.0, 2, &[Code::Sleep]);
        let mut c = Configuration::from_counts(d, &[0, 0, 1, 0]);
        let mut h = Odometer::zeros(4);
        let e = topple(&mut c, &mut h, &f, 2).unwrap();
        assert_eq!(e.outcome, Outcome::Sleep { fell_asleep: true });
        assert_eq!(c.get(2), Sleeping);
    }

    #[test]
    fn topple_empty_is_rejected() {
        let d = Domain::torus(vec![4]);
        let f = field(&d, 0, 1.0);
        let mut c = Configuration::from_counts(d, &[0, 1, 0, 0]);
        let before = c.clone();
        let mut h = Odometer::zeros(4);
        assert_eq!(topple(&mut c, &mut h, &f, 0), Err(ToppleError::NotAcceptable { site: 0 }));
        assert_eq!(c, before);
        assert_eq!(h, Odometer::zeros(4));
    }

    #[test]
    fn stabilize_single_site_hand_trace() {
        // instructions at 0: Jump(+1), Sleep; region {0}
        let d = Domain::torus(vec![4]);
        let f = seed_with_prefix(&d, 1.0, 0, &[Code::Jump(0), Code::Sleep]);
        let c = Configuration::from_counts(d, &[2, 0, 0, 0]);
        let v = SiteSet::from_sites(4, [0]);
        let r = stabilize(&c, &Odometer::zeros(4), &f, &v, Scheduler::Fifo, None);
        assert_eq!(r.termination, Termination::Stable);
        assert_eq!(r.topplings, 2);
        assert_eq!(r.config.states(), &[Sleeping, Active(1), Empty, Empty]);
        assert_eq!(r.odometer.as_slice(), &[2, 0, 0, 0]);
        assert_eq!(r.slept, 1);
    }

    #[test]
    fn already_stable_needs_nothing() {
        let d = Domain::absorbing(vec![5]);
        let f = field(&d, 4, 1.0);
        let c = Configuration::from_states(d, vec![Empty, Sleeping, Empty, Sleeping, Sleeping]);
        for s in Scheduler::catalogue(1) {
            let r = stabilize(&c, &Odometer::zeros(5), &f, &SiteSet::all(5), s, None);
            assert_eq!(r.topplings, 0);
            assert!(r.is_stable());
            assert_eq!(r.config, c);
        }
    }

    #[test]
    fn cap_is_reported() {
        // three particles cannot be stable on a two-site torus
        let d = Domain::torus(vec![2]);
        let f = field(&d, 4, 1.0);
        let c = Configuration::from_counts(d, &[3, 0]);
        for s in Scheduler::catalogue(2) {
            let r = stabilize(&c, &Odometer::zeros(2), &f, &SiteSet::all(2), s, Some(500));
            assert_eq!(r.termination, Termination::CapExceeded);
            assert_eq!(r.topplings, 500);
            assert_eq!(r.config.particles(), 3);
        }
    }

    #[test]
    fn sequences_with_equal_counts_commute() {
        let d = Domain::torus(vec![5]);
        let f = field(&d, 17, 1.0);
        let c = Configuration::from_counts(d, &[3, 2, 0, 1, 2]);
        let h = Odometer::zeros(5);
        let a = apply_sequence(&c, &h, &f, &[0, 0, 1, 4, 3]);
        let b = apply_sequence(&c, &h, &f, &[4, 1, 0, 3, 0]);
        assert!(a.is_acceptable() && b.is_acceptable());
        assert_eq!(a.config, b.config);
        assert_eq!(a.odometer, b.odometer);
    }

    #[test]
    fn empty_sequence_and_abort() {
        let d = Domain::torus(vec![4]);
        let f = field(&d, 1, 1.0);
        let c = Configuration::from_counts(d, &[1, 0, 0, 0]);
        let h = Odometer::zeros(4);
        let none = apply_sequence(&c, &h, &f, &[]);
        assert!(none.is_legal());
        assert_eq!(none.config, c);
        let bad = apply_sequence(&c, &h, &f, &[0, 2]);
        // site 2 is empty unless the first jump landed there, which it cannot from 0
        assert_eq!(bad.aborted_at, Some(1));
        assert_eq!(bad.odometer.as_slice(), &[1, 0, 0, 0]);
    }

    #[test]
    fn stabilize_order_is_the_least_action() {
        let d = Domain::absorbing(vec![8]);
        let f = field(&d, 5, 1.0);
        let c = Configuration::from_counts(d, &[0, 3, 1, 0, 2, 0, 1, 1]);
        let h = Odometer::zeros(8);
        let v = SiteSet::all(8);
        let r = Stabilizer::new(&f).trace(true).run(c.clone(), h.clone());
        let seq: Vec<usize> = r.trace.unwrap().iter().map(|e| e.site).collect();
        assert_eq!(Odometer::of_sequence(8, &seq), r.odometer);
        assert_eq!(check_least_action(&c, &h, &f, &v, &seq, None), LeastActionVerdict::Pass);
    }

    #[test]
    fn least_action_rejects_non_stabilizing_sequence() {
        let d = Domain::absorbing(vec![6]);
        let f = field(&d, 8, 1.0);
        let eta = Configuration::from_counts(d.clone(), &[0, 2, 1, 1, 0, 0]);
        let smaller = Configuration::from_counts(d, &[0, 1, 0, 1, 0, 0]);
        let h = Odometer::zeros(6);
        let v = SiteSet::all(6);
        let r = Stabilizer::new(&f).trace(true).run(smaller, h.clone());
        let seq: Vec<usize> = r.trace.unwrap().iter().map(|e| e.site).collect();
        let verdict = check_least_action(&eta, &h, &f, &v, &seq, None);
        assert_ne!(verdict, LeastActionVerdict::Pass);
    }

    #[test]
    fn scheduler_names_parse() {
        for s in Scheduler::catalogue(9) {
            let parsed: Scheduler = s.name().parse().unwrap();
            assert_eq!(parsed.name(), s.name());
        }
        assert_eq!("random:42".parse::<Scheduler>(), Ok(Scheduler::Random { seed: 42 }));
        assert!("lifo".parse::<Scheduler>().is_err());
    }
}
