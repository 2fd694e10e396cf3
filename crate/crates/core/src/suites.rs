//! Randomized property suites: abelianness, least action, monotonicity,
//! conservation, continuous/discrete agreement, the coupling bound and
//! pigeonhole explosivity.
//!
//! Every instance is derived from `(suite seed, instance index, attempt)`, so
//! a suite is a pure function of its seed. Instances that hit a toppling cap
//! are redrawn and counted as skipped; they never count as passes.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{coupled_stabilize, CouplingCaps, CouplingStatus};
use crate::experiments::{gillespie_run, GillespieStop, GillespieTermination};
use crate::field::InstructionField;
use crate::initial::{Family, InitialStateSpec};
use crate::lattice::{Boundary, Configuration, Domain, JumpKernel, SiteState};
use crate::rng::{self, CounterRng, Stream};
use crate::topple::{
    check_least_action, is_stable_in, topple, LeastActionVerdict, Odometer, Scheduler, SiteSet, StabilizeReport,
    Stabilizer, Termination,
};

/// Toppling budget per site of the region for suite instances.
pub const SUITE_CAP_PER_SITE: u64 = 10_000;
const MAX_ATTEMPTS: u64 = 64;
const LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub passed: usize,
    /// Redrawn instances (cap hit or pigeonhole-impossible).
    pub skipped: usize,
    pub conservation_failures: usize,
    pub notes: Vec<String>,
    /// First failing instance indices, for replay.
    pub failing: Vec<usize>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.instances > 0 && self.passed == self.instances && self.conservation_failures == 0
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {}/{} passed, {} redrawn, {} conservation failures",
            self.name, self.passed, self.instances, self.skipped, self.conservation_failures
        );
        for n in &self.notes {
            s.push_str("; ");
            s.push_str(n);
        }
        s
    }
}

/// Result of one instance.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    pass: bool,
    skipped: usize,
    conservation_failures: usize,
}

fn collect(name: &'static str, tallies: Vec<Tally>) -> SuiteReport {
    let failing: Vec<usize> = tallies.iter().enumerate().filter(|(_, t)| !t.pass).map(|(i, _)| i).take(10).collect();
    SuiteReport {
        name,
        instances: tallies.len(),
        passed: tallies.iter().filter(|t| t.pass).count(),
        skipped: tallies.iter().map(|t| t.skipped).sum(),
        conservation_failures: tallies.iter().map(|t| t.conservation_failures).sum(),
        notes: Vec::new(),
        failing,
    }
}

/// Mass balance of one stabilization.
pub fn report_conserves(initial: &Configuration, report: &StabilizeReport) -> bool {
    let before = initial.particles();
    let after = report.config.particles();
    let departures: u64 = report.departures.iter().sum();
    let arrivals: u64 = report.arrivals.iter().sum();
    let torus_ok = initial.domain().boundary() != Boundary::Torus || report.dissipated == 0;
    after + report.dissipated == before
        && departures == arrivals + report.dissipated
        && torus_ok
        && report.config.totals_consistent()
}

/// Random small instance: dimension, box, boundary, rate and seeds.
struct Instance {
    domain: Domain,
    lambda: f64,
    zeta: f64,
    field_seed: u64,
    state_seed: u64,
    rng: CounterRng,
}

impl Instance {
    fn draw(seed: u64, max_side: usize, torus_only: bool) -> Self {
        let mut rng = CounterRng::new(seed, Stream::Replica, 0);
        let dim = 1 + rng.below(2) as usize;
        let sides: Vec<usize> = (0..dim).map(|_| 2 + rng.below((max_side - 1) as u64) as usize).collect();
        let boundary = if torus_only || rng.below(2) == 0 { Boundary::Torus } else { Boundary::Absorbing };
        let lambda = LAMBDAS[rng.below(3) as usize];
        let zeta = rng.next_f64();
        let field_seed = rng.next_u64();
        let state_seed = rng.next_u64();
        Self { domain: Domain::new(sides, boundary), lambda, zeta, field_seed, state_seed, rng }
    }

    fn field(&self) -> InstructionField {
        InstructionField::new(self.field_seed, self.lambda, JumpKernel::symmetric(self.domain.dim()), &self.domain)
            .expect("symmetric kernel is valid")
    }

    fn poisson(&self) -> Configuration {
        InitialStateSpec::poisson(self.zeta, self.state_seed).generate(&self.domain).expect("valid density")
    }

    fn cap(&self, region: usize) -> u64 {
        SUITE_CAP_PER_SITE * region.max(1) as u64
    }
}

fn pigeonhole_impossible(config: &Configuration, region: usize) -> bool {
    config.domain().boundary() == Boundary::Torus && config.particles() > region as u64
}

fn instance_seed(seed: u64, index: usize, attempt: u64) -> u64 {
    rng::child_seed(rng::child_seed(seed, index as u64), attempt)
}

/// Stabilizes under all four schedulers and demands identical results.
pub fn abelianness_suite(instances: usize, seed: u64) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut t = Tally::default();
            for attempt in 0..MAX_ATTEMPTS {
                let inst = Instance::draw(instance_seed(seed, i, attempt), 16, false);
                let config = inst.poisson();
                let n = config.len();
                if pigeonhole_impossible(&config, n) {
                    t.skipped += 1;
                    continue;
                }
                let field = inst.field();
                let reports: Vec<StabilizeReport> = Scheduler::catalogue(inst.state_seed ^ 0x5eed)
                    .iter()
                    .map(|&s| Stabilizer::new(&field).scheduler(s).cap(inst.cap(n)).run(config.clone(), Odometer::zeros(n)))
                    .collect();
                t.conservation_failures += reports.iter().filter(|r| !report_conserves(&config, r)).count();
                let capped = reports.iter().filter(|r| !r.is_stable()).count();
                if capped > 0 {
                    // same total work for every order, so either all cap or the cap is inconsistent
                    if capped != reports.len() {
                        return t;
                    }
                    t.skipped += 1;
                    continue;
                }
                let first = &reports[0];
                t.pass = reports.iter().all(|r| {
                    r.config == first.config
                        && r.odometer == first.odometer
                        && r.topplings == first.topplings
                        && r.topplings == r.odometer.total()
                        && is_stable_in(&r.config, &SiteSet::all(n))
                });
                return t;
            }
            t
        })
        .collect();
    collect("abelianness", tallies)
}

/// Builds an acceptable stabilizing sequence that wakes sleepers at random.
fn forced_wake_sequence(
    config: &Configuration,
    field: &InstructionField,
    region: &SiteSet,
    rng: &mut CounterRng,
    max_forced: usize,
    max_len: usize,
) -> Option<(Vec<usize>, usize)> {
    let mut c = config.clone();
    let mut h = Odometer::zeros(c.len());
    let mut seq = Vec::new();
    let mut forced = 0;
    loop {
        let active: Vec<usize> = region.sites().iter().copied().filter(|&x| c.get(x).is_active()).collect();
        let sleeping: Vec<usize> =
            region.sites().iter().copied().filter(|&x| c.get(x) == SiteState::Sleeping).collect();
        let wake = forced < max_forced && !sleeping.is_empty() && (active.is_empty() || rng.below(4) == 0);
        let x = if wake {
            forced += 1;
            sleeping[rng.below(sleeping.len() as u64) as usize]
        } else if let Some(&x) = active.get(rng.below(active.len().max(1) as u64) as usize) {
            x
        } else {
            return Some((seq, forced));
        };
        topple(&mut c, &mut h, field, x).expect("chosen sites are non-empty");
        seq.push(x);
        if seq.len() > max_len {
            return None;
        }
    }
}

/// Random region: the whole domain or a random sub-box.
fn random_region(domain: &Domain, rng: &mut CounterRng) -> SiteSet {
    let n = domain.len();
    if rng.below(3) == 0 {
        return SiteSet::all(n);
    }
    let (lo, hi): (Vec<usize>, Vec<usize>) = domain
        .sides()
        .iter()
        .map(|&l| {
            let a = rng.below(l as u64) as usize;
            let b = a + 1 + rng.below((l - a) as u64) as usize;
            (a, b)
        })
        .unzip();
    SiteSet::from_sites(n, domain.sub_box(&lo, &hi))
}

/// Legal stabilization never topples more than an acceptable stabilizing sequence.
pub fn least_action_suite(instances: usize, seed: u64) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut t = Tally::default();
            for attempt in 0..MAX_ATTEMPTS {
                let mut inst = Instance::draw(instance_seed(seed, i, attempt), 8, false);
                let config = inst.poisson();
                let field = inst.field();
                let region = random_region(&inst.domain, &mut inst.rng);
                if pigeonhole_impossible(&config, region.len()) && region.len() == config.len() {
                    t.skipped += 1;
                    continue;
                }
                let max_len = inst.cap(region.len()) as usize;
                let Some((seq, wakes)) =
                    forced_wake_sequence(&config, &field, &region, &mut inst.rng, 3 * config.len(), max_len)
                else {
                    t.skipped += 1;
                    continue;
                };
                if wakes == 0 {
                    // no sleeper was ever available in the region; the instance tests nothing forced
                    t.skipped += 1;
                    continue;
                }
                match check_least_action(&config, &Odometer::zeros(config.len()), &field, &region, &seq, Some(inst.cap(region.len()))) {
                    LeastActionVerdict::Pass => {
                        t.pass = true;
                        return t;
                    }
                    LeastActionVerdict::Fail { .. } => return t,
                    LeastActionVerdict::InvalidInput(_) => {
                        t.skipped += 1;
                        continue;
                    }
                }
            }
            t
        })
        .collect();
    collect("least-action", tallies)
}

/// Larger configuration and larger region give a pointwise larger odometer.
pub fn monotonicity_suite(instances: usize, seed: u64) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut t = Tally::default();
            for attempt in 0..MAX_ATTEMPTS {
                let mut inst = Instance::draw(instance_seed(seed, i, attempt), 16, false);
                let n = inst.domain.len();
                let field = inst.field();
                // eta: Poisson actives with some sites put to sleep; eta' adds actives
                let mut eta = inst.poisson();
                for x in 0..n {
                    if eta.get(x) == SiteState::active(1) && inst.rng.below(3) == 0 {
                        eta.sleep(x).expect("occupied");
                    }
                }
                let mut eta_big = eta.clone();
                for x in 0..n {
                    if inst.rng.below(4) == 0 {
                        eta_big.increment(x);
                    }
                }
                let big = random_region(&inst.domain, &mut inst.rng);
                let small_sites: Vec<usize> = big.sites().iter().copied().filter(|_| inst.rng.below(3) != 0).collect();
                let small = SiteSet::from_sites(n, small_sites);
                if !eta.le(&eta_big) || !small.is_subset(&big) {
                    return t;
                }
                if pigeonhole_impossible(&eta_big, big.len()) && big.len() == n {
                    t.skipped += 1;
                    continue;
                }
                let run = |c: &Configuration, v: &SiteSet| {
                    Stabilizer::new(&field).region(v).cap(inst.cap(v.len())).run(c.clone(), Odometer::zeros(n))
                };
                let lo = run(&eta, &small);
                let hi = run(&eta_big, &big);
                t.conservation_failures += (!report_conserves(&eta, &lo)) as usize + (!report_conserves(&eta_big, &hi)) as usize;
                if !(lo.is_stable() && hi.is_stable()) {
                    t.skipped += 1;
                    continue;
                }
                t.pass = lo.odometer.le(&hi.odometer);
                return t;
            }
            t
        })
        .collect();
    collect("monotonicity", tallies)
}

/// Continuous-time ring counts equal the discrete odometer on the same field.
pub fn gillespie_suite(instances: usize, seed: u64) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut t = Tally::default();
            for attempt in 0..MAX_ATTEMPTS {
                let inst = Instance::draw(instance_seed(seed, i, attempt), 16, true);
                let config = inst.poisson();
                let n = config.len();
                if pigeonhole_impossible(&config, n) {
                    t.skipped += 1;
                    continue;
                }
                let field = inst.field();
                let discrete = Stabilizer::new(&field).cap(inst.cap(n)).run(config.clone(), Odometer::zeros(n));
                t.conservation_failures += !report_conserves(&config, &discrete) as usize;
                let trace = gillespie_run(&config, &field, GillespieStop::until_stable(inst.cap(n)), inst.state_seed);
                if trace.config.particles() != config.particles() {
                    t.conservation_failures += 1;
                }
                if !discrete.is_stable() || trace.termination != GillespieTermination::Stable {
                    if discrete.is_stable() != (trace.termination == GillespieTermination::Stable) {
                        return t;
                    }
                    t.skipped += 1;
                    continue;
                }
                let times_increase = trace.events.windows(2).all(|w| w[0].time < w[1].time);
                t.pass = trace.counts == discrete.odometer && trace.config == discrete.config && times_increase;
                return t;
            }
            t
        })
        .collect();
    collect("gillespie-equivalence", tallies)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSuiteReport {
    pub suite: SuiteReport,
    pub round_cap_exceeded: usize,
    pub terminating: usize,
    /// Runs where `m_direct <= h1` alone fails, i.e. the stage-one odometer is needed.
    pub control_violations: usize,
}

/// Two-stage coupling bound on a 1d torus with independent Poisson states.
pub fn coupling_suite(side: usize, zeta_lower: f64, zeta_upper: f64, seeds: usize, seed: u64) -> CouplingSuiteReport {
    let domain = Domain::torus(vec![side]);
    let caps = CouplingCaps::default();
    let rows: Vec<(Tally, CouplingStatus, bool)> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let s = rng::child_seed(seed, i as u64);
            let (sl, su, sf) = (rng::child_seed(s, 0), rng::child_seed(s, 1), rng::child_seed(s, 2));
            let eta = InitialStateSpec::poisson(zeta_lower, sl).generate(&domain).expect("valid");
            let xi = InitialStateSpec::poisson(zeta_upper, su).generate(&domain).expect("valid");
            let field = InstructionField::new(sf, 1.0, JumpKernel::symmetric(1), &domain).expect("valid");
            let report = coupled_stabilize(&eta, &xi, &field, caps).expect("valid inputs");
            let mut t = Tally::default();
            let conserved = report.trace.eta0_prime.particles() == eta.particles();
            t.conservation_failures += !conserved as usize;
            let control = match (&report.m_direct, &report.h1) {
                (Some(m), Some(h1)) => !m.le(h1),
                _ => false,
            };
            match report.status {
                CouplingStatus::Complete => t.pass = report.bounds_hold(),
                _ => {
                    // not a terminating run; reported, never counted as a failure of the bound
                    t.pass = true;
                    t.skipped += 1;
                }
            }
            (t, report.status, control)
        })
        .collect();
    let round_cap_exceeded = rows.iter().filter(|r| r.1 == CouplingStatus::RoundCapExceeded).count();
    let terminating = rows.iter().filter(|r| r.1 == CouplingStatus::Complete).count();
    let control_violations = rows.iter().filter(|r| r.2).count();
    let mut suite = collect("coupling-bound", rows.into_iter().map(|r| r.0).collect());
    suite.notes.push(format!("{terminating} complete, {round_cap_exceeded} hit the round cap"));
    suite.notes.push(format!("control m_direct <= h1 alone fails in {control_violations} runs"));
    if terminating == 0 {
        suite.passed = 0;
    }
    CouplingSuiteReport { suite, round_cap_exceeded, terminating, control_violations }
}

/// Torus instances with more particles than sites must exhaust the cap.
pub fn pigeonhole_suite(instances: usize, seed: u64) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut t = Tally::default();
            for attempt in 0..MAX_ATTEMPTS {
                let mut inst = Instance::draw(instance_seed(seed, i, attempt), 12, true);
                let zeta = 1.0 + 1e-3 + inst.rng.next_f64();
                let family = match inst.rng.below(3) {
                    0 => Family::Poisson,
                    1 => Family::block_renewal(),
                    _ => Family::periodic(2),
                };
                let spec = InitialStateSpec::new(family, zeta, inst.state_seed);
                let Ok(config) = spec.generate(&inst.domain) else {
                    t.skipped += 1;
                    continue;
                };
                let n = config.len();
                if config.particles() <= n as u64 {
                    // density above one in law but not in this sample
                    t.skipped += 1;
                    continue;
                }
                let field = inst.field();
                let report = Stabilizer::new(&field).cap(200 * n as u64).run(config.clone(), Odometer::zeros(n));
                t.conservation_failures += !report_conserves(&config, &report) as usize;
                t.pass = report.termination == Termination::CapExceeded;
                return t;
            }
            t
        })
        .collect();
    collect("pigeonhole", tallies)
}

/// Everything `selftest` runs, at the given instance counts.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSizes {
    pub abelianness: usize,
    pub least_action: usize,
    pub monotonicity: usize,
    pub gillespie: usize,
    pub coupling_seeds: usize,
    pub pigeonhole: usize,
}

impl SuiteSizes {
    pub const FULL: SuiteSizes = SuiteSizes {
        abelianness: 1000,
        least_action: 500,
        monotonicity: 500,
        gillespie: 200,
        coupling_seeds: 100,
        pigeonhole: 200,
    };
}

pub fn run_all(sizes: SuiteSizes, seed: u64) -> Vec<SuiteReport> {
    let s = |k: u64| rng::child_seed(seed, k);
    vec![
        abelianness_suite(sizes.abelianness, s(1)),
        least_action_suite(sizes.least_action, s(2)),
        monotonicity_suite(sizes.monotonicity, s(3)),
        gillespie_suite(sizes.gillespie, s(5)),
        coupling_suite(64, 0.2, 0.5, sizes.coupling_seeds, s(6)).suite,
        pigeonhole_suite(sizes.pigeonhole, s(10)),
    ]
}
