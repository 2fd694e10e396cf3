//! Two-stage coupling of a sparse configuration below a denser one.
//!
//! Stage one moves the particles of `eta` until `eta <= xi0` pointwise: in
//! round `k` every site where `eta` exceeds `xi0` topples exactly once, waking
//! sleepers if needed. Stage two stabilizes both `xi0` and the embedded
//! configuration with the instructions left over from stage one. The two
//! odometers together bound the legal stabilization of the original `eta`.

use serde::Serialize;
use thiserror::Error;

use crate::field::InstructionField;
use crate::lattice::{Boundary, Configuration, JumpTable, SiteState};
use crate::topple::{topple_with, Odometer, Outcome, Scheduler, SiteSet, Stabilizer};

pub const DEFAULT_ROUND_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CouplingError {
    #[error("configurations live on different domains")]
    DomainMismatch,
    #[error("the coupling runs on a torus")]
    NotTorus,
    #[error("the denser configuration has a sleeping particle at site {0}")]
    SleepingInUpper(usize),
    #[error("round cap must be positive")]
    ZeroRoundCap,
    #[error("field was built for {field} sites, configuration has {config}")]
    FieldMismatch { field: usize, config: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Enumeration {
    #[default]
    Raster,
    ReverseRaster,
}

/// How `A_k` is found each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SetPath {
    /// Scan every site.
    Reference,
    /// Only `A_{k-1}` and the sites that received a particle can be in `A_k`.
    #[default]
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingTermination {
    Embedded,
    RoundCapExceeded,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTrace {
    pub rounds: usize,
    /// `|A_k|` for each executed round.
    pub set_sizes: Vec<usize>,
    pub h0: Odometer,
    pub eta0_prime: Configuration,
    pub termination: EmbeddingTermination,
}

/// Round-by-round driver of stage one.
#[derive(Debug, Clone)]
pub struct Embedder<'a> {
    xi0: &'a Configuration,
    field: &'a InstructionField,
    table: JumpTable,
    eta: Configuration,
    h: Odometer,
    order: Enumeration,
    path: SetPath,
    candidates: Option<Vec<usize>>,
    rounds: usize,
}

fn check_pair(
    eta0: &Configuration,
    xi0: &Configuration,
    field: &InstructionField,
) -> Result<(), CouplingError> {
    if eta0.domain() != xi0.domain() {
        return Err(CouplingError::DomainMismatch);
    }
    if eta0.domain().boundary() != Boundary::Torus {
        return Err(CouplingError::NotTorus);
    }
    if let Some(x) = xi0.states().iter().position(|&s| s == SiteState::Sleeping) {
        return Err(CouplingError::SleepingInUpper(x));
    }
    if field.sites() != eta0.len() {
        return Err(CouplingError::FieldMismatch { field: field.sites(), config: eta0.len() });
    }
    Ok(())
}

impl<'a> Embedder<'a> {
    pub fn new(
        eta0: &Configuration,
        xi0: &'a Configuration,
        field: &'a InstructionField,
    ) -> Result<Self, CouplingError> {
        check_pair(eta0, xi0, field)?;
        Ok(Self {
            xi0,
            field,
            table: JumpTable::new(eta0.domain(), field.kernel()),
            eta: eta0.clone(),
            h: Odometer::zeros(eta0.len()),
            order: Enumeration::Raster,
            path: SetPath::Incremental,
            candidates: None,
            rounds: 0,
        })
    }

    pub fn enumeration(mut self, order: Enumeration) -> Self {
        self.order = order;
        self
    }

    pub fn path(mut self, path: SetPath) -> Self {
        self.path = path;
        self
    }

    pub fn eta(&self) -> &Configuration {
        &self.eta
    }

    pub fn odometer(&self) -> &Odometer {
        &self.h
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// `A = {x : eta(x) > xi0(x)}` by a full scan, in raster order.
    pub fn excess_set(&self) -> Vec<usize> {
        (0..self.eta.len()).filter(|&x| self.eta.get(x) > self.xi0.get(x)).collect()
    }

    fn next_set(&self) -> Vec<usize> {
        match (&self.path, &self.candidates) {
            (SetPath::Incremental, Some(c)) => {
                let set: Vec<usize> =
                    c.iter().copied().filter(|&x| self.eta.get(x) > self.xi0.get(x)).collect();
                debug_assert_eq!(set, self.excess_set());
                set
            }
            _ => self.excess_set(),
        }
    }

    /// Runs one round; returns the toppled set `A_k`, or `None` once it is empty.
    pub fn step(&mut self) -> Option<Vec<usize>> {
        let set = self.next_set();
        if set.is_empty() {
            return None;
        }
        let mut touched = set.clone();
        let mut topple_one = |x: usize| {
            let e = topple_with(&mut self.eta, &mut self.h, self.field, &self.table, x);
            if let Outcome::Moved { to } = e.outcome {
                touched.push(to);
            }
        };
        match self.order {
            Enumeration::Raster => set.iter().for_each(|&x| topple_one(x)),
            Enumeration::ReverseRaster => set.iter().rev().for_each(|&x| topple_one(x)),
        }
        touched.sort_unstable();
        touched.dedup();
        self.candidates = Some(touched);
        self.rounds += 1;
        Some(set)
    }

    pub fn finish(mut self, round_cap: usize) -> EmbeddingTrace {
        let mut set_sizes = Vec::new();
        let termination = loop {
            if self.rounds >= round_cap {
                if self.next_set().is_empty() {
                    break EmbeddingTermination::Embedded;
                }
                break EmbeddingTermination::RoundCapExceeded;
            }
            match self.step() {
                Some(a) => set_sizes.push(a.len()),
                None => break EmbeddingTermination::Embedded,
            }
        };
        EmbeddingTrace { rounds: self.rounds, set_sizes, h0: self.h, eta0_prime: self.eta, termination }
    }
}

/// Stage one with raster enumeration of each `A_k`.
pub fn embedding_stage(
    eta0: &Configuration,
    xi0: &Configuration,
    field: &InstructionField,
    round_cap: usize,
) -> Result<EmbeddingTrace, CouplingError> {
    if round_cap == 0 {
        return Err(CouplingError::ZeroRoundCap);
    }
    Ok(Embedder::new(eta0, xi0, field)?.finish(round_cap))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingVerdict {
    Pass,
    /// Sites where the embedded configuration still exceeds `xi0`.
    Fail { sites: Vec<usize> },
    NotApplicable,
}

/// Checks `eta0' <= xi0` pointwise for a trace that reached `Embedded`.
pub fn verify_embedding(trace: &EmbeddingTrace, xi0: &Configuration) -> EmbeddingVerdict {
    if trace.termination != EmbeddingTermination::Embedded {
        return EmbeddingVerdict::NotApplicable;
    }
    let sites: Vec<usize> = (0..xi0.len())
        .filter(|&x| trace.eta0_prime.get(x) > xi0.get(x))
        .collect();
    if sites.is_empty() {
        EmbeddingVerdict::Pass
    } else {
        EmbeddingVerdict::Fail { sites }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingCaps {
    pub round_cap: usize,
    /// Toppling cap for each stage-two stabilization; `None` uses the default.
    pub stabilize_cap: Option<u64>,
}

impl Default for CouplingCaps {
    fn default() -> Self {
        Self { round_cap: DEFAULT_ROUND_CAP, stabilize_cap: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingStatus {
    Complete,
    RoundCapExceeded,
    /// One of the three stabilizations hit its cap.
    StabilizeCapExceeded,
}

/// Outcome of both stages. Odometers are present only for the steps that completed.
#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub status: CouplingStatus,
    pub zeta_lower: f64,
    pub zeta_upper: f64,
    /// The measured densities are not strictly ordered (lower below upper).
    pub density_warning: bool,
    pub trace: EmbeddingTrace,
    /// Stage-two odometer of `xi0` under the shifted field.
    pub h1: Option<Odometer>,
    /// Stage-two odometer of the embedded configuration under the shifted field.
    pub m_embedded: Option<Odometer>,
    /// Legal odometer of `eta0` under the original field.
    pub m_direct: Option<Odometer>,
}

impl CouplingReport {
    /// Sites violating `m_embedded <= h1`.
    pub fn embedded_violations(&self) -> Option<usize> {
        match (&self.m_embedded, &self.h1) {
            (Some(m), Some(h1)) => Some(m.excess_sites(h1).len()),
            _ => None,
        }
    }

    /// Sites violating `m_direct <= h0' + h1`.
    pub fn direct_violations(&self) -> Option<usize> {
        match (&self.m_direct, &self.h1) {
            (Some(m), Some(h1)) => Some(bound_violations(m, &self.trace.h0, h1)),
            _ => None,
        }
    }

    pub fn bounds_hold(&self) -> bool {
        self.embedded_violations() == Some(0) && self.direct_violations() == Some(0)
    }

    pub fn record(&self, seed_lower: u64, seed_upper: u64, field_seed: u64) -> CouplingRecord {
        CouplingRecord {
            seed_lower,
            seed_upper,
            field_seed,
            zeta_lower: self.zeta_lower,
            zeta_upper: self.zeta_upper,
            density_warning: self.density_warning,
            status: self.status,
            rounds: self.trace.rounds,
            max_h0: self.trace.h0.max(),
            max_h1: self.h1.as_ref().map(Odometer::max),
            embedded_bound_holds: self.embedded_violations().map(|v| v == 0),
            direct_bound_holds: self.direct_violations().map(|v| v == 0),
            violations: self.embedded_violations().unwrap_or(0) + self.direct_violations().unwrap_or(0),
        }
    }
}

/// One NDJSON row of a coupling run.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingRecord {
    pub seed_lower: u64,
    pub seed_upper: u64,
    pub field_seed: u64,
    pub zeta_lower: f64,
    pub zeta_upper: f64,
    pub density_warning: bool,
    pub status: CouplingStatus,
    pub rounds: usize,
    pub max_h0: u64,
    pub max_h1: Option<u64>,
    pub embedded_bound_holds: Option<bool>,
    pub direct_bound_holds: Option<bool>,
    pub violations: usize,
}

/// Sites where `m > h0 + h1`.
pub fn bound_violations(m: &Odometer, h0: &Odometer, h1: &Odometer) -> usize {
    m.excess_sites(&h0.plus(h1)).len()
}

/// Runs both stages and the direct stabilization.
pub fn coupled_stabilize(
    eta0: &Configuration,
    xi0: &Configuration,
    field: &InstructionField,
    caps: CouplingCaps,
) -> Result<CouplingReport, CouplingError> {
    let trace = embedding_stage(eta0, xi0, field, caps.round_cap)?;
    let zeta_lower = eta0.density();
    let zeta_upper = xi0.density();
    let mut report = CouplingReport {
        status: CouplingStatus::Complete,
        zeta_lower,
        zeta_upper,
        density_warning: zeta_lower >= zeta_upper,
        trace,
        h1: None,
        m_embedded: None,
        m_direct: None,
    };
    if report.trace.termination == EmbeddingTermination::RoundCapExceeded {
        report.status = CouplingStatus::RoundCapExceeded;
        return Ok(report);
    }
    let n = eta0.len();
    let shifted = field.shifted(&report.trace.h0).expect("same domain");
    let region = SiteSet::all(n);
    let run = |f: &InstructionField, c: &Configuration| {
        Stabilizer::new(f)
            .region(&region)
            .scheduler(Scheduler::Fifo)
            .cap_opt(caps.stabilize_cap)
            .run(c.clone(), Odometer::zeros(n))
    };
    let upper = run(&shifted, xi0);
    if !upper.is_stable() {
        report.status = CouplingStatus::StabilizeCapExceeded;
        return Ok(report);
    }
    report.h1 = Some(upper.odometer);
    let embedded = run(&shifted, &report.trace.eta0_prime);
    if !embedded.is_stable() {
        report.status = CouplingStatus::StabilizeCapExceeded;
        return Ok(report);
    }
    report.m_embedded = Some(embedded.odometer);
    let direct = run(field, eta0);
    if !direct.is_stable() {
        report.status = CouplingStatus::StabilizeCapExceeded;
        return Ok(report);
    }
    report.m_direct = Some(direct.odometer);
    Ok(report)
}
