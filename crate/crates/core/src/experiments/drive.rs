//! Driven-dissipative curves on an absorbing box.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_grid, ExperimentError};
use crate::field::InstructionField;
use crate::initial::{Family, InitialStateSpec};
use crate::lattice::{Boundary, Configuration, Domain, JumpKernel};
use crate::rng::{self, CounterRng, Stream};
use crate::stats::Stat;
use crate::topple::{Odometer, Scheduler, Stabilizer, Termination};

#[derive(Debug, Clone)]
pub struct DriveParams {
    pub domain: Domain,
    pub lambda: f64,
    pub kernel: JumpKernel,
    pub u_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub family: Family,
    pub scheduler: Scheduler,
    /// Per-run toppling cap; `None` uses the stabilizer default.
    pub cap: Option<u64>,
}

impl DriveParams {
    pub fn new(domain: Domain, lambda: f64, kernel: JumpKernel, u_grid: Vec<f64>, replicas: usize, seed: u64) -> Self {
        Self {
            domain,
            lambda,
            kernel,
            u_grid,
            replicas,
            seed,
            family: Family::Poisson,
            scheduler: Scheduler::Fifo,
            cap: None,
        }
    }
}

/// Seeds of one replica: the same at every grid point, so initial states are nested in `u`.
pub(crate) fn replica_seeds(seed: u64, replica: usize) -> (u64, u64, u64) {
    let rs = rng::child_seed(seed, replica as u64);
    (rs, rng::child_seed(rs, 0), rng::child_seed(rs, 1))
}

/// One NDJSON row: a (grid point, replica) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriveRecord {
    pub experiment: &'static str,
    pub family: &'static str,
    pub dim: usize,
    pub sides: Vec<usize>,
    pub lambda: f64,
    pub kernel: String,
    pub scheduler: &'static str,
    pub u: f64,
    pub replica: usize,
    pub replica_seed: u64,
    pub field_seed: u64,
    pub initial_seed: u64,
    pub initial_particles: u64,
    pub retained_particles: u64,
    pub dissipated: u64,
    pub topplings: u64,
    pub retained_density: f64,
    pub termination: Termination,
    pub conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriveCurve {
    pub u: Vec<f64>,
    /// Retained density, `[grid point][replica]`.
    pub samples: Vec<Vec<f64>>,
    /// Realized initial density, `[grid point][replica]`.
    pub initial: Vec<Vec<f64>>,
    pub cap_exceeded: Vec<Vec<bool>>,
    pub records: Vec<DriveRecord>,
}

impl DriveCurve {
    /// A curve without run records, e.g. synthetic input for the breakpoint fit.
    pub fn from_samples(u: Vec<f64>, samples: Vec<Vec<f64>>) -> Self {
        let initial = u.iter().zip(&samples).map(|(&u, s)| vec![u; s.len()]).collect();
        let cap_exceeded = samples.iter().map(|s| vec![false; s.len()]).collect();
        Self { u, samples, initial, cap_exceeded, records: Vec::new() }
    }

    pub fn replicas(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Replica mean and standard error of the retained density at each grid point.
    pub fn stats(&self) -> Vec<Stat> {
        self.samples.iter().map(|s| Stat::of(s)).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.stats().iter().map(|s| s.mean).collect()
    }

    /// Pooled retained/added ratio at grid point `i`.
    pub fn retention_ratio(&self, i: usize) -> f64 {
        let kept: f64 = self.samples[i].iter().sum();
        let added: f64 = self.initial[i].iter().sum();
        if added == 0.0 {
            1.0
        } else {
            kept / added
        }
    }

    /// Every replica keeps at most what it received and at most one particle per site.
    pub fn bound_holds(&self) -> bool {
        self.samples
            .iter()
            .zip(&self.initial)
            .all(|(s, init)| s.iter().zip(init).all(|(&z, &a)| (0.0..=a.min(1.0)).contains(&z)))
    }

    pub fn all_conserved(&self) -> bool {
        self.records.iter().all(|r| r.conserved)
    }

    pub fn cap_count(&self) -> usize {
        self.cap_exceeded.iter().flatten().filter(|&&c| c).count()
    }
}

fn check_absorbing(domain: &Domain) -> Result<(), ExperimentError> {
    if domain.boundary() != Boundary::Absorbing {
        return Err(ExperimentError::Boundary { expected: Boundary::Absorbing });
    }
    Ok(())
}

/// Batch protocol: Poisson(u) initial state (or another family), stabilized on the whole box.
pub fn drive(params: &DriveParams) -> Result<DriveCurve, ExperimentError> {
    check_absorbing(&params.domain)?;
    check_grid(&params.u_grid)?;
    if params.replicas == 0 {
        return Err(ExperimentError::NoReplicas);
    }
    // validate once up front so workers cannot fail
    InstructionField::new(0, params.lambda, params.kernel.clone(), &params.domain)?;
    for &u in &params.u_grid {
        InitialStateSpec::new(params.family.clone(), u, 0).check(&params.domain)?;
    }

    let n = params.domain.len();
    let tasks: Vec<(usize, usize)> = (0..params.u_grid.len())
        .flat_map(|i| (0..params.replicas).map(move |r| (i, r)))
        .collect();
    let kernel_label = params.kernel.label();
    let records: Vec<DriveRecord> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let u = params.u_grid[i];
            let (rs, fs, is) = replica_seeds(params.seed, r);
            let field = InstructionField::new(fs, params.lambda, params.kernel.clone(), &params.domain)
                .expect("validated");
            let config = InitialStateSpec::new(params.family.clone(), u, is)
                .generate(&params.domain)
                .expect("validated");
            let initial = config.particles();
            let report = Stabilizer::new(&field)
                .scheduler(params.scheduler)
                .cap_opt(params.cap)
                .run(config, Odometer::zeros(n));
            let retained = report.config.particles();
            DriveRecord {
                experiment: "drive",
                family: params.family.name(),
                dim: params.domain.dim(),
                sides: params.domain.sides().to_vec(),
                lambda: params.lambda,
                kernel: kernel_label.clone(),
                scheduler: params.scheduler.name(),
                u,
                replica: r,
                replica_seed: rs,
                field_seed: fs,
                initial_seed: is,
                initial_particles: initial,
                retained_particles: retained,
                dissipated: report.dissipated,
                topplings: report.topplings,
                retained_density: retained as f64 / n as f64,
                termination: report.termination,
                conserved: retained + report.dissipated == initial && report.config.totals_consistent(),
            }
        })
        .collect();

    let grid = params.u_grid.len();
    let mut samples = vec![Vec::with_capacity(params.replicas); grid];
    let mut initial = vec![Vec::with_capacity(params.replicas); grid];
    let mut cap_exceeded = vec![Vec::with_capacity(params.replicas); grid];
    for (rec, &(i, _)) in records.iter().zip(&tasks) {
        samples[i].push(rec.retained_density);
        initial[i].push(rec.initial_particles as f64 / n as f64);
        cap_exceeded[i].push(rec.termination == Termination::CapExceeded);
    }
    Ok(DriveCurve { u: params.u_grid.clone(), samples, initial, cap_exceeded, records })
}

#[derive(Debug, Clone)]
pub struct OneByOneParams {
    pub domain: Domain,
    pub lambda: f64,
    pub kernel: JumpKernel,
    pub particles: usize,
    pub seed: u64,
    pub cap: Option<u64>,
}

/// State after each addition of the one-by-one protocol.
#[derive(Debug, Clone)]
pub struct OneByOnePath {
    pub placements: Vec<usize>,
    /// Particles in the box after each addition has stabilized.
    pub retained: Vec<u64>,
    /// Cumulative absorbed particles after each addition.
    pub dissipated: Vec<u64>,
    pub config: Configuration,
    pub odometer: Odometer,
    pub topplings: u64,
    pub termination: Termination,
}

impl OneByOnePath {
    pub fn retained_density(&self) -> f64 {
        self.config.density()
    }

    /// `retained + dissipated = added` after every step.
    pub fn conserved(&self) -> bool {
        self.retained.iter().zip(&self.dissipated).enumerate().all(|(k, (r, d))| r + d == k as u64 + 1)
    }
}

/// Adds particles at uniform sites from the placement stream, stabilizing in between.
pub fn one_by_one_drive(params: &OneByOneParams) -> Result<OneByOnePath, ExperimentError> {
    check_absorbing(&params.domain)?;
    let (_, fs, ps) = replica_seeds(params.seed, 0);
    let field = InstructionField::new(fs, params.lambda, params.kernel.clone(), &params.domain)?;
    let mut placer = CounterRng::new(ps, Stream::Placement, 0);
    let n = params.domain.len() as u64;
    let placements: Vec<usize> = (0..params.particles).map(|_| placer.below(n) as usize).collect();
    Ok(one_by_one_with(&field, &params.domain, &placements, params.cap))
}

/// One-by-one protocol with a given field and placement sequence. The odometer
/// carries over between additions, so each new particle reads fresh instructions.
pub fn one_by_one_with(field: &InstructionField, domain: &Domain, placements: &[usize], cap: Option<u64>) -> OneByOnePath {
    let mut config = Configuration::empty(domain.clone());
    let mut odometer = Odometer::zeros(domain.len());
    let mut retained = Vec::with_capacity(placements.len());
    let mut dissipated = Vec::with_capacity(placements.len());
    let mut lost = 0u64;
    let mut topplings = 0u64;
    let mut termination = Termination::Stable;
    let stabilizer = Stabilizer::new(field);
    for &x in placements {
        config.increment(x);
        let budget = cap.map(|c| c.saturating_sub(topplings));
        let report = stabilizer.clone().cap_opt(budget).run(config, odometer);
        config = report.config;
        odometer = report.odometer;
        topplings += report.topplings;
        lost += report.dissipated;
        retained.push(config.particles());
        dissipated.push(lost);
        if report.termination == Termination::CapExceeded {
            termination = Termination::CapExceeded;
            break;
        }
    }
    OneByOnePath { placements: placements.to_vec(), retained, dissipated, config, odometer, topplings, termination }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SiteState;

    fn params(side: usize, grid: Vec<f64>, replicas: usize) -> DriveParams {
        DriveParams::new(Domain::absorbing(vec![side]), 1.0, JumpKernel::symmetric(1), grid, replicas, 4)
    }

    #[test]
    fn zero_density_retains_nothing() {
        let c = drive(&params(32, vec![0.0, 0.5], 3)).unwrap();
        assert!(c.samples[0].iter().all(|&z| z == 0.0));
        assert!(c.bound_holds() && c.all_conserved());
        assert_eq!(c.records.len(), 6);
    }

    #[test]
    fn torus_is_rejected() {
        let mut p = params(8, vec![0.1], 1);
        p.domain = Domain::torus(vec![8]);
        assert_eq!(drive(&p), Err(ExperimentError::Boundary { expected: Boundary::Absorbing }));
        p.domain = Domain::absorbing(vec![8]);
        p.replicas = 0;
        assert_eq!(drive(&p), Err(ExperimentError::NoReplicas));
    }

    #[test]
    fn single_particle_sleeps_or_exits() {
        for seed in 0..20 {
            let p = OneByOneParams {
                domain: Domain::absorbing(vec![6, 6]),
                lambda: 1.0,
                kernel: JumpKernel::symmetric(2),
                particles: 1,
                seed,
                cap: None,
            };
            let path = one_by_one_drive(&p).unwrap();
            let z = path.retained_density();
            assert!(z == 0.0 || z == 1.0 / 36.0);
            if z > 0.0 {
                assert!(path.config.states().contains(&SiteState::Sleeping));
            }
        }
    }

    #[test]
    fn one_by_one_conserves_mass() {
        let p = OneByOneParams {
            domain: Domain::absorbing(vec![16]),
            lambda: 0.5,
            kernel: JumpKernel::symmetric(1),
            particles: 40,
            seed: 11,
            cap: None,
        };
        let path = one_by_one_drive(&p).unwrap();
        assert_eq!(path.retained.len(), 40);
        assert!(path.conserved());
        assert!(path.retained.iter().all(|&r| r <= 16));
    }
}
