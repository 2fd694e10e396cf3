//! Density scans on the torus.

use rayon::prelude::*;
use serde::Serialize;

use super::drive::replica_seeds;
use super::{check_grid, ExperimentError};
use crate::field::InstructionField;
use crate::initial::{Family, InitialStateSpec};
use crate::lattice::{Boundary, Domain, JumpKernel};
use crate::stats::Stat;
use crate::topple::{Odometer, Scheduler, Stabilizer, Termination};

#[derive(Debug, Clone)]
pub struct ScanParams {
    pub domain: Domain,
    pub lambda: f64,
    pub kernel: JumpKernel,
    pub zeta_grid: Vec<f64>,
    pub family: Family,
    pub replicas: usize,
    pub seed: u64,
    pub scheduler: Scheduler,
    /// Per-run toppling cap; `None` uses the stabilizer default.
    pub cap: Option<u64>,
    /// Also run every point on the box with doubled sides.
    pub doubled: bool,
}

impl ScanParams {
    pub fn new(domain: Domain, lambda: f64, kernel: JumpKernel, zeta_grid: Vec<f64>, replicas: usize, seed: u64) -> Self {
        Self {
            domain,
            lambda,
            kernel,
            zeta_grid,
            family: Family::Poisson,
            replicas,
            seed,
            scheduler: Scheduler::Fifo,
            cap: None,
            doubled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub experiment: &'static str,
    pub family: &'static str,
    pub dim: usize,
    pub sides: Vec<usize>,
    pub lambda: f64,
    pub kernel: String,
    pub scheduler: &'static str,
    pub zeta: f64,
    pub replica: usize,
    pub replica_seed: u64,
    pub field_seed: u64,
    pub initial_seed: u64,
    pub particles: u64,
    pub measured_density: f64,
    pub topplings: u64,
    pub mean_odometer: f64,
    pub max_odometer: u64,
    pub slept: u64,
    pub slept_fraction: f64,
    pub dissipated_fraction: f64,
    pub termination: Termination,
    pub conserved: bool,
}

/// Statistics of one box size at one density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeStats {
    pub sides: Vec<usize>,
    pub mean_odometer: Stat,
    pub topplings: Stat,
    pub slept_fraction: Stat,
    pub dissipated_fraction: Stat,
    /// Fraction of replicas that stabilized within the cap.
    pub stabilized_fraction: f64,
    /// Per-replica mean odometers, in replica order.
    pub odometer_samples: Vec<f64>,
}

/// Ratio of mean odometers on the doubled and the base box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub zeta: f64,
    pub base: SizeStats,
    pub doubled: Option<SizeStats>,
    pub growth: Option<Growth>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub family: &'static str,
    pub points: Vec<ScanPoint>,
    #[serde(skip)]
    pub records: Vec<ScanRecord>,
}

impl ScanResult {
    pub fn all_conserved(&self) -> bool {
        self.records.iter().all(|r| r.conserved)
    }
}

fn summarize(domain: &Domain, records: &[&ScanRecord]) -> SizeStats {
    let col = |f: fn(&ScanRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let odometer_samples = col(|r| r.mean_odometer);
    SizeStats {
        sides: domain.sides().to_vec(),
        mean_odometer: Stat::of(&odometer_samples),
        topplings: Stat::of(&col(|r| r.topplings as f64)),
        slept_fraction: Stat::of(&col(|r| r.slept_fraction)),
        dissipated_fraction: Stat::of(&col(|r| r.dissipated_fraction)),
        stabilized_fraction: records.iter().filter(|r| r.termination == Termination::Stable).count() as f64
            / records.len() as f64,
        odometer_samples,
    }
}

/// Delta-method ratio of two independent means.
fn growth(base: &Stat, doubled: &Stat) -> Growth {
    let ratio = doubled.mean / base.mean;
    let rel = ((doubled.stderr / doubled.mean).powi(2) + (base.stderr / base.mean).powi(2)).sqrt();
    Growth { ratio, stderr: ratio.abs() * rel }
}

/// Generates, stabilizes and measures every (density, replica, size) cell.
pub fn density_scan(params: &ScanParams) -> Result<ScanResult, ExperimentError> {
    if params.domain.boundary() != Boundary::Torus {
        return Err(ExperimentError::Boundary { expected: Boundary::Torus });
    }
    check_grid(&params.zeta_grid)?;
    if params.replicas == 0 {
        return Err(ExperimentError::NoReplicas);
    }
    let mut domains = vec![params.domain.clone()];
    if params.doubled {
        domains.push(params.domain.scaled(2));
    }
    for d in &domains {
        InstructionField::new(0, params.lambda, params.kernel.clone(), d)?;
        for &z in &params.zeta_grid {
            InitialStateSpec::new(params.family.clone(), z, 0).check(d)?;
        }
    }

    let tasks: Vec<(usize, usize, usize)> = (0..params.zeta_grid.len())
        .flat_map(|i| (0..domains.len()).flat_map(move |s| (0..params.replicas).map(move |r| (i, s, r))))
        .collect();
    let kernel_label = params.kernel.label();
    let records: Vec<ScanRecord> = tasks
        .par_iter()
        .map(|&(i, s, r)| {
            let domain = &domains[s];
            let n = domain.len();
            let zeta = params.zeta_grid[i];
            let (rs, fs, is) = replica_seeds(params.seed, r);
            let field = InstructionField::new(fs, params.lambda, params.kernel.clone(), domain).expect("validated");
            let config = InitialStateSpec::new(params.family.clone(), zeta, is).generate(domain).expect("validated");
            let particles = config.particles();
            let report = Stabilizer::new(&field)
                .scheduler(params.scheduler)
                .cap_opt(params.cap)
                .run(config, Odometer::zeros(n));
            let conserved = report.config.particles() + report.dissipated == particles
                && report.config.totals_consistent();
            ScanRecord {
                experiment: "scan",
                family: params.family.name(),
                dim: domain.dim(),
                sides: domain.sides().to_vec(),
                lambda: params.lambda,
                kernel: kernel_label.clone(),
                scheduler: params.scheduler.name(),
                zeta,
                replica: r,
                replica_seed: rs,
                field_seed: fs,
                initial_seed: is,
                particles,
                measured_density: particles as f64 / n as f64,
                topplings: report.topplings,
                mean_odometer: report.odometer.mean(),
                max_odometer: report.odometer.max(),
                slept: report.slept,
                slept_fraction: if report.topplings == 0 { 0.0 } else { report.slept as f64 / report.topplings as f64 },
                dissipated_fraction: if particles == 0 { 0.0 } else { report.dissipated as f64 / particles as f64 },
                termination: report.termination,
                conserved,
            }
        })
        .collect();

    let points = (0..params.zeta_grid.len())
        .map(|i| {
            let of_size = |s: usize| {
                let rows: Vec<&ScanRecord> =
                    records.iter().zip(&tasks).filter(|(_, t)| t.0 == i && t.1 == s).map(|(r, _)| r).collect();
                summarize(&domains[s], &rows)
            };
            let base = of_size(0);
            let doubled = params.doubled.then(|| of_size(1));
            let growth = doubled.as_ref().map(|d| growth(&base.mean_odometer, &d.mean_odometer));
            ScanPoint { zeta: params.zeta_grid[i], base, doubled, growth }
        })
        .collect();
    Ok(ScanResult { family: params.family.name(), points, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_does_nothing() {
        let p = ScanParams::new(Domain::torus(vec![16]), 1.0, JumpKernel::symmetric(1), vec![0.0], 2, 1);
        let r = density_scan(&p).unwrap();
        assert_eq!(r.points[0].base.mean_odometer.mean, 0.0);
        assert_eq!(r.points[0].base.stabilized_fraction, 1.0);
    }

    #[test]
    fn supercritical_density_caps_out() {
        let mut p = ScanParams::new(Domain::torus(vec![12]), 1.0, JumpKernel::symmetric(1), vec![1.25], 3, 2);
        p.family = Family::periodic(4);
        p.cap = Some(20_000);
        let r = density_scan(&p).unwrap();
        assert_eq!(r.points[0].base.stabilized_fraction, 0.0);
        assert!(r.all_conserved());
    }

    #[test]
    fn absorbing_box_is_rejected() {
        let p = ScanParams::new(Domain::absorbing(vec![16]), 1.0, JumpKernel::symmetric(1), vec![0.1], 1, 1);
        assert_eq!(density_scan(&p), Err(ExperimentError::Boundary { expected: Boundary::Torus }));
    }

    #[test]
    fn growth_ratio_of_equal_means_is_one() {
        let a = Stat { mean: 2.0, stderr: 0.1, n: 10 };
        let g = growth(&a, &a);
        assert_eq!(g.ratio, 1.0);
        assert!((g.stderr - 0.1 / 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }
}
