//! Side-by-side scans and breakpoints for several initial-state families.

use serde::Serialize;

use super::{density_scan, drive, estimate_zeta_c, BreakpointEstimate, DriveParams, ExperimentError, ScanParams, ScanResult};
use crate::initial::Family;
use crate::lattice::{Domain, JumpKernel};
use crate::rng;
use crate::stats::diff_of_means_ci;
use crate::topple::Scheduler;

#[derive(Debug, Clone)]
pub struct UniversalityParams {
    pub families: Vec<Family>,
    pub lambda: f64,
    pub kernel: JumpKernel,
    /// Side lengths of the scan torus; the doubled torus is also run.
    pub sides: Vec<usize>,
    pub zeta_grid: Vec<f64>,
    pub scan_replicas: usize,
    pub scan_cap: Option<u64>,
    /// Drive grid on the absorbing box with the same sides; empty skips breakpoints.
    pub u_grid: Vec<f64>,
    pub drive_replicas: usize,
    pub seed: u64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseDiff {
    pub a: &'static str,
    pub b: &'static str,
    pub statistic: &'static str,
    pub zeta: Option<f64>,
    pub diff: f64,
    pub combined_stderr: f64,
    /// Percentile bootstrap interval, where replica samples are available.
    pub ci: Option<(f64, f64)>,
}

impl PairwiseDiff {
    /// `|diff| <= k * combined_stderr`.
    pub fn within(&self, k: f64) -> bool {
        self.diff.abs() <= k * self.combined_stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalityReport {
    pub scans: Vec<ScanResult>,
    pub breakpoints: Vec<(&'static str, BreakpointEstimate)>,
    pub pairwise: Vec<PairwiseDiff>,
}

impl UniversalityReport {
    pub fn diffs(&self, statistic: &str) -> impl Iterator<Item = &PairwiseDiff> {
        let statistic = statistic.to_string();
        self.pairwise.iter().filter(move |d| d.statistic == statistic)
    }
}

/// Independent seed per family, so the combined standard errors apply.
pub fn family_seed(seed: u64, index: usize) -> u64 {
    rng::child_seed(rng::child_seed(seed, u64::MAX), index as u64)
}

pub fn universality_compare(params: &UniversalityParams) -> Result<UniversalityReport, ExperimentError> {
    if params.families.len() < 2 {
        return Err(ExperimentError::Grid("need at least two families".into()));
    }
    let mut scans = Vec::new();
    let mut breakpoints = Vec::new();
    for (k, family) in params.families.iter().enumerate() {
        let fs = family_seed(params.seed, k);
        let mut sp = ScanParams::new(
            Domain::torus(params.sides.clone()),
            params.lambda,
            params.kernel.clone(),
            params.zeta_grid.clone(),
            params.scan_replicas,
            fs,
        );
        sp.family = family.clone();
        sp.cap = params.scan_cap;
        sp.doubled = true;
        scans.push(density_scan(&sp)?);
        if !params.u_grid.is_empty() {
            let mut dp = DriveParams::new(
                Domain::absorbing(params.sides.clone()),
                params.lambda,
                params.kernel.clone(),
                params.u_grid.clone(),
                params.drive_replicas,
                fs,
            );
            dp.family = family.clone();
            dp.scheduler = Scheduler::Fifo;
            let curve = drive(&dp)?;
            breakpoints.push((family.name(), estimate_zeta_c(&curve, params.resamples, fs)?));
        }
    }

    let mut pairwise = Vec::new();
    for i in 0..scans.len() {
        for j in i + 1..scans.len() {
            let (a, b) = (&scans[i], &scans[j]);
            for (pa, pb) in a.points.iter().zip(&b.points) {
                let (sa, sb) = (&pa.base, &pb.base);
                pairwise.push(PairwiseDiff {
                    a: a.family,
                    b: b.family,
                    statistic: "mean_odometer",
                    zeta: Some(pa.zeta),
                    diff: sa.mean_odometer.mean - sb.mean_odometer.mean,
                    combined_stderr: sa.mean_odometer.combined_stderr(&sb.mean_odometer),
                    ci: Some(diff_of_means_ci(
                        &sa.odometer_samples,
                        &sb.odometer_samples,
                        params.resamples,
                        rng::child_seed(params.seed, (i * 1000 + j) as u64),
                    )),
                });
                let binom = |p: f64, n: usize| (p * (1.0 - p) / n as f64).sqrt();
                pairwise.push(PairwiseDiff {
                    a: a.family,
                    b: b.family,
                    statistic: "stabilized_fraction",
                    zeta: Some(pa.zeta),
                    diff: sa.stabilized_fraction - sb.stabilized_fraction,
                    combined_stderr: binom(sa.stabilized_fraction, sa.mean_odometer.n)
                        .hypot(binom(sb.stabilized_fraction, sb.mean_odometer.n)),
                    ci: None,
                });
                if let (Some(ga), Some(gb)) = (pa.growth, pb.growth) {
                    pairwise.push(PairwiseDiff {
                        a: a.family,
                        b: b.family,
                        statistic: "odometer_growth",
                        zeta: Some(pa.zeta),
                        diff: ga.ratio - gb.ratio,
                        combined_stderr: ga.stderr.hypot(gb.stderr),
                        ci: None,
                    });
                }
            }
            if let (Some((_, ba)), Some((_, bb))) = (breakpoints.get(i), breakpoints.get(j)) {
                pairwise.push(PairwiseDiff {
                    a: a.family,
                    b: b.family,
                    statistic: "breakpoint",
                    zeta: None,
                    diff: ba.c - bb.c,
                    combined_stderr: ba.stderr.hypot(bb.stderr),
                    ci: None,
                });
            }
        }
    }
    Ok(UniversalityReport { scans, breakpoints, pairwise })
}
