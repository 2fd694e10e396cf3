//! Driven-dissipative curves, density scans, breakpoint estimation,
//! continuous-time runs and the cross-family comparison.

use thiserror::Error;

use crate::field::FieldError;
use crate::initial::InitialError;
use crate::lattice::Boundary;

mod drive;
mod estimate;
mod gillespie;
mod scan;
mod universality;

pub use drive::{
    drive, one_by_one_drive, one_by_one_with, DriveCurve, DriveParams, DriveRecord, OneByOneParams,
    OneByOnePath,
};
pub use estimate::{estimate_zeta_c, fit_breakpoint, BreakpointEstimate, MIN_GRID_POINTS};
pub use gillespie::{gillespie_run, site_rate, GillespieStop, GillespieTermination, GillespieTrace, TransitionEvent, TransitionKind};
pub use scan::{density_scan, Growth, ScanParams, ScanPoint, ScanRecord, ScanResult, SizeStats};
pub use universality::{family_seed, universality_compare, PairwiseDiff, UniversalityParams, UniversalityReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Initial(#[from] InitialError),
    #[error("this experiment needs a {expected} boundary")]
    Boundary { expected: Boundary },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("need at least one replica")]
    NoReplicas,
}

/// Evenly spaced grid `start, start+step, ...` up to `stop` (inclusive within rounding).
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<(), ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::Grid("empty".into()));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ExperimentError::Grid("values must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::Grid("values must be strictly increasing".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grid_endpoints() {
        let g = linear_grid(0.0, 1.2, 0.05);
        assert_eq!(g.len(), 25);
        assert!((g[24] - 1.2).abs() < 1e-12);
        assert!(check_grid(&g).is_ok());
        assert!(check_grid(&[0.2, 0.1]).is_err());
        assert!(check_grid(&[]).is_err());
    }
}
