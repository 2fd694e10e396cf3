//! Two-segment fit `zeta(u) = min(u, c)`.

use serde::Serialize;

use super::{DriveCurve, ExperimentError};
use crate::stats::{sample_sd, sorted_sum, Bootstrap};

pub const MIN_GRID_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakpointEstimate {
    pub c: f64,
    pub stderr: f64,
    /// Fewer than two grid points lie above the fitted breakpoint.
    pub unbounded: bool,
    pub sse: f64,
    pub resamples: usize,
}

/// Least-squares `c` for `y ~ min(u, c)`, with `u` strictly increasing.
///
/// On `[u_k, u_{k+1}]` the points above `k` contribute `(y_i - c)^2`, so the
/// best `c` there is their mean clamped to the interval.
pub fn fit_breakpoint(u: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(u.len(), y.len());
    let n = u.len();
    let below: Vec<f64> = {
        // below[k] = sum_{i<k} (y_i - u_i)^2
        let mut acc = vec![0.0; n + 1];
        for i in 0..n {
            acc[i + 1] = acc[i] + (y[i] - u[i]).powi(2);
        }
        acc
    };
    let sse_at = |k: usize, c: f64| below[k] + y[k..].iter().map(|v| (v - c).powi(2)).sum::<f64>();

    // c <= u_0: every point is on the plateau
    let mean_all = sorted_sum(y) / n as f64;
    let c0 = mean_all.min(u[0]);
    let mut best = (c0, sse_at(0, c0));
    for k in 0..n {
        let (lo, hi) = (u[k], if k + 1 < n { u[k + 1] } else { f64::INFINITY });
        let c = if k + 1 < n {
            (sorted_sum(&y[k + 1..]) / (n - k - 1) as f64).clamp(lo, hi)
        } else {
            lo // beyond the grid the loss is flat; take the left end
        };
        let sse = sse_at(k + 1, c);
        if sse < best.1 {
            best = (c, sse);
        }
    }
    best
}

/// Breakpoint of a drive curve with a bootstrap standard error.
///
/// Replicas are resampled as whole columns, after sorting the columns so the
/// result does not depend on replica order. A single-replica curve falls back
/// to resampling residuals.
pub fn estimate_zeta_c(curve: &DriveCurve, resamples: usize, seed: u64) -> Result<BreakpointEstimate, ExperimentError> {
    let g = curve.u.len();
    if g < MIN_GRID_POINTS {
        return Err(ExperimentError::Grid(format!("need at least {MIN_GRID_POINTS} grid points, got {g}")));
    }
    super::check_grid(&curve.u)?;
    let r = curve.replicas();
    if r == 0 || curve.samples.iter().any(|s| s.len() != r) {
        return Err(ExperimentError::NoReplicas);
    }
    let means: Vec<f64> = curve.samples.iter().map(|s| sorted_sum(s) / r as f64).collect();
    let (c, sse) = fit_breakpoint(&curve.u, &means);
    let above = curve.u.iter().filter(|&&u| u > c).count();

    let mut boot = Bootstrap::new(seed);
    let estimates: Vec<f64> = if r > 1 {
        let mut columns: Vec<Vec<f64>> = (0..r).map(|j| curve.samples.iter().map(|s| s[j]).collect()).collect();
        columns.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        (0..resamples)
            .map(|_| {
                let pick = boot.indices(r);
                let y: Vec<f64> = (0..g).map(|i| pick.iter().map(|&j| columns[j][i]).sum::<f64>() / r as f64).collect();
                fit_breakpoint(&curve.u, &y).0
            })
            .collect()
    } else {
        let fitted: Vec<f64> = curve.u.iter().map(|&u| u.min(c)).collect();
        let resid: Vec<f64> = means.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        (0..resamples)
            .map(|_| {
                let y: Vec<f64> = boot.indices(g).into_iter().zip(&fitted).map(|(j, f)| f + resid[j]).collect();
                fit_breakpoint(&curve.u, &y).0
            })
            .collect()
    };
    Ok(BreakpointEstimate { c, stderr: sample_sd(&estimates), unbounded: above < 2, sse, resamples })
}
