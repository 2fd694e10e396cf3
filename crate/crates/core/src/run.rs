//! Experiment orchestration and result files.
//!
//! Each run writes `<experiment>.ndjson` (one record per line), a CSV curve
//! where one makes sense, and `manifest.json`. Records are computed in
//! parallel but written by one writer in a fixed order, so the NDJSON and CSV
//! files are byte-identical across runs of the same config. The manifest
//! carries the only varying field, `timestamp_unix`, on a line of its own.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentKind, RunConfig};
use crate::coupling::{coupled_stabilize, CouplingCaps};
use crate::experiments::{
    density_scan, drive, estimate_zeta_c, gillespie_run, universality_compare, DriveCurve, DriveParams,
    ExperimentError, GillespieStop, GillespieTermination, ScanParams, UniversalityParams, MIN_GRID_POINTS,
};
use crate::field::{InstructionField, TABLE_ORDERING};
use crate::lattice::Configuration;
use crate::rng;
use crate::suites::{self, SuiteSizes};
use crate::topple::{Odometer, Stabilizer};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "ARW_OUT_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// False only when a self-test failed.
    pub ok: bool,
    pub summary: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    config: &'a RunConfig,
    kernel: String,
    cumulative_table: CumulativeTableEcho,
    files: Vec<String>,
    timestamp_unix: u64,
}

#[derive(Serialize)]
struct CumulativeTableEcho {
    ordering: &'static str,
    upper_bounds: Vec<f64>,
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
        move |source| RunError::Io { path: path.to_path_buf(), source }
    }

    fn ndjson<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(Self::io(&path))?;
        let mut w = BufWriter::new(file);
        for row in rows {
            let line = serde_json::to_string(&row).expect("records serialize");
            writeln!(w, "{line}").map_err(Self::io(&path))?;
        }
        w.flush().map_err(Self::io(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(Self::io(&path))?;
        self.files.push(path);
        Ok(())
    }
}

/// Output directory: `ARW_OUT_DIR` if set, else the configured one.
pub fn resolve_out_dir(config: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => config.out_dir.clone(),
    }
}

/// Runs the configured experiment and writes its artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    run_in(config, &resolve_out_dir(config))
}

/// [`run`] into an explicit directory.
pub fn run_in(config: &RunConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    config.check().map_err(|e| RunError::Input(e.to_string()))?;
    fs::create_dir_all(dir).map_err(Output::io(dir))?;
    let mut out = Output { dir: dir.to_path_buf(), files: Vec::new() };
    let mut summary = Vec::new();
    let mut ok = true;
    match config.experiment {
        ExperimentKind::Drive => run_drive(config, &mut out, &mut summary)?,
        ExperimentKind::Scan => run_scan(config, &mut out, &mut summary)?,
        ExperimentKind::Gillespie => run_gillespie(config, &mut out, &mut summary)?,
        ExperimentKind::Couple => run_couple(config, &mut out, &mut summary)?,
        ExperimentKind::Selftest => ok = run_selftest(config, &mut out, &mut summary)?,
        ExperimentKind::Estimate => run_estimate(config, &mut out, &mut summary)?,
        ExperimentKind::Universality => run_universality(config, &mut out, &mut summary)?,
    }
    write_manifest(config, &mut out)?;
    Ok(RunOutcome { out_dir: out.dir, files: out.files, ok, summary })
}

fn write_manifest(config: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let table = InstructionField::new(0, config.lambda, config.kernel_table.clone(), &config.domain())
        .map(|f| f.cumulative_table().upper_bounds)
        .unwrap_or_default();
    let files: Vec<String> = out
        .files
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment.name(),
        config,
        kernel: config.kernel_table.label(),
        cumulative_table: CumulativeTableEcho { ordering: TABLE_ORDERING, upper_bounds: table },
        files,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    out.text("manifest.json", &body)
}

fn drive_params(config: &RunConfig) -> DriveParams {
    let mut p = DriveParams::new(
        config.domain(),
        config.lambda,
        config.kernel_table.clone(),
        config.grid.clone(),
        config.replicas,
        config.seed,
    );
    p.family = config.family.clone();
    p.scheduler = config.scheduler;
    p.cap = config.cap;
    p
}

fn curve_csv(curve: &DriveCurve) -> String {
    let mut s = String::from("u,mean,stderr,replicas,retention_ratio,cap_exceeded\n");
    for (i, st) in curve.stats().iter().enumerate() {
        let caps = curve.cap_exceeded[i].iter().filter(|&&c| c).count();
        writeln!(s, "{},{},{},{},{},{}", curve.u[i], st.mean, st.stderr, st.n, curve.retention_ratio(i), caps).unwrap();
    }
    s
}

fn estimate_into(curve: &DriveCurve, config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    if curve.u.len() < MIN_GRID_POINTS {
        summary.push(format!("breakpoint not estimated: fewer than {MIN_GRID_POINTS} grid points"));
        return Ok(());
    }
    let est = estimate_zeta_c(curve, config.resamples, config.seed)?;
    summary.push(format!(
        "breakpoint {:.4} +- {:.4}{}",
        est.c,
        est.stderr,
        if est.unbounded { " (no plateau: unbounded estimate)" } else { "" }
    ));
    let body = serde_json::to_string_pretty(&est).expect("estimate serializes") + "\n";
    out.text("estimate.json", &body)
}

fn run_drive(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let curve = drive(&drive_params(config))?;
    out.ndjson("drive.ndjson", &curve.records)?;
    out.text("drive.csv", &curve_csv(&curve))?;
    summary.push(format!(
        "{} grid points x {} replicas, {} capped, bound holds: {}",
        curve.u.len(),
        curve.replicas(),
        curve.cap_count(),
        curve.bound_holds()
    ));
    estimate_into(&curve, config, out, summary)
}

fn run_scan(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let mut p = ScanParams::new(
        config.domain(),
        config.lambda,
        config.kernel_table.clone(),
        config.grid.clone(),
        config.replicas,
        config.seed,
    );
    p.family = config.family.clone();
    p.scheduler = config.scheduler;
    p.cap = config.cap;
    p.doubled = config.doubled;
    let result = density_scan(&p)?;
    out.ndjson("scan.ndjson", &result.records)?;
    let mut csv = String::from(
        "zeta,mean_odometer,stderr,topplings,slept_fraction,dissipated_fraction,stabilized_fraction,mean_odometer_2l,stderr_2l,growth,growth_stderr\n",
    );
    for pt in &result.points {
        let b = &pt.base;
        write!(
            csv,
            "{},{},{},{},{},{},{}",
            pt.zeta,
            b.mean_odometer.mean,
            b.mean_odometer.stderr,
            b.topplings.mean,
            b.slept_fraction.mean,
            b.dissipated_fraction.mean,
            b.stabilized_fraction
        )
        .unwrap();
        match (&pt.doubled, pt.growth) {
            (Some(d), Some(g)) => {
                writeln!(csv, ",{},{},{},{}", d.mean_odometer.mean, d.mean_odometer.stderr, g.ratio, g.stderr).unwrap()
            }
            _ => csv.push_str(",,,,\n"),
        }
    }
    out.text("scan.csv", &csv)?;
    summary.push(format!("{} densities x {} replicas", result.points.len(), config.replicas));
    Ok(())
}

/// Initial configuration of replica `r`: the snapshot if given, else a fresh draw.
fn initial_config(config: &RunConfig, zeta: f64, seed: u64) -> Result<Configuration, RunError> {
    match &config.snapshot {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(Output::io(path))?;
            let c = Configuration::from_snapshot(&text).map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
            if c.domain() != &config.domain() {
                return Err(RunError::Input(format!("snapshot domain {} differs from configured {}", c.domain(), config.domain())));
            }
            Ok(c)
        }
        None => config.initial_spec(zeta, seed).generate(&config.domain()).map_err(|e| RunError::Input(e.to_string())),
    }
}

#[derive(Serialize)]
struct GillespieRecord {
    experiment: &'static str,
    replica: usize,
    field_seed: u64,
    initial_seed: u64,
    clock_seed: u64,
    particles: u64,
    events: usize,
    time: f64,
    termination: GillespieTermination,
    /// Ring counts equal the stabilizer odometer (only meaningful on a stable stop).
    matches_odometer: Option<bool>,
}

#[derive(Serialize)]
struct EventRow<'a> {
    replica: usize,
    #[serde(flatten)]
    event: &'a crate::experiments::TransitionEvent,
}

fn run_gillespie(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let domain = config.domain();
    let n = domain.len();
    let rows: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|r| -> Result<_, RunError> {
            let rs = rng::child_seed(config.seed, r as u64);
            let (fs_, is, cs) = (rng::child_seed(rs, 0), rng::child_seed(rs, 1), rng::child_seed(rs, 2));
            let c = initial_config(config, config.zeta, is)?;
            let field = InstructionField::new(fs_, config.lambda, config.kernel_table.clone(), &domain)
                .map_err(|e| RunError::Input(e.to_string()))?;
            let stop = GillespieStop { horizon: config.horizon, max_events: config.max_events };
            let trace = gillespie_run(&c, &field, stop, cs);
            let matches = (trace.termination == GillespieTermination::Stable).then(|| {
                let report = Stabilizer::new(&field).cap_opt(config.cap).run(c.clone(), Odometer::zeros(n));
                report.is_stable() && report.odometer == trace.counts
            });
            let rec = GillespieRecord {
                experiment: "gillespie",
                replica: r,
                field_seed: fs_,
                initial_seed: is,
                clock_seed: cs,
                particles: c.particles(),
                events: trace.events.len(),
                time: trace.time,
                termination: trace.termination,
                matches_odometer: matches,
            };
            Ok((rec, trace))
        })
        .collect::<Result<_, _>>()?;
    out.ndjson("gillespie.ndjson", rows.iter().map(|(rec, _)| rec))?;
    out.ndjson(
        "gillespie_events.ndjson",
        rows.iter().flat_map(|(rec, t)| t.events.iter().map(move |e| EventRow { replica: rec.replica, event: e })),
    )?;
    let mut csv = String::from("replica,site,transitions\n");
    for (rec, t) in &rows {
        for (x, &k) in t.counts.as_slice().iter().enumerate() {
            writeln!(csv, "{},{},{}", rec.replica, x, k).unwrap();
        }
    }
    out.text("gillespie.csv", &csv)?;
    let stable = rows.iter().filter(|(r, _)| r.termination == GillespieTermination::Stable).count();
    let matched = rows.iter().filter(|(r, _)| r.matches_odometer == Some(true)).count();
    summary.push(format!("{stable}/{} replicas stabilized, {matched} match the discrete odometer", rows.len()));
    Ok(())
}

fn run_couple(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let domain = config.domain();
    let caps = CouplingCaps { round_cap: config.round_cap, stabilize_cap: config.cap };
    let records: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|r| -> Result<_, RunError> {
            let rs = rng::child_seed(config.seed, r as u64);
            let (sl, su, sf) = (rng::child_seed(rs, 0), rng::child_seed(rs, 1), rng::child_seed(rs, 2));
            let eta = initial_config(config, config.zeta, sl)?;
            let xi = config.initial_spec(config.zeta_upper, su).generate(&domain).map_err(|e| RunError::Input(e.to_string()))?;
            let field = InstructionField::new(sf, config.lambda, config.kernel_table.clone(), &domain)
                .map_err(|e| RunError::Input(e.to_string()))?;
            let report = coupled_stabilize(&eta, &xi, &field, caps).map_err(|e| RunError::Input(e.to_string()))?;
            Ok(report.record(sl, su, sf))
        })
        .collect::<Result<_, _>>()?;
    out.ndjson("couple.ndjson", &records)?;
    let mut csv = String::from("replica,status,rounds,max_h0,max_h1,embedded_bound_holds,direct_bound_holds\n");
    let opt = |b: Option<bool>| b.map_or(String::new(), |v| v.to_string());
    for (i, r) in records.iter().enumerate() {
        let status = serde_json::to_value(r.status).expect("status").as_str().unwrap_or_default().to_string();
        writeln!(
            csv,
            "{i},{status},{},{},{},{},{}",
            r.rounds,
            r.max_h0,
            r.max_h1.map_or(String::new(), |v| v.to_string()),
            opt(r.embedded_bound_holds),
            opt(r.direct_bound_holds)
        )
        .unwrap();
    }
    out.text("couple.csv", &csv)?;
    let complete = records.iter().filter(|r| r.embedded_bound_holds.is_some() && r.direct_bound_holds.is_some()).count();
    let holding = records.iter().filter(|r| r.embedded_bound_holds == Some(true) && r.direct_bound_holds == Some(true)).count();
    summary.push(format!("{holding}/{complete} complete runs satisfy both bounds ({} runs)", records.len()));
    Ok(())
}

fn run_selftest(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<bool, RunError> {
    let reports = suites::run_all(SuiteSizes::FULL, config.seed);
    out.ndjson("selftest.ndjson", &reports)?;
    for r in &reports {
        summary.push(format!("[{}] {}", if r.ok() { "pass" } else { "FAIL" }, r.summary()));
    }
    Ok(reports.iter().all(|r| r.ok()))
}

/// Rebuilds a drive curve from `drive.ndjson` records.
pub fn curve_from_records(text: &str) -> Result<DriveCurve, RunError> {
    #[derive(serde::Deserialize)]
    struct Row {
        u: f64,
        replica: usize,
        sides: Vec<usize>,
        retained_density: f64,
        initial_particles: u64,
        termination: String,
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Row = serde_json::from_str(line).map_err(|e| RunError::Input(format!("record {}: {e}", i + 1)))?;
        rows.push(row);
    }
    let mut u: Vec<f64> = rows.iter().map(|r| r.u).collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let replicas = rows.iter().map(|r| r.replica + 1).max().unwrap_or(0);
    let mut samples = vec![vec![f64::NAN; replicas]; u.len()];
    let mut initial = samples.clone();
    let mut cap_exceeded = vec![vec![false; replicas]; u.len()];
    for r in &rows {
        let i = u.iter().position(|&v| v == r.u).expect("present");
        samples[i][r.replica] = r.retained_density;
        let sites: usize = r.sides.iter().product();
        initial[i][r.replica] = r.initial_particles as f64 / sites as f64;
        cap_exceeded[i][r.replica] = r.termination == "cap-exceeded";
    }
    if samples.iter().flatten().any(|v| v.is_nan()) {
        return Err(RunError::Input("records do not cover every (u, replica) pair".into()));
    }
    let mut curve = DriveCurve::from_samples(u, samples);
    curve.cap_exceeded = cap_exceeded;
    curve.initial = initial;
    Ok(curve)
}

fn run_estimate(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let path = config.input.as_ref().expect("checked");
    let text = fs::read_to_string(path).map_err(Output::io(path))?;
    let curve = curve_from_records(&text)?;
    out.text("estimate_curve.csv", &curve_csv(&curve))?;
    estimate_into(&curve, config, out, summary)
}

fn run_universality(config: &RunConfig, out: &mut Output, summary: &mut Vec<String>) -> Result<(), RunError> {
    let p = UniversalityParams {
        families: config.families.clone(),
        lambda: config.lambda,
        kernel: config.kernel_table.clone(),
        sides: config.sides.clone(),
        zeta_grid: config.grid.clone(),
        scan_replicas: config.replicas,
        scan_cap: config.cap,
        u_grid: config.drive_grid.clone(),
        drive_replicas: config.replicas,
        seed: config.seed,
        resamples: config.resamples,
    };
    let report = universality_compare(&p)?;
    out.ndjson("universality.ndjson", &report.pairwise)?;
    out.ndjson("universality_breakpoints.ndjson", &report.breakpoints)?;
    let mut csv = String::from("family,zeta,mean_odometer,stderr,stabilized_fraction,growth,growth_stderr\n");
    for s in &report.scans {
        for pt in &s.points {
            let g = pt.growth.map_or((f64::NAN, f64::NAN), |g| (g.ratio, g.stderr));
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                s.family, pt.zeta, pt.base.mean_odometer.mean, pt.base.mean_odometer.stderr, pt.base.stabilized_fraction, g.0, g.1
            )
            .unwrap();
        }
    }
    out.text("universality.csv", &csv)?;
    for (name, b) in &report.breakpoints {
        summary.push(format!("{name}: breakpoint {:.4} +- {:.4}", b.c, b.stderr));
    }
    Ok(())
}
