//! `arw`: run activated random walk experiments from a config file or flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use arw_core::config::{self, parse_config_in, ExperimentKind, KernelSpec, RunConfig};
use arw_core::lattice::Boundary;
use arw_core::run;

#[derive(Parser)]
#[command(name = "arw", version, about = "Activated random walk simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Driven-dissipative curve on an absorbing box.
    Drive(Common),
    /// Density scan on a torus.
    Scan(Common),
    /// Continuous-time run checked against the discrete odometer.
    Gillespie(Common),
    /// Two-stage coupling of a sparse and a dense state.
    Couple(Common),
    /// Full property suite; nonzero exit on any failure.
    Selftest(Common),
    /// Breakpoint fit of a drive NDJSON file.
    Estimate(Common),
    /// Scans and breakpoints for several initial-state families.
    Universality(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Side length of the cube.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    boundary: Option<Boundary>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `symmetric`, `drift:<bias>` or a kernel table file.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Output directory (the ARW_OUT_DIR environment variable wins).
    #[arg(long)]
    out: Option<PathBuf>,
    /// fifo, raster, wavefront or random:<seed>.
    #[arg(long)]
    scheduler: Option<String>,
    /// Toppling cap per stabilization.
    #[arg(long)]
    cap: Option<u64>,
    /// poisson, bernoulli, periodic or block-renewal.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    zeta_upper: Option<f64>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    grid: Option<String>,
    /// Also run the doubled box (scan).
    #[arg(long)]
    doubled: bool,
    /// Time horizon (gillespie).
    #[arg(long)]
    horizon: Option<f64>,
    /// Drive records to fit (estimate).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Initial configuration snapshot (gillespie, couple).
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse()).collect::<Result<_, _>>().context("bad grid")?;
        if !(v[2] > 0.0) || v[1] < v[0] {
            bail!("grid `{s}` needs start <= stop and a positive step");
        }
        return Ok(arw_core::experiments::linear_grid(v[0], v[1], v[2]));
    }
    s.split(',').map(|p| p.trim().parse::<f64>().with_context(|| format!("bad grid value `{p}`"))).collect()
}

fn build_config(kind: ExperimentKind, a: &Common) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let cfg = parse_config_in(&text, base).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            if cfg.experiment != kind {
                bail!("{} configures `{}`, not `{}`", path.display(), cfg.experiment, kind);
            }
            cfg
        }
        None => RunConfig::defaults(kind, a.dim.unwrap_or(1), a.size.unwrap_or(256)),
    };
    let dim = a.dim.unwrap_or(cfg.dim());
    if let Some(size) = a.size {
        cfg.sides = vec![size; dim];
    } else if dim != cfg.dim() {
        cfg.sides = vec![cfg.sides[0]; dim];
    }
    if let Some(b) = a.boundary {
        cfg.boundary = b;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(k) = &a.kernel {
        cfg.kernel = KernelSpec::parse(k);
    }
    cfg.kernel_table = cfg.kernel.resolve(dim, Path::new(".")).map_err(|m| anyhow::anyhow!("--kernel: {m}"))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = &a.scheduler {
        cfg.scheduler = s.parse().map_err(|m: String| anyhow::anyhow!("--scheduler: {m}"))?;
    }
    if a.cap.is_some() {
        cfg.cap = a.cap;
    }
    if let Some(f) = &a.family {
        cfg.family = config::parse_family(f, 16, 2, None).map_err(|m| anyhow::anyhow!("--family: {m}"))?;
    }
    if let Some(z) = a.zeta {
        cfg.zeta = z;
    }
    if let Some(z) = a.zeta_upper {
        cfg.zeta_upper = z;
    }
    if let Some(g) = &a.grid {
        cfg.grid = parse_grid(g)?;
    }
    cfg.doubled |= a.doubled;
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if a.input.is_some() {
        cfg.input = a.input.clone();
    }
    if a.snapshot.is_some() {
        cfg.snapshot = a.snapshot.clone();
    }
    cfg.check().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Drive(a) => (ExperimentKind::Drive, a),
        Command::Scan(a) => (ExperimentKind::Scan, a),
        Command::Gillespie(a) => (ExperimentKind::Gillespie, a),
        Command::Couple(a) => (ExperimentKind::Couple, a),
        Command::Selftest(a) => (ExperimentKind::Selftest, a),
        Command::Estimate(a) => (ExperimentKind::Estimate, a),
        Command::Universality(a) => (ExperimentKind::Universality, a),
    };
    let outcome = build_config(kind, args).and_then(|cfg| run::run(&cfg).map_err(anyhow::Error::from));
    match outcome {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", o.files.len(), o.out_dir.display());
            if o.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
