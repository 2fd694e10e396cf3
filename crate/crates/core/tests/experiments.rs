use arw_core::experiments::{
    density_scan, drive, estimate_zeta_c, fit_breakpoint, linear_grid, DriveCurve, DriveParams, ScanParams,
};
use arw_core::initial::Family;
use arw_core::rng::{CounterRng, Stream};
use arw_core::{Domain, JumpKernel, Termination};

fn gaussian(rng: &mut CounterRng) -> f64 {
    let u1 = rng.next_f64().max(f64::MIN_POSITIVE);
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn noisy_curve(c: f64, sigma: f64, replicas: usize, seed: u64) -> DriveCurve {
    let u = linear_grid(0.0, 1.2, 0.05);
    let mut rng = CounterRng::new(seed, Stream::Bootstrap, 1);
    let samples = u
        .iter()
        .map(|&x| (0..replicas).map(|_| x.min(c) + sigma * gaussian(&mut rng)).collect())
        .collect();
    DriveCurve::from_samples(u, samples)
}

#[test]
fn noisy_synthetic_curve_recovers_breakpoint() {
    for (k, c) in [0.35, 0.62, 0.9].into_iter().enumerate() {
        // a single noisy column, as in one replica
        let curve = noisy_curve(c, 0.01, 1, k as u64);
        let est = estimate_zeta_c(&curve, 200, 3).unwrap();
        assert!((est.c - c).abs() < 0.02, "true {c}, got {}", est.c);
        assert!(!est.unbounded);
    }
}

#[test]
fn estimate_ignores_replica_order() {
    let curve = noisy_curve(0.7, 0.02, 12, 8);
    let a = estimate_zeta_c(&curve, 300, 5).unwrap();
    let mut shuffled = curve.clone();
    for row in &mut shuffled.samples {
        row.reverse();
        row.rotate_left(5);
    }
    let b = estimate_zeta_c(&shuffled, 300, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn estimate_is_stable_under_grid_subsampling() {
    let curve = noisy_curve(0.7, 0.02, 12, 9);
    let full = estimate_zeta_c(&curve, 300, 5).unwrap();
    // every other point keeps 13 of 25, still spanning the plateau
    let keep: Vec<usize> = (0..curve.u.len()).step_by(2).collect();
    let sub = DriveCurve::from_samples(
        keep.iter().map(|&i| curve.u[i]).collect(),
        keep.iter().map(|&i| curve.samples[i].clone()).collect(),
    );
    let est = estimate_zeta_c(&sub, 300, 5).unwrap();
    let tol = 3.0 * full.stderr.hypot(est.stderr);
    assert!((est.c - full.c).abs() <= tol, "{} vs {} (tol {tol})", est.c, full.c);
}

#[test]
fn fit_is_exact_on_a_noiseless_kink() {
    let u = linear_grid(0.0, 1.0, 0.1);
    let y: Vec<f64> = u.iter().map(|&x| x.min(0.43)).collect();
    let (c, sse) = fit_breakpoint(&u, &y);
    assert!((c - 0.43).abs() < 1e-12 && sse < 1e-20);
}

#[test]
fn scan_odometers_grow_with_density_under_nesting() {
    let mut p = ScanParams::new(
        Domain::torus(vec![64]),
        1.0,
        JumpKernel::symmetric(1),
        vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
        12,
        21,
    );
    p.cap = Some(64 * 100_000);
    let res = density_scan(&p).unwrap();
    assert!(res.all_conserved());
    for r in 0..12 {
        let mut rows: Vec<_> = res.records.iter().filter(|x| x.replica == r).collect();
        rows.sort_by(|a, b| a.zeta.total_cmp(&b.zeta));
        for w in rows.windows(2) {
            assert!(w[0].particles <= w[1].particles);
            assert!(w[0].topplings <= w[1].topplings, "replica {r}: {} > {}", w[0].topplings, w[1].topplings);
        }
    }
}

#[test]
fn dilute_odometer_does_not_depend_on_size() {
    let run = |side: usize| {
        let p = ScanParams::new(Domain::torus(vec![side]), 1.0, JumpKernel::symmetric(1), vec![0.05], 60, 31);
        density_scan(&p).unwrap().points[0].base.clone()
    };
    let (a, b) = (run(256), run(512));
    assert_eq!(a.stabilized_fraction, 1.0);
    assert_eq!(b.stabilized_fraction, 1.0);
    let diff = a.mean_odometer.mean - b.mean_odometer.mean;
    assert!(diff.abs() <= 3.0 * a.mean_odometer.combined_stderr(&b.mean_odometer), "diff {diff}");
    assert!(a.mean_odometer.mean < 0.5);
}

#[test]
fn isolated_walkers_topple_twice_on_average() {
    // at lambda = 1 a lone walker topples Geometric(1/2) times, mean 2,
    // so sparse periodic walkers give a mean odometer near 2 zeta
    let mut p = ScanParams::new(Domain::torus(vec![512]), 1.0, JumpKernel::symmetric(1), vec![1.0 / 16.0], 50, 41);
    p.family = Family::periodic(16);
    let s = density_scan(&p).unwrap().points[0].base.clone();
    let want = 2.0 / 16.0;
    assert!(
        (s.mean_odometer.mean - want).abs() <= 3.0 * s.mean_odometer.stderr,
        "{} +- {}",
        s.mean_odometer.mean,
        s.mean_odometer.stderr
    );
}

#[test]
fn drive_is_deterministic_and_bounded() {
    let p = DriveParams::new(Domain::absorbing(vec![64]), 1.0, JumpKernel::symmetric(1), linear_grid(0.0, 1.2, 0.2), 4, 17);
    let a = drive(&p).unwrap();
    let b = drive(&p).unwrap();
    assert_eq!(a, b);
    assert!(a.bound_holds() && a.all_conserved());
    assert!(a.records.iter().all(|r| r.termination == Termination::Stable));
    for r in &a.records {
        assert_eq!(r.retained_particles + r.dissipated, r.initial_particles);
    }
}
