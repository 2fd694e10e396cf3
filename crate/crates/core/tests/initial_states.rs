use arw_core::initial::{Family, InitialStateSpec};
use arw_core::rng::child_seed;
use arw_core::Domain;

const Z_CRIT: f64 = 3.2905; // two-sided 0.001

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

fn two_sample_z(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    if se == 0.0 {
        return if ma == mb { 0.0 } else { f64::INFINITY };
    }
    (ma - mb) / se
}

/// One- and two-point statistics at site 0 versus a translate at site `t`,
/// each from independent samples.
fn check_translation(family: Family, zeta: f64, side: usize, t: usize) {
    let d = Domain::torus(vec![side]);
    let n = 6000;
    let spec = InitialStateSpec::new(family.clone(), zeta, 0);
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = spec.with_seed(child_seed(99, i)).generate(&d).unwrap();
            c.states().iter().map(|s| s.particle_count() as f64).collect()
        })
        .collect();
    let (first, second) = samples.split_at(n as usize / 2);
    let one = |s: &[Vec<f64>], x: usize| s.iter().map(|v| v[x]).collect::<Vec<_>>();
    let two = |s: &[Vec<f64>], x: usize| s.iter().map(|v| v[x] * v[(x + 1) % side]).collect::<Vec<_>>();
    let z1 = two_sample_z(&one(first, 0), &one(second, t));
    let z2 = two_sample_z(&two(first, 0), &two(second, t));
    assert!(z1.abs() < Z_CRIT, "{family}: one-point z = {z1}");
    assert!(z2.abs() < Z_CRIT, "{family}: two-point z = {z2}");
}

#[test]
fn families_are_translation_invariant_in_law() {
    check_translation(Family::Poisson, 0.7, 32, 13);
    check_translation(Family::Bernoulli, 0.3, 32, 5);
    check_translation(Family::periodic(4), 0.5, 32, 3);
    check_translation(Family::block_renewal(), 0.6, 30, 7);
}

#[test]
fn densities_match_targets() {
    let d = Domain::torus(vec![10_000]);
    for family in [Family::Poisson, Family::Bernoulli, Family::block_renewal()] {
        let c = InitialStateSpec::new(family.clone(), 0.7, 3).generate(&d).unwrap();
        // generous envelope; block renewal has correlated blocks of 4 sites
        assert!((c.density() - 0.7).abs() < 0.06, "{family}: {}", c.density());
    }
    let c = InitialStateSpec::new(Family::periodic(8), 0.625, 3).generate(&d).unwrap();
    assert_eq!(c.particles(), 6250);
}

#[test]
fn periodic_with_explicit_pattern_is_a_translate() {
    let d = Domain::torus(vec![12]);
    let fam = Family::PeriodicPattern { period: 3, pattern: Some(vec![2, 0, 1]) };
    let c = InitialStateSpec::new(fam, 1.0, 8).generate(&d).unwrap();
    let counts: Vec<u32> = c.states().iter().map(|s| s.particle_count()).collect();
    let start = (0..3).find(|&s| counts[s] == 2).unwrap();
    for x in 0..12 {
        assert_eq!(counts[x], [2, 0, 1][(x + 3 - start) % 3]);
    }
}
