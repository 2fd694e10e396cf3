use arw_core::{Code, Domain, InstructionField, JumpKernel};

// upper 0.001 quantiles of chi-square, indexed by degrees of freedom
fn chi2_crit(df: usize) -> f64 {
    match df {
        1 => 10.8276,
        2 => 13.8155,
        3 => 16.2662,
        4 => 18.4668,
        5 => 20.5150,
        8 => 26.1245,
        _ => panic!("no table entry for df={df}"),
    }
}

fn chi2(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

fn cell(code: Code) -> usize {
    match code {
        Code::Sleep => 0,
        Code::Jump(k) => k + 1,
    }
}

/// Tallies codes over `sites x depths`.
fn tally(field: &InstructionField, cells: usize, sites: usize, depths: u64) -> Vec<u64> {
    let mut counts = vec![0u64; cells];
    for x in 0..sites {
        for j in 1..=depths {
            counts[cell(field.code(x, j))] += 1;
        }
    }
    counts
}

fn target(lambda: f64, kernel: &JumpKernel) -> Vec<f64> {
    let mut p = vec![lambda / (1.0 + lambda)];
    p.extend(kernel.entries().iter().map(|(_, q)| q / (1.0 + lambda)));
    p
}

#[test]
fn goodness_of_fit_1d_symmetric() {
    let d = Domain::torus(vec![64]);
    let k = JumpKernel::symmetric(1);
    let f = InstructionField::new(11, 1.0, k.clone(), &d).unwrap();
    // smallest cell expects 1e5 draws
    let counts = tally(&f, 3, 64, 6250);
    let stat = chi2(&counts, &target(1.0, &k));
    assert!(stat < chi2_crit(2), "chi2 = {stat}, counts {counts:?}");
}

#[test]
fn goodness_of_fit_2d_symmetric() {
    let d = Domain::torus(vec![8, 8]);
    let k = JumpKernel::symmetric(2);
    let f = InstructionField::new(12, 1.0, k.clone(), &d).unwrap();
    let counts = tally(&f, 5, 64, 12_500);
    let stat = chi2(&counts, &target(1.0, &k));
    assert!(stat < chi2_crit(4), "chi2 = {stat}, counts {counts:?}");
}

#[test]
fn goodness_of_fit_drift_and_small_lambda() {
    let d = Domain::torus(vec![32]);
    let k = JumpKernel::drift(1, 0.5);
    let lambda = 0.25;
    let f = InstructionField::new(13, lambda, k.clone(), &d).unwrap();
    // sleep has probability 0.2, the smallest cell
    let counts = tally(&f, 3, 32, 16_000);
    let stat = chi2(&counts, &target(lambda, &k));
    assert!(stat < chi2_crit(2), "chi2 = {stat}, counts {counts:?}");
}

#[test]
fn goodness_of_fit_custom_table() {
    let d = Domain::torus(vec![16]);
    let k = JumpKernel::parse_table(1, "1 0.5\n-1 0.3\n2 0.2\n").unwrap();
    let f = InstructionField::new(14, 3.0, k.clone(), &d).unwrap();
    let counts = tally(&f, 4, 16, 40_000);
    let stat = chi2(&counts, &target(3.0, &k));
    assert!(stat < chi2_crit(3), "chi2 = {stat}, counts {counts:?}");
}

#[test]
fn codes_are_homogeneous_across_sites() {
    // contingency of 5 sites by 3 codes, df = 8
    let d = Domain::torus(vec![100]);
    let f = InstructionField::new(15, 1.0, JumpKernel::symmetric(1), &d).unwrap();
    let sites = [0usize, 1, 37, 50, 99];
    let rows: Vec<Vec<u64>> = sites
        .iter()
        .map(|&x| {
            let mut c = vec![0u64; 3];
            for j in 1..=40_000 {
                c[cell(f.code(x, j))] += 1;
            }
            c
        })
        .collect();
    let total: u64 = rows.iter().flatten().sum();
    let col: Vec<u64> = (0..3).map(|c| rows.iter().map(|r| r[c]).sum()).collect();
    let mut stat = 0.0;
    for r in &rows {
        let rs: u64 = r.iter().sum();
        for c in 0..3 {
            let e = rs as f64 * col[c] as f64 / total as f64;
            stat += (r[c] as f64 - e).powi(2) / e;
        }
    }
    assert!(stat < chi2_crit(8), "chi2 = {stat}");
}

#[test]
fn successive_depths_are_uncorrelated() {
    // pairs (code_j, code_{j+1}) at one site, 3x3 independence test, df = 4
    let d = Domain::torus(vec![4]);
    let f = InstructionField::new(16, 1.0, JumpKernel::symmetric(1), &d).unwrap();
    let mut m = [[0u64; 3]; 3];
    let mut prev = cell(f.code(2, 1));
    for j in 2..=200_001u64 {
        let c = cell(f.code(2, j));
        m[prev][c] += 1;
        prev = c;
    }
    let total: u64 = m.iter().flatten().sum();
    let rows: Vec<u64> = m.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..3).map(|c| m.iter().map(|r| r[c]).sum()).collect();
    let mut stat = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let e = rows[a] as f64 * cols[b] as f64 / total as f64;
            stat += (m[a][b] as f64 - e).powi(2) / e;
        }
    }
    assert!(stat < chi2_crit(4), "chi2 = {stat}");
}
