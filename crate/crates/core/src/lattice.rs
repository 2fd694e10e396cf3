//! Site states, jump kernels and finite domains.
//!
//! A site holds an element of `{0, s, 1, 2, ...}`: empty, one sleeping
//! particle, or `n >= 1` active particles. Sites of a [`Domain`] are addressed
//! by their raster index, with the first coordinate varying fastest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Content of one site. The derived order is `Empty < Sleeping < Active(1) < Active(2) < ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum SiteState {
    #[default]
    Empty,
    Sleeping,
    /// Invariant: the count is at least one. Use [`SiteState::active`] to build.
    Active(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("site is empty: toppling it is not acceptable")]
pub struct NotAcceptable;

impl SiteState {
    /// `n` active particles; zero maps to `Empty`.
    pub fn active(n: u32) -> Self {
        if n == 0 {
            SiteState::Empty
        } else {
            SiteState::Active(n)
        }
    }

    /// Number of particles, counting a sleeping one.
    #[inline]
    pub fn particle_count(self) -> u32 {
        match self {
            SiteState::Empty => 0,
            SiteState::Sleeping => 1,
            SiteState::Active(n) => n,
        }
    }

    /// Number of active particles; a sleeping particle counts zero.
    #[inline]
    pub fn active_count(self) -> u32 {
        match self {
            SiteState::Active(n) => n,
            _ => 0,
        }
    }

    /// One particle arrives. An arrival wakes a sleeping particle (`s + 1 = 2`).
    #[inline]
    pub fn increment(self) -> Self {
        match self {
            SiteState::Empty => SiteState::Active(1),
            SiteState::Sleeping => SiteState::Active(2),
            SiteState::Active(n) => SiteState::Active(n + 1),
        }
    }

    /// One particle leaves (`s - 1 = 0`).
    #[inline]
    pub fn decrement(self) -> Result<Self, NotAcceptable> {
        match self {
            SiteState::Empty => Err(NotAcceptable),
            SiteState::Sleeping | SiteState::Active(1) => Ok(SiteState::Empty),
            SiteState::Active(n) => Ok(SiteState::Active(n - 1)),
        }
    }

    /// Effect of a sleep instruction: a lone active particle falls asleep,
    /// anything crowded is untouched, and `s * s = s`.
    #[inline]
    pub fn sleep(self) -> Result<Self, NotAcceptable> {
        match self {
            SiteState::Empty => Err(NotAcceptable),
            SiteState::Sleeping | SiteState::Active(1) => Ok(SiteState::Sleeping),
            s @ SiteState::Active(_) => Ok(s),
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        matches!(self, SiteState::Active(_))
    }

    /// Stable sites are empty or hold one sleeping particle.
    #[inline]
    pub fn is_stable(self) -> bool {
        !self.is_active()
    }
}

impl fmt::Display for SiteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteState::Empty => f.write_str("0"),
            SiteState::Sleeping => f.write_str("s"),
            SiteState::Active(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SiteState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "s" => Ok(SiteState::Sleeping),
            _ => s
                .parse::<u32>()
                .map(SiteState::active)
                .map_err(|_| format!("invalid site token `{s}`")),
        }
    }
}

/// Why a kernel was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel has no entries")]
    Empty,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("entry {index}: offset has {got} components, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("entry {index}: offset is the zero vector")]
    ZeroOffset { index: usize },
    #[error("entry {index}: probability {p} is not strictly positive")]
    NonPositive { index: usize, p: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    SumNotOne { sum: f64 },
    #[error("support generates a sublattice of index {index} (0 = lower rank)")]
    Sublattice { index: u128 },
}

pub const KERNEL_SUM_TOLERANCE: f64 = 1e-12;

/// Finite-support jump distribution `p(.)` on `Z^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    dim: usize,
    entries: Vec<(Vec<i64>, f64)>,
}

impl JumpKernel {
    /// Unvalidated table. Entry order is significant for reproducibility.
    pub fn new(dim: usize, entries: Vec<(Vec<i64>, f64)>) -> Self {
        Self { dim, entries }
    }

    /// Table that passed [`JumpKernel::validate`].
    pub fn checked(dim: usize, entries: Vec<(Vec<i64>, f64)>) -> Result<Self, KernelError> {
        let k = Self::new(dim, entries);
        k.validate()?;
        Ok(k)
    }

    /// Nearest-neighbour symmetric walk: `+e_1, -e_1, +e_2, -e_2, ...`.
    pub fn symmetric(dim: usize) -> Self {
        let p = 1.0 / (2 * dim) as f64;
        let mut entries = Vec::with_capacity(2 * dim);
        for axis in 0..dim {
            for sign in [1i64, -1] {
                let mut o = vec![0; dim];
                o[axis] = sign;
                entries.push((o, p));
            }
        }
        Self { dim, entries }
    }

    /// Nearest-neighbour walk with drift `bias` in `[-1, 1]` along the first axis.
    pub fn drift(dim: usize, bias: f64) -> Self {
        let mut k = Self::symmetric(dim);
        let base = 1.0 / (2 * dim) as f64;
        k.entries[0].1 = base * (1.0 + bias);
        k.entries[1].1 = base * (1.0 - bias);
        k
    }

    /// Parses a kernel table: one entry per line, `d` integer offset components
    /// followed by the probability. `#` starts a comment.
    pub fn parse_table(dim: usize, text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != dim + 1 {
                return Err(format!(
                    "line {}: expected {} offset components and a probability",
                    ln + 1,
                    dim
                ));
            }
            let offset = toks[..dim]
                .iter()
                .map(|t| t.parse::<i64>().map_err(|e| format!("line {}: {e}", ln + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            let p = toks[dim].parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 1))?;
            entries.push((offset, p));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Short identifier for records: `symmetric-<d>d` or the literal table.
    pub fn label(&self) -> String {
        if *self == Self::symmetric(self.dim) {
            return format!("symmetric-{}d", self.dim);
        }
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(o, p)| {
                let o: Vec<String> = o.iter().map(|c| c.to_string()).collect();
                format!("{}:{}", o.join(","), p)
            })
            .collect();
        format!("table[{}]", parts.join(";"))
    }

    pub fn entries(&self) -> &[(Vec<i64>, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn offset(&self, k: usize) -> &[i64] {
        &self.entries[k].0
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.entries[k].1
    }

    /// Same table with every probability multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|(o, p)| (o.clone(), p * factor)).collect(),
        }
    }

    /// Same table with probabilities divided by their sum.
    pub fn renormalized(&self) -> Self {
        let sum: f64 = self.entries.iter().map(|e| e.1).sum();
        self.rescaled(1.0 / sum)
    }

    /// Accepts iff the table is a probability distribution on nonzero
    /// offsets whose support generates all of `Z^d` as a group.
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        if self.entries.is_empty() {
            return Err(KernelError::Empty);
        }
        for (index, (o, p)) in self.entries.iter().enumerate() {
            if o.len() != self.dim {
                return Err(KernelError::DimensionMismatch { index, expected: self.dim, got: o.len() });
            }
            if o.iter().all(|&c| c == 0) {
                return Err(KernelError::ZeroOffset { index });
            }
            if !(*p > 0.0) || !p.is_finite() {
                return Err(KernelError::NonPositive { index, p: *p });
            }
        }
        let sum: f64 = self.entries.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOLERANCE {
            return Err(KernelError::SumNotOne { sum });
        }
        let gens: Vec<Vec<i64>> = self.entries.iter().map(|e| e.0.clone()).collect();
        match lattice_index(self.dim, &gens) {
            1 => Ok(()),
            index => Err(KernelError::Sublattice { index }),
        }
    }
}

/// Index of the subgroup of `Z^d` generated by `gens`; 0 when it has lower rank.
///
/// Integer row reduction to echelon form: the index is the product of the
/// absolute pivots.
pub fn lattice_index(dim: usize, gens: &[Vec<i64>]) -> u128 {
    let mut rows: Vec<Vec<i128>> = gens
        .iter()
        .map(|g| g.iter().map(|&c| c as i128).collect())
        .collect();
    let mut index: u128 = 1;
    let mut top = 0;
    for col in 0..dim {
        loop {
            // smallest nonzero entry at or below `top` becomes the pivot
            let pivot = (top..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].unsigned_abs());
            let Some(p) = pivot else { return 0 };
            rows.swap(top, p);
            let mut done = true;
            for r in top + 1..rows.len() {
                if rows[r][col] != 0 {
                    let q = rows[r][col] / rows[top][col];
                    for c in col..dim {
                        rows[r][c] -= q * rows[top][c];
                    }
                    if rows[r][col] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        index = index.saturating_mul(rows[top][col].unsigned_abs());
        top += 1;
    }
    index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Torus,
    Absorbing,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Torus => "torus",
            Boundary::Absorbing => "absorbing",
        })
    }
}

impl FromStr for Boundary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "torus" => Ok(Boundary::Torus),
            "absorbing" => Ok(Boundary::Absorbing),
            _ => Err(format!("unknown boundary `{s}` (expected torus or absorbing)")),
        }
    }
}

/// Where a jump lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    InDomain(usize),
    Exited,
}

/// Finite box `[0, L_1) x ... x [0, L_d)` with torus or absorbing boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    sides: Vec<usize>,
    boundary: Boundary,
}

impl Domain {
    pub fn new(sides: Vec<usize>, boundary: Boundary) -> Self {
        assert!(!sides.is_empty(), "domain needs at least one axis");
        assert!(sides.iter().all(|&l| l > 0), "side lengths must be positive");
        Self { sides, boundary }
    }

    pub fn torus(sides: Vec<usize>) -> Self {
        Self::new(sides, Boundary::Torus)
    }

    pub fn absorbing(sides: Vec<usize>) -> Self {
        Self::new(sides, Boundary::Absorbing)
    }

    /// `dim` axes of equal side `side`.
    pub fn cube(dim: usize, side: usize, boundary: Boundary) -> Self {
        Self::new(vec![side; dim], boundary)
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same sides, other boundary.
    pub fn with_boundary(&self, boundary: Boundary) -> Self {
        Self { sides: self.sides.clone(), boundary }
    }

    /// Every side multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        Self { sides: self.sides.iter().map(|l| l * factor).collect(), boundary: self.boundary }
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        self.sides
            .iter()
            .map(|&l| {
                let c = rest % l;
                rest /= l;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.sides)
            .rev()
            .fold(0, |acc, (&c, &l)| acc * l + c)
    }

    pub fn resolve_jump(&self, site: usize, offset: &[i64]) -> Target {
        debug_assert!(site < self.len());
        let mut rest = site;
        let mut stride = 1usize;
        let mut target = 0usize;
        for (&l, &o) in self.sides.iter().zip(offset) {
            let c = (rest % l) as i64;
            rest /= l;
            let t = c + o;
            let t = match self.boundary {
                Boundary::Torus => t.rem_euclid(l as i64),
                Boundary::Absorbing => {
                    if t < 0 || t >= l as i64 {
                        return Target::Exited;
                    }
                    t
                }
            };
            target += t as usize * stride;
            stride *= l;
        }
        Target::InDomain(target)
    }

    /// Sites of the sub-box `[lo_i, hi_i)`, in raster order.
    pub fn sub_box(&self, lo: &[usize], hi: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for site in 0..self.len() {
            let c = self.coords(site);
            if c.iter().zip(lo).zip(hi).all(|((&x, &a), &b)| a <= x && x < b) {
                out.push(site);
            }
        }
        out
    }

    fn header(&self) -> String {
        let sides: Vec<String> = self.sides.iter().map(|l| l.to_string()).collect();
        format!("arw d={} L={} boundary={}", self.dim(), sides.join(","), self.boundary)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sides: Vec<String> = self.sides.iter().map(|l| l.to_string()).collect();
        write!(f, "{}:{}", self.boundary, sides.join("x"))
    }
}

/// Precomputed jump targets for every `(site, kernel entry)` pair.
#[derive(Debug, Clone)]
pub struct JumpTable {
    width: usize,
    targets: Vec<u32>,
}

impl JumpTable {
    const EXIT: u32 = u32::MAX;

    pub fn new(domain: &Domain, kernel: &JumpKernel) -> Self {
        assert!(domain.len() < u32::MAX as usize);
        let width = kernel.len();
        let mut targets = Vec::with_capacity(domain.len() * width);
        for site in 0..domain.len() {
            for (o, _) in kernel.entries() {
                targets.push(match domain.resolve_jump(site, o) {
                    Target::InDomain(t) => t as u32,
                    Target::Exited => Self::EXIT,
                });
            }
        }
        Self { width, targets }
    }

    #[inline(always)]
    pub fn target(&self, site: usize, entry: usize) -> Target {
        match self.targets[site * self.width + entry] {
            Self::EXIT => Target::Exited,
            t => Target::InDomain(t as usize),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("missing or malformed header: {0}")]
    Header(String),
    #[error("site {site}: {msg}")]
    Token { site: usize, msg: String },
    #[error("expected {expected} site tokens, found {found}")]
    Count { expected: usize, found: usize },
}

/// Site states over a domain, with cached particle totals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    domain: Domain,
    states: Vec<SiteState>,
    particles: u64,
    active: u64,
}

impl Configuration {
    pub fn empty(domain: Domain) -> Self {
        let n = domain.len();
        Self { domain, states: vec![SiteState::Empty; n], particles: 0, active: 0 }
    }

    pub fn from_states(domain: Domain, states: Vec<SiteState>) -> Self {
        assert_eq!(domain.len(), states.len(), "state vector does not match domain");
        let particles = states.iter().map(|s| s.particle_count() as u64).sum();
        let active = states.iter().map(|s| s.active_count() as u64).sum();
        Self { domain, states, particles, active }
    }

    /// Active configuration from particle counts.
    pub fn from_counts(domain: Domain, counts: &[u32]) -> Self {
        Self::from_states(domain, counts.iter().map(|&n| SiteState::active(n)).collect())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn states(&self) -> &[SiteState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn get(&self, site: usize) -> SiteState {
        self.states[site]
    }

    /// Total particles, sleeping ones included.
    pub fn particles(&self) -> u64 {
        self.particles
    }

    /// Total active particles.
    pub fn active_particles(&self) -> u64 {
        self.active
    }

    pub fn density(&self) -> f64 {
        self.particles as f64 / self.states.len() as f64
    }

    /// Recomputes both totals from scratch.
    pub fn recount(&self) -> (u64, u64) {
        (
            self.states.iter().map(|s| s.particle_count() as u64).sum(),
            self.states.iter().map(|s| s.active_count() as u64).sum(),
        )
    }

    pub fn totals_consistent(&self) -> bool {
        self.recount() == (self.particles, self.active)
    }

    #[inline]
    pub fn set(&mut self, site: usize, state: SiteState) {
        let old = std::mem::replace(&mut self.states[site], state);
        self.particles = self.particles - old.particle_count() as u64 + state.particle_count() as u64;
        self.active = self.active - old.active_count() as u64 + state.active_count() as u64;
    }

    /// Adds one particle at `site`.
    #[inline]
    pub fn increment(&mut self, site: usize) {
        let old = self.states[site];
        self.states[site] = old.increment();
        self.particles += 1;
        // a sleeper wakes along with the arrival
        self.active += if old == SiteState::Sleeping { 2 } else { 1 };
    }

    #[inline]
    pub fn decrement(&mut self, site: usize) -> Result<(), NotAcceptable> {
        let old = self.states[site];
        let new = old.decrement()?;
        self.states[site] = new;
        self.particles -= 1;
        self.active -= (old.active_count() - new.active_count()) as u64;
        Ok(())
    }

    #[inline]
    pub fn sleep(&mut self, site: usize) -> Result<bool, NotAcceptable> {
        let old = self.states[site];
        let new = old.sleep()?;
        if old != new {
            self.states[site] = new;
            self.active -= 1;
            return Ok(true);
        }
        Ok(false)
    }

    /// Pointwise comparison in the order `0 < s < 1 < 2 < ...`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.states.len() == other.states.len()
            && self.states.iter().zip(&other.states).all(|(a, b)| a <= b)
    }

    /// Text snapshot: a header line then one token per site in raster order,
    /// one row of the first axis per line.
    pub fn to_snapshot(&self) -> String {
        let mut out = self.domain.header();
        out.push('\n');
        for row in self.states.chunks(self.domain.sides()[0]) {
            let toks: Vec<String> = row.iter().map(|s| s.to_string()).collect();
            out.push_str(&toks.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, SnapshotError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SnapshotError::Header("empty input".into()))?;
        let domain = parse_header(header)?;
        let mut states = Vec::with_capacity(domain.len());
        for tok in lines.flat_map(str::split_whitespace) {
            let site = states.len();
            let s = tok.parse::<SiteState>().map_err(|msg| SnapshotError::Token { site, msg })?;
            states.push(s);
        }
        if states.len() != domain.len() {
            return Err(SnapshotError::Count { expected: domain.len(), found: states.len() });
        }
        Ok(Self::from_states(domain, states))
    }
}

fn parse_header(line: &str) -> Result<Domain, SnapshotError> {
    let bad = |m: &str| SnapshotError::Header(m.to_string());
    let mut toks = line.split_whitespace();
    if toks.next() != Some("arw") {
        return Err(bad("header must start with `arw`"));
    }
    let (mut d, mut sides, mut boundary) = (None, None, None);
    for tok in toks {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(tok))?;
        match k {
            "d" => d = Some(v.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
            "L" => {
                sides = Some(
                    v.split(',')
                        .map(|s| s.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| bad(&e.to_string()))?,
                )
            }
            "boundary" => boundary = Some(v.parse::<Boundary>().map_err(|e| bad(&e))?),
            _ => return Err(bad(&format!("unknown header field `{k}`"))),
        }
    }
    let (d, sides, boundary) = match (d, sides, boundary) {
        (Some(d), Some(s), Some(b)) => (d, s, b),
        _ => return Err(bad("header needs d=, L= and boundary=")),
    };
    if sides.len() != d || sides.contains(&0) {
        return Err(bad("L must list d positive side lengths"));
    }
    Ok(Domain::new(sides, boundary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SiteState::*;

    #[test]
    fn particle_and_active_counts() {
        assert_eq!(Sleeping.particle_count(), 1);
        assert_eq!(Empty.particle_count(), 0);
        assert_eq!(Active(3).particle_count(), 3);
        assert_eq!(Sleeping.active_count(), 0);
        assert_eq!(Empty.active_count(), 0);
        assert_eq!(Active(2).active_count(), 2);
    }

    #[test]
    fn arithmetic_of_sleeping_sites() {
        assert_eq!(Sleeping.increment(), Active(2));
        assert_eq!(Empty.increment(), Active(1));
        assert_eq!(Active(4).increment(), Active(5));

        assert_eq!(Sleeping.decrement(), Ok(Empty));
        assert_eq!(Active(1).decrement(), Ok(Empty));
        assert_eq!(Active(3).decrement(), Ok(Active(2)));
        assert_eq!(Empty.decrement(), Err(NotAcceptable));

        assert_eq!(Active(1).sleep(), Ok(Sleeping));
        assert_eq!(Active(3).sleep(), Ok(Active(3)));
        assert_eq!(Sleeping.sleep(), Ok(Sleeping));
        assert_eq!(Empty.sleep(), Err(NotAcceptable));
    }

    #[test]
    fn order_matches_extended_naturals() {
        assert!(Empty < Sleeping);
        assert!(Sleeping < Active(1));
        assert!(Active(1) < Active(2));
        assert_eq!(SiteState::active(0), Empty);
    }

    #[test]
    fn kernel_validation_examples() {
        assert_eq!(JumpKernel::new(1, vec![(vec![1], 0.5), (vec![-1], 0.5)]).validate(), Ok(()));
        assert_eq!(
            JumpKernel::new(1, vec![(vec![2], 0.5), (vec![-2], 0.5)]).validate(),
            Err(KernelError::Sublattice { index: 2 })
        );
        assert_eq!(JumpKernel::symmetric(2).validate(), Ok(()));
        assert_eq!(JumpKernel::symmetric(3).validate(), Ok(()));
        assert_eq!(JumpKernel::drift(1, 1.0).validate().unwrap_err(), KernelError::NonPositive { index: 1, p: 0.0 });
        assert_eq!(JumpKernel::drift(2, 0.3).validate(), Ok(()));
    }

    #[test]
    fn kernel_validation_diagnostics() {
        assert_eq!(JumpKernel::new(1, vec![]).validate(), Err(KernelError::Empty));
        assert_eq!(
            JumpKernel::new(1, vec![(vec![0], 0.5), (vec![1], 0.5)]).validate(),
            Err(KernelError::ZeroOffset { index: 0 })
        );
        assert!(matches!(
            JumpKernel::new(1, vec![(vec![1], 0.5), (vec![-1], 0.6)]).validate(),
            Err(KernelError::SumNotOne { .. })
        ));
        assert_eq!(
            JumpKernel::new(2, vec![(vec![1, 0], 0.5), (vec![-1, 0], 0.5)]).validate(),
            Err(KernelError::Sublattice { index: 0 })
        );
        assert!(matches!(
            JumpKernel::new(2, vec![(vec![1], 1.0)]).validate(),
            Err(KernelError::DimensionMismatch { .. })
        ));
        // (1,1) and (1,-1) generate the checkerboard lattice of index 2
        assert_eq!(
            JumpKernel::new(2, vec![(vec![1, 1], 0.5), (vec![1, -1], 0.5)]).validate(),
            Err(KernelError::Sublattice { index: 2 })
        );
        // steps of 2 and 3 generate Z
        assert_eq!(JumpKernel::new(1, vec![(vec![2], 0.5), (vec![-3], 0.5)]).validate(), Ok(()));
    }

    #[test]
    fn lattice_index_brute_force() {
        // count residues of Z^2 / <gens> by enumerating small combinations
        fn brute(gens: &[[i64; 2]]) -> usize {
            let m = 12i64;
            let mut reach = std::collections::HashSet::new();
            let mut frontier = vec![[0i64, 0]];
            reach.insert([0i64, 0]);
            while let Some(p) = frontier.pop() {
                for g in gens {
                    for s in [1, -1] {
                        let q = [(p[0] + s * g[0]).rem_euclid(m), (p[1] + s * g[1]).rem_euclid(m)];
                        if reach.insert(q) {
                            frontier.push(q);
                        }
                    }
                }
            }
            (m * m) as usize / reach.len()
        }
        let cases: &[&[[i64; 2]]] = &[
            &[[1, 0], [0, 1]],
            &[[2, 0], [0, 1]],
            &[[1, 1], [1, -1]],
            &[[2, 1], [1, 2]],
            &[[3, 0], [0, 2], [1, 1]],
            &[[2, 2], [4, 0], [0, 6]],
        ];
        for gens in cases {
            let v: Vec<Vec<i64>> = gens.iter().map(|g| g.to_vec()).collect();
            assert_eq!(lattice_index(2, &v) as usize, brute(gens), "{gens:?}");
        }
    }

    #[test]
    fn resolve_jump_examples() {
        let t = Domain::torus(vec![4]);
        let a = Domain::absorbing(vec![4]);
        assert_eq!(t.resolve_jump(3, &[1]), Target::InDomain(0));
        assert_eq!(a.resolve_jump(3, &[1]), Target::Exited);
        assert_eq!(a.resolve_jump(1, &[1]), Target::InDomain(2));
        assert_eq!(t.resolve_jump(0, &[-1]), Target::InDomain(3));
        let t2 = Domain::torus(vec![3, 5]);
        assert_eq!(t2.resolve_jump(t2.index(&[2, 4]), &[1, 1]), Target::InDomain(0));
        assert_eq!(t2.coords(t2.index(&[1, 3])), vec![1, 3]);
    }

    #[test]
    fn snapshot_round_trip() {
        let d = Domain::absorbing(vec![3, 2]);
        let c = Configuration::from_states(d, vec![Empty, Sleeping, Active(3), Active(1), Empty, Sleeping]);
        let text = c.to_snapshot();
        assert_eq!(text, "arw d=2 L=3,2 boundary=absorbing\n0 s 3\n1 0 s\n");
        assert_eq!(Configuration::from_snapshot(&text).unwrap(), c);
        assert!(Configuration::from_snapshot("arw d=1 L=3 boundary=torus\n0 1").is_err());
        assert!(Configuration::from_snapshot("arw d=1 L=2 boundary=torus\n0 x").is_err());
        assert!(Configuration::from_snapshot("sandpile d=1 L=1 boundary=torus\n0").is_err());
    }

    #[test]
    fn cached_totals_follow_mutations() {
        let mut c = Configuration::from_counts(Domain::torus(vec![4]), &[2, 0, 1, 0]);
        c.sleep(2).unwrap();
        assert_eq!((c.particles(), c.active_particles()), (3, 2));
        c.increment(2);
        assert_eq!(c.get(2), Active(2));
        c.decrement(0).unwrap();
        c.set(1, Sleeping);
        assert!(c.totals_consistent());
        assert_eq!(c.particles(), 4);
        assert!(c.decrement(3).is_err());
    }

    fn state() -> impl Strategy<Value = SiteState> {
        prop_oneof![Just(Empty), Just(Sleeping), (1u32..50).prop_map(Active)]
    }

    proptest! {
        #[test]
        fn active_never_exceeds_particles(s in state()) {
            prop_assert!(s.active_count() <= s.particle_count());
            prop_assert_eq!(s.active_count() == s.particle_count(), s != Sleeping);
        }

        #[test]
        fn decrement_undoes_increment_off_sleeping(s in state()) {
            let back = s.increment().decrement().unwrap();
            if s == Sleeping {
                prop_assert_eq!(back, Active(1));
            } else {
                prop_assert_eq!(back, s);
            }
        }

        #[test]
        fn validation_is_scale_free(
            raw in proptest::collection::vec((-3i64..=3, 0.01f64..1.0), 1..6),
            factor in 0.001f64..1000.0,
        ) {
            let k = JumpKernel::new(1, raw.iter().map(|&(o, p)| (vec![o], p)).collect()).renormalized();
            let k2 = k.rescaled(factor).renormalized();
            prop_assert_eq!(k.validate().is_ok(), k2.validate().is_ok());
        }

        #[test]
        fn snapshot_is_identity(states in proptest::collection::vec(state(), 12)) {
            let c = Configuration::from_states(Domain::torus(vec![4, 3]), states);
            prop_assert_eq!(Configuration::from_snapshot(&c.to_snapshot()).unwrap(), c);
        }
    }
}
