//! Initial states with a prescribed density.
//!
//! All families produce active configurations (no sleeping particles). The
//! randomness of a family comes from the `InitialState` stream of its seed,
//! so initial states are independent of the instruction field.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Configuration, Domain};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// i.i.d. Poisson occupation numbers.
    Poisson,
    /// i.i.d. zero-or-one occupation.
    Bernoulli,
    /// A tile of side `period` on every axis, translated uniformly at random.
    /// With `pattern: None` the tile spreads `round(zeta * period^d)` particles
    /// evenly over its sites.
    PeriodicPattern { period: usize, pattern: Option<Vec<u32>> },
    /// Blocks of `2 * half` sites along the raster order, each either dense
    /// (`half` loaded sites then `half` empty ones) or empty, chosen i.i.d.
    BlockRenewal { half: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::PeriodicPattern { .. } => "periodic",
            Family::BlockRenewal { .. } => "block-renewal",
        }
    }

    pub fn periodic(period: usize) -> Self {
        Family::PeriodicPattern { period, pattern: None }
    }

    pub fn block_renewal() -> Self {
        Family::BlockRenewal { half: 2 }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    #[serde(flatten)]
    pub family: Family,
    pub zeta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitialError {
    #[error("density must be finite and non-negative, got {0}")]
    Density(f64),
    #[error("bernoulli density must not exceed 1, got {0}")]
    BernoulliDensity(f64),
    #[error("period {period} does not divide side length {side}")]
    Period { period: usize, side: usize },
    #[error("pattern has {got} entries, a tile of period {period} in dimension {dim} needs {expected}")]
    PatternLength { period: usize, dim: usize, expected: usize, got: usize },
    #[error("period and block half-length must be positive")]
    ZeroLength,
}

impl InitialStateSpec {
    pub fn new(family: Family, zeta: f64, seed: u64) -> Self {
        Self { family, zeta, seed }
    }

    pub fn poisson(zeta: f64, seed: u64) -> Self {
        Self::new(Family::Poisson, zeta, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_zeta(&self, zeta: f64) -> Self {
        Self { zeta, ..self.clone() }
    }

    pub fn check(&self, domain: &Domain) -> Result<(), InitialError> {
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(InitialError::Density(self.zeta));
        }
        match &self.family {
            Family::Bernoulli if self.zeta > 1.0 => Err(InitialError::BernoulliDensity(self.zeta)),
            Family::PeriodicPattern { period, pattern } => {
                if *period == 0 {
                    return Err(InitialError::ZeroLength);
                }
                if let Some(&side) = domain.sides().iter().find(|&&l| l % period != 0) {
                    return Err(InitialError::Period { period: *period, side });
                }
                let expected = period.pow(domain.dim() as u32);
                match pattern {
                    Some(p) if p.len() != expected => Err(InitialError::PatternLength {
                        period: *period,
                        dim: domain.dim(),
                        expected,
                        got: p.len(),
                    }),
                    _ => Ok(()),
                }
            }
            Family::BlockRenewal { half: 0 } => Err(InitialError::ZeroLength),
            _ => Ok(()),
        }
    }

    /// Draws a configuration on `domain`.
    pub fn generate(&self, domain: &Domain) -> Result<Configuration, InitialError> {
        self.check(domain)?;
        let key = rng::stream_key(self.seed, Stream::InitialState);
        let n = domain.len();
        let counts: Vec<u32> = match &self.family {
            Family::Poisson => (0..n)
                .map(|x| poisson_inverse(self.zeta, rng::unit_f64(rng::hash2(key, x as u64, 0))))
                .collect(),
            Family::Bernoulli => (0..n)
                .map(|x| (rng::unit_f64(rng::hash2(key, x as u64, 0)) < self.zeta) as u32)
                .collect(),
            Family::PeriodicPattern { period, pattern } => {
                let tile = match pattern {
                    Some(p) => p.clone(),
                    None => even_tile(self.zeta, period.pow(domain.dim() as u32)),
                };
                let shift: Vec<usize> = (0..domain.dim())
                    .map(|axis| rng::below(rng::hash2(key, axis as u64, 1), *period as u64) as usize)
                    .collect();
                let tile_domain = Domain::torus(vec![*period; domain.dim()]);
                (0..n)
                    .map(|x| {
                        let c: Vec<usize> = domain
                            .coords(x)
                            .iter()
                            .zip(&shift)
                            .map(|(&c, &s)| (c + s) % period)
                            .collect();
                        tile[tile_domain.index(&c)]
                    })
                    .collect()
            }
            Family::BlockRenewal { half } => block_renewal(self.zeta, *half, n, key),
        };
        Ok(Configuration::from_counts(domain.clone(), &counts))
    }
}

/// Smallest `k` with `P(Poisson(mean) <= k) > u`. Monotone in `mean` for fixed `u`.
pub fn poisson_inverse(mean: f64, u: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while cdf <= u {
        k += 1;
        p *= mean / k as f64;
        let next = cdf + p;
        if next == cdf && k as f64 > mean {
            break; // cdf saturated below u in floating point
        }
        cdf = next;
    }
    k
}

/// `round(zeta * len)` particles spread evenly over `len` sites.
fn even_tile(zeta: f64, len: usize) -> Vec<u32> {
    let total = (zeta * len as f64).round() as u64;
    let len64 = len as u64;
    (0..len64)
        .map(|i| ((i + 1) * total / len64 - i * total / len64) as u32)
        .collect()
}

fn block_renewal(zeta: f64, half: usize, n: usize, key: u64) -> Vec<u32> {
    // dense block density is load/2; the dense fraction makes the mean zeta
    let load = ((2.0 * zeta).ceil() as u32).max(2);
    let q = 2.0 * zeta / load as f64;
    let block = 2 * half;
    let blocks = n.div_ceil(block);
    let offset = rng::below(rng::hash2(key, 0, 3), n as u64) as usize;
    let mut counts = vec![0u32; n];
    for b in 0..blocks {
        if rng::unit_f64(rng::hash2(key, b as u64, 2)) >= q {
            continue;
        }
        for i in 0..half {
            let pos = b * block + i;
            if pos < n {
                counts[(pos + offset) % n] = load;
            }
        }
    }
    counts
}

/// Particles per site.
pub fn measured_density(config: &Configuration) -> f64 {
    config.density()
}
