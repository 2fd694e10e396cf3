//! Site-wise instruction stacks.
//!
//! The instruction at site `x` and depth `j` is a pure function of the
//! seed, the domain geometry, `x` and `j + shift(x)`. A uniform variate is
//! drawn by hashing those integers and mapped through the cumulative table
//! `[sleep, kernel entry 0, kernel entry 1, ...]`, i.e. sleep occupies
//! `[0, lambda/(1+lambda))` and kernel entry `k` the next `p_k/(1+lambda)`.
//! That ordering is part of the reproducibility contract.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{Domain, JumpKernel, KernelError};
use crate::rng::{self, Stream};
use crate::topple::Odometer;

/// Instruction with its jump offset resolved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Sleep,
    Jump(Vec<i64>),
}

/// Compact instruction: `Jump(k)` refers to entry `k` of the kernel table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Code {
    Sleep,
    Jump(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("instruction indices start at 1")]
    ZeroIndex,
    #[error("sleep rate must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("invalid kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("kernel dimension {kernel} does not match domain dimension {domain}")]
    DimensionMismatch { kernel: usize, domain: usize },
    #[error("shift has {got} entries, domain has {expected} sites")]
    ShiftLength { expected: usize, got: usize },
}

/// Description of the uniform-to-instruction map, echoed into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct CumulativeTable {
    pub ordering: &'static str,
    pub upper_bounds: Vec<f64>,
}

pub const TABLE_ORDERING: &str = "uniform u in [0,1); sleep if u < lambda/(1+lambda), else the first kernel entry k (file order) with u < lambda/(1+lambda) + sum_{i<=k} p_i/(1+lambda)";

#[derive(Debug)]
struct Shared {
    seed: u64,
    lambda: f64,
    kernel: JumpKernel,
    key: u64,
    sites: usize,
    /// `thresholds[0]` is the sleep bound, then one cumulative bound per kernel entry.
    thresholds: Vec<f64>,
}

/// The instruction field, optionally shifted per site.
///
/// Cloning is cheap; clones share the underlying tables.
#[derive(Debug, Clone)]
pub struct InstructionField {
    shared: Arc<Shared>,
    shift: Option<Arc<Vec<u64>>>,
}

impl InstructionField {
    pub fn new(seed: u64, lambda: f64, kernel: JumpKernel, domain: &Domain) -> Result<Self, FieldError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(FieldError::BadLambda(lambda));
        }
        kernel.validate()?;
        if kernel.dim() != domain.dim() {
            return Err(FieldError::DimensionMismatch { kernel: kernel.dim(), domain: domain.dim() });
        }
        let mut geometry = vec![domain.dim() as u64];
        geometry.extend(domain.sides().iter().map(|&l| l as u64));
        let key = rng::absorb(rng::stream_key(seed, Stream::Instructions), &geometry);

        let mut thresholds = Vec::with_capacity(kernel.len() + 1);
        let mut acc = lambda / (1.0 + lambda);
        thresholds.push(acc);
        for (_, p) in kernel.entries() {
            acc += p / (1.0 + lambda);
            thresholds.push(acc);
        }
        Ok(Self {
            shared: Arc::new(Shared { seed, lambda, kernel, key, sites: domain.len(), thresholds }),
            shift: None,
        })
    }

    pub fn seed(&self) -> u64 {
        self.shared.seed
    }

    pub fn lambda(&self) -> f64 {
        self.shared.lambda
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.shared.kernel
    }

    pub fn sites(&self) -> usize {
        self.shared.sites
    }

    pub fn cumulative_table(&self) -> CumulativeTable {
        CumulativeTable { ordering: TABLE_ORDERING, upper_bounds: self.shared.thresholds.clone() }
    }

    #[inline(always)]
    pub fn shift_at(&self, site: usize) -> u64 {
        match &self.shift {
            Some(s) => s[site],
            None => 0,
        }
    }

    /// Depth in the unshifted stack that `(site, index)` reads.
    #[inline(always)]
    pub fn raw_index(&self, site: usize, index: u64) -> u64 {
        index + self.shift_at(site)
    }

    /// Instruction `index >= 1` at `site`.
    pub fn instruction_at(&self, site: usize, index: u64) -> Result<Instruction, FieldError> {
        if index == 0 {
            return Err(FieldError::ZeroIndex);
        }
        Ok(match self.code(site, index) {
            Code::Sleep => Instruction::Sleep,
            Code::Jump(k) => Instruction::Jump(self.shared.kernel.offset(k).to_vec()),
        })
    }

    /// Hot-path variant of [`instruction_at`](Self::instruction_at); `index` must be positive.
    #[inline(always)]
    pub fn code(&self, site: usize, index: u64) -> Code {
        debug_assert!(index >= 1);
        let u = rng::unit_f64(rng::hash2(self.shared.key, site as u64, self.raw_index(site, index)));
        let t = &self.shared.thresholds;
        if u < t[0] {
            return Code::Sleep;
        }
        for (k, &bound) in t[1..].iter().enumerate() {
            if u < bound {
                return Code::Jump(k);
            }
        }
        // rounding left a sliver above the last bound
        Code::Jump(t.len() - 2)
    }

    /// Field with the first `h0(x)` instructions at each `x` deleted.
    pub fn shifted(&self, h0: &Odometer) -> Result<Self, FieldError> {
        if h0.len() != self.shared.sites {
            return Err(FieldError::ShiftLength { expected: self.shared.sites, got: h0.len() });
        }
        let shift: Vec<u64> = (0..h0.len()).map(|x| self.shift_at(x) + h0.get(x)).collect();
        Ok(Self { shared: Arc::clone(&self.shared), shift: Some(Arc::new(shift)) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(seed: u64, lambda: f64, kernel: JumpKernel, n: usize) -> InstructionField {
        InstructionField::new(seed, lambda, kernel, &Domain::torus(vec![n])).unwrap()
    }

    #[test]
    fn queries_are_pure() {
        let f = field(3, 1.0, JumpKernel::symmetric(1), 16);
        for x in 0..16 {
            for j in 1..50 {
                assert_eq!(f.instruction_at(x, j).unwrap(), f.instruction_at(x, j).unwrap());
                assert_eq!(f.clone().code(x, j), f.code(x, j));
            }
        }
        assert_eq!(f.instruction_at(0, 0), Err(FieldError::ZeroIndex));
    }

    #[test]
    fn construction_errors() {
        let d = Domain::torus(vec![4]);
        assert!(matches!(
            InstructionField::new(0, 0.0, JumpKernel::symmetric(1), &d),
            Err(FieldError::BadLambda(_))
        ));
        assert!(matches!(
            InstructionField::new(0, 1.0, JumpKernel::symmetric(2), &d),
            Err(FieldError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            InstructionField::new(0, 1.0, JumpKernel::new(1, vec![(vec![2], 1.0)]), &d),
            Err(FieldError::Kernel(_))
        ));
    }

    #[test]
    fn different_geometry_or_seed_changes_streams() {
        let a = field(3, 1.0, JumpKernel::symmetric(1), 16);
        let b = field(4, 1.0, JumpKernel::symmetric(1), 16);
        let c = field(3, 1.0, JumpKernel::symmetric(1), 17);
        let sa: Vec<Code> = (1..200).map(|j| a.code(1, j)).collect();
        assert_ne!(sa, (1..200).map(|j| b.code(1, j)).collect::<Vec<_>>());
        assert_ne!(sa, (1..200).map(|j| c.code(1, j)).collect::<Vec<_>>());
    }

    #[test]
    fn shift_by_zero_is_identity() {
        let f = field(9, 1.0, JumpKernel::symmetric(1), 8);
        let g = f.shifted(&Odometer::zeros(8)).unwrap();
        for x in 0..8 {
            for j in 1..100 {
                assert_eq!(f.code(x, j), g.code(x, j));
            }
        }
    }

    #[test]
    fn shift_at_one_site_drops_its_prefix() {
        let f = field(9, 1.0, JumpKernel::symmetric(1), 8);
        let mut h = Odometer::zeros(8);
        h.set(5, 7);
        let g = f.shifted(&h).unwrap();
        for j in 1..=100 {
            assert_eq!(g.code(5, j), f.code(5, j + 7));
            assert_eq!(g.code(4, j), f.code(4, j));
        }
        assert!(f.shifted(&Odometer::zeros(3)).is_err());
    }

    #[test]
    fn shifts_compose_additively() {
        let f = field(21, 0.5, JumpKernel::symmetric(1), 10);
        let a = Odometer::from_vec((0..10).map(|x| (x * 3 % 7) as u64).collect());
        let b = Odometer::from_vec((0..10).map(|x| (x * 5 % 4) as u64).collect());
        let ab = f.shifted(&a).unwrap().shifted(&b).unwrap();
        let direct = f.shifted(&a.plus(&b)).unwrap();
        for x in 0..10 {
            for j in 1..60 {
                assert_eq!(ab.code(x, j), direct.code(x, j));
            }
        }
    }

    /// Binomial 3-sigma check of one frequency.
    fn within_3_sigma(hits: usize, n: usize, p: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (hits as f64 - n as f64 * p).abs() <= 3.0 * sd
    }

    #[test]
    fn sleep_frequency_for_large_lambda() {
        let lambda = 1e6;
        let f = field(1, lambda, JumpKernel::symmetric(1), 100);
        let n = 100_000;
        let sleeps = (0..n).filter(|&i| f.code(i % 100, (i / 100 + 1) as u64) == Code::Sleep).count();
        assert!(within_3_sigma(sleeps, n, lambda / (1.0 + lambda)), "{sleeps}");
    }

    #[test]
    fn symmetric_frequencies_at_unit_lambda() {
        let f = field(2, 1.0, JumpKernel::symmetric(1), 100);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            match f.code(i % 100, (i / 100 + 1) as u64) {
                Code::Sleep => counts[0] += 1,
                Code::Jump(k) => counts[k + 1] += 1,
            }
        }
        assert_eq!(f.kernel().offset(0), &[1]);
        for (c, p) in counts.iter().zip([0.5, 0.25, 0.25]) {
            assert!(within_3_sigma(*c, n, p), "{counts:?}");
        }
    }
}
