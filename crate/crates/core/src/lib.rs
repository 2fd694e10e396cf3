//! Activated random walk on finite boxes of `Z^d`.
//!
//! Dynamics are driven by a deterministic site-wise instruction field
//! (`field`), so every run is reproducible from integer seeds. Topplings,
//! stabilization under several schedulers and the least-action check live in
//! `topple`; the two-stage coupling in `coupling`; driven-dissipative curves,
//! density scans and breakpoint fits in `experiments`.

pub mod config;
pub mod coupling;
pub mod experiments;
pub mod field;
pub mod initial;
pub mod lattice;
pub mod rng;
pub mod run;
pub mod stats;
pub mod suites;
pub mod topple;

pub use field::{Code, Instruction, InstructionField};
pub use lattice::{Boundary, Configuration, Domain, JumpKernel, SiteState, Target};
pub use topple::{stabilize, Odometer, Scheduler, SiteSet, StabilizeReport, Stabilizer, Termination};
