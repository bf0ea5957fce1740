//! Batched best-arm identification with instance-sensitive batch budgets.
//!
//! - [`mab`]: successive elimination whose per-batch budget grows with the
//!   inverse squared gaps of arms already eliminated.
//! - [`linbandit`]: the same idea for transductive linear bandits, built on
//!   G-optimal designs from [`optdesign`].
//! - [`complexity`] and [`linbandit::batch_complexity_linear`]: the
//!   deterministic batch-complexity recursions and their bounds.
//! - [`experiment`]: instance generators, a ratings loader and a replicated
//!   sweep runner.

pub mod complexity;
pub mod error;
pub mod experiment;
pub mod instance;
pub mod linbandit;
pub mod mab;
pub mod optdesign;
pub mod rng;
pub mod trace;

pub use complexity::{batch_complexity_mab, h_index, ComplexityKind, ComplexityReport};
pub use error::{Error, Result};
pub use instance::{EmpiricalArms, GapProfile, Instance, LinearInstance, MabInstance, RewardModel};
pub use linbandit::{batch_complexity_linear, run_is_rage, RageConfig};
pub use mab::{run_is_se, SeConfig};
pub use optdesign::{psi_star, round_design, solve_design, Allocation, ArmSpace, Design, DesignOptions};
pub use rng::replication_seed;
pub use trace::{BatchRecord, LinearBatchInfo, RunTrace};
