//! Operator learning for hidden-physics discovery and PDE parameter
//! identification.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: a differentiable scalar expression graph plus Adam.
//! * [`nets`]: MLPs, the branch/trunk operator model and batched kernels
//!   that propagate spatial/temporal derivatives through the trunk.
//! * [`function_spaces`]: sine-basis, GRF and modified-GRF samplers and
//!   Latin hypercube point sets.
//! * [`pde_oracles`]: finite-difference reference solvers.
//! * [`dhpo`]: joint training of the operator and a hidden-physics network.
//! * [`sysid`]: two-stage identification of a scalar PDE coefficient.
//! * [`eval`]: relative L2 metrics and reports.
//! * [`dataset`] and [`config`]: persistence and experiment configuration.

pub mod autodiff;
pub mod binio;
pub mod config;
pub mod dataset;
pub mod dhpo;
pub mod error;
pub mod eval;
pub mod function_spaces;
pub mod nets;
pub mod pde_oracles;
pub mod rng;
pub mod sysid;

pub use error::{Error, Result};
pub use function_spaces::{FunctionFamily, FunctionSample, GrfSpec, PointSet};
pub use nets::{Activation, HiddenPhysicsNet, Mlp, MlpSpec, OperatorModel, ParameterNet};
pub use pde_oracles::{FieldGrid, SolverOptions, System, SystemParams};

pub use config::ExperimentConfig;
pub use dataset::{Dataset, Split};
pub use dhpo::{DhpoConfig, DhpoModel, DhpoSample, DhpoTrainer, StopReason, TraceRow};
pub use eval::{EvalReport, Summary, Task, Triptych};
pub use nets::checkpoint::Checkpoint;
pub use sysid::{SensorLayout, Stage, SysidConfig, SysidSample, SysidTrainer};

/// Number of nodes along each axis of the space-time grid.
pub const GRID_N: usize = 101;
/// Spacing of the spatial grid.
pub const GRID_DX: f64 = 0.01;
