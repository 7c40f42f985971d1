//! Memory-traffic models for stencil loop nests.
//!
//! Kernels are described as sets of array accesses with offsets. From that
//! description the crate derives stream counts and code-balance bounds,
//! replays the accesses through a cache simulator, models the halo traffic
//! added by 2D domain decomposition, and turns balances into Roofline
//! predictions.

pub mod balance;
pub mod cachesim;
pub mod decomp;
pub mod error;
pub mod kernel;
pub mod report;
pub mod roofline;

pub use balance::{
    classify, code_balance, layer_condition, scenario_table, BalanceScenario, LcState,
    ScalingClass, ScenarioTable, StreamCounts, WaPolicy,
};
pub use error::{Error, Result};
pub use kernel::{
    derive_stream_counts, Access, ArrayDecl, GridSpec, KernelSpec, KernelSuite, Mode,
};
pub use roofline::{roofline_predict, MachineModel};
