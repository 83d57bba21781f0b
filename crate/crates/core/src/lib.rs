//! FaR hardening workbench: binary16 numerics, a toy MLP stack, the offline
//! FaR compiler, a functional reference of the FaR-aware linear operator,
//! a cycle-level dot-product engine model, a system timing model and a
//! progressive bit-search attack harness.

pub mod attack;
pub mod compiler;
pub mod dpe;
pub mod error;
pub mod formats;
pub mod half;
pub mod model;
pub mod reference;
pub mod system;

/// Lanes per dot-product engine and the edge of a GEMM tile.
pub const TILE: usize = 32;

pub use attack::{AttackConfig, AttackTrace, AttackerView, Objective};
pub use compiler::{FarAction, FarConfig, FarMap, FarMapEntry, HardenedLayer, HardenedNetwork, ShadowStore};
pub use error::{AttackError, BlobError, CompileError, ModelError, NumericsError, SimError};
pub use dpe::{CycleReport, DpeConfig, TileF16};
pub use half::Fp16;
pub use model::{Activation, Batch, LinearLayer, Precision, ToyNetwork};
pub use system::{GemmShape, ModelShape, SystemConfig};
