//! Octree of fixed-size sub-grids with 2:1 face balance.
//!
//! Leaves hold `edge³` cells plus a two-cell ghost shell. Topology changes
//! happen between timesteps on one thread; within a step each sub-grid is
//! touched by one task at a time.

pub mod checkpoint;
pub mod criteria;
pub mod flux;
pub mod ghost;
pub mod interp;
mod morton;
pub mod partition;
mod subgrid;
mod tree;

pub use checkpoint::Checkpoint;
pub use criteria::{flag_refinement, DEFAULT_THETA, RHO_FLOOR};
pub use flux::{reflux, FluxRegister};
pub use ghost::{exchange, Transfer, TransferKind};
pub use morton::{MortonKey, MAX_LEVEL, ROOT_BITS};
pub use partition::partition;
pub use subgrid::SubGrid;
pub use tree::{facing_children, Boundary, Face, Geometry, Neighbor, Node, Tree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AmrError {
    #[error("level {0} exceeds the supported depth")]
    LevelOutOfRange(u8),
    #[error("coordinate {coord:?} out of range at level {level}")]
    CoordinateOutOfRange { level: u8, coord: (u64, u64, u64) },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("no node {0}")]
    UnknownKey(MortonKey),
    #[error("{0} is not a leaf")]
    NotALeaf(MortonKey),
    #[error("{0} is already at the maximum level")]
    AtMaxLevel(MortonKey),
    #[error("children of {0} are not all leaves")]
    NotCoarsenable(MortonKey),
    #[error("coarsening {0} would break 2:1 balance")]
    BalanceViolation(MortonKey),
    #[error("tree is not 2:1 balanced at {0}")]
    Unbalanced(MortonKey),
    #[error("cannot split {leaves} leaves into {parts} parts")]
    TooManyParts { parts: usize, leaves: usize },
    #[error("partition needs at least one part")]
    NoParts,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
