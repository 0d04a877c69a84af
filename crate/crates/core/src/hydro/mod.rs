//! Finite-volume solver: MUSCL-minmod reconstruction, Rusanov fluxes and
//! SSP-RK3 stages over sub-grids.

pub mod kernels;
mod limiter;
mod riemann;
mod rk;
pub mod stage;

pub use limiter::{minmod, reconstruct_face};
pub use riemann::{conserved, euler_flux, pressure, rusanov_euler, rusanov_scalar, Mode, GAMMA, P_FLOOR, RHO_FLOOR};
pub use rk::{cfl_dt, rk_combine, rk_combine_slice, signal_speed, RK3_STAGES, RK3_WEIGHTS};
pub use stage::{pack_slice, stage_slice, StageKernel, StageLayout, StageStatus};
