//! Element-wise solver pieces as [`LaneKernel`]s for use with
//! [`vmap`](crate::lanes::vmap).

use crate::lanes::{Lane, LaneKernel};

use super::limiter::reconstruct_face;
use super::riemann::{rusanov_euler, rusanov_scalar};

/// Four cell values to `(left, right)` face states.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reconstruct;

impl LaneKernel for Reconstruct {
    const INPUTS: usize = 4;
    const OUTPUTS: usize = 2;

    fn apply<V: Lane>(&self, x: &[V], out: &mut [V]) {
        (out[0], out[1]) = reconstruct_face(x[0], x[1], x[2], x[3]);
    }
}

/// Scalar Rusanov flux from `(left, right)` states.
#[derive(Debug, Clone, Copy)]
pub struct ScalarFlux {
    pub speed: f64,
}

impl LaneKernel for ScalarFlux {
    const INPUTS: usize = 2;
    const OUTPUTS: usize = 1;

    fn apply<V: Lane>(&self, x: &[V], out: &mut [V]) {
        out[0] = rusanov_scalar(x[0], x[1], self.speed);
    }
}

/// Euler Rusanov flux from five left then five right conserved arrays.
/// Outputs the five flux components then the floor count.
#[derive(Debug, Clone, Copy)]
pub struct EulerFlux {
    pub axis: usize,
    pub gamma: f64,
}

impl LaneKernel for EulerFlux {
    const INPUTS: usize = 10;
    const OUTPUTS: usize = 6;

    fn apply<V: Lane>(&self, x: &[V], out: &mut [V]) {
        let l = std::array::from_fn(|v| x[v]);
        let r = std::array::from_fn(|v| x[5 + v]);
        let (f, floors, _) = rusanov_euler(l, r, self.axis, self.gamma);
        out[..5].copy_from_slice(&f);
        out[5] = floors;
    }
}
