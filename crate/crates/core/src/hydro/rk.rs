use crate::amr::SubGrid;

use super::riemann::{Mode, P_FLOOR};

pub const RK3_STAGES: usize = 3;

/// Weight of the stage result in `u^s = (1 − b)·u⁰ + b·x`, where
/// `x = u^{s−1} + dt·L(u^{s−1})`.
pub const RK3_WEIGHTS: [f64; RK3_STAGES] = [1.0, 0.25, 2.0 / 3.0];

/// Stage combine written as `u⁰ + b·(x − u⁰)`, so `x == u⁰` returns `u⁰`
/// bit for bit. The first stage returns `x` unchanged.
#[inline]
pub fn rk_combine(stage: usize, u0: f64, x: f64) -> f64 {
    if stage == 0 {
        x
    } else {
        u0 + RK3_WEIGHTS[stage] * (x - u0)
    }
}

/// Combines whole interiors in place: `x` becomes `u^s`.
pub fn rk_combine_slice(stage: usize, u0: &[f64], x: &mut [f64]) {
    debug_assert_eq!(u0.len(), x.len());
    if stage == 0 {
        return;
    }
    for (xi, &a) in x.iter_mut().zip(u0) {
        *xi = rk_combine(stage, a, *xi);
    }
}

/// Sum over axes of the largest per-axis signal speed in `grid`'s interior:
/// `|u_a| + c` in Euler mode, `|a_a|` in scalar mode.
pub fn signal_speed(grid: &SubGrid, mode: &Mode) -> f64 {
    match *mode {
        Mode::Scalar { velocity } => velocity.iter().map(|a| a.abs()).sum(),
        Mode::Euler { gamma } => {
            let (e, g) = (grid.edge(), grid.ghost());
            let mut s: f64 = 0.0;
            for k in g..g + e {
                for j in g..g + e {
                    for i in g..g + e {
                        let q: [f64; 5] = std::array::from_fn(|v| grid.at(v, [i, j, k]));
                        let inv = 1.0 / q[0];
                        let ke = 0.5 * ((q[1] * q[1] + q[2] * q[2]) + q[3] * q[3]) * inv;
                        let p = ((gamma - 1.0) * (q[4] - ke)).max(P_FLOOR);
                        let c = (gamma * p * inv).sqrt();
                        let cell = (q[1].abs() + q[2].abs() + q[3].abs()) * inv + 3.0 * c;
                        s = s.max(cell);
                    }
                }
            }
            s
        }
    }
}

/// `cfl · min(dx / s)` over `(dx, s)` pairs; `None` when every speed is zero.
pub fn cfl_dt(cfl: f64, bounds: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let m = bounds
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .map(|(dx, s)| dx / s)
        .fold(f64::INFINITY, f64::min);
    m.is_finite().then_some(cfl * m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ode_rk3() {
        // u' = −u, one step of h = 0.1 from 1
        let h = 0.1;
        let mut u = 1.0;
        let u0 = u;
        for s in 0..RK3_STAGES {
            let x = u - h * u;
            u = rk_combine(s, u0, x);
            if s == 1 {
                assert!((u - 0.9525).abs() < 1e-15);
            }
        }
        let exact = 1.0 - h + h * h / 2.0 - h * h * h / 6.0;
        assert!((u - exact).abs() < 1e-15);
    }

    #[test]
    fn zero_operator_is_identity() {
        let u0 = [0.1, 3.7, -2.2, 1e-300];
        for s in 0..RK3_STAGES {
            for &a in &u0 {
                assert_eq!(rk_combine(s, a, a).to_bits(), a.to_bits());
            }
        }
    }

    #[test]
    fn cfl_example() {
        assert!((cfl_dt(0.4, [(0.1, 2.0)]).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(cfl_dt(0.4, [(0.1, 0.0)]), None);
    }
}
