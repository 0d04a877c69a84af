use crate::lanes::{Lane, Mask};

/// Density floor.
pub const RHO_FLOOR: f64 = 1e-10;
/// Pressure floor applied to face states and updated cells.
pub const P_FLOOR: f64 = 1e-12;
pub const GAMMA: f64 = 1.4;

/// Conserved-variable layout: one `u` in scalar mode; `ρ, m_x, m_y, m_z, E`
/// in Euler mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Scalar { velocity: [f64; 3] },
    Euler { gamma: f64 },
}

impl Mode {
    pub fn nvar(&self) -> usize {
        match self {
            Mode::Scalar { .. } => 1,
            Mode::Euler { .. } => 5,
        }
    }

    pub fn is_euler(&self) -> bool {
        matches!(self, Mode::Euler { .. })
    }
}

/// Physical flux of one Euler state along `axis` plus its signal speed
/// `|u_axis| + c`. Returns `(flux, speed, floored, bad)` where `bad` marks
/// non-positive or NaN density and NaN pressure.
#[inline]
pub fn euler_flux<V: Lane>(q: [V; 5], axis: usize, gamma: f64) -> ([V; 5], V, V::Mask, V::Mask) {
    let zero = V::splat(0.0);
    let rho = q[0];
    let bad = rho.gt(zero).not();
    let inv = V::splat(1.0) / rho;
    let un = q[1 + axis] * inv;
    let ke = V::splat(0.5) * ((q[1] * q[1] + q[2] * q[2]) + q[3] * q[3]) * inv;
    let p_raw = V::splat(gamma - 1.0) * (q[4] - ke);
    let bad = bad.or(p_raw.is_finite().not());
    let floor = V::splat(P_FLOOR);
    let floored = p_raw.lt(floor);
    let p = V::select(floored, floor, p_raw);
    let c = (V::splat(gamma) * p * inv).sqrt();
    let mut f = [q[1 + axis], q[1] * un, q[2] * un, q[3] * un, (q[4] + p) * un];
    f[1 + axis] = f[1 + axis] + p;
    (f, un.abs() + c, floored, bad)
}

/// Rusanov flux between Euler states `l` and `r`. The third value counts
/// floored face pressures per lane.
#[inline]
pub fn rusanov_euler<V: Lane>(l: [V; 5], r: [V; 5], axis: usize, gamma: f64) -> ([V; 5], V, V::Mask) {
    let (fl, sl, pl, bl) = euler_flux(l, axis, gamma);
    let (fr, sr, pr, br) = euler_flux(r, axis, gamma);
    let s = sl.max(sr);
    let half = V::splat(0.5);
    let hs = half * s;
    let flux = std::array::from_fn(|v| half * (fl[v] + fr[v]) - hs * (r[v] - l[v]));
    let one = V::splat(1.0);
    let zero = V::splat(0.0);
    let floors = V::select(pl, one, zero) + V::select(pr, one, zero);
    (flux, floors, bl.or(br))
}

/// Rusanov flux for linear advection with speed `a` along the face normal.
#[inline]
pub fn rusanov_scalar<V: Lane>(l: V, r: V, a: f64) -> V {
    let half = V::splat(0.5);
    let av = V::splat(a);
    let hs = V::splat(0.5 * a.abs());
    half * (av * l + av * r) - hs * (r - l)
}

/// Pressure of one conserved state.
pub fn pressure(q: &[f64], gamma: f64) -> f64 {
    let ke = 0.5 * ((q[1] * q[1] + q[2] * q[2]) + q[3] * q[3]) / q[0];
    (gamma - 1.0) * (q[4] - ke)
}

/// Conserved state from density, velocity and pressure.
pub fn conserved(rho: f64, vel: [f64; 3], p: f64, gamma: f64) -> [f64; 5] {
    let ke = 0.5 * rho * ((vel[0] * vel[0] + vel[1] * vel[1]) + vel[2] * vel[2]);
    [rho, rho * vel[0], rho * vel[1], rho * vel[2], p / (gamma - 1.0) + ke]
}
