//! Initial states and static meshes of the built-in scenarios.

use crate::amr::{flag_refinement, AmrError, Boundary, Geometry, MortonKey, Tree};
use crate::hydro::{conserved, Mode};

use super::config::{Profile, RunConfig, Scenario};

/// Width of both Gaussians.
pub const SIGMA: f64 = 0.05;
/// Blob advection velocity.
pub const BLOB_VELOCITY: [f64; 3] = [1.0, 0.0, 0.0];
pub const TWO_BLOB_CENTERS: [[f64; 3]; 2] = [[0.35, 0.5, 0.5], [0.65, 0.5, 0.5]];
/// Background density and uniform pressure of the two-blob state.
pub const TWO_BLOB_BACKGROUND: f64 = 0.1;
pub const TWO_BLOB_PRESSURE: f64 = 0.1;
/// Angular velocity of the rotation field at the center.
pub const TWO_BLOB_OMEGA: f64 = 1.0;
/// Radius beyond which the rotation is tapered towards rest.
pub const TWO_BLOB_TAPER: f64 = 0.3;

pub fn mode(cfg: &RunConfig) -> Mode {
    match cfg.scenario {
        Scenario::GaussianBlob => Mode::Scalar {
            velocity: BLOB_VELOCITY,
        },
        Scenario::Sod | Scenario::TwoBlob => Mode::Euler { gamma: cfg.gamma },
    }
}

pub fn geometry(cfg: &RunConfig) -> Geometry {
    let (roots, boundary) = match cfg.scenario {
        Scenario::GaussianBlob => ([1, 1, 1], Boundary::Periodic),
        Scenario::Sod => ([16, 1, 1], Boundary::Reflective),
        Scenario::TwoBlob => ([1, 1, 1], Boundary::Periodic),
    };
    Geometry {
        roots: cfg.roots.unwrap_or(roots),
        edge: cfg.edge,
        ghost: cfg.ghost,
        nvar: mode(cfg).nvar(),
        max_level: cfg.levels().1,
        boundary: [boundary; 3],
    }
}

/// Shortest offset from `c` to `x` on a periodic box of size `extent`.
fn periodic_offset(x: f64, c: f64, extent: f64) -> f64 {
    let d = x - c;
    d - extent * (d / extent).round()
}

/// Conserved state at point `x`; only the first `nvar` entries are used.
pub fn initial_state(cfg: &RunConfig, extent: [f64; 3], x: [f64; 3]) -> [f64; 5] {
    match cfg.scenario {
        Scenario::GaussianBlob => {
            let d: [f64; 3] = std::array::from_fn(|a| periodic_offset(x[a], 0.5 * extent[a], extent[a]));
            let r2 = match cfg.profile {
                Profile::Sphere => d[0] * d[0] + d[1] * d[1] + d[2] * d[2],
                Profile::Slab => d[0] * d[0],
            };
            [(-r2 / (2.0 * SIGMA * SIGMA)).exp(), 0.0, 0.0, 0.0, 0.0]
        }
        Scenario::Sod => {
            let (rho, p) = if x[0] < 0.5 * extent[0] {
                (1.0, 1.0)
            } else {
                (0.125, 0.1)
            };
            conserved(rho, [0.0; 3], p, cfg.gamma)
        }
        Scenario::TwoBlob => {
            let mut rho = TWO_BLOB_BACKGROUND;
            for c in TWO_BLOB_CENTERS {
                let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
                rho += (-r2 / (2.0 * SIGMA * SIGMA)).exp();
            }
            let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
            let r = (dx * dx + dy * dy).sqrt();
            let w = TWO_BLOB_OMEGA * (-(r / TWO_BLOB_TAPER).powi(4)).exp();
            conserved(rho, [-w * dy, w * dx, 0.0], TWO_BLOB_PRESSURE, cfg.gamma)
        }
    }
}

/// Overwrites every storage cell of `key`, ghosts included, with the
/// initial state sampled at cell centers.
fn fill_analytic(cfg: &RunConfig, tree: &mut Tree, key: MortonKey) {
    let extent = tree.geometry().extent();
    let p = tree.geometry().padded();
    let centers: Vec<[f64; 3]> = (0..p * p * p)
        .map(|n| tree.cell_center(key, [n % p, (n / p) % p, n / (p * p)]))
        .collect();
    let grid = tree.grid_mut(key).expect("leaf grid");
    for (n, x) in centers.into_iter().enumerate() {
        let q = initial_state(cfg, extent, x);
        for (v, &value) in q.iter().enumerate().take(grid.nvar()) {
            grid.put(v, [n % p, (n / p) % p, n / (p * p)], value);
        }
    }
}

/// Builds the static mesh: uniform at the minimum level, then leaves at each
/// level are flagged on the analytic state and refined, up to the maximum
/// level. Every leaf ends filled with the initial state.
pub fn init_scenario(cfg: &RunConfig) -> Result<Tree, AmrError> {
    let (lo, hi) = cfg.levels();
    let mut tree = Tree::uniform(geometry(cfg), lo)?;
    for level in lo..hi {
        let at_level: Vec<MortonKey> = tree.leaves().into_iter().filter(|k| k.level() == level).collect();
        let mut flagged = Vec::new();
        for key in at_level {
            fill_analytic(cfg, &mut tree, key);
            if flag_refinement(tree.grid(key).expect("leaf grid"), cfg.theta) {
                flagged.push(key);
            }
        }
        for key in flagged {
            // balancing may already have split it
            if tree.is_leaf(key) {
                tree.refine(key)?;
            }
        }
    }
    for key in tree.leaves() {
        fill_analytic(cfg, &mut tree, key);
    }
    tree.check_balance()?;
    Ok(tree)
}
