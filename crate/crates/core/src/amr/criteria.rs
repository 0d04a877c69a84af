use super::SubGrid;

/// Default refinement threshold.
pub const DEFAULT_THETA: f64 = 0.1;
/// Density floor used by the criterion's denominator.
pub const RHO_FLOOR: f64 = 1e-10;

/// Largest relative central-difference gradient of variable 0 over the
/// interior, `|∇ρ|·dx / max(ρ, ρ_floor)`. Face ghosts must be filled.
pub fn max_relative_gradient(grid: &SubGrid) -> f64 {
    let (e, g) = (grid.edge(), grid.ghost());
    let mut worst = 0.0f64;
    for k in g..g + e {
        for j in g..g + e {
            for i in g..g + e {
                let d = |a: usize| {
                    let mut lo = [i, j, k];
                    let mut hi = [i, j, k];
                    lo[a] -= 1;
                    hi[a] += 1;
                    0.5 * (grid.at(0, hi) - grid.at(0, lo))
                };
                let (gx, gy, gz) = (d(0), d(1), d(2));
                let mag = (gx * gx + gy * gy + gz * gz).sqrt();
                let r = mag / grid.get(0, i, j, k).max(RHO_FLOOR);
                worst = worst.max(r);
            }
        }
    }
    worst
}

/// True when the block needs refinement at threshold `theta`.
pub fn flag_refinement(grid: &SubGrid, theta: f64) -> bool {
    max_relative_gradient(grid) > theta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_step() {
        let mut g = SubGrid::new(1, 4, 2);
        g.fill(1.0);
        assert!(!flag_refinement(&g, 0.1));
        for k in 0..8 {
            for j in 0..8 {
                for i in 4..8 {
                    g.set(0, i, j, k, 0.125);
                }
            }
        }
        assert!(flag_refinement(&g, 0.9));
    }
}
