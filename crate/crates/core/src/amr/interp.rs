//! Conservative transfer between levels.
//!
//! Child order inside an octet is `c = dk << 2 | dj << 1 | di`. Restriction
//! sums x-pairs, then y, then z, so reflecting the octet across any axis
//! leaves the result bitwise unchanged.

use crate::hydro::minmod;

use super::SubGrid;

/// Mean of eight children.
#[inline]
pub fn restrict_octet(f: [f64; 8]) -> f64 {
    (((f[0] + f[1]) + (f[2] + f[3])) + ((f[4] + f[5]) + (f[6] + f[7]))) * 0.125
}

/// Limited slope of `c` in coarse-cell units. A missing neighbor (`None` or
/// NaN) gives zero.
#[inline]
pub fn limited_slope(lo: Option<f64>, c: f64, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (Some(l), Some(h)) if !l.is_nan() && !h.is_nan() => minmod(c - l, h - c),
        _ => 0.0,
    }
}

/// One fine value at offset `bits` (`di | dj << 1 | dk << 2`) inside the
/// coarse cell.
#[inline]
pub fn prolong_one(c: f64, slopes: [f64; 3], bits: u8) -> f64 {
    let o: [f64; 3] = std::array::from_fn(|a| {
        let q = 0.25 * slopes[a];
        if bits >> a & 1 == 1 {
            q
        } else {
            -q
        }
    });
    c + ((o[0] + o[1]) + o[2])
}

/// Eight fine values from a coarse value and its limited slopes.
pub fn prolong_octet(c: f64, slopes: [f64; 3]) -> [f64; 8] {
    std::array::from_fn(|b| prolong_one(c, slopes, b as u8))
}

/// Children of `parent`, filled by limited linear interpolation from the
/// parent's interior. Slopes at the parent's interior edge are zero.
pub fn prolong_block(parent: &SubGrid) -> [SubGrid; 8] {
    let (e, g, nvar) = (parent.edge(), parent.ghost(), parent.nvar());
    let mut kids: [SubGrid; 8] = std::array::from_fn(|_| SubGrid::new(nvar, e, g));
    let inside = |x: usize| (g..g + e).contains(&x);
    for v in 0..nvar {
        for ck in g..g + e {
            for cj in g..g + e {
                for ci in g..g + e {
                    let cc = [ci, cj, ck];
                    let c = parent.at(v, cc);
                    let slopes: [f64; 3] = std::array::from_fn(|a| {
                        let mut lo = cc;
                        let mut hi = cc;
                        lo[a] -= 1;
                        hi[a] += 1;
                        limited_slope(
                            inside(lo[a]).then(|| parent.at(v, lo)),
                            c,
                            inside(hi[a]).then(|| parent.at(v, hi)),
                        )
                    });
                    let fine = prolong_octet(c, slopes);
                    // cell (ci,cj,ck) of the parent interior -> child + fine base
                    let rel = [ci - g, cj - g, ck - g];
                    let child = (0..3).fold(0, |acc, a| acc | (((2 * rel[a]) / e) << a));
                    let base: [usize; 3] = std::array::from_fn(|a| g + (2 * rel[a]) % e);
                    for (b, &x) in fine.iter().enumerate() {
                        let at = [base[0] + (b & 1), base[1] + (b >> 1 & 1), base[2] + (b >> 2)];
                        kids[child].put(v, at, x);
                    }
                }
            }
        }
    }
    kids
}

/// Parent interior as the restriction of its eight children.
pub fn restrict_block(children: [&SubGrid; 8]) -> SubGrid {
    let c0 = children[0];
    let (e, g, nvar) = (c0.edge(), c0.ghost(), c0.nvar());
    let mut parent = SubGrid::new(nvar, e, g);
    let h = e / 2;
    for v in 0..nvar {
        for ck in 0..e {
            for cj in 0..e {
                for ci in 0..e {
                    let rel = [ci, cj, ck];
                    let child = (0..3).fold(0, |acc, a| acc | ((rel[a] / h) << a));
                    let base: [usize; 3] = std::array::from_fn(|a| g + 2 * (rel[a] % h));
                    let src = children[child];
                    let f: [f64; 8] = std::array::from_fn(|b| {
                        src.at(v, [base[0] + (b & 1), base[1] + (b >> 1 & 1), base[2] + (b >> 2)])
                    });
                    parent.put(v, [g + ci, g + cj, g + ck], restrict_octet(f));
                }
            }
        }
    }
    parent
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restrict_examples() {
        assert_eq!(restrict_octet([2.5; 8]), 2.5);
        assert_eq!(restrict_octet([1., 2., 3., 4., 5., 6., 7., 8.]), 4.5);
        assert_eq!(restrict_octet(prolong_octet(3.25, [0.0; 3])), 3.25);
    }

    #[test]
    fn constant_prolong() {
        assert_eq!(prolong_octet(7.0, [0.0; 3]), [7.0; 8]);
        let mut p = SubGrid::new(1, 4, 2);
        p.fill(1.5);
        for kid in prolong_block(&p) {
            assert!(kid.interior().iter().all(|&x| x == 1.5));
        }
    }

    #[test]
    fn missing_neighbor_zero_slope() {
        assert_eq!(limited_slope(None, 1.0, Some(3.0)), 0.0);
        assert_eq!(limited_slope(Some(f64::NAN), 1.0, Some(3.0)), 0.0);
        assert_eq!(limited_slope(Some(0.0), 1.0, Some(3.0)), 1.0);
    }

    #[test]
    fn block_roundtrip() {
        let mut p = SubGrid::new(1, 4, 2);
        let vals: Vec<f64> = (0..64).map(|x| ((x * 7) % 11) as f64).collect();
        p.set_interior(&vals);
        let kids = prolong_block(&p);
        let back = restrict_block(std::array::from_fn(|c| &kids[c]));
        for (a, b) in back.interior().iter().zip(&vals) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }
}
