//! Ghost-shell fills in three axis passes.
//!
//! Pass `a` writes the ghost slabs normal to axis `a`. Same-level copies and
//! wall mirrors cover the full storage range along axes already passed and
//! the interior range along the others, so edge and corner ghosts are filled
//! transitively. Fills across a level jump cover the interior transverse range
//! only. Every fill reads source interiors, or ghosts written by earlier
//! passes, so all fills of one pass commute. Coarse-to-fine prolongation
//! takes transverse slopes from the coarse source's cells, ghosts included
//! along axes already passed, and uses a zero slope where none exist.

use super::interp::{limited_slope, prolong_one, restrict_octet};
use super::tree::{Face, Neighbor, Tree};
use super::{AmrError, MortonKey, SubGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransferKind {
    Same,
    /// Coarse source; `quadrant` locates the receiver on the source's face.
    FromCoarse {
        quadrant: u8,
    },
    /// Fine source; `quadrant` locates the source on the receiver's face.
    FromFine {
        quadrant: u8,
    },
}

/// Data moved from one leaf into a ghost slab of another in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transfer {
    pub dst: MortonKey,
    /// Receiver face being filled.
    pub face: Face,
    pub kind: TransferKind,
    pub src: MortonKey,
}

/// Work of one pass: transfers plus wall mirrors `(leaf, face)`.
#[derive(Debug, Clone, Default)]
pub struct PassPlan {
    pub transfers: Vec<Transfer>,
    pub walls: Vec<(MortonKey, Face)>,
}

fn quadrant_of(tree: &Tree, key: MortonKey, face: Face) -> u8 {
    let c = tree.coords(key);
    let [t1, t2] = face.transverse();
    ((c[t1] & 1) | (c[t2] & 1) << 1) as u8
}

/// Fills needed for pass `axis`, receivers in Morton order, low face first.
pub fn plan_pass(tree: &Tree, axis: usize) -> Result<PassPlan, AmrError> {
    let mut plan = PassPlan::default();
    for dst in tree.leaves() {
        for high in [false, true] {
            let face = Face { axis, high };
            match tree.neighbor(dst, face)? {
                Neighbor::Boundary => plan.walls.push((dst, face)),
                Neighbor::Same(src) => plan.transfers.push(Transfer {
                    dst,
                    face,
                    kind: TransferKind::Same,
                    src,
                }),
                Neighbor::Coarser(src) => plan.transfers.push(Transfer {
                    dst,
                    face,
                    kind: TransferKind::FromCoarse {
                        quadrant: quadrant_of(tree, dst, face),
                    },
                    src,
                }),
                Neighbor::Finer(srcs) => {
                    for (q, src) in srcs.into_iter().enumerate() {
                        plan.transfers.push(Transfer {
                            dst,
                            face,
                            kind: TransferKind::FromFine { quadrant: q as u8 },
                            src,
                        });
                    }
                }
            }
        }
    }
    Ok(plan)
}

/// Sign applied when mirroring variable `v` across a wall normal to `axis`.
/// With five variables the layout is `ρ, m_x, m_y, m_z, E`.
pub fn reflect_sign(nvar: usize, v: usize, axis: usize) -> f64 {
    if nvar == 5 && v == 1 + axis {
        -1.0
    } else {
        1.0
    }
}

fn transverse_range(g: &SubGrid, t: usize, pass: usize) -> std::ops::Range<usize> {
    if t < pass {
        0..g.padded()
    } else {
        g.ghost()..g.ghost() + g.edge()
    }
}

#[inline]
fn cell(axis: usize, t: [usize; 2], n: usize, tc: [usize; 2]) -> [usize; 3] {
    let mut c = [0; 3];
    c[axis] = n;
    c[t[0]] = tc[0];
    c[t[1]] = tc[1];
    c
}

/// Payload a source sends for `t` during the pass of `t.face.axis`.
pub fn extract(src: &SubGrid, t: &Transfer) -> Vec<f64> {
    let (e, g, nvar) = (src.edge(), src.ghost(), src.nvar());
    let face = t.face;
    let axis = face.axis;
    let tr = face.transverse();
    let mut out = Vec::new();
    match t.kind {
        TransferKind::Same => {
            let n0 = if face.high { g } else { e };
            let r1 = transverse_range(src, tr[0], axis);
            let r2 = transverse_range(src, tr[1], axis);
            out.reserve(nvar * g * r1.len() * r2.len());
            for v in 0..nvar {
                for b in r2.clone() {
                    for a in r1.clone() {
                        for n in 0..g {
                            out.push(src.at(v, cell(axis, tr, n0 + n, [a, b])));
                        }
                    }
                }
            }
        }
        TransferKind::FromCoarse { quadrant } => {
            let h = e / 2;
            // adjacent layer first, then the next one inward
            let layers = if face.high { [g, g + 1] } else { [g + e - 1, g + e - 2] };
            let start = [g + (quadrant as usize & 1) * h, g + (quadrant as usize >> 1) * h];
            // transverse axes already passed have valid ghosts on the source
            let valid = |t: usize, x: isize| {
                let r = transverse_range(src, t, axis);
                x >= r.start as isize && x < r.end as isize
            };
            for v in 0..nvar {
                for b in 0..h + 2 {
                    for a in 0..h + 2 {
                        let ta = start[0] as isize + a as isize - 1;
                        let tb = start[1] as isize + b as isize - 1;
                        for &n in &layers {
                            out.push(if valid(tr[0], ta) && valid(tr[1], tb) {
                                src.at(v, cell(axis, tr, n, [ta as usize, tb as usize]))
                            } else {
                                f64::NAN
                            });
                        }
                    }
                }
            }
        }
        TransferKind::FromFine { .. } => {
            let h = e / 2;
            let base = if face.high { g } else { g + e - 4 };
            for v in 0..nvar {
                for cb in 0..h {
                    for ca in 0..h {
                        for m in 0..2 {
                            out.push(restrict_at(src, v, axis, tr, base + 2 * m, [g + 2 * ca, g + 2 * cb]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Mean of the 2×2×2 octet whose low corner is at normal `n`, transverse `tc`.
fn restrict_at(src: &SubGrid, v: usize, axis: usize, tr: [usize; 2], n: usize, tc: [usize; 2]) -> f64 {
    let mut lo = [0; 3];
    lo[axis] = n;
    lo[tr[0]] = tc[0];
    lo[tr[1]] = tc[1];
    restrict_octet(std::array::from_fn(|bits| {
        src.at(v, [lo[0] + (bits & 1), lo[1] + (bits >> 1 & 1), lo[2] + (bits >> 2)])
    }))
}

/// Writes a payload produced by [`extract`] into the receiver's ghosts.
pub fn apply(dst: &mut SubGrid, t: &Transfer, payload: &[f64]) {
    let (e, g, nvar) = (dst.edge(), dst.ghost(), dst.nvar());
    let face = t.face;
    let axis = face.axis;
    let tr = face.transverse();
    let ghost0 = if face.high { g + e } else { 0 };
    let mut it = payload.iter().copied();
    match t.kind {
        TransferKind::Same => {
            let r1 = transverse_range(dst, tr[0], axis);
            let r2 = transverse_range(dst, tr[1], axis);
            for v in 0..nvar {
                for b in r2.clone() {
                    for a in r1.clone() {
                        for n in 0..g {
                            let x = it.next().expect("payload length");
                            dst.put(v, cell(axis, tr, ghost0 + n, [a, b]), x);
                        }
                    }
                }
            }
        }
        TransferKind::FromCoarse { .. } => {
            let h = e / 2;
            let w = h + 2;
            let own_base = if face.high { g + e - 2 } else { g };
            for v in 0..nvar {
                let block = &payload[v * w * w * 2..(v + 1) * w * w * 2];
                let at = |a: usize, b: usize, layer: usize| block[(b * w + a) * 2 + layer];
                for cb in 0..h {
                    for ca in 0..h {
                        let (pa, pb) = (ca + 1, cb + 1);
                        let c = at(pa, pb, 0);
                        let deeper = at(pa, pb, 1);
                        let own = restrict_at(dst, v, axis, tr, own_base, [g + 2 * ca, g + 2 * cb]);
                        let (lo_n, hi_n) = if face.high { (own, deeper) } else { (deeper, own) };
                        let mut slopes = [0.0; 3];
                        slopes[axis] = limited_slope(Some(lo_n), c, Some(hi_n));
                        slopes[tr[0]] = limited_slope(Some(at(pa - 1, pb, 0)), c, Some(at(pa + 1, pb, 0)));
                        slopes[tr[1]] = limited_slope(Some(at(pa, pb - 1, 0)), c, Some(at(pa, pb + 1, 0)));
                        for bits in 0..8u8 {
                            let (bn, b1, b2) = (
                                (bits >> axis & 1) as usize,
                                (bits >> tr[0] & 1) as usize,
                                (bits >> tr[1] & 1) as usize,
                            );
                            let x = prolong_one(c, slopes, bits);
                            dst.put(v, cell(axis, tr, ghost0 + bn, [g + 2 * ca + b1, g + 2 * cb + b2]), x);
                        }
                    }
                }
            }
        }
        TransferKind::FromFine { quadrant } => {
            let h = e / 2;
            let start = [g + (quadrant as usize & 1) * h, g + (quadrant as usize >> 1) * h];
            for v in 0..nvar {
                for cb in 0..h {
                    for ca in 0..h {
                        for m in 0..2 {
                            let x = it.next().expect("payload length");
                            dst.put(v, cell(axis, tr, ghost0 + m, [start[0] + ca, start[1] + cb]), x);
                        }
                    }
                }
            }
        }
    }
}

/// Mirrors the interior into the ghosts on a wall face.
pub fn fill_wall(grid: &mut SubGrid, face: Face) {
    let (e, g, nvar) = (grid.edge(), grid.ghost(), grid.nvar());
    let axis = face.axis;
    let tr = face.transverse();
    let r1 = transverse_range(grid, tr[0], axis);
    let r2 = transverse_range(grid, tr[1], axis);
    for v in 0..nvar {
        let s = reflect_sign(nvar, v, axis);
        for b in r2.clone() {
            for a in r1.clone() {
                for n in 0..g {
                    let (dst, src) = if face.high {
                        (g + e + n, g + e - 1 - n)
                    } else {
                        (g - 1 - n, g + n)
                    };
                    let x = grid.at(v, cell(axis, tr, src, [a, b]));
                    grid.put(v, cell(axis, tr, dst, [a, b]), s * x);
                }
            }
        }
    }
}

/// Fills every leaf's ghost shell in place, one pass at a time.
pub fn exchange(tree: &mut Tree) -> Result<(), AmrError> {
    for axis in 0..3 {
        let plan = plan_pass(tree, axis)?;
        let payloads: Vec<Vec<f64>> = plan
            .transfers
            .iter()
            .map(|t| extract(tree.grid(t.src).expect("source grid"), t))
            .collect();
        for (t, p) in plan.transfers.iter().zip(&payloads) {
            apply(tree.grid_mut(t.dst).expect("receiver grid"), t, p);
        }
        for &(key, face) in &plan.walls {
            fill_wall(tree.grid_mut(key).expect("wall grid"), face);
        }
    }
    Ok(())
}
