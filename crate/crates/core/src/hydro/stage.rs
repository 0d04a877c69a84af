//! Per-sub-grid stage kernel: `u + dt·L(u)` plus boundary-face fluxes.
//!
//! Slice layout: `[dx, dt]` then the full storage (`nvar · P³`, ghosts
//! included). Output: the updated interior (`nvar · E³`, `(v, k, j, i)`),
//! then six boundary-face flux blocks `xlo, xhi, ylo, yhi, zlo, zhi` of
//! `nvar · E²` each in `(v, t2, t1)` order, then four status values
//! `[floor activations, bad cells, first bad cell or −1, 0]`.
//!
//! Fluxes along x are computed with lanes across consecutive faces; along y
//! and z with lanes across consecutive `i`. The update is
//! `u − dt/dx · ((ΔFx + ΔFy) + ΔFz)`.

use crate::aggregator::{BatchKernel, KernelId};
use crate::amr::SubGrid;
use crate::lanes::{Lane, LaneWidth, Pack};

use super::limiter::reconstruct_face;
use super::riemann::{pressure, rusanov_euler, rusanov_scalar, Mode, P_FLOOR};

pub const STATUS_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub nvar: usize,
    pub edge: usize,
    pub ghost: usize,
}

impl StageLayout {
    pub fn padded(&self) -> usize {
        self.edge + 2 * self.ghost
    }

    pub fn input_len(&self) -> usize {
        2 + self.nvar * self.padded().pow(3)
    }

    pub fn update_len(&self) -> usize {
        self.nvar * self.edge.pow(3)
    }

    pub fn face_len(&self) -> usize {
        self.nvar * self.edge * self.edge
    }

    pub fn output_len(&self) -> usize {
        self.update_len() + 6 * self.face_len() + STATUS_LEN
    }

    /// Start of boundary-face block `face_id` in the output.
    pub fn face_offset(&self, face_id: usize) -> usize {
        self.update_len() + face_id * self.face_len()
    }

    pub fn status_offset(&self) -> usize {
        self.output_len() - STATUS_LEN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageStatus {
    pub floors: u64,
    pub bad: u64,
    /// Interior coordinates of the first bad cell.
    pub first_bad: Option<[usize; 3]>,
}

impl StageStatus {
    pub fn read(layout: &StageLayout, output: &[f64]) -> StageStatus {
        let s = &output[layout.status_offset()..];
        let e = layout.edge;
        let first_bad = (s[2] >= 0.0).then(|| {
            let n = s[2] as usize;
            [n % e, (n / e) % e, n / (e * e)]
        });
        StageStatus {
            floors: s[0] as u64,
            bad: s[1] as u64,
            first_bad,
        }
    }
}

/// Writes the slice header and storage of `grid` into `dst`.
pub fn pack_slice(grid: &SubGrid, dx: f64, dt: f64, dst: &mut [f64]) {
    dst[0] = dx;
    dst[1] = dt;
    dst[2..].copy_from_slice(grid.storage());
}

/// Runs one slice at the given lane width.
pub fn stage_slice(mode: &Mode, layout: &StageLayout, width: LaneWidth, input: &[f64], output: &mut [f64]) {
    match width {
        LaneWidth::W1 => stage_generic::<f64>(mode, layout, input, output),
        LaneWidth::W2 => stage_generic::<Pack<2>>(mode, layout, input, output),
        LaneWidth::W4 => stage_generic::<Pack<4>>(mode, layout, input, output),
        LaneWidth::W8 => stage_generic::<Pack<8>>(mode, layout, input, output),
        LaneWidth::W16 => stage_generic::<Pack<16>>(mode, layout, input, output),
    }
}

struct Sweep<'a> {
    mode: &'a Mode,
    axis: usize,
    nvar: usize,
    u: &'a [f64],
    vstride: usize,
    step: usize,
}

impl Sweep<'_> {
    /// Face fluxes for lanes starting at storage offset `off` (cell left of
    /// the left neighbor of the face). Returns floors as a lane sum.
    #[inline]
    fn group<V: Lane>(&self, off: usize, out: &mut [[f64; 16]; 5], bad: &mut bool) -> f64 {
        let st = self.step;
        let load = |v: usize, s: usize| V::load(&self.u[v * self.vstride + off + s * st..]);
        match *self.mode {
            Mode::Scalar { velocity } => {
                let (l, r) = reconstruct_face(load(0, 0), load(0, 1), load(0, 2), load(0, 3));
                rusanov_scalar(l, r, velocity[self.axis]).store(&mut out[0]);
                0.0
            }
            Mode::Euler { gamma } => {
                let mut l = [V::splat(0.0); 5];
                let mut r = [V::splat(0.0); 5];
                for v in 0..self.nvar {
                    (l[v], r[v]) = reconstruct_face(load(v, 0), load(v, 1), load(v, 2), load(v, 3));
                }
                let (flux, floors, b) = rusanov_euler(l, r, self.axis, gamma);
                *bad |= crate::lanes::Mask::any(b);
                for v in 0..5 {
                    flux[v].store(&mut out[v]);
                }
                let mut f = [0.0; 16];
                floors.store(&mut f);
                f[..V::WIDTH].iter().sum()
            }
        }
    }
}

fn stage_generic<V: Lane>(mode: &Mode, lay: &StageLayout, input: &[f64], out: &mut [f64]) {
    let (e, g, nvar) = (lay.edge, lay.ghost, lay.nvar);
    let p = lay.padded();
    let dx = input[0];
    let dt = input[1];
    let u = &input[2..2 + nvar * p * p * p];
    let stride = [1, p, p * p];
    let vstride = p * p * p;
    let nf = e + 1;
    let ee = e * e;
    let flen = nvar * nf * ee;
    let mut fl = vec![0.0; 3 * flen];
    let mut floors = 0.0;
    let mut face_bad = false;
    let mut tmp = [[0.0f64; 16]; 5];
    let w = V::WIDTH;

    for axis in 0..3 {
        let sweep = Sweep {
            mode,
            axis,
            nvar,
            u,
            vstride,
            step: stride[axis],
        };
        let [t1, t2] = match axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        let fa = &mut fl[axis * flen..(axis + 1) * flen];
        for b in 0..e {
            if axis == 0 {
                // lanes run over consecutive faces
                for a in 0..e {
                    let cell0 = (g + a) * stride[t1] + (g + b) * stride[t2];
                    let mut f = 0;
                    while f < nf {
                        let off = cell0 + (g - 2 + f);
                        let n = if f + w <= nf {
                            floors += sweep.group::<V>(off, &mut tmp, &mut face_bad);
                            w
                        } else {
                            floors += sweep.group::<f64>(off, &mut tmp, &mut face_bad);
                            1
                        };
                        for v in 0..nvar {
                            for l in 0..n {
                                fa[(v * nf + f + l) * ee + b * e + a] = tmp[v][l];
                            }
                        }
                        f += n;
                    }
                }
            } else {
                // lanes run over consecutive i
                for f in 0..nf {
                    let mut a = 0;
                    while a < e {
                        let off = (g + a) + (g - 2 + f) * stride[axis] + (g + b) * stride[t2];
                        let n = if a + w <= e {
                            floors += sweep.group::<V>(off, &mut tmp, &mut face_bad);
                            w
                        } else {
                            floors += sweep.group::<f64>(off, &mut tmp, &mut face_bad);
                            1
                        };
                        for v in 0..nvar {
                            let at = (v * nf + f) * ee + b * e + a;
                            fa[at..at + n].copy_from_slice(&tmp[v][..n]);
                        }
                        a += n;
                    }
                }
            }
        }
    }

    let c = dt / dx;
    let fx = &fl[..flen];
    let fy = &fl[flen..2 * flen];
    let fz = &fl[2 * flen..];
    for v in 0..nvar {
        for k in 0..e {
            for j in 0..e {
                for i in 0..e {
                    let dfx = fx[(v * nf + i + 1) * ee + k * e + j] - fx[(v * nf + i) * ee + k * e + j];
                    let dfy = fy[(v * nf + j + 1) * ee + k * e + i] - fy[(v * nf + j) * ee + k * e + i];
                    let dfz = fz[(v * nf + k + 1) * ee + j * e + i] - fz[(v * nf + k) * ee + j * e + i];
                    let uc = u[v * vstride + (g + i) + (g + j) * p + (g + k) * p * p];
                    out[((v * e + k) * e + j) * e + i] = uc - c * ((dfx + dfy) + dfz);
                }
            }
        }
    }

    for (axis, fa) in fl.chunks_exact(flen).enumerate() {
        for (side, f) in [(0usize, 0usize), (1, e)] {
            let dst = lay.face_offset(2 * axis + side);
            for v in 0..nvar {
                let src = (v * nf + f) * ee;
                out[dst + v * ee..dst + (v + 1) * ee].copy_from_slice(&fa[src..src + ee]);
            }
        }
    }

    let e3 = e * e * e;
    let mut bad = face_bad as u64;
    let mut first_bad = -1.0;
    for n in 0..e3 {
        match *mode {
            Mode::Scalar { .. } => {
                if out[n].is_nan() {
                    bad += 1;
                    if first_bad < 0.0 {
                        first_bad = n as f64;
                    }
                }
            }
            Mode::Euler { gamma } => {
                let q: [f64; 5] = std::array::from_fn(|v| out[v * e3 + n]);
                let p = pressure(&q, gamma);
                if !(q[0] > 0.0) || p.is_nan() {
                    bad += 1;
                    if first_bad < 0.0 {
                        first_bad = n as f64;
                    }
                } else if p < P_FLOOR {
                    let ke = q[4] - p / (gamma - 1.0);
                    out[4 * e3 + n] = ke + P_FLOOR / (gamma - 1.0);
                    floors += 1.0;
                }
            }
        }
    }
    let s = lay.status_offset();
    out[s] = floors;
    out[s + 1] = bad as f64;
    out[s + 2] = first_bad;
    out[s + 3] = 0.0;
}

/// Batched stage kernel over packed slices.
#[derive(Debug, Clone)]
pub struct StageKernel {
    mode: Mode,
    layout: StageLayout,
    width: LaneWidth,
}

impl StageKernel {
    pub fn new(mode: Mode, edge: usize, ghost: usize, width: LaneWidth) -> Self {
        StageKernel {
            layout: StageLayout {
                nvar: mode.nvar(),
                edge,
                ghost,
            },
            mode,
            width,
        }
    }

    pub fn layout(&self) -> &StageLayout {
        &self.layout
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }
}

impl BatchKernel for StageKernel {
    fn kernel_id(&self) -> KernelId {
        KernelId(if self.mode.is_euler() { 2 } else { 1 })
    }

    fn input_len(&self) -> usize {
        self.layout.input_len()
    }

    fn output_len(&self) -> usize {
        self.layout.output_len()
    }

    fn run(&self, input: &[f64], output: &mut [f64], slices: usize) {
        let (il, ol) = (self.input_len(), self.output_len());
        for s in 0..slices {
            stage_slice(
                &self.mode,
                &self.layout,
                self.width,
                &input[s * il..(s + 1) * il],
                &mut output[s * ol..(s + 1) * ol],
            );
        }
    }
}
