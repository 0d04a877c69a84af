//! Flux matching across level jumps.
//!
//! Boundary fluxes are laid out per face as `(v, t2, t1)` with `t1` fastest,
//! where `t1 < t2` are the face's transverse axes. A fine leaf reports each
//! coarse face as the mean of the 2×2 fine faces covering it; the coarse
//! leaf's adjacent cells are then corrected so both sides see the same flux.

use super::tree::Face;

/// Mean over 2×2 fine faces, one coarse face per output entry. Output layout
/// is `(v, c2, c1)` over `edge / 2` coarse faces per axis.
pub fn fine_face_average(face_flux: &[f64], nvar: usize, edge: usize) -> Vec<f64> {
    let h = edge / 2;
    let mut out = Vec::with_capacity(nvar * h * h);
    for v in 0..nvar {
        let f = &face_flux[v * edge * edge..(v + 1) * edge * edge];
        for cb in 0..h {
            for ca in 0..h {
                let at = |a: usize, b: usize| f[(2 * cb + b) * edge + 2 * ca + a];
                out.push(((at(0, 0) + at(1, 0)) + (at(0, 1) + at(1, 1))) * 0.25);
            }
        }
    }
    out
}

/// Coarse and averaged fine flux over one coarse face that borders finer
/// leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxRegister {
    face: Face,
    nvar: usize,
    edge: usize,
    coarse: Vec<f64>,
    fine: Vec<f64>,
    filled: u8,
    has_coarse: bool,
}

impl FluxRegister {
    pub fn new(face: Face, nvar: usize, edge: usize) -> Self {
        FluxRegister {
            face,
            nvar,
            edge,
            coarse: vec![0.0; nvar * edge * edge],
            fine: vec![0.0; nvar * edge * edge],
            filled: 0,
            has_coarse: false,
        }
    }

    pub fn face(&self) -> Face {
        self.face
    }

    pub fn set_coarse(&mut self, flux: &[f64]) {
        self.coarse.copy_from_slice(flux);
        self.has_coarse = true;
    }

    /// Stores one fine leaf's averaged flux at `quadrant` of the face.
    pub fn add_fine(&mut self, quadrant: u8, averaged: &[f64]) {
        let (e, h) = (self.edge, self.edge / 2);
        let s1 = (quadrant as usize & 1) * h;
        let s2 = (quadrant as usize >> 1) * h;
        let mut src = averaged.iter();
        for v in 0..self.nvar {
            for cb in 0..h {
                for ca in 0..h {
                    self.fine[v * e * e + (s2 + cb) * e + s1 + ca] = *src.next().expect("averaged length");
                }
            }
        }
        self.filled |= 1 << quadrant;
    }

    pub fn is_complete(&self) -> bool {
        self.filled == 0xf && self.has_coarse
    }

    /// Mismatch `fine − coarse` per face cell.
    pub fn mismatch(&self) -> impl Iterator<Item = f64> + '_ {
        self.fine.iter().zip(&self.coarse).map(|(f, c)| f - c)
    }

    pub fn zero(&mut self) {
        self.coarse.fill(0.0);
        self.fine.fill(0.0);
        self.filled = 0;
        self.has_coarse = false;
    }
}

/// Corrects the cells adjacent to the register's face in `cells` (interior
/// layout `(v, k, j, i)`) and zeroes the register.
pub fn reflux(cells: &mut [f64], reg: &mut FluxRegister, dt_over_dx: f64) {
    let (e, nvar) = (reg.edge, reg.nvar);
    let face = reg.face;
    let [t1, t2] = face.transverse();
    let n = if face.high { e - 1 } else { 0 };
    let sign = if face.high { -dt_over_dx } else { dt_over_dx };
    for v in 0..nvar {
        for b in 0..e {
            for a in 0..e {
                let mut c = [0usize; 3];
                c[face.axis] = n;
                c[t1] = a;
                c[t2] = b;
                let f = v * e * e + b * e + a;
                let d = sign * (reg.fine[f] - reg.coarse[f]);
                cells[((v * e + c[2]) * e + c[1]) * e + c[0]] += d;
            }
        }
    }
    reg.zero();
}
