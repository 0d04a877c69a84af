/// Block of `edge³` cells with a `ghost`-wide shell, stored variable-major,
/// then `k`, `j`, `i` with `i` fastest. Coordinates passed to accessors are
/// storage coordinates in `0..edge + 2 * ghost`; the interior starts at
/// `ghost`.
#[derive(Clone, PartialEq)]
pub struct SubGrid {
    edge: usize,
    ghost: usize,
    nvar: usize,
    data: Vec<f64>,
}

impl SubGrid {
    pub fn new(nvar: usize, edge: usize, ghost: usize) -> Self {
        let p = edge + 2 * ghost;
        SubGrid {
            edge,
            ghost,
            nvar,
            data: vec![0.0; nvar * p * p * p],
        }
    }

    pub fn from_storage(nvar: usize, edge: usize, ghost: usize, data: Vec<f64>) -> Self {
        let p = edge + 2 * ghost;
        assert_eq!(data.len(), nvar * p * p * p, "storage length");
        SubGrid {
            edge,
            ghost,
            nvar,
            data,
        }
    }

    pub fn edge(&self) -> usize {
        self.edge
    }

    pub fn ghost(&self) -> usize {
        self.ghost
    }

    pub fn nvar(&self) -> usize {
        self.nvar
    }

    /// Storage cells per axis.
    pub fn padded(&self) -> usize {
        self.edge + 2 * self.ghost
    }

    #[inline]
    pub fn idx(&self, v: usize, i: usize, j: usize, k: usize) -> usize {
        let p = self.padded();
        ((v * p + k) * p + j) * p + i
    }

    #[inline]
    pub fn get(&self, v: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(v, i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, v: usize, i: usize, j: usize, k: usize, x: f64) {
        let n = self.idx(v, i, j, k);
        self.data[n] = x;
    }

    /// Accessor by axis-ordered coordinates `c = [i, j, k]`.
    #[inline]
    pub fn at(&self, v: usize, c: [usize; 3]) -> f64 {
        self.get(v, c[0], c[1], c[2])
    }

    #[inline]
    pub fn put(&mut self, v: usize, c: [usize; 3], x: f64) {
        self.set(v, c[0], c[1], c[2], x)
    }

    pub fn storage(&self) -> &[f64] {
        &self.data
    }

    pub fn storage_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn interior_len(&self) -> usize {
        self.nvar * self.edge.pow(3)
    }

    /// Interior values in `(v, k, j, i)` order.
    pub fn interior(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.interior_len());
        self.interior_into(&mut out);
        out
    }

    pub fn interior_into(&self, out: &mut Vec<f64>) {
        let (e, g) = (self.edge, self.ghost);
        for v in 0..self.nvar {
            for k in g..g + e {
                for j in g..g + e {
                    let at = self.idx(v, g, j, k);
                    out.extend_from_slice(&self.data[at..at + e]);
                }
            }
        }
    }

    pub fn set_interior(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.interior_len(), "interior length");
        let (e, g) = (self.edge, self.ghost);
        let mut src = values.chunks_exact(e);
        for v in 0..self.nvar {
            for k in g..g + e {
                for j in g..g + e {
                    let at = self.idx(v, g, j, k);
                    self.data[at..at + e].copy_from_slice(src.next().unwrap());
                }
            }
        }
    }

    /// Sum over interior cells of variable `v`, in storage order.
    pub fn interior_sum(&self, v: usize) -> f64 {
        let (e, g) = (self.edge, self.ghost);
        let mut s = 0.0;
        for k in g..g + e {
            for j in g..g + e {
                let at = self.idx(v, g, j, k);
                s += self.data[at..at + e].iter().sum::<f64>();
            }
        }
        s
    }

    pub fn fill(&mut self, x: f64) {
        self.data.fill(x);
    }
}

impl std::fmt::Debug for SubGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubGrid")
            .field("edge", &self.edge)
            .field("ghost", &self.ghost)
            .field("nvar", &self.nvar)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_roundtrip() {
        let mut g = SubGrid::new(2, 4, 2);
        assert_eq!(g.storage().len(), 2 * 8 * 8 * 8);
        let vals: Vec<f64> = (0..g.interior_len()).map(|x| x as f64).collect();
        g.set_interior(&vals);
        assert_eq!(g.interior(), vals);
        assert_eq!(g.get(0, 2, 2, 2), 0.0);
        assert_eq!(g.get(0, 3, 2, 2), 1.0);
        assert_eq!(g.get(1, 2, 2, 2), 64.0);
        assert_eq!(g.get(0, 0, 0, 0), 0.0);
    }
}
