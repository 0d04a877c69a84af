//! Flat binary snapshot of leaf interiors.
//!
//! Layout, little-endian: `"AMRC"`, version `u32`, `nvar u32`, `edge u32`,
//! `roots 3×u32`, `step u64`, `time f64`, `records u64`; then per leaf in
//! Morton order `level u32`, reserved `u32`, `index u64` and
//! `nvar · edge³` values of `f64` in `(v, k, j, i)` order.

use std::path::Path;

use super::{AmrError, MortonKey, Tree};

pub const MAGIC: &[u8; 4] = b"AMRC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nvar: u32,
    pub edge: u32,
    pub roots: [u32; 3],
    pub step: u64,
    pub time: f64,
    pub records: Vec<(MortonKey, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_tree(tree: &Tree, step: u64, time: f64) -> Self {
        let g = tree.geometry();
        Checkpoint {
            nvar: g.nvar as u32,
            edge: g.edge as u32,
            roots: g.roots,
            step,
            time,
            records: tree
                .leaves()
                .into_iter()
                .map(|k| (k, tree.grid(k).expect("leaf grid").interior()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.nvar as usize * (self.edge as usize).pow(3);
        let mut b = Vec::with_capacity(HEADER_LEN + self.records.len() * (16 + 8 * per));
        b.extend_from_slice(MAGIC);
        for x in [
            VERSION,
            self.nvar,
            self.edge,
            self.roots[0],
            self.roots[1],
            self.roots[2],
        ] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.time.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (key, vals) in &self.records {
            b.extend_from_slice(&(key.level() as u32).to_le_bytes());
            b.extend_from_slice(&0u32.to_le_bytes());
            b.extend_from_slice(&key.index().to_le_bytes());
            for v in vals {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AmrError> {
        let bad = |why: &str| AmrError::Checkpoint(why.to_string());
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 6];
        for x in &mut u32s {
            *x = r.u32().ok_or_else(|| bad("truncated header"))?;
        }
        if u32s[0] != VERSION {
            return Err(bad("unsupported version"));
        }
        let step = r.u64().ok_or_else(|| bad("truncated header"))?;
        let time = f64::from_bits(r.u64().ok_or_else(|| bad("truncated header"))?);
        let count = r.u64().ok_or_else(|| bad("truncated header"))?;
        let per = u32s[1] as usize * (u32s[2] as usize).pow(3);
        let mut records = Vec::new();
        for _ in 0..count {
            let level = r.u32().ok_or_else(|| bad("truncated record"))?;
            r.u32().ok_or_else(|| bad("truncated record"))?;
            let index = r.u64().ok_or_else(|| bad("truncated record"))?;
            let level = u8::try_from(level).map_err(|_| bad("level out of range"))?;
            let mut vals = Vec::with_capacity(per);
            for _ in 0..per {
                vals.push(f64::from_bits(r.u64().ok_or_else(|| bad("truncated record"))?));
            }
            records.push((MortonKey::from_raw(level, index), vals));
        }
        if r.at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            nvar: u32s[1],
            edge: u32s[2],
            roots: [u32s[3], u32s[4], u32s[5]],
            step,
            time,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, AmrError> {
        let bytes = std::fs::read(path).map_err(|e| AmrError::Checkpoint(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::Geometry;

    #[test]
    fn roundtrip() {
        let geom = Geometry {
            edge: 4,
            max_level: 1,
            ..Geometry::default()
        };
        let mut t = Tree::uniform(geom, 1).unwrap();
        for (n, k) in t.leaves().into_iter().enumerate() {
            t.grid_mut(k).unwrap().fill(n as f64);
        }
        let c = Checkpoint::from_tree(&t, 3, 0.25);
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (16 + 8 * 64));
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
