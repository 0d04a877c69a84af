use std::cmp::Ordering;
use std::fmt;

use super::AmrError;

/// Deepest supported refinement level.
pub const MAX_LEVEL: u8 = 15;
/// Bits kept for the root-block index above the per-level triples.
pub const ROOT_BITS: u32 = 6;

/// Octree node address: `level` plus one `(k, j, i)` bit triple per level,
/// `i` least significant within each triple. Forests of root blocks keep the
/// root index in the bits above the triples.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MortonKey {
    level: u8,
    index: u64,
}

fn spread(v: u64) -> u64 {
    // 21 bits -> every third bit
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x1f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x1f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

impl MortonKey {
    pub const ROOT: MortonKey = MortonKey { level: 0, index: 0 };

    /// Key of cell `(i, j, k)` at `level` inside a single root block.
    pub fn encode(level: u8, i: u64, j: u64, k: u64) -> Result<Self, AmrError> {
        Self::encode_in([1, 1, 1], level, i, j, k)
    }

    /// Key inside a forest of `roots` blocks; coordinates are global at
    /// `level`, so `i < roots[0] << level`.
    pub fn encode_in(roots: [u32; 3], level: u8, i: u64, j: u64, k: u64) -> Result<Self, AmrError> {
        if level > MAX_LEVEL {
            return Err(AmrError::LevelOutOfRange(level));
        }
        let l = level as u32;
        let c = [i, j, k];
        for a in 0..3 {
            if c[a] >= (roots[a] as u64) << l {
                return Err(AmrError::CoordinateOutOfRange {
                    level,
                    coord: (i, j, k),
                });
            }
        }
        let mask = (1u64 << l) - 1;
        let r = (i >> l) + roots[0] as u64 * ((j >> l) + roots[1] as u64 * (k >> l));
        let low = spread(i & mask) | (spread(j & mask) << 1) | (spread(k & mask) << 2);
        Ok(MortonKey {
            level,
            index: (r << (3 * l)) | low,
        })
    }

    pub fn decode(self) -> (u8, u64, u64, u64) {
        self.decode_in([1, 1, 1])
    }

    pub fn decode_in(self, roots: [u32; 3]) -> (u8, u64, u64, u64) {
        let l = self.level as u32;
        let low = if l == 0 {
            0
        } else {
            self.index & ((1u64 << (3 * l)) - 1)
        };
        let r = self.index >> (3 * l);
        let (rx, ry) = (roots[0] as u64, roots[1] as u64);
        let ri = r % rx;
        let rj = (r / rx) % ry;
        let rk = r / (rx * ry);
        (
            self.level,
            (ri << l) | compact(low),
            (rj << l) | compact(low >> 1),
            (rk << l) | compact(low >> 2),
        )
    }

    /// Root block `r` of a forest, numbered with x fastest.
    pub fn root(r: u64) -> Self {
        MortonKey { level: 0, index: r }
    }

    pub fn from_raw(level: u8, index: u64) -> Self {
        MortonKey { level, index }
    }

    pub fn level(self) -> u8 {
        self.level
    }

    pub fn index(self) -> u64 {
        self.index
    }

    pub fn parent(self) -> Option<Self> {
        (self.level > 0).then(|| MortonKey {
            level: self.level - 1,
            index: self.index >> 3,
        })
    }

    /// Child `c`, with `c = dk << 2 | dj << 1 | di`.
    pub fn child(self, c: u8) -> Self {
        debug_assert!(c < 8 && self.level < MAX_LEVEL);
        MortonKey {
            level: self.level + 1,
            index: (self.index << 3) | c as u64,
        }
    }

    pub fn children(self) -> [MortonKey; 8] {
        std::array::from_fn(|c| self.child(c as u8))
    }

    /// Position among siblings.
    pub fn child_slot(self) -> u8 {
        (self.index & 7) as u8
    }

    pub fn is_ancestor_of(self, other: MortonKey) -> bool {
        other.level > self.level && other.index >> (3 * (other.level - self.level) as u32) == self.index
    }

    fn depth_first(self) -> u64 {
        self.index << (3 * (MAX_LEVEL - self.level) as u32)
    }
}

/// Depth-first order: a node precedes its descendants, siblings in child
/// order. On leaves this is the Morton curve.
impl Ord for MortonKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.depth_first()
            .cmp(&other.depth_first())
            .then(self.level.cmp(&other.level))
    }
}

impl PartialOrd for MortonKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MortonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K{}:{:#o}", self.level, self.index)
    }
}

impl fmt::Display for MortonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(MortonKey::encode(1, 1, 0, 1).unwrap().index(), 0b101);
        assert_eq!(MortonKey::encode(0, 0, 0, 0).unwrap().index(), 0);
        assert!(MortonKey::encode(2, 4, 0, 0).is_err());
    }

    #[test]
    fn spread_compact_inverse() {
        for v in [0u64, 1, 2, 3, 0x1234, 0x1f_ffff] {
            assert_eq!(compact(spread(v)), v);
        }
    }

    #[test]
    fn forest_roots() {
        let roots = [16, 1, 1];
        let k = MortonKey::encode_in(roots, 0, 5, 0, 0).unwrap();
        assert_eq!(k, MortonKey::root(5));
        let c = MortonKey::encode_in(roots, 2, 21, 3, 1).unwrap();
        assert_eq!(c.decode_in(roots), (2, 21, 3, 1));
        assert!(MortonKey::root(5).is_ancestor_of(c));
    }

    #[test]
    fn parent_child() {
        let k = MortonKey::encode(3, 5, 2, 7).unwrap();
        for c in 0..8 {
            assert_eq!(k.child(c).parent(), Some(k));
            assert_eq!(k.child(c).child_slot(), c);
        }
        assert!(MortonKey::ROOT.parent().is_none());
    }

    #[test]
    fn order_is_depth_first() {
        let r = MortonKey::ROOT;
        let a = r.child(0);
        let b = r.child(1);
        assert!(r < a && a < a.child(7) && a.child(7) < b);
    }
}
