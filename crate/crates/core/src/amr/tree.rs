use std::collections::BTreeMap;

use super::interp::{prolong_block, restrict_block};
use super::morton::{MortonKey, MAX_LEVEL, ROOT_BITS};
use super::{AmrError, SubGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    /// Mirror cells across the wall; the wall-normal momentum flips sign.
    Reflective,
}

/// One of the six faces of a block, `xlo, xhi, ylo, yhi, zlo, zhi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub high: bool,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face { axis: 0, high: false },
        Face { axis: 0, high: true },
        Face { axis: 1, high: false },
        Face { axis: 1, high: true },
        Face { axis: 2, high: false },
        Face { axis: 2, high: true },
    ];

    pub fn id(self) -> usize {
        2 * self.axis + self.high as usize
    }

    pub fn from_id(id: usize) -> Face {
        Face::ALL[id]
    }

    pub fn opposite(self) -> Face {
        Face {
            axis: self.axis,
            high: !self.high,
        }
    }

    /// The two transverse axes in increasing order.
    pub fn transverse(self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Root blocks per axis. Root blocks are cubes of side `1 / roots[0]`.
    pub roots: [u32; 3],
    pub edge: usize,
    pub ghost: usize,
    pub nvar: usize,
    pub max_level: u8,
    pub boundary: [Boundary; 3],
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            roots: [1, 1, 1],
            edge: 8,
            ghost: 2,
            nvar: 1,
            max_level: 5,
            boundary: [Boundary::Periodic; 3],
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<(), AmrError> {
        let bad = |why: &str| Err(AmrError::Geometry(why.to_string()));
        if self.roots.contains(&0) {
            return bad("root counts must be positive");
        }
        let total: u64 = self.roots.iter().map(|&r| r as u64).product();
        if total > 1 << ROOT_BITS {
            return bad("too many root blocks");
        }
        if self.edge < 4 || !self.edge.is_multiple_of(2) {
            return bad("sub-grid edge must be even and at least 4");
        }
        if self.ghost != 2 {
            return bad("ghost width must be 2");
        }
        if self.nvar == 0 {
            return bad("at least one variable");
        }
        if self.max_level > MAX_LEVEL {
            return bad("max_level too deep");
        }
        Ok(())
    }

    pub fn root_count(&self) -> u64 {
        self.roots.iter().map(|&r| r as u64).product()
    }

    pub fn root_size(&self) -> f64 {
        1.0 / self.roots[0] as f64
    }

    pub fn extent(&self) -> [f64; 3] {
        let h = self.root_size();
        std::array::from_fn(|a| self.roots[a] as f64 * h)
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn block_size(&self, level: u8) -> f64 {
        self.root_size() / (1u64 << level) as f64
    }

    pub fn dx(&self, level: u8) -> f64 {
        self.block_size(level) / self.edge as f64
    }

    /// Blocks per axis at `level`.
    pub fn blocks(&self, level: u8, axis: usize) -> u64 {
        (self.roots[axis] as u64) << level
    }

    pub fn padded(&self) -> usize {
        self.edge + 2 * self.ghost
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Bit `c` set when child `c` exists; all or nothing.
    pub children: u8,
    pub owner: u32,
    pub grid: Option<SubGrid>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children == 0
    }
}

/// Who borders a leaf across one face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Boundary,
    Same(MortonKey),
    Coarser(MortonKey),
    /// Quadrants `q = h1 | h2 << 1` over the face's transverse axes.
    Finer([MortonKey; 4]),
}

/// Octree forest with data at the leaves.
#[derive(Debug, Clone)]
pub struct Tree {
    geom: Geometry,
    nodes: BTreeMap<MortonKey, Node>,
}

impl Tree {
    /// All root blocks as zero-filled leaves.
    pub fn new(geom: Geometry) -> Result<Self, AmrError> {
        geom.validate()?;
        let mut nodes = BTreeMap::new();
        for r in 0..geom.root_count() {
            nodes.insert(
                MortonKey::root(r),
                Node {
                    children: 0,
                    owner: 0,
                    grid: Some(SubGrid::new(geom.nvar, geom.edge, geom.ghost)),
                },
            );
        }
        Ok(Tree { geom, nodes })
    }

    /// Every leaf at `level`.
    pub fn uniform(geom: Geometry, level: u8) -> Result<Self, AmrError> {
        let mut t = Tree::new(geom)?;
        for _ in 0..level {
            for key in t.leaves() {
                t.refine(key)?;
            }
        }
        Ok(t)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn node(&self, key: MortonKey) -> Option<&Node> {
        self.nodes.get(&key)
    }

    pub fn contains(&self, key: MortonKey) -> bool {
        self.nodes.contains_key(&key)
    }

    pub fn is_leaf(&self, key: MortonKey) -> bool {
        self.nodes.get(&key).is_some_and(Node::is_leaf)
    }

    /// Leaves in Morton order.
    pub fn leaves(&self) -> Vec<MortonKey> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.is_leaf())
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.values().filter(|n| n.is_leaf()).count()
    }

    pub fn cell_count(&self) -> usize {
        self.leaf_count() * self.geom.edge.pow(3)
    }

    pub fn max_leaf_level(&self) -> u8 {
        self.nodes
            .iter()
            .filter(|(_, n)| n.is_leaf())
            .map(|(k, _)| k.level())
            .max()
            .unwrap_or(0)
    }

    pub fn grid(&self, key: MortonKey) -> Option<&SubGrid> {
        self.nodes.get(&key).and_then(|n| n.grid.as_ref())
    }

    pub fn grid_mut(&mut self, key: MortonKey) -> Option<&mut SubGrid> {
        self.nodes.get_mut(&key).and_then(|n| n.grid.as_mut())
    }

    pub fn take_grid(&mut self, key: MortonKey) -> Option<SubGrid> {
        self.nodes.get_mut(&key).and_then(|n| n.grid.take())
    }

    pub fn put_grid(&mut self, key: MortonKey, grid: SubGrid) {
        let node = self.nodes.get_mut(&key).expect("put_grid on unknown key");
        node.grid = Some(grid);
    }

    pub fn owner(&self, key: MortonKey) -> Option<u32> {
        self.nodes.get(&key).map(|n| n.owner)
    }

    pub fn set_owner(&mut self, key: MortonKey, owner: u32) {
        if let Some(n) = self.nodes.get_mut(&key) {
            n.owner = owner;
        }
    }

    /// Global block coordinates of `key` at its level.
    pub fn coords(&self, key: MortonKey) -> [u64; 3] {
        let (_, i, j, k) = key.decode_in(self.geom.roots);
        [i, j, k]
    }

    pub fn key_at(&self, level: u8, c: [u64; 3]) -> Result<MortonKey, AmrError> {
        MortonKey::encode_in(self.geom.roots, level, c[0], c[1], c[2])
    }

    /// Lower corner of a block.
    pub fn origin(&self, key: MortonKey) -> [f64; 3] {
        let c = self.coords(key);
        let h = self.geom.block_size(key.level());
        std::array::from_fn(|a| c[a] as f64 * h)
    }

    /// Center of storage cell `s` (ghosts included) of block `key`.
    pub fn cell_center(&self, key: MortonKey, s: [usize; 3]) -> [f64; 3] {
        let o = self.origin(key);
        let dx = self.geom.dx(key.level());
        let g = self.geom.ghost as f64;
        std::array::from_fn(|a| o[a] + (s[a] as f64 - g + 0.5) * dx)
    }

    /// Same-level position across `face`, wrapped on periodic axes.
    pub fn across(&self, key: MortonKey, face: Face) -> Option<MortonKey> {
        let mut c = self.coords(key);
        let n = self.geom.blocks(key.level(), face.axis);
        let a = face.axis;
        if face.high {
            if c[a] + 1 == n {
                if self.geom.boundary[a] != Boundary::Periodic {
                    return None;
                }
                c[a] = 0;
            } else {
                c[a] += 1;
            }
        } else if c[a] == 0 {
            if self.geom.boundary[a] != Boundary::Periodic {
                return None;
            }
            c[a] = n - 1;
        } else {
            c[a] -= 1;
        }
        Some(self.key_at(key.level(), c).expect("wrapped coordinate in range"))
    }

    /// Neighbor of leaf `key` across `face`. Fails on a 2:1 violation.
    pub fn neighbor(&self, key: MortonKey, face: Face) -> Result<Neighbor, AmrError> {
        let Some(nk) = self.across(key, face) else {
            return Ok(Neighbor::Boundary);
        };
        match self.nodes.get(&nk) {
            Some(n) if n.is_leaf() => Ok(Neighbor::Same(nk)),
            Some(_) => {
                let kids = facing_children(nk, face.opposite());
                if kids.iter().all(|k| self.is_leaf(*k)) {
                    Ok(Neighbor::Finer(kids))
                } else {
                    Err(AmrError::Unbalanced(key))
                }
            }
            None => match nk.parent() {
                Some(p) if self.is_leaf(p) => Ok(Neighbor::Coarser(p)),
                _ => Err(AmrError::Unbalanced(key)),
            },
        }
    }

    /// Checks face 2:1 balance over every leaf.
    pub fn check_balance(&self) -> Result<(), AmrError> {
        for key in self.leaves() {
            for face in Face::ALL {
                self.neighbor(key, face)?;
            }
        }
        Ok(())
    }

    fn covering_leaf(&self, mut key: MortonKey) -> Option<MortonKey> {
        loop {
            if self.is_leaf(key) {
                return Some(key);
            }
            key = key.parent()?;
        }
    }

    /// Splits a leaf into eight prolonged children, first refining coarser
    /// face neighbors so the tree stays 2:1 balanced.
    pub fn refine(&mut self, key: MortonKey) -> Result<(), AmrError> {
        match self.nodes.get(&key) {
            None => return Err(AmrError::UnknownKey(key)),
            Some(n) if !n.is_leaf() => return Err(AmrError::NotALeaf(key)),
            _ => {}
        }
        if key.level() >= self.geom.max_level {
            return Err(AmrError::AtMaxLevel(key));
        }
        for face in Face::ALL {
            let Some(nk) = self.across(key, face) else {
                continue;
            };
            while !self.contains(nk) {
                let cover = self.covering_leaf(nk).expect("every position has a covering leaf");
                self.refine(cover)?;
            }
        }
        let node = self.nodes.get_mut(&key).expect("leaf present");
        let grid = node.grid.take().expect("leaf carries a grid");
        let owner = node.owner;
        node.children = 0xff;
        for (c, g) in prolong_block(&grid).into_iter().enumerate() {
            self.nodes.insert(
                key.child(c as u8),
                Node {
                    children: 0,
                    owner,
                    grid: Some(g),
                },
            );
        }
        Ok(())
    }

    /// Merges eight leaf children into `parent` by restriction. Rejected when
    /// the result would border a leaf two levels finer.
    pub fn coarsen(&mut self, parent: MortonKey) -> Result<(), AmrError> {
        let kids = parent.children();
        match self.nodes.get(&parent) {
            None => return Err(AmrError::UnknownKey(parent)),
            Some(n) if n.is_leaf() => return Err(AmrError::NotCoarsenable(parent)),
            _ => {}
        }
        if !kids.iter().all(|k| self.is_leaf(*k)) {
            return Err(AmrError::NotCoarsenable(parent));
        }
        for &kid in &kids {
            for face in Face::ALL {
                let Some(nk) = self.across(kid, face) else {
                    continue;
                };
                if nk.parent() == Some(parent) {
                    continue;
                }
                if self.nodes.get(&nk).is_some_and(|n| !n.is_leaf()) {
                    return Err(AmrError::BalanceViolation(parent));
                }
            }
        }
        let grids: Vec<SubGrid> = kids
            .iter()
            .map(|k| self.nodes.remove(k).and_then(|n| n.grid).expect("leaf grid"))
            .collect();
        let merged = restrict_block(std::array::from_fn(|c| &grids[c]));
        let node = self.nodes.get_mut(&parent).expect("parent present");
        node.children = 0;
        node.grid = Some(merged);
        Ok(())
    }

    /// Σ (interior value × cell volume) of variable `v`, leaves in Morton
    /// order.
    pub fn total(&self, v: usize) -> f64 {
        let mut s = 0.0;
        for (k, n) in &self.nodes {
            if let Some(g) = &n.grid {
                s += g.interior_sum(v) * self.geom.dx(k.level()).powi(3);
            }
        }
        s
    }

    /// Σ |value| × cell volume of variable `v`.
    pub fn total_abs(&self, v: usize) -> f64 {
        let mut s = 0.0;
        for (k, n) in &self.nodes {
            if let Some(g) = &n.grid {
                let vol = self.geom.dx(k.level()).powi(3);
                let e = self.geom.edge;
                let gw = self.geom.ghost;
                let mut b = 0.0;
                for kk in gw..gw + e {
                    for j in gw..gw + e {
                        for i in gw..gw + e {
                            b += g.get(v, i, j, kk).abs();
                        }
                    }
                }
                s += b * vol;
            }
        }
        s
    }
}

/// The four children of `key` touching its `face`, in quadrant order.
pub fn facing_children(key: MortonKey, face: Face) -> [MortonKey; 4] {
    let [t1, t2] = face.transverse();
    std::array::from_fn(|q| {
        let h1 = (q & 1) as u8;
        let h2 = (q >> 1) as u8;
        let c = (face.high as u8) << face.axis | h1 << t1 | h2 << t2;
        key.child(c)
    })
}
