//! The occupied cubes of a measure in a grid.
//!
//! Atoms are reordered so that every cube's atoms form one contiguous run,
//! and nodes are numbered in depth-first preorder, so a cube's descendants are
//! the contiguous id range `id..node.end`. Cubes of zero mass are never
//! materialized; every downstream average treats them as transparent.

use std::collections::HashMap;

use crate::grid::{DyadicCube, ShiftedGrid};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct Node {
    pub cube: DyadicCube,
    /// Atom run `lo..hi` in hierarchy order.
    pub lo: usize,
    pub hi: usize,
    pub mass: f64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// One past the last descendant id.
    pub end: NodeId,
}

impl Node {
    pub fn gen(&self) -> i32 {
        self.cube.gen
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn side(&self) -> f64 {
        self.cube.side()
    }
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    measure: DiscreteMeasure,
    grid: ShiftedGrid,
    /// `order[p]` is the atom at hierarchy position `p`.
    order: Vec<usize>,
    /// Inverse of `order`.
    position: Vec<usize>,
    weights: Vec<f64>,
    nodes: Vec<Node>,
    roots: Vec<NodeId>,
    by_cube: HashMap<DyadicCube, NodeId>,
    /// Bottom-generation node of each hierarchy position.
    leaf: Vec<NodeId>,
}

impl Hierarchy {
    /// Builds the hierarchy from generation `-s` to `J`.
    ///
    /// Fails unless every bottom-generation cube holds at most one atom: the
    /// twisted averages collapse to point values only on singletons, which is
    /// what makes reconstruction exact at finite depth.
    pub fn new(measure: &DiscreteMeasure, grid: &ShiftedGrid) -> Result<Self> {
        if measure.dim() != grid.dim() {
            return Err(Error::Parameter("measure and grid dimensions differ".into()));
        }
        if measure.fine() != grid.fine() || measure.coarse() != grid.coarse() {
            return Err(Error::Parameter(format!(
                "measure window (J={}, s={}) differs from grid window (J={}, s={})",
                measure.fine(),
                measure.coarse(),
                grid.fine(),
                grid.coarse()
            )));
        }
        let top = grid.top_gen();
        let bottom = grid.bottom_gen();
        let gens = (bottom - top + 1) as usize;
        let n = measure.len();
        let keys: Vec<Vec<DyadicCube>> = (0..n)
            .map(|a| {
                let leaf = grid.cube_containing(measure.point(a), bottom);
                let mut chain = Vec::with_capacity(gens);
                let mut q = Some(leaf);
                while let Some(c) = q {
                    q = grid.parent(&c);
                    chain.push(c);
                }
                chain.reverse();
                chain
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            keys[a].iter().map(|c| &c.index).cmp(keys[b].iter().map(|c| &c.index))
        });
        let mut position = vec![0; n];
        for (p, &a) in order.iter().enumerate() {
            position[a] = p;
        }
        let weights: Vec<f64> = order.iter().map(|&a| measure.mass(a)).collect();

        let mut h = Self {
            measure: measure.clone(),
            grid: grid.clone(),
            order,
            position,
            weights,
            nodes: Vec::new(),
            roots: Vec::new(),
            by_cube: HashMap::new(),
            leaf: vec![usize::MAX; n],
        };
        let mut lo = 0;
        while lo < n {
            let root = h.build(&keys, lo, n, 0, None)?;
            lo = h.nodes[root].hi;
            h.roots.push(root);
        }
        Ok(h)
    }

    /// Creates the node for the run starting at `lo` at depth `level`
    /// below the top generation, recursing into its children.
    fn build(
        &mut self,
        keys: &[Vec<DyadicCube>],
        lo: usize,
        limit: usize,
        level: usize,
        parent: Option<NodeId>,
    ) -> Result<NodeId> {
        let cube = keys[self.order[lo]][level].clone();
        let mut hi = lo + 1;
        while hi < limit && keys[self.order[hi]][level] == cube {
            hi += 1;
        }
        let id = self.nodes.len();
        let mass = self.weights[lo..hi].iter().sum();
        self.nodes.push(Node { cube: cube.clone(), lo, hi, mass, parent, children: Vec::new(), end: id + 1 });
        self.by_cube.insert(cube.clone(), id);
        if level + 1 < keys[self.order[lo]].len() {
            let mut p = lo;
            while p < hi {
                let child = self.build(keys, p, hi, level + 1, Some(id))?;
                p = self.nodes[child].hi;
                self.nodes[id].children.push(child);
            }
        } else {
            if hi - lo > 1 {
                return Err(Error::Parameter(format!(
                    "bottom cube {:?} holds {} atoms; refine J so that each holds at most one",
                    cube,
                    hi - lo
                )));
            }
            self.leaf[lo] = id;
        }
        self.nodes[id].end = self.nodes.len();
        Ok(id)
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn grid(&self) -> &ShiftedGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Occupied top-generation cubes.
    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn find(&self, cube: &DyadicCube) -> Option<NodeId> {
        self.by_cube.get(cube).copied()
    }

    /// Atom indices (into the measure) of a node.
    pub fn atoms(&self, id: NodeId) -> &[usize] {
        let n = &self.nodes[id];
        &self.order[n.lo..n.hi]
    }

    /// Atom masses in hierarchy order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Atom at hierarchy position `p`.
    pub fn atom_at(&self, p: usize) -> usize {
        self.order[p]
    }

    pub fn position_of(&self, atom: usize) -> usize {
        self.position[atom]
    }

    /// Reorders a function on atoms into hierarchy order.
    pub fn to_local(&self, f: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&a| f[a]).collect()
    }

    /// Inverse of [`Hierarchy::to_local`].
    pub fn to_atoms(&self, local: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; local.len()];
        for (p, &a) in self.order.iter().enumerate() {
            out[a] = local[p];
        }
        out
    }

    /// Point of the atom at hierarchy position `p`.
    pub fn point_at(&self, p: usize) -> &[f64] {
        self.measure.point(self.order[p])
    }

    /// Bottom-generation node at hierarchy position `p`.
    pub fn leaf_at(&self, p: usize) -> NodeId {
        self.leaf[p]
    }

    pub fn contains(&self, outer: NodeId, inner: NodeId) -> bool {
        outer <= inner && inner < self.nodes[outer].end
    }

    /// Descendants of `id`, itself included, in preorder.
    pub fn subtree(&self, id: NodeId) -> std::ops::Range<NodeId> {
        id..self.nodes[id].end
    }

    /// `Q^{(k)}` as a node.
    pub fn ancestor(&self, id: NodeId, k: u32) -> Option<NodeId> {
        let mut cur = id;
        for _ in 0..k {
            cur = self.nodes[cur].parent?;
        }
        Some(cur)
    }

    /// Top-generation ancestor.
    pub fn root_of(&self, id: NodeId) -> NodeId {
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            cur = p;
        }
        cur
    }

    /// Nodes of one generation, in preorder.
    pub fn generation(&self, gen: i32) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].gen() == gen).collect()
    }

    /// `mu`-average of a hierarchy-ordered function over a node; zero on empty nodes.
    pub fn average(&self, id: NodeId, local: &[f64]) -> f64 {
        let n = &self.nodes[id];
        if n.mass == 0.0 {
            return 0.0;
        }
        dot(&local[n.lo..n.hi], &self.weights[n.lo..n.hi]) / n.mass
    }

    pub fn average_abs(&self, id: NodeId, local: &[f64]) -> f64 {
        let n = &self.nodes[id];
        if n.mass == 0.0 {
            return 0.0;
        }
        local[n.lo..n.hi].iter().zip(&self.weights[n.lo..n.hi]).map(|(v, w)| v.abs() * w).sum::<f64>()
            / n.mass
    }

    /// Euclidean distance between two node cubes.
    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.grid.distance(&self.nodes[a].cube, &self.nodes[b].cube)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
