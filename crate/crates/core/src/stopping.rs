//! The stopping-time tree `F_{Q*}` with Calderon-Zygmund stopping data, and
//! the checkers for its Carleson packing and stopping-data estimates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cubes::{Hierarchy, NodeId};
use crate::grid::DyadicCube;
use crate::tbsystem::AccretiveSystem;
use crate::{Error, Result};

/// Slack allowed on the deterministic bounds.
pub const BOUND_TOL: f64 = 1e-9;

/// Thresholds of the three stopping conditions.
///
/// The defaults are the ones the estimates are proved for; other values exist
/// only for fault injection. The checkers always test against the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingParams {
    /// Stop when `|<b_F>_Q|` drops below this.
    pub accretivity: f64,
    /// Stop when `<|b_F|^2>_Q > size_factor A^2`.
    pub size_factor: f64,
    /// Stop when `<|f|>_Q > f_factor A alpha(F)`.
    pub f_factor: f64,
    /// A stopping cube records its own average once it exceeds `jump alpha(F)`.
    pub jump: f64,
}

impl Default for StoppingParams {
    fn default() -> Self {
        Self { accretivity: 0.5, size_factor: 16.0, f_factor: 32.0, jump: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopReason {
    pub accretivity: bool,
    pub size: bool,
    pub average: bool,
}

#[derive(Clone, Debug)]
pub struct StoppingTree {
    root: NodeId,
    end: NodeId,
    a: f64,
    params: StoppingParams,
    layers: Vec<Vec<NodeId>>,
    /// Indexed by `id - root`.
    father: Vec<NodeId>,
    b_avg: Vec<f64>,
    b_sq: Vec<f64>,
    f_avg: Vec<f64>,
    f_abs: Vec<f64>,
    alpha: HashMap<NodeId, f64>,
    layer_of: HashMap<NodeId, usize>,
    /// For `F != Q*`, the father whose test stopped it.
    stopped_by: HashMap<NodeId, NodeId>,
    reasons: HashMap<NodeId, StopReason>,
    b: HashMap<NodeId, Vec<f64>>,
    /// The fixed function in hierarchy order, zero off `Q*`.
    f: Vec<f64>,
}

struct Prefix {
    lo: usize,
    b: Vec<f64>,
    b2: Vec<f64>,
}

impl Prefix {
    fn new(h: &Hierarchy, id: NodeId, b: &[f64]) -> Self {
        let n = h.node(id);
        let w = &h.weights()[n.lo..n.hi];
        let mut pb = vec![0.0; b.len() + 1];
        let mut pb2 = vec![0.0; b.len() + 1];
        for i in 0..b.len() {
            pb[i + 1] = pb[i] + b[i] * w[i];
            pb2[i + 1] = pb2[i] + b[i] * b[i] * w[i];
        }
        Self { lo: n.lo, b: pb, b2: pb2 }
    }

    fn averages(&self, h: &Hierarchy, id: NodeId) -> (f64, f64) {
        let n = h.node(id);
        let (i, j) = (n.lo - self.lo, n.hi - self.lo);
        ((self.b[j] - self.b[i]) / n.mass, (self.b2[j] - self.b2[i]) / n.mass)
    }
}

impl StoppingTree {
    /// Builds `F_{Q*}` for `f` (given in measure atom order) layer by layer.
    pub fn build(
        h: &Hierarchy,
        system: &mut AccretiveSystem,
        f: &[f64],
        qstar: NodeId,
        params: StoppingParams,
    ) -> Result<Self> {
        if f.len() != h.measure().len() {
            return Err(Error::Contract(format!("f has {} values for {} atoms", f.len(), h.measure().len())));
        }
        let local = h.to_local(f);
        let q = h.node(qstar);
        if local.iter().enumerate().any(|(p, &v)| v != 0.0 && (p < q.lo || p >= q.hi)) {
            return Err(Error::Contract(format!("f is not supported in Q* = {:?}", q.cube)));
        }
        let end = q.end;
        let count = end - qstar;
        let a = system.a();
        let mut tree = Self {
            root: qstar,
            end,
            a,
            params,
            layers: Vec::new(),
            father: vec![usize::MAX; count],
            b_avg: vec![0.0; count],
            b_sq: vec![0.0; count],
            f_avg: vec![0.0; count],
            f_abs: vec![0.0; count],
            alpha: HashMap::new(),
            layer_of: HashMap::new(),
            stopped_by: HashMap::new(),
            reasons: HashMap::new(),
            b: HashMap::new(),
            f: local,
        };
        for id in qstar..end {
            tree.f_avg[id - qstar] = h.average(id, &tree.f);
            tree.f_abs[id - qstar] = h.average_abs(id, &tree.f);
        }
        tree.alpha.insert(qstar, tree.f_abs[0]);
        tree.layer_of.insert(qstar, 0);
        let max_layers = (h.grid().fine() + h.grid().coarse() + 1) as usize;
        let mut layer = vec![qstar];
        while !layer.is_empty() {
            let j = tree.layers.len();
            if j >= max_layers {
                return Err(Error::Invariant(format!(
                    "stopping recursion reached layer {j}, beyond the {max_layers} generations of the window"
                )));
            }
            let mut next = Vec::new();
            for &fid in &layer {
                let b = system.materialize(h, fid).to_vec();
                let prefix = Prefix::new(h, fid, &b);
                let (ba, bs) = prefix.averages(h, fid);
                tree.assign(fid, fid, ba, bs);
                let alpha_f = tree.alpha[&fid];
                let mut stack: Vec<NodeId> = h.node(fid).children.iter().rev().copied().collect();
                while let Some(qid) = stack.pop() {
                    let (ba, bs) = prefix.averages(h, qid);
                    let fa = tree.f_abs[qid - qstar];
                    let reason = StopReason {
                        accretivity: ba.abs() < params.accretivity,
                        size: bs > params.size_factor * a * a,
                        average: fa > params.f_factor * a * alpha_f,
                    };
                    if reason.accretivity || reason.size || reason.average {
                        let alpha = if fa >= params.jump * alpha_f { fa } else { alpha_f };
                        tree.alpha.insert(qid, alpha);
                        tree.layer_of.insert(qid, j + 1);
                        tree.stopped_by.insert(qid, fid);
                        tree.reasons.insert(qid, reason);
                        next.push(qid);
                    } else {
                        tree.assign(qid, fid, ba, bs);
                        stack.extend(h.node(qid).children.iter().rev());
                    }
                }
                tree.b.insert(fid, b);
            }
            next.sort_unstable();
            tree.layers.push(layer);
            layer = next;
        }
        Ok(tree)
    }

    fn assign(&mut self, id: NodeId, father: NodeId, b_avg: f64, b_sq: f64) {
        let i = id - self.root;
        self.father[i] = father;
        self.b_avg[i] = b_avg;
        self.b_sq[i] = b_sq;
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// The node ids of `Q*` and its descendants.
    pub fn span(&self) -> std::ops::Range<NodeId> {
        self.root..self.end
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn tau(&self) -> f64 {
        1.0 - 1.0 / (8.0 * self.a)
    }

    pub fn params(&self) -> StoppingParams {
        self.params
    }

    /// `F^0, F^1, ...`, each sorted by node id.
    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    /// All stopping cubes in preorder.
    pub fn stopping(&self) -> Vec<NodeId> {
        let mut all: Vec<NodeId> = self.layers.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn is_stopping(&self, id: NodeId) -> bool {
        self.alpha.contains_key(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.root <= id && id < self.end
    }

    /// `Q^a`.
    pub fn father(&self, id: NodeId) -> NodeId {
        self.father[id - self.root]
    }

    /// `<b_{Q^a}>_Q`.
    pub fn b_avg(&self, id: NodeId) -> f64 {
        self.b_avg[id - self.root]
    }

    /// `<|b_{Q^a}|^2>_Q`.
    pub fn b_sq(&self, id: NodeId) -> f64 {
        self.b_sq[id - self.root]
    }

    /// `<f>_Q`.
    pub fn f_avg(&self, id: NodeId) -> f64 {
        self.f_avg[id - self.root]
    }

    /// `<|f|>_Q`.
    pub fn f_abs(&self, id: NodeId) -> f64 {
        self.f_abs[id - self.root]
    }

    pub fn alpha(&self, f: NodeId) -> Option<f64> {
        self.alpha.get(&f).copied()
    }

    pub fn layer_of(&self, f: NodeId) -> Option<usize> {
        self.layer_of.get(&f).copied()
    }

    pub fn stopped_by(&self, f: NodeId) -> Option<NodeId> {
        self.stopped_by.get(&f).copied()
    }

    pub fn reason(&self, f: NodeId) -> Option<StopReason> {
        self.reasons.get(&f).copied()
    }

    /// `b_F` on `F`'s atom run.
    pub fn b(&self, f: NodeId) -> &[f64] {
        &self.b[&f]
    }

    /// `b_F` at hierarchy position `p` (zero off `F`).
    pub fn b_at(&self, h: &Hierarchy, f: NodeId, p: usize) -> f64 {
        let n = h.node(f);
        if p >= n.lo && p < n.hi {
            self.b[&f][p - n.lo]
        } else {
            0.0
        }
    }

    /// The fixed function in hierarchy order.
    pub fn f_local(&self) -> &[f64] {
        &self.f
    }

    pub fn export(&self, h: &Hierarchy) -> TreeExport {
        TreeExport {
            root: h.node(self.root).cube.clone(),
            a: self.a,
            tau: self.tau(),
            layers: self.layers.iter().map(|l| l.iter().map(|&id| h.node(id).cube.clone()).collect()).collect(),
            alpha: self.stopping().into_iter().map(|id| (h.node(id).cube.clone(), self.alpha[&id])).collect(),
            fathers: self
                .span()
                .map(|id| (h.node(id).cube.clone(), h.node(self.father(id)).cube.clone()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub root: DyadicCube,
    pub a: f64,
    pub tau: f64,
    pub layers: Vec<Vec<DyadicCube>>,
    pub alpha: Vec<(DyadicCube, f64)>,
    pub fathers: Vec<(DyadicCube, DyadicCube)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub table: Vec<(DyadicCube, f64)>,
}

/// `max_Q sum_{F in F, F subset Q} mu(F) / mu(Q)` over all `Q` in `Q*`.
pub fn carleson_check(tree: &StoppingTree, h: &Hierarchy) -> CarlesonReport {
    let span = tree.span();
    let mut acc = vec![0.0; span.len()];
    for id in span.clone().rev() {
        let node = h.node(id);
        let own = if tree.is_stopping(id) { node.mass } else { 0.0 };
        acc[id - tree.root] = own + node.children.iter().map(|&c| acc[c - tree.root]).sum::<f64>();
    }
    let table: Vec<(DyadicCube, f64)> =
        span.map(|id| (h.node(id).cube.clone(), acc[id - tree.root] / h.node(id).mass)).collect();
    let max_ratio = table.iter().map(|r| r.1).fold(0.0, f64::max);
    let bound = 1.0 + 8.0 * tree.a;
    CarlesonReport { max_ratio, bound, pass: max_ratio <= bound + BOUND_TOL, table }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub father: DyadicCube,
    pub layer: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDecayReport {
    pub tau: f64,
    pub max_ratio: f64,
    pub pass: bool,
    pub rows: Vec<LayerRow>,
}

/// Mass of each father's stopping children relative to the father.
pub fn layer_decay_check(tree: &StoppingTree, h: &Hierarchy) -> LayerDecayReport {
    let mut kids: HashMap<NodeId, f64> = HashMap::new();
    for (&s, &f) in &tree.stopped_by {
        *kids.entry(f).or_default() += h.node(s).mass;
    }
    let rows: Vec<LayerRow> = tree
        .stopping()
        .into_iter()
        .map(|f| LayerRow {
            father: h.node(f).cube.clone(),
            layer: tree.layer_of[&f],
            ratio: kids.get(&f).copied().unwrap_or(0.0) / h.node(f).mass,
        })
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let tau = tree.tau();
    LayerDecayReport { tau, max_ratio, pass: max_ratio <= tau + BOUND_TOL, rows }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    /// `min |<b_{Q^a}>_Q|` below the frontier.
    pub min_accretivity: f64,
    /// `max <|b_{Q^a}|^2>_Q / A^2`.
    pub max_size: f64,
    /// `max <|f|>_Q / (A alpha(Q^a))`.
    pub max_average: f64,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Checks the tree against the unmodified stopping rules: father coherence,
/// the negated conditions below the frontier, that every stopping cube meets
/// a condition and is maximal, and the two-case rule for `alpha`.
pub fn frontier_check(tree: &StoppingTree, h: &Hierarchy) -> FrontierReport {
    let p = StoppingParams::default();
    let a = tree.a;
    let mut v = Vec::new();
    let (mut min_acc, mut max_size, mut max_avg) = (f64::INFINITY, 0.0f64, 0.0f64);
    for id in tree.span() {
        let cube = &h.node(id).cube;
        let fa = tree.father(id);
        if fa == usize::MAX || !h.contains(fa, id) || !tree.is_stopping(fa) {
            v.push(format!("{cube:?}: father is not a containing stopping cube"));
            continue;
        }
        if tree.is_stopping(id) != (fa == id) {
            v.push(format!("{cube:?}: stopping cube whose father is not itself"));
        }
        // Minimality: no stopping cube strictly between Q and Q^a.
        let mut up = if id == fa { None } else { h.node(id).parent };
        while let Some(u) = up {
            if u == fa {
                break;
            }
            if tree.is_stopping(u) {
                v.push(format!("{cube:?}: stopping cube {:?} lies below its father", h.node(u).cube));
                break;
            }
            up = h.node(u).parent;
        }
        let (ba, bs, fabs) = (tree.b_avg(id), tree.b_sq(id), tree.f_abs(id));
        let alpha = tree.alpha[&fa];
        if id != fa {
            min_acc = min_acc.min(ba.abs());
            max_size = max_size.max(bs / (a * a));
            if alpha > 0.0 {
                max_avg = max_avg.max(fabs / (a * alpha));
            }
            if ba.abs() < p.accretivity {
                v.push(format!("{cube:?}: |<b_F>_Q| = {} < 1/2 below the frontier", ba.abs()));
            }
            if bs > p.size_factor * a * a {
                v.push(format!("{cube:?}: <|b_F|^2>_Q = {bs} > 16A^2 below the frontier"));
            }
            if fabs > p.f_factor * a * alpha {
                v.push(format!("{cube:?}: <|f|>_Q = {fabs} > 32A alpha(F) below the frontier"));
            }
        }
    }
    for f in tree.stopping() {
        let Some(s) = tree.stopped_by(f) else { continue };
        let cube = &h.node(f).cube;
        let b = tree.b(s);
        let sn = h.node(s);
        let fnode = h.node(f);
        let w = &h.weights()[fnode.lo..fnode.hi];
        let part = &b[fnode.lo - sn.lo..fnode.hi - sn.lo];
        let ba = part.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() / fnode.mass;
        let bs = part.iter().zip(w).map(|(x, y)| x * x * y).sum::<f64>() / fnode.mass;
        let fabs = tree.f_abs(f);
        let alpha_s = tree.alpha[&s];
        if !(ba.abs() < p.accretivity || bs > p.size_factor * a * a || fabs > p.f_factor * a * alpha_s) {
            v.push(format!("{cube:?}: stopping cube meets none of the three conditions"));
        }
        let alpha = tree.alpha[&f];
        let expected = if fabs >= p.jump * alpha_s { fabs } else { alpha_s };
        if alpha != expected {
            v.push(format!("{cube:?}: alpha = {alpha}, rule gives {expected}"));
        }
        if h.node(f).parent.map(|u| tree.father(u)) != Some(s) {
            v.push(format!("{cube:?}: not maximal below its stopping father"));
        }
    }
    let pass = v.is_empty();
    FrontierReport {
        min_accretivity: if min_acc.is_finite() { min_acc } else { 1.0 },
        max_size,
        max_average: max_avg,
        violations: v,
        pass,
    }
}

/// `M g(x) = max over window cubes Q containing x of <|g|>_Q`, in atom order.
pub fn dyadic_maximal(h: &Hierarchy, g: &[f64]) -> Vec<f64> {
    let local = h.to_local(g);
    let mut best = vec![0.0; h.len()];
    for id in 0..h.len() {
        let own = h.average_abs(id, &local);
        best[id] = match h.node(id).parent {
            Some(p) => own.max(best[p]),
            None => own,
        };
    }
    let out: Vec<f64> = (0..local.len()).map(|p| best[h.leaf_at(p)]).collect();
    h.to_atoms(&out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzReport {
    /// `sum_F alpha(F)^2 mu(F)`.
    pub lhs: f64,
    /// `||f||^2` on `Q*`.
    pub rhs_scale: f64,
    pub ratio: f64,
    /// `(4/3)(1+8A) ||M(f 1_{Q*})||^2`.
    pub majorant: f64,
    pub majorant_pass: bool,
}

pub fn cz_data_check(tree: &StoppingTree, h: &Hierarchy) -> Result<CzReport> {
    let lhs: f64 = tree.stopping().iter().map(|&f| tree.alpha[&f].powi(2) * h.node(f).mass).sum();
    let w = h.weights();
    let rhs: f64 = tree.f.iter().zip(w).map(|(v, w)| v * v * w).sum();
    if rhs == 0.0 && lhs != 0.0 {
        return Err(Error::Invariant(format!("stopping data {lhs} for a function of zero norm")));
    }
    let mf = dyadic_maximal(h, &h.to_atoms(&tree.f));
    let mf_sq = h.measure().norm_sq(&mf);
    let majorant = 4.0 / 3.0 * (1.0 + 8.0 * tree.a) * mf_sq;
    Ok(CzReport {
        lhs,
        rhs_scale: rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        majorant,
        majorant_pass: lhs <= majorant * (1.0 + BOUND_TOL),
    })
}
