use serde::{Deserialize, Serialize};

use super::ls_slope;
use crate::cubes::{Hierarchy, NodeId};
use crate::martingale::{delta, norm_sq_on};
use crate::operators::{Quadrature, TimeKernel};
use crate::stopping::StoppingTree;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: u32,
    /// Max over Whitney nodes of the left-hand side.
    pub value: f64,
    /// The normalization the value is divided by.
    pub scale: f64,
    pub ratio: f64,
    /// Rows with `0/0` or a vanishing value are left out of the fit.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub cube: crate::grid::DyadicCube,
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log2(ratio)` against `k`.
    pub slope: Option<f64>,
}

impl DecayTable {
    fn new(h: &Hierarchy, r: NodeId, rows: Vec<DecayRow>) -> Self {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            rows.iter().filter(|r| !r.skipped).map(|r| (r.k as f64, r.ratio.log2())).unzip();
        Self { cube: h.node(r).cube.clone(), slope: ls_slope(&xs, &ys), rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,value,scale,ratio,skipped\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:e},{:e},{}\n", r.k, r.value, r.scale, r.ratio, r.skipped));
        }
        s
    }
}

/// `<|b_{(R^(k))^a}|>` on the ancestors of `R^(k)` against `4A`, and on the
/// father itself against `A^(1/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Es2Ingredient {
    pub max_over_4a: f64,
    pub max_at_father_over_sqrt_a: f64,
    pub pass: bool,
}

/// The good cube of generation `gen` inside `qstar` whose centre is closest
/// to the centre of `qstar`; ties go to the smaller node id.
pub fn central_good_cube(h: &Hierarchy, qstar: NodeId, gen: i32) -> Option<NodeId> {
    let grid = h.grid();
    let centre = |id: NodeId| -> Vec<f64> {
        let g = grid.geometry(&h.node(id).cube);
        g.lower.iter().zip(&g.upper).map(|(a, b)| (a + b) / 2.0).collect()
    };
    let c0 = centre(qstar);
    h.subtree(qstar)
        .filter(|&id| h.node(id).gen() == gen && grid.is_good(&h.node(id).cube))
        .map(|id| (crate::measure::dist(&centre(id), &c0), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|p| p.1)
}

/// Validates `R` and returns its ancestors `R^(0..=K)` inside `Q*`.
fn chain(h: &Hierarchy, tree: &StoppingTree, r: NodeId, ks: &std::ops::RangeInclusive<u32>) -> Result<Vec<NodeId>> {
    let grid = h.grid();
    if !tree.contains(r) {
        return Err(Error::Contract(format!("{:?} is not inside Q*", h.node(r).cube)));
    }
    if !grid.is_good(&h.node(r).cube) {
        return Err(Error::Contract(format!("{:?} is not good", h.node(r).cube)));
    }
    if *ks.start() < grid.r() + 1 {
        return Err(Error::Domain(format!("k = {} is below r + 1 = {}", ks.start(), grid.r() + 1)));
    }
    let kmax = (h.node(r).gen() - h.node(tree.root()).gen()) as u32;
    if *ks.end() > kmax {
        return Err(Error::Domain(format!("k = {} exceeds the {kmax} generations up to Q*", ks.end())));
    }
    let mut anc = vec![r];
    while *anc.last().unwrap() != tree.root() {
        anc.push(h.node(*anc.last().unwrap()).parent.expect("inside Q*"));
    }
    Ok(anc)
}

/// Max over `(x,t)` in `W_R` of `|sum_{p in C} s_t(x, y_p) v_p mu_p|` for `v`
/// given on the run of `host`, restricted to positions outside `hole`.
fn max_theta(kernel: &dyn TimeKernel, h: &Hierarchy, r: NodeId, host: NodeId, v: &[f64], hole: NodeId, quad: &Quadrature) -> f64 {
    let (rn, hn, on) = (h.node(r), h.node(host), h.node(hole));
    let mut best = 0.0f64;
    for p in rn.lo..rn.hi {
        let x = h.point_at(p);
        for (t, _) in quad.whitney(rn.gen()) {
            let s: f64 = (hn.lo..hn.hi)
                .filter(|&q| q < on.lo || q >= on.hi)
                .map(|q| kernel.eval(t, x, h.point_at(q)) * v[q - hn.lo] * h.weights()[q])
                .sum();
            best = best.max(s.abs());
        }
    }
    best
}

/// `|theta_t (1_{R^(k) \ R^(k-1)} Delta_{R^(k)} f)(x)|` against
/// `mu(R^(k-1))^(-1/2) ||Delta_{R^(k)} f||`, per `k`.
pub fn es1_check(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    tree: &StoppingTree,
    r: NodeId,
    ks: std::ops::RangeInclusive<u32>,
    quad: &Quadrature,
) -> Result<DecayTable> {
    let anc = chain(h, tree, r, &ks)?;
    let mut rows = Vec::new();
    for k in ks {
        let (q, prev) = (anc[k as usize], anc[k as usize - 1]);
        let d = delta(tree, h, tree.f_local(), q)?;
        let norm = norm_sq_on(h, q, &d).sqrt();
        if norm == 0.0 {
            rows.push(DecayRow { k, value: 0.0, scale: 0.0, ratio: 0.0, skipped: true });
            continue;
        }
        let value = max_theta(kernel, h, r, q, &d, prev, quad);
        let scale = norm / h.node(prev).mass.sqrt();
        let ratio = value / scale;
        rows.push(DecayRow { k, value, scale, ratio, skipped: ratio == 0.0 });
    }
    Ok(DecayTable::new(h, r, rows))
}

/// `|theta_t (1_{(R^(k-1))^c} b_{(R^(k))^a})(x)|` per `k`, with the averaged
/// size bound on `b` it relies on.
pub fn es2_check(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    tree: &StoppingTree,
    r: NodeId,
    ks: std::ops::RangeInclusive<u32>,
    quad: &Quadrature,
) -> Result<(DecayTable, Es2Ingredient)> {
    let anc = chain(h, tree, r, &ks)?;
    let a = tree.a();
    let mut rows = Vec::new();
    let (mut over_4a, mut at_father) = (0.0f64, 0.0f64);
    for k in ks {
        let (q, prev) = (anc[k as usize], anc[k as usize - 1]);
        let fa = tree.father(q);
        let b = tree.b(fa);
        let value = max_theta(kernel, h, r, fa, b, prev, quad);
        rows.push(DecayRow { k, value, scale: 1.0, ratio: value, skipped: value == 0.0 });
        let fnode = h.node(fa);
        for &up in &anc[k as usize..] {
            let un = h.node(up);
            let (lo, hi) = (un.lo.max(fnode.lo), un.hi.min(fnode.hi));
            let l1: f64 = (lo..hi).map(|p| b[p - fnode.lo].abs() * h.weights()[p]).sum();
            let avg = l1 / un.mass;
            over_4a = over_4a.max(avg / (4.0 * a));
            if up == fa {
                at_father = at_father.max(avg / a.sqrt());
            }
        }
    }
    let tol = 1.0 + crate::stopping::BOUND_TOL;
    let ing = Es2Ingredient {
        max_over_4a: over_4a,
        max_at_father_over_sqrt_a: at_father,
        pass: over_4a <= tol && at_father <= tol,
    };
    Ok((DecayTable::new(h, r, rows), ing))
}
