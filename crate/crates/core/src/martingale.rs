//! Twisted martingale differences `Delta_Q` adapted to a stopping tree.

use serde::{Deserialize, Serialize};

use crate::cubes::{Hierarchy, NodeId};
use crate::stopping::StoppingTree;
use crate::{Error, Result};

/// Reconstruction tolerance, relative to `max |g|`.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

/// `<g>_Q / <b_{Q^a}>_Q`, the coefficient of `b_{Q^a}` on `Q`.
pub fn twisted_average(tree: &StoppingTree, h: &Hierarchy, id: NodeId, g_local: &[f64]) -> Result<f64> {
    let d = tree.b_avg(id);
    if d.abs() < 0.5 {
        return Err(Error::Invariant(format!(
            "|<b_(Q^a)>_Q| = {} < 1/2 on {:?}; the stopping tree is inconsistent",
            d.abs(),
            h.node(id).cube
        )));
    }
    Ok(h.average(id, g_local) / d)
}

/// `Delta_Q g` on `Q`'s atom run; `g` in hierarchy order.
pub fn delta(tree: &StoppingTree, h: &Hierarchy, g_local: &[f64], id: NodeId) -> Result<Vec<f64>> {
    let node = h.node(id);
    let mut out = vec![0.0; node.len()];
    if node.children.is_empty() {
        return Ok(out);
    }
    let fa = tree.father(id);
    let c = twisted_average(tree, h, id, g_local)?;
    for &child in &node.children {
        let cn = h.node(child);
        let cf = tree.father(child);
        let cc = twisted_average(tree, h, child, g_local)?;
        for p in cn.lo..cn.hi {
            out[p - node.lo] = cc * tree.b_at(h, cf, p) - c * tree.b_at(h, fa, p);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    root: NodeId,
    /// `(Q, Delta_Q g)` for every non-bottom `Q` in preorder.
    terms: Vec<(NodeId, Vec<f64>)>,
    root_term: Vec<f64>,
    g: Vec<f64>,
    residual: f64,
}

impl Decomposition {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn terms(&self) -> &[(NodeId, Vec<f64>)] {
        &self.terms
    }

    /// `<g>_{Q*} b_{Q*}` on `Q*`'s run.
    pub fn root_term(&self) -> &[f64] {
        &self.root_term
    }

    pub fn g_local(&self) -> &[f64] {
        &self.g
    }

    /// `max_a |g_a - reconstruction_a| / max_a |g_a|`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn term(&self, id: NodeId) -> Option<&[f64]> {
        self.terms.binary_search_by_key(&id, |t| t.0).ok().map(|i| self.terms[i].1.as_slice())
    }

    /// `sum_Q Delta_Q g + E g` in hierarchy order.
    pub fn reconstruct(&self, h: &Hierarchy) -> Vec<f64> {
        let mut out = vec![0.0; self.g.len()];
        let r = h.node(self.root);
        for (p, v) in (r.lo..r.hi).zip(&self.root_term) {
            out[p] += v;
        }
        for (id, t) in &self.terms {
            let n = h.node(*id);
            for (p, v) in (n.lo..n.hi).zip(t) {
                out[p] += v;
            }
        }
        out
    }

    /// `(cube, ||Delta_Q g||^2)` rows as CSV.
    pub fn summary_csv(&self, h: &Hierarchy) -> String {
        let mut s = String::from("gen,index,norm_sq\n");
        for (id, t) in &self.terms {
            let n = h.node(*id);
            let idx: Vec<String> = n.cube.index.iter().map(|k| k.to_string()).collect();
            s.push_str(&format!("{},{},{:e}\n", n.gen(), idx.join(" "), norm_sq_on(h, *id, t)));
        }
        s
    }
}

/// `||v||^2` for a vector on a node's atom run.
pub fn norm_sq_on(h: &Hierarchy, id: NodeId, v: &[f64]) -> f64 {
    let n = h.node(id);
    v.iter().zip(&h.weights()[n.lo..n.hi]).map(|(x, w)| x * x * w).sum()
}

/// Expands `g 1_{Q*}` (given in atom order) into twisted martingale differences.
pub fn decompose(tree: &StoppingTree, h: &Hierarchy, g: &[f64]) -> Result<Decomposition> {
    if g.len() != h.measure().len() {
        return Err(Error::Contract(format!("g has {} values for {} atoms", g.len(), h.measure().len())));
    }
    let root = tree.root();
    let rn = h.node(root);
    let mut local = h.to_local(g);
    for (p, v) in local.iter_mut().enumerate() {
        if p < rn.lo || p >= rn.hi {
            *v = 0.0;
        }
    }
    let terms = tree
        .span()
        .filter(|&id| !h.node(id).children.is_empty())
        .map(|id| delta(tree, h, &local, id).map(|t| (id, t)))
        .collect::<Result<Vec<_>>>()?;
    let c = twisted_average(tree, h, root, &local)?;
    let root_term: Vec<f64> = tree.b(root).iter().map(|b| c * b).collect();
    let mut d = Decomposition { root, terms, root_term, g: local, residual: 0.0 };
    let rec = d.reconstruct(h);
    let scale = d.g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = rec.iter().zip(&d.g).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    d.residual = if scale > 0.0 { err / scale } else { err };
    if !(d.residual <= RECONSTRUCTION_TOL) {
        return Err(Error::Invariant(format!("reconstruction residual {:e} exceeds {RECONSTRUCTION_TOL:e}", d.residual)));
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfReport {
    pub sum_sq: f64,
    pub norm_sq: f64,
    pub ratio: f64,
}

/// `sum_{Q subset Q*} ||Delta_Q f||^2` against `||f||^2_{L^2(Q*)}` for the tree's own `f`.
pub fn sf_estimate(tree: &StoppingTree, h: &Hierarchy, f: &[f64]) -> Result<SfReport> {
    if h.to_local(f) != tree.f_local() {
        return Err(Error::Contract("the square function estimate holds only for the function the tree was built with".into()));
    }
    let d = decompose(tree, h, f)?;
    Ok(sf_from(&d, h))
}

pub fn sf_from(d: &Decomposition, h: &Hierarchy) -> SfReport {
    let sum_sq: f64 = d.terms.iter().map(|(id, t)| norm_sq_on(h, *id, t)).sum();
    let norm_sq: f64 = d.g.iter().zip(h.weights()).map(|(v, w)| v * v * w).sum();
    SfReport { sum_sq, norm_sq, ratio: if norm_sq > 0.0 { sum_sq / norm_sq } else { 0.0 } }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootTermReport {
    /// `sum_F ||b_F||^2`.
    pub lhs: f64,
    /// `A (1 + 8A) mu(Q*)`.
    pub bound: f64,
    pub pass: bool,
}

pub fn root_term_check(tree: &StoppingTree, h: &Hierarchy) -> RootTermReport {
    let lhs: f64 = tree.stopping().into_iter().map(|f| norm_sq_on(h, f, tree.b(f))).sum();
    let a = tree.a();
    let bound = a * (1.0 + 8.0 * a) * h.node(tree.root()).mass;
    RootTermReport { lhs, bound, pass: lhs <= bound * (1.0 + crate::stopping::BOUND_TOL) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ShiftedGrid;
    use crate::measure::DiscreteMeasure;
    use crate::rng;
    use crate::stopping::StoppingParams;
    use crate::tbsystem::{AccretiveSystem, RandomFlips};
    use proptest::prelude::{prop_assert, proptest};
    use rand::Rng;

    fn setup(seed: u64, n: usize) -> (Hierarchy, NodeId) {
        let mut g = rng::stream(seed, 11);
        let j = (n as f64).log2().ceil() as u32 + 2;
        let atoms =
            (0..n).map(|k| (vec![(k as f64 + g.gen_range(0.0..0.7)) / n as f64], g.gen_range(0.05..3.0))).collect();
        let mu = DiscreteMeasure::new(1, atoms, 1.0, j, 0).unwrap();
        let grid = ShiftedGrid::sample(seed, 1, 0, j, 3, 0.25).unwrap();
        let h = Hierarchy::new(&mu, &grid).unwrap();
        let q = *h.roots().iter().max_by(|&&a, &&b| h.node(a).mass.total_cmp(&h.node(b).mass)).unwrap();
        (h, q)
    }

    fn on_root(h: &Hierarchy, q: NodeId, mut f: impl FnMut(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; h.measure().len()];
        for &a in h.atoms(q) {
            out[a] = f(a);
        }
        out
    }

    #[test]
    fn trivial_system_gives_haar_differences() {
        let (h, q) = setup(0, 40);
        let f = on_root(&h, q, |a| (a as f64 * 0.7).sin());
        let mut sys = AccretiveSystem::trivial();
        let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
        let local = h.to_local(&f);
        for id in tree.span() {
            let d = delta(&tree, &h, &local, id).unwrap();
            let n = h.node(id);
            for &c in &n.children {
                let cn = h.node(c);
                for p in cn.lo..cn.hi {
                    let haar = h.average(c, &local) - h.average(id, &local);
                    assert!((d[p - n.lo] - haar).abs() < 1e-12);
                }
            }
        }
        let c = on_root(&h, q, |_| 3.0);
        let tree = StoppingTree::build(&h, &mut sys, &c, q, StoppingParams::default()).unwrap();
        let d = decompose(&tree, &h, &c).unwrap();
        assert!(d.terms().iter().all(|(_, t)| t.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn two_atom_bracket_by_hand() {
        let mu = DiscreteMeasure::new(1, vec![(vec![0.1], 1.0), (vec![0.7], 3.0)], 1.0, 1, 0).unwrap();
        let grid = ShiftedGrid::standard(1, 0, 1, 3, 0.25).unwrap();
        let h = Hierarchy::new(&mu, &grid).unwrap();
        let q = h.roots()[0];
        let mut sys = AccretiveSystem::perturbed(0.4, 2).unwrap();
        let g = [2.0, -1.0];
        let tree = StoppingTree::build(&h, &mut sys, &g, q, StoppingParams::default()).unwrap();
        let b = tree.b(q).to_vec();
        // Children are singletons with b = 1, so <g>/<b> b = g there.
        let gq = (2.0 * 1.0 - 1.0 * 3.0) / 4.0;
        let bq = (b[0] * 1.0 + b[1] * 3.0) / 4.0;
        let d = delta(&tree, &h, &h.to_local(&g), q).unwrap();
        assert!((d[0] - (2.0 - gq / bq * b[0])).abs() < 1e-14);
        assert!((d[1] - (-1.0 - gq / bq * b[1])).abs() < 1e-14);
        assert!((bq - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_and_b_star() {
        let (h, q) = setup(3, 64);
        let mut sys = AccretiveSystem::perturbed(0.5, 8).unwrap();
        let zero = vec![0.0; 64];
        let tree = StoppingTree::build(&h, &mut sys, &zero, q, StoppingParams::default()).unwrap();
        let d = decompose(&tree, &h, &zero).unwrap();
        assert!(d.terms().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
        assert!(d.root_term().iter().all(|&v| v == 0.0));
        // g = b_{Q*} with the same tree.
        let bq = h.to_atoms(&crate::tbsystem::spread(&h, q, tree.b(q)));
        let d = decompose(&tree, &h, &bq).unwrap();
        let scale = bq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (id, t) in d.terms() {
            if tree.father(*id) == q && h.node(*id).children.iter().all(|&c| tree.father(c) == q) {
                assert!(t.iter().all(|v| v.abs() < 1e-12 * scale), "{:?}", h.node(*id).cube);
            }
        }
        let rn = h.node(q);
        for (p, v) in (rn.lo..rn.hi).zip(d.root_term()) {
            assert!((v - tree.b(q)[p - rn.lo]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn orthogonality_with_trivial_system() {
        for seed in 0..10 {
            let (h, q) = setup(seed, 100);
            let mut g = rng::stream(seed, 1);
            let f = on_root(&h, q, |_| g.gen_range(-1.0..1.0));
            let mut sys = AccretiveSystem::trivial();
            let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
            let d = decompose(&tree, &h, &f).unwrap();
            let sf = sf_from(&d, &h);
            // Orthogonal expansion: ||f||^2 = sum ||Delta f||^2 + ||E f||^2.
            let e = norm_sq_on(&h, q, d.root_term());
            assert!((sf.sum_sq + e - sf.norm_sq).abs() <= 1e-10 * sf.norm_sq);
            assert!(sf.ratio <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn contract_on_foreign_function() {
        let (h, q) = setup(1, 32);
        let f = on_root(&h, q, |a| a as f64);
        let g = on_root(&h, q, |a| a as f64 + 1.0);
        let mut sys = AccretiveSystem::trivial();
        let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
        assert!(matches!(sf_estimate(&tree, &h, &g), Err(Error::Contract(_))));
        assert!(sf_estimate(&tree, &h, &f).is_ok());
    }

    #[test]
    fn root_term_bound_holds() {
        for seed in 0..10 {
            let (h, q) = setup(seed, 120);
            let mut sys = AccretiveSystem::adversarial(&h, vec![], Some(RandomFlips::new(seed, 0.8))).unwrap();
            let f = on_root(&h, q, |a| if a % 7 == 0 { 30.0 } else { 1.0 });
            let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
            assert!(root_term_check(&tree, &h).pass);
        }
    }

    #[test]
    fn csv_has_row_per_term() {
        let (h, q) = setup(2, 16);
        let f = on_root(&h, q, |a| a as f64);
        let mut sys = AccretiveSystem::trivial();
        let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
        let d = decompose(&tree, &h, &f).unwrap();
        assert_eq!(d.summary_csv(&h).lines().count(), d.terms().len() + 1);
    }

    proptest! {
        #[test]
        fn mean_zero_support_and_reconstruction(seed in 0u64..5000, spiky in proptest::bool::ANY) {
            let (h, q) = setup(seed, 60);
            let mut g = rng::stream(seed, 2);
            let f = on_root(&h, q, |_| g.gen_range(-1.0..1.0) * if spiky && g.gen_bool(0.1) { 40.0 } else { 1.0 });
            let mut sys = AccretiveSystem::adversarial(&h, vec![], Some(RandomFlips::new(seed, 0.6))).unwrap();
            let tree = StoppingTree::build(&h, &mut sys, &f, q, StoppingParams::default()).unwrap();
            let d = decompose(&tree, &h, &f).unwrap();
            prop_assert!(d.residual() <= RECONSTRUCTION_TOL);
            let local = h.to_local(&f);
            for (id, t) in d.terms() {
                let n = h.node(*id);
                prop_assert!(t.len() == n.len());
                let l1: f64 = local[n.lo..n.hi].iter().zip(&h.weights()[n.lo..n.hi]).map(|(v, w)| v.abs() * w).sum();
                let integral: f64 = t.iter().zip(&h.weights()[n.lo..n.hi]).map(|(v, w)| v * w).sum();
                if *id != q {
                    prop_assert!(integral.abs() <= 1e-10 * l1.max(1e-300) + 1e-300);
                }
            }
        }
    }
}
