use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{far_matrix, CHAIN_TOL};
use crate::cubes::{Hierarchy, NodeId};
use crate::martingale::{norm_sq_on, twisted_average, Decomposition};
use crate::operators::{Quadrature, TimeKernel};
use crate::stopping::StoppingTree;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseClass {
    /// `l(Q) < l(R)`.
    Small,
    /// `l(Q) >= l(R)` and `d(Q,R) > l(R)^gamma l(Q)^(1-gamma)`.
    Separated,
    /// Not separated and `l(Q) <= 2^r l(R)`.
    Comparable,
    /// Not separated and `l(Q) > 2^r l(R)`.
    Contained,
}

impl CaseClass {
    pub fn of(h: &Hierarchy, q: NodeId, r: NodeId) -> Self {
        let (lq, lr) = (h.node(q).side(), h.node(r).side());
        if lq < lr {
            return Self::Small;
        }
        let gamma = h.grid().gamma();
        if h.distance(q, r) > lr.powf(gamma) * lq.powf(1.0 - gamma) {
            Self::Separated
        } else if h.node(r).gen() - h.node(q).gen() <= h.grid().r() as i32 {
            Self::Comparable
        } else {
            Self::Contained
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Maxima over quadrature nodes of `|theta_t Delta_Q f(x)|` divided by the
/// bound each case is proved with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRatios {
    /// Against `A_QR mu(R)^(-1/2) ||Delta_Q f||`.
    pub small: f64,
    /// Against `l(R)^a / d^(m+a) mu(Q)^(1/2) ||Delta_Q f||`.
    pub separated: f64,
    /// `l(R)^a / d^(m+a) mu(Q)^(1/2)` against `A_QR mu(R)^(-1/2)`, over pairs.
    pub sep_inequality: f64,
    /// Against `mu(R)^(-1/2) ||Delta_Q f||`.
    pub comparable: f64,
}

impl PointwiseRatios {
    fn merge(&mut self, o: &Self) {
        self.small = self.small.max(o.small);
        self.separated = self.separated.max(o.separated);
        self.sep_inequality = self.sep_inequality.max(o.sep_inequality);
        self.comparable = self.comparable.max(o.comparable);
    }
}

/// Contained-case contributions at one `k`, summed over `R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainedRow {
    pub k: u32,
    /// `|theta_t Delta_{R^(k)} f|^2` where `(R^(k-1))^a = (R^(k))^a`.
    pub same: f64,
    /// The same where `R^(k-1)` is itself a stopping cube.
    pub new: f64,
    /// `|theta_t (1_{R^(k) \ R^(k-1)} Delta_{R^(k)} f)|^2`.
    pub annulus: f64,
    /// `|theta_t (1_{(R^(k-1))^c} (phi_{k-1} - phi_k))|^2`.
    pub tail: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseBudget {
    /// `sum_{R good} int int_{W_R} |sum_Q theta_t Delta_Q f|^2`, root term included.
    pub total: f64,
    pub small: f64,
    pub separated: f64,
    pub comparable: f64,
    pub contained: f64,
    /// The contained case after telescoping: annulus pieces, complement tails and
    /// the paraproduct `theta_t (<f>_{R^(r)} / <b>_{R^(r)} b_{(R^(r))^a})`.
    pub contained_annulus: f64,
    pub contained_tail: f64,
    pub paraproduct: f64,
    pub norm_sq: f64,
    /// `total <= 4 (small + separated + comparable + contained)`.
    pub split_pass: bool,
    /// Max relative gap between `sum_Q theta_t Delta_Q f` and `theta_t (f 1_{Q*})`.
    pub identity_residual: f64,
    /// Max relative gap of the telescoped contained sum.
    pub telescope_residual: f64,
    /// Visited `(Q, R)` pairs per case.
    pub pairs: [usize; 4],
    pub good_regions: usize,
    pub pointwise: PointwiseRatios,
    pub contained_rows: Vec<ContainedRow>,
}

impl CaseBudget {
    fn cases(&self) -> [f64; 4] {
        [self.small, self.separated, self.comparable, self.contained]
    }

    /// Every accumulated quantity divided by `||f||^2`.
    pub fn ratios(&self) -> [f64; 4] {
        self.cases().map(|c| if self.norm_sq > 0.0 { c / self.norm_sq } else { 0.0 })
    }

    pub fn identities_pass(&self) -> bool {
        self.split_pass && self.identity_residual <= CHAIN_TOL && self.telescope_residual <= CHAIN_TOL
    }

    /// Adds the budget of another `Q*`.
    pub fn merge(&mut self, o: &Self) {
        self.total += o.total;
        self.small += o.small;
        self.separated += o.separated;
        self.comparable += o.comparable;
        self.contained += o.contained;
        self.contained_annulus += o.contained_annulus;
        self.contained_tail += o.contained_tail;
        self.paraproduct += o.paraproduct;
        self.norm_sq += o.norm_sq;
        self.split_pass = self.total <= 4.0 * self.cases().iter().sum::<f64>() * (1.0 + CHAIN_TOL);
        self.identity_residual = self.identity_residual.max(o.identity_residual);
        self.telescope_residual = self.telescope_residual.max(o.telescope_residual);
        for i in 0..4 {
            self.pairs[i] += o.pairs[i];
        }
        self.good_regions += o.good_regions;
        self.pointwise.merge(&o.pointwise);
        merge_rows(&mut self.contained_rows, &o.contained_rows);
    }
}

fn merge_rows(into: &mut Vec<ContainedRow>, from: &[ContainedRow]) {
    for r in from {
        match into.iter_mut().find(|x| x.k == r.k) {
            Some(x) => {
                x.same += r.same;
                x.new += r.new;
                x.annulus += r.annulus;
                x.tail += r.tail;
            }
            None => into.push(*r),
        }
    }
    into.sort_by_key(|r| r.k);
}

struct Term {
    id: NodeId,
    lo: usize,
    /// `Delta_Q f`, plus the root term at `Q*`.
    v: Vec<f64>,
    norm: f64,
}

/// Per-`R` partial sums.
#[derive(Default)]
struct Partial {
    total: f64,
    cases: [f64; 4],
    annulus: f64,
    tail: f64,
    para: f64,
    identity: f64,
    telescope: f64,
    pairs: [usize; 4],
    pointwise: PointwiseRatios,
    rows: Vec<ContainedRow>,
}

/// Splits the Whitney sum over good `R` into the four cases and telescopes
/// the contained case.
pub fn case_budget(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    tree: &StoppingTree,
    dec: &Decomposition,
    quad: &Quadrature,
) -> Result<CaseBudget> {
    let qs = tree.root();
    if dec.root() != qs || dec.g_local() != tree.f_local() {
        return Err(Error::Contract("the decomposition must expand the tree's own function".into()));
    }
    let qn = h.node(qs);
    let mut terms: Vec<Term> = dec
        .terms()
        .iter()
        .map(|(id, v)| Term { id: *id, lo: h.node(*id).lo, v: v.clone(), norm: 0.0 })
        .collect();
    match terms.iter_mut().find(|t| t.id == qs) {
        Some(t) => t.v.iter_mut().zip(dec.root_term()).for_each(|(a, b)| *a += b),
        None => terms.insert(0, Term { id: qs, lo: qn.lo, v: dec.root_term().to_vec(), norm: 0.0 }),
    }
    for t in &mut terms {
        t.norm = norm_sq_on(h, t.id, &t.v).sqrt();
    }
    let f_run = &tree.f_local()[qn.lo..qn.hi];
    let norm_sq: f64 = f_run.iter().zip(&h.weights()[qn.lo..qn.hi]).map(|(v, w)| v * v * w).sum();
    let grid = h.grid();
    let goods: Vec<NodeId> =
        (0..h.len()).filter(|&id| h.node(id).gen() < grid.bottom_gen() && grid.is_good(&h.node(id).cube)).collect();

    let parts = goods
        .par_iter()
        .map(|&rid| region(kernel, h, tree, &terms, f_run, quad, rid))
        .collect::<Result<Vec<Partial>>>()?;

    let mut b = CaseBudget { norm_sq, good_regions: goods.len(), ..Default::default() };
    for p in &parts {
        b.total += p.total;
        b.small += p.cases[0];
        b.separated += p.cases[1];
        b.comparable += p.cases[2];
        b.contained += p.cases[3];
        b.contained_annulus += p.annulus;
        b.contained_tail += p.tail;
        b.paraproduct += p.para;
        b.identity_residual = b.identity_residual.max(p.identity);
        b.telescope_residual = b.telescope_residual.max(p.telescope);
        for i in 0..4 {
            b.pairs[i] += p.pairs[i];
        }
        b.pointwise.merge(&p.pointwise);
        merge_rows(&mut b.contained_rows, &p.rows);
    }
    b.split_pass = b.total <= 4.0 * b.cases().iter().sum::<f64>() * (1.0 + CHAIN_TOL);
    Ok(b)
}

fn region(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    tree: &StoppingTree,
    terms: &[Term],
    f_run: &[f64],
    quad: &Quadrature,
    rid: NodeId,
) -> Result<Partial> {
    let qs = tree.root();
    let qn = h.node(qs);
    let rn = h.node(rid);
    let (alpha, m) = (kernel.alpha(), kernel.m());
    let r = h.grid().r();
    let lr = rn.side();
    let mut out = Partial::default();

    // Classification and per-term pointwise denominators.
    let mut class = Vec::with_capacity(terms.len());
    let mut denom = Vec::with_capacity(terms.len());
    for t in terms {
        let c = CaseClass::of(h, t.id, rid);
        out.pairs[c.index()] += 1;
        let d = h.distance(t.id, rid);
        let qnode = h.node(t.id);
        let den = match c {
            CaseClass::Small => far_matrix(h, t.id, rid, alpha, m) / rn.mass.sqrt() * t.norm,
            CaseClass::Separated => {
                let lhs = lr.powf(alpha) / d.powf(m + alpha) * qnode.mass.sqrt();
                let rhs = far_matrix(h, t.id, rid, alpha, m) / rn.mass.sqrt();
                out.pointwise.sep_inequality = out.pointwise.sep_inequality.max(lhs / rhs);
                lhs * t.norm
            }
            CaseClass::Comparable => t.norm / rn.mass.sqrt(),
            CaseClass::Contained => {
                if !h.contains(t.id, rid) {
                    return Err(Error::Invariant(format!(
                        "good cube {:?} is close to the much larger {:?} without lying inside it",
                        rn.cube, qnode.cube
                    )));
                }
                0.0
            }
        };
        class.push(c);
        denom.push(den);
    }

    // Ancestor chain R^(j), j = 0..=K, when the contained case is present.
    let chain: Option<Vec<NodeId>> = (h.contains(qs, rid) && rn.gen() - qn.gen() > r as i32).then(|| {
        let mut anc = vec![rid];
        while *anc.last().unwrap() != qs {
            anc.push(h.node(*anc.last().unwrap()).parent.expect("R lies inside Q*"));
        }
        anc
    });
    let contained_ids: Vec<NodeId> =
        terms.iter().zip(&class).filter(|(_, c)| **c == CaseClass::Contained).map(|(t, _)| t.id).collect();
    let expected: Vec<NodeId> = match &chain {
        Some(anc) => anc[r as usize + 1..].iter().rev().copied().collect(),
        None => Vec::new(),
    };
    let mut sorted_ids = contained_ids.clone();
    sorted_ids.sort_unstable();
    let mut sorted_exp = expected.clone();
    sorted_exp.sort_unstable();
    if sorted_ids != sorted_exp {
        return Err(Error::Invariant(format!(
            "contained cubes of {:?} are not exactly its ancestors beyond generation gap r",
            rn.cube
        )));
    }
    let term_of = |id: NodeId| terms.binary_search_by_key(&id, |t| t.id).ok();
    struct Chain {
        anc: Vec<NodeId>,
        fathers: Vec<NodeId>,
        fidx: Vec<usize>,
        phi: Vec<f64>,
        term: Vec<Option<usize>>,
    }
    let ch = match &chain {
        Some(anc) => {
            let mut fathers: Vec<NodeId> = Vec::new();
            let mut fidx = vec![0; anc.len()];
            let mut phi = vec![0.0; anc.len()];
            for j in r as usize..anc.len() {
                let fa = tree.father(anc[j]);
                fidx[j] = match fathers.iter().position(|&x| x == fa) {
                    Some(i) => i,
                    None => {
                        fathers.push(fa);
                        fathers.len() - 1
                    }
                };
                phi[j] = twisted_average(tree, h, anc[j], tree.f_local())?;
            }
            let term = anc.iter().map(|&a| term_of(a)).collect();
            Some(Chain { anc: anc.clone(), fathers, fidx, phi, term })
        }
        None => None,
    };
    let kmax = chain.as_ref().map_or(0, |a| a.len() - 1);
    let mut rows: Vec<ContainedRow> =
        (0..=kmax).map(|k| ContainedRow { k: k as u32, ..Default::default() }).collect();

    let root_term_pos = term_of(qs);
    let weights = &h.weights()[qn.lo..qn.hi];
    let mut kr = vec![0.0; qn.len()];
    let mut u = vec![0.0; terms.len()];
    let mut prefixes: Vec<Vec<f64>> = Vec::new();
    let band: Vec<(f64, f64)> = quad.whitney(rn.gen()).collect();
    for p in rn.lo..rn.hi {
        let x = h.point_at(p);
        let mu_x = h.weights()[p];
        for &(t, w) in &band {
            for (i, k) in kr.iter_mut().enumerate() {
                *k = kernel.eval(t, x, h.point_at(qn.lo + i)) * weights[i];
            }
            let direct: f64 = kr.iter().zip(f_run).map(|(a, b)| a * b).sum();
            let mut sums = [0.0; 4];
            let mut abs_sum = 0.0;
            for (i, term) in terms.iter().enumerate() {
                let off = term.lo - qn.lo;
                let v: f64 = kr[off..off + term.v.len()].iter().zip(&term.v).map(|(a, b)| a * b).sum();
                u[i] = v;
                sums[class[i].index()] += v;
                abs_sum += v.abs();
                if denom[i] > 0.0 {
                    let ratio = v.abs() / denom[i];
                    let slot = match class[i] {
                        CaseClass::Small => &mut out.pointwise.small,
                        CaseClass::Separated => &mut out.pointwise.separated,
                        CaseClass::Comparable => &mut out.pointwise.comparable,
                        CaseClass::Contained => unreachable!(),
                    };
                    *slot = slot.max(ratio);
                }
            }
            let all: f64 = sums.iter().sum();
            let scale = abs_sum + direct.abs();
            if scale > 0.0 {
                out.identity = out.identity.max((all - direct).abs() / scale);
            }
            let wt = mu_x * w;
            out.total += wt * all * all;
            for c in 0..4 {
                out.cases[c] += wt * sums[c] * sums[c];
            }

            let Some(ch) = &ch else { continue };
            // Prefix sums of kr * b_F over each father's run.
            prefixes.resize(ch.fathers.len(), Vec::new());
            for (fi, &fid) in ch.fathers.iter().enumerate() {
                let fnode = h.node(fid);
                let b = tree.b(fid);
                let pre = &mut prefixes[fi];
                pre.clear();
                pre.push(0.0);
                let off = fnode.lo - qn.lo;
                let mut acc = 0.0;
                for (i, bv) in b.iter().enumerate() {
                    acc += kr[off + i] * bv;
                    pre.push(acc);
                }
            }
            let over = |j: usize, c: NodeId| {
                let fnode = h.node(ch.fathers[ch.fidx[j]]);
                let cn = h.node(c);
                let pre = &prefixes[ch.fidx[j]];
                pre[cn.hi - fnode.lo] - pre[cn.lo - fnode.lo]
            };
            let theta_psi = |j: usize| ch.phi[j] * prefixes[ch.fidx[j]].last().copied().unwrap_or(0.0);
            let r = r as usize;
            let para = theta_psi(r);
            let (mut ann_sum, mut tail_sum, mut contained_abs) = (0.0, 0.0, 0.0);
            let kk = ch.anc.len() - 1;
            let root_part = root_term_pos.map_or(0.0, |_| ch.phi[kk] * prefixes[ch.fidx[kk]].last().copied().unwrap());
            for k in r + 1..=kk {
                let c = ch.anc[k - 1];
                let part = ch.phi[k - 1] * over(k - 1, c) - ch.phi[k] * over(k, c);
                let uk = ch.term[k].map_or(0.0, |i| u[i]);
                contained_abs += uk.abs();
                let delta_k = if k == kk { uk - root_part } else { uk };
                let ann = delta_k - part;
                let tail = theta_psi(k - 1) - theta_psi(k) - part;
                ann_sum += ann;
                tail_sum += tail;
                let row = &mut rows[k];
                if ch.fathers[ch.fidx[k - 1]] == ch.fathers[ch.fidx[k]] {
                    row.same += wt * delta_k * delta_k;
                } else {
                    row.new += wt * delta_k * delta_k;
                }
                row.annulus += wt * ann * ann;
                row.tail += wt * tail * tail;
            }
            let rebuilt = ann_sum - tail_sum + para;
            let scale = contained_abs + ann_sum.abs() + tail_sum.abs() + para.abs();
            if scale > 0.0 {
                out.telescope = out.telescope.max((sums[3] - rebuilt).abs() / scale);
            }
            out.annulus += wt * ann_sum * ann_sum;
            out.tail += wt * tail_sum * tail_sum;
            out.para += wt * para * para;
        }
    }
    out.rows = rows.into_iter().filter(|row| row.k as usize > r as usize).collect();
    Ok(out)
}
