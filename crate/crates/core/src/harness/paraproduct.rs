use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CHAIN_TOL;
use crate::cubes::{Hierarchy, NodeId};
use crate::operators::{testing_functional, Quadrature, TimeKernel};
use crate::stopping::{CzReport, StoppingTree};
use crate::tbsystem::TestingReport;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaproductReport {
    /// `sum_S |<f>_S|^2 sum_{R: R^(r) = S} int int_{W_R} |theta_t b_{S^a}|^2`.
    pub lhs: f64,
    /// `lhs` followed by the four majorants, each scaled by `(32A)^2`:
    /// `sum_F alpha^2 sum_{R subset F} W_R`, `sum_F alpha^2 int int_{F^}`,
    /// `T sum_F alpha^2 mu(F)` and `T (4/3)(1+8A) ||M f||^2`.
    pub chain: [f64; 5],
    /// `max_S <|f|>_S / (32 A alpha(S^a))`.
    pub max_average_ratio: f64,
    pub testing_constant: f64,
    pub monotone: bool,
    pub average_pass: bool,
}

impl ParaproductReport {
    pub fn pass(&self) -> bool {
        self.monotone && self.average_pass
    }
}

struct FatherSums {
    q0: f64,
    q1: f64,
    q2: f64,
    avg_ratio: f64,
}

/// Evaluates the paraproduct and every majorant of the chain that bounds it
/// by the stopping data.
pub fn paraproduct_check(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    tree: &StoppingTree,
    testing: &TestingReport,
    cz: &CzReport,
    quad: &Quadrature,
) -> Result<ParaproductReport> {
    let a = tree.a();
    let c = (32.0 * a).powi(2);
    let t_test = testing.max_ratio;
    let stops = tree.stopping();
    let sums: Vec<FatherSums> = stops.par_iter().map(|&fid| father_sums(kernel, h, tree, fid, quad)).collect();
    let q0: f64 = sums.iter().map(|s| s.q0).sum();
    let q1 = c * sums.iter().map(|s| s.q1).sum::<f64>();
    let q2 = c * sums.iter().map(|s| s.q2).sum::<f64>();
    let q3 = c * t_test * cz.lhs;
    let q4 = c * t_test * cz.majorant;
    let chain = [q0, q1, q2, q3, q4];
    if q1 > q2 * (1.0 + CHAIN_TOL) {
        return Err(Error::Invariant(format!(
            "Whitney regions inside the stopping cubes exceed their Carleson boxes ({q1} > {q2}); the time nodes disagree"
        )));
    }
    let monotone = chain.windows(2).all(|w| w[0] <= w[1] * (1.0 + CHAIN_TOL));
    let max_average_ratio = sums.iter().map(|s| s.avg_ratio).fold(0.0, f64::max);
    Ok(ParaproductReport {
        lhs: q0,
        chain,
        max_average_ratio,
        testing_constant: t_test,
        monotone,
        average_pass: max_average_ratio <= 1.0 + CHAIN_TOL,
    })
}

fn father_sums(kernel: &dyn TimeKernel, h: &Hierarchy, tree: &StoppingTree, fid: NodeId, quad: &Quadrature) -> FatherSums {
    let fnode = h.node(fid);
    let b = tree.b(fid);
    let w = &h.weights()[fnode.lo..fnode.hi];
    let bottom = h.grid().bottom_gen();
    let r = h.grid().r() as i32;
    let g0 = fnode.gen();
    // e[i][g - g0]: band energy of theta_t b_F at the i-th atom of F.
    let e: Vec<Vec<f64>> = (fnode.lo..fnode.hi)
        .map(|p| {
            let x = h.point_at(p);
            (g0..bottom)
                .map(|g| {
                    quad.whitney(g)
                        .map(|(t, wt)| {
                            let v: f64 = (fnode.lo..fnode.hi)
                                .map(|q| kernel.eval(t, x, h.point_at(q)) * b[q - fnode.lo] * w[q - fnode.lo])
                                .sum();
                            wt * v * v
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    let region = |rid: NodeId, g: i32| -> f64 {
        let rn = h.node(rid);
        (rn.lo..rn.hi).map(|p| h.weights()[p] * e[p - fnode.lo][(g - g0) as usize]).sum()
    };
    let alpha = tree.alpha(fid).expect("stopping cube");
    let a = tree.a();
    let (mut q0, mut inner1, mut avg_ratio) = (0.0, 0.0, 0.0f64);
    for id in h.subtree(fid) {
        let n = h.node(id);
        if n.gen() < bottom {
            inner1 += region(id, n.gen());
        }
        if tree.father(id) != fid {
            continue;
        }
        let fabs = tree.f_abs(id);
        if alpha > 0.0 {
            avg_ratio = avg_ratio.max(fabs / (32.0 * a * alpha));
        } else if fabs > 0.0 {
            avg_ratio = f64::INFINITY;
        }
        let g = n.gen() + r;
        if g < bottom {
            let favg = tree.f_avg(id);
            let inner: f64 = h.subtree(id).filter(|&d| h.node(d).gen() == g).map(|d| region(d, g)).sum();
            q0 += favg * favg * inner;
        }
    }
    let q2 = testing_functional(kernel, h, fid, b, quad).value;
    FatherSums { q0, q1: alpha * alpha * inner1, q2: alpha * alpha * q2, avg_ratio }
}
