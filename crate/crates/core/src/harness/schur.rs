use rayon::prelude::*;

use crate::cubes::{Hierarchy, NodeId};

pub const SCHUR_ITERATIONS: usize = 50;

/// `l_Q^(a/2) l_R^(a/2) mu_Q^(1/2) mu_R^(1/2) / (l_Q + l_R + d)^(m+a)`.
pub fn far_entry(lq: f64, lr: f64, d: f64, mq: f64, mr: f64, alpha: f64, m: f64) -> f64 {
    if mq == 0.0 || mr == 0.0 {
        return 0.0;
    }
    (lq * lr).powf(alpha / 2.0) * (mq * mr).sqrt() / (lq + lr + d).powf(m + alpha)
}

/// `A_QR` for two occupied cubes.
pub fn far_matrix(h: &Hierarchy, q: NodeId, r: NodeId, alpha: f64, m: f64) -> f64 {
    let (a, b) = (h.node(q), h.node(r));
    far_entry(a.side(), b.side(), h.distance(q, r), a.mass, b.mass, alpha, m)
}

/// Row-major `(A_QR)` over a cube family.
pub fn dense_far_matrix(h: &Hierarchy, family: &[NodeId], alpha: f64, m: f64) -> Vec<f64> {
    family
        .par_iter()
        .flat_map_iter(|&q| family.iter().map(move |&r| far_matrix(h, q, r, alpha, m)))
        .collect()
}

/// Power-iteration estimate of the `l^2` operator norm of `(A_QR)` over
/// `family`, from the all-ones start vector.
pub fn schur_norm_estimate(h: &Hierarchy, family: &[NodeId], alpha: f64, m: f64) -> f64 {
    let n = family.len();
    if n == 0 {
        return 0.0;
    }
    let a = dense_far_matrix(h, family, alpha, m);
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut est = 0.0;
    for _ in 0..SCHUR_ITERATIONS {
        let y: Vec<f64> = a.par_chunks(n).map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        est = norm;
        if norm == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / norm).collect();
    }
    est
}
