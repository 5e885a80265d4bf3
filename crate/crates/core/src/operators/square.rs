use rayon::prelude::*;
use serde::Serialize;

use super::{Quadrature, TimeKernel, TimeRange, TransformedKernel};
use crate::cubes::{Hierarchy, NodeId};
use crate::measure::{dist_sq, DiscreteMeasure};
use crate::Result;

/// `theta_t f(x) = sum_a s_t(x, y_a) f(y_a) mu_a`.
pub fn theta(kernel: &dyn TimeKernel, mu: &DiscreteMeasure, f: &[f64], t: f64, x: &[f64]) -> f64 {
    debug_assert!(t > 0.0);
    kernel.theta(mu, f, t, x)
}

/// Quadrature value of `int int |theta_t f(x)|^2 dmu(x) dt/t` over `range`.
pub fn vertical_sf_sq(
    kernel: &dyn TimeKernel,
    mu: &DiscreteMeasure,
    f: &[f64],
    quad: &Quadrature,
    range: TimeRange,
) -> Result<f64> {
    range.check()?;
    let nodes = quad.nodes(range);
    let per_atom: Vec<f64> = (0..mu.len())
        .into_par_iter()
        .map(|a| {
            let x = mu.point(a);
            let inner: f64 = nodes
                .iter()
                .map(|&(t, w)| {
                    let v = kernel.theta(mu, f, t, x);
                    w * v * v
                })
                .sum();
            mu.mass(a) * inner
        })
        .collect();
    Ok(per_atom.iter().sum())
}

/// Quadrature value of `int int_{Gamma(x)} |theta_t f(y)|^2 dmu(y) dt/t^(m+1) dmu(x)`
/// with the open cone `|x - y| < t`, evaluated directly as a triple sum.
pub fn conical_sf_sq(
    kernel: &dyn TimeKernel,
    mu: &DiscreteMeasure,
    f: &[f64],
    quad: &Quadrature,
    range: TimeRange,
) -> Result<f64> {
    range.check()?;
    let nodes = quad.nodes(range);
    let m = kernel.m();
    let per_node: Vec<f64> = nodes
        .par_iter()
        .map(|&(t, w)| {
            let sq: Vec<f64> = (0..mu.len())
                .map(|b| {
                    let v = kernel.theta(mu, f, t, mu.point(b));
                    v * v
                })
                .collect();
            let t2 = t * t;
            let cone: f64 = (0..mu.len())
                .map(|a| {
                    let x = mu.point(a);
                    let inner: f64 = (0..mu.len())
                        .filter(|&b| dist_sq(x, mu.point(b)) < t2)
                        .map(|b| sq[b] * mu.mass(b))
                        .sum();
                    mu.mass(a) * inner
                })
                .sum();
            w * cone / t.powf(m)
        })
        .collect();
    Ok(per_node.iter().sum())
}

/// The kernel `(mu(B(x,t))/t^m)^(1/2) s_t(x,y)`.
pub fn transform_kernel<'a>(
    kernel: &'a dyn TimeKernel,
    mu: &'a DiscreteMeasure,
) -> TransformedKernel<'a> {
    TransformedKernel::new(kernel, mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestingValue {
    /// `int int_{Q^} |theta_t b(x)|^2 dmu(x) dt/t`, truncated below at `2^-J`.
    pub value: f64,
    /// `value / mu(Q)`.
    pub ratio: f64,
    /// Set when `mu(Q) = 0`; both numbers are then zero.
    pub massless: bool,
}

/// The Carleson-box testing functional of a function `b` supported on a cube.
///
/// `b` is given on the node's atom run (hierarchy order).
pub fn testing_functional(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    node: NodeId,
    b: &[f64],
    quad: &Quadrature,
) -> TestingValue {
    let n = h.node(node);
    if n.mass == 0.0 {
        return TestingValue { value: 0.0, ratio: 0.0, massless: true };
    }
    let lo_exp = -(h.grid().fine() as i32);
    let hi_exp = -n.gen();
    if lo_exp >= hi_exp {
        return TestingValue { value: 0.0, ratio: 0.0, massless: false };
    }
    let nodes = quad.nodes(TimeRange::new(lo_exp, hi_exp));
    let weights = &h.weights()[n.lo..n.hi];
    let bw: Vec<f64> = b.iter().zip(weights).map(|(v, w)| v * w).collect();
    let per_x: Vec<f64> = (n.lo..n.hi)
        .into_par_iter()
        .map(|p| {
            let x = h.point_at(p);
            let inner: f64 = nodes
                .iter()
                .map(|&(t, w)| {
                    let v: f64 =
                        (n.lo..n.hi).map(|q| kernel.eval(t, x, h.point_at(q)) * bw[q - n.lo]).sum();
                    w * v * v
                })
                .sum();
            h.weights()[p] * inner
        })
        .collect();
    let value: f64 = per_x.iter().sum();
    TestingValue { value, ratio: value / n.mass, massless: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ShiftedGrid;
    use crate::operators::{MeanZero, SizeProfile};
    use proptest::prelude::*;

    fn small_measure(seed: u64) -> DiscreteMeasure {
        use rand::Rng;
        let mut g = crate::rng::stream(seed, 9);
        let n = 12;
        let atoms = (0..n).map(|k| (vec![(k as f64 + g.gen_range(0.0..0.9)) / n as f64], g.gen_range(0.01..0.2))).collect();
        DiscreteMeasure::new(1, atoms, 1.0, 4, 0).unwrap()
    }

    #[test]
    fn theta_one_atom_and_zero() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.25], 0.5)], 1.0, 2, 0).unwrap();
        let x = [1.0];
        assert_eq!(theta(&k, &mu, &[3.0], 0.5, &x), k.eval(0.5, &x, &[0.25]) * 3.0 * 0.5);
        assert_eq!(theta(&k, &mu, &[0.0], 0.5, &x), 0.0);
    }

    #[test]
    fn theta_two_atoms_by_hand() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.0], 1.0), (vec![1.0], 2.0)], 1.0, 2, 0).unwrap();
        // s_1(0,0) = 1, s_1(0,1) = 1/4.
        let v = theta(&k, &mu, &[1.0, -1.0], 1.0, &[0.0]);
        assert_eq!(v, 1.0 * 1.0 * 1.0 + 0.25 * -1.0 * 2.0);
    }

    #[test]
    fn vertical_zero_and_scaling() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = small_measure(1);
        let q = Quadrature::default();
        let range = TimeRange::window(&mu);
        let zero = vec![0.0; mu.len()];
        assert_eq!(vertical_sf_sq(&k, &mu, &zero, &q, range).unwrap(), 0.0);
        let f: Vec<f64> = (0..mu.len()).map(|i| (i as f64).sin()).collect();
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let a = vertical_sf_sq(&k, &mu, &f, &q, range).unwrap();
        let b = vertical_sf_sq(&k, &mu, &f2, &q, range).unwrap();
        assert!((b - 4.0 * a).abs() <= 1e-12 * b);
        assert!(vertical_sf_sq(&k, &mu, &f, &q, TimeRange::new(0, 0)).is_err());
        assert!(conical_sf_sq(&k, &mu, &f, &q, TimeRange::new(2, 1)).is_err());
    }

    #[test]
    fn vertical_single_atom_against_dense_rule() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.0], 0.7)], 1.0, 6, 2).unwrap();
        let range = TimeRange::window(&mu);
        let dense = vertical_sf_sq(&k, &mu, &[1.0], &Quadrature::new(512).unwrap(), range).unwrap();
        let coarse = vertical_sf_sq(&k, &mu, &[1.0], &Quadrature::new(32).unwrap(), range).unwrap();
        assert!((coarse - dense).abs() / dense <= 1e-3);
        // Closed form: 0.7^3 int t^{-2} dt/t = 0.7^3 (t_lo^-2 - t_hi^-2) / 2.
        let exact = 0.7f64.powi(3) * (2f64.powi(12) - 2f64.powi(-4)) / 2.0;
        assert!((dense - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn conical_single_atom_reduces_to_vertical() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.3], 0.4)], 1.0, 3, 1).unwrap();
        let q = Quadrature::default();
        let range = TimeRange::window(&mu);
        // The cone over the atom always contains it: the weight is mu_a / t^m.
        let by_hand: f64 = q
            .nodes(range)
            .iter()
            .map(|&(t, w)| {
                let th = 0.4 / t;
                w * 0.4 * 0.4 * th * th / t
            })
            .sum();
        let con = conical_sf_sq(&k, &mu, &[1.0], &q, range).unwrap();
        assert!((con - by_hand).abs() <= 1e-12 * by_hand);
        assert_eq!(conical_sf_sq(&k, &mu, &[0.0], &q, range).unwrap(), 0.0);
    }

    #[test]
    fn conical_equals_transformed_vertical() {
        for seed in 0..4 {
            let mu = small_measure(seed);
            let q = Quadrature::new(3).unwrap();
            let range = TimeRange::window(&mu);
            let f: Vec<f64> = (0..mu.len()).map(|i| ((i * 7 + seed as usize) % 5) as f64 - 2.0).collect();
            for kernel in [
                Box::new(SizeProfile::new(1.0, 1.0).unwrap()) as Box<dyn TimeKernel>,
                Box::new(MeanZero::new(0.5, 1.0).unwrap()),
            ] {
                let s = conical_sf_sq(kernel.as_ref(), &mu, &f, &q, range).unwrap();
                let tk = transform_kernel(kernel.as_ref(), &mu);
                let v = vertical_sf_sq(&tk, &mu, &f, &q, range).unwrap();
                assert!((s - v).abs() <= 1e-9 * v.abs().max(1e-300), "{s} vs {v}");
            }
        }
    }

    #[test]
    fn transform_vanishes_without_mass_nearby() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.0], 1.0)], 1.0, 0, 0).unwrap();
        let tk = transform_kernel(&k, &mu);
        assert_eq!(tk.eval(0.5, &[5.0], &[0.0]), 0.0);
        assert_eq!(tk.multiplier(1.0, &[0.0]), 1.0);
    }

    #[test]
    fn testing_functional_basics() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::uniform(16, 1.0, 4, 0).unwrap();
        let grid = ShiftedGrid::standard(1, 0, 4, 3, 0.25).unwrap();
        let h = Hierarchy::new(&mu, &grid).unwrap();
        let q = Quadrature::default();
        let root = h.roots()[0];
        let zero = vec![0.0; 16];
        assert_eq!(testing_functional(&k, &h, root, &zero, &q).value, 0.0);
        let ones = vec![1.0; 16];
        let a = testing_functional(&k, &h, root, &ones, &q);
        let h3 = Hierarchy::new(&mu.scaled(3.0).unwrap(), &grid).unwrap();
        let b = testing_functional(&k, &h3, root, &ones, &q);
        // theta is linear in mu, so the value is cubic and the ratio quadratic.
        assert!((b.value / 27.0 - a.value).abs() <= 1e-12 * a.value);
        assert!((b.ratio / 9.0 - a.ratio).abs() <= 1e-12 * a.ratio);
        assert!(a.ratio > 0.0 && a.ratio.is_finite());
    }

    #[test]
    fn testing_functional_one_atom_dense_oracle() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(vec![0.5], 0.25)], 1.0, 5, 0).unwrap();
        let grid = ShiftedGrid::standard(1, 0, 5, 3, 0.25).unwrap();
        let h = Hierarchy::new(&mu, &grid).unwrap();
        let root = h.roots()[0];
        let coarse = testing_functional(&k, &h, root, &[1.0], &Quadrature::new(8).unwrap());
        let dense = testing_functional(&k, &h, root, &[1.0], &Quadrature::new(512).unwrap());
        assert!((coarse.ratio - dense.ratio).abs() / dense.ratio < 2e-3);
    }

    proptest! {
        #[test]
        fn theta_is_linear(
            f in proptest::collection::vec(-5.0f64..5.0, 12),
            g in proptest::collection::vec(-5.0f64..5.0, 12),
            t in 0.01f64..4.0, x in -1.0f64..2.0,
        ) {
            let mu = small_measure(3);
            let k = MeanZero::new(1.0, 1.0).unwrap();
            let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
            let lhs = theta(&k, &mu, &sum, t, &[x]);
            let rhs = theta(&k, &mu, &f, t, &[x]) + theta(&k, &mu, &g, t, &[x]);
            let scale = f.iter().chain(&g).map(|v| v.abs()).sum::<f64>().max(1.0) * 10.0 / t;
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn vertical_quadrature_is_cauchy_in_k() {
        let k = SizeProfile::new(1.0, 1.0).unwrap();
        let mu = small_measure(5);
        let range = TimeRange::window(&mu);
        let f: Vec<f64> = (0..mu.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let vals: Vec<f64> = [2, 4, 8, 16, 32]
            .iter()
            .map(|&kk| vertical_sf_sq(&k, &mu, &f, &Quadrature::new(kk).unwrap(), range).unwrap())
            .collect();
        let diffs: Vec<f64> = vals.windows(2).map(|w| (w[0] - w[1]).abs() / w[1]).collect();
        assert!(diffs.windows(2).all(|d| d[1] < d[0]), "{diffs:?}");
    }
}
