use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{whitney_gens, TILING_TOL};
use crate::cubes::Hierarchy;
use crate::grid::{pi_good, DyadicCube, PiGoodMode, ShiftedGrid};
use crate::measure::DiscreteMeasure;
use crate::operators::{vertical_sf_sq, Quadrature, TimeKernel, TimeRange};
use crate::{Error, Result};

/// `v[g - top][a] = sum_{t in band(g)} w |theta_t f(x_a)|^2` for every
/// generation in `gens`, in atom order. Independent of the grid.
pub fn band_values(
    kernel: &dyn TimeKernel,
    mu: &DiscreteMeasure,
    f: &[f64],
    quad: &Quadrature,
    gens: std::ops::RangeInclusive<i32>,
) -> Vec<Vec<f64>> {
    let bands: Vec<Vec<(f64, f64)>> = gens.map(|g| quad.whitney(g).collect()).collect();
    let per_atom: Vec<Vec<f64>> = (0..mu.len())
        .into_par_iter()
        .map(|a| {
            let x = mu.point(a);
            bands
                .iter()
                .map(|band| {
                    band.iter()
                        .map(|&(t, w)| {
                            let v = kernel.theta(mu, f, t, x);
                            w * v * v
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    (0..bands.len()).map(|g| per_atom.iter().map(|row| row[g]).collect()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilingReport {
    /// Sum over every occupied `R` of the Whitney-region integrals.
    pub lhs: f64,
    /// The strip integral over `(2^-J, 2^s)`.
    pub rhs: f64,
    pub rel_err: f64,
    /// The same sum restricted to good `R`.
    pub good_lhs: f64,
    pub pass: bool,
}

/// Whitney regions of one grid against the strip integral on shared nodes.
pub fn whitney_tiling_check(
    kernel: &dyn TimeKernel,
    h: &Hierarchy,
    f: &[f64],
    quad: &Quadrature,
) -> Result<TilingReport> {
    let mu = h.measure();
    if f.len() != mu.len() {
        return Err(Error::Contract(format!("f has {} values for {} atoms", f.len(), mu.len())));
    }
    let range = TimeRange::window(mu);
    let strip = quad.nodes(range);
    let mut tiled: Vec<(f64, f64)> = whitney_gens(h).rev().flat_map(|g| quad.whitney(g).collect::<Vec<_>>()).collect();
    let mut sorted = strip.clone();
    tiled.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if tiled != sorted {
        return Err(Error::Contract(format!(
            "Whitney bands give {} time nodes, the strip {}; they must coincide",
            tiled.len(),
            sorted.len()
        )));
    }
    let top = h.grid().top_gen();
    let v = band_values(kernel, mu, f, quad, whitney_gens(h));
    let grid = h.grid();
    let per_r: Vec<(f64, bool)> = h
        .nodes()
        .iter()
        .filter(|n| n.gen() < grid.bottom_gen())
        .map(|n| {
            let row = &v[(n.gen() - top) as usize];
            let s: f64 = (n.lo..n.hi).map(|p| h.weights()[p] * row[h.atom_at(p)]).sum();
            (s, grid.is_good(&n.cube))
        })
        .collect();
    let lhs: f64 = per_r.iter().map(|r| r.0).sum();
    let good_lhs: f64 = per_r.iter().filter(|r| r.1).map(|r| r.0).sum();
    let rhs = vertical_sf_sq(kernel, mu, f, quad, range)?;
    let rel_err = if rhs == 0.0 { lhs.abs() } else { (lhs - rhs).abs() / rhs.abs() };
    Ok(TilingReport { lhs, rhs, rel_err, good_lhs, pass: rel_err <= TILING_TOL })
}

/// The random grids of a Whitney averaging experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFamily {
    pub seeds: Vec<u64>,
    pub r: u32,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageReport {
    pub mc_mean: f64,
    pub full_value: f64,
    pub stderr: f64,
    pub z_score: f64,
    pub trials: usize,
    /// Exact goodness probability of a generation-`g` cube.
    pub pi_good: Vec<(i32, f64)>,
    pub pass: bool,
}

/// Monte-Carlo mean over shifted grids of
/// `sum_g pi_g^-1 sum_{R good, gen g} int int_{W_R} |theta_t f|^2`
/// against the full strip value.
///
/// The goodness probability is taken per generation, since a cube with fewer
/// coarser generations above it in the window has fewer chances to be bad.
pub fn whitney_average_check(
    kernel: &dyn TimeKernel,
    mu: &DiscreteMeasure,
    family: &GridFamily,
    f: &[f64],
    quad: &Quadrature,
) -> Result<AverageReport> {
    if f.len() != mu.len() {
        return Err(Error::Contract(format!("f has {} values for {} atoms", f.len(), mu.len())));
    }
    if family.seeds.len() < 2 {
        return Err(Error::Parameter("Whitney averaging needs at least two grids".into()));
    }
    let (s, j, n) = (mu.coarse(), mu.fine(), mu.dim());
    let probe = ShiftedGrid::standard(n, s, j, family.r, family.gamma)?;
    let h0 = Hierarchy::new(mu, &probe)?;
    let gens = whitney_gens(&h0);
    let top = probe.top_gen();
    let pis: Vec<(i32, f64)> = gens
        .clone()
        .map(|g| {
            let depth = (g - top) as u32;
            pi_good(n, family.r, family.gamma, depth, PiGoodMode::Exact).map(|e| (g, e.estimate))
        })
        .collect::<Result<_>>()?;
    if let Some(&(g, _)) = pis.iter().find(|p| p.1 == 0.0) {
        return Err(Error::Parameter(format!("no cube of generation {g} can be good; increase r")));
    }
    let v = band_values(kernel, mu, f, quad, gens.clone());
    let full_value: f64 = v.iter().map(|row| row.iter().zip(mu.masses()).map(|(a, m)| a * m).sum::<f64>()).sum();
    let samples: Vec<f64> = family
        .seeds
        .par_iter()
        .map(|&seed| -> Result<f64> {
            let grid = ShiftedGrid::sample(seed, n, s, j, family.r, family.gamma)?;
            let mut memo: HashMap<DyadicCube, bool> = HashMap::new();
            let mut total = 0.0;
            for (gi, &(g, pi)) in pis.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..mu.len() {
                    let q = grid.cube_containing(mu.point(a), g);
                    let good = *memo.entry(q).or_insert_with_key(|q| grid.is_good(q));
                    if good {
                        acc += mu.mass(a) * v[gi][a];
                    }
                }
                total += acc / pi;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let trials = samples.len();
    let mc_mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|x| (x - mc_mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let stderr = (var / trials as f64).sqrt();
    let diff = mc_mean - full_value;
    let z_score = if stderr > 1e-12 * full_value.abs() {
        diff / stderr
    } else if diff.abs() <= 1e-12 * full_value.abs() {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(AverageReport { mc_mean, full_value, stderr, z_score, trials, pi_good: pis, pass: z_score.abs() <= 3.0 })
}
