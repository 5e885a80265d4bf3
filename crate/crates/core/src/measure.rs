//! Finitely supported measures on `R^n` and their windowed upper power bound.
//!
//! An atomic measure cannot satisfy `mu(B(x,r)) <= C r^m` as `r -> 0`, so every
//! quantity here is evaluated only for radii inside the measure's scale window
//! `[2^-J, 2^s]`. The atoms stand for a continuous measure sampled at
//! resolution `2^-J`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    masses: Vec<f64>,
    m: f64,
    fine: u32,
    coarse: u32,
}

/// One near-maximal ball found by [`DiscreteMeasure::power_bound_report`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub center: Vec<f64>,
    pub radius: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundReport {
    pub constant: f64,
    pub witnesses: Vec<Witness>,
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    n: usize,
    m: f64,
    window: [i64; 2],
    atoms: Vec<Vec<f64>>,
}

const WITNESS_COUNT: usize = 5;

impl DiscreteMeasure {
    /// Builds a measure from `(point, mass)` atoms.
    ///
    /// `fine` is `J` and `coarse` is `s`: the window is `[2^-J, 2^s]`.
    pub fn new(
        dim: usize,
        atoms: Vec<(Vec<f64>, f64)>,
        m: f64,
        fine: u32,
        coarse: u32,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Parameter(format!("growth exponent must be positive, got {m}")));
        }
        let mut points = Vec::with_capacity(atoms.len() * dim);
        let mut masses = Vec::with_capacity(atoms.len());
        for (i, (p, w)) in atoms.into_iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Parameter(format!(
                    "atom {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!("atom {i} has non-positive mass {w}")));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Parameter(format!("atom {i} has a non-finite coordinate")));
            }
            points.extend_from_slice(&p);
            masses.push(w);
        }
        let mu = Self { dim, points, masses, m, fine, coarse };
        mu.check_distinct()?;
        Ok(mu)
    }

    fn check_distinct(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in idx.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                return Err(Error::Parameter(format!(
                    "atoms {} and {} coincide",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// `n` equally spaced atoms `k * length / n` of mass `length / n`, `m = 1`.
    pub fn uniform(n_atoms: usize, length: f64, fine: u32, coarse: u32) -> Result<Self> {
        if n_atoms == 0 || !(length > 0.0) {
            return Err(Error::Parameter("uniform measure needs atoms and positive length".into()));
        }
        let h = length / n_atoms as f64;
        let atoms = (0..n_atoms).map(|k| (vec![k as f64 * h], h)).collect();
        Self::new(1, atoms, 1.0, fine, coarse)
    }

    /// Level-`level` approximation of the Cantor set that keeps the two outer
    /// intervals of relative length `1/base` at every step, scaled to
    /// `[0, length]`.
    ///
    /// Atoms sit at the left endpoints of the `2^level` surviving intervals, each
    /// with mass `length^m / 2^level` where `m = log 2 / log base`.
    pub fn cantor(level: u32, base: f64, length: f64, fine: u32, coarse: u32) -> Result<Self> {
        if !(base > 2.0) {
            return Err(Error::Parameter(format!("cantor base must exceed 2, got {base}")));
        }
        if !(length > 0.0) || level > 24 {
            return Err(Error::Parameter("cantor length must be positive and level <= 24".into()));
        }
        let m = 2f64.ln() / base.ln();
        let mut lefts = vec![0.0_f64];
        let mut width = length;
        for _ in 0..level {
            let next = width / base;
            lefts = lefts.iter().flat_map(|&a| [a, a + width - next]).collect();
            width = next;
        }
        let mass = length.powf(m) / lefts.len() as f64;
        let atoms = lefts.into_iter().map(|a| (vec![a], mass)).collect();
        Self::new(1, atoms, m, fine, coarse)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// `J`, the fine-scale exponent.
    pub fn fine(&self) -> u32 {
        self.fine
    }

    /// `s`, the coarse-scale exponent.
    pub fn coarse(&self) -> u32 {
        self.coarse
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Same atoms, different window.
    pub fn with_window(&self, fine: u32, coarse: u32) -> Self {
        Self { fine, coarse, ..self.clone() }
    }

    /// Same atoms with every mass multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Parameter("scale factor must be positive".into()));
        }
        Ok(Self { masses: self.masses.iter().map(|w| w * factor).collect(), ..self.clone() })
    }

    /// `L^2(mu)` norm squared of a function given on the atoms.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.masses).map(|(v, w)| v * v * w).sum()
    }

    /// Mass of the open (`closed = false`) or closed Euclidean ball.
    pub fn ball_mass(&self, center: &[f64], radius: f64, closed: bool) -> Result<f64> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
        }
        if center.len() != self.dim {
            return Err(Error::Domain("ball center has wrong dimension".into()));
        }
        let r2 = radius * radius;
        Ok((0..self.len())
            .filter(|&i| {
                let d2 = dist_sq(self.point(i), center);
                if closed {
                    d2 <= r2
                } else {
                    d2 < r2
                }
            })
            .map(|i| self.masses[i])
            .sum())
    }

    /// Radii sampled by the power-bound report, coarse end inclusive.
    pub fn window_radii(&self, samples_per_scale: usize) -> Vec<f64> {
        let lo = -(self.fine as i32);
        let hi = self.coarse as i32;
        let q = samples_per_scale.max(1);
        let mut radii = Vec::new();
        for e in lo..hi {
            for j in 0..q {
                radii.push(2f64.powf(e as f64 + j as f64 / q as f64));
            }
        }
        radii.push(2f64.powi(hi));
        radii
    }

    /// Maximum of `mu(B(x,r)) / r^m` over open balls centred at the atoms with
    /// radii in the window.
    pub fn power_bound_report(&self, samples_per_scale: usize) -> Result<PowerBoundReport> {
        if samples_per_scale == 0 {
            return Err(Error::Domain("samples_per_scale must be at least 1".into()));
        }
        let radii = self.window_radii(samples_per_scale);
        let per_center: Vec<Vec<Witness>> = (0..self.len())
            .into_par_iter()
            .map(|c| {
                let center = self.point(c);
                let mut dm: Vec<(f64, f64)> = (0..self.len())
                    .map(|i| (dist_sq(self.point(i), center), self.masses[i]))
                    .collect();
                dm.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut cum = Vec::with_capacity(dm.len());
                let mut acc = 0.0;
                for &(_, w) in &dm {
                    acc += w;
                    cum.push(acc);
                }
                radii
                    .iter()
                    .map(|&r| {
                        let k = dm.partition_point(|&(d2, _)| d2 < r * r);
                        let mass = if k == 0 { 0.0 } else { cum[k - 1] };
                        Witness { center: center.to_vec(), radius: r, ratio: mass / r.powf(self.m) }
                    })
                    .collect()
            })
            .collect();
        let mut all: Vec<Witness> = per_center.into_iter().flatten().collect();
        // Stable order: ratio descending, then (center, radius) as produced.
        all.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));
        let constant = all.first().map_or(0.0, |w| w.ratio);
        all.truncate(WITNESS_COUNT);
        Ok(PowerBoundReport { constant, witnesses: all })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MeasureFile {
            n: self.dim,
            m: self.m,
            window: [-(self.fine as i64), self.coarse as i64],
            atoms: (0..self.len())
                .map(|i| {
                    let mut row = self.point(i).to_vec();
                    row.push(self.masses[i]);
                    row
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        let [lo, hi] = file.window;
        if lo > 0 || hi < 0 || lo > hi {
            return Err(Error::Parameter(format!(
                "window [{lo}, {hi}] must satisfy -J <= 0 <= s"
            )));
        }
        let atoms = file
            .atoms
            .into_iter()
            .enumerate()
            .map(|(i, mut row)| {
                if row.len() != file.n + 1 {
                    return Err(Error::Parameter(format!(
                        "atom row {i} has {} entries, expected {}",
                        row.len(),
                        file.n + 1
                    )));
                }
                let w = row.pop().unwrap_or_default();
                Ok((row, w))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.n, atoms, file.m, (-lo) as u32, hi as u32)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}
