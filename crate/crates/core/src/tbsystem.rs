//! Accretive test-function systems `{b_Q}`.
//!
//! A system is a rule producing `b_Q` on the atoms of any occupied cube `Q`,
//! together with the constant `A` bounding `<|b_Q|^2>_Q`. Values are computed
//! on demand and cached only for cubes that are actually read.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubes::{Hierarchy, NodeId};
use crate::grid::DyadicCube;
use crate::operators::{testing_functional, Quadrature, TimeKernel};
use crate::{rng, Error, Result};

/// Tolerance on `<b_Q>_Q = 1` used by verification.
pub const MEAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemSpec {
    Trivial,
    Perturbed {
        epsilon: f64,
        #[serde(default)]
        seed: u64,
    },
    Adversarial {
        #[serde(default)]
        flips: Vec<FlipSpec>,
        #[serde(default)]
        random: Option<RandomFlips>,
    },
}

/// One modification of `b_cube` on a strict descendant `region`; the value
/// on the rest of `cube` is chosen so that the mean stays 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipSpec {
    pub cube: DyadicCube,
    pub region: DyadicCube,
    #[serde(flatten)]
    pub kind: FlipKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlipKind {
    /// `b = -kappa` on the region.
    Sign { kappa: f64 },
    /// `b = height` on the region.
    Spike { height: f64 },
}

/// Sign flips drawn independently for every cube.
///
/// With probability `density` a cube gets a flip on a random strict
/// descendant carrying less than `max_fraction` of its mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomFlips {
    pub seed: u64,
    pub density: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_max_fraction")]
    pub max_fraction: f64,
}

fn default_kappa() -> f64 {
    0.25
}

fn default_max_fraction() -> f64 {
    0.45
}

impl RandomFlips {
    pub fn new(seed: u64, density: f64) -> Self {
        Self { seed, density, kappa: default_kappa(), max_fraction: default_max_fraction() }
    }

    /// Largest `<b^2>` a flip of this rule can produce.
    pub fn a_bound(&self) -> f64 {
        let p = self.max_fraction;
        flip_second_moment(self.kappa, p).max(1.0)
    }
}

/// `<b^2>_Q` when `b = -kappa` on mass fraction `p` and mean 1 is kept.
fn flip_second_moment(kappa: f64, p: f64) -> f64 {
    let u = (1.0 + kappa * p) / (1.0 - p);
    kappa * kappa * p + u * u * (1.0 - p)
}

#[derive(Clone, Debug)]
pub struct AccretiveSystem {
    spec: SystemSpec,
    a: f64,
    explicit: HashMap<DyadicCube, Vec<f64>>,
    values: HashMap<DyadicCube, Vec<f64>>,
}

impl AccretiveSystem {
    /// `b_Q = 1_Q`, `A = 1`.
    pub fn trivial() -> Self {
        Self { spec: SystemSpec::Trivial, a: 1.0, explicit: HashMap::new(), values: HashMap::new() }
    }

    /// `b_Q = 1 + epsilon eta_Q`, renormalized to mean 1, with `A = (1+epsilon)^2`.
    pub fn perturbed(epsilon: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Parameter(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        Ok(Self {
            spec: SystemSpec::Perturbed { epsilon, seed },
            a: (1.0 + epsilon).powi(2),
            explicit: HashMap::new(),
            values: HashMap::new(),
        })
    }

    pub fn adversarial(h: &Hierarchy, flips: Vec<FlipSpec>, random: Option<RandomFlips>) -> Result<Self> {
        let mut a: f64 = 1.0;
        if let Some(rf) = &random {
            if !(0.0..=1.0).contains(&rf.density) || !(0.0 < rf.max_fraction && rf.max_fraction < 0.5) {
                return Err(Error::Construction(format!(
                    "random flips need density in [0,1] and max_fraction in (0, 1/2), got {rf:?}"
                )));
            }
            if !(rf.kappa >= 0.0 && rf.kappa < 0.5) {
                return Err(Error::Construction(format!("random flips need kappa in [0, 1/2), got {}", rf.kappa)));
            }
            a = a.max(rf.a_bound());
        }
        let mut explicit = HashMap::new();
        for flip in &flips {
            let values = explicit_values(h, flip)?;
            let id = h.find(&flip.cube).expect("checked by explicit_values");
            let w = &h.weights()[h.node(id).lo..h.node(id).hi];
            let second = values.iter().zip(w).map(|(v, w)| v * v * w).sum::<f64>() / h.node(id).mass;
            a = a.max(second);
            if explicit.insert(flip.cube.clone(), values).is_some() {
                return Err(Error::Construction(format!("cube {:?} has more than one flip", flip.cube)));
            }
        }
        Ok(Self { spec: SystemSpec::Adversarial { flips, random }, a, explicit, values: HashMap::new() })
    }

    pub fn from_spec(h: &Hierarchy, spec: &SystemSpec) -> Result<Self> {
        match spec {
            SystemSpec::Trivial => Ok(Self::trivial()),
            SystemSpec::Perturbed { epsilon, seed } => Self::perturbed(*epsilon, *seed),
            SystemSpec::Adversarial { flips, random } => Self::adversarial(h, flips.clone(), *random),
        }
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    /// The declared constant `A`, used by the stopping thresholds.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// `b_Q` on the node's atom run; a pure function of the system and the cube.
    pub fn compute(&self, h: &Hierarchy, id: NodeId) -> Vec<f64> {
        let node = h.node(id);
        let len = node.len();
        match &self.spec {
            SystemSpec::Trivial => vec![1.0; len],
            SystemSpec::Perturbed { epsilon, seed } => {
                let w = &h.weights()[node.lo..node.hi];
                let mut g = rng::stream(cube_seed(*seed, &node.cube), 1);
                let raw: Vec<f64> = (0..len).map(|_| g.gen_range(-1.0..1.0)).collect();
                let mean = weighted_mean(&raw, w);
                let mut eta: Vec<f64> = raw.iter().map(|v| v - mean).collect();
                let peak = eta.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                eta.iter_mut().for_each(|v| *v /= peak);
                let b: Vec<f64> = eta.iter().map(|v| 1.0 + epsilon * v).collect();
                renormalize(b, w)
            }
            SystemSpec::Adversarial { random, .. } => {
                if let Some(v) = self.explicit.get(&node.cube) {
                    return v.clone();
                }
                match random {
                    Some(rf) => random_flip(h, id, rf).unwrap_or_else(|| vec![1.0; len]),
                    None => vec![1.0; len],
                }
            }
        }
    }

    /// Computes and caches `b_Q`.
    pub fn materialize(&mut self, h: &Hierarchy, id: NodeId) -> &[f64] {
        let cube = h.node(id).cube.clone();
        if !self.values.contains_key(&cube) {
            let v = self.compute(h, id);
            self.values.insert(cube.clone(), v);
        }
        &self.values[&cube]
    }

    pub fn get(&self, cube: &DyadicCube) -> Option<&[f64]> {
        self.values.get(cube).map(|v| v.as_slice())
    }

    pub fn materialized(&self) -> impl Iterator<Item = (&DyadicCube, &Vec<f64>)> {
        self.values.iter()
    }

    /// `max <|b_Q|^2>_Q` over the cached cubes.
    pub fn achieved_a(&self, h: &Hierarchy) -> f64 {
        self.values
            .iter()
            .filter_map(|(c, v)| h.find(c).map(|id| second_moment(h, id, v)))
            .fold(0.0, f64::max)
    }
}

fn cube_seed(seed: u64, cube: &DyadicCube) -> u64 {
    let mut words = vec![cube.gen as i64 as u64];
    words.extend(cube.index.iter().map(|&k| k as u64));
    rng::derive(seed, &words)
}

fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()
}

fn renormalize(mut b: Vec<f64>, w: &[f64]) -> Vec<f64> {
    let mean = weighted_mean(&b, w);
    b.iter_mut().for_each(|v| *v /= mean);
    b
}

/// `<|b|^2>` over the node.
pub fn second_moment(h: &Hierarchy, id: NodeId, b: &[f64]) -> f64 {
    let n = h.node(id);
    b.iter().zip(&h.weights()[n.lo..n.hi]).map(|(v, w)| v * v * w).sum::<f64>() / n.mass
}

fn explicit_values(h: &Hierarchy, flip: &FlipSpec) -> Result<Vec<f64>> {
    let id = h
        .find(&flip.cube)
        .ok_or_else(|| Error::Construction(format!("flip cube {:?} carries no mass", flip.cube)))?;
    let region = h
        .find(&flip.region)
        .ok_or_else(|| Error::Construction(format!("flip region {:?} carries no mass", flip.region)))?;
    if region == id || !h.contains(id, region) {
        return Err(Error::Construction(format!(
            "flip region {:?} is not a strict descendant of {:?}",
            flip.region, flip.cube
        )));
    }
    let (q, d) = (h.node(id), h.node(region));
    let p = d.mass / q.mass;
    let inside = match flip.kind {
        FlipKind::Sign { kappa } => {
            if p >= 0.5 {
                return Err(Error::Construction(format!(
                    "sign flip on {:?} covers mass fraction {p:.4} >= 1/2; the mean cannot stay 1 with the rest accretive",
                    flip.region
                )));
            }
            -kappa
        }
        FlipKind::Spike { height } => height,
    };
    if p >= 1.0 {
        return Err(Error::Construction(format!(
            "region {:?} carries all mass of {:?}; nothing is left to restore the mean",
            flip.region, flip.cube
        )));
    }
    let outside = (1.0 - inside * p) / (1.0 - p);
    let mut b: Vec<f64> = (q.lo..q.hi)
        .map(|pos| if pos >= d.lo && pos < d.hi { inside } else { outside })
        .collect();
    b = renormalize(b, &h.weights()[q.lo..q.hi]);
    Ok(b)
}

fn random_flip(h: &Hierarchy, id: NodeId, rf: &RandomFlips) -> Option<Vec<f64>> {
    let q = h.node(id);
    let mut g = rng::stream(cube_seed(rf.seed, &q.cube), 2);
    if q.children.is_empty() || g.gen::<f64>() >= rf.density {
        return None;
    }
    let mut cur = id;
    loop {
        let kids = &h.node(cur).children;
        if kids.is_empty() {
            if cur != id && h.node(cur).mass / q.mass < rf.max_fraction {
                break;
            }
            return None;
        }
        cur = kids[g.gen_range(0..kids.len())];
        let p = h.node(cur).mass / q.mass;
        if p < rf.max_fraction && g.gen_bool(0.5) {
            break;
        }
    }
    let d = h.node(cur);
    let p = d.mass / q.mass;
    let outside = (1.0 + rf.kappa * p) / (1.0 - p);
    let b: Vec<f64> =
        (q.lo..q.hi).map(|pos| if pos >= d.lo && pos < d.hi { -rf.kappa } else { outside }).collect();
    Some(renormalize(b, &h.weights()[q.lo..q.hi]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeTesting {
    pub cube: DyadicCube,
    pub mass: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingReport {
    pub cubes: Vec<CubeTesting>,
    pub max_ratio: f64,
    pub declared_a: f64,
    pub achieved_a: f64,
    pub max_mean_error: f64,
    pub threshold: Option<f64>,
    pub violators: Vec<DyadicCube>,
}

impl TestingReport {
    /// Testing ratio of a cube, if it was evaluated.
    pub fn ratio_of(&self, cube: &DyadicCube) -> Option<f64> {
        self.cubes.iter().find(|c| &c.cube == cube).map(|c| c.ratio)
    }
}

/// Checks support, normalization and the `L^2` bound exactly on every
/// occupied cube and evaluates the Carleson-box testing functional.
pub fn verify_system(
    system: &AccretiveSystem,
    h: &Hierarchy,
    kernel: &dyn TimeKernel,
    quad: &Quadrature,
    threshold: Option<f64>,
) -> Result<TestingReport> {
    let ids: Vec<NodeId> = (0..h.len()).collect();
    let rows: Vec<Result<CubeTesting>> = ids
        .par_iter()
        .map(|&id| {
            let node = h.node(id);
            let b = system.compute(h, id);
            if b.len() != node.len() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("b_Q for {:?} is not a finite function on Q", node.cube)));
            }
            let mean = h.average(id, &spread(h, id, &b));
            if (mean - 1.0).abs() > MEAN_TOL {
                return Err(Error::Invariant(format!("<b_Q>_Q = {mean} for {:?}", node.cube)));
            }
            let second = second_moment(h, id, &b);
            if second > system.a() * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "<|b_Q|^2>_Q = {second} exceeds A = {} for {:?}",
                    system.a(),
                    node.cube
                )));
            }
            let tv = testing_functional(kernel, h, id, &b, quad);
            Ok(CubeTesting { cube: node.cube.clone(), mass: node.mass, mean, second_moment: second, ratio: tv.ratio })
        })
        .collect();
    let cubes = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let max_ratio = cubes.iter().map(|c| c.ratio).fold(0.0, f64::max);
    let achieved_a = cubes.iter().map(|c| c.second_moment).fold(0.0, f64::max);
    let max_mean_error = cubes.iter().map(|c| (c.mean - 1.0).abs()).fold(0.0, f64::max);
    let violators = match threshold {
        Some(t) => cubes.iter().filter(|c| c.ratio > t).map(|c| c.cube.clone()).collect(),
        None => Vec::new(),
    };
    Ok(TestingReport { cubes, max_ratio, declared_a: system.a(), achieved_a, max_mean_error, threshold, violators })
}

/// Embeds a node-run vector into a full hierarchy-ordered vector (zero elsewhere).
pub fn spread(h: &Hierarchy, id: NodeId, b: &[f64]) -> Vec<f64> {
    let n = h.node(id);
    let mut out = vec![0.0; h.weights().len()];
    out[n.lo..n.hi].copy_from_slice(b);
    out
}
