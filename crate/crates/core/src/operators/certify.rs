use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TimeKernel;
use crate::measure::{dist, DiscreteMeasure};
use crate::rng;

/// How `(t, x, y, z)` quadruples are drawn.
///
/// `t` is log-uniform over the measure's window, `y` is an atom, `x` sits at
/// log-uniform distance `t 2^u`, `u` in `[-offset_octaves, offset_octaves]`,
/// and `z` is uniform in the open ball `|y - z| < t/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub seed: u64,
    pub samples: usize,
    #[serde(default = "default_offset")]
    pub offset_octaves: f64,
}

fn default_offset() -> f64 {
    8.0
}

impl SamplerSpec {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self { seed, samples, offset_octaves: default_offset() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelWitness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kernel: String,
    pub alpha: f64,
    pub m: f64,
    pub size_constant: f64,
    pub holder_constant: f64,
    pub sample_count: usize,
    pub worst_witnesses: Vec<KernelWitness>,
}

const WITNESSES: usize = 5;

/// Size ratio `|s_t(x,y)| (t+|x-y|)^(m+a) / t^a`.
pub fn size_ratio(kernel: &dyn TimeKernel, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let (a, m) = (kernel.alpha(), kernel.m());
    kernel.eval(t, x, y).abs() * (t + dist(x, y)).powf(m + a) / t.powf(a)
}

/// Hoelder ratio `|s_t(x,y) - s_t(x,z)| (t+|x-y|)^(m+a) / |y-z|^a`; zero when `z = y`.
pub fn holder_ratio(kernel: &dyn TimeKernel, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let d = dist(y, z);
    if d == 0.0 {
        return 0.0;
    }
    let (a, m) = (kernel.alpha(), kernel.m());
    (kernel.eval(t, x, y) - kernel.eval(t, x, z)).abs() * (t + dist(x, y)).powf(m + a) / d.powf(a)
}

pub fn draw_samples(mu: &DiscreteMeasure, spec: &SamplerSpec) -> Vec<KernelSample> {
    let n = mu.dim();
    let lo = -(mu.fine() as f64);
    let hi = mu.coarse() as f64;
    (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(rng::derive(spec.seed, &[i as u64]), 0);
            let t = if hi > lo { 2f64.powf(g.gen_range(lo..hi)) } else { 2f64.powf(lo) };
            let y = mu.point(g.gen_range(0..mu.len())).to_vec();
            let r = t * 2f64.powf(g.gen_range(-spec.offset_octaves..=spec.offset_octaves));
            let dir = unit(&mut g, n);
            let x: Vec<f64> = y.iter().zip(&dir).map(|(v, d)| v + r * d).collect();
            let dir = unit(&mut g, n);
            // Uniform radius law in the ball; the endpoint t/2 is excluded.
            let rho = 0.5 * t * g.gen::<f64>().powf(1.0 / n as f64);
            let z: Vec<f64> = y.iter().zip(&dir).map(|(v, d)| v + rho * d).collect();
            KernelSample { t, x, y, z }
        })
        .collect()
}

fn unit(g: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| g.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Maximal size and Hoelder ratios over the given samples.
pub fn certify_samples(kernel: &dyn TimeKernel, samples: &[KernelSample]) -> KernelReport {
    let ratios: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let h = if dist(&s.y, &s.z) < s.t / 2.0 {
                holder_ratio(kernel, s.t, &s.x, &s.y, &s.z)
            } else {
                0.0
            };
            (size_ratio(kernel, s.t, &s.x, &s.y), h)
        })
        .collect();
    let size_constant = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let holder_constant = ratios.iter().map(|r| r.1).fold(0.0, f64::max);

    let mut witnesses: Vec<KernelWitness> = Vec::new();
    for (s, &(sr, hr)) in samples.iter().zip(&ratios) {
        witnesses.push(KernelWitness { t: s.t, x: s.x.clone(), y: s.y.clone(), z: None, ratio: sr });
        witnesses.push(KernelWitness {
            t: s.t,
            x: s.x.clone(),
            y: s.y.clone(),
            z: Some(s.z.clone()),
            ratio: hr,
        });
        if witnesses.len() > 8 * WITNESSES {
            prune(&mut witnesses);
        }
    }
    prune(&mut witnesses);
    KernelReport {
        kernel: kernel.name().to_string(),
        alpha: kernel.alpha(),
        m: kernel.m(),
        size_constant,
        holder_constant,
        sample_count: samples.len(),
        worst_witnesses: witnesses,
    }
}

fn prune(w: &mut Vec<KernelWitness>) {
    w.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then_with(|| a.t.total_cmp(&b.t))
            .then_with(|| a.z.is_some().cmp(&b.z.is_some()))
    });
    w.truncate(WITNESSES);
}

/// Empirical lower bounds for the size and Hoelder constants of `kernel`.
pub fn certify_kernel(kernel: &dyn TimeKernel, mu: &DiscreteMeasure, spec: &SamplerSpec) -> KernelReport {
    certify_samples(kernel, &draw_samples(mu, spec))
}
