//! Standard and randomly shifted dyadic grids.
//!
//! A grid `D(w)` is given by shift bits `w_i in {0,1}^n` for `-s < i <= J`. The
//! cube of generation `g` with standard index `k` is the half-open box
//! `[k 2^-g + x_g, (k+1) 2^-g + x_g)` where `x_g = sum_{i > g} 2^-i w_i`.
//! All positions are kept as integers in units of `2^-J`, so the geometry and
//! the goodness test are exact.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// A cube of a [`ShiftedGrid`]: generation `gen` (side `2^-gen`) and the
/// standard-lattice index it is the translate of.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub gen: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn new(gen: i32, index: Vec<i64>) -> Self {
        Self { gen, index }
    }

    pub fn side(&self) -> f64 {
        2f64.powi(-self.gen)
    }
}

/// Spatial box plus the two time intervals attached to a cube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeGeometry {
    /// Lower corner (inclusive).
    pub lower: Vec<f64>,
    /// Upper corner (exclusive).
    pub upper: Vec<f64>,
    /// Time interval of the Carleson box, `(0, l(Q))`.
    pub carleson: (f64, f64),
    /// Time interval of the Whitney region, `(l(Q)/2, l(Q))`.
    pub whitney: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub n: usize,
    pub s: u32,
    #[serde(rename = "J")]
    pub j: u32,
    pub r: u32,
    pub gamma: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedGrid {
    dim: usize,
    coarse: u32,
    fine: u32,
    r: u32,
    gamma: f64,
    seed: Option<u64>,
    /// `bits[i + s - 1]` is `w_i`.
    bits: Vec<Vec<u8>>,
    /// `offsets[g + s]` is `x_g` in units of `2^-J`.
    offsets: Vec<Vec<i64>>,
}

/// `gamma = alpha / (2m + 2 alpha)`.
pub fn goodness_gamma(alpha: f64, m: f64) -> f64 {
    alpha / (2.0 * m + 2.0 * alpha)
}

/// Union bound `sum_{k >= r} 2n 2^{-k gamma}` on the badness probability.
pub fn badness_union_bound(n: usize, r: u32, gamma: f64) -> f64 {
    2.0 * n as f64 * 2f64.powf(-(r as f64) * gamma) / (1.0 - 2f64.powf(-gamma))
}

/// Smallest `r` with `2^{r(1-gamma)} >= 3` and union-bound badness below one.
pub fn auto_r(n: usize, gamma: f64) -> Result<u32> {
    check_gamma(gamma)?;
    (1..=200)
        .find(|&r| separation_ok(r, gamma) && badness_union_bound(n, r, gamma) < 1.0)
        .ok_or_else(|| Error::Parameter(format!("no admissible r for gamma = {gamma}")))
}

fn separation_ok(r: u32, gamma: f64) -> bool {
    2f64.powf(r as f64 * (1.0 - gamma)) >= 3.0
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("gamma must lie in (0,1), got {gamma}")))
    }
}

impl ShiftedGrid {
    /// Builds a grid from explicit shift bits, `bits[i + s - 1] = w_i` for `-s < i <= J`.
    pub fn from_bits(
        dim: usize,
        coarse: u32,
        fine: u32,
        r: u32,
        gamma: f64,
        bits: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        check_gamma(gamma)?;
        if r == 0 || !separation_ok(r, gamma) {
            return Err(Error::Parameter(format!(
                "r = {r} violates 2^(r(1-gamma)) >= 3 for gamma = {gamma}"
            )));
        }
        if coarse + fine > 60 {
            return Err(Error::Parameter("window too deep for exact integer geometry".into()));
        }
        let nbits = (coarse + fine) as usize;
        if bits.len() != nbits || bits.iter().any(|b| b.len() != dim || b.iter().any(|&x| x > 1)) {
            return Err(Error::Parameter(format!(
                "expected {nbits} shift bit vectors of length {dim} with entries in {{0,1}}"
            )));
        }
        let s = coarse as i32;
        let j = fine as i32;
        // x_g = sum_{i = g+1}^{J} 2^{J-i} w_i, accumulated from the bottom.
        let mut offsets = vec![vec![0i64; dim]; nbits + 1];
        for g in (-s..j).rev() {
            let i = g + 1;
            let w = &bits[(i + s - 1) as usize];
            let below = offsets[(g + 1 + s) as usize].clone();
            offsets[(g + s) as usize] = below
                .iter()
                .zip(w)
                .map(|(&o, &b)| o + (b as i64) * (1i64 << (j - i)))
                .collect();
        }
        Ok(Self { dim, coarse, fine, r, gamma, seed: None, bits, offsets })
    }

    /// The unshifted grid `D_0`.
    pub fn standard(dim: usize, coarse: u32, fine: u32, r: u32, gamma: f64) -> Result<Self> {
        Self::from_bits(dim, coarse, fine, r, gamma, vec![vec![0; dim]; (coarse + fine) as usize])
    }

    /// Draws every `w_i` uniformly from `{0,1}^n` with a seeded ChaCha stream.
    pub fn sample(seed: u64, dim: usize, coarse: u32, fine: u32, r: u32, gamma: f64) -> Result<Self> {
        let mut g = rng::stream(seed, 0);
        let bits = (0..coarse + fine)
            .map(|_| (0..dim).map(|_| g.gen_range(0..2u8)).collect())
            .collect();
        let mut grid = Self::from_bits(dim, coarse, fine, r, gamma, bits)?;
        grid.seed = Some(seed);
        Ok(grid)
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        match d.seed {
            Some(seed) => Self::sample(seed, d.n, d.s, d.j, d.r, d.gamma),
            None => Self::standard(d.n, d.s, d.j, d.r, d.gamma),
        }
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            n: self.dim,
            s: self.coarse,
            j: self.fine,
            r: self.r,
            gamma: self.gamma,
            seed: self.seed,
        }
    }

    /// Shift bits as `(i, w_i)` pairs, for replay through [`ShiftedGrid::from_bits`].
    pub fn bits(&self) -> Vec<(i32, Vec<u8>)> {
        self.bits
            .iter()
            .enumerate()
            .map(|(k, b)| (k as i32 - self.coarse as i32 + 1, b.clone()))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn coarse(&self) -> u32 {
        self.coarse
    }
    pub fn fine(&self) -> u32 {
        self.fine
    }
    pub fn r(&self) -> u32 {
        self.r
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Coarsest generation, `-s`.
    pub fn top_gen(&self) -> i32 {
        -(self.coarse as i32)
    }

    /// Finest generation, `J`.
    pub fn bottom_gen(&self) -> i32 {
        self.fine as i32
    }

    pub fn contains_gen(&self, gen: i32) -> bool {
        (self.top_gen()..=self.bottom_gen()).contains(&gen)
    }

    fn offset(&self, gen: i32) -> &[i64] {
        &self.offsets[(gen + self.coarse as i32) as usize]
    }

    /// Side length of a generation in units of `2^-J`.
    fn side_units(&self, gen: i32) -> i64 {
        1i64 << (self.fine as i32 - gen)
    }

    fn unit(&self) -> f64 {
        2f64.powi(-(self.fine as i32))
    }

    /// Lower corner of `q` in units of `2^-J`.
    pub fn lower_units(&self, q: &DyadicCube) -> Vec<i64> {
        let side = self.side_units(q.gen);
        q.index.iter().zip(self.offset(q.gen)).map(|(&k, &o)| k * side + o).collect()
    }

    pub fn geometry(&self, q: &DyadicCube) -> CubeGeometry {
        let side = q.side();
        let lower: Vec<f64> =
            self.lower_units(q).iter().map(|&u| u as f64 * self.unit()).collect();
        let upper = lower.iter().map(|&a| a + side).collect();
        CubeGeometry { lower, upper, carleson: (0.0, side), whitney: (side / 2.0, side) }
    }

    /// The generation-`gen` cube containing a point.
    pub fn cube_containing(&self, point: &[f64], gen: i32) -> DyadicCube {
        let scale = 2f64.powi(self.fine as i32);
        let side = self.side_units(gen) as f64;
        let index = point
            .iter()
            .zip(self.offset(gen))
            .map(|(&x, &o)| ((x * scale - o as f64) / side).floor() as i64)
            .collect();
        DyadicCube { gen, index }
    }

    fn cube_at_units(&self, lower: &[i64], gen: i32) -> DyadicCube {
        let side = self.side_units(gen);
        let index = lower
            .iter()
            .zip(self.offset(gen))
            .map(|(&u, &o)| (u - o).div_euclid(side))
            .collect();
        DyadicCube { gen, index }
    }

    /// `Q^{(k)}`, defined iff `gen(Q) - k >= -s`.
    pub fn ancestor(&self, q: &DyadicCube, k: u32) -> Option<DyadicCube> {
        let gen = q.gen - k as i32;
        (gen >= self.top_gen()).then(|| self.cube_at_units(&self.lower_units(q), gen))
    }

    pub fn parent(&self, q: &DyadicCube) -> Option<DyadicCube> {
        self.ancestor(q, 1)
    }

    /// The `2^n` children; empty at the bottom generation.
    pub fn children(&self, q: &DyadicCube) -> Vec<DyadicCube> {
        if q.gen >= self.bottom_gen() {
            return Vec::new();
        }
        let w = &self.bits[(q.gen + self.coarse as i32) as usize];
        let base: Vec<i64> = q.index.iter().zip(w).map(|(&k, &b)| 2 * k + b as i64).collect();
        (0..1usize << self.dim)
            .map(|mask| DyadicCube {
                gen: q.gen + 1,
                index: base.iter().enumerate().map(|(c, &k)| k + ((mask >> c) & 1) as i64).collect(),
            })
            .collect()
    }

    /// Whether `inner` is contained in `outer`.
    pub fn contains(&self, outer: &DyadicCube, inner: &DyadicCube) -> bool {
        inner.gen >= outer.gen
            && self.ancestor(inner, (inner.gen - outer.gen) as u32).as_ref() == Some(outer)
    }

    /// Euclidean distance between the closures of two cubes.
    pub fn distance(&self, a: &DyadicCube, b: &DyadicCube) -> f64 {
        let (la, lb) = (self.lower_units(a), self.lower_units(b));
        let (sa, sb) = (self.side_units(a.gen), self.side_units(b.gen));
        let sq: f64 = la
            .iter()
            .zip(&lb)
            .map(|(&x, &y)| {
                let gap = (y - (x + sa)).max(x - (y + sb)).max(0);
                let g = gap as f64;
                g * g
            })
            .sum();
        sq.sqrt() * self.unit()
    }

    /// Distance from `q` to the union of all cube boundaries of generation
    /// `coarse_gen`, in units of `2^-J`.
    fn boundary_distance_units(&self, q: &DyadicCube, coarse_gen: i32) -> i64 {
        let period = self.side_units(coarse_gen);
        let len = self.side_units(q.gen);
        self.lower_units(q)
            .iter()
            .zip(self.offset(coarse_gen))
            .map(|(&u, &o)| {
                let p = (u - o).rem_euclid(period);
                p.min(period - p - len)
            })
            .min()
            .unwrap_or(0)
    }

    /// `q` is bad iff some generation `g~` with `2^r l(Q) <= 2^-g~ <= 2^s` has
    /// `d(Q, boundary) <= l(Q)^gamma (2^-g~)^(1-gamma)`.
    pub fn is_good(&self, q: &DyadicCube) -> bool {
        self.is_good_with_r(q, self.r)
    }

    pub fn is_good_with_r(&self, q: &DyadicCube, r: u32) -> bool {
        let len = self.side_units(q.gen) as f64;
        let last = q.gen - r as i32;
        (self.top_gen()..=last).all(|cg| {
            let threshold = len * 2f64.powf((q.gen - cg) as f64 * (1.0 - self.gamma));
            self.boundary_distance_units(q, cg) as f64 > threshold
        })
    }
}

/// How [`pi_good`] evaluates the goodness probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PiGoodMode {
    MonteCarlo { seed: u64, trials: u64 },
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiGoodEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Exact enumeration is capped at this many shift bits.
pub const EXACT_BIT_BUDGET: u32 = 24;

/// Probability that a fixed standard cube with `depth_budget` coarser
/// generations inside the window is good after a random shift.
///
/// `Exact` enumerates every configuration of the relevant bits in one
/// coordinate with integer arithmetic and raises the fraction to the `n`-th
/// power (a cube is good iff it is good in every coordinate, and coordinates
/// are independent). `MonteCarlo` builds actual shifted grids and calls
/// [`ShiftedGrid::is_good`], so the two modes share no code.
pub fn pi_good(
    n: usize,
    r: u32,
    gamma: f64,
    depth_budget: u32,
    mode: PiGoodMode,
) -> Result<PiGoodEstimate> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    match mode {
        PiGoodMode::Exact => {
            let total_bits = n as u64 * depth_budget as u64;
            if total_bits > EXACT_BIT_BUDGET as u64 {
                return Err(Error::Resource(format!(
                    "exact enumeration over {total_bits} shift bits exceeds the budget of {EXACT_BIT_BUDGET}"
                )));
            }
            Ok(PiGoodEstimate { estimate: exact_pi_good_1d(r, gamma, depth_budget, 0).powi(n as i32), stderr: 0.0 })
        }
        PiGoodMode::MonteCarlo { seed, trials } => {
            if trials == 0 {
                return Err(Error::Parameter("Monte-Carlo mode needs at least one trial".into()));
            }
            ShiftedGrid::standard(n, depth_budget, 0, r, gamma)?;
            let base = DyadicCube::new(0, vec![0; n]);
            let good: u64 = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let grid = ShiftedGrid::sample(rng::derive(seed, &[t]), n, depth_budget, 0, r, gamma)
                        .expect("parameters validated above");
                    grid.is_good(&base) as u64
                })
                .sum();
            let p = good as f64 / trials as f64;
            Ok(PiGoodEstimate { estimate: p, stderr: (p * (1.0 - p) / trials as f64).sqrt() })
        }
    }
}

/// Fraction of relevant-bit configurations for which the 1-D cube with
/// standard index `base` is good.
pub fn exact_pi_good_1d(r: u32, gamma: f64, depth_budget: u32, base: i64) -> f64 {
    let total = 1u64 << depth_budget;
    let thresholds: Vec<(u32, f64)> =
        (r..=depth_budget).map(|k| (k, 2f64.powf(k as f64 * (1.0 - gamma)))).collect();
    let good = (0..total)
        .into_par_iter()
        .filter(|&u| {
            thresholds.iter().all(|&(k, thr)| {
                let period = 1i64 << k;
                let p = (base - (u as i64 & (period - 1))).rem_euclid(period);
                (p.min(period - 1 - p) as f64) > thr
            })
        })
        .count();
    good as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(s: u32, j: u32) -> ShiftedGrid {
        ShiftedGrid::standard(1, s, j, 3, 0.25).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = ShiftedGrid::sample(0, 2, 3, 5, 3, 0.25).unwrap();
        let b = ShiftedGrid::sample(0, 2, 3, 5, 3, 0.25).unwrap();
        assert_eq!(a, b);
        let c = ShiftedGrid::sample(1, 2, 3, 5, 3, 0.25).unwrap();
        assert_ne!(a.bits(), c.bits());
    }

    #[test]
    fn zero_bits_give_standard_grid() {
        let zero = ShiftedGrid::from_bits(1, 2, 4, 3, 0.25, vec![vec![0]; 6]).unwrap();
        let q = DyadicCube::new(2, vec![3]);
        assert_eq!(zero.geometry(&q).lower, vec![0.75]);
        assert_eq!(zero, grid1(2, 4));
    }

    #[test]
    fn gamma_from_exponents() {
        let gamma = goodness_gamma(1.0, 1.0);
        assert_eq!(gamma, 0.25);
        let g = ShiftedGrid::standard(1, 0, 4, 3, gamma).unwrap();
        assert_eq!(g.gamma(), 0.25);
    }

    #[test]
    fn parameter_errors() {
        assert!(ShiftedGrid::standard(1, 0, 4, 3, 0.0).is_err());
        assert!(ShiftedGrid::standard(1, 0, 4, 3, 1.0).is_err());
        // 2^(2 * 0.75) < 3
        assert!(ShiftedGrid::standard(1, 0, 4, 2, 0.25).is_err());
        assert!(ShiftedGrid::sample(0, 1, 0, 4, 2, 0.25).is_err());
    }

    #[test]
    fn geometry_of_simple_cubes() {
        let g = grid1(0, 4);
        let unit = g.geometry(&DyadicCube::new(0, vec![0]));
        assert_eq!((unit.lower[0], unit.upper[0]), (0.0, 1.0));
        assert_eq!(unit.whitney, (0.5, 1.0));
        let half = g.geometry(&DyadicCube::new(1, vec![1]));
        assert_eq!((half.lower[0], half.upper[0]), (0.5, 1.0));
        assert_eq!(half.carleson, (0.0, 0.5));
    }

    #[test]
    fn ancestor_is_integer_shift_in_standard_grid() {
        let g = grid1(2, 4);
        let q = DyadicCube::new(3, vec![5]);
        assert_eq!(g.ancestor(&q, 2), Some(DyadicCube::new(1, vec![5 >> 2])));
        assert_eq!(g.ancestor(&q, 5), Some(DyadicCube::new(-2, vec![0])));
        assert_eq!(g.ancestor(&q, 6), None);
    }

    #[test]
    fn children_partition_parent_in_shifted_grid() {
        for seed in 0..20 {
            let g = ShiftedGrid::sample(seed, 2, 2, 4, 3, 0.25).unwrap();
            let q = DyadicCube::new(1, vec![seed as i64 % 3 - 1, 2]);
            let pg = g.geometry(&q);
            let kids = g.children(&q);
            assert_eq!(kids.len(), 4);
            let mut vol = 0.0;
            for c in &kids {
                assert_eq!(g.parent(c).as_ref(), Some(&q));
                let cg = g.geometry(c);
                for d in 0..2 {
                    assert!(cg.lower[d] >= pg.lower[d] && cg.upper[d] <= pg.upper[d]);
                }
                vol += c.side().powi(2);
            }
            assert_eq!(vol, q.side().powi(2));
            for (a, b) in kids.iter().zip(kids.iter().skip(1)) {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn cube_containing_is_consistent_with_ancestors() {
        let g = ShiftedGrid::sample(7, 1, 3, 6, 3, 0.25).unwrap();
        for k in 0..64 {
            let x = [k as f64 / 64.0 + 1e-3];
            let fine = g.cube_containing(&x, 6);
            let geo = g.geometry(&fine);
            assert!(geo.lower[0] <= x[0] && x[0] < geo.upper[0]);
            for gen in -3..6 {
                assert_eq!(g.ancestor(&fine, (6 - gen) as u32).unwrap(), g.cube_containing(&x, gen));
            }
        }
    }

    #[test]
    fn corner_on_ancestor_boundary_is_bad() {
        let g = ShiftedGrid::standard(1, 10, 12, 4, 0.25).unwrap();
        // Index 0 at generation 8 shares its left endpoint with every coarser cube.
        assert!(!g.is_good(&DyadicCube::new(8, vec![0])));
    }

    #[test]
    fn centred_cube_is_good() {
        // Only the generation -6 hyperplanes are coarse enough; the cube sits
        // in the middle of its ancestor, far from them.
        let g = ShiftedGrid::standard(1, 6, 4, 8, 0.25).unwrap();
        let q = DyadicCube::new(2, vec![128]);
        assert_eq!(g.geometry(&q).lower[0], 32.0);
        assert!(g.is_good(&q));
    }

    #[test]
    fn huge_r_makes_everything_good() {
        let g = ShiftedGrid::standard(1, 2, 6, 40, 0.25).unwrap();
        for k in 0..64 {
            assert!(g.is_good(&DyadicCube::new(6, vec![k])));
        }
        let pg = pi_good(1, 40, 0.25, 20, PiGoodMode::Exact).unwrap();
        assert_eq!(pg.estimate, 1.0);
    }

    #[test]
    fn goodness_monotone_in_r() {
        for seed in 0..10 {
            let g = ShiftedGrid::sample(seed, 1, 8, 6, 3, 0.25).unwrap();
            for k in -40..40 {
                let q = DyadicCube::new(4, vec![k]);
                for r in 3..14 {
                    if g.is_good_with_r(&q, r) {
                        assert!(g.is_good_with_r(&q, r + 1));
                    }
                }
            }
        }
    }

    #[test]
    fn goodness_depends_only_on_coarse_bits() {
        // Resampling bits w_i with i > gen(Q) moves Q but keeps its goodness.
        let gen = 5;
        for seed in 0..30 {
            let g = ShiftedGrid::sample(seed, 1, 9, 9, 6, 0.25).unwrap();
            let mut bits: Vec<Vec<u8>> = g.bits().into_iter().map(|(_, b)| b).collect();
            for (k, b) in bits.iter_mut().enumerate() {
                let i = k as i32 - 9 + 1;
                if i > gen {
                    b[0] ^= ((seed as usize + k) % 2) as u8;
                }
            }
            let h = ShiftedGrid::from_bits(1, 9, 9, 6, 0.25, bits).unwrap();
            for k in -20..20 {
                let q = DyadicCube::new(gen, vec![k]);
                assert_eq!(g.is_good(&q), h.is_good(&q));
            }
        }
    }

    #[test]
    fn exact_pi_good_is_base_independent() {
        let a = exact_pi_good_1d(6, 0.25, 14, 0);
        let b = exact_pi_good_1d(6, 0.25, 14, 12345);
        assert_eq!(a, b);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn exact_mode_budget() {
        assert!(matches!(
            pi_good(2, 15, 0.25, 13, PiGoodMode::Exact),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn badness_frequency_below_union_bound() {
        let mc = pi_good(1, 15, 0.25, 24, PiGoodMode::MonteCarlo { seed: 3, trials: 20_000 }).unwrap();
        let bound = badness_union_bound(1, 15, 0.25);
        assert!((bound - 0.934).abs() < 1e-3, "{bound}");
        assert!(1.0 - mc.estimate <= bound);
    }

    #[test]
    fn auto_r_values() {
        assert_eq!(auto_r(1, 0.25).unwrap(), 15);
        let r = auto_r(1, 0.1).unwrap();
        assert!(badness_union_bound(1, r, 0.1) < 1.0 && badness_union_bound(1, r - 1, 0.1) >= 1.0);
    }
}
