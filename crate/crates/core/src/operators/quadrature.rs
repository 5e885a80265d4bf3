use serde::{Deserialize, Serialize};

use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Log-midpoint rule for `dt/t`: on the octave `(a, 2a)` the nodes are
/// `a 2^((j+1/2)/K)` with weight `ln 2 / K`, `j = 0..K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes_per_octave: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { nodes_per_octave: 8 }
    }
}

/// The octaves `(2^lo, 2^hi)`, given by integer exponents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub lo_exp: i32,
    pub hi_exp: i32,
}

impl TimeRange {
    pub fn new(lo_exp: i32, hi_exp: i32) -> Self {
        Self { lo_exp, hi_exp }
    }

    /// `(2^-J, 2^s)` for the measure's window.
    pub fn window(mu: &DiscreteMeasure) -> Self {
        Self { lo_exp: -(mu.fine() as i32), hi_exp: mu.coarse() as i32 }
    }

    pub fn check(&self) -> Result<()> {
        if self.lo_exp < self.hi_exp {
            Ok(())
        } else {
            Err(Error::Domain(format!("empty t-range (2^{}, 2^{})", self.lo_exp, self.hi_exp)))
        }
    }
}

impl Quadrature {
    pub fn new(nodes_per_octave: usize) -> Result<Self> {
        if nodes_per_octave == 0 {
            return Err(Error::Parameter("quadrature needs at least one node per octave".into()));
        }
        Ok(Self { nodes_per_octave })
    }

    pub fn weight(&self) -> f64 {
        std::f64::consts::LN_2 / self.nodes_per_octave as f64
    }

    /// Nodes of the octave `(2^e, 2^(e+1))`.
    pub fn octave(&self, e: i32) -> impl Iterator<Item = (f64, f64)> + '_ {
        let a = 2f64.powi(e);
        let k = self.nodes_per_octave as f64;
        let w = self.weight();
        (0..self.nodes_per_octave).map(move |j| (a * 2f64.powf((j as f64 + 0.5) / k), w))
    }

    /// Nodes of the Whitney band `(l/2, l)` of a generation-`gen` cube.
    pub fn whitney(&self, gen: i32) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.octave(-gen - 1)
    }

    pub fn nodes(&self, range: TimeRange) -> Vec<(f64, f64)> {
        (range.lo_exp..range.hi_exp).flat_map(|e| self.octave(e).collect::<Vec<_>>()).collect()
    }
}
