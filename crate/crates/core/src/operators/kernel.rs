use serde::{Deserialize, Serialize};

use crate::measure::{dist, DiscreteMeasure};
use crate::{Error, Result};

/// A family of kernels `s_t(x, y)`, `t > 0`, with its exponents.
pub trait TimeKernel: Send + Sync {
    fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64;
    fn alpha(&self) -> f64;
    fn m(&self) -> f64;
    fn name(&self) -> &str;

    /// `theta_t f(x)`, summed exactly over all atoms.
    fn theta(&self, mu: &DiscreteMeasure, f: &[f64], t: f64, x: &[f64]) -> f64 {
        (0..mu.len()).map(|a| self.eval(t, x, mu.point(a)) * f[a] * mu.mass(a)).sum()
    }
}

/// `t^alpha / (t + |x-y|)^(m+alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeProfile {
    pub alpha: f64,
    pub m: f64,
}

impl SizeProfile {
    pub fn new(alpha: f64, m: f64) -> Result<Self> {
        check_exponents(alpha, m)?;
        Ok(Self { alpha, m })
    }

    #[inline]
    pub fn profile(&self, t: f64, r: f64) -> f64 {
        t.powf(self.alpha) / (t + r).powf(self.m + self.alpha)
    }
}

impl TimeKernel for SizeProfile {
    fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.profile(t, dist(x, y))
    }
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn m(&self) -> f64 {
        self.m
    }
    fn name(&self) -> &str {
        "size_profile"
    }
}

/// `p_t(x,y) - 2^(m-1) p_{2t}(x,y)` with `p` the size profile.
///
/// On the line with Lebesgue measure `int p_t(x,y) dy` scales like `t^(1-m)`,
/// so the subtraction cancels the integral exactly and the kernel has mean
/// zero in `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanZero {
    profile: SizeProfile,
    coeff: f64,
}

impl MeanZero {
    pub fn new(alpha: f64, m: f64) -> Result<Self> {
        Ok(Self { profile: SizeProfile::new(alpha, m)?, coeff: 2f64.powf(m - 1.0) })
    }
}

impl TimeKernel for MeanZero {
    fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let r = dist(x, y);
        self.profile.profile(t, r) - self.coeff * self.profile.profile(2.0 * t, r)
    }
    fn alpha(&self) -> f64 {
        self.profile.alpha
    }
    fn m(&self) -> f64 {
        self.profile.m
    }
    fn name(&self) -> &str {
        "mean_zero"
    }
}

/// `(mu(B(x,t)) / t^m)^(1/2) s_t(x,y)` with open balls.
pub struct TransformedKernel<'a> {
    inner: &'a dyn TimeKernel,
    measure: &'a DiscreteMeasure,
}

impl<'a> TransformedKernel<'a> {
    pub fn new(inner: &'a dyn TimeKernel, measure: &'a DiscreteMeasure) -> Self {
        Self { inner, measure }
    }

    pub fn multiplier(&self, t: f64, x: &[f64]) -> f64 {
        let mass = self.measure.ball_mass(x, t, false).unwrap_or(0.0);
        (mass / t.powf(self.inner.m())).sqrt()
    }
}

impl TimeKernel for TransformedKernel<'_> {
    fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.multiplier(t, x) * self.inner.eval(t, x, y)
    }
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }
    fn m(&self) -> f64 {
        self.inner.m()
    }
    fn name(&self) -> &str {
        "transformed"
    }
    fn theta(&self, mu: &DiscreteMeasure, f: &[f64], t: f64, x: &[f64]) -> f64 {
        self.multiplier(t, x) * self.inner.theta(mu, f, t, x)
    }
}

/// Kernel selection as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    pub alpha: f64,
}

impl KernelSpec {
    /// Instantiates the kernel for growth exponent `m`.
    pub fn build(&self, m: f64) -> Result<Box<dyn TimeKernel>> {
        match self.name.as_str() {
            "size_profile" => Ok(Box::new(SizeProfile::new(self.alpha, m)?)),
            "mean_zero" => Ok(Box::new(MeanZero::new(self.alpha, m)?)),
            other => Err(Error::Parameter(format!("unknown kernel '{other}'"))),
        }
    }
}

fn check_exponents(alpha: f64, m: f64) -> Result<()> {
    if alpha > 0.0 && m > 0.0 && alpha.is_finite() && m.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("kernel needs alpha > 0 and m > 0, got ({alpha}, {m})")))
    }
}
