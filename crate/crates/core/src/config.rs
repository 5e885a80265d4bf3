//! JSON experiment configuration and its instantiation.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cubes::Hierarchy;
use crate::grid::{auto_r, goodness_gamma, ShiftedGrid};
use crate::measure::DiscreteMeasure;
use crate::operators::{KernelSpec, Quadrature, TimeKernel};
use crate::stopping::StoppingParams;
use crate::tbsystem::{AccretiveSystem, SystemSpec};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Uniform { n_atoms: usize, length: f64 },
    Cantor { level: u32, base: f64, length: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FSpec {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `1` everywhere except the atom nearest `position`, which carries
    /// `mass_fraction` of `||f||^2`.
    Spike { position: f64, mass_fraction: f64 },
    /// Independent uniform values in `[-1, 1]`.
    Random { seed: u64 },
}

fn one() -> f64 {
    1.0
}

/// `r` as a number or `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RParam {
    Fixed(u32),
    Named(String),
}

impl Default for RParam {
    fn default() -> Self {
        RParam::Named("auto".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    #[serde(default = "one_usize")]
    pub n: usize,
    pub s: u32,
    #[serde(rename = "J")]
    pub j: u32,
    #[serde(default)]
    pub r: RParam,
    /// `None` selects the unshifted grid.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Seed of every Monte-Carlo estimate in a report.
    #[serde(default)]
    pub monte_carlo: u64,
    #[serde(default = "default_trials")]
    pub mc_trials: u64,
}

fn default_trials() -> u64 {
    10_000
}

impl Default for Seeds {
    fn default() -> Self {
        Self { monte_carlo: 0, mc_trials: default_trials() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSpec,
    pub kernel: KernelSpec,
    #[serde(default = "trivial")]
    pub system: SystemSpec,
    pub f: FSpec,
    pub grid: GridParams,
    #[serde(default = "default_quad_k")]
    pub quad_k: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub outputs: Outputs,
    /// Tree thresholds; only fault-injection runs change them.
    #[serde(default)]
    pub stopping: StoppingParams,
}

fn trivial() -> SystemSpec {
    SystemSpec::Trivial
}

fn default_quad_k() -> usize {
    8
}

/// Everything an experiment needs, built from a validated configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub measure: DiscreteMeasure,
    pub grid: ShiftedGrid,
    pub hierarchy: Hierarchy,
    pub kernel: Box<dyn TimeKernel>,
    pub system: AccretiveSystem,
    pub f: Vec<f64>,
    pub quad: Quadrature,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Instantiates the measure alone, relative paths resolved against `base`.
    pub fn build_measure(&self, base: Option<&Path>) -> Result<DiscreteMeasure> {
        let (s, j) = (self.grid.s, self.grid.j);
        match &self.measure {
            MeasureSpec::Uniform { n_atoms, length } => DiscreteMeasure::uniform(*n_atoms, *length, j, s),
            MeasureSpec::Cantor { level, base, length } => DiscreteMeasure::cantor(*level, *base, *length, j, s),
            MeasureSpec::File { path } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                Ok(DiscreteMeasure::load(&p)?.with_window(j, s))
            }
        }
    }

    /// `r`, resolving `"auto"` from the goodness exponent.
    pub fn resolve_r(&self, gamma: f64) -> Result<u32> {
        match &self.grid.r {
            RParam::Fixed(r) if *r > 0 => Ok(*r),
            RParam::Fixed(_) => Err(Error::Parameter("r must be positive".into())),
            RParam::Named(s) if s == "auto" => auto_r(self.grid.n, gamma),
            RParam::Named(s) => Err(Error::Parameter(format!("r must be a number or \"auto\", got \"{s}\""))),
        }
    }

    /// Validates and instantiates the configuration.
    pub fn build(&self, base: Option<&Path>) -> Result<Experiment> {
        if self.quad_k == 0 {
            return Err(Error::Parameter("quad_k must be positive".into()));
        }
        let measure = self.build_measure(base)?;
        if measure.dim() != self.grid.n {
            return Err(Error::Parameter(format!(
                "grid dimension {} differs from measure dimension {}",
                self.grid.n,
                measure.dim()
            )));
        }
        let kernel = self.kernel.build(measure.m())?;
        let gamma = goodness_gamma(self.kernel.alpha, measure.m());
        let r = self.resolve_r(gamma)?;
        let grid = match self.grid.seed {
            Some(seed) => ShiftedGrid::sample(seed, self.grid.n, self.grid.s, self.grid.j, r, gamma)?,
            None => ShiftedGrid::standard(self.grid.n, self.grid.s, self.grid.j, r, gamma)?,
        };
        let hierarchy = Hierarchy::new(&measure, &grid)?;
        let system = AccretiveSystem::from_spec(&hierarchy, &self.system)?;
        let f = self.build_f(&measure)?;
        Ok(Experiment {
            config: self.clone(),
            measure,
            grid,
            hierarchy,
            kernel,
            system,
            f,
            quad: Quadrature::new(self.quad_k)?,
        })
    }

    pub fn build_f(&self, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        build_f(&self.f, mu)
    }
}

/// The function values in measure atom order.
pub fn build_f(spec: &FSpec, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
    let n = mu.len();
    match *spec {
        FSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(Error::Parameter("constant f must be finite".into()));
            }
            Ok(vec![value; n])
        }
        FSpec::Random { seed } => {
            let mut g = rng::stream(seed, 7);
            Ok((0..n).map(|_| g.gen_range(-1.0..=1.0)).collect())
        }
        FSpec::Spike { position, mass_fraction } => {
            if !(0.0..1.0).contains(&mass_fraction) {
                return Err(Error::Parameter(format!("spike mass fraction must lie in [0, 1), got {mass_fraction}")));
            }
            if mu.dim() != 1 {
                return Err(Error::Parameter("spike position is one-dimensional".into()));
            }
            let a = (0..n)
                .min_by(|&i, &j| (mu.point(i)[0] - position).abs().total_cmp(&(mu.point(j)[0] - position).abs()))
                .ok_or_else(|| Error::Parameter("empty measure".into()))?;
            let rest = mu.total_mass() - mu.mass(a);
            let height = if rest == 0.0 { 1.0 } else { (mass_fraction / (1.0 - mass_fraction) * rest / mu.mass(a)).sqrt() };
            let mut f = vec![1.0; n];
            f[a] = height.max(1.0);
            Ok(f)
        }
    }
}
