use serde::{Deserialize, Serialize};

use super::{
    case_budget, central_good_cube, es1_check, es2_check, paraproduct_check, schur_norm_estimate,
    whitney_tiling_check, CaseBudget, DecayTable, ParaproductReport, TilingReport,
};
use crate::config::{Experiment, ExperimentConfig};
use crate::cubes::NodeId;
use crate::grid::{pi_good, PiGoodEstimate, PiGoodMode, EXACT_BIT_BUDGET};
use crate::martingale::{decompose, sf_from, RootTermReport, SfReport};
use crate::operators::{vertical_sf_sq, TimeRange};
use crate::stopping::{carleson_check, cz_data_check, frontier_check, layer_decay_check, StoppingTree};
use crate::tbsystem::verify_system;
use crate::{Error, Result};

/// Families larger than this are cut to their coarsest cubes.
const SCHUR_FAMILY_CAP: usize = 1024;

/// One named checker outcome. Only exact identities and proved bounds appear
/// here; empirical constants are report data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    /// Set when the checker itself aborted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), pass: value <= bound, value, bound, error: None }
    }

    /// A checker that raised instead of measuring.
    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self { name: name.into(), pass: false, value: 1.0, bound: 0.0, error: Some(err.to_string()) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseRatios {
    pub small: f64,
    pub separated: f64,
    pub comparable: f64,
    pub contained: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecaySlopes {
    pub es1: Option<f64>,
    pub es2: Option<f64>,
    pub es1_table: Option<DecayTable>,
    pub es2_table: Option<DecayTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub grid: Option<u64>,
    pub monte_carlo: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TbReport {
    /// `int int |theta_t f|^2 dmu dt/t / ||f||^2` over the window.
    pub ratio: f64,
    pub vertical_sf_sq: f64,
    pub norm_sq: f64,
    pub cases: CaseRatios,
    pub budget: CaseBudget,
    pub paraproduct: Option<ParaproductReport>,
    pub schur_norm: f64,
    /// Goodness probability of the finest Whitney generation.
    pub pi_good: f64,
    pub pi_good_mc: PiGoodEstimate,
    pub testing_constant: f64,
    pub decay_slopes: DecaySlopes,
    pub square_function: Vec<SfReport>,
    pub root_terms: Vec<RootTermReport>,
    pub tiling: TilingReport,
    pub seeds: SeedRecord,
    pub checks: Vec<Check>,
}

impl TbReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// The whole pipeline on one configuration: verify the system, build a tree
/// per top cube, decompose, split the Whitney sum, and compare with the
/// direct square function.
pub fn tb_experiment(config: &ExperimentConfig, base: Option<&std::path::Path>) -> Result<TbReport> {
    let e = config.build(base)?;
    run(&e)
}

fn run(e: &Experiment) -> Result<TbReport> {
    let (h, kernel, quad) = (&e.hierarchy, e.kernel.as_ref(), &e.quad);
    let mu = &e.measure;
    let grid = &e.grid;
    let mut system = e.system.clone();
    let testing = verify_system(&system, h, kernel, quad, None)?;

    let n = grid.dim();
    let depth = (grid.bottom_gen() - 1 - grid.top_gen()).max(0) as u32;
    let seeds = &e.config.seeds;
    let mc = pi_good(n, grid.r(), grid.gamma(), depth, PiGoodMode::MonteCarlo { seed: seeds.monte_carlo, trials: seeds.mc_trials })?;
    let pi = if n as u64 * depth as u64 <= EXACT_BIT_BUDGET as u64 {
        pi_good(n, grid.r(), grid.gamma(), depth, PiGoodMode::Exact)?.estimate
    } else {
        mc.estimate
    };
    if pi == 0.0 {
        return Err(Error::Parameter("goodness probability is zero; increase r".into()));
    }

    let mut checks = vec![Check::new("testing.max_mean_error", testing.max_mean_error, 1e-10)];
    let mut budget = CaseBudget { split_pass: true, ..Default::default() };
    let mut para: Option<ParaproductReport> = None;
    let mut sfs = Vec::new();
    let mut roots = Vec::new();
    let mut main_tree: Option<(f64, StoppingTree)> = None;
    for &q in h.roots() {
        let qn = h.node(q);
        let mut fq = vec![0.0; mu.len()];
        for &a in h.atoms(q) {
            fq[a] = e.f[a];
        }
        if fq.iter().all(|&v| v == 0.0) {
            continue;
        }
        let tree = StoppingTree::build(h, &mut system, &fq, q, e.config.stopping)?;
        let car = carleson_check(&tree, h);
        checks.push(Check::new(format!("carleson[{:?}]", qn.cube.index), car.max_ratio, car.bound + crate::stopping::BOUND_TOL));
        let lay = layer_decay_check(&tree, h);
        checks.push(Check::new(format!("layer_decay[{:?}]", qn.cube.index), lay.max_ratio, lay.tau + crate::stopping::BOUND_TOL));
        let fr = frontier_check(&tree, h);
        checks.push(Check::new(format!("frontier[{:?}]", qn.cube.index), fr.violations.len() as f64, 0.0));
        let cz = cz_data_check(&tree, h)?;
        checks.push(Check::new(format!("cz_majorant[{:?}]", qn.cube.index), cz.lhs, cz.majorant * (1.0 + crate::stopping::BOUND_TOL)));
        let dec = decompose(&tree, h, &fq)?;
        checks.push(Check::new(format!("reconstruction[{:?}]", qn.cube.index), dec.residual(), crate::martingale::RECONSTRUCTION_TOL));
        sfs.push(sf_from(&dec, h));
        let rt = crate::martingale::root_term_check(&tree, h);
        checks.push(Check::new(format!("root_term[{:?}]", qn.cube.index), rt.lhs, rt.bound * (1.0 + crate::stopping::BOUND_TOL)));
        roots.push(rt);
        let b = case_budget(kernel, h, &tree, &dec, quad)?;
        budget.merge(&b);
        let p = paraproduct_check(kernel, h, &tree, &testing, &cz, quad)?;
        para = Some(match para {
            None => p,
            Some(mut acc) => {
                for i in 0..5 {
                    acc.chain[i] += p.chain[i];
                }
                acc.lhs = acc.chain[0];
                acc.max_average_ratio = acc.max_average_ratio.max(p.max_average_ratio);
                acc.monotone = acc.monotone && p.monotone;
                acc.average_pass = acc.average_pass && p.average_pass;
                acc
            }
        });
        if main_tree.as_ref().is_none_or(|(m, _)| qn.mass > *m) {
            main_tree = Some((qn.mass, tree));
        }
    }
    checks.push(Check::new("budget.split", if budget.split_pass { 0.0 } else { 1.0 }, 0.0));
    checks.push(Check::new("budget.identity", budget.identity_residual, super::CHAIN_TOL));
    checks.push(Check::new("budget.telescope", budget.telescope_residual, super::CHAIN_TOL));
    if let Some(p) = &para {
        checks.push(Check::new("paraproduct.monotone", if p.monotone { 0.0 } else { 1.0 }, 0.0));
        checks.push(Check::new("paraproduct.average", p.max_average_ratio, 1.0 + super::CHAIN_TOL));
    }

    let range = TimeRange::window(mu);
    let vertical = vertical_sf_sq(kernel, mu, &e.f, quad, range)?;
    let norm_sq = mu.norm_sq(&e.f);
    let tiling = whitney_tiling_check(kernel, h, &e.f, quad)?;
    checks.push(Check::new("whitney_tiling", tiling.rel_err, super::TILING_TOL));

    let mut family: Vec<NodeId> = (0..h.len()).collect();
    family.sort_by_key(|&id| (h.node(id).gen(), id));
    family.truncate(SCHUR_FAMILY_CAP);
    let schur_norm = schur_norm_estimate(h, &family, kernel.alpha(), kernel.m());

    let mut decay = DecaySlopes::default();
    if let Some((_, tree)) = &main_tree {
        let q = tree.root();
        // Deepest generation with a good cube at least r + 2 below Q*.
        let lowest = h.node(q).gen() + grid.r() as i32 + 2;
        let found = (lowest..grid.bottom_gen()).rev().find_map(|g| central_good_cube(h, q, g).map(|r| (g, r)));
        if let Some((gen, r)) = found {
            let kmax = (gen - h.node(q).gen()) as u32;
            {
                let ks = grid.r() + 1..=kmax;
                let t1 = es1_check(kernel, h, tree, r, ks.clone(), quad)?;
                let (t2, ing) = es2_check(kernel, h, tree, r, ks, quad)?;
                checks.push(Check::new("es2.ingredient", ing.max_over_4a.max(ing.max_at_father_over_sqrt_a), 1.0 + crate::stopping::BOUND_TOL));
                decay = DecaySlopes { es1: t1.slope, es2: t2.slope, es1_table: Some(t1), es2_table: Some(t2) };
            }
        }
    }

    let rat = budget.ratios();
    Ok(TbReport {
        ratio: if norm_sq > 0.0 { vertical / norm_sq } else { 0.0 },
        vertical_sf_sq: vertical,
        norm_sq,
        cases: CaseRatios { small: rat[0], separated: rat[1], comparable: rat[2], contained: rat[3] },
        budget,
        paraproduct: para,
        schur_norm,
        pi_good: pi,
        pi_good_mc: mc,
        testing_constant: testing.max_ratio,
        decay_slopes: decay,
        square_function: sfs,
        root_terms: roots,
        tiling,
        seeds: SeedRecord { grid: grid.seed(), monte_carlo: seeds.monte_carlo },
        checks,
    })
}

/// Outcome of the deterministic checkers alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<Check>,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs every deterministic checker. Library errors inside a checker become
/// failed checks; only construction of the experiment itself can return `Err`.
pub fn check_lemmas(config: &ExperimentConfig, base: Option<&std::path::Path>) -> Result<LemmaReport> {
    let e = config.build(base)?;
    let (h, kernel, quad, mu) = (&e.hierarchy, e.kernel.as_ref(), &e.quad, &e.measure);
    let mut system = e.system.clone();
    let tol = crate::stopping::BOUND_TOL;
    let mut checks = Vec::new();
    match verify_system(&system, h, kernel, quad, None) {
        Ok(t) => checks.push(Check::new("testing.max_mean_error", t.max_mean_error, 1e-10)),
        Err(err) => checks.push(Check::failed("testing", &err)),
    }
    for &q in h.roots() {
        let qn = h.node(q);
        let tag = format!("{:?}", qn.cube.index);
        let mut fq = vec![0.0; mu.len()];
        for &a in h.atoms(q) {
            fq[a] = e.f[a];
        }
        let tree = match StoppingTree::build(h, &mut system, &fq, q, e.config.stopping) {
            Ok(t) => t,
            Err(err) => {
                checks.push(Check::failed(format!("stopping_tree[{tag}]"), &err));
                continue;
            }
        };
        let car = carleson_check(&tree, h);
        checks.push(Check::new(format!("carleson[{tag}]"), car.max_ratio, car.bound + tol));
        let lay = layer_decay_check(&tree, h);
        checks.push(Check::new(format!("layer_decay[{tag}]"), lay.max_ratio, lay.tau + tol));
        let fr = frontier_check(&tree, h);
        checks.push(Check::new(format!("frontier[{tag}]"), fr.violations.len() as f64, 0.0));
        match cz_data_check(&tree, h) {
            Ok(cz) => checks.push(Check::new(format!("cz_majorant[{tag}]"), cz.lhs, cz.majorant * (1.0 + tol))),
            Err(err) => checks.push(Check::failed(format!("cz_majorant[{tag}]"), &err)),
        }
        match decompose(&tree, h, &fq) {
            Ok(dec) => checks.push(Check::new(
                format!("reconstruction[{tag}]"),
                dec.residual(),
                crate::martingale::RECONSTRUCTION_TOL,
            )),
            Err(err) => checks.push(Check::failed(format!("reconstruction[{tag}]"), &err)),
        }
        let rt = crate::martingale::root_term_check(&tree, h);
        checks.push(Check::new(format!("root_term[{tag}]"), rt.lhs, rt.bound * (1.0 + tol)));
    }
    match whitney_tiling_check(kernel, h, &e.f, quad) {
        Ok(t) => checks.push(Check::new("whitney_tiling", t.rel_err, super::TILING_TOL)),
        Err(err) => checks.push(Check::failed("whitney_tiling", &err)),
    }
    Ok(LemmaReport { checks })
}
