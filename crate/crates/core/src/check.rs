//! Cross-engine equivalence: the exhaustive phase-sum purity of the sampler
//! against the exact sign-state purity, realization by realization.

use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{build_layer_plan, sample_from_plan, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::exact::{evolve_exact, purity_exact, SignState};
use crate::lattice::{Boundary, Filling, Partition, SectorSpec};
use crate::observables::{exhaustive_purity, MAX_EXHAUSTIVE_SITES};
use crate::rng::{stream, Purpose};

/// Threshold above which `oracle-check` reports failure.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCase {
    pub model: Model,
    pub l: usize,
    pub sector: SectorSpec,
    pub p_u: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: OracleCase,
    pub realizations: usize,
    pub t_max: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub cases: Vec<CaseResult>,
    pub max_deviation: f64,
}

impl OracleReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

/// Largest admissible system with at most `l_max` sites.
fn largest_l(model: Model, l_max: usize) -> usize {
    let m = model.period();
    l_max / m * m
}

/// Every model at `p ∈ {0, 0.5, 1}`, `p_u = 0.5`, in the mixed ensemble at
/// the largest admissible `L ≤ mixed_l` and at half filling with
/// `L = fixed_l`.
pub fn default_suite(mixed_l: usize, fixed_l: usize) -> Vec<OracleCase> {
    let half = SectorSpec::Fixed(Filling::new(1, 2).expect("1/2 is a filling"));
    let mut cases = Vec::new();
    for model in [Model::FredkinSwap, Model::SwapOnly, Model::Cswap4] {
        for (l, sector) in [(largest_l(model, mixed_l), SectorSpec::Mixed), (largest_l(model, fixed_l), half)] {
            for p in [0.0, 0.5, 1.0] {
                cases.push(OracleCase { model, l, sector, p_u: 0.5, p });
            }
        }
    }
    cases
}

/// Largest purity deviation over every depth `0..=t_max` of one realization.
pub fn check_realization(case: &OracleCase, t_max: usize, seed: u64, r: usize) -> Result<f64> {
    if case.l > MAX_EXHAUSTIVE_SITES {
        return Err(Error::config("l", format!("oracle check needs L <= {MAX_EXHAUSTIVE_SITES}, got {}", case.l)));
    }
    let part = Partition::new(case.l, case.l / 2, Boundary::Periodic)?;
    let spec = ModelSpec::new(case.model, part, case.p_u, case.p)?;
    let plan = build_layer_plan(&spec)?;
    let real = sample_from_plan(&spec, &plan, t_max, &mut stream(seed, Purpose::Realization, &[r as u64]));
    let fast = exhaustive_purity(&real, part, case.sector)?;
    let mut worst = 0.0f64;
    for (depth, &f) in fast.iter().enumerate() {
        let mut st = SignState::uniform(case.l, case.sector)?;
        evolve_exact(real.suffix(depth), &mut st)?;
        worst = worst.max((f - purity_exact(&st, part.l_a)).abs());
    }
    Ok(worst)
}

/// Run every case for `realizations` realizations of depth `t_max`.
pub fn oracle_check(cases: &[OracleCase], realizations: usize, t_max: usize, seed: u64) -> Result<OracleReport> {
    let tasks: Vec<(usize, usize)> = (0..cases.len())
        .flat_map(|c| (0..realizations).map(move |r| (c, r)))
        .collect();
    let devs = tasks
        .par_iter()
        .map(|&(c, r)| check_realization(&cases[c], t_max, seed ^ c as u64, r))
        .collect::<Result<Vec<f64>>>()?;
    let results: Vec<CaseResult> = cases
        .iter()
        .enumerate()
        .map(|(c, &case)| CaseResult {
            case,
            realizations,
            t_max,
            max_deviation: devs[c * realizations..(c + 1) * realizations]
                .iter()
                .fold(0.0f64, |a, &b| a.max(b)),
        })
        .collect();
    let max_deviation = results.iter().fold(0.0f64, |a, r| a.max(r.max_deviation));
    Ok(OracleReport { cases: results, max_deviation })
}
