//! Exact conditional variance of the stratified model-assisted estimator,
//! the plug-in variance estimator, and the between-strata / within-strata
//! decomposition of the gain over simple random sampling.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::population::{Mode, PopulationTable, StrataAssignment};
use crate::sampling::SampleDraw;

/// Mean of a slice; caller guarantees non-empty.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor n - 1; zero for fewer than two values.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Which total the variance reports target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Single-arm totals omit the outcome-variance term (no assignment
    /// randomness); two-arm totals are unaffected.
    FinitePopulation,
    /// Adds the outcome-variance term in single-arm mode. Default.
    Superpopulation,
}

/// Population mean/variance of the residuals in every (arm, stratum) cell;
/// requires full coding.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StratumStats {
    pub n_pop: usize,
    pub mean: f64,
    /// Divisor N_zk - 1; zero when the cell is a singleton.
    pub var: f64,
}

pub fn stratum_residual_stats(
    pop: &PopulationTable,
    strata: &StrataAssignment,
) -> Result<BTreeMap<(u8, usize), StratumStats>> {
    let mut out = BTreeMap::new();
    for arm in pop.arms() {
        for k in 1..=strata.k(arm) {
            let mut es = Vec::new();
            for i in strata.cell_indices(pop, arm, k) {
                let u = &pop.units()[i];
                let y = u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?;
                es.push(y - u.y_hat);
            }
            out.insert(
                (arm, k),
                StratumStats {
                    n_pop: es.len(),
                    mean: if es.is_empty() { 0.0 } else { mean(&es) },
                    var: sample_var(&es),
                },
            );
        }
    }
    Ok(out)
}

/// Arm-level residual variance (divisor N_z - 1); requires full coding.
pub fn arm_residual_variance(pop: &PopulationTable, arm: u8) -> Result<f64> {
    let mut es = Vec::new();
    for &i in pop.arm_indices(arm) {
        let u = &pop.units()[i];
        let y = u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?;
        es.push(y - u.y_hat);
    }
    Ok(sample_var(&es))
}

/// Stratum-wise decomposition of an arm variance:
/// (1 / (N - 1)) * sum_k [ (N_k - 1) var_k + N_k (mean_k - mean)^2 ].
pub fn pooled_variance_from_strata(cells: &[StratumStats]) -> f64 {
    let n: usize = cells.iter().map(|c| c.n_pop).sum();
    if n < 2 {
        return 0.0;
    }
    let grand = cells.iter().map(|c| c.n_pop as f64 * c.mean).sum::<f64>() / n as f64;
    let total: f64 = cells
        .iter()
        .map(|c| {
            (c.n_pop as f64 - 1.0) * c.var + c.n_pop as f64 * (c.mean - grand) * (c.mean - grand)
        })
        .sum();
    total / (n as f64 - 1.0)
}

/// Conditional variance of the model-assisted SRS estimator given the
/// assignment: sum_z (N_z - n_z) / N_z * var(e_z) / n_z. Oracle context.
pub fn srs_conditional_variance(
    pop: &PopulationTable,
    budgets: &BTreeMap<u8, usize>,
) -> Result<f64> {
    let mut total = 0.0;
    for arm in pop.arms() {
        let n_z = pop.arm_size(arm);
        let n = budgets
            .get(&arm)
            .copied()
            .ok_or(Error::EmptyArmSample(arm))?;
        if n == 0 || n > n_z {
            return Err(Error::BudgetExceedsArm {
                arm,
                budget: n,
                size: n_z,
            });
        }
        let var_e = arm_residual_variance(pop, arm)?;
        total += (n_z - n) as f64 / n_z as f64 * var_e / n as f64;
    }
    Ok(total)
}

/// Theorem-1 conditional variance of the stratified estimator given the
/// assignment, using population stratum variances (divisor N_zk - 1):
/// sum_z sum_k N_zk (N_zk - n_zk) / (N_z^2 n_zk) * var_k(e(z)).
///
/// Requires residuals for every unit (oracle / simulation context).
pub fn exact_conditional_variance(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    alloc: &Allocation,
) -> Result<f64> {
    alloc.check_against(strata, &pop.arms())?;
    let stats = stratum_residual_stats(pop, strata)?;
    let mut total = 0.0;
    for arm in pop.arms() {
        let n_z = pop.arm_size(arm) as f64;
        for k in 1..=strata.k(arm) {
            let cell = stats[&(arm, k)];
            let n_zk = cell.n_pop;
            let q = alloc.n_for(arm, k);
            if q == n_zk {
                continue; // finite population correction vanishes
            }
            if n_zk < 2 {
                return Err(Error::StratumTooSmall { arm, stratum: k });
            }
            total += n_zk as f64 * (n_zk - q) as f64 / (n_z * n_z * q as f64) * cell.var;
        }
    }
    Ok(total)
}

/// One (arm, stratum) row of a plug-in variance report.
#[derive(Debug, Clone, Serialize)]
pub struct StratumVariance {
    pub arm: u8,
    pub stratum: usize,
    pub n_pop: usize,
    pub n_coded: usize,
    pub mean_residual: Option<f64>,
    pub var_residual: Option<f64>,
}

/// The plug-in variance estimate and its pieces.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub total: f64,
    /// Within-strata term per arm:
    /// sum_k N_zk (N_zk - n_zk) / (N_z^2 n_zk) * var_hat_k(e).
    pub within: BTreeMap<u8, f64>,
    /// Estimated population outcome variance per arm.
    pub s2_hat: BTreeMap<u8, f64>,
    /// Whether the s2_hat / N_z terms are part of `total`.
    pub includes_outcome_term: bool,
    pub per_stratum: Vec<StratumVariance>,
}

struct CodedCell {
    n_pop: usize,
    e: Vec<f64>,
    y: Vec<f64>,
}

fn coded_cells(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    draw: &SampleDraw,
    arm: u8,
) -> Result<Vec<CodedCell>> {
    let mut cells = Vec::new();
    for k in 1..=strata.k(arm) {
        let mut e = Vec::new();
        let mut y = Vec::new();
        for i in strata.cell_indices(pop, arm, k) {
            let u = &pop.units()[i];
            if draw.contains(&u.id) {
                let yv = u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?;
                e.push(yv - u.y_hat);
                y.push(yv);
            }
        }
        cells.push(CodedCell {
            n_pop: strata.count(arm, k),
            e,
            y,
        });
    }
    Ok(cells)
}

/// The conservative plug-in estimator of the stratified estimator's
/// variance, assembled from coded-sample stratum variances and the
/// stratified estimate of the population outcome variance.
///
/// Cells with n_zk = N_zk contribute nothing to the within-strata terms and
/// need no variance of their own; any other cell requires n_zk >= 2.
pub fn plugin_variance(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    draw: &SampleDraw,
    mode: VarianceMode,
) -> Result<VarianceReport> {
    let mut within = BTreeMap::new();
    let mut s2_hat = BTreeMap::new();
    let mut per_stratum = Vec::new();
    for arm in pop.arms() {
        let n_z = pop.arm_size(arm);
        if n_z == 0 {
            return Err(Error::EmptyArm(arm));
        }
        let n_zf = n_z as f64;
        let cells = coded_cells(pop, strata, draw, arm)?;
        let mut within_z = 0.0;
        for (idx, cell) in cells.iter().enumerate() {
            let k = idx + 1;
            let n_coded = cell.e.len();
            if n_coded == 0 {
                return Err(Error::StratumTooSmallForVariance {
                    arm,
                    stratum: k,
                    n: 0,
                });
            }
            per_stratum.push(StratumVariance {
                arm,
                stratum: k,
                n_pop: cell.n_pop,
                n_coded,
                mean_residual: Some(mean(&cell.e)),
                var_residual: if n_coded >= 2 {
                    Some(sample_var(&cell.e))
                } else {
                    None
                },
            });
            if n_coded == cell.n_pop {
                continue; // fully coded cell: exact, contributes zero
            }
            if n_coded < 2 {
                return Err(Error::StratumTooSmallForVariance {
                    arm,
                    stratum: k,
                    n: n_coded,
                });
            }
            within_z += cell.n_pop as f64 * (cell.n_pop - n_coded) as f64
                / (n_zf * n_zf * n_coded as f64)
                * sample_var(&cell.e);
        }
        within.insert(arm, within_z);

        // Stratified estimator of the arm's population outcome variance:
        // N_z/(N_z-1) [ weighted mean of squares - squared stratified mean
        //               + FPC-weighted s^2_zk / n_zk correction ].
        // Centering y by the overall coded mean is algebraically neutral
        // and keeps the subtraction well conditioned.
        let all_y: Vec<f64> = cells.iter().flat_map(|c| c.y.iter().copied()).collect();
        let center = mean(&all_y);
        let mut mean_sq = 0.0;
        let mut strat_mean = 0.0;
        let mut fpc_term = 0.0;
        for cell in &cells {
            let n_coded = cell.y.len();
            let w = cell.n_pop as f64 / n_zf;
            let centered: Vec<f64> = cell.y.iter().map(|y| y - center).collect();
            mean_sq += w * centered.iter().map(|y| y * y).sum::<f64>() / n_coded as f64;
            strat_mean += w * mean(&centered);
            if n_coded < cell.n_pop {
                fpc_term += w
                    * w
                    * ((cell.n_pop - n_coded) as f64 / cell.n_pop as f64)
                    * sample_var(&centered)
                    / n_coded as f64;
            }
        }
        let s2 = if n_z > 1 {
            n_zf / (n_zf - 1.0) * (mean_sq - strat_mean * strat_mean + fpc_term)
        } else {
            0.0
        };
        s2_hat.insert(arm, s2);
    }

    let includes_outcome_term = match (pop.mode(), mode) {
        (Mode::TwoArm, _) => true,
        (Mode::SingleArm, VarianceMode::Superpopulation) => true,
        (Mode::SingleArm, VarianceMode::FinitePopulation) => false,
    };
    let mut total: f64 = within.values().sum();
    if includes_outcome_term {
        for arm in pop.arms() {
            total += s2_hat[&arm] / pop.arm_size(arm) as f64;
        }
    }
    Ok(VarianceReport {
        total,
        within,
        s2_hat,
        includes_outcome_term,
        per_stratum,
    })
}

/// Between-strata / within-strata split of the variance difference between
/// the SRS and stratified model-assisted estimators, conditional on the
/// assignment. `delta = bs - ws` equals Var(SRS) - Var(stratified).
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub bs: f64,
    pub ws: f64,
    pub delta: f64,
    pub per_arm: BTreeMap<u8, ArmDecomposition>,
    pub per_stratum: Vec<StratumDecomposition>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArmDecomposition {
    pub bs: f64,
    pub ws: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StratumDecomposition {
    pub arm: u8,
    pub stratum: usize,
    pub bs_term: f64,
    pub ws_term: f64,
    pub weight: f64,
}

/// Requires residuals for all units; the SRS comparator budget in each arm
/// is the allocation total n_z = sum_k n_zk.
pub fn bs_ws_decomposition(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    alloc: &Allocation,
) -> Result<Decomposition> {
    alloc.check_against(strata, &pop.arms())?;
    let stats = stratum_residual_stats(pop, strata)?;
    let mut per_arm = BTreeMap::new();
    let mut per_stratum = Vec::new();
    let mut bs_total = 0.0;
    let mut ws_total = 0.0;
    for arm in pop.arms() {
        let n_z = pop.arm_size(arm) as f64;
        if n_z < 2.0 {
            return Err(Error::EmptyArm(arm));
        }
        let n = alloc.budget(arm) as f64;
        let grand = (1..=strata.k(arm))
            .map(|k| {
                let c = stats[&(arm, k)];
                c.n_pop as f64 * c.mean
            })
            .sum::<f64>()
            / n_z;
        let mut bs_z = 0.0;
        let mut ws_z = 0.0;
        for k in 1..=strata.k(arm) {
            let cell = stats[&(arm, k)];
            let n_zk = cell.n_pop as f64;
            let q = alloc.n_for(arm, k) as f64;
            let bs_term = (n_z - n) / n_z * n_zk / (n * (n_z - 1.0))
                * (cell.mean - grand)
                * (cell.mean - grand);
            let weight = n_zk * (n_zk - q) / (n_z * n_z * q)
                - (n_zk - 1.0) * (n_z - n) / (n_z * (n_z - 1.0) * n);
            let ws_term = weight * cell.var;
            bs_z += bs_term;
            ws_z += ws_term;
            per_stratum.push(StratumDecomposition {
                arm,
                stratum: k,
                bs_term,
                ws_term,
                weight,
            });
        }
        per_arm.insert(arm, ArmDecomposition { bs: bs_z, ws: ws_z });
        bs_total += bs_z;
        ws_total += ws_z;
    }
    Ok(Decomposition {
        bs: bs_total,
        ws: ws_total,
        delta: bs_total - ws_total,
        per_arm,
        per_stratum,
    })
}
