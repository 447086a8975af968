//! Complete-enumeration oracle for tiny populations with both potential
//! outcomes specified: iterates every treatment assignment and every
//! admissible draw, yielding exact estimator means, variances, and
//! conditional decompositions for the theory checks.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, EstimateOptions,
};
use crate::population::{Mode, PopulationTable, StrataAssignment, UnitRecord};
use crate::sampling::SampleDraw;
use crate::variance::{
    bs_ws_decomposition, exact_conditional_variance, plugin_variance, VarianceMode,
};

/// One unit with both potential outcomes and both potential surrogates.
#[derive(Debug, Clone)]
pub struct TinyUnit {
    pub id: String,
    pub y0: f64,
    pub y1: f64,
    pub yhat0: f64,
    pub yhat1: f64,
}

#[derive(Debug, Clone)]
pub struct TinyPopulation {
    pub units: Vec<TinyUnit>,
}

impl TinyPopulation {
    pub fn new(units: Vec<TinyUnit>) -> Self {
        TinyPopulation { units }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Finite-population average treatment effect.
    pub fn true_ate(&self) -> f64 {
        self.units.iter().map(|u| u.y1 - u.y0).sum::<f64>() / self.len() as f64
    }

    /// Variance of the individual effects (divisor N - 1).
    pub fn var_tau(&self) -> f64 {
        let taus: Vec<f64> = self.units.iter().map(|u| u.y1 - u.y0).collect();
        crate::variance::sample_var(&taus)
    }

    /// The observed, fully coded table under a treatment assignment.
    pub fn observed(&self, treated: &[bool]) -> Result<PopulationTable> {
        let units = self
            .units
            .iter()
            .zip(treated)
            .map(|(u, &t)| {
                let (y, y_hat) = if t { (u.y1, u.yhat1) } else { (u.y0, u.yhat0) };
                UnitRecord::new(u.id.clone(), u8::from(t), y_hat, Some(y))
            })
            .collect();
        PopulationTable::new(units, Mode::TwoArm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OracleEstimator {
    Subset,
    MaSrs,
    MaStratified,
    FullCoding,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
}

/// Per-assignment conditional results.
#[derive(Debug, Clone, Copy)]
pub struct AssignmentSummary {
    pub full_estimate: f64,
    pub cond_var_ma_srs: f64,
    pub cond_var_ma_strat: f64,
    pub cond_var_subset: f64,
    pub exact_conditional: f64,
    pub bs: f64,
    pub ws: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Abort when the total number of enumerated (assignment, draw) cases
    /// exceeds this cap.
    pub cap: u64,
    /// Also average the plug-in variance estimate over stratified draws.
    pub with_plugin: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            cap: 10_000_000,
            with_plugin: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub true_ate: f64,
    pub var_tau: f64,
    /// Unconditional moments over all (assignment, draw) pairs.
    pub moments: BTreeMap<OracleEstimator, MomentSummary>,
    /// E_Z[ Var(estimator | Z) ].
    pub mean_conditional_variance: BTreeMap<OracleEstimator, f64>,
    /// Variance of the full-coding estimator across assignments.
    pub var_full_over_assignments: f64,
    /// E_Z[ exact_conditional_variance ].
    pub mean_exact_conditional_variance: f64,
    /// E[ plug-in variance ] over assignments and stratified draws.
    pub mean_plugin: Option<f64>,
    pub per_assignment: Vec<AssignmentSummary>,
    pub enumerated: u64,
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u64 = 1;
    for i in 0..k {
        out = out * (n - i) as u64 / (i + 1) as u64;
    }
    out
}

/// Accumulates first and second moments of values centered at a fixed
/// point, which keeps the variance identities sharp at tiny magnitudes.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    n: u64,
}

impl Moments {
    fn push(&mut self, centered: f64) {
        self.sum += centered;
        self.sum_sq += centered * centered;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.sum_sq / self.n as f64 - m * m
    }
}

/// Enumerate all C(N, n_treated) assignments; under each, all stratified
/// draws of the allocation produced by `alloc_rule` under the strata from
/// `strata_rule`, and all per-arm SRS draws of the same total budgets.
pub fn exhaustive_oracle<FS, FA>(
    tiny: &TinyPopulation,
    n_treated: usize,
    strata_rule: FS,
    alloc_rule: FA,
    opts: &OracleOptions,
) -> Result<OracleReport>
where
    FS: Fn(&PopulationTable) -> Result<StrataAssignment>,
    FA: Fn(&PopulationTable, &StrataAssignment) -> Result<Allocation>,
{
    let n = tiny.len();
    if n == 0 || n_treated == 0 || n_treated >= n {
        return Err(Error::Invalid(
            "need 0 < n_treated < N for a two-arm enumeration".to_string(),
        ));
    }
    let center = tiny.true_ate();
    let est_opts = EstimateOptions::default();

    let mut enumerated: u64 = 0;
    let mut per_assignment = Vec::new();
    let mut full_moments = Moments::default();
    // Draw-level moments aggregated as equal-weight averages of
    // per-assignment expectations, matching the sampling design.
    let mut agg: BTreeMap<OracleEstimator, (f64, f64)> = BTreeMap::new();
    let mut cond_sum: BTreeMap<OracleEstimator, f64> = BTreeMap::new();
    let mut exact_cond_sum = 0.0;
    let mut plugin_sum = 0.0;
    let mut n_assignments: u64 = 0;

    for treated_set in (0..n).combinations(n_treated) {
        let mut treated = vec![false; n];
        for &i in &treated_set {
            treated[i] = true;
        }
        let pop = tiny.observed(&treated)?;
        let strata = strata_rule(&pop)?;
        let alloc = alloc_rule(&pop, &strata)?;
        alloc.check_against(&strata, &pop.arms())?;

        let mut strat_count: u64 = 1;
        for (arm, k, n_cell) in strata.cells() {
            strat_count *= binomial(n_cell, alloc.n_for(arm, k));
        }
        let budgets: BTreeMap<u8, usize> = pop
            .arms()
            .into_iter()
            .map(|a| (a, alloc.budget(a)))
            .collect();
        let mut srs_count: u64 = 1;
        for arm in pop.arms() {
            srs_count *= binomial(pop.arm_size(arm), budgets[&arm]);
        }
        enumerated += strat_count + srs_count;
        if enumerated > opts.cap {
            return Err(Error::EnumerationTooLarge {
                required: enumerated,
                cap: opts.cap,
            });
        }

        let full = estimate_oracle(&pop, &est_opts)?.estimate;
        full_moments.push(full - center);

        // Stratified draws: cartesian product of per-cell combinations.
        let mut cell_choices: Vec<Vec<Vec<usize>>> = Vec::new();
        for (arm, k, _) in strata.cells() {
            let idxs = strata.cell_indices(&pop, arm, k);
            let quota = alloc.n_for(arm, k);
            cell_choices.push(idxs.into_iter().combinations(quota).collect());
        }
        let mut strat_moments = Moments::default();
        let mut plugin_local = 0.0;
        for combo in cell_choices.iter().multi_cartesian_product() {
            let ids: BTreeSet<String> = combo
                .iter()
                .flat_map(|cell| cell.iter().map(|&i| pop.units()[i].id.clone()))
                .collect();
            let draw = SampleDraw::from_coded_subset(&pop, &strata, &ids);
            let report = estimate_ma_stratified(&pop, &strata, &draw, &alloc, &est_opts)?;
            strat_moments.push(report.estimate - center);
            if opts.with_plugin {
                plugin_local +=
                    plugin_variance(&pop, &strata, &draw, VarianceMode::Superpopulation)?.total;
            }
        }
        if opts.with_plugin {
            plugin_sum += plugin_local / strat_moments.n as f64;
        }

        // SRS draws: product of per-arm combinations.
        let arm0: Vec<usize> = pop.arm_indices(0).to_vec();
        let arm1: Vec<usize> = pop.arm_indices(1).to_vec();
        let mut srs_moments = Moments::default();
        let mut subset_moments = Moments::default();
        for c0 in arm0.iter().copied().combinations(budgets[&0]) {
            for c1 in arm1.iter().copied().combinations(budgets[&1]) {
                let ids = c0
                    .iter()
                    .chain(c1.iter())
                    .map(|&i| pop.units()[i].id.clone());
                let draw = SampleDraw::from_ids(&pop, ids);
                let ma = estimate_ma_srs(&pop, &draw, &est_opts)?;
                srs_moments.push(ma.estimate - center);
                let subset = estimate_subset(&pop, &draw, &est_opts)?;
                subset_moments.push(subset.estimate - center);
            }
        }

        let exact_cond = exact_conditional_variance(&pop, &strata, &alloc)?;
        exact_cond_sum += exact_cond;
        let d = bs_ws_decomposition(&pop, &strata, &alloc)?;
        per_assignment.push(AssignmentSummary {
            full_estimate: full,
            cond_var_ma_srs: srs_moments.variance(),
            cond_var_ma_strat: strat_moments.variance(),
            cond_var_subset: subset_moments.variance(),
            exact_conditional: exact_cond,
            bs: d.bs,
            ws: d.ws,
        });

        for (kind, m) in [
            (OracleEstimator::MaStratified, &strat_moments),
            (OracleEstimator::MaSrs, &srs_moments),
            (OracleEstimator::Subset, &subset_moments),
        ] {
            let entry = agg.entry(kind).or_insert((0.0, 0.0));
            entry.0 += m.mean();
            entry.1 += m.sum_sq / m.n as f64;
            *cond_sum.entry(kind).or_insert(0.0) += m.variance();
        }
        n_assignments += 1;
    }

    let a = n_assignments as f64;
    let mut moments = BTreeMap::new();
    let mut mean_conditional_variance = BTreeMap::new();
    for (kind, (mean_sum, sq_sum)) in &agg {
        let mean_c = mean_sum / a;
        let var = sq_sum / a - mean_c * mean_c;
        moments.insert(
            *kind,
            MomentSummary {
                mean: mean_c + center,
                variance: var,
            },
        );
        mean_conditional_variance.insert(*kind, cond_sum[kind] / a);
    }
    moments.insert(
        OracleEstimator::FullCoding,
        MomentSummary {
            mean: full_moments.mean() + center,
            variance: full_moments.variance(),
        },
    );
    mean_conditional_variance.insert(OracleEstimator::FullCoding, 0.0);

    Ok(OracleReport {
        true_ate: center,
        var_tau: tiny.var_tau(),
        moments,
        mean_conditional_variance,
        var_full_over_assignments: full_moments.variance(),
        mean_exact_conditional_variance: exact_cond_sum / a,
        mean_plugin: if opts.with_plugin {
            Some(plugin_sum / a)
        } else {
            None
        },
        per_assignment,
        enumerated,
    })
}

/// Median split of the observed surrogate within each arm: two strata per
/// arm of equal size whenever arm sizes are even and surrogates untied.
pub fn median_split_rule(pop: &PopulationTable) -> Result<StrataAssignment> {
    let mut labels = vec![0usize; pop.len()];
    for arm in pop.arms() {
        let idxs = pop.arm_indices(arm);
        let mut order: Vec<usize> = idxs.to_vec();
        order.sort_by(|&a, &b| {
            pop.units()[a]
                .y_hat
                .partial_cmp(&pop.units()[b].y_hat)
                .unwrap()
                .then(a.cmp(&b))
        });
        for (rank, &i) in order.iter().enumerate() {
            labels[i] = if rank < order.len() / 2 { 1 } else { 2 };
        }
    }
    StrataAssignment::from_indices(pop, &labels)
}

/// Top-1 split of the observed surrogate within each arm: the largest
/// surrogate forms its own stratum.
pub fn top_one_rule(pop: &PopulationTable) -> Result<StrataAssignment> {
    let mut labels = vec![1usize; pop.len()];
    for arm in pop.arms() {
        let idxs = pop.arm_indices(arm);
        if let Some(&top) = idxs.iter().max_by(|&&a, &&b| {
            pop.units()[a]
                .y_hat
                .partial_cmp(&pop.units()[b].y_hat)
                .unwrap()
                .then(a.cmp(&b))
        }) {
            labels[top] = 2;
        }
    }
    StrataAssignment::from_indices(pop, &labels)
}
