//! Candidate stratifications from surrogate scores and features: quantile
//! cuts, crossed cuts, pre-coding proxy metrics, and retrospective oracle
//! metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::allocation::{neyman_allocation, proportional_allocation, Allocation, AllocationMethod};
use crate::error::{Error, Result};
use crate::population::{PopulationTable, StrataAssignment};
use crate::variance::{bs_ws_decomposition, mean, stratum_residual_stats};

/// Result of a quantile cut: monotone labels, the realized group count, and
/// whether groups collapsed (ties or constant input).
#[derive(Debug, Clone)]
pub struct QuantileCut {
    pub labels: Vec<usize>,
    pub k: usize,
    pub collapsed: bool,
}

/// Cut values into `q` quantile groups using inverted-CDF empirical
/// quantiles and upper-closed intervals, so label j collects values in
/// (Q((j-1)/q), Q(j/q)]. Ties share a label; empty groups are collapsed and
/// the labels renumbered densely.
pub fn quantile_cut(values: &[f64], q: usize) -> Result<QuantileCut> {
    if q < 2 {
        return Err(Error::Invalid(format!(
            "need q >= 2 quantile groups, got {q}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Invalid("no values to cut".to_string()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("values must be finite".to_string()));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Inverted-CDF quantile: Q(p) = x_(ceil(n p)) with 1-based order stats.
    let quantile = |p: f64| -> f64 {
        let r = (n as f64 * p).ceil().max(1.0) as usize;
        sorted[r.min(n) - 1]
    };
    let cuts: Vec<f64> = (1..q).map(|j| quantile(j as f64 / q as f64)).collect();
    let raw: Vec<usize> = values
        .iter()
        .map(|&v| 1 + cuts.iter().filter(|&&c| v > c).count())
        .collect();
    // Renumber densely over the labels that actually occur.
    let mut present: Vec<usize> = raw.clone();
    present.sort_unstable();
    present.dedup();
    let rank: BTreeMap<usize, usize> = present
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i + 1))
        .collect();
    let labels: Vec<usize> = raw.iter().map(|l| rank[l]).collect();
    let k = present.len();
    Ok(QuantileCut {
        labels,
        k,
        collapsed: k < q,
    })
}

/// As [`quantile_cut`], but collapse to a single group is an error rather
/// than a flagged result, for callers that require K >= 2.
pub fn quantile_cut_strict(values: &[f64], q: usize) -> Result<QuantileCut> {
    let cut = quantile_cut(values, q)?;
    if cut.k < 2 {
        return Err(Error::AllValuesEqual(q));
    }
    Ok(cut)
}

/// Product of two labelings, renumbered densely; empty cells drop out.
pub fn cross_strata(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut pairs: Vec<(usize, usize)> = a.iter().copied().zip(b.iter().copied()).collect();
    let mut distinct = pairs.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let rank: BTreeMap<(usize, usize), usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i + 1))
        .collect();
    Ok(pairs.drain(..).map(|p| rank[&p]).collect())
}

/// A named candidate stratification.
#[derive(Debug, Clone)]
pub struct CandidateStratification {
    pub name: String,
    /// Variables and granularities that define the candidate.
    pub definition: String,
    pub strata: StrataAssignment,
    pub k_per_arm: BTreeMap<u8, usize>,
}

/// Metrics for ranking candidates. Oracle fields are present only after a
/// retrospective pass over fully coded data.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateMetrics {
    pub name: String,
    pub k_total: usize,
    pub var_of_stratum_means: f64,
    pub balance_ratio: f64,
    pub min_stratum_size: usize,
    pub oracle: Option<OracleMetrics>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleMetrics {
    pub bs: f64,
    pub ws: f64,
    pub delta: f64,
    /// max_k var_k(e) / min_k var_k(e) across cells.
    pub residual_variance_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct CandidateOptions {
    /// Granularities for single-variable cuts.
    pub single_qs: Vec<usize>,
    /// Granularities crossed for each unordered variable pair.
    pub cross_qs: Vec<(usize, usize)>,
    /// Cells smaller than this merge into the nearest cell by surrogate
    /// mean, so every unit keeps a stratum.
    pub merge_min_cell: usize,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            single_qs: vec![3, 4, 5],
            cross_qs: vec![(2, 2), (2, 3), (3, 2), (3, 3)],
            merge_min_cell: 2,
        }
    }
}

/// Numeric values of a stratification variable ("y_hat" or a feature).
fn variable_values(pop: &PopulationTable, var: &str) -> Result<Vec<f64>> {
    if var == "y_hat" {
        return Ok(pop.units().iter().map(|u| u.y_hat).collect());
    }
    pop.units()
        .iter()
        .map(|u| {
            u.features
                .get(var)
                .and_then(|f| f.as_real())
                .ok_or_else(|| Error::UnknownVariable(var.to_string()))
        })
        .collect()
}

/// Quantile-cut one variable within each arm, returning a per-unit label
/// vector over the whole population.
fn per_arm_cut(pop: &PopulationTable, values: &[f64], q: usize) -> Result<Vec<usize>> {
    let mut labels = vec![0usize; pop.len()];
    for arm in pop.arms() {
        let idxs = pop.arm_indices(arm);
        if idxs.is_empty() {
            continue;
        }
        let vals: Vec<f64> = idxs.iter().map(|&i| values[i]).collect();
        let cut = quantile_cut(&vals, q)?;
        for (slot, &i) in idxs.iter().enumerate() {
            labels[i] = cut.labels[slot];
        }
    }
    Ok(labels)
}

/// Merge cells smaller than `min_cell` into the neighbouring cell (within
/// the same arm) whose mean surrogate is closest.
fn merge_small_cells(pop: &PopulationTable, labels: &mut [usize], min_cell: usize) {
    if min_cell < 2 {
        return;
    }
    for arm in pop.arms() {
        loop {
            let idxs = pop.arm_indices(arm);
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
            for &i in idxs {
                *counts.entry(labels[i]).or_insert(0) += 1;
                *sums.entry(labels[i]).or_insert(0.0) += pop.units()[i].y_hat;
            }
            if counts.len() <= 1 {
                break;
            }
            let small = counts
                .iter()
                .filter(|(_, &n)| n < min_cell)
                .map(|(&l, &n)| (l, n))
                .min_by_key(|&(l, n)| (n, l));
            let Some((small_label, _)) = small else { break };
            let small_mean = sums[&small_label] / counts[&small_label] as f64;
            let target = counts
                .keys()
                .filter(|&&l| l != small_label)
                .min_by(|&&a, &&b| {
                    let da = (sums[&a] / counts[&a] as f64 - small_mean).abs();
                    let db = (sums[&b] / counts[&b] as f64 - small_mean).abs();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .copied()
                .expect("at least two cells");
            for &i in idxs {
                if labels[i] == small_label {
                    labels[i] = target;
                }
            }
        }
    }
}

fn build_candidate(
    pop: &PopulationTable,
    name: String,
    definition: String,
    mut labels: Vec<usize>,
    opts: &CandidateOptions,
) -> Result<CandidateStratification> {
    merge_small_cells(pop, &mut labels, opts.merge_min_cell);
    let strata = StrataAssignment::from_indices(pop, &labels)?;
    let k_per_arm = pop.arms().iter().map(|&a| (a, strata.k(a))).collect();
    Ok(CandidateStratification {
        name,
        definition,
        strata,
        k_per_arm,
    })
}

/// Generate the candidate menu: single-variable cuts at each granularity,
/// plus the four crossing granularities for each unordered variable pair
/// (a 2x3 cross of (a, b) and a 3x2 cross of (b, a) are the same partition,
/// so pairs are enumerated once). Quantiles are computed within each arm in
/// two-arm mode.
pub fn generate_candidates(
    pop: &PopulationTable,
    variables: &[String],
    opts: &CandidateOptions,
) -> Result<Vec<CandidateStratification>> {
    if variables.is_empty() {
        return Err(Error::Invalid(
            "no stratification variables named".to_string(),
        ));
    }
    let mut values = Vec::new();
    for var in variables {
        values.push(variable_values(pop, var)?);
    }
    let mut out = Vec::new();
    for (vi, var) in variables.iter().enumerate() {
        for &q in &opts.single_qs {
            let labels = per_arm_cut(pop, &values[vi], q)?;
            out.push(build_candidate(
                pop,
                format!("{var}_q{q}"),
                format!("{var} in {q} quantile groups"),
                labels,
                opts,
            )?);
        }
    }
    for ai in 0..variables.len() {
        for bi in (ai + 1)..variables.len() {
            for &(qa, qb) in &opts.cross_qs {
                let la = per_arm_cut(pop, &values[ai], qa)?;
                let lb = per_arm_cut(pop, &values[bi], qb)?;
                let labels = cross_strata(&la, &lb)?;
                out.push(build_candidate(
                    pop,
                    format!("{}_q{qa}_x_{}_q{qb}", variables[ai], variables[bi]),
                    format!(
                        "{} in {qa} groups crossed with {} in {qb} groups",
                        variables[ai], variables[bi]
                    ),
                    labels,
                    opts,
                )?);
            }
        }
    }
    Ok(out)
}

/// Pre-coding proxy metrics: weighted variance of per-stratum mean
/// surrogates (per arm, pooled by arm size in two-arm mode), size balance,
/// and minimum cell size. Uses only the surrogate scores.
pub fn precoding_metrics(
    pop: &PopulationTable,
    candidate: &CandidateStratification,
) -> CandidateMetrics {
    let strata = &candidate.strata;
    let mut pooled_var = 0.0;
    let mut pooled_weight = 0.0;
    let mut max_cell = 0usize;
    let mut min_cell = usize::MAX;
    let mut k_total = 0usize;
    for arm in pop.arms() {
        let idxs = pop.arm_indices(arm);
        let n_z = idxs.len();
        if n_z == 0 {
            continue;
        }
        let arm_mean = mean(
            &idxs
                .iter()
                .map(|&i| pop.units()[i].y_hat)
                .collect::<Vec<f64>>(),
        );
        let mut arm_var = 0.0;
        for k in 1..=strata.k(arm) {
            let cell = strata.cell_indices(pop, arm, k);
            let n_k = cell.len();
            k_total += 1;
            max_cell = max_cell.max(n_k);
            min_cell = min_cell.min(n_k);
            if n_k == 0 {
                continue;
            }
            let m = mean(
                &cell
                    .iter()
                    .map(|&i| pop.units()[i].y_hat)
                    .collect::<Vec<f64>>(),
            );
            arm_var += n_k as f64 / n_z as f64 * (m - arm_mean) * (m - arm_mean);
        }
        pooled_var += n_z as f64 * arm_var;
        pooled_weight += n_z as f64;
    }
    CandidateMetrics {
        name: candidate.name.clone(),
        k_total,
        var_of_stratum_means: if pooled_weight > 0.0 {
            pooled_var / pooled_weight
        } else {
            0.0
        },
        balance_ratio: if min_cell == 0 || min_cell == usize::MAX {
            f64::INFINITY
        } else {
            max_cell as f64 / min_cell as f64
        },
        min_stratum_size: if min_cell == usize::MAX { 0 } else { min_cell },
        oracle: None,
    }
}

/// Filters applied before ranking.
#[derive(Debug, Clone, Copy)]
pub struct RankFilters {
    pub max_balance_ratio: f64,
    pub min_stratum_size: usize,
}

impl Default for RankFilters {
    fn default() -> Self {
        RankFilters {
            max_balance_ratio: 10.0,
            min_stratum_size: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedCandidates {
    pub ranked: Vec<CandidateMetrics>,
    pub excluded: Vec<(String, String)>,
}

/// Drop candidates violating the filters, then sort by descending variance
/// of stratum means; ties break toward fewer strata, then by name. An empty
/// result is an error carrying the exclusion diagnostics.
pub fn rank_candidates(
    metrics: Vec<CandidateMetrics>,
    filters: &RankFilters,
) -> Result<RankedCandidates> {
    let mut ranked = Vec::new();
    let mut excluded = Vec::new();
    for m in metrics {
        if m.balance_ratio > filters.max_balance_ratio {
            excluded.push((
                m.name.clone(),
                format!(
                    "balance ratio {:.2} exceeds {:.2}",
                    m.balance_ratio, filters.max_balance_ratio
                ),
            ));
        } else if m.min_stratum_size < filters.min_stratum_size {
            excluded.push((
                m.name.clone(),
                format!(
                    "smallest stratum {} below {}",
                    m.min_stratum_size, filters.min_stratum_size
                ),
            ));
        } else {
            ranked.push(m);
        }
    }
    ranked.sort_by(|a, b| {
        b.var_of_stratum_means
            .partial_cmp(&a.var_of_stratum_means)
            .unwrap()
            .then(a.k_total.cmp(&b.k_total))
            .then(a.name.cmp(&b.name))
    });
    if ranked.is_empty() {
        return Err(Error::AllFiltered);
    }
    Ok(RankedCandidates { ranked, excluded })
}

/// Retrospective oracle metrics for a candidate on a fully coded
/// population: the BS/WS split (and delta) under the stated allocation at
/// the stated per-arm budget, plus the spread of within-stratum residual
/// variances.
pub fn oracle_metrics(
    pop: &PopulationTable,
    candidate: &CandidateStratification,
    budget_per_arm: &BTreeMap<u8, usize>,
    method: AllocationMethod,
    min_floor: usize,
) -> Result<CandidateMetrics> {
    let strata = &candidate.strata;
    let stats = stratum_residual_stats(pop, strata)?;
    let mut quotas = Vec::new();
    for arm in pop.arms() {
        let counts = strata.arm_counts(arm);
        let budget = budget_per_arm
            .get(&arm)
            .copied()
            .ok_or(Error::EmptyArmSample(arm))?;
        let q = match method {
            AllocationMethod::Proportional | AllocationMethod::Manual => {
                proportional_allocation(&counts, budget, min_floor)?
            }
            AllocationMethod::Neyman => {
                let sds: Vec<f64> = (1..=strata.k(arm))
                    .map(|k| stats[&(arm, k)].var.sqrt())
                    .collect();
                neyman_allocation(&counts, &sds, budget, min_floor)?.quotas
            }
        };
        quotas.push((arm, q));
    }
    let alloc = Allocation::from_arm_quotas(&quotas, method);
    let d = bs_ws_decomposition(pop, strata, &alloc)?;
    let vars: Vec<f64> = stats.values().map(|s| s.var).collect();
    let vmax = vars.iter().cloned().fold(f64::MIN, f64::max);
    let vmin = vars.iter().cloned().fold(f64::MAX, f64::min);
    let mut metrics = precoding_metrics(pop, candidate);
    metrics.oracle = Some(OracleMetrics {
        bs: d.bs,
        ws: d.ws,
        delta: d.delta,
        residual_variance_ratio: if vmin > 0.0 {
            vmax / vmin
        } else {
            f64::INFINITY
        },
    });
    Ok(metrics)
}
