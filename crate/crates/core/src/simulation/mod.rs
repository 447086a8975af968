//! Factorial simulation study: calibrated data-generating process,
//! scenario execution with replication-indexed RNG substreams, grid
//! expansion, and repeated re-sampling of a fixed dataset.

pub mod exhaustive;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{neyman_allocation, proportional_allocation, Allocation, AllocationMethod};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, EstimateOptions,
};
use crate::population::{Mode, PopulationTable, StrataAssignment, UnitRecord};
use crate::rng::Stream;
use crate::sampling::{srs_sample, stratified_sample};
use crate::variance::stratum_residual_stats;

/// Between-strata bias profile of the surrogate errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum BiasPattern {
    None,
    Small,
    Moderate,
    Large,
    ExtremeContrast,
}

impl BiasPattern {
    /// Raw per-stratum offsets b'_k in outcome units, before calibration.
    /// The four-stratum profiles follow the published factor levels; other
    /// stratum counts interpolate linearly between the same endpoints.
    pub fn offsets(&self, k: usize, sigma_y: f64) -> Vec<f64> {
        let table4 = |vals: [f64; 4]| vals.iter().map(|v| v * sigma_y).collect::<Vec<f64>>();
        let linear = |a: f64| -> Vec<f64> {
            if k == 1 {
                return vec![0.0];
            }
            (0..k)
                .map(|i| sigma_y * (-a + 2.0 * a * i as f64 / (k as f64 - 1.0)))
                .collect()
        };
        match (self, k) {
            (BiasPattern::None, _) => vec![0.0; k],
            (BiasPattern::Small, 4) => table4([-0.25, -0.08, 0.08, 0.25]),
            (BiasPattern::Moderate, 4) => table4([-0.5, -0.17, 0.17, 0.5]),
            (BiasPattern::Large, 4) => table4([-1.0, -0.34, 0.34, 1.0]),
            (BiasPattern::Small, _) => linear(0.25),
            (BiasPattern::Moderate, _) => linear(0.5),
            (BiasPattern::Large, _) => linear(1.0),
            (BiasPattern::ExtremeContrast, _) => {
                let mut v = vec![0.0; k];
                if k >= 2 {
                    v[0] = -sigma_y;
                    v[k - 1] = sigma_y;
                }
                v
            }
        }
    }
}

/// Between-strata heterogeneity profile of the surrogate noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum VariancePattern {
    Homogeneous,
    Heterogeneous,
    ExtremeContrast,
}

impl VariancePattern {
    /// Relative noise-variance scalings v_k before normalization.
    pub fn scalings(&self, k: usize) -> Vec<f64> {
        match self {
            VariancePattern::Homogeneous => vec![1.0; k],
            VariancePattern::Heterogeneous => {
                if k == 1 {
                    return vec![1.0];
                }
                (0..k)
                    .map(|i| 0.25 + 3.75 * i as f64 / (k as f64 - 1.0))
                    .collect()
            }
            VariancePattern::ExtremeContrast => {
                let mut v = vec![1.0; k];
                if k >= 2 {
                    v[0] = 0.1;
                    v[k - 1] = 10.0;
                }
                v
            }
        }
    }
}

/// How stratum membership is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum StrataShape {
    BalancedExact,
    BalancedApprox,
    Unbalanced,
}

/// One cell of the factorial grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_units: usize,
    pub n_strata: usize,
    pub sigma_y: f64,
    pub tau: f64,
    pub bias: BiasPattern,
    pub variance: VariancePattern,
    pub r_squared: f64,
    pub strata_config: StrataShape,
    pub coding_fraction: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_min_floor")]
    pub min_floor: usize,
    /// When set, the optimal-allocation arm estimates stratum residual SDs
    /// from a proportional pilot draw of this fraction of each arm instead
    /// of using the oracle values.
    #[serde(default)]
    pub pilot_fraction: Option<f64>,
}

fn default_min_floor() -> usize {
    crate::allocation::DEFAULT_MIN_FLOOR
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || !self.n_units.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "N must be positive and even for a balanced design, got {}",
                self.n_units
            )));
        }
        if self.n_strata == 0 {
            return Err(Error::Invalid("need at least one stratum".to_string()));
        }
        if !(self.r_squared > 0.0 && self.r_squared < 1.0) {
            return Err(Error::InvalidR2(self.r_squared));
        }
        if !(self.coding_fraction > 0.0 && self.coding_fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "coding fraction must lie in (0, 1], got {}",
                self.coding_fraction
            )));
        }
        if self.replications == 0 {
            return Err(Error::Invalid("need at least one replication".to_string()));
        }
        if let Some(p) = self.pilot_fraction {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Invalid(format!(
                    "pilot fraction must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Stream tag over the population-defining factors only, so runs that
    /// differ just in coding fraction or replication count share common
    /// random numbers.
    fn dgp_tag(&self) -> u64 {
        let desc = format!(
            "{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.n_units,
            self.n_strata,
            self.sigma_y,
            self.tau,
            self.bias,
            self.variance,
            self.r_squared,
            self.strata_config
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in desc.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

/// Calibrated per-stratum bias terms and noise variances.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub b: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    pub c: f64,
    pub v_normalizer: f64,
}

/// Rescale raw offsets b'_k and noise scalings v_k so the surrogate hits
/// the target pseudo-R^2:
///   V = sum_k w_k v_k, recenter b' to sum_k w_k b'_k = 0,
///   c = sigma_y^2 (1 - R^2) / (Var_w(b') + 1),
///   b_k = sqrt(c) b'_k, sigma^2_eps_k = c v_k / V.
pub fn calibrate_raw(
    b_raw: &[f64],
    v_raw: &[f64],
    r_squared: f64,
    sigma_y: f64,
    weights: &[f64],
) -> Result<Calibration> {
    if !(r_squared > 0.0 && r_squared < 1.0) {
        return Err(Error::InvalidR2(r_squared));
    }
    let k = weights.len();
    if b_raw.len() != k || v_raw.len() != k {
        return Err(Error::Invalid(
            "bias, variance, and weight vectors must share a length".to_string(),
        ));
    }
    if weights.iter().any(|&w| w <= 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::NonpositiveWeights);
    }
    if v_raw.iter().any(|&v| v <= 0.0) {
        return Err(Error::Invalid(
            "noise-variance scalings must be positive".to_string(),
        ));
    }
    let v_normalizer: f64 = weights.iter().zip(v_raw).map(|(w, v)| w * v).sum();
    let b_mean: f64 = weights.iter().zip(b_raw).map(|(w, b)| w * b).sum();
    let b_centered: Vec<f64> = b_raw.iter().map(|b| b - b_mean).collect();
    let var_b: f64 = weights
        .iter()
        .zip(&b_centered)
        .map(|(w, b)| w * b * b)
        .sum();
    let c = sigma_y * sigma_y * (1.0 - r_squared) / (var_b + 1.0);
    Ok(Calibration {
        b: b_centered.iter().map(|b| c.sqrt() * b).collect(),
        sigma2_eps: v_raw.iter().map(|v| c * v / v_normalizer).collect(),
        c,
        v_normalizer,
    })
}

/// Calibrate from the named factor levels.
pub fn calibrate_dgp(
    bias: BiasPattern,
    variance: VariancePattern,
    r_squared: f64,
    sigma_y: f64,
    weights: &[f64],
) -> Result<Calibration> {
    let k = weights.len();
    calibrate_raw(
        &bias.offsets(k, sigma_y),
        &variance.scalings(k),
        r_squared,
        sigma_y,
        weights,
    )
}

/// A scenario with its stratum weights and calibration resolved.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub cfg: ScenarioConfig,
    pub weights: Vec<f64>,
    pub calibration: Calibration,
    scenario_stream: Stream,
}

impl PreparedScenario {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario_stream = Stream::root(cfg.seed).child(cfg.dgp_tag());
        let k = cfg.n_strata;
        let weights = match cfg.strata_config {
            StrataShape::BalancedExact | StrataShape::BalancedApprox => vec![1.0 / k as f64; k],
            StrataShape::Unbalanced => {
                let mut rng = scenario_stream.child_str("pi").rng();
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..0.8)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|p| p / total).collect()
            }
        };
        let calibration =
            calibrate_dgp(cfg.bias, cfg.variance, cfg.r_squared, cfg.sigma_y, &weights)?;
        Ok(PreparedScenario {
            cfg: cfg.clone(),
            weights,
            calibration,
            scenario_stream,
        })
    }

    fn rep_stream(&self, replication: u64) -> Stream {
        self.scenario_stream.child_str("rep").child(replication)
    }

    /// Draw one finite population: potential outcomes, balanced completely
    /// randomized assignment, stratum membership, and surrogate scores
    /// y_hat = y + b_k + eps with eps ~ Normal(0, sigma2_eps_k).
    pub fn generate(&self, replication: u64) -> Result<GeneratedPopulation> {
        let cfg = &self.cfg;
        let n = cfg.n_units;
        let k = cfg.n_strata;
        let rep = self.rep_stream(replication);

        let normal = Normal::new(0.0, cfg.sigma_y).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng_y = rep.child_str("y0").rng();
        let y0: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng_y)).collect();

        let mut arm = vec![0u8; n];
        if n > 1 {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng_assign = rep.child_str("assign").rng();
            order.shuffle(&mut rng_assign);
            for &i in order.iter().take(n / 2) {
                arm[i] = 1;
            }
        }

        let mut membership = vec![0usize; n];
        let mut rng_strata = rep.child_str("strata").rng();
        match cfg.strata_config {
            StrataShape::BalancedExact => {
                for a in [0u8, 1] {
                    let mut idxs: Vec<usize> = (0..n).filter(|&i| arm[i] == a).collect();
                    idxs.shuffle(&mut rng_strata);
                    let n_z = idxs.len();
                    let base = n_z / k;
                    let extra = n_z % k;
                    let mut cursor = 0usize;
                    for stratum in 1..=k {
                        let size = base + usize::from(stratum <= extra);
                        for &i in &idxs[cursor..cursor + size] {
                            membership[i] = stratum;
                        }
                        cursor += size;
                    }
                }
            }
            StrataShape::BalancedApprox | StrataShape::Unbalanced => {
                let mut cum = Vec::with_capacity(k);
                let mut acc = 0.0;
                for w in &self.weights {
                    acc += w;
                    cum.push(acc);
                }
                for slot in membership.iter_mut() {
                    let u: f64 = rng_strata.random();
                    *slot = 1 + cum.iter().position(|&c| u < c).unwrap_or(k - 1);
                }
            }
        }

        let mut rng_eps = rep.child_str("eps").rng();
        let mut units = Vec::with_capacity(n);
        for i in 0..n {
            let y_obs = y0[i] + cfg.tau * f64::from(arm[i]);
            let stratum = membership[i];
            let sd = self.calibration.sigma2_eps[stratum - 1].sqrt();
            let eps = Normal::new(0.0, sd)
                .map_err(|e| Error::Invalid(e.to_string()))?
                .sample(&mut rng_eps);
            let y_hat = y_obs + self.calibration.b[stratum - 1] + eps;
            units.push(UnitRecord::new(
                format!("u{i:05}"),
                arm[i],
                y_hat,
                Some(y_obs),
            ));
        }
        let pop = PopulationTable::new(units, Mode::TwoArm)?;
        let strata = StrataAssignment::from_indices(&pop, &membership)?;
        Ok(GeneratedPopulation { pop, strata })
    }
}

/// A generated finite population with its stratum assignment. The observed
/// outcome column is fully coded; potential outcomes are recoverable from
/// tau because treatment effects are constant.
#[derive(Debug, Clone)]
pub struct GeneratedPopulation {
    pub pop: PopulationTable,
    pub strata: StrataAssignment,
}

/// Convenience wrapper matching the scenario API.
pub fn generate_population(cfg: &ScenarioConfig, replication: u64) -> Result<GeneratedPopulation> {
    PreparedScenario::new(cfg)?.generate(replication)
}

/// Estimators computed in every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEstimator {
    Subset,
    MaSrs,
    MaStratifiedProp,
    MaStratifiedOpt,
    Oracle,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 5] = [
        SimEstimator::Subset,
        SimEstimator::MaSrs,
        SimEstimator::MaStratifiedProp,
        SimEstimator::MaStratifiedOpt,
        SimEstimator::Oracle,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SimEstimator::Subset => "subset",
            SimEstimator::MaSrs => "ma_srs",
            SimEstimator::MaStratifiedProp => "ma_stratified_prop",
            SimEstimator::MaStratifiedOpt => "ma_stratified_opt",
            SimEstimator::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    est: [f64; 5],
    se: [f64; 5],
}

/// Aggregate metrics for one estimator in one scenario.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimatorMetrics {
    pub mc_bias: f64,
    pub emp_se: f64,
    pub mse: f64,
    pub mean_est_se: f64,
    pub coverage: f64,
    /// Percent reduction in empirical variance relative to the
    /// model-assisted SRS estimator.
    pub var_reduction_vs_srs: f64,
    /// Ratio of empirical variance to the full-coding estimator's.
    pub var_inflation_vs_full: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub cfg: ScenarioConfig,
    pub metrics: BTreeMap<SimEstimator, EstimatorMetrics>,
}

fn per_arm_budgets(pop: &PopulationTable, h: f64) -> BTreeMap<u8, usize> {
    pop.arms()
        .into_iter()
        .map(|a| (a, (h * pop.arm_size(a) as f64).floor() as usize))
        .collect()
}

fn oracle_sds(pop: &PopulationTable, strata: &StrataAssignment) -> Result<BTreeMap<u8, Vec<f64>>> {
    let stats = stratum_residual_stats(pop, strata)?;
    let mut out = BTreeMap::new();
    for arm in pop.arms() {
        let sds = (1..=strata.k(arm))
            .map(|k| stats[&(arm, k)].var.sqrt())
            .collect();
        out.insert(arm, sds);
    }
    Ok(out)
}

/// Residual SDs per (arm, stratum) estimated from a proportional pilot draw.
fn pilot_sds(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    fraction: f64,
    min_floor: usize,
    stream: &Stream,
) -> Result<BTreeMap<u8, Vec<f64>>> {
    let mut quotas = Vec::new();
    for arm in pop.arms() {
        let counts = strata.arm_counts(arm);
        let floors: usize = counts.iter().map(|&c| c.min(min_floor).max(1)).sum();
        let budget = ((fraction * pop.arm_size(arm) as f64).round() as usize)
            .max(floors)
            .min(pop.arm_size(arm));
        quotas.push((arm, proportional_allocation(&counts, budget, min_floor)?));
    }
    let alloc = Allocation::from_arm_quotas(&quotas, AllocationMethod::Proportional);
    let draw = stratified_sample(pop, strata, &alloc, stream)?;
    let mut out = BTreeMap::new();
    for arm in pop.arms() {
        let mut sds = Vec::new();
        for k in 1..=strata.k(arm) {
            let resids: Vec<f64> = strata
                .cell_indices(pop, arm, k)
                .into_iter()
                .filter_map(|i| {
                    let u = &pop.units()[i];
                    if draw.contains(&u.id) {
                        u.y.map(|y| y - u.y_hat)
                    } else {
                        None
                    }
                })
                .collect();
            sds.push(crate::variance::sample_var(&resids).sqrt());
        }
        out.insert(arm, sds);
    }
    Ok(out)
}

fn stratified_arm_allocation(
    strata: &StrataAssignment,
    arms: &[u8],
    budgets: &BTreeMap<u8, usize>,
    sds: Option<&BTreeMap<u8, Vec<f64>>>,
    min_floor: usize,
) -> Result<Allocation> {
    let mut quotas = Vec::new();
    for &arm in arms {
        let counts = strata.arm_counts(arm);
        let budget = budgets[&arm];
        let q = match sds {
            None => proportional_allocation(&counts, budget, min_floor)?,
            Some(sds) => neyman_allocation(&counts, &sds[&arm], budget, min_floor)?.quotas,
        };
        quotas.push((arm, q));
    }
    Ok(Allocation::from_arm_quotas(
        &quotas,
        if sds.is_some() {
            AllocationMethod::Neyman
        } else {
            AllocationMethod::Proportional
        },
    ))
}

fn run_replication(prepared: &PreparedScenario, replication: u64) -> Result<RepOutcome> {
    let cfg = &prepared.cfg;
    let generated = prepared.generate(replication)?;
    let pop = &generated.pop;
    let strata = &generated.strata;
    let rep = prepared.rep_stream(replication);
    let opts = EstimateOptions::default();

    let budgets = per_arm_budgets(pop, cfg.coding_fraction);
    for arm in pop.arms() {
        let floors: usize = strata
            .arm_counts(arm)
            .iter()
            .map(|&c| c.min(cfg.min_floor).max(1))
            .sum();
        if budgets[&arm] < floors {
            return Err(Error::BudgetTooSmall {
                budget: budgets[&arm],
                required: floors,
            });
        }
    }

    let srs_draw = srs_sample(pop, &budgets, &rep.child_str("draw_srs"))?;
    let subset = estimate_subset(pop, &srs_draw, &opts)?;
    let ma_srs = estimate_ma_srs(pop, &srs_draw, &opts)?;

    let arms = pop.arms();
    let prop_alloc = stratified_arm_allocation(strata, &arms, &budgets, None, cfg.min_floor)?;
    let prop_draw = stratified_sample(pop, strata, &prop_alloc, &rep.child_str("draw_prop"))?;
    let ma_prop = estimate_ma_stratified(pop, strata, &prop_draw, &prop_alloc, &opts)?;

    let sds = match cfg.pilot_fraction {
        None => oracle_sds(pop, strata)?,
        Some(f) => pilot_sds(pop, strata, f, cfg.min_floor, &rep.child_str("pilot"))?,
    };
    let opt_alloc = stratified_arm_allocation(strata, &arms, &budgets, Some(&sds), cfg.min_floor)?;
    let opt_draw = stratified_sample(pop, strata, &opt_alloc, &rep.child_str("draw_opt"))?;
    let ma_opt = estimate_ma_stratified(pop, strata, &opt_draw, &opt_alloc, &opts)?;

    let oracle = estimate_oracle(pop, &opts)?;

    let reports = [&subset, &ma_srs, &ma_prop, &ma_opt, &oracle];
    let mut est = [0.0f64; 5];
    let mut se = [0.0f64; 5];
    for (slot, report) in reports.iter().enumerate() {
        est[slot] = report.estimate;
        se[slot] = report.se.ok_or_else(|| {
            Error::Invalid(format!(
                "missing SE for {:?} in replication {replication}",
                SimEstimator::ALL[slot]
            ))
        })?;
    }
    Ok(RepOutcome { est, se })
}

/// Run every replication of a scenario (in parallel; results are invariant
/// to the worker count) and aggregate the metrics.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let prepared = PreparedScenario::new(cfg)?;
    let outcomes: Vec<RepOutcome> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(&prepared, r))
        .collect::<Result<Vec<_>>>()?;

    let z = crate::estimators::normal_quantile_for_level(0.95);
    let r = outcomes.len() as f64;
    let truth = cfg.tau;
    let mut emp_var = [0.0f64; 5];
    let mut metrics_raw = Vec::with_capacity(5);
    for (slot, var_slot) in emp_var.iter_mut().enumerate() {
        let ests: Vec<f64> = outcomes.iter().map(|o| o.est[slot]).collect();
        let ses: Vec<f64> = outcomes.iter().map(|o| o.se[slot]).collect();
        let mean_est = crate::variance::mean(&ests);
        let var = crate::variance::sample_var(&ests);
        *var_slot = var;
        let mse = ests.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / r;
        let coverage = ests
            .iter()
            .zip(&ses)
            .filter(|(e, s)| (*e - truth).abs() <= z * **s)
            .count() as f64
            / r;
        metrics_raw.push((
            mean_est - truth,
            var,
            mse,
            crate::variance::mean(&ses),
            coverage,
        ));
    }
    let srs_var = emp_var[1];
    let full_var = emp_var[4];
    let mut metrics = BTreeMap::new();
    for (slot, kind) in SimEstimator::ALL.iter().enumerate() {
        let (bias, var, mse, mean_se, coverage) = metrics_raw[slot];
        metrics.insert(
            *kind,
            EstimatorMetrics {
                mc_bias: bias,
                emp_se: var.sqrt(),
                mse,
                mean_est_se: mean_se,
                coverage,
                var_reduction_vs_srs: if srs_var > 0.0 {
                    100.0 * (1.0 - var / srs_var)
                } else {
                    0.0
                },
                var_inflation_vs_full: if full_var > 0.0 {
                    var / full_var
                } else {
                    f64::NAN
                },
            },
        );
    }
    Ok(ScenarioResult {
        cfg: cfg.clone(),
        metrics,
    })
}

/// Factor lists expanded into the full factorial grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub schema_version: u32,
    pub n_units: usize,
    pub n_strata: usize,
    pub sigma_y: f64,
    pub tau: f64,
    pub bias: Vec<BiasPattern>,
    pub variance: Vec<VariancePattern>,
    pub r_squared: Vec<f64>,
    pub strata_config: Vec<StrataShape>,
    pub coding_fraction: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_min_floor")]
    pub min_floor: usize,
    #[serde(default)]
    pub pilot_fraction: Option<f64>,
}

impl GridConfig {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn expand(&self) -> Result<Vec<ScenarioConfig>> {
        if self.schema_version != Self::SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported schema_version {} (expected {})",
                self.schema_version,
                Self::SCHEMA_VERSION
            )));
        }
        let mut out = Vec::new();
        for &bias in &self.bias {
            for &variance in &self.variance {
                for &r_squared in &self.r_squared {
                    for &strata_config in &self.strata_config {
                        for &coding_fraction in &self.coding_fraction {
                            out.push(ScenarioConfig {
                                n_units: self.n_units,
                                n_strata: self.n_strata,
                                sigma_y: self.sigma_y,
                                tau: self.tau,
                                bias,
                                variance,
                                r_squared,
                                strata_config,
                                coding_fraction,
                                replications: self.replications,
                                seed: self.seed,
                                min_floor: self.min_floor,
                                pilot_fraction: self.pilot_fraction,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One long-format row: a scenario cell crossed with an estimator.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub bias: BiasPattern,
    pub variance: VariancePattern,
    pub r_squared: f64,
    pub strata_config: StrataShape,
    pub coding_fraction: f64,
    pub n_units: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimator: &'static str,
    pub mc_bias: f64,
    pub emp_se: f64,
    pub mse: f64,
    pub mean_est_se: f64,
    pub coverage: f64,
    pub var_reduction_vs_srs: f64,
    pub var_inflation_vs_full: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    /// Scenario failures, recorded without stopping the grid.
    pub failures: Vec<(String, String)>,
}

fn scenario_desc(cfg: &ScenarioConfig) -> String {
    format!(
        "bias={:?} variance={:?} r2={} strata={:?} h={}",
        cfg.bias, cfg.variance, cfg.r_squared, cfg.strata_config, cfg.coding_fraction
    )
}

/// Run every cell of the grid; per-cell failures are recorded and the grid
/// continues. Deterministic for a fixed seed at any worker count.
pub fn run_grid(grid: &GridConfig) -> Result<GridOutcome> {
    let cells = grid.expand()?;
    let results: Vec<(ScenarioConfig, Result<ScenarioResult>)> = cells
        .into_par_iter()
        .map(|cfg| {
            let res = run_scenario(&cfg);
            (cfg, res)
        })
        .collect();
    let mut outcome = GridOutcome::default();
    for (cfg, res) in results {
        match res {
            Ok(result) => {
                for kind in SimEstimator::ALL {
                    let m = result.metrics[&kind];
                    outcome.rows.push(GridRow {
                        bias: cfg.bias,
                        variance: cfg.variance,
                        r_squared: cfg.r_squared,
                        strata_config: cfg.strata_config,
                        coding_fraction: cfg.coding_fraction,
                        n_units: cfg.n_units,
                        replications: cfg.replications,
                        seed: cfg.seed,
                        estimator: kind.label(),
                        mc_bias: m.mc_bias,
                        emp_se: m.emp_se,
                        mse: m.mse,
                        mean_est_se: m.mean_est_se,
                        coverage: m.coverage,
                        var_reduction_vs_srs: m.var_reduction_vs_srs,
                        var_inflation_vs_full: m.var_inflation_vs_full,
                    });
                }
            }
            Err(e) => outcome.failures.push((scenario_desc(&cfg), e.to_string())),
        }
    }
    Ok(outcome)
}

fn pattern_name<T: std::fmt::Debug>(v: &T) -> String {
    let mut out = String::new();
    for (i, ch) in format!("{v:?}").chars().enumerate() {
        if ch.is_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(ch.to_ascii_lowercase());
        } else {
            out.push(ch);
        }
    }
    out
}

/// Long-format CSV of grid results.
pub fn write_grid_csv<W: std::io::Write>(rows: &[GridRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "bias",
        "variance",
        "r_squared",
        "strata_config",
        "coding_fraction",
        "n_units",
        "replications",
        "seed",
        "estimator",
        "mc_bias",
        "emp_se",
        "mse",
        "mean_est_se",
        "coverage",
        "var_reduction_vs_srs",
        "var_inflation_vs_full",
    ])?;
    for r in rows {
        wtr.write_record([
            pattern_name(&r.bias),
            pattern_name(&r.variance),
            format!("{}", r.r_squared),
            pattern_name(&r.strata_config),
            format!("{}", r.coding_fraction),
            r.n_units.to_string(),
            r.replications.to_string(),
            r.seed.to_string(),
            r.estimator.to_string(),
            format!("{}", r.mc_bias),
            format!("{}", r.emp_se),
            format!("{}", r.mse),
            format!("{}", r.mean_est_se),
            format!("{}", r.coverage),
            format!("{}", r.var_reduction_vs_srs),
            format!("{}", r.var_inflation_vs_full),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of a repeated-sampling exercise on a fixed dataset.
#[derive(Debug, Clone, Serialize)]
pub struct RepeatRow {
    pub repeat: usize,
    pub method: &'static str,
    pub estimate: f64,
    pub se: Option<f64>,
}

/// Re-sample a fixed, fully coded dataset `repeats` times with each method
/// (shared SRS draw for the subset and MA-SRS estimators; separate
/// stratified draws for proportional and Neyman allocation with oracle
/// residual SDs).
pub fn repeated_sampling(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    budgets: &BTreeMap<u8, usize>,
    repeats: usize,
    seed: u64,
    min_floor: usize,
) -> Result<Vec<RepeatRow>> {
    let opts = EstimateOptions::default();
    let arms = pop.arms();
    let prop_alloc = stratified_arm_allocation(strata, &arms, budgets, None, min_floor)?;
    let sds = oracle_sds(pop, strata)?;
    let opt_alloc = stratified_arm_allocation(strata, &arms, budgets, Some(&sds), min_floor)?;
    let root = Stream::root(seed);
    let mut rows = Vec::with_capacity(repeats * 4);
    for r in 0..repeats {
        let rep = root.child_str("repeat").child(r as u64);
        let srs_draw = srs_sample(pop, budgets, &rep.child_str("srs"))?;
        let subset = estimate_subset(pop, &srs_draw, &opts)?;
        let ma = estimate_ma_srs(pop, &srs_draw, &opts)?;
        let prop_draw = stratified_sample(pop, strata, &prop_alloc, &rep.child_str("prop"))?;
        let prop = estimate_ma_stratified(pop, strata, &prop_draw, &prop_alloc, &opts)?;
        let opt_draw = stratified_sample(pop, strata, &opt_alloc, &rep.child_str("opt"))?;
        let opt = estimate_ma_stratified(pop, strata, &opt_draw, &opt_alloc, &opts)?;
        for (method, report) in [
            ("subset", &subset),
            ("ma_srs", &ma),
            ("ma_stratified_prop", &prop),
            ("ma_stratified_opt", &opt),
        ] {
            rows.push(RepeatRow {
                repeat: r,
                method,
                estimate: report.estimate,
                se: report.se,
            });
        }
    }
    Ok(rows)
}
