//! Point estimators: full-coding benchmark, coded-subset difference in
//! means, and the model-assisted estimators under SRS and stratified
//! sampling.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::population::{Mode, PopulationTable, StrataAssignment};
use crate::sampling::{SampleDraw, Scheme};
use crate::variance::{mean, plugin_variance, sample_var, StratumVariance, VarianceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Ate,
    Mean,
}

impl Estimand {
    pub fn label(&self) -> &'static str {
        match self {
            Estimand::Ate => "ate",
            Estimand::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    Oracle,
    Subset,
    MaSrs,
    MaStratified,
}

impl EstimatorMethod {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorMethod::Oracle => "oracle",
            EstimatorMethod::Subset => "subset",
            EstimatorMethod::MaSrs => "ma_srs",
            EstimatorMethod::MaStratified => "ma_stratified",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub ci_level: f64,
    pub variance_mode: VarianceMode,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            ci_level: 0.95,
            variance_mode: VarianceMode::Superpopulation,
        }
    }
}

/// Two-sided normal quantile for a confidence level.
pub fn normal_quantile_for_level(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    normal.inverse_cdf(0.5 + level / 2.0)
}

/// Point estimate, standard error, interval, and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub method: EstimatorMethod,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub n_coded: usize,
    /// Named variance components; they sum to se^2 when `se` is present.
    pub components: BTreeMap<String, f64>,
    pub per_stratum: Vec<StratumVariance>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    fn new(
        estimand: Estimand,
        method: EstimatorMethod,
        estimate: f64,
        opts: &EstimateOptions,
    ) -> Self {
        EstimateReport {
            estimand,
            method,
            estimate,
            se: None,
            ci: None,
            ci_level: opts.ci_level,
            n_coded: 0,
            components: BTreeMap::new(),
            per_stratum: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn finish_se(&mut self, variance: f64) {
        let se = variance.max(0.0).sqrt();
        let z = normal_quantile_for_level(self.ci_level);
        self.se = Some(se);
        self.ci = Some((self.estimate - z * se, self.estimate + z * se));
    }
}

fn estimand_for(pop: &PopulationTable) -> Estimand {
    match pop.mode() {
        Mode::TwoArm => Estimand::Ate,
        Mode::SingleArm => Estimand::Mean,
    }
}

fn observed_y(pop: &PopulationTable, idx: usize) -> Result<f64> {
    let u = &pop.units()[idx];
    u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))
}

fn arm_ys(pop: &PopulationTable, arm: u8) -> Result<Vec<f64>> {
    pop.arm_indices(arm)
        .iter()
        .map(|&i| observed_y(pop, i))
        .collect()
}

/// Full-coding benchmark: difference of arm means (two-arm) or the
/// population mean (single-arm). Every unit must carry a gold outcome.
pub fn estimate_oracle(pop: &PopulationTable, opts: &EstimateOptions) -> Result<EstimateReport> {
    match pop.mode() {
        Mode::TwoArm => {
            for arm in [0u8, 1] {
                if pop.arm_size(arm) == 0 {
                    return Err(Error::EmptyArm(arm));
                }
            }
            let y1 = arm_ys(pop, 1)?;
            let y0 = arm_ys(pop, 0)?;
            let mut report = EstimateReport::new(
                Estimand::Ate,
                EstimatorMethod::Oracle,
                mean(&y1) - mean(&y0),
                opts,
            );
            report.n_coded = pop.len();
            if y1.len() >= 2 && y0.len() >= 2 {
                let c1 = sample_var(&y1) / y1.len() as f64;
                let c0 = sample_var(&y0) / y0.len() as f64;
                report
                    .components
                    .insert("arm1_outcome_var_over_n".into(), c1);
                report
                    .components
                    .insert("arm0_outcome_var_over_n".into(), c0);
                report.finish_se(c1 + c0);
            } else {
                report
                    .warnings
                    .push("an arm has a single unit; no variance estimate".into());
            }
            Ok(report)
        }
        Mode::SingleArm => {
            let y = arm_ys(pop, 0)?;
            if y.is_empty() {
                return Err(Error::EmptyArm(0));
            }
            let mut report =
                EstimateReport::new(Estimand::Mean, EstimatorMethod::Oracle, mean(&y), opts);
            report.n_coded = pop.len();
            match opts.variance_mode {
                VarianceMode::FinitePopulation => {
                    report.components.insert("outcome_var_over_n".into(), 0.0);
                    report.finish_se(0.0);
                }
                VarianceMode::Superpopulation => {
                    let v = sample_var(&y) / y.len() as f64;
                    report.components.insert("outcome_var_over_n".into(), v);
                    report.finish_se(v);
                }
            }
            Ok(report)
        }
    }
}

fn coded_arm_ys(pop: &PopulationTable, draw: &SampleDraw, arm: u8) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &i in pop.arm_indices(arm) {
        let u = &pop.units()[i];
        if draw.contains(&u.id) {
            out.push(u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?);
        }
    }
    Ok(out)
}

/// Difference in means over the coded subset alone. The SE uses the
/// standard two-sample formula without a finite population correction,
/// which is exact under superpopulation replication and conservative for a
/// fixed finite population.
pub fn estimate_subset(
    pop: &PopulationTable,
    draw: &SampleDraw,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    if draw.scheme() != Scheme::Srs {
        return Err(Error::Invalid(
            "the subset estimator applies to SRS draws".to_string(),
        ));
    }
    match pop.mode() {
        Mode::TwoArm => {
            let y1 = coded_arm_ys(pop, draw, 1)?;
            let y0 = coded_arm_ys(pop, draw, 0)?;
            if y1.is_empty() {
                return Err(Error::EmptyArmSample(1));
            }
            if y0.is_empty() {
                return Err(Error::EmptyArmSample(0));
            }
            let mut report = EstimateReport::new(
                Estimand::Ate,
                EstimatorMethod::Subset,
                mean(&y1) - mean(&y0),
                opts,
            );
            report.n_coded = y1.len() + y0.len();
            if y1.len() >= 2 && y0.len() >= 2 {
                let c1 = sample_var(&y1) / y1.len() as f64;
                let c0 = sample_var(&y0) / y0.len() as f64;
                report
                    .components
                    .insert("arm1_sample_var_over_n".into(), c1);
                report
                    .components
                    .insert("arm0_sample_var_over_n".into(), c0);
                report.finish_se(c1 + c0);
            } else {
                report
                    .warnings
                    .push("an arm has a single coded unit; no variance estimate".into());
            }
            Ok(report)
        }
        Mode::SingleArm => {
            let y = coded_arm_ys(pop, draw, 0)?;
            if y.is_empty() {
                return Err(Error::EmptyArmSample(0));
            }
            let mut report =
                EstimateReport::new(Estimand::Mean, EstimatorMethod::Subset, mean(&y), opts);
            report.n_coded = y.len();
            if y.len() >= 2 {
                let mut v = sample_var(&y) / y.len() as f64;
                if opts.variance_mode == VarianceMode::FinitePopulation {
                    v *= 1.0 - y.len() as f64 / pop.len() as f64;
                }
                report.components.insert("sample_var_over_n".into(), v);
                report.finish_se(v);
            } else {
                report
                    .warnings
                    .push("a single coded unit; no variance estimate".into());
            }
            Ok(report)
        }
    }
}

/// Per-arm model-assisted value: mean surrogate over the whole arm plus the
/// given residual correction.
fn ma_arm_value(pop: &PopulationTable, arm: u8, correction: f64) -> f64 {
    let y_hats: Vec<f64> = pop
        .arm_indices(arm)
        .iter()
        .map(|&i| pop.units()[i].y_hat)
        .collect();
    mean(&y_hats) + correction
}

fn attach_plugin_se(
    report: &mut EstimateReport,
    pop: &PopulationTable,
    strata: &StrataAssignment,
    draw: &SampleDraw,
    opts: &EstimateOptions,
) -> Result<()> {
    match plugin_variance(pop, strata, draw, opts.variance_mode) {
        Ok(vr) => {
            for (arm, w) in &vr.within {
                report
                    .components
                    .insert(format!("within_strata_arm{arm}"), *w);
            }
            if vr.includes_outcome_term {
                for (arm, s2) in &vr.s2_hat {
                    report.components.insert(
                        format!("outcome_var_arm{arm}_over_n"),
                        s2 / pop.arm_size(*arm) as f64,
                    );
                }
            }
            report.per_stratum = vr.per_stratum;
            report.finish_se(vr.total);
        }
        Err(Error::StratumTooSmallForVariance { arm, stratum, n }) => {
            report.warnings.push(format!(
                "arm {arm} stratum {stratum} has {n} coded unit(s); SE not estimable"
            ));
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Model-assisted estimator under SRS: per arm, the mean surrogate over all
/// units plus the mean residual over the coded units.
pub fn estimate_ma_srs(
    pop: &PopulationTable,
    draw: &SampleDraw,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    if draw.scheme() != Scheme::Srs {
        return Err(Error::Invalid(
            "estimate_ma_srs applies to SRS draws; use estimate_ma_stratified".to_string(),
        ));
    }
    let mut values = BTreeMap::new();
    for arm in pop.arms() {
        let mut resids = Vec::new();
        for &i in pop.arm_indices(arm) {
            let u = &pop.units()[i];
            if draw.contains(&u.id) {
                let y = u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?;
                resids.push(y - u.y_hat);
            }
        }
        if resids.is_empty() {
            return Err(Error::EmptyArmSample(arm));
        }
        values.insert(arm, ma_arm_value(pop, arm, mean(&resids)));
    }
    let estimate = match pop.mode() {
        Mode::TwoArm => values[&1] - values[&0],
        Mode::SingleArm => values[&0],
    };
    let mut report = EstimateReport::new(estimand_for(pop), EstimatorMethod::MaSrs, estimate, opts);
    report.n_coded = draw.len();
    let single = StrataAssignment::single_stratum(pop);
    attach_plugin_se(&mut report, pop, &single, draw, opts)?;
    Ok(report)
}

/// Stratified model-assisted estimator: per arm, the mean surrogate over
/// all units plus residual corrections weighted by the inverse sampling
/// fraction of each stratum.
pub fn estimate_ma_stratified(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    draw: &SampleDraw,
    alloc: &Allocation,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    if !strata.matches(pop) {
        return Err(Error::Invalid(
            "strata assignment does not cover this population".to_string(),
        ));
    }
    for arm in pop.arms() {
        for k in 1..=strata.k(arm) {
            if draw.realized(arm, k) != alloc.n_for(arm, k) {
                return Err(Error::StratumDrawMismatch { arm, stratum: k });
            }
        }
    }
    let mut values = BTreeMap::new();
    for arm in pop.arms() {
        let n_z = pop.arm_size(arm);
        if n_z == 0 {
            return Err(Error::EmptyArm(arm));
        }
        let mut correction = 0.0;
        for k in 1..=strata.k(arm) {
            let n_zk = strata.count(arm, k);
            let q = alloc.n_for(arm, k);
            if q == 0 || q > n_zk {
                return Err(Error::AllocationInfeasible { arm, stratum: k });
            }
            let mut cell_sum = 0.0;
            let mut coded = 0usize;
            for i in strata.cell_indices(pop, arm, k) {
                let u = &pop.units()[i];
                if draw.contains(&u.id) {
                    let y = u.y.ok_or_else(|| Error::UncodedUnit(u.id.clone()))?;
                    cell_sum += y - u.y_hat;
                    coded += 1;
                }
            }
            if coded != q {
                return Err(Error::StratumDrawMismatch { arm, stratum: k });
            }
            correction += n_zk as f64 / q as f64 * cell_sum;
        }
        values.insert(arm, ma_arm_value(pop, arm, correction / n_z as f64));
    }
    let estimate = match pop.mode() {
        Mode::TwoArm => values[&1] - values[&0],
        Mode::SingleArm => values[&0],
    };
    let mut report = EstimateReport::new(
        estimand_for(pop),
        EstimatorMethod::MaStratified,
        estimate,
        opts,
    );
    report.n_coded = draw.len();
    attach_plugin_se(&mut report, pop, strata, draw, opts)?;
    Ok(report)
}
