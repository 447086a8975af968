//! Minimum detectable effect size as a function of the coding fraction,
//! under SRS and proportional stratified designs.
//!
//! The SE backbone is the proportional-allocation form of the stratified
//! estimator's variance with the individual-effect term dropped
//! (conservative):
//!
//!   SE(h)^2 = sum_z [ S2_z(Y)/N_z + (1-h)/(h N_z) * W_z ]
//!
//! where W_z is the weighted within-stratum residual variance for the
//! stratified design, and the pooled residual variance
//! W_z + sum_k w_k (mean_k - mean)^2 for SRS. The two curves therefore
//! coincide exactly when every stratum has the same residual mean.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::normal_quantile_for_level;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMethod {
    Srs,
    StratifiedProportional,
}

#[derive(Debug, Clone, Copy)]
pub struct StratumPower {
    /// Share of the arm's units in this stratum; weights sum to 1 per arm.
    pub weight: f64,
    pub resid_mean: f64,
    pub resid_var: f64,
}

#[derive(Debug, Clone)]
pub struct ArmPower {
    pub n: usize,
    pub y_var: f64,
    pub strata: Vec<StratumPower>,
}

#[derive(Debug, Clone)]
pub struct PowerDesign {
    /// One entry per arm (one for a single-group mean, two for an ATE).
    pub arms: Vec<ArmPower>,
    pub alpha: f64,
    pub power: f64,
    pub h_grid: Vec<f64>,
}

impl PowerDesign {
    fn check(&self) -> Result<()> {
        if self.arms.is_empty() || self.arms.len() > 2 {
            return Err(Error::Invalid("a design needs one or two arms".to_string()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.power > 0.0 && self.power < 1.0) {
            return Err(Error::Invalid(format!(
                "target power must be in (0,1), got {}",
                self.power
            )));
        }
        if self.h_grid.is_empty() {
            return Err(Error::Invalid("empty coding-fraction grid".to_string()));
        }
        for &h in &self.h_grid {
            if !(h > 0.0 && h <= 1.0) {
                return Err(Error::Invalid(format!(
                    "coding fractions must lie in (0, 1], got {h}"
                )));
            }
        }
        for arm in &self.arms {
            if arm.n == 0 {
                return Err(Error::EmptyArm(0));
            }
            if arm.y_var < 0.0 || arm.strata.iter().any(|s| s.resid_var < 0.0) {
                return Err(Error::Invalid("variances must be nonnegative".to_string()));
            }
            let w: f64 = arm.strata.iter().map(|s| s.weight).sum();
            if arm.strata.iter().any(|s| s.weight <= 0.0) || (w - 1.0).abs() > 1e-6 {
                return Err(Error::NonpositiveWeights);
            }
        }
        Ok(())
    }

    /// Residual-variance load of an arm for a method.
    fn arm_load(arm: &ArmPower, method: PowerMethod) -> f64 {
        let within: f64 = arm.strata.iter().map(|s| s.weight * s.resid_var).sum();
        match method {
            PowerMethod::StratifiedProportional => within,
            PowerMethod::Srs => {
                let grand: f64 = arm.strata.iter().map(|s| s.weight * s.resid_mean).sum();
                let between: f64 = arm
                    .strata
                    .iter()
                    .map(|s| s.weight * (s.resid_mean - grand) * (s.resid_mean - grand))
                    .sum();
                within + between
            }
        }
    }

    pub fn se_at(&self, h: f64, method: PowerMethod) -> f64 {
        let mut v = 0.0;
        for arm in &self.arms {
            let n = arm.n as f64;
            v += arm.y_var / n + (1.0 - h) / (h * n) * Self::arm_load(arm, method);
        }
        v.sqrt()
    }
}

/// MDES(h) = (z_{1-alpha/2} + z_{power}) * SE(h) over the design's h grid.
pub fn mdes_curve(design: &PowerDesign, method: PowerMethod) -> Result<Vec<(f64, f64)>> {
    design.check()?;
    let level_z = normal_quantile_for_level(1.0 - design.alpha);
    let power_z = normal_quantile_for_level(2.0 * design.power - 1.0);
    let multiplier = level_z + power_z;
    Ok(design
        .h_grid
        .iter()
        .map(|&h| (h, multiplier * design.se_at(h, method)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn design(resid_means: Vec<f64>, resid_vars: Vec<f64>) -> PowerDesign {
        let k = resid_means.len();
        let strata: Vec<StratumPower> = resid_means
            .into_iter()
            .zip(resid_vars)
            .map(|(m, v)| StratumPower {
                weight: 1.0 / k as f64,
                resid_mean: m,
                resid_var: v,
            })
            .collect();
        let arm = ArmPower {
            n: 500,
            y_var: 9.0,
            strata,
        };
        PowerDesign {
            arms: vec![arm.clone(), arm],
            alpha: 0.05,
            power: 0.8,
            h_grid: (1..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }

    #[test]
    fn default_multiplier_is_two_point_eight() {
        let m = normal_quantile_for_level(0.95) + normal_quantile_for_level(0.6);
        assert_abs_diff_eq!(m, 2.80158, epsilon = 1e-4);
    }

    #[test]
    fn full_coding_matches_analytic_value() {
        let d = design(vec![-0.5, 0.0, 0.5, 1.0], vec![1.0, 1.0, 2.0, 0.5]);
        let multiplier = normal_quantile_for_level(0.95) + normal_quantile_for_level(0.6);
        let expected = multiplier * (9.0 / 500.0 + 9.0 / 500.0f64).sqrt();
        for method in [PowerMethod::Srs, PowerMethod::StratifiedProportional] {
            let curve = mdes_curve(&d, method).unwrap();
            let (h, mdes) = *curve.last().unwrap();
            assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(mdes, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_surrogate_is_flat_in_h() {
        let d = design(vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0]);
        for method in [PowerMethod::Srs, PowerMethod::StratifiedProportional] {
            let curve = mdes_curve(&d, method).unwrap();
            let first = curve.first().unwrap().1;
            for (_, mdes) in curve {
                assert_abs_diff_eq!(mdes, first, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stratified_sits_below_srs_with_mean_spread() {
        let d = design(vec![-1.5, -0.5, 0.5, 1.5], vec![1.0, 1.0, 1.0, 1.0]);
        let srs = mdes_curve(&d, PowerMethod::Srs).unwrap();
        let strat = mdes_curve(&d, PowerMethod::StratifiedProportional).unwrap();
        for ((h, a), (_, b)) in srs.iter().zip(&strat) {
            if *h < 1.0 {
                assert!(b < a, "stratified not below SRS at h = {h}");
            } else {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn equal_stratum_means_give_equal_curves() {
        let d = design(vec![0.7, 0.7, 0.7, 0.7], vec![0.5, 1.0, 1.5, 2.0]);
        let srs = mdes_curve(&d, PowerMethod::Srs).unwrap();
        let strat = mdes_curve(&d, PowerMethod::StratifiedProportional).unwrap();
        for ((_, a), (_, b)) in srs.iter().zip(&strat) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mdes_strictly_decreasing_in_h_with_residual_variance() {
        let d = design(vec![0.0, 0.2, -0.2, 0.1], vec![1.0, 0.5, 2.0, 1.5]);
        for method in [PowerMethod::Srs, PowerMethod::StratifiedProportional] {
            let curve = mdes_curve(&d, method).unwrap();
            for pair in curve.windows(2) {
                assert!(pair[1].1 < pair[0].1);
            }
        }
    }

    #[test]
    fn h_zero_is_rejected() {
        let mut d = design(vec![0.0], vec![1.0]);
        d.h_grid = vec![0.0, 0.5];
        assert!(mdes_curve(&d, PowerMethod::Srs).is_err());
    }
}
