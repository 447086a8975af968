//! Python bindings: populations, strata, allocation, seeded sampling, the
//! four estimators, variance decomposition, DGP calibration, scenario
//! simulation, and MDES curves.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};

use stratest_core::allocation::{Allocation, AllocationMethod};
use stratest_core::estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, EstimateOptions,
};
use stratest_core::population::{
    ColumnMapping, Mode, PopulationTable, StrataAssignment, UnitRecord,
};
use stratest_core::power::{ArmPower, PowerDesign, PowerMethod, StratumPower};
use stratest_core::rng::Stream;
use stratest_core::sampling::SampleDraw;
use stratest_core::simulation::{BiasPattern, ScenarioConfig, StrataShape, VariancePattern};
use stratest_core::variance::VarianceMode;

fn to_py_err(e: stratest_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().unbind().into(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into()
            } else {
                n.as_f64()
                    .unwrap_or(f64::NAN)
                    .into_pyobject(py)?
                    .unbind()
                    .into()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.unbind().into(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.unbind().into()
        }
    })
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

/// A population of units with surrogate scores and optional gold outcomes.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Population {
    inner: PopulationTable,
}

#[pymethods]
impl Population {
    /// Build from parallel columns. `arm` omitted means single-group data;
    /// `y` entries of None mark uncoded units.
    #[staticmethod]
    #[pyo3(signature = (ids, y_hat, arm=None, y=None))]
    fn from_columns(
        ids: Vec<String>,
        y_hat: Vec<f64>,
        arm: Option<Vec<u8>>,
        y: Option<Vec<Option<f64>>>,
    ) -> PyResult<Self> {
        let n = ids.len();
        if y_hat.len() != n
            || arm.as_ref().is_some_and(|a| a.len() != n)
            || y.as_ref().is_some_and(|y| y.len() != n)
        {
            return Err(PyValueError::new_err("column lengths differ"));
        }
        let mode = if arm.is_some() {
            Mode::TwoArm
        } else {
            Mode::SingleArm
        };
        let units = (0..n)
            .map(|i| {
                UnitRecord::new(
                    ids[i].clone(),
                    arm.as_ref().map_or(0, |a| a[i]),
                    y_hat[i],
                    y.as_ref().and_then(|y| y[i]),
                )
            })
            .collect();
        Ok(Population {
            inner: PopulationTable::new(units, mode).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_coded(&self) -> usize {
        self.inner.units().iter().filter(|u| u.y.is_some()).count()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            Mode::TwoArm => "two_arm",
            Mode::SingleArm => "single_arm",
        }
    }

    fn ids(&self) -> Vec<String> {
        self.inner.units().iter().map(|u| u.id.clone()).collect()
    }

    fn is_fully_coded(&self) -> bool {
        self.inner.is_fully_coded()
    }

    fn arm_sizes(&self) -> BTreeMap<u8, usize> {
        self.inner
            .arms()
            .into_iter()
            .map(|a| (a, self.inner.arm_size(a)))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A per-arm stratum assignment aligned with a population.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Strata {
    inner: StrataAssignment,
}

#[pymethods]
impl Strata {
    /// Build from one label per unit, in population order.
    #[staticmethod]
    fn from_labels(pop: &Population, labels: Vec<String>) -> PyResult<Self> {
        Ok(Strata {
            inner: StrataAssignment::from_unit_labels(&pop.inner, &labels).map_err(to_py_err)?,
        })
    }

    /// Per-(arm, stratum) population counts.
    fn counts(&self) -> BTreeMap<(u8, usize), usize> {
        self.inner.cells().map(|(a, k, n)| ((a, k), n)).collect()
    }

    fn k(&self, arm: u8) -> usize {
        self.inner.k(arm)
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }
}

/// Load a population (and optional strata) from a CSV file.
#[pyfunction]
#[pyo3(signature = (path, id_col="id", arm_col=None, yhat_col="y_hat", y_col=None, stratum_col=None, feature_cols=None, y_missing=None))]
#[allow(clippy::too_many_arguments)]
fn load_population(
    path: &str,
    id_col: &str,
    arm_col: Option<&str>,
    yhat_col: &str,
    y_col: Option<&str>,
    stratum_col: Option<&str>,
    feature_cols: Option<Vec<String>>,
    y_missing: Option<&str>,
) -> PyResult<(Population, Option<Strata>)> {
    let bytes = std::fs::read(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut rdr = csv::ReaderShim::new(&bytes);
    let header = rdr.header()?;
    let y = match y_col {
        Some(c) => Some(c.to_string()),
        None => header.contains(&"y".to_string()).then(|| "y".to_string()),
    };
    let mapping = ColumnMapping {
        id: id_col.to_string(),
        arm: arm_col.map(str::to_string),
        y_hat: yhat_col.to_string(),
        y,
        stratum: stratum_col.map(str::to_string),
        features: feature_cols.unwrap_or_default(),
        missing_sentinel: y_missing.map(str::to_string),
    };
    let loaded = stratest_core::population::load_population(bytes.as_slice(), &mapping)
        .map_err(to_py_err)?;
    Ok((
        Population { inner: loaded.pop },
        loaded.strata.map(|inner| Strata { inner }),
    ))
}

// Minimal header peek without pulling the csv crate into the bindings.
mod csv {
    use pyo3::exceptions::PyValueError;
    use pyo3::PyResult;

    pub struct ReaderShim<'a> {
        bytes: &'a [u8],
    }

    impl<'a> ReaderShim<'a> {
        pub fn new(bytes: &'a [u8]) -> Self {
            ReaderShim { bytes }
        }

        pub fn header(&mut self) -> PyResult<Vec<String>> {
            let text = std::str::from_utf8(self.bytes)
                .map_err(|e| PyValueError::new_err(e.to_string()))?;
            let first = text
                .lines()
                .next()
                .ok_or_else(|| PyValueError::new_err("empty CSV"))?;
            Ok(first.split(',').map(|s| s.trim().to_string()).collect())
        }
    }
}

/// Monotone quantile labels: returns (labels, k, collapsed).
#[pyfunction]
fn quantile_cut(values: Vec<f64>, q: usize) -> PyResult<(Vec<usize>, usize, bool)> {
    let cut = stratest_core::stratification::quantile_cut(&values, q).map_err(to_py_err)?;
    Ok((cut.labels, cut.k, cut.collapsed))
}

/// Product of two labelings, renumbered densely.
#[pyfunction]
fn cross_strata(a: Vec<usize>, b: Vec<usize>) -> PyResult<Vec<usize>> {
    stratest_core::stratification::cross_strata(&a, &b).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (counts, budget, min_floor=2))]
fn proportional_allocation(
    counts: Vec<usize>,
    budget: usize,
    min_floor: usize,
) -> PyResult<Vec<usize>> {
    stratest_core::allocation::proportional_allocation(&counts, budget, min_floor)
        .map_err(to_py_err)
}

/// Capped Neyman quotas: returns (quotas, fell_back_to_proportional).
#[pyfunction]
#[pyo3(signature = (counts, sds, budget, min_floor=2))]
fn neyman_allocation(
    counts: Vec<usize>,
    sds: Vec<f64>,
    budget: usize,
    min_floor: usize,
) -> PyResult<(Vec<usize>, bool)> {
    let out = stratest_core::allocation::neyman_allocation(&counts, &sds, budget, min_floor)
        .map_err(to_py_err)?;
    Ok((out.quotas, out.fell_back_to_proportional))
}

fn budgets_from_py(
    pop: &PopulationTable,
    budgets: &Bound<'_, PyAny>,
) -> PyResult<BTreeMap<u8, usize>> {
    if let Ok(n) = budgets.extract::<usize>() {
        return Ok(pop.arms().into_iter().map(|a| (a, n)).collect());
    }
    budgets.extract::<BTreeMap<u8, usize>>()
}

fn alloc_from_py(alloc: &Bound<'_, PyAny>) -> PyResult<Allocation> {
    let per_arm: BTreeMap<u8, Vec<usize>> = alloc.extract()?;
    let quotas: Vec<(u8, Vec<usize>)> = per_arm.into_iter().collect();
    Ok(Allocation::from_arm_quotas(
        &quotas,
        AllocationMethod::Manual,
    ))
}

/// Seeded SRS within each arm; `budgets` is an int (per arm) or an
/// {arm: n} dict. Returns the selected ids, sorted.
#[pyfunction]
fn srs_sample(pop: &Population, budgets: &Bound<'_, PyAny>, seed: u64) -> PyResult<Vec<String>> {
    let budgets = budgets_from_py(&pop.inner, budgets)?;
    let draw = stratest_core::sampling::srs_sample(&pop.inner, &budgets, &Stream::root(seed))
        .map_err(to_py_err)?;
    Ok(draw.selected().cloned().collect())
}

/// Seeded stratified sampling; `alloc` maps arm to per-stratum quotas.
#[pyfunction]
fn stratified_sample(
    pop: &Population,
    strata: &Strata,
    alloc: &Bound<'_, PyAny>,
    seed: u64,
) -> PyResult<Vec<String>> {
    let alloc = alloc_from_py(alloc)?;
    let draw = stratest_core::sampling::stratified_sample(
        &pop.inner,
        &strata.inner,
        &alloc,
        &Stream::root(seed),
    )
    .map_err(to_py_err)?;
    Ok(draw.selected().cloned().collect())
}

/// Compute an estimate. `method` is one of "oracle", "subset", "ma_srs",
/// "ma_stratified". The coded set is taken from the units that carry a gold
/// outcome. Returns the full report as a dict.
#[pyfunction]
#[pyo3(signature = (pop, method, strata=None, ci=0.95, variance_mode="superpopulation"))]
fn estimate(
    py: Python<'_>,
    pop: &Population,
    method: &str,
    strata: Option<&Strata>,
    ci: f64,
    variance_mode: &str,
) -> PyResult<Py<PyAny>> {
    let opts = EstimateOptions {
        ci_level: ci,
        variance_mode: match variance_mode {
            "superpopulation" => VarianceMode::Superpopulation,
            "finite_population" => VarianceMode::FinitePopulation,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown variance mode {other:?}"
                )))
            }
        },
    };
    let pop = &pop.inner;
    let report = match method {
        "oracle" => estimate_oracle(pop, &opts).map_err(to_py_err)?,
        "subset" => {
            let draw = SampleDraw::from_coded(pop, None);
            estimate_subset(pop, &draw, &opts).map_err(to_py_err)?
        }
        "ma_srs" => {
            let draw = SampleDraw::from_coded(pop, None);
            estimate_ma_srs(pop, &draw, &opts).map_err(to_py_err)?
        }
        "ma_stratified" => {
            let strata =
                strata.ok_or_else(|| PyValueError::new_err("ma_stratified needs strata"))?;
            let draw = SampleDraw::from_coded(pop, Some(&strata.inner));
            let cells = draw
                .realized_cells()
                .map(|(a, k, n)| ((a, k), n))
                .collect::<BTreeMap<_, _>>();
            let alloc = Allocation::from_cells(cells, AllocationMethod::Manual);
            estimate_ma_stratified(pop, &strata.inner, &draw, &alloc, &opts).map_err(to_py_err)?
        }
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    serialize_to_py(py, &report)
}

/// Between/within-strata split of the variance gain over SRS at an
/// allocation ({arm: quotas}); needs a fully coded population.
#[pyfunction]
fn decompose(
    py: Python<'_>,
    pop: &Population,
    strata: &Strata,
    alloc: &Bound<'_, PyAny>,
) -> PyResult<Py<PyAny>> {
    let alloc = alloc_from_py(alloc)?;
    let d = stratest_core::variance::bs_ws_decomposition(&pop.inner, &strata.inner, &alloc)
        .map_err(to_py_err)?;
    serialize_to_py(py, &d)
}

/// Theorem-style conditional variance of the stratified estimator at an
/// allocation; needs a fully coded population.
#[pyfunction]
fn exact_conditional_variance(
    pop: &Population,
    strata: &Strata,
    alloc: &Bound<'_, PyAny>,
) -> PyResult<f64> {
    let alloc = alloc_from_py(alloc)?;
    stratest_core::variance::exact_conditional_variance(&pop.inner, &strata.inner, &alloc)
        .map_err(to_py_err)
}

fn bias_pattern(name: &str) -> PyResult<BiasPattern> {
    Ok(match name {
        "none" => BiasPattern::None,
        "small" => BiasPattern::Small,
        "moderate" => BiasPattern::Moderate,
        "large" => BiasPattern::Large,
        "extreme_contrast" => BiasPattern::ExtremeContrast,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown bias pattern {other:?}"
            )))
        }
    })
}

fn variance_pattern(name: &str) -> PyResult<VariancePattern> {
    Ok(match name {
        "homogeneous" => VariancePattern::Homogeneous,
        "heterogeneous" => VariancePattern::Heterogeneous,
        "extreme_contrast" => VariancePattern::ExtremeContrast,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown variance pattern {other:?}"
            )))
        }
    })
}

fn strata_shape(name: &str) -> PyResult<StrataShape> {
    Ok(match name {
        "balanced_exact" => StrataShape::BalancedExact,
        "balanced_approx" => StrataShape::BalancedApprox,
        "unbalanced" => StrataShape::Unbalanced,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown strata configuration {other:?}"
            )))
        }
    })
}

/// Calibrate the simulation DGP: returns {"b": [...], "sigma2_eps": [...],
/// "c": float, "v_normalizer": float}.
#[pyfunction]
fn calibrate_dgp(
    py: Python<'_>,
    bias: &str,
    variance: &str,
    r_squared: f64,
    sigma_y: f64,
    weights: Vec<f64>,
) -> PyResult<Py<PyAny>> {
    let cal = stratest_core::simulation::calibrate_dgp(
        bias_pattern(bias)?,
        variance_pattern(variance)?,
        r_squared,
        sigma_y,
        &weights,
    )
    .map_err(to_py_err)?;
    serialize_to_py(py, &cal)
}

/// Run one simulation scenario; returns {estimator: metrics dict}.
#[pyfunction]
#[pyo3(signature = (n_units=1000, n_strata=4, sigma_y=3.0, tau=0.0, bias="none", variance="homogeneous",
                    r_squared=0.4, strata_config="balanced_exact", coding_fraction=0.3,
                    replications=100, seed=0, min_floor=2, pilot_fraction=None))]
#[allow(clippy::too_many_arguments)]
fn run_scenario(
    py: Python<'_>,
    n_units: usize,
    n_strata: usize,
    sigma_y: f64,
    tau: f64,
    bias: &str,
    variance: &str,
    r_squared: f64,
    strata_config: &str,
    coding_fraction: f64,
    replications: usize,
    seed: u64,
    min_floor: usize,
    pilot_fraction: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let cfg = ScenarioConfig {
        n_units,
        n_strata,
        sigma_y,
        tau,
        bias: bias_pattern(bias)?,
        variance: variance_pattern(variance)?,
        r_squared,
        strata_config: strata_shape(strata_config)?,
        coding_fraction,
        replications,
        seed,
        min_floor,
        pilot_fraction,
    };
    let result = stratest_core::simulation::run_scenario(&cfg).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    for (kind, metrics) in &result.metrics {
        dict.set_item(kind.label(), serialize_to_py(py, metrics)?)?;
    }
    Ok(dict.unbind().into())
}

/// Minimum detectable effect size over a grid of coding fractions.
/// `arms` is a list of dicts with keys n, y_var, weights, resid_means,
/// resid_vars. Returns [(h, mdes), ...].
#[pyfunction]
#[pyo3(signature = (arms, h_grid, method="stratified_proportional", alpha=0.05, power=0.8))]
fn mdes_curve(
    arms: Vec<Bound<'_, PyDict>>,
    h_grid: Vec<f64>,
    method: &str,
    alpha: f64,
    power: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let mut parsed = Vec::new();
    for arm in &arms {
        let get = |key: &str| -> PyResult<Bound<'_, PyAny>> {
            arm.get_item(key)?
                .ok_or_else(|| PyValueError::new_err(format!("arm dict missing {key:?}")))
        };
        let n: usize = get("n")?.extract()?;
        let y_var: f64 = get("y_var")?.extract()?;
        let weights: Vec<f64> = get("weights")?.extract()?;
        let means: Vec<f64> = get("resid_means")?.extract()?;
        let vars: Vec<f64> = get("resid_vars")?.extract()?;
        if weights.len() != means.len() || weights.len() != vars.len() {
            return Err(PyValueError::new_err(
                "arm stratum vectors differ in length",
            ));
        }
        parsed.push(ArmPower {
            n,
            y_var,
            strata: weights
                .iter()
                .zip(&means)
                .zip(&vars)
                .map(|((&w, &m), &v)| StratumPower {
                    weight: w,
                    resid_mean: m,
                    resid_var: v,
                })
                .collect(),
        });
    }
    let design = PowerDesign {
        arms: parsed,
        alpha,
        power,
        h_grid,
    };
    let method = match method {
        "srs" => PowerMethod::Srs,
        "stratified_proportional" => PowerMethod::StratifiedProportional,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown power method {other:?}"
            )))
        }
    };
    stratest_core::power::mdes_curve(&design, method).map_err(to_py_err)
}

/// Generate candidate stratifications from variables ("y_hat" plus feature
/// names), score them before coding, and rank them. Returns a list of
/// metric dicts in rank order.
#[pyfunction]
#[pyo3(signature = (pop, variables, max_balance_ratio=10.0, min_stratum_size=100, merge_min_cell=2))]
fn stratify_candidates(
    py: Python<'_>,
    pop: &Population,
    variables: Vec<String>,
    max_balance_ratio: f64,
    min_stratum_size: usize,
    merge_min_cell: usize,
) -> PyResult<Py<PyAny>> {
    use stratest_core::stratification::{
        generate_candidates, precoding_metrics, rank_candidates, CandidateOptions, RankFilters,
    };
    let opts = CandidateOptions {
        merge_min_cell,
        ..CandidateOptions::default()
    };
    let candidates = generate_candidates(&pop.inner, &variables, &opts).map_err(to_py_err)?;
    let metrics = candidates
        .iter()
        .map(|c| precoding_metrics(&pop.inner, c))
        .collect();
    let ranked = rank_candidates(
        metrics,
        &RankFilters {
            max_balance_ratio,
            min_stratum_size,
        },
    )
    .map_err(to_py_err)?;
    serialize_to_py(py, &ranked.ranked)
}

#[pymodule]
fn stratest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Population>()?;
    m.add_class::<Strata>()?;
    m.add_function(wrap_pyfunction!(load_population, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_cut, m)?)?;
    m.add_function(wrap_pyfunction!(cross_strata, m)?)?;
    m.add_function(wrap_pyfunction!(proportional_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(neyman_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(srs_sample, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_sample, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(exact_conditional_variance, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_dgp, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(mdes_curve, m)?)?;
    m.add_function(wrap_pyfunction!(stratify_candidates, m)?)?;
    Ok(())
}
