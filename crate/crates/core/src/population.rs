//! Population data model: per-unit records with a surrogate score for every
//! unit and a gold-standard outcome for the coded subset, plus per-arm
//! stratum assignments.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the population carries a two-arm experiment or a single group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoArm,
    SingleArm,
}

/// Opaque feature value carried for stratification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Real(f64),
    Text(String),
}

impl FeatureValue {
    pub fn parse(raw: &str) -> FeatureValue {
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => FeatureValue::Real(v),
            _ => FeatureValue::Text(raw.to_string()),
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            FeatureValue::Real(v) => Some(*v),
            FeatureValue::Text(_) => None,
        }
    }
}

/// One unit: id, arm, surrogate score, optional gold outcome, features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub arm: u8,
    pub y_hat: f64,
    pub y: Option<f64>,
    #[serde(default)]
    pub features: BTreeMap<String, FeatureValue>,
}

impl UnitRecord {
    pub fn new(id: impl Into<String>, arm: u8, y_hat: f64, y: Option<f64>) -> Self {
        UnitRecord {
            id: id.into(),
            arm,
            y_hat,
            y,
            features: BTreeMap::new(),
        }
    }

    /// Residual e = y - y_hat, defined only for coded units.
    pub fn residual(&self) -> Option<f64> {
        self.y.map(|y| y - self.y_hat)
    }
}

/// Immutable table of units. Construction validates the invariants; the
/// table is safe to share across threads afterwards.
#[derive(Debug, Clone)]
pub struct PopulationTable {
    units: Vec<UnitRecord>,
    mode: Mode,
    by_id: HashMap<String, usize>,
    arm_index: BTreeMap<u8, Vec<usize>>,
}

impl PopulationTable {
    pub fn new(units: Vec<UnitRecord>, mode: Mode) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(units.len());
        let mut arm_index: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            if by_id.insert(u.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if !u.y_hat.is_finite() {
                return Err(Error::Invalid(format!(
                    "unit {:?}: surrogate score must be finite",
                    u.id
                )));
            }
            if let Some(y) = u.y {
                if !y.is_finite() {
                    return Err(Error::Invalid(format!(
                        "unit {:?}: gold outcome must be finite",
                        u.id
                    )));
                }
            }
            match mode {
                Mode::TwoArm if u.arm > 1 => {
                    return Err(Error::InvalidArm {
                        row: i + 1,
                        value: u.arm.to_string(),
                    })
                }
                Mode::SingleArm if u.arm != 0 => {
                    return Err(Error::Invalid(format!(
                        "unit {:?}: single-arm tables must use arm 0",
                        u.id
                    )))
                }
                _ => {}
            }
            arm_index.entry(u.arm).or_default().push(i);
        }
        if mode == Mode::TwoArm {
            arm_index.entry(0).or_default();
            arm_index.entry(1).or_default();
        }
        Ok(PopulationTable {
            units,
            mode,
            by_id,
            arm_index,
        })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_arms(&self) -> usize {
        match self.mode {
            Mode::TwoArm => 2,
            Mode::SingleArm => 1,
        }
    }

    /// Arms present in this mode, in order.
    pub fn arms(&self) -> Vec<u8> {
        match self.mode {
            Mode::TwoArm => vec![0, 1],
            Mode::SingleArm => vec![0],
        }
    }

    pub fn arm_indices(&self, arm: u8) -> &[usize] {
        self.arm_index.get(&arm).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.arm_indices(arm).len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&UnitRecord> {
        self.index_of(id).map(|i| &self.units[i])
    }

    pub fn is_fully_coded(&self) -> bool {
        self.units.iter().all(|u| u.y.is_some())
    }

    /// Ids of units with an observed gold outcome.
    pub fn coded_ids(&self) -> Vec<String> {
        self.units
            .iter()
            .filter(|u| u.y.is_some())
            .map(|u| u.id.clone())
            .collect()
    }
}

/// Per-unit stratum labels, densified to 1..=K within each arm.
#[derive(Debug, Clone)]
pub struct StrataAssignment {
    labels: Vec<usize>,
    k_per_arm: BTreeMap<u8, usize>,
    counts: BTreeMap<(u8, usize), usize>,
    names: BTreeMap<(u8, usize), String>,
}

impl StrataAssignment {
    /// Build from arbitrary per-unit label values, aligned with the
    /// population order. Labels are ranked within each arm (numerically when
    /// every distinct label parses as a number, lexicographically otherwise)
    /// and renumbered 1..=K.
    pub fn from_unit_labels(pop: &PopulationTable, raw: &[String]) -> Result<Self> {
        if raw.len() != pop.len() {
            return Err(Error::Invalid(format!(
                "expected {} stratum labels, got {}",
                pop.len(),
                raw.len()
            )));
        }
        let mut labels = vec![0usize; raw.len()];
        let mut names = BTreeMap::new();
        for arm in pop.arms() {
            let idxs = pop.arm_indices(arm);
            let mut distinct: Vec<&String> = idxs.iter().map(|&i| &raw[i]).collect();
            distinct.sort();
            distinct.dedup();
            let all_numeric = distinct.iter().all(|s| s.trim().parse::<f64>().is_ok());
            if all_numeric {
                distinct.sort_by(|a, b| {
                    let x: f64 = a.trim().parse().unwrap();
                    let y: f64 = b.trim().parse().unwrap();
                    x.partial_cmp(&y).unwrap()
                });
            }
            let rank: HashMap<&String, usize> = distinct
                .iter()
                .enumerate()
                .map(|(j, s)| (*s, j + 1))
                .collect();
            for &i in idxs {
                labels[i] = rank[&raw[i]];
            }
            for (s, j) in &rank {
                names.insert((arm, *j), (*s).clone());
            }
        }
        Self::from_dense(pop, labels, names)
    }

    /// Build from numeric per-unit labels; values are densified per arm.
    pub fn from_indices(pop: &PopulationTable, raw: &[usize]) -> Result<Self> {
        let as_strings: Vec<String> = raw.iter().map(|v| format!("{v:06}")).collect();
        Self::from_unit_labels(pop, &as_strings)
    }

    /// The trivial stratification: one stratum per arm.
    pub fn single_stratum(pop: &PopulationTable) -> Self {
        let labels = vec![1usize; pop.len()];
        let mut counts = BTreeMap::new();
        let mut k_per_arm = BTreeMap::new();
        let mut names = BTreeMap::new();
        for arm in pop.arms() {
            let n = pop.arm_size(arm);
            if n > 0 {
                counts.insert((arm, 1), n);
            }
            k_per_arm.insert(arm, 1);
            names.insert((arm, 1), "all".to_string());
        }
        StrataAssignment {
            labels,
            k_per_arm,
            counts,
            names,
        }
    }

    fn from_dense(
        pop: &PopulationTable,
        labels: Vec<usize>,
        names: BTreeMap<(u8, usize), String>,
    ) -> Result<Self> {
        let mut counts: BTreeMap<(u8, usize), usize> = BTreeMap::new();
        for (i, u) in pop.units().iter().enumerate() {
            *counts.entry((u.arm, labels[i])).or_insert(0) += 1;
        }
        let mut k_per_arm = BTreeMap::new();
        for arm in pop.arms() {
            let k = counts
                .iter()
                .filter(|((a, _), _)| *a == arm)
                .map(|((_, k), _)| *k)
                .max()
                .unwrap_or(0);
            k_per_arm.insert(arm, k);
        }
        Ok(StrataAssignment {
            labels,
            k_per_arm,
            counts,
            names,
        })
    }

    /// Stratum index of the unit at population position `idx`.
    pub fn label_at(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of strata in an arm.
    pub fn k(&self, arm: u8) -> usize {
        self.k_per_arm.get(&arm).copied().unwrap_or(0)
    }

    /// Population count of an (arm, stratum) cell.
    pub fn count(&self, arm: u8, stratum: usize) -> usize {
        self.counts.get(&(arm, stratum)).copied().unwrap_or(0)
    }

    /// All (arm, stratum) cells with their population counts, in order.
    pub fn cells(&self) -> impl Iterator<Item = (u8, usize, usize)> + '_ {
        self.counts.iter().map(|(&(a, k), &n)| (a, k, n))
    }

    /// Per-arm stratum counts as a vector indexed by stratum - 1.
    pub fn arm_counts(&self, arm: u8) -> Vec<usize> {
        (1..=self.k(arm)).map(|k| self.count(arm, k)).collect()
    }

    pub fn name(&self, arm: u8, stratum: usize) -> Option<&str> {
        self.names.get(&(arm, stratum)).map(String::as_str)
    }

    /// Population indices of an (arm, stratum) cell.
    pub fn cell_indices(&self, pop: &PopulationTable, arm: u8, stratum: usize) -> Vec<usize> {
        pop.arm_indices(arm)
            .iter()
            .copied()
            .filter(|&i| self.labels[i] == stratum)
            .collect()
    }

    pub fn matches(&self, pop: &PopulationTable) -> bool {
        self.labels.len() == pop.len()
    }
}

/// Machine-readable finding codes for [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCode {
    EmptyArm,
    EmptyStratum,
    SingletonStratum,
    ModeMismatch,
    StrataMisaligned,
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub code: FindingCode,
    pub message: String,
    pub unit_ids: Vec<String>,
}

/// Outcome of [`validate`]; an empty `errors` list means the table is usable
/// by the estimators.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Check structural soundness of a population and (optionally) a strata
/// assignment. All findings land in the report; nothing panics or errors.
pub fn validate(pop: &PopulationTable, strata: Option<&StrataAssignment>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if pop.mode() == Mode::TwoArm {
        for arm in [0u8, 1] {
            if pop.arm_size(arm) == 0 {
                report.errors.push(Finding {
                    code: FindingCode::EmptyArm,
                    message: format!("two-arm table but arm {arm} has no units"),
                    unit_ids: Vec::new(),
                });
            }
        }
    }
    if let Some(strata) = strata {
        if !strata.matches(pop) {
            report.errors.push(Finding {
                code: FindingCode::StrataMisaligned,
                message: format!(
                    "strata assignment covers {} units, population has {}",
                    strata.labels().len(),
                    pop.len()
                ),
                unit_ids: Vec::new(),
            });
            return report;
        }
        for arm in pop.arms() {
            for k in 1..=strata.k(arm) {
                let n = strata.count(arm, k);
                if n == 0 {
                    report.errors.push(Finding {
                        code: FindingCode::EmptyStratum,
                        message: format!("arm {arm} stratum {k} is empty"),
                        unit_ids: Vec::new(),
                    });
                } else if n == 1 {
                    let ids = strata
                        .cell_indices(pop, arm, k)
                        .into_iter()
                        .map(|i| pop.units()[i].id.clone())
                        .collect();
                    report.warnings.push(Finding {
                        code: FindingCode::SingletonStratum,
                        message: format!(
                            "arm {arm} stratum {k} has a single unit; within-stratum variance is undefined"
                        ),
                        unit_ids: ids,
                    });
                }
            }
        }
    }
    report
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub id: String,
    pub arm: Option<String>,
    pub y_hat: String,
    pub y: Option<String>,
    pub stratum: Option<String>,
    pub features: Vec<String>,
    /// Literal cell content to treat as a missing gold outcome, in addition
    /// to the empty cell. Sentinels are never inferred.
    pub missing_sentinel: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: "id".to_string(),
            arm: None,
            y_hat: "y_hat".to_string(),
            y: Some("y".to_string()),
            stratum: None,
            features: Vec::new(),
            missing_sentinel: None,
        }
    }
}

/// A loaded population plus the stratum column, when one was mapped.
#[derive(Debug, Clone)]
pub struct LoadedPopulation {
    pub pop: PopulationTable,
    pub strata: Option<StrataAssignment>,
}

/// Ingest a CSV byte stream. The mode is two-arm exactly when an arm column
/// is mapped. Empty gold-outcome cells become missing values, never zero.
pub fn load_population<R: Read>(reader: R, map: &ColumnMapping) -> Result<LoadedPopulation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&map.id)?;
    let arm_col = map.arm.as_deref().map(col).transpose()?;
    let y_hat_col = col(&map.y_hat)?;
    let y_col = map.y.as_deref().map(col).transpose()?;
    let stratum_col = map.stratum.as_deref().map(col).transpose()?;
    let feature_cols: Vec<(String, usize)> = map
        .features
        .iter()
        .map(|f| col(f).map(|i| (f.clone(), i)))
        .collect::<Result<_>>()?;

    let mode = if arm_col.is_some() {
        Mode::TwoArm
    } else {
        Mode::SingleArm
    };

    let mut units = Vec::new();
    let mut stratum_labels = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or(Error::MalformedRow {
                row,
                message: format!("missing field {i}"),
            })
        };
        let id = field(id_col)?.to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "empty unit id".to_string(),
            });
        }
        let arm = match arm_col {
            Some(c) => {
                let raw = field(c)?;
                match raw {
                    "0" => 0u8,
                    "1" => 1u8,
                    _ => {
                        return Err(Error::InvalidArm {
                            row,
                            value: raw.to_string(),
                        })
                    }
                }
            }
            None => 0u8,
        };
        let y_hat_raw = field(y_hat_col)?;
        let y_hat: f64 = y_hat_raw.parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("non-numeric surrogate score {y_hat_raw:?}"),
        })?;
        if !y_hat.is_finite() {
            return Err(Error::MalformedRow {
                row,
                message: format!("non-finite surrogate score {y_hat_raw:?}"),
            });
        }
        let y = match y_col {
            Some(c) => {
                let raw = field(c)?;
                let missing = raw.is_empty() || map.missing_sentinel.as_deref() == Some(raw);
                if missing {
                    None
                } else {
                    let v: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                        row,
                        message: format!("non-numeric gold outcome {raw:?}"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::MalformedRow {
                            row,
                            message: format!("non-finite gold outcome {raw:?}"),
                        });
                    }
                    Some(v)
                }
            }
            None => None,
        };
        let mut unit = UnitRecord::new(id, arm, y_hat, y);
        for (name, c) in &feature_cols {
            unit.features
                .insert(name.clone(), FeatureValue::parse(field(*c)?));
        }
        if let Some(c) = stratum_col {
            let raw = field(c)?;
            if raw.is_empty() {
                return Err(Error::MalformedRow {
                    row,
                    message: "empty stratum label".to_string(),
                });
            }
            stratum_labels.push(raw.to_string());
        }
        units.push(unit);
    }

    let pop = PopulationTable::new(units, mode)?;
    let strata = if stratum_col.is_some() {
        Some(StrataAssignment::from_unit_labels(&pop, &stratum_labels)?)
    } else {
        None
    };
    Ok(LoadedPopulation { pop, strata })
}

/// Serialize a population back to CSV. Missing gold outcomes become empty
/// cells; feature columns are written in sorted name order.
pub fn write_population_csv<W: Write>(
    pop: &PopulationTable,
    strata: Option<&StrataAssignment>,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let feature_names: Vec<String> = pop
        .units()
        .first()
        .map(|u| u.features.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec!["id".to_string()];
    if pop.mode() == Mode::TwoArm {
        header.push("arm".to_string());
    }
    header.push("y_hat".to_string());
    header.push("y".to_string());
    if strata.is_some() {
        header.push("stratum".to_string());
    }
    header.extend(feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, u) in pop.units().iter().enumerate() {
        let mut row = vec![u.id.clone()];
        if pop.mode() == Mode::TwoArm {
            row.push(u.arm.to_string());
        }
        row.push(format!("{}", u.y_hat));
        row.push(u.y.map(|v| format!("{v}")).unwrap_or_default());
        if let Some(s) = strata {
            row.push(s.label_at(i).to_string());
        }
        for name in &feature_names {
            row.push(match u.features.get(name) {
                Some(FeatureValue::Real(v)) => format!("{v}"),
                Some(FeatureValue::Text(t)) => t.clone(),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Residuals e_i = y_i - y_hat_i for exactly the coded units of a draw.
pub fn residuals(
    pop: &PopulationTable,
    draw: &crate::sampling::SampleDraw,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for id in draw.selected() {
        let unit = pop
            .get(id)
            .ok_or_else(|| Error::Invalid(format!("draw references unknown unit {id:?}")))?;
        let y = unit.y.ok_or_else(|| Error::CodedUnitMissingY(id.clone()))?;
        out.insert(id.clone(), y - unit.y_hat);
    }
    Ok(out)
}
