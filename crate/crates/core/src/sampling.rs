//! Deterministic, seeded simple-random and stratified sampling without
//! replacement.
//!
//! Each (arm, stratum) cell draws from its own counter-derived substream of
//! the master seed, so per-cell draws can run in any order (or in parallel)
//! and still reproduce the sequential result exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::population::{PopulationTable, StrataAssignment};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Srs,
    Stratified,
}

/// The set of units selected for gold-standard coding.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    selected: BTreeSet<String>,
    realized: BTreeMap<(u8, usize), usize>,
    scheme: Scheme,
}

impl SampleDraw {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn contains(&self, id: &str) -> bool {
        self.selected.contains(id)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn selected(&self) -> impl Iterator<Item = &String> {
        self.selected.iter()
    }

    /// Realized count for an (arm, stratum) cell; SRS draws use stratum 1.
    pub fn realized(&self, arm: u8, stratum: usize) -> usize {
        self.realized.get(&(arm, stratum)).copied().unwrap_or(0)
    }

    pub fn realized_cells(&self) -> impl Iterator<Item = (u8, usize, usize)> + '_ {
        self.realized.iter().map(|(&(a, k), &n)| (a, k, n))
    }

    pub fn n_in_arm(&self, arm: u8) -> usize {
        self.realized
            .iter()
            .filter(|((a, _), _)| *a == arm)
            .map(|(_, n)| *n)
            .sum()
    }

    /// Assemble a draw from explicit ids, treating each arm as one stratum.
    pub fn from_ids(pop: &PopulationTable, ids: impl Iterator<Item = String>) -> SampleDraw {
        let selected: BTreeSet<String> = ids.collect();
        let mut realized = BTreeMap::new();
        for id in &selected {
            if let Some(u) = pop.get(id) {
                *realized.entry((u.arm, 1)).or_insert(0) += 1;
            }
        }
        SampleDraw {
            selected,
            realized,
            scheme: Scheme::Srs,
        }
    }

    /// Assemble a stratified draw from an explicit id set, tallying the
    /// realized counts per (arm, stratum).
    pub fn from_coded_subset(
        pop: &PopulationTable,
        strata: &StrataAssignment,
        ids: &BTreeSet<String>,
    ) -> SampleDraw {
        let mut realized = BTreeMap::new();
        for id in ids {
            if let Some(i) = pop.index_of(id) {
                let u = &pop.units()[i];
                *realized.entry((u.arm, strata.label_at(i))).or_insert(0) += 1;
            }
        }
        SampleDraw {
            selected: ids.clone(),
            realized,
            scheme: Scheme::Stratified,
        }
    }

    /// Treat the units that already carry a gold outcome as the draw. With a
    /// strata assignment the realized counts are tallied per cell and the
    /// scheme is stratified; otherwise per arm under the SRS scheme.
    pub fn from_coded(pop: &PopulationTable, strata: Option<&StrataAssignment>) -> SampleDraw {
        let mut selected = BTreeSet::new();
        let mut realized = BTreeMap::new();
        for (i, u) in pop.units().iter().enumerate() {
            if u.y.is_some() {
                selected.insert(u.id.clone());
                let k = strata.map(|s| s.label_at(i)).unwrap_or(1);
                *realized.entry((u.arm, k)).or_insert(0) += 1;
            }
        }
        SampleDraw {
            selected,
            realized,
            scheme: if strata.is_some() {
                Scheme::Stratified
            } else {
                Scheme::Srs
            },
        }
    }
}

/// Draw `amount` ids uniformly without replacement via a partial
/// Fisher-Yates shuffle of the id list sorted by id.
fn sample_ids(mut ids: Vec<&str>, amount: usize, stream: &Stream) -> Vec<String> {
    ids.sort_unstable();
    let mut rng = stream.rng();
    let (chosen, _) = ids.partial_shuffle(&mut rng, amount);
    chosen.iter().map(|s| s.to_string()).collect()
}

/// Simple random sample of `budgets[arm]` units within each arm.
pub fn srs_sample(
    pop: &PopulationTable,
    budgets: &BTreeMap<u8, usize>,
    seed: &Stream,
) -> Result<SampleDraw> {
    let mut selected = BTreeSet::new();
    let mut realized = BTreeMap::new();
    for arm in pop.arms() {
        let budget = budgets.get(&arm).copied().unwrap_or(0);
        let size = pop.arm_size(arm);
        if budget == 0 || budget > size {
            return Err(Error::BudgetExceedsArm { arm, budget, size });
        }
        let ids: Vec<&str> = pop
            .arm_indices(arm)
            .iter()
            .map(|&i| pop.units()[i].id.as_str())
            .collect();
        for id in sample_ids(ids, budget, &seed.child(u64::from(arm))) {
            selected.insert(id);
        }
        realized.insert((arm, 1), budget);
    }
    Ok(SampleDraw {
        selected,
        realized,
        scheme: Scheme::Srs,
    })
}

/// Independent SRS without replacement inside each (arm, stratum) cell;
/// realized counts equal the allocation exactly.
pub fn stratified_sample(
    pop: &PopulationTable,
    strata: &StrataAssignment,
    alloc: &Allocation,
    seed: &Stream,
) -> Result<SampleDraw> {
    if !strata.matches(pop) {
        return Err(Error::Invalid(
            "strata assignment does not cover this population".to_string(),
        ));
    }
    alloc.check_against(strata, &pop.arms())?;
    let mut selected = BTreeSet::new();
    let mut realized = BTreeMap::new();
    for arm in pop.arms() {
        let arm_stream = seed.child(u64::from(arm));
        for k in 1..=strata.k(arm) {
            let quota = alloc.n_for(arm, k);
            let ids: Vec<&str> = strata
                .cell_indices(pop, arm, k)
                .into_iter()
                .map(|i| pop.units()[i].id.as_str())
                .collect();
            for id in sample_ids(ids, quota, &arm_stream.child(k as u64)) {
                selected.insert(id);
            }
            realized.insert((arm, k), quota);
        }
    }
    Ok(SampleDraw {
        selected,
        realized,
        scheme: Scheme::Stratified,
    })
}

/// Audit export: one row per unit, (id, sampled 0/1), in id order.
pub fn write_draw_csv<W: Write>(pop: &PopulationTable, draw: &SampleDraw, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "sampled"])?;
    let mut ids: Vec<&str> = pop.units().iter().map(|u| u.id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        wtr.write_record([id, if draw.contains(id) { "1" } else { "0" }])?;
    }
    wtr.flush()?;
    Ok(())
}
