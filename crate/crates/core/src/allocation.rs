//! Per-stratum coding quotas: proportional allocation and capped Neyman
//! allocation with largest-remainder rounding and a configurable per-stratum
//! floor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::StrataAssignment;

pub const DEFAULT_MIN_FLOOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    Proportional,
    Neyman,
    Manual,
}

/// Integer coding quotas per (arm, stratum), summing to the per-arm budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    cells: BTreeMap<(u8, usize), usize>,
    method: AllocationMethod,
}

impl Allocation {
    pub fn from_cells(cells: BTreeMap<(u8, usize), usize>, method: AllocationMethod) -> Self {
        Allocation { cells, method }
    }

    /// Assemble from per-arm quota vectors (stratum 1..=K order).
    pub fn from_arm_quotas(quotas: &[(u8, Vec<usize>)], method: AllocationMethod) -> Self {
        let mut cells = BTreeMap::new();
        for (arm, ns) in quotas {
            for (j, n) in ns.iter().enumerate() {
                cells.insert((*arm, j + 1), *n);
            }
        }
        Allocation { cells, method }
    }

    pub fn method(&self) -> AllocationMethod {
        self.method
    }

    pub fn n_for(&self, arm: u8, stratum: usize) -> usize {
        self.cells.get(&(arm, stratum)).copied().unwrap_or(0)
    }

    /// Total budget in an arm.
    pub fn budget(&self, arm: u8) -> usize {
        self.cells
            .iter()
            .filter(|((a, _), _)| *a == arm)
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (u8, usize, usize)> + '_ {
        self.cells.iter().map(|(&(a, k), &n)| (a, k, n))
    }

    pub fn arms(&self) -> Vec<u8> {
        let mut arms: Vec<u8> = self.cells.keys().map(|(a, _)| *a).collect();
        arms.dedup();
        arms
    }

    /// Per-arm quotas as a vector indexed by stratum - 1.
    pub fn arm_quotas(&self, arm: u8) -> Vec<usize> {
        let max_k = self
            .cells
            .keys()
            .filter(|(a, _)| *a == arm)
            .map(|(_, k)| *k)
            .max()
            .unwrap_or(0);
        (1..=max_k).map(|k| self.n_for(arm, k)).collect()
    }

    /// Check the quotas against a strata assignment: every cell within
    /// [1, N_zk] and present.
    pub fn check_against(&self, strata: &StrataAssignment, arms: &[u8]) -> Result<()> {
        for &arm in arms {
            for k in 1..=strata.k(arm) {
                let n = self.n_for(arm, k);
                let cap = strata.count(arm, k);
                if n == 0 || n > cap {
                    return Err(Error::AllocationInfeasible { arm, stratum: k });
                }
            }
        }
        Ok(())
    }
}

/// Effective floor for a stratum: the configured floor, capped at the
/// stratum size so full coding of a tiny stratum stays feasible.
fn effective_floors(counts: &[usize], min_floor: usize) -> Vec<usize> {
    counts.iter().map(|&n| min_floor.min(n).max(1)).collect()
}

fn check_budget(counts: &[usize], budget: usize, floors: &[usize]) -> Result<()> {
    let total: usize = counts.iter().sum();
    if budget > total {
        return Err(Error::BudgetExceedsArm {
            arm: 0,
            budget,
            size: total,
        });
    }
    let required: usize = floors.iter().sum();
    if budget < required {
        return Err(Error::BudgetTooSmall { budget, required });
    }
    Ok(())
}

/// Largest-remainder rounding of real targets to integers summing to
/// `total`, never exceeding `caps`. Remainder ties break toward the smaller
/// stratum index.
fn largest_remainder(targets: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = targets
        .iter()
        .zip(caps)
        .map(|(&t, &cap)| (t.floor() as usize).min(cap))
        .collect();
    let assigned: usize = out.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = targets[i] - targets[i].floor();
        let rj = targets[j] - targets[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    // First pass honors the remainder ranking; any residue (caps hit) spills
    // to whichever strata still have room, largest cap gap first.
    for &i in &order {
        if leftover == 0 {
            break;
        }
        if out[i] < caps[i] {
            out[i] += 1;
            leftover -= 1;
        }
    }
    while leftover > 0 {
        let i = (0..out.len())
            .filter(|&i| out[i] < caps[i])
            .max_by_key(|&i| caps[i] - out[i])
            .expect("budget exceeds total capacity");
        out[i] += 1;
        leftover -= 1;
    }
    out
}

/// Single-unit exchange descent on the conditional-variance objective.
/// The objective is separable convex in the quotas, so exchanging until no
/// single move helps lands on the exact integer optimum; rounding can
/// otherwise sit a few percent above it when remainders and floors
/// interact badly.
fn exchange_polish(
    n: &mut [usize],
    floors: &[usize],
    caps: &[usize],
    counts: &[usize],
    sds: &[f64],
) {
    let weight: Vec<f64> = counts
        .iter()
        .zip(sds)
        .map(|(&c, &s)| (c as f64 * s) * (c as f64 * s))
        .collect();
    let release = |q: usize, a: f64| a / ((q - 1) as f64 * q as f64);
    let gain = |q: usize, a: f64| a / (q as f64 * (q + 1) as f64);
    let max_moves = n.iter().sum::<usize>() * n.len() * n.len() + 1;
    for _ in 0..max_moves {
        let mut best: Option<(f64, usize, usize)> = None;
        for d in 0..n.len() {
            if n[d] <= floors[d] {
                continue;
            }
            for r in 0..n.len() {
                if r == d || n[r] >= caps[r] {
                    continue;
                }
                let delta = release(n[d], weight[d]) - gain(n[r], weight[r]);
                if delta < -1e-15 && best.is_none_or(|(b, _, _)| delta < b) {
                    best = Some((delta, d, r));
                }
            }
        }
        match best {
            Some((_, d, r)) => {
                n[d] -= 1;
                n[r] += 1;
            }
            None => break,
        }
    }
}

/// Raise every stratum to its floor, taking the deficit from the strata with
/// the largest allocations (ties toward the smaller index).
fn repair_floors(mut n: Vec<usize>, floors: &[usize]) -> Result<Vec<usize>> {
    let mut deficit = 0usize;
    for i in 0..n.len() {
        if n[i] < floors[i] {
            deficit += floors[i] - n[i];
            n[i] = floors[i];
        }
    }
    while deficit > 0 {
        let donor = (0..n.len())
            .filter(|&i| n[i] > floors[i])
            .max_by(|&i, &j| n[i].cmp(&n[j]).then(j.cmp(&i)))
            .ok_or(Error::BudgetTooSmall {
                budget: n.iter().sum::<usize>() - deficit,
                required: floors.iter().sum(),
            })?;
        n[donor] -= 1;
        deficit -= 1;
    }
    Ok(n)
}

/// Proportional quotas: real targets budget * N_k / N, rounded by largest
/// remainder, then floor-repaired.
pub fn proportional_allocation(
    counts: &[usize],
    budget: usize,
    min_floor: usize,
) -> Result<Vec<usize>> {
    if counts.is_empty() {
        return Err(Error::Invalid("no strata to allocate over".to_string()));
    }
    let floors = effective_floors(counts, min_floor);
    check_budget(counts, budget, &floors)?;
    let total: usize = counts.iter().sum();
    let targets: Vec<f64> = counts
        .iter()
        .map(|&nk| budget as f64 * nk as f64 / total as f64)
        .collect();
    let rounded = largest_remainder(&targets, budget, counts);
    repair_floors(rounded, &floors)
}

/// Result of a Neyman allocation, including whether the all-zero-SD fallback
/// to proportional quotas fired.
#[derive(Debug, Clone)]
pub struct NeymanAllocation {
    pub quotas: Vec<usize>,
    pub fell_back_to_proportional: bool,
    /// Strata clamped at their population size by the capping loop (0-based).
    pub capped: Vec<usize>,
}

/// Capped Neyman quotas: continuous targets proportional to N_k * s_k,
/// iteratively clamped at N_k with the remaining budget redistributed by the
/// same rule, then rounded by largest remainder and floor-repaired. Strata
/// with s_k = 0 receive exactly the floor before the rule is applied to the
/// rest; if every s_k is zero the result falls back to proportional quotas
/// with a flag.
pub fn neyman_allocation(
    counts: &[usize],
    sds: &[f64],
    budget: usize,
    min_floor: usize,
) -> Result<NeymanAllocation> {
    if counts.len() != sds.len() {
        return Err(Error::Invalid(format!(
            "got {} strata but {} residual SDs",
            counts.len(),
            sds.len()
        )));
    }
    if sds.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Invalid(
            "residual SDs must be finite and nonnegative".to_string(),
        ));
    }
    let floors = effective_floors(counts, min_floor);
    check_budget(counts, budget, &floors)?;

    if sds.iter().all(|&s| s == 0.0) {
        return Ok(NeymanAllocation {
            quotas: proportional_allocation(counts, budget, min_floor)?,
            fell_back_to_proportional: true,
            capped: Vec::new(),
        });
    }

    let k = counts.len();
    let mut quota = vec![0usize; k];
    let mut remaining = budget;
    // Zero-SD strata take their floor up front.
    let mut active: Vec<usize> = Vec::new();
    for i in 0..k {
        if sds[i] == 0.0 {
            quota[i] = floors[i];
            remaining -= floors[i];
        } else {
            active.push(i);
        }
    }

    // Capping loop; terminates in at most K iterations because each pass
    // permanently removes at least one stratum.
    let mut capped: Vec<usize> = Vec::new();
    let mut targets = vec![0.0f64; k];
    loop {
        let denom: f64 = active.iter().map(|&i| counts[i] as f64 * sds[i]).sum();
        if denom == 0.0 || active.is_empty() {
            break;
        }
        for &i in &active {
            targets[i] = remaining as f64 * counts[i] as f64 * sds[i] / denom;
        }
        let over: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| targets[i] > counts[i] as f64)
            .collect();
        if over.is_empty() {
            break;
        }
        for &i in &over {
            quota[i] = counts[i];
            remaining -= counts[i];
            capped.push(i);
            active.retain(|&j| j != i);
        }
    }

    if !active.is_empty() {
        let act_targets: Vec<f64> = active.iter().map(|&i| targets[i]).collect();
        let act_caps: Vec<usize> = active.iter().map(|&i| counts[i]).collect();
        let rounded = largest_remainder(&act_targets, remaining, &act_caps);
        for (slot, &i) in active.iter().enumerate() {
            quota[i] = rounded[slot];
        }
    } else if remaining > 0 {
        // Every positive-SD stratum is fully coded; spill what is left onto
        // the zero-SD strata, largest first.
        let mut left = remaining - active.iter().map(|&i| quota[i]).sum::<usize>();
        while left > 0 {
            let i = (0..k)
                .filter(|&i| quota[i] < counts[i])
                .max_by_key(|&i| counts[i] - quota[i])
                .expect("budget within arm size");
            quota[i] += 1;
            left -= 1;
        }
    }

    let mut quotas = repair_floors(quota, &floors)?;
    exchange_polish(&mut quotas, &floors, counts, counts, sds);
    capped.sort_unstable();
    Ok(NeymanAllocation {
        quotas,
        fell_back_to_proportional: false,
        capped,
    })
}

/// The Theorem-1 conditional variance contribution of one arm:
/// sum_k N_k (N_k - n_k) / (N_z^2 n_k) * s_k^2.
pub fn stratified_arm_variance(counts: &[usize], sds: &[f64], quotas: &[usize]) -> f64 {
    let n_z: usize = counts.iter().sum();
    let n_z2 = (n_z as f64) * (n_z as f64);
    counts
        .iter()
        .zip(sds)
        .zip(quotas)
        .map(|((&nk, &s), &q)| {
            if q == 0 {
                return f64::INFINITY;
            }
            nk as f64 * (nk - q) as f64 / (n_z2 * q as f64) * s * s
        })
        .sum()
}

/// Exhaustive integer optimum over all feasible quota vectors. Test oracle
/// only; exponential in the number of strata.
pub fn integer_optimum_by_search(
    counts: &[usize],
    sds: &[f64],
    budget: usize,
    min_floor: usize,
) -> Result<(Vec<usize>, f64)> {
    let floors = effective_floors(counts, min_floor);
    check_budget(counts, budget, &floors)?;
    let k = counts.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut current = vec![0usize; k];

    fn recurse(
        i: usize,
        remaining: usize,
        counts: &[usize],
        floors: &[usize],
        sds: &[f64],
        current: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let k = counts.len();
        if i == k - 1 {
            if remaining >= floors[i] && remaining <= counts[i] {
                current[i] = remaining;
                let v = stratified_arm_variance(counts, sds, current);
                if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                    *best = Some((current.clone(), v));
                }
            }
            return;
        }
        let lo = floors[i];
        let hi = counts[i].min(remaining);
        for n in lo..=hi {
            current[i] = n;
            recurse(i + 1, remaining - n, counts, floors, sds, current, best);
        }
    }

    recurse(0, budget, counts, &floors, sds, &mut current, &mut best);
    best.ok_or(Error::BudgetTooSmall {
        budget,
        required: floors.iter().sum(),
    })
}
