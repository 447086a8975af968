//! Subcommand implementations over files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};

use stratest_core::allocation::{
    neyman_allocation, proportional_allocation, Allocation, AllocationMethod,
};
use stratest_core::estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, EstimateOptions,
    EstimateReport,
};
use stratest_core::population::{
    load_population, validate, ColumnMapping, LoadedPopulation, Mode, PopulationTable,
    StrataAssignment,
};
use stratest_core::power::{mdes_curve, ArmPower, PowerDesign, PowerMethod, StratumPower};
use stratest_core::rng::Stream;
use stratest_core::sampling::{stratified_sample, write_draw_csv, SampleDraw};
use stratest_core::simulation::{repeated_sampling, run_grid, write_grid_csv, GridConfig};
use stratest_core::variance::{bs_ws_decomposition, Decomposition, VarianceMode};

use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Oracle,
    Subset,
    MaSrs,
    MaStratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimandArg {
    Ate,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceModeArg {
    FinitePopulation,
    Superpopulation,
}

impl From<VarianceModeArg> for VarianceMode {
    fn from(v: VarianceModeArg) -> Self {
        match v {
            VarianceModeArg::FinitePopulation => VarianceMode::FinitePopulation,
            VarianceModeArg::Superpopulation => VarianceMode::Superpopulation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AllocMethodArg {
    Proportional,
    Neyman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
    Csv,
}

/// Column mapping flags shared by the file-reading subcommands.
#[derive(Debug, Clone, Args)]
pub struct ColumnArgs {
    /// Column holding the unit id.
    #[arg(long, default_value = "id")]
    pub id_col: String,
    /// Column holding the 0/1 treatment arm; omit for single-group data.
    #[arg(long)]
    pub arm_col: Option<String>,
    /// Column holding the surrogate score.
    #[arg(long, default_value = "y_hat")]
    pub yhat_col: String,
    /// Column holding the gold outcome (defaults to "y" when present).
    #[arg(long)]
    pub y_col: Option<String>,
    /// Column holding the stratum label.
    #[arg(long)]
    pub stratum_col: Option<String>,
    /// Feature column; repeat the flag for several.
    #[arg(long = "feature-col")]
    pub feature_cols: Vec<String>,
    /// Literal gold-outcome cell content to treat as missing, in addition
    /// to the empty cell.
    #[arg(long)]
    pub y_missing: Option<String>,
}

fn load_input(path: &Path, cols: &ColumnArgs) -> anyhow::Result<LoadedPopulation> {
    let bytes = fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header = rdr.headers().context("reading CSV header")?.clone();
    let has = |name: &str| header.iter().any(|h| h == name);
    let y = match &cols.y_col {
        Some(c) => Some(c.clone()),
        None => has("y").then(|| "y".to_string()),
    };
    let mapping = ColumnMapping {
        id: cols.id_col.clone(),
        arm: cols.arm_col.clone(),
        y_hat: cols.yhat_col.clone(),
        y,
        stratum: cols.stratum_col.clone(),
        features: cols.feature_cols.clone(),
        missing_sentinel: cols.y_missing.clone(),
    };
    let loaded = load_population(bytes.as_slice(), &mapping)?;
    let report = validate(&loaded.pop, loaded.strata.as_ref());
    for w in &report.warnings {
        eprintln!("warning: {}", w.message);
    }
    if !report.is_ok() {
        for e in &report.errors {
            eprintln!("error: {}", e.message);
        }
        bail!("input {} failed validation", path.display());
    }
    Ok(loaded)
}

fn write_data_output(
    output: &Option<PathBuf>,
    bytes: &[u8],
    manifest: RunManifest,
) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            fs::write(path, bytes).with_context(|| format!("writing output {}", path.display()))?;
            manifest.with_output(path).write_alongside(path)?;
        }
        None => {
            std::io::stdout().write_all(bytes)?;
        }
    }
    Ok(())
}

fn per_arm_budgets(
    pop: &PopulationTable,
    budget: Option<usize>,
    fraction: Option<f64>,
) -> anyhow::Result<BTreeMap<u8, usize>> {
    match (budget, fraction) {
        (Some(n), None) => Ok(pop.arms().into_iter().map(|a| (a, n)).collect()),
        (None, Some(h)) => {
            if !(h > 0.0 && h <= 1.0) {
                bail!("--budget-fraction must lie in (0, 1], got {h}");
            }
            Ok(pop
                .arms()
                .into_iter()
                .map(|a| (a, (h * pop.arm_size(a) as f64).floor() as usize))
                .collect())
        }
        _ => bail!("pass exactly one of --budget or --budget-fraction"),
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// --------------------------------------------------------------------------
// estimate
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Population CSV; uncoded units leave the gold-outcome cell empty.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub cols: ColumnArgs,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Estimand check: ate for two-arm input, mean for single-group input.
    #[arg(long, value_enum)]
    pub estimand: Option<EstimandArg>,
    /// Confidence level for the interval.
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    #[arg(long, value_enum, default_value_t = VarianceModeArg::Superpopulation)]
    pub variance_mode: VarianceModeArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn realized_allocation(draw: &SampleDraw) -> Allocation {
    let cells = draw
        .realized_cells()
        .map(|(a, k, n)| ((a, k), n))
        .collect::<BTreeMap<_, _>>();
    Allocation::from_cells(cells, AllocationMethod::Manual)
}

pub fn run_estimate(args: &EstimateArgs) -> anyhow::Result<()> {
    if !(args.ci > 0.0 && args.ci < 1.0) {
        bail!("--ci must lie strictly between 0 and 1");
    }
    let loaded = load_input(&args.input, &args.cols)?;
    let pop = &loaded.pop;
    if let Some(estimand) = args.estimand {
        let ok = matches!(
            (estimand, pop.mode()),
            (EstimandArg::Ate, Mode::TwoArm) | (EstimandArg::Mean, Mode::SingleArm)
        );
        if !ok {
            bail!(
                "estimand {:?} does not match the {} input (map an arm column for ate)",
                estimand,
                match pop.mode() {
                    Mode::TwoArm => "two-arm",
                    Mode::SingleArm => "single-group",
                }
            );
        }
    }
    let opts = EstimateOptions {
        ci_level: args.ci,
        variance_mode: args.variance_mode.into(),
    };
    let report = match args.method {
        MethodArg::Oracle => estimate_oracle(pop, &opts)?,
        MethodArg::Subset => {
            let draw = SampleDraw::from_coded(pop, None);
            estimate_subset(pop, &draw, &opts)?
        }
        MethodArg::MaSrs => {
            let draw = SampleDraw::from_coded(pop, None);
            estimate_ma_srs(pop, &draw, &opts)?
        }
        MethodArg::MaStratified => {
            let strata = loaded
                .strata
                .as_ref()
                .ok_or_else(|| anyhow!("--method ma-stratified needs --stratum-col"))?;
            let draw = SampleDraw::from_coded(pop, Some(strata));
            let alloc = realized_allocation(&draw);
            estimate_ma_stratified(pop, strata, &draw, &alloc, &opts)?
        }
    };
    let body = render_estimate(&report, pop.len(), args.format)?;
    let manifest = RunManifest::new("estimate", None)
        .with_config(serde_json::json!({
            "method": report.method.label(),
            "estimand": report.estimand.label(),
            "ci_level": args.ci,
            "variance_mode": format!("{:?}", args.variance_mode),
        }))
        .with_input(&args.input);
    write_data_output(&args.output, body.as_bytes(), manifest)
}

fn render_estimate(
    report: &EstimateReport,
    n_units: usize,
    format: FormatArg,
) -> anyhow::Result<String> {
    match format {
        FormatArg::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        FormatArg::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record([
                "method", "estimand", "n_units", "n_coded", "estimate", "se", "ci_lo", "ci_hi",
                "ci_level",
            ])?;
            let (lo, hi) = report.ci.map(|(a, b)| (fmt(a), fmt(b))).unwrap_or_default();
            wtr.write_record([
                report.method.label().to_string(),
                report.estimand.label().to_string(),
                n_units.to_string(),
                report.n_coded.to_string(),
                fmt(report.estimate),
                report.se.map(fmt).unwrap_or_default(),
                lo,
                hi,
                fmt(report.ci_level),
            ])?;
            Ok(String::from_utf8(wtr.into_inner()?)?)
        }
        FormatArg::Table => {
            let mut out = String::new();
            out.push_str(&format!("method        {}\n", report.method.label()));
            out.push_str(&format!("estimand      {}\n", report.estimand.label()));
            out.push_str(&format!(
                "units         {n_units} ({} coded)\n",
                report.n_coded
            ));
            out.push_str(&format!("estimate      {:.6}\n", report.estimate));
            match report.se {
                Some(se) => {
                    let (lo, hi) = report.ci.unwrap();
                    out.push_str(&format!("se            {se:.6}\n"));
                    out.push_str(&format!(
                        "{:.0}% ci        [{lo:.6}, {hi:.6}]\n",
                        report.ci_level * 100.0
                    ));
                }
                None => out.push_str("se            (not estimable)\n"),
            }
            if !report.components.is_empty() {
                out.push_str("variance components\n");
                for (name, value) in &report.components {
                    out.push_str(&format!("  {name:<28} {value:.6e}\n"));
                }
            }
            if !report.per_stratum.is_empty() {
                out.push_str("per-stratum (arm, stratum, N, n, mean resid, var resid)\n");
                for s in &report.per_stratum {
                    out.push_str(&format!(
                        "  {} {} {} {} {} {}\n",
                        s.arm,
                        s.stratum,
                        s.n_pop,
                        s.n_coded,
                        s.mean_residual
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_default(),
                        s.var_residual
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_default(),
                    ));
                }
            }
            for w in &report.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
            Ok(out)
        }
    }
}

// --------------------------------------------------------------------------
// allocate
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// Population CSV, or a summary CSV with columns (arm, stratum, N[, sd])
    /// when --summary is set.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as a per-stratum summary table.
    #[arg(long)]
    pub summary: bool,
    #[command(flatten)]
    pub cols: ColumnArgs,
    /// Coding budget per arm.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Coding fraction per arm; the budget becomes floor(h * N_z).
    #[arg(long)]
    pub budget_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub method: AllocMethodArg,
    #[arg(long, default_value_t = 2)]
    pub min_floor: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Draw the stratified sample under the computed quotas and write an
    /// (id, sampled) audit CSV. Requires a full population input.
    #[arg(long)]
    pub draw_output: Option<PathBuf>,
    /// Master seed for --draw-output.
    #[arg(long)]
    pub seed: Option<u64>,
}

struct SummaryArm {
    labels: Vec<String>,
    counts: Vec<usize>,
    sds: Vec<Option<f64>>,
}

fn read_summary(path: &Path) -> anyhow::Result<BTreeMap<u8, SummaryArm>> {
    let bytes = fs::read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let arm_col = col("arm");
    let stratum_col =
        col("stratum").ok_or_else(|| anyhow!("summary CSV needs a 'stratum' column"))?;
    let n_col = col("N")
        .or_else(|| col("n"))
        .ok_or_else(|| anyhow!("summary CSV needs an 'N' column"))?;
    let sd_col = col("sd");
    let mut arms: BTreeMap<u8, SummaryArm> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let arm: u8 = match arm_col {
            Some(c) => record
                .get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .with_context(|| format!("summary row {}: bad arm", i + 1))?,
            None => 0,
        };
        let entry = arms.entry(arm).or_insert_with(|| SummaryArm {
            labels: Vec::new(),
            counts: Vec::new(),
            sds: Vec::new(),
        });
        entry
            .labels
            .push(record.get(stratum_col).unwrap_or("").trim().to_string());
        entry.counts.push(
            record
                .get(n_col)
                .unwrap_or("")
                .trim()
                .parse()
                .with_context(|| format!("summary row {}: bad N", i + 1))?,
        );
        entry.sds.push(match sd_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("").trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(
                        raw.parse()
                            .with_context(|| format!("summary row {}: bad sd", i + 1))?,
                    )
                }
            }
            None => None,
        });
    }
    if arms.is_empty() {
        bail!("summary CSV has no rows");
    }
    Ok(arms)
}

/// Residual SDs per (arm, stratum) from whatever units are coded (a pilot).
fn coded_residual_sds(pop: &PopulationTable, strata: &StrataAssignment) -> BTreeMap<u8, Vec<f64>> {
    let mut out = BTreeMap::new();
    for arm in pop.arms() {
        let mut sds = Vec::new();
        for k in 1..=strata.k(arm) {
            let resids: Vec<f64> = strata
                .cell_indices(pop, arm, k)
                .into_iter()
                .filter_map(|i| {
                    let u = &pop.units()[i];
                    u.y.map(|y| y - u.y_hat)
                })
                .collect();
            let var = if resids.len() >= 2 {
                let m = resids.iter().sum::<f64>() / resids.len() as f64;
                resids.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (resids.len() - 1) as f64
            } else {
                0.0
            };
            sds.push(var.sqrt());
        }
        out.insert(arm, sds);
    }
    out
}

fn quotas_for(
    method: AllocMethodArg,
    counts: &[usize],
    sds: Option<&[f64]>,
    budget: usize,
    min_floor: usize,
) -> anyhow::Result<Vec<usize>> {
    match method {
        AllocMethodArg::Proportional => Ok(proportional_allocation(counts, budget, min_floor)?),
        AllocMethodArg::Neyman => {
            let sds = sds.ok_or_else(|| {
                anyhow!("neyman allocation needs residual SDs (sd column or coded units)")
            })?;
            let out = neyman_allocation(counts, sds, budget, min_floor)?;
            if out.fell_back_to_proportional {
                eprintln!("warning: all residual SDs are zero; fell back to proportional quotas");
            }
            Ok(out.quotas)
        }
    }
}

pub fn run_allocate(args: &AllocateArgs) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["arm", "stratum", "N", "n"])?;

    if args.summary {
        if args.draw_output.is_some() {
            bail!("--draw-output needs a full population input, not --summary");
        }
        let arms = read_summary(&args.input)?;
        for (arm, summary) in &arms {
            let total: usize = summary.counts.iter().sum();
            let budget = match (args.budget, args.budget_fraction) {
                (Some(n), None) => n,
                (None, Some(h)) => (h * total as f64).floor() as usize,
                _ => bail!("pass exactly one of --budget or --budget-fraction"),
            };
            let sds: Option<Vec<f64>> = summary.sds.iter().copied().collect();
            let quotas = quotas_for(
                args.method,
                &summary.counts,
                sds.as_deref(),
                budget,
                args.min_floor,
            )?;
            for ((label, count), quota) in summary.labels.iter().zip(&summary.counts).zip(&quotas) {
                wtr.write_record([
                    arm.to_string(),
                    label.clone(),
                    count.to_string(),
                    quota.to_string(),
                ])?;
            }
        }
    } else {
        let loaded = load_input(&args.input, &args.cols)?;
        let pop = &loaded.pop;
        let strata = loaded
            .strata
            .as_ref()
            .ok_or_else(|| anyhow!("allocation over a population needs --stratum-col"))?;
        let budgets = per_arm_budgets(pop, args.budget, args.budget_fraction)?;
        let sds = match args.method {
            AllocMethodArg::Neyman => Some(coded_residual_sds(pop, strata)),
            AllocMethodArg::Proportional => None,
        };
        let mut quota_rows = Vec::new();
        for arm in pop.arms() {
            let counts = strata.arm_counts(arm);
            let quotas = quotas_for(
                args.method,
                &counts,
                sds.as_ref().map(|m| m[&arm].as_slice()),
                budgets[&arm],
                args.min_floor,
            )?;
            for (k, (&count, &quota)) in counts.iter().zip(&quotas).enumerate() {
                let label = strata.name(arm, k + 1).unwrap_or("?").to_string();
                wtr.write_record([arm.to_string(), label, count.to_string(), quota.to_string()])?;
            }
            quota_rows.push((arm, quotas));
        }
        if let Some(draw_path) = &args.draw_output {
            let seed = args
                .seed
                .ok_or_else(|| anyhow!("--draw-output needs --seed"))?;
            let alloc = Allocation::from_arm_quotas(
                &quota_rows,
                match args.method {
                    AllocMethodArg::Proportional => AllocationMethod::Proportional,
                    AllocMethodArg::Neyman => AllocationMethod::Neyman,
                },
            );
            let draw = stratified_sample(pop, strata, &alloc, &Stream::root(seed))?;
            let mut buf = Vec::new();
            write_draw_csv(pop, &draw, &mut buf)?;
            fs::write(draw_path, &buf)
                .with_context(|| format!("writing draw {}", draw_path.display()))?;
            RunManifest::new("allocate", args.seed)
                .with_input(&args.input)
                .with_output(draw_path)
                .write_alongside(draw_path)?;
        }
    }

    let body = wtr.into_inner()?;
    let manifest = RunManifest::new("allocate", args.seed)
        .with_config(serde_json::json!({
            "method": format!("{:?}", args.method),
            "budget": args.budget,
            "budget_fraction": args.budget_fraction,
            "min_floor": args.min_floor,
            "summary": args.summary,
        }))
        .with_input(&args.input);
    write_data_output(&args.output, &body, manifest)
}

// --------------------------------------------------------------------------
// stratify
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct StratifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub cols: ColumnArgs,
    /// Stratification variables ("y_hat" and/or feature column names).
    #[arg(long, value_delimiter = ',', default_value = "y_hat")]
    pub vars: Vec<String>,
    /// Also compute retrospective oracle metrics (needs full coding).
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub budget_fraction: Option<f64>,
    /// Allocation used for the oracle decomposition.
    #[arg(long, value_enum, default_value_t = AllocMethodArg::Proportional)]
    pub alloc_method: AllocMethodArg,
    #[arg(long, default_value_t = 2)]
    pub min_floor: usize,
    #[arg(long, default_value_t = 10.0)]
    pub max_balance_ratio: f64,
    #[arg(long, default_value_t = 100)]
    pub min_stratum_size: usize,
    /// Crossed cells smaller than this merge into the nearest cell.
    #[arg(long, default_value_t = 2)]
    pub merge_min_cell: usize,
    /// Candidate report CSV (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run_stratify(args: &StratifyArgs) -> anyhow::Result<()> {
    use stratest_core::stratification::{
        generate_candidates, oracle_metrics, precoding_metrics, rank_candidates, CandidateOptions,
        RankFilters,
    };
    let loaded = load_input(&args.input, &args.cols)?;
    let pop = &loaded.pop;
    let opts = CandidateOptions {
        merge_min_cell: args.merge_min_cell,
        ..CandidateOptions::default()
    };
    let candidates = generate_candidates(pop, &args.vars, &opts)?;
    let mut metrics = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        if args.oracle {
            let budgets = per_arm_budgets(pop, args.budget, args.budget_fraction)?;
            metrics.push(oracle_metrics(
                pop,
                cand,
                &budgets,
                match args.alloc_method {
                    AllocMethodArg::Proportional => AllocationMethod::Proportional,
                    AllocMethodArg::Neyman => AllocationMethod::Neyman,
                },
                args.min_floor,
            )?);
        } else {
            metrics.push(precoding_metrics(pop, cand));
        }
    }
    let filters = RankFilters {
        max_balance_ratio: args.max_balance_ratio,
        min_stratum_size: args.min_stratum_size,
    };
    let ranked = rank_candidates(metrics, &filters)?;
    for (name, reason) in &ranked.excluded {
        eprintln!("excluded {name}: {reason}");
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "name",
        "K",
        "var_of_stratum_means",
        "balance_ratio",
        "min_size",
    ];
    if args.oracle {
        header.extend(["bs", "ws", "delta"]);
    }
    wtr.write_record(&header)?;
    for m in &ranked.ranked {
        let mut row = vec![
            m.name.clone(),
            m.k_total.to_string(),
            fmt(m.var_of_stratum_means),
            fmt(m.balance_ratio),
            m.min_stratum_size.to_string(),
        ];
        if args.oracle {
            let o = m.oracle.as_ref().expect("oracle metrics requested");
            row.extend([fmt(o.bs), fmt(o.ws), fmt(o.delta)]);
        }
        wtr.write_record(&row)?;
    }
    let body = wtr.into_inner()?;
    let manifest = RunManifest::new("stratify", None)
        .with_config(serde_json::json!({
            "vars": args.vars,
            "oracle": args.oracle,
            "max_balance_ratio": args.max_balance_ratio,
            "min_stratum_size": args.min_stratum_size,
            "merge_min_cell": args.merge_min_cell,
        }))
        .with_input(&args.input);
    write_data_output(&args.report, &body, manifest)
}

// --------------------------------------------------------------------------
// simulate
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML grid configuration (factor lists, replications, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-sample a fixed ingested dataset this many times instead of
    /// running a generated grid.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Dataset for --repeats mode (fully coded, with --stratum-col).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub cols: ColumnArgs,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub budget_fraction: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub min_floor: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    match (&args.config, args.repeats) {
        (Some(config_path), None) => {
            let text = fs::read_to_string(config_path)
                .with_context(|| format!("reading config {}", config_path.display()))?;
            let mut grid: GridConfig = toml::from_str(&text).context("parsing grid config")?;
            if let Some(seed) = args.seed {
                grid.seed = seed;
            }
            let outcome = run_grid(&grid)?;
            for (desc, err) in &outcome.failures {
                eprintln!("scenario failed: {desc}: {err}");
            }
            let mut buf = Vec::new();
            write_grid_csv(&outcome.rows, &mut buf)?;
            let manifest = RunManifest::new("simulate", Some(grid.seed))
                .with_config(serde_json::to_value(&grid)?)
                .with_input(config_path);
            write_data_output(&args.output, &buf, manifest)
        }
        (None, Some(repeats)) => {
            let input = args
                .input
                .as_ref()
                .ok_or_else(|| anyhow!("--repeats needs --input"))?;
            let loaded = load_input(input, &args.cols)?;
            let strata = loaded
                .strata
                .as_ref()
                .ok_or_else(|| anyhow!("--repeats needs --stratum-col"))?;
            let budgets = per_arm_budgets(&loaded.pop, args.budget, args.budget_fraction)?;
            let seed = args.seed.unwrap_or(0);
            let rows =
                repeated_sampling(&loaded.pop, strata, &budgets, repeats, seed, args.min_floor)?;
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["repeat", "method", "estimate", "se"])?;
            for row in &rows {
                wtr.write_record([
                    row.repeat.to_string(),
                    row.method.to_string(),
                    fmt(row.estimate),
                    row.se.map(fmt).unwrap_or_default(),
                ])?;
            }
            let body = wtr.into_inner()?;
            let manifest = RunManifest::new("simulate", Some(seed))
                .with_config(serde_json::json!({
                    "repeats": repeats,
                    "budget": args.budget,
                    "budget_fraction": args.budget_fraction,
                    "min_floor": args.min_floor,
                }))
                .with_input(input);
            write_data_output(&args.output, &body, manifest)
        }
        _ => bail!("pass exactly one of --config (grid mode) or --repeats (re-sampling mode)"),
    }
}

// --------------------------------------------------------------------------
// power
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Design CSV with columns (arm, stratum, N, resid_mean, resid_var, y_var).
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    /// Coding-fraction grid as start:end:step, or a single value.
    #[arg(long, default_value = "0.05:0.95:0.05")]
    pub h_grid: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_h_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![one.parse()?]),
        [start, end, step] => {
            let (start, end, step): (f64, f64, f64) = (start.parse()?, end.parse()?, step.parse()?);
            if step <= 0.0 {
                bail!("h-grid step must be positive");
            }
            let mut out = Vec::new();
            let mut h = start;
            while h <= end + 1e-9 {
                out.push((h * 1e9).round() / 1e9);
                h += step;
            }
            Ok(out)
        }
        _ => bail!("h-grid must be a value or start:end:step"),
    }
}

fn read_power_design(
    path: &Path,
    alpha: f64,
    power: f64,
    h_grid: Vec<f64>,
) -> anyhow::Result<PowerDesign> {
    let bytes = fs::read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> anyhow::Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("design CSV needs a {name:?} column"))
    };
    let arm_col = header.iter().position(|h| h == "arm");
    let n_col = col("N")?;
    let mean_col = col("resid_mean")?;
    let var_col = col("resid_var")?;
    let yvar_col = col("y_var")?;
    struct RawArm {
        counts: Vec<usize>,
        means: Vec<f64>,
        vars: Vec<f64>,
        y_var: f64,
    }
    let mut arms: BTreeMap<u8, RawArm> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let get = |c: usize| record.get(c).unwrap_or("").trim().to_string();
        let arm: u8 = match arm_col {
            Some(c) => get(c)
                .parse()
                .with_context(|| format!("design row {}: bad arm", i + 1))?,
            None => 0,
        };
        let entry = arms.entry(arm).or_insert_with(|| RawArm {
            counts: Vec::new(),
            means: Vec::new(),
            vars: Vec::new(),
            y_var: 0.0,
        });
        entry.counts.push(get(n_col).parse()?);
        entry.means.push(get(mean_col).parse()?);
        entry.vars.push(get(var_col).parse()?);
        entry.y_var = get(yvar_col).parse()?;
    }
    if arms.is_empty() {
        bail!("design CSV has no rows");
    }
    let arms = arms
        .into_values()
        .map(|raw| {
            let total: usize = raw.counts.iter().sum();
            ArmPower {
                n: total,
                y_var: raw.y_var,
                strata: raw
                    .counts
                    .iter()
                    .zip(&raw.means)
                    .zip(&raw.vars)
                    .map(|((&c, &m), &v)| StratumPower {
                        weight: c as f64 / total as f64,
                        resid_mean: m,
                        resid_var: v,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(PowerDesign {
        arms,
        alpha,
        power,
        h_grid,
    })
}

pub fn run_power(args: &PowerArgs) -> anyhow::Result<()> {
    let h_grid = parse_h_grid(&args.h_grid)?;
    let design = read_power_design(&args.design, args.alpha, args.power, h_grid)?;
    let srs = mdes_curve(&design, PowerMethod::Srs)?;
    let strat = mdes_curve(&design, PowerMethod::StratifiedProportional)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["h", "mdes_srs", "mdes_stratified"])?;
    for ((h, a), (_, b)) in srs.iter().zip(&strat) {
        wtr.write_record([fmt(*h), fmt(*a), fmt(*b)])?;
    }
    let body = wtr.into_inner()?;
    let manifest = RunManifest::new("power", None)
        .with_config(serde_json::json!({
            "alpha": args.alpha,
            "power": args.power,
            "h_grid": args.h_grid,
        }))
        .with_input(&args.design);
    write_data_output(&args.output, &body, manifest)
}

// --------------------------------------------------------------------------
// decompose
// --------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Fully coded population CSV with a stratum column.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub cols: ColumnArgs,
    /// Allocation CSV with columns (arm, stratum, N, n), e.g. from
    /// `allocate`. Alternatively pass --budget/--budget-fraction.
    #[arg(long)]
    pub alloc: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub budget_fraction: Option<f64>,
    #[arg(long, value_enum, default_value_t = AllocMethodArg::Proportional)]
    pub method: AllocMethodArg,
    #[arg(long, default_value_t = 2)]
    pub min_floor: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn read_allocation_csv(
    path: &Path,
    pop: &PopulationTable,
    strata: &StrataAssignment,
) -> anyhow::Result<Allocation> {
    let bytes = fs::read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> anyhow::Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("allocation CSV needs a {name:?} column"))
    };
    let arm_col = header.iter().position(|h| h == "arm");
    let stratum_col = col("stratum")?;
    let n_col = col("n")?;
    // Reverse lookup from the original stratum label to the dense index.
    let mut by_label: BTreeMap<(u8, String), usize> = BTreeMap::new();
    for arm in pop.arms() {
        for k in 1..=strata.k(arm) {
            if let Some(name) = strata.name(arm, k) {
                by_label.insert((arm, name.to_string()), k);
            }
        }
    }
    let mut cells = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let arm: u8 = match arm_col {
            Some(c) => record
                .get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .with_context(|| format!("allocation row {}: bad arm", i + 1))?,
            None => 0,
        };
        let label = record.get(stratum_col).unwrap_or("").trim().to_string();
        let k = by_label
            .get(&(arm, label.clone()))
            .copied()
            .ok_or_else(|| anyhow!("allocation row {}: unknown stratum {label:?}", i + 1))?;
        let quota: usize = record
            .get(n_col)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("allocation row {}: bad n", i + 1))?;
        cells.insert((arm, k), quota);
    }
    Ok(Allocation::from_cells(cells, AllocationMethod::Manual))
}

pub fn run_decompose(args: &DecomposeArgs) -> anyhow::Result<()> {
    let loaded = load_input(&args.input, &args.cols)?;
    let pop = &loaded.pop;
    let strata = loaded
        .strata
        .as_ref()
        .ok_or_else(|| anyhow!("decompose needs --stratum-col"))?;
    let alloc = match &args.alloc {
        Some(path) => read_allocation_csv(path, pop, strata)?,
        None => {
            let budgets = per_arm_budgets(pop, args.budget, args.budget_fraction)?;
            let sds = coded_residual_sds(pop, strata);
            let mut quotas = Vec::new();
            for arm in pop.arms() {
                let counts = strata.arm_counts(arm);
                quotas.push((
                    arm,
                    quotas_for(
                        args.method,
                        &counts,
                        Some(sds[&arm].as_slice()),
                        budgets[&arm],
                        args.min_floor,
                    )?,
                ));
            }
            Allocation::from_arm_quotas(
                &quotas,
                match args.method {
                    AllocMethodArg::Proportional => AllocationMethod::Proportional,
                    AllocMethodArg::Neyman => AllocationMethod::Neyman,
                },
            )
        }
    };
    let d = bs_ws_decomposition(pop, strata, &alloc)?;
    let body = render_decomposition(&d, args.format)?;
    let manifest = RunManifest::new("decompose", None)
        .with_config(serde_json::json!({
            "method": format!("{:?}", args.method),
            "budget": args.budget,
            "budget_fraction": args.budget_fraction,
            "min_floor": args.min_floor,
        }))
        .with_input(&args.input);
    write_data_output(&args.output, body.as_bytes(), manifest)
}

fn render_decomposition(d: &Decomposition, format: FormatArg) -> anyhow::Result<String> {
    match format {
        FormatArg::Json => Ok(serde_json::to_string_pretty(d)? + "\n"),
        FormatArg::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["scope", "bs", "ws", "delta"])?;
            for (arm, part) in &d.per_arm {
                wtr.write_record([
                    format!("arm{arm}"),
                    fmt(part.bs),
                    fmt(part.ws),
                    fmt(part.bs - part.ws),
                ])?;
            }
            wtr.write_record(["total".to_string(), fmt(d.bs), fmt(d.ws), fmt(d.delta)])?;
            Ok(String::from_utf8(wtr.into_inner()?)?)
        }
        FormatArg::Table => {
            let mut out = String::new();
            for (arm, part) in &d.per_arm {
                out.push_str(&format!(
                    "arm {arm}: bs = {:.6e}, ws = {:.6e}, delta = {:.6e}\n",
                    part.bs,
                    part.ws,
                    part.bs - part.ws
                ));
            }
            out.push_str(&format!(
                "total: bs = {:.6e}, ws = {:.6e}, delta = {:.6e}\n",
                d.bs, d.ws, d.delta
            ));
            out.push_str("positive delta: stratified sampling beats SRS at this allocation\n");
            Ok(out)
        }
    }
}
