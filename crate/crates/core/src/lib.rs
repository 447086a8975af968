//! Design-based estimation toolkit for populations where every unit has a
//! cheap surrogate outcome and only a budgeted subset receives
//! gold-standard coding.
//!
//! The crate covers the full workflow: ingest a population with surrogate
//! scores, build and rank candidate stratifications, allocate the coding
//! budget across strata (proportional or capped Neyman), draw the seeded
//! sample, and compute unbiased treatment-effect or mean estimates with
//! exact and plug-in variances. A simulation harness replicates the
//! factorial study design and a power module traces minimum detectable
//! effect size against the coding fraction.

pub mod allocation;
pub mod error;
pub mod estimators;
pub mod population;
pub mod power;
pub mod rng;
pub mod sampling;
pub mod simulation;
pub mod stratification;
pub mod variance;

pub use allocation::{
    neyman_allocation, proportional_allocation, Allocation, AllocationMethod, NeymanAllocation,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, Estimand,
    EstimateOptions, EstimateReport, EstimatorMethod,
};
pub use population::{
    load_population, residuals, validate, write_population_csv, ColumnMapping, FeatureValue,
    LoadedPopulation, Mode, PopulationTable, StrataAssignment, UnitRecord, ValidationReport,
};
pub use rng::Stream;
pub use sampling::{srs_sample, stratified_sample, write_draw_csv, SampleDraw, Scheme};
pub use variance::{
    bs_ws_decomposition, exact_conditional_variance, plugin_variance, Decomposition, VarianceMode,
    VarianceReport,
};
