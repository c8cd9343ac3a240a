//! Scoring a fitted surrogate against reference outcomes, and the
//! comparison experiments built on top of the sequential design.

pub mod curves;
pub mod export;
pub mod factorial;
pub mod metrics;
pub mod prototype;
pub mod specification;

pub use curves::{
    budget_to_reach, compare_noise_models, compare_strategies, compare_variants, error_at_budget, learning_curve,
    run_design, run_one_stage_baseline, state_learning_curve, Band, LearningCurvePoint, PairedCurves, VariantCurves,
};
pub use export::{coefficient_intervals, coefficient_table, CoefficientInterval};
pub use factorial::{factorial_slices, FactorialSlices};
pub use metrics::{error_summary, mse, relative_error, ErrorSummary, GridTable, TruthSource, TruthTable};
pub use prototype::{assign_prototypes, ols_slope, read_series_csv, zscore_summaries, Assignment, CountySummaryFeatures};
pub use specification::{compare_specifications, training_inputs, DeltaMu, InteractionSummary, SpecComparison};
