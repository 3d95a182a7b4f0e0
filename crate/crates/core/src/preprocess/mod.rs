//! Cleaning, day-level merging, statistics, normalization, imputation and label derivation.

pub mod clean;
pub mod pipeline;
pub mod series;
pub mod stats;
pub mod store;
pub mod transform;

pub use clean::{
    clean_domain_rules, clean_three_sigma, drop_constant_features, drop_sparse_features,
    merge_daily, RangeRule,
};
pub use pipeline::{replay, run_pipeline, PipelineConfig, Profile};
pub use series::{derive_labels, Cohort, PatientSeries, ProvenanceStep};
pub use stats::{compute_feature_stats, FeatureStats};
pub use store::{read_cohort, write_cohort};
pub use transform::{impute_forward_fill, normalize_zscore, FitScope, FittedTransform, ZScore};
