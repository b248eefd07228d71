//! Experiment configuration, conditional-probability drivers and result
//! persistence.

mod config;
mod drivers;
mod experiment;
mod presets;

pub use config::{ExperimentConfig, McConfig, ModelConfig, OutputsConfig, Study, WindowsConfig};
pub use drivers::{
    conditional_bm_estimates, conditional_fbm_estimates, estimate_conditional_bm, estimate_conditional_fbm,
    estimate_piterbarg, piterbarg_window, run_study, supremum_ratio, tail_for, FbmConditionalOutcome, ResultRecord,
    StudyOutput, MAX_THRESHOLDS, MIN_ACCEPTED,
};
pub use experiment::{git_describe, run_config, run_experiment, write_csv, Artifacts, CSV_HEADER};
pub use presets::{preset, PRESET_NAMES};
