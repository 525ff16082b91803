//! Synthetic surfaces and cohorts with known generative components, and the
//! end-to-end scenario that scores the pipeline against them.

mod config;
mod scenario;
mod simulate;

pub use config::SimConfig;
pub use scenario::{
    decomposition_config, evaluate_scenario, prepare_scenario, read_result, run_scenario,
    sweep_sets, write_reports, write_tables, CoefficientEstimate, DayScore, Flag, ModelSummary,
    PreparedScenario, Rates, ReplicationFlags, ReplicationResult, Runtime, ScenarioResult,
    SweepPoint, RULE_ADDITIVITY, RULE_CONFOUNDING, RULE_DENOISE, RULE_LOW_CORRELATION,
    RULE_SPLINE, RULE_TRIPLE_RECOVERY,
};
pub use simulate::{
    domain_map, grid_points, simulate_cohort, simulate_surfaces, smooth_mean, DayTruth,
    SimulatedCohort, SimulatedSurfaces, TrueExposure, CONFOUNDERS,
};

use thiserror::Error;

use crate::decomposer::DecomposeError;
use crate::exposure::ExposureError;
use crate::health_model::ModelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("decomposition: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("exposure: {0}")]
    Exposure(#[from] ExposureError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(String),
}

impl SimConfig {
    /// True when both configs produce the same surfaces and decomposition.
    pub fn same_surfaces(&self, other: &SimConfig) -> bool {
        let mut o = other.clone();
        o.cohort_size = self.cohort_size;
        o.tracts = self.tracts;
        o.tract_sd = self.tract_sd;
        o.outcome_sd = self.outcome_sd;
        o.baseline = self.baseline;
        o.beta_mean = self.beta_mean;
        o.beta_low = self.beta_low;
        o.beta_high = self.beta_high;
        o.smoking_rate = self.smoking_rate;
        o.smoking_effect = self.smoking_effect;
        o.age_effect = self.age_effect;
        o.date_confounding = self.date_confounding;
        o.birth_seasonality = self.birth_seasonality;
        o.gestation_mean = self.gestation_mean;
        o.gestation_sd = self.gestation_sd;
        o.window = self.window;
        o.replications = self.replications;
        o.spline_df = self.spline_df;
        o.alpha = self.alpha;
        o.sweep = self.sweep;
        o.workers = self.workers;
        o == *self
    }
}
