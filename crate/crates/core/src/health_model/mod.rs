//! Random-intercept linear mixed models for birth weight on exposure
//! components, with multiplicity-adjusted intervals.

mod inference;
mod lmm;
mod spline;

pub use inference::{bonferroni_ci, contrast_test, normal_quantile, CiRow, CiTable, ContrastResult};
pub use lmm::{fit_lmm, group_indices, FixedDesign, LmmFit, RemlProfile, GAMMA_MAX};
pub use spline::{default_spline_df, spline_basis};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposure::{Cohort, ExposureRecord, WindowKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fixed design is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("variance components not identified: {0}")]
    Unidentified(String),
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

/// Which exposure regressors enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExposureMode {
    /// One regressor: mean + low + high.
    Total,
    /// Mean, low and high as separate regressors.
    Triple,
    /// Mean plus a level-filtered spatial regressor.
    MeanPlusFiltered,
}

impl ExposureMode {
    pub fn label(&self) -> &'static str {
        match self {
            ExposureMode::Total => "total",
            ExposureMode::Triple => "triple",
            ExposureMode::MeanPlusFiltered => "filtered",
        }
    }

    /// Names of the exposure coefficients, which form the adjustment family.
    pub fn exposure_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ExposureMode::Total => &[TOTAL],
            ExposureMode::Triple => &[MEAN, LOW, HIGH],
            ExposureMode::MeanPlusFiltered => &[MEAN, SPATIAL],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for ExposureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExposureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "total" => Ok(ExposureMode::Total),
            "triple" => Ok(ExposureMode::Triple),
            "filtered" => Ok(ExposureMode::MeanPlusFiltered),
            _ => Err(format!("unknown mode '{s}' (expected total, triple or filtered)")),
        }
    }
}

pub const INTERCEPT: &str = "intercept";
pub const TOTAL: &str = "pm25";
pub const MEAN: &str = "mean";
pub const LOW: &str = "low";
pub const HIGH: &str = "high";
pub const SPATIAL: &str = "spatial";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: ExposureMode,
    /// Confounder columns to include; `None` uses every cohort confounder.
    pub confounders: Option<Vec<String>>,
    /// Degrees of freedom of a natural spline in birth date.
    pub spline_df: Option<usize>,
    pub window: WindowKind,
    pub alpha: f64,
}

impl ModelSpec {
    pub fn new(mode: ExposureMode, window: WindowKind) -> Self {
        Self {
            mode,
            confounders: None,
            spline_df: None,
            window,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub spec: ModelSpec,
    pub fit: LmmFit,
    pub ci: CiTable,
    /// Low minus high, for the triple mode.
    pub contrast: Option<ContrastResult>,
}

/// Assembles intercept, exposure columns, confounders and the optional
/// date spline, then fits and adjusts.
pub fn run_model(
    spec: &ModelSpec,
    cohort: &Cohort,
    exposures: &[ExposureRecord],
) -> Result<ModelResult, ModelError> {
    let design = build_fixed_design(spec, cohort, exposures)?;
    let y: Vec<f64> = cohort.subjects.iter().map(|s| s.outcome).collect();
    let labels: Vec<&str> = cohort.subjects.iter().map(|s| s.tract_id.as_str()).collect();
    let (groups, _) = group_indices(&labels);
    let fit = fit_lmm(&y, &design, &groups)?;
    let ci = bonferroni_ci(&fit, &spec.mode.exposure_names(), spec.alpha)?;
    let contrast = match spec.mode {
        ExposureMode::Triple => Some(contrast_test(&fit, LOW, HIGH)?),
        _ => None,
    };
    Ok(ModelResult {
        spec: spec.clone(),
        fit,
        ci,
        contrast,
    })
}

pub fn build_fixed_design(
    spec: &ModelSpec,
    cohort: &Cohort,
    exposures: &[ExposureRecord],
) -> Result<FixedDesign, ModelError> {
    cohort
        .validate()
        .map_err(|e| ModelError::InvalidInput(e.to_string()))?;
    let by_id: HashMap<&str, &ExposureRecord> = exposures
        .iter()
        .filter(|r| r.window == spec.window)
        .map(|r| (r.id.as_str(), r))
        .collect();
    let n = cohort.subjects.len();
    let mut records = Vec::with_capacity(n);
    for s in &cohort.subjects {
        let r = by_id.get(s.id.as_str()).ok_or_else(|| {
            ModelError::InvalidInput(format!("no {} exposure for subject {}", spec.window, s.id))
        })?;
        records.push(*r);
    }
    let mut cols: Vec<(String, Vec<f64>)> = vec![(INTERCEPT.into(), vec![1.0; n])];
    let get = |f: &dyn Fn(&ExposureRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<f64>>();
    match spec.mode {
        ExposureMode::Total => cols.push((TOTAL.into(), get(&|r| r.triple.total()))),
        ExposureMode::Triple => {
            cols.push((MEAN.into(), get(&|r| r.triple.mean_avg)));
            cols.push((LOW.into(), get(&|r| r.triple.low_avg)));
            cols.push((HIGH.into(), get(&|r| r.triple.high_avg)));
        }
        ExposureMode::MeanPlusFiltered => {
            cols.push((MEAN.into(), get(&|r| r.triple.mean_avg)));
            let mut spatial = Vec::with_capacity(n);
            for r in &records {
                spatial.push(r.triple.filtered_avg.ok_or_else(|| {
                    ModelError::InvalidInput(format!(
                        "subject {} has no filtered spatial exposure",
                        r.id
                    ))
                })?);
            }
            cols.push((SPATIAL.into(), spatial));
        }
    }
    let wanted: Vec<usize> = match &spec.confounders {
        None => (0..cohort.confounder_names.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                cohort
                    .confounder_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| ModelError::InvalidInput(format!("unknown confounder '{n}'")))
            })
            .collect::<Result<_, _>>()?,
    };
    for j in wanted {
        cols.push((
            cohort.confounder_names[j].clone(),
            cohort.subjects.iter().map(|s| s.confounders[j]).collect(),
        ));
    }
    if let Some(df) = spec.spline_df {
        let days: Vec<f64> = cohort
            .subjects
            .iter()
            .map(|s| s.birth_date.num_days_from_ce() as f64)
            .collect();
        let basis = spline_basis(&days, df)?;
        for k in 0..df {
            cols.push((format!("date_ns{}", k + 1), basis.column(k).iter().copied().collect()));
        }
    }
    FixedDesign::from_columns(cols)
}
