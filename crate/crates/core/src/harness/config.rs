use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::decomposer::{PenaltyRule, MAX_LEVELS};
use crate::exposure::WindowKind;

/// Synthetic study configuration.
///
/// Read from a plain `key = value` file; `#` starts a comment and any key
/// left out keeps its default. Lengths are in grid units of `extent`,
/// exposures in µg/m³, outcomes and effects in grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Grid points along x1 and x2.
    pub grid_n1: usize,
    pub grid_n2: usize,
    /// Side length of the (periodic) square domain.
    pub extent: f64,
    /// Uniform jitter of each grid point, as a fraction of the spacing.
    pub jitter: f64,

    pub start_date: NaiveDate,
    pub days: usize,

    pub mean_level: f64,
    pub seasonal_amplitude: f64,
    /// Day of year at which the seasonal cycle crosses zero going up.
    pub seasonal_phase: f64,
    /// Linear trend of the daily mean, per day.
    pub trend_slope: f64,
    /// Stationary sd of the AR(1) day-to-day deviation of the daily mean.
    pub weather_sd: f64,
    pub weather_ar: f64,

    pub low_bumps: usize,
    pub low_length_scale: f64,
    pub low_amplitude: f64,
    /// Sd of the day-to-day multiplicative change of the low field.
    pub low_drift: f64,

    pub high_spikes: usize,
    pub high_lines: usize,
    pub high_width: f64,
    pub high_amplitude: f64,
    pub high_drift: f64,

    /// Independent noise per point and day.
    pub noise_sd: f64,
    /// Sd of a static error field built from fine wavelet levels.
    pub level_noise_sd: f64,
    pub level_noise_levels: Vec<u32>,

    pub cohort_size: usize,
    pub tracts: usize,
    pub tract_sd: f64,
    pub outcome_sd: f64,
    pub baseline: f64,
    pub beta_mean: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    pub smoking_rate: f64,
    pub smoking_effect: f64,
    /// Effect per year of maternal age around 28.
    pub age_effect: f64,
    /// Outcome shift per unit of the smooth (seasonal + trend) part of the
    /// window-mean exposure; creates temporal confounding.
    pub date_confounding: f64,
    /// Relative amplitude of the yearly cycle in birth dates.
    pub birth_seasonality: f64,
    pub gestation_mean: f64,
    pub gestation_sd: f64,
    pub window: WindowKind,

    pub levels: u32,
    pub low_cutoff: u32,
    pub order: usize,
    pub penalty: PenaltyRule,
    pub folds: usize,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub workers: usize,

    pub replications: usize,
    /// Date spline df for the adjusted model; `None` picks 4 per year, at least 3.
    pub spline_df: Option<usize>,
    pub alpha: f64,
    /// Run the level-removal sweep.
    pub sweep: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_n1: 64,
            grid_n2: 64,
            extent: 64.0,
            jitter: 0.0,
            start_date: NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date"),
            days: 120,
            mean_level: 12.0,
            seasonal_amplitude: 3.0,
            seasonal_phase: 0.0,
            trend_slope: 0.01,
            weather_sd: 2.0,
            weather_ar: 0.7,
            low_bumps: 6,
            low_length_scale: 10.0,
            low_amplitude: 4.0,
            low_drift: 0.1,
            high_spikes: 12,
            high_lines: 3,
            high_width: 1.0,
            high_amplitude: 5.0,
            high_drift: 0.1,
            noise_sd: 0.3,
            level_noise_sd: 0.0,
            level_noise_levels: vec![6, 7],
            cohort_size: 5000,
            tracts: 200,
            tract_sd: 40.0,
            outcome_sd: 400.0,
            baseline: 3300.0,
            beta_mean: 0.0,
            beta_low: -15.0,
            beta_high: -9.0,
            smoking_rate: 0.15,
            smoking_effect: -150.0,
            age_effect: 3.0,
            date_confounding: 0.0,
            birth_seasonality: 0.3,
            gestation_mean: 275.0,
            gestation_sd: 12.0,
            window: WindowKind::Last30Days,
            levels: 5,
            low_cutoff: 3,
            order: 5,
            penalty: PenaltyRule::CrossValidated,
            folds: 5,
            n_lambdas: 30,
            lambda_min_ratio: 1e-3,
            workers: 1,
            replications: 50,
            spline_df: None,
            alpha: 0.05,
            sweep: false,
            seed: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value for {key}: '{value}'")))
}

impl SimConfig {
    pub fn from_kv_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", no + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_kv_str(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        match key {
            "grid_n1" => self.grid_n1 = parse(key, v)?,
            "grid_n2" => self.grid_n2 = parse(key, v)?,
            "extent" => self.extent = parse(key, v)?,
            "jitter" => self.jitter = parse(key, v)?,
            "start_date" => self.start_date = parse(key, v)?,
            "days" => self.days = parse(key, v)?,
            "mean_level" => self.mean_level = parse(key, v)?,
            "seasonal_amplitude" => self.seasonal_amplitude = parse(key, v)?,
            "seasonal_phase" => self.seasonal_phase = parse(key, v)?,
            "trend_slope" => self.trend_slope = parse(key, v)?,
            "weather_sd" => self.weather_sd = parse(key, v)?,
            "weather_ar" => self.weather_ar = parse(key, v)?,
            "low_bumps" => self.low_bumps = parse(key, v)?,
            "low_length_scale" => self.low_length_scale = parse(key, v)?,
            "low_amplitude" => self.low_amplitude = parse(key, v)?,
            "low_drift" => self.low_drift = parse(key, v)?,
            "high_spikes" => self.high_spikes = parse(key, v)?,
            "high_lines" => self.high_lines = parse(key, v)?,
            "high_width" => self.high_width = parse(key, v)?,
            "high_amplitude" => self.high_amplitude = parse(key, v)?,
            "high_drift" => self.high_drift = parse(key, v)?,
            "noise_sd" => self.noise_sd = parse(key, v)?,
            "level_noise_sd" => self.level_noise_sd = parse(key, v)?,
            "level_noise_levels" => {
                self.level_noise_levels = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "cohort_size" => self.cohort_size = parse(key, v)?,
            "tracts" => self.tracts = parse(key, v)?,
            "tract_sd" => self.tract_sd = parse(key, v)?,
            "outcome_sd" => self.outcome_sd = parse(key, v)?,
            "baseline" => self.baseline = parse(key, v)?,
            "beta_mean" => self.beta_mean = parse(key, v)?,
            "beta_low" => self.beta_low = parse(key, v)?,
            "beta_high" => self.beta_high = parse(key, v)?,
            "smoking_rate" => self.smoking_rate = parse(key, v)?,
            "smoking_effect" => self.smoking_effect = parse(key, v)?,
            "age_effect" => self.age_effect = parse(key, v)?,
            "date_confounding" => self.date_confounding = parse(key, v)?,
            "birth_seasonality" => self.birth_seasonality = parse(key, v)?,
            "gestation_mean" => self.gestation_mean = parse(key, v)?,
            "gestation_sd" => self.gestation_sd = parse(key, v)?,
            "window" => self.window = v.parse().map_err(HarnessError::Config)?,
            "levels" => self.levels = parse(key, v)?,
            "low_cutoff" => self.low_cutoff = parse(key, v)?,
            "order" => self.order = parse(key, v)?,
            "penalty" => self.penalty = v.parse().map_err(HarnessError::Config)?,
            "folds" => self.folds = parse(key, v)?,
            "n_lambdas" => self.n_lambdas = parse(key, v)?,
            "lambda_min_ratio" => self.lambda_min_ratio = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "replications" => self.replications = parse(key, v)?,
            "spline_df" => {
                self.spline_df = match v {
                    "auto" | "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "alpha" => self.alpha = parse(key, v)?,
            "sweep" => self.sweep = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn to_kv_string(&self) -> String {
        let levels: Vec<String> = self.level_noise_levels.iter().map(u32::to_string).collect();
        let entries: Vec<(&str, String)> = vec![
            ("grid_n1", self.grid_n1.to_string()),
            ("grid_n2", self.grid_n2.to_string()),
            ("extent", self.extent.to_string()),
            ("jitter", self.jitter.to_string()),
            ("start_date", self.start_date.to_string()),
            ("days", self.days.to_string()),
            ("mean_level", self.mean_level.to_string()),
            ("seasonal_amplitude", self.seasonal_amplitude.to_string()),
            ("seasonal_phase", self.seasonal_phase.to_string()),
            ("trend_slope", self.trend_slope.to_string()),
            ("weather_sd", self.weather_sd.to_string()),
            ("weather_ar", self.weather_ar.to_string()),
            ("low_bumps", self.low_bumps.to_string()),
            ("low_length_scale", self.low_length_scale.to_string()),
            ("low_amplitude", self.low_amplitude.to_string()),
            ("low_drift", self.low_drift.to_string()),
            ("high_spikes", self.high_spikes.to_string()),
            ("high_lines", self.high_lines.to_string()),
            ("high_width", self.high_width.to_string()),
            ("high_amplitude", self.high_amplitude.to_string()),
            ("high_drift", self.high_drift.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
            ("level_noise_sd", self.level_noise_sd.to_string()),
            ("level_noise_levels", levels.join(",")),
            ("cohort_size", self.cohort_size.to_string()),
            ("tracts", self.tracts.to_string()),
            ("tract_sd", self.tract_sd.to_string()),
            ("outcome_sd", self.outcome_sd.to_string()),
            ("baseline", self.baseline.to_string()),
            ("beta_mean", self.beta_mean.to_string()),
            ("beta_low", self.beta_low.to_string()),
            ("beta_high", self.beta_high.to_string()),
            ("smoking_rate", self.smoking_rate.to_string()),
            ("smoking_effect", self.smoking_effect.to_string()),
            ("age_effect", self.age_effect.to_string()),
            ("date_confounding", self.date_confounding.to_string()),
            ("birth_seasonality", self.birth_seasonality.to_string()),
            ("gestation_mean", self.gestation_mean.to_string()),
            ("gestation_sd", self.gestation_sd.to_string()),
            ("window", self.window.to_string()),
            ("levels", self.levels.to_string()),
            ("low_cutoff", self.low_cutoff.to_string()),
            ("order", self.order.to_string()),
            ("penalty", self.penalty.to_string()),
            ("folds", self.folds.to_string()),
            ("n_lambdas", self.n_lambdas.to_string()),
            ("lambda_min_ratio", self.lambda_min_ratio.to_string()),
            ("workers", self.workers.to_string()),
            ("replications", self.replications.to_string()),
            (
                "spline_df",
                self.spline_df.map_or("auto".into(), |d| d.to_string()),
            ),
            ("alpha", self.alpha.to_string()),
            ("sweep", self.sweep.to_string()),
            ("seed", self.seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.grid_n1 < 4 || self.grid_n2 < 4 {
            return bad("grid needs at least 4 points per direction");
        }
        if !(self.extent > 0.0) || !(0.0..1.0).contains(&self.jitter) {
            return bad("extent must be positive and jitter in [0, 1)");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        let scales = [
            self.low_length_scale,
            self.high_width,
            self.gestation_mean,
        ];
        if scales.iter().any(|s| !(*s > 0.0)) {
            return bad("length scales, widths and gestation mean must be positive");
        }
        let sds = [
            self.seasonal_amplitude,
            self.weather_sd,
            self.low_amplitude,
            self.low_drift,
            self.high_amplitude,
            self.high_drift,
            self.noise_sd,
            self.level_noise_sd,
            self.tract_sd,
            self.outcome_sd,
            self.gestation_sd,
            self.birth_seasonality,
        ];
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("amplitudes and standard deviations must be finite and nonnegative");
        }
        if !(self.weather_ar > -1.0 && self.weather_ar < 1.0) {
            return bad("weather_ar must lie in (-1, 1)");
        }
        if self.birth_seasonality >= 1.0 {
            return bad("birth_seasonality must be below 1");
        }
        if !(0.0..=1.0).contains(&self.smoking_rate) {
            return bad("smoking_rate must lie in [0, 1]");
        }
        if self.cohort_size < 10 || self.tracts < 2 || self.tracts > self.cohort_size {
            return bad("need cohort_size >= 10 and 2 <= tracts <= cohort_size");
        }
        if self.levels == 0 || self.levels > MAX_LEVELS || self.low_cutoff > self.levels {
            return bad("levels must lie in 1..=8 with low_cutoff <= levels");
        }
        if self.level_noise_sd > 0.0
            && (self.level_noise_levels.is_empty()
                || self.level_noise_levels.iter().any(|l| *l == 0 || *l > MAX_LEVELS))
        {
            return bad("level_noise_levels must name levels in 1..=8");
        }
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if matches!(self.spline_df, Some(d) if d < 3) {
            return bad("spline_df must be at least 3");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}
