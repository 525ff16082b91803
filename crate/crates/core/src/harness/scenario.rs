use std::path::Path;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate::{domain_map, simulate_cohort, simulate_surfaces, SimulatedSurfaces};
use super::{HarnessError, SimConfig};
use crate::decomposer::{
    filter_levels, DecomposedSurface, Decomposer, DecompositionConfig, DomainRule, GridCache,
    LevelFilterSpec,
};
use crate::exposure::{compute_exposures, AggregateOptions, ExposureArchive, ExposureRecord};
use crate::health_model::{
    default_spline_df, run_model, ContrastResult, ExposureMode, ModelResult, ModelSpec, HIGH, LOW,
    MEAN, SPATIAL, TOTAL,
};

/// Agreement of one decomposed day with its generative components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayScore {
    pub date: NaiveDate,
    pub low_correlation: f64,
    pub high_correlation: f64,
    /// Recovered mean minus the grid average of the noiseless surface.
    pub mean_error: f64,
    pub additivity_error: f64,
    pub lambda: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CoefficientEstimate {
    pub fn within(&self, k: f64) -> bool {
        (self.estimate - self.truth).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub coefficients: Vec<CoefficientEstimate>,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    pub contrast: Option<ContrastResult>,
}

impl ModelSummary {
    pub fn get(&self, name: &str) -> Option<&CoefficientEstimate> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dropped: Vec<u32>,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFlags {
    pub triple_low_within_2se: bool,
    pub triple_high_within_2se: bool,
    pub triple_mean_within_2se: bool,
    /// TOTAL estimate strictly between zero and the variance-weighted spatial truth.
    pub total_attenuated: bool,
    /// The date spline moves the mean-component estimate closer to its truth.
    pub spline_toward_truth: bool,
    pub contrast_significant: bool,
    /// Dropping the noise levels increases the spatial estimate's magnitude.
    pub denoise_increases: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replicate: u64,
    /// Variance-weighted average of `beta_low` and `beta_high` over the
    /// subjects' true window exposures.
    pub weighted_spatial_truth: f64,
    pub total: ModelSummary,
    pub triple: ModelSummary,
    pub triple_spline: ModelSummary,
    pub spline_df: usize,
    pub sweep: Vec<SweepPoint>,
    pub flags: ReplicationFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub triple_low: f64,
    pub triple_high: f64,
    pub triple_mean: f64,
    pub triple_low_and_high: f64,
    pub total_attenuated: f64,
    /// TOTAL attenuated while TRIPLE low and high stay within 2 SE.
    pub confounding_pattern: f64,
    pub spline_toward_truth: f64,
    pub contrast_significant: f64,
    pub denoise: Option<f64>,
}

/// A pass/fail check tied to a named rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub rule: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub simulate_seconds: f64,
    pub decompose_seconds: f64,
    pub models_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: SimConfig,
    pub days: Vec<DayScore>,
    pub mean_low_correlation: f64,
    pub mean_high_correlation: f64,
    pub max_additivity_error: f64,
    pub replications: Vec<ReplicationResult>,
    pub failures: Vec<String>,
    pub rates: Rates,
    pub flags: Vec<Flag>,
    pub runtime: Runtime,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.flags.iter().all(|f| f.passed)
    }

    pub fn flag(&self, rule: &str) -> Option<&Flag> {
        self.flags.iter().find(|f| f.rule == rule)
    }

    /// Copy with runtime metrics zeroed, for reproducibility comparisons.
    pub fn without_runtime(&self) -> Self {
        Self {
            runtime: Runtime::default(),
            ..self.clone()
        }
    }
}

pub const RULE_LOW_CORRELATION: &str = "low_correlation_ge_0.9";
pub const RULE_ADDITIVITY: &str = "additivity_le_1e-9";
pub const RULE_TRIPLE_RECOVERY: &str = "triple_recovery_rate_ge_0.9";
pub const RULE_CONFOUNDING: &str = "confounding_pattern_rate_ge_0.9";
pub const RULE_SPLINE: &str = "spline_toward_truth_rate_ge_0.9";
pub const RULE_DENOISE: &str = "denoise_rate_ge_0.9";

pub fn decomposition_config(config: &SimConfig) -> DecompositionConfig {
    DecompositionConfig {
        levels: config.levels,
        low_cutoff: config.low_cutoff,
        order: config.order,
        folds: config.folds,
        n_lambdas: config.n_lambdas,
        lambda_min_ratio: config.lambda_min_ratio,
        penalty: config.penalty,
        domain: DomainRule::Fixed(domain_map(config)),
        seed: config.seed,
        workers: config.workers,
        ..DecompositionConfig::default()
    }
}

/// Simulated surfaces with their decomposition, shared by every replication.
pub struct PreparedScenario {
    pub config: SimConfig,
    pub sims: SimulatedSurfaces,
    pub decomposer: Decomposer,
    pub grid: GridCache,
    pub decomposed: Vec<DecomposedSurface>,
    pub archive: ExposureArchive,
    pub days: Vec<DayScore>,
    pub runtime: Runtime,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn prepare_scenario(config: &SimConfig) -> Result<PreparedScenario, HarnessError> {
    config.validate()?;
    let t0 = Instant::now();
    let sims = simulate_surfaces(config)?;
    let simulate_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let decomposer = Decomposer::new(decomposition_config(config))?;
    let grid = decomposer.prepare_grid(&sims.points)?;
    let decomposed = pool(config.workers)?.install(|| {
        sims.surfaces
            .par_iter()
            .map(|s| decomposer.decompose_on(s, &grid))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let decompose_seconds = t1.elapsed().as_secs_f64();

    let days = decomposed
        .iter()
        .zip(&sims.truth)
        .map(|(d, t)| {
            let noiseless_mean = t.mean;
            let additivity_error = d
                .observed
                .iter()
                .zip(d.low_values.iter().zip(&d.high_values))
                .map(|(y, (l, h))| (d.mean + l + h - y).abs())
                .fold(0.0, f64::max);
            DayScore {
                date: d.date,
                low_correlation: correlation(&d.low_values, &t.low),
                high_correlation: correlation(&d.high_values, &t.high),
                mean_error: d.mean - noiseless_mean,
                additivity_error,
                lambda: d.selected_lambda,
                lambda_max: d.lambda_max,
            }
        })
        .collect();
    let archive = ExposureArchive::from_decomposed(&decomposed)?;
    Ok(PreparedScenario {
        config: config.clone(),
        sims,
        decomposer,
        grid,
        decomposed,
        archive,
        days,
        runtime: Runtime {
            simulate_seconds,
            decompose_seconds,
            models_seconds: 0.0,
        },
    })
}

/// Drop sets of the level-removal sweep: nothing, then `{L}`, `{L, L-1}`,
/// down to keeping level 1 only.
pub fn sweep_sets(levels: u32) -> Vec<Vec<u32>> {
    (0..levels)
        .map(|k| ((levels - k + 1)..=levels).rev().collect())
        .collect()
}

fn summarize(res: &ModelResult, truths: &[(&str, f64)]) -> ModelSummary {
    let coefficients = res
        .ci
        .rows
        .iter()
        .map(|r| CoefficientEstimate {
            name: r.name.clone(),
            truth: truths
                .iter()
                .find(|(n, _)| *n == r.name)
                .map_or(f64::NAN, |(_, v)| *v),
            estimate: r.estimate,
            std_error: r.std_error,
            lower: r.lower,
            upper: r.upper,
        })
        .collect();
    ModelSummary {
        label: res.spec.mode.label().to_string(),
        coefficients,
        sigma_b2: res.fit.sigma_b2,
        sigma_e2: res.fit.sigma_e2,
        contrast: res.contrast,
    }
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = v.clone().fold((0.0, 0.0), |(n, s), x| (n + 1.0, s + x));
    let m = s / n;
    v.map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Runs every replication against prepared surfaces. Only the cohort,
/// outcome and model keys of `config` are read; the surface keys must match
/// the prepared scenario.
pub fn evaluate_scenario(
    prepared: &PreparedScenario,
    config: &SimConfig,
) -> Result<ScenarioResult, HarnessError> {
    config.validate()?;
    if !prepared.config.same_surfaces(config) {
        return Err(HarnessError::Config(
            "configuration changes surface or decomposition keys of the prepared scenario".into(),
        ));
    }
    let t0 = Instant::now();
    let sets = if config.sweep { sweep_sets(config.levels) } else { Vec::new() };
    let sweep_archives = sets
        .iter()
        .map(|dropped| {
            let spec = LevelFilterSpec::new(dropped.iter().copied(), config.levels)?;
            let mut archive = prepared.archive.clone();
            for d in &prepared.decomposed {
                archive.set_filtered(d.date, filter_levels(d, &spec, prepared.grid.design())?)?;
            }
            Ok(archive)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let outcomes: Vec<Result<ReplicationResult, HarnessError>> = pool(config.workers)?.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|r| replicate(prepared, config, r, &sets, &sweep_archives))
            .collect()
    });
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => replications.push(v),
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }
    let models_seconds = t0.elapsed().as_secs_f64();

    let days = prepared.days.clone();
    let nd = days.len() as f64;
    let mean_low_correlation = days.iter().map(|d| d.low_correlation).sum::<f64>() / nd;
    let mean_high_correlation = days.iter().map(|d| d.high_correlation).sum::<f64>() / nd;
    let max_additivity_error = days.iter().map(|d| d.additivity_error).fold(0.0, f64::max);

    // Failed replications count against every rate.
    let total = config.replications as f64;
    let rate = |f: &dyn Fn(&ReplicationResult) -> bool| {
        replications.iter().filter(|r| f(r)).count() as f64 / total
    };
    let rates = Rates {
        triple_low: rate(&|r| r.flags.triple_low_within_2se),
        triple_high: rate(&|r| r.flags.triple_high_within_2se),
        triple_mean: rate(&|r| r.flags.triple_mean_within_2se),
        triple_low_and_high: rate(&|r| r.flags.triple_low_within_2se && r.flags.triple_high_within_2se),
        total_attenuated: rate(&|r| r.flags.total_attenuated),
        confounding_pattern: rate(&|r| {
            r.flags.total_attenuated && r.flags.triple_low_within_2se && r.flags.triple_high_within_2se
        }),
        spline_toward_truth: rate(&|r| r.flags.spline_toward_truth),
        contrast_significant: rate(&|r| r.flags.contrast_significant),
        denoise: (config.sweep && config.level_noise_sd > 0.0)
            .then(|| rate(&|r| r.flags.denoise_increases == Some(true))),
    };

    let flag = |rule: &str, value: f64, threshold: f64, passed: bool| Flag {
        rule: rule.to_string(),
        value,
        threshold,
        passed,
    };
    let mut flags = vec![
        flag(
            RULE_ADDITIVITY,
            max_additivity_error,
            1e-9,
            max_additivity_error <= 1e-9,
        ),
        flag(
            RULE_LOW_CORRELATION,
            mean_low_correlation,
            0.9,
            mean_low_correlation >= 0.9,
        ),
        flag(
            RULE_TRIPLE_RECOVERY,
            rates.triple_low_and_high,
            0.9,
            rates.triple_low_and_high >= 0.9,
        ),
    ];
    if config.date_confounding != 0.0 {
        flags.push(flag(
            RULE_CONFOUNDING,
            rates.confounding_pattern,
            0.9,
            rates.confounding_pattern >= 0.9,
        ));
        flags.push(flag(
            RULE_SPLINE,
            rates.spline_toward_truth,
            0.9,
            rates.spline_toward_truth >= 0.9,
        ));
    }
    if let Some(d) = rates.denoise {
        flags.push(flag(RULE_DENOISE, d, 0.9, d >= 0.9));
    }

    Ok(ScenarioResult {
        config: config.clone(),
        days,
        mean_low_correlation,
        mean_high_correlation,
        max_additivity_error,
        replications,
        failures,
        rates,
        flags,
        runtime: Runtime {
            models_seconds,
            ..prepared.runtime.clone()
        },
    })
}

fn replicate(
    prepared: &PreparedScenario,
    config: &SimConfig,
    r: u64,
    sets: &[Vec<u32>],
    sweep_archives: &[ExposureArchive],
) -> Result<ReplicationResult, HarnessError> {
    let sim = simulate_cohort(config, &prepared.sims, r)?;
    let cohort = &sim.cohort;
    let opts = AggregateOptions::default();
    let records: Vec<ExposureRecord> =
        compute_exposures(&cohort.subjects, config.window, &prepared.archive, &opts)?;

    let truths = [
        (MEAN, config.beta_mean),
        (LOW, config.beta_low),
        (HIGH, config.beta_high),
    ];
    let vl = variance(sim.truth.iter().map(|t| t.low));
    let vh = variance(sim.truth.iter().map(|t| t.high));
    let weighted = (config.beta_low * vl + config.beta_high * vh) / (vl + vh);

    let spec = |mode| ModelSpec {
        alpha: config.alpha,
        ..ModelSpec::new(mode, config.window)
    };
    let triple_res = run_model(&spec(ExposureMode::Triple), cohort, &records)?;
    let total_res = run_model(&spec(ExposureMode::Total), cohort, &records)?;
    let days: Vec<f64> = cohort
        .subjects
        .iter()
        .map(|s| s.birth_date.num_days_from_ce() as f64)
        .collect();
    let spline_df = config.spline_df.unwrap_or_else(|| default_spline_df(&days));
    let spline_res = run_model(
        &ModelSpec {
            spline_df: Some(spline_df),
            ..spec(ExposureMode::Triple)
        },
        cohort,
        &records,
    )?;
    let triple = summarize(&triple_res, &truths);
    let total = summarize(&total_res, &[(TOTAL, weighted)]);
    let triple_spline = summarize(&spline_res, &truths);

    let mut sweep = Vec::with_capacity(sets.len());
    for (dropped, archive) in sets.iter().zip(sweep_archives) {
        let recs = compute_exposures(&cohort.subjects, config.window, archive, &opts)?;
        let res = run_model(&spec(ExposureMode::MeanPlusFiltered), cohort, &recs)?;
        let row = res
            .ci
            .rows
            .iter()
            .find(|c| c.name == SPATIAL)
            .expect("spatial coefficient");
        sweep.push(SweepPoint {
            dropped: dropped.clone(),
            estimate: row.estimate,
            std_error: row.std_error,
            lower: row.lower,
            upper: row.upper,
        });
    }

    let coef = |m: &ModelSummary, n: &str| m.get(n).expect("exposure coefficient").clone();
    let t_est = coef(&total, TOTAL).estimate;
    let total_attenuated = if weighted < 0.0 {
        t_est < 0.0 && t_est > weighted
    } else {
        t_est > 0.0 && t_est < weighted
    };
    let mean_plain = coef(&triple, MEAN).estimate;
    let mean_spline = coef(&triple_spline, MEAN).estimate;
    let mut noise_set = config.level_noise_levels.clone();
    noise_set.sort_unstable_by(|a, b| b.cmp(a));
    let denoise_increases = if config.level_noise_sd > 0.0 && !sweep.is_empty() {
        sweep
            .iter()
            .find(|p| p.dropped == noise_set)
            .map(|p| p.estimate.abs() > sweep[0].estimate.abs())
    } else {
        None
    };
    let flags = ReplicationFlags {
        triple_low_within_2se: coef(&triple, LOW).within(2.0),
        triple_high_within_2se: coef(&triple, HIGH).within(2.0),
        triple_mean_within_2se: coef(&triple, MEAN).within(2.0),
        total_attenuated,
        spline_toward_truth: (mean_spline - config.beta_mean).abs()
            < (mean_plain - config.beta_mean).abs(),
        contrast_significant: triple.contrast.is_some_and(|c| c.p_value < 0.01),
        denoise_increases,
    };
    Ok(ReplicationResult {
        replicate: r,
        weighted_spatial_truth: weighted,
        total,
        triple,
        triple_spline,
        spline_df,
        sweep,
        flags,
    })
}

pub fn run_scenario(config: &SimConfig) -> Result<ScenarioResult, HarnessError> {
    let prepared = prepare_scenario(config)?;
    evaluate_scenario(&prepared, config)
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

/// Writes `scenario.json` plus the plot-ready tables.
pub fn write_reports(result: &ScenarioResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(csv_err)?;
    let json = serde_json::to_string_pretty(result).map_err(csv_err)?;
    std::fs::write(dir.join("scenario.json"), json).map_err(csv_err)?;
    write_tables(result, dir)
}

/// `days.csv`, `estimates.csv`, `sweep.csv`, `summary.csv` and `flags.csv`.
pub fn write_tables(result: &ScenarioResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(csv_err)?;
    let mut w = csv::Writer::from_path(dir.join("days.csv")).map_err(csv_err)?;
    for d in &result.days {
        w.serialize(d).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;

    let mut w = csv::Writer::from_path(dir.join("estimates.csv")).map_err(csv_err)?;
    w.write_record([
        "replicate", "model", "coefficient", "truth", "estimate", "std_error", "lower", "upper",
    ])
    .map_err(csv_err)?;
    for r in &result.replications {
        for (label, m) in [
            ("total", &r.total),
            ("triple", &r.triple),
            ("triple_spline", &r.triple_spline),
        ] {
            for c in &m.coefficients {
                w.write_record([
                    r.replicate.to_string(),
                    label.to_string(),
                    c.name.clone(),
                    c.truth.to_string(),
                    c.estimate.to_string(),
                    c.std_error.to_string(),
                    c.lower.to_string(),
                    c.upper.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)?;

    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(csv_err)?;
    w.write_record(["replicate", "dropped", "estimate", "std_error", "lower", "upper"])
        .map_err(csv_err)?;
    for r in &result.replications {
        for p in &r.sweep {
            let dropped: Vec<String> = p.dropped.iter().map(u32::to_string).collect();
            w.write_record([
                r.replicate.to_string(),
                dropped.join(" "),
                p.estimate.to_string(),
                p.std_error.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    w.write_record(["model", "coefficient", "truth", "mean_estimate", "median_std_error", "coverage"])
        .map_err(csv_err)?;
    for (label, pick) in [
        ("total", (|r: &ReplicationResult| &r.total) as fn(&ReplicationResult) -> &ModelSummary),
        ("triple", |r| &r.triple),
        ("triple_spline", |r| &r.triple_spline),
    ] {
        let Some(first) = result.replications.first() else { break };
        for c in &pick(first).coefficients {
            let rows: Vec<&CoefficientEstimate> = result
                .replications
                .iter()
                .filter_map(|r| pick(r).get(&c.name))
                .collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|x| x.estimate).sum::<f64>() / n;
            let mut ses: Vec<f64> = rows.iter().map(|x| x.std_error).collect();
            ses.sort_by(f64::total_cmp);
            let cover = rows
                .iter()
                .filter(|x| x.lower <= x.truth && x.truth <= x.upper)
                .count() as f64
                / n;
            w.write_record([
                label.to_string(),
                c.name.clone(),
                c.truth.to_string(),
                mean.to_string(),
                ses[ses.len() / 2].to_string(),
                cover.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;

    let mut w = csv::Writer::from_path(dir.join("flags.csv")).map_err(csv_err)?;
    for f in &result.flags {
        w.serialize(f).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_result(path: &Path) -> Result<ScenarioResult, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(csv_err)?;
    serde_json::from_str(&text).map_err(csv_err)
}
