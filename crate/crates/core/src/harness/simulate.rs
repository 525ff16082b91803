use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HarnessError, SimConfig};
use crate::design2d::{build_design_for_points, AffineMap, DailySurface, DesignOptions, SpatialPoint};
use crate::exposure::{Cohort, KdTree, Subject, MAX_GESTATION, MIN_GESTATION};
use crate::wavelet_basis::{daubechies_filter, PeriodizedBasis, DEFAULT_DEPTH};

const YEAR: f64 = 365.25;
/// Day of year with the most births.
const BIRTH_PEAK_DOY: f64 = 180.0;

/// Generative components of one day; spatial parts have mean zero over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub date: NaiveDate,
    pub mean: f64,
    /// Seasonal plus trend part of `mean`, without the day-to-day deviation.
    pub smooth_mean: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSurfaces {
    pub points: Vec<SpatialPoint>,
    pub surfaces: Vec<DailySurface>,
    pub truth: Vec<DayTruth>,
    /// Static measurement error built from fine levels (zeros when disabled).
    pub error_field: Vec<f64>,
}

impl SimulatedSurfaces {
    pub fn last_date(&self) -> NaiveDate {
        self.truth.last().map(|t| t.date).expect("at least one day")
    }

    pub fn first_date(&self) -> NaiveDate {
        self.truth[0].date
    }
}

/// Window averages of the generative components at a subject's cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueExposure {
    pub mean: f64,
    pub smooth_mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub cohort: Cohort,
    pub truth: Vec<TrueExposure>,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Maps the periodic square `[0, extent)^2` onto the unit square.
pub fn domain_map(config: &SimConfig) -> AffineMap {
    AffineMap::new(0.0, config.extent, 0.0, config.extent).expect("positive extent")
}

pub fn grid_points(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<SpatialPoint> {
    let h1 = config.extent / config.grid_n1 as f64;
    let h2 = config.extent / config.grid_n2 as f64;
    let mut pts = Vec::with_capacity(config.grid_n1 * config.grid_n2);
    for i2 in 0..config.grid_n2 {
        for i1 in 0..config.grid_n1 {
            let (j1, j2) = if config.jitter > 0.0 {
                (rng.gen_range(0.0..config.jitter), rng.gen_range(0.0..config.jitter))
            } else {
                (0.0, 0.0)
            };
            pts.push(SpatialPoint::new((i1 as f64 + j1) * h1, (i2 as f64 + j2) * h2));
        }
    }
    pts
}

fn wrap(d: f64, extent: f64) -> f64 {
    let d = d.rem_euclid(extent);
    d.min(extent - d)
}

fn torus_dist2(p: SpatialPoint, c: SpatialPoint, extent: f64) -> f64 {
    let dx = wrap(p.x1 - c.x1, extent);
    let dy = wrap(p.x2 - c.x2, extent);
    dx * dx + dy * dy
}

/// Squared distance from `p` to the segment `a..b`, over periodic images of `p`.
fn segment_dist2(p: SpatialPoint, a: SpatialPoint, b: SpatialPoint, extent: f64) -> f64 {
    let (vx, vy) = (b.x1 - a.x1, b.x2 - a.x2);
    let len2 = vx * vx + vy * vy;
    let mut best = f64::INFINITY;
    for sx in [-1.0, 0.0, 1.0] {
        for sy in [-1.0, 0.0, 1.0] {
            let (px, py) = (p.x1 + sx * extent, p.x2 + sy * extent);
            let t = (((px - a.x1) * vx + (py - a.x2) * vy) / len2).clamp(0.0, 1.0);
            let (dx, dy) = (px - a.x1 - t * vx, py - a.x2 - t * vy);
            best = best.min(dx * dx + dy * dy);
        }
    }
    best
}

fn random_point(rng: &mut ChaCha8Rng, extent: f64) -> SpatialPoint {
    SpatialPoint::new(rng.gen_range(0.0..extent), rng.gen_range(0.0..extent))
}

/// Sum of broad periodic Gaussian bumps.
fn low_field(config: &SimConfig, points: &[SpatialPoint], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<(SpatialPoint, f64, f64)> = (0..config.low_bumps)
        .map(|_| {
            (
                random_point(rng, config.extent),
                config.low_amplitude * rng.gen_range(0.5..1.5),
                config.low_length_scale * rng.gen_range(0.7..1.3),
            )
        })
        .collect();
    points
        .iter()
        .map(|p| {
            bumps
                .iter()
                .map(|(c, a, s)| a * (-torus_dist2(*p, *c, config.extent) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect()
}

/// Narrow spikes plus line sources with a Gaussian cross profile.
fn high_field(config: &SimConfig, points: &[SpatialPoint], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let spikes: Vec<(SpatialPoint, f64, f64)> = (0..config.high_spikes)
        .map(|_| {
            (
                random_point(rng, config.extent),
                config.high_amplitude * rng.gen_range(0.5..1.5),
                config.high_width * rng.gen_range(0.8..1.2),
            )
        })
        .collect();
    let lines: Vec<(SpatialPoint, SpatialPoint, f64)> = (0..config.high_lines)
        .map(|_| {
            let c = random_point(rng, config.extent);
            let theta = rng.gen_range(0.0..PI);
            let half = config.extent * rng.gen_range(0.2..0.4);
            let (dx, dy) = (half * theta.cos(), half * theta.sin());
            (
                SpatialPoint::new(c.x1 - dx, c.x2 - dy),
                SpatialPoint::new(c.x1 + dx, c.x2 + dy),
                0.5 * config.high_amplitude * rng.gen_range(0.5..1.5),
            )
        })
        .collect();
    let w2 = 2.0 * config.high_width * config.high_width;
    points
        .iter()
        .map(|p| {
            let s: f64 = spikes
                .iter()
                .map(|(c, a, w)| a * (-torus_dist2(*p, *c, config.extent) / (2.0 * w * w)).exp())
                .sum();
            let l: f64 = lines
                .iter()
                .map(|(a, b, amp)| amp * (-segment_dist2(*p, *a, *b, config.extent) / w2).exp())
                .sum();
            s + l
        })
        .collect()
}

/// Random combination of the wavelets whose finer direction is in
/// `config.level_noise_levels`, scaled to sd `level_noise_sd`.
fn level_noise_field(
    config: &SimConfig,
    points: &[SpatialPoint],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, HarnessError> {
    let n = points.len();
    if config.level_noise_sd == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let top = config
        .level_noise_levels
        .iter()
        .copied()
        .max()
        .unwrap_or(1)
        .max(config.levels);
    let filter = daubechies_filter(config.order).map_err(|e| HarnessError::Config(e.to_string()))?;
    let basis = PeriodizedBasis::new(&filter, top, DEFAULT_DEPTH)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let design = build_design_for_points(points, &basis, &domain_map(config), DesignOptions::default())
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let coef: Vec<f64> = design
        .columns()
        .iter()
        .map(|c| {
            if config.level_noise_levels.contains(&c.max_level()) {
                gauss(rng)
            } else {
                0.0
            }
        })
        .collect();
    let mut field = design
        .matrix()
        .mul_vec(&coef)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    center(&mut field);
    let sd = (field.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if sd > 0.0 {
        field.iter_mut().for_each(|v| *v *= config.level_noise_sd / sd);
    }
    Ok(field)
}

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Seasonal cycle plus linear trend of the daily mean on `date`.
pub fn smooth_mean(config: &SimConfig, date: NaiveDate) -> f64 {
    let t = (date - config.start_date).num_days() as f64;
    let doy = date.ordinal0() as f64;
    config.mean_level
        + config.seasonal_amplitude * (2.0 * PI * (doy - config.seasonal_phase) / YEAR).sin()
        + config.trend_slope * t
}

/// Daily surfaces `m_d + L_d + H_d + error + noise` with their generative parts.
pub fn simulate_surfaces(config: &SimConfig) -> Result<SimulatedSurfaces, HarnessError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, 1);
    let points = grid_points(config, &mut rng);
    let low_base = low_field(config, &points, &mut rng);
    let high_base = high_field(config, &points, &mut rng);
    let error_field = level_noise_field(config, &points, &mut rng)?;
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| HarnessError::Config(e.to_string()))?;
    let innovation = config.weather_sd * (1.0 - config.weather_ar * config.weather_ar).sqrt();

    let mut weather = config.weather_sd * gauss(&mut rng);
    let mut surfaces = Vec::with_capacity(config.days);
    let mut truth = Vec::with_capacity(config.days);
    for d in 0..config.days {
        let date = config.start_date + Duration::days(d as i64);
        if d > 0 {
            weather = config.weather_ar * weather + innovation * gauss(&mut rng);
        }
        let smooth = smooth_mean(config, date);
        let mean = smooth + weather;
        let a = 1.0 + config.low_drift * gauss(&mut rng);
        let b = 1.0 + config.high_drift * gauss(&mut rng);
        let mut low: Vec<f64> = low_base.iter().map(|v| a * v).collect();
        let mut high: Vec<f64> = high_base.iter().map(|v| b * v).collect();
        center(&mut low);
        center(&mut high);
        let values: Vec<f64> = (0..points.len())
            .map(|i| mean + low[i] + high[i] + error_field[i] + noise.sample(&mut rng))
            .collect();
        surfaces.push(DailySurface {
            date,
            points: points.clone(),
            values,
        });
        truth.push(DayTruth {
            date,
            mean,
            smooth_mean: smooth,
            low,
            high,
        });
    }
    Ok(SimulatedSurfaces {
        points,
        surfaces,
        truth,
        error_field,
    })
}

pub const CONFOUNDERS: [&str; 2] = ["smoking", "maternal_age"];

/// A cohort for replicate `replicate`, with outcomes generated from the
/// stored generative components.
pub fn simulate_cohort(
    config: &SimConfig,
    sims: &SimulatedSurfaces,
    replicate: u64,
) -> Result<SimulatedCohort, HarnessError> {
    let mut rng = rng_for(config.seed, 1000 + replicate);
    let grid = KdTree::new(&sims.points);
    let first = sims.first_date();
    let last = sims.last_date();

    let centers: Vec<SpatialPoint> = (0..config.tracts)
        .map(|_| random_point(&mut rng, config.extent))
        .collect();
    let tract_tree = KdTree::new(&centers);
    let tract_effect: Vec<f64> = (0..config.tracts)
        .map(|_| config.tract_sd * gauss(&mut rng))
        .collect();

    let mut subjects = Vec::with_capacity(config.cohort_size);
    let mut truth = Vec::with_capacity(config.cohort_size);
    for i in 0..config.cohort_size {
        let (g, birth) = draw_birth(config, first, last, &mut rng)?;
        let location = random_point(&mut rng, config.extent);
        let (cell, _) = grid.nearest(location).expect("nonempty grid");
        let (tract, _) = tract_tree.nearest(location).expect("nonempty tracts");
        let (a, b) = config.window.day_range(g);
        let conception = birth - Duration::days(g as i64);
        let mut t = TrueExposure {
            mean: 0.0,
            smooth_mean: 0.0,
            low: 0.0,
            high: 0.0,
        };
        for k in a..=b {
            let day = &sims.truth[(conception + Duration::days(k as i64) - first).num_days() as usize];
            t.mean += day.mean;
            t.smooth_mean += day.smooth_mean;
            t.low += day.low[cell];
            t.high += day.high[cell];
        }
        let len = (b - a + 1) as f64;
        t.mean /= len;
        t.smooth_mean /= len;
        t.low /= len;
        t.high /= len;

        let smoking = if rng.gen_bool(config.smoking_rate) { 1.0 } else { 0.0 };
        let age = (28.0 + 5.0 * gauss(&mut rng)).clamp(15.0, 48.0);
        let outcome = config.baseline
            + config.beta_mean * t.mean
            + config.beta_low * t.low
            + config.beta_high * t.high
            + config.smoking_effect * smoking
            + config.age_effect * (age - 28.0)
            + config.date_confounding * (t.smooth_mean - config.mean_level)
            + tract_effect[tract]
            + config.outcome_sd * gauss(&mut rng);
        subjects.push(Subject {
            id: format!("S{i:06}"),
            location,
            birth_date: birth,
            gestation_days: g,
            tract_id: format!("T{tract:04}"),
            outcome,
            confounders: vec![smoking, age],
        });
        truth.push(t);
    }
    Ok(SimulatedCohort {
        cohort: Cohort {
            confounder_names: CONFOUNDERS.iter().map(|s| s.to_string()).collect(),
            subjects,
        },
        truth,
    })
}

/// Gestation length and a birth date whose exposure window lies inside
/// the simulated days, with a yearly cycle in birth frequency.
fn draw_birth(
    config: &SimConfig,
    first: NaiveDate,
    last: NaiveDate,
    rng: &mut ChaCha8Rng,
) -> Result<(u32, NaiveDate), HarnessError> {
    for _ in 0..1000 {
        let g = (config.gestation_mean + config.gestation_sd * gauss(rng))
            .round()
            .clamp(MIN_GESTATION as f64, MAX_GESTATION as f64) as u32;
        let (a, b) = config.window.day_range(g);
        if a > g {
            continue;
        }
        let lo = first + Duration::days(g as i64 - a as i64);
        let hi = last + Duration::days(g as i64 - b as i64);
        if hi < lo {
            continue;
        }
        let span = (hi - lo).num_days();
        loop {
            let birth = lo + Duration::days(rng.gen_range(0..=span));
            let doy = birth.ordinal0() as f64;
            let w = 1.0 + config.birth_seasonality * (2.0 * PI * (doy - BIRTH_PEAK_DOY) / YEAR).cos();
            if rng.gen::<f64>() * (1.0 + config.birth_seasonality) <= w {
                return Ok((g, birth));
            }
        }
    }
    Err(HarnessError::Config(format!(
        "{} simulated days cannot hold a {} exposure window",
        config.days, config.window
    )))
}
