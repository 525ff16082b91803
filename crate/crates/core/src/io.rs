//! CSV and JSON formats for surfaces, decompositions, cohorts, exposures and
//! model fits. Floats are written in shortest round-trip form, so every
//! write/read cycle reproduces values bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::{DecomposedSurface, DecompositionConfig};
use crate::design2d::{ColumnIndex, DailySurface, SpatialPoint};
use crate::exposure::{Cohort, ExposureRecord, ExposureTriple, Subject, WindowKind};
use crate::health_model::{CiTable, ModelResult};
use crate::lasso::LassoSolution;
use crate::wavelet_basis::BasisFunction;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?))
}

fn writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64, name: &str) -> Result<T, IoError> {
    let raw = rec
        .get(i)
        .ok_or_else(|| IoError::Format(format!("line {line}: missing column {name}")))?;
    raw.parse()
        .map_err(|_| IoError::Format(format!("line {line}: bad {name} '{raw}'")))
}

fn check_header(rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<csv::StringRecord, IoError> {
    let h = rdr.headers()?.clone();
    if h.len() < expected.len() || expected.iter().zip(h.iter()).any(|(a, b)| *a != b) {
        return Err(IoError::Format(format!(
            "expected header starting with {}, found {}",
            expected.join(","),
            h.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(h)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub const SURFACE_HEADER: [&str; 4] = ["date", "x1", "x2", "value"];

pub fn write_surfaces(path: &Path, surfaces: &[DailySurface]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(SURFACE_HEADER)?;
    for s in surfaces {
        let date = s.date.to_string();
        for (p, v) in s.points.iter().zip(&s.values) {
            w.write_record([&date, &p.x1.to_string(), &p.x2.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Groups rows by date (ascending); points keep file order within a day.
pub fn read_surfaces(path: &Path) -> Result<Vec<DailySurface>, IoError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, &SURFACE_HEADER)?;
    let mut days: BTreeMap<NaiveDate, (Vec<SpatialPoint>, Vec<f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let date: NaiveDate = field(&rec, 0, line, "date")?;
        let p = SpatialPoint::new(field(&rec, 1, line, "x1")?, field(&rec, 2, line, "x2")?);
        let e = days.entry(date).or_default();
        e.0.push(p);
        e.1.push(field(&rec, 3, line, "value")?);
    }
    Ok(days
        .into_iter()
        .map(|(date, (points, values))| DailySurface {
            date,
            points,
            values,
        })
        .collect())
}

pub const DECOMPOSITION_HEADER: [&str; 7] = ["date", "x1", "x2", "mean", "low", "high", "total"];
pub const COEFFICIENT_HEADER: [&str; 6] = ["date", "level_x1", "level_x2", "shift_x1", "shift_x2", "theta"];

/// Per-day metadata stored next to the decomposition tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayManifest {
    pub date: NaiveDate,
    pub selected_lambda: f64,
    pub lambda_max: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cv_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DecompositionConfig,
    pub n_points: usize,
    pub days: Vec<DayManifest>,
}

/// `total` is the observed value; `mean + low + high` reproduces it.
pub fn write_decomposition(path: &Path, days: &[DecomposedSurface]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(DECOMPOSITION_HEADER)?;
    for d in days {
        let date = d.date.to_string();
        let mean = d.mean.to_string();
        for i in 0..d.points.len() {
            w.write_record([
                &date,
                &d.points[i].x1.to_string(),
                &d.points[i].x2.to_string(),
                &mean,
                &d.low_values[i].to_string(),
                &d.high_values[i].to_string(),
                &d.observed[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Nonzero coefficients; the intercept is the row with both levels and shifts 0.
pub fn write_coefficients(path: &Path, days: &[DecomposedSurface], levels: u32) -> Result<(), IoError> {
    let k = 1usize << levels;
    let mut w = writer(path)?;
    w.write_record(COEFFICIENT_HEADER)?;
    for d in days {
        let date = d.date.to_string();
        w.write_record([&date, "0", "0", "0", "0", &d.coefficients.intercept.to_string()])?;
        for (pos, theta) in d.coefficients.coefficients.iter().enumerate() {
            if *theta == 0.0 {
                continue;
            }
            let c = ColumnIndex::from_position(pos, k);
            w.write_record([
                date.clone(),
                c.level_x1.to_string(),
                c.level_x2.to_string(),
                c.shift_x1().to_string(),
                c.shift_x2().to_string(),
                theta.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn basis_index(level: u32, shift: u32, line: u64) -> Result<u32, IoError> {
    if level == 0 && shift != 0 || level > 0 && shift >= 1 << (level - 1) {
        return Err(IoError::Format(format!("line {line}: shift {shift} invalid at level {level}")));
    }
    Ok(BasisFunction { level, shift }.index() as u32)
}

pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const COEFFICIENT_FILE: &str = "coefficients.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the decomposition table, the coefficient sidecar and the manifest.
pub fn write_decomposition_dir(
    dir: &Path,
    days: &[DecomposedSurface],
    config: &DecompositionConfig,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.display().to_string(),
        source,
    })?;
    write_decomposition(&dir.join(DECOMPOSITION_FILE), days)?;
    write_coefficients(&dir.join(COEFFICIENT_FILE), days, config.levels)?;
    let manifest = Manifest {
        config: config.clone(),
        n_points: days.first().map_or(0, |d| d.points.len()),
        days: days
            .iter()
            .map(|d| DayManifest {
                date: d.date,
                selected_lambda: d.selected_lambda,
                lambda_max: d.lambda_max,
                iterations: d.coefficients.iterations,
                converged: d.coefficients.converged,
                cv_warnings: d.cv_warnings.clone(),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(create(&dir.join(MANIFEST_FILE))?, &manifest)?;
    Ok(())
}

/// Inverse of [`write_decomposition_dir`]. Objective histories are not stored.
pub fn read_decomposition_dir(dir: &Path) -> Result<(DecompositionConfig, Vec<DecomposedSurface>), IoError> {
    let manifest: Manifest = serde_json::from_reader(open(&dir.join(MANIFEST_FILE))?)?;
    let k = 1usize << manifest.config.levels;

    let mut rdr = reader(&dir.join(DECOMPOSITION_FILE))?;
    check_header(&mut rdr, &DECOMPOSITION_HEADER)?;
    type Table = (f64, Vec<SpatialPoint>, Vec<f64>, Vec<f64>, Vec<f64>);
    let mut tables: BTreeMap<NaiveDate, Table> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let date: NaiveDate = field(&rec, 0, line, "date")?;
        let mean: f64 = field(&rec, 3, line, "mean")?;
        let e = tables
            .entry(date)
            .or_insert_with(|| (mean, Vec::new(), Vec::new(), Vec::new(), Vec::new()));
        e.1.push(SpatialPoint::new(field(&rec, 1, line, "x1")?, field(&rec, 2, line, "x2")?));
        e.2.push(field(&rec, 4, line, "low")?);
        e.3.push(field(&rec, 5, line, "high")?);
        e.4.push(field(&rec, 6, line, "total")?);
    }

    let mut rdr = reader(&dir.join(COEFFICIENT_FILE))?;
    check_header(&mut rdr, &COEFFICIENT_HEADER)?;
    let mut coefs: BTreeMap<NaiveDate, (f64, Vec<f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let date: NaiveDate = field(&rec, 0, line, "date")?;
        let lx: u32 = field(&rec, 1, line, "level_x1")?;
        let ly: u32 = field(&rec, 2, line, "level_x2")?;
        let sx: u32 = field(&rec, 3, line, "shift_x1")?;
        let sy: u32 = field(&rec, 4, line, "shift_x2")?;
        let theta: f64 = field(&rec, 5, line, "theta")?;
        let e = coefs.entry(date).or_insert_with(|| (0.0, vec![0.0; k * k - 1]));
        let (l, m) = (basis_index(lx, sx, line)?, basis_index(ly, sy, line)?);
        if l == 1 && m == 1 {
            e.0 = theta;
        } else if l as usize > k || m as usize > k {
            return Err(IoError::Format(format!("line {line}: level beyond {}", manifest.config.levels)));
        } else {
            e.1[ColumnIndex::new(l, m).position(k)] = theta;
        }
    }

    let mut out = Vec::with_capacity(manifest.days.len());
    for meta in &manifest.days {
        let (mean, points, low, high, observed) = tables
            .remove(&meta.date)
            .ok_or_else(|| IoError::Format(format!("{} missing from {DECOMPOSITION_FILE}", meta.date)))?;
        let (intercept, coefficients) = coefs
            .remove(&meta.date)
            .unwrap_or_else(|| (mean, vec![0.0; k * k - 1]));
        out.push(DecomposedSurface {
            date: meta.date,
            points,
            observed,
            mean,
            coefficients: LassoSolution {
                intercept,
                coefficients,
                lambda: meta.selected_lambda,
                iterations: meta.iterations,
                converged: meta.converged,
                objective_history: Vec::new(),
            },
            low_values: low,
            high_values: high,
            selected_lambda: meta.selected_lambda,
            lambda_max: meta.lambda_max,
            cv_warnings: meta.cv_warnings.clone(),
        });
    }
    if let Some(extra) = tables.keys().next() {
        return Err(IoError::Format(format!("{extra} is not listed in the manifest")));
    }
    Ok((manifest.config, out))
}

const SUBJECT_FIXED: [&str; 7] = ["id", "x1", "x2", "birth_date", "gestation_days", "tract_id", "outcome"];

/// Confounders follow the fixed columns, named by the header.
pub fn write_subjects(path: &Path, cohort: &Cohort) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let mut header: Vec<&str> = SUBJECT_FIXED.to_vec();
    header.extend(cohort.confounder_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for s in &cohort.subjects {
        let mut row = vec![
            s.id.clone(),
            s.location.x1.to_string(),
            s.location.x2.to_string(),
            s.birth_date.to_string(),
            s.gestation_days.to_string(),
            s.tract_id.clone(),
            s.outcome.to_string(),
        ];
        row.extend(s.confounders.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_subjects(path: &Path) -> Result<Cohort, IoError> {
    let mut rdr = reader(path)?;
    let header = check_header(&mut rdr, &SUBJECT_FIXED)?;
    let confounder_names: Vec<String> = header.iter().skip(SUBJECT_FIXED.len()).map(String::from).collect();
    let mut subjects = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let confounders = (0..confounder_names.len())
            .map(|j| field(&rec, SUBJECT_FIXED.len() + j, line, &confounder_names[j]))
            .collect::<Result<Vec<f64>, _>>()?;
        subjects.push(Subject {
            id: field(&rec, 0, line, "id")?,
            location: SpatialPoint::new(field(&rec, 1, line, "x1")?, field(&rec, 2, line, "x2")?),
            birth_date: field(&rec, 3, line, "birth_date")?,
            gestation_days: field(&rec, 4, line, "gestation_days")?,
            tract_id: field(&rec, 5, line, "tract_id")?,
            outcome: field(&rec, 6, line, "outcome")?,
            confounders,
        });
    }
    Ok(Cohort {
        confounder_names,
        subjects,
    })
}

pub const EXPOSURE_HEADER: [&str; 7] = [
    "id",
    "window",
    "mean_avg",
    "low_avg",
    "high_avg",
    "days_covered",
    "days_missing",
];

/// Adds a `filtered_avg` column when any record carries one.
pub fn write_exposures(path: &Path, records: &[ExposureRecord]) -> Result<(), IoError> {
    let filtered = records.iter().any(|r| r.triple.filtered_avg.is_some());
    let mut w = writer(path)?;
    let mut header = EXPOSURE_HEADER.to_vec();
    if filtered {
        header.push("filtered_avg");
    }
    w.write_record(&header)?;
    for r in records {
        let t = &r.triple;
        let mut row = vec![
            r.id.clone(),
            r.window.to_string(),
            t.mean_avg.to_string(),
            t.low_avg.to_string(),
            t.high_avg.to_string(),
            t.days_covered.to_string(),
            t.days_missing.to_string(),
        ];
        if filtered {
            row.push(t.filtered_avg.map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_exposures(path: &Path) -> Result<Vec<ExposureRecord>, IoError> {
    let mut rdr = reader(path)?;
    let header = check_header(&mut rdr, &EXPOSURE_HEADER)?;
    let has_filtered = header.get(EXPOSURE_HEADER.len()) == Some("filtered_avg");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let window: String = field(&rec, 1, line, "window")?;
        let window: WindowKind = window.parse().map_err(IoError::Format)?;
        let filtered_avg = match (has_filtered, rec.get(EXPOSURE_HEADER.len())) {
            (true, Some(v)) if !v.is_empty() => Some(field(&rec, EXPOSURE_HEADER.len(), line, "filtered_avg")?),
            _ => None,
        };
        out.push(ExposureRecord {
            id: field(&rec, 0, line, "id")?,
            window,
            triple: ExposureTriple {
                mean_avg: field(&rec, 2, line, "mean_avg")?,
                low_avg: field(&rec, 3, line, "low_avg")?,
                high_avg: field(&rec, 4, line, "high_avg")?,
                filtered_avg,
                days_covered: field(&rec, 5, line, "days_covered")?,
                days_missing: field(&rec, 6, line, "days_missing")?,
            },
        });
    }
    Ok(out)
}

pub fn write_fit_json(path: &Path, result: &ModelResult) -> Result<(), IoError> {
    serde_json::to_writer_pretty(create(path)?, result)?;
    Ok(())
}

pub fn read_fit_json(path: &Path) -> Result<ModelResult, IoError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// One row per adjusted interval.
pub fn write_intervals(path: &Path, table: &CiTable) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["coefficient", "estimate", "std_error", "lower", "upper", "family_size", "alpha"])?;
    for r in &table.rows {
        w.write_record([
            r.name.clone(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            table.family_size.to_string(),
            table.alpha.to_string(),
        ])?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}
