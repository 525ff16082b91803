//! Subject-level exposures: nearest-cell lookup and averaging of daily
//! decomposed components over gestational windows.

mod kdtree;

pub use kdtree::KdTree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::DecomposedSurface;
use crate::design2d::SpatialPoint;

pub const MIN_GESTATION: u32 = 140;
pub const MAX_GESTATION: u32 = 320;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExposureError {
    #[error("invalid subject {id}: {reason}")]
    InvalidSubject { id: String, reason: String },
    #[error("subject {id}: nearest cell is {distance} away (limit {limit})")]
    Unassignable { id: String, distance: f64, limit: f64 },
    #[error("subject {id}: {kind} starts on gestational day {start} but gestation is {gestation} days")]
    EmptyWindow {
        id: String,
        kind: WindowKind,
        start: u32,
        gestation: u32,
    },
    #[error("subject {id}: {covered} of {length} window days available, missing {}", format_dates(.missing))]
    InsufficientCoverage {
        id: String,
        covered: usize,
        length: usize,
        missing: Vec<NaiveDate>,
    },
    #[error("empty exposure grid")]
    EmptyGrid,
    #[error("invalid archive: {0}")]
    Archive(String),
}

fn format_dates(d: &[NaiveDate]) -> String {
    const SHOW: usize = 10;
    let shown: Vec<String> = d.iter().take(SHOW).map(|x| x.to_string()).collect();
    if d.len() > SHOW {
        format!("{} and {} more", shown.join(", "), d.len() - SHOW)
    } else {
        shown.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub location: SpatialPoint,
    pub birth_date: NaiveDate,
    pub gestation_days: u32,
    pub tract_id: String,
    /// Birth weight in grams.
    pub outcome: f64,
    pub confounders: Vec<f64>,
}

impl Subject {
    pub fn conception(&self) -> NaiveDate {
        self.birth_date - Duration::days(self.gestation_days as i64)
    }

    pub fn validate(&self, n_confounders: usize) -> Result<(), ExposureError> {
        let fail = |reason: String| {
            Err(ExposureError::InvalidSubject {
                id: self.id.clone(),
                reason,
            })
        };
        if !(MIN_GESTATION..=MAX_GESTATION).contains(&self.gestation_days) {
            return fail(format!(
                "gestation {} outside {MIN_GESTATION}..={MAX_GESTATION}",
                self.gestation_days
            ));
        }
        if !(self.outcome > 0.0 && self.outcome.is_finite()) {
            return fail(format!("outcome must be positive, got {}", self.outcome));
        }
        if self.confounders.len() != n_confounders {
            return fail(format!(
                "{} confounders, expected {n_confounders}",
                self.confounders.len()
            ));
        }
        if self.confounders.iter().any(|c| !c.is_finite()) {
            return fail("non-finite confounder".into());
        }
        if !self.location.x1.is_finite() || !self.location.x2.is_finite() {
            return fail("non-finite location".into());
        }
        Ok(())
    }
}

/// Subjects plus the names of their confounder columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub confounder_names: Vec<String>,
    pub subjects: Vec<Subject>,
}

impl Cohort {
    pub fn validate(&self) -> Result<(), ExposureError> {
        self.subjects
            .iter()
            .try_for_each(|s| s.validate(self.confounder_names.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WindowKind {
    Trimester1,
    Trimester2,
    Trimester3,
    Full,
    Last30Days,
}

impl WindowKind {
    pub const ALL: [WindowKind; 5] = [
        WindowKind::Trimester1,
        WindowKind::Trimester2,
        WindowKind::Trimester3,
        WindowKind::Full,
        WindowKind::Last30Days,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            WindowKind::Trimester1 => "t1",
            WindowKind::Trimester2 => "t2",
            WindowKind::Trimester3 => "t3",
            WindowKind::Full => "full",
            WindowKind::Last30Days => "last30",
        }
    }

    /// First and last gestational day (1-based, inclusive) for a gestation of `g` days.
    pub fn day_range(&self, g: u32) -> (u32, u32) {
        match self {
            WindowKind::Trimester1 => (1, 90.min(g)),
            WindowKind::Trimester2 => (91, 180.min(g)),
            WindowKind::Trimester3 => (181, g),
            WindowKind::Full => (1, g),
            WindowKind::Last30Days => (g.saturating_sub(29).max(1), g),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for WindowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WindowKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown window '{s}' (expected t1, t2, t3, full or last30)"))
    }
}

/// Calendar dates covered by a window; both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureWindow {
    pub kind: WindowKind,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl ExposureWindow {
    pub fn len(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start;
        (0..self.len() as i64).map(move |k| start + Duration::days(k))
    }
}

/// Gestational day `k` falls on `conception + k`, so day `g` is the birth date.
pub fn resolve_window(subject: &Subject, kind: WindowKind) -> Result<ExposureWindow, ExposureError> {
    let g = subject.gestation_days;
    let (first, last) = kind.day_range(g);
    if first > g {
        return Err(ExposureError::EmptyWindow {
            id: subject.id.clone(),
            kind,
            start: first,
            gestation: g,
        });
    }
    let conception = subject.conception();
    Ok(ExposureWindow {
        kind,
        start: conception + Duration::days(first as i64),
        end: conception + Duration::days(last as i64),
    })
}

/// Window averages of the three components at one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureTriple {
    pub mean_avg: f64,
    pub low_avg: f64,
    pub high_avg: f64,
    /// Average of the level-filtered spatial component, when the archive has one.
    pub filtered_avg: Option<f64>,
    pub days_covered: usize,
    pub days_missing: usize,
}

impl ExposureTriple {
    pub fn total(&self) -> f64 {
        self.mean_avg + self.low_avg + self.high_avg
    }
}

/// One day's components on the archive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DayExposure {
    pub mean: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub filtered: Option<Vec<f64>>,
}

/// Date-indexed daily components on a common grid.
#[derive(Debug, Clone)]
pub struct ExposureArchive {
    tree: KdTree,
    days: BTreeMap<NaiveDate, DayExposure>,
}

impl ExposureArchive {
    pub fn new(grid: &[SpatialPoint]) -> Result<Self, ExposureError> {
        if grid.is_empty() {
            return Err(ExposureError::EmptyGrid);
        }
        Ok(Self {
            tree: KdTree::new(grid),
            days: BTreeMap::new(),
        })
    }

    /// Builds from decomposed days that share one point set.
    pub fn from_decomposed(days: &[DecomposedSurface]) -> Result<Self, ExposureError> {
        let first = days
            .first()
            .ok_or_else(|| ExposureError::Archive("no decomposed days".into()))?;
        let mut archive = Self::new(&first.points)?;
        for d in days {
            if d.points != first.points {
                return Err(ExposureError::Archive(format!(
                    "{} uses a different point set",
                    d.date
                )));
            }
            archive.insert(
                d.date,
                DayExposure {
                    mean: d.mean,
                    low: d.low_values.clone(),
                    high: d.high_values.clone(),
                    filtered: None,
                },
            )?;
        }
        Ok(archive)
    }

    pub fn insert(&mut self, date: NaiveDate, day: DayExposure) -> Result<(), ExposureError> {
        let n = self.tree.len();
        let filtered_ok = day.filtered.as_ref().is_none_or(|f| f.len() == n);
        if day.low.len() != n || day.high.len() != n || !filtered_ok {
            return Err(ExposureError::Archive(format!(
                "{date}: component lengths differ from the grid size {n}"
            )));
        }
        self.days.insert(date, day);
        Ok(())
    }

    /// Attaches a level-filtered spatial component to an existing day.
    pub fn set_filtered(&mut self, date: NaiveDate, values: Vec<f64>) -> Result<(), ExposureError> {
        let n = self.tree.len();
        let day = self
            .days
            .get_mut(&date)
            .ok_or_else(|| ExposureError::Archive(format!("no day {date}")))?;
        if values.len() != n {
            return Err(ExposureError::Archive(format!(
                "{date}: filtered component has {} values for {n} cells",
                values.len()
            )));
        }
        day.filtered = Some(values);
        Ok(())
    }

    pub fn clear_filtered(&mut self) {
        self.days.values_mut().for_each(|d| d.filtered = None);
    }

    pub fn grid(&self) -> &[SpatialPoint] {
        self.tree.points()
    }

    pub fn day(&self, date: NaiveDate) -> Option<&DayExposure> {
        self.days.get(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = &NaiveDate> {
        self.days.keys()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn nearest_cell(&self, location: SpatialPoint, max_distance: f64) -> Option<(usize, f64)> {
        let (i, d2) = self.tree.nearest(location)?;
        let d = d2.sqrt();
        (d <= max_distance).then_some((i, d))
    }
}

/// Index of the Euclidean-nearest grid point (lowest index on ties).
pub fn nearest_cell(
    location: SpatialPoint,
    grid: &[SpatialPoint],
    max_distance: f64,
) -> Result<usize, ExposureError> {
    let tree = KdTree::new(grid);
    let (i, d2) = tree.nearest(location).ok_or(ExposureError::EmptyGrid)?;
    let d = d2.sqrt();
    if d > max_distance {
        return Err(ExposureError::Unassignable {
            id: String::new(),
            distance: d,
            limit: max_distance,
        });
    }
    Ok(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub min_coverage: f64,
    pub max_distance: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            min_coverage: DEFAULT_MIN_COVERAGE,
            max_distance: f64::INFINITY,
        }
    }
}

/// Averages the components at the subject's cell over the window's days.
pub fn aggregate(
    subject: &Subject,
    window: &ExposureWindow,
    archive: &ExposureArchive,
    opts: &AggregateOptions,
) -> Result<ExposureTriple, ExposureError> {
    let (cell, _) = archive
        .nearest_cell(subject.location, opts.max_distance)
        .ok_or_else(|| {
            let d = archive
                .tree
                .nearest(subject.location)
                .map_or(f64::INFINITY, |(_, d2)| d2.sqrt());
            ExposureError::Unassignable {
                id: subject.id.clone(),
                distance: d,
                limit: opts.max_distance,
            }
        })?;
    aggregate_cell(&subject.id, cell, window, archive, opts)
}

fn aggregate_cell(
    id: &str,
    cell: usize,
    window: &ExposureWindow,
    archive: &ExposureArchive,
    opts: &AggregateOptions,
) -> Result<ExposureTriple, ExposureError> {
    let mut missing = Vec::new();
    let (mut m, mut l, mut h, mut f) = (0.0, 0.0, 0.0, 0.0);
    let mut covered = 0usize;
    let mut all_filtered = true;
    for date in window.dates() {
        match archive.days.get(&date) {
            Some(day) => {
                covered += 1;
                m += day.mean;
                l += day.low[cell];
                h += day.high[cell];
                match &day.filtered {
                    Some(v) => f += v[cell],
                    None => all_filtered = false,
                }
            }
            None => missing.push(date),
        }
    }
    let length = window.len();
    if covered == 0 || (covered as f64) < opts.min_coverage * length as f64 {
        return Err(ExposureError::InsufficientCoverage {
            id: id.to_string(),
            covered,
            length,
            missing,
        });
    }
    let c = covered as f64;
    Ok(ExposureTriple {
        mean_avg: m / c,
        low_avg: l / c,
        high_avg: h / c,
        filtered_avg: all_filtered.then_some(f / c),
        days_covered: covered,
        days_missing: missing.len(),
    })
}

/// One subject's exposure for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub id: String,
    pub window: WindowKind,
    pub triple: ExposureTriple,
}

/// Exposures for every subject, in subject order. The first failing
/// subject aborts the run.
pub fn compute_exposures(
    subjects: &[Subject],
    kind: WindowKind,
    archive: &ExposureArchive,
    opts: &AggregateOptions,
) -> Result<Vec<ExposureRecord>, ExposureError> {
    subjects
        .par_iter()
        .map(|s| {
            let w = resolve_window(s, kind)?;
            let triple = aggregate(s, &w, archive, opts)?;
            Ok(ExposureRecord {
                id: s.id.clone(),
                window: kind,
                triple,
            })
        })
        .collect()
}
