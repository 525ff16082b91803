//! Per-day split of a surface into a temporal mean, a low-frequency spatial
//! component and a high-frequency remainder.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design2d::{
    build_design_for_points, classify_column, fit_affine_map, fit_periodic_map, AffineMap, Band,
    ColumnIndex, DailySurface, DesignError, DesignOptions, SpatialPoint, SparseDesign,
    DEFAULT_MEMORY_CAP,
};
use crate::lasso::{
    fit_prepared, path_on_grid, CvOptions, CvPlan, LassoError, LassoOptions, LassoSolution,
    PreparedDesign,
};
use crate::wavelet_basis::{daubechies_filter, BasisError, PeriodizedBasis, DEFAULT_DEPTH};

pub const MAX_LEVELS: u32 = 8;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("{date}: {source}")]
    Lasso {
        date: NaiveDate,
        #[source]
        source: LassoError,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How the penalty is chosen for each day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyRule {
    /// K-fold cross-validation over a log grid.
    CrossValidated,
    /// One penalty for every day.
    Fixed(f64),
    /// A fixed fraction of each day's `lambda_max`.
    FractionOfMax(f64),
}

impl std::fmt::Display for PenaltyRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PenaltyRule::CrossValidated => write!(f, "cv"),
            PenaltyRule::Fixed(l) => write!(f, "fixed:{l}"),
            PenaltyRule::FractionOfMax(v) => write!(f, "fraction:{v}"),
        }
    }
}

/// Parses `cv`, `fixed:<lambda>` or `fraction:<f>`.
impl std::str::FromStr for PenaltyRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad penalty '{s}' (cv, fixed:<l> or fraction:<f>)");
        match s.trim().split_once(':') {
            None if s.trim() == "cv" => Ok(PenaltyRule::CrossValidated),
            Some(("fixed", v)) => Ok(PenaltyRule::Fixed(v.trim().parse().map_err(|_| bad())?)),
            Some(("fraction", v)) => Ok(PenaltyRule::FractionOfMax(v.trim().parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

/// How coordinates are mapped onto the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainRule {
    /// Exact bounding box of the day's points.
    MinMax,
    /// Bounding box padded by one mean coordinate gap (regular grids).
    Periodic,
    Fixed(AffineMap),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub levels: u32,
    pub low_cutoff: u32,
    pub order: usize,
    pub depth: u32,
    pub folds: usize,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub penalty: PenaltyRule,
    pub domain: DomainRule,
    pub seed: u64,
    pub workers: usize,
    pub standardize: bool,
    pub memory_cap: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        let solver = LassoOptions::default();
        Self {
            levels: 7,
            low_cutoff: 3,
            order: 5,
            depth: DEFAULT_DEPTH,
            folds: 10,
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            penalty: PenaltyRule::CrossValidated,
            domain: DomainRule::MinMax,
            seed: 0,
            workers: 1,
            standardize: true,
            memory_cap: DEFAULT_MEMORY_CAP,
            tolerance: solver.tolerance,
            max_sweeps: solver.max_sweeps,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        let bad = |m: String| Err(DecomposeError::Config(m));
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return bad(format!("levels must lie in 1..={MAX_LEVELS}, got {}", self.levels));
        }
        if self.low_cutoff == 0 || self.low_cutoff > self.levels {
            return bad(format!(
                "low cutoff must lie in 1..={}, got {}",
                self.levels, self.low_cutoff
            ));
        }
        if self.workers == 0 {
            return bad("worker count must be positive".into());
        }
        if self.penalty == PenaltyRule::CrossValidated {
            if self.folds < 2 {
                return bad(format!("need at least 2 folds, got {}", self.folds));
            }
            if self.n_lambdas == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0)
            {
                return bad("penalty grid needs n_lambdas >= 1 and a ratio in (0, 1)".into());
            }
        }
        match self.penalty {
            PenaltyRule::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                bad(format!("fixed penalty must be finite and nonnegative, got {l}"))
            }
            PenaltyRule::FractionOfMax(f) if !(f > 0.0 && f.is_finite()) => {
                bad(format!("penalty fraction must be positive, got {f}"))
            }
            _ => Ok(()),
        }
    }

    fn solver(&self) -> LassoOptions {
        LassoOptions {
            tolerance: self.tolerance,
            max_sweeps: self.max_sweeps,
            ..LassoOptions::default()
        }
    }

    fn cv(&self) -> CvOptions {
        CvOptions {
            folds: self.folds,
            n_lambdas: self.n_lambdas,
            lambda_min_ratio: self.lambda_min_ratio,
            seed: self.seed,
        }
    }
}

/// One decomposed day. Values are aligned with `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedSurface {
    pub date: NaiveDate,
    pub points: Vec<SpatialPoint>,
    pub observed: Vec<f64>,
    pub mean: f64,
    pub coefficients: LassoSolution,
    pub low_values: Vec<f64>,
    pub high_values: Vec<f64>,
    pub selected_lambda: f64,
    pub lambda_max: f64,
    pub cv_warnings: Vec<String>,
}

impl DecomposedSurface {
    /// `mean + low + high` at every point.
    pub fn total(&self) -> Vec<f64> {
        self.low_values
            .iter()
            .zip(&self.high_values)
            .map(|(l, h)| self.mean + l + h)
            .collect()
    }
}

/// Levels removed from the spatial component.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LevelFilterSpec {
    dropped: BTreeSet<u32>,
}

impl LevelFilterSpec {
    pub fn new(dropped: impl IntoIterator<Item = u32>, levels: u32) -> Result<Self, DecomposeError> {
        let dropped: BTreeSet<u32> = dropped.into_iter().collect();
        if let Some(l) = dropped.iter().find(|l| **l == 0 || **l > levels) {
            return Err(DecomposeError::Config(format!(
                "dropped level {l} outside 1..={levels}"
            )));
        }
        Ok(Self { dropped })
    }

    /// Drops every level finer than `keep`.
    pub fn keep_up_to(keep: u32, levels: u32) -> Result<Self, DecomposeError> {
        Self::new(keep + 1..=levels, levels)
    }

    pub fn dropped(&self) -> &BTreeSet<u32> {
        &self.dropped
    }

    /// A column is removed when either direction uses a dropped level.
    pub fn keeps(&self, col: &ColumnIndex) -> bool {
        !self.dropped.contains(&col.level_x1) && !self.dropped.contains(&col.level_x2)
    }
}

/// `intercept + sum over kept columns of theta_j x_j`.
pub fn reconstruct(
    coefficients: &LassoSolution,
    keep: impl Fn(&ColumnIndex) -> bool,
    design: &SparseDesign,
) -> Result<Vec<f64>, DecomposeError> {
    let partial = partial_sum(coefficients, keep, design)?;
    Ok(partial.into_iter().map(|v| v + coefficients.intercept).collect())
}

fn partial_sum(
    coefficients: &LassoSolution,
    keep: impl Fn(&ColumnIndex) -> bool,
    design: &SparseDesign,
) -> Result<Vec<f64>, DecomposeError> {
    if coefficients.coefficients.len() != design.n_cols() {
        return Err(DecomposeError::Dimension(format!(
            "{} coefficients for {} design columns",
            coefficients.coefficients.len(),
            design.n_cols()
        )));
    }
    let masked: Vec<f64> = coefficients
        .coefficients
        .iter()
        .zip(design.columns())
        .map(|(c, col)| if keep(col) { *c } else { 0.0 })
        .collect();
    design
        .matrix()
        .mul_vec(&masked)
        .map_err(|e| DecomposeError::Dimension(e.to_string()))
}

/// Spatial component with the given levels removed, recentered to mean zero.
///
/// The LASSO residual is attributed to the finest level: it is kept unless
/// level `L` is dropped.
pub fn filter_levels(
    decomposed: &DecomposedSurface,
    spec: &LevelFilterSpec,
    design: &SparseDesign,
) -> Result<Vec<f64>, DecomposeError> {
    if design.n_rows() != decomposed.observed.len() {
        return Err(DecomposeError::Dimension(format!(
            "{} design rows for {} observations",
            design.n_rows(),
            decomposed.observed.len()
        )));
    }
    let kept = partial_sum(&decomposed.coefficients, |c| spec.keeps(c), design)?;
    let mut out = kept;
    if !spec.dropped.contains(&design.levels()) {
        let fitted = reconstruct(&decomposed.coefficients, |_| true, design)?;
        for ((o, y), f) in out.iter_mut().zip(&decomposed.observed).zip(&fitted) {
            *o += y - f;
        }
    }
    recenter(&mut out);
    Ok(out)
}

fn recenter(v: &mut [f64]) {
    let m = crate::lasso::shifted_mean(v);
    v.iter_mut().for_each(|x| *x -= m);
}

/// Design, prepared columns and fold plan for one set of points.
pub struct GridCache {
    points: Vec<SpatialPoint>,
    design: SparseDesign,
    prepared: PreparedDesign,
    plan: Option<CvPlan>,
}

impl GridCache {
    pub fn design(&self) -> &SparseDesign {
        &self.design
    }

    pub fn points(&self) -> &[SpatialPoint] {
        &self.points
    }
}

/// Holds the basis and per-grid designs so repeated days on the same
/// points share assembly work.
pub struct Decomposer {
    config: DecompositionConfig,
    basis: PeriodizedBasis,
}

impl Decomposer {
    pub fn new(config: DecompositionConfig) -> Result<Self, DecomposeError> {
        config.validate()?;
        let filter = daubechies_filter(config.order)?;
        let basis = PeriodizedBasis::new(&filter, config.levels, config.depth)?;
        Ok(Self { config, basis })
    }

    pub fn config(&self) -> &DecompositionConfig {
        &self.config
    }

    pub fn basis(&self) -> &PeriodizedBasis {
        &self.basis
    }

    pub fn domain_map(&self, points: &[SpatialPoint]) -> Result<AffineMap, DecomposeError> {
        Ok(match self.config.domain {
            DomainRule::MinMax => fit_affine_map(points)?,
            DomainRule::Periodic => fit_periodic_map(points)?,
            DomainRule::Fixed(m) => m,
        })
    }

    pub fn prepare_grid(&self, points: &[SpatialPoint]) -> Result<GridCache, DecomposeError> {
        let map = self.domain_map(points)?;
        let opts = DesignOptions {
            memory_cap: self.config.memory_cap,
            ..DesignOptions::default()
        };
        let design = build_design_for_points(points, &self.basis, &map, opts)?;
        let prepared = PreparedDesign::new(design.matrix(), self.config.standardize);
        let plan = match self.config.penalty {
            PenaltyRule::CrossValidated => Some(
                CvPlan::new(
                    design.matrix(),
                    self.config.standardize,
                    self.config.folds,
                    self.config.seed,
                )
                .map_err(|e| DecomposeError::Config(e.to_string()))?,
            ),
            _ => None,
        };
        Ok(GridCache {
            points: points.to_vec(),
            design,
            prepared,
            plan,
        })
    }

    pub fn decompose_day(&self, surface: &DailySurface) -> Result<DecomposedSurface, DecomposeError> {
        surface.validate()?;
        if is_constant(&surface.values) {
            return Ok(self.constant_day(surface));
        }
        let grid = self.prepare_grid(&surface.points)?;
        self.decompose_on(surface, &grid)
    }

    /// Decomposes a day whose points match `grid` exactly.
    pub fn decompose_on(
        &self,
        surface: &DailySurface,
        grid: &GridCache,
    ) -> Result<DecomposedSurface, DecomposeError> {
        surface.validate()?;
        if surface.points != grid.points {
            return Err(DecomposeError::Dimension(format!(
                "{}: surface points differ from the prepared grid",
                surface.date
            )));
        }
        if is_constant(&surface.values) {
            return Ok(self.constant_day(surface));
        }
        let date = surface.date;
        let lasso_err = |source| DecomposeError::Lasso { date, source };
        let y = &surface.values;
        let solver = self.config.solver();
        let lambda_max = grid.prepared.lambda_max(y);
        let mut cv_warnings = Vec::new();
        let solution = match self.config.penalty {
            PenaltyRule::CrossValidated => {
                let plan = grid.plan.as_ref().ok_or_else(|| {
                    DecomposeError::Config("grid was prepared without a fold plan".into())
                })?;
                let cv = plan
                    .select(&grid.prepared, grid.design.matrix(), y, &self.config.cv(), &solver)
                    .map_err(lasso_err)?;
                cv_warnings = cv.warnings.clone();
                let sols = path_on_grid(
                    &grid.prepared,
                    y,
                    &cv.lambdas[..=cv.selected_index],
                    &solver,
                )
                .map_err(lasso_err)?;
                sols.into_iter().last().expect("nonempty grid")
            }
            PenaltyRule::Fixed(lambda) => {
                fit_prepared(&grid.prepared, y, lambda, None, &solver).map_err(lasso_err)?
            }
            PenaltyRule::FractionOfMax(f) => {
                fit_prepared(&grid.prepared, y, f * lambda_max, None, &solver)
                    .map_err(lasso_err)?
            }
        };

        let mean = crate::lasso::shifted_mean(y);
        let cutoff = self.config.low_cutoff;
        let mut low = partial_sum(
            &solution,
            |c| classify_column(c, cutoff) == Band::Low,
            &grid.design,
        )?;
        recenter(&mut low);
        let high: Vec<f64> = y
            .iter()
            .zip(&low)
            .map(|(v, l)| v - mean - l)
            .collect();
        Ok(DecomposedSurface {
            date,
            points: surface.points.clone(),
            observed: y.clone(),
            mean,
            selected_lambda: solution.lambda,
            coefficients: solution,
            low_values: low,
            high_values: high,
            lambda_max,
            cv_warnings,
        })
    }

    fn constant_day(&self, surface: &DailySurface) -> DecomposedSurface {
        let n = surface.values.len();
        let k = self.basis.len();
        let mean = surface.values[0];
        DecomposedSurface {
            date: surface.date,
            points: surface.points.clone(),
            observed: surface.values.clone(),
            mean,
            coefficients: LassoSolution {
                intercept: mean,
                coefficients: vec![0.0; k * k - 1],
                lambda: 0.0,
                iterations: 0,
                converged: true,
                objective_history: Vec::new(),
            },
            low_values: vec![0.0; n],
            high_values: vec![0.0; n],
            selected_lambda: 0.0,
            lambda_max: 0.0,
            cv_warnings: Vec::new(),
        }
    }

    /// Decomposes many days, sharing designs between days on identical
    /// points. Output order follows input order; failed days are reported
    /// separately.
    pub fn decompose_batch(&self, surfaces: &[DailySurface]) -> Result<BatchOutcome, DecomposeError> {
        let mut seen = BTreeSet::new();
        for s in surfaces {
            if !seen.insert(s.date) {
                return Err(DecomposeError::Config(format!("duplicate date {}", s.date)));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| DecomposeError::Config(e.to_string()))?;
        pool.install(|| {
            let mut grid_of_day = Vec::with_capacity(surfaces.len());
            let mut grids: Vec<Arc<GridCache>> = Vec::new();
            let mut lookup: HashMap<Vec<u64>, usize> = HashMap::new();
            let mut failures = Vec::new();
            for s in surfaces {
                if let Err(e) = s.validate() {
                    grid_of_day.push(None);
                    failures.push(DayFailure {
                        date: s.date,
                        error: e.into(),
                    });
                    continue;
                }
                if is_constant(&s.values) {
                    grid_of_day.push(None);
                    continue;
                }
                let key = point_key(&s.points);
                let idx = match lookup.get(&key) {
                    Some(i) => *i,
                    None => {
                        let g = self.prepare_grid(&s.points)?;
                        grids.push(Arc::new(g));
                        lookup.insert(key, grids.len() - 1);
                        grids.len() - 1
                    }
                };
                grid_of_day.push(Some(idx));
            }
            let failed: BTreeSet<NaiveDate> = failures.iter().map(|f| f.date).collect();
            let results: Vec<Result<DecomposedSurface, DecomposeError>> = surfaces
                .par_iter()
                .zip(grid_of_day.par_iter())
                .filter(|(s, _)| !failed.contains(&s.date))
                .map(|(s, g)| match g {
                    Some(i) => self.decompose_on(s, &grids[*i]),
                    None => Ok(self.constant_day(s)),
                })
                .collect();
            let mut days = Vec::with_capacity(results.len());
            for (r, s) in results
                .into_iter()
                .zip(surfaces.iter().filter(|s| !failed.contains(&s.date)))
            {
                match r {
                    Ok(d) => days.push(d),
                    Err(error) => failures.push(DayFailure {
                        date: s.date,
                        error,
                    }),
                }
            }
            failures.sort_by_key(|f| f.date);
            Ok(BatchOutcome { days, failures })
        })
    }
}

fn point_key(points: &[SpatialPoint]) -> Vec<u64> {
    points
        .iter()
        .flat_map(|p| [p.x1.to_bits(), p.x2.to_bits()])
        .collect()
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

#[derive(Debug)]
pub struct DayFailure {
    pub date: NaiveDate,
    pub error: DecomposeError,
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// Successful days in input order.
    pub days: Vec<DecomposedSurface>,
    pub failures: Vec<DayFailure>,
}

pub fn decompose_day(
    surface: &DailySurface,
    config: &DecompositionConfig,
) -> Result<DecomposedSurface, DecomposeError> {
    Decomposer::new(config.clone())?.decompose_day(surface)
}

pub fn decompose_batch(
    surfaces: &[DailySurface],
    config: &DecompositionConfig,
) -> Result<BatchOutcome, DecomposeError> {
    Decomposer::new(config.clone())?.decompose_batch(surfaces)
}
