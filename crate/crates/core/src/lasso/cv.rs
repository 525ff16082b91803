use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::solver::{solve_path, PreparedDesign};
use super::{LassoError, LassoOptions, LassoProblem, LassoSolution};
use crate::sparse::CsrMatrix;

/// Penalty grid and fold settings for cross-validation.
#[derive(Debug, Clone, Copy)]
pub struct CvOptions {
    pub folds: usize,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Strictly decreasing penalty grid built from the full data.
    pub lambdas: Vec<f64>,
    pub mean_mse: Vec<f64>,
    pub se_mse: Vec<f64>,
    pub selected_index: usize,
    pub selected_lambda: f64,
    pub folds: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Log-spaced grid from `lambda_max` down to `lambda_max * ratio`.
pub(crate) fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n)
        .map(|k| lambda_max * (step * k as f64).exp())
        .collect()
}

fn validate_grid(n_lambdas: usize, ratio: f64) -> Result<(), LassoError> {
    if n_lambdas == 0 {
        return Err(LassoError::InvalidInput(
            "penalty grid needs at least one value".into(),
        ));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(LassoError::InvalidInput(format!(
            "lambda ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

pub fn path(
    problem: &LassoProblem<'_>,
    n_lambdas: usize,
    ratio: f64,
) -> Result<Vec<LassoSolution>, LassoError> {
    path_with(problem, n_lambdas, ratio, &LassoOptions::default())
}

/// Solutions along a log grid from `lambda_max`, each warm-started from the previous.
pub fn path_with(
    problem: &LassoProblem<'_>,
    n_lambdas: usize,
    ratio: f64,
    opts: &LassoOptions,
) -> Result<Vec<LassoSolution>, LassoError> {
    problem.validate()?;
    validate_grid(n_lambdas, ratio)?;
    let prep = PreparedDesign::new(problem.design, problem.standardize);
    let lmax = prep.lambda_max(problem.response);
    if lmax == 0.0 {
        return Err(LassoError::DegenerateResponse);
    }
    path_on_grid(
        &prep,
        problem.response,
        &lambda_grid(lmax, n_lambdas, ratio),
        opts,
    )
}

pub fn path_on_grid(
    prep: &PreparedDesign,
    y: &[f64],
    grid: &[f64],
    opts: &LassoOptions,
) -> Result<Vec<LassoSolution>, LassoError> {
    solve_path(prep, y, grid, opts)
}

pub fn cv_select(
    problem: &LassoProblem<'_>,
    folds: usize,
    seed: u64,
) -> Result<CvResult, LassoError> {
    let cv = CvOptions {
        folds,
        seed,
        ..CvOptions::default()
    };
    cv_select_with(problem, &cv, &LassoOptions::default())
}

/// K-fold cross-validation over the full-data penalty grid.
///
/// Rows are assigned to folds by position in a seeded permutation. The
/// selected penalty minimizes mean held-out squared error; ties go to the
/// larger penalty.
pub fn cv_select_with(
    problem: &LassoProblem<'_>,
    cv: &CvOptions,
    opts: &LassoOptions,
) -> Result<CvResult, LassoError> {
    problem.validate()?;
    let full = PreparedDesign::new(problem.design, problem.standardize);
    let plan = CvPlan::new(problem.design, problem.standardize, cv.folds, cv.seed)?;
    plan.select(&full, problem.design, problem.response, cv, opts)
}

/// Fold assignment and prepared training designs, reusable for any
/// response observed on the same rows.
#[derive(Debug, Clone)]
pub struct CvPlan {
    folds: usize,
    seed: u64,
    assignment: Vec<usize>,
    train: Vec<PreparedDesign>,
}

impl CvPlan {
    pub fn new(
        design: &CsrMatrix,
        standardize: bool,
        folds: usize,
        seed: u64,
    ) -> Result<Self, LassoError> {
        let n = design.n_rows();
        if folds < 2 || folds > n {
            return Err(LassoError::InvalidInput(format!(
                "fold count must lie in 2..={n}, got {folds}"
            )));
        }
        let assignment = fold_assignment(n, folds, seed);
        let train = (0..folds)
            .into_par_iter()
            .map(|f| {
                let rows: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
                PreparedDesign::new(&design.select_rows(&rows), standardize)
            })
            .collect();
        Ok(Self {
            folds,
            seed,
            assignment,
            train,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Runs the fold paths for response `y`. `full` must be prepared from
    /// `design` and `design` must be the matrix this plan was built from.
    pub fn select(
        &self,
        full: &PreparedDesign,
        design: &CsrMatrix,
        y: &[f64],
        cv: &CvOptions,
        opts: &LassoOptions,
    ) -> Result<CvResult, LassoError> {
        validate_grid(cv.n_lambdas, cv.lambda_min_ratio)?;
        let n = y.len();
        if n != self.assignment.len() || design.n_rows() != n || full.n_rows() != n {
            return Err(LassoError::InvalidInput(
                "response, design and fold plan disagree in length".into(),
            ));
        }
        let lmax = full.lambda_max(y);
        if lmax == 0.0 {
            return Err(LassoError::DegenerateResponse);
        }
        let grid = lambda_grid(lmax, cv.n_lambdas, cv.lambda_min_ratio);

        type FoldOutcome = Result<(Vec<f64>, Option<String>), LassoError>;
        let per_fold: Vec<FoldOutcome> = (0..self.folds)
            .into_par_iter()
            .map(|f| {
                let (train, test): (Vec<usize>, Vec<usize>) =
                    (0..n).partition(|&i| self.assignment[i] != f);
                let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let first = y_train[0];
                let warning = y_train
                    .iter()
                    .all(|v| *v == first)
                    .then(|| format!("fold {f}: training response has zero variance"));
                let sols = path_on_grid(&self.train[f], &y_train, &grid, opts)?;
                let mse = sols
                    .iter()
                    .map(|s| {
                        let sse: f64 = test
                            .iter()
                            .map(|&i| {
                                let (idx, vals) = design.row(i);
                                let pred = s.intercept
                                    + idx
                                        .iter()
                                        .zip(vals)
                                        .map(|(&c, v)| v * s.coefficients[c as usize])
                                        .sum::<f64>();
                                (y[i] - pred).powi(2)
                            })
                            .sum();
                        sse / test.len() as f64
                    })
                    .collect();
                Ok((mse, warning))
            })
            .collect();

        let mut fold_mse = Vec::with_capacity(self.folds);
        let mut warnings = Vec::new();
        for r in per_fold {
            let (mse, w) = r?;
            fold_mse.push(mse);
            warnings.extend(w);
        }
        let k = self.folds as f64;
        let mut mean_mse = Vec::with_capacity(grid.len());
        let mut se_mse = Vec::with_capacity(grid.len());
        for l in 0..grid.len() {
            let vals: Vec<f64> = fold_mse.iter().map(|m| m[l]).collect();
            let mean = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            mean_mse.push(mean);
            se_mse.push((var / k).sqrt());
        }
        let mut selected_index = 0;
        for (l, m) in mean_mse.iter().enumerate() {
            if *m < mean_mse[selected_index] {
                selected_index = l;
            }
        }
        Ok(CvResult {
            selected_lambda: grid[selected_index],
            lambdas: grid,
            mean_mse,
            se_mse,
            selected_index,
            folds: self.folds,
            seed: self.seed,
            warnings,
        })
    }
}

/// Fold label of each row: position in a seeded permutation, modulo `folds`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        out[row] = pos % folds;
    }
    out
}
