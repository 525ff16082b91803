//! L1-penalized least squares with an unpenalized intercept.
//!
//! The objective is `(1/2n) * ||y - b0 - X b||^2 + lambda * ||b||_1` with the
//! penalty applied to coefficients of the standardized columns (mean 0,
//! variance 1 under the `1/n` convention). Coefficients are reported on the
//! original column scale.

mod cv;
mod solver;

pub use cv::{
    cv_select, cv_select_with, fold_assignment, path, path_on_grid, path_with, CvOptions, CvPlan,
    CvResult,
};
pub use solver::{
    fit, fit_prepared, fit_with, kkt_check, shifted_mean, KktReport, PreparedDesign,
};

use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone)]
pub enum LassoError {
    #[error("invalid problem: {0}")]
    InvalidInput(String),
    #[error("no convergence at lambda = {lambda:e} after {sweeps} sweeps")]
    NotConverged {
        lambda: f64,
        sweeps: usize,
        last: Box<LassoSolution>,
    },
    #[error("response has zero variance; the penalty grid is empty")]
    DegenerateResponse,
}

/// A penalized least-squares problem over a sparse design.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub design: &'a CsrMatrix,
    pub response: &'a [f64],
    pub lambda: f64,
    pub standardize: bool,
}

impl<'a> LassoProblem<'a> {
    pub fn new(design: &'a CsrMatrix, response: &'a [f64], lambda: f64) -> Self {
        Self {
            design,
            response,
            lambda,
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<(), LassoError> {
        if self.response.len() != self.design.n_rows() {
            return Err(LassoError::InvalidInput(format!(
                "response has {} entries but the design has {} rows",
                self.response.len(),
                self.design.n_rows()
            )));
        }
        if self.response.is_empty() {
            return Err(LassoError::InvalidInput("empty response".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(LassoError::InvalidInput(format!(
                "penalty must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if let Some(i) = self.response.iter().position(|v| !v.is_finite()) {
            return Err(LassoError::InvalidInput(format!(
                "non-finite response at row {i}"
            )));
        }
        Ok(())
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    /// Convergence threshold on the largest standardized coefficient change in a sweep.
    pub tolerance: f64,
    /// Cap on coordinate-descent sweeps (full and active-set sweeps both count).
    pub max_sweeps: usize,
    /// Active-set sweeps between attempts at an exact solve on the current support.
    pub polish_interval: usize,
    /// Skip the exact solve when `|A| * nnz(A)` exceeds this.
    pub polish_budget: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_sweeps: 10_000,
            polish_interval: 10,
            polish_budget: 400_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub intercept: f64,
    /// Coefficients on the original column scale.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective (standardized scale) after each sweep.
    pub objective_history: Vec<f64>,
}

impl LassoSolution {
    pub fn active_set(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// `b0 + X b` for every row of `design`.
    pub fn predict(&self, design: &CsrMatrix) -> Result<Vec<f64>, LassoError> {
        let xb = design
            .mul_vec(&self.coefficients)
            .map_err(|e| LassoError::InvalidInput(e.to_string()))?;
        Ok(xb.into_iter().map(|v| v + self.intercept).collect())
    }
}
