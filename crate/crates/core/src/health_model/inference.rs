use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::{LmmFit, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiTable {
    pub rows: Vec<CiRow>,
    pub family_size: usize,
    pub alpha: f64,
    /// Normal quantile used for every interval.
    pub quantile: f64,
}

/// Standard normal quantile `q` with `P(Z <= q) = p`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// Wald intervals at level `1 - alpha / m` for the `m` coefficients in `family`.
pub fn bonferroni_ci(fit: &LmmFit, family: &[String], alpha: f64) -> Result<CiTable, ModelError> {
    if family.is_empty() {
        return Err(ModelError::InvalidInput("empty coefficient family".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ModelError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = family.len();
    let q = normal_quantile(1.0 - alpha / (2.0 * m as f64));
    let rows = family
        .iter()
        .map(|name| {
            let i = fit
                .index(name)
                .ok_or_else(|| ModelError::InvalidInput(format!("no coefficient '{name}'")))?;
            let estimate = fit.fixed_effects[i];
            let se = fit.covariance[i][i].max(0.0).sqrt();
            Ok(CiRow {
                name: name.clone(),
                estimate,
                std_error: se,
                lower: estimate - q * se,
                upper: estimate + q * se,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(CiTable {
        rows,
        family_size: m,
        alpha,
        quantile: q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Wald test of `beta_a - beta_b = 0` with a two-sided normal p-value.
pub fn contrast_test(fit: &LmmFit, a: &str, b: &str) -> Result<ContrastResult, ModelError> {
    let find = |n: &str| {
        fit.index(n)
            .ok_or_else(|| ModelError::InvalidInput(format!("no coefficient '{n}'")))
    };
    let (i, j) = (find(a)?, find(b)?);
    let estimate = fit.fixed_effects[i] - fit.fixed_effects[j];
    let var = fit.covariance[i][i] + fit.covariance[j][j] - 2.0 * fit.covariance[i][j];
    let std_error = var.max(0.0).sqrt();
    let z = if std_error > 0.0 { estimate / std_error } else { 0.0 };
    Ok(ContrastResult {
        estimate,
        std_error,
        z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}
