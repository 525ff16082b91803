use nalgebra::DMatrix;

use super::ModelError;

/// Natural cubic spline basis with `df` centered columns.
///
/// Uses `df + 1` knots at equally spaced quantiles of `x` (the extremes are
/// the boundary knots) and the truncated-power construction, which is
/// linear beyond the boundary knots. `x` is rescaled to `[0, 1]` first.
pub fn spline_basis(x: &[f64], df: usize) -> Result<DMatrix<f64>, ModelError> {
    if df < 3 {
        return Err(ModelError::InvalidInput(format!("spline needs df >= 3, got {df}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidInput("non-finite spline input".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= df {
        return Err(ModelError::InvalidInput(format!(
            "{} distinct values cannot support {df} spline degrees of freedom",
            distinct.len()
        )));
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let scale = |v: f64| (v - lo) / (hi - lo);
    let knots: Vec<f64> = (0..=df)
        .map(|k| scale(quantile(&sorted, k as f64 / df as f64)))
        .collect();
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ModelError::InvalidInput(
            "spline knots coincide; the input has too few distinct values".into(),
        ));
    }
    let last = knots[df];
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let dk = |u: f64, k: usize| (cube(u - knots[k]) - cube(u - last)) / (last - knots[k]);
    let n = x.len();
    let mut m = DMatrix::<f64>::zeros(n, df);
    for (i, &v) in x.iter().enumerate() {
        let u = scale(v);
        m[(i, 0)] = u;
        let tail = dk(u, df - 1);
        for k in 0..df - 1 {
            m[(i, k + 1)] = dk(u, k) - tail;
        }
    }
    for mut col in m.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(m)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Four degrees of freedom per year of span, at least three.
pub fn default_spline_df(days: &[f64]) -> usize {
    let (lo, hi) = days
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(hi > lo) {
        return 3;
    }
    ((4.0 * (hi - lo) / 365.25).round() as usize).max(3)
}
