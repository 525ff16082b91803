//! Oracles shared by several test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spatial_mra::health_model::FixedDesign;

pub fn random_dense(rng: &mut ChaCha8Rng, n: usize, p: usize, density: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    if rng.gen::<f64>() < density {
                        rng.gen_range(-2.0..2.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Exhaustive search over sign patterns on the standardized problem.
/// Returns original-scale coefficients of the unique pattern that satisfies
/// the subgradient conditions with the lowest objective.
pub fn enumeration_oracle(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let n = rows.len();
    let p = rows[0].len();
    let nf = n as f64;
    let mut z = DMatrix::<f64>::zeros(n, p);
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / nf;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / nf).sqrt();
        scale[j] = sd;
        for i in 0..n {
            z[(i, j)] = (rows[i][j] - mean) / sd;
        }
    }
    let ym = y.iter().sum::<f64>() / nf;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(p as u32) {
        let mut c = code;
        let signs: Vec<f64> = (0..p)
            .map(|_| {
                let s = (c % 3) as f64 - 1.0;
                c /= 3;
                s
            })
            .collect();
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        let mut beta = DVector::<f64>::zeros(p);
        if !active.is_empty() {
            let za = z.select_columns(&active);
            let g = za.transpose() * &za / nf;
            let s = DVector::from_iterator(active.len(), active.iter().map(|&j| signs[j]));
            let rhs = za.transpose() * &yc / nf - s * lambda;
            let Some(sol) = g.lu().solve(&rhs) else {
                continue;
            };
            for (a, &j) in active.iter().enumerate() {
                beta[j] = sol[a];
            }
        }
        let ok_sign = active.iter().all(|&j| beta[j] * signs[j] > 0.0);
        let resid = &yc - &z * &beta;
        let grad = z.transpose() * &resid / nf;
        let ok_inactive = (0..p)
            .filter(|j| signs[*j] == 0.0)
            .all(|j| grad[j].abs() <= lambda + 1e-12);
        if !(ok_sign && ok_inactive) {
            continue;
        }
        let obj = resid.norm_squared() / (2.0 * nf) + lambda * beta.abs().sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, beta));
        }
    }
    let beta = best.expect("some sign pattern is optimal").1;
    (0..p).map(|j| beta[j] / scale[j]).collect()
}

pub fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).unwrap().sample(rng)
}

pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let xt = x.transpose();
    (&xt * x)
        .cholesky()
        .unwrap()
        .solve(&(&xt * DVector::from_column_slice(y)))
}

/// Random-intercept data with one standard-normal covariate.
pub fn simulate_lmm(
    rng: &mut ChaCha8Rng,
    groups: usize,
    size: usize,
    beta: [f64; 2],
    sb: f64,
    se: f64,
) -> (Vec<f64>, FixedDesign, Vec<usize>) {
    let n = groups * size;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for j in 0..groups {
        let b = normal(rng, sb);
        for _ in 0..size {
            let xi = 10.0 + normal(rng, 3.0);
            x.push(xi);
            y.push(beta[0] + beta[1] * xi + b + normal(rng, se));
            g.push(j);
        }
    }
    let design = FixedDesign::from_columns(vec![
        ("intercept".into(), vec![1.0; n]),
        ("x".into(), x),
    ])
    .unwrap();
    (y, design, g)
}

/// Orthogonal projection residual of `e` against the columns of `basis`.
pub fn project_out(basis: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    let svd = basis.clone().svd(true, false);
    let u = svd.u.unwrap();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-9).count();
    let u = u.columns(0, rank);
    e - u * (u.transpose() * e)
}
