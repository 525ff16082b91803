use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;

pub const GAMMA_MAX: f64 = 1e6;
const GAMMA_MIN_GRID: f64 = 1e-10;
const LOG_TOLERANCE: f64 = 1e-9;

/// Fixed-effect design with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl FixedDesign {
    pub fn new(names: Vec<String>, matrix: DMatrix<f64>) -> Result<Self, ModelError> {
        if names.len() != matrix.ncols() {
            return Err(ModelError::InvalidInput(format!(
                "{} names for {} columns",
                names.len(),
                matrix.ncols()
            )));
        }
        Ok(Self { names, matrix })
    }

    /// Builds from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self, ModelError> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(ModelError::InvalidInput("columns differ in length".into()));
        }
        let p = columns.len();
        let matrix = DMatrix::from_fn(n, p, |i, j| columns[j].1[i]);
        Self::new(columns.into_iter().map(|c| c.0).collect(), matrix)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Dense group indices in order of first appearance.
pub fn group_indices<T: Hash + Eq + Clone>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut map: HashMap<T, usize> = HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.clone()).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub names: Vec<String>,
    pub fixed_effects: Vec<f64>,
    /// Row-major covariance of the fixed effects.
    pub covariance: Vec<Vec<f64>>,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    /// `sigma_b2 / sigma_e2` at the optimum.
    pub gamma: f64,
    pub reml_loglik: f64,
    pub n: usize,
    pub n_groups: usize,
    /// The optimum sits on an end of the search range.
    pub boundary: bool,
}

impl LmmFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.fixed_effects[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.covariance[i][i].sqrt())
    }
}

struct Group {
    n: f64,
    s: DVector<f64>,
    t: f64,
}

/// Per-group sufficient statistics; the REML criterion for any variance
/// ratio is evaluated from these alone.
pub struct RemlProfile {
    names: Vec<String>,
    n: usize,
    p: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    groups: Vec<Group>,
}

struct Evaluation {
    loglik: f64,
    derivative: f64,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    rss: f64,
}

impl RemlProfile {
    pub fn new(y: &[f64], design: &FixedDesign, groups: &[usize]) -> Result<Self, ModelError> {
        let x = &design.matrix;
        let (n, p) = x.shape();
        if y.len() != n || groups.len() != n {
            return Err(ModelError::InvalidInput(format!(
                "{} outcomes and {} group labels for {n} design rows",
                y.len(),
                groups.len()
            )));
        }
        if n <= p {
            return Err(ModelError::InvalidInput(format!("{n} rows for {p} fixed effects")));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("non-finite data".into()));
        }
        check_rank(design)?;
        let n_groups = groups.iter().max().map_or(0, |m| m + 1);
        let mut gs: Vec<Group> = (0..n_groups)
            .map(|_| Group {
                n: 0.0,
                s: DVector::zeros(p),
                t: 0.0,
            })
            .collect();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut yty = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let g = &mut gs[groups[i]];
            g.n += 1.0;
            g.t += y[i];
            for a in 0..p {
                g.s[a] += row[a];
                xty[a] += row[a] * y[i];
                for b in a..p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
            yty += y[i] * y[i];
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        gs.retain(|g| g.n > 0.0);
        if gs.len() < 2 {
            return Err(ModelError::Unidentified(
                "fewer than two groups; the group variance is confounded with the intercept".into(),
            ));
        }
        if gs.iter().all(|g| g.n == 1.0) {
            return Err(ModelError::Unidentified(
                "every group has one observation; group and residual variances cannot be separated"
                    .into(),
            ));
        }
        Ok(Self {
            names: design.names.clone(),
            n,
            p,
            xtx,
            xty,
            yty,
            groups: gs,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Restricted log-likelihood with `beta` and `sigma_e^2` profiled out.
    pub fn loglik(&self, gamma: f64) -> f64 {
        self.evaluate(gamma).map_or(f64::NEG_INFINITY, |e| e.loglik)
    }

    /// Derivative of [`Self::loglik`] with respect to `gamma`.
    pub fn derivative(&self, gamma: f64) -> f64 {
        self.evaluate(gamma).map_or(f64::NAN, |e| e.derivative)
    }

    fn evaluate(&self, gamma: f64) -> Option<Evaluation> {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut rss = self.yty;
        let mut log_h = 0.0;
        let mut trace_h = 0.0;
        for g in &self.groups {
            let d = 1.0 + gamma * g.n;
            let w = gamma / d;
            a.syger(-w, &g.s, &g.s, 1.0);
            b.axpy(-w * g.t, &g.s, 1.0);
            rss -= w * g.t * g.t;
            log_h += d.ln();
            trace_h += g.n / d;
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        rss -= b.dot(&beta);
        if !(rss > 0.0) {
            return None;
        }
        let a_inv = chol.inverse();
        let log_det_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dof = (self.n - self.p) as f64;
        let loglik = -0.5
            * (dof * (rss / dof).ln()
                + log_h
                + log_det_a
                + dof * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        let mut d_rss = 0.0;
        let mut d_logdet = 0.0;
        for g in &self.groups {
            let dw = 1.0 / (1.0 + gamma * g.n).powi(2);
            let r = g.t - g.s.dot(&beta);
            d_rss -= dw * r * r;
            d_logdet -= dw * (&a_inv * &g.s).dot(&g.s);
        }
        let derivative = -0.5 * (dof * d_rss / rss + trace_h + d_logdet);
        Some(Evaluation {
            loglik,
            derivative,
            beta,
            a_inv,
            rss,
        })
    }

    /// Maximizes the criterion over `gamma` in `[0, GAMMA_MAX]`.
    pub fn fit(&self) -> Result<LmmFit, ModelError> {
        let f = |x: f64| self.loglik(x.exp());
        let lo = GAMMA_MIN_GRID.ln();
        let hi = GAMMA_MAX.ln();
        let steps = 96;
        let grid: Vec<f64> = (0..=steps)
            .map(|k| lo + (hi - lo) * k as f64 / steps as f64)
            .collect();
        let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        let (best, _) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        if !values[best].is_finite() {
            return Err(ModelError::Optimizer("criterion is not finite on the search grid".into()));
        }
        let at_zero = self.loglik(0.0);
        let (gamma, boundary) = if best == 0 && at_zero >= values[0] && self.derivative(0.0) <= 0.0 {
            (0.0, true)
        } else if best == steps {
            (GAMMA_MAX, true)
        } else {
            let a = grid[best.saturating_sub(1)];
            let b = grid[(best + 1).min(steps)];
            let x = golden_section_max(f, a, b, LOG_TOLERANCE);
            (self.refine(x, a, b), false)
        };
        let gamma = if gamma > 0.0 && self.loglik(gamma) < at_zero { 0.0 } else { gamma };
        let boundary = boundary || gamma == 0.0;
        self.assemble(gamma, boundary)
    }

    /// Bisection on the sign of the derivative (in `log gamma`) inside the
    /// golden-section bracket, which pins the optimum to rounding level.
    fn refine(&self, x: f64, a: f64, b: f64) -> f64 {
        let d = |x: f64| self.derivative(x.exp());
        let (mut lo, mut hi) = (a, b);
        if !(d(lo) > 0.0 && d(hi) < 0.0) {
            return x.exp();
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if d(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let best = 0.5 * (lo + hi);
        if self.loglik(best.exp()) >= self.loglik(x.exp()) {
            best.exp()
        } else {
            x.exp()
        }
    }

    fn assemble(&self, gamma: f64, boundary: bool) -> Result<LmmFit, ModelError> {
        let e = self
            .evaluate(gamma)
            .ok_or_else(|| ModelError::Optimizer(format!("criterion undefined at gamma = {gamma}")))?;
        let sigma_e2 = e.rss / (self.n - self.p) as f64;
        let cov = &e.a_inv * sigma_e2;
        Ok(LmmFit {
            names: self.names.clone(),
            fixed_effects: e.beta.iter().copied().collect(),
            covariance: (0..self.p)
                .map(|i| (0..self.p).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
                .collect(),
            sigma_b2: gamma * sigma_e2,
            sigma_e2,
            gamma,
            reml_loglik: e.loglik,
            n: self.n,
            n_groups: self.groups.len(),
            boundary,
        })
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Random-intercept model fitted by REML over the variance ratio.
pub fn fit_lmm(y: &[f64], design: &FixedDesign, groups: &[usize]) -> Result<LmmFit, ModelError> {
    RemlProfile::new(y, design, groups)?.fit()
}

/// Names the columns that are linear combinations of earlier columns.
fn check_rank(design: &FixedDesign) -> Result<(), ModelError> {
    let x = &design.matrix;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= 1e-10 * norm {
            dependent.push(design.names[j].clone());
        } else {
            basis.push(v / rest);
        }
    }
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(ModelError::RankDeficient { columns: dependent })
    }
}
