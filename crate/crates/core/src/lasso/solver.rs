use nalgebra::{DMatrix, DVector};

use super::{LassoError, LassoOptions, LassoProblem, LassoSolution};
use crate::sparse::{CscMatrix, CsrMatrix};

/// Column-major copy of a design with the centering and scaling that make
/// every column mean zero and (when standardizing) unit variance.
///
/// Centering is applied implicitly so the sparse structure is kept.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    csc: CscMatrix,
    means: Vec<f64>,
    scales: Vec<f64>,
    colsums: Vec<f64>,
    /// `||x~_j||^2 / n`; zero marks a constant column that is never updated.
    sq_norms: Vec<f64>,
    standardize: bool,
}

impl PreparedDesign {
    pub fn new(design: &CsrMatrix, standardize: bool) -> Self {
        let csc = design.to_csc();
        let n = design.n_rows() as f64;
        let p = design.n_cols();
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        let mut colsums = vec![0.0; p];
        let mut sq_norms = vec![0.0; p];
        for j in 0..p {
            let (_, vals) = csc.col(j);
            let sum: f64 = vals.iter().sum();
            let mean = sum / n;
            let nz = vals.len() as f64;
            let ss: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() + (n - nz) * mean * mean;
            let meansq: f64 = vals.iter().map(|v| v * v).sum::<f64>() / n;
            let var = ss / n;
            colsums[j] = sum;
            means[j] = mean;
            if var <= 1e-13 * meansq || var == 0.0 {
                scales[j] = 1.0;
                sq_norms[j] = 0.0;
            } else if standardize {
                scales[j] = var.sqrt();
                sq_norms[j] = 1.0;
            } else {
                sq_norms[j] = var;
            }
        }
        Self {
            csc,
            means,
            scales,
            colsums,
            sq_norms,
            standardize,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.csc.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.csc.n_cols()
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Whether column `j` has positive variance.
    pub fn is_usable(&self, j: usize) -> bool {
        self.sq_norms[j] > 0.0
    }

    /// `max_j |<x~_j, y - mean(y)>| / n`: the smallest penalty giving the null model.
    pub fn lambda_max(&self, y: &[f64]) -> f64 {
        let state = State::new(self, y, None);
        (0..self.n_cols())
            .filter(|&j| self.is_usable(j))
            .map(|j| state.gradient(self, j).abs())
            .fold(0.0, f64::max)
    }
}

/// Residual of the centered problem, stored lazily as `stored + offset`.
struct State {
    n: usize,
    y_mean: f64,
    centered: Vec<f64>,
    stored: Vec<f64>,
    offset: f64,
    stored_sum: f64,
    /// Standardized coefficients.
    beta: Vec<f64>,
}

impl State {
    fn new(prep: &PreparedDesign, y: &[f64], warm: Option<&[f64]>) -> Self {
        let n = y.len();
        let y_mean = shifted_mean(y);
        let centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut s = Self {
            n,
            y_mean,
            stored: centered.clone(),
            centered,
            offset: 0.0,
            stored_sum: 0.0,
            beta: vec![0.0; prep.n_cols()],
        };
        if let Some(w) = warm {
            for (j, &b) in w.iter().enumerate() {
                if b != 0.0 && prep.is_usable(j) {
                    s.beta[j] = b * prep.scales[j];
                }
            }
            s.rebuild_residual(prep);
        }
        s.stored_sum = s.stored.iter().sum();
        s
    }

    fn rebuild_residual(&mut self, prep: &PreparedDesign) {
        self.stored.copy_from_slice(&self.centered);
        self.offset = 0.0;
        for j in 0..self.beta.len() {
            let b = self.beta[j];
            if b == 0.0 {
                continue;
            }
            let w = b / prep.scales[j];
            let (idx, vals) = prep.csc.col(j);
            for (&r, v) in idx.iter().zip(vals) {
                self.stored[r as usize] -= w * v;
            }
            self.offset += w * prep.means[j];
        }
        self.materialize();
    }

    fn materialize(&mut self) {
        if self.offset != 0.0 {
            let o = self.offset;
            self.stored.iter_mut().for_each(|r| *r += o);
            self.offset = 0.0;
        }
        self.stored_sum = self.stored.iter().sum();
    }

    /// `<x~_j, r> / n`.
    #[inline]
    fn gradient(&self, prep: &PreparedDesign, j: usize) -> f64 {
        let (idx, vals) = prep.csc.col(j);
        let mut dot = sparse_dot(idx, vals, &self.stored);
        dot += self.offset * prep.colsums[j];
        let total = self.stored_sum + self.n as f64 * self.offset;
        (dot - prep.means[j] * total) / (self.n as f64 * prep.scales[j])
    }

    /// Moves standardized coefficient `j` by `delta` and updates the residual.
    #[inline]
    fn shift(&mut self, prep: &PreparedDesign, j: usize, delta: f64) {
        let w = delta / prep.scales[j];
        let (idx, vals) = prep.csc.col(j);
        for (&r, v) in idx.iter().zip(vals) {
            self.stored[r as usize] -= w * v;
        }
        self.stored_sum -= w * prep.colsums[j];
        self.offset += w * prep.means[j];
        self.beta[j] += delta;
    }

    fn objective(&self, lambda: f64) -> f64 {
        let rss: f64 = self
            .stored
            .iter()
            .map(|r| {
                let v = r + self.offset;
                v * v
            })
            .sum();
        rss / (2.0 * self.n as f64) + lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn solution(
        &self,
        prep: &PreparedDesign,
        lambda: f64,
        iterations: usize,
        converged: bool,
        history: Vec<f64>,
    ) -> LassoSolution {
        let coefficients: Vec<f64> = self
            .beta
            .iter()
            .zip(&prep.scales)
            .map(|(b, s)| if *b == 0.0 { 0.0 } else { b / s })
            .collect();
        let shift: f64 = coefficients
            .iter()
            .zip(&prep.means)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, m)| c * m)
            .sum();
        LassoSolution {
            intercept: self.y_mean - shift,
            coefficients,
            lambda,
            iterations,
            converged,
            objective_history: history,
        }
    }
}

/// Mean computed relative to the first element, so constant inputs return
/// that constant exactly.
pub fn shifted_mean(v: &[f64]) -> f64 {
    let Some(&first) = v.first() else {
        return 0.0;
    };
    let dev: f64 = v.iter().map(|x| x - first).sum();
    first + dev / v.len() as f64
}

/// `sum_k vals[k] * dense[idx[k]]` with independent partial sums.
#[inline]
fn sparse_dot(idx: &[u32], vals: &[f64], dense: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ic = idx.chunks_exact(4);
    let vc = vals.chunks_exact(4);
    let (ir, vr) = (ic.remainder(), vc.remainder());
    for (i, v) in ic.zip(vc) {
        for k in 0..4 {
            acc[k] += v[k] * dense[i[k] as usize];
        }
    }
    let mut tail = 0.0;
    for (&r, v) in ir.iter().zip(vr) {
        tail += v * dense[r as usize];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z.abs() <= lambda {
        0.0
    } else {
        z - lambda * z.signum()
    }
}

pub fn fit(
    problem: &LassoProblem<'_>,
    warm_start: Option<&LassoSolution>,
) -> Result<LassoSolution, LassoError> {
    fit_with(problem, warm_start, &LassoOptions::default())
}

pub fn fit_with(
    problem: &LassoProblem<'_>,
    warm_start: Option<&LassoSolution>,
    opts: &LassoOptions,
) -> Result<LassoSolution, LassoError> {
    problem.validate()?;
    let prep = PreparedDesign::new(problem.design, problem.standardize);
    fit_prepared(&prep, problem.response, problem.lambda, warm_start, opts)
}

/// Cyclic coordinate descent on a prepared design.
///
/// Coordinates are screened with the sequential strong rule; descent runs on
/// the screened set (alternating passes over the set and over its current
/// support) and a final gradient pass over every column confirms that no
/// excluded coordinate would move. Every `polish_interval` support sweeps
/// the stationarity equations on the support are solved exactly and the
/// step is kept only if it lowers the objective.
pub fn fit_prepared(
    prep: &PreparedDesign,
    y: &[f64],
    lambda: f64,
    warm_start: Option<&LassoSolution>,
    opts: &LassoOptions,
) -> Result<LassoSolution, LassoError> {
    let mut solver = PathSolver::new(prep, y, warm_start, opts)?;
    solver.solve(lambda)
}

/// Solutions along `grid`, each started from the previous one.
pub fn solve_path(
    prep: &PreparedDesign,
    y: &[f64],
    grid: &[f64],
    opts: &LassoOptions,
) -> Result<Vec<LassoSolution>, LassoError> {
    let mut solver = PathSolver::new(prep, y, None, opts)?;
    grid.iter().map(|&l| solver.solve(l)).collect()
}

struct PathSolver<'a> {
    prep: &'a PreparedDesign,
    opts: &'a LassoOptions,
    state: State,
    usable: Vec<usize>,
    /// Gradients from the most recent full pass.
    grad: Vec<f64>,
    prev_lambda: f64,
}

impl<'a> PathSolver<'a> {
    fn new(
        prep: &'a PreparedDesign,
        y: &[f64],
        warm_start: Option<&LassoSolution>,
        opts: &'a LassoOptions,
    ) -> Result<Self, LassoError> {
        if y.len() != prep.n_rows() {
            return Err(LassoError::InvalidInput(format!(
                "response has {} entries but the design has {} rows",
                y.len(),
                prep.n_rows()
            )));
        }
        if let Some(w) = warm_start {
            if w.coefficients.len() != prep.n_cols() {
                return Err(LassoError::InvalidInput(format!(
                    "warm start has {} coefficients, design has {} columns",
                    w.coefficients.len(),
                    prep.n_cols()
                )));
            }
        }
        let state = State::new(prep, y, warm_start.map(|w| w.coefficients.as_slice()));
        let usable: Vec<usize> = (0..prep.n_cols()).filter(|&j| prep.is_usable(j)).collect();
        let mut grad = vec![0.0; prep.n_cols()];
        for &j in &usable {
            grad[j] = state.gradient(prep, j);
        }
        let prev_lambda = match warm_start {
            Some(w) => w.lambda,
            None => usable.iter().map(|&j| grad[j].abs()).fold(0.0, f64::max),
        };
        Ok(Self {
            prep,
            opts,
            state,
            usable,
            grad,
            prev_lambda,
        })
    }

    fn sweep(&mut self, cols: &[usize], lambda: f64) -> f64 {
        let prep = self.prep;
        let mut max_change: f64 = 0.0;
        for &j in cols {
            let d = prep.sq_norms[j];
            let old = self.state.beta[j];
            let z = self.state.gradient(prep, j) + d * old;
            let new = soft_threshold(z, lambda) / d;
            let delta = new - old;
            if delta != 0.0 {
                self.state.shift(prep, j, delta);
                max_change = max_change.max(delta.abs() * d.sqrt());
            }
        }
        max_change
    }

    fn not_converged(&self, lambda: f64, sweeps: usize, history: Vec<f64>) -> LassoError {
        LassoError::NotConverged {
            lambda,
            sweeps,
            last: Box::new(self.state.solution(self.prep, lambda, sweeps, false, history)),
        }
    }

    fn solve(&mut self, lambda: f64) -> Result<LassoSolution, LassoError> {
        let prep = self.prep;
        let opts = self.opts;
        let threshold = 2.0 * lambda - self.prev_lambda;
        let mut in_set = vec![false; prep.n_cols()];
        let mut set: Vec<usize> = Vec::new();
        for &j in &self.usable {
            if self.state.beta[j] != 0.0 || self.grad[j].abs() >= threshold {
                in_set[j] = true;
                set.push(j);
            }
        }
        let mut history = Vec::new();
        let mut sweeps = 0usize;
        loop {
            // Descent on the screened set.
            loop {
                if sweeps >= opts.max_sweeps {
                    return Err(self.not_converged(lambda, sweeps, history));
                }
                let change = self.sweep(&set, lambda);
                self.state.materialize();
                sweeps += 1;
                history.push(self.state.objective(lambda));
                if change < opts.tolerance {
                    break;
                }
                let mut since_polish = 0usize;
                loop {
                    if sweeps >= opts.max_sweeps {
                        return Err(self.not_converged(lambda, sweeps, history));
                    }
                    let active: Vec<usize> = set
                        .iter()
                        .copied()
                        .filter(|&j| self.state.beta[j] != 0.0)
                        .collect();
                    let change = self.sweep(&active, lambda);
                    sweeps += 1;
                    since_polish += 1;
                    let mut obj = self.state.objective(lambda);
                    if change >= opts.tolerance && since_polish >= opts.polish_interval {
                        since_polish = 0;
                        if let Some((polished, coefs)) =
                            try_polish(prep, &self.state, &active, lambda, opts, obj)
                        {
                            obj = polished;
                            for (&j, b) in active.iter().zip(coefs) {
                                self.state.beta[j] = b;
                            }
                            self.state.rebuild_residual(prep);
                        }
                    }
                    history.push(obj);
                    if change < opts.tolerance {
                        break;
                    }
                }
                self.state.materialize();
            }
            // Gradient pass over every column; excluded coordinates that
            // would move join the set.
            let mut added = false;
            for &j in &self.usable {
                let g = self.state.gradient(prep, j);
                self.grad[j] = g;
                if !in_set[j] && g.abs() > lambda {
                    in_set[j] = true;
                    added = true;
                }
            }
            if !added {
                break;
            }
            set = self.usable.iter().copied().filter(|&j| in_set[j]).collect();
        }
        self.prev_lambda = lambda;
        Ok(self.state.solution(prep, lambda, sweeps, true, history))
    }
}

/// Solves `G_A b = c_A - lambda * sign(b_A)` on the support, moves toward
/// that point as far as the sign pattern allows, and returns the new
/// objective and support coefficients when it improves on `current`.
fn try_polish(
    prep: &PreparedDesign,
    state: &State,
    active: &[usize],
    lambda: f64,
    opts: &LassoOptions,
    current: f64,
) -> Option<(f64, Vec<f64>)> {
    if active.is_empty() {
        return None;
    }
    let nnz: usize = active.iter().map(|&j| prep.csc.col(j).0.len()).sum();
    if active.len().saturating_mul(nnz.max(prep.n_rows())) > opts.polish_budget {
        return None;
    }
    let n = prep.n_rows();
    let nf = n as f64;
    let k = active.len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut dense = vec![0.0; n];
    let mut rhs = DVector::<f64>::zeros(k);
    for (a, &ja) in active.iter().enumerate() {
        let (ia, va) = prep.csc.col(ja);
        for (&r, v) in ia.iter().zip(va) {
            dense[r as usize] = *v;
        }
        for (b, &jb) in active.iter().enumerate().skip(a) {
            let (ib, vb) = prep.csc.col(jb);
            let dot: f64 = ib.iter().zip(vb).map(|(&r, v)| v * dense[r as usize]).sum();
            let g = (dot - nf * prep.means[ja] * prep.means[jb])
                / (nf * prep.scales[ja] * prep.scales[jb]);
            gram[(a, b)] = g;
            gram[(b, a)] = g;
        }
        for &r in ia {
            dense[r as usize] = 0.0;
        }
        let cy: f64 = ia
            .iter()
            .zip(va)
            .map(|(&r, v)| v * state.centered[r as usize])
            .sum::<f64>();
        // centered response sums to zero, so the mean term drops
        rhs[a] = cy / (nf * prep.scales[ja]) - lambda * state.beta[ja].signum();
    }
    let chol = gram.cholesky()?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Step toward the support solution, stopping where the first
    // coefficient reaches zero so the sign pattern stays valid.
    let mut t: f64 = 1.0;
    for (a, &j) in active.iter().enumerate() {
        let b = state.beta[j];
        if b * sol[a] <= 0.0 {
            t = t.min(b / (b - sol[a]));
        }
    }
    let step: Vec<f64> = active
        .iter()
        .enumerate()
        .map(|(a, &j)| {
            let b = state.beta[j];
            let v = b + t * (sol[a] - b);
            if v * b <= 0.0 || v.abs() <= 1e-14 * b.abs() {
                0.0
            } else {
                v
            }
        })
        .collect();
    let mut resid = state.centered.clone();
    let mut offset = 0.0;
    for (a, &j) in active.iter().enumerate() {
        let w = step[a] / prep.scales[j];
        let (idx, vals) = prep.csc.col(j);
        for (&r, v) in idx.iter().zip(vals) {
            resid[r as usize] -= w * v;
        }
        offset += w * prep.means[j];
    }
    let rss: f64 = resid.iter().map(|r| (r + offset) * (r + offset)).sum();
    let l1: f64 = step.iter().map(|v| v.abs()).sum();
    let candidate = rss / (2.0 * nf) + lambda * l1;
    (candidate <= current).then_some((candidate, step))
}

/// Stationarity residuals of a solution on the standardized scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `max(|g_j| - lambda)` over zero coefficients (nonpositive when satisfied).
    pub inactive_excess: f64,
    /// `max |g_j - lambda * sign(b_j)|` over nonzero coefficients.
    pub active_deviation: f64,
}

impl KktReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.inactive_excess <= tol && self.active_deviation <= tol
    }
}

/// Recomputes the residual from the reported coefficients and checks the
/// subgradient conditions column by column.
pub fn kkt_check(problem: &LassoProblem<'_>, solution: &LassoSolution) -> KktReport {
    let x = problem.design;
    let n = x.n_rows() as f64;
    let fitted = x
        .mul_vec(&solution.coefficients)
        .expect("coefficient length");
    let resid: Vec<f64> = problem
        .response
        .iter()
        .zip(&fitted)
        .map(|(y, f)| y - solution.intercept - f)
        .collect();
    let resid_sum: f64 = resid.iter().sum();
    let mut xr = vec![0.0; x.n_cols()];
    let mut colsum = vec![0.0; x.n_cols()];
    let mut colsq = vec![0.0; x.n_cols()];
    for (r, res) in resid.iter().enumerate() {
        let (idx, vals) = x.row(r);
        for (&c, v) in idx.iter().zip(vals) {
            xr[c as usize] += v * res;
            colsum[c as usize] += v;
            colsq[c as usize] += v * v;
        }
    }
    let mut report = KktReport {
        inactive_excess: f64::NEG_INFINITY,
        active_deviation: 0.0,
    };
    for j in 0..x.n_cols() {
        let mean = colsum[j] / n;
        let var = colsq[j] / n - mean * mean;
        if var <= 1e-13 * colsq[j] / n || var <= 0.0 {
            continue;
        }
        let scale = if problem.standardize { var.sqrt() } else { 1.0 };
        let g = (xr[j] - mean * resid_sum) / (n * scale);
        let b = solution.coefficients[j];
        if b == 0.0 {
            report.inactive_excess = report.inactive_excess.max(g.abs() - problem.lambda);
        } else {
            report.active_deviation = report
                .active_deviation
                .max((g - problem.lambda * b.signum()).abs());
        }
    }
    report
}
