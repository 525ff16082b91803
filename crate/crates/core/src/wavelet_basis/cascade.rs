use super::{BasisError, QmfFilter};

/// A function sampled at `support_start + i * 2^-depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFunction {
    support_start: f64,
    depth: u32,
    values: Vec<f64>,
}

impl TabulatedFunction {
    pub fn new(support_start: f64, depth: u32, values: Vec<f64>) -> Result<Self, BasisError> {
        if values.len() < 2 {
            return Err(BasisError::InvalidInput(
                "tabulation needs at least two knots".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::InvalidInput(
                "non-finite tabulated value".into(),
            ));
        }
        Ok(Self {
            support_start,
            depth,
            values,
        })
    }

    pub fn support_start(&self) -> f64 {
        self.support_start
    }

    pub fn support_end(&self) -> f64 {
        self.support_start + (self.values.len() - 1) as f64 * self.step()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn step(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Abscissa of knot `i`.
    pub fn knot(&self, i: usize) -> f64 {
        self.support_start + i as f64 * self.step()
    }

    /// Riemann sum `step * sum(values)`.
    pub fn integral(&self) -> f64 {
        self.step() * self.values.iter().sum::<f64>()
    }

    /// Linear interpolation between the two nearest knots; zero outside
    /// the support. Exact at knots.
    #[inline]
    pub fn interpolate(&self, x: f64) -> f64 {
        let t = (x - self.support_start) * (self.depth as f64).exp2();
        if !(t >= 0.0) {
            return 0.0;
        }
        let last = self.values.len() - 1;
        let i = t.floor();
        if i >= last as f64 {
            return if t == last as f64 {
                self.values[last]
            } else {
                0.0
            };
        }
        let i = i as usize;
        let frac = t - i as f64;
        let a = self.values[i];
        if frac == 0.0 {
            return a;
        }
        a + frac * (self.values[i + 1] - a)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CascadeOptions {
    /// Cap on fixed-point iterations for the integer-knot values.
    pub max_iterations: usize,
    /// Stop once an iteration changes no integer-knot value by more than this.
    pub tolerance: f64,
    /// Largest allowed change at shared knots between successive refinements.
    pub refinement_tolerance: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-15,
            refinement_tolerance: 1e-8,
        }
    }
}

/// Tabulates the scaling function of `filter` on `[0, 2p-1]` at resolution `2^-depth`.
pub fn cascade(filter: &QmfFilter, depth: u32) -> Result<TabulatedFunction, BasisError> {
    cascade_with(filter, depth, CascadeOptions::default())
}

/// Cascade iteration of the two-scale relation.
///
/// The values at the integers are obtained by iterating
/// `v(n) <- sqrt(2) * sum_k h_k v(2n - k)` to its fixed point (the unit
/// eigenvector of the transition matrix, normalized to sum one). Each
/// refinement then fills in the next dyadic level from the previous one.
pub fn cascade_with(
    filter: &QmfFilter,
    depth: u32,
    opts: CascadeOptions,
) -> Result<TabulatedFunction, BasisError> {
    if depth < 6 {
        return Err(BasisError::InvalidInput(format!(
            "cascade depth must be at least 6, got {depth}"
        )));
    }
    if depth > 24 {
        return Err(BasisError::InvalidInput(format!(
            "cascade depth {depth} exceeds the supported maximum of 24"
        )));
    }
    let h: Vec<f64> = filter
        .taps()
        .iter()
        .map(|t| t * std::f64::consts::SQRT_2)
        .collect();
    let width = filter.support_width();

    let mut ints = vec![0.0; width + 1];
    ints[0] = 1.0;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let mut next = vec![0.0; width + 1];
        for (n, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate() {
                let idx = 2 * n as isize - k as isize;
                if idx >= 0 && (idx as usize) <= width {
                    acc += hk * ints[idx as usize];
                }
            }
            *slot = acc;
        }
        let total: f64 = next.iter().sum();
        if !total.is_finite() || total.abs() < f64::EPSILON {
            return Err(BasisError::NumericalFailure(
                "integer-knot iteration lost its normalization".into(),
            ));
        }
        next.iter_mut().for_each(|v| *v /= total);
        let change = next
            .iter()
            .zip(&ints)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ints = next;
        if change <= opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(BasisError::NumericalFailure(format!(
            "integer-knot values still changing after {} iterations",
            opts.max_iterations
        )));
    }

    let mut table = ints;
    for level in 1..=depth {
        let half = 1usize << (level - 1);
        let len = width * (1usize << level) + 1;
        let mut next = vec![0.0; len];
        for (m, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate() {
                let off = k * half;
                if off > m {
                    break;
                }
                if let Some(v) = table.get(m - off) {
                    acc += hk * v;
                }
            }
            *slot = acc;
        }
        let drift = table
            .iter()
            .enumerate()
            .map(|(i, v)| (next[2 * i] - v).abs())
            .fold(0.0, f64::max);
        if !(drift < opts.refinement_tolerance) {
            return Err(BasisError::NumericalFailure(format!(
                "refinement to level {level} moved shared knots by {drift:e}"
            )));
        }
        table = next;
    }

    // Continuous for p >= 2, so the support endpoints vanish; the Haar
    // indicator keeps phi(0) = 1.
    let last = table.len() - 1;
    table[last] = 0.0;
    if filter.vanishing_moments() > 1 {
        table[0] = 0.0;
    }
    TabulatedFunction::new(0.0, depth, table)
}

/// Mother wavelet `psi(x) = sqrt(2) * sum_k g_k phi(2x - k)` on `[0, 2p-1]`,
/// tabulated at the same resolution as `phi`.
pub fn mother_wavelet(
    filter: &QmfFilter,
    phi: &TabulatedFunction,
) -> Result<TabulatedFunction, BasisError> {
    let width = filter.support_width();
    let depth = phi.depth();
    let expected = width * (1usize << depth) + 1;
    if phi.support_start() != 0.0 || phi.values().len() != expected {
        return Err(BasisError::InvalidInput(format!(
            "scaling tabulation has {} knots starting at {}; expected {} knots from 0 for depth {}",
            phi.values().len(),
            phi.support_start(),
            expected,
            depth
        )));
    }
    let g: Vec<f64> = filter
        .highpass()
        .iter()
        .map(|t| t * std::f64::consts::SQRT_2)
        .collect();
    let unit = 1usize << depth;
    let pv = phi.values();
    let values: Vec<f64> = (0..expected)
        .map(|m| {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let off = k * unit;
                if off > 2 * m {
                    break;
                }
                if let Some(v) = pv.get(2 * m - off) {
                    acc += gk * v;
                }
            }
            acc
        })
        .collect();
    TabulatedFunction::new(0.0, depth, values)
}
