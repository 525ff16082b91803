use super::{cascade, mother_wavelet, BasisError, QmfFilter, TabulatedFunction};

/// Required gap between tabulation depth and the number of levels, so the
/// tabulation is at least 64 times finer than the finest wavelet.
pub const MIN_DEPTH_MARGIN: u32 = 6;

/// One member of the per-direction basis: the level-0 scaling function
/// (`level == 0`) or the wavelet at `level >= 1` with translation `shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisFunction {
    pub level: u32,
    pub shift: u32,
}

impl BasisFunction {
    /// Maps the 1-based basis index to its level and shift. Index 1 is the
    /// scaling function; level `l` occupies indices `2^(l-1)+1 ..= 2^l`.
    pub fn from_index(k: usize) -> Option<Self> {
        match k {
            0 => None,
            1 => Some(Self { level: 0, shift: 0 }),
            _ => {
                let level = usize::BITS - (k - 1).leading_zeros();
                let shift = k - (1usize << (level - 1)) - 1;
                Some(Self {
                    level,
                    shift: shift as u32,
                })
            }
        }
    }

    pub fn index(&self) -> usize {
        if self.level == 0 {
            1
        } else {
            (1usize << (self.level - 1)) + 1 + self.shift as usize
        }
    }
}

/// Periodized scaling function plus wavelet levels `1..=levels` on `[0, 1)`.
///
/// Per direction there are `2^levels` functions: the constant level-0
/// scaling function and `2^(l-1)` wavelets at each level `l`.
#[derive(Debug, Clone)]
pub struct PeriodizedBasis {
    levels: u32,
    order: usize,
    scaling: TabulatedFunction,
    wavelet: TabulatedFunction,
}

impl PeriodizedBasis {
    pub fn new(filter: &QmfFilter, levels: u32, depth: u32) -> Result<Self, BasisError> {
        if levels == 0 || levels > 16 {
            return Err(BasisError::InvalidInput(format!(
                "levels must lie in 1..=16, got {levels}"
            )));
        }
        if depth < levels + MIN_DEPTH_MARGIN {
            return Err(BasisError::InvalidInput(format!(
                "tabulation depth {depth} too coarse for {levels} levels (need >= {})",
                levels + MIN_DEPTH_MARGIN
            )));
        }
        let scaling = cascade(filter, depth)?;
        let wavelet = mother_wavelet(filter, &scaling)?;
        Ok(Self {
            levels,
            order: filter.vanishing_moments(),
            scaling,
            wavelet,
        })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Vanishing moments of the generating filter.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn depth(&self) -> u32 {
        self.scaling.depth()
    }

    pub fn scaling(&self) -> &TabulatedFunction {
        &self.scaling
    }

    pub fn wavelet(&self) -> &TabulatedFunction {
        &self.wavelet
    }

    /// Number of functions per direction, `2^levels`.
    pub fn len(&self) -> usize {
        1usize << self.levels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Upper bound on the number of nonzero functions at any point.
    pub fn max_nonzero(&self) -> usize {
        let width = 2 * self.order - 1;
        1 + (1..=self.levels)
            .map(|l| (1usize << (l - 1)).min(width))
            .sum::<usize>()
    }

    fn check_u(u: f64) -> Result<(), BasisError> {
        if (0.0..1.0).contains(&u) {
            Ok(())
        } else {
            Err(BasisError::Domain(u))
        }
    }

    /// Value of basis function `k` (1-based) at `u`.
    pub fn evaluate(&self, k: usize, u: f64) -> Result<f64, BasisError> {
        let f = BasisFunction::from_index(k)
            .filter(|_| k <= self.len())
            .ok_or(BasisError::Index {
                index: k,
                max: self.len(),
            })?;
        Self::check_u(u)?;
        Ok(self.evaluate_function(f, u))
    }

    fn evaluate_function(&self, f: BasisFunction, u: f64) -> f64 {
        let width = (2 * self.order - 1) as f64;
        if f.level == 0 {
            let mut acc = 0.0;
            let lo = (u - width).ceil() as i64;
            for t in lo..=u.floor() as i64 {
                acc += self.scaling.interpolate(u - t as f64);
            }
            return acc;
        }
        let n = (1u64 << (f.level - 1)) as f64;
        let a = n * u - f.shift as f64;
        // Translates of the period that land in [0, width].
        let lo = ((-a) / n).ceil() as i64;
        let hi = ((width - a) / n).floor() as i64;
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += self.wavelet.interpolate(a + j as f64 * n);
        }
        n.sqrt() * acc
    }

    /// Nonzero values of all `2^levels` functions at `u`, as
    /// `(index, value)` pairs sorted by index. Entries with magnitude at
    /// or below `threshold` are dropped.
    pub fn evaluate_all(
        &self,
        u: f64,
        threshold: f64,
        out: &mut Vec<(u32, f64)>,
    ) -> Result<(), BasisError> {
        Self::check_u(u)?;
        out.clear();
        let width = 2 * self.order - 1;
        let scale = self.evaluate_function(BasisFunction { level: 0, shift: 0 }, u);
        if scale.abs() > threshold {
            out.push((1, scale));
        }
        let mut level_vals: Vec<f64> = Vec::new();
        for level in 1..=self.levels {
            let count = 1usize << (level - 1);
            let n = count as f64;
            let a = n * u;
            let norm = n.sqrt();
            let base = (count + 1) as u32;
            if count <= width {
                level_vals.clear();
                level_vals.resize(count, 0.0);
                let lo = (a - width as f64).ceil() as i64;
                for t in lo..=a.floor() as i64 {
                    let s = t.rem_euclid(count as i64) as usize;
                    level_vals[s] += self.wavelet.interpolate(a - t as f64);
                }
                for (s, v) in level_vals.iter().enumerate() {
                    let v = norm * v;
                    if v.abs() > threshold {
                        out.push((base + s as u32, v));
                    }
                }
            } else {
                // No wrap overlaps: each translate hits a distinct shift.
                let lo = (a - width as f64).ceil() as i64;
                let start = out.len();
                for t in lo..=a.floor() as i64 {
                    let s = t.rem_euclid(count as i64) as u32;
                    let v = norm * self.wavelet.interpolate(a - t as f64);
                    if v.abs() > threshold {
                        out.push((base + s, v));
                    }
                }
                out[start..].sort_unstable_by_key(|e| e.0);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet_basis::daubechies_filter;

    fn db5(levels: u32, depth: u32) -> PeriodizedBasis {
        PeriodizedBasis::new(&daubechies_filter(5).unwrap(), levels, depth).unwrap()
    }

    #[test]
    fn index_mapping_round_trips() {
        assert_eq!(
            BasisFunction::from_index(1),
            Some(BasisFunction { level: 0, shift: 0 })
        );
        assert_eq!(
            BasisFunction::from_index(2),
            Some(BasisFunction { level: 1, shift: 0 })
        );
        assert_eq!(
            BasisFunction::from_index(4),
            Some(BasisFunction { level: 2, shift: 1 })
        );
        assert_eq!(
            BasisFunction::from_index(5),
            Some(BasisFunction { level: 3, shift: 0 })
        );
        for k in 1..=1024 {
            assert_eq!(BasisFunction::from_index(k).unwrap().index(), k);
        }
        // Cumulative wavelet count through level l is 2^l - 1.
        for l in 1..=8u32 {
            let count = (2..=1usize << l)
                .filter(|&k| BasisFunction::from_index(k).unwrap().level <= l)
                .count();
            assert_eq!(count, (1 << l) - 1);
        }
    }

    #[test]
    fn scaling_function_is_constant_one() {
        let b = db5(3, 12);
        for i in 0..97 {
            let u = i as f64 / 97.0;
            assert!((b.evaluate(1, u).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn knot_values_match_wrapped_tabulation() {
        let b = db5(3, 12);
        // Level 3, shift 1: N = 4, knots in u every 2^-(12+2).
        let u = 1234.0 / 16384.0;
        let psi = b.wavelet();
        let a = 4.0 * u - 1.0;
        let mut expected = 0.0;
        for j in -3..=3 {
            let x = a + 4.0 * j as f64;
            let t = x * 4096.0;
            if t >= 0.0 && t <= (psi.values().len() - 1) as f64 {
                assert_eq!(t.fract(), 0.0);
                expected += psi.values()[t as usize];
            }
        }
        assert_eq!(b.evaluate(6, u).unwrap(), 2.0 * expected);
    }

    #[test]
    fn interpolation_is_linear_between_knots() {
        let b = db5(4, 12);
        for k in [1usize, 2, 3, 6, 13, 16] {
            let level = BasisFunction::from_index(k).unwrap().level;
            let h = (-((12 + level.saturating_sub(1)) as f64)).exp2();
            for i in [17u64, 400, 2999] {
                let a = i as f64 * h;
                let bb = a + h;
                let va = b.evaluate(k, a).unwrap();
                let vb = b.evaluate(k, bb).unwrap();
                let u = a + 0.3 * h;
                let vu = b.evaluate(k, u).unwrap();
                assert!((vu - (0.7 * va + 0.3 * vb)).abs() < 1e-12, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn finer_tabulation_oracle_agrees() {
        let coarse = db5(3, 14);
        let fine = db5(3, 18);
        let k = BasisFunction { level: 3, shift: 1 }.index();
        let a = coarse.evaluate(k, 0.3).unwrap();
        let b = fine.evaluate(k, 0.3).unwrap();
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn evaluate_all_agrees_with_single_evaluation() {
        let b = db5(6, 12);
        let mut out = Vec::new();
        for i in 0..50 {
            let u = (i as f64 * 0.6180339887) % 1.0;
            b.evaluate_all(u, 0.0, &mut out).unwrap();
            assert!(out.len() <= b.max_nonzero());
            assert!(out.windows(2).all(|w| w[0].0 < w[1].0));
            let mut dense = vec![0.0; b.len()];
            for &(k, v) in &out {
                dense[k as usize - 1] = v;
            }
            for (k, d) in dense.iter().enumerate() {
                let v = b.evaluate(k + 1, u).unwrap();
                assert!((v - d).abs() < 1e-14, "u={u} k={}", k + 1);
            }
        }
    }

    #[test]
    fn oversampled_gram_is_identity() {
        // Riemann sum over 2^(L+4) equispaced points aligned with the tabulation.
        let levels = 4;
        let b = db5(levels, 14);
        let n = 1usize << (levels + 4);
        let k = b.len();
        let z: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (1..=k)
                    .map(|j| b.evaluate(j, i as f64 / n as f64).unwrap())
                    .collect()
            })
            .collect();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for c in 0..k {
                let g: f64 = z.iter().map(|row| row[a] * row[c]).sum::<f64>() / n as f64;
                let target = if a == c { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        assert!(worst < 1e-3, "max |G - I| = {worst}");
    }

    #[test]
    fn critically_sampled_matrix_is_well_conditioned() {
        // At exactly 2^L points the sampled continuous wavelets are not an
        // orthonormal matrix, but the square sample matrix is invertible.
        let levels = 4;
        let b = db5(levels, 14);
        let n = b.len();
        let z = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            b.evaluate(j + 1, i as f64 / n as f64).unwrap()
        });
        let sv = z.singular_values();
        let cond = sv.max() / sv.min();
        assert!(cond < 100.0, "cond = {cond}");
    }

    #[test]
    fn domain_and_index_errors() {
        let b = db5(2, 10);
        assert!(matches!(b.evaluate(1, 1.0), Err(BasisError::Domain(_))));
        assert!(matches!(b.evaluate(1, -0.1), Err(BasisError::Domain(_))));
        assert!(matches!(b.evaluate(0, 0.1), Err(BasisError::Index { .. })));
        assert!(matches!(b.evaluate(5, 0.1), Err(BasisError::Index { .. })));
        assert!(PeriodizedBasis::new(&daubechies_filter(5).unwrap(), 5, 10).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let b = db5(5, 12);
        let u = 0.123456789;
        let a = b.evaluate(20, u).unwrap().to_bits();
        let c = b.evaluate(20, u).unwrap().to_bits();
        assert_eq!(a, c);
    }
}
