//! Tensor-product wavelet design matrices for scattered planar points.
//!
//! Coordinates are mapped affinely onto `[0, 1)^2` using the observed range
//! in each direction. Column `(l, m)` holds `z_l(u1) * z_m(u2)` for every
//! pair of per-direction basis indices except the constant pair `(1, 1)`,
//! which is carried by the unpenalized intercept instead.

use std::collections::HashSet;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;
use crate::wavelet_basis::{BasisError, BasisFunction, PeriodizedBasis};

/// Entries at or below this magnitude are not stored.
pub const DEFAULT_SPARSE_THRESHOLD: f64 = 1e-12;

/// Default cap on the estimated design footprint (8 GiB).
pub const DEFAULT_MEMORY_CAP: usize = 8 << 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("degenerate domain: {0}")]
    Degenerate(String),
    #[error("point ({x1}, {x2}) lies outside the mapped bounding box")]
    OutOfDomain { x1: f64, x2: f64 },
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("design needs about {required} bytes, above the {cap} byte cap")]
    ResourceExceeded { required: usize, cap: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialPoint {
    pub x1: f64,
    pub x2: f64,
}

impl SpatialPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn distance_squared(&self, other: &SpatialPoint) -> f64 {
        let d1 = self.x1 - other.x1;
        let d2 = self.x2 - other.x2;
        d1 * d1 + d2 * d2
    }
}

/// One day of observations on an irregular set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySurface {
    pub date: NaiveDate,
    pub points: Vec<SpatialPoint>,
    pub values: Vec<f64>,
}

impl DailySurface {
    pub fn new(
        date: NaiveDate,
        points: Vec<SpatialPoint>,
        values: Vec<f64>,
    ) -> Result<Self, DesignError> {
        let s = Self {
            date,
            points,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.points.is_empty() {
            return Err(DesignError::InvalidSurface(format!(
                "{}: no points",
                self.date
            )));
        }
        if self.points.len() != self.values.len() {
            return Err(DesignError::InvalidSurface(format!(
                "{}: {} points but {} values",
                self.date,
                self.points.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(DesignError::InvalidSurface(format!(
                "{}: non-finite value at point {i}",
                self.date
            )));
        }
        let mut seen = HashSet::with_capacity(self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            if !p.x1.is_finite() || !p.x2.is_finite() {
                return Err(DesignError::InvalidSurface(format!(
                    "{}: non-finite coordinate at point {i}",
                    self.date
                )));
            }
            // Normalize -0.0 so it collides with 0.0.
            let key = ((p.x1 + 0.0).to_bits(), (p.x2 + 0.0).to_bits());
            if !seen.insert(key) {
                return Err(DesignError::InvalidSurface(format!(
                    "{}: duplicate point ({}, {})",
                    self.date, p.x1, p.x2
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-direction ranges `[a1, b1] x [a2, b2]` used to map onto the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl AffineMap {
    pub fn new(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<Self, DesignError> {
        if !(b1 > a1) || !(b2 > a2) {
            return Err(DesignError::Degenerate(format!(
                "ranges [{a1}, {b1}] x [{a2}, {b2}] must have positive width"
            )));
        }
        Ok(Self { a1, b1, a2, b2 })
    }

    /// Maps `p` to `[0, 1)^2`. The upper edge of the box is clamped to the
    /// largest double below one.
    pub fn scale(&self, p: SpatialPoint) -> Result<(f64, f64), DesignError> {
        if !(p.x1 >= self.a1 && p.x1 <= self.b1 && p.x2 >= self.a2 && p.x2 <= self.b2) {
            return Err(DesignError::OutOfDomain { x1: p.x1, x2: p.x2 });
        }
        let clamp = |u: f64| if u >= 1.0 { 1.0f64.next_down() } else { u };
        Ok((
            clamp((p.x1 - self.a1) / (self.b1 - self.a1)),
            clamp((p.x2 - self.a2) / (self.b2 - self.a2)),
        ))
    }
}

/// Minimum and maximum of each coordinate.
pub fn fit_affine_map(points: &[SpatialPoint]) -> Result<AffineMap, DesignError> {
    if points.len() < 2 {
        return Err(DesignError::Degenerate(format!(
            "need at least two points, got {}",
            points.len()
        )));
    }
    let mut a1 = f64::INFINITY;
    let mut b1 = f64::NEG_INFINITY;
    let mut a2 = f64::INFINITY;
    let mut b2 = f64::NEG_INFINITY;
    for p in points {
        a1 = a1.min(p.x1);
        b1 = b1.max(p.x1);
        a2 = a2.min(p.x2);
        b2 = b2.max(p.x2);
    }
    AffineMap::new(a1, b1, a2, b2)
}

/// Like [`fit_affine_map`] but extends each upper bound by the mean gap
/// between distinct coordinates, so an equispaced grid of `m` values lands
/// on `i / m` and its last column does not wrap onto its first.
pub fn fit_periodic_map(points: &[SpatialPoint]) -> Result<AffineMap, DesignError> {
    let base = fit_affine_map(points)?;
    let gap = |coords: Vec<f64>, lo: f64, hi: f64| {
        let mut c = coords;
        c.sort_by(f64::total_cmp);
        c.dedup();
        (hi - lo) / (c.len() - 1) as f64
    };
    let g1 = gap(points.iter().map(|p| p.x1).collect(), base.a1, base.b1);
    let g2 = gap(points.iter().map(|p| p.x2).collect(), base.a2, base.b2);
    AffineMap::new(base.a1, base.b1 + g1, base.a2, base.b2 + g2)
}

pub fn scale_coordinate(map: &AffineMap, p: SpatialPoint) -> Result<(f64, f64), DesignError> {
    map.scale(p)
}

/// Identity of a design column: per-direction basis indices and their levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnIndex {
    pub l: u32,
    pub m: u32,
    pub level_x1: u32,
    pub level_x2: u32,
}

impl ColumnIndex {
    pub fn new(l: u32, m: u32) -> Self {
        let level = |k: u32| {
            BasisFunction::from_index(k as usize)
                .map(|f| f.level)
                .unwrap_or(0)
        };
        Self {
            l,
            m,
            level_x1: level(l),
            level_x2: level(m),
        }
    }

    pub fn shift_x1(&self) -> u32 {
        BasisFunction::from_index(self.l as usize).map_or(0, |f| f.shift)
    }

    pub fn shift_x2(&self) -> u32 {
        BasisFunction::from_index(self.m as usize).map_or(0, |f| f.shift)
    }

    /// Finest level involved in either direction.
    pub fn max_level(&self) -> u32 {
        self.level_x1.max(self.level_x2)
    }

    /// Position among the `K^2 - 1` columns (row-major in `(l, m)`, constant pair omitted).
    pub fn position(&self, per_direction: usize) -> usize {
        (self.l as usize - 1) * per_direction + self.m as usize - 2
    }

    pub fn from_position(pos: usize, per_direction: usize) -> Self {
        let full = pos + 1;
        Self::new(
            (full / per_direction + 1) as u32,
            (full % per_direction + 1) as u32,
        )
    }
}

/// Spatial-scale class of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    Low,
    High,
}

/// Low when both directions are at or below `cutoff` (level 0 counts as low).
pub fn classify_column(col: &ColumnIndex, cutoff: u32) -> Band {
    if col.level_x1 <= cutoff && col.level_x2 <= cutoff {
        Band::Low
    } else {
        Band::High
    }
}

pub fn tensor_value(
    basis: &PeriodizedBasis,
    col: &ColumnIndex,
    u1: f64,
    u2: f64,
) -> Result<f64, DesignError> {
    let a = basis.evaluate(col.l as usize, u1)?;
    let b = basis.evaluate(col.m as usize, u2)?;
    Ok(a * b)
}

#[derive(Debug, Clone, Copy)]
pub struct DesignOptions {
    pub threshold: f64,
    pub memory_cap: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_SPARSE_THRESHOLD,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }
}

/// Sparse tensor-product design with per-column scale metadata.
#[derive(Debug, Clone)]
pub struct SparseDesign {
    matrix: CsrMatrix,
    columns: Vec<ColumnIndex>,
    levels: u32,
}

impl SparseDesign {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn columns(&self) -> &[ColumnIndex] {
        &self.columns
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }
}

/// Upper bound on the bytes needed for `n` rows.
pub fn estimate_design_bytes(n: usize, basis: &PeriodizedBasis) -> usize {
    let per_row = basis.max_nonzero().pow(2);
    n.saturating_mul(per_row)
        .saturating_mul(std::mem::size_of::<f64>() + std::mem::size_of::<u32>())
        .saturating_add((n + 1) * std::mem::size_of::<usize>())
}

pub fn build_design(
    surface: &DailySurface,
    basis: &PeriodizedBasis,
    map: &AffineMap,
) -> Result<SparseDesign, DesignError> {
    surface.validate()?;
    build_design_for_points(&surface.points, basis, map, DesignOptions::default())
}

/// Assembles the design in row blocks; rows follow `points` order.
pub fn build_design_for_points(
    points: &[SpatialPoint],
    basis: &PeriodizedBasis,
    map: &AffineMap,
    opts: DesignOptions,
) -> Result<SparseDesign, DesignError> {
    let required = estimate_design_bytes(points.len(), basis);
    if required > opts.memory_cap {
        return Err(DesignError::ResourceExceeded {
            required,
            cap: opts.memory_cap,
        });
    }
    let k = basis.len();
    let n_cols = k * k - 1;
    const BLOCK: usize = 512;

    let blocks: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = points
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut lens = Vec::with_capacity(chunk.len());
            let mut idx = Vec::new();
            let mut vals = Vec::new();
            let mut z1 = Vec::new();
            let mut z2 = Vec::new();
            for p in chunk {
                let (u1, u2) = map.scale(*p)?;
                basis.evaluate_all(u1, 0.0, &mut z1)?;
                basis.evaluate_all(u2, 0.0, &mut z2)?;
                let before = vals.len();
                for &(l, va) in &z1 {
                    let row_base = (l as usize - 1) * k;
                    for &(m, vb) in &z2 {
                        if l == 1 && m == 1 {
                            continue;
                        }
                        let v = va * vb;
                        if v.abs() > opts.threshold {
                            idx.push((row_base + m as usize - 2) as u32);
                            vals.push(v);
                        }
                    }
                }
                lens.push(vals.len() - before);
            }
            Ok((lens, idx, vals))
        })
        .collect::<Result<_, DesignError>>()?;

    let nnz: usize = blocks.iter().map(|b| b.2.len()).sum();
    let mut row_ptr = Vec::with_capacity(points.len() + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for (lens, idx, vals) in blocks {
        for len in lens {
            row_ptr.push(row_ptr.last().unwrap() + len);
        }
        col_idx.extend_from_slice(&idx);
        values.extend_from_slice(&vals);
    }
    let matrix = CsrMatrix::from_parts(points.len(), n_cols, row_ptr, col_idx, values)
        .map_err(|e| DesignError::InvalidSurface(e.to_string()))?;
    let columns = (0..n_cols)
        .map(|c| ColumnIndex::from_position(c, k))
        .collect();
    Ok(SparseDesign {
        matrix,
        columns,
        levels: basis.levels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet_basis::daubechies_filter;

    fn basis(levels: u32) -> PeriodizedBasis {
        PeriodizedBasis::new(&daubechies_filter(5).unwrap(), levels, 12).unwrap()
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2006, 1, 1).unwrap()
    }

    #[test]
    fn periodic_map_aligns_regular_grids() {
        let pts: Vec<SpatialPoint> = (0..8)
            .flat_map(|i| (0..4).map(move |j| SpatialPoint::new(2.0 * i as f64, 10.0 + j as f64)))
            .collect();
        let map = fit_periodic_map(&pts).unwrap();
        assert_eq!((map.a1, map.b1, map.a2, map.b2), (0.0, 16.0, 10.0, 14.0));
        let (u1, u2) = map.scale(SpatialPoint::new(14.0, 13.0)).unwrap();
        assert_eq!((u1, u2), (0.875, 0.75));
    }

    #[test]
    fn affine_map_uses_extremes() {
        let pts = [
            SpatialPoint::new(0.0, 3.0),
            SpatialPoint::new(10.0, 5.0),
            SpatialPoint::new(4.0, 4.0),
        ];
        let m = fit_affine_map(&pts).unwrap();
        assert_eq!((m.a1, m.b1, m.a2, m.b2), (0.0, 10.0, 3.0, 5.0));
        let flat = [SpatialPoint::new(0.0, 1.0), SpatialPoint::new(2.0, 1.0)];
        assert!(matches!(
            fit_affine_map(&flat),
            Err(DesignError::Degenerate(_))
        ));
    }

    #[test]
    fn scale_is_half_open() {
        let m = AffineMap::new(-73.5, -69.9, 41.2, 43.0).unwrap();
        let (u1, u2) = m.scale(SpatialPoint::new(-73.5, 43.0)).unwrap();
        assert_eq!(u1, 0.0);
        assert_eq!(u2, 1.0f64.next_down());
        let (mid, _) = m
            .scale(SpatialPoint::new((-73.5 + -69.9) / 2.0, 42.0))
            .unwrap();
        assert!((mid - 0.5).abs() < 1e-15);
        assert!(matches!(
            m.scale(SpatialPoint::new(-74.0, 42.0)),
            Err(DesignError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn column_positions_round_trip() {
        for k in [2usize, 4, 32] {
            for pos in 0..k * k - 1 {
                let c = ColumnIndex::from_position(pos, k);
                assert_eq!(c.position(k), pos);
                assert!(!(c.l == 1 && c.m == 1));
            }
        }
        let c = ColumnIndex::new(5, 9);
        assert_eq!((c.level_x1, c.level_x2), (3, 4));
        assert_eq!((c.shift_x1(), c.shift_x2()), (0, 0));
    }

    #[test]
    fn classification_rules() {
        let col = |a: u32, b: u32| ColumnIndex {
            l: 0,
            m: 0,
            level_x1: a,
            level_x2: b,
        };
        assert_eq!(classify_column(&col(2, 3), 3), Band::Low);
        assert_eq!(classify_column(&col(1, 5), 3), Band::High);
        assert_eq!(classify_column(&col(0, 3), 3), Band::Low);
        for a in 0..=7 {
            for b in 0..=7 {
                assert_eq!(classify_column(&col(a, b), 7), Band::Low);
            }
        }
    }

    #[test]
    fn tensor_values_factorize() {
        let b = basis(3);
        let c = ColumnIndex::new(1, 1);
        assert!((tensor_value(&b, &c, 0.2, 0.9).unwrap() - 1.0).abs() < 1e-6);
        let c = ColumnIndex::new(1, 6);
        let direct = b.evaluate(6, 0.7).unwrap();
        let t = tensor_value(&b, &c, 0.3, 0.7).unwrap();
        assert!((t - b.evaluate(1, 0.3).unwrap() * direct).abs() < 1e-15);
        assert!((t - direct).abs() < 1e-6);
    }

    #[test]
    fn design_shape_and_row_bound() {
        let b = basis(3);
        let pts: Vec<SpatialPoint> = (0..40)
            .map(|i| SpatialPoint::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()))
            .collect();
        let s = DailySurface::new(day(), pts.clone(), vec![1.0; 40]).unwrap();
        let m = fit_affine_map(&pts).unwrap();
        let d = build_design(&s, &b, &m).unwrap();
        assert_eq!(d.n_cols(), 63);
        assert_eq!(d.n_rows(), 40);
        let bound = b.max_nonzero().pow(2);
        for r in 0..40 {
            assert!(d.matrix().row(r).0.len() <= bound);
        }
        for (pos, c) in d.columns().iter().enumerate() {
            assert_eq!(c.position(8), pos);
        }
    }

    #[test]
    fn memory_cap_is_enforced() {
        let b = basis(3);
        let pts = vec![SpatialPoint::new(0.0, 0.0), SpatialPoint::new(1.0, 1.0)];
        let m = fit_affine_map(&pts).unwrap();
        let err = build_design_for_points(
            &pts,
            &b,
            &m,
            DesignOptions {
                memory_cap: 100,
                ..Default::default()
            },
        )
        .unwrap_err();
        match err {
            DesignError::ResourceExceeded { required, cap } => {
                assert_eq!(cap, 100);
                assert_eq!(required, estimate_design_bytes(2, &b));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn surface_validation() {
        let p = SpatialPoint::new(1.0, 2.0);
        assert!(DailySurface::new(day(), vec![], vec![]).is_err());
        assert!(DailySurface::new(day(), vec![p, p], vec![1.0, 2.0]).is_err());
        assert!(DailySurface::new(day(), vec![p], vec![f64::NAN]).is_err());
        assert!(DailySurface::new(day(), vec![p], vec![1.0, 2.0]).is_err());
        assert!(DailySurface::new(day(), vec![p], vec![1.0]).is_ok());
    }
}
