//! Sparse tensor-product design for scattered points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mra::design2d::{
    build_design_for_points, classify_column, fit_affine_map, Band, DesignOptions, SpatialPoint,
};
use spatial_mra::wavelet_basis::{daubechies_filter, PeriodizedBasis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<SpatialPoint> = (0..5000)
        .map(|_| SpatialPoint::new(rng.gen_range(-71.5..-70.5), rng.gen_range(41.5..42.5)))
        .collect();
    let map = fit_affine_map(&points)?;
    let basis = PeriodizedBasis::new(&daubechies_filter(5)?, 6, 14)?;
    let design = build_design_for_points(&points, &basis, &map, DesignOptions::default())?;

    let x = design.matrix();
    let low = design
        .columns()
        .iter()
        .filter(|c| classify_column(c, 3) == Band::Low)
        .count();
    println!("{} rows x {} columns, {} nonzeros", x.n_rows(), x.n_cols(), x.nnz());
    println!(
        "{:.2}% dense, {:.1} MiB, {low} low-band columns",
        100.0 * x.nnz() as f64 / (x.n_rows() * x.n_cols()) as f64,
        x.heap_bytes() as f64 / (1 << 20) as f64
    );
    let (cols, vals) = x.row(0);
    println!("row 0 has {} entries, first at column {} = {:.4}", cols.len(), cols[0], vals[0]);
    Ok(())
}
