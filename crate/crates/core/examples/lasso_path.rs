//! Coordinate-descent LASSO: a warm-started path, cross-validated penalty
//! choice and the optimality check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mra::lasso::{cv_select, fit, kkt_check, path, LassoProblem};
use spatial_mra::sparse::CsrMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, p) = (300, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 3.0 * r[0] - 2.0 * r[5] + r[17] + 0.3 * rng.gen_range(-1.0..1.0))
        .collect();
    let x = CsrMatrix::from_dense(&rows, p, 0.0)?;

    let problem = LassoProblem::new(&x, &y, 0.0);
    for s in path(&problem, 8, 1e-3)? {
        println!("lambda {:9.5}  active {:2}  sweeps {}", s.lambda, s.active_set().len(), s.iterations);
    }

    let cv = cv_select(&problem, 10, 1)?;
    println!("cv picks lambda {:.5}", cv.selected_lambda);
    let chosen = LassoProblem::new(&x, &y, cv.selected_lambda);
    let sol = fit(&chosen, None)?;
    println!("support {:?}", sol.active_set());
    println!("kkt: {:?}", kkt_check(&chosen, &sol));
    Ok(())
}
