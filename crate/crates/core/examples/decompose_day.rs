//! One synthetic day split into mean, low and high components, scored
//! against the generating fields.

use spatial_mra::decomposer::decompose_day;
use spatial_mra::harness::{decomposition_config, simulate_surfaces, SimConfig};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SimConfig::default();
    cfg.days = 1;
    let sims = simulate_surfaces(&cfg)?;
    let (surface, truth) = (&sims.surfaces[0], &sims.truth[0]);

    let t = std::time::Instant::now();
    let d = decompose_day(surface, &decomposition_config(&cfg))?;
    println!("{} points decomposed in {:.2}s", surface.len(), t.elapsed().as_secs_f64());
    println!("lambda {:.4e} of max {:.4e}", d.selected_lambda, d.lambda_max);
    println!("mean {:.4} (true {:.4})", d.mean, truth.mean);
    println!("corr(low, true low)   {:.4}", corr(&d.low_values, &truth.low));
    println!("corr(high, true high) {:.4}", corr(&d.high_values, &truth.high));
    let worst = d
        .total()
        .iter()
        .zip(&d.observed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max |mean + low + high - observed| = {worst:.1e}");
    Ok(())
}
