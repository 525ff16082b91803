//! Removing fine levels from one day's spatial component.

use spatial_mra::decomposer::{filter_levels, Decomposer, LevelFilterSpec};
use spatial_mra::harness::{decomposition_config, simulate_surfaces, sweep_sets, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SimConfig::default();
    cfg.days = 1;
    cfg.levels = 6;
    cfg.level_noise_sd = 1.0;
    cfg.level_noise_levels = vec![5, 6];
    cfg.penalty = "fraction:0.02".parse()?;
    let sims = simulate_surfaces(&cfg)?;

    let dec = Decomposer::new(decomposition_config(&cfg))?;
    let grid = dec.prepare_grid(&sims.points)?;
    let day = dec.decompose_on(&sims.surfaces[0], &grid)?;

    let truth: Vec<f64> = sims.truth[0].low.iter().zip(&sims.truth[0].high).map(|(l, h)| l + h).collect();
    println!("{:<22} {:>10} {:>12}", "dropped", "sd", "rmse vs truth");
    for dropped in sweep_sets(cfg.levels) {
        let spec = LevelFilterSpec::new(dropped.iter().copied(), cfg.levels)?;
        let kept = filter_levels(&day, &spec, grid.design())?;
        let n = kept.len() as f64;
        let sd = (kept.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let rmse = (kept.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
        println!("{:<22} {sd:>10.4} {rmse:>12.4}", format!("{dropped:?}"));
    }
    Ok(())
}
