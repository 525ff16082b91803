//! Writing and reading the CSV/JSON formats used between stages.

use spatial_mra::decomposer::decompose_batch;
use spatial_mra::harness::{decomposition_config, simulate_cohort, simulate_surfaces, SimConfig};
use spatial_mra::io;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("spatial_mra_formats");
    std::fs::create_dir_all(&dir)?;
    let mut cfg = SimConfig::default();
    cfg.days = 35;
    cfg.grid_n1 = 32;
    cfg.grid_n2 = 32;
    cfg.cohort_size = 200;
    cfg.tracts = 20;
    cfg.penalty = "fraction:0.05".parse()?;

    let sims = simulate_surfaces(&cfg)?;
    io::write_surfaces(&dir.join("surfaces.csv"), &sims.surfaces)?;
    assert_eq!(io::read_surfaces(&dir.join("surfaces.csv"))?, sims.surfaces);

    let dcfg = decomposition_config(&cfg);
    let days = decompose_batch(&sims.surfaces, &dcfg)?.days;
    io::write_decomposition_dir(&dir.join("decomposed"), &days, &dcfg)?;
    let (_, back) = io::read_decomposition_dir(&dir.join("decomposed"))?;
    let same = days.iter().zip(&back).all(|(a, b)| a.low_values == b.low_values && a.high_values == b.high_values);
    println!("{} days back from disk, identical components: {same}", back.len());

    let cohort = simulate_cohort(&cfg, &sims, 0)?.cohort;
    io::write_subjects(&dir.join("subjects.csv"), &cohort)?;
    println!("subjects columns: {}", std::fs::read_to_string(dir.join("subjects.csv"))?.lines().next().unwrap_or(""));
    println!("files in {}", dir.display());
    Ok(())
}
