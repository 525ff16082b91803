//! A reduced end-to-end scenario with its reports written to a directory.
//!
//! Usage: `cargo run --release --example scenario -- [out_dir] [key=value ...]`

use spatial_mra::harness::{run_scenario, write_reports, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "scenario_out".into());
    let mut cfg = SimConfig::from_kv_str(
        "days = 60\npenalty = fraction:0.05\nreplications = 20\nsweep = true\ndate_confounding = 50",
    )?;
    for kv in args {
        let (k, v) = kv.split_once('=').ok_or("overrides are key=value")?;
        cfg.set(k, v)?;
    }
    let result = run_scenario(&cfg)?;
    println!(
        "low corr {:.3}, high corr {:.3}, additivity {:.1e}",
        result.mean_low_correlation, result.mean_high_correlation, result.max_additivity_error
    );
    println!("{:#?}", result.rates);
    for f in &result.flags {
        println!("{:<34} {:.4} {}", f.rule, f.value, if f.passed { "pass" } else { "fail" });
    }
    write_reports(&result, std::path::Path::new(&out))?;
    println!("reports in {out}/");
    Ok(())
}
