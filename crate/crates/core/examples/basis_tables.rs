//! Daubechies filters, the cascade tabulation of phi and psi, and the
//! periodized basis on [0, 1).

use spatial_mra::wavelet_basis::{cascade, daubechies_filter, mother_wavelet, PeriodizedBasis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for p in [1, 2, 5, 10] {
        let h = daubechies_filter(p)?;
        let sum: f64 = h.taps().iter().sum();
        println!("db{p}: {} taps, sum {sum:.15}", h.len());
    }

    let filter = daubechies_filter(5)?;
    let phi = cascade(&filter, 10)?;
    let psi = mother_wavelet(&filter, &phi)?;
    println!(
        "phi on [{}, {}], integral {:.8}; psi integral {:.2e}",
        phi.support_start(),
        phi.support_end(),
        phi.integral(),
        psi.integral()
    );

    let basis = PeriodizedBasis::new(&filter, 5, 12)?;
    println!("{} periodized functions per direction", basis.len());
    for k in [1, 2, 3, 9, 32] {
        let v: Vec<String> = [0.0, 0.25, 0.5, 0.75]
            .iter()
            .map(|u| format!("{:8.4}", basis.evaluate(k, *u).unwrap()))
            .collect();
        println!("k = {k:2}: {}", v.join(" "));
    }
    Ok(())
}
