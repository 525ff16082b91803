use spatial_mra::decomposer::decompose_batch;
use spatial_mra::harness::*;

fn small() -> SimConfig {
    SimConfig::from_kv_str(
        "grid_n1 = 32\ngrid_n2 = 32\nextent = 32\ndays = 60\nlevels = 5\n\
         penalty = fraction:0.05\ncohort_size = 1500\ntracts = 50\nreplications = 50\n\
         low_length_scale = 6",
    )
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn config_text_round_trips() {
    let mut cfg = small();
    cfg.set("level_noise_levels", "5, 6").unwrap();
    cfg.set("spline_df", "7").unwrap();
    cfg.set("penalty", "fixed:0.25").unwrap();
    let back = SimConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(SimConfig::from_kv_str("gird_n1 = 3").is_err());
    assert!(SimConfig::from_kv_str("days = many").is_err());
    assert!(SimConfig::from_kv_str("penalty = lots").is_err());
    let mut cfg = SimConfig::default();
    cfg.noise_sd = -1.0;
    assert!(cfg.validate().is_err());
    let text = "# comment\n\ndays = 10\n";
    assert_eq!(SimConfig::from_kv_str(text).unwrap().days, 10);
}

#[test]
fn zero_amplitudes_give_constant_days() {
    let mut cfg = small();
    for key in ["low_amplitude", "high_amplitude", "noise_sd", "level_noise_sd"] {
        cfg.set(key, "0").unwrap();
    }
    let sims = simulate_surfaces(&cfg).unwrap();
    for (s, t) in sims.surfaces.iter().zip(&sims.truth) {
        assert!(s.values.iter().all(|v| *v == t.mean), "{} not constant", s.date);
    }
}

#[test]
fn noiseless_days_split_into_mean_and_spatial_truth() {
    let mut cfg = small();
    cfg.set("noise_sd", "0").unwrap();
    cfg.set("days", "8").unwrap();
    let sims = simulate_surfaces(&cfg).unwrap();
    let days = decompose_batch(&sims.surfaces, &decomposition_config(&cfg)).unwrap().days;
    let mut sq = 0.0;
    let mut norm = 0.0;
    for (d, t) in days.iter().zip(&sims.truth) {
        sq += (d.mean - t.mean).powi(2);
        norm += t.mean.powi(2);
        for i in 0..d.points.len() {
            let spatial = d.low_values[i] + d.high_values[i];
            let truth = t.low[i] + t.high[i];
            assert!((spatial - truth).abs() < 1e-9, "{}: {spatial} vs {truth}", d.date);
            assert!((d.mean + spatial - d.observed[i]).abs() < 1e-9);
        }
    }
    assert!((sq / norm).sqrt() < 1e-6);
}

#[test]
fn same_seed_gives_the_same_result() {
    let mut cfg = small();
    cfg.set("replications", "3").unwrap();
    cfg.set("days", "40").unwrap();
    cfg.set("sweep", "true").unwrap();
    let a = run_scenario(&cfg).unwrap().without_runtime();
    cfg.set("workers", "2").unwrap();
    let b = run_scenario(&cfg).unwrap().without_runtime();
    assert_eq!(a.replications, b.replications);
    assert_eq!(a.days, b.days);
    assert_eq!(a.rates, b.rates);
}

#[test]
fn null_effects_are_covered() {
    let mut cfg = small();
    for key in ["beta_low", "beta_high", "beta_mean", "smoking_effect", "age_effect"] {
        cfg.set(key, "0").unwrap();
    }
    let prepared = prepare_scenario(&cfg).unwrap();
    let result = evaluate_scenario(&prepared, &cfg).unwrap();
    assert!(result.failures.is_empty(), "{:?}", result.failures);
    let n = result.replications.len() as f64;
    for name in ["mean", "low", "high"] {
        let hits = result
            .replications
            .iter()
            .filter(|r| r.triple.get(name).unwrap().within(2.0))
            .count() as f64;
        assert!(hits / n >= 0.9, "{name}: {hits} of {n}");
    }
}

#[test]
fn doubling_the_cohort_shrinks_standard_errors() {
    let mut cfg = small();
    cfg.set("replications", "20").unwrap();
    let prepared = prepare_scenario(&cfg).unwrap();
    let se = |cfg: &SimConfig| {
        let r = evaluate_scenario(&prepared, cfg).unwrap();
        median(r.replications.iter().map(|x| x.triple.get("low").unwrap().std_error).collect())
    };
    let base = se(&cfg);
    let mut big = cfg.clone();
    big.set("cohort_size", "3000").unwrap();
    big.set("tracts", "100").unwrap();
    let ratio = se(&big) / base;
    let target = 1.0 / 2f64.sqrt();
    assert!((ratio / target - 1.0).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn sweep_without_high_effect_tracks_the_low_effect() {
    let mut cfg = small();
    cfg.set("beta_high", "0").unwrap();
    cfg.set("beta_mean", "0").unwrap();
    cfg.set("sweep", "true").unwrap();
    cfg.set("replications", "30").unwrap();
    let result = run_scenario(&cfg).unwrap();
    let sets = sweep_sets(cfg.levels);
    let beta_low = cfg.beta_low;
    for (k, dropped) in sets.iter().enumerate() {
        // Sets that still keep every level up to the cutoff.
        if dropped.is_empty() || dropped.iter().any(|l| *l <= cfg.low_cutoff) {
            continue;
        }
        let hits = result
            .replications
            .iter()
            .filter(|r| (r.sweep[k].estimate - beta_low).abs() <= 2.0 * r.sweep[k].std_error)
            .count();
        assert!(
            hits as f64 >= 0.9 * result.replications.len() as f64,
            "drop {dropped:?}: {hits} within 2 SE"
        );
    }
}

#[test]
fn reports_round_trip() {
    let mut cfg = small();
    cfg.set("replications", "2").unwrap();
    cfg.set("days", "40").unwrap();
    let result = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_reports(&result, dir.path()).unwrap();
    let back = read_result(&dir.path().join("scenario.json")).unwrap();
    assert_eq!(back, result);
    for f in ["days.csv", "estimates.csv", "summary.csv", "flags.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    for flag in &result.flags {
        assert!(result.flag(&flag.rule).is_some());
    }
}
