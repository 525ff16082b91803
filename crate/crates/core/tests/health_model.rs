mod common;

use common::*;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mra::design2d::SpatialPoint;
use spatial_mra::exposure::{Cohort, ExposureRecord, ExposureTriple, Subject, WindowKind};
use spatial_mra::health_model::{
    bonferroni_ci, contrast_test, default_spline_df, fit_lmm, group_indices, run_model,
    spline_basis, ExposureMode, FixedDesign, LmmFit, ModelError, ModelSpec, RemlProfile,
};




#[test]
fn balanced_one_way_matches_anova_reml() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (g, m) = (12, 7);
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for j in 0..g {
        let b = normal(&mut rng, 1.5);
        for _ in 0..m {
            y.push(4.0 + b + normal(&mut rng, 1.0));
            groups.push(j);
        }
    }
    let n = g * m;
    let grand = y.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = (0..g)
        .map(|j| y[j * m..(j + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let msa = m as f64 * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (g - 1) as f64;
    let mse = (0..n).map(|i| (y[i] - means[groups[i]]).powi(2)).sum::<f64>()
        / (g * (m - 1)) as f64;
    let sb2 = ((msa - mse) / m as f64).max(0.0);
    assert!(sb2 > 0.0);

    let design = FixedDesign::from_columns(vec![("intercept".into(), vec![1.0; n])]).unwrap();
    let fit = fit_lmm(&y, &design, &groups).unwrap();
    assert!((fit.sigma_e2 - mse).abs() < 1e-8, "{} vs {mse}", fit.sigma_e2);
    assert!((fit.sigma_b2 - sb2).abs() < 1e-8, "{} vs {sb2}", fit.sigma_b2);
    assert!((fit.fixed_effects[0] - grand).abs() < 1e-8);
    assert!(!fit.boundary);
}

#[test]
fn negative_anova_estimate_truncates_to_zero() {
    // Group means identical, so MSA = 0 < MSE.
    let (g, m) = (6, 5);
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for j in 0..g {
        for o in offsets {
            y.push(3.0 + o * (1.0 + 0.1 * j as f64));
            groups.push(j);
        }
    }
    let n = g * m;
    let design = FixedDesign::from_columns(vec![("intercept".into(), vec![1.0; n])]).unwrap();
    let fit = fit_lmm(&y, &design, &groups).unwrap();
    assert_eq!(fit.gamma, 0.0);
    assert_eq!(fit.sigma_b2, 0.0);
    assert!(fit.boundary);
}


#[test]
fn zero_group_variance_reduces_to_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, m) = (15, 20);
    let n = g * m;
    let x1: Vec<f64> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    let groups: Vec<usize> = (0..n).map(|i| i / m).collect();
    let design = FixedDesign::from_columns(vec![
        ("intercept".into(), vec![1.0; n]),
        ("x1".into(), x1),
        ("x2".into(), x2),
    ])
    .unwrap();
    // Noise orthogonal to both the fixed design and the group indicators,
    // so the data carry no between-group signal at all.
    let mut basis = DMatrix::<f64>::zeros(n, 3 + g);
    basis.columns_mut(0, 3).copy_from(&design.matrix);
    for i in 0..n {
        basis[(i, 3 + groups[i])] = 1.0;
    }
    let e = DVector::from_fn(n, |_, _| normal(&mut rng, 2.0));
    let r = project_out(&basis, &e);
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 2.0 * design.matrix[(i, 1)] - 0.5 * design.matrix[(i, 2)] + r[i])
        .collect();

    let fit = fit_lmm(&y, &design, &groups).unwrap();
    let b = ols(&design.matrix, &y);
    for k in 0..3 {
        assert!((fit.fixed_effects[k] - b[k]).abs() < 1e-6);
    }
    assert!(fit.boundary);
    assert_eq!(fit.gamma, 0.0);
    let rss: f64 = (0..n)
        .map(|i| (y[i] - (design.matrix.row(i) * &b)[0]).powi(2))
        .sum();
    assert!((fit.sigma_e2 - rss / (n - 3) as f64).abs() < 1e-8);
}

#[test]
fn fixed_effects_match_dense_gls() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (y, design, groups) = simulate_lmm(&mut rng, 9, 7, [2.0, -0.7], 1.3, 1.0);
    let fit = fit_lmm(&y, &design, &groups).unwrap();
    assert!(fit.gamma > 0.0);
    let n = y.len();
    let mut v = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if groups[i] == groups[j] {
                v[(i, j)] += fit.gamma;
            }
        }
    }
    v *= fit.sigma_e2;
    let vinv = v.try_inverse().unwrap();
    let x = &design.matrix;
    let info = x.transpose() * &vinv * x;
    let cov = info.clone().try_inverse().unwrap();
    let beta = &cov * (x.transpose() * &vinv * DVector::from_column_slice(&y));
    for k in 0..2 {
        assert!((fit.fixed_effects[k] - beta[k]).abs() < 1e-8);
        for l in 0..2 {
            let scale = cov[(k, l)].abs().max(1e-12);
            assert!((fit.covariance[k][l] - cov[(k, l)]).abs() < 1e-8 * scale.max(1.0));
        }
    }
}

#[test]
fn reml_optimum_beats_perturbed_ratios() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (y, design, groups) = simulate_lmm(&mut rng, 40, 10, [5.0, 1.0], 2.0, 3.0);
    let profile = RemlProfile::new(&y, &design, &groups).unwrap();
    let fit = profile.fit().unwrap();
    assert!(fit.gamma > 0.0);
    let best = profile.loglik(fit.gamma);
    assert!((best - fit.reml_loglik).abs() < 1e-12);
    for k in 0..64 {
        let t = -3.0 + 6.0 * k as f64 / 63.0;
        let t = if t == 0.0 { 1e-3 } else { t };
        let other = profile.loglik(fit.gamma * t.exp());
        assert!(best >= other, "t = {t}: {best} < {other}");
    }
    assert!(profile.derivative(fit.gamma).abs() < 1e-6 * y.len() as f64);
}

#[test]
fn singleton_groups_are_unidentified() {
    let n = 30;
    let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let design = FixedDesign::from_columns(vec![("intercept".into(), vec![1.0; n])]).unwrap();
    let groups: Vec<usize> = (0..n).collect();
    assert!(matches!(
        fit_lmm(&y, &design, &groups),
        Err(ModelError::Unidentified(_))
    ));
    let one = vec![0; n];
    assert!(matches!(fit_lmm(&y, &design, &one), Err(ModelError::Unidentified(_))));
}

#[test]
fn rank_deficiency_names_dependent_columns() {
    let n = 40;
    let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
    let c: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 2.0 * u - v).collect();
    let design = FixedDesign::from_columns(vec![
        ("intercept".into(), vec![1.0; n]),
        ("a".into(), a),
        ("b".into(), b),
        ("c".into(), c),
    ])
    .unwrap();
    let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let groups: Vec<usize> = (0..n).map(|i| i % 4).collect();
    match fit_lmm(&y, &design, &groups) {
        Err(ModelError::RankDeficient { columns }) => assert_eq!(columns, vec!["c".to_string()]),
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn row_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (y, design, groups) = simulate_lmm(&mut rng, 25, 8, [1.0, 0.5], 1.0, 2.0);
    let labels: Vec<String> = groups.iter().map(|g| format!("tract{g}")).collect();
    let (g0, _) = group_indices(&labels);
    let base = fit_lmm(&y, &design, &g0).unwrap();

    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut rng);
    let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let l2: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
    let x2 = DMatrix::from_fn(y.len(), 2, |i, j| design.matrix[(order[i], j)]);
    let d2 = FixedDesign::new(design.names.clone(), x2).unwrap();
    let (g2, _) = group_indices(&l2);
    let perm = fit_lmm(&y2, &d2, &g2).unwrap();

    for k in 0..2 {
        assert!((base.fixed_effects[k] - perm.fixed_effects[k]).abs() < 1e-10);
    }
    assert!((base.sigma_b2 - perm.sigma_b2).abs() < 1e-10);
    assert!((base.sigma_e2 - perm.sigma_e2).abs() < 1e-10);
}

#[test]
fn wald_intervals_cover_at_nominal_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let truth = [3300.0, -8.0];
    let mut covered = 0;
    for rep in 0..200 {
        let (y, design, groups) = simulate_lmm(&mut rng, 500, 20, truth, 20.0, 50.0);
        let fit = fit_lmm(&y, &design, &groups).unwrap();
        let ci = bonferroni_ci(&fit, &["x".to_string()], 0.05).unwrap();
        let row = &ci.rows[0];
        if rep == 0 {
            assert!((row.estimate - truth[1]).abs() < 3.0 * row.std_error);
            assert!((fit.sigma_b2.sqrt() - 20.0).abs() < 3.0);
            assert!((fit.sigma_e2.sqrt() - 50.0).abs() < 1.5);
        }
        if row.lower <= truth[1] && truth[1] <= row.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / 200.0;
    assert!((0.92..=0.98).contains(&rate), "coverage {rate}");
}

fn manual_fit(names: &[&str], est: &[f64], cov: Vec<Vec<f64>>) -> LmmFit {
    LmmFit {
        names: names.iter().map(|s| s.to_string()).collect(),
        fixed_effects: est.to_vec(),
        covariance: cov,
        sigma_b2: 1.0,
        sigma_e2: 1.0,
        gamma: 1.0,
        reml_loglik: 0.0,
        n: 100,
        n_groups: 10,
        boundary: false,
    }
}

#[test]
fn bonferroni_quantiles() {
    let fit = manual_fit(
        &["a", "b", "c"],
        &[1.0, -2.0, 0.5],
        vec![vec![4.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.25]],
    );
    let one = bonferroni_ci(&fit, &["a".to_string()], 0.05).unwrap();
    assert!((one.quantile - 1.959_963_984_540_054).abs() < 1e-9);
    assert!((one.rows[0].upper - one.rows[0].estimate - one.quantile * 2.0).abs() < 1e-12);

    let fam: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let three = bonferroni_ci(&fit, &fam, 0.05).unwrap();
    assert!((three.quantile - 2.393_979_799_818_509).abs() < 1e-9);
    assert_eq!(three.family_size, 3);
    let two = bonferroni_ci(&fit, &fam[..2], 0.05).unwrap();
    assert!(one.quantile < two.quantile && two.quantile < three.quantile);
    for r in &three.rows {
        assert!(r.lower <= r.estimate && r.estimate <= r.upper);
    }
    assert!(bonferroni_ci(&fit, &[], 0.05).is_err());
    assert!(bonferroni_ci(&fit, &fam, 1.0).is_err());
    assert!(bonferroni_ci(&fit, &["zzz".to_string()], 0.05).is_err());
}

#[test]
fn contrast_basics() {
    let fit = manual_fit(
        &["low", "high"],
        &[-15.0, -5.0],
        vec![vec![9.0, 0.0], vec![0.0, 16.0]],
    );
    let same = contrast_test(&fit, "low", "low").unwrap();
    assert_eq!(same.estimate, 0.0);
    assert_eq!(same.p_value, 1.0);
    let c = contrast_test(&fit, "low", "high").unwrap();
    assert!((c.std_error - 5.0).abs() < 1e-12);
    assert!((c.z + 2.0).abs() < 1e-12);
    // two-sided p for |z| = 2
    assert!((c.p_value - 0.045_500_263_896_358_41).abs() < 1e-10);
}

#[test]
fn contrast_has_power_for_distinct_effects() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    for _ in 0..100 {
        let (groups, size) = (100, 20);
        let n = groups * size;
        let mut low = Vec::with_capacity(n);
        let mut high = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for j in 0..groups {
            let b = normal(&mut rng, 20.0);
            for _ in 0..size {
                let l = normal(&mut rng, 1.0);
                let h = normal(&mut rng, 1.0);
                low.push(l);
                high.push(h);
                y.push(3300.0 - 15.0 * l - 5.0 * h + b + normal(&mut rng, 50.0));
                g.push(j);
            }
        }
        let design = FixedDesign::from_columns(vec![
            ("intercept".into(), vec![1.0; n]),
            ("low".into(), low),
            ("high".into(), high),
        ])
        .unwrap();
        let fit = fit_lmm(&y, &design, &g).unwrap();
        if contrast_test(&fit, "low", "high").unwrap().p_value < 0.01 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn spline_columns_are_centered() {
    let x: Vec<f64> = (0..500).map(|i| 17_000.0 + (i as f64 * 7.3) % 1000.0).collect();
    let b = spline_basis(&x, 8).unwrap();
    assert_eq!(b.ncols(), 8);
    for col in b.column_iter() {
        assert!((col.sum() / x.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn spline_rejects_degenerate_input() {
    assert!(spline_basis(&vec![5.0; 50], 4).is_err());
    assert!(spline_basis(&[1.0, 2.0, 3.0, 4.0], 4).is_err());
    assert!(spline_basis(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).is_err());
    assert!(spline_basis(&[1.0, f64::NAN, 3.0, 4.0, 5.0], 3).is_err());
}

fn spline_fit_error(f: impl Fn(f64) -> f64, df: usize) -> f64 {
    let x: Vec<f64> = (0..1096).map(|i| 16_000.0 + i as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| f((v - 16_000.0) / 1095.0)).collect();
    let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - y.iter().cloned().fold(f64::INFINITY, f64::min);
    let b = spline_basis(&x, df).unwrap();
    let mut design = DMatrix::<f64>::zeros(x.len(), df + 1);
    design.column_mut(0).fill(1.0);
    design.columns_mut(1, df).copy_from(&b);
    let fitted = &design * ols(&design, &y);
    let err = fitted
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    err / range
}

#[test]
fn spline_recovers_cubic_trend() {
    let trend = |t: f64| 2.0 * t.powi(3) - 3.0 * t.powi(2) + 5.0;
    for df in [6, 8, 12] {
        let rel = spline_fit_error(trend, df);
        assert!(rel < 0.01, "df {df}: relative error {rel}");
    }
}

#[test]
fn spline_error_shrinks_for_high_curvature_cubic() {
    // Large curvature at both ends, which a natural spline forces to zero;
    // df = 6 is not enough here but the error keeps falling with df.
    let harsh = |t: f64| 3.0 * t.powi(3) - 4.0 * t.powi(2) + t;
    let errs: Vec<f64> = [6, 8, 12, 20].iter().map(|&df| spline_fit_error(harsh, df)).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 0.01, "{errs:?}");
}

#[test]
fn default_df_scales_with_span() {
    assert_eq!(default_spline_df(&[0.0, 100.0]), 3);
    assert_eq!(default_spline_df(&[0.0, 365.25 * 6.0]), 24);
    assert_eq!(default_spline_df(&[1.0, 1.0]), 3);
}

fn cohort_with(
    rng: &mut ChaCha8Rng,
    n_tracts: usize,
    per_tract: usize,
    effects: [f64; 3],
) -> (Cohort, Vec<ExposureRecord>) {
    let birth0 = NaiveDate::from_ymd_opt(2003, 1, 1).unwrap();
    let mut subjects = Vec::new();
    let mut records = Vec::new();
    for t in 0..n_tracts {
        let b = normal(rng, 20.0);
        for k in 0..per_tract {
            let id = format!("s{t}_{k}");
            let triple = ExposureTriple {
                mean_avg: 10.0 + normal(rng, 2.0),
                low_avg: normal(rng, 1.5),
                high_avg: normal(rng, 1.0),
                filtered_avg: None,
                days_covered: 30,
                days_missing: 0,
            };
            let smoke = rng.gen_range(0.0..1.0);
            let outcome = 3300.0
                + effects[0] * triple.mean_avg
                + effects[1] * triple.low_avg
                + effects[2] * triple.high_avg
                - 150.0 * smoke
                + b
                + normal(rng, 50.0);
            subjects.push(Subject {
                id: id.clone(),
                location: SpatialPoint::new(rng.gen(), rng.gen()),
                birth_date: birth0 + chrono::Duration::days(rng.gen_range(0..1000)),
                gestation_days: 270,
                tract_id: format!("t{t}"),
                outcome,
                confounders: vec![smoke],
            });
            records.push(ExposureRecord {
                id,
                window: WindowKind::Last30Days,
                triple,
            });
        }
    }
    (
        Cohort {
            confounder_names: vec!["smoke".into()],
            subjects,
        },
        records,
    )
}

#[test]
fn equal_effects_make_total_and_triple_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (cohort, records) = cohort_with(&mut rng, 100, 30, [-10.0; 3]);
    let total = run_model(
        &ModelSpec::new(ExposureMode::Total, WindowKind::Last30Days),
        &cohort,
        &records,
    )
    .unwrap();
    let triple = run_model(
        &ModelSpec::new(ExposureMode::Triple, WindowKind::Last30Days),
        &cohort,
        &records,
    )
    .unwrap();
    assert_eq!(total.ci.family_size, 1);
    assert_eq!(triple.ci.family_size, 3);
    assert!(total.contrast.is_none());
    let t = &total.ci.rows[0];
    for row in &triple.ci.rows {
        let se = row.std_error.max(t.std_error);
        assert!((row.estimate - t.estimate).abs() < 2.0 * se, "{} {}", row.name, row.estimate);
    }
    let c = triple.contrast.unwrap();
    assert!(c.p_value > 0.01);
    assert!(triple.fit.index("smoke").is_some());
}

#[test]
fn run_model_adds_spline_and_checks_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (cohort, records) = cohort_with(&mut rng, 30, 20, [0.0, -5.0, -5.0]);
    let mut spec = ModelSpec::new(ExposureMode::Triple, WindowKind::Last30Days);
    spec.spline_df = Some(4);
    spec.confounders = Some(vec![]);
    let res = run_model(&spec, &cohort, &records).unwrap();
    assert_eq!(res.fit.names.len(), 1 + 3 + 4);
    assert!(res.fit.index("smoke").is_none());

    spec.confounders = Some(vec!["nope".into()]);
    assert!(matches!(
        run_model(&spec, &cohort, &records),
        Err(ModelError::InvalidInput(_))
    ));

    let filtered = ModelSpec::new(ExposureMode::MeanPlusFiltered, WindowKind::Last30Days);
    assert!(matches!(
        run_model(&filtered, &cohort, &records),
        Err(ModelError::InvalidInput(_))
    ));
    let wrong_window = ModelSpec::new(ExposureMode::Total, WindowKind::Trimester1);
    assert!(run_model(&wrong_window, &cohort, &records).is_err());
}

#[test]
fn mode_labels_round_trip() {
    for m in [ExposureMode::Total, ExposureMode::Triple, ExposureMode::MeanPlusFiltered] {
        assert_eq!(m.label().parse::<ExposureMode>().unwrap(), m);
    }
    assert!("bogus".parse::<ExposureMode>().is_err());
}
