use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mra::design2d::SpatialPoint;
use spatial_mra::exposure::{
    aggregate, compute_exposures, nearest_cell, resolve_window, AggregateOptions, DayExposure,
    ExposureArchive, ExposureError, ExposureWindow, KdTree, Subject, WindowKind,
};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn subject(id: &str, loc: SpatialPoint, birth: NaiveDate, g: u32) -> Subject {
    Subject {
        id: id.into(),
        location: loc,
        birth_date: birth,
        gestation_days: g,
        tract_id: "t0".into(),
        outcome: 3300.0,
        confounders: vec![],
    }
}

fn brute_force(q: SpatialPoint, grid: &[SpatialPoint]) -> usize {
    let mut best = 0;
    for (i, p) in grid.iter().enumerate() {
        if q.distance_squared(p) < q.distance_squared(&grid[best]) {
            best = i;
        }
    }
    best
}

#[test]
fn grid_point_queries_return_themselves() {
    let grid: Vec<SpatialPoint> = (0..30).map(|i| SpatialPoint::new(i as f64 * 0.7, (i * i % 11) as f64)).collect();
    for (i, p) in grid.iter().enumerate() {
        assert_eq!(nearest_cell(*p, &grid, 0.0).unwrap(), i);
    }
}

#[test]
fn equidistant_points_resolve_to_the_lower_index() {
    let mut grid: Vec<SpatialPoint> = (0..10).map(|i| SpatialPoint::new(100.0 + i as f64, 50.0)).collect();
    grid[3] = SpatialPoint::new(-1.0, 0.0);
    grid[7] = SpatialPoint::new(1.0, 0.0);
    assert_eq!(nearest_cell(SpatialPoint::new(0.0, 0.0), &grid, 10.0).unwrap(), 3);
    grid.swap(3, 7);
    assert_eq!(nearest_cell(SpatialPoint::new(0.0, 0.0), &grid, 10.0).unwrap(), 3);
}

#[test]
fn tree_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scattered: Vec<SpatialPoint> = (0..500)
        .map(|_| SpatialPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0)))
        .collect();
    // integer lattice with half-integer queries produces many exact ties
    let lattice: Vec<SpatialPoint> = (0..20)
        .flat_map(|i| (0..20).map(move |j| SpatialPoint::new(i as f64, j as f64)))
        .collect();
    let mut shuffled = lattice.clone();
    shuffled.shuffle(&mut rng);
    for grid in [&scattered, &lattice, &shuffled] {
        let tree = KdTree::new(grid);
        for q in 0..1000 {
            let p = if q % 2 == 0 {
                SpatialPoint::new(rng.gen_range(-6.0..21.0), rng.gen_range(-1.0..21.0))
            } else {
                SpatialPoint::new(rng.gen_range(0..40) as f64 * 0.5, rng.gen_range(0..40) as f64 * 0.5)
            };
            assert_eq!(tree.nearest(p).unwrap().0, brute_force(p, grid), "query {p:?}");
        }
    }
}

#[test]
fn distant_subjects_are_unassignable() {
    let grid = vec![SpatialPoint::new(0.0, 0.0), SpatialPoint::new(1.0, 0.0)];
    let err = nearest_cell(SpatialPoint::new(5.0, 0.0), &grid, 2.0).unwrap_err();
    assert!(matches!(err, ExposureError::Unassignable { .. }));
    assert!(nearest_cell(SpatialPoint::new(0.0, 0.0), &[], 1.0).is_err());
}

#[test]
fn windows_follow_gestational_day_boundaries() {
    let birth = d(2006, 10, 1);
    let s = subject("a", SpatialPoint::new(0.0, 0.0), birth, 270);
    let conception = birth - Duration::days(270);
    let t1 = resolve_window(&s, WindowKind::Trimester1).unwrap();
    let t2 = resolve_window(&s, WindowKind::Trimester2).unwrap();
    let t3 = resolve_window(&s, WindowKind::Trimester3).unwrap();
    let full = resolve_window(&s, WindowKind::Full).unwrap();
    let last = resolve_window(&s, WindowKind::Last30Days).unwrap();
    assert_eq!(t1.start, conception + Duration::days(1));
    assert_eq!((t1.len(), t2.len(), t3.len()), (90, 90, 90));
    assert_eq!(t3.end, birth);
    assert_eq!(t1.end + Duration::days(1), t2.start);
    assert_eq!(t2.end + Duration::days(1), t3.start);
    assert_eq!((full.start, full.end), (t1.start, t3.end));
    assert_eq!(full.len(), t1.len() + t2.len() + t3.len());
    assert_eq!((last.len(), last.end), (30, birth));
}

#[test]
fn short_gestation_has_no_third_trimester() {
    let s = subject("b", SpatialPoint::new(0.0, 0.0), d(2006, 5, 1), 150);
    let err = resolve_window(&s, WindowKind::Trimester3).unwrap_err();
    assert!(matches!(err, ExposureError::EmptyWindow { start: 181, gestation: 150, .. }));
    let t2 = resolve_window(&s, WindowKind::Trimester2).unwrap();
    assert_eq!((t2.len(), t2.end), (60, d(2006, 5, 1)));
}

#[test]
fn window_labels_parse() {
    for k in WindowKind::ALL {
        assert_eq!(k.label().parse::<WindowKind>().unwrap(), k);
    }
    assert!("t4".parse::<WindowKind>().is_err());
}

fn synthetic_archive(
    grid: &[SpatialPoint],
    first: NaiveDate,
    days: i64,
    skip: impl Fn(i64) -> bool,
) -> ExposureArchive {
    let mut archive = ExposureArchive::new(grid).unwrap();
    for k in 0..days {
        if skip(k) {
            continue;
        }
        let date = first + Duration::days(k);
        let low: Vec<f64> = (0..grid.len()).map(|c| ((k * 7 + c as i64) % 13) as f64 - 6.0).collect();
        let high: Vec<f64> = (0..grid.len()).map(|c| ((k * 3 + 5 * c as i64) % 7) as f64 * 0.25).collect();
        archive
            .insert(
                date,
                DayExposure {
                    mean: 8.0 + (k as f64 * 0.3).sin(),
                    low,
                    high,
                    filtered: None,
                },
            )
            .unwrap();
    }
    archive
}

#[test]
fn single_day_window_reads_that_day() {
    let grid: Vec<SpatialPoint> = (0..5).map(|i| SpatialPoint::new(i as f64, 0.0)).collect();
    let first = d(2006, 1, 1);
    let archive = synthetic_archive(&grid, first, 10, |_| false);
    let day = first + Duration::days(4);
    let window = ExposureWindow {
        kind: WindowKind::Full,
        start: day,
        end: day,
    };
    let s = subject("c", SpatialPoint::new(2.1, 0.3), d(2006, 6, 1), 200);
    let t = aggregate(&s, &window, &archive, &AggregateOptions::default()).unwrap();
    let expect = archive.day(day).unwrap();
    assert_eq!((t.mean_avg, t.low_avg, t.high_avg), (expect.mean, expect.low[2], expect.high[2]));
    assert_eq!((t.days_covered, t.days_missing), (1, 0));
}

#[test]
fn constant_days_give_a_pure_mean_exposure() {
    let grid: Vec<SpatialPoint> = (0..4).map(|i| SpatialPoint::new(0.0, i as f64)).collect();
    let mut archive = ExposureArchive::new(&grid).unwrap();
    let birth = d(2006, 9, 30);
    for k in 0..400 {
        archive
            .insert(
                birth - Duration::days(k),
                DayExposure {
                    mean: 10.0,
                    low: vec![0.0; 4],
                    high: vec![0.0; 4],
                    filtered: None,
                },
            )
            .unwrap();
    }
    let s = subject("e", SpatialPoint::new(0.2, 2.2), birth, 280);
    for kind in WindowKind::ALL {
        let w = resolve_window(&s, kind).unwrap();
        let t = aggregate(&s, &w, &archive, &AggregateOptions::default()).unwrap();
        assert_eq!((t.mean_avg, t.low_avg, t.high_avg), (10.0, 0.0, 0.0));
    }
}

#[test]
fn ninety_day_average_matches_direct_recomputation() {
    let grid: Vec<SpatialPoint> = (0..6).map(|i| SpatialPoint::new(i as f64, i as f64)).collect();
    let first = d(2005, 12, 1);
    let archive = synthetic_archive(&grid, first, 400, |_| false);
    let birth = d(2006, 9, 1);
    let s = subject("f", SpatialPoint::new(3.2, 2.9), birth, 275);
    let w = resolve_window(&s, WindowKind::Trimester1).unwrap();
    assert_eq!(w.len(), 90);
    let t = aggregate(&s, &w, &archive, &AggregateOptions::default()).unwrap();
    // recompute from the generating formulas at cell 3
    let (mut m, mut l, mut h) = (0.0, 0.0, 0.0);
    let offset = (w.start - first).num_days();
    for k in offset..offset + 90 {
        m += 8.0 + (k as f64 * 0.3).sin();
        l += ((k * 7 + 3) % 13) as f64 - 6.0;
        h += ((k * 3 + 15) % 7) as f64 * 0.25;
    }
    assert!((t.mean_avg - m / 90.0).abs() < 1e-9);
    assert!((t.low_avg - l / 90.0).abs() < 1e-9);
    assert!((t.high_avg - h / 90.0).abs() < 1e-9);
    // linearity against the per-day totals
    let total: f64 = w
        .dates()
        .map(|date| {
            let day = archive.day(date).unwrap();
            day.mean + day.low[3] + day.high[3]
        })
        .sum::<f64>()
        / 90.0;
    assert!((t.total() - total).abs() < 1e-9);
}

#[test]
fn full_window_is_the_weighted_mean_of_trimesters() {
    let grid: Vec<SpatialPoint> = (0..3).map(|i| SpatialPoint::new(i as f64, 0.0)).collect();
    let first = d(2005, 1, 1);
    let archive = synthetic_archive(&grid, first, 700, |_| false);
    for g in [190, 260, 301] {
        let s = subject("g", SpatialPoint::new(1.0, 0.0), d(2006, 8, 15), g);
        let opts = AggregateOptions::default();
        let full = aggregate(&s, &resolve_window(&s, WindowKind::Full).unwrap(), &archive, &opts).unwrap();
        let parts: Vec<_> = [WindowKind::Trimester1, WindowKind::Trimester2, WindowKind::Trimester3]
            .iter()
            .map(|k| aggregate(&s, &resolve_window(&s, *k).unwrap(), &archive, &opts).unwrap())
            .collect();
        let n: f64 = parts.iter().map(|p| p.days_covered as f64).sum();
        let low: f64 = parts.iter().map(|p| p.low_avg * p.days_covered as f64).sum::<f64>() / n;
        let mean: f64 = parts.iter().map(|p| p.mean_avg * p.days_covered as f64).sum::<f64>() / n;
        assert!((full.low_avg - low).abs() < 1e-9);
        assert!((full.mean_avg - mean).abs() < 1e-9);
        assert_eq!(full.days_covered, g as usize);
    }
}

#[test]
fn coverage_below_threshold_lists_missing_dates() {
    let grid = vec![SpatialPoint::new(0.0, 0.0)];
    let first = d(2006, 1, 1);
    // every fourth day missing: 75% coverage
    let archive = synthetic_archive(&grid, first, 400, |k| k % 4 == 0);
    let s = subject("h", SpatialPoint::new(0.0, 0.0), d(2006, 10, 1), 270);
    let w = resolve_window(&s, WindowKind::Trimester2).unwrap();
    match aggregate(&s, &w, &archive, &AggregateOptions::default()) {
        Err(ExposureError::InsufficientCoverage { missing, covered, length, .. }) => {
            assert_eq!(length, 90);
            assert_eq!(covered + missing.len(), 90);
            assert!(missing.iter().all(|m| (*m - first).num_days() % 4 == 0));
        }
        other => panic!("expected coverage failure, got {other:?}"),
    }
    let relaxed = AggregateOptions {
        min_coverage: 0.7,
        ..AggregateOptions::default()
    };
    let t = aggregate(&s, &w, &archive, &relaxed).unwrap();
    assert_eq!(t.days_covered + t.days_missing, 90);
}

#[test]
fn results_do_not_depend_on_subject_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid: Vec<SpatialPoint> = (0..100)
        .map(|_| SpatialPoint::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
        .collect();
    let archive = synthetic_archive(&grid, d(2005, 1, 1), 800, |_| false);
    let mut subjects: Vec<Subject> = (0..200)
        .map(|i| {
            subject(
                &format!("s{i}"),
                SpatialPoint::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)),
                d(2006, 1, 1) + Duration::days(rng.gen_range(0..300)),
                rng.gen_range(240..300),
            )
        })
        .collect();
    let opts = AggregateOptions::default();
    let a = compute_exposures(&subjects, WindowKind::Trimester3, &archive, &opts).unwrap();
    subjects.reverse();
    let mut b = compute_exposures(&subjects, WindowKind::Trimester3, &archive, &opts).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

#[test]
fn subject_validation_checks_ranges() {
    let mut s = subject("v", SpatialPoint::new(0.0, 0.0), d(2006, 1, 1), 280);
    assert!(s.validate(0).is_ok());
    s.gestation_days = 139;
    assert!(s.validate(0).is_err());
    s.gestation_days = 280;
    s.outcome = 0.0;
    assert!(s.validate(0).is_err());
    s.outcome = 3000.0;
    assert!(s.validate(1).is_err());
}
