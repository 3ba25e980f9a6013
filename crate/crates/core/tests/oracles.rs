mod common;

use lodtherm::coarse::tuple_test;
use lodtherm::enrichment::class_statistics;
use lodtherm::geometry::{Point3, PointCloud, SemanticClass};
use rand::Rng;

#[test]
fn class_statistics_match_a_single_pass_oracle() {
    let mut rng = common::rng(2024);
    let n = 10_000;
    let labels: Vec<SemanticClass> = (0..n).map(|_| SemanticClass::ALL[rng.random_range(0..6)]).collect();
    let intensity: Vec<Option<f64>> = (0..n)
        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0.0..=1.0)))
        .collect();
    let pts = (0..n).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
    let cloud = PointCloud::new(pts)
        .unwrap()
        .with_labels(labels.clone())
        .unwrap()
        .with_intensity(intensity.clone())
        .unwrap();
    let stats = class_statistics(&cloud).unwrap();

    let mut count = [0usize; 6];
    let mut k = [0usize; 6];
    let mut sum = [0.0f64; 6];
    let mut sq = [0.0f64; 6];
    for (l, v) in labels.iter().zip(&intensity) {
        let c = l.code() as usize;
        count[c] += 1;
        if let Some(v) = v {
            k[c] += 1;
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    for row in &stats.rows {
        let c = row.class.code() as usize;
        assert_eq!(row.count, count[c]);
        assert_eq!(row.intensity_count, k[c]);
        let mean = sum[c] / k[c] as f64;
        let std = (sq[c] / k[c] as f64 - mean * mean).sqrt();
        assert!((row.mean_intensity.unwrap() - mean).abs() < 1e-12);
        assert!((row.std_intensity.unwrap() - std).abs() < 1e-12);
        assert!((row.coverage - k[c] as f64 / count[c] as f64).abs() < 1e-15);
    }
}

#[test]
fn tuple_test_thins_planted_outliers() {
    let mut rng = common::rng(77);
    let source: Vec<Point3> = (0..200)
        .map(|_| {
            Point3::new(
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..10.0),
            )
        })
        .collect();
    let t = common::random_transform(&mut rng, 40.0, 5.0);
    let target: Vec<Point3> = source.iter().map(|p| t.apply(p)).collect();
    // half the pairs point at a random wrong target
    let pairs: Vec<(usize, usize)> = (0..200)
        .map(|i| if i % 2 == 0 { (i, i) } else { (i, (i * 37 + 11) % 200) })
        .collect();
    let outlier = |&(i, j): &(usize, usize)| i != j;
    let before = pairs.iter().filter(|p| outlier(p)).count() as f64 / pairs.len() as f64;
    let kept = tuple_test(&source, &target, &pairs, 0.9, 1000, &mut rng);
    assert!(!kept.is_empty());
    let after = kept.iter().filter(|p| outlier(p)).count() as f64 / kept.len() as f64;
    assert!(after < before, "outlier fraction {before} -> {after}");
}
