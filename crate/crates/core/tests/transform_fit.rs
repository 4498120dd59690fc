use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinefuse_core::transform::{
    fit_rotation, weighted_similarity, SimilarityTransform,
};
use spinefuse_core::Error;

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    *Rotation3::from_axis_angle(&axis, angle).matrix()
}

fn random_transform(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    SimilarityTransform {
        scale: rng.random_range(0.5..2.0),
        rotation: random_rotation(rng),
        translation: Vector3::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        ),
    }
}

/// Geodesic distance between rotations, in radians. Uses the Frobenius
/// form `2·asin(‖A − B‖_F / (2√2))`, which stays well conditioned near
/// zero (the trace/acos form cannot resolve angles below ~1e-8).
fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    2.0 * ((a - b).norm() / (2.0 * std::f64::consts::SQRT_2)).clamp(-1.0, 1.0).asin()
}

#[test]
fn compose_then_inverse_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let t = random_transform(&mut rng);
        let round = t.inverse().compose(&t);
        let p = Point3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        assert!((round.apply_point(&p) - p).norm() < 1e-10);
        assert!((t.apply_point(&t.inverse().apply_point(&p)) - p).norm() < 1e-10);
    }
}

#[test]
fn compose_applies_right_operand_first() {
    let shift = SimilarityTransform {
        scale: 1.0,
        rotation: Matrix3::identity(),
        translation: Vector3::new(1.0, 0.0, 0.0),
    };
    let double = SimilarityTransform {
        scale: 2.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
    };
    let p = Point3::origin();
    // double ∘ shift: shift to (1,0,0), then double → (2,0,0)
    assert_eq!(double.compose(&shift).apply_point(&p), Point3::new(2.0, 0.0, 0.0));
    // shift ∘ double: double (still origin), then shift → (1,0,0)
    assert_eq!(shift.compose(&double).apply_point(&p), Point3::new(1.0, 0.0, 0.0));
}

#[test]
fn rotation_about_follows_the_right_hand_rule() {
    let t = SimilarityTransform::rotation_about(&Vector3::z(), 90.0);
    let rotated = t.apply_direction(&Vector3::x());
    assert!((rotated - Vector3::y()).norm() < 1e-12);
}

#[test]
fn validate_rejects_broken_transforms() {
    let mut t = SimilarityTransform::identity();
    t.scale = 0.0;
    assert!(matches!(t.validate(), Err(Error::Parameter(_))));

    let mut t = SimilarityTransform::identity();
    t.rotation[(0, 0)] = 2.0;
    assert!(matches!(t.validate(), Err(Error::Parameter(_))));

    // reflection: orthonormal but det −1
    let mut t = SimilarityTransform::identity();
    t.rotation = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    assert!(matches!(t.validate(), Err(Error::Parameter(_))));

    let mut t = SimilarityTransform::identity();
    t.translation.x = f64::INFINITY;
    assert!(matches!(t.validate(), Err(Error::Parameter(_))));
}

#[test]
fn serde_round_trip_and_validation_on_load() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_transform(&mut rng);
    let json = serde_json::to_string(&t).unwrap();
    let back: SimilarityTransform = serde_json::from_str(&json).unwrap();
    assert_eq!(t, back, "shortest round-trip floats survive JSON exactly");

    // deserialization re-validates
    let bad = r#"{"scale":1.0,"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#;
    assert!(serde_json::from_str::<SimilarityTransform>(bad).is_err());
}

#[test]
fn fit_rotation_recovers_random_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let r = random_rotation(&mut rng);
        let source: Vec<Vector3<f64>> = (0..6)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let target: Vec<Vector3<f64>> = source.iter().map(|s| r * s).collect();
        let fit = fit_rotation(&source, &target, &[1.0; 6]).unwrap();
        assert!(!fit.ambiguous);
        assert!(rotation_angle(&fit.rotation, &r) < 1e-9);
        assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fit_rotation_zero_weight_ignores_corrupted_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let r = random_rotation(&mut rng);
    let source: Vec<Vector3<f64>> = (0..5)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut target: Vec<Vector3<f64>> = source.iter().map(|s| r * s).collect();
    target[2] = Vector3::new(500.0, -300.0, 80.0); // garbage pair
    let weights = [1.0, 1.0, 0.0, 1.0, 1.0];
    let fit = fit_rotation(&source, &target, &weights).unwrap();
    assert!(rotation_angle(&fit.rotation, &r) < 1e-9);
}

#[test]
fn fit_rotation_planar_configurations_still_give_proper_rotations() {
    // all vectors in the xy-plane: rank 2, determined, not ambiguous
    let source = vec![Vector3::x(), Vector3::y(), Vector3::new(1.0, 1.0, 0.0)];
    let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4).matrix();
    let target: Vec<Vector3<f64>> = source.iter().map(|s| r * s).collect();
    let fit = fit_rotation(&source, &target, &[1.0; 3]).unwrap();
    assert!(!fit.ambiguous);
    assert!(rotation_angle(&fit.rotation, &r) < 1e-9);
}

#[test]
fn fit_rotation_flags_rank_deficient_input() {
    // a single direction: infinitely many minimizers
    let source = vec![Vector3::x(), Vector3::x() * 2.0];
    let target = vec![Vector3::y(), Vector3::y() * 2.0];
    let fit = fit_rotation(&source, &target, &[1.0; 2]).unwrap();
    assert!(fit.ambiguous);
    // the returned matrix is still a proper rotation mapping x near y
    assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
    assert!((fit.rotation * Vector3::x() - Vector3::y()).norm() < 1e-9);
}

#[test]
fn fit_rotation_validates_input() {
    assert!(fit_rotation(&[Vector3::x()], &[Vector3::x(), Vector3::y()], &[1.0]).is_err());
    assert!(fit_rotation(&[Vector3::x()], &[Vector3::x()], &[-1.0]).is_err());
    assert!(fit_rotation(&[Vector3::x()], &[Vector3::x()], &[0.0]).is_err());
    assert!(fit_rotation(&[], &[], &[]).is_err());
}

#[test]
fn weighted_similarity_recovers_exact_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..100 {
        let t = random_transform(&mut rng);
        let source: Vec<Point3<f64>> = (0..5)
            .map(|_| {
                Point3::new(
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-80.0..80.0),
                )
            })
            .collect();
        let target: Vec<Point3<f64>> = source.iter().map(|p| t.apply_point(p)).collect();
        let sigmas = [1.0, 0.5, 2.0, 1.0, 0.7];
        let fit = weighted_similarity(&source, &target, &sigmas).unwrap();
        assert!(
            (fit.transform.scale - t.scale).abs() / t.scale < 1e-10,
            "trial {trial}: scale {} vs {}",
            fit.transform.scale,
            t.scale
        );
        assert!(rotation_angle(&fit.transform.rotation, &t.rotation) < 1e-9);
        assert!((fit.transform.translation - t.translation).norm() < 1e-8);
        assert!(fit.residuals.iter().all(|&r| r < 1e-8));
    }
}

#[test]
fn weighted_similarity_downweights_noisy_landmarks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_transform(&mut rng);
    let source: Vec<Point3<f64>> = (0..5)
        .map(|_| {
            Point3::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
            )
        })
        .collect();
    let mut target: Vec<Point3<f64>> = source.iter().map(|p| t.apply_point(p)).collect();
    target[0] += Vector3::new(40.0, -25.0, 60.0); // badly measured landmark

    let tight = weighted_similarity(&source, &target, &[1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let loose = weighted_similarity(&source, &target, &[1e4, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let err_tight = rotation_angle(&tight.transform.rotation, &t.rotation);
    let err_loose = rotation_angle(&loose.transform.rotation, &t.rotation);
    assert!(
        err_loose < err_tight / 100.0,
        "σ-weighting should suppress the outlier: {err_loose} vs {err_tight}"
    );
    assert!(err_loose < 1e-6);
}

#[test]
fn weighted_similarity_rejects_degenerate_input() {
    // collinear points
    let source = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(2.0, 0.0, 0.0),
    ];
    let target = source.clone();
    assert!(matches!(
        weighted_similarity(&source, &target, &[1.0; 3]),
        Err(Error::Degenerate(_))
    ));

    // too few pairs
    let two = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
    assert!(weighted_similarity(&two, &two, &[1.0; 2]).is_err());

    // bad sigma
    let tri = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
    ];
    assert!(weighted_similarity(&tri, &tri, &[1.0, 1.0, 0.0]).is_err());
    assert!(weighted_similarity(&tri, &tri, &[1.0, 1.0, -2.0]).is_err());
}

#[test]
fn weighted_similarity_planar_landmarks_are_fine() {
    // five points in a plane (typical sagittally-bowed landmark layout)
    let source = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(10.0, 0.0, 100.0),
        Point3::new(25.0, 0.0, 300.0),
        Point3::new(12.0, 0.0, 450.0),
        Point3::new(2.0, 0.0, 600.0),
    ];
    let t = SimilarityTransform {
        scale: 1.1,
        rotation: *Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7).matrix(),
        translation: Vector3::new(5.0, -3.0, 12.0),
    };
    let target: Vec<Point3<f64>> = source.iter().map(|p| t.apply_point(p)).collect();
    let fit = weighted_similarity(&source, &target, &[1.0; 5]).unwrap();
    assert!((fit.transform.scale - 1.1).abs() < 1e-10);
    assert!(rotation_angle(&fit.transform.rotation, &t.rotation) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Recovery holds across the whole documented parameter range.
    #[test]
    fn similarity_recovery_property(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_transform(&mut rng);
        let source: Vec<Point3<f64>> = (0..5)
            .map(|_| Point3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            ))
            .collect();
        // skip accidentally near-collinear draws: they are rejected by design
        let fit = match weighted_similarity(
            &source,
            &source.iter().map(|p| t.apply_point(p)).collect::<Vec<_>>(),
            &[1.0; 5],
        ) {
            Ok(f) => f,
            Err(Error::Degenerate(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
        };
        prop_assert!((fit.transform.scale - t.scale).abs() / t.scale < 1e-8);
        prop_assert!(rotation_angle(&fit.transform.rotation, &t.rotation) < 1e-8);
        prop_assert!((fit.transform.translation - t.translation).norm() < 1e-7);
    }
}
