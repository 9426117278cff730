use std::path::PathBuf;

use hri_core::spatial::{exp_so3, Motion6, Transform, Vec3};
use hri_core::topology::{
    identify_topology, read_observations, synthesize, write_observations, Catalog, IdentifyOptions, ObjectObservation,
    ObjectSpec, SynthSpec,
};
use proptest::prelude::*;

fn tongs() -> (ObjectSpec, Catalog) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/tongs");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
    (
        serde_json::from_str(&read("object.json")).unwrap(),
        serde_json::from_str(&read("catalog.json")).unwrap(),
    )
}

fn observations(assignment: Vec<u8>, seed: u64) -> Vec<ObjectObservation> {
    let (object, catalog) = tongs();
    let spec = SynthSpec {
        assignment,
        start: 0.0,
        duration: 0.5,
        dt: 2e-3,
        seed,
        base_amplitude: [0.1, 0.4],
        joint_amplitude: [0.6, 0.05],
    };
    synthesize(&object, &catalog, &spec).unwrap()
}

/// The same motion seen from an inertial frame displaced by `x`. Rotations
/// are about the vertical so gravity is unchanged.
fn displaced(obs: &[ObjectObservation], x: &Transform) -> Vec<ObjectObservation> {
    obs.iter()
        .map(|o| ObjectObservation {
            base_pose: *x * o.base_pose,
            base_twist: Motion6::new(x.rotation * o.base_twist.linear, x.rotation * o.base_twist.angular),
            ..o.clone()
        })
        .collect()
}

#[test]
fn every_generating_hypothesis_is_recovered() {
    let (object, catalog) = tongs();
    for assignment in catalog.assignments() {
        let r = identify_topology(
            &object,
            &catalog,
            &observations(assignment.clone(), 5),
            &IdentifyOptions::default(),
        )
        .unwrap();
        assert_eq!(r.ranking.len(), 8);
        assert_eq!(r.ranking[0].assignment, assignment);
        assert!(!r.ambiguous);
        assert!(r.ranking.windows(2).all(|w| w[0].residual <= w[1].residual));
    }
}

#[test]
fn ranking_survives_the_csv_round_trip() {
    let (object, catalog) = tongs();
    let obs = observations(vec![1, 0, 1], 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.csv");
    write_observations(&path, &obs).unwrap();
    let back = read_observations(&path).unwrap();
    let a = identify_topology(&object, &catalog, &obs, &IdentifyOptions::default()).unwrap();
    let b = identify_topology(&object, &catalog, &back, &IdentifyOptions::default()).unwrap();
    for (x, y) in a.ranking.iter().zip(&b.ranking) {
        assert_eq!(x.assignment, y.assignment);
        assert!((x.residual - y.residual).abs() <= 1e-9 * (1.0 + x.residual));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn residuals_are_invariant_under_global_displacement(
        yaw in -3.0..3.0f64,
        shift in prop::array::uniform3(-5.0..5.0f64),
        seed in 0u64..100,
    ) {
        let (object, catalog) = tongs();
        let obs = observations(vec![0, 1, 1], seed);
        let x = Transform::new(exp_so3(&Vec3::new(0.0, 0.0, yaw)), Vec3::from(shift));
        let a = identify_topology(&object, &catalog, &obs, &IdentifyOptions::default()).unwrap();
        let b = identify_topology(&object, &catalog, &displaced(&obs, &x), &IdentifyOptions::default()).unwrap();
        for (p, q) in a.ranking.iter().zip(&b.ranking) {
            prop_assert_eq!(&p.assignment, &q.assignment);
            prop_assert!((p.residual - q.residual).abs() <= 1e-8 * (1.0 + p.residual), "{} vs {}", p.residual, q.residual);
        }
    }
}
