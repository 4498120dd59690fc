use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Vector3};

use spinefuse_core::mesh::{build_adjacency, grid, icosphere, VertexWeights, WeightScheme};
use spinefuse_core::registration::{Landmark, LandmarkSet};
use spinefuse_core::skinfit::{
    bending_energy, build_correspondences, fit_surface, resolve_fixed_pairs, CorrespondenceKind,
    SkinFitConfig,
};
use spinefuse_core::spatial::WrapSurface;
use spinefuse_core::Error;

fn mean_radius_error(mesh: &spinefuse_core::mesh::TriMesh, r: f64) -> f64 {
    mesh.vertices()
        .iter()
        .map(|p| (p.coords.norm() - r).abs())
        .sum::<f64>()
        / mesh.vertex_count() as f64
}

fn mean_displacement(

    a: &spinefuse_core::mesh::TriMesh,
    b: &spinefuse_core::mesh::TriMesh,
) -> f64 {
    a.vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / a.vertex_count() as f64
}

#[test]
fn strong_fit_weight_snaps_template_onto_wrap() {
    let template = icosphere(25.0, 2).unwrap();
    let wrap = icosphere(20.0, 3).unwrap();
    let config = SkinFitConfig {
        w_fit: 1000.0,
        w_reg: 1.0,
        outer_iters: 30,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &BTreeMap::new()).unwrap();
    let err = mean_radius_error(&result.mesh, 20.0);
    assert!(err < 0.02 * 20.0, "mean radial error {err} mm");
}

#[test]
fn strong_regulariser_keeps_template_in_place() {
    let template = icosphere(25.0, 2).unwrap();
    let wrap = icosphere(20.0, 3).unwrap();
    let config = SkinFitConfig {
        w_fit: 1.0,
        w_reg: 1000.0,
        outer_iters: 30,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &BTreeMap::new()).unwrap();
    let moved = mean_displacement(&template, &result.mesh);
    // the template/wrap gap is 5 mm; a stiff surface barely crosses it
    assert!(moved < 0.05 * 5.0, "mean displacement {moved} mm");
}

#[test]
fn every_logged_iteration_is_non_increasing() {
    let template = icosphere(25.0, 2).unwrap();
    let wrap = icosphere(20.0, 2).unwrap();
    let config = SkinFitConfig {
        w_fit: 5.0,
        w_reg: 2.0,
        outer_iters: 25,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &BTreeMap::new()).unwrap();
    assert!(!result.iterations.is_empty());
    for it in &result.iterations {
        assert!(
            it.energy_after <= it.energy_before * (1.0 + 1e-9) + 1e-12,
            "iteration {} increased energy: {} -> {}",
            it.iteration,
            it.energy_before,
            it.energy_after
        );
        assert!(it.fit_term >= 0.0 && it.reg_term >= 0.0);
        assert!(
            (it.fit_term + it.reg_term - it.energy_after).abs()
                <= 1e-9 * it.energy_after.max(1.0)
        );
    }
}

#[test]
fn correspondence_classes_carry_fixed_weights() {
    assert_eq!(CorrespondenceKind::ClosestPoint.weight(), 0.1);
    assert_eq!(CorrespondenceKind::Fixed.weight(), 1.0);
    assert_eq!(CorrespondenceKind::Collision.weight(), 100.0);
}

#[test]
fn penetrating_vertices_are_flagged_as_collisions() {
    let wrap_mesh = icosphere(20.0, 3).unwrap();
    let wrap = WrapSurface::new(&wrap_mesh).unwrap();

    // outside the wrap: plain closest-point attachments
    let outside = icosphere(25.0, 1).unwrap();
    let cs = build_correspondences(outside.vertices(), &wrap, &BTreeMap::new(), 0.0).unwrap();
    assert!(cs.iter().all(|c| c.kind == CorrespondenceKind::ClosestPoint));

    // deep inside: collisions under a zero margin...
    let inside = icosphere(12.0, 1).unwrap();
    let cs = build_correspondences(inside.vertices(), &wrap, &BTreeMap::new(), 0.0).unwrap();
    assert!(cs.iter().all(|c| c.kind == CorrespondenceKind::Collision));
    for c in &cs {
        // the escape target sits on the wrap, i.e. near radius 20
        assert!((c.target.coords.norm() - 20.0).abs() < 0.5);
    }

    // ...but tolerated when the margin allows that depth; the polyhedral
    // wrap is slightly inside r = 20, so leave slack on the depth bound
    let cs = build_correspondences(inside.vertices(), &wrap, &BTreeMap::new(), 9.0).unwrap();
    assert!(cs.iter().all(|c| c.kind == CorrespondenceKind::ClosestPoint));

    // fixed pins override classification entirely
    let mut fixed = BTreeMap::new();
    fixed.insert(0usize, Point3::new(0.0, 0.0, 30.0));
    let cs = build_correspondences(inside.vertices(), &wrap, &fixed, 0.0).unwrap();
    assert_eq!(cs[0].kind, CorrespondenceKind::Fixed);
    assert_eq!(cs[0].target, Point3::new(0.0, 0.0, 30.0));
    assert!(cs[1..].iter().all(|c| c.kind == CorrespondenceKind::Collision));
}

#[test]
fn collision_counts_shrink_as_the_template_escapes() {
    let template = icosphere(15.0, 2).unwrap();
    let wrap = icosphere(20.0, 2).unwrap();
    // the converged state balances fit against bend and settles a hair
    // (micrometres) inside the wrap, so give the collision test a margin
    // that separates "penetrating" from "sitting on the surface"
    let config = SkinFitConfig {
        w_fit: 500.0,
        w_reg: 1.0,
        outer_iters: 40,
        margin_mm: 0.1,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &BTreeMap::new()).unwrap();
    let first = &result.iterations[0];
    let last = result.iterations.last().unwrap();
    // everything starts 5 mm deep, far beyond the margin
    assert_eq!(first.collision_count, template.vertex_count());
    assert_eq!(
        last.collision_count, 0,
        "collisions never resolved: {} -> {}",
        first.collision_count, last.collision_count
    );
    // and the escape actually reached the wrap
    assert!(mean_radius_error(&result.mesh, 20.0) < 1.0);
}

#[test]
fn bending_energy_is_invariant_under_rigid_motion() {
    let template = icosphere(10.0, 2).unwrap();
    let adjacency = build_adjacency(&template);
    let weights = VertexWeights::build(&template, &adjacency, WeightScheme::Cotangent).unwrap();
    let rot = *nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 0.9).matrix();
    let shift = Vector3::new(4.0, -2.0, 7.0);
    let moved: Vec<Point3<f64>> = template
        .vertices()
        .iter()
        .map(|p| Point3::from(rot * p.coords + shift))
        .collect();
    let rotations = vec![rot; template.vertex_count()];
    let e = bending_energy(
        &moved,
        template.vertices(),
        &adjacency,
        &weights,
        &rotations,
    );
    assert!(e < 1e-18, "rigid motion produced bending energy {e}");

    // with identity rotations the same motion is pure bend mismatch
    let identity = vec![Matrix3::identity(); template.vertex_count()];
    let e_bad = bending_energy(
        &moved,
        template.vertices(),
        &adjacency,
        &weights,
        &identity,
    );
    assert!(e_bad > 1e-6);
}

#[test]
fn fixed_pairs_resolve_to_nearest_template_vertices() {
    let template = icosphere(10.0, 1).unwrap();
    let north_idx = template
        .vertices()
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.z.total_cmp(&b.z))
        .map(|(i, _)| i)
        .unwrap();
    let north = template.vertices()[north_idx];

    let on_template = LandmarkSet {
        frame: "template".into(),
        landmarks: vec![Landmark {
            name: "apex".into(),
            position: north + Vector3::new(0.1, 0.0, 0.2),
            sigma: 1.0,
        }],
    };
    let on_wrap = LandmarkSet {
        frame: "wrap".into(),
        landmarks: vec![Landmark {
            name: "apex".into(),
            position: Point3::new(0.0, 0.0, 14.0),
            sigma: 1.0,
        }],
    };
    let fixed = resolve_fixed_pairs(&template, &on_template, &on_wrap).unwrap();
    assert_eq!(fixed.len(), 1);
    assert_eq!(fixed[&north_idx], Point3::new(0.0, 0.0, 14.0));

    // missing wrap-side name
    let missing = LandmarkSet {
        frame: "wrap".into(),
        landmarks: vec![Landmark {
            name: "other".into(),
            position: Point3::origin(),
            sigma: 1.0,
        }],
    };
    assert!(matches!(
        resolve_fixed_pairs(&template, &on_template, &missing),
        Err(Error::Lookup(_))
    ));

    // two landmarks resolving to one vertex
    let doubled = LandmarkSet {
        frame: "template".into(),
        landmarks: vec![
            Landmark {
                name: "apex".into(),
                position: north,
                sigma: 1.0,
            },
            Landmark {
                name: "apex2".into(),
                position: north + Vector3::new(0.01, 0.0, 0.0),
                sigma: 1.0,
            },
        ],
    };
    let wrap_two = LandmarkSet {
        frame: "wrap".into(),
        landmarks: vec![
            Landmark {
                name: "apex".into(),
                position: Point3::new(0.0, 0.0, 14.0),
                sigma: 1.0,
            },
            Landmark {
                name: "apex2".into(),
                position: Point3::new(0.0, 0.0, 15.0),
                sigma: 1.0,
            },
        ],
    };
    assert!(matches!(
        resolve_fixed_pairs(&template, &doubled, &wrap_two),
        Err(Error::Structural(_))
    ));
}

#[test]
fn fixed_vertices_are_pulled_to_their_targets() {
    let template = icosphere(25.0, 2).unwrap();
    let wrap = icosphere(20.0, 2).unwrap();
    let pin_target = Point3::new(0.0, 0.0, 22.0);
    let apex = template
        .vertices()
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.z.total_cmp(&b.z))
        .map(|(i, _)| i)
        .unwrap();
    let mut fixed = BTreeMap::new();
    fixed.insert(apex, pin_target);
    let config = SkinFitConfig {
        w_fit: 1000.0,
        w_reg: 1.0,
        outer_iters: 30,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &fixed).unwrap();
    let landed = result.mesh.vertices()[apex];
    // the pin competes with the regulariser, so "close", not "exact"
    assert!(
        (landed - pin_target).norm() < 0.5,
        "pinned vertex landed {landed:?}"
    );
}

#[test]
fn configuration_errors_are_rejected_up_front() {
    let template = icosphere(10.0, 1).unwrap();
    let wrap = icosphere(8.0, 1).unwrap();
    let no_handles = BTreeMap::new();

    let negative = SkinFitConfig {
        w_fit: -1.0,
        ..SkinFitConfig::default()
    };
    assert!(matches!(
        fit_surface(&template, &wrap, &negative, &no_handles),
        Err(Error::Parameter(_))
    ));

    let both_zero = SkinFitConfig {
        w_fit: 0.0,
        w_reg: 0.0,
        ..SkinFitConfig::default()
    };
    assert!(matches!(
        fit_surface(&template, &wrap, &both_zero, &no_handles),
        Err(Error::Parameter(_))
    ));

    let no_budget = SkinFitConfig {
        outer_iters: 0,
        ..SkinFitConfig::default()
    };
    assert!(matches!(
        fit_surface(&template, &wrap, &no_budget, &no_handles),
        Err(Error::Parameter(_))
    ));

    // the wrap must be a closed surface
    let open = grid(4, 4, 1.0).unwrap();
    assert!(matches!(
        fit_surface(&template, &open, &SkinFitConfig::default(), &no_handles),
        Err(Error::InsideTest(_))
    ));

    // bad margin and out-of-range fixed vertex surface in correspondences
    let wrap_surface = WrapSurface::new(&wrap).unwrap();
    assert!(matches!(
        build_correspondences(template.vertices(), &wrap_surface, &no_handles, -1.0),
        Err(Error::Parameter(_))
    ));
    let mut bad_fixed = BTreeMap::new();
    bad_fixed.insert(10_000usize, Point3::origin());
    assert!(matches!(
        build_correspondences(template.vertices(), &wrap_surface, &bad_fixed, 0.0),
        Err(Error::Structural(_))
    ));
}

#[test]
fn trace_csv_lists_initial_and_per_iteration_energy() {
    let template = icosphere(12.0, 1).unwrap();
    let wrap = icosphere(10.0, 1).unwrap();
    let config = SkinFitConfig {
        outer_iters: 5,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &BTreeMap::new()).unwrap();
    let csv = result.trace_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,energy_mm2");
    assert!(lines[1].starts_with("0,"));
    assert_eq!(lines.len(), result.iterations.len() + 2);
}
