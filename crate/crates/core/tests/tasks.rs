//! Decision rules on likelihood fields and multi-instance coverage.

use proptest::prelude::*;

use shapebp::histogram::LikelihoodField;
use shapebp::synth::{gen_scene, SceneSpec};
use shapebp::tasks::{classify, classify_binary, label_edges, reference_plane_histogram, TaskConfig};
use shapebp::SurfaceClass;

fn field_strategy() -> impl Strategy<Value = LikelihoodField> {
    prop::collection::vec(prop::option::weighted(0.9, 0.0..=1.0f64), 0..200).prop_map(|s| LikelihoodField::new(s, 0.03))
}

proptest! {
    #[test]
    fn raising_tau_never_grows_planar_or_edge_sets(f in field_strategy(), a in 0.01..0.99f64, b in 0.01..0.99f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let planar_lo = classify_binary(&f, lo).unwrap();
        let planar_hi = classify_binary(&f, hi).unwrap();
        let edge_lo = label_edges(&f, lo).unwrap();
        let edge_hi = label_edges(&f, hi).unwrap();
        for i in 0..f.len() {
            if planar_hi.get(i) == SurfaceClass::Planar {
                prop_assert_eq!(planar_lo.get(i), SurfaceClass::Planar);
            }
            if edge_hi.get(i) == SurfaceClass::Edge {
                prop_assert_eq!(edge_lo.get(i), SurfaceClass::Edge);
            }
        }
    }

    #[test]
    fn every_valid_point_gets_exactly_one_label(f in field_strategy(), tau in 0.01..0.99f64) {
        let m = classify_binary(&f, tau).unwrap();
        for (s, l) in f.scores().iter().zip(m.labels()) {
            match s {
                Some(_) => prop_assert!(matches!(l, SurfaceClass::Planar | SurfaceClass::Curved)),
                None => prop_assert_eq!(*l, SurfaceClass::Unlabeled),
            }
        }
    }
}

#[test]
fn curved_label_covers_every_cylinder_instance() {
    let cylinders = [(-0.1, -0.08, 0.04), (0.1, -0.05, 0.05), (0.0, 0.1, 0.035)];
    let res = 0.005;
    let scene = gen_scene(&SceneSpec::cylinders_on_plane(0.4, res, &cylinders, 0.12)).unwrap();
    let config = TaskConfig::default();
    let hist = reference_plane_histogram(
        41,
        res,
        0.0,
        3,
        config.normal_radius_classify,
        &config.classify_inad(),
        config.layout(),
        config.min_neighbors,
    )
    .unwrap();
    let out = classify(&scene.cloud, &hist, &config).unwrap();
    for (cx, cy, r) in cylinders {
        let (mut hits, mut total) = (0, 0);
        for (i, p) in scene.cloud.points().iter().enumerate() {
            let on_side = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() > r - 1e-9
                && ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() < r + 1e-9;
            if on_side && scene.labels.get(i) == SurfaceClass::Curved {
                total += 1;
                hits += usize::from(out.labels.get(i) == SurfaceClass::Curved);
            }
        }
        assert!(total > 0);
        assert!(
            hits as f64 >= 0.95 * total as f64,
            "cylinder at ({cx}, {cy}): {hits}/{total}"
        );
    }
}
