//! RANSAC baseline on generated primitives with known parameters.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapebp::baseline::{extract_instances, ransac_fit, Model, ModelKind, RansacConfig};
use shapebp::synth::{gen_cylinder, gen_plane, gen_scene, Primitive, SceneSpec};
use shapebp::{Error, NormalField, PointCloud};

fn analytic_normals(normals: &[Vector3<f64>], viewpoint: Point3<f64>) -> NormalField {
    NormalField::new(normals.iter().map(|n| Some(*n)).collect(), 0.0, viewpoint)
}

fn plane_config() -> RansacConfig {
    let mut c = RansacConfig::new(ModelKind::Plane);
    c.inlier_threshold = 0.001;
    c.max_iterations = 200;
    c.min_inliers = 10;
    c.seed = 3;
    c
}

#[test]
fn noise_free_plane_is_recovered_exactly() {
    let scene = gen_plane(30, 30, 0.01, 0.0, 0).unwrap();
    let fit = ransac_fit(&scene.cloud, None, &plane_config()).unwrap();
    let Model::Plane { normal, .. } = fit.model else {
        panic!("expected a plane")
    };
    assert!(normal.z.abs() > 1.0f64.to_radians().cos());
    assert_eq!(fit.inliers.len(), scene.len());
    for &i in &fit.inliers {
        assert!(fit.model.distance(&scene.cloud.point(i)) <= plane_config().inlier_threshold);
    }
}

#[test]
fn plane_with_outliers_excludes_them() {
    let scene = gen_plane(30, 30, 0.01, 0.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n_out = scene.len() / 4; // 20% of the final cloud
    let mut points = scene.cloud.points().to_vec();
    for _ in 0..n_out {
        let z = rng.random_range(0.01..0.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        points.push(Point3::new(rng.random_range(0.0..0.29), rng.random_range(0.0..0.29), z));
    }
    let cloud = PointCloud::new(points);
    let fit = ransac_fit(&cloud, None, &plane_config()).unwrap();
    assert_eq!(fit.inliers, (0..scene.len()).collect::<Vec<_>>());
}

#[test]
fn cylinder_radius_is_recovered() {
    let scene = gen_cylinder(0.05, 0.1, 0.002, 0.0, 0).unwrap();
    let normals = analytic_normals(&scene.analytic_normals, scene.viewpoint);
    let mut config = RansacConfig::new(ModelKind::Cylinder);
    config.inlier_threshold = 0.0005;
    config.max_iterations = 100;
    let fit = ransac_fit(&scene.cloud, Some(&normals), &config).unwrap();
    let Model::Cylinder { radius, axis, .. } = fit.model else {
        panic!("expected a cylinder")
    };
    assert!((radius - 0.05).abs() <= 0.02 * 0.05, "{radius}");
    assert!(axis.z.abs() > 0.999);
    assert_eq!(fit.inliers.len(), scene.len());
}

fn two_cylinders() -> (PointCloud, NormalField, usize) {
    let spec = SceneSpec {
        primitives: vec![
            Primitive::Cylinder {
                radius: 0.03,
                height: 0.06,
                resolution: 0.002,
                base: [0.0, 0.0, 0.0],
            },
            Primitive::Cylinder {
                radius: 0.045,
                height: 0.06,
                resolution: 0.002,
                base: [0.2, 0.0, 0.0],
            },
        ],
        noise_sigma: 0.0,
        seed: 0,
    };
    let scene = gen_scene(&spec).unwrap();
    let first = scene.cloud.points().iter().filter(|p| p.x < 0.1).count();
    let normals = analytic_normals(&scene.analytic_normals, scene.viewpoint);
    (scene.cloud, normals, first)
}

#[test]
fn two_cylinders_are_both_extracted() {
    let (cloud, normals, first) = two_cylinders();
    let mut config = RansacConfig::new(ModelKind::Cylinder);
    config.inlier_threshold = 0.0005;
    config.max_iterations = 300;
    let out = extract_instances(&cloud, Some(&normals), &config, 2).unwrap();
    assert!(!out.exhausted);
    let mut radii: Vec<f64> = out
        .instances
        .iter()
        .map(|f| match f.model {
            Model::Cylinder { radius, .. } => radius,
            _ => unreachable!(),
        })
        .collect();
    radii.sort_by(f64::total_cmp);
    assert!(
        (radii[0] - 0.03).abs() < 1e-3 && (radii[1] - 0.045).abs() < 1e-3,
        "{radii:?}"
    );
    let mut all: Vec<usize> = out.instances.iter().flat_map(|f| f.inliers.clone()).collect();
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), total, "inlier sets overlap");
    assert_eq!(total, cloud.len());
    assert!(out.instances.iter().any(|f| f.inliers.len() == first));
}

#[test]
fn asking_for_too_many_instances_exhausts() {
    let (cloud, normals, _) = two_cylinders();
    let mut config = RansacConfig::new(ModelKind::Cylinder);
    config.inlier_threshold = 0.0005;
    config.max_iterations = 300;
    config.min_inliers = 100;
    let out = extract_instances(&cloud, Some(&normals), &config, 4).unwrap();
    assert!(out.exhausted);
    assert_eq!(out.instances.len(), 2);
    config.min_inliers = cloud.len() + 1;
    assert!(matches!(
        ransac_fit(&cloud, Some(&normals), &config),
        Err(Error::NoModelFound { .. })
    ));
}

#[test]
fn fixed_seed_is_deterministic() {
    let (cloud, normals, _) = two_cylinders();
    let mut config = RansacConfig::new(ModelKind::Cylinder);
    config.inlier_threshold = 0.0005;
    config.max_iterations = 50;
    config.seed = 42;
    let a = ransac_fit(&cloud, Some(&normals), &config).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| ransac_fit(&cloud, Some(&normals), &config).unwrap());
    assert_eq!(a, b);
}
