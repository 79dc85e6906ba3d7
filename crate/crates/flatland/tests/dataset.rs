use cellroute_flatland::dataset::scene_rng;
use cellroute_flatland::scene::{sample_scene, sample_scene_seeded};
use cellroute_flatland::{make_dataset, CameraModel, Dataset, Error, GenConfig, Scene, BACKGROUND};

fn small(seed: u64) -> GenConfig {
    GenConfig {
        scenes: 12,
        views_per_scene: 4,
        objects: 1..=3,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn equal_seeds_give_identical_files() {
    let a = make_dataset(&small(7)).unwrap().to_bytes().unwrap();
    let b = make_dataset(&small(7)).unwrap().to_bytes().unwrap();
    let c = make_dataset(&small(8)).unwrap().to_bytes().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn file_round_trip_is_bit_exact() {
    let data = make_dataset(&small(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.strd");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, data);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes().unwrap());
}

#[test]
fn header_layout() {
    let bytes = make_dataset(&small(0)).unwrap().to_bytes().unwrap();
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!(&bytes[..4], b"STRD");
    // version, scenes, views, width, channels, pose_dim, flags
    assert_eq!([word(0), word(1), word(2), word(3), word(4), word(5), word(6)], [1, 12, 4, 64, 3, 4, 1]);
}

#[test]
fn stored_poses_are_fixed_points_of_loading() {
    use cellroute::model::Pose;
    use cellroute_flatland::dataset::round_pose;
    for k in 0..2000 {
        let h = k as f64 * 0.0031;
        let p = round_pose(&Pose::new(0.1 * h.sin(), -0.3, h)).unwrap();
        let again = Pose::from_components(p.x, p.y, p.cos as f32 as f64, p.sin as f32 as f64).unwrap();
        assert_eq!(again, p, "heading {h}");
    }
}

#[test]
fn scenes_do_not_depend_on_generation_order() {
    let full = make_dataset(&small(5)).unwrap();
    let mut rng = scene_rng(5, 9);
    let ninth = sample_scene(&mut rng, 1..=3, 1.0).unwrap();
    assert_eq!(full.scenes[9].scene.as_ref(), Some(&ninth));
}

#[test]
fn default_config_sizes() {
    let g = GenConfig::default();
    assert_eq!((g.scenes, g.views_per_scene, g.camera.width), (5000, 8, 64));
    assert_eq!(g.camera, CameraModel::default());
    assert_eq!(g.camera.fov, std::f64::consts::FRAC_PI_2);
}

#[test]
fn poses_respect_margin_and_objects() {
    let data = make_dataset(&small(11)).unwrap();
    for rec in &data.scenes {
        let scene = rec.scene.as_ref().unwrap();
        for v in &rec.views {
            assert!(v.pose.x.abs() <= 0.9 + 1e-6 && v.pose.y.abs() <= 0.9 + 1e-6);
            assert!(!scene.blocks(v.pose.x, v.pose.y, 0.0));
            assert!((v.pose.cos.hypot(v.pose.sin) - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn same_seed_same_scene() {
    assert_eq!(
        sample_scene_seeded(42, 1..=5, 1.0).unwrap(),
        sample_scene_seeded(42, 1..=5, 1.0).unwrap()
    );
}

#[test]
fn empty_range_gives_background_only_scene() {
    let scene = sample_scene_seeded(1, 0..=0, 1.0).unwrap();
    assert!(scene.objects.is_empty());
    assert_eq!(scene.background, BACKGROUND);
}

#[test]
fn object_count_range_is_respected() {
    for seed in 0..1000 {
        let s = sample_scene_seeded(seed, 2..=2, 1.0).unwrap();
        assert_eq!(s.objects.len(), 2);
        s.validate().unwrap();
    }
}

#[test]
#[allow(clippy::reversed_empty_ranges)]
fn empty_count_range_is_rejected() {
    assert!(matches!(sample_scene_seeded(0, 3..=2, 1.0), Err(Error::InvalidConfig(_))));
}

#[test]
fn exhausted_budget_names_it() {
    let err = sample_scene_seeded(0, 30..=30, 0.3).unwrap_err();
    assert!(matches!(err, Error::RejectionBudget(10_000)));
    assert!(err.to_string().contains("10000"), "{err}");
    // An arena too small for any shape also runs out of attempts.
    assert!(matches!(sample_scene_seeded(0, 1..=1, 0.05), Err(Error::RejectionBudget(_))));
}

#[test]
fn scene_without_objects_renders_through_dataset() {
    let cfg = GenConfig {
        objects: 0..=0,
        ..small(2)
    };
    let data = make_dataset(&cfg).unwrap();
    for rec in &data.scenes {
        assert_eq!(rec.scene.as_ref(), Some(&Scene::empty(1.0)));
        for v in &rec.views {
            assert!(v.image.data().chunks(3).all(|p| p == BACKGROUND.map(|c| c as f32 as f64)));
        }
    }
}
