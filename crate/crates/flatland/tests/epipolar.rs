use cellroute::model::Pose;
use cellroute_flatland::scene::sample_scene_seeded;
use cellroute_flatland::{arena_diagonal, epipolar_support, CameraModel, Scene};
use proptest::prelude::*;

const PATCH: usize = 4;

/// Point at depth `t` along the center ray of pixel `i` of the camera at `pose`.
fn point_on_ray(cam: &CameraModel, pose: &Pose, i: usize, t: f64) -> (f64, f64) {
    let (dx, dy) = cam.ray_direction(pose, cam.pixel_coordinate(i as f64));
    (pose.x + t * dx, pose.y + t * dy)
}

#[test]
fn camera_behind_the_ray_sees_nothing() {
    let cam = CameraModel::default();
    let a = Pose::new(0.0, 0.0, 0.0);
    let b = Pose::new(-0.5, 0.0, std::f64::consts::PI);
    for i in 0..64 {
        assert!(epipolar_support(i, &a, &b, &cam, PATCH, arena_diagonal()).is_empty());
    }
}

#[test]
fn identical_poses_contain_own_cell() {
    for kappa in [0.0, 0.3, 0.8] {
        let cam = CameraModel::new(std::f64::consts::FRAC_PI_2, 64, kappa).unwrap();
        for (x, y, h) in [(0.0, 0.0, 0.0), (-0.7, 0.4, 2.0), (0.5, -0.5, 4.5)] {
            let p = Pose::new(x, y, h);
            for i in 0..64 {
                let s = epipolar_support(i, &p, &p, &cam, PATCH, arena_diagonal());
                assert!(s.contains(&(i / PATCH)), "pixel {i}: {s:?}");
            }
        }
    }
}

#[test]
fn hand_placed_witness_points() {
    let cam = CameraModel::default();
    let a = Pose::new(-0.6, -0.6, std::f64::consts::FRAC_PI_4);
    let b = Pose::new(0.6, -0.6, 3.0 * std::f64::consts::FRAC_PI_4);
    // The center pixels of both views look at the origin.
    let support = epipolar_support(32, &a, &b, &cam, PATCH, arena_diagonal());
    let u = cam.project(&b, 0.0, 0.0).unwrap();
    assert!(u.abs() < 1e-12);
    assert!(support.contains(&(cam.pixel_of(u) / PATCH)), "{support:?}");

    for (i, t) in [(10usize, 0.5f64), (40, 1.2), (55, 0.9)] {
        let (px, py) = point_on_ray(&cam, &a, i, t);
        let ub = cam.project(&b, px, py).expect("witness is visible to B");
        let s = epipolar_support(i, &a, &b, &cam, PATCH, arena_diagonal());
        assert!(s.contains(&(cam.pixel_of(ub) / PATCH)), "pixel {i}: {s:?}");
    }
}

#[test]
fn support_is_contiguous_and_sorted() {
    let cam = CameraModel::default();
    let a = Pose::new(-0.3, 0.2, 0.4);
    let b = Pose::new(0.5, 0.7, 4.0);
    for i in 0..64 {
        let s = epipolar_support(i, &a, &b, &cam, PATCH, arena_diagonal());
        assert!(s.windows(2).all(|w| w[1] == w[0] + 1), "{s:?}");
        assert!(s.iter().all(|&c| c < 16));
    }
}

/// Whether `(px, py)` is the first thing the camera at `pose` sees along
/// its direction.
fn unoccluded(cam: &CameraModel, scene: &Scene, pose: &Pose, px: f64, py: f64) -> bool {
    let (dx, dy) = (px - pose.x, py - pose.y);
    let dist = dx.hypot(dy);
    match cam.trace(scene, pose.x, pose.y, dx / dist, dy / dist) {
        Some((t, _)) => t >= dist - 1e-9,
        None => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn support_is_consistent_with_rendering(
        seed in any::<u64>(),
        ax in -0.9f64..0.9, ay in -0.9f64..0.9, ah in 0.0f64..std::f64::consts::TAU,
        bx in -0.9f64..0.9, by in -0.9f64..0.9, bh in 0.0f64..std::f64::consts::TAU,
        kappa in prop::sample::select(vec![0.0, 0.3, 0.8]),
    ) {
        let scene = sample_scene_seeded(seed, 1..=4, 1.0).unwrap();
        prop_assume!(!scene.blocks(ax, ay, 0.0) && !scene.blocks(bx, by, 0.0));
        let cam = CameraModel::new(std::f64::consts::FRAC_PI_2, 64, kappa).unwrap();
        let (a, b) = (Pose::new(ax, ay, ah), Pose::new(bx, by, bh));
        for i in 0..64 {
            let (dx, dy) = cam.ray_direction(&a, cam.pixel_coordinate(i as f64));
            let Some((t, _)) = cam.trace(&scene, a.x, a.y, dx, dy) else { continue };
            let (px, py) = (a.x + t * dx, a.y + t * dy);
            let Some(ub) = cam.project(&b, px, py) else { continue };
            if !unoccluded(&cam, &scene, &b, px, py) {
                continue;
            }
            let s = epipolar_support(i, &a, &b, &cam, PATCH, arena_diagonal());
            prop_assert!(
                s.contains(&(cam.pixel_of(ub) / PATCH)),
                "pixel {} hit ({}, {}) lands in B cell {} outside {:?}",
                i, px, py, cam.pixel_of(ub) / PATCH, s
            );
        }
    }
}
