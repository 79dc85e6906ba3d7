use cellroute::model::Pose;
use cellroute_flatland::scene::{sample_scene_seeded, Rgb};
use cellroute_flatland::{CameraModel, Object, Scene, Shape, BACKGROUND, PALETTE};
use proptest::prelude::*;

const RED: Rgb = PALETTE[0];

fn circle(cx: f64, cy: f64, r: f64, color: Rgb) -> Object {
    Object {
        shape: Shape::Circle { cx, cy, r },
        color,
    }
}

fn lit(image: &cellroute::model::Image, i: usize) -> bool {
    image.data()[3 * i..3 * i + 3] != BACKGROUND
}

#[test]
fn empty_scene_is_background() {
    let cam = CameraModel::default();
    let img = cam.render_view(&Scene::empty(1.0), &Pose::new(0.3, -0.2, 1.0));
    for px in img.data().chunks(3) {
        assert_eq!(px, BACKGROUND);
    }
}

#[test]
fn centered_circle_pixel_count_matches_closed_form() {
    for (fov_deg, r, d) in [(90.0f64, 0.2, 0.8), (60.0, 0.15, 0.5), (90.0, 0.1, 1.5), (120.0, 0.25, 0.6)] {
        let cam = CameraModel::new(fov_deg.to_radians(), 64, 0.0).unwrap();
        let scene = Scene::with_objects(vec![circle(d, 0.0, r, RED)], 1.0);
        let pose = Pose::new(0.0, 0.0, 0.0);
        let img = cam.render_view(&scene, &pose);
        let rendered = (0..64).filter(|&i| lit(&img, i)).count();

        let half_tan = (0.5 * cam.fov).tan();
        let limit = (r / d).asin().tan();
        let expected = (0..64)
            .filter(|&i| (cam.pixel_coordinate(i as f64) * half_tan).abs() <= limit)
            .count();
        assert_eq!(rendered, expected, "fov {fov_deg} r {r} d {d}");

        // Supersampled reference: a pixel is lit when most of its area is.
        let sub = 64;
        let fine = CameraModel::new(cam.fov, 64 * sub, 0.0).unwrap();
        let fine_img = fine.render_view(&scene, &pose);
        let majority = (0..64)
            .filter(|&i| (0..sub).filter(|&k| lit(&fine_img, i * sub + k)).count() * 2 > sub)
            .count();
        assert!(
            majority.abs_diff(expected) <= 2,
            "supersampled {majority} vs closed form {expected}"
        );

        // The nearest surface point sits on the axis at distance d - r.
        let shade = 1.0 / (1.0 + 0.1 * (d - r));
        let center = &img.data()[3 * 32..3 * 32 + 3];
        for c in 0..3 {
            assert!((center[c] - RED[c] * shade).abs() < 1e-3, "{center:?}");
        }
    }
}

#[test]
fn perpendicular_wall_renders_symmetrically() {
    let cam = CameraModel::default();
    let wall = Object {
        shape: Shape::Segment {
            x0: 0.5,
            y0: -1.0,
            x1: 0.5,
            y1: 1.0,
        },
        color: PALETTE[2],
    };
    let img = cam.render_view(&Scene::with_objects(vec![wall], 1.0), &Pose::new(0.0, 0.0, 0.0));
    let d = img.data();
    for i in 0..64 {
        assert!(lit(&img, i));
        for c in 0..3 {
            assert!((d[3 * i + c] - d[3 * (63 - i) + c]).abs() < 1e-12);
        }
    }
}

#[test]
fn nearer_object_occludes_farther() {
    let cam = CameraModel::default();
    let scene = Scene::with_objects(
        vec![circle(0.8, 0.0, 0.15, PALETTE[1]), circle(0.3, 0.0, 0.05, RED)],
        1.0,
    );
    let img = cam.render_view(&scene, &Pose::new(0.0, 0.0, 0.0));
    let center = &img.data()[3 * 32..3 * 32 + 3];
    assert!(center[0] > center[1], "near red circle should win: {center:?}");
}

#[test]
fn zero_kappa_is_the_pinhole_offset() {
    for fov in [0.3f64, 1.0, 1.5707963267948966, 2.5] {
        let cam = CameraModel::new(fov, 64, 0.0).unwrap();
        for i in 0..64 {
            let u = cam.pixel_coordinate(i as f64);
            assert_eq!(cam.plane_offset(u), u * (0.5 * fov).tan());
        }
    }
}

#[test]
fn pixel_coordinates_follow_the_grid() {
    let cam = CameraModel::default();
    assert_eq!(cam.pixel_coordinate(0.0), -63.0 / 64.0);
    assert_eq!(cam.pixel_coordinate(63.0), 63.0 / 64.0);
    for i in 0..64 {
        assert_eq!(cam.pixel_of(cam.pixel_coordinate(i as f64)), i);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn renders_are_bounded_and_deterministic(
        seed in any::<u64>(),
        x in -0.9f64..0.9,
        y in -0.9f64..0.9,
        heading in 0.0f64..std::f64::consts::TAU,
        kappa in prop::sample::select(vec![0.0, 0.3, 0.8]),
    ) {
        let scene = sample_scene_seeded(seed, 0..=4, 1.0).unwrap();
        let cam = CameraModel::new(std::f64::consts::FRAC_PI_2, 64, kappa).unwrap();
        let pose = Pose::new(x, y, heading);
        let a = cam.render_view(&scene, &pose);
        let b = cam.render_view(&scene, &pose);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
