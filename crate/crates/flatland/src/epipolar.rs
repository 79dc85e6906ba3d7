//! Where a pixel of one view can appear in another.
//!
//! The point rendered at pixel `i` of view A lies on the ray through the
//! pixel center. Cut at the arena diagonal and clipped to the half-plane in
//! front of camera B, that ray is a line segment. Its image-plane offset in
//! B is a ratio of affine functions of the ray parameter and therefore
//! monotone, so the projection is the interval between the projections of
//! the clipped end points.

use cellroute::model::Pose;

use crate::camera::CameraModel;

/// Smallest depth in front of camera B that still projects.
const MIN_DEPTH: f64 = 1e-9;

/// Interval of normalized coordinates in view B covered by the ray through
/// coordinate `u` of view A, marched over depths `(0, max_depth]`.
pub fn ray_interval(
    camera: &CameraModel,
    u: f64,
    pose_a: &Pose,
    pose_b: &Pose,
    max_depth: f64,
) -> Option<(f64, f64)> {
    let (dx, dy) = camera.ray_direction(pose_a, u);
    // Depth and lateral offset in B's frame, affine in the ray parameter t.
    let (ox, oy) = (pose_a.x - pose_b.x, pose_a.y - pose_b.y);
    let z0 = ox * pose_b.cos + oy * pose_b.sin;
    let zd = dx * pose_b.cos + dy * pose_b.sin;
    let l0 = ox * pose_b.sin - oy * pose_b.cos;
    let ld = dx * pose_b.sin - dy * pose_b.cos;

    let (mut t_lo, mut t_hi) = (0.0f64, max_depth);
    if zd.abs() < 1e-15 {
        if z0 < MIN_DEPTH {
            return None;
        }
    } else {
        let t_cross = (MIN_DEPTH - z0) / zd;
        if zd > 0.0 {
            t_lo = t_lo.max(t_cross);
        } else {
            t_hi = t_hi.min(t_cross);
        }
    }
    if t_lo >= t_hi {
        return None;
    }
    let offset = |t: f64| (l0 + ld * t) / (z0 + zd * t);
    let (a, b) = (offset(t_lo), offset(t_hi));
    let (lo, hi) = (a.min(b), a.max(b));
    let edge = camera.plane_offset(1.0);
    if hi < -edge || lo > edge {
        return None;
    }
    let u_lo = camera.coordinate_of_offset(lo.max(-edge))?;
    let u_hi = camera.coordinate_of_offset(hi.min(edge))?;
    Some((u_lo, u_hi))
}

/// Sorted view-cell indices of view B onto which pixel `pixel` of view A
/// can project; cells are `patch` pixels wide. The ray through the pixel
/// center is marched over depths `(0, max_depth]`, normally the arena
/// diagonal.
pub fn epipolar_support(
    pixel: usize,
    pose_a: &Pose,
    pose_b: &Pose,
    camera: &CameraModel,
    patch: usize,
    max_depth: f64,
) -> Vec<usize> {
    let u = camera.pixel_coordinate(pixel as f64);
    match ray_interval(camera, u, pose_a, pose_b, max_depth) {
        Some((lo, hi)) => (camera.pixel_of(lo) / patch..=camera.pixel_of(hi) / patch).collect(),
        None => Vec::new(),
    }
}

/// Support widened by `radius` cells on both sides, clipped to `cells`.
pub fn dilate(support: &[usize], radius: usize, cells: usize) -> Vec<usize> {
    let mut mask = vec![false; cells];
    for &c in support {
        let lo = c.saturating_sub(radius);
        let hi = (c + radius).min(cells - 1);
        mask[lo..=hi].iter_mut().for_each(|m| *m = true);
    }
    (0..cells).filter(|&i| mask[i]).collect()
}
