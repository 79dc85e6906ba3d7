use cellroute::model::{Image, Pose};

use crate::scene::{Scene, Shape};
use crate::{Error, Result};

/// Falloff of colour intensity with hit distance.
pub const DEPTH_SHADING: f64 = 0.1;

/// 1D pinhole camera with optional radial-style distortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub width: usize,
    /// Distortion strength; 0 is the pinhole limit.
    pub kappa: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fov: std::f64::consts::FRAC_PI_2,
            width: 64,
            kappa: 0.0,
        }
    }
}

impl CameraModel {
    pub fn new(fov: f64, width: usize, kappa: f64) -> Result<Self> {
        let cam = CameraModel { fov, width, kappa };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!("fov {} outside (0, pi)", self.fov)));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("camera width must be positive".into()));
        }
        // Monotone distortion needs d/du [u (1 + k u^2)] = 1 + 3 k u^2 > 0 on [-1, 1].
        if !(self.kappa.is_finite() && self.kappa > -1.0 / 3.0) {
            return Err(Error::InvalidConfig(format!(
                "kappa {} must be finite and > -1/3",
                self.kappa
            )));
        }
        Ok(())
    }

    fn half_tan(&self) -> f64 {
        (0.5 * self.fov).tan()
    }

    /// Normalized coordinate in `[-1, 1]` of pixel `i`'s center.
    pub fn pixel_coordinate(&self, i: f64) -> f64 {
        (2.0 * i + 1.0 - self.width as f64) / self.width as f64
    }

    /// Image-plane offset of normalized coordinate `u`, distortion applied.
    pub fn plane_offset(&self, u: f64) -> f64 {
        u * self.half_tan() * (1.0 + self.kappa * u * u)
    }

    /// Inverse of [`plane_offset`](Self::plane_offset) over `[-1, 1]`;
    /// `None` when the offset falls outside the field of view.
    pub fn coordinate_of_offset(&self, offset: f64) -> Option<f64> {
        let edge = self.plane_offset(1.0);
        if !offset.is_finite() || offset.abs() > edge {
            return None;
        }
        if self.kappa == 0.0 {
            return Some(offset / self.half_tan());
        }
        // Newton from the pinhole guess, safeguarded by bisection bounds.
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut u = (offset / self.half_tan()).clamp(-1.0, 1.0);
        for _ in 0..60 {
            let f = self.plane_offset(u) - offset;
            if f.abs() <= 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let df = self.half_tan() * (1.0 + 3.0 * self.kappa * u * u);
            let next = u - f / df;
            u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        Some(u)
    }

    /// Unit world-space direction of the ray through normalized
    /// coordinate `u`.
    pub fn ray_direction(&self, pose: &Pose, u: f64) -> (f64, f64) {
        let s = self.plane_offset(u);
        let (fx, fy) = (pose.cos, pose.sin);
        let (rx, ry) = (pose.sin, -pose.cos);
        let (dx, dy) = (fx + s * rx, fy + s * ry);
        let n = dx.hypot(dy);
        (dx / n, dy / n)
    }

    /// Normalized coordinate at which world point `(px, py)` appears, or
    /// `None` when it is behind the camera or outside the field of view.
    pub fn project(&self, pose: &Pose, px: f64, py: f64) -> Option<f64> {
        let (dx, dy) = (px - pose.x, py - pose.y);
        let depth = dx * pose.cos + dy * pose.sin;
        if depth <= 0.0 {
            return None;
        }
        let lateral = dx * pose.sin - dy * pose.cos;
        self.coordinate_of_offset(lateral / depth)
    }

    /// Pixel containing normalized coordinate `u`.
    pub fn pixel_of(&self, u: f64) -> usize {
        let p = ((u + 1.0) * 0.5 * self.width as f64).floor();
        (p.max(0.0) as usize).min(self.width - 1)
    }

    /// Nearest hit distance and colour along a ray, if any.
    pub fn trace(&self, scene: &Scene, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        for o in &scene.objects {
            if let Some(t) = intersect(&o.shape, ox, oy, dx, dy) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, o.color));
                }
            }
        }
        best
    }

    /// Renders the `width x 3` view of `scene` from `pose`.
    pub fn render_view(&self, scene: &Scene, pose: &Pose) -> Image {
        let mut data = Vec::with_capacity(self.width * 3);
        for i in 0..self.width {
            let u = self.pixel_coordinate(i as f64);
            let (dx, dy) = self.ray_direction(pose, u);
            let rgb = match self.trace(scene, pose.x, pose.y, dx, dy) {
                Some((t, color)) => {
                    let shade = 1.0 / (1.0 + DEPTH_SHADING * t);
                    color.map(|c| (c * shade).clamp(0.0, 1.0))
                }
                None => scene.background,
            };
            data.extend_from_slice(&rgb);
        }
        Image::new(self.width, data).expect("rendered values lie in [0, 1]")
    }
}

/// Smallest positive ray parameter at which the ray meets the shape.
fn intersect(shape: &Shape, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
    const EPS: f64 = 1e-12;
    match *shape {
        Shape::Circle { cx, cy, r } => {
            let (fx, fy) = (ox - cx, oy - cy);
            let b = fx * dx + fy * dy;
            let c = fx * fx + fy * fy - r * r;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t0 = -b - sq;
            let t1 = -b + sq;
            if t0 > EPS {
                Some(t0)
            } else if t1 > EPS {
                Some(t1)
            } else {
                None
            }
        }
        Shape::Segment { x0, y0, x1, y1 } => {
            let (ex, ey) = (x1 - x0, y1 - y0);
            let denom = dx * ey - dy * ex;
            if denom.abs() < EPS {
                return None;
            }
            let (wx, wy) = (x0 - ox, y0 - oy);
            let t = (wx * ey - wy * ex) / denom;
            let s = (wx * dy - wy * dx) / denom;
            (t > EPS && (0.0..=1.0).contains(&s)).then_some(t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_inverse_round_trips() {
        for kappa in [0.0, 0.3, 0.8] {
            let cam = CameraModel::new(1.4, 64, kappa).unwrap();
            for k in 0..=40 {
                let u = -1.0 + k as f64 / 20.0;
                let back = cam.coordinate_of_offset(cam.plane_offset(u)).unwrap();
                assert!((back - u).abs() < 1e-12, "kappa {kappa} u {u} back {back}");
            }
            assert!(cam.coordinate_of_offset(cam.plane_offset(1.0) * 1.01).is_none());
        }
    }

    #[test]
    fn project_inverts_ray_direction() {
        let cam = CameraModel::new(1.2, 32, 0.3).unwrap();
        let pose = Pose::new(0.2, -0.4, 2.1);
        for u in [-0.9, -0.3, 0.0, 0.45, 0.97] {
            let (dx, dy) = cam.ray_direction(&pose, u);
            let p = (pose.x + 0.7 * dx, pose.y + 0.7 * dy);
            assert!((cam.project(&pose, p.0, p.1).unwrap() - u).abs() < 1e-12);
        }
        let behind = (pose.x - pose.cos, pose.y - pose.sin);
        assert!(cam.project(&pose, behind.0, behind.1).is_none());
    }

    #[test]
    fn invalid_cameras() {
        assert!(CameraModel::new(0.0, 8, 0.0).is_err());
        assert!(CameraModel::new(3.2, 8, 0.0).is_err());
        assert!(CameraModel::new(1.0, 0, 0.0).is_err());
        assert!(CameraModel::new(1.0, 8, -0.5).is_err());
    }

    #[test]
    fn segment_hit_from_behind_and_ahead() {
        let seg = Shape::Segment {
            x0: 1.0,
            y0: -1.0,
            x1: 1.0,
            y1: 1.0,
        };
        assert_eq!(intersect(&seg, 0.0, 0.0, 1.0, 0.0), Some(1.0));
        assert_eq!(intersect(&seg, 0.0, 0.0, -1.0, 0.0), None);
        let circle = Shape::Circle {
            cx: 2.0,
            cy: 0.0,
            r: 0.5,
        };
        assert_eq!(intersect(&circle, 0.0, 0.0, 1.0, 0.0), Some(1.5));
    }
}
