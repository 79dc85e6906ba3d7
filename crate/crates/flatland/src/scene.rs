use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Rgb = [f64; 3];

/// Distinct saturated colours objects are painted with.
pub const PALETTE: [Rgb; 6] = [
    [0.90, 0.12, 0.12],
    [0.12, 0.78, 0.20],
    [0.15, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
];

/// Colour of rays that hit nothing.
pub const BACKGROUND: Rgb = [0.2, 0.2, 0.2];

/// Rejection attempts per object before sampling gives up.
pub const REJECTION_BUDGET: usize = 10_000;

const MIN_GAP: f64 = 0.05;
const RADIUS: (f64, f64) = (0.1, 0.25);
const SEGMENT_LENGTH: (f64, f64) = (0.3, 0.6);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Segment { x0: f64, y0: f64, x1: f64, y1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Object {
    pub shape: Shape,
    pub color: Rgb,
}

impl Object {
    /// Distance from a point to the object's outline (negative inside a
    /// circle).
    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        match self.shape {
            Shape::Circle { cx, cy, r } => (px - cx).hypot(py - cy) - r,
            Shape::Segment { x0, y0, x1, y1 } => point_segment_distance(px, py, x0, y0, x1, y1),
        }
    }

    fn gap_to(&self, other: &Object) -> f64 {
        match (self.shape, other.shape) {
            (Shape::Circle { cx, cy, r }, _) => other.distance_to(cx, cy) - r,
            (_, Shape::Circle { cx, cy, r }) => self.distance_to(cx, cy) - r,
            (
                Shape::Segment { x0, y0, x1, y1 },
                Shape::Segment {
                    x0: a0,
                    y0: b0,
                    x1: a1,
                    y1: b1,
                },
            ) => {
                if segments_intersect((x0, y0), (x1, y1), (a0, b0), (a1, b1)) {
                    0.0
                } else {
                    [
                        point_segment_distance(x0, y0, a0, b0, a1, b1),
                        point_segment_distance(x1, y1, a0, b0, a1, b1),
                        point_segment_distance(a0, b0, x0, y0, x1, y1),
                        point_segment_distance(a1, b1, x0, y0, x1, y1),
                    ]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    /// Copy with every parameter rounded through `f32`, the precision the
    /// dataset format stores.
    pub fn rounded(&self) -> Object {
        let q = |v: f64| v as f32 as f64;
        let shape = match self.shape {
            Shape::Circle { cx, cy, r } => Shape::Circle {
                cx: q(cx),
                cy: q(cy),
                r: q(r),
            },
            Shape::Segment { x0, y0, x1, y1 } => Shape::Segment {
                x0: q(x0),
                y0: q(y0),
                x1: q(x1),
                y1: q(y1),
            },
        };
        Object {
            shape,
            color: self.color.map(q),
        }
    }
}

fn point_segment_distance(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
    };
    (px - x0 - t * dx).hypot(py - y0 - t * dy)
}

fn segments_intersect(p0: (f64, f64), p1: (f64, f64), q0: (f64, f64), q1: (f64, f64)) -> bool {
    let cross = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let d1 = cross(q0, q1, p0);
    let d2 = cross(q0, q1, p1);
    let d3 = cross(p0, p1, q0);
    let d4 = cross(p0, p1, q1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Objects inside the square `[-arena, arena]^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub background: Rgb,
    /// Half side length of the arena.
    pub arena: f64,
}

impl Scene {
    pub fn empty(arena: f64) -> Self {
        Scene {
            objects: Vec::new(),
            background: BACKGROUND,
            arena,
        }
    }

    pub fn with_objects(objects: Vec<Object>, arena: f64) -> Self {
        Scene {
            objects,
            background: BACKGROUND,
            arena,
        }
    }

    /// Checks radii, arena containment and colour ranges.
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidScene(format!("object {i} colour outside [0, 1]")));
            }
            let inside = |x: f64, y: f64, pad: f64| {
                x.abs() + pad <= self.arena + 1e-6 && y.abs() + pad <= self.arena + 1e-6
            };
            let ok = match o.shape {
                Shape::Circle { cx, cy, r } => r > 0.0 && inside(cx, cy, r),
                Shape::Segment { x0, y0, x1, y1 } => {
                    inside(x0, y0, 0.0) && inside(x1, y1, 0.0) && (x0, y0) != (x1, y1)
                }
            };
            if !ok {
                return Err(Error::InvalidScene(format!(
                    "object {i} is degenerate or leaves the arena"
                )));
            }
        }
        Ok(())
    }

    /// Whether `(x, y)` lies inside a circle or within `clearance` of any
    /// object.
    pub fn blocks(&self, x: f64, y: f64, clearance: f64) -> bool {
        self.objects.iter().any(|o| o.distance_to(x, y) < clearance)
    }

    /// Copy with all parameters rounded through `f32`.
    pub fn rounded(&self) -> Scene {
        Scene {
            objects: self.objects.iter().map(Object::rounded).collect(),
            background: self.background,
            arena: self.arena,
        }
    }
}

/// Draws one non-overlapping object that keeps clear of `existing`.
pub fn sample_object(
    rng: &mut ChaCha8Rng,
    existing: &[Object],
    arena: f64,
    color: Rgb,
) -> Result<Object> {
    for _ in 0..REJECTION_BUDGET {
        let shape = if rng.random_bool(0.5) {
            let r = rng.random_range(RADIUS.0..RADIUS.1);
            let lim = arena - r;
            if lim <= 0.0 {
                continue;
            }
            Shape::Circle {
                cx: rng.random_range(-lim..lim),
                cy: rng.random_range(-lim..lim),
                r,
            }
        } else {
            let len = rng.random_range(SEGMENT_LENGTH.0..SEGMENT_LENGTH.1);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (hx, hy) = (0.5 * len * angle.cos(), 0.5 * len * angle.sin());
            let (lx, ly) = (arena - hx.abs(), arena - hy.abs());
            if lx <= 0.0 || ly <= 0.0 {
                continue;
            }
            let (mx, my) = (rng.random_range(-lx..lx), rng.random_range(-ly..ly));
            Shape::Segment {
                x0: mx - hx,
                y0: my - hy,
                x1: mx + hx,
                y1: my + hy,
            }
        };
        let candidate = Object { shape, color }.rounded();
        if existing.iter().all(|o| o.gap_to(&candidate) > MIN_GAP) {
            return Ok(candidate);
        }
    }
    Err(Error::RejectionBudget(REJECTION_BUDGET))
}

/// Colours for `count` objects: distinct while the palette lasts.
pub fn sample_colors(rng: &mut ChaCha8Rng, count: usize) -> Vec<Rgb> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut round = PALETTE.to_vec();
        round.shuffle(rng);
        out.extend(round.into_iter().take(count - out.len()));
    }
    out
}

/// Samples a scene with an object count drawn uniformly from `count`.
pub fn sample_scene(
    rng: &mut ChaCha8Rng,
    count: RangeInclusive<usize>,
    arena: f64,
) -> Result<Scene> {
    if count.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "object count range {}..={} is empty",
            count.start(),
            count.end()
        )));
    }
    let n = rng.random_range(count);
    let colors = sample_colors(rng, n);
    let mut objects = Vec::with_capacity(n);
    for color in colors {
        let o = sample_object(rng, &objects, arena, color)?;
        objects.push(o);
    }
    Ok(Scene::with_objects(objects, arena))
}

/// Deterministic per-seed scene.
pub fn sample_scene_seeded(seed: u64, count: RangeInclusive<usize>, arena: f64) -> Result<Scene> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scene(&mut rng, count, arena)
}
