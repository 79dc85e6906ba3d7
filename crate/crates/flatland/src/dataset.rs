//! Dataset generation and the STRD binary format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "STRD" | version u32 = 1 | scene_count u32 | views_per_scene u32
//!        | width u32 | channels u32 | pose_dim u32 | flags u32
//! per scene:
//!   [if flags & 1: object_count u32, per object: shape_id u32, 8 x f32]
//!   per view: pose_dim x f32, width * channels x f32 (pixel-major)
//! ```
//!
//! Circles store `cx cy r R G B 0 0`, segments `x0 y0 x1 y1 R G B 0`.

use std::ops::RangeInclusive;
use std::path::Path;

use cellroute::model::{Image, Observation, Pose, IMAGE_CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraModel;
use crate::scene::{sample_colors, sample_object, sample_scene, Object, Scene, Shape, REJECTION_BUDGET};
use crate::{write_atomic, Error, Result, ARENA};

pub const MAGIC: &[u8; 4] = b"STRD";
pub const VERSION: u32 = 1;
pub const POSE_DIM: usize = 4;
pub const FLAG_METADATA: u32 = 1;

/// Keeps cameras at least this far from any object.
const POSE_CLEARANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub scenes: usize,
    pub views_per_scene: usize,
    pub camera: CameraModel,
    pub objects: RangeInclusive<usize>,
    /// Distance kept between camera positions and the arena walls.
    pub margin: f64,
    /// Emit `(A, B, C)` triples for scene arithmetic instead of
    /// independent scenes.
    pub paired: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scenes: 5000,
            views_per_scene: 8,
            camera: CameraModel::default(),
            objects: 2..=2,
            margin: 0.1,
            paired: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.scenes == 0 || self.views_per_scene == 0 {
            return Err(Error::InvalidConfig(
                "scene and view counts must be positive".into(),
            ));
        }
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("object count range is empty".into()));
        }
        if !(0.0..ARENA).contains(&self.margin) {
            return Err(Error::InvalidConfig(format!(
                "margin {} must lie in [0, {ARENA})",
                self.margin
            )));
        }
        if self.paired && self.scenes % 3 != 0 {
            return Err(Error::InvalidConfig(format!(
                "paired generation needs a multiple of 3 scenes, got {}",
                self.scenes
            )));
        }
        Ok(())
    }
}

/// One scene's views and, when known, its geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene: Option<Scene>,
    pub views: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views_per_scene: usize,
    pub width: usize,
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    pub fn has_metadata(&self) -> bool {
        !self.scenes.is_empty() && self.scenes.iter().all(|s| s.scene.is_some())
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Mean and population standard deviation of every stored pixel value.
    pub fn pixel_stats(&self) -> (f64, f64) {
        let mut n = 0usize;
        let mut sum = 0.0;
        for s in &self.scenes {
            for v in &s.views {
                sum += v.image.data().iter().sum::<f64>();
                n += v.image.data().len();
            }
        }
        let mean = sum / n as f64;
        let mut var = 0.0;
        for s in &self.scenes {
            for v in &s.views {
                var += v.image.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>();
            }
        }
        (mean, (var / n as f64).sqrt())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let metadata = self.has_metadata();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            u32_of(self.scenes.len(), "scene count")?,
            u32_of(self.views_per_scene, "views per scene")?,
            u32_of(self.width, "width")?,
            IMAGE_CHANNELS as u32,
            POSE_DIM as u32,
            if metadata { FLAG_METADATA } else { 0 },
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (i, record) in self.scenes.iter().enumerate() {
            if record.views.len() != self.views_per_scene {
                return Err(Error::Format(format!(
                    "scene {i} has {} views, expected {}",
                    record.views.len(),
                    self.views_per_scene
                )));
            }
            if let (true, Some(scene)) = (metadata, &record.scene) {
                out.extend_from_slice(&u32_of(scene.objects.len(), "object count")?.to_le_bytes());
                for o in &scene.objects {
                    let (id, p) = object_params(o);
                    out.extend_from_slice(&id.to_le_bytes());
                    for v in p {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            }
            for view in &record.views {
                if view.image.width() != self.width {
                    return Err(Error::Format(format!(
                        "scene {i} holds an image of width {}, expected {}",
                        view.image.width(),
                        self.width
                    )));
                }
                for v in view.pose.features() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
                for &v in view.image.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(MAGIC),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported STRD version: expected {VERSION}, found {version}"
            )));
        }
        let scenes = r.u32()? as usize;
        let views_per_scene = r.u32()? as usize;
        let width = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let pose_dim = r.u32()? as usize;
        let flags = r.u32()?;
        if channels != IMAGE_CHANNELS || pose_dim != POSE_DIM {
            return Err(Error::Format(format!(
                "expected {IMAGE_CHANNELS} channels and pose_dim {POSE_DIM}, found {channels} and {pose_dim}"
            )));
        }
        if width == 0 {
            return Err(Error::Format("width is zero".into()));
        }
        if flags & !FLAG_METADATA != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        let metadata = flags & FLAG_METADATA != 0;
        let mut records = Vec::with_capacity(scenes.min(1 << 20));
        for _ in 0..scenes {
            let scene = if metadata {
                let count = r.u32()? as usize;
                let mut objects = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    let id = r.u32()?;
                    let mut p = [0.0f64; 8];
                    for v in &mut p {
                        *v = r.f32()? as f64;
                    }
                    objects.push(object_from(id, &p)?);
                }
                Some(Scene::with_objects(objects, ARENA))
            } else {
                None
            };
            let mut views = Vec::with_capacity(views_per_scene);
            for _ in 0..views_per_scene {
                let mut f = [0.0f64; POSE_DIM];
                for v in &mut f {
                    *v = r.f32()? as f64;
                }
                let pose = Pose::from_components(f[0], f[1], f[2], f[3])?;
                let mut px = Vec::with_capacity(width * channels);
                for _ in 0..width * channels {
                    px.push(r.f32()? as f64);
                }
                views.push(Observation {
                    image: Image::new(width, px)?,
                    pose,
                });
            }
            records.push(SceneRecord { scene, views });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last scene",
                bytes.len() - r.pos
            )));
        }
        Ok(Dataset {
            views_per_scene,
            width,
            scenes: records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, &self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn object_params(o: &Object) -> (u32, [f64; 8]) {
    let [r, g, b] = o.color;
    match o.shape {
        Shape::Circle { cx, cy, r: rad } => (0, [cx, cy, rad, r, g, b, 0.0, 0.0]),
        Shape::Segment { x0, y0, x1, y1 } => (1, [x0, y0, x1, y1, r, g, b, 0.0]),
    }
}

fn object_from(id: u32, p: &[f64; 8]) -> Result<Object> {
    match id {
        0 => Ok(Object {
            shape: Shape::Circle {
                cx: p[0],
                cy: p[1],
                r: p[2],
            },
            color: [p[3], p[4], p[5]],
        }),
        1 => Ok(Object {
            shape: Shape::Segment {
                x0: p[0],
                y0: p[1],
                x1: p[2],
                y1: p[3],
            },
            color: [p[4], p[5], p[6]],
        }),
        other => Err(Error::Format(format!(
            "unknown shape id {other} (expected 0 circle or 1 segment)"
        ))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Random generator for scene `index` of a dataset seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Pose drawn uniformly over the arena (inside `margin`) with uniform
/// heading, clear of every object, rounded to the stored precision.
pub fn sample_pose(rng: &mut ChaCha8Rng, scene: &Scene, margin: f64) -> Result<Pose> {
    let lim = ARENA - margin;
    for _ in 0..REJECTION_BUDGET {
        let x = rng.random_range(-lim..=lim);
        let y = rng.random_range(-lim..=lim);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let pose = round_pose(&Pose::new(x, y, heading))?;
        if !scene.blocks(pose.x, pose.y, POSE_CLEARANCE) {
            return Ok(pose);
        }
    }
    Err(Error::RejectionBudget(REJECTION_BUDGET))
}

/// Pose as it reads back from a dataset file. Loading renormalizes the
/// stored `f32` heading, so the heading is iterated to a fixed point of
/// rounding followed by normalization.
pub fn round_pose(pose: &Pose) -> Result<Pose> {
    let q = |v: f64| v as f32 as f64;
    let mut p = Pose::from_components(q(pose.x), q(pose.y), q(pose.cos), q(pose.sin))?;
    for _ in 0..32 {
        let next = Pose::from_components(p.x, p.y, q(p.cos), q(p.sin))?;
        if next == p {
            return Ok(p);
        }
        p = next;
    }
    Err(Error::Format(format!(
        "heading ({}, {}) has no stable f32 representation",
        pose.cos, pose.sin
    )))
}

fn render_views(camera: &CameraModel, scene: &Scene, poses: &[Pose]) -> Vec<Observation> {
    poses
        .iter()
        .map(|p| Observation {
            image: round_image(camera.render_view(scene, p)),
            pose: *p,
        })
        .collect()
}

fn round_image(image: Image) -> Image {
    let w = image.width();
    let data = image.data().iter().map(|&v| v as f32 as f64).collect();
    Image::new(w, data).expect("rounding keeps values in [0, 1]")
}

/// Generates a dataset. Scenes depend only on `(seed, index)`.
pub fn make_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut scenes = Vec::with_capacity(config.scenes);
    if config.paired {
        for t in 0..config.scenes / 3 {
            let mut rng = scene_rng(config.seed, t as u64);
            scenes.extend(paired_triple(&mut rng, config)?);
        }
    } else {
        for i in 0..config.scenes {
            let mut rng = scene_rng(config.seed, i as u64);
            let scene = sample_scene(&mut rng, config.objects.clone(), ARENA)?;
            let poses = (0..config.views_per_scene)
                .map(|_| sample_pose(&mut rng, &scene, config.margin))
                .collect::<Result<Vec<_>>>()?;
            let views = render_views(&config.camera, &scene, &poses);
            scenes.push(SceneRecord {
                scene: Some(scene),
                views,
            });
        }
    }
    Ok(Dataset {
        views_per_scene: config.views_per_scene,
        width: config.camera.width,
        scenes,
    })
}

/// Ground-truth composite of a paired triple: A's objects without B's,
/// plus C's. Fails when B is not contained in A.
pub fn composite_scene(a: &Scene, b: &Scene, c: &Scene) -> Result<Scene> {
    if !b.objects.iter().all(|o| a.objects.contains(o)) {
        return Err(Error::InvalidScene(
            "scene B's objects are not a subset of scene A's; generate the data with --paired"
                .into(),
        ));
    }
    let mut objects: Vec<Object> = a
        .objects
        .iter()
        .filter(|o| !b.objects.contains(o))
        .copied()
        .collect();
    objects.extend(c.objects.iter().copied());
    Ok(Scene::with_objects(objects, a.arena))
}

/// `A = {o1, o2}`, `B = {o1}`, `C = {o3}` observed from shared poses. The
/// last (query) pose is chosen so that the composite `{o2, o3}` renders
/// differently from `A`.
fn paired_triple(rng: &mut ChaCha8Rng, config: &GenConfig) -> Result<Vec<SceneRecord>> {
    let colors = sample_colors(rng, 3);
    let mut objects = Vec::with_capacity(3);
    for &color in &colors {
        let o = sample_object(rng, &objects, ARENA, color)?;
        objects.push(o);
    }
    let a = Scene::with_objects(vec![objects[0], objects[1]], ARENA);
    let b = Scene::with_objects(vec![objects[0]], ARENA);
    let c = Scene::with_objects(vec![objects[2]], ARENA);
    let union = Scene::with_objects(objects.clone(), ARENA);
    let composite = composite_scene(&a, &b, &c)?;
    let mut poses = Vec::with_capacity(config.views_per_scene);
    for _ in 1..config.views_per_scene {
        poses.push(sample_pose(rng, &union, config.margin)?);
    }
    let mut query = None;
    for _ in 0..REJECTION_BUDGET {
        let p = sample_pose(rng, &union, config.margin)?;
        if config.camera.render_view(&a, &p) != config.camera.render_view(&composite, &p) {
            query = Some(p);
            break;
        }
    }
    poses.push(query.ok_or(Error::RejectionBudget(REJECTION_BUDGET))?);
    Ok([a, b, c]
        .into_iter()
        .map(|scene| SceneRecord {
            views: render_views(&config.camera, &scene, &poses),
            scene: Some(scene),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(paired: bool) -> GenConfig {
        GenConfig {
            scenes: 6,
            views_per_scene: 3,
            camera: CameraModel::new(std::f64::consts::FRAC_PI_2, 16, 0.0).unwrap(),
            objects: 1..=3,
            paired,
            seed: 9,
            ..GenConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for paired in [false, true] {
            let d = make_dataset(&tiny(paired)).unwrap();
            let bytes = d.to_bytes().unwrap();
            let back = Dataset::from_bytes(&bytes).unwrap();
            assert_eq!(back, d);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn header_errors_name_both_sides() {
        let d = make_dataset(&tiny(false)).unwrap();
        let mut bytes = d.to_bytes().unwrap();
        bytes[4] = 2;
        let msg = Dataset::from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains("expected 1") && msg.contains("found 2"), "{msg}");
        bytes[0] = b'X';
        assert!(Dataset::from_bytes(&bytes).is_err());
    }

    #[test]
    fn every_truncation_fails_cleanly() {
        let d = make_dataset(&tiny(false)).unwrap();
        let bytes = d.to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(Dataset::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn paired_triples_share_poses() {
        let d = make_dataset(&tiny(true)).unwrap();
        for t in 0..2 {
            let s = &d.scenes[3 * t..3 * t + 3];
            for v in 0..3 {
                assert_eq!(s[0].views[v].pose, s[1].views[v].pose);
                assert_eq!(s[0].views[v].pose, s[2].views[v].pose);
            }
            let (a, b, c) = (
                s[0].scene.as_ref().unwrap(),
                s[1].scene.as_ref().unwrap(),
                s[2].scene.as_ref().unwrap(),
            );
            let comp = composite_scene(a, b, c).unwrap();
            assert_eq!(comp.objects.len(), 2);
            assert!(composite_scene(c, a, b).is_err());
        }
    }

    #[test]
    fn paired_needs_multiple_of_three() {
        let cfg = GenConfig {
            scenes: 4,
            ..tiny(true)
        };
        assert!(make_dataset(&cfg).is_err());
    }
}
