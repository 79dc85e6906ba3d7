//! Flatland: a 2D world seen through 1D pinhole cameras.
//!
//! Scenes hold coloured circles and wall segments inside the square
//! `[-1, 1]^2`. Cameras render one-row RGB images by ray casting, with an
//! optional distortion of the image plane. Because the geometry is known,
//! [`epipolar::epipolar_support`] gives the exact set of view cells a pixel
//! of one view can map to in another.

pub mod camera;
pub mod dataset;
pub mod epipolar;
pub mod scene;

use std::io::Write;
use std::path::Path;

pub use camera::CameraModel;
pub use dataset::{make_dataset, Dataset, GenConfig, SceneRecord};
pub use epipolar::{dilate, epipolar_support};
pub use scene::{sample_scene, Object, Scene, Shape, BACKGROUND, PALETTE};

/// Half side length of the square arena.
pub const ARENA: f64 = 1.0;

/// Length of the arena diagonal, the farthest depth a ray can matter at.
pub fn arena_diagonal() -> f64 {
    2.0 * ARENA * std::f64::consts::SQRT_2
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("rejection sampling gave up after {0} attempts")]
    RejectionBudget(usize),
    #[error("STRD format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] cellroute::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
