//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use cellroute::adam::AdamConfig;
use cellroute::model::{LatentMode, LossKind, ModelConfig};
use cellroute::FusionMode;
use cellroute_flatland::{CameraModel, GenConfig};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub obs_min: usize,
    pub obs_max: usize,
    pub eval_obs: usize,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub scenes: usize,
    pub views_per_scene: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub fov_degrees: f64,
    pub kappa: f64,
    pub margin: f64,
    pub data_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        // Smaller and faster-learning than the component defaults so that
        // 50k steps fit in an hour on one core.
        RunConfig {
            model: ModelConfig {
                world_cells: 64,
                ..ModelConfig::default()
            },
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            steps: 50_000,
            batch_size: 32,
            obs_min: 1,
            obs_max: 5,
            eval_obs: 3,
            seed: 0,
            checkpoint_interval: 5_000,
            scenes: 5_000,
            views_per_scene: 8,
            objects_min: 2,
            objects_max: 2,
            fov_degrees: 90.0,
            kappa: 0.0,
            margin: 0.1,
            data_seed: 0,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        line,
        key: key.to_string(),
        message: format!("cannot parse '{value}': {e}"),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: content.to_string(),
                message: "expected 'key = value'".into(),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form; `line` is only used in errors.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "world_cells" => m.world_cells = parse(line, key, value)?,
            "embed_dim" => m.embed_dim = parse(line, key, value)?,
            "cam_dim" => m.cam_dim = parse(line, key, value)?,
            "w2c_hidden" => m.w2c_hidden = parse(line, key, value)?,
            "wce_hidden" => m.wce_hidden = parse(line, key, value)?,
            "vce_hidden" => m.vce_hidden = parse(line, key, value)?,
            "channels" => m.channels = parse(line, key, value)?,
            "width" => m.width = parse(line, key, value)?,
            "patch" => m.patch = parse(line, key, value)?,
            "latent_dim" => m.latent_dim = parse(line, key, value)?,
            "encoder_hidden" => m.encoder_hidden = parse(line, key, value)?,
            "head_hidden" => m.head_hidden = parse(line, key, value)?,
            "decoder_hidden" => m.decoder_hidden = parse(line, key, value)?,
            "fusion" => m.fusion = parse::<FusionMode>(line, key, value)?,
            "latent" => m.latent_mode = parse::<LatentMode>(line, key, value)?,
            "loss" => m.loss = parse::<LossKind>(line, key, value)?,
            "gamma" => m.gamma = parse(line, key, value)?,
            "learning_rate" => self.adam.learning_rate = parse(line, key, value)?,
            "beta1" => self.adam.beta1 = parse(line, key, value)?,
            "beta2" => self.adam.beta2 = parse(line, key, value)?,
            "epsilon" => self.adam.epsilon = parse(line, key, value)?,
            "steps" => self.steps = parse(line, key, value)?,
            "batch_size" => self.batch_size = parse(line, key, value)?,
            "obs_min" => self.obs_min = parse(line, key, value)?,
            "obs_max" => self.obs_max = parse(line, key, value)?,
            "eval_obs" => self.eval_obs = parse(line, key, value)?,
            "seed" => self.seed = parse(line, key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(line, key, value)?,
            "scenes" => self.scenes = parse(line, key, value)?,
            "views_per_scene" => self.views_per_scene = parse(line, key, value)?,
            "objects_min" => self.objects_min = parse(line, key, value)?,
            "objects_max" => self.objects_max = parse(line, key, value)?,
            "fov_degrees" => self.fov_degrees = parse(line, key, value)?,
            "kappa" => self.kappa = parse(line, key, value)?,
            "margin" => self.margin = parse(line, key, value)?,
            "data_seed" => self.data_seed = parse(line, key, value)?,
            _ => {
                return Err(Error::Config {
                    line,
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                line: 0,
                key: key.to_string(),
                message,
            })
        };
        self.model.validate().map_err(|e| Error::Config {
            line: 0,
            key: "model".into(),
            message: e.to_string(),
        })?;
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} must be positive", a.learning_rate));
        }
        if !(0.0..1.0).contains(&a.beta1) {
            return bad("beta1", format!("{} outside [0, 1)", a.beta1));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return bad("beta2", format!("{} outside [0, 1)", a.beta2));
        }
        if !(a.epsilon > 0.0) {
            return bad("epsilon", format!("{} must be positive", a.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.obs_min == 0 || self.obs_min > self.obs_max {
            return bad(
                "obs_min",
                format!("range {}..{} must be non-empty and start at 1 or more", self.obs_min, self.obs_max),
            );
        }
        if self.obs_max + 1 > self.views_per_scene {
            return bad(
                "obs_max",
                format!(
                    "{} observations plus a query exceed {} views per scene",
                    self.obs_max, self.views_per_scene
                ),
            );
        }
        if self.eval_obs == 0 {
            return bad("eval_obs", "must be at least 1".into());
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval", "must be positive".into());
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min", format!("{} exceeds objects_max {}", self.objects_min, self.objects_max));
        }
        if self.scenes == 0 {
            return bad("scenes", "must be positive".into());
        }
        self.camera().map_err(|e| Error::Config {
            line: 0,
            key: "fov_degrees/kappa".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn camera(&self) -> std::result::Result<CameraModel, cellroute_flatland::Error> {
        CameraModel::new(self.fov_degrees.to_radians(), self.model.width, self.kappa)
    }

    pub fn gen_config(&self, paired: bool) -> Result<GenConfig> {
        Ok(GenConfig {
            scenes: self.scenes,
            views_per_scene: self.views_per_scene,
            camera: self.camera()?,
            objects: self.objects_min..=self.objects_max,
            margin: self.margin,
            paired,
            seed: self.data_seed,
        })
    }

    /// Text form accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("world_cells", m.world_cells.to_string());
        kv("embed_dim", m.embed_dim.to_string());
        kv("cam_dim", m.cam_dim.to_string());
        kv("w2c_hidden", m.w2c_hidden.to_string());
        kv("wce_hidden", m.wce_hidden.to_string());
        kv("vce_hidden", m.vce_hidden.to_string());
        kv("channels", m.channels.to_string());
        kv("width", m.width.to_string());
        kv("patch", m.patch.to_string());
        kv("latent_dim", m.latent_dim.to_string());
        kv("encoder_hidden", m.encoder_hidden.to_string());
        kv("head_hidden", m.head_hidden.to_string());
        kv("decoder_hidden", m.decoder_hidden.to_string());
        kv("fusion", m.fusion.to_string());
        kv("latent", m.latent_mode.to_string());
        kv("loss", m.loss.to_string());
        kv("gamma", format!("{:?}", m.gamma));
        kv("learning_rate", format!("{:?}", self.adam.learning_rate));
        kv("beta1", format!("{:?}", self.adam.beta1));
        kv("beta2", format!("{:?}", self.adam.beta2));
        kv("epsilon", format!("{:?}", self.adam.epsilon));
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("obs_min", self.obs_min.to_string());
        kv("obs_max", self.obs_max.to_string());
        kv("eval_obs", self.eval_obs.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("scenes", self.scenes.to_string());
        kv("views_per_scene", self.views_per_scene.to_string());
        kv("objects_min", self.objects_min.to_string());
        kv("objects_max", self.objects_max.to_string());
        kv("fov_degrees", format!("{:?}", self.fov_degrees));
        kv("kappa", format!("{:?}", self.kappa));
        kv("margin", format!("{:?}", self.margin));
        kv("data_seed", self.data_seed.to_string());
        s
    }
}
