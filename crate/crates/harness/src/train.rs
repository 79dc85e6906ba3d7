//! Minibatch training with Adam. Writes checkpoints and a CSV log.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cellroute::model::{Episode, Sampling, IMAGE_CHANNELS};
use cellroute::{AdamState, Model};
use cellroute_flatland::dataset::POSE_DIM;
use cellroute_flatland::{write_atomic, Dataset};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub rec: f64,
    pub reg: f64,
    /// Seconds since the current process started training.
    pub wall: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

const LOG_HEADER: &str = "step,loss,rec,reg,wall_seconds";

impl TrainingLog {
    pub fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return Err(Error::Log(format!(
                    "step {} does not follow step {}",
                    r.step, last.step
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:.3}\n",
                r.step, r.loss, r.rec, r.reg, r.wall
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Log(format!("expected header '{LOG_HEADER}'")));
        }
        let mut log = TrainingLog::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Log(format!("malformed row {}: '{line}'", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            log.push(LogRecord {
                step: f[0].parse().map_err(|_| bad())?,
                loss: num(f[1])?,
                rec: num(f[2])?,
                reg: num(f[3])?,
                wall: num(f[4])?,
            })?;
        }
        Ok(log)
    }

    /// Median total loss over steps in `range`.
    pub fn median_loss(&self, range: std::ops::RangeInclusive<u64>) -> Option<f64> {
        let mut v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| range.contains(&r.step))
            .map(|r| r.loss)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Print a progress line every this many steps (0 disables).
    pub progress_every: u64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub adam: AdamState,
    pub log: TrainingLog,
}

/// Checks that a dataset can feed the configured model.
pub fn check_compatible(config: &RunConfig, data: &Dataset, min_views: usize) -> Result<()> {
    if data.width != config.model.width {
        return invalid(format!(
            "dataset width {} does not match model width {}",
            data.width, config.model.width
        ));
    }
    if config.model.pose_dim != POSE_DIM {
        return invalid(format!("model pose_dim {} but datasets store {POSE_DIM}", config.model.pose_dim));
    }
    if data.views_per_scene < min_views {
        return invalid(format!(
            "dataset has {} views per scene, need at least {min_views}",
            data.views_per_scene
        ));
    }
    if data.is_empty() {
        return invalid("dataset has no scenes");
    }
    debug_assert_eq!(IMAGE_CHANNELS, 3);
    Ok(())
}

/// Random generator for one training step; independent of earlier steps so
/// that resumed runs see the same batches.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Scene index and view indices (observations then query) of one episode.
pub fn draw_episode(rng: &mut ChaCha8Rng, config: &RunConfig, data: &Dataset) -> (usize, Vec<usize>) {
    let scene = rng.random_range(0..data.len());
    let n = rng.random_range(config.obs_min..=config.obs_max);
    let views = sample(rng, data.views_per_scene, n + 1).into_vec();
    (scene, views)
}

/// Trains from scratch or continues `resume` until `config.steps` steps
/// have been taken in total.
pub fn train(
    config: &RunConfig,
    data: &Dataset,
    resume: Option<(Model, AdamState, TrainingLog)>,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(config, data, config.obs_max + 1)?;
    let (mut model, mut adam, mut log) = match resume {
        Some((m, a, mut l)) => {
            if m.config() != &config.model {
                return invalid("checkpoint model configuration differs from the run configuration");
            }
            l.records.retain(|r| r.step <= a.step);
            (m, a, l)
        }
        None => {
            let m = Model::new(config.model.clone(), config.seed)?;
            let a = AdamState::new(config.adam, m.params().tensors());
            (m, a, TrainingLog::default())
        }
    };
    let start = Instant::now();
    let z = config.model.latent_dim;
    while adam.step < config.steps {
        let step = adam.step + 1;
        let mut rng = step_rng(config.seed, step);
        let mut episodes = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let (s, views) = draw_episode(&mut rng, config, data);
            let rec = &data.scenes[s];
            let (query, obs) = views.split_last().expect("at least two views");
            episodes.push(Episode {
                observations: obs.iter().map(|&v| &rec.views[v]).collect(),
                query: rec.views[*query].pose,
                target: Some(&rec.views[*query].image),
            });
        }
        let sampling = Sampling::seeded(rng.random(), config.batch_size * z);
        let (values, grads) = model.loss_and_grads(&episodes, &sampling)?;
        if !(values.total.is_finite() && values.rec.is_finite() && values.reg.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.update(model.params_mut().tensors_mut(), &grads)?;
        log.push(LogRecord {
            step,
            loss: values.total,
            rec: values.rec,
            reg: values.reg,
            wall: start.elapsed().as_secs_f64(),
        })?;
        if options.progress_every > 0 && step % options.progress_every == 0 {
            let recent = log.median_loss(step.saturating_sub(options.progress_every) + 1..=step);
            eprintln!(
                "step {step}/{} loss {:.5} (median {:.5}) {:.1}s",
                config.steps,
                values.total,
                recent.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
        if step % config.checkpoint_interval == 0 && step < config.steps {
            persist(&model, &adam, &log, options)?;
        }
    }
    persist(&model, &adam, &log, options)?;
    Ok(TrainOutcome { model, adam, log })
}

fn persist(model: &Model, adam: &AdamState, log: &TrainingLog, options: &TrainOptions) -> Result<()> {
    if let Some(path) = &options.checkpoint {
        save_checkpoint(model, Some(adam), path)?;
    }
    if let Some(path) = &options.log {
        write_atomic(path, log.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn load_log(path: &Path) -> Result<TrainingLog> {
    TrainingLog::from_csv(&std::fs::read_to_string(path)?)
}
