use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellroute::routing::gaussian_signal;
use cellroute::{FusionMode, Model, Pose};
use cellroute_flatland::{make_dataset, write_atomic, CameraModel, Dataset};
use cellroute_harness::checkpoint::load_checkpoint;
use cellroute_harness::experiments::{
    arith_csv, epipolar_score, fusion_ablation, route_viz, scene_arith, RouteViz,
};
use cellroute_harness::ppm::{encode_strips, highlight, write_image};
use cellroute_harness::train::{load_log, train, TrainOptions};
use cellroute_harness::{evaluate, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellroute", version, about = "Pose-routed scene representations in flatland")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Camera distortion strength; overrides the config.
    #[arg(long)]
    distortion: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.distortion {
            cfg.kappa = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn camera(&self, model: &Model) -> Result<CameraModel> {
        let cfg = self.load()?;
        Ok(CameraModel::new(cfg.fov_degrees.to_radians(), model.config().width, cfg.kappa)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an STRD dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Dataset seed; overrides `data_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        /// Object count or inclusive range such as `2..4`.
        #[arg(long)]
        objects: Option<String>,
        /// Emit (A, B, C) triples for scene arithmetic.
        #[arg(long)]
        paired: bool,
    },
    /// Train a model; resumes when the checkpoint already exists.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Training log CSV (default: checkpoint path with `.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        fusion: Option<FusionMode>,
        /// Observation count or inclusive range such as `1..5`.
        #[arg(long)]
        obs: Option<String>,
        /// Start over even if the checkpoint exists.
        #[arg(long)]
        fresh: bool,
        #[arg(long, default_value_t = 500)]
        progress: u64,
    },
    /// Evaluate MAE, RMSE and BCE on held-out scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        obs: Option<usize>,
        /// Per-scene metrics CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route a signal from one pose to another and draw the spread.
    RouteViz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Source pose `x,y,heading` (radians).
        #[arg(long, default_value = "-0.6,-0.6,0.785398")]
        pose_a: String,
        #[arg(long, default_value = "0.6,-0.6,2.356194")]
        pose_b: String,
        /// Signal center in `[-1, 1]`.
        #[arg(long, default_value_t = 0.0)]
        center: f64,
        /// Gaussian width in view coordinates; 0 for a single cell.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
    },
    /// Fraction of routed mass that lands on the epipolar support.
    EpipolarScore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        dilation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Score a freshly initialised model with the checkpoint's layout.
        #[arg(long)]
        untrained: bool,
    },
    /// Render rep(A) - rep(B) + rep(C) for paired triples.
    SceneArith {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        obs: Option<usize>,
        /// Only this triple (default: all).
        #[arg(long)]
        triple: Option<usize>,
        /// Triples for which renders are written.
        #[arg(long, default_value_t = 8)]
        renders: usize,
    },
    /// RMSE of one model per fusion mode against the observation count.
    FusionAblation {
        #[arg(long, num_args = 1.., required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Observation counts, inclusive range.
        #[arg(long, default_value = "3..8")]
        obs: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>> {
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?, b.trim().trim_start_matches('=').parse()?),
        None => {
            let n = s.trim().parse()?;
            (n, n)
        }
    };
    if lo > hi {
        bail!("empty range {s}");
    }
    Ok(lo..=hi)
}

fn parse_pose(s: &str) -> Result<Pose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("pose '{s}' must be x,y,heading"))?;
    if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
        bail!("pose '{s}' must be three finite numbers x,y,heading");
    }
    Ok(Pose::new(v[0], v[1], v[2]))
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common, out, seed, scenes, views, objects, paired } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.data_seed = s;
            }
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(v) = views {
                cfg.views_per_scene = v;
            }
            if let Some(o) = objects {
                let r = parse_range(&o)?;
                (cfg.objects_min, cfg.objects_max) = (*r.start(), *r.end());
            }
            let data = make_dataset(&cfg.gen_config(paired)?)?;
            data.save(&out)?;
            let (mean, std) = data.pixel_stats();
            println!(
                "wrote {} scenes x {} views to {} (pixel mean {mean:.4}, std {std:.4})",
                data.len(),
                data.views_per_scene,
                out.display()
            );
        }
        Command::Train { common, data, ckpt, out, seed, steps, fusion, obs, fresh, progress } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(f) = fusion {
                cfg.model.fusion = f;
            }
            if let Some(o) = obs {
                let r = parse_range(&o)?;
                (cfg.obs_min, cfg.obs_max) = (*r.start(), *r.end());
            }
            cfg.validate()?;
            let log_path = out.unwrap_or_else(|| ckpt.with_extension("csv"));
            let dataset = load_data(&data)?;
            let resume = if ckpt.exists() && !fresh {
                let (model, adam) = load_checkpoint(&ckpt)?;
                let adam = adam.context("checkpoint has no optimizer state to resume from")?;
                let log = if log_path.exists() { load_log(&log_path)? } else { Default::default() };
                eprintln!("resuming at step {}", adam.step);
                Some((model, adam, log))
            } else {
                None
            };
            let options = TrainOptions {
                checkpoint: Some(ckpt.clone()),
                log: Some(log_path),
                progress_every: progress,
            };
            let outcome = train(&cfg, &dataset, resume, &options)?;
            let last = outcome.log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!("trained to step {} (last loss {last:.6}); checkpoint {}", outcome.adam.step, ckpt.display());
        }
        Command::Eval { common, data, ckpt, obs, out } => {
            let cfg = common.load()?;
            let model = load_model(&ckpt)?;
            let dataset = load_data(&data)?;
            let summary = evaluate(&model, &dataset, obs.unwrap_or(cfg.eval_obs))?;
            print!("{}", summary.report());
            if let Some(p) = out {
                write_text(&p, &summary.to_csv())?;
            }
        }
        Command::RouteViz { common, ckpt, out, pose_a, pose_b, center, sigma } => {
            let model = load_model(&ckpt)?;
            let camera = common.camera(&model)?;
            let (a, b) = (parse_pose(&pose_a)?, parse_pose(&pose_b)?);
            let v = model.config().view_cells();
            let signal = gaussian_signal(center, sigma, v)?;
            let viz = route_viz(&model, &camera, &a, &b, &signal)?;
            std::fs::create_dir_all(&out)?;
            write_text(&out.join("route.csv"), &viz.to_csv())?;
            let patch = model.config().patch;
            let width = model.config().width;
            let support: Vec<f64> = viz.support.iter().map(|&s| s as u8 as f64).collect();
            for (name, col) in [
                ("signal", &viz.signal),
                ("spread", &viz.spread.normalized),
                ("support", &support),
            ] {
                let row = highlight(&RouteViz::pixels(col, patch), None);
                write_atomic(&out.join(format!("{name}.ppm")), &encode_strips(&[&row], width))?;
            }
            println!("wrote route.csv and strips to {}", out.display());
        }
        Command::EpipolarScore { common, ckpt, data, samples, dilation, seed, untrained } => {
            let mut model = load_model(&ckpt)?;
            if untrained {
                model = Model::new(model.config().clone(), seed)?;
            }
            let camera = common.camera(&model)?;
            let dataset = load_data(&data)?;
            let s = epipolar_score(&model, &dataset, &camera, samples, dilation, seed)?;
            println!(
                "epipolar score {:.4} ± {:.4} over {} samples (uniform baseline {:.4})",
                s.score.mean,
                s.score.std,
                s.fractions.len(),
                s.baseline.mean
            );
        }
        Command::SceneArith { common, ckpt, data, out, obs, triple, renders } => {
            let cfg = common.load()?;
            let model = load_model(&ckpt)?;
            let camera = common.camera(&model)?;
            let dataset = load_data(&data)?;
            let obs = obs.unwrap_or(cfg.eval_obs);
            let triples: Vec<usize> = match triple {
                Some(t) => vec![t],
                None => (0..dataset.len() / 3).collect(),
            };
            std::fs::create_dir_all(&out)?;
            let mut results = Vec::new();
            for (k, &t) in triples.iter().enumerate() {
                let r = scene_arith(&model, &dataset, &camera, t, obs)?;
                if k < renders {
                    write_image(&out.join(format!("arith_{t}.ppm")), &r.arith)?;
                    write_image(&out.join(format!("composite_{t}.ppm")), &r.composite_truth)?;
                    write_image(&out.join(format!("a_{t}.ppm")), &r.a_truth)?;
                }
                results.push(r);
            }
            write_text(&out.join("scene_arith.csv"), &arith_csv(&results))?;
            let wins = results.iter().filter(|r| r.success()).count();
            println!(
                "composite closer than A in {wins}/{} triples ({:.1}%)",
                results.len(),
                100.0 * wins as f64 / results.len().max(1) as f64
            );
        }
        Command::FusionAblation { ckpt, data, obs, out } => {
            let models = ckpt.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
            let dataset = load_data(&data)?;
            let counts: Vec<usize> = parse_range(&obs)?.collect();
            let table = fusion_ablation(&models, &dataset, &counts)?;
            print!("{}", table.to_text());
            if let Some(p) = out {
                write_text(&p, &table.to_csv())?;
            }
        }
    }
    Ok(())
}
