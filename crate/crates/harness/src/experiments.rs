//! Drivers for the routing, scene arithmetic and fusion studies.

use cellroute::fusion::scene_arithmetic;
use cellroute::model::Sampling;
use cellroute::routing::{propagate_with_bundles, Spread};
use cellroute::{FusionMode, Image, Model, Observation, Pose};
use cellroute_flatland::dataset::composite_scene;
use cellroute_flatland::{arena_diagonal, dilate, epipolar_support, CameraModel, Dataset};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::evaluate;
use crate::metrics::{mse, MeanStd};
use crate::{invalid, Result};

/// View cells of B that any pixel of view cell `cell` in A can project to.
pub fn cell_support(
    camera: &CameraModel,
    patch: usize,
    cell: usize,
    pose_a: &Pose,
    pose_b: &Pose,
) -> Vec<usize> {
    let mut out: Vec<usize> = (cell * patch..(cell + 1) * patch)
        .flat_map(|px| epipolar_support(px, pose_a, pose_b, camera, patch, arena_diagonal()))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteViz {
    pub signal: Vec<f64>,
    pub spread: Spread,
    /// Epipolar support of the signal's peak cell.
    pub support: Vec<bool>,
}

impl RouteViz {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,signal,raw,normalized,support\n");
        for i in 0..self.signal.len() {
            s.push_str(&format!(
                "{i},{:?},{:?},{:?},{}\n",
                self.signal[i], self.spread.raw[i], self.spread.normalized[i], self.support[i] as u8
            ));
        }
        s
    }

    /// Per-pixel expansion of a per-cell column.
    pub fn pixels(values: &[f64], patch: usize) -> Vec<f64> {
        values.iter().flat_map(|&v| std::iter::repeat_n(v, patch)).collect()
    }
}

/// Sends `signal` (one value per view cell) from `pose_a` to `pose_b`.
pub fn route_viz(
    model: &Model,
    camera: &CameraModel,
    pose_a: &Pose,
    pose_b: &Pose,
    signal: &[f64],
) -> Result<RouteViz> {
    let strn = model.strn();
    let a = strn.strn_forward(model.params(), pose_a)?;
    let b = strn.strn_forward(model.params(), pose_b)?;
    let spread = propagate_with_bundles(signal, &a, &b, &strn.config.view_grid)?;
    let v = signal.len();
    let mut support = vec![false; v];
    let peak = signal
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, _)| i);
    if let Some(p) = peak {
        for c in cell_support(camera, model.config().patch, p, pose_a, pose_b) {
            support[c] = true;
        }
    }
    Ok(RouteViz { signal: signal.to_vec(), spread, support })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpipolarScore {
    /// Normalized spread mass inside the dilated support, per sample.
    pub fractions: Vec<f64>,
    /// Mass a uniform spread would place there: `|dilated support| / V`.
    pub baselines: Vec<f64>,
    pub score: MeanStd,
    pub baseline: MeanStd,
}

/// Samples attempted per requested sample before giving up on finding
/// pairs with a non-empty support.
const SUPPORT_ATTEMPTS: usize = 100;

/// In-support mass of one-hot signals routed between random view pairs.
pub fn epipolar_score(
    model: &Model,
    data: &Dataset,
    camera: &CameraModel,
    samples: usize,
    dilation: usize,
    seed: u64,
) -> Result<EpipolarScore> {
    if samples == 0 {
        return invalid("epipolar score needs at least one sample");
    }
    if data.views_per_scene < 2 || data.is_empty() {
        return invalid("epipolar score needs scenes with two or more views");
    }
    let cfg = model.config();
    let v = cfg.view_cells();
    let strn = model.strn();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fractions, mut baselines) = (Vec::new(), Vec::new());
    let mut attempts = 0;
    while fractions.len() < samples {
        attempts += 1;
        if attempts > samples * SUPPORT_ATTEMPTS {
            return invalid("could not find view pairs with overlapping frusta");
        }
        let s = rng.random_range(0..data.len());
        let pair = sample(&mut rng, data.views_per_scene, 2);
        let (pa, pb) = (data.scenes[s].views[pair.index(0)].pose, data.scenes[s].views[pair.index(1)].pose);
        let cell = rng.random_range(0..v);
        let support = cell_support(camera, cfg.patch, cell, &pa, &pb);
        if support.is_empty() {
            continue;
        }
        let region = dilate(&support, dilation, v);
        let mut signal = vec![0.0; v];
        signal[cell] = 1.0;
        let a = strn.strn_forward(model.params(), &pa)?;
        let b = strn.strn_forward(model.params(), &pb)?;
        let spread = propagate_with_bundles(&signal, &a, &b, &strn.config.view_grid)?;
        fractions.push(region.iter().map(|&c| spread.normalized[c]).sum::<f64>().clamp(0.0, 1.0));
        baselines.push(region.len() as f64 / v as f64);
    }
    Ok(EpipolarScore {
        score: MeanStd::of(&fractions),
        baseline: MeanStd::of(&baselines),
        fractions,
        baselines,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArithResult {
    pub triple: usize,
    pub arith: Image,
    pub composite_truth: Image,
    pub a_truth: Image,
    pub mse_composite: f64,
    pub mse_a: f64,
}

impl ArithResult {
    pub fn success(&self) -> bool {
        self.mse_composite < self.mse_a
    }
}

/// Scene arithmetic `A - B + C` for triple `t` of a paired dataset, observed
/// through the first `obs_count` views and rendered at the last view.
pub fn scene_arith(
    model: &Model,
    data: &Dataset,
    camera: &CameraModel,
    t: usize,
    obs_count: usize,
) -> Result<ArithResult> {
    if 3 * t + 2 >= data.len() {
        return invalid(format!("triple {t} out of range for {} scenes", data.len()));
    }
    if obs_count == 0 || obs_count >= data.views_per_scene {
        return invalid(format!("obs_count {obs_count} must lie in 1..{}", data.views_per_scene));
    }
    let recs = &data.scenes[3 * t..3 * t + 3];
    let scenes: Vec<_> = recs
        .iter()
        .map(|r| {
            r.scene.as_ref().ok_or_else(|| {
                crate::Error::Invalid("dataset has no scene metadata; generate it with --paired".into())
            })
        })
        .collect::<Result<_>>()?;
    let composite = composite_scene(scenes[0], scenes[1], scenes[2])?;
    let query = recs[0].views.last().expect("views");
    let reps = recs
        .iter()
        .map(|r| model.represent(&r.views[..obs_count]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rep = scene_arithmetic(&reps[0], &reps[1], &reps[2])?;
    let arith = model.render(&rep, &query.pose, None, &Sampling::PriorMean)?.image;
    let composite_truth = camera.render_view(&composite, &query.pose);
    Ok(ArithResult {
        triple: t,
        mse_composite: mse(&arith, &composite_truth),
        mse_a: mse(&arith, &query.image),
        a_truth: query.image.clone(),
        composite_truth,
        arith,
    })
}

pub fn arith_csv(results: &[ArithResult]) -> String {
    let mut s = String::from("triple,mse_composite,mse_a,success\n");
    for r in results {
        s.push_str(&format!("{},{:?},{:?},{}\n", r.triple, r.mse_composite, r.mse_a, r.success() as u8));
    }
    s
}

/// RMSE of each fusion mode at each observation count.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub counts: Vec<usize>,
    pub rows: Vec<(FusionMode, Vec<f64>)>,
}

impl AblationTable {
    pub fn rmse(&self, mode: FusionMode, count: usize) -> Option<f64> {
        let col = self.counts.iter().position(|&c| c == count)?;
        self.rows.iter().find(|(m, _)| *m == mode).map(|(_, r)| r[col])
    }

    /// Change from the first count, per cell.
    pub fn delta(&self, row: usize, col: usize) -> f64 {
        self.rows[row].1[col] - self.rows[row].1[0]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,obs,rmse,rmse_px,delta_px\n");
        for (r, (mode, vals)) in self.rows.iter().enumerate() {
            for (c, &count) in self.counts.iter().enumerate() {
                s.push_str(&format!(
                    "{mode},{count},{:?},{:.4},{:.4}\n",
                    vals[c],
                    vals[c] * 255.0,
                    self.delta(r, c) * 255.0
                ));
            }
        }
        s
    }

    /// Grid of `rmse (delta)` in 0-255 units.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<6}", "mode");
        for c in &self.counts {
            s.push_str(&format!("{:>16}", format!("obs {c}")));
        }
        s.push('\n');
        for (r, (mode, vals)) in self.rows.iter().enumerate() {
            s.push_str(&format!("{:<6}", mode.to_string()));
            for c in 0..vals.len() {
                s.push_str(&format!(
                    "{:>16}",
                    format!("{:.2} ({:+.2})", vals[c] * 255.0, self.delta(r, c) * 255.0)
                ));
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluates one model per fusion mode at every count in `counts`.
pub fn fusion_ablation(models: &[Model], data: &Dataset, counts: &[usize]) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for mode in FusionMode::ALL {
        let model = models
            .iter()
            .find(|m| m.config().fusion == mode)
            .ok_or_else(|| crate::Error::Invalid(format!("no checkpoint for fusion mode {mode}")))?;
        let vals = counts
            .iter()
            .map(|&n| evaluate(model, data, n).map(|s| s.rmse.mean))
            .collect::<Result<Vec<_>>>()?;
        rows.push((mode, vals));
    }
    Ok(AblationTable { counts: counts.to_vec(), rows })
}

/// Observations of one scene, for callers that build episodes by hand.
pub fn first_views(data: &Dataset, scene: usize, n: usize) -> &[Observation] {
    &data.scenes[scene].views[..n]
}
