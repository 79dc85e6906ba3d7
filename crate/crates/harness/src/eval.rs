//! Held-out evaluation: the first `obs_count` views of every scene are
//! observed and the last view is predicted.

use cellroute::model::Episode;
use cellroute::{Image, Model};
use cellroute_flatland::Dataset;

use crate::metrics::{Metrics, Summary};
use crate::{invalid, Result};

/// Episodes rendered per forward pass.
pub const EVAL_CHUNK: usize = 16;

/// Episode of scene `s` with its first `obs_count` views observed.
pub fn eval_episode(data: &Dataset, s: usize, obs_count: usize) -> Episode<'_> {
    let views = &data.scenes[s].views;
    let query = views.last().expect("scenes have views");
    Episode {
        observations: views[..obs_count].iter().collect(),
        query: query.pose,
        target: Some(&query.image),
    }
}

/// Predicted query images for every scene, in dataset order.
pub fn predict_all(model: &Model, data: &Dataset, obs_count: usize) -> Result<Vec<Image>> {
    if obs_count == 0 || obs_count + 1 > data.views_per_scene {
        return invalid(format!(
            "obs_count {obs_count} must lie in 1..={}",
            data.views_per_scene.saturating_sub(1)
        ));
    }
    if data.width != model.config().width {
        return invalid(format!(
            "dataset width {} does not match model width {}",
            data.width,
            model.config().width
        ));
    }
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let eps: Vec<Episode<'_>> = chunk.iter().map(|&s| eval_episode(data, s, obs_count)).collect();
        out.extend(model.predict(&eps)?);
    }
    Ok(out)
}

/// Metrics of `predictions` against each scene's last view.
pub fn score(data: &Dataset, predictions: &[Image]) -> Summary {
    let per_scene = data
        .scenes
        .iter()
        .zip(predictions)
        .map(|(rec, pred)| Metrics::compare(pred, &rec.views.last().expect("views").image))
        .collect();
    Summary::new(per_scene)
}

pub fn evaluate(model: &Model, data: &Dataset, obs_count: usize) -> Result<Summary> {
    let preds = predict_all(model, data, obs_count)?;
    Ok(score(data, &preds))
}
