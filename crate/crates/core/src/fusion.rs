//! Scene fusion across observations.
//!
//! World-cell channels are read as log likelihood-ratios of a concept being
//! present at the cell. Starting from even prior odds, sequential Bayesian
//! updates reduce to a plain sum of the per-observation log-odds, and the
//! posterior probability is the logistic sigmoid of that sum
//! ([`FusionMode::Ocm`]). Two baselines are provided for comparison: the
//! raw sum and the row-wise L2-normalized sum.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::routing::WorldCells;
use crate::scalar::Scalar;
use crate::tape::{ops_sigmoid, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Occupancy concept mapping: `sigmoid(sum of log-odds)`.
    Ocm,
    Sum,
    /// Sum followed by L2 normalization of each cell's channel vector.
    Norm,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Sum, FusionMode::Norm, FusionMode::Ocm];

    pub fn id(self) -> u32 {
        match self {
            FusionMode::Ocm => 0,
            FusionMode::Sum => 1,
            FusionMode::Norm => 2,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(FusionMode::Ocm),
            1 => Ok(FusionMode::Sum),
            2 => Ok(FusionMode::Norm),
            _ => Err(Error::InvalidArgument(format!("unknown fusion id {id}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Ocm => "ocm",
            FusionMode::Sum => "sum",
            FusionMode::Norm => "norm",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ocm" => Ok(FusionMode::Ocm),
            "sum" => Ok(FusionMode::Sum),
            "norm" => Ok(FusionMode::Norm),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion mode '{other}' (expected ocm, sum or norm)"
            ))),
        }
    }
}

/// Fused scene cells together with the summed log-odds they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRepresentation<S> {
    /// `(K, c)` activated cells.
    pub cells: Tensor<S>,
    /// `(K, c)` sum of the per-observation world cells.
    pub pre_activation: Tensor<S>,
    pub mode: FusionMode,
    pub observation_count: usize,
}

/// Applies the mode's activation to summed world cells.
pub fn activate<S: Scalar>(tape: &mut Tape<S>, summed: Var, mode: FusionMode) -> Result<Var> {
    match mode {
        FusionMode::Ocm => Ok(tape.sigmoid(summed)),
        FusionMode::Sum => Ok(summed),
        FusionMode::Norm => tape.normalize_last(summed),
    }
}

/// Fuses a `(T, K, c)` stack of world cells into `(len(lens), K, c)` scenes;
/// scene `g` owns the next `lens[g]` observations. Returns the summed
/// log-odds and the activated cells.
pub fn fuse_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    world_cells: Var,
    lens: &[usize],
    mode: FusionMode,
) -> Result<(Var, Var)> {
    let summed = tape.segment_sum(world_cells, lens)?;
    let cells = activate(tape, summed, mode)?;
    Ok((summed, cells))
}

/// Fuses the world cells of several observations of one scene. The result
/// is exactly independent of the order of `observations`.
pub fn fuse<S: Scalar>(
    observations: &[WorldCells<S>],
    mode: FusionMode,
) -> Result<SceneRepresentation<S>> {
    let first = observations
        .first()
        .ok_or_else(|| Error::InvalidArgument("fusion needs at least one observation".into()))?;
    let shape = first.values.shape().to_vec();
    let mut data = Vec::with_capacity(observations.len() * first.values.len());
    for obs in observations {
        if obs.values.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                lhs: shape.clone(),
                rhs: obs.values.shape().to_vec(),
            });
        }
        data.extend_from_slice(obs.values.data());
    }
    let mut stacked_shape = vec![observations.len()];
    stacked_shape.extend_from_slice(&shape);
    let mut tape = Tape::new();
    let stacked = tape.constant(Tensor::new(&stacked_shape, data)?);
    let (summed, cells) = fuse_on_tape(&mut tape, stacked, &[observations.len()], mode)?;
    Ok(SceneRepresentation {
        cells: tape.value(cells).clone().reshape(&shape)?,
        pre_activation: tape.value(summed).clone().reshape(&shape)?,
        mode,
        observation_count: observations.len(),
    })
}

/// One Bayesian log-odds update: `posterior = prior + evidence`, elementwise.
pub fn bayes_update_oracle<S: Scalar>(prior: &[S], evidence: &[S]) -> Result<Vec<S>> {
    if prior.len() != evidence.len() {
        return Err(Error::InvalidArgument(format!(
            "prior has {} entries, evidence {}",
            prior.len(),
            evidence.len()
        )));
    }
    Ok(prior.iter().zip(evidence).map(|(&p, &e)| p + e).collect())
}

/// Weighted geometric mean `prod p_i^{w_i}` of interior probabilities.
pub fn geometric_mean_check(probs: &[f64], weights: &[f64]) -> Result<f64> {
    if probs.len() != weights.len() || probs.is_empty() {
        return Err(Error::InvalidArgument(
            "probabilities and weights must be non-empty and of equal length".into(),
        ));
    }
    if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} is not strictly inside (0, 1); its log-odds diverge"
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "weights must be non-negative and sum to 1 (sum {total})"
        )));
    }
    Ok(probs
        .iter()
        .zip(weights)
        .map(|(&p, &w)| w * p.ln())
        .sum::<f64>()
        .exp())
}

/// `A - B + C` on the summed log-odds, with the mode's activation
/// re-applied.
pub fn scene_arithmetic<S: Scalar>(
    a: &SceneRepresentation<S>,
    b: &SceneRepresentation<S>,
    c: &SceneRepresentation<S>,
) -> Result<SceneRepresentation<S>> {
    if a.mode != b.mode || a.mode != c.mode {
        return Err(Error::InvalidArgument(format!(
            "scene arithmetic across fusion modes {}, {}, {}",
            a.mode, b.mode, c.mode
        )));
    }
    for other in [b, c] {
        if other.pre_activation.shape() != a.pre_activation.shape() {
            return Err(Error::ShapeMismatch {
                op: "scene_arithmetic",
                lhs: a.pre_activation.shape().to_vec(),
                rhs: other.pre_activation.shape().to_vec(),
            });
        }
    }
    let data: Vec<S> = a
        .pre_activation
        .data()
        .iter()
        .zip(b.pre_activation.data())
        .zip(c.pre_activation.data())
        .map(|((&x, &y), &z)| x - y + z)
        .collect();
    let pre_activation = Tensor::new(a.pre_activation.shape(), data)?;
    let cells = match a.mode {
        FusionMode::Ocm => pre_activation.map(ops_sigmoid),
        FusionMode::Sum => pre_activation.clone(),
        FusionMode::Norm => {
            let mut tape = Tape::new();
            let x = tape.constant(pre_activation.clone());
            let y = tape.normalize_last(x)?;
            tape.value(y).clone()
        }
    };
    Ok(SceneRepresentation {
        cells,
        pre_activation,
        mode: a.mode,
        observation_count: a.observation_count,
    })
}
