//! Message passing between view cells and world cells.
//!
//! View-to-world: every world cell takes a softmax-weighted average of the
//! view cells (softmax over the view axis of the relation), scaled by its
//! frustum activation. World-to-view: every view cell takes a
//! softmax-weighted average (over the world axis) of the activation-masked
//! scene cells. Both directions read the same relation tensor.

use crate::error::{Error, Result};
use crate::model::Pose;
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::strn::{view_cell_codes, RoutingBundle, RoutingVars, Strn};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Feature vector per view cell, `(V, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewCells<S> {
    pub values: Tensor<S>,
    pub grid: Vec<usize>,
}

impl<S: Scalar> ViewCells<S> {
    pub fn new(values: Tensor<S>, grid: Vec<usize>) -> Result<Self> {
        let v: usize = grid.iter().product();
        if values.rank() != 2 || values.shape()[0] != v {
            return Err(Error::ShapeMismatch {
                op: "view_cells",
                lhs: values.shape().to_vec(),
                rhs: grid,
            });
        }
        Ok(ViewCells { values, grid })
    }

    pub fn count(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Feature vector per world cell, `(K, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldCells<S> {
    pub values: Tensor<S>,
}

/// `(P, V, c)` view cells to `(P, K, c)` world cells.
pub fn view_to_world<S: Scalar>(
    tape: &mut Tape<S>,
    view_cells: Var,
    routes: &RoutingVars,
) -> Result<Var> {
    check_extents(tape, view_cells, routes, 2)?;
    let dist = tape.softmax(routes.relation, 2)?;
    let gathered = tape.matmul(dist, view_cells)?;
    let act = expand_act(tape, routes)?;
    tape.mul(gathered, act)
}

/// `(P, K, c)` scene cells to `(P, V, c)` query view cells.
pub fn world_to_view<S: Scalar>(
    tape: &mut Tape<S>,
    scene_cells: Var,
    routes: &RoutingVars,
) -> Result<Var> {
    check_extents(tape, scene_cells, routes, 1)?;
    let dist = tape.softmax(routes.relation, 1)?;
    let act = expand_act(tape, routes)?;
    let masked = tape.mul(scene_cells, act)?;
    tape.matmul_t(dist, masked, true, false)
}

fn expand_act<S: Scalar>(tape: &mut Tape<S>, routes: &RoutingVars) -> Result<Var> {
    let s = tape.shape(routes.frustum_act).to_vec();
    tape.reshape(routes.frustum_act, &[s[0], s[1], 1])
}

/// `axis` is the relation axis that must match the cells' middle extent.
fn check_extents<S: Scalar>(
    tape: &Tape<S>,
    cells: Var,
    routes: &RoutingVars,
    axis: usize,
) -> Result<()> {
    let cs = tape.shape(cells);
    let rs = tape.shape(routes.relation);
    if cs.len() != 3 || rs.len() != 3 || cs[0] != rs[0] || cs[1] != rs[axis] {
        return Err(Error::ShapeMismatch {
            op: "routing",
            lhs: rs.to_vec(),
            rhs: cs.to_vec(),
        });
    }
    Ok(())
}

/// View-to-world routing of one observation under a fixed bundle.
pub fn route_view_to_world<S: Scalar>(
    cells: &ViewCells<S>,
    bundle: &RoutingBundle<S>,
) -> Result<WorldCells<S>> {
    let (v, c) = (cells.values.shape()[0], cells.values.shape()[1]);
    let mut tape = Tape::new();
    let routes = RoutingVars::from_bundle(&mut tape, bundle)?;
    let vc = tape.constant(cells.values.clone().reshape(&[1, v, c])?);
    let wc = view_to_world(&mut tape, vc, &routes)?;
    let k = tape.shape(wc)[1];
    Ok(WorldCells {
        values: tape.value(wc).clone().reshape(&[k, c])?,
    })
}

/// World-to-view routing of `(K, c)` scene cells into a query view.
pub fn route_world_to_view<S: Scalar>(
    scene_cells: &Tensor<S>,
    bundle: &RoutingBundle<S>,
    grid: &[usize],
) -> Result<ViewCells<S>> {
    if scene_cells.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "routing",
            lhs: bundle.relation.shape().to_vec(),
            rhs: scene_cells.shape().to_vec(),
        });
    }
    let (k, c) = (scene_cells.shape()[0], scene_cells.shape()[1]);
    let mut tape = Tape::new();
    let routes = RoutingVars::from_bundle(&mut tape, bundle)?;
    let sc = tape.constant(scene_cells.clone().reshape(&[1, k, c])?);
    let vq = world_to_view(&mut tape, sc, &routes)?;
    let v = tape.shape(vq)[1];
    ViewCells::new(tape.value(vq).clone().reshape(&[v, c])?, grid.to_vec())
}

/// Result of sending a scalar signal through both routing directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Spread {
    /// Mass arriving at each query view cell, unnormalized.
    pub raw: Vec<f64>,
    /// `raw` rescaled to sum to one (all zeros when `raw` has no mass).
    pub normalized: Vec<f64>,
}

/// Routes a per-view-cell signal observed at `pose_a` into world cells and
/// back out into the view cells of `pose_b`.
pub fn propagate_signal<S: Scalar>(
    signal: &[f64],
    pose_a: &Pose,
    pose_b: &Pose,
    strn: &Strn,
    params: &ParamSet<S>,
) -> Result<Spread> {
    let a = strn.strn_forward(params, pose_a)?;
    let b = strn.strn_forward(params, pose_b)?;
    propagate_with_bundles(signal, &a, &b, &strn.config.view_grid)
}

/// [`propagate_signal`] with precomputed bundles.
pub fn propagate_with_bundles<S: Scalar>(
    signal: &[f64],
    bundle_a: &RoutingBundle<S>,
    bundle_b: &RoutingBundle<S>,
    grid: &[usize],
) -> Result<Spread> {
    if signal.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "signal must be finite and non-negative".into(),
        ));
    }
    let values = Tensor::new(&[signal.len(), 1], signal.iter().map(|&s| S::lit(s)).collect())?;
    let cells = ViewCells::new(values, grid.to_vec())?;
    let world = route_view_to_world(&cells, bundle_a)?;
    let query = route_world_to_view(&world.values, bundle_b, grid)?;
    let raw = query.values.to_f64_vec();
    let total: f64 = raw.iter().sum();
    let normalized = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(Spread { raw, normalized })
}

/// Bump centered at view coordinate `center` over a 1D grid of
/// `view_cells` cells. `sigma == 0` gives a one-hot at the nearest cell;
/// otherwise a Gaussian over cell centers normalized to unit sum.
pub fn gaussian_signal(center: f64, sigma: f64, view_cells: usize) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&center) {
        return Err(Error::InvalidArgument(format!(
            "signal center {center} outside [-1, 1]"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be >= 0")));
    }
    let centers = view_cell_codes::<f64>(&[view_cells])?.into_data();
    if sigma == 0.0 {
        let nearest = ((center + 1.0) / 2.0 * view_cells as f64).floor() as usize;
        let nearest = nearest.min(view_cells - 1);
        let mut out = vec![0.0; view_cells];
        out[nearest] = 1.0;
        return Ok(out);
    }
    let raw: Vec<f64> = centers
        .iter()
        .map(|&x| (-(x - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return gaussian_signal(center, 0.0, view_cells);
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}
