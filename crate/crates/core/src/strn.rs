//! Pose-conditioned routing network.
//!
//! Three small MLPs map a camera pose to routing weights:
//!
//! * `w2c` turns the pose into one camera-space location code per world cell,
//! * `wce` embeds each location code and emits the cell's frustum activation,
//! * `vce` embeds the normalized grid coordinate of each view cell.
//!
//! The relation between view cell `i` and world cell `k` is the inner
//! product of their embeddings. `wce` and `vce` are applied row-wise, so the
//! same weights serve every cell.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Pose;
use crate::nn::{Activation, Bound, Mlp, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct StrnConfig {
    pub world_cells: usize,
    pub embed_dim: usize,
    /// Width of each camera-space location code.
    pub cam_dim: usize,
    /// View cells per image axis; the product is the view cell count.
    pub view_grid: Vec<usize>,
    pub pose_dim: usize,
    pub w2c_hidden: usize,
    pub wce_hidden: usize,
    pub vce_hidden: usize,
}

impl StrnConfig {
    pub fn view_cells(&self) -> usize {
        self.view_grid.iter().product()
    }

    pub fn view_dim(&self) -> usize {
        self.view_grid.len()
    }
}

impl Default for StrnConfig {
    fn default() -> Self {
        StrnConfig {
            world_cells: 256,
            embed_dim: 16,
            cam_dim: 2,
            view_grid: vec![16],
            pose_dim: 4,
            w2c_hidden: 256,
            wce_hidden: 64,
            vce_hidden: 64,
        }
    }
}

/// Relation matrix and frustum activations for one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingBundle<S> {
    /// `(V, K)`: row `i` holds view cell `i`'s relation to every world cell.
    pub relation: Tensor<S>,
    /// `(K)`, each entry in `(0, 1)`.
    pub frustum_act: Tensor<S>,
    pub pose: Pose,
}

/// Tape handles of the routing weights of `P` poses.
#[derive(Clone, Copy, Debug)]
pub struct RoutingVars {
    /// `(P, K, V)`, world-cell major.
    pub relation: Var,
    /// `(P, K)`.
    pub frustum_act: Var,
}

impl RoutingVars {
    /// Rows `[start, start + len)` of the pose axis.
    pub fn narrow<S: Scalar>(&self, tape: &mut Tape<S>, start: usize, len: usize) -> Result<Self> {
        Ok(RoutingVars {
            relation: tape.narrow(self.relation, 0, start, len)?,
            frustum_act: tape.narrow(self.frustum_act, 0, start, len)?,
        })
    }

    /// Records a bundle as constants.
    pub fn from_bundle<S: Scalar>(tape: &mut Tape<S>, bundle: &RoutingBundle<S>) -> Result<Self> {
        let (v, k) = (bundle.relation.shape()[0], bundle.relation.shape()[1]);
        let relation = bundle.relation.transpose()?.reshape(&[1, k, v])?;
        let act = bundle.frustum_act.clone().reshape(&[1, k])?;
        Ok(RoutingVars {
            relation: tape.constant(relation),
            frustum_act: tape.constant(act),
        })
    }
}

/// Centers of a regular grid normalized into `[-1, 1]` per axis; cell `i`
/// of `n` sits at `(2i + 1) / n - 1`. Rows enumerate the grid with the last
/// axis fastest.
pub fn view_cell_codes<S: Scalar>(grid: &[usize]) -> Result<Tensor<S>> {
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "view grid extents must be positive, got {grid:?}"
        )));
    }
    let dims = grid.len();
    let total: usize = grid.iter().product();
    let mut data = Vec::with_capacity(total * dims);
    for mut flat in 0..total {
        let mut coords = vec![0.0; dims];
        for d in (0..dims).rev() {
            let i = flat % grid[d];
            flat /= grid[d];
            coords[d] = (2.0 * i as f64 + 1.0 - grid[d] as f64) / grid[d] as f64;
        }
        data.extend(coords.into_iter().map(S::lit));
    }
    Tensor::new(&[total, dims], data)
}

/// Layout of the routing network's parameters inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Strn {
    pub config: StrnConfig,
    pub w2c: Mlp,
    pub wce: Mlp,
    pub vce: Mlp,
}

impl Strn {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        config: StrnConfig,
        rng: &mut R,
    ) -> Self {
        let c = &config;
        let w2c = Mlp::new(
            params,
            "strn/w2c",
            &[c.pose_dim, c.w2c_hidden, c.w2c_hidden, c.cam_dim * c.world_cells],
            Activation::Relu,
            rng,
        );
        let wce = Mlp::new(
            params,
            "strn/wce",
            &[c.cam_dim, c.wce_hidden, c.wce_hidden, c.embed_dim + 1],
            Activation::Relu,
            rng,
        );
        let vce = Mlp::new(
            params,
            "strn/vce",
            &[c.view_dim(), c.vce_hidden, c.vce_hidden, c.embed_dim],
            Activation::Relu,
            rng,
        );
        Strn {
            config,
            w2c,
            wce,
            vce,
        }
    }

    /// View-cell embeddings `(rows, E)` for arbitrary coordinates `(rows, d)`.
    pub fn view_embeddings<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        codes: Var,
    ) -> Result<Var> {
        self.vce.forward(tape, bound, codes)
    }

    /// World-cell embeddings `(P * K, E)` and frustum activations `(P, K)`
    /// for a `(P, pose_dim)` batch of pose features.
    pub fn world_embeddings<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        poses: Var,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        let p = tape.shape(poses)[0];
        let codes = self.w2c.forward(tape, bound, poses)?;
        let codes = tape.reshape(codes, &[p * c.world_cells, c.cam_dim])?;
        let out = self.wce.forward(tape, bound, codes)?;
        let embed = tape.narrow(out, 1, 0, c.embed_dim)?;
        let pre_act = tape.narrow(out, 1, c.embed_dim, 1)?;
        let act = tape.sigmoid(pre_act);
        let act = tape.reshape(act, &[p, c.world_cells])?;
        Ok((embed, act))
    }

    /// Routing weights for a batch of poses given precomputed view
    /// embeddings `(V, E)`.
    pub fn forward_batch<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        poses: Var,
        view_embed: Var,
    ) -> Result<RoutingVars> {
        let c = &self.config;
        let p = tape.shape(poses)[0];
        let v = tape.shape(view_embed)[0];
        let (world_embed, act) = self.world_embeddings(tape, bound, poses)?;
        // (P*K, E) x (V, E)^T -> (P*K, V)
        let relation = tape.matmul_t(world_embed, view_embed, false, true)?;
        let relation = tape.reshape(relation, &[p, c.world_cells, v])?;
        Ok(RoutingVars {
            relation,
            frustum_act: act,
        })
    }

    /// Routing weights for `poses`, recording the training-resolution view
    /// grid on the tape.
    pub fn forward_poses<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        poses: &[Pose],
    ) -> Result<RoutingVars> {
        let features = self.pose_features(poses)?;
        let poses = tape.constant(features);
        let codes = tape.constant(view_cell_codes(&self.config.view_grid)?);
        let view_embed = self.view_embeddings(tape, bound, codes)?;
        self.forward_batch(tape, bound, poses, view_embed)
    }

    /// `(P, pose_dim)` feature matrix; rejects non-finite poses.
    pub fn pose_features<S: Scalar>(&self, poses: &[Pose]) -> Result<Tensor<S>> {
        let mut data = Vec::with_capacity(poses.len() * self.config.pose_dim);
        for pose in poses {
            let f = pose.features();
            if !f.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("pose"));
            }
            if f.len() != self.config.pose_dim {
                return Err(Error::InvalidArgument(format!(
                    "pose has {} features, network expects {}",
                    f.len(),
                    self.config.pose_dim
                )));
            }
            data.extend(f.iter().map(|&v| S::lit(v)));
        }
        Tensor::new(&[poses.len(), self.config.pose_dim], data)
    }

    /// Relation matrix and frustum activations for a single pose.
    pub fn strn_forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        pose: &Pose,
    ) -> Result<RoutingBundle<S>> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let routes = self.forward_poses(&mut tape, &bound, std::slice::from_ref(pose))?;
        let (k, v) = (self.config.world_cells, self.config.view_cells());
        let relation = tape
            .value(routes.relation)
            .clone()
            .reshape(&[k, v])?
            .transpose()?;
        let frustum_act = tape.value(routes.frustum_act).clone().reshape(&[k])?;
        Ok(RoutingBundle {
            relation,
            frustum_act,
            pose: *pose,
        })
    }

    /// View embeddings `(n^d, E)` on a regular grid with `resolution` cells
    /// per axis. The embedding network accepts any coordinate in `[-1, 1]`,
    /// so resolutions never seen in training can be queried.
    pub fn interpolated_view_codes<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        resolution: usize,
    ) -> Result<Tensor<S>> {
        let grid = vec![resolution; self.config.view_dim()];
        let codes = view_cell_codes::<S>(&grid)?;
        self.embed_coordinates(params, codes)
    }

    /// View embeddings at explicit coordinates `(rows, d)`.
    pub fn embed_coordinates<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        codes: Tensor<S>,
    ) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let codes = tape.constant(codes);
        let e = self.view_embeddings(&mut tape, &bound, codes)?;
        Ok(tape.value(e).clone())
    }
}
