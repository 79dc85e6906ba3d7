//! End-to-end scene model: patch encoder, routing into world cells, fusion,
//! routing into the query view, and a latent-conditioned decoder.
//!
//! Every forward pass is batched over episodes. The single-sample methods
//! ([`Model::encode`], [`Model::represent`], [`Model::render`],
//! [`Model::loss`]) are thin wrappers that run a batch of one.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::fusion::{fuse_on_tape, FusionMode, SceneRepresentation};
use crate::nn::{Activation, Bound, Mlp, ParamSet};
use crate::routing::{view_to_world, world_to_view, ViewCells};
use crate::scalar::Scalar;
use crate::strn::{Strn, StrnConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Colour channels per pixel.
pub const IMAGE_CHANNELS: usize = 3;

/// Planar camera pose: position and unit heading vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub cos: f64,
    pub sin: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            cos: heading.cos(),
            sin: heading.sin(),
        }
    }

    /// Builds a pose from raw components, rescaling `(cos, sin)` to unit
    /// length.
    pub fn from_components(x: f64, y: f64, cos: f64, sin: f64) -> Result<Self> {
        let norm = cos.hypot(sin);
        if !(x.is_finite() && y.is_finite() && norm.is_finite()) || norm == 0.0 {
            return invalid(format!(
                "pose ({x}, {y}, {cos}, {sin}) is not finite or has no heading"
            ));
        }
        Ok(Pose {
            x,
            y,
            cos: cos / norm,
            sin: sin / norm,
        })
    }

    pub fn heading(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    /// `[x, y, cos, sin]`.
    pub fn features(&self) -> [f64; 4] {
        [self.x, self.y, self.cos, self.sin]
    }
}

/// One-row RGB image, pixel-major with channels innermost, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() != width * IMAGE_CHANNELS {
            return Err(Error::DataLength {
                shape: vec![width, IMAGE_CHANNELS],
                expected: width * IMAGE_CHANNELS,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {v} outside [0, 1]"));
        }
        Ok(Image { width, data })
    }

    pub fn filled(width: usize, rgb: [f64; 3]) -> Result<Self> {
        Image::new(width, rgb.iter().copied().cycle().take(width * 3).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        let p = &self.data[i * 3..i * 3 + 3];
        [p[0], p[1], p[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentRole {
    Prior,
    Posterior,
}

/// Diagonal Gaussian over the latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub role: LatentRole,
}

impl LatentParams {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }
}

/// `KL(post || prior)` summed over dimensions.
pub fn kl_gaussian(post: &LatentParams, prior: &LatentParams) -> Result<f64> {
    if post.mu.len() != prior.mu.len()
        || post.log_sigma.len() != post.mu.len()
        || prior.log_sigma.len() != prior.mu.len()
    {
        return invalid(format!(
            "latent lengths differ: {} vs {}",
            post.mu.len(),
            prior.mu.len()
        ));
    }
    let mut total = 0.0;
    for i in 0..post.mu.len() {
        let (me, le) = (post.mu[i], post.log_sigma[i]);
        let (mg, lg) = (prior.mu[i], prior.log_sigma[i]);
        total += lg - le + ((2.0 * le).exp() + (me - mg).powi(2)) / (2.0 * (2.0 * lg).exp()) - 0.5;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    /// Per-pixel binary cross-entropy on the decoder logits (without the
    /// target-entropy constant).
    Bce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            other => invalid(format!("unknown loss '{other}' (expected mse or bce)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// `z` is the prior mean; no regularizer.
    Deterministic,
    Variational,
}

impl fmt::Display for LatentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentMode::Deterministic => "deterministic",
            LatentMode::Variational => "variational",
        })
    }
}

impl FromStr for LatentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" => Ok(LatentMode::Deterministic),
            "variational" => Ok(LatentMode::Variational),
            other => invalid(format!(
                "unknown latent mode '{other}' (expected deterministic or variational)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub world_cells: usize,
    pub embed_dim: usize,
    pub cam_dim: usize,
    pub pose_dim: usize,
    pub w2c_hidden: usize,
    pub wce_hidden: usize,
    pub vce_hidden: usize,
    /// Channels per view/world cell.
    pub channels: usize,
    pub width: usize,
    pub patch: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub head_hidden: usize,
    pub decoder_hidden: usize,
    pub fusion: FusionMode,
    pub latent_mode: LatentMode,
    pub loss: LossKind,
    /// Weight of the KL term.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            world_cells: 256,
            embed_dim: 16,
            cam_dim: 2,
            pose_dim: 4,
            w2c_hidden: 256,
            wce_hidden: 64,
            vce_hidden: 64,
            channels: 32,
            width: 64,
            patch: 4,
            latent_dim: 16,
            encoder_hidden: 64,
            head_hidden: 64,
            decoder_hidden: 128,
            fusion: FusionMode::Ocm,
            latent_mode: LatentMode::Deterministic,
            loss: LossKind::Mse,
            gamma: 0.001,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("world_cells", self.world_cells),
            ("embed_dim", self.embed_dim),
            ("cam_dim", self.cam_dim),
            ("pose_dim", self.pose_dim),
            ("w2c_hidden", self.w2c_hidden),
            ("wce_hidden", self.wce_hidden),
            ("vce_hidden", self.vce_hidden),
            ("channels", self.channels),
            ("width", self.width),
            ("patch", self.patch),
            ("latent_dim", self.latent_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("head_hidden", self.head_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return invalid(format!("{name} must be positive"));
        }
        if self.width % self.patch != 0 {
            return invalid(format!(
                "width {} is not divisible by patch size {}",
                self.width, self.patch
            ));
        }
        if self.pose_dim != 4 {
            return invalid(format!(
                "pose_dim must be 4 (x, y, cos, sin), got {}",
                self.pose_dim
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma {} must be finite and >= 0", self.gamma));
        }
        Ok(())
    }

    pub fn view_cells(&self) -> usize {
        self.width / self.patch
    }

    pub fn patch_len(&self) -> usize {
        self.patch * IMAGE_CHANNELS
    }

    pub fn strn_config(&self) -> StrnConfig {
        StrnConfig {
            world_cells: self.world_cells,
            embed_dim: self.embed_dim,
            cam_dim: self.cam_dim,
            view_grid: vec![self.view_cells()],
            pose_dim: self.pose_dim,
            w2c_hidden: self.w2c_hidden,
            wce_hidden: self.wce_hidden,
            vce_hidden: self.vce_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Image,
    pub pose: Pose,
}

/// Observations of one scene plus the view to predict.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub observations: Vec<&'a Observation>,
    pub query: Pose,
    pub target: Option<&'a Image>,
}

/// How the latent code is chosen when rendering.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampling {
    /// Prior mean (evaluation, and always in deterministic mode).
    PriorMean,
    /// Reparameterized sample `mu + sigma * eps` with the given standard
    /// normals, `batch * latent_dim` of them. Uses the posterior when a
    /// target is available.
    Noise(Vec<f64>),
}

impl Sampling {
    pub fn seeded(seed: u64, count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sampling::Noise((0..count).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// Tape handles produced by [`Model::render_vars`].
#[derive(Clone, Copy, Debug)]
pub struct RenderVars {
    /// `(B, W * 3)` pre-sigmoid outputs.
    pub logits: Var,
    /// `(B, W * 3)` pixel values.
    pub images: Var,
    pub prior_mu: Var,
    pub prior_log_sigma: Var,
    pub posterior: Option<(Var, Var)>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub reg: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub rec: f64,
    pub reg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub prior: LatentParams,
    pub posterior: Option<LatentParams>,
}

/// Parameter layout plus values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    params: ParamSet<S>,
    strn: Strn,
    encoder: Mlp,
    prior_head: Mlp,
    posterior_head: Mlp,
    decoder: Mlp,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = &config;
        let encoder = Mlp::new(
            &mut params,
            "encoder",
            &[c.patch_len(), c.encoder_hidden, c.channels],
            Activation::Relu,
            &mut rng,
        );
        let strn = Strn::new(&mut params, c.strn_config(), &mut rng);
        let prior_head = Mlp::new(
            &mut params,
            "prior",
            &[c.channels, c.head_hidden, 2 * c.latent_dim],
            Activation::Relu,
            &mut rng,
        );
        let posterior_head = Mlp::new(
            &mut params,
            "posterior",
            &[2 * c.channels, c.head_hidden, 2 * c.latent_dim],
            Activation::Relu,
            &mut rng,
        );
        let decoder = Mlp::new(
            &mut params,
            "decoder",
            &[
                c.channels + c.latent_dim,
                c.decoder_hidden,
                c.decoder_hidden,
                c.patch_len(),
            ],
            Activation::Relu,
            &mut rng,
        );
        Ok(Model {
            config,
            params,
            strn,
            encoder,
            prior_head,
            posterior_head,
            decoder,
        })
    }

    /// Rebuilds a model around stored parameter values, checking that names
    /// and shapes match the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.params.len() {
            return invalid(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            ));
        }
        for id in model.params.ids() {
            let (want, got) = (model.params.name(id), params.name(id));
            if want != got {
                return invalid(format!("parameter {}: expected '{want}', found '{got}'", id.0));
            }
            let (ws, gs) = (model.params.get(id).shape(), params.get(id).shape());
            if ws != gs {
                return Err(Error::ShapeMismatch {
                    op: "from_params",
                    lhs: ws.to_vec(),
                    rhs: gs.to_vec(),
                });
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn strn(&self) -> &Strn {
        &self.strn
    }

    /// Parameter groups by network, in layout order.
    pub fn groups(&self) -> Vec<(&'static str, Vec<crate::nn::ParamId>)> {
        vec![
            ("encoder", self.encoder.param_ids()),
            ("strn/w2c", self.strn.w2c.param_ids()),
            ("strn/wce", self.strn.wce.param_ids()),
            ("strn/vce", self.strn.vce.param_ids()),
            ("prior", self.prior_head.param_ids()),
            ("posterior", self.posterior_head.param_ids()),
            ("decoder", self.decoder.param_ids()),
        ]
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.width() != self.config.width {
            return invalid(format!(
                "image width {} does not match model width {}",
                image.width(),
                self.config.width
            ));
        }
        Ok(())
    }

    /// `(n, V, c)` view cells of `n` images.
    pub fn encode_vars(&self, tape: &mut Tape<S>, bound: &Bound, images: &[&Image]) -> Result<Var> {
        let c = &self.config;
        let mut data = Vec::with_capacity(images.len() * c.width * IMAGE_CHANNELS);
        for image in images {
            self.check_image(image)?;
            data.extend(image.data().iter().map(|&v| S::lit(v)));
        }
        let v = c.view_cells();
        let patches = tape.constant(Tensor::new(&[images.len() * v, c.patch_len()], data)?);
        let cells = self.encoder.forward(tape, bound, patches)?;
        tape.reshape(cells, &[images.len(), v, c.channels])
    }

    /// Fuses observation groups into `(len(lens), K, c)` scenes. Returns
    /// the summed world cells and the activated scene cells.
    pub fn represent_vars(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        observations: &[&Observation],
        lens: &[usize],
    ) -> Result<(Var, Var)> {
        if lens.contains(&0) || lens.iter().sum::<usize>() != observations.len() {
            return invalid("every scene needs at least one observation");
        }
        let images: Vec<&Image> = observations.iter().map(|o| &o.image).collect();
        let poses: Vec<Pose> = observations.iter().map(|o| o.pose).collect();
        let vc = self.encode_vars(tape, bound, &images)?;
        let routes = self.strn.forward_poses(tape, bound, &poses)?;
        let wc = view_to_world(tape, vc, &routes)?;
        fuse_on_tape(tape, wc, lens, self.config.fusion)
    }

    /// Renders `(B, K, c)` scene cells at `B` query poses.
    pub fn render_vars(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        scene_cells: Var,
        queries: &[Pose],
        targets: Option<&[&Image]>,
        sampling: &Sampling,
    ) -> Result<RenderVars> {
        let c = &self.config;
        let b = queries.len();
        let shape = tape.shape(scene_cells).to_vec();
        if shape != [b, c.world_cells, c.channels] {
            return Err(Error::ShapeMismatch {
                op: "render",
                lhs: vec![b, c.world_cells, c.channels],
                rhs: shape,
            });
        }
        let z_dim = c.latent_dim;
        let v = c.view_cells();
        let routes = self.strn.forward_poses(tape, bound, queries)?;
        let vq = world_to_view(tape, scene_cells, &routes)?;
        let pooled = tape.mean(vq, 1)?;
        let prior = self.prior_head.forward(tape, bound, pooled)?;
        let prior_mu = tape.narrow(prior, 1, 0, z_dim)?;
        let prior_ls = tape.narrow(prior, 1, z_dim, z_dim)?;

        let variational = c.latent_mode == LatentMode::Variational;
        let posterior = match targets {
            Some(t) if variational => {
                if t.len() != b {
                    return invalid(format!("{} targets for {b} queries", t.len()));
                }
                let enc = self.encode_vars(tape, bound, t)?;
                let enc = tape.mean(enc, 1)?;
                let joint = tape.concat(&[pooled, enc], 1)?;
                let out = self.posterior_head.forward(tape, bound, joint)?;
                Some((tape.narrow(out, 1, 0, z_dim)?, tape.narrow(out, 1, z_dim, z_dim)?))
            }
            _ => None,
        };

        let z = match sampling {
            Sampling::Noise(eps) if variational => {
                if eps.len() != b * z_dim {
                    return invalid(format!(
                        "expected {} latent noise values, got {}",
                        b * z_dim,
                        eps.len()
                    ));
                }
                let (mu, ls) = posterior.unwrap_or((prior_mu, prior_ls));
                let eps = tape.constant(Tensor::new(
                    &[b, z_dim],
                    eps.iter().map(|&e| S::lit(e)).collect(),
                )?);
                let sigma = tape.exp(ls);
                let noise = tape.mul(sigma, eps)?;
                tape.add(mu, noise)?
            }
            _ => prior_mu,
        };
        let z = tape.reshape(z, &[b, 1, z_dim])?;
        let z = tape.broadcast_to(z, &[b, v, z_dim])?;
        let joint = tape.concat(&[vq, z], 2)?;
        let joint = tape.reshape(joint, &[b * v, c.channels + z_dim])?;
        let out = self.decoder.forward(tape, bound, joint)?;
        let logits = tape.reshape(out, &[b, c.width * IMAGE_CHANNELS])?;
        let images = tape.sigmoid(logits);
        Ok(RenderVars {
            logits,
            images,
            prior_mu,
            prior_log_sigma: prior_ls,
            posterior,
        })
    }

    /// Batch loss `rec + gamma * reg`, averaged over episodes.
    pub fn loss_vars(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        episodes: &[Episode<'_>],
        sampling: &Sampling,
    ) -> Result<LossVars> {
        if episodes.is_empty() {
            return invalid("loss needs at least one episode");
        }
        let mut targets = Vec::with_capacity(episodes.len());
        for e in episodes {
            targets.push(
                e.target
                    .ok_or_else(|| Error::InvalidArgument("loss needs a target image".into()))?,
            );
        }
        let render = self.forward_episodes(tape, bound, episodes, Some(&targets), sampling)?;
        let c = &self.config;
        let mut t = Vec::with_capacity(targets.len() * c.width * IMAGE_CHANNELS);
        for image in &targets {
            self.check_image(image)?;
            if !image.data().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("target image"));
            }
            t.extend(image.data().iter().map(|&v| S::lit(v)));
        }
        let t = tape.constant(Tensor::new(&[targets.len(), c.width * IMAGE_CHANNELS], t)?);
        let rec = match c.loss {
            LossKind::Mse => {
                let d = tape.sub(render.images, t)?;
                let sq = tape.square(d);
                tape.mean_all(sq)
            }
            LossKind::Bce => {
                let sp = tape.softplus(render.logits);
                let tl = tape.mul(t, render.logits)?;
                let per = tape.sub(sp, tl)?;
                tape.mean_all(per)
            }
        };
        let reg = match render.posterior {
            Some((mu_e, ls_e)) => {
                let per_dim =
                    kl_vars(tape, mu_e, ls_e, render.prior_mu, render.prior_log_sigma)?;
                let total = tape.sum_all(per_dim);
                tape.scale(total, S::lit(1.0 / episodes.len() as f64))
            }
            None => tape.constant(Tensor::scalar(S::zero())),
        };
        let weighted = tape.scale(reg, S::lit(c.gamma));
        let total = tape.add(rec, weighted)?;
        Ok(LossVars { total, rec, reg })
    }

    fn forward_episodes(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        episodes: &[Episode<'_>],
        targets: Option<&[&Image]>,
        sampling: &Sampling,
    ) -> Result<RenderVars> {
        let mut observations = Vec::new();
        let mut lens = Vec::with_capacity(episodes.len());
        let mut queries = Vec::with_capacity(episodes.len());
        for e in episodes {
            observations.extend(e.observations.iter().copied());
            lens.push(e.observations.len());
            queries.push(e.query);
        }
        let (_, cells) = self.represent_vars(tape, bound, &observations, &lens)?;
        self.render_vars(tape, bound, cells, &queries, targets, sampling)
    }

    /// Loss values and the gradient of every parameter tensor.
    pub fn loss_and_grads(
        &self,
        episodes: &[Episode<'_>],
        sampling: &Sampling,
    ) -> Result<(LossValues, Vec<Tensor<S>>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let vars = self.loss_vars(&mut tape, &bound, episodes, sampling)?;
        let values = loss_values(&tape, &vars)?;
        let mut grads = tape.backward(vars.total)?;
        Ok((values, bound.0.iter().map(|&v| grads.take(v)).collect()))
    }

    /// Renders every episode's query view with the prior mean.
    pub fn predict(&self, episodes: &[Episode<'_>]) -> Result<Vec<Image>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let render = self.forward_episodes(&mut tape, &bound, episodes, None, &Sampling::PriorMean)?;
        self.images_from(&tape, render.images)
    }

    fn images_from(&self, tape: &Tape<S>, images: Var) -> Result<Vec<Image>> {
        let row = self.config.width * IMAGE_CHANNELS;
        tape.value(images)
            .data()
            .chunks(row)
            .map(|px| Image::new(self.config.width, px.iter().map(|v| v.as_f64()).collect()))
            .collect()
    }

    pub fn encode(&self, image: &Image) -> Result<ViewCells<S>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let vc = self.encode_vars(&mut tape, &bound, &[image])?;
        let v = self.config.view_cells();
        ViewCells::new(
            tape.value(vc).clone().reshape(&[v, self.config.channels])?,
            vec![v],
        )
    }

    pub fn represent(&self, observations: &[Observation]) -> Result<SceneRepresentation<S>> {
        if observations.is_empty() {
            return invalid("represent needs at least one observation");
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let refs: Vec<&Observation> = observations.iter().collect();
        let (summed, cells) = self.represent_vars(&mut tape, &bound, &refs, &[refs.len()])?;
        let shape = [self.config.world_cells, self.config.channels];
        Ok(SceneRepresentation {
            cells: tape.value(cells).clone().reshape(&shape)?,
            pre_activation: tape.value(summed).clone().reshape(&shape)?,
            mode: self.config.fusion,
            observation_count: observations.len(),
        })
    }

    pub fn render(
        &self,
        rep: &SceneRepresentation<S>,
        query: &Pose,
        target: Option<&Image>,
        sampling: &Sampling,
    ) -> Result<Rendered> {
        let c = &self.config;
        if rep.cells.shape() != [c.world_cells, c.channels] {
            return Err(Error::ShapeMismatch {
                op: "render",
                lhs: vec![c.world_cells, c.channels],
                rhs: rep.cells.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let cells = tape.constant(rep.cells.clone().reshape(&[1, c.world_cells, c.channels])?);
        let targets: Option<Vec<&Image>> = target.map(|t| vec![t]);
        let r = self.render_vars(
            &mut tape,
            &bound,
            cells,
            std::slice::from_ref(query),
            targets.as_deref(),
            sampling,
        )?;
        let latent = |mu: Var, ls: Var, role| LatentParams {
            mu: tape.value(mu).to_f64_vec(),
            log_sigma: tape.value(ls).to_f64_vec(),
            role,
        };
        Ok(Rendered {
            image: self.images_from(&tape, r.images)?.remove(0),
            prior: latent(r.prior_mu, r.prior_log_sigma, LatentRole::Prior),
            posterior: r.posterior.map(|(m, l)| latent(m, l, LatentRole::Posterior)),
        })
    }

    pub fn loss(
        &self,
        observations: &[Observation],
        query: &Pose,
        target: &Image,
        sampling: &Sampling,
    ) -> Result<LossValues> {
        let episode = Episode {
            observations: observations.iter().collect(),
            query: *query,
            target: Some(target),
        };
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let vars = self.loss_vars(&mut tape, &bound, &[episode], sampling)?;
        loss_values(&tape, &vars)
    }
}

fn loss_values<S: Scalar>(tape: &Tape<S>, vars: &LossVars) -> Result<LossValues> {
    Ok(LossValues {
        total: tape.value(vars.total).item()?.as_f64(),
        rec: tape.value(vars.rec).item()?.as_f64(),
        reg: tape.value(vars.reg).item()?.as_f64(),
    })
}

/// Per-dimension diagonal-Gaussian KL on the tape.
pub fn kl_vars<S: Scalar>(
    tape: &mut Tape<S>,
    mu_e: Var,
    ls_e: Var,
    mu_g: Var,
    ls_g: Var,
) -> Result<Var> {
    let d = tape.sub(mu_e, mu_g)?;
    let d2 = tape.square(d);
    let two_le = tape.scale(ls_e, S::lit(2.0));
    let var_e = tape.exp(two_le);
    let num = tape.add(var_e, d2)?;
    let two_lg = tape.scale(ls_g, S::lit(2.0));
    let var_g = tape.exp(two_lg);
    let den = tape.scale(var_g, S::lit(2.0));
    let ratio = tape.div(num, den)?;
    let log_ratio = tape.sub(ls_g, ls_e)?;
    let kl = tape.add(log_ratio, ratio)?;
    Ok(tape.shift(kl, S::lit(-0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            world_cells: 8,
            embed_dim: 4,
            w2c_hidden: 8,
            wce_hidden: 6,
            vce_hidden: 6,
            channels: 5,
            width: 8,
            patch: 4,
            latent_dim: 3,
            encoder_hidden: 6,
            head_hidden: 6,
            decoder_hidden: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn kl_closed_forms() {
        let lp = |mu: f64, s: f64, role| LatentParams {
            mu: vec![mu],
            log_sigma: vec![s.ln()],
            role,
        };
        let k = kl_gaussian(&lp(1.0, 1.0, LatentRole::Posterior), &lp(0.0, 1.0, LatentRole::Prior));
        assert!((k.unwrap() - 0.5).abs() < 1e-15);
        let k = kl_gaussian(&lp(0.3, 2.0, LatentRole::Posterior), &lp(0.3, 1.0, LatentRole::Prior));
        assert!((k.unwrap() - (1.5 - 2f64.ln())).abs() < 1e-14);
        let same = lp(0.7, 0.4, LatentRole::Prior);
        assert!(kl_gaussian(&same, &same).unwrap().abs() < 1e-15);
    }

    #[test]
    fn config_rejects_indivisible_width() {
        let cfg = ModelConfig {
            width: 10,
            ..small_config()
        };
        assert!(Model::<f64>::new(cfg, 0).is_err());
    }

    #[test]
    fn from_params_checks_layout() {
        let m = Model::<f64>::new(small_config(), 3).unwrap();
        let again = Model::from_params(small_config(), m.params().clone()).unwrap();
        assert_eq!(again, m);
        let other = ModelConfig {
            channels: 6,
            ..small_config()
        };
        assert!(Model::from_params(other, m.params().clone()).is_err());
    }

    #[test]
    fn pose_components_are_renormalized() {
        let p = Pose::from_components(0.1, 0.2, 3.0, 4.0).unwrap();
        assert!((p.cos - 0.6).abs() < 1e-15 && (p.sin - 0.8).abs() < 1e-15);
        assert!(Pose::from_components(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Pose::from_components(f64::NAN, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, vec![0.5; 6]).is_ok());
        assert!(Image::new(2, vec![0.5; 5]).is_err());
        assert!(Image::new(1, vec![0.5, 1.5, 0.0]).is_err());
    }
}
