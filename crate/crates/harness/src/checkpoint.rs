//! STRC checkpoint format.
//!
//! ```text
//! "STRC" | version u32 = 1 | tensor_count u32
//! per tensor: name_len u16 | UTF-8 name | rank u8 | dims u32 x rank
//!             | data f64 x prod(dims), row-major
//! ```
//!
//! Model parameters keep their layout names. The model configuration is
//! stored as `meta/model`, optimizer state under `adam/`.

use std::path::Path;

use cellroute::adam::AdamConfig;
use cellroute::model::{LatentMode, LossKind, ModelConfig};
use cellroute::{AdamState, FusionMode, Model, ParamSet, Tensor};
use cellroute_flatland::write_atomic;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STRC";
pub const VERSION: u32 = 1;

/// Ordered list of named tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::Checkpoint(format!("rank of {name} exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint(format!("extent of {name} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic: expected \"STRC\", found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version: expected {VERSION}, found {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("extent overflow in {name}")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| {
                Error::Checkpoint(format!("extent overflow in {name}"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(TensorFile { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn encode_model_config(c: &ModelConfig) -> Tensor {
    let v = [
        c.world_cells as f64,
        c.embed_dim as f64,
        c.cam_dim as f64,
        c.pose_dim as f64,
        c.w2c_hidden as f64,
        c.wce_hidden as f64,
        c.vce_hidden as f64,
        c.channels as f64,
        c.width as f64,
        c.patch as f64,
        c.latent_dim as f64,
        c.encoder_hidden as f64,
        c.head_hidden as f64,
        c.decoder_hidden as f64,
        c.fusion.id() as f64,
        match c.latent_mode {
            LatentMode::Deterministic => 0.0,
            LatentMode::Variational => 1.0,
        },
        match c.loss {
            LossKind::Mse => 0.0,
            LossKind::Bce => 1.0,
        },
        c.gamma,
    ];
    Tensor::from_f64(&[v.len()], &v).expect("fixed length")
}

fn decode_model_config(t: &Tensor) -> Result<ModelConfig> {
    let v = t.data();
    if v.len() != 18 {
        return Err(Error::Checkpoint(format!(
            "meta/model holds {} values, expected 18",
            v.len()
        )));
    }
    let u = |i: usize| -> Result<usize> {
        let x = v[i];
        if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
            Ok(x as usize)
        } else {
            Err(Error::Checkpoint(format!("meta/model[{i}] = {x} is not a count")))
        }
    };
    let cfg = ModelConfig {
        world_cells: u(0)?,
        embed_dim: u(1)?,
        cam_dim: u(2)?,
        pose_dim: u(3)?,
        w2c_hidden: u(4)?,
        wce_hidden: u(5)?,
        vce_hidden: u(6)?,
        channels: u(7)?,
        width: u(8)?,
        patch: u(9)?,
        latent_dim: u(10)?,
        encoder_hidden: u(11)?,
        head_hidden: u(12)?,
        decoder_hidden: u(13)?,
        fusion: FusionMode::from_id(u(14)? as u32)?,
        latent_mode: match u(15)? {
            0 => LatentMode::Deterministic,
            1 => LatentMode::Variational,
            k => return Err(Error::Checkpoint(format!("unknown latent mode id {k}"))),
        },
        loss: match u(16)? {
            0 => LossKind::Mse,
            1 => LossKind::Bce,
            k => return Err(Error::Checkpoint(format!("unknown loss id {k}"))),
        },
        gamma: v[17],
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Model parameters with their configuration, plus optimizer state if saved.
pub fn checkpoint_file(model: &Model, adam: Option<&AdamState>) -> TensorFile {
    let mut tensors = vec![("meta/model".to_string(), encode_model_config(model.config()))];
    let params = model.params();
    for (name, t) in params.names().iter().zip(params.tensors()) {
        tensors.push((name.clone(), t.clone()));
    }
    if let Some(a) = adam {
        let c = a.config;
        tensors.push((
            "adam/config".into(),
            Tensor::from_f64(&[4], &[c.learning_rate, c.beta1, c.beta2, c.epsilon])
                .expect("fixed length"),
        ));
        tensors.push(("adam/step".into(), Tensor::scalar(a.step as f64)));
        for (name, m) in params.names().iter().zip(&a.first_moment) {
            tensors.push((format!("adam/m/{name}"), m.clone()));
        }
        for (name, v) in params.names().iter().zip(&a.second_moment) {
            tensors.push((format!("adam/v/{name}"), v.clone()));
        }
    }
    TensorFile { tensors }
}

/// Inverse of [`checkpoint_file`].
pub fn restore(file: &TensorFile) -> Result<(Model, Option<AdamState>)> {
    let meta = file
        .get("meta/model")
        .ok_or_else(|| Error::Checkpoint("missing meta/model".into()))?;
    let config = decode_model_config(meta)?;
    let mut params = ParamSet::new();
    let mut adam_parts = Vec::new();
    for (name, t) in &file.tensors {
        if name.starts_with("meta/") {
            continue;
        }
        if name.starts_with("adam/") {
            adam_parts.push((name.as_str(), t));
        } else {
            params.add(name.clone(), t.clone());
        }
    }
    let model = Model::from_params(config, params)?;
    if adam_parts.is_empty() {
        return Ok((model, None));
    }
    let cfg = file
        .get("adam/config")
        .ok_or_else(|| Error::Checkpoint("missing adam/config".into()))?
        .data()
        .to_vec();
    let step = file
        .get("adam/step")
        .ok_or_else(|| Error::Checkpoint("missing adam/step".into()))?
        .data()[0];
    if cfg.len() != 4 || !(step >= 0.0 && step.fract() == 0.0) {
        return Err(Error::Checkpoint("malformed adam/config or adam/step".into()));
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (name, p) in model.params().names().iter().zip(model.params().tensors()) {
        for (prefix, dst) in [("adam/m/", &mut first), ("adam/v/", &mut second)] {
            let key = format!("{prefix}{name}");
            let t = file
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            if t.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "{key}: expected shape {:?}, found {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
            dst.push(t.clone());
        }
    }
    let adam = AdamState {
        config: AdamConfig {
            learning_rate: cfg[0],
            beta1: cfg[1],
            beta2: cfg[2],
            epsilon: cfg[3],
        },
        first_moment: first,
        second_moment: second,
        step: step as u64,
    };
    Ok((model, Some(adam)))
}

pub fn save_checkpoint(model: &Model, adam: Option<&AdamState>, path: &Path) -> Result<()> {
    let bytes = checkpoint_file(model, adam).to_bytes()?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<AdamState>)> {
    let bytes = std::fs::read(path)?;
    restore(&TensorFile::from_bytes(&bytes)?)
}
