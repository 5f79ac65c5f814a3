//! Model assembly, the Adam optimiser and checkpoint files.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "PXW2"            magic
//! u32               format version
//! u32, bytes        config text (UTF-8, key=value lines)
//! u32               parameter block count
//! per block:
//!   u32, bytes      name
//!   u32             rank
//!   u64 × rank      extents
//!   f64 × product   values
//! ```

use std::path::Path;

use crate::config::{AdamConfig, PipelineConfig};
use crate::dsp::StftConfig;
use crate::embeddings::EmbeddingContext;
use crate::error::{Error, Result};
use crate::formats::write_bytes;
use crate::losses::ContainerKind;
use crate::networks::{seeded_rng, Bound, CouplingNet, ParamSet, UNet, UNetConfig};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PXW2";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Networks, embedding geometry and every trainable value of one
/// configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub ctx: EmbeddingContext,
    pub stft: StftConfig,
    /// One hiding net, or magnitude and phase nets for dual containers.
    pub hide: Vec<UNet>,
    pub reveal: Vec<UNet>,
    pub coupling: Option<CouplingNet>,
    pub params: ParamSet,
}

fn enc_prefix(branch: usize) -> String {
    format!("embed{branch}.enc")
}

fn dec_prefix(branch: usize) -> String {
    format!("embed{branch}.dec")
}

impl ModelBundle {
    /// Architecture without parameter values.
    fn skeleton(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let ctx = config.embedding()?;
        let stft = config.stft_config()?;
        let branches = if config.container() == ContainerKind::Dual { 2 } else { 1 };
        let net = |in_depth: usize, out_depth: usize| UNetConfig {
            depth: config.unet_depth,
            base_channels: config.base_channels,
            kernel: config.kernel,
            in_depth,
            out_depth,
        };
        let (hide_cfg, reveal_cfg) = (
            net(ctx.secret_shape()[0], ctx.watermark_shape()[0]),
            net(ctx.reveal_input_shape()[0], ctx.reveal_output_shape()[0]),
        );
        let hide = (0..branches)
            .map(|i| UNet::new(hide_cfg, format!("hide{i}")))
            .collect::<Result<_>>()?;
        let reveal = (0..branches)
            .map(|i| UNet::new(reveal_cfg, format!("reveal{i}")))
            .collect::<Result<_>>()?;
        Ok(ModelBundle {
            config: config.clone(),
            ctx,
            stft,
            hide,
            reveal,
            coupling: (branches == 2).then(|| CouplingNet::new("couple")),
            params: ParamSet::new(),
        })
    }

    /// Freshly initialised model, seeded by `config.seed`.
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        let mut m = ModelBundle::skeleton(config)?;
        let mut rng = seeded_rng(config.seed);
        for net in m.hide.iter().chain(&m.reveal) {
            net.init(&mut m.params, &mut rng)?;
        }
        m.init_extras()?;
        Ok(m)
    }

    /// Model whose network weights are all zero.
    pub fn zeroed(config: &PipelineConfig) -> Result<Self> {
        let mut m = ModelBundle::skeleton(config)?;
        for net in m.hide.iter().chain(&m.reveal) {
            net.init_zero(&mut m.params)?;
        }
        m.init_extras()?;
        Ok(m)
    }

    fn init_extras(&mut self) -> Result<()> {
        for b in 0..self.hide.len() {
            for i in 0..self.ctx.enc_weight_count() {
                self.params.insert(format!("{}{i}", enc_prefix(b)), Tensor::scalar(1.0))?;
            }
            for i in 0..self.ctx.dec_weight_count() {
                self.params.insert(format!("{}{i}", dec_prefix(b)), Tensor::scalar(1.0))?;
            }
        }
        if let Some(c) = &self.coupling {
            c.init(&mut self.params)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Replica weights of one branch (0 for single containers).
    pub fn enc_weights<'t>(&self, p: &Bound<'t>, branch: usize) -> Result<Vec<crate::autodiff::Var<'t>>> {
        p.sequence(&enc_prefix(branch), self.ctx.enc_weight_count())
    }

    pub fn dec_weights<'t>(&self, p: &Bound<'t>, branch: usize) -> Result<Vec<crate::autodiff::Var<'t>>> {
        p.sequence(&dec_prefix(branch), self.ctx.dec_weight_count())
    }

    /// Sets the coupling weights `(w1, w2, b)`.
    pub fn set_coupling(&mut self, v: [f64; 3]) -> Result<()> {
        let c = self
            .coupling
            .as_ref()
            .ok_or_else(|| Error::usage("model has no coupling network"))?;
        for (name, value) in ["w1", "w2", "b"].iter().zip(v) {
            let i = self
                .params
                .position(&format!("{}.{name}", c.prefix))
                .ok_or_else(|| Error::config("coupling parameter missing"))?;
            self.params.set_data(i, vec![value])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fail(0, format!("bad magic {magic:?}, expected \"PXW2\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(
                4,
                format!("unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"),
            ));
        }
        let text_len = r.u32("config length")? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(text_len, "config text")?)
            .map_err(|e| r.fail(text_at, format!("config text is not UTF-8: {e}")))?;
        let config = PipelineConfig::from_text(text)
            .map_err(|e| r.fail(text_at, format!("invalid config: {e}")))?;
        let mut model = ModelBundle::zeroed(&config)?;
        let count = r.u32("parameter count")? as usize;
        if count != model.params.len() {
            return Err(r.fail(
                r.pos - 4,
                format!("{count} parameter blocks, architecture has {}", model.params.len()),
            ));
        }
        for _ in 0..count {
            let block_at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| r.fail(block_at, "parameter name is not UTF-8"))?
                .to_string();
            let i = model
                .params
                .position(&name)
                .ok_or_else(|| r.fail(block_at, format!("unexpected parameter '{name}'")))?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("extent")? as usize);
            }
            if shape != model.params.tensors()[i].shape() {
                return Err(r.fail(
                    block_at,
                    format!(
                        "parameter '{name}' has shape {shape:?}, expected {:?}",
                        model.params.tensors()[i].shape()
                    ),
                ));
            }
            let n: usize = shape.iter().product();
            let data_at = r.pos;
            let raw = r.take(8 * n, "values")?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            model
                .params
                .set_data(i, data)
                .map_err(|e| r.fail(data_at, format!("parameter '{name}': {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes after last parameter block"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelBundle::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos,
                format!("truncated: {what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = params.tensors()[i].data().to_vec();
            for j in 0..data.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
            params.set_data(i, data)?;
        }
        Ok(())
    }
}
