//! Flat `key=value` pipeline configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::dsp::{StftConfig, TransformKind};
use crate::embeddings::{EmbeddingContext, EmbeddingMethod};
use crate::error::{Error, Result};
use crate::losses::{ContainerKind, LossConfig, WaveLoss};

/// Where the revealing network reads the stego spectrogram from during
/// training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RevealInput {
    /// Re-analyse the stego waveform, exactly as at inference time.
    Retransform,
    /// Use the stego spectrogram before the inverse transform.
    Direct,
}

impl RevealInput {
    pub fn as_str(self) -> &'static str {
        match self {
            RevealInput::Retransform => "retransform",
            RevealInput::Direct => "direct",
        }
    }
}

impl FromStr for RevealInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retransform" => Ok(RevealInput::Retransform),
            "direct" => Ok(RevealInput::Direct),
            other => Err(Error::usage(format!(
                "unknown reveal input '{other}' (expected retransform or direct)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub method: EmbeddingMethod,
    pub transform: TransformKind,
    pub large: bool,
    pub luma: bool,
    pub loss: LossConfig,
    pub image_size: usize,
    pub sample_rate: u32,
    /// Target cover length used to derive the default hop.
    pub cover_len: usize,
    /// 0 derives the value from the container shape.
    pub frame_length: usize,
    pub hop: usize,
    pub unet_depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub reveal_input: RevealInput,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: EmbeddingMethod::Stretch,
            transform: TransformKind::Stft,
            large: false,
            luma: false,
            loss: LossConfig::default(),
            image_size: 16,
            sample_rate: 16_000,
            cover_len: 1056,
            frame_length: 0,
            hop: 0,
            unet_depth: 3,
            base_channels: 8,
            kernel: 3,
            reveal_input: RevealInput::Retransform,
            adam: AdamConfig::default(),
            steps: 300,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// Every accepted key, in rendering order.
pub const KEYS: [&str; 26] = [
    "method",
    "container",
    "transform",
    "large",
    "luma",
    "beta",
    "lambda",
    "theta",
    "gamma",
    "wave_loss",
    "image_size",
    "sample_rate",
    "cover_len",
    "frame_length",
    "hop",
    "unet_depth",
    "base_channels",
    "kernel",
    "reveal_input",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "steps",
    "batch_size",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::usage(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::usage(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

impl PipelineConfig {
    pub fn container(&self) -> ContainerKind {
        self.loss.container
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "method" => self.method = v.parse()?,
            "container" => self.loss.container = v.parse()?,
            "transform" => self.transform = v.parse()?,
            "large" => self.large = parse_bool(key, v)?,
            "luma" => self.luma = parse_bool(key, v)?,
            "beta" => self.loss.beta = parse(key, v)?,
            "lambda" => self.loss.lambda = parse(key, v)?,
            "theta" => self.loss.theta = parse(key, v)?,
            "gamma" => self.loss.gamma = parse(key, v)?,
            "wave_loss" => self.loss.waveform_loss = v.parse::<WaveLoss>()?,
            "image_size" => self.image_size = parse(key, v)?,
            "sample_rate" => self.sample_rate = parse(key, v)?,
            "cover_len" => self.cover_len = parse(key, v)?,
            "frame_length" => self.frame_length = parse(key, v)?,
            "hop" => self.hop = parse(key, v)?,
            "unet_depth" => self.unet_depth = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "reveal_input" => self.reveal_input = v.parse()?,
            "lr" => self.adam.learning_rate = parse(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. Unknown keys are
    /// rejected. The result is validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies settings from text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::usage(format!("line {}: expected key=value, got '{line}'", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::usage(format!("line {}: {}", n + 1, strip(&e))))?;
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l = &self.loss;
        let pairs: [(&str, String); 26] = [
            ("method", self.method.as_str().into()),
            ("container", l.container.as_str().into()),
            ("transform", self.transform.as_str().into()),
            ("large", self.large.to_string()),
            ("luma", self.luma.to_string()),
            ("beta", l.beta.to_string()),
            ("lambda", l.lambda.to_string()),
            ("theta", l.theta.to_string()),
            ("gamma", l.gamma.to_string()),
            ("wave_loss", l.waveform_loss.as_str().into()),
            ("image_size", self.image_size.to_string()),
            ("sample_rate", self.sample_rate.to_string()),
            ("cover_len", self.cover_len.to_string()),
            ("frame_length", self.frame_length.to_string()),
            ("hop", self.hop.to_string()),
            ("unet_depth", self.unet_depth.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("kernel", self.kernel.to_string()),
            ("reveal_input", self.reveal_input.as_str().into()),
            ("lr", self.adam.learning_rate.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn embedding(&self) -> Result<EmbeddingContext> {
        EmbeddingContext::new(self.method, self.large, self.image_size, self.image_size)
    }

    /// Transform settings producing exactly the container shape.
    ///
    /// With `frame_length = 0` the frame length follows from the container
    /// height (`2F` for STFT, `F` for STDCT). With `hop = 0` the hop is the
    /// largest value up to `N/2` that fits all frames into `cover_len`
    /// samples.
    pub fn stft_config(&self) -> Result<StftConfig> {
        let (f, t) = self.embedding()?.container_shape();
        let n = match (self.frame_length, self.transform) {
            (0, TransformKind::Stft) => 2 * f,
            (0, TransformKind::Stdct) => f,
            (n, _) => n,
        };
        let hop = if self.hop != 0 {
            self.hop
        } else {
            let room = self.cover_len.saturating_sub(n / 2);
            let fit = if t > 1 { room / (t - 1) } else { n / 2 };
            fit.min(n / 2)
        };
        if hop == 0 {
            return Err(Error::config(format!(
                "cover length {} is too short for {t} frames of {n} samples",
                self.cover_len
            )));
        }
        let cfg = StftConfig::new(n, hop)?;
        if cfg.freq_bins(self.transform) != f {
            return Err(Error::config(format!(
                "frame length {n} gives {} bins, container needs {f}",
                cfg.freq_bins(self.transform)
            )));
        }
        Ok(cfg)
    }

    /// Samples analysed per cover: `T` frames exactly.
    pub fn required_len(&self) -> Result<usize> {
        let (_, t) = self.embedding()?.container_shape();
        Ok(self.stft_config()?.required_len(t))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.transform == TransformKind::Stdct && self.container() != ContainerKind::Magnitude {
            return Err(Error::config(format!(
                "the {} container needs the stft transform (stdct has no phase)",
                self.container().as_str()
            )));
        }
        if self.image_size == 0 || self.sample_rate == 0 {
            return Err(Error::config("image_size and sample_rate must be positive"));
        }
        if self.unet_depth == 0 || self.base_channels == 0 || self.kernel % 2 == 0 {
            return Err(Error::config("network needs depth >= 1, channels >= 1 and an odd kernel"));
        }
        let stride = 1usize << self.unet_depth;
        let ctx = self.embedding()?;
        for shape in [ctx.secret_shape(), ctx.reveal_input_shape()] {
            if shape[1] % stride != 0 || shape[2] % stride != 0 {
                return Err(Error::config(format!(
                    "network input {}x{} is not divisible by 2^{}",
                    shape[1], shape[2], self.unet_depth
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::config(format!("invalid optimizer settings {a:?}")));
        }
        let stft = self.stft_config()?;
        let (_, t) = ctx.container_shape();
        if stft.required_len(t) < stft.frame_length() {
            return Err(Error::config("cover shorter than one frame"));
        }
        Ok(())
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Usage(m) | Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
