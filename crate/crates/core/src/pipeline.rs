//! Embedding, revealing, training and dataset handling.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{concat_depth, Tape, Tensor, Var};
use crate::config::{PipelineConfig, RevealInput};
use crate::dsp::{self, stdct_op, stft_op, istdct_op, istft_op, Spectrogram, TransformKind, Waveform};
use crate::embeddings::{decode_finalize, decode_prepare, encode_arrange, EmbeddingMethod};
use crate::error::{Error, Result};
use crate::formats::{quantize_pcm16, read_ppm, read_wav, write_ppm, write_wav};
use crate::imageops::{shuffle_op, unshuffle_op, RgbImage};
use crate::losses::{composite_loss, soft_dtw_value, ContainerKind, LossInputs, LossTerms, WaveLoss};
use crate::metrics::{histogram_l1, psnr, rgb_histogram, snr_db_slices, ssim, MetricsRow};
use crate::model::{Adam, ModelBundle};
use crate::networks::{seeded_rng, Bound};

/// A secret image with its cover audio.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub secret: RgbImage,
    pub cover: Waveform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetProfile {
    /// 16×16 images, 1056 samples at 16 kHz.
    Desk,
    /// 256×256 images, 1.5 s at 44.1 kHz.
    FullShape,
}

impl DatasetProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetProfile::Desk => "desk",
            DatasetProfile::FullShape => "full_shape",
        }
    }

    /// `(image side, samples, sample rate)`.
    pub fn geometry(self) -> (usize, usize, u32) {
        match self {
            DatasetProfile::Desk => (16, 1056, 16_000),
            DatasetProfile::FullShape => (256, 66_150, 44_100),
        }
    }

    /// Pipeline settings matching the profile's data.
    pub fn config(self) -> PipelineConfig {
        let (side, len, sr) = self.geometry();
        PipelineConfig {
            image_size: side,
            cover_len: len,
            sample_rate: sr,
            ..PipelineConfig::default()
        }
    }
}

impl std::str::FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(DatasetProfile::Desk),
            "full_shape" | "full" => Ok(DatasetProfile::FullShape),
            _ => Err(Error::usage(format!("unknown profile '{s}' (desk, full_shape)"))),
        }
    }
}

fn synth_image(rng: &mut ChaCha8Rng, side: usize) -> RgbImage {
    let span = (side.max(2) - 1) as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let mut img = RgbImage::from_fn(side, side, |c, y, x| {
        base[c] + gx[c] * (x as f64 / span - 0.5) + gy[c] * (y as f64 / span - 0.5)
    });
    let s = side as f64;
    for _ in 0..rng.random_range(1..=3) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (ry, rx) = (rng.random_range(0.12..0.35) * s, rng.random_range(0.12..0.35) * s);
        let round = rng.random_bool(0.5);
        for y in 0..side {
            for x in 0..side {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let inside = if round {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    img.set_pixel(y, x, color);
                }
            }
        }
    }
    let q: Vec<f64> = img
        .data()
        .iter()
        .map(|&v| crate::formats::to_u8(v) as f64 / 255.0)
        .collect();
    RgbImage::new(side, side, q).expect("quantised pixels are in range")
}

fn synth_audio(rng: &mut ChaCha8Rng, len: usize, sr: u32) -> Waveform {
    let nyq = sr as f64 / 2.0;
    let mut x = vec![0.0; len];
    for _ in 0..rng.random_range(3..=8) {
        let f = rng.random_range(40.0..0.9 * nyq);
        let a = rng.random_range(0.1..1.0);
        let ph = rng.random_range(0.0..2.0 * PI);
        for (n, v) in x.iter_mut().enumerate() {
            *v += a * (2.0 * PI * f * n as f64 / sr as f64 + ph).sin();
        }
    }
    // Kellet's economy pink filter
    let level = rng.random_range(0.05..0.25);
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let white: f64 = rng.random_range(-1.0..1.0);
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        *v += level * (b0 + b1 + b2 + white * 0.1848);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = rng.random_range(0.3..0.8);
    let samples = x
        .iter()
        .map(|v| quantize_pcm16(v * target / peak) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, sr).expect("finite samples")
}

/// Procedural image/audio pairs, quantised to the 8-bit and 16-bit grids so
/// that writing them to disk is lossless.
pub fn synth_dataset(n: usize, profile: DatasetProfile, seed: u64) -> Result<Vec<SamplePair>> {
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    let (side, len, sr) = profile.geometry();
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| SamplePair {
            secret: synth_image(&mut rng, side),
            cover: synth_audio(&mut rng, len, sr),
        })
        .collect())
}

pub fn pair_stem(i: usize) -> String {
    format!("pair_{i:04}")
}

/// Writes `pair_XXXX.ppm` and `pair_XXXX.wav` files.
pub fn save_dataset(dir: &Path, pairs: &[SamplePair]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, p) in pairs.iter().enumerate() {
        write_ppm(&dir.join(format!("{}.ppm", pair_stem(i))), &p.secret)?;
        write_wav(&dir.join(format!("{}.wav", pair_stem(i))), &p.cover)?;
    }
    Ok(())
}

/// Reads every `pair_*.ppm` with its matching `.wav`, in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<SamplePair>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for e in entries {
        let name = e.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".ppm") {
            if stem.starts_with("pair_") {
                stems.push(stem.to_string());
            }
        }
    }
    if stems.is_empty() {
        return Err(Error::usage(format!("no pair_*.ppm files in {}", dir.display())));
    }
    stems.sort();
    stems
        .iter()
        .map(|s| {
            Ok(SamplePair {
                secret: read_ppm(&dir.join(format!("{s}.ppm")))?,
                cover: read_wav(&dir.join(format!("{s}.wav")))?,
            })
        })
        .collect()
}

/// Tensors a sample contributes to one training or evaluation pass.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub secret: Tensor,
    /// Analysed cover segment.
    pub cover: Vec<f64>,
    /// Cover after the transform round trip.
    pub cover_rt: Tensor,
    /// `[2, F, T]` for STFT, `[1, N, T]` for STDCT.
    pub spec: Tensor,
}

fn spec_tensor(s: &Spectrogram) -> Tensor {
    let (f, t) = (s.bins(), s.frames());
    match s.kind {
        TransformKind::Stft => {
            let mut d = s.magnitude.data().to_vec();
            d.extend_from_slice(s.phase.data());
            Tensor::raw(vec![2, f, t], d)
        }
        TransformKind::Stdct => Tensor::raw(vec![1, f, t], s.magnitude.data().to_vec()),
    }
}

fn spectrogram_from(t: &Tensor, like: &Spectrogram) -> Result<Spectrogram> {
    let (f, n) = (like.bins(), like.frames());
    let mut s = like.clone();
    s.magnitude = crate::plane::Plane::new(f, n, t.data()[..f * n].to_vec())?;
    if like.kind == TransformKind::Stft {
        s.phase = crate::plane::Plane::new(f, n, t.data()[f * n..].to_vec())?;
    }
    Ok(s)
}

fn check_secret(m: &ModelBundle, s: &RgbImage) -> Result<()> {
    let side = m.config.image_size;
    if s.height() != side || s.width() != side {
        return Err(Error::usage(format!(
            "secret is {}x{}, model expects {side}x{side}",
            s.height(),
            s.width()
        )));
    }
    Ok(())
}

fn analysed_segment<'a>(m: &ModelBundle, w: &'a Waveform) -> Result<&'a [f64]> {
    let need = m.config.required_len()?;
    if w.len() < need {
        return Err(Error::usage(format!(
            "audio has {} samples, the model needs at least {need}",
            w.len()
        )));
    }
    Ok(&w.samples[..need])
}

pub fn prepare(m: &ModelBundle, pair: &SamplePair) -> Result<Prepared> {
    check_secret(m, &pair.secret)?;
    let seg = Waveform::new(analysed_segment(m, &pair.cover)?.to_vec(), pair.cover.sample_rate)?;
    let spec = dsp::transform(&seg, m.stft, m.config.transform)?;
    let rt = dsp::inverse(&spec, seg.sample_rate)?;
    Ok(Prepared {
        secret: pair.secret.to_tensor(),
        cover_rt: Tensor::raw(vec![rt.len()], rt.samples),
        cover: seg.samples,
        spec: spec_tensor(&spec),
    })
}

/// Hiding half of the graph.
pub struct HideGraph<'t> {
    pub stego_spec: Var<'t>,
    /// `(cover plane, stego plane)` per active container, magnitude first.
    pub planes: Vec<(Var<'t>, Var<'t>)>,
    pub wave: Var<'t>,
}

fn inverse_op<'t>(m: &ModelBundle, spec: Var<'t>, len: usize) -> Result<Var<'t>> {
    match m.config.transform {
        TransformKind::Stft => istft_op(spec, m.stft, len),
        TransformKind::Stdct => istdct_op(spec, m.stft, len),
    }
}

fn transform_op<'t>(m: &ModelBundle, wave: Var<'t>) -> Result<Var<'t>> {
    match m.config.transform {
        TransformKind::Stft => stft_op(wave, m.stft),
        TransformKind::Stdct => stdct_op(wave, m.stft),
    }
}

pub fn hide_graph<'t>(
    m: &ModelBundle,
    p: &Bound<'t>,
    secret: Var<'t>,
    spec: Var<'t>,
    len: usize,
) -> Result<HideGraph<'t>> {
    let input = if m.ctx.method.uses_plane() {
        shuffle_op(secret, m.config.luma)?
    } else {
        secret
    };
    let mut marks = Vec::with_capacity(m.hide.len());
    for (b, net) in m.hide.iter().enumerate() {
        let wm = net.forward(p, input)?;
        marks.push(encode_arrange(wm, &m.ctx, &m.enc_weights(p, b)?)?);
    }
    let (stego_spec, planes) = match m.config.transform {
        TransformKind::Stdct => {
            let out = spec.add(marks[0])?;
            (out, vec![(spec, out)])
        }
        TransformKind::Stft => {
            let mag = spec.slice(0, 0, 1)?;
            let phase = spec.slice(0, 1, 1)?;
            match m.config.container() {
                ContainerKind::Magnitude => {
                    let m2 = mag.add(marks[0])?;
                    (concat_depth(&[m2, phase])?, vec![(mag, m2)])
                }
                ContainerKind::Phase => {
                    let p2 = phase.add(marks[0])?;
                    (concat_depth(&[mag, p2])?, vec![(phase, p2)])
                }
                ContainerKind::Dual => {
                    let m2 = mag.add(marks[0])?;
                    let p2 = phase.add(marks[1])?;
                    (concat_depth(&[m2, p2])?, vec![(mag, m2), (phase, p2)])
                }
            }
        }
    };
    let wave = inverse_op(m, stego_spec, len)?;
    Ok(HideGraph {
        stego_spec,
        planes,
        wave,
    })
}

/// Revealing half: stego spectrum to an unclamped `[3, H, W]` image.
pub fn reveal_graph<'t>(m: &ModelBundle, p: &Bound<'t>, spec: Var<'t>) -> Result<Var<'t>> {
    let planes = match (m.config.transform, m.config.container()) {
        (TransformKind::Stdct, _) => vec![spec],
        (_, ContainerKind::Magnitude) => vec![spec.slice(0, 0, 1)?],
        (_, ContainerKind::Phase) => vec![spec.slice(0, 1, 1)?],
        (_, ContainerKind::Dual) => vec![spec.slice(0, 0, 1)?, spec.slice(0, 1, 1)?],
    };
    let mut outs = Vec::with_capacity(planes.len());
    for (b, (plane, net)) in planes.into_iter().zip(&m.reveal).enumerate() {
        let x = decode_prepare(plane, &m.ctx)?;
        outs.push(decode_finalize(net.forward(p, x)?, &m.ctx, &m.dec_weights(p, b)?)?);
    }
    let merged = match &m.coupling {
        Some(c) => c.forward(p, outs[0], outs[1])?,
        None => outs[0],
    };
    if m.ctx.method == EmbeddingMethod::Multichannel {
        Ok(merged)
    } else {
        unshuffle_op(merged, m.config.luma)
    }
}

/// Full training objective for one prepared sample.
pub fn loss_graph<'t>(m: &ModelBundle, p: &Bound<'t>, tape: &'t Tape, x: &Prepared) -> Result<LossTerms<'t>> {
    let secret = tape.constant(x.secret.clone());
    let spec = tape.constant(x.spec.clone());
    let h = hide_graph(m, p, secret, spec, x.cover.len())?;
    let reveal_in = match m.config.reveal_input {
        RevealInput::Retransform => transform_op(m, h.wave)?,
        RevealInput::Direct => h.stego_spec,
    };
    let revealed = reveal_graph(m, p, reveal_in)?;
    composite_loss(
        &m.config.loss,
        &LossInputs {
            secret,
            revealed,
            cover: tape.constant(x.cover_rt.clone()),
            stego: h.wave,
            container: h.planes[0].0,
            stego_container: h.planes[0].1,
            phase: h.planes.get(1).copied(),
        },
    )
}

/// Per-term values, in [`LossTerms::named`] order.
pub type TermValues = [f64; 5];

pub const TERM_NAMES: [&str; 5] = ["total", "image_l1", "wave_term", "mag_l2", "phase_l2"];

fn term_values(t: &LossTerms<'_>) -> TermValues {
    t.named().map(|(_, v)| v)
}

fn sample_grad(m: &ModelBundle, x: &Prepared) -> Result<(TermValues, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let p = m.params.bind(&tape, true);
    let terms = loss_graph(m, &p, &tape, x)?;
    let values = term_values(&terms);
    tape.backward(terms.total)?;
    let grads = p
        .vars
        .iter()
        .zip(m.params.tensors())
        .map(|(v, t)| tape.grad(*v).map_or_else(|| vec![0.0; t.len()], Tensor::into_data))
        .collect();
    Ok((values, grads))
}

fn sample_terms(m: &ModelBundle, x: &Prepared) -> Result<TermValues> {
    let tape = Tape::new();
    let p = m.params.bind(&tape, false);
    Ok(term_values(&loss_graph(m, &p, &tape, x)?))
}

/// Mean objective terms over `data` at the current parameters.
pub fn dataset_loss(m: &ModelBundle, data: &[Prepared]) -> Result<TermValues> {
    let per: Vec<TermValues> = data
        .par_iter()
        .map(|x| sample_terms(m, x))
        .collect::<Result<_>>()?;
    let mut acc = [0.0; 5];
    for v in &per {
        for k in 0..5 {
            acc[k] += v[k];
        }
    }
    Ok(acc.map(|v| v / data.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub terms: TermValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Full-dataset terms before the first and after the last update.
    pub initial: TermValues,
    pub last: TermValues,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,total,image_l1,wave_term,mag_l2,phase_l2";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for row in &self.steps {
            s.push_str(&row.step.to_string());
            for v in row.terms {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

fn check_terms(step: usize, terms: &TermValues) -> Result<()> {
    match terms.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric {
            step,
            term: TERM_NAMES[i].to_string(),
        }),
        None => Ok(()),
    }
}

/// Seeded batch order: shuffled passes over the dataset.
struct Batcher {
    order: Vec<usize>,
    at: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = Batcher {
            order: (0..n).collect(),
            at: n,
            rng: seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15),
        };
        b.order.shuffle(&mut b.rng);
        b.at = 0;
        b
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.at == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.at = 0;
                }
                self.at += 1;
                self.order[self.at - 1]
            })
            .collect()
    }
}

/// Runs `steps` Adam updates on `m`.
pub fn train_model(m: &mut ModelBundle, data: &[SamplePair], steps: usize) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::usage("training needs at least one sample"));
    }
    let prepared: Vec<Prepared> = data.iter().map(|p| prepare(m, p)).collect::<Result<_>>()?;
    let initial = dataset_loss(m, &prepared)?;
    check_terms(0, &initial)?;
    let mut opt = Adam::new(m.config.adam, &m.params);
    let mut batches = Batcher::new(prepared.len(), m.config.seed);
    let mut log = Vec::with_capacity(steps);
    for step in 1..=steps {
        let idx = batches.next(m.config.batch_size);
        let model: &ModelBundle = m;
        let results: Vec<(TermValues, Vec<Vec<f64>>)> = idx
            .par_iter()
            .map(|&i| sample_grad(model, &prepared[i]))
            .collect::<Result<_>>()?;
        let scale = 1.0 / idx.len() as f64;
        let mut terms = [0.0; 5];
        let mut grads: Vec<Vec<f64>> = m.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for (t, g) in &results {
            for k in 0..5 {
                terms[k] += t[k] * scale;
            }
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, v) in acc.iter_mut().zip(gi) {
                    *a += v * scale;
                }
            }
        }
        check_terms(step, &terms)?;
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step,
                term: "gradient".into(),
            });
        }
        opt.step(&mut m.params, &grads)?;
        log.push(StepLog { step, terms });
    }
    let last = dataset_loss(m, &prepared)?;
    check_terms(steps + 1, &last)?;
    Ok(TrainLog {
        steps: log,
        initial,
        last,
    })
}

/// Fresh model from `cfg`, trained for `cfg.steps` steps.
pub fn train(data: &[SamplePair], cfg: &PipelineConfig) -> Result<(ModelBundle, TrainLog)> {
    let mut m = ModelBundle::new(cfg)?;
    let log = train_model(&mut m, data, cfg.steps)?;
    Ok((m, log))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedDiagnostics {
    /// Stego SNR against the round-tripped cover segment.
    pub snr_db: f64,
    /// RMS change of each active container plane, magnitude first.
    pub container_l2: Vec<f64>,
    pub analysed_len: usize,
}

/// Stego waveform plus the stego spectrum it was synthesised from.
pub struct Embedded {
    pub stego: Waveform,
    pub spectrogram: Spectrogram,
    pub diagnostics: EmbedDiagnostics,
}

/// Hides `secret` in `cover`. Samples past the analysed segment are
/// copied through unchanged.
pub fn embed_full(secret: &RgbImage, cover: &Waveform, m: &ModelBundle) -> Result<Embedded> {
    let x = prepare(
        m,
        &SamplePair {
            secret: secret.clone(),
            cover: cover.clone(),
        },
    )?;
    let tape = Tape::new();
    let p = m.params.bind(&tape, false);
    let h = hide_graph(m, &p, tape.constant(x.secret.clone()), tape.constant(x.spec.clone()), x.cover.len())?;
    let wave = h.wave.value();
    let container_l2 = h
        .planes
        .iter()
        .map(|(a, b)| crate::losses::l2(*a, *b).map(|v| v.item()))
        .collect::<Result<_>>()?;
    let snr = snr_db_slices(x.cover_rt.data(), wave.data()).unwrap_or(f64::NAN);
    let mut samples = wave.data().to_vec();
    samples.extend_from_slice(&cover.samples[x.cover.len()..]);
    let seg = Waveform::new(x.cover.clone(), cover.sample_rate)?;
    let like = dsp::transform(&seg, m.stft, m.config.transform)?;
    Ok(Embedded {
        stego: Waveform::new(samples, cover.sample_rate)
            .map_err(|_| Error::Numeric { step: 0, term: "stego waveform".into() })?,
        spectrogram: spectrogram_from(&h.stego_spec.value(), &like)?,
        diagnostics: EmbedDiagnostics {
            snr_db: snr,
            container_l2,
            analysed_len: x.cover.len(),
        },
    })
}

pub fn embed(secret: &RgbImage, cover: &Waveform, m: &ModelBundle) -> Result<(Waveform, EmbedDiagnostics)> {
    let e = embed_full(secret, cover, m)?;
    Ok((e.stego, e.diagnostics))
}

/// Transform of the analysed stego segment.
pub fn analyse(stego: &Waveform, m: &ModelBundle) -> Result<Spectrogram> {
    let seg = Waveform::new(analysed_segment(m, stego)?.to_vec(), stego.sample_rate)?;
    dsp::transform(&seg, m.stft, m.config.transform)
}

/// Reveals from an already computed stego spectrogram.
pub fn reveal_spectrogram(s: &Spectrogram, m: &ModelBundle) -> Result<RgbImage> {
    let (f, t) = m.ctx.container_shape();
    if s.bins() != f || s.frames() != t || s.kind != m.config.transform {
        return Err(Error::usage(format!(
            "spectrogram is {}x{} {}, model expects {f}x{t} {}",
            s.bins(),
            s.frames(),
            s.kind.as_str(),
            m.config.transform.as_str()
        )));
    }
    let tape = Tape::new();
    let p = m.params.bind(&tape, false);
    let out = reveal_graph(m, &p, tape.constant(spec_tensor(s)))?;
    RgbImage::from_tensor(&out.value())
}

pub fn reveal(stego: &Waveform, m: &ModelBundle) -> Result<RgbImage> {
    reveal_spectrogram(&analyse(stego, m)?, m)
}

/// Scores of one revealed image against its secret.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScores {
    pub ssim: f64,
    pub psnr_db: f64,
    pub hist_l1: f64,
    pub l1: f64,
}

pub fn score_image(secret: &RgbImage, revealed: &RgbImage) -> Result<ImageScores> {
    let l1 = secret
        .data()
        .iter()
        .zip(revealed.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / secret.data().len() as f64;
    Ok(ImageScores {
        ssim: ssim(secret, revealed)?,
        psnr_db: psnr(secret, revealed)?,
        hist_l1: histogram_l1(&rgb_histogram(secret), &rgb_histogram(revealed)),
        l1,
    })
}

/// Per-sample evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEval {
    pub image: ImageScores,
    pub snr_db: f64,
    pub waveform_loss: f64,
    pub revealed: RgbImage,
}

pub fn evaluate_sample(m: &ModelBundle, pair: &SamplePair) -> Result<SampleEval> {
    let e = embed_full(&pair.secret, &pair.cover, m)?;
    let revealed = reveal(&e.stego, m)?;
    let n = e.diagnostics.analysed_len;
    let rt = dsp::inverse(&analyse(&pair.cover, m)?, pair.cover.sample_rate)?;
    let stego = &e.stego.samples[..n];
    let waveform_loss = match m.config.loss.waveform_loss {
        WaveLoss::SoftDtw if m.config.container() != ContainerKind::Dual => {
            soft_dtw_value(&rt.samples, stego, m.config.loss.gamma)?
        }
        _ => rt.samples.iter().zip(stego).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64,
    };
    Ok(SampleEval {
        image: score_image(&pair.secret, &revealed)?,
        snr_db: e.diagnostics.snr_db,
        waveform_loss,
        revealed,
    })
}

/// Dataset means as one metrics row.
pub fn evaluate(m: &ModelBundle, data: &[SamplePair]) -> Result<MetricsRow> {
    if data.is_empty() {
        return Err(Error::usage("evaluation needs at least one sample"));
    }
    let evals: Vec<SampleEval> = data
        .par_iter()
        .map(|p| evaluate_sample(m, p))
        .collect::<Result<_>>()?;
    let mean = |f: &dyn Fn(&SampleEval) -> f64| evals.iter().map(f).sum::<f64>() / evals.len() as f64;
    Ok(MetricsRow {
        method: m.config.method.as_str().to_string(),
        container: m.config.container().as_str().to_string(),
        beta: m.config.loss.beta,
        lambda: m.config.loss.lambda,
        ssim: mean(&|e| e.image.ssim),
        psnr_db: mean(&|e| e.image.psnr_db),
        snr_db: mean(&|e| e.snr_db),
        waveform_loss: mean(&|e| e.waveform_loss),
        hist_l1: mean(&|e| e.image.hist_l1),
    })
}
