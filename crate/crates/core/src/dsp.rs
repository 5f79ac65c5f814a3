//! Short-time transforms between waveforms and spectral planes.
//!
//! Framing: the signal is zero-padded by `N/2` samples at the front and
//! enough zeros at the tail to complete the last frame, giving
//! `T = ceil((len - N/2) / r) + 1` frames. Frame `m` covers padded samples
//! `[m·r, m·r + N)`.
//!
//! * STFT: periodic Hann window, per-frame DFT, bins `0..N/2` kept (the
//!   Nyquist bin is dropped and comes back as zero on the inverse).
//! * STDCT: periodic Hann window, per-frame orthonormal DCT-II, all `N`
//!   coefficients kept, phase plane all zero.
//!
//! Both inverses use weighted overlap-add normalised by the sum of squared
//! shifted windows, so they are exact whenever that sum is positive on every
//! retained sample.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{Dct2, Dct3, DctPlanner};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Smallest overlap-add denominator accepted at a retained sample.
const MIN_OLA_DENOMINATOR: f64 = 1e-12;

/// Magnitudes below this are treated as zero when differentiating polar
/// coordinates.
const POLAR_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest absolute sample; anything above 1 is outside the nominal range.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Stft,
    Stdct,
}

impl TransformKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Stft => "stft",
            TransformKind::Stdct => "stdct",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stft" => Ok(TransformKind::Stft),
            "stdct" => Ok(TransformKind::Stdct),
            other => Err(Error::usage(format!(
                "unknown transform '{other}' (expected stft or stdct)"
            ))),
        }
    }
}

/// Frame length `N` and hop `r`; the window is always periodic Hann.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    frame_length: usize,
    hop: usize,
}

impl StftConfig {
    pub fn new(frame_length: usize, hop: usize) -> Result<Self> {
        if frame_length < 4 || frame_length % 2 != 0 {
            return Err(Error::config(format!(
                "frame length must be even and at least 4, got {frame_length}"
            )));
        }
        if hop == 0 || hop > frame_length {
            return Err(Error::config(format!(
                "hop must be in [1, {frame_length}], got {hop}"
            )));
        }
        Ok(StftConfig { frame_length, hop })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Zeros inserted before the first sample.
    pub fn lead_pad(&self) -> usize {
        self.frame_length / 2
    }

    /// Rows of the spectral plane.
    pub fn freq_bins(&self, kind: TransformKind) -> usize {
        match kind {
            TransformKind::Stft => self.frame_length / 2,
            TransformKind::Stdct => self.frame_length,
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len == 0 {
            return Err(Error::usage("empty waveform"));
        }
        if len < self.frame_length {
            return Err(Error::usage(format!(
                "waveform has {len} samples, fewer than one frame ({})",
                self.frame_length
            )));
        }
        Ok((len - self.lead_pad()).div_ceil(self.hop) + 1)
    }

    /// Shortest signal that yields exactly `frames` frames.
    pub fn required_len(&self, frames: usize) -> usize {
        let len = self.lead_pad() + (frames.max(1) - 1) * self.hop;
        len.max(self.frame_length)
    }

    pub fn window(&self) -> Vec<f64> {
        hann_window(self.frame_length).expect("frame length validated at construction")
    }
}

/// Periodic Hann weights `0.5 - 0.5·cos(2πn/N)`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::config(format!(
            "Hann window length must be even and at least 4, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect())
}

/// Magnitude and phase planes (frequency × frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// Nonnegative magnitudes for STFT; signed coefficients for STDCT.
    pub magnitude: Plane,
    /// Radians in (−π, π]; all zero for STDCT.
    pub phase: Plane,
    pub config: StftConfig,
    pub kind: TransformKind,
    /// Length of the analysed signal, restored by the inverse.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitude.cols()
    }

    pub fn bins(&self) -> usize {
        self.magnitude.rows()
    }

    /// Real and imaginary planes reassembled from magnitude and phase.
    pub fn to_rect(&self) -> (Plane, Plane) {
        let re = Plane::from_fn(self.bins(), self.frames(), |k, m| {
            self.magnitude.get(k, m) * self.phase.get(k, m).cos()
        });
        let im = Plane::from_fn(self.bins(), self.frames(), |k, m| {
            self.magnitude.get(k, m) * self.phase.get(k, m).sin()
        });
        (re, im)
    }
}

fn wrap_phase(re: f64, im: f64) -> f64 {
    let p = im.atan2(re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

/// Framing geometry shared by both transforms.
#[derive(Clone)]
pub(crate) struct Framing {
    n: usize,
    hop: usize,
    pad: usize,
    frames: usize,
    len: usize,
    window: Vec<f64>,
    denom: Vec<f64>,
}

impl Framing {
    pub(crate) fn new(cfg: StftConfig, len: usize) -> Result<Self> {
        let frames = cfg.frame_count(len)?;
        Ok(Self::with_frames(cfg, len, frames))
    }

    fn with_frames(cfg: StftConfig, len: usize, frames: usize) -> Self {
        let n = cfg.frame_length;
        let window = cfg.window();
        let padded = (frames - 1) * cfg.hop + n;
        let mut denom = vec![0.0; padded];
        for m in 0..frames {
            for (j, w) in window.iter().enumerate() {
                denom[m * cfg.hop + j] += w * w;
            }
        }
        Framing {
            n,
            hop: cfg.hop,
            pad: cfg.lead_pad(),
            frames,
            len,
            window,
            denom,
        }
    }

    fn check_denominator(&self) -> Result<()> {
        for i in 0..self.len {
            if self.denom[i + self.pad] <= MIN_OLA_DENOMINATOR {
                return Err(Error::config(format!(
                    "overlap-add normalisation vanishes at sample {i}: hop {} is too large for frame length {}",
                    self.hop, self.n
                )));
            }
        }
        Ok(())
    }

    /// Windowed frame `m` of signal `x`.
    fn frame(&self, x: &[f64], m: usize, out: &mut [f64]) {
        let start = m * self.hop;
        for (j, o) in out.iter_mut().enumerate() {
            let q = start + j;
            *o = if q >= self.pad && q - self.pad < self.len {
                x[q - self.pad] * self.window[j]
            } else {
                0.0
            };
        }
    }

    /// Adds `window · frame` into the padded accumulator.
    fn overlap_add(&self, acc: &mut [f64], m: usize, frame: &[f64]) {
        let start = m * self.hop;
        for (j, v) in frame.iter().enumerate() {
            acc[start + j] += self.window[j] * v;
        }
    }

    fn normalise(&self, acc: &[f64]) -> Vec<f64> {
        (0..self.len)
            .map(|i| acc[i + self.pad] / self.denom[i + self.pad])
            .collect()
    }

    /// Adjoint of `frame` over all frames: scatter windowed frame gradients.
    fn frame_adjoint(&self, out: &mut [f64], m: usize, g: &[f64]) {
        let start = m * self.hop;
        for (j, gv) in g.iter().enumerate() {
            let q = start + j;
            if q >= self.pad && q - self.pad < self.len {
                out[q - self.pad] += gv * self.window[j];
            }
        }
    }

    /// Adjoint of overlap-add plus normalisation for frame `m`.
    fn synth_adjoint_frame(&self, dy: &[f64], m: usize, out: &mut [f64]) {
        let start = m * self.hop;
        for (j, o) in out.iter_mut().enumerate() {
            let q = start + j;
            *o = if q >= self.pad && q - self.pad < self.len {
                self.window[j] * dy[q - self.pad] / self.denom[q]
            } else {
                0.0
            };
        }
    }
}

/// Complex-basis kernel working on raw `[F·T]` real/imaginary buffers.
pub(crate) struct FourierKernel {
    framing: Framing,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FourierKernel {
    pub(crate) fn new(cfg: StftConfig, len: usize) -> Result<Self> {
        let framing = Framing::new(cfg, len)?;
        let mut planner = FftPlanner::new();
        Ok(FourierKernel {
            forward: planner.plan_fft_forward(framing.n),
            inverse: planner.plan_fft_inverse(framing.n),
            framing,
        })
    }

    fn bins(&self) -> usize {
        self.framing.n / 2
    }

    /// Full `N`-point spectrum of every frame.
    fn frame_spectra(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = self.framing.n;
        let mut frame = vec![0.0; n];
        (0..self.framing.frames)
            .map(|m| {
                self.framing.frame(x, m, &mut frame);
                let mut buf: Vec<Complex<f64>> =
                    frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
                self.forward.process(&mut buf);
                buf
            })
            .collect()
    }

    pub(crate) fn analyze(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (f, t) = (self.bins(), self.framing.frames);
        let mut re = vec![0.0; f * t];
        let mut im = vec![0.0; f * t];
        for (m, spec) in self.frame_spectra(x).into_iter().enumerate() {
            for k in 0..f {
                re[k * t + m] = spec[k].re;
                im[k * t + m] = spec[k].im;
            }
        }
        (re, im)
    }

    pub(crate) fn analyze_adjoint(&self, dre: &[f64], dim: &[f64]) -> Vec<f64> {
        let (n, f, t) = (self.framing.n, self.bins(), self.framing.frames);
        let mut dx = vec![0.0; self.framing.len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut frame = vec![0.0; n];
        for m in 0..t {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for k in 0..f {
                buf[k] = Complex::new(dre[k * t + m], dim[k * t + m]);
            }
            self.inverse.process(&mut buf);
            for (fr, c) in frame.iter_mut().zip(&buf) {
                *fr = c.re;
            }
            self.framing.frame_adjoint(&mut dx, m, &frame);
        }
        dx
    }

    pub(crate) fn synthesize(&self, re: &[f64], im: &[f64]) -> Result<Vec<f64>> {
        self.framing.check_denominator()?;
        let (n, f, t) = (self.framing.n, self.bins(), self.framing.frames);
        let mut acc = vec![0.0; self.framing.denom.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut frame = vec![0.0; n];
        let scale = 1.0 / n as f64;
        for m in 0..t {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            buf[0] = Complex::new(re[m], 0.0);
            for k in 1..f {
                buf[k] = Complex::new(2.0 * re[k * t + m], 2.0 * im[k * t + m]);
            }
            self.inverse.process(&mut buf);
            for (fr, c) in frame.iter_mut().zip(&buf) {
                *fr = c.re * scale;
            }
            self.framing.overlap_add(&mut acc, m, &frame);
        }
        Ok(self.framing.normalise(&acc))
    }

    pub(crate) fn synthesize_adjoint(&self, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, f, t) = (self.framing.n, self.bins(), self.framing.frames);
        let mut dre = vec![0.0; f * t];
        let mut dim = vec![0.0; f * t];
        let mut u = vec![0.0; n];
        let scale = 1.0 / n as f64;
        for m in 0..t {
            self.framing.synth_adjoint_frame(dy, m, &mut u);
            let mut buf: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
            self.forward.process(&mut buf);
            dre[m] = buf[0].re * scale;
            for k in 1..f {
                dre[k * t + m] = 2.0 * scale * buf[k].re;
                dim[k * t + m] = 2.0 * scale * buf[k].im;
            }
        }
        (dre, dim)
    }
}

/// Orthonormal DCT-II kernel working on raw `[N·T]` coefficient buffers.
pub(crate) struct CosineKernel {
    framing: Framing,
    dct2: Arc<dyn Dct2<f64>>,
    dct3: Arc<dyn Dct3<f64>>,
}

impl CosineKernel {
    pub(crate) fn new(cfg: StftConfig, len: usize) -> Result<Self> {
        let framing = Framing::new(cfg, len)?;
        let mut planner = DctPlanner::new();
        Ok(CosineKernel {
            dct2: planner.plan_dct2(framing.n),
            dct3: planner.plan_dct3(framing.n),
            framing,
        })
    }

    /// In-place orthonormal DCT-II.
    fn ortho_dct2(&self, buf: &mut [f64]) {
        let n = buf.len() as f64;
        self.dct2.process_dct2(buf);
        buf[0] *= (1.0 / n).sqrt();
        let s = (2.0 / n).sqrt();
        buf[1..].iter_mut().for_each(|v| *v *= s);
    }

    /// In-place inverse (transpose) of [`Self::ortho_dct2`].
    fn ortho_dct3(&self, buf: &mut [f64]) {
        let n = buf.len() as f64;
        buf[0] *= 2.0 * (1.0 / n).sqrt();
        let s = (2.0 / n).sqrt();
        buf[1..].iter_mut().for_each(|v| *v *= s);
        self.dct3.process_dct3(buf);
    }

    pub(crate) fn analyze(&self, x: &[f64]) -> Vec<f64> {
        let (n, t) = (self.framing.n, self.framing.frames);
        let mut out = vec![0.0; n * t];
        let mut frame = vec![0.0; n];
        for m in 0..t {
            self.framing.frame(x, m, &mut frame);
            self.ortho_dct2(&mut frame);
            for (k, v) in frame.iter().enumerate() {
                out[k * t + m] = *v;
            }
        }
        out
    }

    pub(crate) fn analyze_adjoint(&self, dc: &[f64]) -> Vec<f64> {
        let (n, t) = (self.framing.n, self.framing.frames);
        let mut dx = vec![0.0; self.framing.len];
        let mut frame = vec![0.0; n];
        for m in 0..t {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = dc[k * t + m];
            }
            self.ortho_dct3(&mut frame);
            self.framing.frame_adjoint(&mut dx, m, &frame);
        }
        dx
    }

    pub(crate) fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.framing.check_denominator()?;
        let (n, t) = (self.framing.n, self.framing.frames);
        let mut acc = vec![0.0; self.framing.denom.len()];
        let mut frame = vec![0.0; n];
        for m in 0..t {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = coeffs[k * t + m];
            }
            self.ortho_dct3(&mut frame);
            self.framing.overlap_add(&mut acc, m, &frame);
        }
        Ok(self.framing.normalise(&acc))
    }

    pub(crate) fn synthesize_adjoint(&self, dy: &[f64]) -> Vec<f64> {
        let (n, t) = (self.framing.n, self.framing.frames);
        let mut dc = vec![0.0; n * t];
        let mut u = vec![0.0; n];
        for m in 0..t {
            self.framing.synth_adjoint_frame(dy, m, &mut u);
            self.ortho_dct2(&mut u);
            for (k, v) in u.iter().enumerate() {
                dc[k * t + m] = *v;
            }
        }
        dc
    }
}

pub fn stft(w: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    let kernel = FourierKernel::new(cfg, w.len())?;
    let (re, im) = kernel.analyze(&w.samples);
    let (f, t) = (kernel.bins(), kernel.framing.frames);
    let magnitude = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect();
    let phase = re.iter().zip(&im).map(|(a, b)| wrap_phase(*a, *b)).collect();
    Ok(Spectrogram {
        magnitude: Plane::new(f, t, magnitude)?,
        phase: Plane::new(f, t, phase)?,
        config: cfg,
        kind: TransformKind::Stft,
        signal_len: w.len(),
    })
}

pub fn istft(s: &Spectrogram, sample_rate: u32) -> Result<Waveform> {
    if s.kind != TransformKind::Stft {
        return Err(Error::usage("istft needs an STFT spectrogram"));
    }
    let kernel = FourierKernel::new(s.config, s.signal_len)?;
    check_plane_shape(s, kernel.bins(), kernel.framing.frames)?;
    let (re, im) = s.to_rect();
    Waveform::new(kernel.synthesize(re.data(), im.data())?, sample_rate)
}

pub fn stdct(w: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    let kernel = CosineKernel::new(cfg, w.len())?;
    let coeffs = kernel.analyze(&w.samples);
    let (f, t) = (kernel.framing.n, kernel.framing.frames);
    Ok(Spectrogram {
        magnitude: Plane::new(f, t, coeffs)?,
        phase: Plane::zeros(f, t),
        config: cfg,
        kind: TransformKind::Stdct,
        signal_len: w.len(),
    })
}

pub fn istdct(s: &Spectrogram, sample_rate: u32) -> Result<Waveform> {
    if s.kind != TransformKind::Stdct {
        return Err(Error::usage("istdct needs an STDCT spectrogram"));
    }
    let kernel = CosineKernel::new(s.config, s.signal_len)?;
    check_plane_shape(s, kernel.framing.n, kernel.framing.frames)?;
    Waveform::new(kernel.synthesize(s.magnitude.data())?, sample_rate)
}

/// Dispatches on `kind`.
pub fn transform(w: &Waveform, cfg: StftConfig, kind: TransformKind) -> Result<Spectrogram> {
    match kind {
        TransformKind::Stft => stft(w, cfg),
        TransformKind::Stdct => stdct(w, cfg),
    }
}

/// Inverse of whichever transform produced `s`.
pub fn inverse(s: &Spectrogram, sample_rate: u32) -> Result<Waveform> {
    match s.kind {
        TransformKind::Stft => istft(s, sample_rate),
        TransformKind::Stdct => istdct(s, sample_rate),
    }
}

fn check_plane_shape(s: &Spectrogram, f: usize, t: usize) -> Result<()> {
    if s.magnitude.shape() != (f, t) || s.phase.shape() != (f, t) {
        return Err(Error::config(format!(
            "spectrogram planes {:?}/{:?} do not match the {f}x{t} expected for {} samples",
            s.magnitude.shape(),
            s.phase.shape(),
            s.signal_len
        )));
    }
    Ok(())
}

/// Full `N`-bin spectrum of every frame, Nyquist included. Used for energy
/// diagnostics.
pub fn frame_spectra(w: &Waveform, cfg: StftConfig) -> Result<Vec<Vec<Complex<f64>>>> {
    Ok(FourierKernel::new(cfg, w.len())?.frame_spectra(&w.samples))
}

/// Windowed time-domain frames, as seen by the transforms.
pub fn windowed_frames(w: &Waveform, cfg: StftConfig) -> Result<Vec<Vec<f64>>> {
    let framing = Framing::new(cfg, w.len())?;
    Ok((0..framing.frames)
        .map(|m| {
            let mut f = vec![0.0; framing.n];
            framing.frame(&w.samples, m, &mut f);
            f
        })
        .collect())
}

/// `log(1 + |magnitude|)` scaled to `[0, 1]` by its maximum.
pub fn log_view(s: &Spectrogram) -> Plane {
    let logged = s.magnitude.map(|v| v.abs().ln_1p());
    let max = logged.data().iter().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        logged.map(|v| v / max)
    } else {
        logged
    }
}

/// 8-bit raster of a `[0, 1]` view with the lowest frequency on the bottom
/// row.
pub fn raster(view: &Plane) -> (usize, usize, Vec<u8>) {
    let (rows, cols) = view.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            out.push((view.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    (cols, rows, out)
}

/// STFT on the tape: `[len]` waveform to `[2, F, T]` (magnitude; phase).
pub fn stft_op<'t>(x: Var<'t>, cfg: StftConfig) -> Result<Var<'t>> {
    let xv = x.value();
    if xv.shape().len() != 1 {
        return Err(Error::config(format!(
            "stft_op expects a 1-D waveform, got {:?}",
            xv.shape()
        )));
    }
    let kernel = FourierKernel::new(cfg, xv.len())?;
    let (re, im) = kernel.analyze(xv.data());
    let (f, t) = (kernel.bins(), kernel.framing.frames);
    let mut out = Vec::with_capacity(2 * f * t);
    out.extend(re.iter().zip(&im).map(|(a, b)| a.hypot(*b)));
    out.extend(re.iter().zip(&im).map(|(a, b)| wrap_phase(*a, *b)));
    Ok(x.tape().custom(
        &[x],
        Tensor::raw(vec![2, f, t], out),
        move |args| {
            let n = f * t;
            let (dm, dp) = args.grad.split_at(n);
            let mut dre = vec![0.0; n];
            let mut dim = vec![0.0; n];
            for i in 0..n {
                let (a, b) = (re[i], im[i]);
                let r2 = a * a + b * b;
                if r2 <= POLAR_EPS * POLAR_EPS {
                    continue;
                }
                let r = r2.sqrt();
                dre[i] = dm[i] * a / r - dp[i] * b / r2;
                dim[i] = dm[i] * b / r + dp[i] * a / r2;
            }
            vec![Some(kernel.analyze_adjoint(&dre, &dim))]
        },
    ))
}

/// Inverse STFT on the tape: `[2, F, T]` (magnitude; phase) to `[len]`.
pub fn istft_op<'t>(s: Var<'t>, cfg: StftConfig, len: usize) -> Result<Var<'t>> {
    let sv = s.value();
    let kernel = FourierKernel::new(cfg, len)?;
    let (f, t) = (kernel.bins(), kernel.framing.frames);
    if sv.shape() != [2, f, t] {
        return Err(Error::config(format!(
            "istft_op expects [2, {f}, {t}], got {:?}",
            sv.shape()
        )));
    }
    let (mag, phase) = sv.data().split_at(f * t);
    let re: Vec<f64> = mag.iter().zip(phase).map(|(m, p)| m * p.cos()).collect();
    let im: Vec<f64> = mag.iter().zip(phase).map(|(m, p)| m * p.sin()).collect();
    let y = kernel.synthesize(&re, &im)?;
    Ok(s.tape().custom(&[s], Tensor::raw(vec![len], y), move |args| {
        let (dre, dim) = kernel.synthesize_adjoint(args.grad);
        let sv = &args.inputs[0];
        let (mag, phase) = sv.data().split_at(f * t);
        let mut g = vec![0.0; 2 * f * t];
        for i in 0..f * t {
            let (c, sn) = (phase[i].cos(), phase[i].sin());
            g[i] = dre[i] * c + dim[i] * sn;
            g[f * t + i] = mag[i] * (dim[i] * c - dre[i] * sn);
        }
        vec![Some(g)]
    }))
}

/// STDCT on the tape: `[len]` waveform to `[1, N, T]` coefficients.
pub fn stdct_op<'t>(x: Var<'t>, cfg: StftConfig) -> Result<Var<'t>> {
    let xv = x.value();
    if xv.shape().len() != 1 {
        return Err(Error::config(format!(
            "stdct_op expects a 1-D waveform, got {:?}",
            xv.shape()
        )));
    }
    let kernel = CosineKernel::new(cfg, xv.len())?;
    let out = kernel.analyze(xv.data());
    let (n, t) = (kernel.framing.n, kernel.framing.frames);
    Ok(x.tape()
        .custom(&[x], Tensor::raw(vec![1, n, t], out), move |args| {
            vec![Some(kernel.analyze_adjoint(args.grad))]
        }))
}

/// Inverse STDCT on the tape: `[1, N, T]` coefficients to `[len]`.
pub fn istdct_op<'t>(s: Var<'t>, cfg: StftConfig, len: usize) -> Result<Var<'t>> {
    let sv = s.value();
    let kernel = CosineKernel::new(cfg, len)?;
    let (n, t) = (kernel.framing.n, kernel.framing.frames);
    if sv.shape() != [1, n, t] {
        return Err(Error::config(format!(
            "istdct_op expects [1, {n}, {t}], got {:?}",
            sv.shape()
        )));
    }
    let y = kernel.synthesize(sv.data())?;
    Ok(s.tape().custom(&[s], Tensor::raw(vec![len], y), move |args| {
        vec![Some(kernel.synthesize_adjoint(args.grad))]
    }))
}
