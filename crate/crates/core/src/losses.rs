//! Distances and the composite training objectives.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Sequences longer than this are compared chunk by chunk in [`soft_dtw`].
pub const SOFT_DTW_CHUNK_THRESHOLD: usize = 4096;
pub const SOFT_DTW_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WaveLoss {
    L1,
    SoftDtw,
}

impl WaveLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveLoss::L1 => "l1",
            WaveLoss::SoftDtw => "soft_dtw",
        }
    }
}

impl std::str::FromStr for WaveLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(WaveLoss::L1),
            "soft_dtw" | "dtw" => Ok(WaveLoss::SoftDtw),
            other => Err(Error::usage(format!(
                "unknown waveform loss '{other}' (expected l1 or soft_dtw)"
            ))),
        }
    }
}

/// Which spectral plane(s) carry the watermark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContainerKind {
    Magnitude,
    Phase,
    Dual,
}

impl ContainerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContainerKind::Magnitude => "magnitude",
            ContainerKind::Phase => "phase",
            ContainerKind::Dual => "dual",
        }
    }
}

impl std::str::FromStr for ContainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(ContainerKind::Magnitude),
            "phase" => Ok(ContainerKind::Phase),
            "dual" => Ok(ContainerKind::Dual),
            other => Err(Error::usage(format!(
                "unknown container '{other}' (expected magnitude, phase or dual)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda: f64,
    /// Phase share of the spectral term; dual containers only.
    pub theta: f64,
    /// Soft-DTW smoothing.
    pub gamma: f64,
    pub waveform_loss: WaveLoss,
    pub container: ContainerKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.75,
            lambda: 1.0,
            theta: 0.5,
            gamma: 1.0,
            waveform_loss: WaveLoss::L1,
            container: ContainerKind::Magnitude,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn same_len(a: Var<'_>, b: Var<'_>, what: &str) -> Result<usize> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::config(format!("{what}: shapes {sa:?} and {sb:?} differ")));
    }
    Ok(sa.iter().product())
}

/// Mean absolute difference.
pub fn l1<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let n = same_len(a, b, "l1")?;
    Ok(a.sub(b)?.abs_sum().scale(1.0 / n as f64))
}

/// Root mean squared difference.
pub fn l2<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let n = same_len(a, b, "l2")?;
    Ok(a.sub(b)?.sq_sum().scale(1.0 / n as f64).sqrt())
}

/// `-γ log Σ exp(-s/γ)` with max shift.
fn softmin(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * sum.ln()
}

/// Forward table with an infinite border; `r[(i, j)]` at `i * (m + 2) + j`.
struct DtwTable {
    n: usize,
    m: usize,
    r: Vec<f64>,
}

impl DtwTable {
    fn forward(x: &[f64], y: &[f64], gamma: f64) -> Self {
        let (n, m) = (x.len(), y.len());
        let stride = m + 2;
        let mut r = vec![f64::INFINITY; (n + 2) * stride];
        r[0] = 0.0;
        for i in 1..=n {
            for j in 1..=m {
                let d = (x[i - 1] - y[j - 1]).powi(2);
                r[i * stride + j] = d + softmin(
                    r[(i - 1) * stride + j],
                    r[i * stride + j - 1],
                    r[(i - 1) * stride + j - 1],
                    gamma,
                );
            }
        }
        DtwTable { n, m, r }
    }

    fn value(&self) -> f64 {
        self.r[self.n * (self.m + 2) + self.m]
    }

    /// Alignment expectations `E[i][j]` for `1 <= i <= n`, `1 <= j <= m`,
    /// returned as an `n × m` row-major matrix.
    fn alignment(&self, x: &[f64], y: &[f64], gamma: f64) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let stride = m + 2;
        let mut r = self.r.clone();
        for i in 1..=n {
            r[i * stride + m + 1] = f64::NEG_INFINITY;
        }
        for j in 1..=m {
            r[(n + 1) * stride + j] = f64::NEG_INFINITY;
        }
        r[(n + 1) * stride + m + 1] = r[n * stride + m];
        let d = |i: usize, j: usize| -> f64 {
            if i > n || j > m {
                0.0
            } else {
                (x[i - 1] - y[j - 1]).powi(2)
            }
        };
        let mut e = vec![0.0; (n + 2) * stride];
        e[(n + 1) * stride + m + 1] = 1.0;
        for j in (1..=m).rev() {
            for i in (1..=n).rev() {
                let rij = r[i * stride + j];
                let a = ((r[(i + 1) * stride + j] - rij - d(i + 1, j)) / gamma).exp();
                let b = ((r[i * stride + j + 1] - rij - d(i, j + 1)) / gamma).exp();
                let c = ((r[(i + 1) * stride + j + 1] - rij - d(i + 1, j + 1)) / gamma).exp();
                e[i * stride + j] = e[(i + 1) * stride + j] * a
                    + e[i * stride + j + 1] * b
                    + e[(i + 1) * stride + j + 1] * c;
            }
        }
        let mut out = vec![0.0; n * m];
        for i in 1..=n {
            out[(i - 1) * m..i * m].copy_from_slice(&e[i * stride + 1..i * stride + 1 + m]);
        }
        out
    }
}

fn check_dtw_inputs(x: &[f64], y: &[f64], gamma: f64) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::usage("soft-DTW needs non-empty sequences"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("soft-DTW gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Chunk boundaries shared by both sequences.
fn dtw_chunks(n: usize, m: usize) -> Result<Vec<(usize, usize, usize, usize)>> {
    if n.max(m) <= SOFT_DTW_CHUNK_THRESHOLD {
        return Ok(vec![(0, n, 0, m)]);
    }
    if n != m {
        return Err(Error::config(format!(
            "chunked soft-DTW needs equal lengths, got {n} and {m}"
        )));
    }
    Ok((0..n)
        .step_by(SOFT_DTW_CHUNK)
        .map(|s| {
            let e = (s + SOFT_DTW_CHUNK).min(n);
            (s, e, s, e)
        })
        .collect())
}

/// Soft-DTW discrepancy with squared-difference cost.
///
/// Sequences longer than [`SOFT_DTW_CHUNK_THRESHOLD`] are split into
/// consecutive non-overlapping chunks of [`SOFT_DTW_CHUNK`] samples and the
/// chunk values summed.
pub fn soft_dtw_value(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    check_dtw_inputs(x, y, gamma)?;
    Ok(dtw_chunks(x.len(), y.len())?
        .into_iter()
        .map(|(a, b, c, d)| DtwTable::forward(&x[a..b], &y[c..d], gamma).value())
        .sum())
}

/// Value and gradients with respect to both sequences.
pub fn soft_dtw_grad(x: &[f64], y: &[f64], gamma: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dtw_inputs(x, y, gamma)?;
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    let mut total = 0.0;
    for (a, b, c, d) in dtw_chunks(x.len(), y.len())? {
        let (xs, ys) = (&x[a..b], &y[c..d]);
        let table = DtwTable::forward(xs, ys, gamma);
        total += table.value();
        let e = table.alignment(xs, ys, gamma);
        let m = ys.len();
        for (i, xi) in xs.iter().enumerate() {
            for (j, yj) in ys.iter().enumerate() {
                let g = 2.0 * e[i * m + j] * (xi - yj);
                gx[a + i] += g;
                gy[c + j] -= g;
            }
        }
    }
    Ok((total, gx, gy))
}

/// [`soft_dtw_value`] on the tape; inputs are flattened.
pub fn soft_dtw<'t>(x: Var<'t>, y: Var<'t>, gamma: f64) -> Result<Var<'t>> {
    let (xv, yv) = (x.value(), y.value());
    let value = soft_dtw_value(xv.data(), yv.data(), gamma)?;
    Ok(x.tape()
        .custom(&[x, y], Tensor::scalar(value), move |args| {
            let g = args.grad[0];
            let (_, gx, gy) = soft_dtw_grad(args.inputs[0].data(), args.inputs[1].data(), gamma)
                .expect("inputs validated in forward");
            vec![
                Some(gx.into_iter().map(|v| v * g).collect()),
                Some(gy.into_iter().map(|v| v * g).collect()),
            ]
        }))
}

/// Classic DTW with squared-difference cost.
pub fn hard_dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::usage("DTW needs non-empty sequences"));
    }
    let m = y.len();
    let stride = m + 1;
    let mut r = vec![f64::INFINITY; (x.len() + 1) * stride];
    r[0] = 0.0;
    for i in 1..=x.len() {
        for j in 1..=m {
            let best = r[(i - 1) * stride + j]
                .min(r[i * stride + j - 1])
                .min(r[(i - 1) * stride + j - 1]);
            r[i * stride + j] = (x[i - 1] - y[j - 1]).powi(2) + best;
        }
    }
    Ok(r[x.len() * stride + m])
}

/// Tensors entering [`composite_loss`].
pub struct LossInputs<'t> {
    pub secret: Var<'t>,
    pub revealed: Var<'t>,
    pub cover: Var<'t>,
    pub stego: Var<'t>,
    /// Active container plane (magnitude, phase, or magnitude for dual).
    pub container: Var<'t>,
    pub stego_container: Var<'t>,
    /// Phase planes; required for dual containers.
    pub phase: Option<(Var<'t>, Var<'t>)>,
}

/// Objective value with its unweighted terms.
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    pub image_l1: f64,
    pub wave: f64,
    pub mag_l2: f64,
    pub phase_l2: f64,
}

impl LossTerms<'_> {
    /// `(name, value)` for every reported term, total first.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("total", self.total.item()),
            ("image_l1", self.image_l1),
            ("wave_term", self.wave),
            ("mag_l2", self.mag_l2),
            ("phase_l2", self.phase_l2),
        ]
    }
}

/// Single container: `β‖s−s'‖₁ + λ·wave(w, w') + (1−β)‖M−M'‖₂`.
///
/// Dual container:
/// `β‖s−s'‖₁ + λ‖w−w'‖₁ + (1−β)[(1−θ)‖M−M'‖₂ + θ‖P−P'‖₂]`.
pub fn composite_loss<'t>(cfg: &LossConfig, x: &LossInputs<'t>) -> Result<LossTerms<'t>> {
    let image = l1(x.secret, x.revealed)?;
    let spectral = l2(x.container, x.stego_container)?;
    let (wave, phase, spectral_total) = match cfg.container {
        ContainerKind::Dual => {
            let (p, p_hat) = x
                .phase
                .ok_or_else(|| Error::usage("dual container loss needs phase planes"))?;
            let phase = l2(p, p_hat)?;
            let mixed = spectral
                .scale(1.0 - cfg.theta)
                .add(phase.scale(cfg.theta))?;
            (l1(x.cover, x.stego)?, Some(phase), mixed)
        }
        ContainerKind::Magnitude | ContainerKind::Phase => {
            let wave = match cfg.waveform_loss {
                WaveLoss::L1 => l1(x.cover, x.stego)?,
                WaveLoss::SoftDtw => soft_dtw(x.cover, x.stego, cfg.gamma)?,
            };
            (wave, None, spectral)
        }
    };
    let total = image
        .scale(cfg.beta)
        .add(wave.scale(cfg.lambda))?
        .add(spectral_total.scale(1.0 - cfg.beta))?;
    Ok(LossTerms {
        total,
        image_l1: image.item(),
        wave: wave.item(),
        mag_l2: spectral.item(),
        phase_l2: phase.map_or(0.0, |p| p.item()),
    })
}
