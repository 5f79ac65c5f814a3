//! Image and audio quality metrics.

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::imageops::RgbImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const HISTOGRAM_BINS: usize = 256;

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::usage(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit dynamic range; `+∞` on equality.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over valid windows of one `h × w` channel pair.
pub fn ssim_channel(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::usage("channel data does not match its extents"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::usage(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wt = g[dy] * g[dx];
                    let i = (y + dy) * w + x + dx;
                    let (p, q) = (a[i], b[i]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// SSIM averaged over the three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    let mut s = 0.0;
    for c in 0..3 {
        s += ssim_channel(a.channel(c), b.channel(c), h, w)?;
    }
    Ok(s / 3.0)
}

/// `10·log10(Σw² / Σ(w−w')²)` with `reference` in the numerator.
pub fn snr_db(reference: &Waveform, test: &Waveform) -> Result<f64> {
    snr_db_slices(&reference.samples, &test.samples)
}

pub fn snr_db_slices(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::usage(format!(
            "waveform lengths differ: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::usage("reference waveform has zero energy"));
    }
    let noise: f64 = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    })
}

/// Per-channel densities over 8-bit levels.
pub fn rgb_histogram(img: &RgbImage) -> [Vec<f64>; 3] {
    let n = (img.height() * img.width()) as f64;
    std::array::from_fn(|c| {
        let mut h = vec![0.0; HISTOGRAM_BINS];
        for &v in img.channel(c) {
            h[crate::formats::to_u8(v) as usize] += 1.0;
        }
        h.iter_mut().for_each(|x| *x /= n);
        h
    })
}

/// L1 distance between histograms, averaged over channels.
pub fn histogram_l1(a: &[Vec<f64>; 3], b: &[Vec<f64>; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum::<f64>()
        / 3.0
}

/// One evaluation row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub container: String,
    pub beta: f64,
    pub lambda: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub snr_db: f64,
    pub waveform_loss: f64,
    pub hist_l1: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "method,container,beta,lambda,ssim,psnr_db,snr_db,waveform_loss,hist_l1";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.container,
            self.beta,
            self.lambda,
            self.ssim,
            self.psnr_db,
            self.snr_db,
            self.waveform_loss,
            self.hist_l1
        )
    }
}
