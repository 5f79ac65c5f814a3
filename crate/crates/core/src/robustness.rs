//! Temporal frame dropout on stego spectrograms.

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::imageops::RgbImage;
use crate::model::ModelBundle;
use crate::networks::seeded_rng;
use crate::pipeline::{analyse, embed_full, reveal_spectrogram, score_image, SamplePair};

pub const DEFAULT_FRACTIONS: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.125];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    /// A contiguous run of frames ending `offset` frames before the end.
    Sequential,
    /// A seeded uniform subset of frames.
    Random,
}

impl DropoutMode {
    pub const ALL: [DropoutMode; 2] = [DropoutMode::Sequential, DropoutMode::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            DropoutMode::Sequential => "sequential",
            DropoutMode::Random => "random",
        }
    }
}

impl std::str::FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(DropoutMode::Sequential),
            "random" => Ok(DropoutMode::Random),
            _ => Err(Error::usage(format!("unknown dropout mode '{s}' (sequential, random)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub keep_fraction: f64,
    pub mode: DropoutMode,
    pub seed: u64,
    /// Sequential mode: frames kept after the dropped run.
    pub offset: usize,
}

impl DropoutSpec {
    pub fn new(keep_fraction: f64, mode: DropoutMode, seed: u64) -> Result<Self> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::usage(format!(
                "keep fraction {keep_fraction} is outside (0, 1]"
            )));
        }
        Ok(DropoutSpec {
            keep_fraction,
            mode,
            seed,
            offset: 0,
        })
    }

    pub fn dropped_count(&self, frames: usize) -> usize {
        ((1.0 - self.keep_fraction) * frames as f64).round() as usize
    }

    /// Indices of the frames to zero, ascending.
    pub fn dropped_frames(&self, frames: usize) -> Result<Vec<usize>> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::usage(format!(
                "keep fraction {} is outside (0, 1]",
                self.keep_fraction
            )));
        }
        let d = self.dropped_count(frames);
        match self.mode {
            DropoutMode::Sequential => {
                if d + self.offset > frames {
                    return Err(Error::usage(format!(
                        "offset {} leaves no room to drop {d} of {frames} frames",
                        self.offset
                    )));
                }
                let end = frames - self.offset;
                Ok((end - d..end).collect())
            }
            DropoutMode::Random => {
                let mut idx = sample(&mut seeded_rng(self.seed), frames, d).into_vec();
                idx.sort_unstable();
                Ok(idx)
            }
        }
    }
}

/// Zeroes the magnitude of the selected frames; phase is kept.
pub fn apply_frame_dropout(s: &Spectrogram, spec: &DropoutSpec) -> Result<Spectrogram> {
    let mut out = s.clone();
    let frames = s.frames();
    for m in spec.dropped_frames(frames)? {
        for k in 0..s.bins() {
            out.magnitude.set(k, m, 0.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub mode: DropoutMode,
    pub keep_fraction: f64,
    pub mean_ssim: f64,
    pub mean_psnr_db: f64,
}

impl SweepRow {
    pub const HEADER: &'static str = "method,mode,keep_fraction,mean_ssim,mean_psnr_db";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method,
            self.mode.as_str(),
            self.keep_fraction,
            self.mean_ssim,
            self.mean_psnr_db
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SweepRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// One sweep cell with its revealed images, in data order.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub row: SweepRow,
    pub revealed: Vec<RgbImage>,
}

/// Embeds every sample once, then decodes each (mode, fraction) attack.
/// Rows are ordered mode-major, fractions in the given order.
pub fn robustness_cells(
    m: &ModelBundle,
    data: &[SamplePair],
    fractions: &[f64],
    modes: &[DropoutMode],
    seed: u64,
    offset: usize,
) -> Result<Vec<SweepCell>> {
    if data.is_empty() {
        return Err(Error::usage("sweep needs at least one sample"));
    }
    let specs: Vec<DropoutSpec> = modes
        .iter()
        .flat_map(|&mode| fractions.iter().map(move |&p| (mode, p)))
        .map(|(mode, p)| {
            Ok(DropoutSpec {
                offset: if mode == DropoutMode::Sequential { offset } else { 0 },
                ..DropoutSpec::new(p, mode, seed)?
            })
        })
        .collect::<Result<_>>()?;
    let stego: Vec<Spectrogram> = data
        .par_iter()
        .map(|p| analyse(&embed_full(&p.secret, &p.cover, m)?.stego, m))
        .collect::<Result<_>>()?;
    specs
        .par_iter()
        .map(|spec| {
            let (mut ssim, mut psnr) = (0.0, 0.0);
            let mut revealed = Vec::with_capacity(data.len());
            for (pair, s) in data.iter().zip(&stego) {
                let img = reveal_spectrogram(&apply_frame_dropout(s, spec)?, m)?;
                let sc = score_image(&pair.secret, &img)?;
                ssim += sc.ssim;
                psnr += sc.psnr_db;
                revealed.push(img);
            }
            let n = data.len() as f64;
            Ok(SweepCell {
                row: SweepRow {
                    method: m.config.method.as_str().to_string(),
                    mode: spec.mode,
                    keep_fraction: spec.keep_fraction,
                    mean_ssim: ssim / n,
                    mean_psnr_db: psnr / n,
                },
                revealed,
            })
        })
        .collect()
}

pub fn robustness_sweep(
    m: &ModelBundle,
    data: &[SamplePair],
    fractions: &[f64],
    modes: &[DropoutMode],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    Ok(robustness_cells(m, data, fractions, modes, seed, 0)?
        .into_iter()
        .map(|c| c.row)
        .collect())
}
