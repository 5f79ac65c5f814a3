#![allow(dead_code)]

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stegowav::dsp::{StftConfig, Waveform};

pub const SR: u32 = 16_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, SR).unwrap()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// One row per frame: the real Nyquist coefficient of that frame as a
/// linear functional of the unpadded signal.
fn nyquist_rows(len: usize, cfg: StftConfig) -> Vec<Vec<f64>> {
    let (r, pad) = (cfg.hop(), cfg.lead_pad());
    let w = cfg.window();
    let frames = cfg.frame_count(len).unwrap();
    (0..frames)
        .map(|m| {
            let mut row = vec![0.0; len];
            for (j, &wj) in w.iter().enumerate() {
                let p = m * r + j;
                if p >= pad && p - pad < len {
                    row[p - pad] = if j % 2 == 0 { wj } else { -wj };
                }
            }
            row
        })
        .filter(|row| row.iter().any(|v| v.abs() > 1e-12))
        .collect()
}

/// Orthogonal projection of `x` onto the signals whose every frame has a
/// zero Nyquist coefficient, i.e. the signals the STFT represents exactly.
pub fn nyquist_free(x: &[f64], cfg: StftConfig) -> Vec<f64> {
    let c = nyquist_rows(x.len(), cfg);
    let k = c.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut g: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&c[i], &c[j])).collect()).collect();
    let mut y: Vec<f64> = c.iter().map(|row| dot(row, x)).collect();
    // Cholesky solve of G·a = C·x.
    for j in 0..k {
        let d = (g[j][j] - (0..j).map(|p| g[j][p] * g[j][p]).sum::<f64>()).sqrt();
        g[j][j] = d;
        for i in j + 1..k {
            let s = g[i][j] - (0..j).map(|p| g[i][p] * g[j][p]).sum::<f64>();
            g[i][j] = s / d;
        }
    }
    for i in 0..k {
        y[i] = (y[i] - (0..i).map(|p| g[i][p] * y[p]).sum::<f64>()) / g[i][i];
    }
    for i in (0..k).rev() {
        y[i] = (y[i] - (i + 1..k).map(|p| g[p][i] * y[p]).sum::<f64>()) / g[i][i];
    }
    let mut out = x.to_vec();
    for (row, a) in c.iter().zip(&y) {
        for (o, v) in out.iter_mut().zip(row) {
            *o -= a * v;
        }
    }
    out
}

/// Largest Nyquist coefficient magnitude over all frames.
pub fn max_nyquist(x: &[f64], cfg: StftConfig) -> f64 {
    nyquist_rows(x.len(), cfg)
        .iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Waveform round trips for the transform sweep, with the worst relative
/// L2 error per transform kind: (stft, stdct).
pub fn round_trip_sweep(seeds: u64) -> (f64, f64) {
    use stegowav::dsp::{istdct, istft, stdct, stft};
    let (mut worst_f, mut worst_c) = (0.0f64, 0.0f64);
    for n in [16, 64, 256] {
        for r in [n / 4, n / 2] {
            let cfg = StftConfig::new(n, r).unwrap();
            for seed in 0..seeds {
                let len = n * (3 + seed as usize % 5) + seed as usize * 7 % n;
                let raw = white(len, seed * 1000 + n as u64 + r as u64);
                let x = wave(nyquist_free(&raw, cfg));
                let y = istft(&stft(&x, cfg).unwrap(), SR).unwrap();
                worst_f = worst_f.max(rel_l2(&y.samples, &x.samples));
                let x = wave(raw);
                let y = istdct(&stdct(&x, cfg).unwrap(), SR).unwrap();
                worst_c = worst_c.max(rel_l2(&y.samples, &x.samples));
            }
        }
    }
    (worst_f, worst_c)
}

/// Squared-difference costs of every monotone alignment path.
pub fn path_costs(x: &[f64], y: &[f64]) -> Vec<f64> {
    fn walk(i: usize, j: usize, acc: f64, x: &[f64], y: &[f64], out: &mut Vec<f64>) {
        let acc = acc + (x[i] - y[j]).powi(2);
        if i + 1 == x.len() && j + 1 == y.len() {
            out.push(acc);
            return;
        }
        if i + 1 < x.len() {
            walk(i + 1, j, acc, x, y, out);
        }
        if j + 1 < y.len() {
            walk(i, j + 1, acc, x, y, out);
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(i + 1, j + 1, acc, x, y, out);
        }
    }
    let mut out = Vec::new();
    walk(0, 0, 0.0, x, y, &mut out);
    out
}

/// `(soft, hard)` DTW by explicit enumeration.
pub fn dtw_by_enumeration(x: &[f64], y: &[f64], gamma: f64) -> (f64, f64) {
    let costs = path_costs(x, y);
    let hard = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let s: f64 = costs.iter().map(|c| (-(c - hard) / gamma).exp()).sum();
    (hard - gamma * s.ln(), hard)
}
