//! File formats: binary pixmaps (P5/P6) and 16-bit PCM mono WAV.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::imageops::RgbImage;
use crate::plane::Plane;

/// 8-bit quantisation of a `[0, 1]` value.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn format_err(path: &str, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_u8(img.get(c, y, x)));
            }
        }
    }
    out
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &str) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(format_err(path, 0, "file too short for a pixmap header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(path, pos, "missing whitespace after header")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(path, 2, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(
            path,
            2,
            format!("only 8-bit pixmaps are supported (maxval {maxval})"),
        ));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<RgbImage> {
    let h = parse_header(bytes, path)?;
    if &h.magic != b"P6" {
        return Err(format_err(path, 0, "not a binary pixmap (expected P6)"));
    }
    let need = 3 * h.width * h.height;
    let body = &bytes[h.data_offset..];
    if body.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", body.len()),
        ));
    }
    let scale = h.maxval as f64;
    Ok(RgbImage::from_fn(h.height, h.width, |c, y, x| {
        body[3 * (y * h.width + x) + c] as f64 / scale
    }))
}

/// Grayscale pixmap as a plane in `[0, 1]`, top row first.
pub fn decode_pgm(bytes: &[u8], path: &str) -> Result<Plane> {
    let h = parse_header(bytes, path)?;
    if &h.magic != b"P5" {
        return Err(format_err(path, 0, "not a binary graymap (expected P5)"));
    }
    let need = h.width * h.height;
    let body = &bytes[h.data_offset..];
    if body.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", body.len()),
        ));
    }
    let scale = h.maxval as f64;
    Ok(Plane::from_fn(h.height, h.width, |y, x| {
        body[y * h.width + x] as f64 / scale
    }))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read(path)?, &path.display().to_string())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_bytes(path, &encode_pgm(width, height, pixels))
}

/// Rounds half away from zero and clips to the 16-bit range.
pub fn quantize_pcm16(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)
            .map_err(|e| Error::config(format!("cannot start WAV stream: {e}")))?;
        for &s in &w.samples {
            writer
                .write_sample(quantize_pcm16(s))
                .map_err(|e| Error::config(format!("cannot write WAV sample: {e}")))?;
        }
        writer
            .finalize()
            .map_err(|e| Error::config(format!("cannot finish WAV stream: {e}")))?;
    }
    Ok(cursor.into_inner())
}

pub fn decode_wav(bytes: &[u8], path: &str) -> Result<Waveform> {
    let reader = hound::WavReader::new(Cursor::new(bytes))
        .map_err(|e| format_err(path, 0, format!("invalid WAV header: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(format_err(
            path,
            0,
            format!(
                "expected 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let data_start = bytes.len() - 2 * reader.len() as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize);
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(|e| format_err(path, data_start + 2 * i, format!("bad sample {i}: {e}")))?;
        samples.push(s as f64 / 32768.0);
    }
    Waveform::new(samples, spec.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&read(path)?, &path.display().to_string())
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    write_bytes(path, &encode_wav(w)?)
}
