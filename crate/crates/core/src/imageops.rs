//! Colour conversion, pixel shuffle with luma buffering, bilinear resizing and
//! replica-grid packing.
//!
//! A shuffled plane stores every source pixel as a 2×2 cell:
//!
//! ```text
//! R G
//! B Y
//! ```
//!
//! where `Y` is the JPEG luma of the pixel, or 0 when luma buffering is off.

use crate::autodiff::{concat, Tensor, Var};
use crate::error::{Error, Result};
use crate::plane::Plane;

/// JPEG luma coefficients.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Three `[0, 1]` planes stored channel-major (`[3, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// Values are clamped to `[0, 1]`; NaN is rejected.
    pub fn new(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::config(format!(
                "{height}x{width} RGB image cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::config("image contains NaN"));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        RgbImage {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        RgbImage::from_fn(height, width, |c, _, _| rgb[c])
    }

    /// Clamps a `[3, H, W]` tensor into an image.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [3, h, w] => RgbImage::new(*h, *w, t.data().to_vec()),
            other => Err(Error::config(format!(
                "expected a [3, H, W] tensor, got {other:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::raw(vec![3, self.height, self.width], self.data.clone())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
        }
    }
}

/// Single-plane image of size `2H × 2W` produced by [`shuffle`].
pub type PlaneImage = Plane;

/// Written as offsets from green, so gray pixels map to themselves exactly.
pub fn luma(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    g + LUMA[0] * (r - g) + LUMA[2] * (b - g)
}

const CB_SCALE: f64 = 0.5 / (1.0 - LUMA[2]);
const CR_SCALE: f64 = 0.5 / (1.0 - LUMA[0]);

/// Full-range JPEG conversion.
pub fn rgb_to_ycbcr(rgb: [f64; 3]) -> [f64; 3] {
    let [r, _, b] = rgb;
    let y = luma(rgb);
    [y, (b - y) * CB_SCALE + 0.5, (r - y) * CR_SCALE + 0.5]
}

/// Exact inverse of [`rgb_to_ycbcr`], clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(ycc: [f64; 3]) -> [f64; 3] {
    let [y, cb, cr] = ycc;
    let dr = (cr - 0.5) / CR_SCALE;
    let db = (cb - 0.5) / CB_SCALE;
    let dg = -(LUMA[0] * dr + LUMA[2] * db) / LUMA[1];
    [(y + dr).clamp(0.0, 1.0), (y + dg).clamp(0.0, 1.0), (y + db).clamp(0.0, 1.0)]
}

/// Rearranges `H×W×3` into a `2H×2W` plane of `[R, G; B, Y]` cells.
pub fn shuffle(s: &RgbImage, with_luma: bool) -> PlaneImage {
    let (h, w) = (s.height, s.width);
    let mut p = Plane::zeros(2 * h, 2 * w);
    for y in 0..h {
        for x in 0..w {
            let px = s.pixel(y, x);
            p.set(2 * y, 2 * x, px[0]);
            p.set(2 * y, 2 * x + 1, px[1]);
            p.set(2 * y + 1, 2 * x, px[2]);
            if with_luma {
                p.set(2 * y + 1, 2 * x + 1, luma(px));
            }
        }
    }
    p
}

/// Inverse of [`shuffle`].
///
/// With luma, each pixel's luma is replaced by the average of the buffered
/// value and the one implied by its RGB slots while chroma is kept, which
/// amounts to adding `(Yr - Yc) / 2` to every channel.
pub fn unshuffle(p: &PlaneImage, with_luma: bool) -> Result<RgbImage> {
    let (rows, cols) = p.shape();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::config(format!(
            "shuffled plane must have even extents, got {rows}x{cols}"
        )));
    }
    let (h, w) = (rows / 2, cols / 2);
    let mut out = RgbImage::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let rgb = [
                p.get(2 * y, 2 * x),
                p.get(2 * y, 2 * x + 1),
                p.get(2 * y + 1, 2 * x),
            ];
            let px = if with_luma {
                let yr = p.get(2 * y + 1, 2 * x + 1);
                let [yc, cb, cr] = rgb_to_ycbcr(rgb);
                ycbcr_to_rgb([(yr + yc) / 2.0, cb, cr])
            } else {
                rgb
            };
            out.set_pixel(y, x, px);
        }
    }
    Ok(out)
}

/// [`shuffle`] on the tape: `[3, H, W]` to `[1, 2H, 2W]`.
pub fn shuffle_op<'t>(x: Var<'t>, with_luma: bool) -> Result<Var<'t>> {
    let xv = x.value();
    let [3, h, w] = xv.shape()[..] else {
        return Err(Error::config(format!(
            "shuffle expects [3, H, W], got {:?}",
            xv.shape()
        )));
    };
    let n = h * w;
    let d = xv.data();
    let mut out = vec![0.0; 4 * n];
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            let (r, g, b) = (d[i], d[n + i], d[2 * n + i]);
            let top = 2 * y * 2 * w + 2 * xx;
            let bottom = top + 2 * w;
            out[top] = r;
            out[top + 1] = g;
            out[bottom] = b;
            if with_luma {
                out[bottom + 1] = luma([r, g, b]);
            }
        }
    }
    Ok(x.tape()
        .custom(&[x], Tensor::raw(vec![1, 2 * h, 2 * w], out), move |args| {
            let g = args.grad;
            let mut gx = vec![0.0; 3 * n];
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    let top = 2 * y * 2 * w + 2 * xx;
                    let bottom = top + 2 * w;
                    let gy = if with_luma { g[bottom + 1] } else { 0.0 };
                    gx[i] = g[top] + LUMA[0] * gy;
                    gx[n + i] = g[top + 1] + LUMA[1] * gy;
                    gx[2 * n + i] = g[bottom] + LUMA[2] * gy;
                }
            }
            vec![Some(gx)]
        }))
}

/// [`unshuffle`] on the tape without the final clamp: `[1, 2H, 2W]` to
/// `[3, H, W]`.
pub fn unshuffle_op<'t>(p: Var<'t>, with_luma: bool) -> Result<Var<'t>> {
    let pv = p.value();
    let [1, rows, cols] = pv.shape()[..] else {
        return Err(Error::config(format!(
            "unshuffle expects [1, 2H, 2W], got {:?}",
            pv.shape()
        )));
    };
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::config(format!(
            "shuffled plane must have even extents, got {rows}x{cols}"
        )));
    }
    let (h, w) = (rows / 2, cols / 2);
    let n = h * w;
    let d = pv.data();
    let mut out = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let top = 2 * y * cols + 2 * x;
            let bottom = top + cols;
            let rgb = [d[top], d[top + 1], d[bottom]];
            let shift = if with_luma {
                (d[bottom + 1] - luma(rgb)) / 2.0
            } else {
                0.0
            };
            for c in 0..3 {
                out[c * n + i] = rgb[c] + shift;
            }
        }
    }
    Ok(p.tape()
        .custom(&[p], Tensor::raw(vec![3, h, w], out), move |args| {
            let g = args.grad;
            let mut gp = vec![0.0; 4 * n];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let top = 2 * y * cols + 2 * x;
                    let bottom = top + cols;
                    let gc = [g[i], g[n + i], g[2 * n + i]];
                    let slots = [top, top + 1, bottom];
                    if with_luma {
                        let half_sum = (gc[0] + gc[1] + gc[2]) / 2.0;
                        for c in 0..3 {
                            gp[slots[c]] = gc[c] - LUMA[c] * half_sum;
                        }
                        gp[bottom + 1] = half_sum;
                    } else {
                        for c in 0..3 {
                            gp[slots[c]] = gc[c];
                        }
                    }
                }
            }
            vec![Some(gp)]
        }))
}

/// Interpolation taps for one output coordinate.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return Tap {
                    lo: 0,
                    hi: 0,
                    frac: 0.0,
                };
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Corner-aligned bilinear resampling of a `[h, w]` slab into `[h2, w2]`.
#[derive(Clone, Debug)]
struct Resampler {
    h: usize,
    w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Resampler {
    fn new(h: usize, w: usize, h2: usize, w2: usize) -> Self {
        Resampler {
            h,
            w,
            rows: taps(h, h2),
            cols: taps(w, w2),
        }
    }

    fn forward(&self, src: &[f64], dst: &mut [f64]) {
        let w2 = self.cols.len();
        for (i, r) in self.rows.iter().enumerate() {
            let lo = &src[r.lo * self.w..][..self.w];
            let hi = &src[r.hi * self.w..][..self.w];
            for (j, c) in self.cols.iter().enumerate() {
                let top = lo[c.lo] + c.frac * (lo[c.hi] - lo[c.lo]);
                let bottom = hi[c.lo] + c.frac * (hi[c.hi] - hi[c.lo]);
                dst[i * w2 + j] = top + r.frac * (bottom - top);
            }
        }
    }

    fn adjoint(&self, g: &[f64], out: &mut [f64]) {
        let w2 = self.cols.len();
        for (i, r) in self.rows.iter().enumerate() {
            for (j, c) in self.cols.iter().enumerate() {
                let gv = g[i * w2 + j];
                let (top, bottom) = ((1.0 - r.frac) * gv, r.frac * gv);
                out[r.lo * self.w + c.lo] += (1.0 - c.frac) * top;
                out[r.lo * self.w + c.hi] += c.frac * top;
                out[r.hi * self.w + c.lo] += (1.0 - c.frac) * bottom;
                out[r.hi * self.w + c.hi] += c.frac * bottom;
            }
        }
    }

    fn len_in(&self) -> usize {
        self.h * self.w
    }

    fn len_out(&self) -> usize {
        self.rows.len() * self.cols.len()
    }
}

/// Bilinear resize with corner-aligned sampling.
pub fn bilinear_resize(p: &Plane, rows: usize, cols: usize) -> Result<Plane> {
    if rows == 0 || cols == 0 {
        return Err(Error::config(format!(
            "resize target must be positive, got {rows}x{cols}"
        )));
    }
    let rs = Resampler::new(p.rows(), p.cols(), rows, cols);
    let mut out = vec![0.0; rows * cols];
    rs.forward(p.data(), &mut out);
    Plane::new(rows, cols, out)
}

/// [`bilinear_resize`] on the tape, applied to every depth slice of a
/// `[c, h, w]` tensor.
pub fn resize_op<'t>(x: Var<'t>, rows: usize, cols: usize) -> Result<Var<'t>> {
    let xv = x.value();
    let [c, h, w] = xv.shape()[..] else {
        return Err(Error::config(format!(
            "resize expects [c, h, w], got {:?}",
            xv.shape()
        )));
    };
    if rows == 0 || cols == 0 {
        return Err(Error::config(format!(
            "resize target must be positive, got {rows}x{cols}"
        )));
    }
    let rs = Resampler::new(h, w, rows, cols);
    let (ni, no) = (rs.len_in(), rs.len_out());
    let mut out = vec![0.0; c * no];
    for k in 0..c {
        rs.forward(&xv.data()[k * ni..][..ni], &mut out[k * no..][..no]);
    }
    Ok(x.tape()
        .custom(&[x], Tensor::raw(vec![c, rows, cols], out), move |args| {
            let mut gx = vec![0.0; c * ni];
            for k in 0..c {
                rs.adjoint(&args.grad[k * no..][..no], &mut gx[k * ni..][..ni]);
            }
            vec![Some(gx)]
        }))
}

/// Rectangular tiling of equally sized replicas over a container.
///
/// Replica `i` sits at grid row `i / cols`, column `i % cols`; grid row 0
/// covers the lowest frequencies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplicaGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_h: usize,
    pub cell_w: usize,
}

impl ReplicaGrid {
    pub fn new(rows: usize, cols: usize, cell_h: usize, cell_w: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || cell_h == 0 || cell_w == 0 {
            return Err(Error::config(format!(
                "replica grid {rows}x{cols} of {cell_h}x{cell_w} cells must be non-empty"
            )));
        }
        Ok(ReplicaGrid {
            rows,
            cols,
            cell_h,
            cell_w,
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// `(F, T)` of the container the grid fills.
    pub fn container_shape(&self) -> (usize, usize) {
        (self.rows * self.cell_h, self.cols * self.cell_w)
    }

    /// Top-left corner of replica `i`.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i / self.cols) * self.cell_h, (i % self.cols) * self.cell_w)
    }

    /// Frame range `[start, end)` covered by replica `i`.
    pub fn frame_span(&self, i: usize) -> (usize, usize) {
        let (_, c) = self.origin(i);
        (c, c + self.cell_w)
    }
}

pub fn pack_grid(replicas: &[Plane], g: ReplicaGrid) -> Result<Plane> {
    if replicas.len() != g.count() {
        return Err(Error::config(format!(
            "grid {}x{} needs {} replicas, got {}",
            g.rows,
            g.cols,
            g.count(),
            replicas.len()
        )));
    }
    let (f, t) = g.container_shape();
    let mut out = Plane::zeros(f, t);
    for (i, r) in replicas.iter().enumerate() {
        if r.shape() != (g.cell_h, g.cell_w) {
            return Err(Error::config(format!(
                "replica {i} is {:?}, grid cells are {}x{}",
                r.shape(),
                g.cell_h,
                g.cell_w
            )));
        }
        let (r0, c0) = g.origin(i);
        for y in 0..g.cell_h {
            let dst = (r0 + y) * t + c0;
            out.data_mut()[dst..dst + g.cell_w]
                .copy_from_slice(&r.data()[y * g.cell_w..][..g.cell_w]);
        }
    }
    Ok(out)
}

pub fn unpack_grid(container: &Plane, g: ReplicaGrid) -> Result<Vec<Plane>> {
    if container.shape() != g.container_shape() {
        return Err(Error::config(format!(
            "container is {:?}, grid expects {:?}",
            container.shape(),
            g.container_shape()
        )));
    }
    let t = container.cols();
    Ok((0..g.count())
        .map(|i| {
            let (r0, c0) = g.origin(i);
            Plane::from_fn(g.cell_h, g.cell_w, |y, x| {
                container.data()[(r0 + y) * t + c0 + x]
            })
        })
        .collect())
}

/// [`pack_grid`] on the tape; replicas are `[1, cell_h, cell_w]`.
pub fn pack_op<'t>(replicas: &[Var<'t>], g: ReplicaGrid) -> Result<Var<'t>> {
    if replicas.len() != g.count() {
        return Err(Error::config(format!(
            "grid {}x{} needs {} replicas, got {}",
            g.rows,
            g.cols,
            g.count(),
            replicas.len()
        )));
    }
    for (i, r) in replicas.iter().enumerate() {
        if r.shape() != [1, g.cell_h, g.cell_w] {
            return Err(Error::config(format!(
                "replica {i} is {:?}, grid cells are [1, {}, {}]",
                r.shape(),
                g.cell_h,
                g.cell_w
            )));
        }
    }
    let rows: Vec<Var<'t>> = replicas
        .chunks(g.cols)
        .map(|row| concat(row, 2))
        .collect::<Result<_>>()?;
    concat(&rows, 1)
}

/// [`unpack_grid`] on the tape; `container` is `[1, F, T]`.
pub fn unpack_op<'t>(container: Var<'t>, g: ReplicaGrid) -> Result<Vec<Var<'t>>> {
    let (f, t) = g.container_shape();
    if container.shape() != [1, f, t] {
        return Err(Error::config(format!(
            "container is {:?}, grid expects [1, {f}, {t}]",
            container.shape()
        )));
    }
    (0..g.count())
        .map(|i| {
            let (r0, c0) = g.origin(i);
            container.slice(1, r0, g.cell_h)?.slice(2, c0, g.cell_w)
        })
        .collect()
}

/// Plane as a `[1, rows, cols]` tensor.
pub fn plane_tensor(p: &Plane) -> Tensor {
    Tensor::raw(vec![1, p.rows(), p.cols()], p.data().to_vec())
}

/// Depth-1 tensor back to a plane.
pub fn tensor_plane(t: &Tensor) -> Result<Plane> {
    match t.shape() {
        [1, r, c] | [r, c] => Plane::new(*r, *c, t.data().to_vec()),
        other => Err(Error::config(format!(
            "expected a single-plane tensor, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, random_leaves, Tape};

    #[test]
    fn gray_and_black_fixed_points() {
        assert_eq!(rgb_to_ycbcr([0.0; 3]), [0.0, 0.5, 0.5]);
        for v in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(rgb_to_ycbcr([v; 3]), [v, 0.5, 0.5]);
        }
    }

    #[test]
    fn ycbcr_inverse_recovers_primaries() {
        for rgb in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.6, 0.9]] {
            let back = ycbcr_to_rgb(rgb_to_ycbcr(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12, "{rgb:?} {back:?}");
            }
        }
    }

    #[test]
    fn red_pixel_cell() {
        let img = RgbImage::filled(1, 1, [1.0, 0.0, 0.0]);
        let p = shuffle(&img, true);
        assert_eq!(p.data(), &[1.0, 0.0, 0.0, 0.299]);
        assert_eq!(shuffle(&img, false).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_gray_shuffles_to_uniform_plane() {
        let img = RgbImage::filled(4, 6, [0.5; 3]);
        let p = shuffle(&img, true);
        assert_eq!(p.shape(), (8, 12));
        assert!(p.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn luma_corruption_shifts_one_pixel() {
        let img = RgbImage::from_fn(3, 3, |c, y, x| 0.2 + 0.1 * c as f64 + 0.05 * (y + x) as f64);
        let mut p = shuffle(&img, true);
        let delta = 0.1;
        p.set(3, 3, p.get(3, 3) + delta);
        let out = unshuffle(&p, true).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..3 {
                    let expect = img.get(c, y, x) + if (y, x) == (1, 1) { delta / 2.0 } else { 0.0 };
                    assert!((out.get(c, y, x) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_pad_variant_ignores_fourth_slot() {
        let img = RgbImage::filled(2, 2, [0.1, 0.2, 0.3]);
        let mut p = shuffle(&img, false);
        p.set(1, 1, 0.9);
        assert_eq!(unshuffle(&p, false).unwrap(), img);
    }

    #[test]
    fn tape_shuffle_matches_plain() {
        let img = RgbImage::from_fn(3, 4, |c, y, x| ((c * 7 + y * 3 + x) % 10) as f64 / 10.0);
        let tape = Tape::new();
        for with_luma in [true, false] {
            let s = shuffle_op(tape.constant(img.to_tensor()), with_luma).unwrap();
            assert_eq!(s.value().data(), shuffle(&img, with_luma).data());
            let u = unshuffle_op(s, with_luma).unwrap();
            let plain = unshuffle(&shuffle(&img, with_luma), with_luma).unwrap();
            for (a, b) in u.value().data().iter().zip(plain.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // perturbed luma: tape form equals the literal YCbCr procedure
        let mut p = shuffle(&img, true);
        p.set(1, 3, 0.05);
        p.set(3, 1, 0.7);
        let literal = unshuffle(&p, true).unwrap();
        let u = unshuffle_op(tape.constant(plane_tensor(&p)), true).unwrap();
        let clamped = RgbImage::from_tensor(&u.value()).unwrap();
        for (a, b) in clamped.data().iter().zip(literal.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffle_ops_grad_check() {
        for with_luma in [true, false] {
            let err = grad_check(&random_leaves(&[vec![3, 2, 3], vec![1, 4, 6]], 4), |_, v| {
                Ok(shuffle_op(v[0], with_luma)?.mul(v[1])?.sq_sum())
            })
            .unwrap();
            assert!(err < 1e-4);
            let err = grad_check(&random_leaves(&[vec![1, 4, 6], vec![3, 2, 3]], 5), |_, v| {
                Ok(unshuffle_op(v[0], with_luma)?.mul(v[1])?.sq_sum())
            })
            .unwrap();
            assert!(err < 1e-4);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let p = Plane::from_fn(5, 7, |r, c| (r * 7 + c) as f64);
        assert_eq!(bilinear_resize(&p, 5, 7).unwrap(), p);
        let k = Plane::filled(4, 4, 0.3);
        for (r, c) in [(1, 1), (9, 3), (16, 8)] {
            let out = bilinear_resize(&k, r, c).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn resize_of_linear_ramp_is_exact() {
        let p = Plane::from_fn(4, 4, |r, c| 2.0 * r as f64 + c as f64);
        let out = bilinear_resize(&p, 7, 10).unwrap();
        for r in 0..7 {
            for c in 0..10 {
                let expect = 2.0 * r as f64 * 3.0 / 6.0 + c as f64 * 3.0 / 9.0;
                assert!((out.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_grad_check() {
        let err = grad_check(&random_leaves(&[vec![2, 4, 3], vec![2, 7, 5]], 6), |_, v| {
            Ok(resize_op(v[0], 7, 5)?.mul(v[1])?.sq_sum())
        })
        .unwrap();
        assert!(err < 1e-4);
        let err = grad_check(&random_leaves(&[vec![1, 8, 6], vec![1, 3, 4]], 7), |_, v| {
            Ok(resize_op(v[0], 3, 4)?.mul(v[1])?.sq_sum())
        })
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn grid_partition_round_trip() {
        let g = ReplicaGrid::new(4, 2, 3, 5).unwrap();
        let reps: Vec<Plane> = (0..8)
            .map(|i| Plane::from_fn(3, 5, |r, c| (i * 100 + r * 10 + c) as f64))
            .collect();
        let packed = pack_grid(&reps, g).unwrap();
        assert_eq!(packed.shape(), (12, 10));
        assert_eq!(packed.get(0, 0), 0.0);
        assert_eq!(packed.get(0, 5), 100.0);
        assert_eq!(packed.get(3, 0), 200.0);
        assert_eq!(unpack_grid(&packed, g).unwrap(), reps);
        assert!(pack_grid(&reps[..7], g).is_err());
        assert!(unpack_grid(&Plane::zeros(12, 11), g).is_err());
    }

    #[test]
    fn tape_grid_matches_plain() {
        let g = ReplicaGrid::new(2, 2, 2, 3).unwrap();
        let tape = Tape::new();
        let reps: Vec<Plane> = (0..4)
            .map(|i| Plane::from_fn(2, 3, |r, c| (i * 10 + r * 3 + c) as f64))
            .collect();
        let vars: Vec<Var> = reps.iter().map(|p| tape.constant(plane_tensor(p))).collect();
        let packed = pack_op(&vars, g).unwrap();
        assert_eq!(packed.value().data(), pack_grid(&reps, g).unwrap().data());
        let back = unpack_op(packed, g).unwrap();
        for (v, p) in back.iter().zip(&reps) {
            assert_eq!(v.value().data(), p.data());
        }
    }

    #[test]
    fn rgb_image_clamps_on_ingest() {
        let img = RgbImage::new(1, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert!(RgbImage::new(1, 1, vec![f64::NAN, 0.0, 0.0]).is_err());
        assert!(RgbImage::new(1, 2, vec![0.0; 3]).is_err());
    }
}
