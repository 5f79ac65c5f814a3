//! Arrangement of the hidden watermark inside the container.
//!
//! Each method is expressed as three hooks around the networks:
//!
//! | method        | encode_arrange            | decode_prepare        | decode_finalize         |
//! |---------------|---------------------------|-----------------------|-------------------------|
//! | stretch       | bilinear upsample         | container as is       | bilinear downsample     |
//! | replicate     | identical copies          | container as is       | mean of replicas        |
//! | w_replicate   | copies × encoder weights  | container as is       | decoder-weighted mean   |
//! | ws_replicate  | copies × encoder weights  | replicas stacked      | as is                   |
//! | multichannel  | one channel per replica   | replicas stacked      | as is (RGB)             |

use crate::autodiff::{concat_depth, weighted_sum, Tensor, Var};
use crate::error::{Error, Result};
use crate::imageops::{pack_op, resize_op, unpack_op, ReplicaGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EmbeddingMethod {
    Stretch,
    Replicate,
    WReplicate,
    WsReplicate,
    Multichannel,
}

impl EmbeddingMethod {
    pub const ALL: [EmbeddingMethod; 5] = [
        EmbeddingMethod::Stretch,
        EmbeddingMethod::Replicate,
        EmbeddingMethod::WReplicate,
        EmbeddingMethod::WsReplicate,
        EmbeddingMethod::Multichannel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMethod::Stretch => "stretch",
            EmbeddingMethod::Replicate => "replicate",
            EmbeddingMethod::WReplicate => "w_replicate",
            EmbeddingMethod::WsReplicate => "ws_replicate",
            EmbeddingMethod::Multichannel => "multichannel",
        }
    }

    /// True for the methods whose watermark is a shuffled plane.
    pub fn uses_plane(self) -> bool {
        self != EmbeddingMethod::Multichannel
    }

    pub fn is_replica_family(self) -> bool {
        matches!(
            self,
            EmbeddingMethod::Replicate | EmbeddingMethod::WReplicate | EmbeddingMethod::WsReplicate
        )
    }
}

impl std::fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmbeddingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbeddingMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown embedding method '{s}' (expected stretch, replicate, w_replicate, ws_replicate or multichannel)"
                ))
            })
    }
}

/// Geometry of one embedding configuration. Trainable replica weights live
/// with the other parameters and are passed to the hooks as tape variables.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingContext {
    pub method: EmbeddingMethod,
    pub grid: ReplicaGrid,
    /// Replica count for multichannel, 0 otherwise.
    pub channels: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl EmbeddingContext {
    /// Small containers are `4H × 2W`, large ones `8H × 4W`.
    pub fn new(method: EmbeddingMethod, large: bool, image_h: usize, image_w: usize) -> Result<Self> {
        if image_h == 0 || image_w == 0 {
            return Err(Error::config("image extents must be positive"));
        }
        let (grid, channels) = match (method, large) {
            (EmbeddingMethod::Multichannel, false) => (ReplicaGrid::new(4, 2, image_h, image_w)?, 8),
            (EmbeddingMethod::Multichannel, true) => (ReplicaGrid::new(8, 4, image_h, image_w)?, 32),
            (_, false) => (ReplicaGrid::new(2, 1, 2 * image_h, 2 * image_w)?, 0),
            (_, true) => (ReplicaGrid::new(4, 2, 2 * image_h, 2 * image_w)?, 0),
        };
        Ok(EmbeddingContext {
            method,
            grid,
            channels,
            image_h,
            image_w,
        })
    }

    pub fn container_shape(&self) -> (usize, usize) {
        self.grid.container_shape()
    }

    pub fn replicas(&self) -> usize {
        self.grid.count()
    }

    pub fn enc_weight_count(&self) -> usize {
        match self.method {
            EmbeddingMethod::WReplicate | EmbeddingMethod::WsReplicate => self.replicas(),
            _ => 0,
        }
    }

    pub fn dec_weight_count(&self) -> usize {
        match self.method {
            EmbeddingMethod::WReplicate => self.replicas(),
            _ => 0,
        }
    }

    /// `[depth, h, w]` of the hiding network output.
    pub fn watermark_shape(&self) -> [usize; 3] {
        match self.method {
            EmbeddingMethod::Multichannel => [self.channels, self.image_h, self.image_w],
            _ => [1, 2 * self.image_h, 2 * self.image_w],
        }
    }

    /// `[depth, h, w]` of the hiding network input.
    pub fn secret_shape(&self) -> [usize; 3] {
        match self.method {
            EmbeddingMethod::Multichannel => [3, self.image_h, self.image_w],
            _ => [1, 2 * self.image_h, 2 * self.image_w],
        }
    }

    /// `[depth, h, w]` of the revealing network input.
    pub fn reveal_input_shape(&self) -> [usize; 3] {
        let (f, t) = self.container_shape();
        match self.method {
            EmbeddingMethod::WsReplicate => [self.replicas(), 2 * self.image_h, 2 * self.image_w],
            EmbeddingMethod::Multichannel => [self.channels, self.image_h, self.image_w],
            _ => [1, f, t],
        }
    }

    /// `[depth, h, w]` of the revealing network output.
    pub fn reveal_output_shape(&self) -> [usize; 3] {
        match self.method {
            EmbeddingMethod::Multichannel => [3, self.image_h, self.image_w],
            EmbeddingMethod::WsReplicate => [1, 2 * self.image_h, 2 * self.image_w],
            _ => {
                let (f, t) = self.container_shape();
                [1, f, t]
            }
        }
    }

    fn check_weights(&self, ws: &[Var<'_>], expect: usize, side: &str) -> Result<()> {
        if ws.len() != expect {
            return Err(Error::config(format!(
                "{} expects {expect} {side} weights, got {}",
                self.method,
                ws.len()
            )));
        }
        Ok(())
    }

    fn check_shape(&self, v: Var<'_>, expect: [usize; 3], what: &str) -> Result<()> {
        if v.shape() != expect {
            return Err(Error::config(format!(
                "{} {what}: expected {expect:?}, got {:?}",
                self.method,
                v.shape()
            )));
        }
        Ok(())
    }
}

/// Hiding-network output to a `[1, F, T]` container-shaped watermark.
pub fn encode_arrange<'t>(wm: Var<'t>, ctx: &EmbeddingContext, enc: &[Var<'t>]) -> Result<Var<'t>> {
    ctx.check_shape(wm, ctx.watermark_shape(), "watermark")?;
    ctx.check_weights(enc, ctx.enc_weight_count(), "encoder")?;
    let n = ctx.replicas();
    match ctx.method {
        EmbeddingMethod::Stretch => {
            let (f, t) = ctx.container_shape();
            resize_op(wm, f, t)
        }
        EmbeddingMethod::Replicate => pack_op(&vec![wm; n], ctx.grid),
        EmbeddingMethod::WReplicate | EmbeddingMethod::WsReplicate => {
            let copies: Vec<Var<'t>> = enc
                .iter()
                .map(|&w| weighted_sum(&[wm], &[w]))
                .collect::<Result<_>>()?;
            pack_op(&copies, ctx.grid)
        }
        EmbeddingMethod::Multichannel => {
            let channels: Vec<Var<'t>> = (0..n)
                .map(|c| wm.slice(0, c, 1))
                .collect::<Result<_>>()?;
            pack_op(&channels, ctx.grid)
        }
    }
}

/// `[1, F, T]` container to the revealing-network input.
pub fn decode_prepare<'t>(container: Var<'t>, ctx: &EmbeddingContext) -> Result<Var<'t>> {
    let (f, t) = ctx.container_shape();
    ctx.check_shape(container, [1, f, t], "container")?;
    match ctx.method {
        EmbeddingMethod::WsReplicate | EmbeddingMethod::Multichannel => {
            concat_depth(&unpack_op(container, ctx.grid)?)
        }
        _ => Ok(container),
    }
}

/// Revealing-network output to the revealed plane (`[1, 2H, 2W]`) or, for
/// multichannel, the revealed RGB tensor (`[3, H, W]`).
pub fn decode_finalize<'t>(out: Var<'t>, ctx: &EmbeddingContext, dec: &[Var<'t>]) -> Result<Var<'t>> {
    ctx.check_shape(out, ctx.reveal_output_shape(), "reveal output")?;
    ctx.check_weights(dec, ctx.dec_weight_count(), "decoder")?;
    match ctx.method {
        EmbeddingMethod::Stretch => resize_op(out, 2 * ctx.image_h, 2 * ctx.image_w),
        EmbeddingMethod::Replicate => {
            let reps = unpack_op(out, ctx.grid)?;
            let n = reps.len();
            let mut acc = reps[0];
            for r in &reps[1..] {
                acc = acc.add(*r)?;
            }
            Ok(acc.scale(1.0 / n as f64))
        }
        EmbeddingMethod::WReplicate => {
            let reps = unpack_op(out, ctx.grid)?;
            let mut norm = dec[0];
            for w in &dec[1..] {
                norm = norm.add(*w)?;
            }
            let merged = weighted_sum(&reps, dec)?;
            weighted_sum(&[merged], &[norm.recip()])
        }
        EmbeddingMethod::WsReplicate | EmbeddingMethod::Multichannel => Ok(out),
    }
}

/// Scalar tape constants, handy for fixed weights.
pub fn scalars<'t>(tape: &'t crate::autodiff::Tape, values: &[f64]) -> Vec<Var<'t>> {
    values.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect()
}
