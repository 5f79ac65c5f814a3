//! Hiding/revealing U-Nets, the dual-container coupling net and the named
//! parameter store they share.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{concat_depth, conv2d, weighted_sum, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: Arc<HashMap<String, usize>>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter '{name}'")));
        }
        Arc::make_mut(&mut self.index).insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces the values of parameter `i`; the shape must not change.
    pub fn set_data(&mut self, i: usize, data: Vec<f64>) -> Result<()> {
        let shape = self.tensors[i].shape().to_vec();
        self.tensors[i] = Tensor::new(shape, data)?;
        Ok(())
    }

    /// Registers every parameter on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            index: Arc::clone(&self.index),
            vars,
        }
    }
}

/// Parameters registered on a tape.
pub struct Bound<'t> {
    index: Arc<HashMap<String, usize>>,
    pub vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::config(format!("missing parameter '{name}'")))
    }

    /// Same parameter names bound to other variables, in `set` order.
    pub fn with_vars(set: &ParamSet, vars: Vec<Var<'t>>) -> Result<Self> {
        if vars.len() != set.len() {
            return Err(Error::config(format!(
                "{} variables for {} parameters",
                vars.len(),
                set.len()
            )));
        }
        Ok(Bound {
            index: Arc::clone(&set.index),
            vars,
        })
    }

    /// `prefix0` .. `prefix{count-1}`.
    pub fn sequence(&self, prefix: &str, count: usize) -> Result<Vec<Var<'t>>> {
        (0..count).map(|i| self.get(&format!("{prefix}{i}"))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub in_depth: usize,
    pub out_depth: usize,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_depth == 0 || self.out_depth == 0 {
            return Err(Error::config(format!("U-Net extents must be positive: {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("U-Net kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }
}

/// One convolution of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    /// Spatial downscale relative to the network input (`2^level`).
    pub scale: usize,
}

impl ConvSpec {
    pub fn params(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel + self.out_c
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        (h / self.scale) * (w / self.scale) * self.out_c * self.in_c * self.kernel * self.kernel
    }
}

/// Encoder/decoder with skip connections:
///
/// * down block `i`: conv, leaky ReLU, keep as skip, 2× mean pool
/// * bottleneck conv at `C0·2^D` channels
/// * up block `i`: 2× nearest upsample, concat skip `i`, conv, leaky ReLU
/// * final 1×1 linear conv to `out_depth`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNet {
    pub cfg: UNetConfig,
    pub prefix: String,
}

impl UNet {
    pub fn new(cfg: UNetConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(UNet {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn width(&self, level: usize) -> usize {
        self.cfg.base_channels << level
    }

    /// Convolutions in forward order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let (d, k) = (self.cfg.depth, self.cfg.kernel);
        let p = &self.prefix;
        let mut out = Vec::with_capacity(2 * d + 2);
        for i in 0..d {
            out.push(ConvSpec {
                name: format!("{p}.down{i}"),
                in_c: if i == 0 { self.cfg.in_depth } else { self.width(i - 1) },
                out_c: self.width(i),
                kernel: k,
                scale: 1 << i,
            });
        }
        out.push(ConvSpec {
            name: format!("{p}.mid"),
            in_c: self.width(d - 1),
            out_c: self.width(d),
            kernel: k,
            scale: 1 << d,
        });
        for i in (0..d).rev() {
            out.push(ConvSpec {
                name: format!("{p}.up{i}"),
                in_c: self.width(i + 1) + self.width(i),
                out_c: self.width(i),
                kernel: k,
                scale: 1 << i,
            });
        }
        out.push(ConvSpec {
            name: format!("{p}.out"),
            in_c: self.width(0),
            out_c: self.cfg.out_depth,
            kernel: 1,
            scale: 1,
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvSpec::params).sum()
    }

    /// Conv MACs for an `h × w` input.
    pub fn macs(&self, h: usize, w: usize) -> usize {
        self.layers().iter().map(|l| l.macs(h, w)).sum()
    }

    /// He-normal weights (variance `2 / fan_in`), zero biases.
    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in self.layers() {
            let fan_in = l.in_c * l.kernel * l.kernel;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::config(format!("bad init scale: {e}")))?;
            let n = l.out_c * l.in_c * l.kernel * l.kernel;
            let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            params.insert(format!("{}.w", l.name), Tensor::new(vec![l.out_c, l.in_c, l.kernel, l.kernel], w)?)?;
            params.insert(format!("{}.b", l.name), Tensor::zeros(vec![l.out_c]))?;
        }
        Ok(())
    }

    /// Zero-valued parameters of the right shapes.
    pub fn init_zero(&self, params: &mut ParamSet) -> Result<()> {
        for l in self.layers() {
            params.insert(format!("{}.w", l.name), Tensor::zeros(vec![l.out_c, l.in_c, l.kernel, l.kernel]))?;
            params.insert(format!("{}.b", l.name), Tensor::zeros(vec![l.out_c]))?;
        }
        Ok(())
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let [c, h, w] = shape[..] else {
            return Err(Error::config(format!("U-Net input must be [c, h, w], got {shape:?}")));
        };
        if c != self.cfg.in_depth {
            return Err(Error::config(format!(
                "{} expects depth {}, got {c}",
                self.prefix, self.cfg.in_depth
            )));
        }
        let s = self.cfg.stride();
        if h % s != 0 || w % s != 0 {
            return Err(Error::config(format!(
                "{}: spatial extents {h}x{w} must be divisible by {s}",
                self.prefix
            )));
        }
        let conv = |name: &str, x: Var<'t>| -> Result<Var<'t>> {
            conv2d(x, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?)
        };
        let layers = self.layers();
        let d = self.cfg.depth;
        let mut skips = Vec::with_capacity(d);
        let mut cur = x;
        for l in &layers[..d] {
            let a = conv(&l.name, cur)?.leaky_relu();
            skips.push(a);
            cur = a.mean_pool2()?;
        }
        cur = conv(&layers[d].name, cur)?.leaky_relu();
        for l in &layers[d + 1..2 * d + 1] {
            let skip = skips.pop().expect("one skip per level");
            cur = concat_depth(&[cur.nearest_upsample2()?, skip])?;
            cur = conv(&l.name, cur)?.leaky_relu();
        }
        conv(&layers[2 * d + 1].name, cur)
    }
}

/// `w1·a + w2·b + bias`, three scalar parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CouplingNet {
    pub prefix: String,
}

impl CouplingNet {
    pub const PARAMS: usize = 3;

    pub fn new(prefix: impl Into<String>) -> Self {
        CouplingNet { prefix: prefix.into() }
    }

    /// Starts as the plain average of both branches.
    pub fn init(&self, params: &mut ParamSet) -> Result<()> {
        self.init_with(params, [0.5, 0.5, 0.0])
    }

    pub fn init_with(&self, params: &mut ParamSet, v: [f64; 3]) -> Result<()> {
        for (name, value) in ["w1", "w2", "b"].iter().zip(v) {
            params.insert(format!("{}.{name}", self.prefix), Tensor::scalar(value))?;
        }
        Ok(())
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        if a.shape() != b.shape() {
            return Err(Error::config(format!(
                "coupling inputs differ in shape: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let ones = a.tape().constant(Tensor::full(a.shape(), 1.0));
        let w1 = p.get(&format!("{}.w1", self.prefix))?;
        let w2 = p.get(&format!("{}.w2", self.prefix))?;
        let bias = p.get(&format!("{}.b", self.prefix))?;
        weighted_sum(&[a, b, ones], &[w1, w2, bias])
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_where, random_leaves};

    fn cfg(depth: usize, c0: usize, in_depth: usize, out_depth: usize) -> UNetConfig {
        UNetConfig {
            depth,
            base_channels: c0,
            kernel: 3,
            in_depth,
            out_depth,
        }
    }

    #[test]
    fn output_keeps_spatial_shape() {
        let net = UNet::new(cfg(2, 4, 2, 3), "n").unwrap();
        let mut ps = ParamSet::new();
        net.init(&mut ps, &mut seeded_rng(0)).unwrap();
        let tape = Tape::new();
        let p = ps.bind(&tape, false);
        let x = tape.constant(random_leaves(&[vec![2, 8, 12]], 0).remove(0));
        assert_eq!(net.forward(&p, x).unwrap().shape(), [3, 8, 12]);
        let bad = tape.constant(random_leaves(&[vec![2, 6, 12]], 0).remove(0));
        assert!(matches!(net.forward(&p, bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = UNet::new(cfg(2, 4, 1, 1), "n").unwrap();
        let mut ps = ParamSet::new();
        net.init_zero(&mut ps).unwrap();
        let tape = Tape::new();
        let p = ps.bind(&tape, false);
        let x = tape.constant(random_leaves(&[vec![1, 8, 8]], 1).remove(0));
        assert!(net.forward(&p, x).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_he_scaled() {
        let net = UNet::new(cfg(2, 8, 1, 1), "n").unwrap();
        let mut a = ParamSet::new();
        let mut b = ParamSet::new();
        net.init(&mut a, &mut seeded_rng(5)).unwrap();
        net.init(&mut b, &mut seeded_rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scalar_count(), net.param_count());
        let w = a.get("n.up0.w").unwrap();
        let fan_in = (16 + 8) * 9;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / fan_in as f64;
        assert!((var / expect - 1.0).abs() < 0.15, "{var} vs {expect}");
        assert!(a.get("n.up0.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_unet_grad_check() {
        let net = UNet::new(cfg(2, 4, 1, 1), "n").unwrap();
        let mut ps = ParamSet::new();
        net.init(&mut ps, &mut seeded_rng(2)).unwrap();
        // biases get small nonzero values so every path is exercised
        let mut leaves: Vec<Tensor> = ps
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.shape().len() == 1 {
                    random_leaves(&[t.shape().to_vec()], 100 + i as u64).remove(0)
                } else {
                    t.clone()
                }
            })
            .collect();
        leaves.extend(random_leaves(&[vec![1, 16, 16], vec![1, 16, 16]], 3));
        let n = ps.len();
        let names = ps.clone();
        let err = grad_check_where(
            &leaves,
            |_, v| {
                let bound = Bound::with_vars(&names, v[..n].to_vec())?;
                let y = net.forward(&bound, v[n])?;
                y.mul(v[n + 1])?.sq_sum().add(y.sq_sum())
            },
            |li, ei| li >= n || ei % 7 == 0,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn coupling_examples() {
        let c = CouplingNet::new("couple");
        let tape = Tape::new();
        let a = tape.constant(random_leaves(&[vec![1, 2, 2]], 1).remove(0));
        let b = tape.constant(random_leaves(&[vec![1, 2, 2]], 2).remove(0));
        let mut ps = ParamSet::new();
        c.init_with(&mut ps, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ps.scalar_count(), CouplingNet::PARAMS);
        let p = ps.bind(&tape, false);
        assert_eq!(c.forward(&p, a, b).unwrap().value().data(), a.value().data());
        let mut half = ParamSet::new();
        c.init(&mut half).unwrap();
        let p = half.bind(&tape, false);
        assert_eq!(c.forward(&p, a, a).unwrap().value().data(), a.value().data());
    }

    #[test]
    fn param_counts_from_specs() {
        let net = UNet::new(cfg(1, 2, 1, 1), "n").unwrap();
        // down0 1->2, mid 2->4, up0 6->2, out 2->1 (1x1)
        let expect = (2 * 9 + 2) + (4 * 2 * 9 + 4) + (2 * 6 * 9 + 2) + (2 + 1);
        assert_eq!(net.param_count(), expect);
        let single = ConvSpec { name: "c".into(), in_c: 1, out_c: 1, kernel: 3, scale: 1 };
        assert_eq!(single.macs(8, 8), 576);
    }
}
