//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every value produced during a forward pass is recorded on a [`Tape`] as
//! an immutable [`Tensor`]. Calling [`Tape::backward`] on a scalar root walks
//! the tape in reverse creation order and accumulates gradients into every
//! leaf that was registered with [`Tape::leaf`].
//!
//! Image-like tensors use a `[depth, height, width]` layout. Operations that
//! live outside this module (transforms, resizing, soft-DTW) plug in through
//! [`Tape::custom`], which takes a forward value and a closure computing the
//! vector-Jacobian product.
//!
//! ```
//! use stegowav::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap());
//! let y = x.sq_sum();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Slope used on the negative half-line by [`Var::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Central finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Smallest denominator in the [`grad_check`] relative error.
pub const FD_FLOOR: f64 = 1e-4;

/// Dense row-major tensor of `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a leaf-quality tensor. Extents must be positive, the data length
    /// must match the shape and every value must be finite.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "tensor value at index {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Wraps operation output without the finiteness scan.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::raw(shape, vec![0.0; n])
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::raw(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::raw(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::config(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::config(format!(
            "shape {shape:?} holds {n} values but {len} were supplied"
        )));
    }
    Ok(())
}

/// What a backward closure receives.
pub struct BackwardArgs<'a> {
    /// Gradient of the root with respect to this node's output.
    pub grad: &'a [f64],
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    /// `needs[i]` is false when input `i` does not lead to any leaf.
    pub needs: &'a [bool],
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    leaf: bool,
    grad: Option<Vec<f64>>,
}

/// Records a computation so it can be differentiated.
///
/// A tape is single-threaded; independent tapes may live on different
/// threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Registers a trainable input; its gradient is kept after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            leaf: true,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            leaf: true,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// Records an operation computed outside this module.
    ///
    /// `backward` returns one entry per input; entries for inputs whose
    /// `needs` flag is false may be `None`.
    pub fn custom<'t, F>(&'t self, inputs: &[Var<'t>], value: Tensor, backward: F) -> Var<'t>
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    {
        self.record(inputs, value, backward)
    }

    fn record<'t, F>(&'t self, inputs: &[Var<'t>], value: Tensor, backward: F) -> Var<'t>
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let parents = inputs.iter().map(|v| v.id).collect();
        let id = self.push(Node {
            value: Rc::new(value),
            parents,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            leaf: false,
            grad: None,
        });
        Var { tape: self, id }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Propagates gradients from a single-element root into the leaves.
    ///
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let mut leaf_updates: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root_len = nodes[root.id].value.len();
            if root_len != 1 {
                return Err(Error::usage(format!(
                    "backward needs a scalar root, got {} elements",
                    root_len
                )));
            }
            let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
            adjoint[root.id] = Some(vec![1.0]);
            for id in (0..=root.id).rev() {
                let Some(grad) = adjoint[id].take() else {
                    continue;
                };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if node.leaf {
                    leaf_updates.push((id, grad));
                    continue;
                }
                let Some(backward) = &node.backward else {
                    continue;
                };
                let inputs: Vec<Rc<Tensor>> = node
                    .parents
                    .iter()
                    .map(|&p| Rc::clone(&nodes[p].value))
                    .collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let grads = backward(&BackwardArgs {
                    grad: &grad,
                    inputs: &inputs,
                    output: &node.value,
                    needs: &needs,
                });
                for ((&parent, g), &need) in node.parents.iter().zip(grads).zip(&needs) {
                    let (Some(g), true) = (g, need) else {
                        continue;
                    };
                    match &mut adjoint[parent] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_updates {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::raw(node.value.shape.clone(), g.clone()))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

/// The closed set of tape operations, for table-driven use.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Scale(f64),
    Mul,
    ConcatDepth,
    Slice { axis: usize, start: usize, len: usize },
    Conv2d,
    LeakyRelu,
    NearestUpsample2,
    MeanPool2,
    Mean,
    AbsSum,
    SqSum,
    Sqrt,
    Recip,
    /// Inputs are `n` tensors followed by `n` scalar weights.
    WeightedSum,
}

/// Applies `kind` to `inputs`, recording the result on their tape.
pub fn op_forward<'t>(kind: &OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
    let arity = |n: usize| -> Result<()> {
        if inputs.len() != n {
            return Err(Error::config(format!(
                "{kind:?} takes {n} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(())
    };
    match kind {
        OpKind::Add => {
            arity(2)?;
            inputs[0].add(inputs[1])
        }
        OpKind::Sub => {
            arity(2)?;
            inputs[0].sub(inputs[1])
        }
        OpKind::Mul => {
            arity(2)?;
            inputs[0].mul(inputs[1])
        }
        OpKind::Scale(c) => {
            arity(1)?;
            Ok(inputs[0].scale(*c))
        }
        OpKind::ConcatDepth => concat(inputs, 0),
        OpKind::Slice { axis, start, len } => {
            arity(1)?;
            inputs[0].slice(*axis, *start, *len)
        }
        OpKind::Conv2d => {
            arity(3)?;
            conv2d(inputs[0], inputs[1], inputs[2])
        }
        OpKind::LeakyRelu => {
            arity(1)?;
            Ok(inputs[0].leaky_relu())
        }
        OpKind::NearestUpsample2 => {
            arity(1)?;
            inputs[0].nearest_upsample2()
        }
        OpKind::MeanPool2 => {
            arity(1)?;
            inputs[0].mean_pool2()
        }
        OpKind::Mean => {
            arity(1)?;
            Ok(inputs[0].mean())
        }
        OpKind::AbsSum => {
            arity(1)?;
            Ok(inputs[0].abs_sum())
        }
        OpKind::SqSum => {
            arity(1)?;
            Ok(inputs[0].sq_sum())
        }
        OpKind::Sqrt => {
            arity(1)?;
            Ok(inputs[0].sqrt())
        }
        OpKind::Recip => {
            arity(1)?;
            Ok(inputs[0].recip())
        }
        OpKind::WeightedSum => {
            if inputs.len() % 2 != 0 {
                return Err(Error::config("weighted_sum needs matching terms and weights"));
            }
            let (xs, ws) = inputs.split_at(inputs.len() / 2);
            weighted_sum(xs, ws)
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::config(format!(
            "{what}: operand shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::config(format!(
            "{what} expects a [depth, height, width] tensor, got {:?}",
            t.shape
        ))),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Scalar value (first element).
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data[0]
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add")?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        Ok(self.tape.record(
            &[self, other],
            Tensor::raw(a.shape.clone(), data),
            |args| vec![Some(args.grad.to_vec()), Some(args.grad.to_vec())],
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub")?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        Ok(self.tape.record(
            &[self, other],
            Tensor::raw(a.shape.clone(), data),
            |args| {
                vec![
                    Some(args.grad.to_vec()),
                    Some(args.grad.iter().map(|g| -g).collect()),
                ]
            },
        ))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul")?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        Ok(self.tape.record(
            &[self, other],
            Tensor::raw(a.shape.clone(), data),
            |args| {
                let (a, b) = (&args.inputs[0].data, &args.inputs[1].data);
                vec![
                    args.needs[0].then(|| args.grad.iter().zip(b).map(|(g, y)| g * y).collect()),
                    args.needs[1].then(|| args.grad.iter().zip(a).map(|(g, x)| g * x).collect()),
                ]
            },
        ))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|x| c * x).collect();
        self.tape.record(&[self], Tensor::raw(a.shape.clone(), data), move |args| {
            vec![Some(args.grad.iter().map(|g| c * g).collect())]
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|x| x + c).collect();
        self.tape.record(&[self], Tensor::raw(a.shape.clone(), data), |args| {
            vec![Some(args.grad.to_vec())]
        })
    }

    pub fn leaky_relu(self) -> Var<'t> {
        let a = self.value();
        let data = a
            .data
            .iter()
            .map(|&x| if x >= 0.0 { x } else { LEAKY_SLOPE * x })
            .collect();
        self.tape.record(&[self], Tensor::raw(a.shape.clone(), data), |args| {
            let x = &args.inputs[0].data;
            vec![Some(
                args.grad
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x >= 0.0 { *g } else { LEAKY_SLOPE * g })
                    .collect(),
            )]
        })
    }

    /// Duplicates every element of a `[c, h, w]` tensor into a 2×2 block.
    pub fn nearest_upsample2(self) -> Result<Var<'t>> {
        let a = self.value();
        let (c, h, w) = chw(&a, "nearest_upsample2")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src = &a.data[(ch * h + y / 2) * w..][..w];
                let dst = &mut out[(ch * h2 + y) * w2..][..w2];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = src[x / 2];
                }
            }
        }
        Ok(self
            .tape
            .record(&[self], Tensor::raw(vec![c, h2, w2], out), move |args| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        let g = &args.grad[(ch * h2 + y) * w2..][..w2];
                        let dst = &mut gx[(ch * h + y / 2) * w..][..w];
                        for (x, gv) in g.iter().enumerate() {
                            dst[x / 2] += gv;
                        }
                    }
                }
                vec![Some(gx)]
            }))
    }

    /// Averages non-overlapping 2×2 blocks of a `[c, h, w]` tensor.
    pub fn mean_pool2(self) -> Result<Var<'t>> {
        let a = self.value();
        let (c, h, w) = chw(&a, "mean_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!(
                "mean_pool2 needs even extents, got {h}x{w}"
            )));
        }
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h {
                let src = &a.data[(ch * h + y) * w..][..w];
                let dst = &mut out[(ch * h2 + y / 2) * w2..][..w2];
                for (x, v) in src.iter().enumerate() {
                    dst[x / 2] += 0.25 * v;
                }
            }
        }
        Ok(self
            .tape
            .record(&[self], Tensor::raw(vec![c, h2, w2], out), move |args| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        let g = &args.grad[(ch * h2 + y / 2) * w2..][..w2];
                        let dst = &mut gx[(ch * h + y) * w..][..w];
                        for (x, d) in dst.iter_mut().enumerate() {
                            *d = 0.25 * g[x / 2];
                        }
                    }
                }
                vec![Some(gx)]
            }))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let n = a.len() as f64;
        let m = a.data.iter().sum::<f64>() / n;
        self.tape.record(&[self], Tensor::scalar(m), move |args| {
            let len = args.inputs[0].len();
            vec![Some(vec![args.grad[0] / n; len])]
        })
    }

    /// Σ|x|, with subgradient 0 at x = 0.
    pub fn abs_sum(self) -> Var<'t> {
        let a = self.value();
        let s = a.data.iter().map(|x| x.abs()).sum();
        self.tape.record(&[self], Tensor::scalar(s), |args| {
            let g = args.grad[0];
            vec![Some(
                args.inputs[0]
                    .data
                    .iter()
                    .map(|&x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )]
        })
    }

    pub fn sq_sum(self) -> Var<'t> {
        let a = self.value();
        let s = a.data.iter().map(|x| x * x).sum();
        self.tape.record(&[self], Tensor::scalar(s), |args| {
            let g = args.grad[0];
            vec![Some(args.inputs[0].data.iter().map(|x| 2.0 * g * x).collect())]
        })
    }

    /// Elementwise square root; the gradient at exactly 0 is taken as 0.
    pub fn sqrt(self) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|x| x.sqrt()).collect();
        self.tape.record(&[self], Tensor::raw(a.shape.clone(), data), |args| {
            vec![Some(
                args.grad
                    .iter()
                    .zip(&args.output.data)
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// Elementwise reciprocal.
    pub fn recip(self) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|x| 1.0 / x).collect();
        self.tape.record(&[self], Tensor::raw(a.shape.clone(), data), |args| {
            vec![Some(
                args.grad
                    .iter()
                    .zip(&args.output.data)
                    .map(|(g, y)| -g * y * y)
                    .collect(),
            )]
        })
    }

    /// Same data viewed with a different shape.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let a = self.value();
        let shape = shape.into();
        check_shape(&shape, a.len())?;
        Ok(self
            .tape
            .record(&[self], Tensor::raw(shape, a.data.clone()), |args| {
                vec![Some(args.grad.to_vec())]
            }))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.shape.len() || len == 0 || start + len > a.shape[axis] {
            return Err(Error::config(format!(
                "slice [{start}, {}) along axis {axis} is outside shape {:?}",
                start + len,
                a.shape
            )));
        }
        let outer: usize = a.shape[..axis].iter().product();
        let inner: usize = a.shape[axis + 1..].iter().product();
        let full = a.shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&a.data[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = a.shape.clone();
        shape[axis] = len;
        let in_len = a.len();
        Ok(self
            .tape
            .record(&[self], Tensor::raw(shape, out), move |args| {
                let mut gx = vec![0.0; in_len];
                for o in 0..outer {
                    gx[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&args.grad[o * len * inner..][..len * inner]);
                }
                vec![Some(gx)]
            }))
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return Err(Error::config("concat needs at least one operand"));
    };
    let values: Vec<Rc<Tensor>> = parts.iter().map(|v| v.value()).collect();
    let rank = values[0].shape.len();
    if axis >= rank {
        return Err(Error::config(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    for (i, v) in values.iter().enumerate() {
        let compatible = v.shape.len() == rank
            && v.shape
                .iter()
                .zip(&values[0].shape)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::config(format!(
                "concat operand {i} has shape {:?}, incompatible with {:?} along axis {axis}",
                v.shape, values[0].shape
            )));
        }
    }
    let outer: usize = values[0].shape[..axis].iter().product();
    let inner: usize = values[0].shape[axis + 1..].iter().product();
    let extents: Vec<usize> = values.iter().map(|v| v.shape[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v.data[o * e * inner..][..e * inner]);
        }
    }
    let mut shape = values[0].shape.clone();
    shape[axis] = total;
    Ok(first
        .tape
        .record(parts, Tensor::raw(shape, out), move |args| {
            let mut grads: Vec<Vec<f64>> = extents
                .iter()
                .map(|&e| Vec::with_capacity(outer * e * inner))
                .collect();
            for o in 0..outer {
                let mut offset = o * total * inner;
                for (g, &e) in grads.iter_mut().zip(&extents) {
                    g.extend_from_slice(&args.grad[offset..][..e * inner]);
                    offset += e * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
}

/// Stacks `[c_i, h, w]` tensors along depth.
pub fn concat_depth<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    concat(parts, 0)
}

/// Σ wᵢ·xᵢ with scalar weights `ws`; gradients reach both terms and weights.
pub fn weighted_sum<'t>(xs: &[Var<'t>], ws: &[Var<'t>]) -> Result<Var<'t>> {
    if xs.is_empty() || xs.len() != ws.len() {
        return Err(Error::config(format!(
            "weighted_sum got {} terms and {} weights",
            xs.len(),
            ws.len()
        )));
    }
    let xv: Vec<Rc<Tensor>> = xs.iter().map(|v| v.value()).collect();
    let wv: Vec<f64> = ws
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = w.value();
            if t.len() == 1 {
                Ok(t.data[0])
            } else {
                Err(Error::config(format!(
                    "weighted_sum weight {i} must be scalar, has shape {:?}",
                    t.shape
                )))
            }
        })
        .collect::<Result<_>>()?;
    for (i, x) in xv.iter().enumerate().skip(1) {
        if x.shape != xv[0].shape {
            return Err(Error::config(format!(
                "weighted_sum term {i} has shape {:?}, expected {:?}",
                x.shape, xv[0].shape
            )));
        }
    }
    let mut out = vec![0.0; xv[0].len()];
    for (x, w) in xv.iter().zip(&wv) {
        out.iter_mut().zip(&x.data).for_each(|(o, v)| *o += w * v);
    }
    let n = xs.len();
    let inputs: Vec<Var<'t>> = xs.iter().chain(ws).copied().collect();
    Ok(xs[0].tape.record(
        &inputs,
        Tensor::raw(xv[0].shape.clone(), out),
        move |args| {
            let mut grads = Vec::with_capacity(2 * n);
            for i in 0..n {
                let w = args.inputs[n + i].data[0];
                grads.push(args.needs[i].then(|| args.grad.iter().map(|g| g * w).collect()));
            }
            for i in 0..n {
                grads.push(args.needs[n + i].then(|| {
                    let dot = args
                        .grad
                        .iter()
                        .zip(&args.inputs[i].data)
                        .map(|(g, x)| g * x)
                        .sum();
                    vec![dot]
                }));
            }
            grads
        },
    ))
}

/// Stride-1 convolution with zero "same" padding.
///
/// `x` is `[ci, h, w]`, `weight` is `[co, ci, k, k]` with odd `k`, `bias` is
/// `[co]`. The output is `[co, h, w]`.
pub fn conv2d<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    let (ci, h, w) = chw(&xv, "conv2d input")?;
    let [co, wci, k, k2] = wv.shape[..] else {
        return Err(Error::config(format!(
            "conv2d kernel must be [out, in, k, k], got {:?}",
            wv.shape
        )));
    };
    if wci != ci {
        return Err(Error::config(format!(
            "conv2d input depth {ci} does not match kernel depth {wci}"
        )));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::config(format!(
            "conv2d kernel must be odd and square, got {k}x{k2}"
        )));
    }
    if bv.shape != [co] {
        return Err(Error::config(format!(
            "conv2d bias shape {:?} does not match {co} output channels",
            bv.shape
        )));
    }
    let geom = ConvGeom { ci, co, h, w, k };
    let out = geom.forward(&xv.data, &wv.data, &bv.data);
    Ok(x.tape.record(
        &[x, weight, bias],
        Tensor::raw(vec![co, h, w], out),
        move |args| {
            let (xd, wd) = (&args.inputs[0].data, &args.inputs[1].data);
            let gx = args.needs[0].then(|| geom.grad_input(args.grad, wd));
            let gw = args.needs[1].then(|| geom.grad_weight(args.grad, xd));
            let gb = args.needs[2].then(|| {
                args.grad
                    .chunks_exact(h * w)
                    .map(|c| c.iter().sum())
                    .collect()
            });
            vec![gx, gw, gb]
        },
    ))
}

#[derive(Clone, Copy)]
struct ConvGeom {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    /// For kernel offset `d`, the output index range whose input index
    /// `o + d - pad` is inside `[0, n)`.
    fn valid(n: usize, d: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(d);
        let hi = (n + pad).saturating_sub(d).min(n);
        (lo, hi.max(lo))
    }

    fn rows_per_block(&self) -> usize {
        (CONV_BLOCK_PIXELS / self.w).max(1)
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let (h, step) = (self.h, self.rows_per_block());
        (0..h).step_by(step).map(move |y0| (y0, (y0 + step).min(h)))
    }

    /// Visits every in-bounds (patch row, input row) segment pair of the
    /// patch matrix for output rows `y0..y1`.
    fn for_each_segment(&self, y0: usize, y1: usize, mut f: impl FnMut(usize, usize, usize)) {
        let ConvGeom { ci, h, w, k, .. } = *self;
        let pad = k / 2;
        let p = (y1 - y0) * w;
        for i in 0..ci {
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((i * k + dy) * k + dx) * p;
                    let (x0, x1) = Self::valid(w, dx, pad);
                    for y in y0..y1 {
                        if y + dy < pad || y + dy - pad >= h {
                            continue;
                        }
                        let sy = y + dy - pad;
                        f(row + (y - y0) * w + x0, (i * h + sy) * w + x0 + dx - pad, x1 - x0);
                    }
                }
            }
        }
    }

    /// Patch matrix `[ci·k·k, (y1−y0)·w]` for output rows `y0..y1`.
    fn im2col(&self, x: &[f64], y0: usize, y1: usize, cols: &mut Vec<f64>) {
        cols.clear();
        cols.resize(self.ci * self.k * self.k * (y1 - y0) * self.w, 0.0);
        self.for_each_segment(y0, y1, |c, s, n| {
            cols[c..c + n].copy_from_slice(&x[s..s + n]);
        });
    }

    fn col2im(&self, cols: &[f64], y0: usize, y1: usize, gx: &mut [f64]) {
        self.for_each_segment(y0, y1, |c, s, n| {
            for (d, v) in gx[s..s + n].iter_mut().zip(&cols[c..c + n]) {
                *d += v;
            }
        });
    }

    fn forward(&self, x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
        let ConvGeom { ci, co, h, w, k } = *self;
        let (plane, kk) = (h * w, ci * k * k);
        let mut out = vec![0.0; co * plane];
        for (o, dst) in out.chunks_exact_mut(plane).enumerate() {
            dst.fill(b[o]);
        }
        let mut cols = Vec::new();
        for (y0, y1) in self.blocks() {
            self.im2col(x, y0, y1, &mut cols);
            let p = (y1 - y0) * w;
            gemm(
                (co, kk, p),
                (wt, kk, 1),
                (&cols, p, 1),
                1.0,
                (&mut out[y0 * w..], plane, 1),
            );
        }
        out
    }

    fn grad_input(&self, g: &[f64], wt: &[f64]) -> Vec<f64> {
        let ConvGeom { ci, co, h, w, k } = *self;
        let (plane, kk) = (h * w, ci * k * k);
        let mut gx = vec![0.0; ci * plane];
        let mut cols = Vec::new();
        for (y0, y1) in self.blocks() {
            let p = (y1 - y0) * w;
            cols.clear();
            cols.resize(kk * p, 0.0);
            gemm((kk, co, p), (wt, 1, kk), (&g[y0 * w..], plane, 1), 0.0, (&mut cols, p, 1));
            self.col2im(&cols, y0, y1, &mut gx);
        }
        gx
    }

    fn grad_weight(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        let ConvGeom { ci, co, h, w, k } = *self;
        let (plane, kk) = (h * w, ci * k * k);
        let mut gw = vec![0.0; co * kk];
        let mut cols = Vec::new();
        for (y0, y1) in self.blocks() {
            self.im2col(x, y0, y1, &mut cols);
            let p = (y1 - y0) * w;
            gemm((co, p, kk), (&g[y0 * w..], plane, 1), (&cols, 1, p), 1.0, (&mut gw, kk, 1));
        }
        gw
    }
}

/// Output pixels per patch-matrix block; bounds conv scratch memory.
const CONV_BLOCK_PIXELS: usize = 4096;

/// `C = A·B + beta·C` for `(m, k, n)` with `(data, row stride, col stride)`
/// operands.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    beta: f64,
    (c, rsc, csc): (&mut [f64], usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Compares tape gradients with central finite differences.
///
/// Returns the maximum over all leaf elements of
/// `|analytic - numeric| / max(FD_FLOOR, |analytic|, |numeric|)`.
pub fn grad_check<F>(leaves: &[Tensor], build: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_where(leaves, build, |_, _| true)
}

/// [`grad_check`] restricted to the leaf elements accepted by `select`
/// (called with leaf index and element index).
pub fn grad_check_where<F, S>(leaves: &[Tensor], build: F, select: S) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    S: Fn(usize, usize) -> bool,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&tape, &vars)?;
        tape.backward(root)?;
        vars.iter()
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    };
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(build(&tape, &vars)?.item())
    };
    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut worst = 0.0f64;
    for li in 0..leaves.len() {
        for ei in 0..leaves[li].len() {
            if !select(li, ei) {
                continue;
            }
            let orig = leaves[li].data[ei];
            work[li].data[ei] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[li].data[ei] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[li].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[li].data[ei];
            let err = (a - numeric).abs() / numeric.abs().max(a.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Uniform `[-1, 1)` tensors of the given shapes, reproducible from `seed`.
pub fn random_leaves(shapes: &[Vec<usize>], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::raw(s.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect()
}

/// [`grad_check`] on seeded random leaves of the given shapes.
pub fn grad_check_seeded<F>(shapes: &[Vec<usize>], seed: u64, build: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check(&random_leaves(shapes, seed), build)
}
