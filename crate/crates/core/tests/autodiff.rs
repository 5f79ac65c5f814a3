mod common;

use common::ops::{op_table, probe, worst_op_error};
use proptest::prelude::*;
use stegowav::autodiff::{conv2d, grad_check, op_forward, random_leaves, OpKind, Tape, Tensor, Var};

#[test]
fn every_op_passes_grad_check_on_ten_seeds() {
    for (kind, shapes, map) in op_table() {
        for seed in 0..10 {
            let err = worst_op_error(&kind, &shapes, map, seed);
            assert!(err < 1e-4, "{kind:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn backward_twice_doubles_gradients() {
    for (kind, shapes, _) in op_table() {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = random_leaves(&shapes, 5).into_iter().map(|t| tape.leaf(t.map_positive())).collect();
        let root = probe(op_forward(&kind, &vars).unwrap(), &tape, 5).unwrap();
        tape.backward(root).unwrap();
        let once: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).unwrap()).collect();
        tape.backward(root).unwrap();
        for (v, g) in vars.iter().zip(&once) {
            let twice = tape.grad(*v).unwrap();
            for (a, b) in twice.data().iter().zip(g.data()) {
                assert_eq!(*a, 2.0 * b, "{kind:?}");
            }
        }
    }
}

trait MapPositive {
    fn map_positive(self) -> Tensor;
}

impl MapPositive for Tensor {
    fn map_positive(self) -> Tensor {
        Tensor::new(self.shape().to_vec(), self.data().iter().map(|v| 1.5 + v).collect()).unwrap()
    }
}

#[derive(Clone, Debug)]
enum Step {
    AddOther,
    SubOther,
    MulOther,
    Scale(f64),
    Leaky,
    PoolUp,
    ConcatSlice,
    Conv,
}

fn step_strategy() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::AddOther),
        Just(Step::SubOther),
        Just(Step::MulOther),
        (-2.0f64..2.0).prop_map(Step::Scale),
        Just(Step::Leaky),
        Just(Step::PoolUp),
        Just(Step::ConcatSlice),
        Just(Step::Conv),
    ]
}

fn apply<'t>(x: Var<'t>, other: Var<'t>, w: Var<'t>, b: Var<'t>, s: &Step) -> Result<Var<'t>, stegowav::Error> {
    match s {
        Step::AddOther => x.add(other),
        Step::SubOther => x.sub(other),
        Step::MulOther => x.mul(other),
        Step::Scale(c) => Ok(x.scale(*c)),
        Step::Leaky => Ok(x.leaky_relu()),
        Step::PoolUp => x.mean_pool2()?.nearest_upsample2(),
        Step::ConcatSlice => op_forward(&OpKind::ConcatDepth, &[other, x])?.slice(0, 1, 2),
        Step::Conv => conv2d(x, w, b),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composite_graphs_pass_grad_check(steps in prop::collection::vec(step_strategy(), 1..5), seed in 0u64..1000) {
        // 32 + 32 + 36 + 2 elements, all leaves differentiated.
        let leaves = random_leaves(&[vec![2, 4, 4], vec![2, 4, 4], vec![2, 2, 3, 3], vec![2]], seed);
        let err = grad_check(&leaves, |tape, v| {
            let mut x = v[0];
            for s in &steps {
                x = apply(x, v[1], v[2], v[3], s)?;
            }
            probe(x.add(v[1])?, tape, seed)
        })
        .unwrap();
        prop_assert!(err < 1e-4, "{steps:?}: {err}");
    }
}

#[test]
fn pipeline_ops_pass_grad_check() {
    for seed in 0..3 {
        for (name, err) in common::ops::domain_op_errors(seed) {
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn unet_passes_grad_check() {
    let err = common::ops::unet_error(2);
    assert!(err < 1e-4, "{err}");
}
