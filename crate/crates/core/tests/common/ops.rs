use stegowav::autodiff::{grad_check, op_forward, random_leaves, OpKind, Tape, Tensor, Var};

/// Every op with representative input shapes and a map applied to the
/// random leaves so the op stays inside its smooth domain.
pub fn op_table() -> Vec<(OpKind, Vec<Vec<usize>>, fn(f64) -> f64)> {
    let id: fn(f64) -> f64 = |v| v;
    let positive: fn(f64) -> f64 = |v| 1.5 + v;
    vec![
        (OpKind::Add, vec![vec![2, 3, 4], vec![2, 3, 4]], id),
        (OpKind::Sub, vec![vec![2, 3, 4], vec![2, 3, 4]], id),
        (OpKind::Mul, vec![vec![2, 3, 4], vec![2, 3, 4]], id),
        (OpKind::Scale(-1.7), vec![vec![2, 3, 4]], id),
        (OpKind::ConcatDepth, vec![vec![1, 3, 4], vec![2, 3, 4]], id),
        (OpKind::Slice { axis: 1, start: 1, len: 2 }, vec![vec![2, 4, 4]], id),
        (OpKind::Conv2d, vec![vec![2, 5, 6], vec![3, 2, 3, 3], vec![3]], id),
        (OpKind::LeakyRelu, vec![vec![2, 3, 4]], id),
        (OpKind::NearestUpsample2, vec![vec![2, 3, 4]], id),
        (OpKind::MeanPool2, vec![vec![2, 4, 6]], id),
        (OpKind::Mean, vec![vec![2, 3, 4]], id),
        (OpKind::AbsSum, vec![vec![2, 3, 4]], id),
        (OpKind::SqSum, vec![vec![2, 3, 4]], id),
        (OpKind::Sqrt, vec![vec![2, 3, 4]], positive),
        (OpKind::Recip, vec![vec![2, 3, 4]], positive),
        (OpKind::WeightedSum, vec![vec![1, 3, 4], vec![1, 3, 4], vec![1], vec![1]], id),
    ]
}

/// Sum of the op output against fixed random coefficients.
pub fn probe<'t>(y: Var<'t>, tape: &'t Tape, seed: u64) -> Result<Var<'t>, stegowav::Error> {
    let c = random_leaves(&[y.shape()], seed ^ 0xc0ef).remove(0);
    Ok(y.mul(tape.constant(c))?.mean())
}

pub fn worst_op_error(kind: &OpKind, shapes: &[Vec<usize>], map: fn(f64) -> f64, seed: u64) -> f64 {
    let leaves: Vec<Tensor> = random_leaves(shapes, seed)
        .into_iter()
        .map(|t| Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| map(v)).collect()).unwrap())
        .collect();
    grad_check(&leaves, |tape, v| probe(op_forward(kind, v)?, tape, seed)).unwrap()
}


fn shifted(t: Tensor, upto: usize, by: f64) -> Tensor {
    let shape = t.shape().to_vec();
    let mut d = t.into_data();
    d[..upto].iter_mut().for_each(|v| *v += by);
    Tensor::new(shape, d).unwrap()
}

/// Worst gradient-check error of every pipeline-level differentiable op.
pub fn domain_op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use stegowav::dsp::{istdct_op, istft_op, stdct_op, stft_op, StftConfig};
    use stegowav::embeddings::{decode_finalize, encode_arrange, EmbeddingContext, EmbeddingMethod};
    use stegowav::imageops::{pack_op, resize_op, shuffle_op, unpack_op, unshuffle_op, ReplicaGrid};
    use stegowav::losses::soft_dtw;

    let cfg = StftConfig::new(16, 4).unwrap();
    let len = 40;
    let t = cfg.frame_count(len).unwrap();
    let check = |shapes: &[Vec<usize>], f: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> stegowav::Result<Var<'t>>| {
        grad_check(&random_leaves(shapes, seed), |tape, v| f(tape, v)).unwrap()
    };
    let mut out = vec![
        ("stft", check(&[vec![len], vec![2, 8, t]], &|_, v| Ok(stft_op(v[0], cfg)?.mul(v[1])?.mean()))),
        ("stdct", check(&[vec![len], vec![1, 16, t]], &|_, v| Ok(stdct_op(v[0], cfg)?.mul(v[1])?.mean()))),
        ("istdct", check(&[vec![1, 16, t], vec![len]], &|_, v| Ok(istdct_op(v[0], cfg, len)?.mul(v[1])?.mean()))),
        ("shuffle", check(&[vec![3, 3, 4], vec![1, 6, 8]], &|_, v| Ok(shuffle_op(v[0], true)?.mul(v[1])?.mean()))),
        ("unshuffle", check(&[vec![1, 6, 8], vec![3, 3, 4]], &|_, v| Ok(unshuffle_op(v[0], true)?.mul(v[1])?.mean()))),
        ("resize", check(&[vec![1, 4, 3], vec![1, 7, 5]], &|_, v| Ok(resize_op(v[0], 7, 5)?.mul(v[1])?.mean()))),
        ("soft_dtw", check(&[vec![9], vec![12]], &|_, v| soft_dtw(v[0], v[1], 0.5))),
    ];
    let g = ReplicaGrid::new(2, 2, 2, 3).unwrap();
    out.push((
        "pack_unpack",
        check(&[vec![1, 2, 3], vec![1, 2, 3], vec![1, 2, 3], vec![1, 2, 3], vec![1, 4, 6]], &|_, v| {
            let packed = pack_op(&v[..4], g)?.mul(v[4])?;
            let parts = unpack_op(packed, g)?;
            Ok(parts[0].mul(parts[3])?.mean().add(parts[1].mean())?)
        }),
    ));
    // magnitudes kept away from zero
    let leaves = vec![shifted(random_leaves(&[vec![2, 8, t]], seed).remove(0), 8 * t, 1.5), random_leaves(&[vec![len]], seed + 1).remove(0)];
    out.push(("istft", grad_check(&leaves, |_, v| Ok(istft_op(v[0], cfg, len)?.mul(v[1])?.mean())).unwrap()));
    let ctx = EmbeddingContext::new(EmbeddingMethod::WReplicate, false, 2, 2).unwrap();
    let (f, tt) = ctx.container_shape();
    let leaves: Vec<Tensor> = random_leaves(&[vec![1, 4, 4], vec![1, f, tt], vec![1, f, tt], vec![1, 4, 4]], seed)
        .into_iter()
        .chain((0..4).map(|i| Tensor::scalar(0.5 + 0.25 * i as f64)))
        .collect();
    out.push((
        "embedding_hooks",
        grad_check(&leaves, |_, v| {
            let arranged = encode_arrange(v[0], &ctx, &v[4..6])?.mul(v[1])?.mean();
            let merged = decode_finalize(v[2], &ctx, &v[6..8])?.mul(v[3])?.mean();
            arranged.add(merged)
        })
        .unwrap(),
    ));
    out
}

/// The U-Net check: depth 2, 4 base channels, one 16×16 input.
pub fn unet_error(seed: u64) -> f64 {
    use stegowav::networks::{seeded_rng, Bound, ParamSet, UNet, UNetConfig};
    let net = UNet::new(UNetConfig { depth: 2, base_channels: 4, kernel: 3, in_depth: 1, out_depth: 1 }, "n").unwrap();
    let mut ps = ParamSet::new();
    net.init(&mut ps, &mut seeded_rng(seed)).unwrap();
    let mut leaves: Vec<Tensor> = ps
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| if t.shape().len() == 1 { random_leaves(&[t.shape().to_vec()], seed + 100 + i as u64).remove(0) } else { t.clone() })
        .collect();
    let n = leaves.len();
    leaves.extend(random_leaves(&[vec![1, 16, 16], vec![1, 16, 16]], seed + 7));
    stegowav::autodiff::grad_check_where(
        &leaves,
        |_, v| {
            let bound = Bound::with_vars(&ps, v[..n].to_vec())?;
            Ok(net.forward(&bound, v[n])?.mul(v[n + 1])?.mean())
        },
        |li, ei| li >= n || ei % 5 == 0,
    )
    .unwrap()
}
