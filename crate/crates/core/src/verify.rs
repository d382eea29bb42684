//! Self-check suites over the kernels and blocks: finite-difference gradients,
//! loop-oracle equivalence and block shape/parameter arithmetic. Each returns
//! measurements; the caller decides what passes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Block, BlockSpec, Chw};
use crate::element::Element;
use crate::gradcheck::{project_loss, projection, random_tensor, GradCheck, GradCheckReport};
use crate::layers::{Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, BatchNormState, ConvParams, Mode, Padding, PoolParams};
use crate::reference;
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Distinct values at least `2 / len` apart and away from zero, so ReLU kinks
/// and max-pool ties sit far outside the finite-difference step.
pub fn separated<T: Element>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..len).map(|i| (i as f64 + 0.5) / len as f64 * 2.0 - 1.0).collect();
    v.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| T::from_f64(v[i]))
}

fn padding(rng: &mut impl Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

/// Every paired-gradient op checked once for `seed`, as `(op, report)`.
pub fn op_gradients<T: Element>(check: GradCheck, seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let stride = r.random_range(1..=2);
    let pad = padding(&mut r);
    let x = random_tensor::<T>(&[2, 3, 6, 5], &mut r);

    // conv2d
    let w = random_tensor::<T>(&[4, 3, 3, 3], &mut r);
    let b = random_tensor::<T>(&[4], &mut r);
    let p = ConvParams::new(w.clone(), Some(b.clone()), stride, pad);
    let y = ops::conv2d(&x, &p).unwrap();
    let proj = projection::<T>(y.shape(), &mut r);
    let g = ops::conv2d_grad(&x, &p, &proj).unwrap();
    let loss = |x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>| {
        let p = ConvParams::new(w.clone(), Some(b.clone()), stride, pad);
        project_loss(&ops::conv2d(x, &p).unwrap(), &proj)
    };
    let mut rep = check.check(&x, &g.input, &mut r, |t| loss(t, &w, &b));
    rep.merge(check.check(&w, &g.weights, &mut r, |t| loss(&x, t, &b)));
    rep.merge(check.check(&b, g.bias.as_ref().unwrap(), &mut r, |t| loss(&x, &w, t)));
    out.push(("conv2d", rep));

    // depthwise_conv2d
    let w = random_tensor::<T>(&[3, 1, 3, 3], &mut r);
    let p = ConvParams::new(w.clone(), Some(random_tensor(&[3], &mut r)), stride, pad);
    let db = p.bias.clone().unwrap();
    let y = ops::depthwise_conv2d(&x, &p).unwrap();
    let proj = projection::<T>(y.shape(), &mut r);
    let g = ops::depthwise_conv2d_grad(&x, &p, &proj).unwrap();
    let loss = |x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>| {
        let p = ConvParams::new(w.clone(), Some(b.clone()), stride, pad);
        project_loss(&ops::depthwise_conv2d(x, &p).unwrap(), &proj)
    };
    let mut rep = check.check(&x, &g.input, &mut r, |t| loss(t, &w, &db));
    rep.merge(check.check(&w, &g.weights, &mut r, |t| loss(&x, t, &db)));
    rep.merge(check.check(&db, g.bias.as_ref().unwrap(), &mut r, |t| loss(&x, &w, t)));
    out.push(("depthwise_conv2d", rep));

    // maxpool2d
    let xs = separated::<T>(&[2, 3, 6, 5], &mut r);
    let pp = if pad == Padding::Same {
        PoolParams::new(3, stride, Padding::Same)
    } else {
        PoolParams::new(2, stride, Padding::Valid)
    };
    let y = ops::maxpool2d(&xs, pp).unwrap();
    let proj = projection::<T>(y.shape(), &mut r);
    let g = ops::maxpool2d_grad(&xs, pp, &proj).unwrap();
    let rep = check.check(&xs, &g, &mut r, |t| project_loss(&ops::maxpool2d(t, pp).unwrap(), &proj));
    out.push(("maxpool2d", rep));

    // avg_pool2d
    let y = ops::avg_pool2d(&x, 2, stride).unwrap();
    let proj = projection::<T>(y.shape(), &mut r);
    let g = ops::avg_pool2d_grad(x.shape(), 2, stride, &proj).unwrap();
    let rep = check.check(&x, &g, &mut r, |t| project_loss(&ops::avg_pool2d(t, 2, stride).unwrap(), &proj));
    out.push(("avg_pool2d", rep));

    // global_avg_pool
    let proj = projection::<T>(&[2, 3], &mut r);
    let g = ops::global_avg_pool_grad(x.shape(), &proj).unwrap();
    let rep = check.check(&x, &g, &mut r, |t| project_loss(&ops::global_avg_pool(t).unwrap(), &proj));
    out.push(("global_avg_pool", rep));

    // batchnorm2d, train mode
    let xb = random_tensor::<T>(&[2, 3, 4, 4], &mut r);
    let mut state = BatchNormState::<T>::new(3);
    state.gamma = random_tensor(&[3], &mut r);
    state.beta = random_tensor(&[3], &mut r);
    let o = ops::batchnorm2d(&xb, &state, Mode::Train).unwrap();
    let proj = projection::<T>(o.output.shape(), &mut r);
    let g = ops::batchnorm2d_grad(&o.cache, &state, &proj).unwrap();
    let loss = |x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>| {
        let mut s = state.clone();
        s.gamma = gamma.clone();
        s.beta = beta.clone();
        project_loss(&ops::batchnorm2d(x, &s, Mode::Train).unwrap().output, &proj)
    };
    let mut rep = check.check(&xb, &g.input, &mut r, |t| loss(t, &state.gamma, &state.beta));
    rep.merge(check.check(&state.gamma, &g.gamma, &mut r, |t| loss(&xb, t, &state.beta)));
    rep.merge(check.check(&state.beta, &g.beta, &mut r, |t| loss(&xb, &state.gamma, t)));
    out.push(("batchnorm2d", rep));

    // relu
    let proj = projection::<T>(xs.shape(), &mut r);
    let g = ops::relu_grad(&xs, &proj).unwrap();
    let rep = check.check(&xs, &g, &mut r, |t| project_loss(&ops::relu(t), &proj));
    out.push(("relu", rep));

    // linear
    let u = random_tensor::<T>(&[3, 7], &mut r);
    let wl = random_tensor::<T>(&[7, 5], &mut r);
    let bl = random_tensor::<T>(&[5], &mut r);
    let proj = projection::<T>(&[3, 5], &mut r);
    let g = ops::linear_grad(&u, &wl, true, &proj).unwrap();
    let loss = |u: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>| project_loss(&ops::linear(u, w, Some(b)).unwrap(), &proj);
    let mut rep = check.check(&u, &g.input, &mut r, |t| loss(t, &wl, &bl));
    rep.merge(check.check(&wl, &g.weights, &mut r, |t| loss(&u, t, &bl)));
    rep.merge(check.check(&bl, g.bias.as_ref().unwrap(), &mut r, |t| loss(&u, &wl, t)));
    out.push(("linear", rep));

    // softmax cross-entropy
    let logits = random_tensor::<T>(&[4, 6], &mut r).scale(T::from_f64(3.0));
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..6)).collect();
    let (_, g) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    let rep = check.check(&logits, &g, &mut r, |t| ops::softmax_cross_entropy(t, &labels).unwrap().0.as_f64());
    out.push(("softmax_cross_entropy", rep));
    out
}

/// Finite-difference check of a parameterized module against a random projection loss.
///
/// `run` returns the forward output and, when given an upstream gradient, the
/// input gradient plus parameter gradients.
pub fn check_module<M, F>(module: &M, x: &Tensor<f64>, rng: &mut impl Rng, check: GradCheck, run: F) -> GradCheckReport
where
    M: Parameters<f64> + Clone,
    F: Fn(&M, &Tensor<f64>, Option<&Tensor<f64>>) -> (Tensor<f64>, Option<(Tensor<f64>, Grads<f64>)>),
{
    let (y, _) = run(module, x, None);
    let p = projection::<f64>(y.shape(), rng);
    let loss = |m: &M, input: &Tensor<f64>| run(m, input, None).0.dot(&p).unwrap();
    let (_, back) = run(module, x, Some(&p));
    let (gx, grads) = back.expect("backward requested");

    let mut report = check.check(x, &gx, rng, |probe| loss(module, probe));

    let mut names = Vec::new();
    module.visit(&mut |name, _, role| {
        if role == TensorRole::Param {
            names.push(name.to_owned());
        }
    });
    for name in names {
        let analytic = grads
            .get(&name)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .clone();
        let current = tensor_named(module, &name);
        let r = check.check(&current, &analytic, rng, |probe| {
            let mut m = module.clone();
            set_tensor(&mut m, &name, probe);
            loss(&m, x)
        });
        report.merge(r);
    }
    report
}

pub fn tensor_named<T: Element, M: Parameters<T>>(module: &M, name: &str) -> Tensor<T> {
    let mut out = None;
    module.visit(&mut |n, t, _| {
        if n == name {
            out = Some(t.clone());
        }
    });
    out.unwrap_or_else(|| panic!("no tensor named {name}"))
}

pub fn set_tensor<T: Element, M: Parameters<T>>(module: &mut M, name: &str, value: &Tensor<T>) {
    module.visit_mut(&mut |n, t, _| {
        if n == name {
            *t = value.clone();
        }
    });
}

/// Zeroes every tensor whose name satisfies `pred`.
pub fn zero_where<T: Element, M: Parameters<T>>(module: &mut M, pred: impl Fn(&str) -> bool) {
    module.visit_mut(&mut |n, t, _| {
        if pred(n) {
            *t = Tensor::zeros(t.shape().to_vec());
        }
    });
}

/// One small configuration per block kind and stride/projection variant.
pub fn block_gradient_specs() -> Vec<(BlockSpec, Chw)> {
    vec![
        (BlockSpec::Vgg { convs: 2, channels: 3 }, [2, 6, 6]),
        (
            BlockSpec::Inception {
                b1: 2,
                reduce3: 2,
                b3: 2,
                reduce5: 1,
                b5: 2,
                bpool: 1,
            },
            [3, 5, 5],
        ),
        (BlockSpec::ResidualBasic { channels: 3, stride: 1 }, [3, 5, 5]),
        (BlockSpec::ResidualBasic { channels: 4, stride: 2 }, [2, 5, 5]),
        (BlockSpec::ResidualBottleneck { channels: 8, stride: 2 }, [3, 6, 6]),
        (BlockSpec::Separable { channels: 4, stride: 2, repeat: 1 }, [3, 5, 5]),
        (BlockSpec::Separable { channels: 3, stride: 1, repeat: 1 }, [3, 5, 5]),
        (BlockSpec::Separable { channels: 4, stride: 2, repeat: 2 }, [3, 5, 5]),
        (BlockSpec::DenseBlock { layers: 2, growth: 2 }, [3, 4, 4]),
        (BlockSpec::Transition { compression: 0.5 }, [4, 6, 6]),
        (
            BlockSpec::InvertedResidual {
                channels: 3,
                stride: 1,
                expansion: 2,
            },
            [3, 5, 5],
        ),
        (
            BlockSpec::InvertedResidual {
                channels: 4,
                stride: 2,
                expansion: 2,
            },
            [3, 5, 5],
        ),
        (BlockSpec::MaxPool { window: 2, stride: 2 }, [2, 4, 4]),
    ]
}

/// Train-mode f64 gradient check of one freshly initialized block.
pub fn block_gradient(spec: BlockSpec, chw: Chw, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut block: Block<f64> = spec.build(chw, "b", &mut r).unwrap();
    // Zero-initialized biases put ReLU inputs exactly on the kink wherever a window is all zeros.
    block.visit_mut(&mut |n, t, _| {
        if n.ends_with(".bias") {
            *t = random_tensor::<f64>(t.shape(), &mut r);
        }
    });
    let x = match spec {
        // Separated values keep pooling windows free of near-ties.
        BlockSpec::MaxPool { .. } => separated::<f64>(&[2, chw[0], chw[1], chw[2]], &mut r),
        _ => random_tensor::<f64>(&[2, chw[0], chw[1], chw[2]], &mut r),
    };
    check_module(&block, &x, &mut r, GradCheck::f64_mode(), |b, input, gy| {
        let mut ctx = Ctx::train();
        let (y, cache) = b.forward(input, &mut ctx).unwrap();
        let back = gy.map(|g| {
            let mut grads = Grads::new();
            let gx = b.backward(&cache, g, &mut grads).unwrap();
            (gx, grads)
        });
        (y, back)
    })
}

/// Largest absolute difference between optimized and loop-oracle conv2d,
/// depthwise conv, max pool and average pool on one random case.
pub fn oracle_case(r: &mut impl Rng) -> f32 {
    let k = [1, 3, 5][r.random_range(0..3)];
    let stride = r.random_range(1..=2);
    let pad = padding(r);
    let (n, cin, cout) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
    let (h, w) = (r.random_range(k..=12), r.random_range(k..=12));
    let x = random_tensor::<f32>(&[n, cin, h, w], r);
    let mut worst = 0f32;

    let wt = random_tensor::<f32>(&[cout, cin, k, k], r);
    let b = random_tensor::<f32>(&[cout], r);
    let got = ops::conv2d(&x, &ConvParams::new(wt.clone(), Some(b.clone()), stride, pad)).unwrap();
    let want = reference::conv2d(&x, &wt, Some(&b), stride, pad);
    worst = worst.max(got.max_abs_diff(&want).unwrap());

    let dw = random_tensor::<f32>(&[cin, 1, k, k], r);
    let got = ops::depthwise_conv2d(&x, &ConvParams::new(dw.clone(), None, stride, pad)).unwrap();
    let want = reference::depthwise_conv2d(&x, &dw, None, stride, pad);
    worst = worst.max(got.max_abs_diff(&want).unwrap());

    let win = r.random_range(1..=k.max(2).min(h.min(w)));
    let pool_pad = if win % 2 == 1 { pad } else { Padding::Valid };
    let got = ops::maxpool2d(&x, PoolParams::new(win, stride, pool_pad)).unwrap();
    let want = reference::maxpool2d(&x, win, stride, pool_pad);
    worst = worst.max(got.max_abs_diff(&want).unwrap());

    let got = ops::avg_pool2d(&x, win, stride).unwrap();
    let want = reference::avg_pool2d(&x, win, stride);
    worst.max(got.max_abs_diff(&want).unwrap())
}

/// Worst per-case oracle difference over `cases` cases drawn from `seed`.
pub fn oracle_sweep(cases: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..cases).map(|_| oracle_case(&mut r)).collect()
}

fn learnable<T: Element>(b: &Block<T>) -> usize {
    let mut n = 0;
    b.visit(&mut |_, t, role| {
        if role == TensorRole::Param {
            n += t.len()
        }
    });
    n
}

/// Hand-written learnable-parameter formulas, kept apart from `BlockSpec::param_count`.
pub fn param_formula(spec: &BlockSpec, cin: usize) -> usize {
    let conv = |k: usize, i: usize, o: usize, bias: bool| k * k * i * o + if bias { o } else { 0 };
    let proj = |cout: usize, stride: usize| if stride == 1 && cin == cout { 0 } else { cin * cout + 2 * cout };
    match *spec {
        BlockSpec::Vgg { convs, channels } => conv(3, cin, channels, true) + (convs - 1) * conv(3, channels, channels, true),
        BlockSpec::Inception {
            b1,
            reduce3,
            b3,
            reduce5,
            b5,
            bpool,
        } => (cin + 1) * (b1 + reduce3 + reduce5 + bpool) + conv(3, reduce3, b3, true) + conv(5, reduce5, b5, true),
        BlockSpec::ResidualBasic { channels: c, stride } => 9 * cin * c + 9 * c * c + 4 * c + proj(c, stride),
        BlockSpec::ResidualBottleneck { channels: c, stride } => {
            let m = (c / 4).max(1);
            cin * m + 9 * m * m + m * c + 4 * m + 2 * c + proj(c, stride)
        }
        BlockSpec::Separable {
            channels: c,
            stride,
            repeat,
        } => (9 * cin + cin * c + 2 * c) + (repeat - 1) * (9 * c + c * c + 2 * c) + proj(c, stride),
        BlockSpec::DenseBlock { layers, growth: g } => (0..layers)
            .map(|i| {
                let c = cin + i * g;
                2 * c + c * 4 * g + 2 * 4 * g + 9 * 4 * g * g
            })
            .sum(),
        BlockSpec::Transition { compression } => {
            let out = (cin as f64 * compression).floor() as usize;
            2 * cin + cin * out
        }
        BlockSpec::InvertedResidual {
            channels: c,
            expansion: t,
            ..
        } => {
            let e = t * cin;
            cin * e + 2 * e + 9 * e + 2 * e + e * c + 2 * c
        }
        BlockSpec::MaxPool { .. } => 0,
    }
}

/// The declared arithmetic sweep: returns the number of checks run, or the first failure.
///
/// - dense block output channels = Cin + L·g, predicted and at runtime
/// - inception output channels = sum of branch widths, predicted and at runtime
/// - inverted residual with zeroed conv weights is an exact identity when it has a skip
/// - learnable parameters of every built block = hand formula = `param_count`
pub fn block_arithmetic_sweep() -> Result<usize, String> {
    let mut checks = 0usize;
    let mut r = rng(7);
    let mut expect = |ok: bool, what: String| -> Result<(), String> {
        checks += 1;
        if ok {
            Ok(())
        } else {
            Err(what)
        }
    };
    let runtime = |b: &Block<f32>, chw: Chw, r: &mut ChaCha8Rng| -> Vec<usize> {
        let x = random_tensor::<f32>(&[1, chw[0], chw[1], chw[2]], r);
        b.infer(&x).unwrap().shape().to_vec()
    };
    let count = |spec: BlockSpec, chw: Chw, b: &Block<f32>| (learnable(b), param_formula(&spec, chw[0]), spec.param_count(chw[0]));

    for cin in 1..=8 {
        for layers in 1..=4 {
            for growth in 1..=4 {
                let spec = BlockSpec::DenseBlock { layers, growth };
                let chw = [cin, 3, 3];
                let want = cin + layers * growth;
                let out = spec.output_shape(chw).map_err(|e| e.to_string())?;
                expect(out == [want, 3, 3], format!("{spec:?} on {chw:?} predicted {out:?}"))?;
                let b = spec.build::<f32>(chw, "b", &mut r).unwrap();
                let shape = runtime(&b, chw, &mut r);
                expect(shape == [1, want, 3, 3], format!("{spec:?} on {chw:?} ran to {shape:?}"))?;
                let (a, f, p) = count(spec, chw, &b);
                expect(a == f && f == p, format!("{spec:?} on {chw:?}: built {a}, formula {f}, param_count {p}"))?;
            }
        }
    }

    for cin in [1, 3] {
        for widths in 0..64u32 {
            let w = |bit: u32| 1 + ((widths >> bit) & 1) as usize;
            let spec = BlockSpec::Inception {
                b1: w(0),
                reduce3: w(1),
                b3: w(2),
                reduce5: w(3),
                b5: w(4),
                bpool: w(5),
            };
            let chw = [cin, 4, 4];
            let want = w(0) + w(2) + w(4) + w(5);
            let out = spec.output_shape(chw).map_err(|e| e.to_string())?;
            expect(out == [want, 4, 4], format!("{spec:?} predicted {out:?}"))?;
            let b = spec.build::<f32>(chw, "b", &mut r).unwrap();
            let shape = runtime(&b, chw, &mut r);
            expect(shape == [1, want, 4, 4], format!("{spec:?} ran to {shape:?}"))?;
            let (a, f, p) = count(spec, chw, &b);
            expect(a == f && f == p, format!("{spec:?}: built {a}, formula {f}, param_count {p}"))?;
        }
    }

    for c in 1..=6 {
        for expansion in 1..=4 {
            let spec = BlockSpec::InvertedResidual {
                channels: c,
                stride: 1,
                expansion,
            };
            let chw = [c, 4, 5];
            let mut b = spec.build::<f32>(chw, "b", &mut r).unwrap();
            zero_where(&mut b, |n| n.ends_with(".weight"));
            let x = random_tensor::<f32>(&[2, c, 4, 5], &mut r);
            let y = b.infer(&x).unwrap();
            expect(y == x, format!("{spec:?} with zeroed weights is not the identity"))?;
        }
    }

    let mut kinds: Vec<BlockSpec> = Vec::new();
    for c in [1, 4, 8] {
        for s in [1, 2] {
            kinds.push(BlockSpec::ResidualBasic { channels: c, stride: s });
            kinds.push(BlockSpec::ResidualBottleneck { channels: c, stride: s });
            for t in 1..=3 {
                kinds.push(BlockSpec::InvertedResidual {
                    channels: c,
                    stride: s,
                    expansion: t,
                });
                kinds.push(BlockSpec::Separable {
                    channels: c,
                    stride: s,
                    repeat: t,
                });
            }
        }
        for n in 1..=3 {
            kinds.push(BlockSpec::Vgg { convs: n, channels: c });
        }
    }
    for q in 1..=4 {
        kinds.push(BlockSpec::Transition {
            compression: q as f64 / 4.0,
        });
    }
    kinds.push(BlockSpec::MaxPool { window: 2, stride: 2 });
    for spec in kinds {
        for cin in [1, 4, 6] {
            let chw = [cin, 6, 6];
            if spec.output_shape(chw).is_err() {
                continue;
            }
            let b = spec.build::<f32>(chw, "b", &mut r).unwrap();
            let (a, f, p) = count(spec, chw, &b);
            expect(a == f && f == p, format!("{spec:?} on {chw:?}: built {a}, formula {f}, param_count {p}"))?;
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas_on_known_cases() {
        assert_eq!(param_formula(&BlockSpec::Vgg { convs: 2, channels: 8 }, 3), 808);
        let ir = BlockSpec::InvertedResidual {
            channels: 16,
            stride: 2,
            expansion: 6,
        };
        assert_eq!(param_formula(&ir, 8), 1584 + 2 * (48 + 48 + 16));
    }
}
