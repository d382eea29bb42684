use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signforge_core::gradcheck::{random_tensor, GradCheck};
use signforge_core::ops::{self, BatchNormState, ConvParams, Mode, Padding, PoolParams};
use signforge_core::verify::{op_gradients, oracle_sweep};
use signforge_core::{Element, Tensor};

const ORACLE_TOL: f32 = 1e-5;
const LINEARITY_TOL: f32 = 1e-5;
const GRAD_TOL_F32: f64 = 1e-2;
const GRAD_TOL_F64: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn padding(rng: &mut impl Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

#[test]
fn optimized_kernels_match_loop_oracles() {
    let diffs = oracle_sweep(200, 42);
    assert_eq!(diffs.len(), 200);
    for (case, d) in diffs.iter().enumerate() {
        assert!(*d <= ORACLE_TOL, "case {case}: max abs diff {d:e}");
    }
}

#[test]
fn maxpool_small_examples() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let y = ops::maxpool2d(&x, PoolParams::new(2, 2, Padding::Valid)).unwrap();
    assert_eq!(y.data(), &[4.0]);
    assert!(ops::maxpool2d(&x, PoolParams::new(3, 1, Padding::Valid)).is_err());
}

#[test]
fn global_avg_pool_examples() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(ops::global_avg_pool(&x).unwrap().data(), &[2.5]);
    let c = Tensor::full(vec![2, 3, 4, 4], 5.0f32);
    assert!(ops::global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 5.0));
}

#[test]
fn batchnorm_train_normalizes_and_affine_applies() {
    let x = random_tensor::<f64>(&[4, 3, 5, 5], &mut rng(1)).map(|v| 3.0 * v + 1.5);
    let mut state = BatchNormState::<f64>::new(3);
    let y = ops::batchnorm2d(&x, &state, Mode::Train).unwrap().output;
    for (mean, var) in channel_moments(&y) {
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
    }
    state.gamma = Tensor::full(vec![3], 2.0);
    state.beta = Tensor::full(vec![3], 3.0);
    let y = ops::batchnorm2d(&x, &state, Mode::Train).unwrap().output;
    for (mean, var) in channel_moments(&y) {
        assert!((mean - 3.0).abs() < 1e-4 && (var.sqrt() - 2.0).abs() < 1e-4, "{mean} {var}");
    }
}

fn channel_moments(y: &Tensor<f64>) -> Vec<(f64, f64)> {
    let [n, c, h, w] = y.dims4("moments").unwrap();
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| y.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            (m, v)
        })
        .collect()
}

#[test]
fn linear_maps_are_linear() {
    let mut r = rng(7);
    let (a, b) = (0.7f32, -1.3f32);
    let combo = |x: &Tensor<f32>, y: &Tensor<f32>| x.scale(a).add(&y.scale(b)).unwrap();
    for _ in 0..10 {
        let x = random_tensor::<f32>(&[2, 3, 7, 6], &mut r);
        let y = random_tensor::<f32>(&[2, 3, 7, 6], &mut r);
        let stride = r.random_range(1..=2);
        let pad = padding(&mut r);

        let conv = ConvParams::new(random_tensor(&[4, 3, 3, 3], &mut r), None, stride, pad);
        let f = |t: &Tensor<f32>| ops::conv2d(t, &conv).unwrap();
        assert!(f(&combo(&x, &y)).max_abs_diff(&combo(&f(&x), &f(&y))).unwrap() <= LINEARITY_TOL);

        let dw = ConvParams::new(random_tensor(&[3, 1, 3, 3], &mut r), None, stride, pad);
        let f = |t: &Tensor<f32>| ops::depthwise_conv2d(t, &dw).unwrap();
        assert!(f(&combo(&x, &y)).max_abs_diff(&combo(&f(&x), &f(&y))).unwrap() <= LINEARITY_TOL);

        let wl = random_tensor::<f32>(&[10, 4], &mut r);
        let (u, v) = (random_tensor::<f32>(&[3, 10], &mut r), random_tensor::<f32>(&[3, 10], &mut r));
        let f = |t: &Tensor<f32>| ops::linear(t, &wl, None).unwrap();
        assert!(f(&combo(&u, &v)).max_abs_diff(&combo(&f(&u), &f(&v))).unwrap() <= LINEARITY_TOL);
    }
}

#[test]
fn shape_formulas_hold_over_sweep() {
    for k in [1usize, 3, 5] {
        for stride in [1usize, 2] {
            for h in k..=16 {
                for w in k..=16 {
                    for pad in [Padding::Same, Padding::Valid] {
                        let (eh, ew) = match pad {
                            Padding::Same => (h.div_ceil(stride), w.div_ceil(stride)),
                            Padding::Valid => ((h - k) / stride + 1, (w - k) / stride + 1),
                        };
                        assert_eq!(ops::output_dim(h, k, stride, pad).unwrap(), eh);
                        let x = Tensor::<f32>::zeros(vec![1, 1, h, w]);
                        let p = ConvParams::new(Tensor::zeros(vec![1, 1, k, k]), None, stride, pad);
                        assert_eq!(ops::conv2d(&x, &p).unwrap().shape(), &[1, 1, eh, ew]);
                        if pad == Padding::Same && stride == 1 {
                            assert_eq!((eh, ew), (h, w));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn depthwise_separable_parameter_savings() {
    let dw = ConvParams::<f32>::new(Tensor::zeros(vec![8, 1, 3, 3]), None, 1, Padding::Same);
    let pw = ConvParams::<f32>::new(Tensor::zeros(vec![16, 8, 1, 1]), None, 1, Padding::Valid);
    let std = ConvParams::<f32>::new(Tensor::zeros(vec![16, 8, 3, 3]), None, 1, Padding::Same);
    assert_eq!(dw.param_count() + pw.param_count(), 200);
    assert_eq!(std.param_count(), 1152);
}

fn assert_suite<T: Element>(check: GradCheck, tol: f64) {
    for seed in 0..SEEDS {
        for (op, rep) in op_gradients::<T>(check, seed) {
            assert!(rep.checked > 0);
            assert!(
                rep.max_rel_error <= tol,
                "{op} seed {seed}: {:.3e} at {:?}",
                rep.max_rel_error,
                rep.worst
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences_f64() {
    assert_suite::<f64>(GradCheck::f64_mode(), GRAD_TOL_F64);
}

#[test]
fn gradients_match_finite_differences_f32() {
    assert_suite::<f32>(GradCheck::f32_mode(), GRAD_TOL_F32);
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut r = rng(3);
    let x = random_tensor::<f32>(&[1, 2, 5, 5], &mut r);
    let p = ConvParams::new(random_tensor(&[3, 2, 3, 3], &mut r), Some(random_tensor(&[3], &mut r)), 2, Padding::Same);
    let y = ops::conv2d(&x, &p).unwrap();
    let g = ops::conv2d_grad(&x, &p, &Tensor::zeros(y.shape().to_vec())).unwrap();
    assert!(g.input.data().iter().chain(g.weights.data()).chain(g.bias.unwrap().data()).all(|&v| v == 0.0));
}
