//! Standard and depthwise 2-D convolution.
//!
//! The standard convolution lowers each sample to a patch matrix (im2col) and
//! runs a GEMM; the depthwise variant is a direct loop since each channel's
//! work is too small to amortize the lowering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`; zero pad split evenly, odd remainder bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Resolved geometry of one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisGeometry {
    pub input: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_before: usize,
    pub pad_total: usize,
    pub output: usize,
}

pub fn axis_geometry(
    op: &'static str,
    axis: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<AxisGeometry> {
    if stride == 0 || kernel == 0 {
        return Err(TensorError::Invalid(format!(
            "{op}: kernel and stride must be positive on {axis} axis"
        )));
    }
    let pad_total = match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(TensorError::Window {
                    op,
                    axis,
                    window: kernel,
                    extent: input,
                });
            }
            0
        }
        Padding::Same => {
            if kernel % 2 == 0 {
                return Err(TensorError::EvenKernel { op, axis, kernel });
            }
            let out = input.div_ceil(stride);
            ((out - 1) * stride + kernel).saturating_sub(input)
        }
    };
    let output = (input + pad_total - kernel) / stride + 1;
    Ok(AxisGeometry {
        input,
        kernel,
        stride,
        pad_before: pad_total / 2,
        pad_total,
        output,
    })
}

/// Output extent of one axis, `floor((input + pad_total - kernel) / stride) + 1`.
pub fn output_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    axis_geometry("output_dim", "spatial", input, kernel, stride, padding).map(|g| g.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub stride: usize,
    pub padding: Padding,
    /// `Cout x Cin x Kh x Kw` (standard) or `C x 1 x Kh x Kw` (depthwise).
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Option<Tensor<T>>, stride: usize, padding: Padding) -> Self {
        Self {
            stride,
            padding,
            weights,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn resolve<T: Element>(
        op: &'static str,
        input: &Tensor<T>,
        p: &ConvParams<T>,
        depthwise: bool,
    ) -> Result<Self> {
        let [n, cin, h, w] = input.dims4(op)?;
        let [cout, wcin, kh, kw] = p.weights.dims4(op)?;
        if depthwise {
            if cout != cin {
                return Err(TensorError::Dim {
                    op,
                    axis: "channel",
                    expected: cin,
                    actual: cout,
                });
            }
            if wcin != 1 {
                return Err(TensorError::Dim {
                    op,
                    axis: "weight input-channel",
                    expected: 1,
                    actual: wcin,
                });
            }
        } else if wcin != cin {
            return Err(TensorError::Dim {
                op,
                axis: "channel",
                expected: wcin,
                actual: cin,
            });
        }
        if let Some(b) = &p.bias {
            if b.len() != cout {
                return Err(TensorError::Dim {
                    op,
                    axis: "bias",
                    expected: cout,
                    actual: b.len(),
                });
            }
        }
        let gh = axis_geometry(op, "height", h, kh, p.stride, p.padding)?;
        let gw = axis_geometry(op, "width", w, kw, p.stride, p.padding)?;
        Ok(Self {
            n,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            stride: p.stride,
            pad_top: gh.pad_before,
            pad_left: gw.pad_before,
            ho: gh.output,
            wo: gw.output,
        })
    }

    fn patch_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn check_grad_out<T: Element>(&self, op: &'static str, g: &Tensor<T>) -> Result<()> {
        let [gn, gc, gh, gw] = g.dims4(op)?;
        for (axis, expected, actual) in [
            ("batch", self.n, gn),
            ("channel", self.cout, gc),
            ("height", self.ho, gh),
            ("width", self.wo, gw),
        ] {
            if expected != actual {
                return Err(TensorError::Dim {
                    op,
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Source coordinate for output position `o` and kernel tap `k`, if inside the input.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

/// Lowers one sample (`Cin x H x W`) to a `(Cin*Kh*Kw) x (Ho*Wo)` patch matrix.
fn im2col<T: Element>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((ci * g.kh + i) * g.kw + j) * plane;
                let dst = &mut cols[row..row + plane];
                for oh in 0..g.ho {
                    let d = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    match Geometry::src(oh, i, g.stride, g.pad_top, g.h) {
                        None => d.fill(T::zero()),
                        Some(ih) => {
                            let src_row = &xc[ih * g.w..(ih + 1) * g.w];
                            for (ow, v) in d.iter_mut().enumerate() {
                                *v = match Geometry::src(ow, j, g.stride, g.pad_left, g.w) {
                                    Some(iw) => src_row[iw],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto one sample's input gradient.
fn col2im<T: Element>(cols: &[T], g: &Geometry, gx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let gc = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((ci * g.kh + i) * g.kw + j) * plane;
                let src = &cols[row..row + plane];
                for oh in 0..g.ho {
                    let Some(ih) = Geometry::src(oh, i, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for ow in 0..g.wo {
                        if let Some(iw) = Geometry::src(ow, j, g.stride, g.pad_left, g.w) {
                            gc[ih * g.w + iw] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Element>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = Geometry::resolve("conv2d", input, p, false)?;
    let (k, plane) = (g.patch_rows(), g.out_plane());
    let in_size = g.cin * g.h * g.w;
    let w = p.weights.data();
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    out.par_chunks_mut(g.cout * plane)
        .zip(input.data().par_chunks(in_size))
        .for_each(|(o, x)| {
            if g.is_pointwise() {
                T::gemm(g.cout, k, plane, T::one(), w, false, x, false, T::zero(), o);
            } else {
                let mut cols = vec![T::zero(); k * plane];
                im2col(x, &g, &mut cols);
                T::gemm(g.cout, k, plane, T::one(), w, false, &cols, false, T::zero(), o);
            }
            if let Some(b) = &p.bias {
                for (co, chunk) in o.chunks_mut(plane).enumerate() {
                    let bv = b.data()[co];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    let out = Tensor::from_parts_unchecked(vec![g.n, g.cout, g.ho, g.wo], out);
    Ok(out)
}

pub fn conv2d_grad<T: Element>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::resolve("conv2d_grad", input, p, false)?;
    g.check_grad_out("conv2d_grad", grad_out)?;
    let (k, plane) = (g.patch_rows(), g.out_plane());
    let in_size = g.cin * g.h * g.w;
    let w = p.weights.data();
    let mut gx = vec![T::zero(); input.len()];

    let per_sample: Vec<Vec<T>> = gx
        .par_chunks_mut(in_size)
        .zip(input.data().par_chunks(in_size))
        .zip(grad_out.data().par_chunks(g.cout * plane))
        .map(|((gxn, x), go)| {
            let mut gw = vec![T::zero(); g.cout * k];
            if g.is_pointwise() {
                T::gemm(g.cout, plane, k, T::one(), go, false, x, true, T::zero(), &mut gw);
                T::gemm(k, g.cout, plane, T::one(), w, true, go, false, T::zero(), gxn);
            } else {
                let mut cols = vec![T::zero(); k * plane];
                im2col(x, &g, &mut cols);
                T::gemm(g.cout, plane, k, T::one(), go, false, &cols, true, T::zero(), &mut gw);
                T::gemm(k, g.cout, plane, T::one(), w, true, go, false, T::zero(), &mut cols);
                col2im(&cols, &g, gxn);
            }
            gw
        })
        .collect();

    // fixed-order reduction keeps results independent of scheduling
    let mut gw = vec![T::zero(); g.cout * k];
    for part in &per_sample {
        for (a, &b) in gw.iter_mut().zip(part) {
            *a += b;
        }
    }

    let bias = p.bias.as_ref().map(|_| {
        let mut gb = vec![T::zero(); g.cout];
        for go in grad_out.data().chunks(g.cout * plane) {
            for (co, chunk) in go.chunks(plane).enumerate() {
                gb[co] += chunk.iter().copied().sum::<T>();
            }
        }
        Tensor::from_parts_unchecked(vec![g.cout], gb)
    });

    let grads = ConvGrads {
        input: Tensor::from_parts_unchecked(input.shape().to_vec(), gx),
        weights: Tensor::from_parts_unchecked(p.weights.shape().to_vec(), gw),
        bias,
    };
    Ok(grads)
}

pub fn depthwise_conv2d<T: Element>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = Geometry::resolve("depthwise_conv2d", input, p, true)?;
    let (plane, in_plane, taps) = (g.out_plane(), g.h * g.w, g.kh * g.kw);
    let w = p.weights.data();
    let mut out = vec![T::zero(); g.n * g.cin * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, o)| {
        let c = idx % g.cin;
        let x = &input.data()[idx * in_plane..(idx + 1) * in_plane];
        let wc = &w[c * taps..(c + 1) * taps];
        let bias = p.bias.as_ref().map_or(T::zero(), |b| b.data()[c]);
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let mut acc = bias;
                for i in 0..g.kh {
                    let Some(ih) = Geometry::src(oh, i, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for j in 0..g.kw {
                        if let Some(iw) = Geometry::src(ow, j, g.stride, g.pad_left, g.w) {
                            acc += wc[i * g.kw + j] * x[ih * g.w + iw];
                        }
                    }
                }
                o[oh * g.wo + ow] = acc;
            }
        }
    });
    let out = Tensor::from_parts_unchecked(vec![g.n, g.cin, g.ho, g.wo], out);
    Ok(out)
}

pub fn depthwise_conv2d_grad<T: Element>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::resolve("depthwise_conv2d_grad", input, p, true)?;
    g.check_grad_out("depthwise_conv2d_grad", grad_out)?;
    let (plane, in_plane, taps) = (g.out_plane(), g.h * g.w, g.kh * g.kw);
    let w = p.weights.data();
    let x_all = input.data();
    let go_all = grad_out.data();

    let mut gx = vec![T::zero(); input.len()];
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, gxp)| {
        let c = idx % g.cin;
        let go = &go_all[idx * plane..(idx + 1) * plane];
        let wc = &w[c * taps..(c + 1) * taps];
        for oh in 0..g.ho {
            for i in 0..g.kh {
                let Some(ih) = Geometry::src(oh, i, g.stride, g.pad_top, g.h) else {
                    continue;
                };
                for ow in 0..g.wo {
                    let gv = go[oh * g.wo + ow];
                    for j in 0..g.kw {
                        if let Some(iw) = Geometry::src(ow, j, g.stride, g.pad_left, g.w) {
                            gxp[ih * g.w + iw] += wc[i * g.kw + j] * gv;
                        }
                    }
                }
            }
        }
    });

    // per channel: taps then bias, reduced over the batch in order
    let per_channel: Vec<(Vec<T>, T)> = (0..g.cin)
        .into_par_iter()
        .map(|c| {
            let mut gw = vec![T::zero(); taps];
            let mut gb = T::zero();
            for n in 0..g.n {
                let idx = n * g.cin + c;
                let x = &x_all[idx * in_plane..(idx + 1) * in_plane];
                let go = &go_all[idx * plane..(idx + 1) * plane];
                for oh in 0..g.ho {
                    for ow in 0..g.wo {
                        let gv = go[oh * g.wo + ow];
                        gb += gv;
                        for i in 0..g.kh {
                            let Some(ih) = Geometry::src(oh, i, g.stride, g.pad_top, g.h) else {
                                continue;
                            };
                            for j in 0..g.kw {
                                if let Some(iw) = Geometry::src(ow, j, g.stride, g.pad_left, g.w) {
                                    gw[i * g.kw + j] += x[ih * g.w + iw] * gv;
                                }
                            }
                        }
                    }
                }
            }
            (gw, gb)
        })
        .collect();

    let mut gw = Vec::with_capacity(g.cin * taps);
    let mut gb = Vec::with_capacity(g.cin);
    for (w_c, b_c) in per_channel {
        gw.extend(w_c);
        gb.push(b_c);
    }
    Ok(ConvGrads {
        input: Tensor::from_parts_unchecked(input.shape().to_vec(), gx),
        weights: Tensor::from_parts_unchecked(p.weights.shape().to_vec(), gw),
        bias: p
            .bias
            .as_ref()
            .map(|_| Tensor::from_parts_unchecked(vec![g.cin], gb)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_conv_scales_channel() {
        let x = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let p = ConvParams::new(Tensor::full(vec![1, 1, 1, 1], 2.0), None, 1, Padding::Valid);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn valid_three_by_three_shrinks_by_two() {
        let x = Tensor::<f32>::from_fn(vec![1, 1, 4, 4], |i| i as f32);
        let p = ConvParams::new(Tensor::full(vec![1, 1, 3, 3], 1.0), None, 1, Padding::Valid);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // top-left window: 0+1+2+4+5+6+8+9+10
        assert_eq!(y.data()[0], 45.0);
    }

    #[test]
    fn same_padding_puts_odd_remainder_bottom_right() {
        let g = axis_geometry("t", "h", 8, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.pad_before, g.pad_total, g.output), (0, 1, 4));
        let g = axis_geometry("t", "h", 7, 5, 1, Padding::Same).unwrap();
        assert_eq!((g.pad_before, g.pad_total, g.output), (2, 4, 7));
        assert!(matches!(
            axis_geometry("t", "h", 8, 2, 1, Padding::Same),
            Err(TensorError::EvenKernel { .. })
        ));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 4, 4]);
        let p = ConvParams::new(Tensor::zeros(vec![1, 3, 3, 3]), None, 1, Padding::Same);
        match conv2d(&x, &p) {
            Err(TensorError::Dim { axis, expected, actual, .. }) => {
                assert_eq!((axis, expected, actual), ("channel", 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_go = Tensor::<f32>::zeros(vec![1, 1, 3, 4]);
        let x = Tensor::<f32>::zeros(vec![1, 3, 4, 4]);
        assert!(matches!(
            conv2d_grad(&x, &p, &bad_go),
            Err(TensorError::Dim { axis: "height", .. })
        ));
    }

    #[test]
    fn scalar_conv_gradients_follow_product_rule() {
        let x = Tensor::<f64>::full(vec![1, 1, 1, 1], 3.0);
        let p = ConvParams::new(
            Tensor::full(vec![1, 1, 1, 1], -2.0),
            Some(Tensor::zeros(vec![1])),
            1,
            Padding::Valid,
        );
        let go = Tensor::full(vec![1, 1, 1, 1], 0.5);
        let g = conv2d_grad(&x, &p, &go).unwrap();
        assert_eq!(g.weights.data(), &[1.5]);
        assert_eq!(g.input.data(), &[-1.0]);
        assert_eq!(g.bias.unwrap().data(), &[0.5]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 5, 5], |i| (i as f32).sin());
        let p = ConvParams::new(
            Tensor::from_fn(vec![4, 3, 3, 3], |i| (i as f32).cos()),
            Some(Tensor::zeros(vec![4])),
            2,
            Padding::Same,
        );
        let go = Tensor::zeros(vec![2, 4, 3, 3]);
        let g = conv2d_grad(&x, &p, &go).unwrap();
        assert!(g.input.data().iter().chain(g.weights.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = Tensor::<f32>::from_fn(vec![1, 2, 3, 3], |i| i as f32 - 4.0);
        let p = ConvParams::new(Tensor::full(vec![2, 1, 1, 1], 1.0), None, 1, Padding::Valid);
        assert_eq!(depthwise_conv2d(&x, &p).unwrap(), x);
        let bad = ConvParams::new(Tensor::<f32>::full(vec![3, 1, 1, 1], 1.0), None, 1, Padding::Valid);
        assert!(matches!(
            depthwise_conv2d(&x, &bad),
            Err(TensorError::Dim { axis: "channel", .. })
        ));
    }
}
