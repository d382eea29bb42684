//! Straight-loop reference kernels.
//!
//! These share nothing with the optimized kernels beyond the [`Tensor`] type and
//! serve as the permanent oracle the optimized paths are checked against.

use crate::element::Element;
use crate::ops::Padding;
use crate::tensor::Tensor;

/// `(pad_before, output)` for one axis.
fn pad_and_out(input: usize, kernel: usize, stride: usize, padding: Padding) -> (isize, usize) {
    match padding {
        Padding::Valid => (0, (input - kernel) / stride + 1),
        Padding::Same => {
            let out = (input + stride - 1) / stride;
            let needed = (out - 1) * stride + kernel;
            let total = needed.saturating_sub(input);
            ((total / 2) as isize, out)
        }
    }
}

fn at<T: Element>(x: &Tensor<T>, [n, c, h, w]: [usize; 4], idx: [isize; 4]) -> Option<T> {
    let [b, ch, y, xx] = idx;
    if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
        return None;
    }
    let _ = n;
    Some(x.data()[((b as usize * c + ch as usize) * h + y as usize) * w + xx as usize])
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Tensor<T> {
    let [n, cin, h, w] = input.dims4("reference::conv2d").unwrap();
    let [cout, _, kh, kw] = weights.dims4("reference::conv2d").unwrap();
    let (pt, ho) = pad_and_out(h, kh, stride, padding);
    let (pl, wo) = pad_and_out(w, kw, stride, padding);
    let mut out = Tensor::zeros(vec![n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(T::zero(), |bv| bv.data()[co]);
                    for ci in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pt;
                                let xx = (ox * stride + j) as isize - pl;
                                if let Some(v) = at(input, [n, cin, h, w], [b as isize, ci as isize, y, xx]) {
                                    acc += v * weights.data()[((co * cin + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise_conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Tensor<T> {
    let [n, c, h, w] = input.dims4("reference::depthwise_conv2d").unwrap();
    let [_, _, kh, kw] = weights.dims4("reference::depthwise_conv2d").unwrap();
    let (pt, ho) = pad_and_out(h, kh, stride, padding);
    let (pl, wo) = pad_and_out(w, kw, stride, padding);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(T::zero(), |bv| bv.data()[ch]);
                    for i in 0..kh {
                        for j in 0..kw {
                            let y = (oy * stride + i) as isize - pt;
                            let xx = (ox * stride + j) as isize - pl;
                            if let Some(v) = at(input, [n, c, h, w], [b as isize, ch as isize, y, xx]) {
                                acc += v * weights.data()[(ch * kh + i) * kw + j];
                            }
                        }
                    }
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn maxpool2d<T: Element>(input: &Tensor<T>, window: usize, stride: usize, padding: Padding) -> Tensor<T> {
    let [n, c, h, w] = input.dims4("reference::maxpool2d").unwrap();
    let (pt, ho) = pad_and_out(h, window, stride, padding);
    let (pl, wo) = pad_and_out(w, window, stride, padding);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<T> = None;
                    for i in 0..window {
                        for j in 0..window {
                            let y = (oy * stride + i) as isize - pt;
                            let xx = (ox * stride + j) as isize - pl;
                            if let Some(v) = at(input, [n, c, h, w], [b as isize, ch as isize, y, xx]) {
                                best = Some(best.map_or(v, |m: T| m.max(v)));
                            }
                        }
                    }
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = best.unwrap();
                }
            }
        }
    }
    out
}

pub fn avg_pool2d<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Tensor<T> {
    let [n, c, h, w] = input.dims4("reference::avg_pool2d").unwrap();
    let (_, ho) = pad_and_out(h, window, stride, Padding::Valid);
    let (_, wo) = pad_and_out(w, window, stride, Padding::Valid);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    let area = T::from_f64((window * window) as f64);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = T::zero();
                    for i in 0..window {
                        for j in 0..window {
                            s += input.data()[((b * c + ch) * h + oy * stride + i) * w + ox * stride + j];
                        }
                    }
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = s / area;
                }
            }
        }
    }
    out
}
