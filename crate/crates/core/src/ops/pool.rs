use rayon::prelude::*;

use super::conv::{axis_geometry, AxisGeometry, Padding};
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl PoolParams {
    pub fn new(window: usize, stride: usize, padding: Padding) -> Self {
        Self {
            window,
            stride,
            padding,
        }
    }
}

struct PoolGeometry {
    gh: AxisGeometry,
    gw: AxisGeometry,
}

impl PoolGeometry {
    fn resolve(op: &'static str, h: usize, w: usize, p: PoolParams) -> Result<Self> {
        if p.padding == Padding::Valid && (p.window > h || p.window > w) {
            let (axis, extent) = if p.window > h { ("height", h) } else { ("width", w) };
            return Err(TensorError::Window {
                op,
                axis,
                window: p.window,
                extent,
            });
        }
        Ok(Self {
            gh: axis_geometry(op, "height", h, p.window, p.stride, p.padding)?,
            gw: axis_geometry(op, "width", w, p.window, p.stride, p.padding)?,
        })
    }

    /// In-bounds input rows (or columns) covered by output index `o`.
    fn span(g: &AxisGeometry, o: usize) -> std::ops::Range<usize> {
        let start = o * g.stride;
        let lo = start.saturating_sub(g.pad_before);
        let hi = (start + g.kernel).saturating_sub(g.pad_before).min(g.input);
        lo..hi
    }
}

/// Flat in-plane index of the first maximum of each window (row-major scan, strict `>`).
fn argmax_plane<T: Element>(x: &[T], w: usize, pg: &PoolGeometry, out: &mut [usize]) {
    for oh in 0..pg.gh.output {
        let rows = PoolGeometry::span(&pg.gh, oh);
        for ow in 0..pg.gw.output {
            let cols = PoolGeometry::span(&pg.gw, ow);
            let mut best = rows.start * w + cols.start;
            for ih in rows.clone() {
                for iw in cols.clone() {
                    let idx = ih * w + iw;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
            }
            out[oh * pg.gw.output + ow] = best;
        }
    }
}

pub fn maxpool2d<T: Element>(input: &Tensor<T>, p: PoolParams) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    let pg = PoolGeometry::resolve("maxpool2d", h, w, p)?;
    let (plane, in_plane) = (pg.gh.output * pg.gw.output, h * w);
    let mut out = vec![T::zero(); n * c * plane];
    out.par_chunks_mut(plane)
        .zip(input.data().par_chunks(in_plane))
        .for_each(|(o, x)| {
            let mut idx = vec![0usize; plane];
            argmax_plane(x, w, &pg, &mut idx);
            for (v, &i) in o.iter_mut().zip(&idx) {
                *v = x[i];
            }
        });
    Ok(Tensor::from_parts_unchecked(
        vec![n, c, pg.gh.output, pg.gw.output],
        out,
    ))
}

/// Routes each output gradient to its window's first maximum.
pub fn maxpool2d_grad<T: Element>(
    input: &Tensor<T>,
    p: PoolParams,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("maxpool2d_grad")?;
    let pg = PoolGeometry::resolve("maxpool2d_grad", h, w, p)?;
    check_grad_shape("maxpool2d_grad", grad_out, [n, c, pg.gh.output, pg.gw.output])?;
    let (plane, in_plane) = (pg.gh.output * pg.gw.output, h * w);
    let mut gx = vec![T::zero(); input.len()];
    gx.par_chunks_mut(in_plane)
        .zip(input.data().par_chunks(in_plane))
        .zip(grad_out.data().par_chunks(plane))
        .for_each(|((g, x), go)| {
            let mut idx = vec![0usize; plane];
            argmax_plane(x, w, &pg, &mut idx);
            for (&i, &gv) in idx.iter().zip(go) {
                g[i] += gv;
            }
        });
    Ok(Tensor::from_parts_unchecked(input.shape().to_vec(), gx))
}

/// Average pooling without padding; every window divides by `window²`.
pub fn avg_pool2d<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("avg_pool2d")?;
    let pg = PoolGeometry::resolve("avg_pool2d", h, w, PoolParams::new(window, stride, Padding::Valid))?;
    let (ho, wo) = (pg.gh.output, pg.gw.output);
    let inv = T::one() / T::from_f64((window * window) as f64);
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(o, x)| {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut s = T::zero();
                    for ih in oh * stride..oh * stride + window {
                        for iw in ow * stride..ow * stride + window {
                            s += x[ih * w + iw];
                        }
                    }
                    o[oh * wo + ow] = s * inv;
                }
            }
        });
    Ok(Tensor::from_parts_unchecked(vec![n, c, ho, wo], out))
}

pub fn avg_pool2d_grad<T: Element>(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(TensorError::Rank {
            op: "avg_pool2d_grad",
            expected: 4,
            shape: input_shape.to_vec(),
        });
    };
    let pg = PoolGeometry::resolve(
        "avg_pool2d_grad",
        h,
        w,
        PoolParams::new(window, stride, Padding::Valid),
    )?;
    let (ho, wo) = (pg.gh.output, pg.gw.output);
    check_grad_shape("avg_pool2d_grad", grad_out, [n, c, ho, wo])?;
    let inv = T::one() / T::from_f64((window * window) as f64);
    let mut gx = vec![T::zero(); n * c * h * w];
    gx.par_chunks_mut(h * w)
        .zip(grad_out.data().par_chunks(ho * wo))
        .for_each(|(g, go)| {
            for oh in 0..ho {
                for ow in 0..wo {
                    let gv = go[oh * wo + ow] * inv;
                    for ih in oh * stride..oh * stride + window {
                        for iw in ow * stride..ow * stride + window {
                            g[ih * w + iw] += gv;
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_parts_unchecked(input_shape.to_vec(), gx))
}

/// Spatial mean per channel: `N x C x H x W -> N x C`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let out: Vec<T> = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::from_parts_unchecked(vec![n, c], out);
    Ok(out)
}

pub fn global_avg_pool_grad<T: Element>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(TensorError::Rank {
            op: "global_avg_pool_grad",
            expected: 4,
            shape: input_shape.to_vec(),
        });
    };
    let [gn, gc] = grad_out.dims2("global_avg_pool_grad")?;
    if (gn, gc) != (n, c) {
        return Err(TensorError::Dim {
            op: "global_avg_pool_grad",
            axis: if gn != n { "batch" } else { "channel" },
            expected: if gn != n { n } else { c },
            actual: if gn != n { gn } else { gc },
        });
    }
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut gx = Vec::with_capacity(n * c * h * w);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Ok(Tensor::from_parts_unchecked(input_shape.to_vec(), gx))
}

fn check_grad_shape<T: Element>(op: &'static str, g: &Tensor<T>, expected: [usize; 4]) -> Result<()> {
    let got = g.dims4(op)?;
    for ((axis, e), a) in ["batch", "channel", "height", "width"].into_iter().zip(expected).zip(got) {
        if e != a {
            return Err(TensorError::Dim {
                op,
                axis,
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d(&x, PoolParams::new(2, 2, Padding::Valid)).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_first_element() {
        let x = Tensor::<f32>::full(vec![1, 1, 4, 4], 7.0);
        let p = PoolParams::new(2, 2, Padding::Valid);
        let y = maxpool2d(&x, p).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        let g = maxpool2d_grad(&x, p, &Tensor::full(vec![1, 1, 2, 2], 1.0)).unwrap();
        let hot: Vec<usize> = (0..16).filter(|&i| g.data()[i] != 0.0).collect();
        assert_eq!(hot, vec![0, 2, 8, 10]);
    }

    #[test]
    fn window_larger_than_input_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 3, 1]);
        assert!(matches!(
            maxpool2d(&x, PoolParams::new(2, 2, Padding::Valid)),
            Err(TensorError::Window { axis: "width", .. })
        ));
    }

    #[test]
    fn same_padded_max_pool_keeps_extent() {
        let x = Tensor::<f32>::from_fn(vec![1, 2, 5, 5], |i| -(i as f32) - 1.0);
        let y = maxpool2d(&x, PoolParams::new(3, 1, Padding::Same)).unwrap();
        assert_eq!(y.shape(), x.shape());
        // padding never wins even though every real value is negative
        assert_eq!(y.data()[0], -1.0);
        assert_eq!(y.data()[24], -19.0);
    }

    #[test]
    fn global_average() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f32>::full(vec![2, 3, 4, 4], 5.0);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 5.0));
        let g = global_avg_pool_grad(&[1, 1, 2, 2], &Tensor::full(vec![1, 1], 2.0)).unwrap();
        assert_eq!(g.data(), &[0.5; 4]);
    }

    #[test]
    fn average_pool_halves() {
        let x = Tensor::<f32>::from_fn(vec![1, 1, 4, 4], |i| i as f32);
        let y = avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }
}
