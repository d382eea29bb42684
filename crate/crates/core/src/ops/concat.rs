use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Concatenates `N x Ci x H x W` tensors along the channel axis.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Invalid("concat_channels: no inputs".into()))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4("concat_channels")?;
        for (axis, e, a) in [("batch", n, pn), ("height", h, ph), ("width", w, pw)] {
            if e != a {
                return Err(TensorError::Dim {
                    op: "concat_channels",
                    axis,
                    expected: e,
                    actual: a,
                });
            }
        }
        channels.push(pc);
    }
    let plane = h * w;
    let total: usize = channels.iter().sum();
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (p, &c) in parts.iter().zip(&channels) {
            out.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Tensor::new(vec![n, total, h, w], out)
}

/// Inverse of [`concat_channels`]: splits along the channel axis into the given widths.
pub fn split_channels<T: Element>(t: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = t.dims4("split_channels")?;
    let total: usize = widths.iter().sum();
    if total != c {
        return Err(TensorError::Dim {
            op: "split_channels",
            axis: "channel",
            expected: total,
            actual: c,
        });
    }
    let plane = h * w;
    let mut outs: Vec<Vec<T>> = widths.iter().map(|&wc| Vec::with_capacity(n * wc * plane)).collect();
    for b in 0..n {
        let mut offset = b * c * plane;
        for (o, &wc) in outs.iter_mut().zip(widths) {
            o.extend_from_slice(&t.data()[offset..offset + wc * plane]);
            offset += wc * plane;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(d, &wc)| Tensor::new(vec![n, wc, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::<f32>::from_fn(vec![2, 1, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(vec![2, 3, 2, 2], |i| 100.0 + i as f32);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        assert_eq!(&c.data()[4..8], &b.data()[0..4]);
        let parts = split_channels(&c, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
