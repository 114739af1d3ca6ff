//! Activations, broadcasting products, channel concatenation and the MSE loss.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    a.expect_shape(op, b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)?.check_finite(op)
}

fn gate_shape(x: Shape) -> Shape {
    Shape::new(x.n, x.c, 1, 1)
}

/// `y[n,c,h,w] = x[n,c,h,w] * s[n,c]`.
pub fn scale_channels(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    s.expect_shape("scale_channels", gate_shape(x.shape()))?;
    let plane = x.shape().plane();
    let data = x
        .data()
        .chunks(plane)
        .zip(s.data())
        .flat_map(|(p, &g)| p.iter().map(move |&v| v * g))
        .collect();
    Tensor::new(x.shape(), data)?.check_finite("scale_channels")
}

/// Returns `(dx, ds)`.
pub fn scale_channels_backward(x: &Tensor, s: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let plane = x.shape().plane();
    let mut dx = Tensor::zeros(x.shape());
    let mut ds = Tensor::zeros(s.shape());
    for (i, ((dxp, (xp, gp)), &g)) in dx
        .data_mut()
        .chunks_mut(plane)
        .zip(x.data().chunks(plane).zip(gy.data().chunks(plane)))
        .zip(s.data())
        .enumerate()
    {
        let mut acc = 0.0f64;
        for ((d, &xv), &gv) in dxp.iter_mut().zip(xp).zip(gp) {
            *d = gv * g;
            acc += xv as f64 * gv as f64;
        }
        ds.data_mut()[i] = acc as f32;
    }
    (dx, ds)
}

/// Concatenates along the channel axis; batch and spatial extents must agree.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_channels: empty input list".into()))?
        .shape();
    let mut c = 0;
    for t in xs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first,
                right: s,
            });
        }
        c += s.c;
    }
    let shape = first.with_channels(c);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for t in xs {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor::new(shape, data)
}

/// Inverse of [`concat_channels`]: splits `x` into pieces of the given widths.
pub fn split_channels(x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let s = x.shape();
    if widths.iter().sum::<usize>() != s.c || widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "split_channels: widths {widths:?} do not partition {} channels",
            s.c
        )));
    }
    let plane = s.plane();
    let mut parts: Vec<Vec<f32>> = widths.iter().map(|w| Vec::with_capacity(s.n * w * plane)).collect();
    for n in 0..s.n {
        let item = x.item(n);
        let mut start = 0;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&item[start * plane..(start + w) * plane]);
            start += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(s.with_channels(w), d))
        .collect()
}

/// Mean of squared differences as a `1x1x1x1` tensor.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_shape("mse_loss", b.shape())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Tensor::scalar((sum / a.numel() as f64) as f32).check_finite("mse_loss")
}

/// Gradient of [`mse_loss`] with respect to `a`: `2 (a - b) / numel * g`.
pub fn mse_loss_backward(a: &Tensor, b: &Tensor, g: f32) -> Tensor {
    let k = 2.0 * g as f64 / a.numel() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x as f64 - y as f64) * k) as f32)
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Tensor {
        Tensor::new(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&row(&[-1.0, 2.0])).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(&row(&[0.0])).data(), &[0.5]);
    }

    #[test]
    fn unit_gate_is_identity() {
        let x = Tensor::new(Shape::new(2, 3, 2, 2), (0..24).map(|v| v as f32).collect()).unwrap();
        let s = Tensor::full(Shape::new(2, 3, 1, 1), 1.0);
        assert_eq!(scale_channels(&x, &s).unwrap(), x);
        assert!(scale_channels(&x, &Tensor::full(Shape::new(2, 2, 1, 1), 1.0)).is_err());
    }

    #[test]
    fn concat_widths_and_split_round_trip() {
        let a = Tensor::full(Shape::new(2, 4, 3, 3), 1.0);
        let b = Tensor::full(Shape::new(2, 6, 3, 3), 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 10, 3, 3));
        assert_eq!(c.at(1, 3, 0, 0), 1.0);
        assert_eq!(c.at(1, 4, 0, 0), 2.0);
        let parts = split_channels(&c, &[4, 6]).unwrap();
        assert_eq!(parts, vec![a.clone(), b]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let bad = Tensor::zeros(Shape::new(2, 1, 2, 3));
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse_loss(&row(&[1.0, 2.0]), &row(&[1.0, 2.0])).unwrap().data(), &[0.0]);
        assert_eq!(mse_loss(&row(&[1.0, 2.0]), &row(&[1.0, 4.0])).unwrap().data(), &[2.0]);
        assert!(mse_loss(&row(&[1.0]), &row(&[1.0, 4.0])).is_err());
        assert_eq!(mse_loss_backward(&row(&[3.0]), &row(&[0.0]), 1.0).data(), &[6.0]);
    }
}
