use crate::error::{Error, Result};
use crate::kernels::conv::{conv_output_dim, ConvGeom};
use crate::tensor::{Shape, Tensor};

fn pool_dims(x: Shape, kernel: usize, stride: usize, padding: usize) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument("avgpool2d: kernel and stride must be >= 1".into()));
    }
    let g = ConvGeom::new(stride, padding, 1);
    let ho = conv_output_dim(x.h, kernel, g).ok_or(Error::EmptyOutput { op: "avgpool2d" })?;
    let wo = conv_output_dim(x.w, kernel, g).ok_or(Error::EmptyOutput { op: "avgpool2d" })?;
    Ok((ho, wo))
}

/// Window start and the clipped in-bounds range along one axis.
fn window(o: usize, kernel: usize, stride: usize, padding: usize, limit: usize) -> std::ops::Range<usize> {
    let start = (o * stride) as isize - padding as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + kernel as isize).max(0) as usize).min(limit);
    lo..hi.max(lo)
}

/// Mean over each `kernel x kernel` window; padded cells count as zeros.
pub fn avgpool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let s = x.shape();
    let (ho, wo) = pool_dims(s, kernel, stride, padding)?;
    let area = (kernel * kernel) as f64;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for iy in window(oy, kernel, stride, padding, s.h) {
                        for ix in window(ox, kernel, stride, padding, s.w) {
                            acc += plane[iy * s.w + ix] as f64;
                        }
                    }
                    out.set(n, c, oy, ox, (acc / area) as f32);
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool2d_backward(x: Shape, kernel: usize, stride: usize, padding: usize, gy: &Tensor) -> Result<Tensor> {
    let (ho, wo) = pool_dims(x, kernel, stride, padding)?;
    gy.expect_shape("avgpool2d_backward", Shape::new(x.n, x.c, ho, wo))?;
    let area = (kernel * kernel) as f32;
    let mut gx = Tensor::zeros(x);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = gy.at(n, c, oy, ox) / area;
                    for iy in window(oy, kernel, stride, padding, x.h) {
                        for ix in window(ox, kernel, stride, padding, x.w) {
                            let i = gx.offset(n, c, iy, ix);
                            gx.data_mut()[i] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Per-channel spatial mean, `N x C x 1 x 1`.
pub fn global_avgpool(x: &Tensor) -> Tensor {
    let s = x.shape();
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64) as f32)
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data).expect("pooled shape")
}

pub fn global_avgpool_backward(x: Shape, gy: &Tensor) -> Tensor {
    let inv = 1.0 / x.plane() as f32;
    let data = gy
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, x.plane()))
        .collect();
    Tensor::new(x, data).expect("input shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_mean_of_two_by_two() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2, 0).unwrap().data(), &[2.5]);
        assert_eq!(global_avgpool(&Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap()).data(), &[1.5]);
    }

    #[test]
    fn constant_interior_is_constant() {
        let x = Tensor::full(Shape::new(1, 2, 6, 5), 0.7);
        let y = avgpool2d(&x, 3, 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 3));
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        assert_eq!(global_avgpool(&Tensor::full(Shape::new(2, 8, 16, 16), 3.0)), Tensor::full(Shape::new(2, 8, 1, 1), 3.0));
    }

    #[test]
    fn zero_padding_counts_in_the_mean() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 9.0);
        let y = avgpool2d(&x, 3, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
    }

    #[test]
    fn backward_spreads_one_over_area() {
        let s = Shape::new(1, 1, 4, 4);
        let gy = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let gx = avgpool2d_backward(s, 2, 2, 0, &gy).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.25));
        assert!(avgpool2d(&Tensor::zeros(Shape::new(1, 1, 2, 2)), 5, 1, 0).is_err());
    }
}
