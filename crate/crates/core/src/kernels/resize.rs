use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centres (`align_corners = false`), edge-clamped.
    Bilinear,
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(Error::InvalidArgument(format!("unknown upsample mode `{other}`"))),
        }
    }
}

/// Source taps `(i0, i1, frac)` for output index `o` when doubling an axis of `len`.
fn taps(o: usize, len: usize, mode: UpsampleMode) -> (usize, usize, f32) {
    match mode {
        UpsampleMode::Nearest => (o / 2, o / 2, 0.0),
        UpsampleMode::Bilinear => {
            let src = ((o as f32 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        }
    }
}

pub fn upsample2x(x: &Tensor, mode: UpsampleMode) -> Tensor {
    let s = x.shape();
    let (ho, wo) = (s.h * 2, s.w * 2);
    let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
    for p in x.data().chunks(s.plane()) {
        for oy in 0..ho {
            let (y0, y1, ly) = taps(oy, s.h, mode);
            for ox in 0..wo {
                let (x0, x1, lx) = taps(ox, s.w, mode);
                let top = p[y0 * s.w + x0] * (1.0 - lx) + p[y0 * s.w + x1] * lx;
                let bot = p[y1 * s.w + x0] * (1.0 - lx) + p[y1 * s.w + x1] * lx;
                out.push(top * (1.0 - ly) + bot * ly);
            }
        }
    }
    Tensor::new(Shape::new(s.n, s.c, ho, wo), out).expect("upsampled shape")
}

pub fn upsample2x_backward(x: Shape, mode: UpsampleMode, gy: &Tensor) -> Result<Tensor> {
    let (ho, wo) = (x.h * 2, x.w * 2);
    gy.expect_shape("upsample2x_backward", Shape::new(x.n, x.c, ho, wo))?;
    let mut gx = Tensor::zeros(x);
    for (gp, gyp) in gx.data_mut().chunks_mut(x.plane()).zip(gy.data().chunks(ho * wo)) {
        for oy in 0..ho {
            let (y0, y1, ly) = taps(oy, x.h, mode);
            for ox in 0..wo {
                let (x0, x1, lx) = taps(ox, x.w, mode);
                let g = gyp[oy * wo + ox];
                gp[y0 * x.w + x0] += g * (1.0 - ly) * (1.0 - lx);
                gp[y0 * x.w + x1] += g * (1.0 - ly) * lx;
                gp[y1 * x.w + x0] += g * ly * (1.0 - lx);
                gp[y1 * x.w + x1] += g * ly * lx;
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates() {
        let x = Tensor::scalar(4.0);
        assert_eq!(upsample2x(&x, UpsampleMode::Nearest), Tensor::full(Shape::new(1, 1, 2, 2), 4.0));
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5), 0.3);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let y = upsample2x(&x, mode);
            assert_eq!(y.shape(), Shape::new(1, 2, 6, 10));
            assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn bilinear_half_pixel_weights() {
        // [0, 4] -> [0, 1, 3, 4]
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0, 4.0]).unwrap();
        let y = upsample2x(&x, UpsampleMode::Bilinear);
        assert_eq!(y.plane(0, 0)[..4], [0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn backward_conserves_mass() {
        let s = Shape::new(1, 1, 3, 4);
        let gy = Tensor::full(Shape::new(1, 1, 6, 8), 1.0);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let gx = upsample2x_backward(s, mode, &gy).unwrap();
            assert!((gx.sum() - 48.0).abs() < 1e-5);
        }
    }
}
