//! Direct loop implementations used as oracles for the lowered kernels.

use crate::deform::sample_plane;
use crate::error::{Error, Result};
use crate::kernels::conv::{conv_output_dim, ConvGeom};
use crate::tensor::{Shape, Tensor};

fn out_dims(op: &'static str, x: Shape, w: Shape, g: ConvGeom) -> Result<(usize, usize)> {
    if x.c != w.c {
        return Err(Error::ChannelMismatch {
            op,
            expected: w.c,
            got: x.c,
        });
    }
    let ho = conv_output_dim(x.h, w.h, g).ok_or(Error::EmptyOutput { op })?;
    let wo = conv_output_dim(x.w, w.w, g).ok_or(Error::EmptyOutput { op })?;
    Ok((ho, wo))
}

/// Seven nested loops over batch, output channel, output position, input
/// channel and kernel taps, accumulated in `f64`.
pub fn conv2d_direct(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    let (ho, wo) = out_dims("conv2d_direct", xs, ws, g)?;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ci, iy as usize, ix as usize) as f64 * w.at(co, ci, ky, kx) as f64;
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Deformable convolution by direct bilinear reads, one per output element
/// and tap.
pub fn deform_conv2d_direct(x: &Tensor, offsets: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    let (ho, wo) = out_dims("deform_conv2d_direct", xs, ws, g)?;
    let want = Shape::new(xs.n, 2 * ws.h * ws.w, ho, wo);
    if offsets.shape() != want {
        return Err(Error::ShapeMismatch {
            op: "deform_conv2d_direct",
            left: want,
            right: offsets.shape(),
        });
    }
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co] as f64);
                    for ky in 0..ws.h {
                        for kx in 0..ws.w {
                            let k = ky * ws.w + kx;
                            let py = (oy * g.stride + ky * g.dilation) as f64 - g.padding as f64
                                + offsets.at(n, 2 * k, oy, ox) as f64;
                            let px = (ox * g.stride + kx * g.dilation) as f64 - g.padding as f64
                                + offsets.at(n, 2 * k + 1, oy, ox) as f64;
                            for ci in 0..xs.c {
                                acc += sample_plane(x.plane(n, ci), xs.h, xs.w, py, px) * w.at(co, ci, ky, kx) as f64;
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Shifts every plane by an integer displacement, filling with zeros.
pub fn shift(x: &Tensor, dy: isize, dx: isize) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                        out.set(n, c, y, xx, x.at(n, c, sy as usize, sx as usize));
                    }
                }
            }
        }
    }
    out
}
