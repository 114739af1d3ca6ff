//! Dense 2-D convolution lowered to `im2col` + GEMM with `f64` accumulation.

use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use super::scratch::Scratch;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Stride, zero padding and dilation shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride-1 geometry that preserves spatial size for an odd `kernel`.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation * (kernel - 1) / 2, dilation)
    }

    pub(crate) fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: stride and dilation must be >= 1"
            )));
        }
        Ok(())
    }
}

/// `floor((input + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is not positive.
pub fn conv_output_dim(input: usize, kernel: usize, geom: ConvGeom) -> Option<usize> {
    let span = geom.dilation * (kernel.max(1) - 1) + 1;
    let padded = input + 2 * geom.padding;
    if kernel == 0 || geom.stride == 0 || padded < span {
        return None;
    }
    Some((padded - span) / geom.stride + 1)
}

/// Validated sizes of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvPlan {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvPlan {
    pub fn new(
        op: &'static str,
        x: Shape,
        weight: Shape,
        bias: Option<Shape>,
        geom: ConvGeom,
    ) -> Result<Self> {
        geom.validate(op)?;
        if x.c != weight.c {
            return Err(Error::ChannelMismatch {
                op,
                expected: weight.c,
                got: x.c,
            });
        }
        if let Some(b) = bias {
            let want = Shape::new(1, weight.n, 1, 1);
            if b != want {
                return Err(Error::ShapeMismatch {
                    op,
                    left: want,
                    right: b,
                });
            }
        }
        let ho = conv_output_dim(x.h, weight.h, geom).ok_or(Error::EmptyOutput { op })?;
        let wo = conv_output_dim(x.w, weight.w, geom).ok_or(Error::EmptyOutput { op })?;
        Ok(Self {
            n: x.n,
            cin: x.c,
            h: x.h,
            w: x.w,
            cout: weight.n,
            kh: weight.h,
            kw: weight.w,
            ho,
            wo,
            geom,
        })
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// Rows of the lowered input matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.taps()
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.ho, self.wo)
    }
}

/// Output range `[lo, hi)` along one axis whose tap `k` lands inside `[0, limit)`.
#[inline]
fn valid_range(plan: &ConvPlan, k: usize, out_len: usize, limit: usize) -> (usize, usize) {
    let g = plan.geom;
    let shift = (k * g.dilation) as isize - g.padding as isize;
    // o * stride + shift >= 0  and  o * stride + shift < limit
    let lo = if shift >= 0 { 0 } else { (-shift) as usize }.div_ceil(g.stride);
    let hi_excl = limit as isize - shift;
    let hi = if hi_excl <= 0 {
        0
    } else {
        ((hi_excl as usize).div_ceil(g.stride)).min(out_len)
    };
    (lo.min(hi), hi)
}

/// Lowers one batch item (`cin x h x w`) to a `(cin*kh*kw) x (ho*wo)` matrix.
fn im2col(plan: &ConvPlan, item: &[f32], cols: &mut [f64]) {
    let p = plan.positions();
    let hw = plan.h * plan.w;
    let g = plan.geom;
    cols.par_chunks_mut(plan.taps() * p)
        .enumerate()
        .for_each(|(ci, rows)| {
            let src = &item[ci * hw..(ci + 1) * hw];
            for ky in 0..plan.kh {
                let (ylo, yhi) = valid_range(plan, ky, plan.ho, plan.h);
                for kx in 0..plan.kw {
                    let (xlo, xhi) = valid_range(plan, kx, plan.wo, plan.w);
                    let row = &mut rows[(ky * plan.kw + kx) * p..][..p];
                    row[..ylo * plan.wo].fill(0.0);
                    row[yhi * plan.wo..].fill(0.0);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let line = &src[iy * plan.w..(iy + 1) * plan.w];
                        let dst = &mut row[oy * plan.wo..(oy + 1) * plan.wo];
                        dst[..xlo].fill(0.0);
                        dst[xhi..].fill(0.0);
                        if xlo == xhi {
                            continue;
                        }
                        let x0 = xlo * g.stride + kx * g.dilation - g.padding;
                        if g.stride == 1 {
                            for (d, &s) in dst[xlo..xhi].iter_mut().zip(&line[x0..]) {
                                *d = s as f64;
                            }
                        } else {
                            for (d, &s) in dst[xlo..xhi].iter_mut().zip(line[x0..].iter().step_by(g.stride)) {
                                *d = s as f64;
                            }
                        }
                    }
                }
            }
        });
}

/// Scatter-adds a lowered gradient matrix back onto the input planes.
fn col2im(plan: &ConvPlan, cols: &[f64], grad_item: &mut [f32]) {
    let p = plan.positions();
    let hw = plan.h * plan.w;
    let g = plan.geom;
    grad_item
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(ci, plane)| {
            let mut acc = vec![0.0f64; hw];
            let rows = &cols[ci * plan.taps() * p..(ci + 1) * plan.taps() * p];
            for ky in 0..plan.kh {
                let (ylo, yhi) = valid_range(plan, ky, plan.ho, plan.h);
                for kx in 0..plan.kw {
                    let (xlo, xhi) = valid_range(plan, kx, plan.wo, plan.w);
                    let row = &rows[(ky * plan.kw + kx) * p..][..p];
                    if xlo == xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let line = &mut acc[iy * plan.w..(iy + 1) * plan.w];
                        let x0 = xlo * g.stride + kx * g.dilation - g.padding;
                        let srow = &row[oy * plan.wo + xlo..oy * plan.wo + xhi];
                        if g.stride == 1 {
                            for (a, &s) in line[x0..].iter_mut().zip(srow) {
                                *a += s;
                            }
                        } else {
                            for (a, &s) in line[x0..].iter_mut().step_by(g.stride).zip(srow) {
                                *a += s;
                            }
                        }
                    }
                }
            }
            for (g, a) in plane.iter_mut().zip(acc) {
                *g = a as f32;
            }
        });
}

pub(crate) fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Applies `weight` (`cout x patch`) to lowered columns and writes one output item.
pub(crate) fn apply_weight(
    weight: &[f64],
    bias: Option<&[f32]>,
    cols: &[f64],
    cout: usize,
    patch: usize,
    positions: usize,
    out_item: &mut [f32],
) {
    let mut acc = Scratch::new(cout * positions);
    gemm(
        MatRef::row_major(weight, cout, patch),
        MatRef::row_major(cols, patch, positions),
        0.0,
        &mut acc,
    );
    for (co, (dst, src)) in out_item
        .chunks_mut(positions)
        .zip(acc.chunks(positions))
        .enumerate()
    {
        let b = bias.map_or(0.0, |b| b[co] as f64);
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s + b) as f32;
        }
    }
}

/// `y = conv(x, weight) + bias` with zero padding.
///
/// `weight` is laid out `Cout x Cin x kh x kw`; `bias` is `1 x Cout x 1 x 1`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Result<Tensor> {
    let plan = ConvPlan::new("conv2d", x.shape(), weight.shape(), bias.map(Tensor::shape), geom)?;
    let wf = to_f64(weight.data());
    let mut out = Tensor::zeros(plan.out_shape());
    let item_len = plan.cout * plan.positions();
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, out_item)| {
            let mut cols = Scratch::new(plan.patch_len() * plan.positions());
            im2col(&plan, x.item(n), &mut cols);
            apply_weight(
                &wf,
                bias.map(Tensor::data),
                &cols,
                plan.cout,
                plan.patch_len(),
                plan.positions(),
                out_item,
            );
        });
    out.check_finite("conv2d")
}

/// Gradients of [`conv2d`] with respect to each of its inputs.
#[derive(Debug)]
pub struct ConvGrads {
    pub x: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Accumulates `gy * cols^T` into `grad_w`.
pub(crate) fn weight_grad(gy: &[f64], cols: &[f64], cout: usize, patch: usize, positions: usize, grad_w: &mut [f64]) {
    gemm(
        MatRef::row_major(gy, cout, positions),
        MatRef::row_major(cols, patch, positions).t(),
        1.0,
        grad_w,
    );
}

/// `weight^T * gy`: the gradient with respect to the lowered columns.
pub(crate) fn column_grad(weight: &[f64], gy: &[f64], cout: usize, patch: usize, positions: usize) -> Scratch {
    let mut gcols = Scratch::new(patch * positions);
    gemm(
        MatRef::row_major(weight, cout, patch).t(),
        MatRef::row_major(gy, cout, positions),
        0.0,
        &mut gcols,
    );
    gcols
}

pub(crate) fn bias_grad(gy: &Tensor) -> Tensor {
    let s = gy.shape();
    let mut acc = vec![0.0f64; s.c];
    for n in 0..s.n {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += gy.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    Tensor::new(Shape::new(1, s.c, 1, 1), acc.into_iter().map(|v| v as f32).collect())
        .expect("bias grad shape")
}

/// Sums per-item partial buffers in batch order.
pub(crate) fn ordered_sum(parts: Vec<Vec<f64>>, len: usize) -> Vec<f32> {
    let mut total = vec![0.0f64; len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total.into_iter().map(|v| v as f32).collect()
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    geom: ConvGeom,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let bias_shape = has_bias.then(|| Shape::new(1, weight.shape().n, 1, 1));
    let plan = ConvPlan::new("conv2d_backward", x.shape(), weight.shape(), bias_shape, geom)?;
    grad_out.expect_shape("conv2d_backward", plan.out_shape())?;
    let wf = to_f64(weight.data());
    let (patch, positions) = (plan.patch_len(), plan.positions());
    let mut gx = Tensor::zeros(x.shape());
    let item_len = plan.cin * plan.h * plan.w;
    let parts: Vec<Vec<f64>> = gx
        .data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .map(|(n, gx_item)| {
            let gy = to_f64(grad_out.item(n));
            let mut cols = Scratch::new(patch * positions);
            im2col(&plan, x.item(n), &mut cols);
            let mut gw = vec![0.0f64; plan.cout * patch];
            weight_grad(&gy, &cols, plan.cout, patch, positions, &mut gw);
            drop(cols);
            let gcols = column_grad(&wf, &gy, plan.cout, patch, positions);
            col2im(&plan, &gcols, gx_item);
            gw
        })
        .collect();
    let gw = Tensor::new(weight.shape(), ordered_sum(parts, weight.numel()))?;
    Ok(ConvGrads {
        x: gx,
        weight: gw,
        bias: has_bias.then(|| bias_grad(grad_out)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::kernels::reference::conv2d_direct;

    fn naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Tensor {
        conv2d_direct(x, w, b, g).unwrap()
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, None, ConvGeom::new(1, 1, 1)).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, r, c), 4.0);
        }
        assert_eq!(naive(&x, &w, None, ConvGeom::new(1, 1, 1)), y);
    }

    #[test]
    fn identity_kernel_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(Shape::new(2, 1, 5, 4), -1.0, 1.0, &mut rng);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &w, None, ConvGeom::default()).unwrap(), x);
    }

    #[test]
    fn dilated_same_padding_keeps_size() {
        let x = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let y = conv2d(&x, &w, None, ConvGeom::new(1, 2, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 5, 5));
    }

    #[test]
    fn matches_naive_over_geometry_sweep() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in [1, 3, 5] {
            for stride in [1, 2] {
                for dilation in [1, 2, 4] {
                    for padding in [0, dilation * (k - 1) / 2] {
                        let g = ConvGeom::new(stride, padding, dilation);
                        let x = Tensor::uniform(Shape::new(2, 3, 11, 9), -1.0, 1.0, &mut rng);
                        let w = Tensor::uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut rng);
                        let b = Tensor::uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, &mut rng);
                        match conv_output_dim(11, k, g) {
                            None => assert!(conv2d(&x, &w, Some(&b), g).is_err()),
                            Some(_) => {
                                let got = conv2d(&x, &w, Some(&b), g).unwrap();
                                let want = naive(&x, &w, Some(&b), g);
                                assert!(got.max_abs_diff(&want).unwrap() < 1e-5, "k{k} s{stride} d{dilation} p{padding}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let x = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, None, ConvGeom::default()),
            Err(Error::ChannelMismatch { .. })
        ));
        let w = Tensor::zeros(Shape::new(1, 2, 5, 5));
        assert!(matches!(
            conv2d(&x, &w, None, ConvGeom::default()),
            Err(Error::EmptyOutput { .. })
        ));
    }

    #[test]
    fn output_dim_formula() {
        assert_eq!(conv_output_dim(5, 3, ConvGeom::new(1, 2, 2)), Some(5));
        assert_eq!(conv_output_dim(64, 3, ConvGeom::new(2, 1, 1)), Some(32));
        assert_eq!(conv_output_dim(2, 5, ConvGeom::new(1, 0, 1)), None);
    }
}
