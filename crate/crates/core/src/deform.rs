//! Deformable convolution: every kernel tap samples the input at its regular
//! grid position plus a learned fractional displacement.
//!
//! Offset layout: an offset field for a `kh x kw` kernel has `2 * kh * kw`
//! channels. Kernel taps are numbered row-major (`j = ky * kw + kx`); channel
//! `2j` carries the vertical displacement and `2j + 1` the horizontal one.
//! One field is shared by all input and output channels. Samples falling
//! outside the image read zeros, and offsets are never clamped.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::scratch::Scratch;
use crate::kernels::conv::{apply_weight, bias_grad, column_grad, ordered_sum, to_f64, weight_grad, ConvGeom, ConvPlan};
use crate::tensor::{Shape, Tensor};

static CORRUPT_BACKWARD: AtomicBool = AtomicBool::new(false);

/// Test hook: when enabled, [`deform_conv2d_backward`] returns offset
/// gradients scaled by 1.5. Used to prove the gradient checker catches
/// a broken kernel.
#[doc(hidden)]
pub fn inject_backward_fault(enabled: bool) {
    CORRUPT_BACKWARD.store(enabled, Ordering::SeqCst);
}

/// Bilinear read of one `h x w` plane at a fractional position, with the
/// four neighbours' weights and the partial derivatives w.r.t. `(py, px)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub d_py: f64,
    pub d_px: f64,
}

/// The up to four lattice neighbours of `(py, px)` that lie inside the plane,
/// as `(index, weight)`.
#[inline]
fn corners(h: usize, w: usize, py: f64, px: f64) -> Option<[(Option<usize>, f64); 4]> {
    if py <= -1.0 || px <= -1.0 || py >= h as f64 || px >= w as f64 {
        return None;
    }
    let y0 = py.floor();
    let x0 = px.floor();
    let (ly, lx) = (py - y0, px - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let idx = |y: isize, x: isize| {
        (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
    };
    Some([
        (idx(y0, x0), (1.0 - ly) * (1.0 - lx)),
        (idx(y0, x0 + 1), (1.0 - ly) * lx),
        (idx(y0 + 1, x0), ly * (1.0 - lx)),
        (idx(y0 + 1, x0 + 1), ly * lx),
    ])
}

#[inline]
pub(crate) fn sample_plane(plane: &[f32], h: usize, w: usize, py: f64, px: f64) -> f64 {
    let Some(cs) = corners(h, w, py, px) else {
        return 0.0;
    };
    cs.iter()
        .map(|&(i, wt)| i.map_or(0.0, |i| plane[i] as f64 * wt))
        .sum()
}

#[inline]
pub(crate) fn sample_plane_grad(plane: &[f32], h: usize, w: usize, py: f64, px: f64) -> Sample {
    if py <= -1.0 || px <= -1.0 || py >= h as f64 || px >= w as f64 {
        return Sample::default();
    }
    let y0 = py.floor();
    let x0 = px.floor();
    let (ly, lx) = (py - y0, px - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let v = |y: isize, x: isize| {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize] as f64
        } else {
            0.0
        }
    };
    let (v00, v01, v10, v11) = (v(y0, x0), v(y0, x0 + 1), v(y0 + 1, x0), v(y0 + 1, x0 + 1));
    Sample {
        value: v00 * (1.0 - ly) * (1.0 - lx) + v01 * (1.0 - ly) * lx + v10 * ly * (1.0 - lx) + v11 * ly * lx,
        d_py: (v10 - v00) * (1.0 - lx) + (v11 - v01) * lx,
        d_px: (v01 - v00) * (1.0 - ly) + (v11 - v10) * ly,
    }
}

/// Bilinear interpolation of `x[n, c]` at `(py, px)`; zero outside the image.
pub fn bilinear_sample(x: &Tensor, n: usize, c: usize, py: f32, px: f32) -> f32 {
    let s = x.shape();
    sample_plane(x.plane(n, c), s.h, s.w, py as f64, px as f64) as f32
}

/// Value and position derivatives of [`bilinear_sample`].
pub fn bilinear_sample_grad(x: &Tensor, n: usize, c: usize, py: f32, px: f32) -> Sample {
    let s = x.shape();
    sample_plane_grad(x.plane(n, c), s.h, s.w, py as f64, px as f64)
}

/// Gradient of a bilinear read w.r.t. the plane values: `g` spread over the
/// in-bounds neighbours.
pub fn bilinear_scatter(grad_plane: &mut [f32], h: usize, w: usize, py: f32, px: f32, g: f32) {
    if let Some(cs) = corners(h, w, py as f64, px as f64) {
        for (i, wt) in cs {
            if let Some(i) = i {
                grad_plane[i] += (g as f64 * wt) as f32;
            }
        }
    }
}

pub fn offset_shape(plan_n: usize, kh: usize, kw: usize, ho: usize, wo: usize) -> Shape {
    Shape::new(plan_n, 2 * kh * kw, ho, wo)
}

fn plan(op: &'static str, x: &Tensor, offsets: &Tensor, weight: &Tensor, bias: Option<Shape>, geom: ConvGeom) -> Result<ConvPlan> {
    let plan = ConvPlan::new(op, x.shape(), weight.shape(), bias, geom)?;
    let want = offset_shape(plan.n, plan.kh, plan.kw, plan.ho, plan.wo);
    if offsets.shape() != want {
        return Err(Error::ShapeMismatch {
            op,
            left: want,
            right: offsets.shape(),
        });
    }
    Ok(plan)
}

/// Sampling position of tap `k` for output position `p`.
#[inline]
fn position(plan: &ConvPlan, offsets: &[f32], k: usize, p: usize) -> (f64, f64) {
    let positions = plan.positions();
    let (oy, ox) = (p / plan.wo, p % plan.wo);
    let (ky, kx) = (k / plan.kw, k % plan.kw);
    let g = plan.geom;
    let base_y = (oy * g.stride + ky * g.dilation) as f64 - g.padding as f64;
    let base_x = (ox * g.stride + kx * g.dilation) as f64 - g.padding as f64;
    (
        base_y + offsets[2 * k * positions + p] as f64,
        base_x + offsets[(2 * k + 1) * positions + p] as f64,
    )
}

const OUTSIDE: u32 = u32::MAX;

/// Bilinear footprint of one (tap, position) pair, shared by all channels.
#[derive(Clone, Copy)]
struct Footprint {
    /// Plane indices of the `(y0,x0), (y0,x1), (y1,x0), (y1,x1)` neighbours.
    idx: [u32; 4],
    ly: f64,
    lx: f64,
}

impl Footprint {
    const EMPTY: Self = Self {
        idx: [OUTSIDE; 4],
        ly: 0.0,
        lx: 0.0,
    };

    fn new(h: usize, w: usize, py: f64, px: f64) -> Self {
        if py <= -1.0 || px <= -1.0 || py >= h as f64 || px >= w as f64 {
            return Self::EMPTY;
        }
        let (y0, x0) = (py.floor(), px.floor());
        let (ly, lx) = (py - y0, px - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let idx = |y: isize, x: isize| {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                (y as usize * w + x as usize) as u32
            } else {
                OUTSIDE
            }
        };
        Self {
            idx: [idx(y0, x0), idx(y0, x0 + 1), idx(y0 + 1, x0), idx(y0 + 1, x0 + 1)],
            ly,
            lx,
        }
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (ly, lx) = (self.ly, self.lx);
        [(1.0 - ly) * (1.0 - lx), (1.0 - ly) * lx, ly * (1.0 - lx), ly * lx]
    }

    #[inline]
    fn corners(&self, plane: &[f32]) -> [f64; 4] {
        self.idx.map(|i| if i == OUTSIDE { 0.0 } else { plane[i as usize] as f64 })
    }
}

/// Footprints for every tap (outer) and output position (inner).
fn footprints(plan: &ConvPlan, offsets: &[f32]) -> Vec<Footprint> {
    let p = plan.positions();
    let mut out = vec![Footprint::EMPTY; plan.taps() * p];
    out.par_chunks_mut(p).enumerate().for_each(|(k, row)| {
        for (pos, f) in row.iter_mut().enumerate() {
            let (py, px) = position(plan, offsets, k, pos);
            *f = Footprint::new(plan.h, plan.w, py, px);
        }
    });
    out
}

/// Deformed `im2col`: rows `(ci, tap)`, columns output positions.
fn deformed_columns(plan: &ConvPlan, item: &[f32], table: &[Footprint], cols: &mut [f64]) {
    let (p, hw) = (plan.positions(), plan.h * plan.w);
    cols.par_chunks_mut(plan.taps() * p)
        .enumerate()
        .for_each(|(ci, rows)| {
            let plane = &item[ci * hw..(ci + 1) * hw];
            for (v, f) in rows.iter_mut().zip(table) {
                let c = f.corners(plane);
                let w = f.weights();
                *v = c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3];
            }
        });
}

/// `y(p0) = sum_taps w(tap) * x(p0 + tap + offset(p0, tap)) + bias`.
pub fn deform_conv2d(
    x: &Tensor,
    offsets: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeom,
) -> Result<Tensor> {
    let plan = plan("deform_conv2d", x, offsets, weight, bias.map(Tensor::shape), geom)?;
    let wf = to_f64(weight.data());
    let mut out = Tensor::zeros(plan.out_shape());
    let item_len = plan.cout * plan.positions();
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, out_item)| {
            let table = footprints(&plan, offsets.item(n));
            let mut cols = Scratch::new(plan.patch_len() * plan.positions());
            deformed_columns(&plan, x.item(n), &table, &mut cols);
            apply_weight(&wf, bias.map(Tensor::data), &cols, plan.cout, plan.patch_len(), plan.positions(), out_item);
        });
    out.check_finite("deform_conv2d")
}

#[derive(Debug)]
pub struct DeformGrads {
    pub x: Tensor,
    pub offsets: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn deform_conv2d_backward(
    x: &Tensor,
    offsets: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    geom: ConvGeom,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    let bias_shape = has_bias.then(|| Shape::new(1, weight.shape().n, 1, 1));
    let plan = plan("deform_conv2d_backward", x, offsets, weight, bias_shape, geom)?;
    grad_out.expect_shape("deform_conv2d_backward", plan.out_shape())?;
    let wf = to_f64(weight.data());
    let (patch, p, taps, hw) = (plan.patch_len(), plan.positions(), plan.taps(), plan.h * plan.w);

    let mut gx = Tensor::zeros(x.shape());
    let mut goff = Tensor::zeros(offsets.shape());
    let x_item_len = plan.cin * hw;
    let off_item_len = 2 * taps * p;
    let parts: Vec<Vec<f64>> = gx
        .data_mut()
        .par_chunks_mut(x_item_len)
        .zip(goff.data_mut().par_chunks_mut(off_item_len))
        .enumerate()
        .map(|(n, (gx_item, goff_item))| {
            let item = x.item(n);
            let table = footprints(&plan, offsets.item(n));
            let gy = to_f64(grad_out.item(n));
            let mut cols = Scratch::new(patch * p);
            deformed_columns(&plan, item, &table, &mut cols);
            let mut gw = vec![0.0f64; plan.cout * patch];
            weight_grad(&gy, &cols, plan.cout, patch, p, &mut gw);
            drop(cols);
            let gcols = column_grad(&wf, &gy, plan.cout, patch, p);

            // Offsets: tap k owns channels 2k and 2k+1, contiguous per item.
            goff_item.par_chunks_mut(2 * p).enumerate().for_each(|(k, pair)| {
                let (gdy, gdx) = pair.split_at_mut(p);
                let mut ay = vec![0.0f64; p];
                let mut ax = vec![0.0f64; p];
                let fps = &table[k * p..(k + 1) * p];
                for ci in 0..plan.cin {
                    let plane = &item[ci * hw..(ci + 1) * hw];
                    let grow = &gcols[(ci * taps + k) * p..][..p];
                    for (pos, (f, &g)) in fps.iter().zip(grow).enumerate() {
                        if f.idx == [OUTSIDE; 4] {
                            continue;
                        }
                        let [v00, v01, v10, v11] = f.corners(plane);
                        ay[pos] += g * ((v10 - v00) * (1.0 - f.lx) + (v11 - v01) * f.lx);
                        ax[pos] += g * ((v01 - v00) * (1.0 - f.ly) + (v11 - v10) * f.ly);
                    }
                }
                for pos in 0..p {
                    gdy[pos] = ay[pos] as f32;
                    gdx[pos] = ax[pos] as f32;
                }
            });

            // Input: each channel scatters into its own plane.
            gx_item.par_chunks_mut(hw).enumerate().for_each(|(ci, plane)| {
                let mut acc = vec![0.0f64; hw];
                let rows = &gcols[ci * taps * p..(ci + 1) * taps * p];
                for (f, &g) in table.iter().zip(rows) {
                    let w = f.weights();
                    for (&i, wt) in f.idx.iter().zip(w) {
                        if i != OUTSIDE {
                            acc[i as usize] += g * wt;
                        }
                    }
                }
                for (d, a) in plane.iter_mut().zip(acc) {
                    *d = a as f32;
                }
            });
            gw
        })
        .collect();

    if CORRUPT_BACKWARD.load(Ordering::SeqCst) {
        goff = goff.scale(1.5);
    }
    Ok(DeformGrads {
        x: gx,
        offsets: goff,
        weight: Tensor::new(weight.shape(), ordered_sum(parts, weight.numel()))?,
        bias: has_bias.then(|| bias_grad(grad_out)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::conv2d;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn lattice_points_read_exact_values() {
        let x = Tensor::uniform(Shape::new(1, 2, 4, 5), -1.0, 1.0, &mut rng(0));
        for y in 0..4 {
            for xx in 0..5 {
                assert_eq!(bilinear_sample(&x, 0, 1, y as f32, xx as f32), x.at(0, 1, y, xx));
            }
        }
    }

    #[test]
    fn half_way_between_two_and_three() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&x, 0, 0, 0.0, 1.5), 2.5);
        assert_eq!(bilinear_sample(&x, 0, 0, -5.0, -5.0), 0.0);
        // Partial support near the border.
        assert_eq!(bilinear_sample(&x, 0, 0, 0.0, -0.5), 0.5);
    }

    #[test]
    fn one_by_one_kernel_with_half_offset() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let mut off = Tensor::zeros(Shape::new(1, 2, 1, 3));
        off.set(0, 1, 0, 1, 0.5);
        let y = deform_conv2d(&x, &off, &w, None, ConvGeom::default()).unwrap();
        assert_eq!(y.at(0, 0, 0, 1), 2.5);
    }

    #[test]
    fn zero_offsets_reduce_to_conv() {
        let mut r = rng(5);
        let g = ConvGeom::new(1, 2, 2);
        let x = Tensor::uniform(Shape::new(2, 3, 7, 6), -1.0, 1.0, &mut r);
        let w = Tensor::uniform(Shape::new(4, 3, 3, 3), -1.0, 1.0, &mut r);
        let b = Tensor::uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, &mut r);
        let off = Tensor::zeros(Shape::new(2, 18, 7, 6));
        let a = deform_conv2d(&x, &off, &w, Some(&b), g).unwrap();
        let c = conv2d(&x, &w, Some(&b), g).unwrap();
        assert!(a.max_abs_diff(&c).unwrap() < 1e-5);
    }

    #[test]
    fn offset_shape_is_checked() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let off = Tensor::zeros(Shape::new(1, 16, 4, 4));
        assert!(matches!(
            deform_conv2d(&x, &off, &w, None, ConvGeom::same(3, 1)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn position_gradient_matches_corner_differences() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let s = bilinear_sample_grad(&x, 0, 0, 0.25, 0.5);
        // d/dpy at lx = 0.5: (3-1)*0.5 + (5-2)*0.5
        assert!((s.d_py - 2.5).abs() < 1e-12);
        // d/dpx at ly = 0.25: (2-1)*0.75 + (5-3)*0.25
        assert!((s.d_px - 1.25).abs() < 1e-12);
    }
}
