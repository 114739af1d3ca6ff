//! Additive synthetic rain: `R = clip(B + S)` with a white streak layer `S`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Streak direction is measured from the vertical: `0` is straight down,
/// positive angles lean the streak's lower end to the right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainParams {
    pub angle_deg: f64,
    pub length_px: usize,
    pub density: f64,
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            angle_deg: 15.0,
            length_px: 11,
            density: 0.02,
            intensity: 0.9,
            seed: 0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("rain {what} out of range")));
        if !(-45.0..=45.0).contains(&self.angle_deg) {
            return bad("angle (expected -45..=45 degrees)");
        }
        if self.length_px == 0 {
            return bad("length (expected >= 1)");
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad("density (expected 0..=1)");
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad("intensity (expected 0..=1)");
        }
        Ok(())
    }
}

/// Line of `length` unit-spaced points through the kernel centre, splatted
/// bilinearly and normalised to unit sum. Returns `(kernel, side)`.
pub fn line_kernel(length: usize, angle_deg: f64) -> (Vec<f64>, usize) {
    let half = (length as f64 - 1.0) / 2.0;
    let side = 2 * (half.ceil() as usize + 1) + 1;
    let c = (side / 2) as f64;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut k = vec![0.0f64; side * side];
    for i in 0..length {
        let t = i as f64 - half;
        let (y, x) = (c + t * cos, c + t * sin);
        let (y0, x0) = (y.floor(), x.floor());
        let (ly, lx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        k[y0 * side + x0] += (1.0 - ly) * (1.0 - lx);
        k[y0 * side + x0 + 1] += (1.0 - ly) * lx;
        k[(y0 + 1) * side + x0] += ly * (1.0 - lx);
        k[(y0 + 1) * side + x0 + 1] += ly * lx;
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, side)
}

/// Single-channel streak map `1x1xHxW` in `[0, 1]`.
///
/// Seeded uniform noise is binarised at its `(1 - density)` quantile, blurred
/// with the oriented line kernel, scaled by the intensity and clipped.
pub fn render_streaks(h: usize, w: usize, p: &RainParams) -> Result<Tensor> {
    p.validate()?;
    if h < p.length_px || w < p.length_px {
        return Err(Error::InvalidArgument(format!(
            "streak map {h}x{w} is smaller than the streak length {}",
            p.length_px
        )));
    }
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let seeds = (p.density * n as f64).round() as usize;
    let mut map = Tensor::zeros(Shape::new(1, 1, h, w));
    if seeds == 0 || p.intensity == 0.0 {
        return Ok(map);
    }
    let mut sorted = noise.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = sorted[seeds - 1];

    let (kernel, side) = line_kernel(p.length_px, p.angle_deg);
    let r = (side / 2) as isize;
    let mut acc = vec![0.0f64; n];
    for (i, _) in noise.iter().enumerate().filter(|(_, &v)| v >= threshold) {
        let (sy, sx) = ((i / w) as isize, (i % w) as isize);
        for ky in 0..side {
            let y = sy + ky as isize - r;
            if y < 0 || y >= h as isize {
                continue;
            }
            for kx in 0..side {
                let x = sx + kx as isize - r;
                let kv = kernel[ky * side + kx];
                if kv != 0.0 && x >= 0 && x < w as isize {
                    acc[y as usize * w + x as usize] += kv;
                }
            }
        }
    }
    for (d, a) in map.data_mut().iter_mut().zip(acc) {
        *d = (a * p.intensity).clamp(0.0, 1.0) as f32;
    }
    Ok(map)
}

/// `R = clip(B + S)` with `S` broadcast over the colour channels.
pub fn add_rain(clean: &Tensor, streaks: &Tensor) -> Result<Tensor> {
    let s = clean.shape();
    if streaks.shape() != Shape::new(1, 1, s.h, s.w) || s.n != 1 {
        return Err(Error::ShapeMismatch {
            op: "add_rain",
            left: s,
            right: streaks.shape(),
        });
    }
    let hw = s.plane();
    let sd = streaks.data();
    let data = clean
        .data()
        .iter()
        .enumerate()
        .map(|(i, &b)| (b + sd[i % hw]).clamp(0.0, 1.0))
        .collect();
    Tensor::new(s, data)
}

/// Renders streaks for `clean` and returns `(rainy, clean)`.
pub fn synth_pair(clean: &Tensor, p: &RainParams) -> Result<(Tensor, Tensor)> {
    let s = clean.shape();
    let streaks = render_streaks(s.h, s.w, p)?;
    Ok((add_rain(clean, &streaks)?, clean.clone()))
}

/// Separable Gaussian blur of one `h x w` plane with zero extension.
fn gaussian_blur(d: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / total).collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0f64; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let (yy, xx) = if horizontal { (y, x + j as isize - r) } else { (y + j as isize - r, x) };
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        acc += kv * src[yy as usize * w + xx as usize];
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    };
    pass(&pass(d, true), false)
}

/// Dominant streak orientation of a map, in degrees from the vertical, from
/// the structure tensor of the Gaussian-smoothed map. Gradients run across
/// a streak, so the streak is perpendicular to the tensor's principal axis.
pub fn dominant_orientation(map: &Tensor) -> f64 {
    let s = map.shape();
    let (h, w) = (s.h, s.w);
    let raw: Vec<f64> = map.plane(0, 0).iter().map(|&v| v as f64).collect();
    let d = gaussian_blur(&raw, h, w, 1.5);
    let (mut jxx, mut jyy, mut jxy) = (0.0f64, 0.0f64, 0.0f64);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let at = |yy: usize, xx: usize| d[yy * w + xx];
            let gx = (at(y, x + 1) - at(y, x - 1)) / 2.0;
            let gy = (at(y + 1, x) - at(y - 1, x)) / 2.0;
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
        }
    }
    // Principal gradient axis from the x axis (y pointing down); the streak
    // direction `(sin a, cos a)` is perpendicular to it, giving `a = -theta`.
    let theta = 0.5 * (2.0 * jxy).atan2(jxx - jyy);
    let deg = -theta.to_degrees();
    if deg >= 90.0 {
        deg - 180.0
    } else {
        deg
    }
}

/// Procedural clean scene `1x3xHxW`: smooth colour gradients plus a few
/// flat rectangles and discs.
pub fn synthetic_scene(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = h * w;
    let mut data = vec![0.0f32; 3 * hw];
    for c in 0..3 {
        let base: f32 = rng.random_range(0.15..0.55);
        let gy: f32 = rng.random_range(-0.25..0.25);
        let gx: f32 = rng.random_range(-0.25..0.25);
        for y in 0..h {
            for x in 0..w {
                data[c * hw + y * w + x] = base + gy * y as f32 / h as f32 + gx * x as f32 / w as f32;
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let colour: [f32; 3] = [rng.random_range(0.0..0.7), rng.random_range(0.0..0.7), rng.random_range(0.0..0.7)];
        let (cy, cx) = (rng.random_range(0..h) as f32, rng.random_range(0..w) as f32);
        let (ry, rx) = (rng.random_range(2.0..h as f32 / 3.0), rng.random_range(2.0..w as f32 / 3.0));
        let disc = rng.random::<bool>();
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f32 - cy) / ry, (x as f32 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for (c, &v) in colour.iter().enumerate() {
                        data[c * hw + y * w + x] = v;
                    }
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(Shape::new(1, 3, h, w), data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_sum_and_runs_vertically_at_zero_degrees() {
        let (k, side) = line_kernel(5, 0.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = side / 2;
        for y in 0..side {
            for x in 0..side {
                let expect = if x == c && (c - 2..=c + 2).contains(&y) { 0.2 } else { 0.0 };
                assert!((k[y * side + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_density_or_intensity_gives_empty_map() {
        for p in [
            RainParams { density: 0.0, ..Default::default() },
            RainParams { intensity: 0.0, ..Default::default() },
        ] {
            assert_eq!(render_streaks(32, 32, &p).unwrap().sum(), 0.0);
        }
    }

    #[test]
    fn same_seed_same_map() {
        let p = RainParams::default();
        let a = render_streaks(40, 30, &p).unwrap();
        assert_eq!(a.data(), render_streaks(40, 30, &p).unwrap().data());
        let q = RainParams { seed: 1, ..p };
        assert_ne!(a.data(), render_streaks(40, 30, &q).unwrap().data());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn streak_length_must_fit() {
        let p = RainParams { length_px: 20, ..Default::default() };
        assert!(render_streaks(16, 64, &p).is_err());
        assert!(RainParams { angle_deg: 50.0, ..p }.validate().is_err());
    }

    #[test]
    fn single_streak_pixel_adds_to_background() {
        let clean = Tensor::full(Shape::new(1, 3, 2, 2), 0.5);
        let mut s = Tensor::zeros(Shape::new(1, 1, 2, 2));
        s.set(0, 0, 1, 0, 0.4);
        let r = add_rain(&clean, &s).unwrap();
        for c in 0..3 {
            assert!((r.at(0, c, 1, 0) - 0.9).abs() < 1e-6);
            assert_eq!(r.at(0, c, 0, 0), 0.5);
        }
    }

    #[test]
    fn rain_only_brightens() {
        let clean = synthetic_scene(48, 48, 3);
        let (rainy, b) = synth_pair(&clean, &RainParams::default()).unwrap();
        assert!(rainy.mean() > b.mean());
        assert!(rainy.data().iter().zip(b.data()).all(|(r, b)| r >= b));
    }

    #[test]
    fn orientation_follows_angle() {
        for angle in [-40.0, -25.0, -10.0, 0.0, 10.0, 30.0, 45.0] {
            for seed in 0..3 {
                let p = RainParams {
                    angle_deg: angle,
                    length_px: 13,
                    density: 0.03,
                    intensity: 1.0,
                    seed,
                };
                let est = dominant_orientation(&render_streaks(96, 96, &p).unwrap());
                assert!((est - angle).abs() <= 10.0, "angle {angle} seed {seed}: estimated {est}");
            }
        }
    }
}
