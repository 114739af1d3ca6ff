//! Full-reference image quality: PSNR and SSIM, and per-dataset reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mse", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(max^2 / MSE)` over all channels jointly; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0f64; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|j| k[j] * src[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0f64; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|j| k[j] * rows[(y + j) * wo + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, k);
    let my = filter_valid(&y, h, w, k);
    let exx = filter_valid(&prod(&x, &x), h, w, k);
    let eyy = filter_valid(&prod(&y, &y), h, w, k);
    let exy = filter_valid(&prod(&x, &y), h, w, k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / mx.len() as f64
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1) over
/// the valid region of every plane, averaged over channels and batch items.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let k = gaussian_window();
    let planes = s.n * s.c;
    let total: f64 = (0..s.n)
        .flat_map(|n| (0..s.c).map(move |c| (n, c)))
        .map(|(n, c)| ssim_plane(a.plane(n, c), b.plane(n, c), s.h, s.w, &k))
        .sum();
    Ok(total / planes as f64)
}

mod infinite_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Num {
            F(f64),
            S(String),
        }
        match Num::deserialize(d)? {
            Num::F(v) => Ok(v),
            Num::S(s) if s == "inf" => Ok(f64::INFINITY),
            Num::S(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got \"{s}\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    /// Decibels; `"inf"` in JSON for identical images.
    #[serde(with = "infinite_as_string")]
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores and their means. JSON schema:
/// `{"images": [{"name", "psnr", "ssim"}...], "mean_psnr", "mean_ssim"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    #[serde(with = "infinite_as_string")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_scores(images: Vec<ImageScore>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images to score".into()));
        }
        let n = images.len() as f64;
        Ok(Self {
            mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
            images,
        })
    }

    /// `name\tpsnr\tssim` per image, then a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tpsnr\tssim\n");
        for s in &self.images {
            let _ = writeln!(out, "{}\t{:.4}\t{:.6}", s.name, s.psnr, s.ssim);
        }
        let _ = writeln!(out, "mean\t{:.4}\t{:.6}", self.mean_psnr, self.mean_ssim);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn summary(&self) -> String {
        format!("mean PSNR {:.4}, mean SSIM {:.4}", self.mean_psnr, self.mean_ssim)
    }
}

/// Scores `outputs[i]` against `targets[i]`.
pub fn eval_dataset(names: &[String], outputs: &[Tensor], targets: &[Tensor]) -> Result<MetricReport> {
    if outputs.len() != targets.len() || names.len() != outputs.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned evaluation lists: {} names, {} outputs, {} targets",
            names.len(),
            outputs.len(),
            targets.len()
        )));
    }
    let scores = names
        .iter()
        .zip(outputs.iter().zip(targets))
        .map(|(name, (o, t))| {
            Ok(ImageScore {
                name: name.clone(),
                psnr: psnr(o, t, 1.0)?,
                ssim: ssim(o, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_scores(scores)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Shape;

    fn noise(seed: u64) -> Tensor {
        Tensor::uniform(Shape::new(1, 3, 24, 20), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn psnr_reference_values() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        let a = Tensor::full(Shape::new(1, 3, 4, 4), 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 16.0 / 255.0);
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-4);
    }

    #[test]
    fn ssim_self_is_one_and_symmetric() {
        let (a, b) = (noise(1), noise(2));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((-1.0..1.0).contains(&ab));
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let a = Tensor::full(Shape::new(1, 3, 16, 16), 0.25);
        let b = Tensor::full(Shape::new(1, 3, 16, 16), 0.75);
        let expect = (2.0 * 0.1875 + 1e-4) / (0.625 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(Shape::new(1, 3, 10, 40));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_json_round_trips_with_infinity() {
        let (a, b) = (noise(3), noise(4));
        let names = vec!["same".to_string(), "diff".to_string()];
        let r = eval_dataset(&names, &[a.clone(), a.clone()], &[a.clone(), b]).unwrap();
        assert_eq!(r.images[0].psnr, f64::INFINITY);
        assert_eq!(r.mean_psnr, f64::INFINITY);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(MetricReport::from_json(&json).unwrap(), r);
        assert!(r.to_tsv().starts_with("name\tpsnr\tssim\nsame\tinf\t1.000000\n"));
    }

    #[test]
    fn single_pair_mean_is_the_pair() {
        let (a, b) = (noise(5), noise(6));
        let r = eval_dataset(&["x".into()], std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        assert_eq!(r.mean_psnr, psnr(&a, &b, 1.0).unwrap());
        assert_eq!(r.mean_ssim, ssim(&a, &b).unwrap());
        assert!(eval_dataset(&["x".into()], &[a], &[]).is_err());
    }
}
