//! Synthetic paired data, image files and dataset manifests.

pub mod image;
pub mod rain;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use image::{load_image, save_image, ImageFormat};
pub use rain::{render_streaks, synth_pair, synthetic_scene, RainParams};

pub const MANIFEST: &str = "manifest.tsv";

/// Closed interval `lo..=hi`; `lo == hi` is a fixed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}:{}", self.lo, self.hi)
        }
    }
}

/// Parses `v` or `lo:hi`.
impl FromStr for Range {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("`{s}` is not a number or lo:hi range")))
        };
        let r = match s.split_once(':') {
            Some((a, b)) => Self { lo: num(a)?, hi: num(b)? },
            None => Self::fixed(num(s)?),
        };
        if !(r.lo <= r.hi) {
            return Err(Error::Config(format!("empty range `{s}`")));
        }
        Ok(r)
    }
}

/// Ranges the per-pair rain parameters are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainRanges {
    pub angle_deg: Range,
    pub length_px: Range,
    pub density: Range,
    pub intensity: Range,
}

impl Default for RainRanges {
    fn default() -> Self {
        Self {
            angle_deg: Range { lo: -30.0, hi: 30.0 },
            length_px: Range { lo: 9.0, hi: 17.0 },
            density: Range::fixed(0.02),
            intensity: Range { lo: 0.8, hi: 1.0 },
        }
    }
}

impl RainRanges {
    /// Parameters of pair `index`, a pure function of `(seed, index)`.
    pub fn draw(&self, seed: u64, index: usize) -> RainParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
        RainParams {
            angle_deg: self.angle_deg.sample(&mut rng),
            length_px: self.length_px.sample(&mut rng).round().max(1.0) as usize,
            density: self.density.sample(&mut rng),
            intensity: self.intensity.sample(&mut rng),
            seed: rng.random(),
        }
    }
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub rainy: PathBuf,
    pub clean: PathBuf,
    pub params: RainParams,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        let p = &self.params;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.rainy.display(),
            self.clean.display(),
            p.angle_deg,
            p.length_px,
            p.density,
            p.intensity
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("manifest line needs 6 tab-separated fields: `{line}`")));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::Format(format!("manifest field {} is not a number: `{}`", i + 1, f[i])))
        };
        Ok(Self {
            rainy: f[0].into(),
            clean: f[1].into(),
            params: RainParams {
                angle_deg: num(2)?,
                length_px: f[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest length is not an integer: `{}`", f[3])))?,
                density: num(4)?,
                intensity: num(5)?,
                seed: 0,
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct ImagePair {
    pub rainy: Tensor,
    pub clean: Tensor,
}

/// A manifest and the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl PairedDataset {
    /// Reads `path`, or `path/manifest.tsv` when `path` is a directory.
    pub fn open(path: &Path) -> Result<Self> {
        let manifest = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
        let text = fs::read_to_string(&manifest)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", manifest.display())))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(ManifestEntry::parse)
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(Error::Config(format!("manifest {} lists no pairs", manifest.display())));
        }
        Ok(Self {
            root: manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self) -> Result<Vec<ImagePair>> {
        self.entries
            .iter()
            .map(|e| {
                let rainy = load_image(&self.root.join(&e.rainy))?;
                let clean = load_image(&self.root.join(&e.clean))?;
                if rainy.shape() != clean.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "paired_dataset",
                        left: rainy.shape(),
                        right: clean.shape(),
                    });
                }
                Ok(ImagePair { rainy, clean })
            })
            .collect()
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_ok())
        .collect();
    out.sort();
    Ok(out)
}

/// Writes `n` rainy/clean pairs and a manifest under `out_dir`. Pair `i`
/// uses clean image `i mod k` and rain drawn from `(seed, i)`.
pub fn make_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    n: usize,
    ranges: &RainRanges,
    seed: u64,
    format: ImageFormat,
) -> Result<PairedDataset> {
    let sources = list_images(clean_dir)?;
    if sources.is_empty() {
        return Err(Error::Config(format!("no .ppm or .png images in {}", clean_dir.display())));
    }
    let clean_images = sources.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir.join("rainy"))?;
    fs::create_dir_all(out_dir.join("clean"))?;
    let ext = format.extension();
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let params = ranges.draw(seed, i);
            let (rainy, clean) = synth_pair(&clean_images[i % clean_images.len()], &params)?;
            let entry = ManifestEntry {
                rainy: PathBuf::from(format!("rainy/{i:04}.{ext}")),
                clean: PathBuf::from(format!("clean/{i:04}.{ext}")),
                params,
            };
            save_image(&out_dir.join(&entry.rainy), &rainy)?;
            save_image(&out_dir.join(&entry.clean), &clean)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let text: String = entries.iter().map(|e| e.to_line() + "\n").collect();
    fs::write(out_dir.join(MANIFEST), text)?;
    Ok(PairedDataset {
        root: out_dir.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!("0.5".parse::<Range>().unwrap(), Range::fixed(0.5));
        assert_eq!("-30:30".parse::<Range>().unwrap(), Range { lo: -30.0, hi: 30.0 });
        assert!("3:1".parse::<Range>().is_err());
        assert!("a".parse::<Range>().is_err());
    }

    #[test]
    fn manifest_line_round_trips() {
        let e = ManifestEntry {
            rainy: "rainy/0001.ppm".into(),
            clean: "clean/0001.ppm".into(),
            params: RainParams {
                angle_deg: -12.5,
                length_px: 11,
                density: 0.02,
                intensity: 0.875,
                seed: 0,
            },
        };
        assert_eq!(e.to_line(), "rainy/0001.ppm\tclean/0001.ppm\t-12.5\t11\t0.02\t0.875");
        assert_eq!(ManifestEntry::parse(&e.to_line()).unwrap(), e);
        assert!(ManifestEntry::parse("a\tb\t1").is_err());
    }

    #[test]
    fn draws_depend_only_on_seed_and_index() {
        let r = RainRanges::default();
        assert_eq!(r.draw(7, 3), r.draw(7, 3));
        assert_ne!(r.draw(7, 3), r.draw(7, 4));
        let p = r.draw(1, 0);
        assert!((-30.0..=30.0).contains(&p.angle_deg) && (9..=17).contains(&p.length_px));
        assert_eq!(p.density, 0.02);
    }
}
