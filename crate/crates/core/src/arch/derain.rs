//! Restoration networks mapping a rainy image (and the degradation maps) to
//! the clean estimate.

use std::fmt::Debug;

use crate::arch::config::ModelConfig;
use crate::arch::encoder::DegradationRep;
use crate::arch::FusionFactory;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, UpsampleMode};
use crate::nn::{Conv2d, DegFusion, Init, Mpb, ParamBuilder};
use crate::params::ParamStore;

pub trait Restorer: Send + Sync + Debug {
    fn kind(&self) -> &'static str;

    /// Fusion blocks consuming the degradation maps, if any.
    fn fusions(&self) -> Vec<&dyn DegFusion>;

    fn forward(&self, g: &mut Graph, ps: &ParamStore, rainy: Var, deg: Option<&DegradationRep>) -> Result<Var>;
}

fn check_input(g: &Graph, rainy: Var) -> Result<()> {
    let s = g.shape(rainy);
    if s.c != 3 || !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "restorer input must be Nx3xHxW with H, W divisible by 4, got {s}"
        )));
    }
    Ok(())
}

/// Three-scale U-Net (full, half and quarter resolution) with a multi-path
/// block per stage and, optionally, a degradation fusion block at every scale
/// of the decoder.
#[derive(Debug)]
pub struct DerainNet {
    pub stem: Conv2d,
    pub encoder: Vec<Mpb>,
    pub downs: Vec<Conv2d>,
    pub bottleneck: Mpb,
    pub ups: Vec<Conv2d>,
    pub skips: Vec<Conv2d>,
    pub fusions: Vec<Option<Box<dyn DegFusion>>>,
    pub decoder: Vec<Mpb>,
    pub tail: Conv2d,
}

impl DerainNet {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &ModelConfig, fusion: Option<FusionFactory>) -> Result<Self> {
        let same = ConvGeom::same(3, 1);
        let (dil, red) = (&cfg.mpb_dilations, cfg.ca_reduction);
        let levels = cfg.num_scales;
        let deepest = levels - 1;
        let stem = b.conv("stem", 3, cfg.width(0), 3, same, Init::FanIn)?;
        let mut net = Self {
            stem,
            encoder: Vec::new(),
            downs: Vec::new(),
            bottleneck: Mpb::new(b, "bottleneck", cfg.width(deepest), dil, red)?,
            ups: Vec::new(),
            skips: Vec::new(),
            fusions: Vec::new(),
            decoder: Vec::new(),
            tail: b.conv("tail", cfg.width(0), 3, 3, same, Init::FanIn)?,
        };
        for l in 0..deepest {
            let w = cfg.width(l);
            net.encoder.push(Mpb::new(b, &format!("enc{l}"), w, dil, red)?);
            net.downs.push(b.conv(&format!("down{l}"), w, 2 * w, 3, ConvGeom::new(2, 1, 1), Init::FanIn)?);
            net.ups.push(b.conv(&format!("up{l}"), 2 * w, w, 3, same, Init::FanIn)?);
            net.skips.push(b.conv(&format!("skip{l}"), 2 * w, w, 1, ConvGeom::default(), Init::FanIn)?);
        }
        for l in 0..levels {
            let w = cfg.width(l);
            net.fusions
                .push(fusion.map(|f| f(b, &format!("fusion{l}"), w, w, cfg)).transpose()?);
            net.decoder.push(Mpb::new(b, &format!("dec{l}"), w, dil, red)?);
        }
        Ok(net)
    }
}

impl Restorer for DerainNet {
    fn kind(&self) -> &'static str {
        "unet"
    }

    fn fusions(&self) -> Vec<&dyn DegFusion> {
        self.fusions.iter().flatten().map(|f| f.as_ref()).collect()
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, rainy: Var, deg: Option<&DegradationRep>) -> Result<Var> {
        check_input(g, rainy)?;
        let uses_deg = self.fusions.iter().any(Option::is_some);
        if uses_deg && deg.is_none() {
            return Err(Error::InvalidArgument("this network fuses degradation maps but none were given".into()));
        }
        let x = self.stem.forward(g, ps, rainy)?;
        let mut x = g.relu(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (l, (mpb, down)) in self.encoder.iter().zip(&self.downs).enumerate() {
            x = mpb.forward(g, ps, x)?;
            g.tag(format!("enc{l}"), x);
            skips.push(x);
            let y = down.forward(g, ps, x)?;
            x = g.relu(y)?;
        }
        x = self.bottleneck.forward(g, ps, x)?;
        g.tag("bottleneck", x);
        for l in (0..self.decoder.len()).rev() {
            if l < self.ups.len() {
                let u = g.upsample2x(x, UpsampleMode::Nearest)?;
                let u = self.ups[l].forward(g, ps, u)?;
                let u = g.relu(u)?;
                let cat = g.concat_channels(&[u, skips[l]])?;
                x = self.skips[l].forward(g, ps, cat)?;
            }
            if let (Some(fusion), Some(deg)) = (&self.fusions[l], deg) {
                x = fusion.forward(g, ps, x, deg.level(l))?;
            }
            x = self.decoder[l].forward(g, ps, x)?;
            g.tag(format!("dec{l}"), x);
        }
        let out = self.tail.forward(g, ps, x)?;
        g.tag("output", out);
        Ok(out)
    }
}

/// Conv head mapping the degradation maps straight to a rain residual:
/// `B_hat = R - head(deg)`.
#[derive(Debug)]
pub struct ResidualHead {
    pub reduce: Conv2d,
    pub out: Conv2d,
}

impl ResidualHead {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let same = ConvGeom::same(3, 1);
        let width: usize = (0..cfg.num_scales).map(|l| cfg.width(l)).sum();
        Ok(Self {
            reduce: b.conv("reduce", width, cfg.width(0), 3, same, Init::FanIn)?,
            out: b.conv("out", cfg.width(0), 3, 3, same, Init::FanIn)?,
        })
    }

    /// Predicted rain residual at full resolution.
    pub fn residual(&self, g: &mut Graph, ps: &ParamStore, deg: &DegradationRep) -> Result<Var> {
        let mut maps = vec![deg.level(0)];
        for (l, &v) in deg.levels.iter().enumerate().skip(1) {
            let mut up = v;
            for _ in 0..l {
                up = g.upsample2x(up, UpsampleMode::Bilinear)?;
            }
            maps.push(up);
        }
        let cat = g.concat_channels(&maps)?;
        let h = self.reduce.forward(g, ps, cat)?;
        let h = g.relu(h)?;
        self.out.forward(g, ps, h)
    }
}

impl Restorer for ResidualHead {
    fn kind(&self) -> &'static str {
        "residual-head"
    }

    fn fusions(&self) -> Vec<&dyn DegFusion> {
        Vec::new()
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, rainy: Var, deg: Option<&DegradationRep>) -> Result<Var> {
        check_input(g, rainy)?;
        let deg = deg.ok_or_else(|| Error::InvalidArgument("the residual head needs degradation maps".into()))?;
        let residual = self.residual(g, ps, deg)?;
        g.tag("residual", residual);
        let out = g.sub(rainy, residual)?;
        g.tag("output", out);
        Ok(out)
    }
}
