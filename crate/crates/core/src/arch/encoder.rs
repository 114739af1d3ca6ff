//! Direction-aware degradation encoder.

use std::fmt::Debug;

use crate::arch::config::ModelConfig;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv2d, DeformLayer, Init, ParamBuilder};
use crate::params::ParamStore;

/// One feature-extraction layer of the encoder (before its ReLU).
pub trait EncoderLayer: Send + Sync + Debug {
    fn is_deformable(&self) -> bool;

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var>;
}

impl EncoderLayer for DeformLayer {
    fn is_deformable(&self) -> bool {
        true
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        DeformLayer::forward(self, g, ps, x)
    }
}

/// Ordinary 3x3 convolution with the same weight and bias shapes as a
/// [`DeformLayer`].
#[derive(Clone, Debug)]
pub struct PlainLayer(pub Conv2d);

impl EncoderLayer for PlainLayer {
    fn is_deformable(&self) -> bool {
        false
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        self.0.forward(g, ps, x)
    }
}

/// Builds a `channels -> channels` encoder layer.
pub type LayerFactory = fn(&mut ParamBuilder<'_>, &str, usize) -> Result<Box<dyn EncoderLayer>>;

pub fn deformable_layer(b: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Result<Box<dyn EncoderLayer>> {
    Ok(Box::new(DeformLayer::new(b, name, channels, channels)?))
}

pub fn plain_layer(b: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Result<Box<dyn EncoderLayer>> {
    let k = DeformLayer::KERNEL;
    Ok(Box::new(PlainLayer(b.conv(name, channels, channels, k, ConvGeom::same(k, 1), Init::FanIn)?)))
}

/// `{deg1, deg2, deg3}` at full, half and quarter resolution with
/// `base`, `2 base` and `4 base` channels.
#[derive(Clone, Copy, Debug)]
pub struct DegradationRep {
    pub levels: [Var; 3],
}

impl DegradationRep {
    pub fn level(&self, i: usize) -> Var {
        self.levels[i]
    }
}

#[derive(Debug)]
pub struct DaEncoder {
    pub stem: Conv2d,
    /// Two layers per scale.
    pub scales: Vec<Vec<Box<dyn EncoderLayer>>>,
    /// Stride-2 convolutions doubling the width between scales.
    pub downs: Vec<Conv2d>,
}

pub const LAYERS_PER_SCALE: usize = 2;

impl DaEncoder {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &ModelConfig, layer: LayerFactory) -> Result<Self> {
        let stem = b.conv("stem", 3, cfg.width(0), 3, ConvGeom::same(3, 1), Init::FanIn)?;
        let mut scales = Vec::new();
        let mut downs = Vec::new();
        for s in 0..cfg.num_scales {
            let layers = (0..LAYERS_PER_SCALE)
                .map(|i| layer(b, &format!("scale{s}.layer{i}"), cfg.width(s)))
                .collect::<Result<Vec<_>>>()?;
            scales.push(layers);
            if s + 1 < cfg.num_scales {
                downs.push(b.conv(&format!("down{s}"), cfg.width(s), cfg.width(s + 1), 3, ConvGeom::new(2, 1, 1), Init::FanIn)?);
            }
        }
        Ok(Self { stem, scales, downs })
    }

    pub fn deformable_layers(&self) -> usize {
        self.scales.iter().flatten().filter(|l| l.is_deformable()).count()
    }

    /// `{deg1, deg2, deg3} = E(R)`; each level is taken before the downsample.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, rainy: Var) -> Result<DegradationRep> {
        let s = g.shape(rainy);
        if s.c != 3 || !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "encoder input must be Nx3xHxW with H, W divisible by 4, got {s}"
            )));
        }
        let x = self.stem.forward(g, ps, rainy)?;
        let mut x = g.relu(x)?;
        let mut levels = Vec::with_capacity(3);
        for (i, layers) in self.scales.iter().enumerate() {
            for layer in layers {
                let y = layer.forward(g, ps, x)?;
                x = g.relu(y)?;
            }
            g.tag(format!("deg{}", i + 1), x);
            levels.push(x);
            if let Some(down) = self.downs.get(i) {
                let y = down.forward(g, ps, x)?;
                x = g.relu(y)?;
            }
        }
        Ok(DegradationRep {
            levels: [levels[0], levels[1], levels[2]],
        })
    }
}
