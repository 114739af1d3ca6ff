//! The encoder `E`, constraint network `C` and deraining network `D`, plus
//! the ablation variants that remove or replace their parts.

pub mod config;
pub mod constraint;
pub mod derain;
pub mod encoder;
pub mod variant;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ConcatFusion, DegFusion, MsiBlock, ParamBuilder};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub use config::{Ablation, ModelConfig};
pub use constraint::ConstraintNet;
pub use derain::{DerainNet, ResidualHead, Restorer};
pub use encoder::{DaEncoder, DegradationRep, EncoderLayer};
pub use variant::{Variant, VariantRegistry};

pub const ENCODER_PREFIX: &str = "enc.";
pub const CONSTRAINT_PREFIX: &str = "con.";
pub const RESTORER_PREFIX: &str = "der.";

/// Builds a fusion block `(name, feature width, degradation width, config)`.
pub type FusionFactory = fn(&mut ParamBuilder<'_>, &str, usize, usize, &ModelConfig) -> Result<Box<dyn DegFusion>>;

pub fn msi_fusion(b: &mut ParamBuilder<'_>, name: &str, channels: usize, deg: usize, cfg: &ModelConfig) -> Result<Box<dyn DegFusion>> {
    Ok(Box::new(MsiBlock::new(b, name, channels, deg, &cfg.msib_rb_depths, cfg.ca_reduction)?))
}

pub fn concat_fusion(b: &mut ParamBuilder<'_>, name: &str, channels: usize, deg: usize, _cfg: &ModelConfig) -> Result<Box<dyn DegFusion>> {
    Ok(Box::new(ConcatFusion::new(b, name, channels, deg)?))
}

/// Structural counts used to verify an ablation really removed what it claims.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Audit {
    pub has_encoder: bool,
    pub has_constraint: bool,
    pub deformable_layers: usize,
    pub msi_blocks: usize,
    pub concat_fusions: usize,
    pub restorer: &'static str,
    pub parameters: usize,
}

/// All networks of one variant and the store holding their parameters.
#[derive(Debug)]
pub struct Networks {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Option<DaEncoder>,
    pub constraint: Option<ConstraintNet>,
    pub restorer: Box<dyn Restorer>,
}

impl Networks {
    /// Builds the variant named by `cfg.ablation` with parameters drawn from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        VariantRegistry::default().get(cfg.ablation.name())?.build(cfg, seed)
    }

    pub fn audit(&self) -> Audit {
        let mut fusions: Vec<&dyn DegFusion> = self.restorer.fusions();
        if let Some(c) = &self.constraint {
            fusions.extend(c.fusions.iter().map(|f| f.as_ref()));
        }
        Audit {
            has_encoder: self.encoder.is_some(),
            has_constraint: self.constraint.is_some(),
            deformable_layers: self.encoder.as_ref().map_or(0, DaEncoder::deformable_layers),
            msi_blocks: fusions.iter().filter(|f| f.kind() == "msiblock").count(),
            concat_fusions: fusions.iter().filter(|f| f.kind() == "concat").count(),
            restorer: self.restorer.kind(),
            parameters: self.store.num_elements(),
        }
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn parameter_count(&self, prefix: &str) -> usize {
        self.store
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, p)| p.value.numel())
            .sum()
    }

    pub fn encode(&self, g: &mut Graph, rainy: Var) -> Result<Option<DegradationRep>> {
        self.encoder.as_ref().map(|e| e.forward(g, &self.store, rainy)).transpose()
    }

    /// `B_hat = D(R, E(R))`.
    pub fn derain(&self, g: &mut Graph, rainy: Var) -> Result<Var> {
        let deg = self.encode(g, rainy)?;
        self.restorer.forward(g, &self.store, rainy, deg.as_ref())
    }

    /// `R_hat = C(B, deg)`.
    pub fn reconstruct_rainy(&self, g: &mut Graph, clean: Var, deg: &DegradationRep) -> Result<Var> {
        let c = self
            .constraint
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no constraint network", self.config.ablation)))?;
        c.forward(g, &self.store, clean, deg)
    }

    /// Gradient-free forward pass producing the clean estimate.
    pub fn infer(&self, rainy: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let r = g.constant(rainy.clone())?;
        let out = self.derain(&mut g, r)?;
        Ok(g.value(out).clone())
    }

    /// [`Networks::infer`] on any image size: the input is reflect-padded on
    /// the bottom and right to a multiple of 4 and the output cropped back.
    pub fn infer_padded(&self, rainy: &Tensor) -> Result<Tensor> {
        let s = rainy.shape();
        let (h, w) = (s.h.next_multiple_of(4), s.w.next_multiple_of(4));
        if (h, w) == (s.h, s.w) {
            return self.infer(rainy);
        }
        let out = self.infer(&reflect_pad(rainy, h, w))?;
        crop_top_left(&out, s.h, s.w)
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else if n == 1 {
        0
    } else {
        (2 * (n - 1)).saturating_sub(i)
    }
}

/// Extends `t` to `h x w` by mirroring its last rows and columns.
pub fn reflect_pad(t: &Tensor, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let shape = Shape::new(s.n, s.c, h, w);
    let mut out = Tensor::zeros(shape);
    let dst = out.data_mut();
    for plane in 0..s.n * s.c {
        let src = &t.data()[plane * s.plane()..(plane + 1) * s.plane()];
        for y in 0..h {
            let sy = reflect_index(y, s.h);
            for x in 0..w {
                dst[plane * h * w + y * w + x] = src[sy * s.w + reflect_index(x, s.w)];
            }
        }
    }
    out
}

pub fn crop_top_left(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = t.shape();
    if h > s.h || w > s.w {
        return Err(Error::InvalidArgument(format!("cannot crop {h}x{w} from {s}")));
    }
    let mut data = Vec::with_capacity(s.n * s.c * h * w);
    for plane in 0..s.n * s.c {
        let src = &t.data()[plane * s.plane()..(plane + 1) * s.plane()];
        for y in 0..h {
            data.extend_from_slice(&src[y * s.w..y * s.w + w]);
        }
    }
    Tensor::new(Shape::new(s.n, s.c, h, w), data)
}
